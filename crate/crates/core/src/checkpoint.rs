//! CVXM: the checkpoint container shared by every model kind.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "CVXM"  u16 version
//! u32 entry count, then per entry: u16 key length, key, u32 value length, value
//! u32 tensor count, then per tensor:
//!     u16 name length, name, u8 dtype (0 = f32, 1 = f64), u8 rank, u64 × rank dims, data
//! ```
//!
//! Config entries are written in key order so identical models produce
//! identical bytes.

use std::collections::BTreeMap;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"CVXM";
pub const VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a CVXM checkpoint (magic {0:?})")]
    BadMagic([u8; 4]),
    #[error("unsupported CVXM version {0}")]
    UnsupportedVersion(u16),
    #[error("truncated checkpoint")]
    Truncated,
    #[error("{0} bytes after the last tensor")]
    TrailingBytes(usize),
    #[error("invalid UTF-8 in {0}")]
    Utf8(&'static str),
    #[error("unknown tensor dtype {0}")]
    UnknownDtype(u8),
    #[error("string too long for the container: {0}")]
    TooLong(String),
    #[error("tensor {name}: shape {shape:?} does not hold {len} values")]
    ShapeMismatch { name: String, shape: Vec<usize>, len: usize },
    #[error("checkpoint is a {found} model, expected {expected}")]
    WrongKind { expected: String, found: String },
    #[error("missing config entry {0}")]
    MissingEntry(String),
    #[error("missing tensor {0}")]
    MissingTensor(String),
    #[error("config entry {key} has invalid value {value:?}")]
    BadValue { key: String, value: String },
    #[error("tensor {0} has the wrong dtype or shape")]
    BadTensor(String),
}

pub type Result<T, E = CheckpointError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn dtype(&self) -> u8 {
        match self {
            TensorData::F32(_) => 0,
            TensorData::F64(_) => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: TensorData,
}

impl Tensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: TensorData) -> Result<Self> {
        let name = name.into();
        if shape.iter().product::<usize>() != data.len() {
            return Err(CheckpointError::ShapeMismatch { name, shape, len: data.len() });
        }
        Ok(Tensor { name, shape, data })
    }

    pub fn f32(name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        Tensor::new(name, shape, TensorData::F32(data))
    }

    pub fn f64(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        Tensor::new(name, shape, TensorData::F64(data))
    }
}

/// A typed bag of config strings and named tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub config: BTreeMap<String, String>,
    pub tensors: Vec<Tensor>,
}

impl Checkpoint {
    /// An empty checkpoint tagged with a model kind.
    pub fn with_kind(kind: &str) -> Self {
        let mut c = Checkpoint::default();
        c.set("kind", kind);
        c
    }

    pub fn kind(&self) -> Option<&str> {
        self.config.get("kind").map(String::as_str)
    }

    pub fn expect_kind(&self, expected: &str) -> Result<()> {
        match self.kind() {
            Some(k) if k == expected => Ok(()),
            other => Err(CheckpointError::WrongKind {
                expected: expected.to_owned(),
                found: other.unwrap_or("untagged").to_owned(),
            }),
        }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.config.insert(key.to_owned(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.config.get(key).map(String::as_str).ok_or_else(|| CheckpointError::MissingEntry(key.to_owned()))
    }

    /// Parses a config entry with `FromStr`.
    pub fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let value = self.get(key)?;
        value.parse().map_err(|_| CheckpointError::BadValue { key: key.to_owned(), value: value.to_owned() })
    }

    pub fn push(&mut self, tensor: Tensor) {
        self.tensors.push(tensor);
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors.iter().find(|t| t.name == name).ok_or_else(|| CheckpointError::MissingTensor(name.to_owned()))
    }

    /// An `f32` tensor's values, checked against the expected shape.
    pub fn f32_tensor(&self, name: &str, shape: &[usize]) -> Result<&[f32]> {
        match self.tensor(name)? {
            Tensor { shape: s, data: TensorData::F32(v), .. } if s == shape => Ok(v),
            _ => Err(CheckpointError::BadTensor(name.to_owned())),
        }
    }

    pub fn f64_tensor(&self, name: &str, shape: &[usize]) -> Result<&[f64]> {
        match self.tensor(name)? {
            Tensor { shape: s, data: TensorData::F64(v), .. } if s == shape => Ok(v),
            _ => Err(CheckpointError::BadTensor(name.to_owned())),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.write_all(MAGIC)?;
        out.write_u16::<LittleEndian>(VERSION)?;
        out.write_u32::<LittleEndian>(self.config.len() as u32)?;
        for (k, v) in &self.config {
            write_short(&mut out, k)?;
            out.write_u32::<LittleEndian>(u32::try_from(v.len()).map_err(|_| CheckpointError::TooLong(k.clone()))?)?;
            out.write_all(v.as_bytes())?;
        }
        out.write_u32::<LittleEndian>(self.tensors.len() as u32)?;
        for t in &self.tensors {
            write_short(&mut out, &t.name)?;
            out.write_u8(t.data.dtype())?;
            out.write_u8(u8::try_from(t.shape.len()).map_err(|_| CheckpointError::TooLong(t.name.clone()))?)?;
            for &d in &t.shape {
                out.write_u64::<LittleEndian>(d as u64)?;
            }
            match &t.data {
                TensorData::F32(v) => v.iter().try_for_each(|&x| out.write_f32::<LittleEndian>(x))?,
                TensorData::F64(v) => v.iter().try_for_each(|&x| out.write_f64::<LittleEndian>(x))?,
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor::new(bytes);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(truncated)?;
        if &magic != MAGIC {
            return Err(CheckpointError::BadMagic(magic));
        }
        let version = r.read_u16::<LittleEndian>().map_err(truncated)?;
        if version != VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let mut ckpt = Checkpoint::default();
        let entries = r.read_u32::<LittleEndian>().map_err(truncated)?;
        for _ in 0..entries {
            let key = read_short(&mut r, "config key")?;
            let len = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
            let value = read_string(&mut r, len, "config value")?;
            ckpt.config.insert(key, value);
        }
        let count = r.read_u32::<LittleEndian>().map_err(truncated)?;
        for _ in 0..count {
            let name = read_short(&mut r, "tensor name")?;
            let dtype = r.read_u8().map_err(truncated)?;
            let rank = r.read_u8().map_err(truncated)?;
            let mut shape = Vec::with_capacity(rank as usize);
            for _ in 0..rank {
                shape.push(r.read_u64::<LittleEndian>().map_err(truncated)? as usize);
            }
            let n = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).ok_or(CheckpointError::Truncated)?;
            let width = if dtype == 1 { 8 } else { 4 };
            if n.checked_mul(width).map_or(true, |b| b > remaining(&r)) {
                return Err(match dtype {
                    0 | 1 => CheckpointError::Truncated,
                    d => CheckpointError::UnknownDtype(d),
                });
            }
            let data = match dtype {
                0 => {
                    let mut v = vec![0f32; n];
                    r.read_f32_into::<LittleEndian>(&mut v).map_err(truncated)?;
                    TensorData::F32(v)
                }
                1 => {
                    let mut v = vec![0f64; n];
                    r.read_f64_into::<LittleEndian>(&mut v).map_err(truncated)?;
                    TensorData::F64(v)
                }
                d => return Err(CheckpointError::UnknownDtype(d)),
            };
            ckpt.tensors.push(Tensor { name, shape, data });
        }
        match remaining(&r) {
            0 => Ok(ckpt),
            n => Err(CheckpointError::TrailingBytes(n)),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Checkpoint::from_bytes(&std::fs::read(path)?)
    }
}

fn truncated(_: std::io::Error) -> CheckpointError {
    CheckpointError::Truncated
}

fn remaining(r: &Cursor<&[u8]>) -> usize {
    r.get_ref().len() - r.position() as usize
}

fn write_short(out: &mut Vec<u8>, s: &str) -> Result<()> {
    out.write_u16::<LittleEndian>(u16::try_from(s.len()).map_err(|_| CheckpointError::TooLong(s.to_owned()))?)?;
    out.write_all(s.as_bytes())?;
    Ok(())
}

fn read_short(r: &mut Cursor<&[u8]>, what: &'static str) -> Result<String> {
    let len = r.read_u16::<LittleEndian>().map_err(truncated)? as usize;
    read_string(r, len, what)
}

fn read_string(r: &mut Cursor<&[u8]>, len: usize, what: &'static str) -> Result<String> {
    if len > remaining(r) {
        return Err(CheckpointError::Truncated);
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf).map_err(truncated)?;
    String::from_utf8(buf).map_err(|_| CheckpointError::Utf8(what))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> Checkpoint {
        let mut c = Checkpoint::with_kind("test");
        c.set("alpha", 0.1f64);
        c.set("name", "ünïcode");
        c.push(Tensor::f32("w", vec![2, 3], vec![1.0, -2.5, 3.25, f32::MIN_POSITIVE, 0.0, -0.0]).unwrap());
        c.push(Tensor::f64("v", vec![2], vec![std::f64::consts::PI, 1e-300]).unwrap());
        c.push(Tensor::f32("empty", vec![0, 4], vec![]).unwrap());
        c
    }

    #[test]
    fn round_trip_is_exact() {
        let c = sample();
        let bytes = c.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes().unwrap(), bytes);
        assert_eq!(back.parse::<f64>("alpha").unwrap(), 0.1);
    }

    #[test]
    fn header_layout() {
        let bytes = Checkpoint::default().to_bytes().unwrap();
        assert_eq!(bytes, [b'C', b'V', b'X', b'M', 1, 0, 0, 0, 0, 0, 0, 0, 0, 0]);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = sample().to_bytes().unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(CheckpointError::BadMagic(_))));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(CheckpointError::UnsupportedVersion(9))));
        for cut in [3, 5, 20, bytes.len() - 1] {
            assert!(matches!(Checkpoint::from_bytes(&bytes[..cut]), Err(CheckpointError::Truncated)), "cut {cut}");
        }
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(Checkpoint::from_bytes(&long), Err(CheckpointError::TrailingBytes(1))));
    }

    #[test]
    fn typed_access() {
        let c = sample();
        assert_eq!(c.f32_tensor("w", &[2, 3]).unwrap()[1], -2.5);
        assert!(matches!(c.f32_tensor("w", &[3, 2]), Err(CheckpointError::BadTensor(_))));
        assert!(matches!(c.f32_tensor("v", &[2]), Err(CheckpointError::BadTensor(_))));
        assert!(matches!(c.tensor("nope"), Err(CheckpointError::MissingTensor(_))));
        assert!(matches!(c.parse::<u32>("name"), Err(CheckpointError::BadValue { .. })));
        assert!(c.expect_kind("test").is_ok());
        assert!(matches!(c.expect_kind("svm_rbf"), Err(CheckpointError::WrongKind { .. })));
        assert!(Tensor::f32("x", vec![2, 2], vec![1.0]).is_err());
    }

    proptest! {
        #[test]
        fn arbitrary_tensors_round_trip(
            entries in proptest::collection::btree_map("[a-z_]{1,8}", ".{0,12}", 0..5),
            data in proptest::collection::vec(any::<f32>(), 0..40),
            wide in proptest::collection::vec(any::<f64>(), 0..10),
        ) {
            let mut c = Checkpoint { config: entries, tensors: vec![] };
            c.push(Tensor::f32("a", vec![data.len()], data).unwrap());
            c.push(Tensor::f64("b", vec![1, wide.len()], wide).unwrap());
            let bytes = c.to_bytes().unwrap();
            let back = Checkpoint::from_bytes(&bytes).unwrap();
            // NaN payloads compare unequal, so compare the re-encoded bytes
            prop_assert_eq!(back.to_bytes().unwrap(), bytes);
        }
    }
}
