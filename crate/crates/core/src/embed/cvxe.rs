//! CVXE: a little-endian container for one float32 vector per record id.
//!
//! ```text
//! magic   "CVXE"            4 bytes
//! version u16               = 1
//! count   u64
//! ids     count × (u16 byte length, UTF-8 bytes)
//! dim     u32
//! payload count × dim × f32, rows in id order
//! ```

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{EmbedError, Result};

pub const MAGIC: &[u8; 4] = b"CVXE";
pub const VERSION: u16 = 1;

/// Dense float32 rows keyed by record id.
#[derive(Debug, Clone)]
pub struct EmbeddingMatrix {
    ids: Vec<String>,
    dim: usize,
    data: Vec<f32>,
    source_tag: String,
    index: HashMap<String, usize>,
}

impl PartialEq for EmbeddingMatrix {
    /// Ids, width, and bit patterns of every entry. The source tag is not
    /// persisted by the file format and is ignored here.
    fn eq(&self, other: &Self) -> bool {
        self.ids == other.ids
            && self.dim == other.dim
            && self.data.len() == other.data.len()
            && self.data.iter().zip(&other.data).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl EmbeddingMatrix {
    /// `data` holds `ids.len()` rows of `dim` values, row-major.
    pub fn new(ids: Vec<String>, dim: usize, data: Vec<f32>, source_tag: impl Into<String>) -> Result<Self> {
        if dim == 0 {
            return Err(EmbedError::ZeroDim);
        }
        if data.len() != ids.len() * dim {
            return Err(EmbedError::CountMismatch { ids: ids.len(), rows: data.len() / dim });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(EmbedError::NonFinite { id: ids[pos / dim].clone(), column: pos % dim });
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(EmbedError::DuplicateId(id.clone()));
            }
        }
        Ok(EmbeddingMatrix { ids, dim, data, source_tag: source_tag.into(), index })
    }

    pub fn from_rows(ids: Vec<String>, rows: Vec<Vec<f32>>, source_tag: impl Into<String>) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != dim) {
            return Err(EmbedError::RowLength { id: ids.get(bad).cloned().unwrap_or_default(), expected: dim });
        }
        if rows.len() != ids.len() {
            return Err(EmbedError::CountMismatch { ids: ids.len(), rows: rows.len() });
        }
        Self::new(ids, dim, rows.concat(), source_tag)
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn source_tag(&self) -> &str {
        &self.source_tag
    }

    pub fn row_at(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row(&self, id: &str) -> Option<&[f32]> {
        self.index.get(id).map(|&i| self.row_at(i))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::with_capacity(4 + 2 + 8 + 4 + self.data.len() * 4 + self.ids.len() * 12);
        buf.extend_from_slice(MAGIC);
        buf.write_u16::<LittleEndian>(VERSION)?;
        buf.write_u64::<LittleEndian>(self.ids.len() as u64)?;
        for id in &self.ids {
            let len = u16::try_from(id.len()).map_err(|_| EmbedError::IdTooLong(id.clone()))?;
            buf.write_u16::<LittleEndian>(len)?;
            buf.extend_from_slice(id.as_bytes());
        }
        buf.write_u32::<LittleEndian>(self.dim as u32)?;
        for v in &self.data {
            buf.write_f32::<LittleEndian>(*v)?;
        }
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = bytes;
        let mut magic = [0u8; 4];
        cur.read_exact(&mut magic).map_err(|_| EmbedError::Truncated("header"))?;
        if &magic != MAGIC {
            return Err(EmbedError::BadMagic(magic));
        }
        let version = cur.read_u16::<LittleEndian>().map_err(|_| EmbedError::Truncated("header"))?;
        if version != VERSION {
            return Err(EmbedError::UnsupportedVersion(version));
        }
        let count = cur.read_u64::<LittleEndian>().map_err(|_| EmbedError::Truncated("header"))?;
        // each id needs at least its 2-byte length prefix
        if count > (cur.len() / 2) as u64 {
            return Err(EmbedError::Truncated("id table"));
        }
        let mut ids = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let len = cur.read_u16::<LittleEndian>().map_err(|_| EmbedError::Truncated("id table"))? as usize;
            if cur.len() < len {
                return Err(EmbedError::Truncated("id table"));
            }
            let (raw, rest) = cur.split_at(len);
            ids.push(String::from_utf8(raw.to_vec()).map_err(|_| EmbedError::InvalidId)?);
            cur = rest;
        }
        let dim = cur.read_u32::<LittleEndian>().map_err(|_| EmbedError::Truncated("header"))? as usize;
        if dim == 0 {
            return Err(EmbedError::ZeroDim);
        }
        let expected = ids.len() * dim * 4;
        if cur.len() < expected {
            return Err(EmbedError::Truncated("payload"));
        }
        if cur.len() > expected {
            return Err(EmbedError::CountMismatch { ids: ids.len(), rows: cur.len() / (dim * 4) });
        }
        let data = cur
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Self::new(ids, dim, data, "cvxe")
    }
}

pub fn write_embeddings(m: &EmbeddingMatrix, path: &Path) -> Result<()> {
    let bytes = m.to_bytes()?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingMatrix> {
    let bytes = std::fs::read(path)?;
    EmbeddingMatrix::from_bytes(&bytes)
}

impl From<io::Error> for EmbedError {
    fn from(e: io::Error) -> Self {
        EmbedError::Io(e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_by_three() -> EmbeddingMatrix {
        EmbeddingMatrix::from_rows(
            vec!["a".into(), "bb".into()],
            vec![vec![1.0, -2.5, 0.0], vec![f32::MIN_POSITIVE, 3.25, -0.0]],
            "test",
        )
        .unwrap()
    }

    #[test]
    fn header_layout() {
        let bytes = two_by_three().to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"CVXE");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
        assert_eq!(u64::from_le_bytes(bytes[6..14].try_into().unwrap()), 2);
        // ids: (1,"a") (2,"bb")
        assert_eq!(&bytes[14..17], &[1, 0, b'a']);
        assert_eq!(&bytes[17..21], &[2, 0, b'b', b'b']);
        assert_eq!(u32::from_le_bytes(bytes[21..25].try_into().unwrap()), 3);
        assert_eq!(bytes.len() - 25, 24);
        assert_eq!(f32::from_le_bytes(bytes[29..33].try_into().unwrap()), -2.5);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.cvxe");
        let m = two_by_three();
        write_embeddings(&m, &path).unwrap();
        let back = read_embeddings(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.row("bb").unwrap()[1], 3.25);
        assert!(back.row("zz").is_none());
    }

    #[test]
    fn truncated_payload() {
        let bytes = two_by_three().to_bytes().unwrap();
        let err = EmbeddingMatrix::from_bytes(&bytes[..bytes.len() - 5]).unwrap_err();
        assert!(matches!(err, EmbedError::Truncated("payload")));
        assert_eq!(err.to_string(), "truncated payload");
    }

    #[test]
    fn distinct_defects() {
        let good = two_by_three().to_bytes().unwrap();

        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(matches!(EmbeddingMatrix::from_bytes(&bad_magic), Err(EmbedError::BadMagic(_))));

        let mut bad_version = good.clone();
        bad_version[4] = 9;
        assert!(matches!(EmbeddingMatrix::from_bytes(&bad_version), Err(EmbedError::UnsupportedVersion(9))));

        let mut zero_dim = good[..25].to_vec();
        zero_dim[21..25].copy_from_slice(&0u32.to_le_bytes());
        assert!(matches!(EmbeddingMatrix::from_bytes(&zero_dim), Err(EmbedError::ZeroDim)));

        let mut extra = good.clone();
        extra.extend_from_slice(&[0; 12]);
        assert!(matches!(EmbeddingMatrix::from_bytes(&extra), Err(EmbedError::CountMismatch { .. })));

        assert!(matches!(EmbeddingMatrix::from_bytes(&good[..16]), Err(EmbedError::Truncated("id table"))));
        assert!(matches!(EmbeddingMatrix::from_bytes(&good[..3]), Err(EmbedError::Truncated("header"))));
    }

    #[test]
    fn rejects_non_finite_and_duplicates() {
        let nan = EmbeddingMatrix::new(vec!["a".into()], 2, vec![0.0, f32::NAN], "t");
        assert!(matches!(nan, Err(EmbedError::NonFinite { column: 1, .. })));
        let dup = EmbeddingMatrix::new(vec!["a".into(), "a".into()], 1, vec![0.0, 1.0], "t");
        assert!(matches!(dup, Err(EmbedError::DuplicateId(_))));
        assert!(matches!(EmbeddingMatrix::new(vec![], 0, vec![], "t"), Err(EmbedError::ZeroDim)));
    }

    proptest! {
        #[test]
        fn bytes_round_trip(rows in 0usize..6, dim in 1usize..5, seed: u64) {
            use rand::Rng;
            let mut rng = crate::rng::seeded(seed);
            let ids: Vec<String> = (0..rows).map(|i| format!("id-{i}-é")).collect();
            let data: Vec<f32> = (0..rows * dim).map(|_| rng.gen_range(-1e6f32..1e6)).collect();
            let m = EmbeddingMatrix::new(ids, dim, data, "p").unwrap();
            prop_assert_eq!(EmbeddingMatrix::from_bytes(&m.to_bytes().unwrap()).unwrap(), m);
        }
    }
}
