use ndarray::{Array1, Array2};

use super::{Architecture, BatchNorm, DenseLayer, ModelParams, DEPTH};
use crate::checkpoint::{Checkpoint, CheckpointError, Result, Tensor};

pub const KIND: &str = "covexplain";

impl ModelParams<f32> {
    /// Writes architecture entries and every layer tensor into `ckpt`.
    pub fn write_to(&self, ckpt: &mut Checkpoint) -> Result<()> {
        let a = &self.arch;
        ckpt.set("input_dim", a.input_dim);
        ckpt.set("hidden_dim", a.hidden_dim);
        ckpt.set("output_dim", a.output_dim);
        ckpt.set("dropout_p", a.dropout_p);
        ckpt.set("leaky_slope", a.leaky_slope);
        ckpt.set("bn_eps", a.bn_eps);
        ckpt.set("bn_momentum", a.bn_momentum);
        ckpt.set("depth", DEPTH);
        for (i, l) in self.layers.iter().enumerate() {
            let (r, c) = l.weight.dim();
            ckpt.push(Tensor::f32(format!("layer{i}.weight"), vec![r, c], l.weight.iter().copied().collect())?);
            ckpt.push(Tensor::f32(format!("layer{i}.bias"), vec![c], l.bias.to_vec())?);
            if let Some(n) = &l.norm {
                for (name, t) in [
                    ("gamma", &n.gamma),
                    ("beta", &n.beta),
                    ("running_mean", &n.running_mean),
                    ("running_var", &n.running_var),
                ] {
                    ckpt.push(Tensor::f32(format!("layer{i}.{name}"), vec![c], t.to_vec())?);
                }
            }
        }
        Ok(())
    }

    pub fn read_from(ckpt: &Checkpoint) -> Result<Self> {
        let arch = Architecture {
            input_dim: ckpt.parse("input_dim")?,
            hidden_dim: ckpt.parse("hidden_dim")?,
            output_dim: ckpt.parse("output_dim")?,
            dropout_p: ckpt.parse("dropout_p")?,
            leaky_slope: ckpt.parse("leaky_slope")?,
            bn_eps: ckpt.parse("bn_eps")?,
            bn_momentum: ckpt.parse("bn_momentum")?,
        };
        let depth: usize = ckpt.parse("depth")?;
        if depth != DEPTH {
            return Err(CheckpointError::BadValue { key: "depth".into(), value: depth.to_string() });
        }
        let mut layers = Vec::with_capacity(DEPTH);
        for i in 0..DEPTH {
            let fan_in = if i == 0 { arch.input_dim } else { arch.hidden_dim };
            let fan_out = if i == DEPTH - 1 { arch.output_dim } else { arch.hidden_dim };
            let vector = |name: &str| -> Result<Array1<f32>> {
                Ok(Array1::from(ckpt.f32_tensor(&format!("layer{i}.{name}"), &[fan_out])?.to_vec()))
            };
            let w = ckpt.f32_tensor(&format!("layer{i}.weight"), &[fan_in, fan_out])?;
            let weight = Array2::from_shape_vec((fan_in, fan_out), w.to_vec()).expect("shape checked");
            let norm = if i < DEPTH - 1 {
                Some(BatchNorm {
                    gamma: vector("gamma")?,
                    beta: vector("beta")?,
                    running_mean: vector("running_mean")?,
                    running_var: vector("running_var")?,
                })
            } else {
                None
            };
            layers.push(DenseLayer { weight, bias: vector("bias")?, norm });
        }
        Ok(ModelParams { arch, layers })
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut c = Checkpoint::with_kind(KIND);
        self.write_to(&mut c)?;
        Ok(c)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.expect_kind(KIND)?;
        ModelParams::read_from(ckpt)
    }
}
