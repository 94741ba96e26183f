//! The attention-based structure-refinement network.
//!
//! A stack of dot-product attention layers: per layer and head, edge
//! logits `e_ij = (W h_i) . (W h_j) / sqrt(F)` drive both the attention
//! softmax (over each node's neighborhood plus itself) and a per-layer
//! link-prediction loss through `phi_ij = sigmoid(e_ij)`. Hidden layers
//! concatenate heads behind a LeakyReLU; the final layer averages heads
//! into class logits. Gradients are exact analytic reverse-mode
//! differentiation of this graph, verified against central finite
//! differences.

mod attn;
mod backward;
mod groups;
mod loss;
mod train;

pub use attn::{forward, AttnGraph, DropoutPlan, ForwardPass};
pub use backward::{backward, LossGradients};
pub use groups::{
    apportion_negatives, sample_negatives, split_groups, GroupLabel, GroupPartition, GroupScheme,
    NegativeApportion,
};
pub use loss::{link_loss, loss_link_grouped, loss_node};
pub use train::{
    evaluate_accuracy, infer_refined, train, EpochLog, EpochState, InferenceOutput,
    Phase1Artifacts, TrainOutput,
};

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::derive_rng;
use crate::scalar::Scalar;

/// Network shape; the defaults follow the 2-layer, 16-unit, 8-head
/// configuration used throughout.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchConfig {
    pub num_layers: usize,
    /// Per-head width of hidden layers.
    pub hidden_dim: usize,
    pub num_heads: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            num_layers: 2,
            hidden_dim: 16,
            num_heads: 8,
        }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 || self.hidden_dim == 0 || self.num_heads == 0 {
            return Err(Error::invalid(
                "num_layers, hidden_dim, and num_heads must be >= 1",
            ));
        }
        Ok(())
    }
}

/// Optimization settings for the training loop.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub dropout: f64,
    pub weight_decay: f64,
    /// Weight of the summed per-layer link losses in the objective.
    pub lambda_e: f64,
    /// Negative samples per positive edge.
    pub p_n: f64,
    pub epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.01,
            dropout: 0.6,
            weight_decay: 5e-4,
            lambda_e: 1.0,
            p_n: 0.5,
            epochs: 1000,
            patience: 200,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::invalid("lr must be > 0"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid("dropout must lie in [0, 1)"));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::invalid("weight_decay must be >= 0"));
        }
        if !(self.p_n > 0.0) {
            return Err(Error::invalid("p_n must be > 0"));
        }
        if self.lambda_e < 0.0 {
            return Err(Error::invalid("lambda_e must be >= 0"));
        }
        Ok(())
    }
}

/// Per-layer, per-head weight matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<S: Scalar> {
    layers: Vec<Vec<Array2<S>>>,
    arch: ArchConfig,
    in_dim: usize,
    num_classes: usize,
}

impl<S: Scalar> ModelParams<S> {
    /// Xavier-uniform initialization, deterministic in the seed.
    pub fn init(
        arch: &ArchConfig,
        in_dim: usize,
        num_classes: usize,
        seed: u64,
    ) -> Result<ModelParams<S>> {
        arch.validate()?;
        if in_dim == 0 || num_classes == 0 {
            return Err(Error::invalid("in_dim and num_classes must be >= 1"));
        }
        let mut layers = Vec::with_capacity(arch.num_layers);
        for l in 0..arch.num_layers {
            let f_in = if l == 0 {
                in_dim
            } else {
                arch.hidden_dim * arch.num_heads
            };
            let f_out = if l == arch.num_layers - 1 {
                num_classes
            } else {
                arch.hidden_dim
            };
            let scale = S::from_f64((6.0 / (f_in + f_out) as f64).sqrt());
            let mut heads = Vec::with_capacity(arch.num_heads);
            for h in 0..arch.num_heads {
                let mut rng = derive_rng(seed, "model-init", &[l as u64, h as u64]);
                let w = Array2::from_shape_simple_fn((f_out, f_in), || {
                    S::sample_uniform(&mut rng, -scale, scale)
                });
                heads.push(w);
            }
            layers.push(heads);
        }
        Ok(ModelParams {
            layers,
            arch: *arch,
            in_dim,
            num_classes,
        })
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn num_layers(&self) -> usize {
        self.arch.num_layers
    }

    pub fn num_heads(&self) -> usize {
        self.arch.num_heads
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn weight(&self, layer: usize, head: usize) -> &Array2<S> {
        &self.layers[layer][head]
    }

    pub fn weight_mut(&mut self, layer: usize, head: usize) -> &mut Array2<S> {
        &mut self.layers[layer][head]
    }

    /// Zero arrays shaped like the parameters, for gradient accumulation.
    pub fn zeros_like(&self) -> Vec<Vec<Array2<S>>> {
        self.layers
            .iter()
            .map(|heads| heads.iter().map(|w| Array2::zeros(w.dim())).collect())
            .collect()
    }

    pub fn convert<T: Scalar>(&self) -> ModelParams<T> {
        ModelParams {
            layers: self
                .layers
                .iter()
                .map(|heads| {
                    heads
                        .iter()
                        .map(|w| w.mapv(|v| T::from_f64(v.as_f64())))
                        .collect()
                })
                .collect(),
            arch: self.arch,
            in_dim: self.in_dim,
            num_classes: self.num_classes,
        }
    }
}

const MODEL_MAGIC: &[u8; 8] = b"GSRMDL1\0";
const MODEL_VERSION: u32 = 1;

/// Writes `model.bin`: a versioned header, the layer shapes, and
/// row-major single-precision weights.
pub fn save_model<S: Scalar>(path: impl AsRef<Path>, params: &ModelParams<S>) -> Result<()> {
    let path = path.as_ref();
    let mut w =
        std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    let mut put = |bytes: &[u8]| std::io::Write::write_all(&mut w, bytes);
    put(MODEL_MAGIC).map_err(|e| Error::io(path, e))?;
    for v in [
        MODEL_VERSION,
        params.arch.num_layers as u32,
        params.arch.num_heads as u32,
        params.arch.hidden_dim as u32,
        params.in_dim as u32,
        params.num_classes as u32,
    ] {
        put(&v.to_le_bytes()).map_err(|e| Error::io(path, e))?;
    }
    for heads in &params.layers {
        for weight in heads {
            put(&(weight.nrows() as u32).to_le_bytes()).map_err(|e| Error::io(path, e))?;
            put(&(weight.ncols() as u32).to_le_bytes()).map_err(|e| Error::io(path, e))?;
            for v in weight.iter() {
                put(&(v.as_f64() as f32).to_le_bytes()).map_err(|e| Error::io(path, e))?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_u32(r: &mut impl Read, path: &Path) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
    Ok(u32::from_le_bytes(buf))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelParams<f32>> {
    let path = path.as_ref();
    let mut r =
        std::io::BufReader::new(std::fs::File::open(path).map_err(|e| Error::io(path, e))?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
    if &magic != MODEL_MAGIC {
        return Err(Error::parse(path, 0, "bad model magic"));
    }
    let version = read_u32(&mut r, path)?;
    if version != MODEL_VERSION {
        return Err(Error::parse(
            path,
            0,
            format!("unsupported model version {version}"),
        ));
    }
    let num_layers = read_u32(&mut r, path)? as usize;
    let num_heads = read_u32(&mut r, path)? as usize;
    let hidden_dim = read_u32(&mut r, path)? as usize;
    let in_dim = read_u32(&mut r, path)? as usize;
    let num_classes = read_u32(&mut r, path)? as usize;
    let arch = ArchConfig {
        num_layers,
        hidden_dim,
        num_heads,
    };
    arch.validate()?;
    let mut layers = Vec::with_capacity(num_layers);
    for _ in 0..num_layers {
        let mut heads = Vec::with_capacity(num_heads);
        for _ in 0..num_heads {
            let rows = read_u32(&mut r, path)? as usize;
            let cols = read_u32(&mut r, path)? as usize;
            let mut values = vec![0.0f32; rows * cols];
            let mut buf = [0u8; 4];
            for v in values.iter_mut() {
                r.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
                *v = f32::from_le_bytes(buf);
            }
            heads.push(
                Array2::from_shape_vec((rows, cols), values)
                    .map_err(|e| Error::parse(path, 0, e.to_string()))?,
            );
        }
        layers.push(heads);
    }
    Ok(ModelParams {
        layers,
        arch,
        in_dim,
        num_classes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_shapes_follow_the_architecture() {
        let arch = ArchConfig {
            num_layers: 2,
            hidden_dim: 16,
            num_heads: 8,
        };
        let p: ModelParams<f32> = ModelParams::init(&arch, 10, 3, 0).unwrap();
        assert_eq!(p.weight(0, 0).dim(), (16, 10));
        assert_eq!(p.weight(1, 7).dim(), (3, 128));
    }

    #[test]
    fn init_is_deterministic() {
        let arch = ArchConfig::default();
        let a: ModelParams<f32> = ModelParams::init(&arch, 5, 2, 9).unwrap();
        let b: ModelParams<f32> = ModelParams::init(&arch, 5, 2, 9).unwrap();
        assert_eq!(a, b);
        let c: ModelParams<f32> = ModelParams::init(&arch, 5, 2, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn model_roundtrips_through_disk() {
        let arch = ArchConfig {
            num_layers: 3,
            hidden_dim: 4,
            num_heads: 2,
        };
        let p: ModelParams<f32> = ModelParams::init(&arch, 7, 4, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        save_model(&path, &p).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(p, back);
    }
}
