//! Toy vision transformer with global attention and isolated band-unit
//! attention.

mod checkpoint;
mod flops;
mod forward;
mod plan;

use std::sync::Arc;

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tape, Tensor, Var};

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use flops::{certification_flops, count_flops, FlopCount};
pub use forward::{
    forward_band_unit, forward_global, forward_masked_global, forward_segments, window_tokens,
    EncoderActivations, ForwardOutput, Segment,
};
pub use plan::{batched_certify_forward, certify_logits, per_position_forward, plan_windows, Engine, WindowPlan};

pub const LAYER_NORM_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionMode {
    Global,
    BandUnit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub image_side: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub mlp_ratio: usize,
    pub num_classes: usize,
    /// RGB plus the ablation-mask channel.
    pub input_channels: usize,
    pub attention_mode: AttentionMode,
    /// Size of the codebook-logit reconstruction head (0 = no head).
    pub codebook_size: usize,
    /// Width of the distillation projection head (0 = no head).
    pub teacher_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_side: 16,
            patch_size: 4,
            embed_dim: 64,
            num_layers: 4,
            num_heads: 4,
            mlp_ratio: 4,
            num_classes: 3,
            input_channels: 4,
            attention_mode: AttentionMode::BandUnit,
            codebook_size: 0,
            teacher_dim: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let nonzero = [
            ("image_side", self.image_side),
            ("patch_size", self.patch_size),
            ("embed_dim", self.embed_dim),
            ("num_layers", self.num_layers),
            ("num_heads", self.num_heads),
            ("mlp_ratio", self.mlp_ratio),
            ("num_classes", self.num_classes),
            ("input_channels", self.input_channels),
        ];
        if let Some((name, _)) = nonzero.iter().find(|(_, v)| *v == 0) {
            return Err(Error::contract(format!("model.{name} must be positive")));
        }
        if !self.image_side.is_multiple_of(self.patch_size) {
            return Err(Error::contract(format!(
                "image side {} is not divisible by patch size {}",
                self.image_side, self.patch_size
            )));
        }
        if !self.embed_dim.is_multiple_of(self.num_heads) {
            return Err(Error::contract(format!(
                "embed dim {} is not divisible by {} heads",
                self.embed_dim, self.num_heads
            )));
        }
        Ok(())
    }

    /// Tokens per side of the patch grid.
    pub fn grid(&self) -> usize {
        self.image_side / self.patch_size
    }

    /// Patch tokens `N = hw / p²`.
    pub fn num_tokens(&self) -> usize {
        self.grid() * self.grid()
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.input_channels
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads
    }

    pub fn hidden_dim(&self) -> usize {
        self.embed_dim * self.mlp_ratio
    }

    /// Token columns in a band-unit window: `⌈b/p⌉ + 1`, capped at the grid.
    pub fn window_columns(&self, band_width: usize) -> usize {
        (band_width.div_ceil(self.patch_size) + 1).min(self.grid())
    }

    /// Parameter names and shapes in canonical order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let d = self.embed_dim;
        let h = self.hidden_dim();
        let mut out = vec![
            ("patch_embed.weight".to_string(), vec![self.patch_dim(), d]),
            ("patch_embed.bias".to_string(), vec![d]),
            ("cls_token".to_string(), vec![1, d]),
            ("pos_embed".to_string(), vec![self.num_tokens() + 1, d]),
        ];
        for i in 0..self.num_layers {
            let p = |s: &str| format!("blocks.{i}.{s}");
            out.extend([
                (p("norm1.weight"), vec![d]),
                (p("norm1.bias"), vec![d]),
                (p("attn.qkv.weight"), vec![d, 3 * d]),
                (p("attn.qkv.bias"), vec![3 * d]),
                (p("attn.proj.weight"), vec![d, d]),
                (p("attn.proj.bias"), vec![d]),
                (p("norm2.weight"), vec![d]),
                (p("norm2.bias"), vec![d]),
                (p("mlp.fc1.weight"), vec![d, h]),
                (p("mlp.fc1.bias"), vec![h]),
                (p("mlp.fc2.weight"), vec![h, d]),
                (p("mlp.fc2.bias"), vec![d]),
            ]);
        }
        out.extend([
            ("norm.weight".to_string(), vec![d]),
            ("norm.bias".to_string(), vec![d]),
            ("head.weight".to_string(), vec![d, self.num_classes]),
            ("head.bias".to_string(), vec![self.num_classes]),
        ]);
        if self.codebook_size > 0 {
            out.push(("recon.codebook.weight".to_string(), vec![d, self.codebook_size]));
            out.push(("recon.codebook.bias".to_string(), vec![self.codebook_size]));
        }
        if self.teacher_dim > 0 {
            out.push(("recon.teacher.weight".to_string(), vec![d, self.teacher_dim]));
            out.push(("recon.teacher.bias".to_string(), vec![self.teacher_dim]));
        }
        out
    }
}

pub fn is_reconstruction_param(name: &str) -> bool {
    name.starts_with("recon.")
}

/// Named model weights in canonical order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub config: ModelConfig,
    pub tensors: IndexMap<String, Arc<Tensor<T>>>,
}

impl<T: Scalar> ModelParams<T> {
    /// Xavier-uniform linear weights, small uniform embeddings, zero biases
    /// and unit layer-norm gains.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = IndexMap::new();
        for (name, shape) in config.param_shapes() {
            let numel: usize = shape.iter().product();
            let data: Vec<f64> = if name.ends_with(".bias") {
                vec![0.0; numel]
            } else if name.contains("norm") {
                vec![1.0; numel]
            } else if name == "cls_token" || name == "pos_embed" {
                (0..numel).map(|_| rng.gen_range(-0.035..0.035)).collect()
            } else {
                let a = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                (0..numel).map(|_| rng.gen_range(-a..a)).collect()
            };
            let data = data.into_iter().map(T::of).collect();
            tensors.insert(name, Arc::new(Tensor::new(shape, data)?));
        }
        Ok(Self { config: config.clone(), tensors })
    }

    /// Wraps loaded tensors after checking every name and shape.
    pub fn from_tensors(config: &ModelConfig, mut loaded: IndexMap<String, Tensor<T>>) -> Result<Self> {
        config.validate()?;
        let mut tensors = IndexMap::new();
        for (name, shape) in config.param_shapes() {
            let t = loaded
                .shift_remove(&name)
                .ok_or_else(|| Error::format(format!("checkpoint lacks tensor `{name}`")))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::format(format!(
                    "tensor `{name}` has shape {:?}, configuration expects {shape:?}",
                    t.shape()
                )));
            }
            tensors.insert(name, Arc::new(t));
        }
        if let Some(extra) = loaded.keys().next() {
            return Err(Error::format(format!("checkpoint has unexpected tensor `{extra}`")));
        }
        Ok(Self { config: config.clone(), tensors })
    }

    pub fn get(&self, name: &str) -> Result<&Arc<Tensor<T>>> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::contract(format!("no parameter named `{name}`")))
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), Arc::new(v.cast::<U>())))
                .collect(),
        }
    }

    /// Same weights under a different attention mode.
    pub fn with_attention_mode(&self, mode: AttentionMode) -> Self {
        let mut out = self.clone();
        out.config.attention_mode = mode;
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors.values().map(|t| t.numel()).sum()
    }

    /// Registers every parameter as a tape leaf; `trainable` decides which
    /// ones request gradients.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: impl Fn(&str) -> bool) -> BoundParams {
        let vars = self
            .tensors
            .iter()
            .map(|(name, t)| (name.clone(), tape.leaf_shared(t.clone(), trainable(name))))
            .collect();
        BoundParams { vars }
    }
}

/// Tape handles for every parameter of one forward pass.
pub struct BoundParams {
    pub vars: IndexMap<String, Var>,
}

impl BoundParams {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::contract(format!("parameter `{name}` not bound")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn token_count_follows_grid() {
        let cfg = ModelConfig::default();
        assert_eq!(cfg.num_tokens(), 16);
        let big = ModelConfig { image_side: 224, patch_size: 16, ..cfg };
        assert_eq!(big.num_tokens(), 196);
    }

    #[test]
    fn invalid_geometry_is_rejected() {
        let cfg = ModelConfig { image_side: 18, ..Default::default() };
        assert!(cfg.validate().is_err());
        let cfg = ModelConfig { embed_dim: 30, num_heads: 4, ..Default::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn init_is_seeded() {
        let cfg = ModelConfig { embed_dim: 8, num_layers: 1, num_heads: 2, ..Default::default() };
        let a = ModelParams::<f64>::init(&cfg, 3).unwrap();
        let b = ModelParams::<f64>::init(&cfg, 3).unwrap();
        let c = ModelParams::<f64>::init(&cfg, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn from_tensors_checks_shapes() {
        let cfg = ModelConfig { embed_dim: 8, num_layers: 1, num_heads: 2, ..Default::default() };
        let p = ModelParams::<f32>::init(&cfg, 0).unwrap();
        let mut loaded: IndexMap<String, Tensor<f32>> =
            p.tensors.iter().map(|(k, v)| (k.clone(), (**v).clone())).collect();
        assert!(ModelParams::from_tensors(&cfg, loaded.clone()).is_ok());
        loaded.insert("head.bias".into(), Tensor::zeros(&[7]));
        assert!(ModelParams::from_tensors(&cfg, loaded).is_err());
    }
}
