//! `RunConfig`: a TOML file with `[data]`, `[model]`, `[train]` and
//! `[certify]` sections. Every key has a default, unknown keys are errors,
//! and `--set section.key=value` overrides any of them.

use std::path::{Path, PathBuf};

use ecvit_core::certify::{CertifyConfig, ThresholdOn};
use ecvit_core::data::{DataSource, DatasetSpec};
use ecvit_core::psim::{build_default_plan, FinetuneConfig, LrSchedule, OptimConfig, Supervision, TrainPlan};
use ecvit_core::vit::{AttentionMode, Engine, ModelConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub source: DataSource,
    /// CIFAR-10 binary file or directory (required for `cifar10_binary`).
    pub path: Option<PathBuf>,
    pub num_classes: usize,
    pub image_side: usize,
    pub upsample_factor: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub seed: u64,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic,
            path: None,
            num_classes: 3,
            image_side: 16,
            upsample_factor: 1,
            train_size: 600,
            test_size: 150,
            seed: 7,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub patch_size: usize,
    pub embed_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub mlp_ratio: usize,
    pub attention_mode: AttentionMode,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            patch_size: 4,
            embed_dim: 32,
            num_layers: 2,
            num_heads: 4,
            mlp_ratio: 2,
            attention_mode: AttentionMode::BandUnit,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub seed: u64,
    pub stages: usize,
    pub stage_epochs: usize,
    pub finetune_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub warmup_epochs: usize,
    pub lr_schedule: LrSchedule,
    pub lambda: f64,
    pub supervision: Supervision,
    pub codebook_size: usize,
    pub teacher_epochs: usize,
    pub stage1_scatter: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            seed: 7,
            stages: 3,
            stage_epochs: 10,
            finetune_epochs: 10,
            batch_size: 32,
            lr: 1e-3,
            weight_decay: 1e-8,
            warmup_epochs: 1,
            lr_schedule: LrSchedule::Constant,
            lambda: 1000.0,
            supervision: Supervision::Vae,
            codebook_size: 64,
            teacher_epochs: 20,
            stage1_scatter: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CertifySection {
    /// Band width in original-image pixels.
    pub band: usize,
    pub band_wrap: bool,
    pub theta: f64,
    pub threshold_on: ThresholdOn,
    /// Patch sides in original-image pixels.
    pub patches: Vec<usize>,
    pub engine: Engine,
}

impl Default for CertifySection {
    fn default() -> Self {
        Self {
            band: 4,
            band_wrap: true,
            theta: 0.2,
            threshold_on: ThresholdOn::Probabilities,
            patches: vec![2, 4],
            engine: Engine::BandUnit,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub certify: CertifySection,
}

/// Parses `1`, `2x2` or `4X4` into a patch side.
pub fn parse_patch(s: &str) -> Result<usize, CliError> {
    let s = s.trim();
    let side = match s.split_once(['x', 'X']) {
        Some((a, b)) if a == b => a,
        Some(_) => return Err(CliError::Usage(format!("patch `{s}` must be square"))),
        None => s,
    };
    side.parse::<usize>()
        .ok()
        .filter(|&m| m > 0)
        .ok_or_else(|| CliError::Usage(format!("invalid patch size `{s}`")))
}

fn parse_value(raw: &str) -> toml::Value {
    let probe = format!("v = {raw}");
    match probe.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("probe key"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("config: {}", e.message())))
    }

    /// Reads `path` (or starts from defaults) and applies `section.key=value`
    /// overrides in order.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut table: toml::Table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
                text.parse()
                    .map_err(|e: toml::de::Error| CliError::Usage(format!("config {}: {}", p.display(), e.message())))?
            }
            None => toml::Table::new(),
        };
        for ov in overrides {
            let (key, raw) = ov
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("override `{ov}` is not section.key=value")))?;
            let (section, field) = key
                .trim()
                .split_once('.')
                .ok_or_else(|| CliError::Usage(format!("override key `{key}` needs a section")))?;
            let entry = table
                .entry(section.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            let toml::Value::Table(sec) = entry else {
                return Err(CliError::Usage(format!("`{section}` is not a section")));
            };
            sec.insert(field.to_string(), parse_value(raw.trim()));
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Usage(format!("config: {}", e.message())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.data.source == DataSource::Cifar10Binary && self.data.path.is_none() {
            return Err(CliError::Usage("data.path is required when data.source = \"cifar10_binary\"".into()));
        }
        if self.data.upsample_factor == 0 {
            return Err(CliError::Usage("data.upsample_factor must be at least 1".into()));
        }
        if self.certify.patches.contains(&0) {
            return Err(CliError::Usage("certify.patches must be positive".into()));
        }
        self.model_config().validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(())
    }

    pub fn dataset_spec(&self) -> DatasetSpec {
        let d = &self.data;
        DatasetSpec {
            source: d.source,
            num_classes: if d.source == DataSource::Cifar10Binary { 10 } else { d.num_classes },
            image_side: if d.source == DataSource::Cifar10Binary { 32 } else { d.image_side },
            upsample_factor: d.upsample_factor,
            train_size: d.train_size,
            test_size: d.test_size,
            seed: d.seed,
        }
    }

    pub fn model_side(&self) -> usize {
        self.dataset_spec().model_side()
    }

    /// Model pixels per original pixel.
    pub fn scale(&self) -> usize {
        self.data.upsample_factor
    }

    pub fn model_band(&self) -> usize {
        self.certify.band * self.scale()
    }

    pub fn model_config(&self) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            image_side: self.model_side(),
            patch_size: m.patch_size,
            embed_dim: m.embed_dim,
            num_layers: m.num_layers,
            num_heads: m.num_heads,
            mlp_ratio: m.mlp_ratio,
            num_classes: self.dataset_spec().num_classes,
            input_channels: 4,
            attention_mode: m.attention_mode,
            codebook_size: if self.train.supervision == Supervision::Vae { self.train.codebook_size } else { 0 },
            teacher_dim: if self.train.supervision == Supervision::Distill { m.embed_dim } else { 0 },
        }
    }

    /// Same architecture with global attention and no reconstruction heads.
    pub fn teacher_config(&self) -> ModelConfig {
        ModelConfig {
            attention_mode: AttentionMode::Global,
            codebook_size: 0,
            teacher_dim: 0,
            ..self.model_config()
        }
    }

    pub fn train_plan(&self) -> Result<TrainPlan, CliError> {
        let t = &self.train;
        let w = self.model_side();
        let mut plan = build_default_plan(self.model_band(), w, t.stages).map_err(|e| CliError::Usage(e.to_string()))?;
        for s in &mut plan.stages {
            s.epochs = t.stage_epochs;
            s.lambda = t.lambda;
            s.supervision = t.supervision;
        }
        plan.finetune = FinetuneConfig { band_width: self.model_band(), epochs: t.finetune_epochs };
        plan.optim = OptimConfig {
            lr: t.lr,
            weight_decay: t.weight_decay,
            warmup_epochs: t.warmup_epochs,
            batch_size: t.batch_size,
            schedule: t.lr_schedule,
        };
        plan.seed = t.seed;
        plan.band_wrap = self.certify.band_wrap;
        plan.stage1_scatter = t.stage1_scatter;
        plan.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(plan)
    }

    pub fn certify_config(&self) -> CertifyConfig {
        let c = &self.certify;
        CertifyConfig {
            theta: c.theta,
            band_width: c.band,
            patch_sizes: c.patches.clone(),
            scale: self.scale(),
            wrap: c.band_wrap,
            threshold_on: c.threshold_on,
            engine: c.engine,
        }
    }
}
