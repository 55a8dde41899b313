//! Progressive smoothed image modeling: a multi-stage curriculum of joint
//! classification and token reconstruction on band-ablated images, followed
//! by classification-only fine-tuning with isolated band-unit attention.

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::LabeledImage;
use crate::error::{Error, Result};
use crate::smoothing::{ablate_band, ablate_patches, ceil_count, stage_masks, AblatedImage, BandSpec};
use crate::tensor::{AdamW, AdamWConfig, Tape, Tensor, Var};
use crate::tokenizer::{teacher_features, tokenize, Codebook, TeacherModel};
use crate::vit::{
    forward_segments, is_reconstruction_param, window_tokens, AttentionMode, BoundParams, ModelParams, Segment,
};

/// Weight of the reconstruction term relative to classification.
pub const DEFAULT_LAMBDA: f64 = 1000.0;

/// Samples evaluated by one tape. Gradients are reduced over chunks in
/// order, so results do not depend on the worker count.
const CHUNK: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Supervision {
    /// Cross-entropy against codebook token indices.
    Vae,
    /// L2 distance to frozen teacher features.
    Distill,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    /// 1-based.
    pub index: usize,
    pub keep_ratio: f64,
    pub reconstruct_ratio: f64,
    pub epochs: usize,
    pub lambda: f64,
    pub supervision: Supervision,
}

impl StageConfig {
    /// Retained band width `⌈keep·w⌉`.
    pub fn keep_width(&self, image_width: usize) -> usize {
        ceil_count(self.keep_ratio * image_width as f64).clamp(1, image_width)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.keep_ratio > 0.0 && self.keep_ratio <= 1.0) {
            return Err(Error::contract(format!("stage {}: keep ratio {} outside (0, 1]", self.index, self.keep_ratio)));
        }
        if !(self.reconstruct_ratio > 0.0 && self.reconstruct_ratio <= 1.0) {
            return Err(Error::contract(format!(
                "stage {}: reconstruct ratio {} outside (0, 1]",
                self.index, self.reconstruct_ratio
            )));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::contract(format!("stage {}: lambda must be non-negative", self.index)));
        }
        Ok(())
    }
}

/// Learning rate after warm-up.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// Half-cosine from the base rate to zero at the end of the phase.
    Cosine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub warmup_epochs: usize,
    pub batch_size: usize,
    pub schedule: LrSchedule,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self { lr: 1e-3, weight_decay: 1e-8, warmup_epochs: 1, batch_size: 32, schedule: LrSchedule::Constant }
    }
}

impl OptimConfig {
    /// Rate for 0-based `step` of a phase with `total` steps and `warmup`
    /// linear warm-up steps.
    pub fn lr_at(&self, step: usize, warmup: usize, total: usize) -> f64 {
        if step < warmup {
            return self.lr * (step + 1) as f64 / warmup as f64;
        }
        match self.schedule {
            LrSchedule::Constant => self.lr,
            LrSchedule::Cosine => {
                let span = total.saturating_sub(warmup).max(1) as f64;
                let t = (step - warmup) as f64 / span;
                0.5 * self.lr * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    /// Band width at model resolution.
    pub band_width: usize,
    pub epochs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainPlan {
    pub stages: Vec<StageConfig>,
    pub finetune: FinetuneConfig,
    pub optim: OptimConfig,
    pub seed: u64,
    pub band_wrap: bool,
    /// Stage 1 keeps randomly scattered patches instead of a band.
    pub stage1_scatter: bool,
}

impl TrainPlan {
    pub fn validate(&self) -> Result<()> {
        for s in &self.stages {
            s.validate()?;
        }
        if self.stages.windows(2).any(|w| w[1].keep_ratio >= w[0].keep_ratio) {
            return Err(Error::contract("stage keep ratios must strictly decrease"));
        }
        if self.optim.batch_size == 0 {
            return Err(Error::contract("batch size must be positive"));
        }
        if !(self.optim.lr > 0.0) {
            return Err(Error::contract("learning rate must be positive"));
        }
        Ok(())
    }

    /// Comparison plan: classification only on `b`-wide bands with global
    /// attention for as many epochs as all stages combined, then the same
    /// fine-tune phase.
    pub fn classification_baseline(&self, image_width: usize) -> TrainPlan {
        let epochs = self.stages.iter().map(|s| s.epochs).sum();
        let supervision = self.stages.first().map_or(Supervision::Vae, |s| s.supervision);
        TrainPlan {
            stages: vec![StageConfig {
                index: 1,
                keep_ratio: self.finetune.band_width as f64 / image_width as f64,
                reconstruct_ratio: 1.0,
                epochs,
                lambda: 0.0,
                supervision,
            }],
            stage1_scatter: false,
            ..self.clone()
        }
    }
}

/// Default three-stage curriculum for band width `b` on `w`-wide images:
/// keep 0.6 / 0.3 / `b/w` of the width while reconstructing 1.0 / 0.6 / 0.3
/// of the tokens, then fine-tune. `num_stages < 3` keeps the leading stages.
pub fn build_default_plan(b: usize, w: usize, num_stages: usize) -> Result<TrainPlan> {
    if b == 0 || w == 0 {
        return Err(Error::contract("band and image width must be positive"));
    }
    if (b as f64) >= 0.3 * w as f64 {
        let suggested = ceil_count(0.3 * w as f64).saturating_sub(1).max(1);
        return Err(Error::contract(format!(
            "band width {b} must be below 0.3·w = {:.1} for the stages to stay distinct; try b = {suggested}",
            0.3 * w as f64
        )));
    }
    if !(1..=3).contains(&num_stages) {
        return Err(Error::contract(format!("number of stages must be 1..=3, got {num_stages}")));
    }
    let keep = [0.6, 0.3, b as f64 / w as f64];
    let recon = [1.0, 0.6, 0.3];
    let stages = (0..num_stages)
        .map(|i| StageConfig {
            index: i + 1,
            keep_ratio: keep[i],
            reconstruct_ratio: recon[i],
            epochs: 10,
            lambda: DEFAULT_LAMBDA,
            supervision: Supervision::Vae,
        })
        .collect();
    Ok(TrainPlan {
        stages,
        finetune: FinetuneConfig { band_width: b, epochs: 10 },
        optim: OptimConfig::default(),
        seed: 0,
        band_wrap: true,
        stage1_scatter: false,
    })
}

/// Reconstruction targets for one image.
#[derive(Clone, Debug, PartialEq)]
pub enum TargetValues {
    /// Codebook index per selected token.
    Codes(Vec<usize>),
    /// Teacher feature row per selected token.
    Features(Tensor<f64>),
}

/// Selected outputs `H_R` (as token indices) and their targets `Z_R`.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenTargets {
    pub tokens: Vec<usize>,
    pub values: TargetValues,
}

impl TokenTargets {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn supervision(&self) -> Supervision {
        match self.values {
            TargetValues::Codes(_) => Supervision::Vae,
            TargetValues::Features(_) => Supervision::Distill,
        }
    }
}

/// Clean-image targets for every token of every training image.
#[derive(Clone, Debug)]
pub enum TargetStore {
    Codes(Vec<Vec<usize>>),
    Features(Vec<Tensor<f64>>),
}

impl TargetStore {
    pub fn from_codebook(cb: &Codebook, data: &[LabeledImage]) -> Result<Self> {
        let codes = data.par_iter().map(|it| tokenize(&it.image, cb)).collect::<Result<_>>()?;
        Ok(TargetStore::Codes(codes))
    }

    pub fn from_teacher(teacher: &TeacherModel, data: &[LabeledImage]) -> Result<Self> {
        let feats = data.par_iter().map(|it| teacher_features(teacher, &it.image)).collect::<Result<_>>()?;
        Ok(TargetStore::Features(feats))
    }

    pub fn supervision(&self) -> Supervision {
        match self {
            TargetStore::Codes(_) => Supervision::Vae,
            TargetStore::Features(_) => Supervision::Distill,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TargetStore::Codes(c) => c.len(),
            TargetStore::Features(f) => f.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Targets of image `i` restricted to `tokens`.
    pub fn select(&self, i: usize, tokens: &[usize]) -> TokenTargets {
        let values = match self {
            TargetStore::Codes(c) => TargetValues::Codes(tokens.iter().map(|&t| c[i][t]).collect()),
            TargetStore::Features(f) => {
                let rows: Vec<Vec<f64>> = tokens.iter().map(|&t| f[i].row(t).to_vec()).collect();
                TargetValues::Features(Tensor::from_rows(&rows))
            }
        };
        TokenTargets { tokens: tokens.to_vec(), values }
    }
}

/// Tape handles of the loss and its two terms.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub cls: Var,
    pub rec: Var,
}

/// Classification cross-entropy plus `λ` times the reconstruction term.
///
/// `recon_rows` are the encoder outputs of `targets.tokens`. VAE targets use
/// the mean token cross-entropy of the codebook head; distillation targets
/// use the mean L2 distance between the teacher head and the features.
pub fn psim_loss(
    tape: &mut Tape<f64>,
    bound: &BoundParams,
    logits: Var,
    label: usize,
    recon_rows: Var,
    targets: &TokenTargets,
    lambda: f64,
) -> Result<LossTerms> {
    if !(lambda >= 0.0) {
        return Err(Error::contract(format!("reconstruction weight λ = {lambda} must be non-negative")));
    }
    if targets.is_empty() {
        return Err(Error::contract("reconstruction targets are empty"));
    }
    if tape.value(recon_rows).rows() != targets.len() {
        return Err(Error::Shape {
            op: "psim_loss",
            lhs: tape.value(recon_rows).shape().to_vec(),
            rhs: vec![targets.len()],
        });
    }
    let cls = tape.cross_entropy(logits, vec![label])?;
    let rec = match &targets.values {
        TargetValues::Codes(codes) => {
            let h = tape.matmul(recon_rows, bound.var("recon.codebook.weight")?)?;
            let h = tape.add(h, bound.var("recon.codebook.bias")?)?;
            tape.cross_entropy(h, codes.clone())?
        }
        TargetValues::Features(feats) => {
            let h = tape.matmul(recon_rows, bound.var("recon.teacher.weight")?)?;
            let h = tape.add(h, bound.var("recon.teacher.bias")?)?;
            let z = tape.leaf(feats.clone(), false);
            let d = tape.l2_distance(h, z)?;
            tape.mean(d)?
        }
    };
    let weighted = tape.scale(rec, lambda)?;
    let total = tape.add(cls, weighted)?;
    Ok(LossTerms { total, cls, rec })
}

/// One epoch's mean losses, emitted as a JSON line by the CLI.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub phase: String,
    pub stage: usize,
    pub epoch: usize,
    pub mean_loss: f64,
    pub mean_cls_loss: f64,
    pub mean_rec_loss: f64,
}

struct Example {
    image: AblatedImage,
    tokens: Vec<usize>,
    label: usize,
    targets: Option<TokenTargets>,
}

#[derive(Default, Clone, Copy)]
struct LossSums {
    total: f64,
    cls: f64,
    rec: f64,
}

type GradMap = IndexMap<String, Tensor<f64>>;

fn chunk_grads(
    params: &ModelParams<f64>,
    chunk: &[Example],
    trainable: &(dyn Fn(&str) -> bool + Sync),
    lambda: f64,
    batch_len: usize,
) -> Result<(GradMap, LossSums)> {
    let cfg = &params.config;
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, trainable);
    let segments: Vec<Segment<'_>> = chunk
        .iter()
        .map(|ex| Segment { image: &ex.image, tokens: ex.tokens.clone(), key_mask: None })
        .collect();
    let fwd = forward_segments(&mut tape, &bound, cfg, &segments)?;
    let mut sums = LossSums::default();
    let mut acc: Option<Var> = None;
    for (s, ex) in chunk.iter().enumerate() {
        let logits = tape.embedding_lookup(fwd.logits, vec![s])?;
        let (total, cls, rec) = match &ex.targets {
            Some(t) => {
                let rows: Vec<usize> = t
                    .tokens
                    .iter()
                    .map(|tok| {
                        let pos = ex.tokens.binary_search(tok).map_err(|_| {
                            Error::contract(format!("reconstruction token {tok} is not part of the input sequence"))
                        })?;
                        Ok(fwd.offsets[s] + 1 + pos)
                    })
                    .collect::<Result<_>>()?;
                let recon_rows = tape.embedding_lookup(fwd.hidden, rows)?;
                let terms = psim_loss(&mut tape, &bound, logits, ex.label, recon_rows, t, lambda)?;
                (terms.total, terms.cls, Some(terms.rec))
            }
            None => {
                let cls = tape.cross_entropy(logits, vec![ex.label])?;
                (cls, cls, None)
            }
        };
        sums.total += tape.value(total).item();
        sums.cls += tape.value(cls).item();
        sums.rec += rec.map_or(0.0, |r| tape.value(r).item());
        acc = Some(match acc {
            Some(a) => tape.add(a, total)?,
            None => total,
        });
    }
    let loss = tape.scale(acc.expect("chunk is non-empty"), 1.0 / batch_len as f64)?;
    let mut grads = tape.backward(loss)?;
    let mut out = IndexMap::new();
    for (name, &var) in &bound.vars {
        if trainable(name) {
            let g = grads.take(var).unwrap_or_else(|| Tensor::zeros(tape.value(var).shape()));
            out.insert(name.clone(), g);
        }
    }
    Ok((out, sums))
}

/// Gradients of the mean batch loss; chunks may run in parallel but are
/// summed in a fixed order.
fn batch_grads(
    params: &ModelParams<f64>,
    batch: &[Example],
    trainable: &(dyn Fn(&str) -> bool + Sync),
    lambda: f64,
) -> Result<(GradMap, LossSums)> {
    let parts: Vec<(GradMap, LossSums)> = batch
        .par_chunks(CHUNK)
        .map(|c| chunk_grads(params, c, trainable, lambda, batch.len()))
        .collect::<Result<_>>()?;
    let mut iter = parts.into_iter();
    let (mut grads, mut sums) = iter.next().expect("batch is non-empty");
    for (g, s) in iter {
        for (name, t) in grads.iter_mut() {
            for (a, b) in t.data_mut().iter_mut().zip(g[name].data()) {
                *a += *b;
            }
        }
        sums.total += s.total;
        sums.cls += s.cls;
        sums.rec += s.rec;
    }
    Ok((grads, sums))
}

/// What a phase trains on and how each sample is ablated.
enum PhaseKind<'a> {
    Stage { stage: &'a StageConfig, targets: Option<&'a TargetStore>, scatter: bool },
    Finetune { band_width: usize },
    Clean,
}

struct Phase<'a> {
    name: &'static str,
    index: usize,
    epochs: usize,
    lambda: f64,
    kind: PhaseKind<'a>,
    stream: u64,
}

fn make_example(
    params: &ModelParams<f64>,
    kind: &PhaseKind<'_>,
    wrap: bool,
    data: &[LabeledImage],
    i: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Example> {
    let cfg = &params.config;
    let w = cfg.image_side;
    let item = &data[i];
    let all_tokens: Vec<usize> = (0..cfg.num_tokens()).collect();
    match kind {
        PhaseKind::Stage { stage, targets, scatter } => {
            let band = BandSpec::new(rng.gen_range(0..w), stage.keep_width(w)).with_wrap(wrap);
            let image = if *scatter {
                let n = cfg.num_tokens();
                let keep = ceil_count(stage.keep_ratio * n as f64).clamp(1, n);
                let mut order: Vec<usize> = (0..n).collect();
                order.shuffle(rng);
                let mut mask = vec![false; n];
                for &t in &order[..keep] {
                    mask[t] = true;
                }
                ablate_patches(&item.image, cfg.patch_size, &mask)?
            } else {
                ablate_band(&item.image, &band)?
            };
            let targets = match targets {
                Some(store) => {
                    let mask = stage_masks(stage.reconstruct_ratio, &band, w, cfg.patch_size)?;
                    Some(store.select(i, &mask.indices()))
                }
                None => None,
            };
            Ok(Example { image, tokens: all_tokens, label: item.label, targets })
        }
        PhaseKind::Finetune { band_width } => {
            let band = BandSpec::new(rng.gen_range(0..w), *band_width).with_wrap(wrap);
            Ok(Example {
                image: ablate_band(&item.image, &band)?,
                tokens: window_tokens(cfg, &band),
                label: item.label,
                targets: None,
            })
        }
        PhaseKind::Clean => Ok(Example {
            image: AblatedImage::full(&item.image),
            tokens: all_tokens,
            label: item.label,
            targets: None,
        }),
    }
}

fn run_phase(
    params: &mut ModelParams<f64>,
    phase: Phase<'_>,
    data: &[LabeledImage],
    plan: &TrainPlan,
    trainable: &(dyn Fn(&str) -> bool + Sync),
    metrics: &mut Vec<EpochMetrics>,
) -> Result<()> {
    if phase.epochs == 0 || data.is_empty() {
        return Ok(());
    }
    let opt = &plan.optim;
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    rng.set_stream(phase.stream);
    let mut adamw = AdamW::new(
        AdamWConfig { weight_decay: opt.weight_decay, ..AdamWConfig::default() },
        params.tensors.iter().filter(|(n, _)| trainable(n)).map(|(n, t)| (n.as_str(), t.numel())),
    );
    let steps_per_epoch = data.len().div_ceil(opt.batch_size);
    let warmup = opt.warmup_epochs * steps_per_epoch;
    let total = phase.epochs * steps_per_epoch;
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 1..=phase.epochs {
        order.shuffle(&mut rng);
        let mut sums = LossSums::default();
        for (bi, idx) in order.chunks(opt.batch_size).enumerate() {
            let at = |e: Error| e.within(format!("{} {} epoch {epoch} batch {bi}", phase.name, phase.index));
            let batch: Vec<Example> = idx
                .iter()
                .map(|&i| make_example(params, &phase.kind, plan.band_wrap, data, i, &mut rng))
                .collect::<Result<_>>()?;
            let (grads, s) = batch_grads(params, &batch, trainable, phase.lambda).map_err(at)?;
            sums.total += s.total;
            sums.cls += s.cls;
            sums.rec += s.rec;
            let lr = opt.lr_at(adamw.steps_taken() as usize, warmup, total);
            adamw.step(&mut params.tensors, &grads, lr).map_err(at)?;
            if let Some((name, _)) = params.tensors.iter().find(|(_, t)| !t.is_finite()) {
                return Err(at(Error::Numeric { op: "adamw_step", context: name.clone() }));
            }
        }
        let n = data.len() as f64;
        metrics.push(EpochMetrics {
            phase: phase.name.to_string(),
            stage: phase.index,
            epoch,
            mean_loss: sums.total / n,
            mean_cls_loss: sums.cls / n,
            mean_rec_loss: sums.rec / n,
        });
    }
    Ok(())
}

/// Trains one curriculum stage with global attention on ablated images.
/// Without `targets` (or with `λ = 0` and no targets) the stage is
/// classification only.
pub fn run_stage(
    params: &mut ModelParams<f64>,
    stage: &StageConfig,
    data: &[LabeledImage],
    targets: Option<&TargetStore>,
    plan: &TrainPlan,
    metrics: &mut Vec<EpochMetrics>,
) -> Result<()> {
    stage.validate()?;
    if let Some(store) = targets {
        if store.supervision() != stage.supervision {
            return Err(Error::contract(format!(
                "stage {} expects {:?} targets, got {:?}",
                stage.index,
                stage.supervision,
                store.supervision()
            )));
        }
        if store.len() != data.len() {
            return Err(Error::contract("target store does not match the dataset"));
        }
        let head = match stage.supervision {
            Supervision::Vae => "recon.codebook.weight",
            Supervision::Distill => "recon.teacher.weight",
        };
        params.get(head)?;
    }
    let global = params.with_attention_mode(AttentionMode::Global);
    *params = global;
    let phase = Phase {
        name: "stage",
        index: stage.index,
        epochs: stage.epochs,
        lambda: stage.lambda,
        kind: PhaseKind::Stage { stage, targets, scatter: plan.stage1_scatter && stage.index == 1 },
        stream: stage.index as u64,
    };
    run_phase(params, phase, data, plan, &|_| true, metrics)
}

/// Classification-only training with random `b`-wide bands through the
/// isolated band-unit encoder. Reconstruction heads stay frozen.
pub fn finetune_band(
    params: &mut ModelParams<f64>,
    data: &[LabeledImage],
    plan: &TrainPlan,
    metrics: &mut Vec<EpochMetrics>,
) -> Result<()> {
    let b = plan.finetune.band_width;
    if b == 0 || b > params.config.image_side {
        return Err(Error::contract(format!("fine-tune band width {b} outside 1..={}", params.config.image_side)));
    }
    *params = params.with_attention_mode(AttentionMode::BandUnit);
    let phase = Phase {
        name: "finetune",
        index: 0,
        epochs: plan.finetune.epochs,
        lambda: 0.0,
        kind: PhaseKind::Finetune { band_width: b },
        stream: 100,
    };
    run_phase(params, phase, data, plan, &|n| !is_reconstruction_param(n), metrics)
}

/// Global-attention classifier on clean images, used as a teacher.
pub fn train_clean(
    params: &mut ModelParams<f64>,
    data: &[LabeledImage],
    epochs: usize,
    plan: &TrainPlan,
    metrics: &mut Vec<EpochMetrics>,
) -> Result<()> {
    *params = params.with_attention_mode(AttentionMode::Global);
    let phase = Phase { name: "teacher", index: 0, epochs, lambda: 0.0, kind: PhaseKind::Clean, stream: 200 };
    run_phase(params, phase, data, plan, &|n| !is_reconstruction_param(n), metrics)
}

/// All stages of `plan` followed by the fine-tune phase; `on_phase` sees
/// the model after each stage (1-based index) and after fine-tuning
/// (index 0).
pub fn run_plan(
    params: &mut ModelParams<f64>,
    data: &[LabeledImage],
    targets: Option<&TargetStore>,
    plan: &TrainPlan,
    metrics: &mut Vec<EpochMetrics>,
    mut on_phase: impl FnMut(usize, &ModelParams<f64>) -> Result<()>,
) -> Result<()> {
    plan.validate()?;
    for stage in &plan.stages {
        let t = if stage.lambda > 0.0 { targets } else { None };
        run_stage(params, stage, data, t, plan, metrics)?;
        on_phase(stage.index, params)?;
    }
    finetune_band(params, data, plan, metrics)?;
    on_phase(0, params)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_plan_shape() {
        let plan = build_default_plan(4, 32, 3).unwrap();
        assert_eq!(plan.stages.len(), 3);
        let widths: Vec<usize> = plan.stages.iter().map(|s| s.keep_width(32)).collect();
        assert_eq!(widths, vec![20, 10, 4]);
        assert!(plan.stages.iter().all(|s| s.lambda == 1000.0));
        assert!(plan.validate().is_ok());
    }

    #[test]
    fn wide_band_is_rejected_with_suggestion() {
        let err = build_default_plan(10, 32, 3).unwrap_err().to_string();
        assert!(err.contains("try b = 9"), "{err}");
    }

    #[test]
    fn baseline_matches_epoch_budget() {
        let plan = build_default_plan(4, 16, 3).unwrap();
        let base = plan.classification_baseline(16);
        assert_eq!(base.stages.len(), 1);
        assert_eq!(base.stages[0].epochs, 30);
        assert_eq!(base.stages[0].keep_width(16), 4);
        assert_eq!(base.finetune, plan.finetune);
    }
}
