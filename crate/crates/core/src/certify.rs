//! Threshold voting over every band position and the patch certificate
//! `n_c > max_{c'≠c} n_{c'} + 2Δ` with `Δ = m + b − 1`.

use std::time::Instant;

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ImageTensor, LabeledImage};
use crate::error::{Error, Result};
use crate::tensor::Scalar;
use crate::vit::{certify_logits, Engine, ModelParams};

pub const DEFAULT_THETA: f64 = 0.2;

/// What the vote threshold is compared against.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdOn {
    #[default]
    Probabilities,
    Logits,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertifyConfig {
    pub theta: f64,
    /// Band width in original-image pixels.
    pub band_width: usize,
    /// Patch sides to certify, in original-image pixels.
    pub patch_sizes: Vec<usize>,
    /// Model pixels per original pixel.
    pub scale: usize,
    pub wrap: bool,
    pub threshold_on: ThresholdOn,
    pub engine: Engine,
}

impl CertifyConfig {
    pub fn new(band_width: usize, patch_sizes: Vec<usize>) -> Self {
        Self {
            theta: DEFAULT_THETA,
            band_width,
            patch_sizes,
            scale: 1,
            wrap: true,
            threshold_on: ThresholdOn::Probabilities,
            engine: Engine::BandUnit,
        }
    }

    pub fn model_band_width(&self) -> usize {
        self.band_width * self.scale
    }

    pub fn validate(&self) -> Result<()> {
        if self.threshold_on == ThresholdOn::Probabilities && !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(Error::contract(format!("theta {} outside (0, 1)", self.theta)));
        }
        if !self.theta.is_finite() {
            return Err(Error::contract("theta must be finite"));
        }
        if self.band_width == 0 || self.scale == 0 {
            return Err(Error::contract("band width and scale must be positive"));
        }
        if self.patch_sizes.contains(&0) {
            return Err(Error::contract("patch sizes must be at least 1"));
        }
        Ok(())
    }
}

/// Per-class vote counts over all band positions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoteTable {
    pub counts: Vec<usize>,
    pub positions: usize,
    /// Per-position scores the votes were computed from.
    pub scores: Vec<Vec<f64>>,
}

impl VoteTable {
    /// Counts only, for synthetic tables.
    pub fn from_counts(counts: Vec<usize>, positions: usize) -> Self {
        Self { counts, positions, scores: Vec::new() }
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    /// Argmax count, ties to the lowest class index.
    pub fn predicted(&self) -> usize {
        let mut best = 0;
        for (c, &n) in self.counts.iter().enumerate() {
            if n > self.counts[best] {
                best = c;
            }
        }
        best
    }

    /// Best class other than `c` with its count (lowest index on ties).
    pub fn runner_up(&self, c: usize) -> Option<(usize, usize)> {
        let mut best: Option<(usize, usize)> = None;
        for (k, &n) in self.counts.iter().enumerate() {
            if k != c && best.is_none_or(|(_, b)| n > b) {
                best = Some((k, n));
            }
        }
        best
    }

    /// `n_c − max_{c'≠c} n_{c'}` for the predicted class.
    pub fn margin(&self) -> i64 {
        let c = self.predicted();
        let other = self.runner_up(c).map_or(0, |(_, n)| n);
        self.counts[c] as i64 - other as i64
    }

    /// True when no position voted for any class.
    pub fn abstained(&self) -> bool {
        self.counts.iter().all(|&n| n == 0)
    }
}

fn is_probability_vector(p: &[f64]) -> bool {
    p.iter().all(|&v| v.is_finite() && (0.0..=1.0).contains(&v)) && (p.iter().sum::<f64>() - 1.0).abs() <= 1e-6
}

/// `n_c = |{positions : prob_c > θ}|`. A position may vote for several
/// classes or none.
pub fn vote(probs: &[Vec<f64>], theta: f64) -> Result<VoteTable> {
    let classes = probs.first().map_or(0, Vec::len);
    for (p, v) in probs.iter().enumerate() {
        if v.len() != classes || !is_probability_vector(v) {
            return Err(Error::contract(format!("position {p} is not a probability vector over {classes} classes")));
        }
    }
    Ok(count_votes(probs, theta, classes))
}

/// Literal-logit variant: a position votes for classes whose raw logit
/// exceeds `θ`.
pub fn vote_logits(logits: &[Vec<f64>], theta: f64) -> Result<VoteTable> {
    let classes = logits.first().map_or(0, Vec::len);
    if logits.iter().any(|v| v.len() != classes || v.iter().any(|x| !x.is_finite())) {
        return Err(Error::contract("malformed logit vectors"));
    }
    Ok(count_votes(logits, theta, classes))
}

fn count_votes(scores: &[Vec<f64>], theta: f64, classes: usize) -> VoteTable {
    let mut counts = vec![0; classes];
    for v in scores {
        for (c, &s) in v.iter().enumerate() {
            if s > theta {
                counts[c] += 1;
            }
        }
    }
    VoteTable { counts, positions: scores.len(), scores: scores.to_vec() }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Votes from per-position logits under `cfg`'s threshold rule.
pub fn vote_from_logits<T: Scalar>(logits: &[Vec<T>], cfg: &CertifyConfig) -> Result<VoteTable> {
    let as_f64: Vec<Vec<f64>> = logits.iter().map(|l| l.iter().map(|v| v.as_f64()).collect()).collect();
    match cfg.threshold_on {
        ThresholdOn::Probabilities => {
            let probs: Vec<Vec<f64>> = as_f64.iter().map(|l| softmax(l)).collect();
            vote(&probs, cfg.theta)
        }
        ThresholdOn::Logits => vote_logits(&as_f64, cfg.theta),
    }
}

/// Intersections of an `m`-wide patch with `b`-wide bands (model pixels).
pub fn standard_delta(m: usize, b: usize) -> usize {
    m + b - 1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub predicted: usize,
    pub runner_up: Option<usize>,
    pub runner_up_count: usize,
    pub delta: usize,
    pub certified: bool,
    /// `Δ` exceeded the number of positions and was clamped.
    pub clamped: bool,
}

/// `Δ`-margin certificate with an injectable `Δ` rule (model pixels).
#[derive(Clone, Copy, Debug)]
pub struct Certifier {
    pub delta_rule: fn(usize, usize) -> usize,
}

impl Default for Certifier {
    fn default() -> Self {
        Self { delta_rule: standard_delta }
    }
}

impl Certifier {
    /// Certifies against any adversary controlling `delta` positions.
    pub fn certify_delta(&self, votes: &VoteTable, delta: usize) -> Certificate {
        let predicted = votes.predicted();
        let (runner_up, runner_up_count) = match votes.runner_up(predicted) {
            Some((c, n)) => (Some(c), n),
            None => (None, 0),
        };
        let clamped = delta > votes.positions;
        let delta = delta.min(votes.positions);
        let certified = !clamped && votes.counts[predicted] > runner_up_count + 2 * delta;
        Certificate { predicted, runner_up, runner_up_count, delta, certified, clamped }
    }

    /// `m` and `b` in model pixels.
    pub fn certify(&self, votes: &VoteTable, m: usize, b: usize) -> Certificate {
        self.certify_delta(votes, (self.delta_rule)(m, b))
    }

    /// Largest original-pixel patch side certified at upsampling `scale`
    /// (0 if none).
    pub fn max_certified_m(&self, votes: &VoteTable, b_model: usize, scale: usize) -> usize {
        let mut best = 0;
        let mut m = 1;
        while m * scale <= votes.positions && self.certify(votes, m * scale, b_model).certified {
            best = m;
            m += 1;
        }
        best
    }
}

/// Certificate with the standard `Δ = m + b − 1`.
pub fn certify(votes: &VoteTable, m: usize, b: usize) -> Certificate {
    Certifier::default().certify(votes, m, b)
}

pub fn patch_key(m: usize) -> String {
    format!("{m}x{m}")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: usize,
    pub label: usize,
    pub predicted: usize,
    pub votes: Vec<usize>,
    pub margin: i64,
    pub certified: IndexMap<String, bool>,
    pub max_certified_m: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub num_images: usize,
    pub clean_accuracy: f64,
    pub certified_accuracy: IndexMap<String, f64>,
    pub abstain_rate: f64,
    pub mean_margin: f64,
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub summary: EvalSummary,
    pub records: Vec<ImageRecord>,
    /// Per-image logits-and-voting wall time, seconds.
    pub seconds_per_image: f64,
}

/// Votes for one image across all `w` band positions.
pub fn image_votes<T: Scalar>(img: &ImageTensor, params: &ModelParams<T>, cfg: &CertifyConfig) -> Result<VoteTable> {
    let logits = certify_logits(img, params, cfg.model_band_width(), cfg.wrap, cfg.engine)?;
    vote_from_logits(&logits, cfg)
}

/// Record for one image given its votes. Prediction uses the lowest index
/// on ties; certification demands the strict margin.
pub fn image_record(id: usize, label: usize, votes: &VoteTable, cfg: &CertifyConfig, certifier: &Certifier) -> ImageRecord {
    let b = cfg.model_band_width();
    let predicted = votes.predicted();
    let certified = cfg
        .patch_sizes
        .iter()
        .map(|&m| {
            let ok = predicted == label && !votes.abstained() && certifier.certify(votes, m * cfg.scale, b).certified;
            (patch_key(m), ok)
        })
        .collect();
    ImageRecord {
        image_id: id,
        label,
        predicted,
        votes: votes.counts.clone(),
        margin: votes.margin(),
        certified,
        max_certified_m: certifier.max_certified_m(votes, b, cfg.scale),
    }
}

/// Clean and certified accuracy over `data`. Abstentions count as wrong.
pub fn evaluate<T: Scalar>(params: &ModelParams<T>, data: &[LabeledImage], cfg: &CertifyConfig) -> Result<Evaluation> {
    cfg.validate()?;
    let certifier = Certifier::default();
    let start = Instant::now();
    let tables: Vec<VoteTable> = data
        .par_iter()
        .map(|item| image_votes(&item.image, params, cfg))
        .collect::<Result<_>>()?;
    let elapsed = start.elapsed().as_secs_f64();
    let records: Vec<ImageRecord> = tables
        .iter()
        .zip(data)
        .enumerate()
        .map(|(i, (v, item))| image_record(i, item.label, v, cfg, &certifier))
        .collect();
    let n = records.len().max(1) as f64;
    let clean = records
        .iter()
        .zip(&tables)
        .filter(|(r, v)| !v.abstained() && r.predicted == r.label)
        .count();
    let certified_accuracy = cfg
        .patch_sizes
        .iter()
        .map(|&m| {
            let key = patch_key(m);
            let hits = records.iter().filter(|r| r.certified[&key]).count();
            (key, hits as f64 / n)
        })
        .collect();
    let summary = EvalSummary {
        num_images: records.len(),
        clean_accuracy: clean as f64 / n,
        certified_accuracy,
        abstain_rate: tables.iter().filter(|v| v.abstained()).count() as f64 / n,
        mean_margin: records.iter().map(|r| r.margin as f64).sum::<f64>() / n,
    };
    Ok(Evaluation { summary, records, seconds_per_image: elapsed / n })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_votes_at_one_position() {
        let t = vote(&[vec![0.7, 0.3]], 0.2).unwrap();
        assert_eq!(t.counts, vec![1, 1]);
    }

    #[test]
    fn malformed_probabilities_rejected() {
        assert!(vote(&[vec![0.7, 0.4]], 0.2).is_err());
        assert!(vote(&[vec![0.5, 0.5], vec![1.0]], 0.2).is_err());
    }

    #[test]
    fn hundred_to_twenty_is_certified() {
        let t = VoteTable::from_counts(vec![100, 20], 224);
        let c = certify(&t, 4, 4);
        assert_eq!(c.delta, 7);
        assert!(c.certified);
    }

    #[test]
    fn ties_are_never_certified() {
        let t = VoteTable::from_counts(vec![20, 20], 32);
        assert_eq!(t.predicted(), 0);
        for m in 1..8 {
            assert!(!certify(&t, m, 1).certified);
        }
    }

    #[test]
    fn imagenet_scale_delta() {
        assert_eq!(standard_delta(32, 37), 68);
    }

    #[test]
    fn oversized_delta_is_clamped() {
        let t = VoteTable::from_counts(vec![16, 0], 16);
        let c = certify(&t, 10, 10);
        assert!(c.clamped && !c.certified);
        assert_eq!(c.delta, 16);
    }

    #[test]
    fn max_certified_m_is_consistent() {
        let t = VoteTable::from_counts(vec![30, 2], 32);
        let best = Certifier::default().max_certified_m(&t, 4, 1);
        // 30 > 2 + 2(m + 3) ⟺ m < 11
        assert_eq!(best, 10);
        assert!(certify(&t, best, 4).certified);
        assert!(!certify(&t, best + 1, 4).certified);
    }
}
