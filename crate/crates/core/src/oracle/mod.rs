//! Independent brute-force validators for every guarantee the toolkit
//! claims: certificate geometry, vote-flip soundness, random patch attacks,
//! attention restriction and gradients.

mod attack;
mod flip;
mod geometry;
mod gradcheck;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::certify::{Certifier, VoteTable};
use crate::data::ImageTensor;
use crate::error::Result;
use crate::smoothing::BandSpec;
use crate::tensor::Scalar;
use crate::vit::{forward_band_unit, forward_masked_global, ModelParams};

pub use attack::{empirical_patch_attack, AttackReport};
pub use flip::{worst_case_flip, worst_case_flip_exhaustive, VoteSets};
pub use geometry::{intersecting_positions, max_band_patch_intersections};
pub use gradcheck::{check_gradients, model_gradient_check, primitive_cases, probe_primitive, GradCheck, DEFAULT_FLOOR};

/// `max |forward_band_unit − masked forward_global|` over class logits.
pub fn attention_equivalence<T: Scalar>(params: &ModelParams<T>, image: &ImageTensor, band: &BandSpec) -> Result<f64> {
    let a = forward_band_unit(image, params, band)?;
    let b = forward_masked_global(image, params, band)?;
    Ok(a.max_abs_diff(&b))
}

/// One line of an oracle report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub check: String,
    pub passed: bool,
    pub detail: String,
}

/// Every `(w, m, b)` with `w ≤ max_w` and `m + b − 1 ≤ w`; returns the
/// first triple where brute force disagrees with `m + b − 1`.
pub fn geometry_check(max_w: usize) -> Option<(usize, usize, usize, usize)> {
    for w in 1..=max_w {
        for m in 1..=w {
            for b in 1..=w + 1 - m {
                let got = max_band_patch_intersections(w, m, b);
                if got != m + b - 1 {
                    return Some((w, m, b, got));
                }
            }
        }
    }
    None
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SoundnessOutcome {
    pub tables: usize,
    pub verdicts: usize,
    pub certified: usize,
    /// Certified verdicts an adversary can still overturn.
    pub violations: usize,
    /// Margin-exactly-2Δ tables the adversary fails to overturn.
    pub sharpness_failures: usize,
    /// Tables where the exhaustive and closed-form adversaries disagree.
    pub adversary_mismatches: usize,
}

impl SoundnessOutcome {
    pub fn passed(&self) -> bool {
        self.violations == 0 && self.sharpness_failures == 0 && self.adversary_mismatches == 0
    }
}

/// Checks `certifier` against the adversary on every table and every
/// `Δ ≤ w/2`, realised as each `(m, b)` split with `m + b − 1 = Δ`. The
/// adversary's budget comes from brute-force geometry, not the certifier's
/// rule. Tables with `w ≤ exhaustive_max_w` also cross-check the closed
/// form against subset enumeration.
pub fn soundness_check(certifier: &Certifier, tables: &[VoteSets], exhaustive_max_w: usize) -> SoundnessOutcome {
    let mut out = SoundnessOutcome::default();
    let mut geometry: HashMap<(usize, usize, usize), usize> = HashMap::new();
    for sets in tables {
        let table = sets.table();
        let w = table.positions;
        out.tables += 1;
        for delta in 1..=w / 2 {
            if w <= exhaustive_max_w && worst_case_flip(&table, delta) != worst_case_flip_exhaustive(sets, delta) {
                out.adversary_mismatches += 1;
            }
            for m in 1..=delta {
                let b = delta + 1 - m;
                let budget = *geometry.entry((w, m, b)).or_insert_with(|| max_band_patch_intersections(w, m, b));
                out.verdicts += 1;
                if certifier.certify(&table, m, b).certified {
                    out.certified += 1;
                    if worst_case_flip(&table, budget) {
                        out.violations += 1;
                    }
                }
            }
        }
        for delta in 1..=w / 2 {
            let lead = table.counts[table.predicted()];
            if lead < 2 * delta {
                continue;
            }
            let mut counts = vec![0; table.num_classes()];
            counts[0] = lead;
            counts[1] = lead - 2 * delta;
            let edge = VoteTable::from_counts(counts, w);
            let m = delta.div_ceil(2);
            let b = delta + 1 - m;
            if certifier.certify(&edge, m, b).certified {
                out.violations += 1;
            }
            if !worst_case_flip(&edge, delta) {
                out.sharpness_failures += 1;
            }
        }
    }
    out
}
