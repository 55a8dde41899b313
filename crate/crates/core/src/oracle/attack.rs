use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::certify::{vote_from_logits, CertifyConfig};
use crate::data::ImageTensor;
use crate::error::Result;
use crate::smoothing::{ablate_band, AblatedImage, BandSpec};
use crate::tensor::{Scalar, Tape};
use crate::vit::{certify_logits, forward_segments, window_tokens, Engine, ModelParams, Segment};

use super::geometry::intersecting_positions;

/// Random contents evaluated per batched forward.
const TRIALS_PER_FORWARD: usize = 25;

#[derive(Clone, Debug, PartialEq)]
pub struct AttackReport {
    pub attack_found: bool,
    pub clean_prediction: usize,
    pub locations: usize,
    pub evaluations: usize,
}

/// Logits of `(image, band)` pairs, one row per pair, via isolated
/// segments in a single forward.
fn pair_logits<T: Scalar>(
    params: &ModelParams<T>,
    pairs: &[(ImageTensor, BandSpec)],
    engine: Engine,
) -> Result<Vec<Vec<T>>> {
    let cfg = &params.config;
    let ablated: Vec<AblatedImage> = pairs.iter().map(|(img, b)| ablate_band(img, b)).collect::<Result<_>>()?;
    let segments: Vec<Segment<'_>> = pairs
        .iter()
        .zip(&ablated)
        .map(|((_, band), image)| {
            let tokens = match engine {
                Engine::Global => (0..cfg.num_tokens()).collect(),
                Engine::BandUnit | Engine::MaskedGlobal => window_tokens(cfg, band),
            };
            Segment { image, tokens, key_mask: None }
        })
        .collect();
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, |_| false);
    let fwd = forward_segments(&mut tape, &bound, cfg, &segments)?;
    let logits = tape.value(fwd.logits);
    Ok((0..pairs.len()).map(|i| logits.row(i).to_vec()).collect())
}

/// Pastes `m × m` (original pixels) patches of uniformly random RGB
/// content at every patch-grid location and reports whether any changes the
/// voted prediction. Only band positions overlapping the patch are
/// re-evaluated; the rest see identical ablated inputs.
pub fn empirical_patch_attack<T: Scalar>(
    params: &ModelParams<T>,
    image: &ImageTensor,
    cfg: &CertifyConfig,
    m: usize,
    trials: usize,
    seed: u64,
) -> Result<AttackReport> {
    let b = cfg.model_band_width();
    let clean_logits = certify_logits(image, params, b, cfg.wrap, cfg.engine)?;
    let clean = vote_from_logits(&clean_logits, cfg)?;
    let clean_prediction = clean.predicted();
    let mut report = AttackReport { attack_found: false, clean_prediction, locations: 0, evaluations: 0 };
    let side = image.width();
    let mp = m * cfg.scale;
    if m == 0 || mp > side || trials == 0 {
        return Ok(report);
    }
    let stride = params.config.patch_size;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for y0 in (0..=side - mp).step_by(stride) {
        for x0 in (0..=side - mp).step_by(stride) {
            report.locations += 1;
            let positions = intersecting_positions(side, b, cfg.wrap, x0, mp);
            let mut done = 0;
            while done < trials {
                let n = TRIALS_PER_FORWARD.min(trials - done);
                let mut pairs = Vec::with_capacity(n * positions.len());
                for _ in 0..n {
                    let mut patched = image.clone();
                    for c in 0..patched.channels() {
                        for y in y0..y0 + mp {
                            for x in x0..x0 + mp {
                                patched.set(c, y, x, rng.gen_range(0.0..=1.0));
                            }
                        }
                    }
                    for &p in &positions {
                        pairs.push((patched.clone(), BandSpec::new(p, b).with_wrap(cfg.wrap)));
                    }
                }
                let rows = pair_logits(params, &pairs, cfg.engine)?;
                for trial in rows.chunks(positions.len().max(1)) {
                    let mut logits = clean_logits.clone();
                    for (&p, row) in positions.iter().zip(trial) {
                        logits[p] = row.clone();
                    }
                    report.evaluations += 1;
                    if vote_from_logits(&logits, cfg)?.predicted() != clean_prediction {
                        report.attack_found = true;
                        return Ok(report);
                    }
                }
                done += n;
            }
        }
    }
    Ok(report)
}
