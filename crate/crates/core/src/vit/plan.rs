use serde::{Deserialize, Serialize};

use crate::data::ImageTensor;
use crate::error::{Error, Result};
use crate::smoothing::{ablate_band, AblatedImage, BandSpec};
use crate::tensor::{Scalar, Tape, Tensor};

use super::forward::{forward_band_unit, forward_global, forward_masked_global, forward_segments, window_tokens, Segment};
use super::{AttentionMode, ModelConfig, ModelParams};

/// Packing of all `w` band positions into batched band-unit forwards.
///
/// Forward `r` evaluates positions `r, r + b, r + 2b, …`: their retained
/// pixel bands are pairwise disjoint, so up to `⌈w/b⌉` adjacent windows run
/// side by side. Each window carries its own copy of its tokens, so windows
/// that share a boundary token column stay isolated.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowPlan {
    pub image_width: usize,
    pub band_width: usize,
    pub wrap: bool,
    /// `⌈b/p⌉ + 1`, capped at the token grid width.
    pub window_columns: usize,
    /// Band positions evaluated by each forward.
    pub forwards: Vec<Vec<usize>>,
}

impl WindowPlan {
    pub fn num_forwards(&self) -> usize {
        self.forwards.len()
    }

    pub fn max_windows_per_forward(&self) -> usize {
        self.forwards.iter().map(Vec::len).max().unwrap_or(0)
    }
}

pub fn plan_windows(cfg: &ModelConfig, band_width: usize, wrap: bool) -> Result<WindowPlan> {
    let w = cfg.image_side;
    if band_width == 0 || band_width > w {
        return Err(Error::contract(format!("band width {band_width} must lie in 1..={w}")));
    }
    let forwards = (0..band_width.min(w))
        .map(|r| (r..w).step_by(band_width).collect())
        .collect();
    Ok(WindowPlan {
        image_width: w,
        band_width,
        wrap,
        window_columns: cfg.window_columns(band_width),
        forwards,
    })
}

/// Class logits for every band position (index = position), evaluating the
/// plan's batched forwards. Bit-identical to per-position
/// [`forward_band_unit`] calls.
pub fn batched_certify_forward<T: Scalar>(
    img: &ImageTensor,
    params: &ModelParams<T>,
    plan: &WindowPlan,
) -> Result<Vec<Vec<T>>> {
    let cfg = &params.config;
    if cfg.attention_mode != AttentionMode::BandUnit {
        return Err(Error::contract("batched certification needs a band_unit model"));
    }
    if plan.image_width != cfg.image_side || img.width() != cfg.image_side {
        return Err(Error::contract("window plan does not match the model geometry"));
    }
    let mut out: Vec<Option<Vec<T>>> = vec![None; plan.image_width];
    for positions in &plan.forwards {
        let bands: Vec<BandSpec> = positions
            .iter()
            .map(|&p| BandSpec::new(p, plan.band_width).with_wrap(plan.wrap))
            .collect();
        let ablated: Vec<AblatedImage> = bands.iter().map(|b| ablate_band(img, b)).collect::<Result<_>>()?;
        let segments: Vec<Segment<'_>> = bands
            .iter()
            .zip(&ablated)
            .map(|(band, image)| Segment { image, tokens: window_tokens(cfg, band), key_mask: None })
            .collect();
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, |_| false);
        let fwd = forward_segments(&mut tape, &bound, cfg, &segments)?;
        let logits = tape.value(fwd.logits);
        for (i, &p) in positions.iter().enumerate() {
            out[p] = Some(logits.row(i).to_vec());
        }
    }
    out.into_iter()
        .enumerate()
        .map(|(p, l)| l.ok_or_else(|| Error::contract(format!("plan does not cover position {p}"))))
        .collect()
}

/// How per-position logits are computed during certification.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    /// Batched isolated windows (the fast path).
    BandUnit,
    /// One full-sequence forward per position with attention restricted to
    /// the window; numerically the same classifier as `BandUnit`.
    MaskedGlobal,
    /// One unrestricted global forward per ablated image.
    Global,
}

impl Engine {
    pub fn for_mode(mode: AttentionMode) -> Self {
        match mode {
            AttentionMode::BandUnit => Engine::BandUnit,
            AttentionMode::Global => Engine::Global,
        }
    }
}

/// Logits for every band position using one forward per position.
pub fn per_position_forward<T: Scalar>(
    img: &ImageTensor,
    params: &ModelParams<T>,
    band_width: usize,
    wrap: bool,
    engine: Engine,
) -> Result<Vec<Vec<T>>> {
    (0..img.width())
        .map(|p| {
            let band = BandSpec::new(p, band_width).with_wrap(wrap);
            let logits: Tensor<T> = match engine {
                Engine::BandUnit => forward_band_unit(img, params, &band)?,
                Engine::MaskedGlobal => forward_masked_global(img, params, &band)?,
                Engine::Global => forward_global(&ablate_band(img, &band)?, params)?.logits,
            };
            Ok(logits.into_data())
        })
        .collect()
}

/// Dispatches to the batched plan or per-position forwards.
pub fn certify_logits<T: Scalar>(
    img: &ImageTensor,
    params: &ModelParams<T>,
    band_width: usize,
    wrap: bool,
    engine: Engine,
) -> Result<Vec<Vec<T>>> {
    match engine {
        Engine::BandUnit => {
            let params_bu;
            let params = if params.config.attention_mode == AttentionMode::BandUnit {
                params
            } else {
                params_bu = params.with_attention_mode(AttentionMode::BandUnit);
                &params_bu
            };
            let plan = plan_windows(&params.config, band_width, wrap)?;
            batched_certify_forward(img, params, &plan)
        }
        other => per_position_forward(img, params, band_width, wrap, other),
    }
}
