use serde::{Deserialize, Serialize};

use super::{AttentionMode, ModelConfig};

/// Analytic floating-point operation counts of one encoder pass
/// (multiply-adds count as two).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopCount {
    pub sequence_len: usize,
    /// Score and weighted-sum products, the `N²d` term.
    pub attention: u64,
    /// Projections and MLP, the `Nd²` term.
    pub mlp: u64,
}

impl FlopCount {
    pub fn total(&self) -> u64 {
        self.attention + self.mlp
    }
}

/// Cost of classifying one band position. In band-unit mode the sequence
/// is the class token plus the window tokens.
pub fn count_flops(cfg: &ModelConfig, mode: AttentionMode, band_width: usize) -> FlopCount {
    let n = match mode {
        AttentionMode::Global => cfg.num_tokens() + 1,
        AttentionMode::BandUnit => cfg.window_columns(band_width) * cfg.grid() + 1,
    } as u64;
    let d = cfg.embed_dim as u64;
    let h = cfg.hidden_dim() as u64;
    let layers = cfg.num_layers as u64;
    FlopCount {
        sequence_len: n as usize,
        attention: layers * 2 * (2 * n * n * d),
        mlp: layers * 2 * (n * (4 * d * d + 2 * d * h)),
    }
}

/// Cost of certifying one image: every one of the `w` band positions.
pub fn certification_flops(cfg: &ModelConfig, mode: AttentionMode, band_width: usize) -> FlopCount {
    let per = count_flops(cfg, mode, band_width);
    let w = cfg.image_side as u64;
    FlopCount {
        sequence_len: per.sequence_len,
        attention: per.attention * w,
        mlp: per.mlp * w,
    }
}
