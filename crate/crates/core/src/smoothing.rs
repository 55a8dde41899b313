//! Column-band ablation and the reconstruction-mask geometry used by
//! progressive training.
//!
//! Band positions are 0-indexed. By default bands wrap cyclically at the
//! right edge, so every one of the `w` positions retains exactly `b`
//! columns; `wrap = false` truncates instead.

use crate::data::ImageTensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BandSpec {
    pub position: usize,
    pub width: usize,
    pub wrap: bool,
}

impl BandSpec {
    pub fn new(position: usize, width: usize) -> Self {
        Self { position, width, wrap: true }
    }

    pub fn with_wrap(mut self, wrap: bool) -> Self {
        self.wrap = wrap;
        self
    }

    pub fn validate(&self, image_width: usize) -> Result<()> {
        if self.width == 0 || self.width > image_width {
            return Err(Error::contract(format!(
                "band width {} must lie in 1..={image_width}",
                self.width
            )));
        }
        if self.position >= image_width {
            return Err(Error::contract(format!(
                "band position {} outside image of width {image_width}",
                self.position
            )));
        }
        Ok(())
    }

    /// Retained pixel columns in band order.
    pub fn columns(&self, image_width: usize) -> impl Iterator<Item = usize> + '_ {
        let w = image_width;
        (0..self.width).filter_map(move |j| {
            let c = self.position + j;
            if self.wrap {
                Some(c % w)
            } else {
                (c < w).then_some(c)
            }
        })
    }

    pub fn column_mask(&self, image_width: usize) -> Vec<bool> {
        let mut mask = vec![false; image_width];
        for c in self.columns(image_width) {
            mask[c] = true;
        }
        mask
    }

    /// Token columns touched by the band, as a cyclic arc `(start, len)`.
    pub fn token_arc(&self, image_width: usize, patch_size: usize) -> (usize, usize) {
        let cols = image_width / patch_size;
        let start = self.position / patch_size;
        let mut touched = vec![false; cols];
        for c in self.columns(image_width) {
            touched[c / patch_size] = true;
        }
        let mut len = 0;
        while len < cols && touched[(start + len) % cols] {
            len += 1;
        }
        (start, len)
    }
}

/// An image with everything outside the retained region zeroed, plus the
/// per-pixel retention mask (1 = retained).
#[derive(Clone, Debug, PartialEq)]
pub struct AblatedImage {
    pub pixels: ImageTensor,
    pub mask: ImageTensor,
}

impl AblatedImage {
    /// Everything retained.
    pub fn full(img: &ImageTensor) -> Self {
        Self {
            pixels: img.clone(),
            mask: ImageTensor::filled(1, img.height(), img.width(), 1.0),
        }
    }

    fn from_pixel_mask(img: &ImageTensor, keep: impl Fn(usize, usize) -> bool) -> Self {
        let (h, w) = (img.height(), img.width());
        let mut pixels = img.clone();
        let mut mask = ImageTensor::filled(1, h, w, 0.0);
        for y in 0..h {
            for x in 0..w {
                if keep(y, x) {
                    mask.set(0, y, x, 1.0);
                } else {
                    for c in 0..img.channels() {
                        pixels.set(c, y, x, 0.0);
                    }
                }
            }
        }
        Self { pixels, mask }
    }

    pub fn width(&self) -> usize {
        self.pixels.width()
    }

    pub fn height(&self) -> usize {
        self.pixels.height()
    }

    /// Channels seen by the model: the pixel channels followed by the mask.
    pub fn input_channels(&self) -> usize {
        self.pixels.channels() + 1
    }

    /// Value of model-input channel `c` at `(y, x)`.
    #[inline]
    pub fn input(&self, c: usize, y: usize, x: usize) -> f64 {
        if c < self.pixels.channels() {
            self.pixels.get(c, y, x)
        } else {
            self.mask.get(0, y, x)
        }
    }
}

/// Keeps the band's columns verbatim and zeroes everything else.
pub fn ablate_band(img: &ImageTensor, band: &BandSpec) -> Result<AblatedImage> {
    band.validate(img.width())?;
    let keep = band.column_mask(img.width());
    Ok(AblatedImage::from_pixel_mask(img, |_, x| keep[x]))
}

/// Keeps whole `patch × patch` cells where `keep_patch` (row-major over the
/// patch grid) is set.
pub fn ablate_patches(img: &ImageTensor, patch: usize, keep_patch: &[bool]) -> Result<AblatedImage> {
    let cols = img.width() / patch;
    let rows = img.height() / patch;
    if !img.width().is_multiple_of(patch) || !img.height().is_multiple_of(patch) || keep_patch.len() != rows * cols {
        return Err(Error::contract("patch mask does not tile the image"));
    }
    Ok(AblatedImage::from_pixel_mask(img, |y, x| keep_patch[(y / patch) * cols + x / patch]))
}

/// One spec per column position `0..w`.
pub fn all_band_positions(w: usize, width: usize, wrap: bool) -> Vec<BandSpec> {
    (0..w).map(|p| BandSpec { position: p, width, wrap }).collect()
}

/// `⌈x⌉` that ignores floating noise just above an integer.
pub fn ceil_count(x: f64) -> usize {
    (x - 1e-9).ceil().max(0.0) as usize
}

/// Per-token reconstruction flags over a `rows × cols` token grid.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReconstructionMask {
    pub rows: usize,
    pub cols: usize,
    pub flags: Vec<bool>,
}

impl ReconstructionMask {
    pub fn count(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }

    /// Row-major indices of the flagged tokens.
    pub fn indices(&self) -> Vec<usize> {
        self.flags
            .iter()
            .enumerate()
            .filter_map(|(i, &f)| f.then_some(i))
            .collect()
    }

    pub fn column_flagged(&self, col: usize) -> usize {
        (0..self.rows).filter(|&r| self.flags[r * self.cols + col]).count()
    }
}

/// Flags `⌈ratio·N⌉` tokens: every token of the band's own token columns,
/// then whole neighbouring columns taken alternately left and right (cyclic)
/// until the count is met. The final, partial column is filled with a
/// vertically centred run of rows. If the band alone already exceeds the
/// target, exactly the band columns are flagged.
pub fn stage_masks(
    reconstruct_ratio: f64,
    band: &BandSpec,
    image_side: usize,
    patch_size: usize,
) -> Result<ReconstructionMask> {
    if !(reconstruct_ratio > 0.0 && reconstruct_ratio <= 1.0) {
        return Err(Error::contract(format!(
            "reconstruct ratio {reconstruct_ratio} outside (0, 1]"
        )));
    }
    if patch_size == 0 || !image_side.is_multiple_of(patch_size) {
        return Err(Error::contract("image side must be divisible by the patch size"));
    }
    band.validate(image_side)?;
    let cols = image_side / patch_size;
    let rows = cols;
    let n = rows * cols;
    let target = ceil_count(reconstruct_ratio * n as f64).min(n);
    let mut flags = vec![false; n];
    let flag_col = |flags: &mut Vec<bool>, col: usize, count: usize| {
        let first = (rows - count) / 2;
        for r in first..first + count {
            flags[r * cols + col] = true;
        }
    };

    let (start, len) = band.token_arc(image_side, patch_size);
    for i in 0..len {
        flag_col(&mut flags, (start + i) % cols, rows);
    }
    let mut flagged = len * rows;
    let mut used = len;
    let (mut left, mut right) = (0, 0);
    let mut go_left = true;
    while flagged < target && used < cols {
        let col = if go_left {
            left += 1;
            (start + cols - left) % cols
        } else {
            right += 1;
            (start + len - 1 + right) % cols
        };
        go_left = !go_left;
        let take = rows.min(target - flagged);
        flag_col(&mut flags, col, take);
        flagged += take;
        used += 1;
    }
    Ok(ReconstructionMask { rows, cols, flags })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize) -> ImageTensor {
        let mut img = ImageTensor::filled(3, w, w, 0.0);
        for c in 0..3 {
            for y in 0..w {
                for x in 0..w {
                    img.set(c, y, x, (1 + x + y * w + c * 7) as f64 / 1000.0);
                }
            }
        }
        img
    }

    #[test]
    fn full_width_band_is_identity() {
        let img = ramp(8);
        let ab = ablate_band(&img, &BandSpec::new(3, 8)).unwrap();
        assert_eq!(ab.pixels, img);
        assert!(ab.mask.data().iter().all(|&m| m == 1.0));
    }

    #[test]
    fn band_wraps_at_right_edge() {
        let cols: Vec<usize> = BandSpec::new(6, 4).columns(8).collect();
        assert_eq!(cols, vec![6, 7, 0, 1]);
        let truncated: Vec<usize> = BandSpec::new(6, 4).with_wrap(false).columns(8).collect();
        assert_eq!(truncated, vec![6, 7]);
    }

    #[test]
    fn constant_image_ablation_values() {
        let img = ImageTensor::filled(3, 8, 8, 0.5);
        let ab = ablate_band(&img, &BandSpec::new(2, 3)).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                let kept = (2..5).contains(&x);
                assert_eq!(ab.pixels.get(1, y, x), if kept { 0.5 } else { 0.0 });
                assert_eq!(ab.mask.get(0, y, x), if kept { 1.0 } else { 0.0 });
                assert_eq!(ab.input(3, y, x), ab.mask.get(0, y, x));
            }
        }
    }

    #[test]
    fn band_wider_than_image_is_rejected() {
        assert!(ablate_band(&ramp(4), &BandSpec::new(0, 5)).is_err());
    }

    #[test]
    fn ablation_is_idempotent() {
        let img = ramp(8);
        let band = BandSpec::new(5, 4);
        let once = ablate_band(&img, &band).unwrap();
        let twice = ablate_band(&once.pixels, &band).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn positions_enumerate_every_column() {
        let ps = all_band_positions(32, 4, true);
        assert_eq!(ps.len(), 32);
        assert!(ps.windows(2).all(|w| w[0].position < w[1].position));
        assert_eq!(all_band_positions(1, 1, true), vec![BandSpec::new(0, 1)]);
    }

    #[test]
    fn full_ratio_flags_everything() {
        let m = stage_masks(1.0, &BandSpec::new(3, 4), 32, 4).unwrap();
        assert_eq!(m.count(), 64);
    }

    #[test]
    fn thirty_percent_on_eight_by_eight_grid() {
        // band in token column 2 only; expansion: column 1 (8), then 4 rows
        // of column 3 centred at rows 2..6
        let m = stage_masks(0.3, &BandSpec::new(8, 4), 32, 4).unwrap();
        assert_eq!(m.count(), 20);
        assert_eq!(m.column_flagged(2), 8);
        assert_eq!(m.column_flagged(1), 8);
        assert_eq!(m.column_flagged(3), 4);
        for r in 0..8 {
            assert_eq!(m.flags[r * 8 + 3], (2..6).contains(&r));
        }
    }

    #[test]
    fn expansion_wraps_around_token_grid() {
        let m = stage_masks(0.3, &BandSpec::new(0, 4), 32, 4).unwrap();
        assert_eq!(m.column_flagged(0), 8);
        assert_eq!(m.column_flagged(7), 8);
        assert_eq!(m.column_flagged(1), 4);
    }

    #[test]
    fn band_token_columns_always_flagged() {
        for p in 0..32 {
            for ratio in [0.05, 0.3, 0.6] {
                let band = BandSpec::new(p, 5);
                let m = stage_masks(ratio, &band, 32, 4).unwrap();
                for c in band.columns(32) {
                    assert_eq!(m.column_flagged(c / 4), 8, "p={p} ratio={ratio}");
                }
            }
        }
    }

    #[test]
    fn noisy_ceiling_is_stable() {
        assert_eq!(ceil_count(0.3 * 10.0), 3);
        assert_eq!(ceil_count(0.3 * 64.0), 20);
        assert_eq!(ceil_count(0.6 * 32.0), 20);
    }
}
