use crate::smoothing::BandSpec;

/// Brute force: the most `b`-wide cyclic bands that any `m`-wide patch
/// (placed fully inside the image) intersects.
pub fn max_band_patch_intersections(w: usize, m: usize, b: usize) -> usize {
    if m == 0 || b == 0 || m > w || b > w {
        return 0;
    }
    let masks: Vec<Vec<bool>> = (0..w).map(|p| BandSpec::new(p, b).column_mask(w)).collect();
    (0..=w - m)
        .map(|offset| {
            masks
                .iter()
                .filter(|mask| (offset..offset + m).any(|x| mask[x]))
                .count()
        })
        .max()
        .unwrap_or(0)
}

/// Band positions whose retained columns overlap `[x0, x0 + m)`.
pub fn intersecting_positions(w: usize, b: usize, wrap: bool, x0: usize, m: usize) -> Vec<usize> {
    (0..w)
        .filter(|&p| {
            BandSpec::new(p, b)
                .with_wrap(wrap)
                .columns(w)
                .any(|c| c >= x0 && c < x0 + m)
        })
        .collect()
}
