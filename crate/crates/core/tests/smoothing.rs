use ecvit_core::data::ImageTensor;
use ecvit_core::smoothing::{ablate_band, ceil_count, stage_masks, BandSpec};
use proptest::prelude::*;

fn ones(w: usize) -> ImageTensor {
    ImageTensor::filled(3, w, w, 1.0)
}

proptest! {
    #[test]
    fn band_retains_exactly_its_columns(w in 1usize..24, pos in 0usize..24, b in 1usize..24, wrap: bool) {
        prop_assume!(pos < w && b <= w);
        let band = BandSpec::new(pos, b).with_wrap(wrap);
        let a = ablate_band(&ones(w), &band).unwrap();
        let expected: Vec<bool> = (0..w)
            .map(|x| if wrap { (x + w - pos) % w < b } else { x >= pos && x < pos + b })
            .collect();
        for y in 0..w {
            for x in 0..w {
                let kept = expected[x];
                prop_assert_eq!(a.mask.get(0, y, x), if kept { 1.0 } else { 0.0 });
                for c in 0..3 {
                    prop_assert_eq!(a.pixels.get(c, y, x), if kept { 1.0 } else { 0.0 });
                }
                prop_assert_eq!(a.input(3, y, x), a.mask.get(0, y, x));
            }
        }
        let retained = expected.iter().filter(|&&k| k).count();
        prop_assert_eq!(retained, if wrap { b } else { b.min(w - pos) });
    }

    #[test]
    fn stage_mask_counts(ratio in 0.01f64..=1.0, pos in 0usize..32, b in 1usize..=32) {
        let band = BandSpec::new(pos, b);
        let m = stage_masks(ratio, &band, 32, 4).unwrap();
        let (start, len) = band.token_arc(32, 4);
        for i in 0..len {
            prop_assert_eq!(m.column_flagged((start + i) % 8), 8);
        }
        prop_assert_eq!(m.count(), ceil_count(ratio * 64.0).max(len * 8).min(64));
    }
}

#[test]
fn zero_width_band_is_rejected() {
    assert!(ablate_band(&ones(8), &BandSpec::new(0, 0)).is_err());
}
