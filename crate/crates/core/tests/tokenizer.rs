use std::fs::File;

use ecvit_core::data::{load_splits, DatasetSpec, ImageTensor, LabeledImage};
use ecvit_core::tokenizer::{fit_codebook, patch_vectors, tokenize, Codebook};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Images tiled with 4×4 cells, each a noisy copy of one of `protos` flat
/// colours; returns the images and the prototype index of every cell.
fn tiled(protos: &[[f64; 3]], n: usize, noise: f64, seed: u64) -> (Vec<LabeledImage>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut truth = Vec::new();
    let images = (0..n)
        .map(|_| {
            let mut img = ImageTensor::filled(3, 8, 8, 0.0);
            for cell in 0..4 {
                let k = rng.gen_range(0..protos.len());
                truth.push(k);
                let (cy, cx) = (cell / 2 * 4, cell % 2 * 4);
                for y in cy..cy + 4 {
                    for x in cx..cx + 4 {
                        for c in 0..3 {
                            img.set(c, y, x, protos[k][c] + rng.gen_range(-noise..noise));
                        }
                    }
                }
            }
            LabeledImage { image: img, label: 0 }
        })
        .collect();
    (images, truth)
}

#[test]
fn tokens_recover_planted_prototypes() {
    let protos = [[0.1, 0.1, 0.1], [0.9, 0.2, 0.2], [0.2, 0.8, 0.3], [0.3, 0.3, 0.9]];
    let (images, truth) = tiled(&protos, 60, 0.05, 1);
    let cb = fit_codebook(&images, 4, 4, 2).unwrap();
    // each token is scored against the majority prototype of its cluster
    let mut hits = 0;
    let mut votes = [[0usize; 4]; 4];
    let tokens: Vec<usize> = images.iter().flat_map(|i| tokenize(&i.image, &cb).unwrap()).collect();
    for (&t, &k) in tokens.iter().zip(&truth) {
        votes[t][k] += 1;
    }
    for (&t, &k) in tokens.iter().zip(&truth) {
        let majority = (0..4).max_by_key(|&j| votes[t][j]).unwrap();
        hits += (majority == k) as usize;
    }
    let purity = hits as f64 / truth.len() as f64;
    assert!(purity > 0.8, "purity {purity}");
}

#[test]
fn larger_codebook_quantizes_better() {
    let (train, _) = load_splits(&DatasetSpec::synthetic(3, 16, 60, 1, 3), None).unwrap();
    let small = fit_codebook(&train, 4, 4, 1).unwrap();
    let large = fit_codebook(&train, 4, 32, 1).unwrap();
    let (a, b) = (small.quantization_mse(&train).unwrap(), large.quantization_mse(&train).unwrap());
    assert!(b < a, "K=32 mse {b} vs K=4 mse {a}");
}

#[test]
fn saved_codebook_tokenizes_identically() {
    let (train, _) = load_splits(&DatasetSpec::synthetic(3, 16, 20, 1, 5), None).unwrap();
    let cb = fit_codebook(&train, 4, 16, 7).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cb.eccb");
    cb.write(File::create(&path).unwrap()).unwrap();
    let back = Codebook::read(File::open(&path).unwrap()).unwrap();
    assert_eq!(back, cb);
    for item in &train {
        assert_eq!(tokenize(&item.image, &back).unwrap(), tokenize(&item.image, &cb).unwrap());
    }
}

#[test]
fn token_is_nearest_centroid_by_brute_force() {
    let (train, _) = load_splits(&DatasetSpec::synthetic(3, 16, 10, 1, 6), None).unwrap();
    let cb = fit_codebook(&train, 4, 8, 2).unwrap();
    for item in &train {
        let toks = tokenize(&item.image, &cb).unwrap();
        for (v, &t) in patch_vectors(&item.image, 4).unwrap().iter().zip(&toks) {
            let dist = |i: usize| cb.centroid(i).iter().zip(v).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            assert!((0..cb.k).all(|i| dist(t) <= dist(i)));
        }
    }
}
