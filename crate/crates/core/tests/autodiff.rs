use ecvit_core::data::ImageTensor;
use ecvit_core::oracle::{model_gradient_check, primitive_cases, probe_primitive};
use ecvit_core::smoothing::BandSpec;
use ecvit_core::tensor::{Tape, Tensor};
use ecvit_core::vit::{ModelConfig, ModelParams};
use ecvit_core::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn t2(rows: &[&[f64]]) -> Tensor<f64> {
    Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>())
}

#[test]
fn matmul_by_identity() {
    let mut tape = Tape::new();
    let i = tape.leaf(t2(&[&[1.0, 0.0], &[0.0, 1.0]]), false);
    let m = tape.leaf(t2(&[&[3.0, 4.0], &[5.0, 6.0]]), false);
    let out = tape.matmul(i, m).unwrap();
    assert_eq!(tape.value(out).data(), &[3.0, 4.0, 5.0, 6.0]);
}

#[test]
fn softmax_of_equal_logits_is_uniform() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![0.0, 0.0]), false);
    let y = tape.softmax(x, None).unwrap();
    assert_eq!(tape.value(y).data(), &[0.5, 0.5]);
}

#[test]
fn confident_cross_entropy_is_tiny() {
    // hand log-sum-exp: ln(e^10 + e^-10) - 10 = ln(1 + e^-20)
    let expected = (1.0 + (-20.0f64).exp()).ln();
    let mut tape = Tape::new();
    let x = tape.leaf(t2(&[&[10.0, -10.0]]), false);
    let ce = tape.cross_entropy(x, vec![0]).unwrap();
    let v = tape.value(ce).item();
    assert!(v > 0.0 && v < 1e-4);
    assert!((v - expected).abs() < 1e-15);
}

#[test]
fn quadratic_gradient() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![1.0, 2.0, 3.0]), true);
    let sq = tape.mul(x, x).unwrap();
    let loss = tape.sum(sq).unwrap();
    let grads = tape.backward(loss).unwrap();
    assert_eq!(grads.get(x).unwrap().data(), &[2.0, 4.0, 6.0]);
}

#[test]
fn mean_gradient() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![5.0, -1.0, 2.0, 0.5]), true);
    let loss = tape.mean(x).unwrap();
    let grads = tape.backward(loss).unwrap();
    assert_eq!(grads.get(x).unwrap().data(), &[0.25; 4]);
}

#[test]
fn unreachable_leaf_gets_zero_gradient_of_its_shape() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]), true);
    let unused = tape.leaf(Tensor::zeros(&[2, 3]), true);
    let loss = tape.sum(x).unwrap();
    let grads = tape.backward(loss).unwrap();
    let g = grads.get(unused).unwrap();
    assert_eq!(g.shape(), &[2, 3]);
    assert!(g.data().iter().all(|&v| v == 0.0));
}

#[test]
fn shape_mismatch_names_op_and_shapes() {
    let mut tape = Tape::new();
    let a = tape.leaf(Tensor::<f64>::zeros(&[2, 3]), false);
    let b = tape.leaf(Tensor::<f64>::zeros(&[2, 3]), false);
    let err = tape.matmul(a, b).unwrap_err();
    let msg = err.to_string();
    assert!(matches!(err, Error::Shape { op: "matmul", .. }));
    assert!(msg.contains("matmul") && msg.contains("[2, 3]"), "{msg}");
}

#[test]
fn overflow_is_a_numeric_error() {
    let mut tape = Tape::new();
    let a = tape.leaf(Tensor::vector(vec![1e308]), false);
    let err = tape.scale(a, 10.0).unwrap_err();
    assert!(matches!(err, Error::Numeric { op: "scale", .. }));
}

#[test]
fn backward_requires_scalar_loss() {
    let mut tape = Tape::new();
    let a = tape.leaf(Tensor::vector(vec![1.0, 2.0]), true);
    let b = tape.scale(a, 2.0).unwrap();
    assert!(matches!(tape.backward(b), Err(Error::Contract(_))));
}

#[test]
fn nothing_recorded_without_requires_grad() {
    let mut tape = Tape::new();
    let a = tape.leaf(Tensor::vector(vec![1.0, 2.0]), false);
    let b = tape.scale(a, 2.0).unwrap();
    assert!(!tape.requires_grad(b));
}

#[test]
fn concat_and_slice_roundtrip_columns() {
    let mut tape = Tape::new();
    let a = tape.leaf(t2(&[&[1.0, 2.0], &[3.0, 4.0]]), false);
    let b = tape.leaf(t2(&[&[5.0], &[6.0]]), false);
    let c = tape.concat(&[a, b], 1).unwrap();
    assert_eq!(tape.value(c).data(), &[1.0, 2.0, 5.0, 3.0, 4.0, 6.0]);
    let s = tape.slice(c, 1, 1, 2).unwrap();
    assert_eq!(tape.value(s).data(), &[2.0, 5.0, 4.0, 6.0]);
}

#[test]
fn primitives_match_finite_differences() {
    for (i, (prim, shapes)) in primitive_cases().into_iter().enumerate() {
        let err = probe_primitive(&prim, &shapes, 10, 100 + i as u64).unwrap();
        assert!(err < 1e-4, "{}: rel err {err}", prim.name());
    }
}

#[test]
fn encoder_block_matches_finite_differences() {
    let cfg = ModelConfig {
        image_side: 8,
        patch_size: 4,
        embed_dim: 8,
        num_layers: 1,
        num_heads: 2,
        mlp_ratio: 2,
        num_classes: 3,
        ..Default::default()
    };
    let params = ModelParams::<f64>::init(&cfg, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let img = ImageTensor::new(3, 8, 8, (0..192).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
    let res = model_gradient_check(&params, &img, &BandSpec::new(6, 3), 1).unwrap();
    assert_eq!(res.checked, params.num_parameters());
    assert!(res.max_rel_err < 1e-4, "{res:?}");
}

#[test]
fn fan_out_accumulates_and_is_deterministic() {
    let run = || {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::<f64>::vector(vec![0.3, -1.2, 2.0]), true);
        let g = tape.gelu(x).unwrap();
        let s = tape.softmax(x, None).unwrap();
        let p = tape.mul(g, s).unwrap();
        let loss = tape.sum(p).unwrap();
        tape.backward(loss).unwrap().get(x).unwrap().clone()
    };
    let a = run();
    let b = run();
    assert_eq!(
        a.data().iter().map(|v: &f64| v.to_bits()).collect::<Vec<_>>(),
        b.data().iter().map(|v: &f64| v.to_bits()).collect::<Vec<_>>()
    );
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(vals in prop::collection::vec(-20.0f64..20.0, 12)) {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![3, 4], vals).unwrap(), false);
        let y = tape.softmax(x, None).unwrap();
        for row in tape.value(y).data().chunks(4) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(row.iter().all(|&p| p > 0.0));
        }
    }

    #[test]
    fn layer_norm_standardizes_rows(vals in prop::collection::vec(-2.0f64..2.0, 16)) {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![2, 8], vals.clone()).unwrap(), false);
        let y = tape.layer_norm(x, 1e-12).unwrap();
        for (row, src) in tape.value(y).data().chunks(8).zip(vals.chunks(8)) {
            let spread = src.iter().cloned().fold(f64::MIN, f64::max) - src.iter().cloned().fold(f64::MAX, f64::min);
            prop_assume!(spread > 1e-3);
            let mean = row.iter().sum::<f64>() / 8.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0;
            prop_assert!(mean.abs() < 1e-7);
            prop_assert!((var - 1.0).abs() < 1e-6);
        }
    }
}
