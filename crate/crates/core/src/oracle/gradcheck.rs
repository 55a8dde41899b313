//! Central finite differences against the tape's analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::ImageTensor;
use crate::error::Result;
use crate::smoothing::{ablate_band, BandSpec};
use crate::tensor::{Primitive, Tape, Tensor, Var};
use crate::vit::{forward_segments, window_tokens, BoundParams, ModelParams, Segment};

/// Worst elementwise relative error, `|a - n| / max(|a|, |n|, floor)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub checked: usize,
}

pub const DEFAULT_FLOOR: f64 = 1e-2;

/// Compares `backward` against central differences of `f` with step `h`.
///
/// `f` builds a scalar on a fresh tape from the input leaves. Forward
/// evaluations for the difference quotients never request gradients.
pub fn check_gradients<F>(f: F, inputs: &[Tensor<f64>], h: f64) -> Result<GradCheck>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;

    let eval = |vals: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.leaf(t.clone(), false)).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut probe: Vec<Tensor<f64>> = inputs.to_vec();
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).expect("leaf requires grad");
        for i in 0..inputs[k].numel() {
            let orig = inputs[k].data()[i];
            probe[k].data_mut()[i] = orig + h;
            let up = eval(&probe)?;
            probe[k].data_mut()[i] = orig - h;
            let down = eval(&probe)?;
            probe[k].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(DEFAULT_FLOOR);
            worst = worst.max(rel);
            checked += 1;
        }
    }
    Ok(GradCheck {
        max_rel_err: worst,
        checked,
    })
}

/// Every tape primitive with small input shapes for probing.
pub fn primitive_cases() -> Vec<(Primitive, Vec<Vec<usize>>)> {
    vec![
        (Primitive::MatMul, vec![vec![3, 4], vec![4, 2]]),
        (Primitive::Transpose, vec![vec![3, 4]]),
        (Primitive::Add, vec![vec![3, 4], vec![4]]),
        (Primitive::Sub, vec![vec![3, 4], vec![3, 4]]),
        (Primitive::Mul, vec![vec![3, 4], vec![3, 4]]),
        (Primitive::Scale(-0.7), vec![vec![2, 3]]),
        (Primitive::Softmax { key_mask: None }, vec![vec![2, 4]]),
        (Primitive::Softmax { key_mask: Some(vec![true, false, true, true]) }, vec![vec![2, 4]]),
        (Primitive::LayerNorm { eps: 1e-6 }, vec![vec![3, 5]]),
        (Primitive::Gelu, vec![vec![2, 5]]),
        (Primitive::EmbeddingLookup { indices: vec![2, 0, 2] }, vec![vec![3, 4]]),
        (Primitive::Reshape { shape: vec![4, 3] }, vec![vec![2, 6]]),
        (Primitive::Concat { axis: 0 }, vec![vec![2, 3], vec![1, 3]]),
        (Primitive::Concat { axis: 1 }, vec![vec![2, 3], vec![2, 2]]),
        (Primitive::Slice { axis: 1, start: 1, len: 2 }, vec![vec![3, 4]]),
        (Primitive::Mean, vec![vec![3, 4]]),
        (Primitive::Sum, vec![vec![3, 4]]),
        (Primitive::CrossEntropy { targets: vec![1, 0] }, vec![vec![2, 3]]),
        (Primitive::L2Distance, vec![vec![3, 4], vec![3, 4]]),
    ]
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize]) -> Result<Tensor<f64>> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect())
}

/// Worst relative error of `prim` over `probes` random inputs, each
/// reduced to a scalar through a random weighting of its output.
pub fn probe_primitive(prim: &Primitive, shapes: &[Vec<usize>], probes: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..probes {
        let inputs = shapes.iter().map(|s| uniform(&mut rng, s)).collect::<Result<Vec<_>>>()?;
        let out_shape = {
            let mut tape = Tape::new();
            let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), false)).collect();
            let out = tape.apply(prim.clone(), &vars)?;
            tape.value(out).shape().to_vec()
        };
        let weights = uniform(&mut rng, &out_shape)?;
        let res = check_gradients(
            |tape, vars| {
                let out = tape.apply(prim.clone(), vars)?;
                let w = tape.leaf(weights.clone(), false);
                let prod = tape.mul(out, w)?;
                tape.sum(prod)
            },
            &inputs,
            1e-5,
        )?;
        worst = worst.max(res.max_rel_err);
    }
    Ok(worst)
}

/// Finite differences through a whole encoder: cross-entropy of a global
/// forward on a band-ablated image plus an isolated band-unit window,
/// differentiated with respect to every parameter of `params`.
pub fn model_gradient_check(params: &ModelParams<f64>, image: &ImageTensor, band: &BandSpec, label: usize) -> Result<GradCheck> {
    let cfg = params.config.clone();
    let names: Vec<String> = params.tensors.keys().cloned().collect();
    let inputs: Vec<Tensor<f64>> = params.tensors.values().map(|t| (**t).clone()).collect();
    let ablated = ablate_band(image, band)?;
    let window = window_tokens(&cfg, band);
    let all: Vec<usize> = (0..cfg.num_tokens()).collect();
    check_gradients(
        |tape, vars| {
            let bound = BoundParams { vars: names.iter().cloned().zip(vars.iter().copied()).collect() };
            let segments = [
                Segment { image: &ablated, tokens: all.clone(), key_mask: None },
                Segment { image: &ablated, tokens: window.clone(), key_mask: None },
            ];
            let out = forward_segments(tape, &bound, &cfg, &segments)?;
            tape.cross_entropy(out.logits, vec![label, label])
        },
        &inputs,
        1e-5,
    )
}
