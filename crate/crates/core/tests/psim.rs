use ecvit_core::data::{load_splits, DatasetSpec, LabeledImage};
use ecvit_core::psim::{
    build_default_plan, finetune_band, psim_loss, run_stage, Supervision, TargetStore, TargetValues, TokenTargets,
};
use ecvit_core::smoothing::{ablate_band, BandSpec};
use ecvit_core::tensor::Tape;
use ecvit_core::tokenizer::fit_codebook;
use ecvit_core::vit::{forward_segments, is_reconstruction_param, ModelConfig, ModelParams, Segment};
use ecvit_core::Error;

fn config() -> ModelConfig {
    ModelConfig {
        image_side: 16,
        embed_dim: 16,
        num_layers: 1,
        num_heads: 2,
        mlp_ratio: 2,
        codebook_size: 8,
        ..Default::default()
    }
}

fn data(n: usize) -> Vec<LabeledImage> {
    load_splits(&DatasetSpec::synthetic(3, 16, n, 1, 4), None).unwrap().0
}

/// (total, cls, rec) and the gradient norm of the codebook head.
fn loss_at(params: &ModelParams<f64>, item: &LabeledImage, lambda: f64) -> (f64, f64, f64, f64) {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, |_| true);
    let ablated = ablate_band(&item.image, &BandSpec::new(3, 8)).unwrap();
    let tokens: Vec<usize> = (0..16).collect();
    let seg = Segment { image: &ablated, tokens: tokens.clone(), key_mask: None };
    let out = forward_segments(&mut tape, &bound, &params.config, &[seg]).unwrap();
    let rec_tokens = vec![1, 2, 9];
    let rows = tape.embedding_lookup(out.hidden, rec_tokens.iter().map(|t| t + 1).collect()).unwrap();
    let targets = TokenTargets { tokens: rec_tokens, values: TargetValues::Codes(vec![3, 0, 7]) };
    let terms = psim_loss(&mut tape, &bound, out.logits, item.label, rows, &targets, lambda).unwrap();
    let grads = tape.backward(terms.total).unwrap();
    let head = grads.get(bound.var("recon.codebook.weight").unwrap()).unwrap();
    let norm = head.data().iter().map(|g| g * g).sum::<f64>().sqrt();
    (tape.value(terms.total).item(), tape.value(terms.cls).item(), tape.value(terms.rec).item(), norm)
}

#[test]
fn loss_is_linear_in_lambda() {
    let params = ModelParams::<f64>::init(&config(), 1).unwrap();
    let item = &data(3)[0];
    let (t0, c0, r0, _) = loss_at(&params, item, 0.0);
    assert_eq!(t0, c0);
    for lambda in [0.5, 10.0, 1000.0] {
        let (t, c, r, _) = loss_at(&params, item, lambda);
        assert_eq!((c, r), (c0, r0));
        assert!((t - (c + lambda * r)).abs() < 1e-9 * t.abs().max(1.0), "λ={lambda}");
    }
}

#[test]
fn reconstruction_head_gets_gradient_only_with_positive_lambda() {
    let params = ModelParams::<f64>::init(&config(), 1).unwrap();
    let item = &data(3)[0];
    assert_eq!(loss_at(&params, item, 0.0).3, 0.0);
    assert!(loss_at(&params, item, 1.0).3 > 0.0);
}

#[test]
fn negative_lambda_is_a_contract_error() {
    let params = ModelParams::<f64>::init(&config(), 1).unwrap();
    let item = &data(3)[0];
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, |_| true);
    let ablated = ablate_band(&item.image, &BandSpec::new(0, 16)).unwrap();
    let seg = Segment { image: &ablated, tokens: (0..16).collect(), key_mask: None };
    let out = forward_segments(&mut tape, &bound, &params.config, &[seg]).unwrap();
    let rows = tape.embedding_lookup(out.hidden, vec![1]).unwrap();
    let targets = TokenTargets { tokens: vec![0], values: TargetValues::Codes(vec![0]) };
    let err = psim_loss(&mut tape, &bound, out.logits, 0, rows, &targets, -1.0).unwrap_err();
    assert!(matches!(err, Error::Contract(_)));
}

fn short_plan() -> ecvit_core::psim::TrainPlan {
    let mut plan = build_default_plan(4, 16, 2).unwrap();
    for s in &mut plan.stages {
        s.epochs = 1;
        s.lambda = 10.0;
    }
    plan.finetune.epochs = 1;
    plan.optim.batch_size = 8;
    plan
}

#[test]
fn stage_training_is_reproducible_and_logs_each_epoch() {
    let train = data(24);
    let cb = fit_codebook(&train, 4, 8, 3).unwrap();
    let targets = TargetStore::from_codebook(&cb, &train).unwrap();
    let plan = short_plan();
    let run = || {
        let mut params = ModelParams::<f64>::init(&config(), 2).unwrap();
        let mut metrics = Vec::new();
        for stage in &plan.stages {
            run_stage(&mut params, stage, &train, Some(&targets), &plan, &mut metrics).unwrap();
        }
        (params, metrics)
    };
    let (a, ma) = run();
    let (b, mb) = run();
    assert_eq!(a, b);
    assert_eq!(ma, mb);
    assert_eq!(ma.len(), 2);
    assert!(ma.iter().all(|m| m.mean_rec_loss > 0.0 && m.mean_loss.is_finite()));
}

#[test]
fn mismatched_targets_are_rejected() {
    let train = data(8);
    let plan = short_plan();
    let mut stage = plan.stages[0].clone();
    stage.supervision = Supervision::Distill;
    let cb = fit_codebook(&train, 4, 8, 3).unwrap();
    let targets = TargetStore::from_codebook(&cb, &train).unwrap();
    let mut params = ModelParams::<f64>::init(&config(), 2).unwrap();
    let err = run_stage(&mut params, &stage, &train, Some(&targets), &plan, &mut Vec::new()).unwrap_err();
    assert!(matches!(err, Error::Contract(_)));
}

#[test]
fn finetune_freezes_reconstruction_heads() {
    let train = data(16);
    let plan = short_plan();
    let before = ModelParams::<f64>::init(&config(), 2).unwrap();
    let mut after = before.clone();
    finetune_band(&mut after, &train, &plan, &mut Vec::new()).unwrap();
    for (name, t) in &before.tensors {
        let moved = t.max_abs_diff(&after.tensors[name]) > 0.0;
        assert_eq!(moved, !is_reconstruction_param(name), "{name}");
    }
}
