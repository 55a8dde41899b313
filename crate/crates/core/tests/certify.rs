use ecvit_core::certify::{
    certify, evaluate, patch_key, vote, vote_from_logits, vote_logits, CertifyConfig, Certifier, ThresholdOn, VoteTable,
};
use ecvit_core::data::{load_splits, DatasetSpec};
use ecvit_core::oracle::{max_band_patch_intersections, worst_case_flip};
use ecvit_core::vit::{Engine, ModelConfig, ModelParams};
use proptest::prelude::*;

#[test]
fn uniform_classifier_is_never_certified() {
    let probs = vec![vec![1.0 / 3.0; 3]; 16];
    let t = vote(&probs, 0.2).unwrap();
    assert_eq!(t.counts, vec![16, 16, 16]);
    assert_eq!(t.predicted(), 0);
    assert_eq!(t.margin(), 0);
    assert!((1..=8).all(|m| !certify(&t, m, 4).certified));
}

#[test]
fn high_threshold_means_abstention() {
    let t = vote(&vec![vec![0.5, 0.5]; 8], 0.6).unwrap();
    assert!(t.abstained());
    assert!(!certify(&t, 1, 1).certified);
}

#[test]
fn logit_threshold_uses_raw_values() {
    let t = vote_logits(&vec![vec![2.5, 0.1, -1.0]; 4], 0.2).unwrap();
    assert_eq!(t.counts, vec![4, 0, 0]);
    let mut cfg = CertifyConfig::new(4, vec![1]);
    cfg.threshold_on = ThresholdOn::Logits;
    assert_eq!(vote_from_logits(&vec![vec![2.5f32, 0.1, -1.0]; 4], &cfg).unwrap().counts, vec![4, 0, 0]);
}

#[test]
fn evaluation_is_consistent_with_records() {
    let (_, test) = load_splits(&DatasetSpec::synthetic(3, 16, 1, 12, 3), None).unwrap();
    let cfg = ModelConfig { embed_dim: 16, num_layers: 1, num_heads: 2, mlp_ratio: 2, ..Default::default() };
    let params = ModelParams::<f32>::init(&cfg, 4).unwrap();
    let mut ccfg = CertifyConfig::new(4, vec![1, 2, 4]);
    let eval = evaluate(&params, &test, &ccfg).unwrap();
    assert_eq!(eval.records.len(), 12);
    let correct = eval.records.iter().filter(|r| r.predicted == r.label && r.votes.iter().any(|&v| v > 0)).count();
    assert!((eval.summary.clean_accuracy - correct as f64 / 12.0).abs() < 1e-12);
    for m in [1, 2, 4] {
        let key = patch_key(m);
        let cert = eval.records.iter().filter(|r| r.certified[&key] && r.predicted == r.label).count();
        assert!((eval.summary.certified_accuracy[&key] - cert as f64 / 12.0).abs() < 1e-12);
        assert!(eval.summary.certified_accuracy[&key] <= eval.summary.clean_accuracy);
    }
    for r in &eval.records {
        assert_eq!(r.certified[&patch_key(1)], r.max_certified_m >= 1);
    }
    ccfg.engine = Engine::MaskedGlobal;
    let masked = evaluate(&params, &test, &ccfg).unwrap();
    assert_eq!(masked.records, eval.records);
}

proptest! {
    #[test]
    fn certified_means_no_adversary_flips(counts in prop::collection::vec(0usize..=24, 2..6), m in 1usize..6, b in 1usize..6) {
        let t = VoteTable::from_counts(counts, 24);
        if certify(&t, m, b).certified {
            prop_assert!(!worst_case_flip(&t, max_band_patch_intersections(24, m, b)));
        }
    }

    #[test]
    fn certification_is_monotone_in_patch_size(counts in prop::collection::vec(0usize..=32, 2..5), b in 1usize..6) {
        let t = VoteTable::from_counts(counts, 32);
        let c = Certifier::default();
        let best = c.max_certified_m(&t, b, 1);
        for m in 1..=10 {
            prop_assert_eq!(c.certify(&t, m, b).certified, m <= best);
        }
    }
}
