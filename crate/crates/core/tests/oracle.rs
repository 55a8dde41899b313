use ecvit_core::certify::{standard_delta, Certifier, VoteTable};
use ecvit_core::oracle::{
    geometry_check, intersecting_positions, max_band_patch_intersections, soundness_check, worst_case_flip,
    worst_case_flip_exhaustive, VoteSets,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn geometry_matches_formula_up_to_32() {
    assert_eq!(geometry_check(32), None);
}

#[test]
fn oversized_patch_hits_every_band() {
    assert_eq!(max_band_patch_intersections(8, 6, 5), 8);
}

#[test]
fn intersecting_positions_wrap_left_of_the_patch() {
    // band starting at 6 covers 6, 7, 0 and so reaches column 0
    let got = intersecting_positions(8, 3, true, 0, 1);
    assert_eq!(got, vec![0, 6, 7]);
    let flat = intersecting_positions(8, 3, false, 0, 1);
    assert_eq!(flat, vec![0]);
}

#[test]
fn standard_certifier_is_sound_and_sharp() {
    let tables = VoteSets::seeded(11, 300, 24, 6);
    let out = soundness_check(&Certifier::default(), &tables, 10);
    assert!(out.certified > 0, "{out:?}");
    assert!(out.passed(), "{out:?}");
}

#[test]
fn off_by_one_delta_is_caught() {
    let mutant = Certifier { delta_rule: |m, b| (m + b).saturating_sub(2) };
    let tables = VoteSets::seeded(11, 300, 24, 6);
    let out = soundness_check(&mutant, &tables, 0);
    assert!(out.violations > 0, "{out:?}");
}

#[test]
fn over_cautious_delta_stays_sound() {
    let cautious = Certifier { delta_rule: |m, b| m + b };
    let out = soundness_check(&cautious, &VoteSets::seeded(5, 100, 20, 5), 0);
    assert_eq!(out.violations, 0);
}

#[test]
fn leader_overturned_exactly_at_twice_delta() {
    // 10 vs 6 with Δ = 2: worst case 8 vs 8, a tie
    let t = VoteTable::from_counts(vec![10, 6, 0], 12);
    assert!(worst_case_flip(&t, 2));
    let t = VoteTable::from_counts(vec![11, 6, 0], 12);
    assert!(!worst_case_flip(&t, 2));
    assert!(!Certifier::default().certify_delta(&VoteTable::from_counts(vec![10, 6, 0], 12), standard_delta(1, 2)).certified);
}

proptest! {
    #[test]
    fn closed_form_matches_enumeration(seed in 0u64..10_000, delta in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sets = VoteSets::random(&mut rng, 9, 4);
        prop_assert_eq!(worst_case_flip(&sets.table(), delta), worst_case_flip_exhaustive(&sets, delta));
    }

    #[test]
    fn certified_tables_survive_enumeration(seed in 0u64..10_000, m in 1usize..4, b in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sets = VoteSets::random(&mut rng, 10, 4);
        let table = sets.table();
        let c = Certifier::default().certify(&table, m, b);
        if c.certified {
            prop_assert!(!worst_case_flip_exhaustive(&sets, max_band_patch_intersections(table.positions, m, b)));
        }
    }
}
