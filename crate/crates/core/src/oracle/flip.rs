use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::certify::VoteTable;

/// Closed form: an adversary owning `delta` positions removes up to `delta`
/// votes from the leader and adds up to `delta` to the best rival. A tie
/// counts as overturned.
pub fn worst_case_flip(votes: &VoteTable, delta: usize) -> bool {
    let c = votes.predicted();
    let rival = (0..votes.num_classes())
        .filter(|&k| k != c)
        .map(|k| votes.counts[k])
        .max();
    let Some(rival) = rival else { return false };
    votes.counts[c] as i64 - delta as i64 <= rival as i64 + delta as i64
}

/// Per-position vote sets: `sets[p][c]` is true when position `p` votes
/// for class `c`.
#[derive(Clone, Debug, PartialEq)]
pub struct VoteSets {
    pub classes: usize,
    pub sets: Vec<Vec<bool>>,
}

impl VoteSets {
    pub fn table(&self) -> VoteTable {
        let mut counts = vec![0; self.classes];
        for s in &self.sets {
            for (c, &v) in s.iter().enumerate() {
                counts[c] += v as usize;
            }
        }
        VoteTable::from_counts(counts, self.sets.len())
    }

    /// Seeded random table: each position votes for a favoured class with
    /// a high probability and for other classes rarely.
    pub fn random(rng: &mut ChaCha8Rng, max_w: usize, max_classes: usize) -> Self {
        let w = rng.gen_range(1..=max_w);
        let classes = rng.gen_range(2..=max_classes);
        let favoured = rng.gen_range(0..classes);
        let p_fav = rng.gen_range(0.3..1.0);
        let p_other = rng.gen_range(0.0..0.5);
        let sets = (0..w)
            .map(|_| (0..classes).map(|c| rng.gen_bool(if c == favoured { p_fav } else { p_other })).collect())
            .collect();
        Self { classes, sets }
    }

    pub fn seeded(seed: u64, count: usize, max_w: usize, max_classes: usize) -> Vec<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count).map(|_| Self::random(&mut rng, max_w, max_classes)).collect()
    }
}

fn next_combination(idx: &mut [usize], n: usize) -> bool {
    let k = idx.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if idx[i] < n - k + i {
            idx[i] += 1;
            for j in i + 1..k {
                idx[j] = idx[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Exhaustive: tries every set of `delta` controlled positions, each
/// rewritten to vote for every class except the current leader.
pub fn worst_case_flip_exhaustive(votes: &VoteSets, delta: usize) -> bool {
    let table = votes.table();
    let c = table.predicted();
    let w = votes.sets.len();
    let k = delta.min(w);
    if votes.classes < 2 {
        return false;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        let mut counts = table.counts.clone();
        for &p in &idx {
            for (class, &v) in votes.sets[p].iter().enumerate() {
                let after = class != c;
                counts[class] = counts[class] + after as usize - v as usize;
            }
        }
        if (0..votes.classes).any(|r| r != c && counts[r] >= counts[c]) {
            return true;
        }
        if k == 0 || !next_combination(&mut idx, w) {
            return false;
        }
    }
}
