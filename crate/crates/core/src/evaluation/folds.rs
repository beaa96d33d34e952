use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EvalError, Result};

pub const DEFAULT_FOLDS: usize = 7;

/// Subject-level fold assignment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub assignment: BTreeMap<String, usize>,
}

impl FoldPlan {
    pub fn fold_of(&self, subject: &str) -> Option<usize> {
        self.assignment.get(subject).copied()
    }

    /// Sorted subject ids of fold `f`.
    pub fn subjects_in(&self, f: usize) -> Vec<String> {
        self.assignment
            .iter()
            .filter(|(_, &v)| v == f)
            .map(|(s, _)| s.clone())
            .collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in self.assignment.values() {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Shuffles the distinct subject ids with `seed` and deals them round-robin.
///
/// Input order and duplicates do not matter: ids are deduplicated and sorted
/// before shuffling.
pub fn make_folds(subjects: &[String], k: usize, seed: u64) -> Result<FoldPlan> {
    let mut ids: Vec<String> = subjects.to_vec();
    ids.sort();
    ids.dedup();
    if k < 2 || ids.len() < k {
        return Err(EvalError::TooFewSubjects { subjects: ids.len(), k });
    }
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let assignment = ids.into_iter().enumerate().map(|(i, s)| (s, i % k)).collect();
    Ok(FoldPlan { k, assignment })
}
