use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::rng::Stream;

/// Stream id of the fold shuffle.
const FOLD_STREAM: u64 = 0xF01D;

/// Subject-disjoint partition into `k` folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub assignments: BTreeMap<String, usize>,
}

/// Sort the distinct subjects, shuffle them with `seed`, and deal them out
/// round-robin, so fold sizes differ by at most one.
pub fn make_folds(subjects: &[String], k: usize, seed: u64) -> Result<FoldPlan, ExperimentError> {
    if k < 2 {
        return Err(ExperimentError::TooFewFolds(k));
    }
    let mut subs: Vec<&String> = subjects.iter().collect();
    subs.sort();
    subs.dedup();
    if subs.len() < k {
        return Err(ExperimentError::TooFewSubjects { subjects: subs.len(), k });
    }
    Stream::derived(seed, FOLD_STREAM).shuffle(&mut subs);
    let assignments = subs.into_iter().enumerate().map(|(i, s)| (s.clone(), i % k)).collect();
    Ok(FoldPlan { k, seed, assignments })
}

impl FoldPlan {
    pub fn fold_of(&self, subject: &str) -> Option<usize> {
        self.assignments.get(subject).copied()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in self.assignments.values() {
            sizes[f] += 1;
        }
        sizes
    }

    pub fn subjects_in(&self, fold: usize) -> Vec<&str> {
        self.assignments.iter().filter(|(_, &f)| f == fold).map(|(s, _)| s.as_str()).collect()
    }

    /// Frame indices `(train, test)` for `fold`, given each frame's subject.
    /// Frames of unplanned subjects go to neither side.
    pub fn split<S: AsRef<str>>(&self, frame_subjects: &[S], fold: usize) -> (Vec<usize>, Vec<usize>) {
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for (i, s) in frame_subjects.iter().enumerate() {
            match self.fold_of(s.as_ref()) {
                Some(f) if f == fold => test.push(i),
                Some(_) => train.push(i),
                None => {}
            }
        }
        (train, test)
    }
}
