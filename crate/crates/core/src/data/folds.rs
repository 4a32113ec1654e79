use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{DataError, EmbeddingSet, Result};
use crate::rng;

/// Assignment of every sample id to one of `num_folds` folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub num_folds: usize,
    pub seed: u64,
    pub stratified: bool,
    pub assignments: BTreeMap<String, usize>,
}

impl FoldPlan {
    pub fn fold_of(&self, id: &str) -> Option<usize> {
        self.assignments.get(id).copied()
    }

    /// For each fold, the positions in `ids` assigned to it.
    pub fn fold_indices(&self, ids: &[String]) -> Result<Vec<Vec<usize>>> {
        let mut out = vec![Vec::new(); self.num_folds];
        for (i, id) in ids.iter().enumerate() {
            let f = self.fold_of(id).ok_or_else(|| DataError::Alignment {
                id: id.clone(),
                reason: "sample has no fold assignment".into(),
            })?;
            out[f].push(i);
        }
        Ok(out)
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.num_folds];
        for &f in self.assignments.values() {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Stratified `k`-fold plan for an embedding set.
pub fn make_folds(set: &EmbeddingSet, k: usize, seed: u64) -> Result<FoldPlan> {
    make_folds_for_labels(&set.ids(), &set.labels(), k, seed, true)
}

/// Builds a `k`-fold plan over `(ids, labels)`.
///
/// Samples are shuffled within each class, classes are laid end to end in
/// label order and the sequence is dealt round-robin across folds. The
/// global deal keeps fold sizes within one of each other, and each class's
/// contiguous run keeps its per-fold counts within one as well.
pub fn make_folds_for_labels(
    ids: &[String],
    labels: &[usize],
    k: usize,
    seed: u64,
    stratified: bool,
) -> Result<FoldPlan> {
    if ids.len() != labels.len() {
        return Err(DataError::Invalid(format!(
            "{} ids but {} labels",
            ids.len(),
            labels.len()
        )));
    }
    if k < 2 {
        return Err(DataError::Stratification(format!(
            "need at least 2 folds so the training split is non-empty, got {k}"
        )));
    }
    let groups: Vec<Vec<usize>> = if stratified {
        let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, &l) in labels.iter().enumerate() {
            by_class.entry(l).or_default().push(i);
        }
        for (class, members) in &by_class {
            if members.len() < k {
                return Err(DataError::Stratification(format!(
                    "class {class} has {} samples, fewer than {k} folds",
                    members.len()
                )));
            }
        }
        by_class
            .into_iter()
            .map(|(class, mut members)| {
                members.shuffle(&mut rng::stream(seed, "folds", &[class as u64]));
                members
            })
            .collect()
    } else {
        if ids.len() < k {
            return Err(DataError::Stratification(format!(
                "{} samples cannot fill {k} folds",
                ids.len()
            )));
        }
        let mut all: Vec<usize> = (0..ids.len()).collect();
        all.shuffle(&mut rng::stream(seed, "folds", &[]));
        vec![all]
    };

    let mut assignments = BTreeMap::new();
    for (slot, i) in groups.into_iter().flatten().enumerate() {
        if assignments.insert(ids[i].clone(), slot % k).is_some() {
            return Err(DataError::DuplicateId(ids[i].clone()));
        }
    }
    Ok(FoldPlan {
        num_folds: k,
        seed,
        stratified,
        assignments,
    })
}
