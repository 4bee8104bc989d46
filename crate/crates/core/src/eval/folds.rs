use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Fold index for every example.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    k: usize,
    folds: Vec<usize>,
}

impl FoldAssignment {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn folds(&self) -> &[usize] {
        &self.folds
    }

    /// Indices outside `fold`, then the indices inside it.
    pub fn split(&self, fold: usize) -> (Vec<usize>, Vec<usize>) {
        let (test, train): (Vec<usize>, Vec<usize>) = (0..self.folds.len()).partition(|&i| self.folds[i] == fold);
        (train, test)
    }
}

fn indices_by_class(labels: &[usize]) -> Vec<Vec<usize>> {
    let n_classes = labels.iter().max().map_or(0, |&m| m + 1);
    let mut by_class = vec![Vec::new(); n_classes];
    for (i, &c) in labels.iter().enumerate() {
        by_class[c].push(i);
    }
    by_class
}

/// Shuffles each class with `seed` and deals its members round-robin into `k`
/// folds.
pub fn stratified_kfold(labels: &[usize], k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::invalid("k-fold needs k >= 2"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![0; labels.len()];
    for (c, mut members) in indices_by_class(labels).into_iter().enumerate() {
        if !members.is_empty() && members.len() < k {
            return Err(Error::invalid(format!("class {c} has {} examples, fewer than k = {k}", members.len())));
        }
        members.shuffle(&mut rng);
        for (j, i) in members.into_iter().enumerate() {
            folds[i] = j % k;
        }
    }
    Ok(FoldAssignment { k, folds })
}

/// Splits `pool` (indices into `labels`) into training and validation parts,
/// moving `round(fraction * n_c)` members of every class (at least one) to
/// validation.
pub fn validation_carve(pool: &[usize], labels: &[usize], fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..1.0).contains(&fraction) || fraction == 0.0 {
        return Err(Error::invalid("validation fraction must lie in (0, 1)"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool_labels: Vec<usize> = pool.iter().map(|&i| labels[i]).collect();
    let (mut train, mut valid) = (Vec::new(), Vec::new());
    for mut members in indices_by_class(&pool_labels) {
        if members.is_empty() {
            continue;
        }
        if members.len() < 2 {
            return Err(Error::invalid("every class needs two examples to carve a validation split"));
        }
        members.shuffle(&mut rng);
        let n_valid = ((fraction * members.len() as f64).round() as usize).clamp(1, members.len() - 1);
        valid.extend(members[..n_valid].iter().map(|&j| pool[j]));
        train.extend(members[n_valid..].iter().map(|&j| pool[j]));
    }
    train.sort_unstable();
    valid.sort_unstable();
    Ok((train, valid))
}
