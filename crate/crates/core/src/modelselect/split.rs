use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Stream;

pub const DEFAULT_TRAIN_FRACTION: f64 = 0.9;
pub const DEFAULT_CV_FOLDS: usize = 3;

/// Disjoint train/validation indices, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
    pub seed: u64,
    pub fraction: f64,
}

impl SplitPlan {
    pub fn n(&self) -> usize {
        self.train_indices.len() + self.val_indices.len()
    }

    /// Checks that the two sides partition `0..n`.
    pub fn check_partition(&self) -> Result<()> {
        check_partition(self.n(), [&self.train_indices[..], &self.val_indices[..]])
    }
}

fn check_partition<'a>(n: usize, parts: impl IntoIterator<Item = &'a [usize]>) -> Result<()> {
    let mut seen = vec![false; n];
    for part in parts {
        for &i in part {
            if i >= n || std::mem::replace(&mut seen[i], true) {
                return Err(Error::validation(format!("index {i} is out of range or repeated")));
            }
        }
    }
    if seen.iter().all(|&s| s) {
        Ok(())
    } else {
        Err(Error::validation("plan does not cover every index"))
    }
}

/// Seeded shuffle, then the first `round(n·fraction)` positions train.
pub fn make_split(n: usize, fraction: f64, seed: u64) -> Result<SplitPlan> {
    if n < 2 {
        return Err(Error::validation(format!("cannot split {n} videos")));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::validation(format!("split fraction must lie in (0, 1), got {fraction}")));
    }
    let n_train = (n as f64 * fraction).round() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::validation(format!(
            "fraction {fraction} of {n} videos leaves one side of the split empty"
        )));
    }
    let order = Stream::new(seed).permutation(n);
    let mut train_indices = order[..n_train].to_vec();
    let mut val_indices = order[n_train..].to_vec();
    train_indices.sort_unstable();
    val_indices.sort_unstable();
    Ok(SplitPlan {
        train_indices,
        val_indices,
        seed,
        fraction,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvPlan {
    pub k: usize,
    pub fold_assignments: Vec<usize>,
    pub seed: u64,
}

impl CvPlan {
    pub fn n(&self) -> usize {
        self.fold_assignments.len()
    }

    /// `(train, held_out)` indices of fold `fold`, both ascending.
    pub fn fold(&self, fold: usize) -> (Vec<usize>, Vec<usize>) {
        (0..self.n()).partition(|&i| self.fold_assignments[i] != fold)
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.fold_assignments {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Seeded shuffle, then fold id = shuffled position mod k.
pub fn make_folds(n: usize, k: usize, seed: u64) -> Result<CvPlan> {
    if k < 2 {
        return Err(Error::validation(format!("cross-validation needs k >= 2, got {k}")));
    }
    if n < k {
        return Err(Error::validation(format!("cannot make {k} folds from {n} videos")));
    }
    let order = Stream::new(seed).permutation(n);
    let mut fold_assignments = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold_assignments[i] = pos % k;
    }
    Ok(CvPlan {
        k,
        fold_assignments,
        seed,
    })
}
