use nalgebra::DMatrix;
use rayon::prelude::*;

use super::tree::{build, SplitRule, TreeModel, TreeParams};
use crate::error::{Error, Result};
use crate::rng::derive_seed;

/// Extremely randomised trees: every member sees the full sample, and each
/// node picks the best of one uniform random threshold per feature.
#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    trees: Vec<TreeModel>,
    seed: u64,
}

pub fn fit_extra_trees(
    x: &DMatrix<f64>,
    y: &[f64],
    n_estimators: usize,
    params: TreeParams,
    seed: u64,
) -> Result<ForestModel> {
    if n_estimators == 0 {
        return Err(Error::InvalidParameter("n_estimators must be >= 1".into()));
    }
    let trees = (0..n_estimators)
        .into_par_iter()
        .map(|i| build(x, y, params, SplitRule::Random, derive_seed(seed, ["tree", &i.to_string()])))
        .collect::<Result<Vec<_>>>()?;
    Ok(ForestModel { trees, seed })
}

impl ForestModel {
    pub fn trees(&self) -> &[TreeModel] {
        &self.trees
    }

    pub fn n_estimators(&self) -> usize {
        self.trees.len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Mean of the member predictions.
    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        let mut acc = vec![0.0; x.nrows()];
        for t in &self.trees {
            for (a, p) in acc.iter_mut().zip(t.predict(x)) {
                *a += p;
            }
        }
        let k = self.trees.len() as f64;
        acc.iter_mut().for_each(|a| *a /= k);
        acc
    }
}
