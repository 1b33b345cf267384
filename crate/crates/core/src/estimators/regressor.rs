use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::kernel::{fit_kernel_ridge, Kernel, KernelRidge};
use super::linear::{check_fit_inputs, check_predict_dim, fit_lasso, fit_ridge, LinearModel};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed};
use crate::trees::{fit_extra_trees, fit_tree, ForestModel, TreeModel, TreeParams};

/// One concrete hyperparameter setting of a base learner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Hyper {
    Ridge { alpha: f64 },
    Lasso { alpha: f64 },
    KernelRidge { alpha: f64, kernel: Kernel },
    DecisionTree { params: TreeParams },
    ExtraTrees { params: TreeParams, n_estimators: usize },
    DummyMean,
}

impl Hyper {
    pub fn fit(&self, x: &DMatrix<f64>, y: &[f64], seed: u64) -> Result<Regressor> {
        check_fit_inputs(x, y)?;
        Ok(match *self {
            Hyper::Ridge { alpha } => Regressor::Linear(fit_ridge(x, y, alpha)?),
            Hyper::Lasso { alpha } => Regressor::Linear(fit_lasso(x, y, alpha)?),
            Hyper::KernelRidge { alpha, kernel } => Regressor::Kernel(fit_kernel_ridge(x, y, alpha, kernel)?),
            Hyper::DecisionTree { params } => Regressor::Tree(fit_tree(x, y, params, seed)?),
            Hyper::ExtraTrees { params, n_estimators } => {
                Regressor::Forest(fit_extra_trees(x, y, n_estimators, params, seed)?)
            }
            Hyper::DummyMean => Regressor::Dummy {
                mean: y.iter().sum::<f64>() / y.len() as f64,
                d: x.ncols(),
            },
        })
    }
}

/// A fitted base regressor.
#[derive(Debug, Clone, PartialEq)]
pub enum Regressor {
    Linear(LinearModel),
    Kernel(KernelRidge),
    Tree(TreeModel),
    Forest(ForestModel),
    Dummy { mean: f64, d: usize },
}

impl Regressor {
    pub fn n_features(&self) -> usize {
        match self {
            Regressor::Linear(m) => m.standardizer().dim(),
            Regressor::Kernel(m) => m.n_features(),
            Regressor::Tree(m) => m.n_features(),
            Regressor::Forest(m) => m.trees()[0].n_features(),
            Regressor::Dummy { d, .. } => *d,
        }
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        check_predict_dim(self.n_features(), x)?;
        match self {
            Regressor::Linear(m) => m.predict(x),
            Regressor::Kernel(m) => m.predict(x),
            Regressor::Tree(m) => Ok(m.predict(x)),
            Regressor::Forest(m) => Ok(m.predict(x)),
            Regressor::Dummy { mean, .. } => Ok(vec![*mean; x.nrows()]),
        }
    }
}

pub const CV_FOLDS: usize = 5;

/// Candidate hyperparameters, chosen by K-fold cross-validated MSE when
/// there is more than one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressorSpec {
    pub candidates: Vec<Hyper>,
    pub folds: usize,
}

impl RegressorSpec {
    pub fn single(h: Hyper) -> Self {
        Self { candidates: vec![h], folds: CV_FOLDS }
    }

    pub fn grid(candidates: Vec<Hyper>) -> Self {
        Self { candidates, folds: CV_FOLDS }
    }

    /// Cross-validated MSE of every candidate; `None` where a fold failed.
    pub fn cv_scores(&self, x: &DMatrix<f64>, y: &[f64], seed: u64) -> Result<Vec<Option<f64>>> {
        check_fit_inputs(x, y)?;
        let n = y.len();
        let k = self.folds.min(n);
        if k < 2 {
            return Err(Error::InvalidParameter(format!(
                "cross-validation needs at least 2 rows and folds (have {n} rows)"
            )));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng_from_seed(derive_seed(seed, ["cv"])));
        let mut fold_of = vec![0usize; n];
        for (pos, &i) in order.iter().enumerate() {
            fold_of[i] = pos % k;
        }
        let splits: Vec<(DMatrix<f64>, Vec<f64>, DMatrix<f64>, Vec<f64>)> = (0..k)
            .map(|f| {
                let tr: Vec<usize> = (0..n).filter(|&i| fold_of[i] != f).collect();
                let te: Vec<usize> = (0..n).filter(|&i| fold_of[i] == f).collect();
                (
                    x.select_rows(&tr),
                    tr.iter().map(|&i| y[i]).collect(),
                    x.select_rows(&te),
                    te.iter().map(|&i| y[i]).collect(),
                )
            })
            .collect();
        Ok(self
            .candidates
            .iter()
            .enumerate()
            .map(|(c, h)| {
                let mut sse = 0.0;
                for (f, (xtr, ytr, xte, yte)) in splits.iter().enumerate() {
                    let fold_seed = derive_seed(seed, ["cv", &c.to_string(), &f.to_string()]);
                    let pred = h.fit(xtr, ytr, fold_seed).ok()?.predict(xte).ok()?;
                    sse += pred.iter().zip(yte).map(|(p, t)| (p - t).powi(2)).sum::<f64>();
                }
                let mse = sse / n as f64;
                mse.is_finite().then_some(mse)
            })
            .collect())
    }

    /// Picks the lowest-MSE candidate (first on ties) and refits it on all
    /// rows.
    pub fn select(&self, x: &DMatrix<f64>, y: &[f64], seed: u64) -> Result<Hyper> {
        match self.candidates.as_slice() {
            [] => Err(Error::InvalidParameter("empty hyperparameter grid".into())),
            [only] => Ok(*only),
            _ if y.len() < 2 => Ok(self.candidates[0]),
            _ => {
                let scores = self.cv_scores(x, y, seed)?;
                let mut best: Option<(usize, f64)> = None;
                for (i, s) in scores.iter().enumerate() {
                    if let Some(s) = *s {
                        if best.is_none_or(|(_, b)| s < b) {
                            best = Some((i, s));
                        }
                    }
                }
                best.map(|(i, _)| self.candidates[i]).ok_or_else(|| {
                    Error::Singular("every hyperparameter candidate failed in cross-validation".into())
                })
            }
        }
    }

    pub fn fit(&self, x: &DMatrix<f64>, y: &[f64], seed: u64) -> Result<Regressor> {
        let h = self.select(x, y, seed)?;
        h.fit(x, y, derive_seed(seed, ["final"]))
    }
}

/// Base learners addressable by short name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BaseLearner {
    #[serde(rename = "l1")]
    Lasso,
    #[serde(rename = "l2")]
    Ridge,
    #[serde(rename = "kr")]
    KernelRidge,
    #[serde(rename = "dt")]
    DecisionTree,
    #[serde(rename = "et")]
    ExtraTrees,
    #[serde(rename = "dummy")]
    Dummy,
}

/// Trees in each extra-trees regressor.
pub const ET_N_ESTIMATORS: usize = 100;
/// Depth bound standing in for "unlimited" growth.
pub const UNBOUNDED_DEPTH: usize = 64;

impl BaseLearner {
    pub const ALL: [BaseLearner; 6] = [
        BaseLearner::Lasso,
        BaseLearner::Ridge,
        BaseLearner::KernelRidge,
        BaseLearner::DecisionTree,
        BaseLearner::ExtraTrees,
        BaseLearner::Dummy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BaseLearner::Lasso => "l1",
            BaseLearner::Ridge => "l2",
            BaseLearner::KernelRidge => "kr",
            BaseLearner::DecisionTree => "dt",
            BaseLearner::ExtraTrees => "et",
            BaseLearner::Dummy => "dummy",
        }
    }

    /// The default search grid.
    pub fn default_spec(self) -> RegressorSpec {
        match self {
            BaseLearner::Lasso => {
                RegressorSpec::grid([1e-3, 1e-2, 1e-1, 1.0].map(|alpha| Hyper::Lasso { alpha }).to_vec())
            }
            BaseLearner::Ridge => RegressorSpec::grid(
                [1e-2, 1e-1, 1.0, 10.0, 100.0].map(|alpha| Hyper::Ridge { alpha }).to_vec(),
            ),
            BaseLearner::KernelRidge => {
                let mut c = Vec::new();
                for alpha in [0.0, 1e-1, 1e-2, 1e-3] {
                    for gamma in [1e-2, 1e-1, 0.0, 1e1, 1e2] {
                        c.push(Hyper::KernelRidge { alpha, kernel: Kernel::Rbf { gamma } });
                        for degree in [2, 3, 4] {
                            c.push(Hyper::KernelRidge { alpha, kernel: Kernel::Poly { degree, gamma } });
                        }
                    }
                }
                RegressorSpec::grid(c)
            }
            BaseLearner::DecisionTree => RegressorSpec::grid(
                [5, 10, 20]
                    .map(|d| Hyper::DecisionTree { params: TreeParams::new(d, 1) })
                    .to_vec(),
            ),
            BaseLearner::ExtraTrees => {
                let mut c = Vec::new();
                for leaves in [Some(10), Some(20), Some(30), None] {
                    for depth in [5, 10, 20] {
                        c.push(Hyper::ExtraTrees {
                            params: TreeParams::new(depth, 1).with_max_leaf_nodes(leaves),
                            n_estimators: ET_N_ESTIMATORS,
                        });
                    }
                }
                RegressorSpec::grid(c)
            }
            BaseLearner::Dummy => RegressorSpec::single(Hyper::DummyMean),
        }
    }

    /// A single untuned setting, for fast fits.
    pub fn untuned(self) -> Hyper {
        match self {
            BaseLearner::Lasso => Hyper::Lasso { alpha: 1e-2 },
            BaseLearner::Ridge => Hyper::Ridge { alpha: 1.0 },
            BaseLearner::KernelRidge => Hyper::KernelRidge { alpha: 1e-1, kernel: Kernel::Rbf { gamma: 1e-1 } },
            BaseLearner::DecisionTree => Hyper::DecisionTree { params: TreeParams::new(UNBOUNDED_DEPTH, 1) },
            BaseLearner::ExtraTrees => Hyper::ExtraTrees {
                params: TreeParams::new(UNBOUNDED_DEPTH, 1),
                n_estimators: ET_N_ESTIMATORS,
            },
            BaseLearner::Dummy => Hyper::DummyMean,
        }
    }
}

impl fmt::Display for BaseLearner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BaseLearner {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BaseLearner::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| Error::UnknownEstimator(s.to_string()))
    }
}
