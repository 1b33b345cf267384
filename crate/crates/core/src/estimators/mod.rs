//! Base regressors, meta-learners and double machine learning.

mod dml;
mod eval;
mod kernel;
mod linear;
mod meta;
mod propensity;
mod regressor;

use std::borrow::Cow;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use dml::{assign_folds, dml, dml_fit, DmlFit, DEFAULT_DML_FOLDS};
pub use eval::{evaluate, EvalInputs, MetricKind};
pub use kernel::{fit_kernel_ridge, Kernel, KernelRidge};
pub use linear::{fit_lasso, fit_lasso_traced, fit_ridge, LassoConfig, LassoTrace, LinearModel, Standardizer};
pub use meta::{s_learner, t_learner, x_learner, EffectEstimate};
pub use propensity::{
    fit_propensity, fit_propensity_with, ConstantPropensity, LogisticObjective, PropensityConfig, PropensityModel,
    PropensityScore,
};
pub use regressor::{BaseLearner, Hyper, Regressor, RegressorSpec, CV_FOLDS, ET_N_ESTIMATORS, UNBOUNDED_DEPTH};

use crate::augment::{augment, PlanOverrides, Variant};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::rng::derive_seed;

/// How a base learner is turned into an effect estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// The base learner alone, with the treatment as an extra feature.
    Plain,
    TLearner,
    XLearner,
    Dml,
    /// Forest-partitioned augmentation, then the plain learner.
    Degef,
}

impl Method {
    fn prefix(self) -> Option<&'static str> {
        match self {
            Method::Plain => None,
            Method::TLearner => Some("tl"),
            Method::XLearner => Some("xl"),
            Method::Dml => Some("dml"),
            Method::Degef => Some("degef"),
        }
    }
}

/// A named estimator such as `et`, `tl-et` or `degef-l2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct EstimatorSpec {
    pub method: Method,
    pub base: BaseLearner,
}

impl EstimatorSpec {
    pub fn plain(base: BaseLearner) -> Self {
        Self { method: Method::Plain, base }
    }

    pub fn is_base(&self) -> bool {
        self.method == Method::Plain
    }
}

impl fmt::Display for EstimatorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.method.prefix() {
            Some(p) => write!(f, "{p}-{}", self.base),
            None => write!(f, "{}", self.base),
        }
    }
}

impl FromStr for EstimatorSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let unknown = || Error::UnknownEstimator(s.to_string());
        let s_trim = s.trim();
        let (method, rest) = match s_trim.split_once('-') {
            Some(("tl", r)) => (Method::TLearner, r),
            Some(("xl", r)) => (Method::XLearner, r),
            Some(("dml", r)) => (Method::Dml, r),
            Some(("degef", r)) => (Method::Degef, r),
            Some(_) => return Err(unknown()),
            None => (Method::Plain, s_trim),
        };
        let base = rest.parse::<BaseLearner>().map_err(|_| unknown())?;
        Ok(Self { method, base })
    }
}

impl TryFrom<String> for EstimatorSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<EstimatorSpec> for String {
    fn from(e: EstimatorSpec) -> String {
        e.to_string()
    }
}

/// Settings shared by every estimator in a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub dml_folds: usize,
    /// Augmentation applied to the training data of estimators that do not
    /// already augment.
    pub augment: Option<Variant>,
    pub plan: PlanOverrides,
    /// Search the default hyperparameter grid; otherwise one fixed setting.
    pub tuned: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            dml_folds: DEFAULT_DML_FOLDS,
            augment: None,
            plan: PlanOverrides::default(),
            tuned: true,
        }
    }
}

impl FitOptions {
    pub fn regressor(&self, base: BaseLearner) -> RegressorSpec {
        if self.tuned {
            base.default_spec()
        } else {
            RegressorSpec::single(base.untuned())
        }
    }

    /// The training data an estimator actually sees.
    pub fn training_data<'a>(&self, spec: &EstimatorSpec, train: &'a Dataset, seed: u64) -> Result<Cow<'a, Dataset>> {
        let variant = match spec.method {
            Method::Degef => Some(Variant::Forest),
            _ => self.augment,
        };
        match variant {
            None => Ok(Cow::Borrowed(train)),
            Some(v) => {
                let plan = self.plan.plan(train, v, derive_seed(seed, ["augment"]));
                Ok(Cow::Owned(augment(train, &plan)?.merged))
            }
        }
    }
}

/// Fits `spec` on `train` and predicts effects for `x_eval`.
pub fn fit_effect(
    spec: &EstimatorSpec,
    train: &Dataset,
    x_eval: &DMatrix<f64>,
    opts: &FitOptions,
    seed: u64,
) -> Result<EffectEstimate> {
    let data = opts.training_data(spec, train, seed)?;
    let base = opts.regressor(spec.base);
    let fit_seed = derive_seed(seed, ["fit"]);
    match spec.method {
        Method::Plain | Method::Degef => s_learner(&data, &base, x_eval, fit_seed),
        Method::TLearner => t_learner(&data, &base, x_eval, fit_seed),
        Method::XLearner => {
            let e = fit_propensity(data.covariates(), data.treatment())?;
            x_learner(&data, &base, &e, x_eval, fit_seed)
        }
        Method::Dml => dml(&data, &base, opts.dml_folds, x_eval, fit_seed),
    }
}
