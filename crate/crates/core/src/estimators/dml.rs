use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::meta::EffectEstimate;
use super::propensity::{fit_propensity, PropensityScore};
use super::regressor::RegressorSpec;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed};

pub const DEFAULT_DML_FOLDS: usize = 2;
const MIN_TREATMENT_VARIATION: f64 = 1e-10;

/// Cross-fitted residual-on-residual coefficient with its residuals.
#[derive(Debug, Clone, PartialEq)]
pub struct DmlFit {
    pub theta: f64,
    pub y_resid: Vec<f64>,
    pub t_resid: Vec<f64>,
    pub folds: Vec<usize>,
}

/// Fold index of every row, balanced and shuffled.
pub fn assign_folds(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_from_seed(seed));
    let mut fold = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold[i] = pos % k;
    }
    fold
}

pub fn dml_fit(train: &Dataset, outcome_base: &RegressorSpec, k: usize, seed: u64) -> Result<DmlFit> {
    let n = train.n();
    if k < 2 {
        return Err(Error::InvalidParameter("DML needs at least 2 folds".into()));
    }
    if n < 2 * k {
        return Err(Error::InvalidParameter(format!("DML with {k} folds needs n >= {}", 2 * k)));
    }
    let folds = assign_folds(n, k, derive_seed(seed, ["folds"]));
    let x = train.covariates();
    let y = train.outcome();
    let t = train.treatment();
    let per_fold = (0..k)
        .into_par_iter()
        .map(|f| -> Result<Vec<(usize, f64, f64)>> {
            let out: Vec<usize> = (0..n).filter(|&i| folds[i] != f).collect();
            let inn: Vec<usize> = (0..n).filter(|&i| folds[i] == f).collect();
            let t_out: Vec<bool> = out.iter().map(|&i| t[i]).collect();
            if !t_out.iter().any(|&v| v) {
                return Err(Error::DegenerateTreatment("treated"));
            }
            if t_out.iter().all(|&v| v) {
                return Err(Error::DegenerateTreatment("control"));
            }
            let x_out = x.select_rows(&out);
            let y_out: Vec<f64> = out.iter().map(|&i| y[i]).collect();
            let m = outcome_base.fit(&x_out, &y_out, derive_seed(seed, ["m", &f.to_string()]))?;
            let e = fit_propensity(&x_out, &t_out)?;
            let x_in = x.select_rows(&inn);
            let m_hat = m.predict(&x_in)?;
            let e_hat = e.propensity(&x_in)?;
            Ok(inn
                .iter()
                .enumerate()
                .map(|(j, &i)| (i, y[i] - m_hat[j], f64::from(u8::from(t[i])) - e_hat[j]))
                .collect())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut y_resid = vec![0.0; n];
    let mut t_resid = vec![0.0; n];
    for (i, yr, tr) in per_fold.into_iter().flatten() {
        y_resid[i] = yr;
        t_resid[i] = tr;
    }
    let denom: f64 = t_resid.iter().map(|v| v * v).sum();
    if denom < MIN_TREATMENT_VARIATION {
        return Err(Error::NoTreatmentVariation);
    }
    let num: f64 = t_resid.iter().zip(&y_resid).map(|(a, b)| a * b).sum();
    Ok(DmlFit { theta: num / denom, y_resid, t_resid, folds })
}

/// Partially linear double machine learning: a constant effect for every
/// evaluation row.
pub fn dml(
    train: &Dataset,
    outcome_base: &RegressorSpec,
    k: usize,
    x_eval: &DMatrix<f64>,
    seed: u64,
) -> Result<EffectEstimate> {
    if x_eval.ncols() != train.d() {
        return Err(Error::Validation(format!(
            "evaluation covariates have {} columns, training data {}",
            x_eval.ncols(),
            train.d()
        )));
    }
    let fit = dml_fit(train, outcome_base, k, seed)?;
    Ok(EffectEstimate::from_effects(vec![fit.theta; x_eval.nrows()]))
}
