use nalgebra::DMatrix;
use serde::Serialize;

use super::propensity::PropensityScore;
use super::regressor::RegressorSpec;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::rng::derive_seed;

/// Per-unit effect predictions for an evaluation set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectEstimate {
    pub ite_hat: Vec<f64>,
    pub ate_hat: f64,
    pub y1_hat: Option<Vec<f64>>,
    pub y0_hat: Option<Vec<f64>>,
}

impl EffectEstimate {
    pub fn from_effects(ite_hat: Vec<f64>) -> Self {
        let ate_hat = mean(&ite_hat);
        Self { ite_hat, ate_hat, y1_hat: None, y0_hat: None }
    }

    pub fn from_outcomes(y1_hat: Vec<f64>, y0_hat: Vec<f64>) -> Self {
        let ite: Vec<f64> = y1_hat.iter().zip(&y0_hat).map(|(a, b)| a - b).collect();
        Self {
            y1_hat: Some(y1_hat),
            y0_hat: Some(y0_hat),
            ..Self::from_effects(ite)
        }
    }

    pub fn len(&self) -> usize {
        self.ite_hat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ite_hat.is_empty()
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn check_eval(train: &Dataset, x_eval: &DMatrix<f64>) -> Result<()> {
    if x_eval.ncols() != train.d() {
        return Err(Error::Validation(format!(
            "evaluation covariates have {} columns, training data {}",
            x_eval.ncols(),
            train.d()
        )));
    }
    Ok(())
}

fn with_treatment(x: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
    let d = x.ncols();
    x.clone().insert_column(d, t)
}

/// One regressor on covariates plus the treatment indicator, queried with
/// the indicator forced to 1 and to 0.
pub fn s_learner(train: &Dataset, base: &RegressorSpec, x_eval: &DMatrix<f64>, seed: u64) -> Result<EffectEstimate> {
    check_eval(train, x_eval)?;
    let model = base.fit(&train.covariates_with_treatment(), train.outcome(), derive_seed(seed, ["s"]))?;
    let y1 = model.predict(&with_treatment(x_eval, 1.0))?;
    let y0 = model.predict(&with_treatment(x_eval, 0.0))?;
    Ok(EffectEstimate::from_outcomes(y1, y0))
}

struct GroupData {
    x1: DMatrix<f64>,
    y1: Vec<f64>,
    x0: DMatrix<f64>,
    y0: Vec<f64>,
}

fn groups(train: &Dataset) -> Result<GroupData> {
    let (treated, control) = train.group_indices();
    if treated.is_empty() {
        return Err(Error::DegenerateTreatment("treated"));
    }
    if control.is_empty() {
        return Err(Error::DegenerateTreatment("control"));
    }
    let x = train.covariates();
    let y = train.outcome();
    Ok(GroupData {
        x1: x.select_rows(&treated),
        y1: treated.iter().map(|&i| y[i]).collect(),
        x0: x.select_rows(&control),
        y0: control.iter().map(|&i| y[i]).collect(),
    })
}

/// One regressor per treatment group.
pub fn t_learner(train: &Dataset, base: &RegressorSpec, x_eval: &DMatrix<f64>, seed: u64) -> Result<EffectEstimate> {
    check_eval(train, x_eval)?;
    let g = groups(train)?;
    let (m1, m0) = rayon::join(
        || base.fit(&g.x1, &g.y1, derive_seed(seed, ["mu1"])),
        || base.fit(&g.x0, &g.y0, derive_seed(seed, ["mu0"])),
    );
    Ok(EffectEstimate::from_outcomes(m1?.predict(x_eval)?, m0?.predict(x_eval)?))
}

/// Imputed-effect learner: T-learner outcome models, per-group effect
/// models on the imputed differences, blended by the propensity score as
/// `e * tau0 + (1 - e) * tau1`.
pub fn x_learner(
    train: &Dataset,
    base: &RegressorSpec,
    propensity: &dyn PropensityScore,
    x_eval: &DMatrix<f64>,
    seed: u64,
) -> Result<EffectEstimate> {
    check_eval(train, x_eval)?;
    let g = groups(train)?;
    let (m1, m0) = rayon::join(
        || base.fit(&g.x1, &g.y1, derive_seed(seed, ["mu1"])),
        || base.fit(&g.x0, &g.y0, derive_seed(seed, ["mu0"])),
    );
    let (m1, m0) = (m1?, m0?);
    let d1: Vec<f64> = g.y1.iter().zip(m0.predict(&g.x1)?).map(|(y, p)| y - p).collect();
    let d0: Vec<f64> = m1.predict(&g.x0)?.iter().zip(&g.y0).map(|(p, y)| p - y).collect();
    let (tau1, tau0) = rayon::join(
        || base.fit(&g.x1, &d1, derive_seed(seed, ["tau1"])),
        || base.fit(&g.x0, &d0, derive_seed(seed, ["tau0"])),
    );
    let t1 = tau1?.predict(x_eval)?;
    let t0 = tau0?.predict(x_eval)?;
    let e = propensity.propensity(x_eval)?;
    let ite = (0..x_eval.nrows())
        .map(|i| e[i] * t0[i] + (1.0 - e[i]) * t1[i])
        .collect();
    Ok(EffectEstimate::from_effects(ite))
}
