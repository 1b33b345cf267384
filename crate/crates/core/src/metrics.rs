//! Effect-estimation error metrics and replication aggregation.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

fn check_four(a: &[f64], b: &[f64], c: &[f64], d: &[f64]) -> Result<()> {
    check_len(a.len(), b.len())?;
    check_len(a.len(), c.len())?;
    check_len(a.len(), d.len())?;
    if a.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(())
}

fn mean(v: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = v.len() as f64;
    v.sum::<f64>() / n
}

/// Root mean squared error of the predicted individual effects.
pub fn pehe(y1_hat: &[f64], y0_hat: &[f64], y1: &[f64], y0: &[f64]) -> Result<f64> {
    check_four(y1_hat, y0_hat, y1, y0)?;
    let mse = mean((0..y1.len()).map(|i| {
        let e = (y1_hat[i] - y0_hat[i]) - (y1[i] - y0[i]);
        e * e
    }));
    Ok(mse.sqrt())
}

/// Absolute difference between predicted and true average effects.
pub fn ate_error(y1_hat: &[f64], y0_hat: &[f64], y1: &[f64], y0: &[f64]) -> Result<f64> {
    check_four(y1_hat, y0_hat, y1, y0)?;
    let pred = mean((0..y1.len()).map(|i| y1_hat[i] - y0_hat[i]));
    let truth = mean((0..y1.len()).map(|i| y1[i] - y0[i]));
    Ok((pred - truth).abs())
}

/// [`pehe`] for callers that hold effects rather than outcome pairs.
pub fn pehe_effects(ite_hat: &[f64], ite_true: &[f64]) -> Result<f64> {
    let zeros = vec![0.0; ite_hat.len()];
    let zeros_true = vec![0.0; ite_true.len()];
    pehe(ite_hat, &zeros, ite_true, &zeros_true)
}

/// [`ate_error`] for callers that hold effects rather than outcome pairs.
pub fn ate_error_effects(ite_hat: &[f64], ite_true: &[f64]) -> Result<f64> {
    let zeros = vec![0.0; ite_hat.len()];
    let zeros_true = vec![0.0; ite_true.len()];
    ate_error(ite_hat, &zeros, ite_true, &zeros_true)
}

/// Error on the average effect on the treated. `ite_hat_treated` holds one
/// prediction per index in `treated_idx`; the true ATT contrasts factual
/// outcomes of the treated with those of experimental controls.
pub fn att_error(
    ite_hat_treated: &[f64],
    outcomes: &[f64],
    treated_idx: &[usize],
    control_experimental_idx: &[usize],
) -> Result<f64> {
    if treated_idx.is_empty() {
        return Err(Error::Validation("ATT needs at least one treated unit".into()));
    }
    if control_experimental_idx.is_empty() {
        return Err(Error::Validation(
            "ATT needs at least one experimental control unit".into(),
        ));
    }
    check_len(treated_idx.len(), ite_hat_treated.len())?;
    let n = outcomes.len();
    if let Some(&bad) = treated_idx
        .iter()
        .chain(control_experimental_idx)
        .find(|&&i| i >= n)
    {
        return Err(Error::Validation(format!("index {bad} out of range for {n} outcomes")));
    }
    let att = mean(treated_idx.iter().map(|&i| outcomes[i]))
        - mean(control_experimental_idx.iter().map(|&i| outcomes[i]));
    let pred = mean(ite_hat_treated.iter().copied());
    Ok((att - pred).abs())
}

/// Policy risk of treating exactly the units with a positive predicted
/// effect. An empty policy group contributes nothing.
pub fn policy_risk(ite_hat: &[f64], y1: &[f64], y0: &[f64]) -> Result<f64> {
    check_len(ite_hat.len(), y1.len())?;
    check_len(ite_hat.len(), y0.len())?;
    if ite_hat.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = ite_hat.len() as f64;
    let (mut s1, mut c1, mut s0, mut c0) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..ite_hat.len() {
        if ite_hat[i] > 0.0 {
            s1 += y1[i];
            c1 += 1;
        } else {
            s0 += y0[i];
            c0 += 1;
        }
    }
    let term = |s: f64, c: usize| if c == 0 { 0.0 } else { s / c as f64 * (c as f64 / n) };
    Ok(1.0 - (term(s1, c1) + term(s0, c0)))
}

/// Policy risk from a randomized sample with factual outcomes only: the
/// value of each policy arm is estimated on units whose assigned treatment
/// agrees with the policy.
pub fn policy_risk_experimental(ite_hat: &[f64], treatment: &[bool], outcome: &[f64]) -> Result<f64> {
    check_len(ite_hat.len(), treatment.len())?;
    check_len(ite_hat.len(), outcome.len())?;
    if ite_hat.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = ite_hat.len() as f64;
    let treat: Vec<bool> = ite_hat.iter().map(|&v| v > 0.0).collect();
    let p1 = treat.iter().filter(|&&p| p).count() as f64 / n;
    let arm_mean = |policy: bool| {
        let vals: Vec<f64> = (0..ite_hat.len())
            .filter(|&i| treat[i] == policy && treatment[i] == policy)
            .map(|i| outcome[i])
            .collect();
        if vals.is_empty() {
            0.0
        } else {
            vals.iter().sum::<f64>() / vals.len() as f64
        }
    };
    Ok(1.0 - (arm_mean(true) * p1 + arm_mean(false) * (1.0 - p1)))
}

/// Percentage change of `advanced` relative to `base`; `None` when the base
/// is zero.
pub fn relative_delta(advanced: f64, base: f64) -> Option<f64> {
    if base == 0.0 || !base.is_finite() || !advanced.is_finite() {
        None
    } else {
        Some((advanced - base) / base * 100.0)
    }
}

/// Mean and normal-approximation 95% half-width over replications.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub half_width: f64,
    pub n: usize,
    /// False for a single value, whose half-width is reported as 0.
    pub has_ci: bool,
}

pub const CI_Z: f64 = 1.96;

pub fn aggregate(values: &[f64]) -> Result<Aggregate> {
    if values.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let m = values.len();
    let mean = values.iter().sum::<f64>() / m as f64;
    if m == 1 {
        return Ok(Aggregate { mean, half_width: 0.0, n: 1, has_ci: false });
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
    Ok(Aggregate {
        mean,
        half_width: CI_Z * var.sqrt() / (m as f64).sqrt(),
        n: m,
        has_ci: true,
    })
}
