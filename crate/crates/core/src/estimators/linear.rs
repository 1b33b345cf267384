use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};

/// Per-column centring and scaling fitted on training data. Constant
/// columns keep scale 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &DMatrix<f64>) -> Self {
        let n = x.nrows() as f64;
        let mut mean = Vec::with_capacity(x.ncols());
        let mut scale = Vec::with_capacity(x.ncols());
        for col in x.column_iter() {
            let m = col.sum() / n;
            let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            mean.push(m);
            scale.push(if sd > 1e-12 * m.abs().max(1.0) { sd } else { 1.0 });
        }
        Self { mean, scale }
    }

    pub fn transform(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| (x[(i, j)] - self.mean[j]) / self.scale[j])
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

pub(crate) fn check_fit_inputs(x: &DMatrix<f64>, y: &[f64]) -> Result<()> {
    check_len(x.nrows(), y.len())?;
    if y.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(())
}

pub(crate) fn check_predict_dim(expected: usize, x: &DMatrix<f64>) -> Result<()> {
    if x.ncols() != expected {
        return Err(Error::Validation(format!(
            "model fitted on {expected} features, got {}",
            x.ncols()
        )));
    }
    Ok(())
}

fn mean(y: &[f64]) -> f64 {
    y.iter().sum::<f64>() / y.len() as f64
}

/// Linear model in standardized coordinates with an unpenalized intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    std: Standardizer,
    weights: DVector<f64>,
    y_mean: f64,
}

impl LinearModel {
    /// Weights in the standardized covariate space.
    pub fn standardized_weights(&self) -> &DVector<f64> {
        &self.weights
    }

    /// Coefficients on the original covariate scale.
    pub fn coefficients(&self) -> Vec<f64> {
        (0..self.std.dim())
            .map(|j| self.weights[j] / self.std.scale[j])
            .collect()
    }

    pub fn intercept(&self) -> f64 {
        self.y_mean
            - (0..self.std.dim())
                .map(|j| self.weights[j] * self.std.mean[j] / self.std.scale[j])
                .sum::<f64>()
    }

    pub fn standardizer(&self) -> &Standardizer {
        &self.std
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        check_predict_dim(self.std.dim(), x)?;
        let xs = self.std.transform(x);
        Ok((xs * &self.weights).iter().map(|v| v + self.y_mean).collect())
    }
}

/// Ridge regression, `min ||y - b - Xw||^2 + alpha ||w||^2`, solved through
/// the normal equations. `alpha = 0` falls back to the minimum-norm least
/// squares solution.
pub fn fit_ridge(x: &DMatrix<f64>, y: &[f64], alpha: f64) -> Result<LinearModel> {
    check_fit_inputs(x, y)?;
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidParameter(format!("ridge alpha = {alpha}")));
    }
    let std = Standardizer::fit(x);
    let xs = std.transform(x);
    let y_mean = mean(y);
    let yc = DVector::from_iterator(y.len(), y.iter().map(|v| v - y_mean));
    let d = xs.ncols();
    let weights = if d == 0 {
        DVector::zeros(0)
    } else if alpha == 0.0 {
        lstsq(&xs, &yc)?
    } else {
        let mut gram = xs.transpose() * &xs;
        for j in 0..d {
            gram[(j, j)] += alpha;
        }
        let rhs = xs.transpose() * &yc;
        match gram.clone().cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => lstsq(&gram, &rhs)?,
        }
    };
    Ok(LinearModel { std, weights, y_mean })
}

fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let eps = smax * a.nrows().max(a.ncols()) as f64 * f64::EPSILON;
    svd.solve(b, eps)
        .map_err(|e| Error::Singular(format!("least squares: {e}")))
}

/// Convergence settings for coordinate descent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LassoConfig {
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for LassoConfig {
    fn default() -> Self {
        Self { tol: 1e-6, max_sweeps: 10_000 }
    }
}

/// Lasso fit plus the penalized objective after every sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct LassoTrace {
    pub model: LinearModel,
    pub objective: Vec<f64>,
    pub sweeps: usize,
    pub converged: bool,
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// `(1/2n) ||r||^2 + alpha ||w||_1` in standardized coordinates.
fn lasso_objective(resid: &DVector<f64>, w: &DVector<f64>, alpha: f64) -> f64 {
    resid.norm_squared() / (2.0 * resid.len() as f64) + alpha * w.iter().map(|v| v.abs()).sum::<f64>()
}

/// Lasso, `min (1/2n) ||y - b - Xw||^2 + alpha ||w||_1` over standardized
/// covariates, by cyclic coordinate descent.
pub fn fit_lasso(x: &DMatrix<f64>, y: &[f64], alpha: f64) -> Result<LinearModel> {
    fit_lasso_traced(x, y, alpha, LassoConfig::default()).map(|t| t.model)
}

pub fn fit_lasso_traced(
    x: &DMatrix<f64>,
    y: &[f64],
    alpha: f64,
    cfg: LassoConfig,
) -> Result<LassoTrace> {
    check_fit_inputs(x, y)?;
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidParameter(format!("lasso alpha = {alpha}")));
    }
    let std = Standardizer::fit(x);
    let xs = std.transform(x);
    let n = y.len() as f64;
    let y_mean = mean(y);
    let mut resid = DVector::from_iterator(y.len(), y.iter().map(|v| v - y_mean));
    let d = xs.ncols();
    let col_sq: Vec<f64> = xs.column_iter().map(|c| c.norm_squared() / n).collect();
    let mut w = DVector::zeros(d);
    let mut objective = Vec::new();
    let mut converged = d == 0;
    let mut sweeps = 0;
    while !converged && sweeps < cfg.max_sweeps {
        sweeps += 1;
        let mut max_change = 0.0f64;
        for j in 0..d {
            if col_sq[j] == 0.0 {
                continue;
            }
            let col = xs.column(j);
            let old = w[j];
            let rho = col.dot(&resid) / n + col_sq[j] * old;
            let new = soft_threshold(rho, alpha) / col_sq[j];
            if new != old {
                resid.axpy(old - new, &col, 1.0);
                w[j] = new;
                max_change = max_change.max((new - old).abs());
            }
        }
        objective.push(lasso_objective(&resid, &w, alpha));
        converged = max_change < cfg.tol;
    }
    Ok(LassoTrace {
        model: LinearModel { std, weights: w, y_mean },
        objective,
        sweeps,
        converged,
    })
}
