use nalgebra::{DMatrix, DVector};

use super::linear::{check_predict_dim, Standardizer};
use crate::error::{check_len, Error, Result};

/// Anything that yields `P(t = 1 | x)` per row.
pub trait PropensityScore: Sync {
    fn propensity(&self, x: &DMatrix<f64>) -> Result<Vec<f64>>;
}

/// Same score for every row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantPropensity(pub f64);

impl PropensityScore for ConstantPropensity {
    fn propensity(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        Ok(vec![self.0; x.nrows()])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropensityConfig {
    /// L2 strength on the non-intercept weights.
    pub lambda: f64,
    pub clip: f64,
    pub grad_tol: f64,
    pub max_iter: usize,
}

impl Default for PropensityConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-3,
            clip: 0.01,
            grad_tol: 1e-6,
            max_iter: 200,
        }
    }
}

/// Mean log-loss plus `(lambda/2) ||w||^2` over a standardized design, with
/// `params = [intercept, w...]`.
#[derive(Debug, Clone, Copy)]
pub struct LogisticObjective<'a> {
    pub xs: &'a DMatrix<f64>,
    pub t: &'a [f64],
    pub lambda: f64,
}

fn log1p_exp(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl LogisticObjective<'_> {
    fn margins(&self, params: &DVector<f64>) -> DVector<f64> {
        let w = params.rows(1, params.len() - 1);
        (self.xs * w).add_scalar(params[0])
    }

    pub fn value(&self, params: &DVector<f64>) -> f64 {
        let z = self.margins(params);
        let n = self.t.len() as f64;
        let loss: f64 = z.iter().zip(self.t).map(|(&z, &t)| log1p_exp(z) - t * z).sum::<f64>() / n;
        let w = params.rows(1, params.len() - 1);
        loss + 0.5 * self.lambda * w.norm_squared()
    }

    pub fn gradient(&self, params: &DVector<f64>) -> DVector<f64> {
        let z = self.margins(params);
        let n = self.t.len() as f64;
        let r = DVector::from_iterator(z.len(), z.iter().zip(self.t).map(|(&z, &t)| sigmoid(z) - t));
        let mut g = DVector::zeros(params.len());
        g[0] = r.sum() / n;
        let gw = self.xs.transpose() * &r / n + params.rows(1, params.len() - 1) * self.lambda;
        g.rows_mut(1, params.len() - 1).copy_from(&gw);
        g
    }

    fn hessian(&self, params: &DVector<f64>) -> DMatrix<f64> {
        let z = self.margins(params);
        let n = self.t.len() as f64;
        let p = params.len();
        let mut h = DMatrix::zeros(p, p);
        for i in 0..self.xs.nrows() {
            let s = sigmoid(z[i]);
            let wgt = s * (1.0 - s) / n;
            let mut row = Vec::with_capacity(p);
            row.push(1.0);
            row.extend(self.xs.row(i).iter().copied());
            for a in 0..p {
                for b in 0..=a {
                    h[(a, b)] += wgt * row[a] * row[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                h[(b, a)] = h[(a, b)];
            }
            if a > 0 {
                h[(a, a)] += self.lambda;
            }
        }
        h
    }
}

/// L2-regularized logistic regression on standardized covariates, with
/// clipped outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct PropensityModel {
    std: Standardizer,
    params: DVector<f64>,
    cfg: PropensityConfig,
    grad_norm: f64,
}

pub fn fit_propensity(x: &DMatrix<f64>, t: &[bool]) -> Result<PropensityModel> {
    fit_propensity_with(x, t, PropensityConfig::default())
}

pub fn fit_propensity_with(x: &DMatrix<f64>, t: &[bool], cfg: PropensityConfig) -> Result<PropensityModel> {
    check_len(x.nrows(), t.len())?;
    if !t.iter().any(|&v| v) {
        return Err(Error::DegenerateTreatment("treated"));
    }
    if t.iter().all(|&v| v) {
        return Err(Error::DegenerateTreatment("control"));
    }
    let std = Standardizer::fit(x);
    let xs = std.transform(x);
    let tf: Vec<f64> = t.iter().map(|&v| f64::from(u8::from(v))).collect();
    let obj = LogisticObjective { xs: &xs, t: &tf, lambda: cfg.lambda };
    let mut params = DVector::zeros(x.ncols() + 1);
    let mut value = obj.value(&params);
    let mut grad = obj.gradient(&params);
    for _ in 0..cfg.max_iter {
        if grad.norm() < cfg.grad_tol {
            break;
        }
        let h = obj.hessian(&params);
        let step = match h.cholesky() {
            Some(ch) => ch.solve(&grad),
            None => grad.clone(),
        };
        let slope = grad.dot(&step);
        let mut scale = 1.0;
        let mut moved = false;
        while scale > 1e-12 {
            let cand = &params - &step * scale;
            let v = obj.value(&cand);
            if v <= value - 1e-4 * scale * slope {
                params = cand;
                value = v;
                moved = true;
                break;
            }
            scale *= 0.5;
        }
        grad = obj.gradient(&params);
        if !moved {
            break;
        }
    }
    Ok(PropensityModel { std, params, cfg, grad_norm: grad.norm() })
}

impl PropensityModel {
    /// `[intercept, w...]` in standardized coordinates.
    pub fn params(&self) -> &DVector<f64> {
        &self.params
    }

    pub fn standardizer(&self) -> &Standardizer {
        &self.std
    }

    pub fn config(&self) -> PropensityConfig {
        self.cfg
    }

    /// Gradient norm at the returned parameters.
    pub fn final_gradient_norm(&self) -> f64 {
        self.grad_norm
    }

    /// Unclipped probabilities.
    pub fn raw_probabilities(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        check_predict_dim(self.std.dim(), x)?;
        let xs = self.std.transform(x);
        let w = self.params.rows(1, self.params.len() - 1);
        Ok((xs * w).iter().map(|z| sigmoid(z + self.params[0])).collect())
    }
}

impl PropensityScore for PropensityModel {
    fn propensity(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        let c = self.cfg.clip;
        Ok(self
            .raw_probabilities(x)?
            .into_iter()
            .map(|p| p.clamp(c, 1.0 - c))
            .collect())
    }
}
