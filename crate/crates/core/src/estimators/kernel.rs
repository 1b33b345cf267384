use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::linear::{check_fit_inputs, check_predict_dim, Standardizer};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kernel", rename_all = "lowercase")]
pub enum Kernel {
    /// `exp(-gamma ||a - b||^2)`
    Rbf { gamma: f64 },
    /// `(gamma <a, b> + 1)^degree`
    Poly { degree: u32, gamma: f64 },
}

impl Kernel {
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            Kernel::Rbf { gamma } => {
                let d2: f64 = a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum();
                (-gamma * d2).exp()
            }
            Kernel::Poly { degree, gamma } => {
                let dot: f64 = a.iter().zip(b).map(|(u, v)| u * v).sum();
                (gamma * dot + 1.0).powi(degree as i32)
            }
        }
    }

    fn gram(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
        let ra: Vec<Vec<f64>> = a.row_iter().map(|r| r.iter().copied().collect()).collect();
        let rb: Vec<Vec<f64>> = b.row_iter().map(|r| r.iter().copied().collect()).collect();
        DMatrix::from_fn(ra.len(), rb.len(), |i, j| self.eval(&ra[i], &rb[j]))
    }
}

/// Kernel ridge regression on standardized covariates and a centred
/// outcome: dual coefficients `(K + alpha I)^-1 y`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelRidge {
    std: Standardizer,
    support: DMatrix<f64>,
    dual: DVector<f64>,
    y_mean: f64,
    kernel: Kernel,
    alpha: f64,
}

pub fn fit_kernel_ridge(x: &DMatrix<f64>, y: &[f64], alpha: f64, kernel: Kernel) -> Result<KernelRidge> {
    check_fit_inputs(x, y)?;
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidParameter(format!("kernel ridge alpha = {alpha}")));
    }
    let std = Standardizer::fit(x);
    let support = std.transform(x);
    let y_mean = y.iter().sum::<f64>() / y.len() as f64;
    let yc = DVector::from_iterator(y.len(), y.iter().map(|v| v - y_mean));
    let mut k = kernel.gram(&support, &support);
    if k.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular("kernel matrix has non-finite entries".into()));
    }
    for i in 0..k.nrows() {
        k[(i, i)] += alpha;
    }
    let chol = if alpha > 0.0 { k.clone().cholesky() } else { None };
    let dual = match chol {
        Some(ch) => ch.solve(&yc),
        None => pinv_solve(k, &yc),
    };
    Ok(KernelRidge { std, support, dual, y_mean, kernel, alpha })
}

/// Solves a symmetric system through its eigendecomposition, dropping
/// numerically zero eigenvalues.
fn pinv_solve(a: DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = a.nrows();
    let eig = a.symmetric_eigen();
    let lmax = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let cutoff = lmax * n as f64 * f64::EPSILON;
    let proj = eig.eigenvectors.transpose() * b;
    let scaled = DVector::from_iterator(
        n,
        proj.iter()
            .zip(eig.eigenvalues.iter())
            .map(|(p, l)| if l.abs() > cutoff { p / l } else { 0.0 }),
    );
    eig.eigenvectors * scaled
}

impl KernelRidge {
    pub fn kernel(&self) -> Kernel {
        self.kernel
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn n_features(&self) -> usize {
        self.std.dim()
    }

    pub fn dual_coefficients(&self) -> &DVector<f64> {
        &self.dual
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        check_predict_dim(self.std.dim(), x)?;
        let xs = self.std.transform(x);
        let k = self.kernel.gram(&xs, &self.support);
        Ok((k * &self.dual).iter().map(|v| v + self.y_mean).collect())
    }
}
