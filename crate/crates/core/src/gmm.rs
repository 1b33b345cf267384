//! Full-covariance Gaussian mixtures: EM fitting, BIC selection, sampling.

use std::f64::consts::PI;
use std::ops::RangeInclusive;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct EmConfig {
    pub max_iter: usize,
    /// Absolute log-likelihood improvement below which EM stops.
    pub tol: f64,
    /// Diagonal regularisation, relative to the mean per-column variance of
    /// the training data.
    pub reg_scale: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            max_iter: 200,
            tol: 1e-4,
            reg_scale: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GmmModel {
    pub weights: Vec<f64>,
    #[serde(serialize_with = "ser_vectors")]
    pub means: Vec<DVector<f64>>,
    #[serde(serialize_with = "ser_matrices")]
    pub covariances: Vec<DMatrix<f64>>,
    /// Training log-likelihood of the final parameters.
    pub log_likelihood: f64,
    /// Log-likelihood after initialisation and after every EM iteration.
    pub trace: Vec<f64>,
    pub converged: bool,
    /// Diagonal term added to every covariance.
    pub reg: f64,
    pub seed: u64,
    #[serde(skip)]
    factors: Vec<Factor>,
}

#[derive(Debug, Clone)]
struct Factor {
    chol: Cholesky<f64, Dyn>,
    log_det: f64,
}

fn ser_vectors<S: serde::Serializer>(v: &[DVector<f64>], s: S) -> std::result::Result<S::Ok, S::Error> {
    let rows: Vec<Vec<f64>> = v.iter().map(|m| m.iter().copied().collect()).collect();
    serde::Serialize::serialize(&rows, s)
}

fn ser_matrices<S: serde::Serializer>(v: &[DMatrix<f64>], s: S) -> std::result::Result<S::Ok, S::Error> {
    let rows: Vec<Vec<Vec<f64>>> = v
        .iter()
        .map(|m| m.row_iter().map(|r| r.iter().copied().collect()).collect())
        .collect();
    serde::Serialize::serialize(&rows, s)
}

fn factor(cov: &DMatrix<f64>, reg: f64) -> Result<(DMatrix<f64>, Factor)> {
    if let Some(chol) = Cholesky::new(cov.clone()) {
        let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        return Ok((cov.clone(), Factor { chol, log_det }));
    }
    // one retry with a stronger ridge
    let mut bumped = cov.clone();
    for i in 0..bumped.nrows() {
        bumped[(i, i)] += 10.0 * reg;
    }
    let chol = Cholesky::new(bumped.clone()).ok_or_else(|| Error::Singular("component covariance".into()))?;
    let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    Ok((bumped, Factor { chol, log_det }))
}

impl GmmModel {
    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    fn from_parts(
        weights: Vec<f64>,
        means: Vec<DVector<f64>>,
        covs: Vec<DMatrix<f64>>,
        reg: f64,
        seed: u64,
    ) -> Result<Self> {
        let mut covariances = Vec::with_capacity(covs.len());
        let mut factors = Vec::with_capacity(covs.len());
        for c in &covs {
            let (c, f) = factor(c, reg)?;
            covariances.push(c);
            factors.push(f);
        }
        Ok(Self {
            weights,
            means,
            covariances,
            log_likelihood: f64::NEG_INFINITY,
            trace: Vec::new(),
            converged: false,
            reg,
            seed,
            factors,
        })
    }

    /// `ln N(z | mean_c, cov_c)`.
    pub fn component_log_density(&self, c: usize, z: &DVector<f64>) -> f64 {
        let diff = z - &self.means[c];
        let solved = self.factors[c]
            .chol
            .l_dirty()
            .solve_lower_triangular(&diff)
            .expect("triangular factor is non-singular");
        let p = z.len() as f64;
        -0.5 * (p * (2.0 * PI).ln() + self.factors[c].log_det + solved.norm_squared())
    }

    fn weighted_log_densities(&self, z: &DVector<f64>, out: &mut [f64]) -> f64 {
        for (c, o) in out.iter_mut().enumerate() {
            *o = if self.weights[c] > 0.0 {
                self.weights[c].ln() + self.component_log_density(c, z)
            } else {
                f64::NEG_INFINITY
            };
        }
        log_sum_exp(out)
    }

    /// Log-likelihood of every row of `z` under the mixture.
    pub fn log_likelihood_of(&self, z: &DMatrix<f64>) -> f64 {
        let mut buf = vec![0.0; self.k()];
        (0..z.nrows())
            .map(|i| self.weighted_log_densities(&row(z, i), &mut buf))
            .sum()
    }

    /// Number of free parameters: weights, means and full covariances.
    pub fn n_parameters(&self) -> usize {
        let (k, p) = (self.k(), self.dim());
        (k - 1) + k * p + k * p * (p + 1) / 2
    }

    /// `count` rows drawn from the mixture.
    pub fn sample_with_rng<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> DMatrix<f64> {
        let p = self.dim();
        let mut out = DMatrix::zeros(count, p);
        for i in 0..count {
            let c = self.draw_component(rng);
            let z = DVector::from_fn(p, |_, _| StandardNormal.sample(rng));
            let x = &self.means[c] + self.factors[c].chol.l_dirty().lower_triangle() * z;
            out.row_mut(i).copy_from(&x.transpose());
        }
        out
    }

    pub fn sample(&self, count: usize, seed: u64) -> DMatrix<f64> {
        self.sample_with_rng(count, &mut rng_from_seed(seed))
    }

    fn draw_component<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (c, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return c;
            }
        }
        // rounding left u above the final cumulative weight
        self.weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serialises")
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn row(z: &DMatrix<f64>, i: usize) -> DVector<f64> {
    z.row(i).transpose()
}

fn column_means(z: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_fn(z.ncols(), |j, _| z.column(j).mean())
}

/// Maximum-likelihood covariance (divides by m).
fn sample_covariance(z: &DMatrix<f64>, mean: &DVector<f64>) -> DMatrix<f64> {
    let m = z.nrows() as f64;
    let mut centred = z.clone();
    for mut r in centred.row_iter_mut() {
        r -= mean.transpose();
    }
    centred.transpose() * centred / m
}

fn add_diagonal(mut m: DMatrix<f64>, v: f64) -> DMatrix<f64> {
    for i in 0..m.nrows() {
        m[(i, i)] += v;
    }
    m
}

fn regularisation(z: &DMatrix<f64>, cfg: &EmConfig) -> f64 {
    let mean = column_means(z);
    let m = z.nrows() as f64;
    let mean_var = (0..z.ncols())
        .map(|j| z.column(j).iter().map(|v| (v - mean[j]).powi(2)).sum::<f64>() / m)
        .sum::<f64>()
        / z.ncols() as f64;
    if mean_var > 0.0 {
        cfg.reg_scale * mean_var
    } else {
        cfg.reg_scale
    }
}

/// k-means++ style seeding: first centre uniform, then proportional to the
/// squared distance to the nearest chosen centre.
fn seed_means<R: Rng + ?Sized>(z: &DMatrix<f64>, k: usize, rng: &mut R) -> Vec<DVector<f64>> {
    let m = z.nrows();
    let mut centres = vec![row(z, rng.random_range(0..m))];
    let mut d2: Vec<f64> = (0..m).map(|i| (row(z, i) - &centres[0]).norm_squared()).collect();
    while centres.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            d2.iter()
                .position(|&d| {
                    acc += d;
                    u < acc
                })
                .unwrap_or(m - 1)
        } else {
            rng.random_range(0..m)
        };
        let c = row(z, pick);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min((row(z, i) - &c).norm_squared());
        }
        centres.push(c);
    }
    centres
}

/// Fits a `k`-component mixture to the rows of `z` by EM.
pub fn fit_em(z: &DMatrix<f64>, k: usize, seed: u64, cfg: &EmConfig) -> Result<GmmModel> {
    let (m, p) = z.shape();
    if p == 0 {
        return Err(Error::InvalidParameter("data has no columns".into()));
    }
    if k == 0 {
        return Err(Error::InvalidParameter("k must be >= 1".into()));
    }
    if m < k {
        return Err(Error::InsufficientSamples { m, k });
    }
    let reg = regularisation(z, cfg);
    let mean = column_means(z);
    let pooled = add_diagonal(sample_covariance(z, &mean), reg);

    if k == 1 {
        let mut model = GmmModel::from_parts(vec![1.0], vec![mean], vec![pooled], reg, seed)?;
        model.log_likelihood = model.log_likelihood_of(z);
        model.trace = vec![model.log_likelihood];
        model.converged = true;
        return Ok(model);
    }

    let mut rng = rng_from_seed(seed);
    let means = seed_means(z, k, &mut rng);
    let mut model = GmmModel::from_parts(vec![1.0 / k as f64; k], means, vec![pooled; k], reg, seed)?;

    let rows: Vec<DVector<f64>> = (0..m).map(|i| row(z, i)).collect();
    let mut resp = DMatrix::<f64>::zeros(m, k);
    let mut buf = vec![0.0; k];
    let mut trace = Vec::new();
    let mut converged = false;
    let mut previous: Option<GmmModel> = None;
    for iter in 0..=cfg.max_iter {
        // E-step; also yields the log-likelihood of the current parameters
        let mut ll = 0.0;
        for (i, zi) in rows.iter().enumerate() {
            let lse = model.weighted_log_densities(zi, &mut buf);
            if !lse.is_finite() {
                return Err(Error::Singular("responsibility normalisation".into()));
            }
            ll += lse;
            for c in 0..k {
                resp[(i, c)] = (buf[c] - lse).exp();
            }
        }
        let improved = trace.last().map(|&prev| ll - prev);
        if matches!(improved, Some(d) if d < 0.0) {
            // the ridge term makes the M-step inexact; never accept a step
            // that lowers the likelihood
            model = previous.take().expect("previous parameters kept");
            converged = true;
            break;
        }
        trace.push(ll);
        if matches!(improved, Some(d) if d < cfg.tol) {
            converged = true;
            break;
        }
        if iter == cfg.max_iter {
            break;
        }

        // M-step
        let mut weights = Vec::with_capacity(k);
        let mut means = Vec::with_capacity(k);
        let mut covs = Vec::with_capacity(k);
        for c in 0..k {
            let rc = resp.column(c);
            let nk: f64 = rc.sum();
            weights.push(nk / m as f64);
            if nk <= 1e-10 {
                // an emptied component keeps its previous shape
                means.push(model.means[c].clone());
                covs.push(model.covariances[c].clone());
                continue;
            }
            let mu = z.transpose() * rc / nk;
            let mut cov = DMatrix::zeros(p, p);
            for (i, zi) in rows.iter().enumerate() {
                let d = zi - &mu;
                cov.ger(rc[i], &d, &d, 1.0);
            }
            cov /= nk;
            covs.push(add_diagonal(cov, reg));
            means.push(mu);
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        let next = GmmModel::from_parts(weights, means, covs, reg, seed)?;
        previous = Some(std::mem::replace(&mut model, next));
    }
    model.log_likelihood = *trace.last().expect("at least one E-step");
    model.trace = trace;
    model.converged = converged;
    Ok(model)
}

/// `q ln(m) - 2 LL` with `q` counting weights, means and full covariances.
/// Lower is better.
pub fn bic(model: &GmmModel, z: &DMatrix<f64>) -> f64 {
    let q = model.n_parameters() as f64;
    q * (z.nrows() as f64).ln() - 2.0 * model.log_likelihood_of(z)
}

/// Fits every feasible `k` (`k <= m`) in the range and keeps the lowest-BIC
/// model; ties go to the smaller `k`.
pub fn select_components(
    z: &DMatrix<f64>,
    k_range: RangeInclusive<usize>,
    seed: u64,
    cfg: &EmConfig,
) -> Result<GmmModel> {
    let m = z.nrows();
    let (lo, hi) = (*k_range.start(), *k_range.end());
    let mut best: Option<(f64, GmmModel)> = None;
    for k in k_range.filter(|&k| k >= 1 && k <= m) {
        let Ok(model) = fit_em(z, k, derive_seed(seed, ["k", &k.to_string()]), cfg) else {
            continue;
        };
        let score = bic(&model, z);
        if best.as_ref().is_none_or(|(b, _)| score < *b) {
            best = Some((score, model));
        }
    }
    best.map(|(_, m)| m)
        .ok_or(Error::NoFeasibleComponents { lo, hi, m })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::Normal;

    fn bimodal(m: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = rng_from_seed(seed);
        let n = Normal::new(0.0, 1.0).unwrap();
        DMatrix::from_fn(m, 1, |i, _| n.sample(&mut rng) + if i % 2 == 0 { 0.0 } else { 10.0 })
    }

    #[test]
    fn too_few_samples() {
        let z = DMatrix::from_element(2, 1, 1.0);
        assert!(matches!(
            fit_em(&z, 3, 0, &EmConfig::default()),
            Err(Error::InsufficientSamples { m: 2, k: 3 })
        ));
    }

    #[test]
    fn recovers_two_separated_modes() {
        let z = bimodal(200, 5);
        let g = fit_em(&z, 2, 1, &EmConfig::default()).unwrap();
        let mut mu: Vec<f64> = g.means.iter().map(|m| m[0]).collect();
        mu.sort_by(f64::total_cmp);
        assert!((mu[0] - 0.0).abs() < 0.5 && (mu[1] - 10.0).abs() < 0.5, "{mu:?}");
        for w in &g.weights {
            assert!((w - 0.5).abs() < 0.1);
        }
    }

    #[test]
    fn feasibility_limits_k() {
        let z = DMatrix::from_row_slice(3, 1, &[0.0, 1.0, 5.0]);
        let g = select_components(&z, 1..=5, 0, &EmConfig::default()).unwrap();
        assert!(g.k() <= 3);
    }

    #[test]
    fn zero_count_sample_is_empty() {
        let z = bimodal(20, 1);
        let g = fit_em(&z, 1, 0, &EmConfig::default()).unwrap();
        assert_eq!(g.sample(0, 3).nrows(), 0);
    }

    #[test]
    fn degenerate_leaf_samples_at_the_mean() {
        let z = DMatrix::from_row_slice(5, 2, &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        let g = fit_em(&z, 1, 0, &EmConfig::default()).unwrap();
        let s = g.sample(100, 9);
        for r in s.row_iter() {
            assert!((r[0] - 1.0).abs() < 1e-2 && (r[1] - 2.0).abs() < 1e-2);
        }
    }

    #[test]
    fn json_dump_has_parameters() {
        let g = fit_em(&bimodal(30, 2), 2, 0, &EmConfig::default()).unwrap();
        let v: serde_json::Value = serde_json::from_str(&g.to_json()).unwrap();
        assert_eq!(v["weights"].as_array().unwrap().len(), 2);
        assert_eq!(v["covariances"][0][0].as_array().unwrap().len(), 1);
    }
}
