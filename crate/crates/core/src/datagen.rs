//! Synthetic data with known potential outcomes.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Bernoulli, Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, OutcomeKind};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed};

/// Piecewise-linear response surfaces on `x in [0, 1]`, split at
/// `threshold`:
///
/// - `y0 = low_intercept + low_slope * x` below, `high_intercept + high_slope * x` above
/// - `y1 = y0 + effect_low` below, `y0 + effect_high` above
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Figure1Surfaces {
    pub threshold: f64,
    pub low_intercept: f64,
    pub low_slope: f64,
    pub high_intercept: f64,
    pub high_slope: f64,
    pub effect_low: f64,
    pub effect_high: f64,
}

impl Default for Figure1Surfaces {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            low_intercept: 1.0,
            low_slope: 1.0,
            high_intercept: 3.0,
            high_slope: -1.0,
            effect_low: 2.0,
            effect_high: -1.0,
        }
    }
}

impl Figure1Surfaces {
    pub fn y0(&self, x: f64) -> f64 {
        if x < self.threshold {
            self.low_intercept + self.low_slope * x
        } else {
            self.high_intercept + self.high_slope * x
        }
    }

    pub fn effect(&self, x: f64) -> f64 {
        if x < self.threshold {
            self.effect_low
        } else {
            self.effect_high
        }
    }

    /// Population ATE under `x ~ Uniform(0, 1)`.
    pub fn true_ate(&self) -> f64 {
        self.effect_low * self.threshold + self.effect_high * (1.0 - self.threshold)
    }
}

/// One covariate, binary treatment, heterogeneous effect that changes at the
/// threshold. Below the threshold only `minority_fraction` of units are
/// treated; above it only `minority_fraction` are controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Figure1Params {
    pub n: usize,
    pub seed: u64,
    pub minority_fraction: f64,
    pub noise_sd: f64,
    pub surfaces: Figure1Surfaces,
}

impl Default for Figure1Params {
    fn default() -> Self {
        Self {
            n: 1000,
            seed: 0,
            minority_fraction: 0.1,
            noise_sd: 0.1,
            surfaces: Figure1Surfaces::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Response {
    /// `y1 = exp(gamma . x) + effect_offset`
    Nonlinear,
    /// `y1 = beta . x + effect_offset`
    Linear,
}

/// 25 covariates (6 standard normal, 19 Bernoulli), linear control surface
/// and an exponential treated surface. Assignment is confounded through the
/// first binary covariate, calibrated so the expected treated share equals
/// `treated_fraction`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IhdpLikeParams {
    pub n: usize,
    pub seed: u64,
    pub treated_fraction: f64,
    pub noise_sd: f64,
    pub response: Response,
    pub effect_offset: f64,
    /// Coefficients of the control surface, one per covariate.
    pub beta: Vec<f64>,
    /// Coefficients inside the exponential of the treated surface.
    pub gamma: Vec<f64>,
    /// Success probability of each binary covariate.
    pub binary_p: Vec<f64>,
}

pub const IHDP_CONTINUOUS: usize = 6;
pub const IHDP_BINARY: usize = 19;

impl Default for IhdpLikeParams {
    fn default() -> Self {
        let cont_beta = [0.5, -0.3, 0.4, 0.2, -0.5, 0.3];
        let bin_beta = [0.2, 0.0, -0.2, 0.4];
        let cont_gamma = [0.2, 0.1, -0.1, 0.15, 0.0, 0.1];
        let bin_gamma = [0.1, 0.0, -0.1, 0.2];
        let bin_p = [0.3, 0.5, 0.7];
        Self {
            n: 747,
            seed: 0,
            treated_fraction: 139.0 / 747.0,
            noise_sd: 1.0,
            response: Response::Nonlinear,
            effect_offset: 4.0,
            beta: cont_beta
                .iter()
                .copied()
                .chain((0..IHDP_BINARY).map(|j| bin_beta[j % bin_beta.len()]))
                .collect(),
            gamma: cont_gamma
                .iter()
                .copied()
                .chain((0..IHDP_BINARY).map(|j| bin_gamma[j % bin_gamma.len()]))
                .collect(),
            binary_p: (0..IHDP_BINARY).map(|j| bin_p[j % bin_p.len()]).collect(),
        }
    }
}

/// Assignment lift applied to units whose first binary covariate is 1.
const CONFOUNDING_LIFT: f64 = 1.5;

impl IhdpLikeParams {
    /// `(P(t=1 | b=1), P(t=1 | b=0))` for the confounding covariate `b`.
    pub fn assignment_probabilities(&self) -> (f64, f64) {
        let q = self.binary_p[0];
        let f = self.treated_fraction;
        let hi = (CONFOUNDING_LIFT * f).min(1.0);
        let lo = ((f - q * hi) / (1.0 - q)).clamp(0.0, 1.0);
        (hi, lo)
    }

    /// Population ATE of the surfaces, from the normal and Bernoulli
    /// moment-generating functions.
    pub fn true_ate(&self) -> f64 {
        match self.response {
            Response::Linear => self.effect_offset,
            Response::Nonlinear => {
                let cont: f64 = self.gamma[..IHDP_CONTINUOUS]
                    .iter()
                    .map(|g| (0.5 * g * g).exp())
                    .product();
                let bin: f64 = self.gamma[IHDP_CONTINUOUS..]
                    .iter()
                    .zip(&self.binary_p)
                    .map(|(g, q)| 1.0 - q + q * g.exp())
                    .product();
                let mean_mu0: f64 = self.beta[IHDP_CONTINUOUS..]
                    .iter()
                    .zip(&self.binary_p)
                    .map(|(b, q)| b * q)
                    .sum();
                cont * bin + self.effect_offset - mean_mu0
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorSpec {
    Figure1(Figure1Params),
    IhdpLike(IhdpLikeParams),
}

impl GeneratorSpec {
    pub fn generate(&self) -> Result<Dataset> {
        match self {
            GeneratorSpec::Figure1(p) => generate_figure1(p),
            GeneratorSpec::IhdpLike(p) => generate_ihdp_like(p),
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        match self {
            GeneratorSpec::Figure1(p) => GeneratorSpec::Figure1(Figure1Params { seed, ..*p }),
            GeneratorSpec::IhdpLike(p) => GeneratorSpec::IhdpLike(IhdpLikeParams { seed, ..p.clone() }),
        }
    }
}

fn check_fraction(name: &str, f: f64) -> Result<()> {
    if f > 0.0 && f < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} = {f} outside (0, 1)")))
    }
}

const FIGURE1_RETRIES: usize = 100;

/// Draws the one-dimensional misspecification scenario. Potential outcomes
/// share the unit's noise draw, so the true effect is the noiseless surface
/// difference.
pub fn generate_figure1(p: &Figure1Params) -> Result<Dataset> {
    if p.n < 10 {
        return Err(Error::InvalidParameter("generator needs n >= 10".into()));
    }
    check_fraction("minority_fraction", p.minority_fraction)?;
    if p.noise_sd < 0.0 {
        return Err(Error::InvalidParameter("noise_sd must be >= 0".into()));
    }
    let s = &p.surfaces;
    for attempt in 0..FIGURE1_RETRIES {
        let mut rng = rng_from_seed(derive_seed(p.seed, ["figure1", &attempt.to_string()]));
        let mut x = Vec::with_capacity(p.n);
        let mut t = Vec::with_capacity(p.n);
        let mut y0 = Vec::with_capacity(p.n);
        let mut y1 = Vec::with_capacity(p.n);
        for _ in 0..p.n {
            let xi: f64 = rng.random();
            let low = xi < s.threshold;
            let p_treat = if low { p.minority_fraction } else { 1.0 - p.minority_fraction };
            let ti = rng.random::<f64>() < p_treat;
            let z: f64 = StandardNormal.sample(&mut rng);
            let eps = p.noise_sd * z;
            let base = s.y0(xi) + eps;
            x.push(xi);
            t.push(ti);
            y0.push(base);
            y1.push(base + s.effect(xi));
        }
        let minority_low = (0..p.n).any(|i| x[i] < s.threshold && t[i]);
        let minority_high = (0..p.n).any(|i| x[i] >= s.threshold && !t[i]);
        let both_groups = t.iter().any(|&v| v) && t.iter().any(|&v| !v);
        if !(minority_low && minority_high && both_groups) {
            continue;
        }
        let y: Vec<f64> = (0..p.n).map(|i| if t[i] { y1[i] } else { y0[i] }).collect();
        let data = Dataset::new(DMatrix::from_vec(p.n, 1, x), t, y, OutcomeKind::Continuous)?;
        return data.with_potential_outcomes(y0, y1);
    }
    Err(Error::Validation(
        "figure1 generator could not populate both minority regions".into(),
    ))
}

/// Draws the 25-covariate imbalanced scenario.
pub fn generate_ihdp_like(p: &IhdpLikeParams) -> Result<Dataset> {
    if p.n < 10 {
        return Err(Error::InvalidParameter("generator needs n >= 10".into()));
    }
    check_fraction("treated_fraction", p.treated_fraction)?;
    let d = IHDP_CONTINUOUS + IHDP_BINARY;
    if p.beta.len() != d || p.gamma.len() != d || p.binary_p.len() != IHDP_BINARY {
        return Err(Error::InvalidParameter(format!(
            "coefficient vectors must have length {d} (binary_p: {IHDP_BINARY})"
        )));
    }
    for (j, &q) in p.binary_p.iter().enumerate() {
        check_fraction(&format!("binary_p[{j}]"), q)?;
    }
    let noise = Normal::new(0.0, p.noise_sd)
        .map_err(|e| Error::InvalidParameter(format!("noise_sd: {e}")))?;
    let (p_hi, p_lo) = p.assignment_probabilities();
    let bernoullis: Vec<Bernoulli> = p
        .binary_p
        .iter()
        .map(|&q| Bernoulli::new(q).expect("checked probability"))
        .collect();

    let mut rng = rng_from_seed(derive_seed(p.seed, ["ihdp_like"]));
    let mut x = DMatrix::zeros(p.n, d);
    let mut t = Vec::with_capacity(p.n);
    let mut y0 = Vec::with_capacity(p.n);
    let mut y1 = Vec::with_capacity(p.n);
    for i in 0..p.n {
        for j in 0..IHDP_CONTINUOUS {
            x[(i, j)] = StandardNormal.sample(&mut rng);
        }
        for (j, b) in bernoullis.iter().enumerate() {
            x[(i, IHDP_CONTINUOUS + j)] = f64::from(u8::from(b.sample(&mut rng)));
        }
        let row: Vec<f64> = x.row(i).iter().copied().collect();
        let lin = |c: &[f64]| row.iter().zip(c).map(|(a, b)| a * b).sum::<f64>();
        let mu0 = lin(&p.beta);
        let mu1 = match p.response {
            Response::Nonlinear => lin(&p.gamma).exp() + p.effect_offset,
            Response::Linear => mu0 + p.effect_offset,
        };
        let p_treat = if row[IHDP_CONTINUOUS] == 1.0 { p_hi } else { p_lo };
        let ti = rng.random::<f64>() < p_treat;
        let eps = noise.sample(&mut rng);
        t.push(ti);
        y0.push(mu0 + eps);
        y1.push(mu1 + eps);
    }
    let y: Vec<f64> = (0..p.n).map(|i| if t[i] { y1[i] } else { y0[i] }).collect();
    Dataset::new(x, t, y, OutcomeKind::Continuous)?.with_potential_outcomes(y0, y1)
}
