use degets::dataset::{Dataset, OutcomeKind};
use degets::estimators::{
    dml, dml_fit, evaluate, fit_effect, fit_lasso, fit_propensity, fit_ridge, t_learner, x_learner, BaseLearner,
    ConstantPropensity, EffectEstimate, EstimatorSpec, FitOptions, Hyper, LogisticObjective, MetricKind,
    PropensityScore, RegressorSpec, Standardizer,
};
use degets::metrics::{ate_error_effects, pehe_effects};
use degets::rng::rng_from_seed;
use degets::trees::TreeParams;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn gaussian_matrix(n: usize, d: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    DMatrix::from_fn(n, d, |_, _| StandardNormal.sample(rng))
}

fn normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// `y = x . beta + tau(x) t + noise`, with `P(t = 1) = p_treat`.
fn linear_generator(n: usize, p_treat: f64, tau: impl Fn(&[f64]) -> f64, seed: u64) -> Dataset {
    let mut rng = rng_from_seed(seed);
    let x = gaussian_matrix(n, 3, &mut rng);
    let beta = [1.0, -0.5, 0.25];
    let t: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < p_treat).collect();
    let mut y0 = Vec::with_capacity(n);
    let mut y1 = Vec::with_capacity(n);
    for i in 0..n {
        let row = [x[(i, 0)], x[(i, 1)], x[(i, 2)]];
        let base: f64 = row.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>() + 0.5 * normal(&mut rng);
        y0.push(base);
        y1.push(base + tau(&row));
    }
    let y = (0..n).map(|i| if t[i] { y1[i] } else { y0[i] }).collect();
    Dataset::new(x, t, y, OutcomeKind::Continuous)
        .unwrap()
        .with_potential_outcomes(y0, y1)
        .unwrap()
}

/// Treatment probability rises with `x0`; `y = 2 t + x0 + sin(2 x0) + noise`.
fn confounded_generator(n: usize, theta: f64, seed: u64) -> Dataset {
    let mut rng = rng_from_seed(seed);
    let x = gaussian_matrix(n, 2, &mut rng);
    let t: Vec<bool> = (0..n)
        .map(|i| rng.random::<f64>() < 1.0 / (1.0 + (-1.5 * x[(i, 0)]).exp()))
        .collect();
    let y = (0..n)
        .map(|i| {
            let x0 = x[(i, 0)];
            theta * f64::from(u8::from(t[i])) + x0 + (2.0 * x0).sin() + 0.5 * normal(&mut rng)
        })
        .collect();
    Dataset::new(x, t, y, OutcomeKind::Continuous).unwrap()
}

fn nuisance_forest() -> RegressorSpec {
    RegressorSpec::single(Hyper::ExtraTrees { params: TreeParams::new(8, 5), n_estimators: 50 })
}

#[test]
fn ridge_limits() {
    let mut rng = rng_from_seed(1);
    let x = gaussian_matrix(60, 4, &mut rng);
    let w = [1.5, -2.0, 0.0, 0.75];
    let y: Vec<f64> = (0..60).map(|i| 3.0 + (0..4).map(|j| w[j] * x[(i, j)]).sum::<f64>()).collect();
    let exact = fit_ridge(&x, &y, 0.0).unwrap();
    for (a, b) in exact.coefficients().iter().zip(w) {
        assert!((a - b).abs() < 1e-8);
    }
    assert!((exact.intercept() - 3.0).abs() < 1e-8);
    let flat = fit_ridge(&x, &y, 1e9).unwrap();
    assert!(flat.coefficients().iter().all(|c| c.abs() < 1e-6));
    let mean = y.iter().sum::<f64>() / 60.0;
    assert!(flat.predict(&x).unwrap().iter().all(|p| (p - mean).abs() < 1e-5));
}

/// `(1/2n) ||y - mean(y) - Xs w||^2 + alpha ||w||_1` on the standardized
/// design, minimised by proximal gradient descent.
fn lasso_oracle(xs: &DMatrix<f64>, yc: &DVector<f64>, alpha: f64) -> (DVector<f64>, f64) {
    let n = xs.nrows() as f64;
    let objective = |w: &DVector<f64>| {
        (yc - xs * w).norm_squared() / (2.0 * n) + alpha * w.iter().map(|v| v.abs()).sum::<f64>()
    };
    let lipschitz = (xs.transpose() * xs / n).symmetric_eigenvalues().max();
    let step = 1.0 / lipschitz;
    let mut w = DVector::zeros(xs.ncols());
    for _ in 0..50_000 {
        let grad = -(xs.transpose() * (yc - xs * &w)) / n;
        w = (&w - grad * step).map(|v| v.signum() * (v.abs() - step * alpha).max(0.0));
    }
    let f = objective(&w);
    (w, f)
}

#[test]
fn lasso_matches_proximal_gradient_oracle() {
    let mut rng = rng_from_seed(2);
    let x = gaussian_matrix(50, 5, &mut rng);
    let y: Vec<f64> = (0..50)
        .map(|i| 2.0 * x[(i, 0)] - x[(i, 1)] + 0.5 * x[(i, 2)] + 0.3 * x[(i, 3)] + 0.1 * normal(&mut rng))
        .collect();
    // column 4 is irrelevant
    let alpha = 0.1;
    let model = fit_lasso(&x, &y, alpha).unwrap();
    let xs = Standardizer::fit(&x).transform(&x);
    let ybar = y.iter().sum::<f64>() / 50.0;
    let yc = DVector::from_iterator(50, y.iter().map(|v| v - ybar));
    let (w_oracle, f_oracle) = lasso_oracle(&xs, &yc, alpha);
    let pred = model.predict(&x).unwrap();
    let f_model = y.iter().zip(&pred).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 100.0
        + alpha * model.standardized_weights().iter().map(|v| v.abs()).sum::<f64>();
    assert!((f_model - f_oracle).abs() < 1e-4, "{f_model} vs {f_oracle}");
    assert_eq!(model.standardized_weights()[4], 0.0);
    assert_eq!(w_oracle[4], 0.0);
}

#[test]
fn propensity_of_independent_assignment_is_a_half() {
    let mut rng = rng_from_seed(3);
    let x = DMatrix::from_fn(20_000, 3, |_, _| rng.random::<f64>());
    let t: Vec<bool> = (0..20_000).map(|_| rng.random::<bool>()).collect();
    let model = fit_propensity(&x, &t).unwrap();
    let e = model.propensity(&x).unwrap();
    let worst = e.iter().map(|p| (p - 0.5).abs()).fold(0.0, f64::max);
    assert!(worst < 0.05, "{worst}");
}

#[test]
fn logistic_gradient_matches_finite_differences() {
    let mut rng = rng_from_seed(4);
    let x = gaussian_matrix(300, 3, &mut rng);
    let t: Vec<bool> = (0..300).map(|i| rng.random::<f64>() < 1.0 / (1.0 + (-x[(i, 0)]).exp())).collect();
    let model = fit_propensity(&x, &t).unwrap();
    let xs = model.standardizer().transform(&x);
    let tf: Vec<f64> = t.iter().map(|&b| f64::from(u8::from(b))).collect();
    let obj = LogisticObjective { xs: &xs, t: &tf, lambda: model.config().lambda };
    let fd = |p: &DVector<f64>| {
        DVector::from_fn(p.len(), |j, _| {
            let h = 1e-6;
            let (mut a, mut b) = (p.clone(), p.clone());
            a[j] += h;
            b[j] -= h;
            (obj.value(&a) - obj.value(&b)) / (2.0 * h)
        })
    };
    let probe = DVector::from_vec(vec![0.3, -0.8, 0.5, 1.1]);
    let (g, g_fd) = (obj.gradient(&probe), fd(&probe));
    assert!((&g - &g_fd).norm() <= 1e-5 * g.norm(), "{g} vs {g_fd}");
    // at the optimum both vanish
    let at_opt = model.params();
    assert!(obj.gradient(at_opt).norm() < 1e-6);
    assert!(fd(at_opt).norm() < 1e-6);
}

#[test]
fn t_learner_ridge_recovers_known_ates() {
    let ridge = RegressorSpec::single(Hyper::Ridge { alpha: 1.0 });
    let zero = linear_generator(2000, 0.5, |_| 0.0, 5);
    let est = t_learner(&zero, &ridge, zero.covariates(), 0).unwrap();
    assert!(est.ate_hat.abs() <= 0.05, "{}", est.ate_hat);
    let two = linear_generator(2000, 0.5, |_| 2.0, 6);
    let est = t_learner(&two, &ridge, two.covariates(), 0).unwrap();
    assert!((est.ate_hat - 2.0).abs() <= 0.1, "{}", est.ate_hat);
}

#[test]
fn identical_groups_give_zero_effects() {
    let x = DMatrix::from_fn(40, 1, |i, _| (i / 2) as f64);
    let t: Vec<bool> = (0..40).map(|i| i % 2 == 0).collect();
    let y: Vec<f64> = (0..40).map(|i| ((i / 2) as f64).sin()).collect();
    let data = Dataset::new(x, t, y, OutcomeKind::Continuous).unwrap();
    let spec = RegressorSpec::single(Hyper::Ridge { alpha: 0.1 });
    let est = t_learner(&data, &spec, data.covariates(), 0).unwrap();
    assert!(est.ite_hat.iter().all(|v| v.abs() < 1e-10));
}

/// Effect models of the imputed-effect learner, rebuilt from scratch with
/// plain ridge fits.
fn imputed_effects(data: &Dataset, alpha: f64) -> (Vec<f64>, Vec<f64>) {
    let (t_idx, c_idx) = data.group_indices();
    let x1 = data.covariates().select_rows(&t_idx);
    let x0 = data.covariates().select_rows(&c_idx);
    let y1: Vec<f64> = t_idx.iter().map(|&i| data.outcome()[i]).collect();
    let y0: Vec<f64> = c_idx.iter().map(|&i| data.outcome()[i]).collect();
    let m1 = fit_ridge(&x1, &y1, alpha).unwrap();
    let m0 = fit_ridge(&x0, &y0, alpha).unwrap();
    let d1: Vec<f64> = y1.iter().zip(m0.predict(&x1).unwrap()).map(|(y, p)| y - p).collect();
    let d0: Vec<f64> = m1.predict(&x0).unwrap().iter().zip(&y0).map(|(p, y)| p - y).collect();
    let tau1 = fit_ridge(&x1, &d1, alpha).unwrap().predict(data.covariates()).unwrap();
    let tau0 = fit_ridge(&x0, &d0, alpha).unwrap().predict(data.covariates()).unwrap();
    (tau1, tau0)
}

#[test]
fn x_learner_endpoints() {
    let data = linear_generator(300, 0.3, |r| r[0], 7);
    let spec = RegressorSpec::single(Hyper::Ridge { alpha: 0.5 });
    let (tau1, tau0) = imputed_effects(&data, 0.5);
    let at_one = x_learner(&data, &spec, &ConstantPropensity(1.0), data.covariates(), 0).unwrap();
    let at_zero = x_learner(&data, &spec, &ConstantPropensity(0.0), data.covariates(), 0).unwrap();
    assert_eq!(at_one.ite_hat, tau0);
    assert_eq!(at_zero.ite_hat, tau1);
}

/// Ten covariates with a strong baseline and an effect that depends on `x0`
/// only; 10% treated at random.
fn sparse_effect_generator(n: usize, seed: u64) -> Dataset {
    let mut rng = rng_from_seed(seed);
    let x = gaussian_matrix(n, 10, &mut rng);
    let t: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < 0.1).collect();
    let mut y0 = Vec::with_capacity(n);
    let mut y1 = Vec::with_capacity(n);
    for i in 0..n {
        let base = (0..10).map(|j| (j as f64 - 4.5) * x[(i, j)]).sum::<f64>() + normal(&mut rng);
        y0.push(base);
        y1.push(base + x[(i, 0)]);
    }
    let y = (0..n).map(|i| if t[i] { y1[i] } else { y0[i] }).collect();
    Dataset::new(x, t, y, OutcomeKind::Continuous)
        .unwrap()
        .with_potential_outcomes(y0, y1)
        .unwrap()
}

#[test]
fn x_learner_helps_under_imbalance() {
    let spec = BaseLearner::Ridge.default_spec();
    let wins = (0..10)
        .filter(|&seed| {
            let data = sparse_effect_generator(500, 100 + seed);
            let truth = data.true_effects().unwrap();
            let e = fit_propensity(data.covariates(), data.treatment()).unwrap();
            let xl = x_learner(&data, &spec, &e, data.covariates(), seed).unwrap();
            let tl = t_learner(&data, &spec, data.covariates(), seed).unwrap();
            pehe_effects(&xl.ite_hat, &truth).unwrap() <= pehe_effects(&tl.ite_hat, &truth).unwrap()
        })
        .count();
    assert!(wins >= 7, "x-learner better in {wins}/10");
}

#[test]
fn dml_recovers_constant_effects() {
    let spec = nuisance_forest();
    let data = confounded_generator(4000, 2.0, 8);
    for k in [2, 5] {
        let fit = dml_fit(&data, &spec, k, 1).unwrap();
        assert!((fit.theta - 2.0).abs() <= 0.15, "K={k}: {}", fit.theta);
    }
    let ridge = RegressorSpec::single(Hyper::Ridge { alpha: 1.0 });
    let null = linear_generator(4000, 0.5, |_| 0.0, 9);
    let est = dml(&null, &ridge, 2, null.covariates(), 0).unwrap();
    assert!(est.ite_hat.iter().all(|v| v.abs() <= 0.1));
}

#[test]
fn evaluation_matches_direct_metrics() {
    let data = linear_generator(100, 0.5, |r| 1.0 + r[1], 10);
    let truth = data.true_effects().unwrap();
    let mut rng = rng_from_seed(11);
    let ite: Vec<f64> = truth.iter().map(|v| v + 0.3 * normal(&mut rng)).collect();
    let inputs = evaluate(&EffectEstimate::from_effects(ite.clone()), &data).unwrap();
    assert_eq!(inputs.metric(MetricKind::Pehe).unwrap(), pehe_effects(&ite, &truth).unwrap());
    assert_eq!(inputs.metric(MetricKind::Ate).unwrap(), ate_error_effects(&ite, &truth).unwrap());
    let perfect = evaluate(&EffectEstimate::from_effects(truth.clone()), &data).unwrap();
    assert_eq!(perfect.metric(MetricKind::Pehe).unwrap(), 0.0);
    assert!(evaluate(&EffectEstimate::from_effects(vec![0.0; 99]), &data).is_err());
    assert!(perfect.metric(MetricKind::Att).is_err());
}

#[test]
fn every_method_fits_through_the_common_entry_point() {
    let data = linear_generator(200, 0.4, |r| r[0], 12);
    let opts = FitOptions { tuned: false, ..Default::default() };
    for name in ["l2", "tl-l2", "xl-l2", "dml-l2", "degef-l2", "dummy", "tl-dt", "kr"] {
        let spec: EstimatorSpec = name.parse().unwrap();
        let est = fit_effect(&spec, &data, data.covariates(), &opts, 3).unwrap();
        assert_eq!(est.len(), 200, "{name}");
        assert!(est.ite_hat.iter().all(|v| v.is_finite()), "{name}");
    }
    let tuned = FitOptions::default();
    let a = fit_effect(&"l1".parse().unwrap(), &data, data.covariates(), &tuned, 4).unwrap();
    let b = fit_effect(&"l1".parse().unwrap(), &data, data.covariates(), &tuned, 4).unwrap();
    assert_eq!(a, b);
    assert_eq!(tuned.regressor(BaseLearner::Ridge).candidates.len(), 5);
}
