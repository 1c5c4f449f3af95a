use hdsparse::penalty::PenaltySpec;
use hdsparse::qgaussian::{
    covariance, dof_from_q, fit, logpdf, logpdf_lambda, multivariate_t_logpdf, neg_penalized_loglik,
    neg_penalized_loglik_grad, predict, q_covariance, q_exp, q_from_dof, q_log, q_update, quadratic_term,
    recover_q_subset, refit, sigma2_update, theta_update, Psi, QFitConfig, QGaussianModel, QGaussianParams,
};
use nalgebra::DMatrix;
use ndarray::{array, Array1, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::function::gamma::ln_gamma;

fn gaussian_data(seed: u64, n: usize, p: usize, sigma: f64) -> (Array2<f64>, Array1<f64>, Array1<f64>) {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let x = Array2::from_shape_fn((n, p), |_| r.sample::<f64, _>(StandardNormal));
    let theta = Array1::from_shape_fn(p + 1, |j| if j == 0 { 0.5 } else { j as f64 * 0.4 - 1.0 });
    let y = Array1::from_shape_fn(n, |i| {
        theta[0] + (0..p).map(|j| x[[i, j]] * theta[j + 1]).sum::<f64>() + sigma * r.sample::<f64, _>(StandardNormal)
    });
    (x, y, theta)
}

fn with_intercept(x: &Array2<f64>) -> Array2<f64> {
    let mut d = Array2::ones((x.nrows(), x.ncols() + 1));
    d.slice_mut(ndarray::s![.., 1..]).assign(x);
    d
}

fn ols(x: &Array2<f64>, y: &Array1<f64>) -> Array1<f64> {
    let d = with_intercept(x);
    let k = d.ncols();
    let xtx = d.t().dot(&d);
    let m = DMatrix::from_row_slice(k, k, xtx.as_slice().unwrap());
    let rhs = d.t().dot(y);
    let sol = m.cholesky().unwrap().solve(&nalgebra::DVector::from_column_slice(rhs.as_slice().unwrap()));
    Array1::from_iter(sol.iter().copied())
}

fn spd(seed: u64, n: usize) -> Array2<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let b = Array2::from_shape_fn((n, n), |_| r.sample::<f64, _>(StandardNormal));
    b.t().dot(&b) / n as f64 + Array2::<f64>::eye(n) * 0.5
}

#[test]
fn q_exp_classical_limit() {
    for i in 0..=40 {
        let x = -2.0 + 0.1 * i as f64;
        for q in [1.0 + 1e-8, 1.0 - 1e-8] {
            assert!((q_exp(x, q) - x.exp()).abs() <= 1e-5);
        }
    }
    assert!((q_exp(0.5, 2.0) - 2.0).abs() < 1e-15);
}

#[test]
fn q_log_inverts_q_exp() {
    for i in 1..200 {
        let x = i as f64 * 0.01;
        assert!((q_log(q_exp(x, 1.5), 1.5) - x).abs() <= 1e-12);
    }
}

#[test]
fn dof_conversions() {
    assert!((dof_from_q(1.5, 2).unwrap() - 2.0).abs() < 1e-15);
    assert!((dof_from_q(2.0, 1).unwrap() - 1.0).abs() < 1e-15);
    for (q, n) in [(1.01, 10), (1.3, 3), (1.9, 2)] {
        let back = q_from_dof(dof_from_q(q, n).unwrap(), n).unwrap();
        assert!((back - q).abs() <= 1e-14);
    }
    assert!(dof_from_q(1.0, 3).is_err());
    assert!(q_from_dof(-1.0, 3).is_err());
}

#[test]
fn cauchy_at_origin() {
    let p = QGaussianParams::new(array![0.0], 1.0, Psi::Identity, 2.0).unwrap();
    let v = logpdf(array![0.0].view(), &p).unwrap();
    assert!((v - (1.0 / std::f64::consts::PI).ln()).abs() < 1e-14);
}

#[test]
fn matches_multivariate_t() {
    let q = q_from_dof(5.0, 2).unwrap();
    let p = QGaussianParams::new(array![0.0, 0.0], 1.0, Psi::Identity, q).unwrap();
    let eye = Array2::<f64>::eye(2);
    let mut r = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        let x = array![r.gen_range(-6.0..6.0), r.gen_range(-6.0..6.0)];
        let a = logpdf(x.view(), &p).unwrap();
        let b = multivariate_t_logpdf(x.view(), p.mu.view(), 5.0, eye.view()).unwrap();
        assert!((a - b).abs() <= 1e-10);
    }
}

#[test]
fn near_one_is_gaussian() {
    let p = QGaussianParams::new(array![0.0], 1.0, Psi::Identity, 1.0 + 1e-6).unwrap();
    for i in 0..=60 {
        let x = -3.0 + 0.1 * i as f64;
        let normal = -0.5 * x * x - 0.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((logpdf(array![x].view(), &p).unwrap() - normal).abs() <= 1e-3);
    }
}

#[test]
fn density_integrates_to_one_in_one_dimension() {
    for q in [1.1, 1.5] {
        let p = QGaussianParams::new(array![0.0], 1.0, Psi::Identity, q).unwrap();
        // tan substitution covers the whole line
        let k = 20_000;
        let h = std::f64::consts::PI / k as f64;
        let g = |t: f64| {
            let x = t.tan();
            logpdf(array![x].view(), &p).unwrap().exp() * (1.0 + x * x)
        };
        let mut s = 0.0;
        for i in 1..k {
            let t = -std::f64::consts::FRAC_PI_2 + i as f64 * h;
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * g(t);
        }
        let total = s * h / 3.0;
        assert!((total - 1.0).abs() <= 1e-3, "q = {q}: {total}");
    }
}

#[test]
fn covariance_examples() {
    let q = q_from_dof(5.0, 2).unwrap();
    let p = QGaussianParams::new(array![0.0, 0.0], 1.0, Psi::Identity, q).unwrap();
    let c = covariance(&p).unwrap();
    assert!((&c - &(Array2::<f64>::eye(2) * (5.0 / 3.0))).iter().all(|v| v.abs() < 1e-12));
    let boundary = 1.0 + 2.0 / 4.0;
    let p = QGaussianParams::new(array![0.0, 0.0], 1.0, Psi::Identity, boundary).unwrap();
    assert!(covariance(&p).is_none());
    assert!(q_covariance(&p).is_ok());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn sigma_and_lambda_forms_agree(m in 0.5f64..40.0, s2 in 0.1f64..5.0, x in prop::collection::vec(-10.0f64..10.0, 3)) {
        let psi = spd(7, 3);
        let q = q_from_dof(m, 3).unwrap();
        let p = QGaussianParams::new(array![0.5, -1.0, 2.0], s2, Psi::dense(psi).unwrap(), q).unwrap();
        let x = Array1::from(x);
        let lam = p.sigma() * m;
        let a = logpdf(x.view(), &p).unwrap();
        let b = logpdf_lambda(x.view(), p.mu.view(), q, lam.view()).unwrap();
        prop_assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()));
        let t = multivariate_t_logpdf(x.view(), p.mu.view(), m, p.sigma().view()).unwrap();
        prop_assert!((a - t).abs() <= 1e-10 * (1.0 + a.abs()));
    }

    #[test]
    fn recover_q_round_trip(u_excess in 0.5f64..1e4, na in 2usize..500, nb in 2usize..500) {
        let q = 1.0 + 1.0 / (na as f64 / 2.0 + u_excess + nb as f64);
        if let Ok(qb) = recover_q_subset(q, na, nb) {
            let back = recover_q_subset(qb, nb, na).unwrap();
            prop_assert!((back - q).abs() <= 1e-12);
        }
    }
}

#[test]
fn recover_q_examples() {
    assert_eq!(recover_q_subset(1.009, 100, 100).unwrap(), 1.009);
    let q = recover_q_subset(1.009, 100, 50).unwrap();
    let want = 1.0 + 1.0 / (1.0 / 0.009 - 50.0);
    assert!((q - want).abs() < 1e-12);
    assert!((q - 1.01636).abs() < 1e-5);
}

fn tiny() -> (Array2<f64>, Array1<f64>, Array2<f64>) {
    let mut r = ChaCha8Rng::seed_from_u64(3);
    let x = Array2::from_shape_fn((4, 2), |_| r.sample::<f64, _>(StandardNormal));
    let y = Array1::from_shape_fn(4, |_| r.sample::<f64, _>(StandardNormal));
    (x, y, spd(4, 4))
}

#[test]
fn objective_matches_dense_inverse() {
    let (x, y, psi) = tiny();
    let pen = PenaltySpec::scad(0.2, 3.7).unwrap();
    let mut model = QGaussianModel::initial(2, 4, Psi::dense(psi.clone()).unwrap(), pen);
    model.theta = array![0.1, -0.3, 0.4];
    model.sigma2 = 0.8;
    model.q_train = 1.2;
    let r = &y - &with_intercept(&x).dot(&model.theta);
    let inv = DMatrix::from_row_slice(4, 4, psi.as_slice().unwrap()).try_inverse().unwrap();
    let rv = nalgebra::DVector::from_column_slice(r.as_slice().unwrap());
    let q_term = rv.dot(&(&inv * &rv)) + 2.0 * 4.0 * (pen.value(-0.3) + pen.value(0.4));
    assert!((quadratic_term(&model, x.view(), y.view()).unwrap() - q_term).abs() <= 1e-10);
    let (n, u, s2) = (4.0, 1.0 / 0.2, 0.8);
    let m = 2.0 * u - n;
    let want = 0.5 * n * f64::ln(s2) - ln_gamma(u) + ln_gamma(u - 0.5 * n) + 0.5 * n * f64::ln(m)
        + u * (1.0 + q_term / (m * s2)).ln();
    assert!((neg_penalized_loglik(&model, x.view(), y.view()).unwrap() - want).abs() <= 1e-10);
}

#[test]
fn non_spd_psi_is_an_error() {
    let (x, y, _) = tiny();
    let bad = Array2::from_diag(&array![1.0, -1.0, 1.0, 1.0]);
    let model = QGaussianModel::initial(2, 4, Psi::dense(bad).unwrap(), PenaltySpec::l1(0.0).unwrap());
    assert!(quadratic_term(&model, x.view(), y.view()).is_err());
}

#[test]
fn doubling_sigma2_changes_only_its_terms() {
    let (x, y, _) = tiny();
    let mut model = QGaussianModel::initial(2, 4, Psi::Identity, PenaltySpec::l1(0.1).unwrap());
    model.theta = array![0.2, 0.1, -0.1];
    model.q_train = 1.3;
    model.sigma2 = 0.5;
    let a = neg_penalized_loglik(&model, x.view(), y.view()).unwrap();
    model.sigma2 = 1.0;
    let b = neg_penalized_loglik(&model, x.view(), y.view()).unwrap();
    let q_term = quadratic_term(&model, x.view(), y.view()).unwrap();
    let u = 1.0 / 0.3;
    let m = 2.0 * u - 4.0;
    let diff = 2.0 * 2f64.ln() + u * ((1.0 + q_term / m).ln() - (1.0 + q_term / (0.5 * m)).ln());
    assert!((b - a - diff).abs() < 1e-12);
}

#[test]
fn near_gaussian_objective_differences() {
    let (x, y, _, ) = gaussian_data(5, 30, 2, 1.0);
    let mut model = QGaussianModel::initial(2, 30, Psi::Identity, PenaltySpec::l1(0.0).unwrap());
    model.q_train = 1.0 + 1e-9;
    let d = with_intercept(&x);
    let nll = |theta: &Array1<f64>, s2: f64| {
        let r = &y - &d.dot(theta);
        15.0 * s2.ln() + r.dot(&r) / (2.0 * s2)
    };
    let mut offsets = Vec::new();
    for s2 in [0.5, 1.0, 2.0] {
        for t in [array![0.0, 0.0, 0.0], array![0.5, -0.2, 0.3], array![1.0, 1.0, -1.0]] {
            model.sigma2 = s2;
            model.theta = t.clone();
            offsets.push(neg_penalized_loglik(&model, x.view(), y.view()).unwrap() - nll(&t, s2));
        }
    }
    let (lo, hi) = offsets.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    assert!(hi - lo <= 1e-3, "{offsets:?}");
}

#[test]
fn sigma2_update_is_stationary_and_homogeneous() {
    let (x, y, _) = gaussian_data(6, 40, 3, 1.5);
    let mut model = QGaussianModel::initial(3, 40, Psi::Identity, PenaltySpec::l1(0.0).unwrap());
    model.theta = array![0.1, 0.2, 0.3, 0.4];
    model.q_train = 1.0 + 1.0 / 30.0;
    let s = sigma2_update(&model, x.view(), y.view()).unwrap();
    assert!(s > 0.0);
    let f = |v: f64| {
        let mut m = model.clone();
        m.sigma2 = v;
        neg_penalized_loglik(&m, x.view(), y.view()).unwrap()
    };
    let h = 1e-3 * s;
    let cd = |h: f64| (f(s + h) - f(s - h)) / (2.0 * h);
    assert!(((4.0 * cd(h / 2.0) - cd(h)) / 3.0).abs() <= 1e-8);
    let scaled = &y * 3.0;
    let mut m3 = model.clone();
    m3.theta = &model.theta * 3.0;
    let s3 = sigma2_update(&m3, x.view(), scaled.view()).unwrap();
    assert!((s3 / s - 9.0).abs() < 1e-10);
    // the closed form reduces to Q/N for every feasible q
    let q_term = quadratic_term(&model, x.view(), y.view()).unwrap();
    model.q_train = 1.0 + 2.0 / 40.0 - 1e-9;
    let edge = sigma2_update(&model, x.view(), y.view()).unwrap();
    assert!((edge / (q_term / 40.0) - 1.0).abs() < 1e-6);
    assert!((s / (q_term / 40.0) - 1.0).abs() < 1e-12);
}

#[test]
fn analytic_gradient_matches_finite_differences() {
    let (x, y, _) = gaussian_data(7, 25, 2, 1.0);
    let mut model = QGaussianModel::initial(2, 25, Psi::Identity, PenaltySpec::scad(0.1, 3.7).unwrap());
    model.theta = array![0.3, 0.5, -0.6];
    model.sigma2 = 1.3;
    model.q_train = 1.0 + 1.0 / 20.0;
    let g = neg_penalized_loglik_grad(&model, x.view(), y.view()).unwrap();
    let f = |m: &QGaussianModel| neg_penalized_loglik(m, x.view(), y.view()).unwrap();
    let e = 1e-6;
    for j in 0..3 {
        let (mut a, mut b) = (model.clone(), model.clone());
        a.theta[j] += e;
        b.theta[j] -= e;
        assert!(((f(&a) - f(&b)) / (2.0 * e) - g.theta[j]).abs() <= 1e-5);
    }
    let (mut a, mut b) = (model.clone(), model.clone());
    a.sigma2 += e;
    b.sigma2 -= e;
    assert!(((f(&a) - f(&b)) / (2.0 * e) - g.sigma2).abs() <= 1e-5);
    let u = 20.0;
    let (mut a, mut b) = (model.clone(), model.clone());
    a.q_train = 1.0 + 1.0 / (u + e);
    b.q_train = 1.0 + 1.0 / (u - e);
    assert!(((f(&a) - f(&b)) / (2.0 * e) - g.u).abs() <= 1e-5);
}

#[test]
fn q_update_is_a_minimum_over_the_scan() {
    let (x, y, _) = gaussian_data(8, 150, 2, 1.0);
    let mut model = QGaussianModel::initial(2, 150, Psi::Identity, PenaltySpec::l1(0.0).unwrap());
    model.theta = ols(&x, &y);
    let up = q_update(&model, x.view(), y.view()).unwrap();
    assert!(up.objective <= up.objective_lower && up.objective <= up.objective_upper);
    assert!(up.q > 1.0 && up.q < 1.0 + 2.0 / 150.0);
    model.q_train = up.q;
    model.sigma2 = up.sigma2;
    assert!((neg_penalized_loglik(&model, x.view(), y.view()).unwrap() - up.objective).abs() < 1e-9);
    // with sigma2 profiled the minimizing u depends on N only
    let y2 = y.mapv(|v| v * 4.0 + 1.0);
    let other = q_update(&model, x.view(), y2.view()).unwrap();
    assert_eq!(other.u, up.u);
}

#[test]
fn theta_update_ignores_q_and_sigma2() {
    let (x, y, _) = gaussian_data(9, 60, 4, 1.0);
    let pen = PenaltySpec::scad(0.1, 3.7).unwrap();
    let mut a = QGaussianModel::initial(4, 60, Psi::Identity, pen);
    let cfg = QFitConfig::default();
    let ta = theta_update(&a, x.view(), y.view(), &cfg).unwrap();
    a.q_train = 1.02;
    a.sigma2 = 7.0;
    let tb = theta_update(&a, x.view(), y.view(), &cfg).unwrap();
    assert!((&ta - &tb).iter().all(|v| v.abs() <= cfg.pcg.tol));
}

#[test]
fn theta_update_without_penalty_is_least_squares() {
    let (x, y, _) = gaussian_data(10, 80, 5, 1.0);
    let model = QGaussianModel::initial(5, 80, Psi::Identity, PenaltySpec::l1(0.0).unwrap());
    let cfg = QFitConfig {
        pcg: hdsparse::pcg::PcgConfig { tol: 1e-10, ..Default::default() },
        ..Default::default()
    };
    let t = theta_update(&model, x.view(), y.view(), &cfg).unwrap();
    assert!((&t - &ols(&x, &y)).iter().all(|v| v.abs() <= 1e-6));
}

#[test]
fn large_lambda_zeroes_coefficients() {
    let (x, y, _) = gaussian_data(11, 50, 3, 1.0);
    let yc = &y - y.mean().unwrap();
    let xc = &x - &x.mean_axis(ndarray::Axis(0)).unwrap();
    let lmax = xc.t().dot(&yc).iter().fold(0.0_f64, |m, v| m.max(v.abs())) / 50.0;
    let model = QGaussianModel::initial(3, 50, Psi::Identity, PenaltySpec::l1(lmax * 1.01).unwrap());
    let t = theta_update(&model, x.view(), y.view(), &QFitConfig::default()).unwrap();
    assert!(t.iter().skip(1).all(|&v| v == 0.0), "{t}");
    assert!((t[0] - y.mean().unwrap()).abs() < 1e-6);
}

#[test]
fn gaussian_fit_recovers_parameters() {
    let sigma = 1.5;
    let (x, y, _) = gaussian_data(12, 200, 5, sigma);
    let m = fit(x.view(), y.view(), Psi::Identity, PenaltySpec::l1(0.0).unwrap(), &QFitConfig::default()).unwrap();
    assert!((&m.theta - &ols(&x, &y)).iter().all(|v| v.abs() <= 1e-5));
    let m_hat = dof_from_q(m.q_train, 200).unwrap();
    assert!(m_hat > 50.0, "dof {m_hat}");
    // for large m the scale matches the variance
    let var = m.sigma2 * m_hat / (m_hat - 2.0);
    assert!((var / (sigma * sigma) - 1.0).abs() <= 0.2, "{var}");
    assert!(m.fit_trace.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn refit_is_a_fixed_point() {
    let (x, y, _) = gaussian_data(13, 120, 3, 1.0);
    let mut r = ChaCha8Rng::seed_from_u64(14);
    let w: f64 = (0..4).map(|_| r.sample::<f64, _>(StandardNormal).powi(2)).sum::<f64>() / 4.0;
    let y = y.mapv(|v| v / w.sqrt());
    let cfg = QFitConfig::default();
    let m = fit(x.view(), y.view(), Psi::Identity, PenaltySpec::scad(0.05, 3.7).unwrap(), &cfg).unwrap();
    assert!(m.fit_trace.windows(2).all(|w| w[1] <= w[0]));
    let again = refit(&m, x.view(), y.view(), &cfg).unwrap();
    assert_eq!(again.outer_iterations, 0);
    assert_eq!(again.q_train, m.q_train);
}

#[test]
fn dense_psi_fit_runs() {
    let n = 30;
    let (x, y, _) = gaussian_data(15, n, 2, 1.0);
    let psi = Array2::from_shape_fn((n, n), |(i, j)| 0.3f64.powi((i as i32 - j as i32).abs()));
    let m = fit(x.view(), y.view(), Psi::dense(psi).unwrap(), PenaltySpec::l1(0.0).unwrap(), &QFitConfig::default());
    let m = m.unwrap();
    assert!(m.sigma2 > 0.0 && m.q_train > 1.0);
}

#[test]
fn predict_examples() {
    let (x, y, _) = gaussian_data(16, 60, 3, 1.0);
    let m = fit(x.view(), y.view(), Psi::Identity, PenaltySpec::l1(0.0).unwrap(), &QFitConfig::default()).unwrap();
    let pr = predict(&m, x.view(), &Psi::Identity, 60).unwrap();
    assert!((&pr.mean - &with_intercept(&x).dot(&m.theta)).iter().all(|v| v.abs() < 1e-12));
    assert_eq!(pr.q_new, m.q_train);
    assert!(predict(&m, x.slice(ndarray::s![.., 0..2]), &Psi::Identity, 60).is_err());

    // m_new = 2 exactly: 1/(q_new - 1) = 3 with n_new = 4
    let mut boundary = m.clone();
    boundary.n_train = 10;
    boundary.q_train = 1.0 + 1.0 / 9.0;
    let xn = x.slice(ndarray::s![0..4, ..]).to_owned();
    let pr = predict(&boundary, xn.view(), &Psi::Identity, 4).unwrap();
    assert!(pr.covariance.is_none());
    assert!(pr.q_covariance.iter().all(|v| v.is_finite()));
}

#[test]
fn model_json_fields() {
    let m = QGaussianModel::initial(2, 10, Psi::Identity, PenaltySpec::l1(0.3).unwrap());
    let v: serde_json::Value = serde_json::to_value(&m).unwrap();
    for k in ["theta", "sigma2", "q_train", "n_train", "penalty"] {
        assert!(v.get(k).is_some(), "{k}");
    }
    let back: QGaussianModel = serde_json::from_value(v).unwrap();
    assert_eq!(back.theta, m.theta);
}
