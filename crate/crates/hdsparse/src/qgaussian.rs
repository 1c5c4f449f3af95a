//! q-Gaussian distribution and penalized q-Gaussian regression.
//!
//! For `1 < q < 1 + 2/n` the q-Gaussian in dimension n is a multivariate t with
//! `m = 2/(q-1) - n` degrees of freedom. Regression fits
//! `y ~ qGaussian(q, X theta, sigma2 * Psi)` blockwise in `(theta, sigma2, q)`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::ag::{ag_solve, schedule_optimal, SmoothObjective};
use crate::brent;
use crate::linalg::{cholesky, forward_solve, log_det_chol, power_iteration};
use crate::pcg::{linear_cg, pcg_solve, L1Composite, PcgConfig};
use crate::penalty::PenaltySpec;
use crate::{Error, Result};

const LN_PI: f64 = 1.144_729_885_849_400_2;

/// Tsallis q-exponential; zero outside its support.
pub fn q_exp(x: f64, q: f64) -> f64 {
    let base = 1.0 + (1.0 - q) * x;
    if base > 0.0 {
        base.powf(1.0 / (1.0 - q))
    } else {
        0.0
    }
}

/// Tsallis q-logarithm `(x^{1-q} - 1)/(1-q)`.
pub fn q_log(x: f64, q: f64) -> f64 {
    (x.powf(1.0 - q) - 1.0) / (1.0 - q)
}

/// Degrees of freedom `m = 2/(q-1) - n`.
pub fn dof_from_q(q: f64, n: usize) -> Result<f64> {
    QShape::new(q, n).map(|s| s.dof())
}

/// Inverse of [`dof_from_q`]: `q = 1 + 2/(m + n)`.
pub fn q_from_dof(m: f64, n: usize) -> Result<f64> {
    if !(m > 0.0) || n == 0 {
        return Err(Error::Infeasible(format!("dof must be positive, got {m}")));
    }
    Ok(1.0 + 2.0 / (m + n as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QShape {
    pub q: f64,
    pub n: usize,
}

impl QShape {
    pub fn new(q: f64, n: usize) -> Result<Self> {
        if n == 0 || !(q > 1.0) || !(q < 1.0 + 2.0 / n as f64) {
            return Err(Error::Infeasible(format!(
                "q = {q} outside (1, 1 + 2/n) for n = {n}"
            )));
        }
        Ok(Self { q, n })
    }

    /// `u = 1/(q-1)`
    pub fn u(&self) -> f64 {
        1.0 / (self.q - 1.0)
    }

    pub fn dof(&self) -> f64 {
        2.0 / (self.q - 1.0) - self.n as f64
    }
}

/// `ln Gamma(a) - ln Gamma(b)`, stable when both arguments are large.
pub fn ln_gamma_ratio(a: f64, b: f64) -> f64 {
    if a.min(b) < 100.0 {
        return ln_gamma(a) - ln_gamma(b);
    }
    let series = |z: f64| {
        let z2 = z * z;
        1.0 / (12.0 * z) - 1.0 / (360.0 * z * z2) + 1.0 / (1260.0 * z * z2 * z2)
    };
    let d = b - a;
    -d * b.ln() + (a - 0.5) * (-d / b).ln_1p() + d + series(a) - series(b)
}

/// Characterization matrix: identity (any size) or a dense SPD matrix.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Psi {
    #[default]
    Identity,
    Dense(Array2<f64>),
}

impl Psi {
    pub fn dense(m: Array2<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::InvalidInput("Psi must be square".into()));
        }
        for i in 0..m.nrows() {
            for j in 0..i {
                if (m[[i, j]] - m[[j, i]]).abs() > 1e-10 * (1.0 + m[[i, j]].abs()) {
                    return Err(Error::InvalidInput("Psi must be symmetric".into()));
                }
            }
        }
        Ok(Psi::Dense(m))
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, Psi::Identity)
    }

    fn check_dim(&self, n: usize) -> Result<()> {
        match self {
            Psi::Dense(m) if m.nrows() != n => Err(Error::InvalidInput(format!(
                "Psi is {}x{} but data has {n} rows",
                m.nrows(),
                m.ncols()
            ))),
            _ => Ok(()),
        }
    }

    /// `Psi^{-1} v` by conjugate gradient.
    pub fn solve(&self, v: ArrayView1<f64>) -> Result<Array1<f64>> {
        match self {
            Psi::Identity => Ok(v.to_owned()),
            Psi::Dense(m) => {
                let n = v.len();
                Ok(linear_cg(|z| m.dot(&z), v, 1e-13, 10 * n + 100)?.x)
            }
        }
    }

    pub fn to_dense(&self, n: usize) -> Array2<f64> {
        match self {
            Psi::Identity => Array2::eye(n),
            Psi::Dense(m) => m.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QGaussianParams {
    pub mu: Array1<f64>,
    pub sigma2: f64,
    pub psi: Psi,
    pub shape: QShape,
}

impl QGaussianParams {
    pub fn new(mu: Array1<f64>, sigma2: f64, psi: Psi, q: f64) -> Result<Self> {
        let n = mu.len();
        psi.check_dim(n)?;
        if !(sigma2 > 0.0) {
            return Err(Error::InvalidInput(format!("sigma2 must be positive, got {sigma2}")));
        }
        Ok(Self {
            mu,
            sigma2,
            psi,
            shape: QShape::new(q, n)?,
        })
    }

    /// `Sigma = sigma2 * Psi`
    pub fn sigma(&self) -> Array2<f64> {
        self.psi.to_dense(self.mu.len()) * self.sigma2
    }
}

/// Log-density in the `(q, mu, Sigma)` parameterization.
pub fn logpdf(x: ArrayView1<f64>, params: &QGaussianParams) -> Result<f64> {
    let n = params.mu.len();
    if x.len() != n {
        return Err(Error::InvalidInput(format!("point has length {}, expected {n}", x.len())));
    }
    let sh = params.shape;
    let u = sh.u();
    let m = sh.dof();
    let r = &x - &params.mu;
    let l = cholesky(params.sigma().view())?;
    let z = forward_solve(l.view(), r.view());
    let quad = z.dot(&z);
    Ok(ln_gamma_ratio(u, u - 0.5 * n as f64)
        - 0.5 * n as f64 * (m.ln() + LN_PI)
        - 0.5 * log_det_chol(l.view())
        - u * (quad / m).ln_1p())
}

/// Log-density in the `(q, mu, Lambda)` parameterization, `Lambda = m Sigma`.
pub fn logpdf_lambda(x: ArrayView1<f64>, mu: ArrayView1<f64>, q: f64, lambda: ArrayView2<f64>) -> Result<f64> {
    let n = mu.len();
    let sh = QShape::new(q, n)?;
    let u = sh.u();
    let l = cholesky(lambda)?;
    let r = &x - &mu;
    let z = forward_solve(l.view(), r.view());
    let quad = z.dot(&z);
    Ok(-0.5 * (n as f64 * LN_PI + log_det_chol(l.view())) + ln_gamma_ratio(u, u - 0.5 * n as f64)
        + quad.ln_1p() / (1.0 - q))
}

/// Multivariate t log-density with `df` degrees of freedom and scale matrix `scale`.
pub fn multivariate_t_logpdf(
    x: ArrayView1<f64>,
    mu: ArrayView1<f64>,
    df: f64,
    scale: ArrayView2<f64>,
) -> Result<f64> {
    let n = mu.len() as f64;
    let l = cholesky(scale)?;
    let z = forward_solve(l.view(), (&x - &mu).view());
    Ok(ln_gamma(0.5 * (df + n)) - ln_gamma(0.5 * df) - 0.5 * n * (df.ln() + LN_PI) - 0.5 * log_det_chol(l.view())
        - 0.5 * (df + n) * (z.dot(&z) / df).ln_1p())
}

/// q-covariance `E_q[(X - mu)(X - mu)']`.
pub fn q_covariance(params: &QGaussianParams) -> Result<Array2<f64>> {
    let sh = params.shape;
    let (q, n) = (sh.q, sh.n as f64);
    let u = sh.u();
    let m = sh.dof();
    let sigma = params.sigma();
    let l = cholesky(sigma.view())?;
    let log_det_pi_m = n * (LN_PI + m.ln()) + log_det_chol(l.view());
    let log_factor = 0.5 * (1.0 - q) * log_det_pi_m + ln_gamma(u + 1.0 - 0.5 * n)
        - q * ln_gamma(u - 0.5 * n)
        - ln_gamma(u + 1.0)
        + q * ln_gamma(u);
    Ok(sigma * log_factor.exp())
}

/// Ordinary covariance `m/(m-2) Sigma`, present only when `q < 1 + 2/(n+2)`.
pub fn covariance(params: &QGaussianParams) -> Option<Array2<f64>> {
    let sh = params.shape;
    if sh.q < 1.0 + 2.0 / (sh.n as f64 + 2.0) {
        let m = sh.dof();
        Some(params.sigma() * (m / (m - 2.0)))
    } else {
        None
    }
}

/// One draw from the q-Gaussian (a multivariate t).
pub fn sample<R: Rng + ?Sized>(params: &QGaussianParams, rng: &mut R) -> Result<Array1<f64>> {
    let n = params.mu.len();
    let m = params.shape.dof();
    let l = cholesky(params.sigma().view())?;
    let z: Array1<f64> = Array1::from_iter((0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
    let w = ChiSquared::new(m)
        .map_err(|e| Error::InvalidInput(e.to_string()))?
        .sample(rng);
    Ok(&params.mu + &(l.dot(&z) * (m / w).sqrt()))
}

/// `q_subset` with the same `1/(q-1) - n` as the training fit.
pub fn recover_q_subset(q_train: f64, n_train: usize, n_subset: usize) -> Result<f64> {
    QShape::new(q_train, n_train)?;
    let u = 1.0 / (q_train - 1.0) - n_train as f64 + n_subset as f64;
    let q = 1.0 + 1.0 / u;
    QShape::new(q, n_subset).map_err(|_| {
        Error::Infeasible(format!(
            "q_train = {q_train} (n = {n_train}) maps to infeasible q = {q} for n = {n_subset}"
        ))
    })?;
    Ok(q)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QGaussianModel {
    /// intercept first
    pub theta: Array1<f64>,
    pub sigma2: f64,
    pub q_train: f64,
    pub n_train: usize,
    pub penalty: PenaltySpec,
    #[serde(skip)]
    pub psi: Psi,
    #[serde(default)]
    pub fit_trace: Vec<f64>,
    #[serde(default)]
    pub outer_iterations: usize,
}

impl QGaussianModel {
    /// Model with zero coefficients and the default starting `q = 1 + 1/n_train`.
    pub fn initial(p: usize, n_train: usize, psi: Psi, penalty: PenaltySpec) -> Self {
        Self {
            theta: Array1::zeros(p + 1),
            sigma2: 1.0,
            q_train: 1.0 + 1.0 / n_train as f64,
            n_train,
            penalty,
            psi,
            fit_trace: Vec::new(),
            outer_iterations: 0,
        }
    }
}

fn design_with_intercept(x: ArrayView2<f64>) -> Array2<f64> {
    let mut d = Array2::ones((x.nrows(), x.ncols() + 1));
    d.slice_mut(ndarray::s![.., 1..]).assign(&x);
    d
}

fn check_shapes(model: &QGaussianModel, x: ArrayView2<f64>, y: ArrayView1<f64>) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::InvalidInput(format!("{} rows but {} responses", x.nrows(), y.len())));
    }
    if x.ncols() + 1 != model.theta.len() {
        return Err(Error::InvalidInput(format!(
            "{} columns but theta has {} entries (intercept included)",
            x.ncols(),
            model.theta.len()
        )));
    }
    if y.len() != model.n_train {
        return Err(Error::InvalidInput(format!(
            "model was set up for {} training rows, got {}",
            model.n_train,
            y.len()
        )));
    }
    model.psi.check_dim(y.len())
}

/// `Q = r' Psi^{-1} r + 2 N sum_{j>=1} w(theta_j)` with `r = y - X theta`.
pub fn quadratic_term(model: &QGaussianModel, x: ArrayView2<f64>, y: ArrayView1<f64>) -> Result<f64> {
    check_shapes(model, x, y)?;
    let d = design_with_intercept(x);
    let r = &y - &d.dot(&model.theta);
    let pr = model.psi.solve(r.view())?;
    let n = y.len() as f64;
    Ok(r.dot(&pr) + 2.0 * n * model.penalty.total(model.theta.view(), &[0]))
}

/// Objective as a function of `(u, sigma2, Q)` for `N` training rows.
pub fn profile_objective(u: f64, sigma2: f64, q_term: f64, n: usize) -> f64 {
    let nf = n as f64;
    let m = 2.0 * u - nf;
    0.5 * nf * sigma2.ln() + ln_gamma_ratio(u - 0.5 * nf, u) + 0.5 * nf * m.ln() + u * (q_term / (m * sigma2)).ln_1p()
}

/// Penalized negative log-likelihood of the training data (constants dropped).
pub fn neg_penalized_loglik(model: &QGaussianModel, x: ArrayView2<f64>, y: ArrayView1<f64>) -> Result<f64> {
    QShape::new(model.q_train, model.n_train)?;
    let q_term = quadratic_term(model, x, y)?;
    Ok(profile_objective(1.0 / (model.q_train - 1.0), model.sigma2, q_term, model.n_train))
}

/// Partial derivatives of [`neg_penalized_loglik`].
#[derive(Debug, Clone, PartialEq)]
pub struct LoglikGradient {
    pub theta: Array1<f64>,
    pub sigma2: f64,
    /// derivative in `u = 1/(q-1)`
    pub u: f64,
}

/// Analytic gradient; the l1 part uses `sign(theta_j)` (zero at zero).
pub fn neg_penalized_loglik_grad(
    model: &QGaussianModel,
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
) -> Result<LoglikGradient> {
    check_shapes(model, x, y)?;
    let nf = y.len() as f64;
    let u = 1.0 / (model.q_train - 1.0);
    let m = 2.0 * u - nf;
    let s2 = model.sigma2;
    let d = design_with_intercept(x);
    let r = &y - &d.dot(&model.theta);
    let pr = model.psi.solve(r.view())?;
    let pen = &model.penalty;
    let q_term = r.dot(&pr) + 2.0 * nf * pen.total(model.theta.view(), &[0]);
    let mut dq = d.t().dot(&pr) * -2.0;
    for j in 1..model.theta.len() {
        let t = model.theta[j];
        dq[j] += 2.0 * nf * (pen.lambda * t.signum() * (t != 0.0) as i32 as f64 + pen.h_deriv(t));
    }
    let ratio = q_term / (m * s2);
    let dj_dq = u / (m * s2) / (1.0 + ratio);
    Ok(LoglikGradient {
        theta: dq * dj_dq,
        sigma2: 0.5 * nf / s2 - u * ratio / s2 / (1.0 + ratio),
        u: digamma(u - 0.5 * nf) - digamma(u) + nf / m + ratio.ln_1p() - u * (2.0 * ratio / m) / (1.0 + ratio),
    })
}

/// Closed-form minimizer of the objective in `sigma2` at fixed `(theta, q)`.
pub fn sigma2_update(model: &QGaussianModel, x: ArrayView2<f64>, y: ArrayView1<f64>) -> Result<f64> {
    let q_term = quadratic_term(model, x, y)?;
    sigma2_closed_form(q_term, model.q_train, model.n_train)
}

pub fn sigma2_closed_form(q_term: f64, q: f64, n: usize) -> Result<f64> {
    if !(q_term > 0.0) {
        return Err(Error::InvalidInput(format!(
            "quadratic term must be positive for the sigma2 update, got {q_term}"
        )));
    }
    QShape::new(q, n)?;
    let u = 1.0 / (q - 1.0);
    let nf = n as f64;
    Ok((u / (0.5 * nf) - 1.0) / (2.0 * u - nf) * q_term)
}

/// Result of the one-dimensional search over `u = 1/(q-1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QUpdate {
    pub q: f64,
    pub u: f64,
    pub sigma2: f64,
    pub objective: f64,
    /// objective at the lower end of the final search interval
    pub objective_lower: f64,
    /// objective at the upper end of the final search interval
    pub objective_upper: f64,
    /// true when the minimizer was not bracketed below the cap
    pub at_cap: bool,
}

const U_CAP: f64 = 1e8;

/// Minimize over `u` in `(N/2, U]` with `sigma2` profiled; returns `q = 1 + 1/u`.
pub fn q_update(model: &QGaussianModel, x: ArrayView2<f64>, y: ArrayView1<f64>) -> Result<QUpdate> {
    let q_term = quadratic_term(model, x, y)?;
    q_search(q_term, model.n_train)
}

fn q_search(q_term: f64, n: usize) -> Result<QUpdate> {
    if !(q_term > 0.0) {
        return Err(Error::InvalidInput(format!("quadratic term must be positive, got {q_term}")));
    }
    let nf = n as f64;
    let half = 0.5 * nf;
    let lo = half + 1e-6 * nf;
    let f = |u: f64| -> f64 {
        let q = 1.0 + 1.0 / u;
        let s2 = sigma2_closed_form(q_term, q, n).unwrap_or(f64::NAN);
        profile_objective(u, s2, q_term, n)
    };
    // coarse scan in log(u - N/2), widened until the minimum is interior or the cap is hit
    let t_lo = (lo - half).ln();
    let per_decade = 8.0;
    let step = std::f64::consts::LN_10 / per_decade;
    let mut grid: Vec<(f64, f64)> = vec![(lo, f(lo))];
    let mut upper = (10.0 * nf).min(U_CAP);
    let mut i = 1;
    loop {
        loop {
            let u = half + (t_lo + step * i as f64).exp();
            let u = u.min(upper);
            grid.push((u, f(u)));
            i += 1;
            if u >= upper {
                break;
            }
        }
        let best = best_index(&grid);
        if best + 1 < grid.len() || upper >= U_CAP {
            break;
        }
        upper = (upper * 10.0).min(U_CAP);
    }
    let best = best_index(&grid);
    let (objective_lower, objective_upper) = (grid[0].1, grid[grid.len() - 1].1);
    if best + 1 == grid.len() {
        log::warn!("q search reached the cap u = {U_CAP:e}; data look Gaussian");
        let (u, obj) = grid[best];
        let q = 1.0 + 1.0 / u;
        return Ok(QUpdate {
            q,
            u,
            sigma2: sigma2_closed_form(q_term, q, n)?,
            objective: obj,
            objective_lower,
            objective_upper,
            at_cap: true,
        });
    }
    let a = grid[best.saturating_sub(1)].0;
    let b = grid[best + 1].0;
    // refine in t = ln(u - N/2) for conditioning
    let (t, ft) = brent::minimize(|t| f(half + t.exp()), (a - half).ln(), (b - half).ln(), 1e-10, 200);
    let (u, obj) = if ft <= grid[best].1 {
        (half + t.exp(), ft)
    } else {
        grid[best]
    };
    let q = 1.0 + 1.0 / u;
    Ok(QUpdate {
        q,
        u,
        sigma2: sigma2_closed_form(q_term, q, n)?,
        objective: obj,
        objective_lower,
        objective_upper,
        at_cap: false,
    })
}

fn best_index(grid: &[(f64, f64)]) -> usize {
    let mut best = 0;
    for (i, &(_, v)) in grid.iter().enumerate() {
        if v < grid[best].1 {
            best = i;
        }
    }
    best
}

/// `(1/2N) (y - X theta)' Psi^{-1} (y - X theta)` plus the concave penalty part.
///
/// `Psi^{-1} X` and `Psi^{-1} y` are formed once by conjugate gradient.
pub struct GlsObjective {
    design: Array2<f64>,
    whitened: Array2<f64>,
    y: Array1<f64>,
    wy: Array1<f64>,
    penalty: PenaltySpec,
    skip: Vec<usize>,
    lipschitz: f64,
}

impl GlsObjective {
    pub fn new(x: ArrayView2<f64>, y: ArrayView1<f64>, psi: &Psi, penalty: &PenaltySpec) -> Result<Self> {
        psi.check_dim(y.len())?;
        let design = design_with_intercept(x);
        let mut whitened = design.clone();
        if !psi.is_identity() {
            for j in 0..design.ncols() {
                let col = psi.solve(design.column(j))?;
                whitened.column_mut(j).assign(&col);
            }
        }
        let wy = psi.solve(y)?;
        let n = y.len() as f64;
        let lam = power_iteration(|v| design.t().dot(&whitened.dot(&v)) / n, design.ncols(), 1e-8, 1000);
        let skip = if penalty.penalize_intercept { vec![] } else { vec![0] };
        Ok(Self {
            lipschitz: lam + penalty.lipschitz_h(),
            design,
            whitened,
            y: y.to_owned(),
            wy,
            penalty: *penalty,
            skip,
        })
    }
}

impl SmoothObjective for GlsObjective {
    fn dim(&self) -> usize {
        self.design.ncols()
    }

    fn value(&self, theta: ArrayView1<f64>) -> f64 {
        let r = &self.y - &self.design.dot(&theta);
        let wr = &self.wy - &self.whitened.dot(&theta);
        r.dot(&wr) / (2.0 * self.y.len() as f64) + self.penalty.h_total(theta, &self.skip)
    }

    fn grad(&self, theta: ArrayView1<f64>) -> Array1<f64> {
        let r = &self.y - &self.design.dot(&theta);
        let mut g = self.whitened.t().dot(&r) / -(self.y.len() as f64);
        g += &self.penalty.h_grad_skipping(theta, &self.skip);
        g
    }

    fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    fn skip(&self) -> &[usize] {
        &self.skip
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThetaSolver {
    Pcg,
    Ag,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QFitConfig {
    pub q0: Option<f64>,
    pub outer_tol: f64,
    pub max_outer: usize,
    pub theta_solver: ThetaSolver,
    pub pcg: PcgConfig,
    /// tolerance and iteration cap when `theta_solver` is `Ag`
    pub ag_tol: f64,
    pub ag_max_iter: usize,
}

impl Default for QFitConfig {
    fn default() -> Self {
        Self {
            q0: None,
            outer_tol: 1e-8,
            max_outer: 50,
            theta_solver: ThetaSolver::Pcg,
            pcg: PcgConfig::default(),
            ag_tol: 1e-8,
            ag_max_iter: 20_000,
        }
    }
}

/// Solve the location subproblem; does not depend on `q` or `sigma2`.
pub fn theta_update(
    model: &QGaussianModel,
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    config: &QFitConfig,
) -> Result<Array1<f64>> {
    check_shapes(model, x, y)?;
    let obj = GlsObjective::new(x, y, &model.psi, &model.penalty)?;
    let x0 = Array1::zeros(obj.dim());
    match config.theta_solver {
        ThetaSolver::Pcg => {
            let problem = L1Composite::new(&obj, model.penalty.lambda);
            let (rep, cert) = pcg_solve(&problem, &config.pcg, x0.view())?;
            if !rep.converged {
                return Err(Error::NoConvergence {
                    limit: config.pcg.max_iter,
                    residual: cert.moreau_grad_norm,
                });
            }
            Ok(rep.estimate)
        }
        ThetaSolver::Ag => {
            let sched = schedule_optimal(obj.lipschitz(), config.ag_max_iter);
            let rep = ag_solve(&obj, &model.penalty, &sched, x0.view(), config.ag_tol, config.ag_max_iter)?;
            if !rep.converged {
                return Err(Error::NoConvergence {
                    limit: config.ag_max_iter,
                    residual: rep.grad_map_trace.last().copied().unwrap_or(f64::NAN),
                });
            }
            Ok(rep.estimate)
        }
    }
}

/// Alternate the sigma2 closed form and the q search from the model's current values.
fn outer_loop(model: &mut QGaussianModel, x: ArrayView2<f64>, y: ArrayView1<f64>, config: &QFitConfig) -> Result<()> {
    let q_term = quadratic_term(model, x, y)?;
    let mut prev = profile_objective(1.0 / (model.q_train - 1.0), model.sigma2, q_term, model.n_train);
    model.fit_trace = vec![prev];
    model.outer_iterations = 0;
    for _ in 0..config.max_outer {
        let s2 = sigma2_closed_form(q_term, model.q_train, model.n_train)?;
        let s2_obj = profile_objective(1.0 / (model.q_train - 1.0), s2, q_term, model.n_train);
        let up = q_search(q_term, model.n_train)?;
        // keep the current point unless the search improves on it
        let (q, s2, obj) = if up.objective <= s2_obj {
            (up.q, up.sigma2, up.objective)
        } else {
            (model.q_train, s2, s2_obj)
        };
        if (prev - obj).abs() < config.outer_tol {
            break;
        }
        model.q_train = q;
        model.sigma2 = s2;
        model.fit_trace.push(obj);
        model.outer_iterations += 1;
        prev = obj;
    }
    Ok(())
}

/// Blockwise fit: theta once, then sigma2 and q alternately.
pub fn fit(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    psi: Psi,
    penalty: PenaltySpec,
    config: &QFitConfig,
) -> Result<QGaussianModel> {
    let n = y.len();
    if n < 2 {
        return Err(Error::InvalidInput("need at least 2 training rows".into()));
    }
    let mut model = QGaussianModel::initial(x.ncols(), n, psi, penalty);
    if let Some(q0) = config.q0 {
        QShape::new(q0, n)?;
        model.q_train = q0;
    }
    model.theta = theta_update(&model, x, y, config)?;
    model.sigma2 = sigma2_update(&model, x, y)?;
    outer_loop(&mut model, x, y, config)?;
    Ok(model)
}

/// Continue the blockwise loop from a fitted model (theta kept).
pub fn refit(model: &QGaussianModel, x: ArrayView2<f64>, y: ArrayView1<f64>, config: &QFitConfig) -> Result<QGaussianModel> {
    let mut m = model.clone();
    outer_loop(&mut m, x, y, config)?;
    Ok(m)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub mean: Array1<f64>,
    pub q_new: f64,
    pub covariance: Option<Array2<f64>>,
    pub q_covariance: Array2<f64>,
}

/// Predictive distribution on a new block of `n_new` rows.
pub fn predict(model: &QGaussianModel, x_new: ArrayView2<f64>, psi_new: &Psi, n_new: usize) -> Result<Prediction> {
    if x_new.nrows() != n_new || x_new.ncols() + 1 != model.theta.len() {
        return Err(Error::InvalidInput(format!(
            "x_new is {}x{}, expected {n_new}x{}",
            x_new.nrows(),
            x_new.ncols(),
            model.theta.len() - 1
        )));
    }
    psi_new.check_dim(n_new)?;
    let mean = design_with_intercept(x_new).dot(&model.theta);
    let q_new = recover_q_subset(model.q_train, model.n_train, n_new)?;
    let params = QGaussianParams::new(mean.clone(), model.sigma2, psi_new.clone(), q_new)?;
    Ok(Prediction {
        covariance: covariance(&params),
        q_covariance: q_covariance(&params)?,
        mean,
        q_new,
    })
}
