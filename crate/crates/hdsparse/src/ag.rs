//! Accelerated gradient for composite problems with a nonconvex smooth part.
//!
//! The problem is `min Psi(x) + chi(x)` where `Psi = loss + concave penalty part`
//! is L-smooth and `chi = lambda * |x|_1` (unpenalized coordinates skipped).

use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::linalg::{gram_lambda_max, norm2, norm_inf};
use crate::penalty::{prox_scaled_l1, PenaltySpec};
use crate::{Error, Result};

/// Smooth part `Psi` of a composite objective.
pub trait SmoothObjective: Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: ArrayView1<f64>) -> f64;
    fn grad(&self, x: ArrayView1<f64>) -> Array1<f64>;
    /// Lipschitz constant of the gradient.
    fn lipschitz(&self) -> f64;
    /// Coordinates left out of the l1 term (the intercept).
    fn skip(&self) -> &[usize] {
        &[]
    }
}

fn with_intercept(x: ArrayView2<f64>) -> Array2<f64> {
    let mut d = Array2::ones((x.nrows(), x.ncols() + 1));
    d.slice_mut(ndarray::s![.., 1..]).assign(&x);
    d
}

/// Least squares `|X b - y|^2/(2n)` plus the concave penalty part.
#[derive(Debug, Clone)]
pub struct LinearObjective {
    design: Array2<f64>,
    y: Array1<f64>,
    penalty: Option<PenaltySpec>,
    skip: Vec<usize>,
    lipschitz: f64,
}

/// Mean negative Bernoulli log-likelihood plus the concave penalty part.
#[derive(Debug, Clone)]
pub struct LogisticObjective {
    design: Array2<f64>,
    y: Array1<f64>,
    penalty: Option<PenaltySpec>,
    skip: Vec<usize>,
    lipschitz: f64,
}

/// Build the least-squares objective. With `intercept`, coordinate 0 is an
/// unpenalized intercept and the remaining coordinates follow the columns of `x`.
pub fn make_linear_objective(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    penalty: Option<&PenaltySpec>,
    intercept: bool,
) -> Result<LinearObjective> {
    if x.nrows() != y.len() {
        return Err(Error::InvalidInput(format!(
            "{} rows but {} responses",
            x.nrows(),
            y.len()
        )));
    }
    let design = if intercept { with_intercept(x) } else { x.to_owned() };
    let lh = penalty.map_or(0.0, |p| p.lipschitz_h());
    let lipschitz = gram_lambda_max(design.view()) + lh;
    Ok(LinearObjective {
        design,
        y: y.to_owned(),
        penalty: penalty.copied(),
        skip: if intercept { vec![0] } else { vec![] },
        lipschitz,
    })
}

/// Build the logistic objective; `y` must be 0/1.
pub fn make_logistic_objective(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    penalty: Option<&PenaltySpec>,
    intercept: bool,
) -> Result<LogisticObjective> {
    if x.nrows() != y.len() {
        return Err(Error::InvalidInput(format!(
            "{} rows but {} responses",
            x.nrows(),
            y.len()
        )));
    }
    if y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::InvalidInput("logistic response must be 0/1".into()));
    }
    let design = if intercept { with_intercept(x) } else { x.to_owned() };
    let lh = penalty.map_or(0.0, |p| p.lipschitz_h());
    let lipschitz = gram_lambda_max(design.view()) / 4.0 + lh;
    Ok(LogisticObjective {
        design,
        y: y.to_owned(),
        penalty: penalty.copied(),
        skip: if intercept { vec![0] } else { vec![] },
        lipschitz,
    })
}

impl LinearObjective {
    pub fn design(&self) -> ArrayView2<'_, f64> {
        self.design.view()
    }

    /// Unpenalized loss `|X b - y|^2/(2n)`.
    pub fn loss(&self, x: ArrayView1<f64>) -> f64 {
        let r = self.design.dot(&x) - &self.y;
        r.dot(&r) / (2.0 * self.y.len() as f64)
    }
}

impl LogisticObjective {
    pub fn design(&self) -> ArrayView2<'_, f64> {
        self.design.view()
    }

    /// Unpenalized mean negative log-likelihood.
    pub fn loss(&self, x: ArrayView1<f64>) -> f64 {
        let eta = self.design.dot(&x);
        let n = self.y.len() as f64;
        eta.iter()
            .zip(self.y.iter())
            .map(|(&e, &y)| log1pexp(e) - y * e)
            .sum::<f64>()
            / n
    }
}

/// ln(1 + e^x) without overflow.
pub fn log1pexp(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn concave_value(p: &Option<PenaltySpec>, x: ArrayView1<f64>, skip: &[usize]) -> f64 {
    p.as_ref().map_or(0.0, |p| p.h_total(x, skip))
}

fn add_concave_grad(p: &Option<PenaltySpec>, x: ArrayView1<f64>, skip: &[usize], g: &mut Array1<f64>) {
    if let Some(p) = p {
        *g += &p.h_grad_skipping(x, skip);
    }
}

impl SmoothObjective for LinearObjective {
    fn dim(&self) -> usize {
        self.design.ncols()
    }

    fn value(&self, x: ArrayView1<f64>) -> f64 {
        self.loss(x) + concave_value(&self.penalty, x, &self.skip)
    }

    fn grad(&self, x: ArrayView1<f64>) -> Array1<f64> {
        let r = self.design.dot(&x) - &self.y;
        let mut g = self.design.t().dot(&r) / self.y.len() as f64;
        add_concave_grad(&self.penalty, x, &self.skip, &mut g);
        g
    }

    fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    fn skip(&self) -> &[usize] {
        &self.skip
    }
}

impl SmoothObjective for LogisticObjective {
    fn dim(&self) -> usize {
        self.design.ncols()
    }

    fn value(&self, x: ArrayView1<f64>) -> f64 {
        self.loss(x) + concave_value(&self.penalty, x, &self.skip)
    }

    fn grad(&self, x: ArrayView1<f64>) -> Array1<f64> {
        let eta = self.design.dot(&x);
        let resid = Array1::from_iter(eta.iter().zip(self.y.iter()).map(|(&e, &y)| sigmoid(e) - y));
        let mut g = self.design.t().dot(&resid) / self.y.len() as f64;
        add_concave_grad(&self.penalty, x, &self.skip, &mut g);
        g
    }

    fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    fn skip(&self) -> &[usize] {
        &self.skip
    }
}

/// Damping and step-size sequences, indexed from k = 1 at position 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgSchedule {
    pub alphas: Vec<f64>,
    pub deltas: Vec<f64>,
    pub omegas: Vec<f64>,
    pub gammas: Vec<f64>,
}

impl AgSchedule {
    /// Builds Gamma_k from the alphas.
    pub fn from_parts(alphas: Vec<f64>, deltas: Vec<f64>, omegas: Vec<f64>) -> Self {
        let mut gammas = Vec::with_capacity(alphas.len());
        let mut g = 1.0;
        for (k, a) in alphas.iter().enumerate() {
            if k > 0 {
                g *= 1.0 - a;
            }
            gammas.push(g);
        }
        Self {
            alphas,
            deltas,
            omegas,
            gammas,
        }
    }

    pub fn len(&self) -> usize {
        self.alphas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alphas.is_empty()
    }
}

/// The optimal schedule: alpha_{k+1} = 2/(1+sqrt(1+4/alpha_k^2)), omega = 2/(3L),
/// delta_k = omega/alpha_k.
pub fn schedule_optimal(l: f64, n: usize) -> AgSchedule {
    let omega = 2.0 / (3.0 * l);
    let mut alphas = Vec::with_capacity(n);
    let mut a = 1.0_f64;
    for k in 0..n {
        if k > 0 {
            a = 2.0 / (1.0 + (1.0 + 4.0 / (a * a)).sqrt());
        }
        alphas.push(a);
    }
    let deltas = alphas.iter().map(|a| omega / a).collect();
    AgSchedule::from_parts(alphas, deltas, vec![omega; n])
}

/// The reference schedule alpha_k = 2/(k+1), omega = 1/(2L), delta_k = k omega/2.
pub fn schedule_original(l: f64, n: usize) -> Result<AgSchedule> {
    let omega = 1.0 / (2.0 * l);
    let alphas = (1..=n).map(|k| 2.0 / (k as f64 + 1.0)).collect();
    let deltas = (1..=n).map(|k| k as f64 * omega / 2.0).collect();
    let s = AgSchedule::from_parts(alphas, deltas, vec![omega; n]);
    let check = verify_schedule(&s, l);
    match check.violation {
        None => Ok(s),
        Some(v) => Err(Error::Schedule(format!("{:?} at k = {}", v.condition, v.index))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ScheduleCondition {
    /// alpha_1 = 1 and alpha_k in (0, 1) afterwards
    AlphaRange,
    /// Gamma_1 = 1, Gamma_k = (1 - alpha_k) Gamma_{k-1}
    GammaRecursion,
    /// alpha_k delta_k <= omega_k
    StepOrdering,
    /// omega_k < 1/L
    StepBound,
    /// alpha_k / (delta_k Gamma_k) nonincreasing
    Monotonicity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScheduleViolation {
    pub condition: ScheduleCondition,
    /// 1-based iteration index
    pub index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScheduleCheck {
    pub valid: bool,
    pub violation: Option<ScheduleViolation>,
}

const SCHEDULE_SLACK: f64 = 1e-12;

/// Check both convergence conditions for every k; report the first violation.
pub fn verify_schedule(s: &AgSchedule, l: f64) -> ScheduleCheck {
    let fail = |condition, index| ScheduleCheck {
        valid: false,
        violation: Some(ScheduleViolation { condition, index }),
    };
    let n = s.len();
    if n == 0 || s.deltas.len() != n || s.omegas.len() != n || s.gammas.len() != n {
        return fail(ScheduleCondition::AlphaRange, 0);
    }
    let mut prev_ratio = f64::INFINITY;
    let mut gamma = 1.0;
    for k in 0..n {
        let (a, d, w) = (s.alphas[k], s.deltas[k], s.omegas[k]);
        let ok_alpha = if k == 0 { a == 1.0 } else { a > 0.0 && a < 1.0 };
        if !ok_alpha {
            return fail(ScheduleCondition::AlphaRange, k + 1);
        }
        if k > 0 {
            gamma *= 1.0 - a;
        }
        if (s.gammas[k] - gamma).abs() > SCHEDULE_SLACK * gamma {
            return fail(ScheduleCondition::GammaRecursion, k + 1);
        }
        if !(d > 0.0) || a * d > w * (1.0 + SCHEDULE_SLACK) {
            return fail(ScheduleCondition::StepOrdering, k + 1);
        }
        if !(w > 0.0) || !(w * l < 1.0) {
            return fail(ScheduleCondition::StepBound, k + 1);
        }
        let ratio = a / (d * gamma);
        if ratio > prev_ratio * (1.0 + SCHEDULE_SLACK) {
            return fail(ScheduleCondition::Monotonicity, k + 1);
        }
        prev_ratio = ratio;
    }
    ScheduleCheck {
        valid: true,
        violation: None,
    }
}

/// G(x, y, c) = (x - prox(x, y, c)) / c.
pub fn grad_mapping(
    x: ArrayView1<f64>,
    y: ArrayView1<f64>,
    c: f64,
    lambda: f64,
    skip: &[usize],
) -> Array1<f64> {
    (&x - &prox_scaled_l1(x, y, c, lambda, skip)) / c
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub estimate: Array1<f64>,
    pub iterations: usize,
    pub objective_trace: Vec<f64>,
    pub grad_map_trace: Vec<f64>,
    pub converged: bool,
    pub wall_time: f64,
}

impl SolveReport {
    pub fn final_objective(&self) -> f64 {
        self.objective_trace.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Composite objective value Psi(x) + lambda |x|_1.
pub fn composite_value<O: SmoothObjective + ?Sized>(obj: &O, lambda: f64, x: ArrayView1<f64>) -> f64 {
    let skip = obj.skip();
    let l1: f64 = x
        .iter()
        .enumerate()
        .filter(|(j, _)| !skip.contains(j))
        .map(|(_, v)| v.abs())
        .sum();
    obj.value(x) + lambda * l1
}

/// One-step-at-a-time view of the accelerated iteration.
pub struct AgIterator<'a, O: SmoothObjective + ?Sized> {
    obj: &'a O,
    lambda: f64,
    schedule: &'a AgSchedule,
    k: usize,
    pub x: Array1<f64>,
    pub x_ag: Array1<f64>,
    pub x_md: Array1<f64>,
    pub grad_md: Array1<f64>,
}

/// State after one iteration.
pub struct AgStep {
    pub k: usize,
    pub objective: f64,
    pub grad_map_norm: f64,
    pub ag_change: f64,
    pub x_change: f64,
}

impl<'a, O: SmoothObjective + ?Sized> AgIterator<'a, O> {
    pub fn new(obj: &'a O, lambda: f64, schedule: &'a AgSchedule, x0: Array1<f64>) -> Self {
        let n = x0.len();
        Self {
            obj,
            lambda,
            schedule,
            k: 0,
            x_ag: x0.clone(),
            x_md: x0.clone(),
            x: x0,
            grad_md: Array1::zeros(n),
        }
    }

    /// Iterations taken so far.
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn step(&mut self) -> Result<AgStep> {
        let k = self.k;
        if k >= self.schedule.len() {
            return Err(Error::Schedule(format!("schedule exhausted after {k} steps")));
        }
        let a = self.schedule.alphas[k];
        let d = self.schedule.deltas[k];
        let w = self.schedule.omegas[k];
        let skip = self.obj.skip();
        self.x_md = &self.x_ag * (1.0 - a) + &self.x * a;
        let g = self.obj.grad(self.x_md.view());
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged(k + 1));
        }
        let x_new = prox_scaled_l1(self.x.view(), g.view(), d, self.lambda, skip);
        let x_change = norm_inf((&x_new - &self.x).view());
        self.x = x_new;
        let ag = prox_scaled_l1(self.x_md.view(), g.view(), w, self.lambda, skip);
        let gm = (&self.x_md - &ag) / w;
        let change = norm_inf((&ag - &self.x_ag).view());
        self.x_ag = ag;
        self.grad_md = g;
        self.k += 1;
        let objective = composite_value(self.obj, self.lambda, self.x_ag.view());
        if !objective.is_finite() {
            return Err(Error::Diverged(self.k));
        }
        Ok(AgStep {
            k: self.k,
            objective,
            grad_map_norm: norm2(gm.view()),
            ag_change: change,
            x_change,
        })
    }
}

/// Run the accelerated method until successive `x` iterates differ by less
/// than `tol` in max-norm, or `max_iter` steps.
pub fn ag_solve<O: SmoothObjective + ?Sized>(
    obj: &O,
    penalty: &PenaltySpec,
    schedule: &AgSchedule,
    x0: ArrayView1<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<SolveReport> {
    let start = Instant::now();
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("x0 must be finite".into()));
    }
    let max_iter = max_iter.min(schedule.len());
    let mut it = AgIterator::new(obj, penalty.lambda, schedule, x0.to_owned());
    let mut objective_trace = Vec::with_capacity(max_iter);
    let mut grad_map_trace = Vec::with_capacity(max_iter);
    let mut best = x0.to_owned();
    let mut best_val = f64::INFINITY;
    let mut converged = false;
    while it.k() < max_iter {
        let st = it.step()?;
        objective_trace.push(st.objective);
        grad_map_trace.push(st.grad_map_norm);
        // ties at rounding level go to the later iterate
        if st.objective <= best_val + 4.0 * f64::EPSILON * best_val.abs() {
            best_val = st.objective;
            best.assign(&it.x_ag);
        }
        if st.x_change < tol {
            converged = true;
            break;
        }
    }
    Ok(SolveReport {
        estimate: best,
        iterations: objective_trace.len(),
        objective_trace,
        grad_map_trace,
        converged,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

/// Proximal gradient with a fixed step.
pub fn pg_solve<O: SmoothObjective + ?Sized>(
    obj: &O,
    penalty: &PenaltySpec,
    step: f64,
    x0: ArrayView1<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<SolveReport> {
    let start = Instant::now();
    if !(step > 0.0) {
        return Err(Error::InvalidInput("step must be positive".into()));
    }
    let skip = obj.skip();
    let lambda = penalty.lambda;
    let mut x = x0.to_owned();
    let mut fx = composite_value(obj, lambda, x.view());
    let mut objective_trace = Vec::new();
    let mut grad_map_trace = Vec::new();
    let mut converged = false;
    for k in 1..=max_iter {
        let g = obj.grad(x.view());
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged(k));
        }
        let next = prox_scaled_l1(x.view(), g.view(), step, lambda, skip);
        let diff = &x - &next;
        let fnext = composite_value(obj, lambda, next.view());
        if !fnext.is_finite() {
            return Err(Error::Diverged(k));
        }
        if fnext - fx > 1e-10 * (1.0 + fx.abs()) {
            return Err(Error::ObjectiveIncrease {
                iter: k,
                before: fx,
                after: fnext,
            });
        }
        objective_trace.push(fnext);
        grad_map_trace.push(norm2(diff.view()) / step);
        x = next;
        fx = fnext;
        if norm_inf(diff.view()) < tol {
            converged = true;
            break;
        }
    }
    Ok(SolveReport {
        estimate: x,
        iterations: objective_trace.len(),
        objective_trace,
        grad_map_trace,
        converged,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

/// First-order solver choice for penalized linear/logistic fits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AgVariant {
    /// accelerated gradient with the optimal schedule
    Ag,
    /// accelerated gradient with the reference schedule
    AgOrig,
    /// proximal gradient, step 1/L
    Pg,
}

/// Dispatch to the chosen solver with schedules built from the objective's L.
pub fn solve_with<O: SmoothObjective + ?Sized>(
    variant: AgVariant,
    obj: &O,
    penalty: &PenaltySpec,
    x0: ArrayView1<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<SolveReport> {
    let l = obj.lipschitz();
    match variant {
        AgVariant::Ag => ag_solve(obj, penalty, &schedule_optimal(l, max_iter), x0, tol, max_iter),
        AgVariant::AgOrig => ag_solve(obj, penalty, &schedule_original(l, max_iter)?, x0, tol, max_iter),
        AgVariant::Pg => pg_solve(obj, penalty, 1.0 / l, x0, tol, max_iter),
    }
}

/// Lower bound 2/((1 + a k^{-b}) k + 1) on the optimal damping sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DampingBound {
    pub value: f64,
    /// false when (a, b) fails the admissibility condition
    pub admissible: bool,
}

pub fn damping_lower_bound(k: f64, a: f64, b: f64) -> DampingBound {
    let admissible = admissible_ab(a, b);
    if !admissible {
        log::warn!("(a, b) = ({a}, {b}) is not admissible; bound not guaranteed");
    }
    DampingBound {
        value: 2.0 / ((1.0 + a * k.powf(-b)) * k + 1.0),
        admissible,
    }
}

/// a(1-b) 2^{2-b} - a b (1-b) 2^{-b} - 1 >= 0 with a > 0, 0 < b < 1.
pub fn admissible_ab(a: f64, b: f64) -> bool {
    if !(a > 0.0) || !(b > 0.0 && b < 1.0) {
        return false;
    }
    a * (1.0 - b) * 2f64.powf(2.0 - b) - a * b * (1.0 - b) * 2f64.powf(-b) - 1.0 >= 0.0
}

/// The tightest admissible (a, b) at iteration k >= 8.
pub fn optimal_ab(k: f64) -> Result<(f64, f64)> {
    if !(k >= 8.0) {
        return Err(Error::InvalidInput(format!("optimal (a, b) needs k >= 8, got {k}")));
    }
    let c = (2.0 / k).ln();
    let b = (2.0 + 5.0 * c + (9.0 * c * c + 4.0).sqrt()) / (2.0 * c);
    let a = 2f64.powf(b) / ((1.0 - b) * (4.0 - b));
    Ok((a, b))
}

/// [sum_k omega_k (1 - L omega_k)/Gamma_k]^{-1} [|x0 - x*|^2/delta_1 + (2 L_h/Gamma_N)(|x*|^2 + M^2)].
pub fn complexity_bound(
    s: &AgSchedule,
    l_psi: f64,
    l_h: f64,
    x0: ArrayView1<f64>,
    x_star: ArrayView1<f64>,
    m: f64,
) -> Result<f64> {
    if s.is_empty() {
        return Err(Error::Schedule("empty schedule".into()));
    }
    let mut denom = 0.0;
    for k in 0..s.len() {
        let w = s.omegas[k];
        if w * l_psi >= 1.0 {
            return Err(Error::Schedule(format!("omega_{} >= 1/L, bound invalid", k + 1)));
        }
        denom += w * (1.0 - l_psi * w) / s.gammas[k];
    }
    let d0 = &x0 - &x_star;
    let gn = s.gammas[s.len() - 1];
    let numer = d0.dot(&d0) / s.deltas[0] + (2.0 * l_h / gn) * (x_star.dot(&x_star) + m * m);
    Ok(numer / denom)
}

/// Central-difference gradient, used for checks.
pub fn finite_difference_grad<F: Fn(ArrayView1<f64>) -> f64>(f: F, x: ArrayView1<f64>, h: f64) -> Array1<f64> {
    let mut g = Array1::zeros(x.len());
    let mut xp = x.to_owned();
    for j in 0..x.len() {
        let orig = xp[j];
        let step = h * (1.0 + orig.abs());
        xp[j] = orig + step;
        let fp = f(xp.view());
        xp[j] = orig - step;
        let fm = f(xp.view());
        xp[j] = orig;
        g[j] = (fp - fm) / (2.0 * step);
    }
    g
}

/// Penalized coefficients (intercept removed) of an estimate.
pub fn penalized_part(estimate: ArrayView1<f64>, skip: &[usize]) -> Array1<f64> {
    let keep: Vec<usize> = (0..estimate.len()).filter(|j| !skip.contains(j)).collect();
    estimate.select(Axis(0), &keep)
}
