//! Proximal Hager-Zhang conjugate gradient through the linearized Moreau
//! envelope gradient, plus linear CG for SPD systems.
//!
//! For `f = g + h` with `g` smooth and `h` convex, stationary points of `f` are
//! the zeros of `s(x) = (x - prox_{rho h}(x - rho grad g(x))) / rho`; the
//! conjugate-gradient iteration drives `s` to zero.

use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::ag::{SmoothObjective, SolveReport};
use crate::brent;
use crate::linalg::{norm2, norm_inf, power_iteration};
use crate::penalty::soft_threshold;
use crate::{Error, Result};

/// `g + h` with `g` smooth (possibly nonconvex) and `h` convex with a cheap prox.
pub trait CompositeProblem: Sync {
    fn dim(&self) -> usize;
    fn g_value(&self, x: ArrayView1<f64>) -> f64;
    fn g_grad(&self, x: ArrayView1<f64>) -> Array1<f64>;
    fn lipschitz_g(&self) -> f64;
    fn h_value(&self, x: ArrayView1<f64>) -> f64;
    /// prox_{rho h}(v)
    fn prox_h(&self, v: ArrayView1<f64>, rho: f64) -> Array1<f64>;
}

/// A smooth objective plus `lambda * |x|_1` on its penalized coordinates.
pub struct L1Composite<'a, O: SmoothObjective + ?Sized> {
    pub obj: &'a O,
    pub lambda: f64,
}

impl<'a, O: SmoothObjective + ?Sized> L1Composite<'a, O> {
    pub fn new(obj: &'a O, lambda: f64) -> Self {
        Self { obj, lambda }
    }
}

impl<O: SmoothObjective + ?Sized> CompositeProblem for L1Composite<'_, O> {
    fn dim(&self) -> usize {
        self.obj.dim()
    }

    fn g_value(&self, x: ArrayView1<f64>) -> f64 {
        self.obj.value(x)
    }

    fn g_grad(&self, x: ArrayView1<f64>) -> Array1<f64> {
        self.obj.grad(x)
    }

    fn lipschitz_g(&self) -> f64 {
        self.obj.lipschitz()
    }

    fn h_value(&self, x: ArrayView1<f64>) -> f64 {
        let skip = self.obj.skip();
        self.lambda
            * x.iter()
                .enumerate()
                .filter(|(j, _)| !skip.contains(j))
                .map(|(_, v)| v.abs())
                .sum::<f64>()
    }

    fn prox_h(&self, v: ArrayView1<f64>, rho: f64) -> Array1<f64> {
        let skip = self.obj.skip();
        let t = rho * self.lambda;
        Array1::from_iter(
            v.iter()
                .enumerate()
                .map(|(j, &vj)| if skip.contains(&j) { vj } else { soft_threshold(vj, t) }),
        )
    }
}

/// `x'Ax/2 - b'x` for symmetric positive semidefinite `A`.
#[derive(Debug, Clone)]
pub struct Quadratic {
    pub a: Array2<f64>,
    pub b: Array1<f64>,
    lipschitz: f64,
}

impl Quadratic {
    pub fn new(a: Array2<f64>, b: Array1<f64>) -> Self {
        let lipschitz = power_iteration(|v| a.dot(&v), b.len(), 1e-12, 10_000);
        Self { a, b, lipschitz }
    }
}

impl SmoothObjective for Quadratic {
    fn dim(&self) -> usize {
        self.b.len()
    }

    fn value(&self, x: ArrayView1<f64>) -> f64 {
        0.5 * x.dot(&self.a.dot(&x)) - self.b.dot(&x)
    }

    fn grad(&self, x: ArrayView1<f64>) -> Array1<f64> {
        self.a.dot(&x) - &self.b
    }

    fn lipschitz(&self) -> f64 {
        self.lipschitz
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LineSearch {
    #[serde(alias = "wolfe")]
    WolfeSurrogate,
    #[serde(alias = "brent")]
    ExactBrent,
    Backtrack,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PcgConfig {
    /// envelope parameter; `None` means 0.5 / L
    pub rho: Option<f64>,
    pub eta: f64,
    pub wolfe_c1: f64,
    pub wolfe_c2: f64,
    /// trial-point factor of the backtracking rule
    pub backtrack_c1: f64,
    /// sufficient-decrease factor of the backtracking rule
    pub backtrack_c2: f64,
    pub line_search: LineSearch,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PcgConfig {
    fn default() -> Self {
        Self {
            rho: None,
            eta: 0.01,
            wolfe_c1: 1e-4,
            wolfe_c2: 0.9,
            backtrack_c1: 1.0,
            backtrack_c2: 0.5,
            line_search: LineSearch::ExactBrent,
            tol: 1e-6,
            max_iter: 5000,
        }
    }
}

impl PcgConfig {
    /// The envelope parameter for a problem, validated against `rho L < 1`.
    pub fn rho_for(&self, l: f64) -> Result<f64> {
        let rho = self.rho.unwrap_or(0.5 / l);
        if !(rho > 0.0) || !(rho * l < 1.0) {
            return Err(Error::InvalidInput(format!(
                "rho = {rho} must lie in (0, 1/L) with L = {l}"
            )));
        }
        if !(self.wolfe_c1 > 0.0 && self.wolfe_c1 < self.wolfe_c2 && self.wolfe_c2 < 1.0) {
            return Err(Error::InvalidInput("Wolfe constants need 0 < c1 < c2 < 1".into()));
        }
        Ok(rho)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationarityCertificate {
    pub x_hat: Array1<f64>,
    pub moreau_grad_norm: f64,
    pub rho_used: f64,
}

/// Moreau gradient together with the prox point it was computed from.
struct MoreauEval {
    s: Array1<f64>,
    prox: Array1<f64>,
}

fn moreau_eval<P: CompositeProblem + ?Sized>(p: &P, x: ArrayView1<f64>, rho: f64) -> MoreauEval {
    let g = p.g_grad(x);
    let v = &x - &(&g * rho);
    let prox = p.prox_h(v.view(), rho);
    let s = (&x - &prox) / rho;
    MoreauEval { s, prox }
}

/// `(x - prox_{rho h}(x - rho grad g(x))) / rho`.
pub fn linearized_moreau_grad<P: CompositeProblem + ?Sized>(p: &P, x: ArrayView1<f64>, rho: f64) -> Array1<f64> {
    moreau_eval(p, x, rho).s
}

/// The same vector written as `grad g(x) + (z - prox_{rho h}(z))/rho`, `z = x - rho grad g(x)`.
pub fn linearized_moreau_grad_decomposed<P: CompositeProblem + ?Sized>(
    p: &P,
    x: ArrayView1<f64>,
    rho: f64,
) -> Array1<f64> {
    let g = p.g_grad(x);
    let z = &x - &(&g * rho);
    let prox = p.prox_h(z.view(), rho);
    &g + &((&z - &prox) / rho)
}

/// Lipschitz constants of the exact and linearized envelope gradients.
pub fn moreau_lipschitz_constants(rho: f64, l_g: f64) -> (Option<f64>, f64) {
    let lin = l_g + 1.0 / rho;
    let lr = l_g * rho;
    let exact = if lr < 1.0 {
        Some((2.0 * lr + 1.0 + (8.0 * lr + 1.0).sqrt()) / (2.0 * rho * (1.0 - lr)))
    } else {
        None
    };
    (exact, lin)
}

/// `x - rho grad g(x)`.
pub fn tilde_g<F>(x: ArrayView1<f64>, rho: f64, g_grad: F) -> Array1<f64>
where
    F: Fn(ArrayView1<f64>) -> Array1<f64>,
{
    &x - &(g_grad(x) * rho)
}

/// Inverse of [`tilde_g`] by iterating `y <- z + rho grad g(y)`.
pub fn tilde_g_inverse<F>(z: ArrayView1<f64>, rho: f64, g_grad: F, tol: f64) -> Result<Array1<f64>>
where
    F: Fn(ArrayView1<f64>) -> Array1<f64>,
{
    const CAP: usize = 10_000;
    let mut y = z.to_owned();
    for _ in 0..CAP {
        let next = &z + &(g_grad(y.view()) * rho);
        let step = norm2((&next - &y).view());
        y = next;
        if !step.is_finite() {
            break;
        }
        if step <= tol {
            return Ok(y);
        }
    }
    Err(Error::NoConvergence {
        limit: CAP,
        residual: norm2((&tilde_g(y.view(), rho, &g_grad) - &z).view()),
    })
}

/// Hager-Zhang direction with the lower truncation `eta_k = -1/(|d| min(eta, |s_prev|))`.
pub fn hz_direction(
    s_next: ArrayView1<f64>,
    s_prev: ArrayView1<f64>,
    d_prev: ArrayView1<f64>,
    eta: f64,
) -> Array1<f64> {
    let y = &s_next - &s_prev;
    let dy = d_prev.dot(&y);
    let dn = norm2(d_prev);
    let eta_k = -1.0 / (dn * eta.min(norm2(s_prev)));
    let beta_bar = if dy == 0.0 || !dy.is_finite() {
        eta_k
    } else {
        let yy = y.dot(&y);
        let v = &y - &(&d_prev * (2.0 * yy / dy));
        let beta = v.dot(&s_next) / dy;
        beta.max(eta_k)
    };
    let beta_bar = if beta_bar.is_finite() { beta_bar } else { 0.0 };
    &d_prev * beta_bar - &s_next
}

/// `g(x) + <grad g(x), q - x> + |q - x|^2/(2 rho) + h(q)` with `q = prox_{rho h}(x - rho grad g(x))`.
pub fn surrogate_objective<P: CompositeProblem + ?Sized>(p: &P, x: ArrayView1<f64>, rho: f64) -> f64 {
    let g = p.g_grad(x);
    let v = &x - &(&g * rho);
    let q = p.prox_h(v.view(), rho);
    let dq = &q - &x;
    p.g_value(x) + g.dot(&dq) + dq.dot(&dq) / (2.0 * rho) + p.h_value(q.view())
}

/// Moreau envelope `min_y t(y) + |y - x|^2/(2 rho)` evaluated at the prox point.
pub fn moreau_envelope<T, Q>(t: T, prox: Q, x: ArrayView1<f64>, rho: f64) -> f64
where
    T: Fn(ArrayView1<f64>) -> f64,
    Q: Fn(ArrayView1<f64>, f64) -> Array1<f64>,
{
    let y = prox(x, rho);
    let d = &y - &x;
    t(y.view()) + d.dot(&d) / (2.0 * rho)
}

/// Closed-form envelope of `lambda |x|_1` (coordinatewise Huber).
pub fn l1_moreau_envelope(x: ArrayView1<f64>, lambda: f64, rho: f64) -> f64 {
    x.iter()
        .map(|&v| {
            if v.abs() <= rho * lambda {
                v * v / (2.0 * rho)
            } else {
                lambda * v.abs() - 0.5 * rho * lambda * lambda
            }
        })
        .sum()
}

fn directional<P: CompositeProblem + ?Sized>(
    p: &P,
    x: ArrayView1<f64>,
    d: ArrayView1<f64>,
    alpha: f64,
    rho: f64,
) -> f64 {
    let xt = &x + &(&d * alpha);
    linearized_moreau_grad(p, xt.view(), rho).dot(&d)
}

/// Step length along a descent direction `d` (with `<d, s(x)> < 0`).
pub fn line_search<P: CompositeProblem + ?Sized>(
    p: &P,
    x: ArrayView1<f64>,
    d: ArrayView1<f64>,
    mode: LineSearch,
    config: &PcgConfig,
) -> Result<f64> {
    let rho = config.rho_for(p.lipschitz_g())?;
    let phi0 = directional(p, x, d, 0.0, rho);
    if !(phi0 < 0.0) {
        return Err(Error::LineSearch(format!("not a descent direction: <d, s> = {phi0}")));
    }
    let (_, l_lin) = moreau_lipschitz_constants(rho, p.lipschitz_g());
    let alpha0 = 1.0 / l_lin.max(f64::MIN_POSITIVE) * (norm2(linearized_moreau_grad(p, x, rho).view()) / norm2(d)).max(1e-12);
    match mode {
        LineSearch::ExactBrent => {
            let mut lo = 0.0;
            let mut hi = alpha0.max(f64::MIN_POSITIVE);
            let mut found = false;
            for _ in 0..60 {
                let v = directional(p, x, d, hi, rho);
                if !v.is_finite() {
                    return Err(Error::LineSearch(format!("non-finite directional derivative at alpha = {hi}")));
                }
                if v >= 0.0 {
                    found = true;
                    break;
                }
                lo = hi;
                hi *= 2.0;
            }
            if !found {
                return Err(Error::LineSearch(format!(
                    "no sign change of <s(x + a d), d> up to alpha = {hi}"
                )));
            }
            let a = brent::root(|a| directional(p, x, d, a, rho), lo, hi, 1e-10, 4.0 * f64::EPSILON, 200)?;
            if a > 0.0 {
                Ok(a)
            } else {
                Ok(hi)
            }
        }
        LineSearch::WolfeSurrogate => {
            let f0 = surrogate_objective(p, x, rho);
            let (c1, c2) = (config.wolfe_c1, config.wolfe_c2);
            let mut lo = 0.0;
            let mut hi = f64::INFINITY;
            let mut a = alpha0;
            for _ in 0..120 {
                let xt = &x + &(&d * a);
                let fa = surrogate_objective(p, xt.view(), rho);
                if !(fa <= f0 + c1 * a * phi0) {
                    hi = a;
                    a = 0.5 * (lo + hi);
                } else if directional(p, x, d, a, rho) < c2 * phi0 {
                    lo = a;
                    a = if hi.is_finite() { 0.5 * (lo + hi) } else { 2.0 * a };
                } else {
                    return Ok(a);
                }
            }
            Err(Error::LineSearch(format!(
                "Wolfe conditions not met; bracket [{lo}, {hi}]"
            )))
        }
        LineSearch::Backtrack => {
            let dd = d.dot(&d);
            let mut a = 1.0_f64.max(alpha0);
            for _ in 0..60 {
                let lhs = -directional(p, x, d, config.backtrack_c1 * a, rho);
                if lhs >= config.backtrack_c1 * config.backtrack_c2 * a * dd {
                    return Ok(a);
                }
                a *= 0.5;
            }
            Err(Error::LineSearch(format!("backtracking failed; last alpha = {a}")))
        }
    }
}

/// Proximal Hager-Zhang conjugate gradient.
///
/// The estimate is the prox point `prox_{rho h}(x - rho grad g(x))` of the final
/// iterate, so l1 zeros are exact.
pub fn pcg_solve<P: CompositeProblem + ?Sized>(
    p: &P,
    config: &PcgConfig,
    x0: ArrayView1<f64>,
) -> Result<(SolveReport, StationarityCertificate)> {
    let start = Instant::now();
    let rho = config.rho_for(p.lipschitz_g())?;
    let dim = p.dim().max(1);
    let mut x = x0.to_owned();
    let mut ev = moreau_eval(p, x.view(), rho);
    let mut d = -&ev.s;
    let mut objective_trace = Vec::new();
    let mut grad_map_trace = Vec::new();
    let mut converged = false;
    let mut since_restart = 0usize;
    for k in 0..=config.max_iter {
        let sn = norm_inf(ev.s.view());
        if !sn.is_finite() {
            return Err(Error::Diverged(k));
        }
        if sn <= config.tol {
            converged = true;
            break;
        }
        if k == config.max_iter {
            break;
        }
        if d.dot(&ev.s) >= 0.0 || since_restart >= dim {
            d = -&ev.s;
            since_restart = 0;
        }
        let alpha = match line_search(p, x.view(), d.view(), config.line_search, config) {
            Ok(a) => a,
            Err(e) if since_restart > 0 => {
                log::debug!("line search failed on a conjugate direction ({e}); restarting");
                d = -&ev.s;
                since_restart = 0;
                line_search(p, x.view(), d.view(), config.line_search, config)?
            }
            Err(e) => return Err(e),
        };
        x = &x + &(&d * alpha);
        let next = moreau_eval(p, x.view(), rho);
        d = hz_direction(next.s.view(), ev.s.view(), d.view(), config.eta);
        since_restart += 1;
        ev = next;
        let f = p.g_value(ev.prox.view()) + p.h_value(ev.prox.view());
        if !f.is_finite() {
            return Err(Error::Diverged(k + 1));
        }
        objective_trace.push(f);
        grad_map_trace.push(norm_inf(ev.s.view()));
    }
    let x_hat = ev.prox.clone();
    let cert = StationarityCertificate {
        moreau_grad_norm: norm_inf(linearized_moreau_grad(p, x_hat.view(), rho).view()),
        x_hat: x_hat.clone(),
        rho_used: rho,
    };
    Ok((
        SolveReport {
            estimate: x_hat,
            iterations: objective_trace.len(),
            objective_trace,
            grad_map_trace,
            converged,
            wall_time: start.elapsed().as_secs_f64(),
        },
        cert,
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CgOutput {
    pub x: Array1<f64>,
    pub iterations: usize,
    pub residual_norm: f64,
    /// residual vectors r_0, r_1, ... when requested
    pub residuals: Vec<Array1<f64>>,
}

fn cg_impl<F>(apply: F, b: ArrayView1<f64>, tol: f64, max_iter: usize, keep: bool) -> Result<CgOutput>
where
    F: Fn(ArrayView1<f64>) -> Array1<f64>,
{
    let n = b.len();
    let bn = norm2(b);
    let mut x = Array1::zeros(n);
    if bn == 0.0 {
        return Ok(CgOutput {
            x,
            iterations: 0,
            residual_norm: 0.0,
            residuals: Vec::new(),
        });
    }
    let mut r = b.to_owned();
    let mut pdir = r.clone();
    let mut rr = r.dot(&r);
    let mut residuals = Vec::new();
    if keep {
        residuals.push(r.clone());
    }
    for it in 1..=max_iter {
        let ap = apply(pdir.view());
        let pap = pdir.dot(&ap);
        if !(pap > 0.0) {
            return Err(Error::InvalidInput(format!(
                "operator is not positive definite (p'Ap = {pap:e} at iteration {it})"
            )));
        }
        let a = rr / pap;
        x.scaled_add(a, &pdir);
        r.scaled_add(-a, &ap);
        let rr_new = r.dot(&r);
        if keep {
            residuals.push(r.clone());
        }
        if rr_new.sqrt() <= tol * bn {
            let true_res = norm2((&apply(x.view()) - &b).view());
            return Ok(CgOutput {
                x,
                iterations: it,
                residual_norm: true_res,
                residuals,
            });
        }
        let beta = rr_new / rr;
        rr = rr_new;
        pdir = &r + &(&pdir * beta);
    }
    Err(Error::NoConvergence {
        limit: max_iter,
        residual: rr.sqrt() / bn,
    })
}

/// Conjugate gradient for `A x = b` with `A` SPD, starting from zero.
///
/// Stops when `|r| <= tol |b|`.
pub fn linear_cg<F>(apply: F, b: ArrayView1<f64>, tol: f64, max_iter: usize) -> Result<CgOutput>
where
    F: Fn(ArrayView1<f64>) -> Array1<f64>,
{
    cg_impl(apply, b, tol, max_iter, false)
}

/// [`linear_cg`] that also records every residual vector.
pub fn linear_cg_with_history<F>(apply: F, b: ArrayView1<f64>, tol: f64, max_iter: usize) -> Result<CgOutput>
where
    F: Fn(ArrayView1<f64>) -> Array1<f64>,
{
    cg_impl(apply, b, tol, max_iter, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn hz_hand_case() {
        let d = hz_direction(array![0.0, 1.0].view(), array![-1.0, 0.0].view(), array![1.0, 0.0].view(), 0.01);
        assert!((d[0] - 1.0).abs() < 1e-15 && (d[1] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn lipschitz_linearized() {
        let (_, l) = moreau_lipschitz_constants(0.1, 2.0);
        assert!((l - 12.0).abs() < 1e-12);
        assert!(moreau_lipschitz_constants(1.0, 2.0).0.is_none());
    }

    #[test]
    fn cg_identity_one_step() {
        let b = array![1.0, -2.0, 3.0];
        let out = linear_cg(|v| v.to_owned(), b.view(), 1e-12, 10).unwrap();
        assert_eq!(out.iterations, 1);
        assert_eq!(out.x, b);
    }
}
