//! SCAD, MCP and l1 penalties.
//!
//! Every penalty is split as `lambda * |b| + h(b)` where `h` is concave with a
//! Lipschitz gradient. Solvers treat the l1 part through its proximal map and
//! fold `h` into the smooth objective.

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PenaltyKind {
    L1,
    Scad,
    Mcp,
}

#[derive(Debug, Clone, Deserialize)]
struct RawSpec {
    kind: PenaltyKind,
    lambda: f64,
    #[serde(default)]
    a: Option<f64>,
    #[serde(default)]
    gamma: Option<f64>,
    #[serde(default)]
    penalize_intercept: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpec")]
pub struct PenaltySpec {
    pub kind: PenaltyKind,
    pub lambda: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    pub penalize_intercept: bool,
}

impl TryFrom<RawSpec> for PenaltySpec {
    type Error = Error;

    fn try_from(r: RawSpec) -> Result<Self> {
        let mut spec = match r.kind {
            PenaltyKind::L1 => PenaltySpec::l1(r.lambda)?,
            PenaltyKind::Scad => PenaltySpec::scad(r.lambda, r.a.unwrap_or(3.7))?,
            PenaltyKind::Mcp => PenaltySpec::mcp(r.lambda, r.gamma.unwrap_or(3.0))?,
        };
        spec.penalize_intercept = r.penalize_intercept;
        Ok(spec)
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidInput(format!("lambda must be >= 0, got {lambda}")));
    }
    Ok(())
}

impl PenaltySpec {
    pub fn l1(lambda: f64) -> Result<Self> {
        check_lambda(lambda)?;
        Ok(Self {
            kind: PenaltyKind::L1,
            lambda,
            a: None,
            gamma: None,
            penalize_intercept: false,
        })
    }

    pub fn scad(lambda: f64, a: f64) -> Result<Self> {
        check_lambda(lambda)?;
        if !(a > 2.0) {
            return Err(Error::InvalidInput(format!("SCAD needs a > 2, got {a}")));
        }
        Ok(Self {
            kind: PenaltyKind::Scad,
            lambda,
            a: Some(a),
            gamma: None,
            penalize_intercept: false,
        })
    }

    pub fn mcp(lambda: f64, gamma: f64) -> Result<Self> {
        check_lambda(lambda)?;
        if !(gamma > 1.0) {
            return Err(Error::InvalidInput(format!("MCP needs gamma > 1, got {gamma}")));
        }
        Ok(Self {
            kind: PenaltyKind::Mcp,
            lambda,
            a: None,
            gamma: Some(gamma),
            penalize_intercept: false,
        })
    }

    /// Same family and shape parameter at a different lambda.
    pub fn with_lambda(&self, lambda: f64) -> Self {
        Self { lambda, ..*self }
    }

    fn a(&self) -> f64 {
        self.a.unwrap_or(3.7)
    }

    fn gamma(&self) -> f64 {
        self.gamma.unwrap_or(3.0)
    }

    /// Penalty value at a single coefficient.
    pub fn value(&self, b: f64) -> f64 {
        let l = self.lambda;
        let t = b.abs();
        match self.kind {
            PenaltyKind::L1 => l * t,
            PenaltyKind::Scad => {
                let a = self.a();
                if t < l {
                    l * t
                } else if t < a * l {
                    (2.0 * a * l * t - t * t - l * l) / (2.0 * (a - 1.0))
                } else {
                    0.5 * (a + 1.0) * l * l
                }
            }
            PenaltyKind::Mcp => {
                let g = self.gamma();
                if t < g * l {
                    l * t - t * t / (2.0 * g)
                } else {
                    0.5 * g * l * l
                }
            }
        }
    }

    /// Convex part `lambda * |b|`.
    pub fn chi(&self, b: f64) -> f64 {
        self.lambda * b.abs()
    }

    /// Concave part `h(b) = value(b) - lambda * |b|`.
    pub fn h_value(&self, b: f64) -> f64 {
        let l = self.lambda;
        let t = b.abs();
        match self.kind {
            PenaltyKind::L1 => 0.0,
            PenaltyKind::Scad => {
                let a = self.a();
                if t < l {
                    0.0
                } else if t < a * l {
                    (2.0 * l * t - t * t - l * l) / (2.0 * (a - 1.0))
                } else {
                    0.5 * (a + 1.0) * l * l - l * t
                }
            }
            PenaltyKind::Mcp => {
                let g = self.gamma();
                if t < g * l {
                    -t * t / (2.0 * g)
                } else {
                    0.5 * g * l * l - l * t
                }
            }
        }
    }

    /// Derivative of the concave part.
    pub fn h_deriv(&self, b: f64) -> f64 {
        let l = self.lambda;
        let t = b.abs();
        let s = if b > 0.0 {
            1.0
        } else if b < 0.0 {
            -1.0
        } else {
            0.0
        };
        match self.kind {
            PenaltyKind::L1 => 0.0,
            PenaltyKind::Scad => {
                let a = self.a();
                if t < l {
                    0.0
                } else if t < a * l {
                    (l * s - b) / (a - 1.0)
                } else {
                    -l * s
                }
            }
            PenaltyKind::Mcp => {
                let g = self.gamma();
                if t < g * l {
                    -b / g
                } else {
                    -l * s
                }
            }
        }
    }

    /// Elementwise gradient of the concave part.
    pub fn h_grad(&self, beta: ArrayView1<f64>) -> Array1<f64> {
        beta.mapv(|b| self.h_deriv(b))
    }

    /// Lipschitz constant of `h'`: 1/(a-1) for SCAD, 1/gamma for MCP, 0 for l1.
    pub fn lipschitz_h(&self) -> f64 {
        match self.kind {
            PenaltyKind::L1 => 0.0,
            PenaltyKind::Scad => 1.0 / (self.a() - 1.0),
            PenaltyKind::Mcp => 1.0 / self.gamma(),
        }
    }

    /// Sum of the penalty over all coordinates not in `skip`.
    pub fn total(&self, beta: ArrayView1<f64>, skip: &[usize]) -> f64 {
        sum_skipping(beta, skip, |b| self.value(b))
    }

    pub fn chi_total(&self, beta: ArrayView1<f64>, skip: &[usize]) -> f64 {
        sum_skipping(beta, skip, |b| self.chi(b))
    }

    pub fn h_total(&self, beta: ArrayView1<f64>, skip: &[usize]) -> f64 {
        sum_skipping(beta, skip, |b| self.h_value(b))
    }

    /// Gradient of `sum h(beta_j)` with zeros on skipped coordinates.
    pub fn h_grad_skipping(&self, beta: ArrayView1<f64>, skip: &[usize]) -> Array1<f64> {
        let mut g = self.h_grad(beta);
        for &j in skip {
            g[j] = 0.0;
        }
        g
    }

    pub fn decomposition(&self) -> DcDecomposition {
        DcDecomposition { spec: *self }
    }
}

fn sum_skipping<F: Fn(f64) -> f64>(beta: ArrayView1<f64>, skip: &[usize], f: F) -> f64 {
    beta.iter()
        .enumerate()
        .filter(|(j, _)| !skip.contains(j))
        .map(|(_, &b)| f(b))
        .sum()
}

/// Convex plus smooth-concave view of a penalty.
#[derive(Debug, Clone, Copy)]
pub struct DcDecomposition {
    spec: PenaltySpec,
}

impl DcDecomposition {
    pub fn chi(&self, b: f64) -> f64 {
        self.spec.chi(b)
    }

    pub fn h_value(&self, b: f64) -> f64 {
        self.spec.h_value(b)
    }

    pub fn h_grad(&self, b: f64) -> f64 {
        self.spec.h_deriv(b)
    }

    pub fn lipschitz_h(&self) -> f64 {
        self.spec.lipschitz_h()
    }
}

/// Soft thresholding; exactly zero when `|v| <= t`.
#[inline]
pub fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// argmin_u <y,u> + |u-x|^2/(2c) + lambda * sum_{j not in skip} |u_j|.
pub fn prox_scaled_l1(
    x: ArrayView1<f64>,
    y: ArrayView1<f64>,
    c: f64,
    lambda: f64,
    skip: &[usize],
) -> Array1<f64> {
    let t = c * lambda;
    let mut out = Array1::zeros(x.len());
    for j in 0..x.len() {
        let v = x[j] - c * y[j];
        out[j] = if skip.contains(&j) { v } else { soft_threshold(v, t) };
    }
    out
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Mollified absolute value `(2 ln(1+e^{d t}) - d t - 2 ln 2)/d`; `|t|` at `d = 0`.
pub fn smoothed_l1_value(theta: f64, delta: f64) -> f64 {
    if delta == 0.0 {
        return theta.abs();
    }
    let z = delta * theta;
    (2.0 * softplus(z) - z - 2.0 * std::f64::consts::LN_2) / delta
}

/// Derivative of [`smoothed_l1_value`]: `2 sigmoid(d t) - 1`.
pub fn smoothed_l1_grad(theta: f64, delta: f64) -> f64 {
    if delta == 0.0 {
        return theta.signum() * (theta != 0.0) as i32 as f64;
    }
    (0.5 * delta * theta).tanh()
}

/// Twice-differentiable concave part of MCP; `delta = 0` gives the MCP part.
pub fn smoothed_mcp_concave(theta: f64, lambda: f64, gamma: f64, delta: f64) -> Result<f64> {
    let gl = gamma * lambda;
    if !(delta >= 0.0) || delta >= gl {
        return Err(Error::InvalidInput(format!(
            "smoothing width must lie in [0, gamma*lambda) = [0, {gl}), got {delta}"
        )));
    }
    let t = theta.abs();
    if delta == 0.0 {
        return Ok(if t < gl {
            -t * t / (2.0 * gamma)
        } else {
            0.5 * gamma * lambda * lambda - lambda * t
        });
    }
    let lo = gl - delta;
    let hi = gl + delta;
    Ok(if t < lo {
        -t * t / (2.0 * gamma)
    } else if t < hi {
        -(lo.powi(3) + 3.0 * hi * t * t - (3.0 * lo * lo + t * t) * t) / (12.0 * delta * gamma)
    } else {
        -lambda * t + (3.0 * gl * gl + delta * delta) / (6.0 * gamma)
    })
}
