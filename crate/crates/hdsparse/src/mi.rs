//! Univariate association measures for variable screening.
//!
//! Mutual information by FFT kernel density estimation, by equal-width binning
//! and by k-nearest neighbours (KSG), plus absolute Pearson correlation. All MI
//! values are in nats.

use ndarray::{Array1, Array2, ArrayView1};
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::digamma;
use std::sync::Arc;

use crate::data::{mean_sd, FeatureMatrix, ResponseVector};
use crate::{Error, Result};

const DENSITY_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Epanechnikov,
    Gaussian,
}

impl KernelKind {
    /// Kernel density with standard deviation `h` evaluated at offset `t`.
    pub fn eval(&self, t: f64, h: f64) -> f64 {
        match self {
            KernelKind::Gaussian => {
                let z = t / h;
                (-0.5 * z * z).exp() / (h * (2.0 * std::f64::consts::PI).sqrt())
            }
            KernelKind::Epanechnikov => {
                let r = 5f64.sqrt() * h;
                if t.abs() >= r {
                    0.0
                } else {
                    0.75 / r * (1.0 - (t / r) * (t / r))
                }
            }
        }
    }

    /// Half-width beyond which the kernel is zero or negligible, in units of `h`.
    pub fn reach(&self) -> f64 {
        match self {
            KernelKind::Gaussian => 3.0,
            KernelKind::Epanechnikov => 5f64.sqrt(),
        }
    }
}

/// Equispaced grid; node `i` on the x axis is `x_min + i * dx`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid2D {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub nx: usize,
    pub ny: usize,
}

impl Grid2D {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64, nx: usize, ny: usize) -> Result<Self> {
        if !(x_min < x_max) || !(y_min < y_max) {
            return Err(Error::InvalidInput("grid bounds must be strictly ordered".into()));
        }
        for n in [nx, ny] {
            if n < 64 || !n.is_power_of_two() {
                return Err(Error::InvalidInput(format!(
                    "grid size {n} must be a power of two >= 64"
                )));
            }
        }
        Ok(Self {
            x_min,
            x_max,
            y_min,
            y_max,
            nx,
            ny,
        })
    }

    /// Data range plus `3 max(hx, hy)` on every side.
    pub fn covering(x: ArrayView1<f64>, y: ArrayView1<f64>, hx: f64, hy: f64, nx: usize, ny: usize) -> Result<Self> {
        let pad = 3.0 * hx.max(hy);
        let (x0, x1) = min_max(x);
        let (y0, y1) = min_max(y);
        Self::new(x0 - pad, x1 + pad, y0 - pad, y1 + pad, nx, ny)
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / (self.nx - 1) as f64
    }

    pub fn dy(&self) -> f64 {
        (self.y_max - self.y_min) / (self.ny - 1) as f64
    }

    pub fn transposed(&self) -> Self {
        Self {
            x_min: self.y_min,
            x_max: self.y_max,
            y_min: self.x_min,
            y_max: self.x_max,
            nx: self.ny,
            ny: self.nx,
        }
    }
}

fn min_max(v: ArrayView1<f64>) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MiMethod {
    FftKde,
    Binning,
    Knn,
    Pearson,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MiDiagnostics {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bandwidths: Option<(f64, f64)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<(usize, usize)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bins: Option<(usize, usize)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    /// estimate before clamping at zero
    #[serde(skip_serializing_if = "Option::is_none")]
    pub raw: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiResult {
    pub value: f64,
    pub method: MiMethod,
    pub diagnostics: MiDiagnostics,
}

/// `0.9 min(sd, IQR/1.34) n^{-1/5}`, with sd alone when the IQR is zero.
pub fn silverman_bandwidth(x: ArrayView1<f64>) -> Result<f64> {
    let n = x.len();
    if n < 2 {
        return Err(Error::InvalidInput("bandwidth needs at least 2 points".into()));
    }
    let (_, sd) = mean_sd(x);
    if !(sd > 0.0) {
        return Err(Error::InvalidInput("bandwidth of a constant vector".into()));
    }
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    let iqr = quantile_sorted(&s, 0.75) - quantile_sorted(&s, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    Ok(0.9 * spread * (n as f64).powf(-0.2))
}

/// Linear-interpolation quantile of sorted data.
fn quantile_sorted(s: &[f64], p: f64) -> f64 {
    let pos = p * (s.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    s[lo] + (pos - lo as f64) * (s[hi] - s[lo])
}

/// Bandwidth choice for the KDE estimator.
#[derive(Clone, Copy)]
pub enum Bandwidth {
    Silverman,
    Fixed(f64, f64),
    /// plug-in selector applied to each axis
    Custom(fn(ArrayView1<f64>) -> Result<f64>),
}

impl std::fmt::Debug for Bandwidth {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Bandwidth::Silverman => write!(f, "Silverman"),
            Bandwidth::Fixed(a, b) => write!(f, "Fixed({a}, {b})"),
            Bandwidth::Custom(_) => write!(f, "Custom"),
        }
    }
}

impl Bandwidth {
    fn select(&self, x: ArrayView1<f64>, y: ArrayView1<f64>) -> Result<(f64, f64)> {
        match *self {
            Bandwidth::Silverman => Ok((silverman_bandwidth(x)?, silverman_bandwidth(y)?)),
            Bandwidth::Fixed(a, b) => {
                if !(a > 0.0 && b > 0.0) {
                    return Err(Error::InvalidInput("bandwidths must be positive".into()));
                }
                Ok((a, b))
            }
            Bandwidth::Custom(f) => Ok((f(x)?, f(y)?)),
        }
    }
}

/// Zero-padded FFT convolution along one axis with a fixed symmetric kernel.
struct AxisConvolver {
    len: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    kernel_hat: Vec<Complex<f64>>,
    buf: Vec<Complex<f64>>,
    scratch: Vec<Complex<f64>>,
}

impl AxisConvolver {
    fn new(planner: &mut FftPlanner<f64>, len: usize, spacing: f64, kernel: KernelKind, h: f64) -> Self {
        let m = 2 * len;
        let fwd = planner.plan_fft_forward(m);
        let inv = planner.plan_fft_inverse(m);
        let mut k = vec![Complex::new(0.0, 0.0); m];
        k[0].re = kernel.eval(0.0, h) * spacing;
        for t in 1..len {
            let v = kernel.eval(t as f64 * spacing, h) * spacing;
            k[t].re = v;
            k[m - t].re = v;
        }
        let mut scratch = vec![Complex::new(0.0, 0.0); fwd.get_inplace_scratch_len().max(inv.get_inplace_scratch_len())];
        fwd.process_with_scratch(&mut k, &mut scratch);
        Self {
            len,
            fwd,
            inv,
            kernel_hat: k,
            buf: vec![Complex::new(0.0, 0.0); m],
            scratch,
        }
    }

    /// Convolve `data` (length `len`) in place.
    fn apply(&mut self, data: &mut [f64]) {
        if data.iter().all(|&v| v == 0.0) {
            return;
        }
        let m = 2 * self.len;
        for (b, &d) in self.buf.iter_mut().zip(data.iter()) {
            *b = Complex::new(d, 0.0);
        }
        for b in self.buf[self.len..].iter_mut() {
            *b = Complex::new(0.0, 0.0);
        }
        self.fwd.process_with_scratch(&mut self.buf, &mut self.scratch);
        for (b, k) in self.buf.iter_mut().zip(self.kernel_hat.iter()) {
            *b *= k;
        }
        self.inv.process_with_scratch(&mut self.buf, &mut self.scratch);
        let scale = 1.0 / m as f64;
        for (d, b) in data.iter_mut().zip(self.buf.iter()) {
            *d = b.re * scale;
        }
    }
}

/// Linear binning weight of a coordinate onto the two nearest grid nodes.
fn bin_weights(v: f64, lo: f64, step: f64, n: usize) -> (usize, f64) {
    let pos = (v - lo) / step;
    let i = (pos.floor() as isize).clamp(0, n as isize - 2) as usize;
    (i, (pos - i as f64).clamp(0.0, 1.0))
}

/// Bivariate product-kernel density on `grid` (entry `[i, j]` at `(x_i, y_j)`).
///
/// Negative transform artifacts are clipped and the result rescaled to unit
/// Riemann integral.
pub fn fft_kde_2d(
    x: ArrayView1<f64>,
    y: ArrayView1<f64>,
    kernel: KernelKind,
    hx: f64,
    hy: f64,
    grid: &Grid2D,
) -> Result<Array2<f64>> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return Err(Error::InvalidInput("need two equal-length vectors with n >= 2".into()));
    }
    if !(hx > 0.0 && hy > 0.0) {
        return Err(Error::InvalidInput("bandwidths must be positive".into()));
    }
    let pad = 3.0 * hx.max(hy);
    let (x0, x1) = min_max(x);
    let (y0, y1) = min_max(y);
    let slack = 1e-9 * (grid.x_max - grid.x_min + grid.y_max - grid.y_min);
    if x0 - pad < grid.x_min - slack
        || x1 + pad > grid.x_max + slack
        || y0 - pad < grid.y_min - slack
        || y1 + pad > grid.y_max + slack
    {
        return Err(Error::GridCoverage(format!(
            "data [{x0}, {x1}] x [{y0}, {y1}] padded by {pad} exceeds grid [{}, {}] x [{}, {}]",
            grid.x_min, grid.x_max, grid.y_min, grid.y_max
        )));
    }
    let (nx, ny) = (grid.nx, grid.ny);
    let (dx, dy) = (grid.dx(), grid.dy());
    // counts per cell divided by n and cell area give a density on the grid
    let mut g = Array2::<f64>::zeros((nx, ny));
    let w = 1.0 / (n as f64 * dx * dy);
    for (&a, &b) in x.iter().zip(y.iter()) {
        let (i, fx) = bin_weights(a, grid.x_min, dx, nx);
        let (j, fy) = bin_weights(b, grid.y_min, dy, ny);
        g[[i, j]] += w * (1.0 - fx) * (1.0 - fy);
        g[[i + 1, j]] += w * fx * (1.0 - fy);
        g[[i, j + 1]] += w * (1.0 - fx) * fy;
        g[[i + 1, j + 1]] += w * fx * fy;
    }
    let mut planner = FftPlanner::new();
    let mut cx = AxisConvolver::new(&mut planner, nx, dx, kernel, hx);
    let mut cy = AxisConvolver::new(&mut planner, ny, dy, kernel, hy);
    let mut col = vec![0.0; nx];
    for j in 0..ny {
        for i in 0..nx {
            col[i] = g[[i, j]];
        }
        cx.apply(&mut col);
        for i in 0..nx {
            g[[i, j]] = col[i];
        }
    }
    for mut row in g.rows_mut() {
        let s = row.as_slice_mut().expect("row-major grid");
        cy.apply(s);
    }
    g.mapv_inplace(|v| v.max(0.0));
    let total = g.sum() * dx * dy;
    if !(total > 0.0) {
        return Err(Error::InvalidInput("density vanished on the grid".into()));
    }
    g /= total;
    Ok(g)
}

/// Univariate KDE on `n_grid` equispaced nodes covering the data plus `3h`.
pub fn fft_kde_1d(x: ArrayView1<f64>, kernel: KernelKind, h: f64, n_grid: usize) -> Result<(Array1<f64>, Array1<f64>)> {
    let n = x.len();
    if n < 2 || !(h > 0.0) || n_grid < 64 || !n_grid.is_power_of_two() {
        return Err(Error::InvalidInput("need n >= 2, h > 0 and a power-of-two grid >= 64".into()));
    }
    let (a, b) = min_max(x);
    let (lo, hi) = (a - 3.0 * h, b + 3.0 * h);
    let d = (hi - lo) / (n_grid - 1) as f64;
    let mut g = vec![0.0; n_grid];
    let w = 1.0 / (n as f64 * d);
    for &v in x.iter() {
        let (i, f) = bin_weights(v, lo, d, n_grid);
        g[i] += w * (1.0 - f);
        g[i + 1] += w * f;
    }
    let mut planner = FftPlanner::new();
    AxisConvolver::new(&mut planner, n_grid, d, kernel, h).apply(&mut g);
    let mut dens = Array1::from(g).mapv(|v| v.max(0.0));
    let total = dens.sum() * d;
    dens /= total;
    let nodes = Array1::from_shape_fn(n_grid, |i| lo + i as f64 * d);
    Ok((nodes, dens))
}

#[derive(Debug, Clone, Copy)]
pub struct KdeOptions {
    pub kernel: KernelKind,
    pub bandwidth: Bandwidth,
    pub nx: usize,
    pub ny: usize,
}

impl Default for KdeOptions {
    fn default() -> Self {
        Self {
            kernel: KernelKind::Epanechnikov,
            bandwidth: Bandwidth::Silverman,
            nx: 256,
            ny: 256,
        }
    }
}

/// Plug-in MI of a gridded joint density (Riemann sums, floor on tiny cells).
pub fn mi_from_density(p: &Array2<f64>, dx: f64, dy: f64) -> f64 {
    let px: Array1<f64> = p.sum_axis(ndarray::Axis(1)) * dy;
    let py: Array1<f64> = p.sum_axis(ndarray::Axis(0)) * dx;
    let mut total = 0.0;
    for ((i, j), &v) in p.indexed_iter() {
        if v > DENSITY_FLOOR && px[i] > DENSITY_FLOOR && py[j] > DENSITY_FLOOR {
            total += v * (v / (px[i] * py[j])).ln();
        }
    }
    total * dx * dy
}

pub fn mi_fftkde(x: ArrayView1<f64>, y: ArrayView1<f64>, opts: &KdeOptions) -> Result<MiResult> {
    let (hx, hy) = opts.bandwidth.select(x, y)?;
    let grid = Grid2D::covering(x, y, hx, hy, opts.nx, opts.ny)?;
    let p = fft_kde_2d(x, y, opts.kernel, hx, hy, &grid)?;
    let value = mi_from_density(&p, grid.dx(), grid.dy());
    Ok(MiResult {
        value,
        method: MiMethod::FftKde,
        diagnostics: MiDiagnostics {
            bandwidths: Some((hx, hy)),
            grid: Some((opts.nx, opts.ny)),
            ..Default::default()
        },
    })
}

/// Equal-width bin index of each value for `d` bins over the data range.
fn bin_labels(x: ArrayView1<f64>, d: usize) -> Vec<usize> {
    let (lo, hi) = min_max(x);
    let width = hi - lo;
    x.iter()
        .map(|&v| {
            if width == 0.0 {
                0
            } else {
                (((v - lo) / width * d as f64).floor() as usize).min(d - 1)
            }
        })
        .collect()
}

/// Penalized-likelihood (Birge-Rozenholc) number of equal-width bins.
pub fn bin_count(x: ArrayView1<f64>) -> Result<usize> {
    let n = x.len();
    if n < 10 {
        return Err(Error::InvalidInput(format!("bin_count needs n >= 10, got {n}")));
    }
    let (lo, hi) = min_max(x);
    if lo == hi {
        log::warn!("constant vector; using a single bin");
        return Ok(1);
    }
    let nf = n as f64;
    let d_max = ((nf / nf.ln()).ceil() as usize).max(2);
    let mut best = (2, f64::NEG_INFINITY);
    for d in 2..=d_max {
        let mut counts = vec![0usize; d];
        for b in bin_labels(x, d) {
            counts[b] += 1;
        }
        let df = d as f64;
        let ll: f64 = counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| c as f64 * (df * c as f64 / nf).ln())
            .sum();
        let score = ll - (df - 1.0 + df.ln().powf(2.5));
        if score > best.1 {
            best = (d, score);
        }
    }
    Ok(best.0)
}

pub fn mi_binning(x: ArrayView1<f64>, y: ArrayView1<f64>) -> Result<MiResult> {
    let n = x.len();
    if y.len() != n {
        return Err(Error::InvalidInput("vectors differ in length".into()));
    }
    let dx = bin_count(x)?;
    let dy = bin_count(y)?;
    let bx = bin_labels(x, dx);
    let by = bin_labels(y, dy);
    let mut joint = vec![0usize; dx * dy];
    let mut cx = vec![0usize; dx];
    let mut cy = vec![0usize; dy];
    for (&a, &b) in bx.iter().zip(by.iter()) {
        joint[a * dy + b] += 1;
        cx[a] += 1;
        cy[b] += 1;
    }
    let nf = n as f64;
    let mut terms = Vec::new();
    for a in 0..dx {
        for b in 0..dy {
            let c = joint[a * dy + b];
            if c > 0 {
                let c = c as f64;
                terms.push(c / nf * (c * nf / (cx[a] as f64 * cy[b] as f64)).ln());
            }
        }
    }
    // summing in sorted order makes the value exactly symmetric in (x, y)
    terms.sort_by(f64::total_cmp);
    let mi: f64 = terms.iter().sum();
    Ok(MiResult {
        value: mi.max(0.0),
        method: MiMethod::Binning,
        diagnostics: MiDiagnostics {
            bins: Some((dx, dy)),
            raw: Some(mi),
            ..Default::default()
        },
    })
}

/// Break exact ties with a deterministic perturbation of relative size 1e-10.
fn jitter_duplicates(v: ArrayView1<f64>) -> Vec<f64> {
    let mut out = v.to_vec();
    let mut order: Vec<usize> = (0..out.len()).collect();
    order.sort_by(|&a, &b| out[a].total_cmp(&out[b]).then(a.cmp(&b)));
    let (lo, hi) = min_max(v);
    let scale = 1e-10 * (hi - lo).abs().max(v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))).max(1.0);
    let mut dup = vec![false; out.len()];
    for w in order.windows(2) {
        if out[w[0]] == out[w[1]] {
            dup[w[0]] = true;
            dup[w[1]] = true;
        }
    }
    for (i, o) in out.iter_mut().enumerate() {
        if dup[i] {
            // golden-ratio sequence in (-0.5, 0.5), fixed per index
            let u = ((i as f64 + 1.0) * 0.618_033_988_749_894_9).fract() - 0.5;
            *o += scale * u;
        }
    }
    out
}

/// Count of sorted values strictly within `eps` of `c`, excluding one self match.
fn count_within(sorted: &[f64], c: f64, eps: f64) -> usize {
    let lo = sorted.partition_point(|&v| v <= c - eps);
    let hi = sorted.partition_point(|&v| v < c + eps);
    (hi - lo).saturating_sub(1)
}

/// KSG estimator (variant 1, max-norm).
pub fn mi_knn(x: ArrayView1<f64>, y: ArrayView1<f64>, k: usize) -> Result<MiResult> {
    let n = x.len();
    if y.len() != n {
        return Err(Error::InvalidInput("vectors differ in length".into()));
    }
    if k == 0 || k >= n {
        return Err(Error::InvalidInput(format!("need 1 <= k < n, got k = {k}, n = {n}")));
    }
    for (lo, hi) in [min_max(x), min_max(y)] {
        if lo == hi {
            return Err(Error::InvalidInput("kNN mutual information with a constant vector".into()));
        }
    }
    let xs = jitter_duplicates(x);
    let ys = jitter_duplicates(y);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]).then(a.cmp(&b)));
    let xo: Vec<f64> = order.iter().map(|&i| xs[i]).collect();
    let yo: Vec<f64> = order.iter().map(|&i| ys[i]).collect();
    let mut xsort = xs.clone();
    xsort.sort_by(f64::total_cmp);
    let mut ysort = ys.clone();
    ysort.sort_by(f64::total_cmp);

    let mut acc = 0.0;
    let mut best: Vec<f64> = Vec::with_capacity(k + 1);
    for pos in 0..n {
        best.clear();
        let (cx, cy) = (xo[pos], yo[pos]);
        let kth = |b: &Vec<f64>| if b.len() < k { f64::INFINITY } else { b[k - 1] };
        let push = |b: &mut Vec<f64>, d: f64| {
            let at = b.partition_point(|&v| v <= d);
            if at < k {
                b.insert(at, d);
                b.truncate(k);
            }
        };
        let (mut l, mut r) = (pos as isize - 1, pos + 1);
        loop {
            let dl = if l >= 0 { cx - xo[l as usize] } else { f64::INFINITY };
            let dr = if r < n { xo[r] - cx } else { f64::INFINITY };
            let limit = kth(&best);
            if dl.min(dr) > limit || (dl.is_infinite() && dr.is_infinite()) {
                break;
            }
            if dl <= dr {
                let j = l as usize;
                push(&mut best, dl.max((yo[j] - cy).abs()));
                l -= 1;
            } else {
                push(&mut best, dr.max((yo[r] - cy).abs()));
                r += 1;
            }
        }
        let eps = kth(&best);
        let nx = count_within(&xsort, cx, eps);
        let ny = count_within(&ysort, cy, eps);
        acc += digamma(nx as f64 + 1.0) + digamma(ny as f64 + 1.0);
    }
    let raw = digamma(k as f64) + digamma(n as f64) - acc / n as f64;
    Ok(MiResult {
        value: raw.max(0.0),
        method: MiMethod::Knn,
        diagnostics: MiDiagnostics {
            k: Some(k),
            raw: Some(raw),
            ..Default::default()
        },
    })
}

/// |cos| of the centered vectors.
pub fn pearson_abs(x: ArrayView1<f64>, y: ArrayView1<f64>) -> Result<MiResult> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::InvalidInput("need two equal-length vectors with n >= 2".into()));
    }
    let xc = &x - x.mean().unwrap_or(0.0);
    let yc = &y - y.mean().unwrap_or(0.0);
    let (nx, ny) = (xc.dot(&xc).sqrt(), yc.dot(&yc).sqrt());
    if nx == 0.0 || ny == 0.0 {
        return Err(Error::InvalidInput("correlation with a constant vector".into()));
    }
    let r = (xc.dot(&yc) / (nx * ny)).abs().min(1.0);
    Ok(MiResult {
        value: r,
        method: MiMethod::Pearson,
        diagnostics: MiDiagnostics::default(),
    })
}

#[derive(Debug, Clone, Copy)]
pub struct ScreenOptions {
    pub kde: KdeOptions,
    pub k: usize,
}

impl Default for ScreenOptions {
    fn default() -> Self {
        Self {
            kde: KdeOptions::default(),
            k: 3,
        }
    }
}

/// Score one feature against the outcome.
pub fn association(x: ArrayView1<f64>, y: ArrayView1<f64>, method: MiMethod, opts: &ScreenOptions) -> Result<MiResult> {
    match method {
        MiMethod::FftKde => mi_fftkde(x, y, &opts.kde),
        MiMethod::Binning => mi_binning(x, y),
        MiMethod::Knn => mi_knn(x, y, opts.k),
        MiMethod::Pearson => pearson_abs(x, y),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedFeatures {
    /// (column, score), best first; ties by ascending column
    pub order: Vec<(usize, f64)>,
}

impl RankedFeatures {
    pub fn from_scores(scores: &[f64]) -> Self {
        let mut order: Vec<(usize, f64)> = scores.iter().copied().enumerate().collect();
        order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        Self { order }
    }

    /// 1-based rank of each column.
    pub fn ranks(&self) -> Vec<usize> {
        let mut r = vec![0; self.order.len()];
        for (pos, &(j, _)) in self.order.iter().enumerate() {
            r[j] = pos + 1;
        }
        r
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenResult {
    pub method: MiMethod,
    pub ranked: RankedFeatures,
    /// score per column; failed columns get negative infinity
    pub scores: Vec<f64>,
    pub diagnostics: Vec<Option<MiDiagnostics>>,
    pub failures: Vec<(usize, String)>,
}

/// Score every column in parallel on `workers` threads; output does not depend on `workers`.
pub fn screen_all(
    m: &FeatureMatrix,
    y: &ResponseVector,
    method: MiMethod,
    opts: &ScreenOptions,
    workers: usize,
) -> Result<ScreenResult> {
    if m.nrows() != y.len() {
        return Err(Error::InvalidInput(format!(
            "{} rows but {} responses",
            m.nrows(),
            y.len()
        )));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    let yv = y.values.view();
    let results: Vec<Result<MiResult>> = pool.install(|| {
        (0..m.ncols())
            .into_par_iter()
            .map(|j| association(m.column(j), yv, method, opts))
            .collect()
    });
    let mut scores = Vec::with_capacity(results.len());
    let mut diagnostics = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for (j, r) in results.into_iter().enumerate() {
        match r {
            Ok(v) => {
                scores.push(v.value);
                diagnostics.push(Some(v.diagnostics));
            }
            Err(e) => {
                scores.push(f64::NEG_INFINITY);
                diagnostics.push(None);
                failures.push((j, e.to_string()));
            }
        }
    }
    Ok(ScreenResult {
        method,
        ranked: RankedFeatures::from_scores(&scores),
        scores,
        diagnostics,
        failures,
    })
}

/// Area under the ROC curve of `scores` against `truth`, ties at midrank.
pub fn selection_auroc(scores: &[f64], truth: &[bool]) -> Result<f64> {
    if scores.len() != truth.len() {
        return Err(Error::InvalidInput("scores and labels differ in length".into()));
    }
    let pos = truth.iter().filter(|&&t| t).count();
    let neg = truth.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::InvalidInput("AUROC needs both positive and negative labels".into()));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &t in &idx[i..=j] {
            if truth[t] {
                rank_sum += mid;
            }
        }
        i = j + 1;
    }
    let (p, q) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * q))
}
