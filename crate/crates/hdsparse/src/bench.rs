//! Simulation generators, evaluation metrics, the lambda path and the
//! replicated benchmark harness.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use rand::seq::index::sample as sample_indices;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ag::{
    make_linear_objective, make_logistic_objective, sigmoid, solve_with, AgVariant, SmoothObjective,
};
use crate::data::{fmt17, mean_sd, standardize_columns, FeatureMatrix, ResponseKind, ResponseVector};
use crate::mi::{association, selection_auroc, MiMethod, ScreenOptions};
use crate::penalty::PenaltySpec;
use crate::qgaussian::{self, dof_from_q, q_from_dof, Psi, QFitConfig, QGaussianParams};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalLayout {
    FourFixed,
    FiveBlocks,
    ScreeningRecipe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeKind {
    Linear,
    Logistic,
    ScreeningContinuous,
    ScreeningBinaryOriginal,
    ScreeningBinaryTranslated,
}

impl OutcomeKind {
    pub fn is_binary(&self) -> bool {
        matches!(
            self,
            OutcomeKind::Logistic | OutcomeKind::ScreeningBinaryOriginal | OutcomeKind::ScreeningBinaryTranslated
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimSpec {
    pub n: usize,
    pub p: usize,
    pub tau: f64,
    pub snr: f64,
    pub signal: SignalLayout,
    pub outcome: OutcomeKind,
    /// support size of the screening recipe
    pub p_true: usize,
    /// square the true features in the screening recipe
    pub nonlinear: bool,
    pub seed: u64,
}

impl Default for SimSpec {
    fn default() -> Self {
        Self {
            n: 200,
            p: 400,
            tau: 0.5,
            snr: 3.0,
            signal: SignalLayout::FiveBlocks,
            outcome: OutcomeKind::Linear,
            p_true: 10,
            nonlinear: true,
            seed: 0,
        }
    }
}

impl SimSpec {
    fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.tau) {
            return Err(Error::InvalidInput(format!("tau = {} outside [0, 1)", self.tau)));
        }
        if !(self.snr > 0.0) {
            return Err(Error::InvalidInput(format!("snr = {} must be positive", self.snr)));
        }
        if self.n < 3 || self.p == 0 {
            return Err(Error::InvalidInput("need n >= 3 and p >= 1".into()));
        }
        Ok(())
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(self.seed);
        r.set_stream(stream);
        r
    }
}

/// Seed of replication `r` under a master seed; independent of scheduling.
pub fn replication_seed(master: u64, r: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(r);
    rng.next_u64()
}

/// Fill `out` row by row with draws from the AR(1) process whose covariance is
/// `tau^{|j-k|}`; the recursion is the Cholesky factor of that Toeplitz matrix.
fn toeplitz_rows<R: Rng>(rng: &mut R, n: usize, p: usize, tau: f64) -> Array2<f64> {
    let c = (1.0 - tau * tau).sqrt();
    let mut out = Array2::zeros((n, p));
    for mut row in out.rows_mut() {
        let mut prev: f64 = rng.sample(StandardNormal);
        row[0] = prev;
        for j in 1..p {
            let z: f64 = rng.sample(StandardNormal);
            prev = tau * prev + c * z;
            row[j] = prev;
        }
    }
    out
}

/// Gaussian design with Toeplitz correlation, columns standardized.
pub fn gen_design(spec: &SimSpec) -> Result<FeatureMatrix> {
    spec.validate()?;
    let raw = toeplitz_rows(&mut spec.rng(1), spec.n, spec.p, spec.tau);
    let (m, _) = standardize_columns(&FeatureMatrix::new(raw)?)?;
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Signal {
    pub beta: Array1<f64>,
    /// sorted support
    pub support: Vec<usize>,
}

impl Signal {
    pub fn truth(&self) -> Vec<bool> {
        let mut t = vec![false; self.beta.len()];
        for &j in &self.support {
            t[j] = true;
        }
        t
    }
}

pub fn gen_signal(spec: &SimSpec) -> Result<Signal> {
    spec.validate()?;
    let p = spec.p;
    let mut rng = spec.rng(2);
    let logistic = spec.outcome == OutcomeKind::Logistic;
    let mut beta = Array1::zeros(p);
    let support: Vec<usize> = match spec.signal {
        SignalLayout::FourFixed => {
            if p < 4 {
                return Err(Error::InvalidInput(format!("four_fixed needs p >= 4, got {p}")));
            }
            let vals = if logistic {
                [0.5, -0.5, 0.8, -0.8]
            } else {
                [2.0, -2.0, 8.0, -8.0]
            };
            let step = p / 4;
            (0..4)
                .map(|k| {
                    beta[k * step] = vals[k];
                    k * step
                })
                .collect()
        }
        SignalLayout::FiveBlocks => {
            if p < 50 {
                return Err(Error::InvalidInput(format!("five_blocks needs p >= 50, got {p}")));
            }
            let gap = (p - 50) / 4;
            // (mean, variance) per block
            let blocks: [(f64, f64); 5] = if logistic {
                [(0.5, 1.0), (0.5, 1.0), (-0.5, 1.0), (-0.5, 1.0), (1.0, 1.0)]
            } else {
                [(0.5, 1.0), (5.0, 2.0), (10.0, 3.0), (20.0, 4.0), (50.0, 5.0)]
            };
            let mut sup = Vec::with_capacity(50);
            for (b, &(mu, var)) in blocks.iter().enumerate() {
                let start = b * (10 + gap);
                for j in start..start + 10 {
                    let z: f64 = rng.sample(StandardNormal);
                    beta[j] = mu + var.sqrt() * z;
                    sup.push(j);
                }
            }
            sup
        }
        SignalLayout::ScreeningRecipe => {
            let k = spec.p_true;
            if k == 0 || k > p {
                return Err(Error::InvalidInput(format!("p_true = {k} must be in 1..={p}")));
            }
            let mut sup = sample_indices(&mut rng, p, k).into_vec();
            sup.sort_unstable();
            // N(1, 0.6-Toeplitz) coefficients
            let z = toeplitz_rows(&mut rng, 1, k, 0.6);
            for (i, &j) in sup.iter().enumerate() {
                beta[j] = 1.0 + z[[0, i]];
            }
            sup
        }
    };
    Ok(Signal { beta, support })
}

/// `beta' Sigma beta` for the Toeplitz `tau^{|j-k|}` covariance.
pub fn toeplitz_quadratic(beta: ArrayView1<f64>, support: &[usize], tau: f64) -> f64 {
    let mut s = 0.0;
    for &j in support {
        for &k in support {
            let d = j.abs_diff(k) as i32;
            s += beta[j] * beta[k] * if d == 0 { 1.0 } else { tau.powi(d) };
        }
    }
    s
}

fn standardize_vec(v: &Array1<f64>) -> Array1<f64> {
    let (m, sd) = mean_sd(v.view());
    if sd > 0.0 {
        v.mapv(|x| (x - m) / sd)
    } else {
        v.mapv(|x| x - m)
    }
}

fn bernoulli_draw<R: Rng>(rng: &mut R, eta: impl Fn(&mut R) -> Array1<f64>) -> Result<Array1<f64>> {
    for attempt in 1..=10 {
        let e = eta(rng);
        let y: Array1<f64> = e.mapv(|v| if rng.gen::<f64>() < sigmoid(v) { 1.0 } else { 0.0 });
        let ones = y.sum();
        if ones > 0.0 && ones < y.len() as f64 {
            return Ok(y);
        }
        log::warn!("binary outcome fell in one class (attempt {attempt}); resampling");
    }
    Err(Error::InvalidInput("binary outcome degenerate after 10 attempts".into()))
}

pub fn gen_outcome(spec: &SimSpec, x: &FeatureMatrix, signal: &Signal) -> Result<ResponseVector> {
    spec.validate()?;
    let n = x.nrows();
    if x.ncols() != signal.beta.len() {
        return Err(Error::InvalidInput(format!(
            "{} columns but {} coefficients",
            x.ncols(),
            signal.beta.len()
        )));
    }
    let mut rng = spec.rng(3);
    let noise = |rng: &mut ChaCha8Rng, sigma: f64| -> Array1<f64> {
        Array1::from_shape_fn(n, |_| sigma * rng.sample::<f64, _>(StandardNormal))
    };
    match spec.outcome {
        OutcomeKind::Linear | OutcomeKind::Logistic => {
            let mu = x.values.dot(&signal.beta);
            let sigma = if spec.snr.is_infinite() {
                0.0
            } else {
                toeplitz_quadratic(signal.beta.view(), &signal.support, spec.tau).sqrt() / spec.snr
            };
            if spec.outcome == OutcomeKind::Linear {
                ResponseVector::continuous(&mu + &noise(&mut rng, sigma))
            } else {
                let y = bernoulli_draw(&mut rng, |r| &mu + &noise(r, sigma))?;
                ResponseVector::binary(y)
            }
        }
        kind => {
            let sup = &signal.support;
            let mut xt = Array2::zeros((n, sup.len()));
            for (i, &j) in sup.iter().enumerate() {
                xt.column_mut(i).assign(&x.column(j));
            }
            let (x1, _) = standardize_columns(&FeatureMatrix::new(xt)?)?;
            let x2 = if spec.nonlinear {
                standardize_columns(&FeatureMatrix::new(x1.values.mapv(|v| v * v))?)?.0
            } else {
                x1
            };
            let b: Array1<f64> = sup.iter().map(|&j| signal.beta[j]).collect();
            let mu = x2.values.dot(&b);
            match kind {
                OutcomeKind::ScreeningContinuous => {
                    let sigma = if spec.snr.is_infinite() {
                        0.0
                    } else {
                        (mu.dot(&mu) / (n as f64 - 1.0)).sqrt() / spec.snr
                    };
                    ResponseVector::continuous(&mu + &noise(&mut rng, sigma))
                }
                _ => {
                    let mut t = standardize_vec(&mu);
                    if kind == OutcomeKind::ScreeningBinaryTranslated {
                        t += (1.0f64 / 3.0).sqrt().atanh();
                    }
                    let y = bernoulli_draw(&mut rng, |_| t.clone())?;
                    ResponseVector::binary(y)
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimData {
    pub x: FeatureMatrix,
    pub y: ResponseVector,
    pub signal: Signal,
}

pub fn simulate(spec: &SimSpec) -> Result<SimData> {
    let x = gen_design(spec)?;
    let signal = gen_signal(spec)?;
    let y = gen_outcome(spec, &x, &signal)?;
    Ok(SimData { x, y, signal })
}

/// (PPV, NPV); each is `None` when its denominator is empty.
pub fn ppv_npv(selected: &[bool], truth: &[bool]) -> Result<(Option<f64>, Option<f64>)> {
    if selected.len() != truth.len() {
        return Err(Error::InvalidInput("selection and truth differ in length".into()));
    }
    let (mut tp, mut sel, mut tn, mut unsel) = (0usize, 0usize, 0usize, 0usize);
    for (&s, &t) in selected.iter().zip(truth) {
        if s {
            sel += 1;
            tp += t as usize;
        } else {
            unsel += 1;
            tn += (!t) as usize;
        }
    }
    let q = |a: usize, b: usize| (b > 0).then(|| a as f64 / b as f64);
    Ok((q(tp, sel), q(tn, unsel)))
}

/// `|beta_true - beta_hat|^2 / |beta_true|^2`.
pub fn scaled_estimation_error(beta_true: ArrayView1<f64>, beta_hat: ArrayView1<f64>) -> Result<f64> {
    if beta_true.len() != beta_hat.len() {
        return Err(Error::InvalidInput("coefficient vectors differ in length".into()));
    }
    let den = beta_true.dot(&beta_true);
    if den == 0.0 {
        return Err(Error::InvalidInput("true coefficients are all zero".into()));
    }
    let d = &beta_true - &beta_hat;
    Ok(d.dot(&d) / den)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Linear,
    Logistic,
}

impl ModelKind {
    pub fn for_response(y: &ResponseVector) -> Self {
        match y.kind {
            ResponseKind::Binary => ModelKind::Logistic,
            ResponseKind::Continuous => ModelKind::Linear,
        }
    }
}

/// `count` values equally spaced from the smallest all-zero penalty down to 0.
///
/// With an unpenalized intercept both models have the same null gradient,
/// `X'(y - mean(y))/n`.
pub fn lambda_path(x: ArrayView2<f64>, y: ArrayView1<f64>, _kind: ModelKind, count: usize) -> Result<Vec<f64>> {
    if x.nrows() != y.len() || y.is_empty() {
        return Err(Error::InvalidInput("design and response disagree".into()));
    }
    if count < 2 {
        return Err(Error::InvalidInput("path needs at least 2 values".into()));
    }
    let n = y.len() as f64;
    let yc = y.mapv(|v| v - y.sum() / n);
    let lmax = x.t().dot(&yc).iter().fold(0.0_f64, |m, v| m.max(v.abs() / n));
    Ok((0..count)
        .map(|k| lmax * (1.0 - k as f64 / (count - 1) as f64))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    pub variant: AgVariant,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            variant: AgVariant::Ag,
            tol: 1e-6,
            max_iter: 5000,
        }
    }
}

/// One penalized fit; coefficient vector has the intercept first.
pub fn fit_one(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    kind: ModelKind,
    penalty: &PenaltySpec,
    x0: ArrayView1<f64>,
    solver: &SolverSettings,
) -> Result<crate::ag::SolveReport> {
    match kind {
        ModelKind::Linear => {
            let obj = make_linear_objective(x, y, Some(penalty), true)?;
            solve_with(solver.variant, &obj, penalty, x0, solver.tol, solver.max_iter)
        }
        ModelKind::Logistic => {
            let obj = make_logistic_objective(x, y, Some(penalty), true)?;
            solve_with(solver.variant, &obj, penalty, x0, solver.tol, solver.max_iter)
        }
    }
}

/// Fit every lambda in order, each warm-started from the previous estimate.
pub fn fit_path(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    kind: ModelKind,
    penalty: &PenaltySpec,
    lambdas: &[f64],
    solver: &SolverSettings,
) -> Result<Vec<Array1<f64>>> {
    let mut start = Array1::zeros(x.ncols() + 1);
    let mut out = Vec::with_capacity(lambdas.len());
    for &l in lambdas {
        let rep = fit_one(x, y, kind, &penalty.with_lambda(l), start.view(), solver)?;
        start = rep.estimate.clone();
        out.push(rep.estimate);
    }
    Ok(out)
}

/// Unpenalized loss of an intercept-first coefficient vector.
pub fn model_loss(x: ArrayView2<f64>, y: ArrayView1<f64>, kind: ModelKind, coef: ArrayView1<f64>) -> f64 {
    let eta = x.dot(&coef.slice(s![1..])) + coef[0];
    let n = y.len() as f64;
    match kind {
        ModelKind::Linear => {
            let r = &eta - &y;
            r.dot(&r) / (2.0 * n)
        }
        ModelKind::Logistic => {
            eta.iter()
                .zip(y.iter())
                .map(|(&e, &t)| crate::ag::log1pexp(e) - t * e)
                .sum::<f64>()
                / n
        }
    }
}

/// Index of the path element with the smallest validation loss (first on ties), and all losses.
pub fn select_by_validation(
    path: &[Array1<f64>],
    x_val: ArrayView2<f64>,
    y_val: ArrayView1<f64>,
    kind: ModelKind,
) -> Result<(usize, Vec<f64>)> {
    if path.is_empty() {
        return Err(Error::InvalidInput("empty path".into()));
    }
    let losses: Vec<f64> = path.iter().map(|c| model_loss(x_val, y_val, kind, c.view())).collect();
    let best = losses
        .iter()
        .enumerate()
        .fold(0, |b, (i, &v)| if v < losses[b] { i } else { b });
    Ok((best, losses))
}

/// First 1-based iteration whose objective is at or below `target`.
pub fn iterations_to(trace: &[f64], target: f64) -> Option<usize> {
    trace.iter().position(|&v| v <= target).map(|i| i + 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchKind {
    ScreeningAuroc,
    AgConvergence,
    SignalRecovery,
    QgaussianRecovery,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub sim: SimSpec,
    pub penalty: PenaltySpec,
    /// tau values; empty means `sim.tau` only
    pub taus: Vec<f64>,
    /// SNR values; empty means `sim.snr` only
    pub snrs: Vec<f64>,
    /// descent threshold above the best objective found
    pub threshold: f64,
    pub solver: SolverSettings,
    pub path_len: usize,
    /// degrees of freedom of the simulated errors in `qgaussian_recovery`
    pub dof: f64,
    pub k: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            sim: SimSpec::default(),
            penalty: PenaltySpec::scad(0.5, 3.7).expect("valid default"),
            taus: Vec::new(),
            snrs: Vec::new(),
            threshold: 3f64.exp(),
            solver: SolverSettings::default(),
            path_len: 50,
            dof: 5.0,
            k: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub replication: usize,
    pub cell: String,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub cell: String,
    pub metric: String,
    pub count: usize,
    pub mean: f64,
    pub se: f64,
    pub median: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub name: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub kind: BenchKind,
    pub replications: usize,
    pub master_seed: u64,
    pub config: BenchConfig,
    pub rows: Vec<MetricRow>,
    pub summary: Vec<SummaryRow>,
    pub failures: Vec<(usize, String, String)>,
    #[serde(skip)]
    pub traces: Vec<Trace>,
    pub wall_time: f64,
}

/// Mean, standard error and median per (cell, metric); NaN values are skipped.
pub fn summarize(rows: &[MetricRow]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    let mut order: Vec<(String, String)> = Vec::new();
    for r in rows {
        let key = (r.cell.clone(), r.metric.clone());
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        let g = groups.entry(key).or_default();
        if r.value.is_finite() {
            g.push(r.value);
        }
    }
    order
        .into_iter()
        .map(|key| {
            let v = &groups[&key];
            let count = v.len();
            let (mean, se, median) = if count == 0 {
                (f64::NAN, f64::NAN, f64::NAN)
            } else {
                let mean = v.iter().sum::<f64>() / count as f64;
                let se = if count > 1 {
                    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (count - 1) as f64).sqrt() / (count as f64).sqrt()
                } else {
                    f64::NAN
                };
                (mean, se, median(v))
            };
            SummaryRow {
                cell: key.0,
                metric: key.1,
                count,
                mean,
                se,
                median,
            }
        })
        .collect()
}

pub fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len() % 2 == 1 {
        s[m]
    } else {
        0.5 * (s[m - 1] + s[m])
    }
}

impl BenchReport {
    pub fn summary_for(&self, cell: &str, metric: &str) -> Option<&SummaryRow> {
        self.summary.iter().find(|r| r.cell == cell && r.metric == metric)
    }

    /// `replication,cell,metric,value`, rows in replication-task order.
    pub fn metrics_csv(&self) -> String {
        let mut out = String::from("replication,cell,metric,value\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{}\n", r.replication, r.cell, r.metric, fmt17(r.value)));
        }
        out
    }

    /// Write `metrics.csv`, `report.json` and `traces/*.csv` under `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir.join("traces"))?;
        fs::write(dir.join("metrics.csv"), self.metrics_csv())?;
        fs::write(dir.join("report.json"), serde_json::to_string_pretty(self)?)?;
        for t in &self.traces {
            let mut f = fs::File::create(dir.join("traces").join(format!("{}.csv", t.name)))?;
            writeln!(f, "iteration,objective")?;
            for (i, v) in t.values.iter().enumerate() {
                writeln!(f, "{},{}", i + 1, fmt17(*v))?;
            }
        }
        Ok(())
    }
}

struct Job {
    replication: usize,
    cell: String,
    spec: SimSpec,
}

struct JobOutput {
    rows: Vec<MetricRow>,
    traces: Vec<Trace>,
}

fn cells(config: &BenchConfig, kind: BenchKind) -> Vec<(String, SimSpec)> {
    let taus = if config.taus.is_empty() { vec![config.sim.tau] } else { config.taus.clone() };
    let snrs = if config.snrs.is_empty() { vec![config.sim.snr] } else { config.snrs.clone() };
    let mut out = Vec::new();
    match kind {
        BenchKind::ScreeningAuroc | BenchKind::QgaussianRecovery => {
            out.push(("all".to_string(), config.sim.clone()));
        }
        BenchKind::AgConvergence => {
            for &t in &taus {
                out.push((format!("tau={t}"), SimSpec { tau: t, ..config.sim.clone() }));
            }
        }
        BenchKind::SignalRecovery => {
            for &snr in &snrs {
                for &t in &taus {
                    out.push((format!("snr={snr};tau={t}"), SimSpec { tau: t, snr, ..config.sim.clone() }));
                }
            }
        }
    }
    out
}

fn row(job: &Job, metric: &str, value: f64) -> MetricRow {
    MetricRow {
        replication: job.replication,
        cell: job.cell.clone(),
        metric: metric.to_string(),
        value,
    }
}

fn run_screening(job: &Job, config: &BenchConfig) -> Result<JobOutput> {
    let d = simulate(&job.spec)?;
    let truth = d.signal.truth();
    let opts = ScreenOptions {
        k: config.k,
        ..Default::default()
    };
    let mut rows = Vec::new();
    for (name, method) in [
        ("auroc_fftkde", MiMethod::FftKde),
        ("auroc_knn", MiMethod::Knn),
        ("auroc_binning", MiMethod::Binning),
        ("auroc_pearson", MiMethod::Pearson),
    ] {
        let scores: Vec<f64> = (0..d.x.ncols())
            .map(|j| {
                association(d.x.column(j), d.y.values.view(), method, &opts)
                    .map(|r| r.value)
                    .unwrap_or(f64::NEG_INFINITY)
            })
            .collect();
        rows.push(row(job, name, selection_auroc(&scores, &truth)?));
    }
    Ok(JobOutput { rows, traces: Vec::new() })
}

fn run_convergence(job: &Job, config: &BenchConfig) -> Result<JobOutput> {
    let spec = SimSpec {
        outcome: OutcomeKind::Linear,
        ..job.spec.clone()
    };
    let d = simulate(&spec)?;
    let obj = make_linear_objective(d.x.values.view(), d.y.values.view(), Some(&config.penalty), true)?;
    let x0 = Array1::zeros(obj.dim());
    let variants = [("ag", AgVariant::Ag), ("ag_orig", AgVariant::AgOrig), ("pg", AgVariant::Pg)];
    let mut traces = Vec::new();
    for (_, v) in variants {
        let rep = solve_with(v, &obj, &config.penalty, x0.view(), config.solver.tol, config.solver.max_iter)?;
        traces.push(rep.objective_trace);
    }
    let g_star = traces.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    let target = g_star + config.threshold;
    let mut rows = Vec::new();
    for ((name, _), t) in variants.iter().zip(&traces) {
        // runs that never reach the target are censored at budget + 1
        let it = iterations_to(t, target).map_or((config.solver.max_iter + 1) as f64, |k| k as f64);
        rows.push(row(job, &format!("iters_{name}"), it));
    }
    rows.push(row(job, "g_star", g_star));
    let named = if job.replication == 0 {
        variants
            .iter()
            .zip(traces)
            .map(|((name, _), values)| Trace {
                name: format!("{}_{}", job.cell.replace(['=', ';'], "_"), name),
                values,
            })
            .collect()
    } else {
        Vec::new()
    };
    Ok(JobOutput { rows, traces: named })
}

fn run_recovery(job: &Job, config: &BenchConfig) -> Result<JobOutput> {
    let n = job.spec.n;
    // training and validation sets of equal size from one draw
    let spec = SimSpec {
        n: 2 * n,
        signal: if job.spec.signal == SignalLayout::ScreeningRecipe {
            SignalLayout::FiveBlocks
        } else {
            job.spec.signal
        },
        outcome: if job.spec.outcome.is_binary() {
            OutcomeKind::Logistic
        } else {
            OutcomeKind::Linear
        },
        ..job.spec.clone()
    };
    let d = simulate(&spec)?;
    let kind = ModelKind::for_response(&d.y);
    let xt = d.x.values.slice(s![..n, ..]);
    let xv = d.x.values.slice(s![n.., ..]);
    let yt = d.y.values.slice(s![..n]);
    let yv = d.y.values.slice(s![n..]);
    let lambdas = lambda_path(xt, yt, kind, config.path_len)?;
    let path = fit_path(xt, yt, kind, &config.penalty, &lambdas, &config.solver)?;
    let (best, _) = select_by_validation(&path, xv, yv, kind)?;
    let coef = path[best].slice(s![1..]).to_owned();
    let selected: Vec<bool> = coef.iter().map(|&v| v != 0.0).collect();
    let (ppv, npv) = ppv_npv(&selected, &d.signal.truth())?;
    Ok(JobOutput {
        rows: vec![
            row(job, "ppv", ppv.unwrap_or(f64::NAN)),
            row(job, "npv", npv.unwrap_or(f64::NAN)),
            row(job, "est_error", scaled_estimation_error(d.signal.beta.view(), coef.view())?),
            row(job, "lambda", lambdas[best]),
        ],
        traces: Vec::new(),
    })
}

fn run_qgaussian(job: &Job, config: &BenchConfig) -> Result<JobOutput> {
    let spec = SimSpec {
        outcome: OutcomeKind::Linear,
        ..job.spec.clone()
    };
    let x = gen_design(&spec)?;
    let signal = gen_signal(&spec)?;
    let n = spec.n;
    let mu = x.values.dot(&signal.beta);
    let q = q_from_dof(config.dof, n)?;
    let params = QGaussianParams::new(mu, 1.0, Psi::Identity, q)?;
    let mut rng = spec.rng(4);
    let y = qgaussian::sample(&params, &mut rng)?;
    let model = qgaussian::fit(x.values.view(), y.view(), Psi::Identity, config.penalty, &QFitConfig::default())?;
    let coef = model.theta.slice(s![1..]).to_owned();
    Ok(JobOutput {
        rows: vec![
            row(job, "dof_hat", dof_from_q(model.q_train, n)?),
            row(job, "sigma2_hat", model.sigma2),
            row(job, "est_error", scaled_estimation_error(signal.beta.view(), coef.view())?),
        ],
        traces: Vec::new(),
    })
}

/// Run `replications` independent replications per cell on `workers` threads.
///
/// Replication seeds come from `config.sim.seed`, so results do not depend on
/// the worker count. Failed replications are recorded and skipped.
pub fn run_benchmark(kind: BenchKind, config: &BenchConfig, replications: usize, workers: usize) -> Result<BenchReport> {
    let start = Instant::now();
    config.sim.validate()?;
    let master = config.sim.seed;
    let mut jobs = Vec::new();
    for (c, (cell, spec)) in cells(config, kind).into_iter().enumerate() {
        for r in 0..replications {
            let stream = (c * replications + r) as u64;
            jobs.push(Job {
                replication: r,
                cell: cell.clone(),
                spec: SimSpec {
                    seed: replication_seed(master, stream),
                    ..spec.clone()
                },
            });
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    let outputs: Vec<Result<JobOutput>> = pool.install(|| {
        jobs.par_iter()
            .map(|job| match kind {
                BenchKind::ScreeningAuroc => run_screening(job, config),
                BenchKind::AgConvergence => run_convergence(job, config),
                BenchKind::SignalRecovery => run_recovery(job, config),
                BenchKind::QgaussianRecovery => run_qgaussian(job, config),
            })
            .collect()
    });
    let mut rows = Vec::new();
    let mut traces = Vec::new();
    let mut failures = Vec::new();
    for (job, out) in jobs.iter().zip(outputs) {
        match out {
            Ok(o) => {
                rows.extend(o.rows);
                traces.extend(o.traces);
            }
            Err(e) => {
                log::warn!("replication {} in {} failed: {e}", job.replication, job.cell);
                failures.push((job.replication, job.cell.clone(), e.to_string()));
            }
        }
    }
    let summary = summarize(&rows);
    Ok(BenchReport {
        kind,
        replications,
        master_seed: master,
        config: config.clone(),
        rows,
        summary,
        failures,
        traces,
        wall_time: start.elapsed().as_secs_f64(),
    })
}
