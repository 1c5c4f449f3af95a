mod settings;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hdsparse::ag::{make_linear_objective, make_logistic_objective, solve_with, AgVariant, SmoothObjective, SolveReport};
use hdsparse::bench::{
    lambda_path, model_loss, run_benchmark, select_by_validation, simulate, BenchConfig, BenchKind,
    ModelKind, OutcomeKind, SignalLayout, SimSpec,
};
use hdsparse::data::{
    fmt17, read_matrix, read_table, split_stratified, standardize_columns, write_table, FeatureMatrix, OutcomeColumn,
    ResponseVector, StandardizationRecord,
};
use hdsparse::mi::{screen_all, MiMethod, ScreenOptions};
use hdsparse::pcg::{pcg_solve, L1Composite, LineSearch, PcgConfig};
use hdsparse::penalty::PenaltySpec;
use hdsparse::qgaussian::{self, dof_from_q, Psi, QFitConfig, ThetaSolver};
use ndarray::{s, Array1};
use serde::Deserialize;
use serde_json::json;

use settings::Layers;

type CliResult<T> = Result<T, String>;

#[derive(Parser, Debug)]
#[command(name = "hdsparse", version, about = "Screening, sparse penalized regression and q-Gaussian fits")]
struct Cli {
    /// master random seed
    #[arg(long, global = true, env = "HDSL_SEED")]
    seed: Option<u64>,
    /// worker threads
    #[arg(long, global = true, env = "HDSL_WORKERS")]
    workers: Option<usize>,
    /// directory for report.json, metrics.csv and traces/
    #[arg(long, global = true, env = "HDSL_OUT_DIR")]
    out_dir: Option<PathBuf>,
    /// JSON file with default option values
    #[arg(long, global = true, env = "HDSL_CONFIG")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Rank features by association with the outcome
    Screen(ScreenArgs),
    /// Fit a penalized linear or logistic model
    Fit(FitArgs),
    /// Fit a penalized q-Gaussian regression
    Qfit(QfitArgs),
    /// Write a simulated data set
    Simulate(SimulateArgs),
    /// Run a replicated benchmark
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
struct DataArgs {
    /// numeric CSV with a header row
    #[arg(long, env = "HDSL_DATA")]
    data: Option<PathBuf>,
    /// outcome column: header name or 0-based index
    #[arg(long, env = "HDSL_OUTCOME")]
    outcome: Option<String>,
}

#[derive(Args, Debug)]
struct PenaltyArgs {
    #[arg(long, value_enum, env = "HDSL_PENALTY")]
    penalty: Option<PenaltyName>,
    #[arg(long, env = "HDSL_LAMBDA")]
    lambda: Option<f64>,
    /// SCAD shape
    #[arg(long, env = "HDSL_A")]
    a: Option<f64>,
    /// MCP shape
    #[arg(long, env = "HDSL_GAMMA")]
    gamma: Option<f64>,
}

#[derive(Args, Debug)]
struct ScreenArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, env = "HDSL_METHOD")]
    method: Option<MethodName>,
    /// neighbours for the kNN estimator
    #[arg(long, env = "HDSL_K")]
    k: Option<usize>,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    penalty: PenaltyArgs,
    #[arg(long, value_enum, env = "HDSL_SOLVER")]
    solver: Option<SolverName>,
    #[arg(long, env = "HDSL_TOL")]
    tol: Option<f64>,
    #[arg(long, env = "HDSL_MAX_ITER")]
    max_iter: Option<usize>,
    /// envelope parameter of the pcg solver (default 0.5/L)
    #[arg(long, env = "HDSL_RHO")]
    rho: Option<f64>,
    #[arg(long, value_enum, env = "HDSL_LINE_SEARCH")]
    line_search: Option<LineSearchName>,
    /// path length when --lambda is not given
    #[arg(long, env = "HDSL_PATH_LEN")]
    path_len: Option<usize>,
    /// fit on the columns as given
    #[arg(long)]
    no_standardize: bool,
}

#[derive(Args, Debug)]
struct QfitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    penalty: PenaltyArgs,
    /// `identity` or a headerless CSV holding an SPD matrix
    #[arg(long, env = "HDSL_PSI")]
    psi: Option<String>,
    #[arg(long, env = "HDSL_Q0")]
    q0: Option<f64>,
    #[arg(long, env = "HDSL_OUTER_TOL")]
    outer_tol: Option<f64>,
    #[arg(long, env = "HDSL_MAX_OUTER")]
    max_outer: Option<usize>,
    #[arg(long, value_enum, env = "HDSL_THETA_SOLVER")]
    theta_solver: Option<ThetaSolverName>,
    #[arg(long)]
    no_standardize: bool,
}

#[derive(Args, Debug)]
struct SimArgs {
    #[arg(long, env = "HDSL_N")]
    n: Option<usize>,
    #[arg(long, env = "HDSL_P")]
    p: Option<usize>,
    #[arg(long, env = "HDSL_TAU")]
    tau: Option<f64>,
    #[arg(long, env = "HDSL_SNR")]
    snr: Option<f64>,
    #[arg(long, value_enum, env = "HDSL_SIGNAL")]
    signal: Option<SignalName>,
    #[arg(long = "outcome-kind", value_enum, env = "HDSL_OUTCOME_KIND")]
    outcome_kind: Option<OutcomeName>,
    /// support size of the screening recipe
    #[arg(long, env = "HDSL_P_TRUE")]
    p_true: Option<usize>,
    /// keep the screening recipe linear instead of squaring the true features
    #[arg(long)]
    linear_signal: bool,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    sim: SimArgs,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(value_enum)]
    kind: Option<BenchName>,
    #[arg(long, env = "HDSL_REPLICATIONS")]
    replications: Option<usize>,
    /// n=1000, p=2050 and 100 replications
    #[arg(long)]
    full_scale: bool,
    #[command(flatten)]
    sim: SimArgs,
    /// comma-separated tau grid
    #[arg(long, value_delimiter = ',', env = "HDSL_TAUS")]
    taus: Option<Vec<f64>>,
    /// comma-separated SNR grid
    #[arg(long, value_delimiter = ',', env = "HDSL_SNRS")]
    snrs: Option<Vec<f64>>,
    #[command(flatten)]
    penalty: PenaltyArgs,
    /// descent threshold above the best objective (default e^3)
    #[arg(long, env = "HDSL_THRESHOLD")]
    threshold: Option<f64>,
    #[arg(long, value_enum, env = "HDSL_SOLVER")]
    solver: Option<SolverName>,
    #[arg(long, env = "HDSL_TOL")]
    tol: Option<f64>,
    #[arg(long, env = "HDSL_MAX_ITER")]
    max_iter: Option<usize>,
    #[arg(long, env = "HDSL_PATH_LEN")]
    path_len: Option<usize>,
    /// error degrees of freedom for qgaussian-recovery
    #[arg(long, env = "HDSL_DOF")]
    dof: Option<f64>,
    #[arg(long, env = "HDSL_K")]
    k: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum PenaltyName {
    Scad,
    Mcp,
    L1,
}

#[derive(Debug, Clone, Copy, PartialEq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum MethodName {
    Fftkde,
    Knn,
    Binning,
    Pearson,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum SolverName {
    Ag,
    AgOrig,
    Pg,
    Pcg,
}

#[derive(Debug, Clone, Copy, PartialEq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum LineSearchName {
    Brent,
    Wolfe,
    Backtrack,
}

#[derive(Debug, Clone, Copy, PartialEq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum ThetaSolverName {
    Pcg,
    Ag,
}

#[derive(Debug, Clone, Copy, PartialEq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum SignalName {
    FourFixed,
    FiveBlocks,
    ScreeningRecipe,
}

#[derive(Debug, Clone, Copy, PartialEq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum OutcomeName {
    Linear,
    Logistic,
    ScreeningContinuous,
    ScreeningBinaryOriginal,
    ScreeningBinaryTranslated,
}

#[derive(Debug, Clone, Copy, PartialEq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum BenchName {
    ScreeningAuroc,
    AgConvergence,
    SignalRecovery,
    QgaussianRecovery,
}

/// Global options after layering.
struct Common {
    seed: u64,
    workers: usize,
    out_dir: PathBuf,
}

fn section(cmd: &Command) -> &'static str {
    match cmd {
        Command::Screen(_) => "screen",
        Command::Fit(_) => "fit",
        Command::Qfit(_) => "qfit",
        Command::Simulate(_) => "simulate",
        Command::Bench(_) => "bench",
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let layers = Layers::load(cli.config.as_deref(), section(&cli.command))?;
    let common = Common {
        seed: layers.or(cli.seed, "seed", 1)?,
        workers: layers.or(cli.workers, "workers", 1)?.max(1),
        out_dir: layers.or(cli.out_dir, "out_dir", PathBuf::from("out"))?,
    };
    fs::create_dir_all(&common.out_dir).map_err(|e| format!("creating {}: {e}", common.out_dir.display()))?;
    match cli.command {
        Command::Screen(a) => screen(a, &layers, &common),
        Command::Fit(a) => fit(a, &layers, &common),
        Command::Qfit(a) => qfit(a, &layers, &common),
        Command::Simulate(a) => simulate_cmd(a, &layers, &common),
        Command::Bench(a) => bench(a, &layers, &common),
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn load_data(a: &DataArgs, layers: &Layers) -> CliResult<(FeatureMatrix, ResponseVector)> {
    let path: PathBuf = layers.pick(a.data.clone(), "data")?.ok_or("--data is required")?;
    let outcome: String = layers.or(a.outcome.clone(), "outcome", "y".to_string())?;
    let col = match outcome.parse::<usize>() {
        Ok(i) => OutcomeColumn::Index(i),
        Err(_) => OutcomeColumn::Name(outcome),
    };
    let (m, y) = read_table(&path, true, Some(&col)).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok((m, y.expect("outcome requested")))
}

fn penalty_from(a: &PenaltyArgs, layers: &Layers, default_kind: PenaltyName, default_lambda: Option<f64>) -> CliResult<(PenaltyName, Option<f64>, f64, f64)> {
    Ok((
        layers.or(a.penalty, "penalty", default_kind)?,
        layers.pick(a.lambda, "lambda")?.or(default_lambda),
        layers.or(a.a, "a", 3.7)?,
        layers.or(a.gamma, "gamma", 3.0)?,
    ))
}

fn build_penalty(kind: PenaltyName, lambda: f64, a: f64, gamma: f64) -> CliResult<PenaltySpec> {
    match kind {
        PenaltyName::Scad => PenaltySpec::scad(lambda, a),
        PenaltyName::Mcp => PenaltySpec::mcp(lambda, gamma),
        PenaltyName::L1 => PenaltySpec::l1(lambda),
    }
    .map_err(err)
}

fn write_json(path: &Path, v: &serde_json::Value) -> CliResult<()> {
    fs::write(path, serde_json::to_string_pretty(v).map_err(err)?).map_err(|e| format!("{}: {e}", path.display()))
}

fn write_metrics(dir: &Path, rows: &[(&str, f64)]) -> CliResult<()> {
    let mut out = String::from("metric,value\n");
    for (k, v) in rows {
        out.push_str(&format!("{k},{}\n", fmt17(*v)));
    }
    fs::write(dir.join("metrics.csv"), out).map_err(err)
}

fn write_trace(dir: &Path, name: &str, values: &[f64]) -> CliResult<()> {
    let tdir = dir.join("traces");
    fs::create_dir_all(&tdir).map_err(err)?;
    let mut f = fs::File::create(tdir.join(format!("{name}.csv"))).map_err(err)?;
    writeln!(f, "iteration,objective").map_err(err)?;
    for (i, v) in values.iter().enumerate() {
        writeln!(f, "{},{}", i + 1, fmt17(*v)).map_err(err)?;
    }
    Ok(())
}

fn screen(a: ScreenArgs, layers: &Layers, common: &Common) -> CliResult<()> {
    let (m, y) = load_data(&a.data, layers)?;
    let method = layers.or(a.method, "method", MethodName::Fftkde)?;
    let opts = ScreenOptions {
        k: layers.or(a.k, "k", 3)?,
        ..Default::default()
    };
    let methods: Vec<(MiMethod, &str)> = match method {
        MethodName::Fftkde => vec![(MiMethod::FftKde, "fftkde")],
        MethodName::Knn => vec![(MiMethod::Knn, "knn")],
        MethodName::Binning => vec![(MiMethod::Binning, "binning")],
        MethodName::Pearson => vec![(MiMethod::Pearson, "pearson")],
        MethodName::All => vec![
            (MiMethod::FftKde, "fftkde"),
            (MiMethod::Knn, "knn"),
            (MiMethod::Binning, "binning"),
            (MiMethod::Pearson, "pearson"),
        ],
    };
    let mut csv = String::from("feature,score,rank,method\n");
    let mut summary = Vec::new();
    for (mm, name) in methods {
        let res = screen_all(&m, &y, mm, &opts, common.workers).map_err(err)?;
        for &(j, score) in &res.ranked.order {
            let rank = res.ranked.ranks()[j];
            csv.push_str(&format!("{},{},{rank},{name}\n", m.name(j), fmt17(score)));
        }
        for (j, e) in &res.failures {
            log::warn!("{name}: feature {} failed: {e}", m.name(*j));
        }
        let top: Vec<String> = res.ranked.order.iter().take(10).map(|&(j, _)| m.name(j)).collect();
        println!("{name}: top features {}", top.join(", "));
        summary.push(json!({
            "method": name,
            "top": top,
            "failures": res.failures.iter().map(|(j, e)| json!({"feature": m.name(*j), "error": e})).collect::<Vec<_>>(),
        }));
    }
    fs::write(common.out_dir.join("metrics.csv"), csv).map_err(err)?;
    write_json(
        &common.out_dir.join("report.json"),
        &json!({"command": "screen", "n": m.nrows(), "p": m.ncols(), "k": opts.k, "methods": summary}),
    )
}

struct FitSettings {
    solver: SolverName,
    tol: f64,
    max_iter: usize,
    pcg: PcgConfig,
}

fn solve(
    x: ndarray::ArrayView2<f64>,
    y: ndarray::ArrayView1<f64>,
    kind: ModelKind,
    pen: &PenaltySpec,
    x0: ndarray::ArrayView1<f64>,
    st: &FitSettings,
) -> CliResult<SolveReport> {
    fn go<O: SmoothObjective>(obj: &O, pen: &PenaltySpec, x0: ndarray::ArrayView1<f64>, st: &FitSettings) -> CliResult<SolveReport> {
        let variant = match st.solver {
            SolverName::Ag => AgVariant::Ag,
            SolverName::AgOrig => AgVariant::AgOrig,
            SolverName::Pg => AgVariant::Pg,
            SolverName::Pcg => {
                let problem = L1Composite::new(obj, pen.lambda);
                let (rep, cert) = pcg_solve(&problem, &st.pcg, x0).map_err(err)?;
                log::info!("pcg stationarity {:e} at rho {:e}", cert.moreau_grad_norm, cert.rho_used);
                return Ok(rep);
            }
        };
        solve_with(variant, obj, pen, x0, st.tol, st.max_iter).map_err(err)
    }
    match kind {
        ModelKind::Linear => go(&make_linear_objective(x, y, Some(pen), true).map_err(err)?, pen, x0, st),
        ModelKind::Logistic => go(&make_logistic_objective(x, y, Some(pen), true).map_err(err)?, pen, x0, st),
    }
}

/// Intercept and slopes on the original column scale.
fn unstandardize(coef: &Array1<f64>, rec: Option<&StandardizationRecord>) -> Array1<f64> {
    let Some(rec) = rec else { return coef.clone() };
    let mut out = coef.clone();
    for j in 0..coef.len() - 1 {
        if rec.constant[j] {
            out[j + 1] = 0.0;
            continue;
        }
        out[j + 1] = coef[j + 1] / rec.sds[j];
        out[0] -= out[j + 1] * rec.means[j];
    }
    out
}

fn coef_json(m: &FeatureMatrix, coef: &Array1<f64>) -> serde_json::Value {
    let mut v = vec![json!({"name": "(intercept)", "value": coef[0]})];
    for j in 0..m.ncols() {
        v.push(json!({"name": m.name(j), "value": coef[j + 1]}));
    }
    serde_json::Value::Array(v)
}

fn fit(a: FitArgs, layers: &Layers, common: &Common) -> CliResult<()> {
    let (raw, y) = load_data(&a.data, layers)?;
    let (m, rec) = if a.no_standardize {
        (raw, None)
    } else {
        let (m, r) = standardize_columns(&raw).map_err(err)?;
        (m, Some(r))
    };
    let (pkind, lambda, pa, pg) = penalty_from(&a.penalty, layers, PenaltyName::Scad, None)?;
    let line_search = match layers.or(a.line_search, "line_search", LineSearchName::Brent)? {
        LineSearchName::Brent => LineSearch::ExactBrent,
        LineSearchName::Wolfe => LineSearch::WolfeSurrogate,
        LineSearchName::Backtrack => LineSearch::Backtrack,
    };
    let st = FitSettings {
        solver: layers.or(a.solver, "solver", SolverName::Ag)?,
        tol: layers.or(a.tol, "tol", 1e-4)?,
        max_iter: layers.or(a.max_iter, "max_iter", 2000)?,
        pcg: PcgConfig::default(),
    };
    let st = FitSettings {
        pcg: PcgConfig {
            rho: layers.pick(a.rho, "rho")?,
            line_search,
            tol: st.tol,
            max_iter: st.max_iter,
            ..Default::default()
        },
        ..st
    };
    let kind = ModelKind::for_response(&y);
    let x = m.values.view();
    let yv = y.values.view();
    let mut path_info = serde_json::Value::Null;
    let lambda = match lambda {
        Some(l) => l,
        None => {
            // choose lambda on a stratified half split, then refit on everything
            let count = layers.or(a.path_len, "path_len", 50)?;
            let split = split_stratified(&y, (0.5, 0.5, 0.0), 5, common.seed).map_err(err)?;
            let xt = m.select_rows(&split.train_idx);
            let xv = m.select_rows(&split.val_idx);
            let yt: Array1<f64> = split.train_idx.iter().map(|&i| y.values[i]).collect();
            let yvv: Array1<f64> = split.val_idx.iter().map(|&i| y.values[i]).collect();
            let lambdas = lambda_path(xt.values.view(), yt.view(), kind, count).map_err(err)?;
            let base = build_penalty(pkind, lambdas[0].max(f64::MIN_POSITIVE), pa, pg)?;
            let mut path = Vec::with_capacity(lambdas.len());
            let mut start = Array1::zeros(m.ncols() + 1);
            for &l in &lambdas {
                let rep = solve(xt.values.view(), yt.view(), kind, &base.with_lambda(l), start.view(), &st)?;
                start = rep.estimate.clone();
                path.push(rep.estimate);
            }
            let (best, losses) = select_by_validation(&path, xv.values.view(), yvv.view(), kind).map_err(err)?;
            path_info = json!({"lambdas": lambdas, "validation_loss": losses, "selected": best});
            lambdas[best]
        }
    };
    let pen = build_penalty(pkind, lambda, pa, pg)?;
    let rep = solve(x, yv, kind, &pen, Array1::zeros(m.ncols() + 1).view(), &st)?;
    let coef = &rep.estimate;
    let nonzero = coef.slice(s![1..]).iter().filter(|&&v| v != 0.0).count();
    let loss = model_loss(x, yv, kind, coef.view());
    println!(
        "{:?} {:?} lambda={lambda:.6} iterations={} converged={} nonzero={nonzero} objective={:.6}",
        kind,
        st.solver,
        rep.iterations,
        rep.converged,
        rep.final_objective()
    );
    write_json(
        &common.out_dir.join("report.json"),
        &json!({
            "command": "fit",
            "model": kind,
            "penalty": pen,
            "solver": format!("{:?}", st.solver).to_lowercase(),
            "tol": st.tol,
            "max_iter": st.max_iter,
            "converged": rep.converged,
            "iterations": rep.iterations,
            "objective": rep.final_objective(),
            "loss": loss,
            "standardized": rec.is_some(),
            "coefficients": coef_json(&m, coef),
            "coefficients_original_scale": coef_json(&m, &unstandardize(coef, rec.as_ref())),
            "path": path_info,
            "wall_time": rep.wall_time,
        }),
    )?;
    write_metrics(
        &common.out_dir,
        &[
            ("lambda", lambda),
            ("objective", rep.final_objective()),
            ("loss", loss),
            ("iterations", rep.iterations as f64),
            ("nonzero", nonzero as f64),
            ("converged", rep.converged as u8 as f64),
        ],
    )?;
    write_trace(&common.out_dir, "objective", &rep.objective_trace)
}

fn qfit(a: QfitArgs, layers: &Layers, common: &Common) -> CliResult<()> {
    let (raw, y) = load_data(&a.data, layers)?;
    let m = if a.no_standardize { raw } else { standardize_columns(&raw).map_err(err)?.0 };
    let (pkind, lambda, pa, pg) = penalty_from(&a.penalty, layers, PenaltyName::L1, Some(0.0))?;
    let pen = build_penalty(pkind, lambda.unwrap_or(0.0), pa, pg)?;
    let psi_arg: String = layers.or(a.psi.clone(), "psi", "identity".to_string())?;
    let psi = if psi_arg == "identity" {
        Psi::Identity
    } else {
        Psi::dense(read_matrix(&psi_arg).map_err(|e| format!("{psi_arg}: {e}"))?).map_err(err)?
    };
    let defaults = QFitConfig::default();
    let cfg = QFitConfig {
        q0: layers.pick(a.q0, "q0")?,
        outer_tol: layers.or(a.outer_tol, "outer_tol", defaults.outer_tol)?,
        max_outer: layers.or(a.max_outer, "max_outer", defaults.max_outer)?,
        theta_solver: match layers.or(a.theta_solver, "theta_solver", ThetaSolverName::Pcg)? {
            ThetaSolverName::Pcg => ThetaSolver::Pcg,
            ThetaSolverName::Ag => ThetaSolver::Ag,
        },
        ..defaults
    };
    let n = y.len();
    let model = qgaussian::fit(m.values.view(), y.values.view(), psi, pen, &cfg).map_err(err)?;
    let dof = dof_from_q(model.q_train, n).map_err(err)?;
    let objective = model.fit_trace.last().copied().unwrap_or(f64::NAN);
    println!(
        "q={:.8} dof={dof:.4} sigma2={:.6} outer_iterations={}",
        model.q_train, model.sigma2, model.outer_iterations
    );
    write_json(&common.out_dir.join("model.json"), &serde_json::to_value(&model).map_err(err)?)?;
    write_json(
        &common.out_dir.join("report.json"),
        &json!({
            "command": "qfit",
            "psi": psi_arg,
            "penalty": pen,
            "q_train": model.q_train,
            "dof": dof,
            "sigma2": model.sigma2,
            "n_train": n,
            "outer_iterations": model.outer_iterations,
            "objective": objective,
            "coefficients": coef_json(&m, &model.theta),
        }),
    )?;
    write_metrics(
        &common.out_dir,
        &[
            ("q_train", model.q_train),
            ("dof", dof),
            ("sigma2", model.sigma2),
            ("objective", objective),
            ("outer_iterations", model.outer_iterations as f64),
        ],
    )?;
    write_trace(&common.out_dir, "objective", &model.fit_trace)
}

fn sim_spec(a: &SimArgs, layers: &Layers, base: SimSpec, seed: u64) -> CliResult<SimSpec> {
    let signal = layers.pick(a.signal, "signal")?.map(|s| match s {
        SignalName::FourFixed => SignalLayout::FourFixed,
        SignalName::FiveBlocks => SignalLayout::FiveBlocks,
        SignalName::ScreeningRecipe => SignalLayout::ScreeningRecipe,
    });
    let outcome = layers.pick(a.outcome_kind, "outcome_kind")?.map(|o| match o {
        OutcomeName::Linear => OutcomeKind::Linear,
        OutcomeName::Logistic => OutcomeKind::Logistic,
        OutcomeName::ScreeningContinuous => OutcomeKind::ScreeningContinuous,
        OutcomeName::ScreeningBinaryOriginal => OutcomeKind::ScreeningBinaryOriginal,
        OutcomeName::ScreeningBinaryTranslated => OutcomeKind::ScreeningBinaryTranslated,
    });
    Ok(SimSpec {
        n: layers.or(a.n, "n", base.n)?,
        p: layers.or(a.p, "p", base.p)?,
        tau: layers.or(a.tau, "tau", base.tau)?,
        snr: layers.or(a.snr, "snr", base.snr)?,
        signal: signal.unwrap_or(base.signal),
        outcome: outcome.unwrap_or(base.outcome),
        p_true: layers.or(a.p_true, "p_true", base.p_true)?,
        nonlinear: base.nonlinear && !a.linear_signal,
        seed,
    })
}

fn simulate_cmd(a: SimulateArgs, layers: &Layers, common: &Common) -> CliResult<()> {
    let spec = sim_spec(&a.sim, layers, SimSpec::default(), common.seed)?;
    let d = simulate(&spec).map_err(err)?;
    let names: Vec<String> = (0..spec.p).map(|j| format!("x{}", j + 1)).collect();
    let x = d.x.clone().with_names(names.clone()).map_err(err)?;
    write_table(common.out_dir.join("data.csv"), &x, Some(("y", &d.y))).map_err(err)?;
    let mut beta = String::from("feature,beta\n");
    for j in 0..spec.p {
        beta.push_str(&format!("{},{}\n", names[j], fmt17(d.signal.beta[j])));
    }
    fs::write(common.out_dir.join("beta.csv"), beta).map_err(err)?;
    write_json(
        &common.out_dir.join("report.json"),
        &json!({
            "command": "simulate",
            "spec": spec,
            "support": d.signal.support.iter().map(|&j| &names[j]).collect::<Vec<_>>(),
        }),
    )?;
    println!("wrote {} rows x {} features to {}", spec.n, spec.p, common.out_dir.join("data.csv").display());
    Ok(())
}

fn bench(a: BenchArgs, layers: &Layers, common: &Common) -> CliResult<()> {
    let mut cfg: BenchConfig = match layers.section() {
        Some(v) => serde_json::from_value(v.clone()).map_err(|e| format!("config section \"bench\": {e}"))?,
        None => BenchConfig::default(),
    };
    let kind = match layers.or(a.kind, "kind", BenchName::AgConvergence)? {
        BenchName::ScreeningAuroc => BenchKind::ScreeningAuroc,
        BenchName::AgConvergence => BenchKind::AgConvergence,
        BenchName::SignalRecovery => BenchKind::SignalRecovery,
        BenchName::QgaussianRecovery => BenchKind::QgaussianRecovery,
    };
    let mut base = cfg.sim.clone();
    if kind == BenchKind::ScreeningAuroc && layers.section().and_then(|s| s.get("sim")).is_none() {
        base.signal = SignalLayout::ScreeningRecipe;
        base.outcome = OutcomeKind::ScreeningContinuous;
    }
    let full = a.full_scale || layers.or(None, "full_scale", false)?;
    if full {
        base.n = 1000;
        base.p = 2050;
    }
    cfg.sim = sim_spec(&a.sim, layers, base, common.seed)?;
    if let Some(t) = layers.pick(a.taus.clone(), "taus")? {
        cfg.taus = t;
    }
    if let Some(t) = layers.pick(a.snrs.clone(), "snrs")? {
        cfg.snrs = t;
    }
    let (pkind, lambda, pa, pg) = penalty_from(&a.penalty, layers, PenaltyName::Scad, Some(cfg.penalty.lambda))?;
    if a.penalty.penalty.is_some() || a.penalty.lambda.is_some() || a.penalty.a.is_some() || a.penalty.gamma.is_some() {
        cfg.penalty = build_penalty(pkind, lambda.unwrap_or(cfg.penalty.lambda), pa, pg)?;
    }
    cfg.threshold = layers.or(a.threshold, "threshold", cfg.threshold)?;
    if let Some(s) = a.solver {
        cfg.solver.variant = match s {
            SolverName::Ag => AgVariant::Ag,
            SolverName::AgOrig => AgVariant::AgOrig,
            SolverName::Pg => AgVariant::Pg,
            SolverName::Pcg => return Err("the benchmark solvers are ag, ag-orig and pg".into()),
        };
    }
    cfg.solver.tol = a.tol.unwrap_or(cfg.solver.tol);
    cfg.solver.max_iter = a.max_iter.unwrap_or(cfg.solver.max_iter);
    cfg.path_len = a.path_len.unwrap_or(cfg.path_len);
    cfg.dof = a.dof.unwrap_or(cfg.dof);
    cfg.k = a.k.unwrap_or(cfg.k);
    let reps = layers.or(a.replications, "replications", if full { 100 } else { 20 })?;
    let report = run_benchmark(kind, &cfg, reps, common.workers).map_err(err)?;
    report.write(&common.out_dir).map_err(err)?;
    println!("{:<24} {:<16} {:>6} {:>14} {:>12} {:>14}", "cell", "metric", "count", "mean", "se", "median");
    for r in &report.summary {
        println!(
            "{:<24} {:<16} {:>6} {:>14.6} {:>12.6} {:>14.6}",
            r.cell, r.metric, r.count, r.mean, r.se, r.median
        );
    }
    if !report.failures.is_empty() {
        eprintln!("{} replication(s) failed; see report.json", report.failures.len());
    }
    Ok(())
}
