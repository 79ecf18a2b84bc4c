//! Command-line front end.
//!
//! A `--config` JSON file supplies flag values by name. It is expanded into
//! flags placed before the command-line ones, which then win because every
//! flag overrides earlier occurrences of itself.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernel_lab::{
    dataset_eigenstructure, dataset_krr_curve, DatasetKernel, PlantedGaussianKernel, DEFAULT_SAMPLE_CAP,
};
use crate::numeric::fmt_f64;
use crate::output::{atomic_write, to_json_bytes};
use crate::risk_theory::{risk_ensemble, ExperimentConfig, RidgeProfile, RidgeSearch, RiskDecomposition};
use crate::scaling_laws::{
    crossover_ell, estimate_source_exponent, joint_sweep, sweep_csv, theoretical_exponent, trace_metric_alpha,
    FitWindow, GrowthSpec, KernelProvider, RidgePolicy, SweepRow,
};
use crate::simulator::{
    classification_losses, load_dataset, planted_krr_curve, relu_ensemble_scores, simulate_ensemble_risk, LabeledData,
    SimulationConfig,
};
use crate::spectra::{
    default_truncation, load_spectrum, power_law_spectrum, spectrum_csv, PowerLawParams, TaskEigenstructure,
};
use crate::verify::{
    check_corollary_bound, check_kn_equivalence, check_more_is_better, check_no_free_lunch, harness_self_test,
    optimal_risk_table, CheckReport, Direction, DoublingGrid, NamedTask, Slack, TaskDraw, TaskSampler, VerifyReport,
};

#[derive(Parser, Debug)]
#[command(
    name = "rfens",
    version,
    about = "Risk theory and simulation for random-feature ridge ensembles"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Omniscient risk estimate at fixed (P, N, K, lambda).
    #[command(args_override_self = true)]
    Theory(Flags),
    /// Ridge minimizing the risk estimate.
    #[command(args_override_self = true)]
    RidgeOpt(Flags),
    /// Monte Carlo risk of linear Gaussian or ReLU random-feature ensembles.
    #[command(args_override_self = true)]
    Simulate(Flags),
    /// Risk along a joint (K, N) growth path.
    #[command(args_override_self = true)]
    Sweep(Flags),
    /// Theoretical scaling exponents as a function of the growth exponent.
    #[command(args_override_self = true)]
    ScalingExponents(Flags),
    /// Capacity and source exponent estimates from kernel data.
    #[command(args_override_self = true)]
    FitSpectrum(Flags),
    /// Empirical eigenstructure of a dataset under the arc-cosine kernel.
    #[command(args_override_self = true)]
    KernelEig(Flags),
    /// Numerical checks of the monotonicity theorems.
    #[command(args_override_self = true)]
    Verify(Flags),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum RidgeMode {
    Fixed,
    Optimal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    All,
    MoreIsBetter,
    NoFreeLunch,
    Corollary,
    KnEquivalence,
    SelfTest,
}

/// Flags shared by every subcommand. Lists are comma separated; integer
/// lists also accept `a,b,...,z` for geometric (or arithmetic) progressions.
#[derive(Args, Debug, Clone, Default)]
pub struct Flags {
    /// JSON file whose keys mirror the flag names.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Spectrum CSV (`t,eta,wbar`).
    #[arg(long)]
    pub spec_file: Option<PathBuf>,
    #[arg(long, allow_negative_numbers = true)]
    pub alpha: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub r: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub noise_var: Option<f64>,
    /// Number of modes in generated power-law spectra.
    #[arg(long)]
    pub truncation: Option<usize>,
    #[arg(long)]
    pub p: Option<String>,
    #[arg(long)]
    pub n: Option<String>,
    #[arg(long)]
    pub k: Option<String>,
    #[arg(long)]
    pub m: Option<String>,
    #[arg(long)]
    pub ell: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    pub lambda: Option<String>,
    #[arg(long, value_enum)]
    pub ridge: Option<RidgeMode>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub test_data: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    #[arg(long, value_enum)]
    pub suite: Option<Suite>,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Diagnostics go to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let args = match expand_config(args) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn config_path(args: &[OsString]) -> Option<PathBuf> {
    let mut iter = args.iter();
    while let Some(a) = iter.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return iter.next().map(PathBuf::from);
        }
        if let Some(v) = s.strip_prefix("--config=") {
            return Some(PathBuf::from(v));
        }
    }
    None
}

fn json_to_flag_value(key: &str, v: &serde_json::Value) -> Result<String> {
    use serde_json::Value;
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        Value::Bool(b) => Ok(b.to_string()),
        Value::Array(items) => Ok(items
            .iter()
            .map(|i| json_to_flag_value(key, i))
            .collect::<Result<Vec<_>>>()?
            .join(",")),
        _ => Err(Error::Config(format!("config key `{key}` has an unsupported value"))),
    }
}

/// Inserts the config file's flags right after the subcommand name.
fn expand_config(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let text = fs::read_to_string(&path)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let map = value
        .as_object()
        .ok_or_else(|| Error::Config(format!("{}: expected a JSON object", path.display())))?;
    let mut injected = Vec::new();
    for (key, v) in map {
        let flag = key.replace('_', "-");
        if flag == "config" {
            return Err(Error::Config("config files cannot include other config files".into()));
        }
        injected.push(OsString::from(format!("--{flag}")));
        injected.push(OsString::from(json_to_flag_value(key, v)?));
    }
    let at = args
        .iter()
        .skip(1)
        .position(|a| !a.to_string_lossy().starts_with('-'))
        .map(|i| i + 2)
        .ok_or_else(|| Error::Config("missing subcommand".into()))?;
    let mut out = args[..at].to_vec();
    out.extend(injected);
    out.extend_from_slice(&args[at..]);
    Ok(out)
}

fn execute(command: &Command) -> Result<()> {
    let flags = match command {
        Command::Theory(f)
        | Command::RidgeOpt(f)
        | Command::Simulate(f)
        | Command::Sweep(f)
        | Command::ScalingExponents(f)
        | Command::FitSpectrum(f)
        | Command::KernelEig(f)
        | Command::Verify(f) => f,
    };
    let out = flags
        .out
        .clone()
        .ok_or_else(|| Error::Config("missing output path (--out)".into()))?;
    if flags.spec_file.is_some() && (flags.alpha.is_some() || flags.r.is_some()) {
        return Err(Error::Config("--spec-file conflicts with --alpha/--r".into()));
    }
    let work = || -> Result<Vec<u8>> {
        match command {
            Command::Theory(f) => theory(f),
            Command::RidgeOpt(f) => ridge_opt(f),
            Command::Simulate(f) => simulate(f),
            Command::Sweep(f) => sweep(f),
            Command::ScalingExponents(f) => scaling_exponents(f),
            Command::FitSpectrum(f) => fit_spectrum(f),
            Command::KernelEig(f) => kernel_eig(f),
            Command::Verify(f) => verify(f),
        }
    };
    let bytes = match flags.threads {
        Some(0) => return Err(Error::Config("--threads must be >= 1".into())),
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::Config(format!("cannot start {t} worker threads: {e}")))?
            .install(work)?,
        None => work()?,
    };
    atomic_write(&out, &bytes)
}

fn parse_num<T: std::str::FromStr>(flag: &str, s: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::Config(format!("--{flag}: cannot parse {s:?}")))
}

/// Comma-separated integers; `a,b,...,z` expands geometrically when `b` is a
/// multiple of `a` that reaches `z`, otherwise arithmetically.
pub fn parse_u64_list(flag: &str, s: &str) -> Result<Vec<u64>> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() == 4 && parts[2] == "..." {
        let (a, b, z): (u64, u64, u64) = (
            parse_num(flag, parts[0])?,
            parse_num(flag, parts[1])?,
            parse_num(flag, parts[3])?,
        );
        if !(a > 0 && b > a && z >= b) {
            return Err(Error::Config(format!("--{flag}: progression {s:?} must be increasing")));
        }
        if b % a == 0 {
            let ratio = b / a;
            let mut v = vec![a];
            while *v.last().expect("non-empty") < z {
                v.push(v.last().expect("non-empty") * ratio);
            }
            if *v.last().expect("non-empty") == z {
                return Ok(v);
            }
        }
        let step = b - a;
        if (z - a) % step == 0 {
            return Ok((0..=(z - a) / step).map(|i| a + i * step).collect());
        }
        return Err(Error::Config(format!(
            "--{flag}: progression {s:?} does not reach its end point"
        )));
    }
    parts.iter().map(|p| parse_num(flag, p)).collect()
}

pub fn parse_f64_list(flag: &str, s: &str) -> Result<Vec<f64>> {
    s.split(',').map(|p| parse_num(flag, p)).collect()
}

fn required<'a>(flag: &str, v: &'a Option<String>) -> Result<&'a str> {
    v.as_deref().ok_or_else(|| Error::Config(format!("missing --{flag}")))
}

fn single_u64(flag: &str, v: &Option<String>) -> Result<u64> {
    parse_num(flag, required(flag, v)?)
}

fn single_f64(flag: &str, v: &Option<String>) -> Result<f64> {
    parse_num(flag, required(flag, v)?)
}

fn u64_list_or(flag: &str, v: &Option<String>, default: &[u64]) -> Result<Vec<u64>> {
    v.as_deref()
        .map_or_else(|| Ok(default.to_vec()), |s| parse_u64_list(flag, s))
}

fn f64_list_or(flag: &str, v: &Option<String>, default: &[f64]) -> Result<Vec<f64>> {
    v.as_deref()
        .map_or_else(|| Ok(default.to_vec()), |s| parse_f64_list(flag, s))
}

/// Spectrum from `--spec-file` or a generated power law with `modes` modes.
fn task_spectrum(f: &Flags, modes: usize) -> Result<TaskEigenstructure> {
    let noise = f.noise_var.unwrap_or(0.0);
    if let Some(path) = &f.spec_file {
        return load_spectrum(path, noise);
    }
    let (Some(alpha), Some(r)) = (f.alpha, f.r) else {
        return Err(Error::Config("need --spec-file or both --alpha and --r".into()));
    };
    power_law_spectrum(&PowerLawParams::new(alpha, r, f.truncation.unwrap_or(modes), noise))
}

fn format_for(f: &Flags, default: Format) -> Format {
    f.format.unwrap_or_else(
        || match f.out.as_deref().and_then(Path::extension).and_then(|e| e.to_str()) {
            Some("json") => Format::Json,
            Some("csv") => Format::Csv,
            _ => default,
        },
    )
}

/// CSV with a header row; every float at 17 significant digits.
fn csv_table(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Vec<u8> {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out.into_bytes()
}

#[derive(Serialize)]
struct TheoryOutput {
    p: u64,
    n: u64,
    k: u64,
    lambda: f64,
    #[serde(flatten)]
    decomposition: RiskDecomposition,
}

fn decomposition_csv(rows: &[TheoryOutput]) -> Vec<u8> {
    csv_table(
        &[
            "P",
            "N",
            "K",
            "lambda",
            "kappa2",
            "rho",
            "gamma1",
            "gamma2",
            "bias_sq",
            "var",
            "risk",
            "near_interpolation",
        ],
        rows.iter().map(|t| {
            let d = &t.decomposition;
            vec![
                t.p.to_string(),
                t.n.to_string(),
                t.k.to_string(),
                fmt_f64(t.lambda),
                fmt_f64(d.kappa2),
                fmt_f64(d.rho),
                fmt_f64(d.gamma1),
                fmt_f64(d.gamma2),
                fmt_f64(d.bias_sq),
                fmt_f64(d.var_single),
                fmt_f64(d.risk),
                d.near_interpolation.to_string(),
            ]
        }),
    )
}

fn theory(f: &Flags) -> Result<Vec<u8>> {
    let (p, n, k) = (single_u64("p", &f.p)?, single_u64("n", &f.n)?, single_u64("k", &f.k)?);
    let lambda = single_f64("lambda", &f.lambda)?;
    let spec = task_spectrum(f, default_truncation(p, n))?;
    let decomposition = risk_ensemble(&spec, &ExperimentConfig::new(p, n, k, lambda))?;
    let out = TheoryOutput {
        p,
        n,
        k,
        lambda,
        decomposition,
    };
    match format_for(f, Format::Json) {
        Format::Json => to_json_bytes(&out),
        Format::Csv => Ok(decomposition_csv(&[out])),
    }
}

fn ridge_opt(f: &Flags) -> Result<Vec<u8>> {
    let (p, n, k) = (single_u64("p", &f.p)?, single_u64("n", &f.n)?, single_u64("k", &f.k)?);
    if p == 0 || n == 0 || k == 0 {
        return Err(Error::InvalidParameter("P, N, K must be >= 1".into()));
    }
    let spec = task_spectrum(f, default_truncation(p, n))?;
    let opt = RidgeProfile::new(&spec, p as f64, n as f64, &RidgeSearch::default())?.optimize(k as f64)?;
    let out = TheoryOutput {
        p,
        n,
        k,
        lambda: opt.lambda,
        decomposition: opt.decomposition,
    };
    match format_for(f, Format::Json) {
        Format::Json => to_json_bytes(&out),
        Format::Csv => Ok(decomposition_csv(&[out])),
    }
}

fn load_train_test(f: &Flags) -> Result<(LabeledData, LabeledData)> {
    let train = load_dataset(
        f.data
            .as_deref()
            .ok_or_else(|| Error::Config("missing --data".into()))?,
    )?;
    let test = load_dataset(
        f.test_data
            .as_deref()
            .ok_or_else(|| Error::Config("missing --test-data".into()))?,
    )?;
    Ok((train, test))
}

fn simulate(f: &Flags) -> Result<Vec<u8>> {
    let seed = f.seed.unwrap_or(0);
    let ks = u64_list_or("k", &f.k, &[1])?;
    let lambdas = f64_list_or("lambda", &f.lambda, &[1e-3])?;
    let n = single_u64("n", &f.n)? as usize;
    if f.data.is_some() {
        return simulate_relu(f, n, &ks, &lambdas, seed);
    }
    let p = single_u64("p", &f.p)? as usize;
    let trials = f.trials.unwrap_or(20);
    // The simulation works in the truncated eigenbasis, so keep it modest.
    let spec = task_spectrum(f, 4096.max(8 * p.max(n)))?;
    let cfg = SimulationConfig {
        p,
        n,
        ensemble_sizes: ks.iter().map(|&k| k as usize).collect(),
        ridges: lambdas.clone(),
        trials,
        seed,
    };
    let result = simulate_ensemble_risk(&spec, &cfg)?;
    #[derive(Serialize)]
    struct Row {
        lambda: f64,
        k: u64,
        trials: usize,
        mean_risk: f64,
        std_err: f64,
        theory_risk: f64,
    }
    let mut rows = Vec::new();
    for (li, &lambda) in lambdas.iter().enumerate() {
        for (ki, &k) in ks.iter().enumerate() {
            let (mean_risk, std_err) = result.summary(li, ki);
            let theory_risk = risk_ensemble(&spec, &ExperimentConfig::new(p as u64, n as u64, k, lambda))?.risk;
            rows.push(Row {
                lambda,
                k,
                trials,
                mean_risk,
                std_err,
                theory_risk,
            });
        }
    }
    match format_for(f, Format::Csv) {
        Format::Json => to_json_bytes(&rows),
        Format::Csv => Ok(csv_table(
            &["lambda", "K", "trials", "mean_risk", "std_err", "theory_risk"],
            rows.iter().map(|r| {
                vec![
                    fmt_f64(r.lambda),
                    r.k.to_string(),
                    r.trials.to_string(),
                    fmt_f64(r.mean_risk),
                    fmt_f64(r.std_err),
                    fmt_f64(r.theory_risk),
                ]
            }),
        )),
    }
}

fn simulate_relu(f: &Flags, n: usize, ks: &[u64], lambdas: &[f64], seed: u64) -> Result<Vec<u8>> {
    let (train, test) = load_train_test(f)?;
    let train = match &f.p {
        Some(_) => train.head(single_u64("p", &f.p)? as usize),
        None => train,
    };
    let kmax = *ks.iter().max().ok_or_else(|| Error::Config("empty --k".into()))? as usize;
    let binary = test.labels.iter().all(|&y| y == 1.0 || y == -1.0);
    #[derive(Serialize)]
    struct Row {
        lambda: f64,
        k: u64,
        mse: f64,
        sa_loss: Option<f64>,
        mv_loss: Option<f64>,
    }
    let mut rows = Vec::new();
    for &lambda in lambdas {
        let scores = relu_ensemble_scores(&train, &test.inputs, n, kmax, lambda, seed)?;
        for &k in ks {
            let members = scores.rows(0, k as usize).into_owned();
            let mean = DVector::from_iterator(test.len(), members.column_iter().map(|c| c.mean()));
            let mse = (mean - &test.labels).norm_squared() / test.len() as f64;
            let (sa, mv) = if binary {
                let (a, b) = classification_losses(&members, test.labels.as_slice())?;
                (Some(a), Some(b))
            } else {
                (None, None)
            };
            rows.push(Row {
                lambda,
                k,
                mse,
                sa_loss: sa,
                mv_loss: mv,
            });
        }
    }
    let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    match format_for(f, Format::Csv) {
        Format::Json => to_json_bytes(&rows),
        Format::Csv => Ok(csv_table(
            &["lambda", "K", "mse", "sa_loss", "mv_loss"],
            rows.iter().map(|r| {
                vec![
                    fmt_f64(r.lambda),
                    r.k.to_string(),
                    fmt_f64(r.mse),
                    opt(r.sa_loss),
                    opt(r.mv_loss),
                ]
            }),
        )),
    }
}

fn sweep(f: &Flags) -> Result<Vec<u8>> {
    let ell = single_f64("ell", &f.ell)?;
    let m_grid = parse_u64_list("m", required("m", &f.m)?)?;
    let p = single_u64("p", &f.p)?;
    let growth = GrowthSpec::new(ell, m_grid)?;
    let widest = growth.m_grid().iter().map(|&m| growth.split(m).0).max().unwrap_or(1);
    let spec = task_spectrum(f, default_truncation(p, widest))?;
    let policy = match f.ridge.unwrap_or(RidgeMode::Optimal) {
        RidgeMode::Optimal => RidgePolicy::Optimal(RidgeSearch::default()),
        RidgeMode::Fixed => RidgePolicy::Fixed(single_f64("lambda", &f.lambda)?),
    };
    let rows: Vec<SweepRow> = joint_sweep(&spec, p, &growth, &policy)?;
    match format_for(f, Format::Csv) {
        Format::Json => to_json_bytes(&rows),
        Format::Csv => Ok(sweep_csv(&rows).into_bytes()),
    }
}

fn scaling_exponents(f: &Flags) -> Result<Vec<u8>> {
    let (Some(alpha), Some(r)) = (f.alpha, f.r) else {
        return Err(Error::Config("scaling-exponents needs --alpha and --r".into()));
    };
    let ells = f64_list_or("ell", &f.ell, &[0.0, 0.25, 0.5, 0.75, 1.0])?;
    #[derive(Serialize)]
    struct Row {
        ell: f64,
        s_bias: f64,
        s_var: f64,
        s: f64,
    }
    #[derive(Serialize)]
    struct Out {
        alpha: f64,
        r: f64,
        crossover_ell: Option<f64>,
        exponents: Vec<Row>,
    }
    let exponents = ells
        .iter()
        .map(|&ell| {
            let e = theoretical_exponent(alpha, r, ell)?;
            Ok(Row {
                ell,
                s_bias: e.s_bias,
                s_var: e.s_var,
                s: e.s,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let out = Out {
        alpha,
        r,
        crossover_ell: crossover_ell(alpha, r)?,
        exponents,
    };
    match format_for(f, Format::Json) {
        Format::Json => to_json_bytes(&out),
        Format::Csv => Ok(csv_table(
            &["ell", "s_bias", "s_var", "s"],
            out.exponents
                .iter()
                .map(|e| vec![fmt_f64(e.ell), fmt_f64(e.s_bias), fmt_f64(e.s_var), fmt_f64(e.s)]),
        )),
    }
}

type LearningCurve = Vec<(f64, f64)>;

fn fit_spectrum(f: &Flags) -> Result<Vec<u8>> {
    let seed = f.seed.unwrap_or(0);
    let trials = f.trials.unwrap_or(10);
    let p_grid: Vec<usize> = u64_list_or("p", &f.p, &[64, 128, 256, 512, 1024])?
        .into_iter()
        .map(|p| p as usize)
        .collect();
    let lambda = f
        .lambda
        .as_ref()
        .map(|_| single_f64("lambda", &f.lambda))
        .transpose()?
        .unwrap_or(1e-8);
    let largest = p_grid.iter().copied().max().unwrap_or(1);
    let (provider, curve): (Box<dyn KernelProvider>, Option<LearningCurve>) = if f.data.is_some() {
        let train = load_dataset(f.data.as_deref().expect("checked"))?;
        let curve = match &f.test_data {
            Some(path) => Some(dataset_krr_curve(
                &train,
                &load_dataset(path)?,
                &p_grid,
                lambda,
                trials,
                seed,
            )?),
            None => None,
        };
        (Box::new(DatasetKernel { inputs: train.inputs }), curve)
    } else {
        let spec = task_spectrum(f, 16 * largest)?;
        let curve = planted_krr_curve(&spec, &p_grid, lambda, trials, seed)?;
        (Box::new(PlantedGaussianKernel { spec }), Some(curve))
    };
    let trace = trace_metric_alpha(provider.as_ref(), &p_grid, trials, seed)?;
    let source = curve
        .as_ref()
        .map(|c| estimate_source_exponent(c, trace.alpha_hat(), FitWindow::Full))
        .transpose()?;
    #[derive(Serialize)]
    struct Out<'a> {
        p_grid: &'a [usize],
        trace_metric: &'a [f64],
        alpha_hat: f64,
        krr_risk: Option<Vec<f64>>,
        beta: Option<f64>,
        r_hat: Option<f64>,
        increasing_curve: Option<bool>,
    }
    let out = Out {
        p_grid: &p_grid,
        trace_metric: &trace.metric,
        alpha_hat: trace.alpha_hat(),
        krr_risk: curve.map(|c| c.iter().map(|x| x.1).collect()),
        beta: source.as_ref().map(|s| s.beta),
        r_hat: source.as_ref().map(|s| s.r_hat),
        increasing_curve: source.as_ref().map(|s| s.increasing_curve),
    };
    if source.as_ref().is_some_and(|s| s.increasing_curve) {
        eprintln!("warning: kernel ridge risk increases with sample size; r_hat is negative");
    }
    to_json_bytes(&out)
}

fn kernel_eig(f: &Flags) -> Result<Vec<u8>> {
    let data = load_dataset(
        f.data
            .as_deref()
            .ok_or_else(|| Error::Config("missing --data".into()))?,
    )?;
    let cap = match &f.p {
        Some(_) => single_u64("p", &f.p)? as usize,
        None => DEFAULT_SAMPLE_CAP,
    };
    let spec = dataset_eigenstructure(&data, cap, f.noise_var.unwrap_or(0.0))?;
    match format_for(f, Format::Csv) {
        Format::Csv => Ok(spectrum_csv(&spec).into_bytes()),
        Format::Json => {
            #[derive(Serialize)]
            struct Out<'a> {
                eta: &'a [f64],
                wbar: &'a [f64],
                noise_var: f64,
            }
            to_json_bytes(&Out {
                eta: spec.eigenvalues(),
                wbar: spec.target_weights(),
                noise_var: spec.noise_var(),
            })
        }
    }
}

/// Tasks on which the fixed-budget ensemble comparison is run.
pub fn no_free_lunch_tasks(truncation: usize) -> Result<Vec<NamedTask>> {
    [(1.33, 0.038), (1.46, 0.14), (1.5, 0.8)]
        .into_iter()
        .map(|(alpha, r)| {
            NamedTask::power_law(
                TaskDraw {
                    alpha,
                    r,
                    noise_var: 0.0,
                },
                truncation,
            )
        })
        .collect()
}

pub const NO_FREE_LUNCH_M: u64 = 1024;
pub const NO_FREE_LUNCH_K: [u64; 6] = [1, 2, 4, 8, 16, 32];
pub const NO_FREE_LUNCH_P: [u64; 2] = [1024, 8192];

/// Ridge-optimized `K x N` tables used for the parameter-count bound: the
/// fixed-budget tasks over the budget grid, and `alpha = 1.2, r = 1` over
/// `K in 1..32`, `N in 32..2048`.
pub fn corollary_tables(search: &RidgeSearch) -> Result<Vec<crate::verify::RiskTable>> {
    let mut tables = Vec::new();
    let truncation = default_truncation(NO_FREE_LUNCH_P[1], NO_FREE_LUNCH_M);
    let budget_n: Vec<u64> = NO_FREE_LUNCH_K.iter().map(|k| NO_FREE_LUNCH_M / k).collect();
    for task in no_free_lunch_tasks(truncation)? {
        for p in NO_FREE_LUNCH_P {
            tables.push(optimal_risk_table(&task, p, &NO_FREE_LUNCH_K, &budget_n, search)?);
        }
    }
    let wide = NamedTask::power_law(
        TaskDraw {
            alpha: 1.2,
            r: 1.0,
            noise_var: 0.0,
        },
        default_truncation(1024, 2048),
    )?;
    let n_list = [32, 64, 128, 256, 512, 1024, 2048];
    for p in [64, 1024] {
        tables.push(optimal_risk_table(&wide, p, &NO_FREE_LUNCH_K, &n_list, search)?);
    }
    Ok(tables)
}

fn verify(f: &Flags) -> Result<Vec<u8>> {
    let seed = f.seed.unwrap_or(0);
    let suite = f.suite.unwrap_or(Suite::All);
    let search = RidgeSearch::default();
    let wants = |s: Suite| suite == Suite::All || suite == s;
    let mut checks: Vec<CheckReport> = Vec::new();
    if wants(Suite::MoreIsBetter) {
        let tasks = TaskSampler::default().sample(f.trials.unwrap_or(200), seed)?;
        checks.push(check_more_is_better(
            &tasks,
            &DoublingGrid::default(),
            &search,
            Direction::Expected,
        )?);
    }
    if wants(Suite::NoFreeLunch) {
        let tasks = no_free_lunch_tasks(default_truncation(NO_FREE_LUNCH_P[1], NO_FREE_LUNCH_M))?;
        checks.push(check_no_free_lunch(
            &tasks,
            NO_FREE_LUNCH_M,
            &NO_FREE_LUNCH_K,
            &NO_FREE_LUNCH_P,
            &search,
            Direction::Expected,
        )?);
    }
    if wants(Suite::Corollary) {
        checks.push(check_corollary_bound(
            &corollary_tables(&search)?,
            Slack::for_search(&search),
            Direction::Expected,
        ));
    }
    if wants(Suite::KnEquivalence) {
        let task = NamedTask::power_law(
            TaskDraw {
                alpha: 1.5,
                r: 0.8,
                noise_var: 0.0,
            },
            1_000_000,
        )?;
        let pairs = [((1, 4096), (2, 2048)), ((2, 2048), (4, 1024)), ((1, 1024), (8, 128))];
        checks.push(check_kn_equivalence(&task.spec, 64, &pairs, 1e-3)?);
    }
    if wants(Suite::SelfTest) {
        let detected = harness_self_test(&search)?;
        checks.push(CheckReport {
            check: "harness_self_test".into(),
            passed: detected,
            comparisons: 3,
            violations: Vec::new(),
            worst_margin: if detected { 0.0 } else { f64::NEG_INFINITY },
        });
    }
    if format_for(f, Format::Json) == Format::Csv {
        return Err(Error::Config("verify reports are JSON only".into()));
    }
    to_json_bytes(&VerifyReport::new(checks))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn progressions() {
        assert_eq!(
            parse_u64_list("m", "64,128,...,1024").unwrap(),
            vec![64, 128, 256, 512, 1024]
        );
        assert_eq!(parse_u64_list("m", "1,2,...,10").unwrap(), (1..=10).collect::<Vec<_>>());
        assert_eq!(parse_u64_list("m", "3, 5,7").unwrap(), vec![3, 5, 7]);
        assert!(parse_u64_list("m", "4,6,...,9").is_err());
        assert!(parse_u64_list("m", "4,x").is_err());
    }

    #[test]
    fn config_expansion_keeps_command_line_last() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.json");
        fs::write(&cfg, r#"{"alpha": 1.5, "noise_var": 0.1, "m": [1, 2]}"#).unwrap();
        let args: Vec<OsString> = ["rfens", "theory", "--config", cfg.to_str().unwrap(), "--alpha", "2"]
            .iter()
            .map(OsString::from)
            .collect();
        let expanded = expand_config(args).unwrap();
        let text: Vec<String> = expanded.iter().map(|a| a.to_string_lossy().into_owned()).collect();
        assert_eq!(&text[..2], &["rfens", "theory"]);
        assert!(text.windows(2).any(|w| w == ["--noise-var", "0.1"]));
        assert!(text.windows(2).any(|w| w == ["--m", "1,2"]));
        let cli = Cli::try_parse_from(expanded).unwrap();
        let Command::Theory(f) = cli.command else { panic!() };
        assert_eq!(f.alpha, Some(2.0));
        assert_eq!(f.noise_var, Some(0.1));
    }

    #[test]
    fn unknown_config_key_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.json");
        fs::write(&cfg, r#"{"bogus": 1}"#).unwrap();
        let out = dir.path().join("o.json");
        let code = run([
            "rfens",
            "theory",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_ne!(code, 0);
        assert!(!out.exists());
    }
}
