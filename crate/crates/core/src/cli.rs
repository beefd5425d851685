//! Command-line front end.
//!
//! Four subcommands: `fit` (estimate a prior and the latent means from
//! censored CSVs), `impute` (posterior summaries for new rows under a fitted
//! prior), `simulate` (the simulation bench over a censoring grid), and
//! `demo` (the two-circles structure demo). Settings resolve in three
//! layers: built-in defaults, then a TOML config file (`--config`), then
//! command-line flags; every run writes a `provenance.toml` echoing the
//! fully resolved settings, so any output directory can be reproduced from
//! its provenance alone.
//!
//! Exit codes: 0 on success, 1 on validation or solve failures (the message
//! names the failing stage), 2 on command-line usage errors.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::censored::{fmt_f64, read_censored, read_matrix, write_matrix};
use crate::error::{Error, Result};
use crate::matrix::Mat;
use crate::npmle::{DiscretePrior, SolveOptions};
use crate::posterior::impute_row;
use crate::simbench::{circle_demo, run_experiment, BenchOptions, Method, MomentSpec, SimConfig};
use crate::support::{ebm_tobit, EbmTobitConfig, NoiseMode};
use crate::tobit::SupportSet;

#[derive(Parser)]
#[command(
    name = "ebmtobit",
    version,
    about = "Empirical Bayes estimation and imputation for partly interval-censored Gaussian matrices"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a prior to censored data and estimate the latent mean matrix.
    Fit(FitArgs),
    /// Posterior mean/variance for new rows under a fitted prior.
    Impute(ImputeArgs),
    /// Run the simulation bench over a censoring grid.
    Simulate(SimulateArgs),
    /// Two-circles demo: joint versus column-independent priors.
    Demo(DemoArgs),
}

/// Settings shared by every subcommand.
#[derive(Args)]
struct CommonArgs {
    /// TOML config file; command-line flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (created if absent).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: all available cores). Results do not depend
    /// on this setting.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// CSV of lower endpoints.
    #[arg(long)]
    lower: Option<PathBuf>,
    /// CSV of upper endpoints.
    #[arg(long)]
    upper: Option<PathBuf>,
    /// CSV of per-cell noise levels (default: constant --default-sigma).
    #[arg(long)]
    sigma: Option<PathBuf>,
    /// Noise level used when no sigma CSV is given.
    #[arg(long)]
    default_sigma: Option<f64>,
    /// Support-refinement rounds.
    #[arg(long)]
    iterations: Option<usize>,
    /// Rounds discarded before averaging.
    #[arg(long)]
    burn_in: Option<usize>,
    /// Support atoms per round (default: one per data row).
    #[arg(long)]
    support_size: Option<usize>,
    /// Jitter added when resampling support: "homoskedastic:SD" or
    /// "column-mean".
    #[arg(long)]
    jitter: Option<String>,
    /// Base seed for support resampling.
    #[arg(long)]
    seed: Option<u64>,
    /// Relative log-likelihood tolerance of the weight solver.
    #[arg(long)]
    tol: Option<f64>,
    /// Iteration cap of the weight solver.
    #[arg(long)]
    max_iter: Option<usize>,
}

#[derive(Args)]
struct ImputeArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Directory holding support.csv and weights.csv from `fit`.
    #[arg(long)]
    model: Option<PathBuf>,
    /// CSV of lower endpoints for the new rows.
    #[arg(long)]
    lower: Option<PathBuf>,
    /// CSV of upper endpoints for the new rows.
    #[arg(long)]
    upper: Option<PathBuf>,
    /// CSV of per-cell noise levels (default: constant --default-sigma).
    #[arg(long)]
    sigma: Option<PathBuf>,
    /// Noise level used when no sigma CSV is given.
    #[arg(long)]
    default_sigma: Option<f64>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Rows per replicate.
    #[arg(long)]
    n: Option<usize>,
    /// Columns per replicate.
    #[arg(long)]
    p: Option<usize>,
    /// Censored-column fractions of the grid (comma-separated).
    #[arg(long, value_delimiter = ',')]
    frac: Option<Vec<f64>>,
    /// Detection-limit quantiles of the grid (comma-separated).
    #[arg(long, value_delimiter = ',')]
    quantile: Option<Vec<f64>>,
    /// Replicates per grid cell.
    #[arg(long)]
    reps: Option<usize>,
    /// Observation noise standard deviation.
    #[arg(long)]
    noise_sd: Option<f64>,
    /// AR(1) correlation of the true-mean rows.
    #[arg(long)]
    rho: Option<f64>,
    /// Methods to run (comma-separated; see --help-methods listing in docs).
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    /// Base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Relative log-likelihood tolerance of the weight solver.
    #[arg(long)]
    tol: Option<f64>,
    /// Iteration cap of the weight solver.
    #[arg(long)]
    max_iter: Option<usize>,
    /// Support-refinement rounds of the iterated estimator.
    #[arg(long)]
    ebm_iterations: Option<usize>,
    /// Burn-in rounds of the iterated estimator.
    #[arg(long)]
    ebm_burn_in: Option<usize>,
}

#[derive(Args)]
struct DemoArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Number of points.
    #[arg(long)]
    n: Option<usize>,
    /// The two circle radii (comma-separated).
    #[arg(long, value_delimiter = ',')]
    radii: Option<Vec<f64>>,
    /// Observation noise standard deviation.
    #[arg(long)]
    noise_sd: Option<f64>,
    /// Base seed.
    #[arg(long)]
    seed: Option<u64>,
}

// ---------------------------------------------------------------------------
// Resolved settings (defaults <- config file <- flags), echoed to provenance.

/// `fit` settings after merging defaults, config file, and flags.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSettings {
    pub lower: PathBuf,
    pub upper: PathBuf,
    pub sigma: Option<PathBuf>,
    pub default_sigma: f64,
    pub iterations: usize,
    pub burn_in: usize,
    pub support_size: Option<usize>,
    pub jitter: String,
    pub seed: u64,
    pub tol: f64,
    pub max_iter: usize,
}

/// Partial `fit` settings as read from a config file.
#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FitFile {
    lower: Option<PathBuf>,
    upper: Option<PathBuf>,
    sigma: Option<PathBuf>,
    default_sigma: Option<f64>,
    iterations: Option<usize>,
    burn_in: Option<usize>,
    support_size: Option<usize>,
    jitter: Option<String>,
    seed: Option<u64>,
    tol: Option<f64>,
    max_iter: Option<usize>,
}

/// `impute` settings after merging.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImputeSettings {
    pub model: PathBuf,
    pub lower: PathBuf,
    pub upper: PathBuf,
    pub sigma: Option<PathBuf>,
    pub default_sigma: f64,
    /// Unused by imputation (it is deterministic); echoed for a uniform
    /// provenance shape.
    pub seed: u64,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ImputeFile {
    model: Option<PathBuf>,
    lower: Option<PathBuf>,
    upper: Option<PathBuf>,
    sigma: Option<PathBuf>,
    default_sigma: Option<f64>,
    seed: Option<u64>,
}

/// `simulate` settings after merging.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSettings {
    pub n: usize,
    pub p: usize,
    pub frac: Vec<f64>,
    pub quantile: Vec<f64>,
    pub reps: usize,
    pub noise_sd: f64,
    pub rho: f64,
    pub methods: Vec<String>,
    pub seed: u64,
    pub tol: f64,
    pub max_iter: usize,
    pub check_stationarity: bool,
    pub ebm_iterations: usize,
    pub ebm_burn_in: usize,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulateFile {
    n: Option<usize>,
    p: Option<usize>,
    frac: Option<Vec<f64>>,
    quantile: Option<Vec<f64>>,
    reps: Option<usize>,
    noise_sd: Option<f64>,
    rho: Option<f64>,
    methods: Option<Vec<String>>,
    seed: Option<u64>,
    tol: Option<f64>,
    max_iter: Option<usize>,
    check_stationarity: Option<bool>,
    ebm_iterations: Option<usize>,
    ebm_burn_in: Option<usize>,
}

/// `demo` settings after merging.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemoSettings {
    pub n: usize,
    pub radii: Vec<f64>,
    pub noise_sd: f64,
    pub seed: u64,
    pub tol: f64,
    pub max_iter: usize,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct DemoFile {
    n: Option<usize>,
    radii: Option<Vec<f64>>,
    noise_sd: Option<f64>,
    seed: Option<u64>,
    tol: Option<f64>,
    max_iter: Option<usize>,
}

impl DemoFile {
    fn into_settings(self, args: &DemoArgs) -> DemoSettings {
        DemoSettings {
            n: args.n.or(self.n).unwrap_or(500),
            radii: args.radii.clone().or(self.radii).unwrap_or_else(|| vec![2.0, 6.0]),
            noise_sd: args.noise_sd.or(self.noise_sd).unwrap_or(1.0),
            seed: args.seed.or(self.seed).unwrap_or(0),
            tol: self.tol.unwrap_or(1e-8),
            max_iter: self.max_iter.unwrap_or(10_000),
        }
    }
}

/// Echo of a resolved run, written as `provenance.toml` in the output
/// directory. `input_hashes` fingerprints the referenced CSVs so a
/// reproduction can verify it is reading the same data.
#[derive(Serialize)]
struct Provenance<'a, S: Serialize> {
    command: &'a str,
    threads: String,
    settings: &'a S,
    input_hashes: Vec<InputHash>,
}

#[derive(Serialize)]
struct InputHash {
    path: PathBuf,
    fnv1a: String,
}

/// A library error tagged with the pipeline stage it came from; the exit
/// message is `error[stage]: ...`.
pub struct StagedError {
    stage: &'static str,
    source: Error,
}

impl std::fmt::Display for StagedError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "error[{}]: {}", self.stage, self.source)
    }
}

trait Staged<T> {
    fn staged(self, stage: &'static str) -> std::result::Result<T, StagedError>;
}

impl<T> Staged<T> for Result<T> {
    fn staged(self, stage: &'static str) -> std::result::Result<T, StagedError> {
        self.map_err(|source| StagedError { stage, source })
    }
}

fn read_config_file<T: for<'de> Deserialize<'de> + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            toml::from_str(&text)
                .map_err(|e| Error::ConfigInvalid(format!("config file {}: {e}", p.display())))
        }
    }
}

fn require<T>(v: Option<T>, key: &str) -> Result<T> {
    v.ok_or_else(|| {
        Error::ConfigInvalid(format!(
            "missing required setting `{key}` (set it by flag or config file)"
        ))
    })
}

fn parse_jitter(s: &str) -> Result<NoiseMode> {
    if s == "column-mean" {
        return Ok(NoiseMode::ColumnMean);
    }
    if let Some(rest) = s.strip_prefix("homoskedastic:") {
        let sd: f64 = rest
            .parse()
            .map_err(|_| Error::ConfigInvalid(format!("bad jitter level {rest:?}")))?;
        return Ok(NoiseMode::Homoskedastic(sd));
    }
    Err(Error::ConfigInvalid(format!(
        "unknown jitter {s:?}; expected \"homoskedastic:SD\" or \"column-mean\""
    )))
}

fn write_text(dir: &Path, name: &str, text: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

fn write_provenance<S: Serialize>(
    dir: &Path,
    command: &str,
    threads: Option<usize>,
    settings: &S,
    inputs: &[(&Path, u64)],
) -> Result<()> {
    let prov = Provenance {
        command,
        threads: threads.map_or_else(|| "all-cores".to_string(), |t| t.to_string()),
        settings,
        input_hashes: inputs
            .iter()
            .map(|(p, h)| InputHash {
                path: p.to_path_buf(),
                fnv1a: format!("{h:016x}"),
            })
            .collect(),
    };
    let text = toml::to_string(&prov)
        .map_err(|e| Error::ConfigInvalid(format!("provenance serialization: {e}")))?;
    write_text(dir, "provenance.toml", &text)
}

fn ensure_out_dir(out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))
}

// ---------------------------------------------------------------------------
// fit

fn resolve_fit(args: &FitArgs) -> Result<FitSettings> {
    let file: FitFile = read_config_file(args.common.config.as_deref())?;
    Ok(FitSettings {
        lower: require(args.lower.clone().or(file.lower), "lower")?,
        upper: require(args.upper.clone().or(file.upper), "upper")?,
        sigma: args.sigma.clone().or(file.sigma),
        default_sigma: args.default_sigma.or(file.default_sigma).unwrap_or(1.0),
        iterations: args.iterations.or(file.iterations).unwrap_or(50),
        burn_in: args.burn_in.or(file.burn_in).unwrap_or(10),
        support_size: args.support_size.or(file.support_size),
        jitter: args
            .jitter
            .clone()
            .or(file.jitter)
            .unwrap_or_else(|| "homoskedastic:1.0".to_string()),
        seed: args.seed.or(file.seed).unwrap_or(0),
        tol: args.tol.or(file.tol).unwrap_or(1e-8),
        max_iter: args.max_iter.or(file.max_iter).unwrap_or(10_000),
    })
}

fn cmd_fit(args: &FitArgs) -> std::result::Result<(), StagedError> {
    let s = resolve_fit(args).staged("resolve-config")?;
    let out = require(args.common.out.clone(), "out").staged("resolve-config")?;
    let data = read_censored(&s.lower, &s.upper, s.sigma.as_deref(), s.default_sigma)
        .staged("read-input")?;
    let cfg = EbmTobitConfig {
        iterations: s.iterations,
        burn_in: s.burn_in,
        support_size: s.support_size,
        noise: parse_jitter(&s.jitter).staged("resolve-config")?,
        seed: s.seed,
        solver: SolveOptions {
            tol: s.tol,
            max_iter: s.max_iter,
            ..SolveOptions::default()
        },
        record_iterates: false,
    };
    let fitted = ebm_tobit(&data, &cfg).staged("solve")?;

    // Posterior summaries under the final prior, so `impute` on a training
    // row reproduces these files byte-for-byte.
    let prior = &fitted.final_prior;
    let n = data.n();
    let p = data.p();
    let mut post_mean = Mat::zeros(n, p);
    let mut post_var = Mat::zeros(n, p);
    for i in 0..n {
        let (l, u, sg) = data.row_parts(i);
        let imp = impute_row(l, u, sg, prior).staged("posterior-summaries")?;
        post_mean.row_mut(i).copy_from_slice(&imp.mean);
        post_var.row_mut(i).copy_from_slice(&imp.variance);
    }

    ensure_out_dir(&out).staged("write-output")?;
    let w = Mat::from_vec(prior.m(), 1, prior.weights().to_vec()).expect("weights are nonempty");
    for (name, mat) in [
        ("estimate.csv", &fitted.theta_hat),
        ("support.csv", prior.support().points()),
        ("weights.csv", &w),
        ("posterior_mean.csv", &post_mean),
        ("posterior_variance.csv", &post_var),
    ] {
        write_matrix(&out.join(name), mat).staged("write-output")?;
    }

    let mut diag = String::new();
    let final_ll = fitted.iteration_logliks.last().copied().unwrap_or(f64::NAN);
    let all_conv = fitted.iteration_converged.iter().all(|&c| c);
    let _ = writeln!(diag, "rounds = {}", fitted.iteration_logliks.len());
    let _ = writeln!(diag, "final_loglik = {}", fmt_f64(final_ll));
    let _ = writeln!(diag, "all_rounds_converged = {all_conv}");
    let lls: Vec<String> = fitted.iteration_logliks.iter().map(|&x| fmt_f64(x)).collect();
    let _ = writeln!(diag, "round_logliks = [{}]", lls.join(", "));
    write_text(&out, "diagnostics.toml", &diag).staged("write-output")?;

    let mut inputs = vec![(s.lower.as_path(), hash_file(&s.lower).staged("read-input")?)];
    inputs.push((s.upper.as_path(), hash_file(&s.upper).staged("read-input")?));
    if let Some(sg) = &s.sigma {
        inputs.push((sg.as_path(), hash_file(sg).staged("read-input")?));
    }
    write_provenance(&out, "fit", args.common.threads, &s, &inputs).staged("write-output")
}

/// FNV-1a over raw file bytes, for provenance input fingerprints.
fn hash_file(path: &Path) -> Result<u64> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut h: u64 = 0xcbf29ce484222325;
    for b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    Ok(h)
}

// ---------------------------------------------------------------------------
// impute

fn resolve_impute(args: &ImputeArgs) -> Result<ImputeSettings> {
    let file: ImputeFile = read_config_file(args.common.config.as_deref())?;
    Ok(ImputeSettings {
        model: require(args.model.clone().or(file.model), "model")?,
        lower: require(args.lower.clone().or(file.lower), "lower")?,
        upper: require(args.upper.clone().or(file.upper), "upper")?,
        sigma: args.sigma.clone().or(file.sigma),
        default_sigma: args.default_sigma.or(file.default_sigma).unwrap_or(1.0),
        seed: file.seed.unwrap_or(0),
    })
}

fn cmd_impute(args: &ImputeArgs) -> std::result::Result<(), StagedError> {
    let s = resolve_impute(args).staged("resolve-config")?;
    let out = require(args.common.out.clone(), "out").staged("resolve-config")?;
    let support_path = s.model.join("support.csv");
    let weights_path = s.model.join("weights.csv");
    let support = read_matrix(&support_path)
        .and_then(SupportSet::new)
        .staged("read-model")?;
    let weights_mat = read_matrix(&weights_path).staged("read-model")?;
    if weights_mat.n_cols() != 1 || weights_mat.n_rows() != support.m() {
        return Err(Error::ConfigInvalid(format!(
            "weights.csv must be {} x 1 to match support.csv (got {:?})",
            support.m(),
            weights_mat.shape()
        )))
        .staged("read-model");
    }
    // Validates the weights (nonnegative, normalizable).
    let prior = DiscretePrior::new(support, weights_mat.as_slice().to_vec()).staged("read-model")?;

    let data = read_censored(&s.lower, &s.upper, s.sigma.as_deref(), s.default_sigma)
        .staged("read-input")?;
    if data.p() != prior.support().dim() {
        return Err(Error::DimensionMismatch(format!(
            "rows have {} columns but the model support has {}",
            data.p(),
            prior.support().dim()
        )))
        .staged("read-input");
    }

    let n = data.n();
    let p = data.p();
    let mut mean = Mat::filled(n, p, f64::NAN);
    let mut var = Mat::filled(n, p, f64::NAN);
    let mut failures = 0usize;
    for i in 0..n {
        let (l, u, sg) = data.row_parts(i);
        match impute_row(l, u, sg, &prior) {
            Ok(imp) => {
                mean.row_mut(i).copy_from_slice(&imp.mean);
                var.row_mut(i).copy_from_slice(&imp.variance);
            }
            Err(e) => {
                failures += 1;
                eprintln!("row {i}: {e} (emitting NaN for this row)");
            }
        }
    }
    ensure_out_dir(&out).staged("write-output")?;
    write_matrix(&out.join("imputed_mean.csv"), &mean).staged("write-output")?;
    write_matrix(&out.join("imputed_variance.csv"), &var).staged("write-output")?;
    if failures > 0 {
        eprintln!("{failures} of {n} rows could not be imputed");
    }
    let mut inputs = vec![
        (support_path.as_path(), hash_file(&support_path).staged("read-model")?),
        (weights_path.as_path(), hash_file(&weights_path).staged("read-model")?),
        (s.lower.as_path(), hash_file(&s.lower).staged("read-input")?),
        (s.upper.as_path(), hash_file(&s.upper).staged("read-input")?),
    ];
    if let Some(sg) = &s.sigma {
        inputs.push((sg.as_path(), hash_file(sg).staged("read-input")?));
    }
    write_provenance(&out, "impute", args.common.threads, &s, &inputs).staged("write-output")
}

// ---------------------------------------------------------------------------
// simulate

fn resolve_simulate(args: &SimulateArgs) -> Result<SimulateSettings> {
    let file: SimulateFile = read_config_file(args.common.config.as_deref())?;
    let default_methods: Vec<String> = [
        Method::OracleSupport,
        Method::EbmTobit,
        Method::MidpointMle,
        Method::HalfMin,
        Method::GeneralizedExemplar,
        Method::VectorizedOracle,
        Method::MeanFieldEb,
    ]
    .iter()
    .map(|m| m.cli_name().to_string())
    .collect();
    Ok(SimulateSettings {
        n: args.n.or(file.n).unwrap_or(300),
        p: args.p.or(file.p).unwrap_or(10),
        frac: args.frac.clone().or(file.frac).unwrap_or_else(|| vec![0.1, 0.3]),
        quantile: args
            .quantile
            .clone()
            .or(file.quantile)
            .unwrap_or_else(|| vec![0.1, 0.3]),
        reps: args.reps.or(file.reps).unwrap_or(20),
        noise_sd: args.noise_sd.or(file.noise_sd).unwrap_or(1.0),
        rho: args.rho.or(file.rho).unwrap_or(0.7),
        methods: args.methods.clone().or(file.methods).unwrap_or(default_methods),
        seed: args.seed.or(file.seed).unwrap_or(0),
        tol: args.tol.or(file.tol).unwrap_or(1e-8),
        // The bench favors the loose-but-fast solver profile: the objective
        // plateaus long before the stationarity residual does, and posterior
        // means are insensitive to that tail.
        max_iter: args.max_iter.or(file.max_iter).unwrap_or(500),
        check_stationarity: file.check_stationarity.unwrap_or(false),
        ebm_iterations: args.ebm_iterations.or(file.ebm_iterations).unwrap_or(50),
        ebm_burn_in: args.ebm_burn_in.or(file.ebm_burn_in).unwrap_or(10),
    })
}

/// Column label of a grid cell in the aggregate tables.
fn cell_label(frac: f64, q: f64) -> String {
    format!("f{frac}_q{q}")
}

fn cmd_simulate(args: &SimulateArgs) -> std::result::Result<(), StagedError> {
    let s = resolve_simulate(args).staged("resolve-config")?;
    let out = require(args.common.out.clone(), "out").staged("resolve-config")?;
    let methods: Vec<Method> = s
        .methods
        .iter()
        .map(|name| Method::parse(name))
        .collect::<Result<_>>()
        .staged("resolve-config")?;
    let opts = BenchOptions {
        solver: SolveOptions {
            tol: s.tol,
            max_iter: s.max_iter,
            record_trace: false,
            check_stationarity: s.check_stationarity,
        },
        ebm_iterations: s.ebm_iterations,
        ebm_burn_in: s.ebm_burn_in,
    };
    ensure_out_dir(&out).staged("write-output")?;

    // One row per method, one column per (frac, quantile) cell.
    let mut agg: Vec<(String, Vec<Vec<String>>)> = [
        "rmse_all",
        "rmse_censored",
        "spearman_all",
        "spearman_censored",
    ]
    .iter()
    .map(|metric| (metric.to_string(), vec![Vec::new(); methods.len()]))
    .collect();
    let mut labels = Vec::new();

    for &frac in &s.frac {
        for &q in &s.quantile {
            let cfg = SimConfig {
                n: s.n,
                p: s.p,
                frac_censored_cols: frac,
                lod_quantile: q,
                reps: s.reps,
                noise_sd: s.noise_sd,
                moments: MomentSpec::ar1(s.p, s.rho).staged("resolve-config")?,
                seed: s.seed,
            };
            let report = run_experiment(&cfg, &methods, &opts).staged("solve")?;
            let label = cell_label(frac, q);
            write_text(
                &out,
                &format!("per_replicate_{label}.csv"),
                &report.per_replicate_csv(),
            )
            .staged("write-output")?;
            write_text(&out, &format!("summary_{label}.csv"), &report.summary_csv())
                .staged("write-output")?;
            for (mi, &m) in methods.iter().enumerate() {
                let sm = report.summary(m).expect("every method is summarized");
                let cells = [
                    sm.mean_rmse_all,
                    sm.mean_rmse_censored,
                    sm.mean_spearman_all,
                    sm.mean_spearman_censored,
                ];
                for (ai, v) in cells.iter().enumerate() {
                    agg[ai].1[mi].push(match v {
                        Some(x) => fmt_f64(*x),
                        None => "NA".to_string(),
                    });
                }
            }
            labels.push(label);
        }
    }

    for (metric, rows) in &agg {
        let mut csv = format!("method,{}\n", labels.join(","));
        for (mi, m) in methods.iter().enumerate() {
            csv.push_str(&format!("{},{}\n", m.display_name(), rows[mi].join(",")));
        }
        write_text(&out, &format!("aggregate_{metric}.csv"), &csv).staged("write-output")?;
    }
    write_provenance(&out, "simulate", args.common.threads, &s, &[]).staged("write-output")
}

// ---------------------------------------------------------------------------
// demo

fn resolve_demo(args: &DemoArgs) -> Result<DemoSettings> {
    let file: DemoFile = read_config_file(args.common.config.as_deref())?;
    let s = file.into_settings(args);
    if s.radii.len() != 2 {
        return Err(Error::ConfigInvalid(format!(
            "--radii takes exactly two values (got {})",
            s.radii.len()
        )));
    }
    Ok(s)
}

fn cmd_demo(args: &DemoArgs) -> std::result::Result<(), StagedError> {
    let s = resolve_demo(args).staged("resolve-config")?;
    let out = require(args.common.out.clone(), "out").staged("resolve-config")?;
    let solver = SolveOptions {
        tol: s.tol,
        max_iter: s.max_iter,
        ..SolveOptions::default()
    };
    let report = circle_demo(s.n, (s.radii[0], s.radii[1]), s.noise_sd, s.seed, &solver)
        .staged("solve")?;
    ensure_out_dir(&out).staged("write-output")?;
    for (name, mat) in [
        ("truth.csv", &report.truth),
        ("observed.csv", &report.observed),
        ("joint.csv", &report.joint),
        ("mean_field.csv", &report.mean_field),
    ] {
        write_matrix(&out.join(name), mat).staged("write-output")?;
    }
    let text = format!(
        "rmse_joint = {}\nrmse_mean_field = {}\n",
        fmt_f64(report.rmse_joint),
        fmt_f64(report.rmse_mean_field)
    );
    write_text(&out, "report.toml", &text).staged("write-output")?;
    write_provenance(&out, "demo", args.common.threads, &s, &[]).staged("write-output")
}

// ---------------------------------------------------------------------------
// entry

fn dispatch(cli: &Cli) -> std::result::Result<(), StagedError> {
    match &cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Impute(a) => cmd_impute(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Demo(a) => cmd_demo(a),
    }
}

fn threads_of(cli: &Cli) -> Option<usize> {
    match &cli.command {
        Command::Fit(a) => a.common.threads,
        Command::Impute(a) => a.common.threads,
        Command::Simulate(a) => a.common.threads,
        Command::Demo(a) => a.common.threads,
    }
}

/// Parse arguments and run; the binary's whole `main`.
pub fn run() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match threads_of(&cli) {
        Some(t) => {
            let pool = match rayon::ThreadPoolBuilder::new().num_threads(t).build() {
                Ok(pool) => pool,
                Err(e) => {
                    eprintln!("error: could not build a {t}-thread pool: {e}");
                    return ExitCode::FAILURE;
                }
            };
            pool.install(|| dispatch(&cli))
        }
        None => dispatch(&cli),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jitter_strings_parse() {
        assert!(matches!(
            parse_jitter("homoskedastic:0.5").unwrap(),
            NoiseMode::Homoskedastic(sd) if sd == 0.5
        ));
        assert!(matches!(parse_jitter("column-mean").unwrap(), NoiseMode::ColumnMean));
        assert!(parse_jitter("cell-matched").is_err());
        assert!(parse_jitter("homoskedastic:abc").is_err());
    }

    #[test]
    fn cell_labels_are_stable() {
        assert_eq!(cell_label(0.1, 0.3), "f0.1_q0.3");
    }
}
