//! Command-line front end.
//!
//! Every artifact written here is wrapped in an [`Artifact`] envelope that
//! carries the format version and the full [`RunConfig`]. CSV tables get a
//! `<name>.meta.json` sidecar with the same envelope. Failures print a JSON
//! error object on stderr and map to exit code 2 (usage, validation, input)
//! or 3 (numerical).

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::Array2;
use serde::Serialize;

use crate::baseline::{ClosedFormKernel, KernelFamily};
use crate::error::{Error, Result};
use crate::harness::ad::{duplicates_experiment, run_ad, AdConfig, AdMethod, ExperimentReport};
use crate::harness::consistency::{consistency_experiment, ConsistencyConfig};
use crate::harness::dataset::{load_csv, Dataset};
use crate::harness::metrics::{rank_aggregate, AucTable};
use crate::harness::negfrac::{negative_fraction_experiment, NegFracConfig};
use crate::harness::synthetic::{gaussian_mixture_with_outliers, two_clusters};
use crate::io::{fmt_float, write_atomic, write_json_atomic};
use crate::model::{fit_model, FittedModel, KernelSpec};
use crate::score::{log_grid_descending, tune_kde, tune_sosrep, FdOptions, FdProfile, Probe};
use crate::sdo::{FrequencySpec, Normalization, SamplingScheme, SdoParams};
use crate::solver::{GradientMethod, SolverOptions};
use crate::two_block::{verify_against_solver, BlockSpec};

pub const ARTIFACT_FORMAT_VERSION: &str = "sosrep-artifact/1";

/// Exit code for usage, validation and input errors.
pub const EXIT_USAGE: i32 = 2;
/// Exit code for numerical failures.
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser, Serialize)]
#[command(name = "sosrep", version, about = "Sobolev-regularized pre-density estimation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case", tag = "command", content = "args")]
pub enum Command {
    /// Fit a model on a CSV file and write the model and fit metrics.
    Fit(FitArgs),
    /// Score query rows with a saved model.
    Score(ScoreArgs),
    /// Select the smoothness or bandwidth by the Fisher-divergence profile.
    Tune(TuneArgs),
    /// Compare the two-block kernel oracles with the numeric solver.
    TwoBlock(TwoBlockArgs),
    /// Run an experiment protocol.
    Experiment(ExperimentArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelChoice {
    Sdo,
    Gaussian,
    Laplacian,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeChoice {
    Iid,
    Stratified,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodChoice {
    Natural,
    Standard,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProbeChoice {
    Rademacher,
    #[value(alias = "paper-three-point")]
    ThreePoint,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorChoice {
    Sosrep,
    Kde,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    Ad,
    Duplicates,
    Negfrac,
    Consistency,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyntheticChoice {
    Mixture,
    TwoClusters,
}

#[derive(Debug, Args, Serialize)]
pub struct KernelArgs {
    #[arg(long, value_enum, default_value = "sdo")]
    pub kernel: KernelChoice,
    /// Smoothness of the SDO kernel.
    #[arg(long, default_value_t = 1.0)]
    pub a: f64,
    /// Bandwidth of the Gaussian or Laplacian kernel.
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    /// Derivative order; defaults to floor(d/2) + 1.
    #[arg(long)]
    pub m: Option<u32>,
    /// Number of random features.
    #[arg(long = "n-z", default_value_t = 4096)]
    pub n_z: usize,
    #[arg(long, value_enum, default_value = "iid")]
    pub scheme: SchemeChoice,
    /// Scale sampled kernels to match the exact kernel.
    #[arg(long)]
    pub exact_normalization: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct SolverArgs {
    #[arg(long, value_enum, default_value = "natural")]
    pub method: MethodChoice,
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    #[arg(long, default_value_t = 1000)]
    pub n_iters: usize,
    #[arg(long, default_value_t = 1e-8)]
    pub grad_tol: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct FdArgs {
    #[arg(long, default_value_t = 100)]
    pub n_fd_iters: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub h: f64,
    #[arg(long, value_enum, default_value = "rademacher")]
    pub probe: ProbeChoice,
}

#[derive(Debug, Args, Serialize)]
pub struct GridArgs {
    /// Explicit comma-separated candidate list; overrides the log grid.
    #[arg(long, value_delimiter = ',')]
    pub a_grid: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1e-6)]
    pub a_min: f64,
    #[arg(long, default_value_t = 1e2)]
    pub a_max: f64,
    #[arg(long, default_value_t = 25)]
    pub a_points: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct FitArgs {
    /// Training CSV with a header row.
    pub train: PathBuf,
    /// Model file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Metrics JSON; defaults to `<out>.metrics.json`.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    /// Column dropped from the features when present.
    #[arg(long, default_value = "label")]
    pub label_column: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub kernel: KernelArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct ScoreArgs {
    pub model: PathBuf,
    pub query: PathBuf,
    /// Output CSV with columns `row,pre_density,anomaly_score`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "label")]
    pub label_column: String,
}

#[derive(Debug, Args, Serialize)]
pub struct TuneArgs {
    pub train: PathBuf,
    pub test: PathBuf,
    /// Report JSON with the selection.
    #[arg(long)]
    pub out: PathBuf,
    /// Profile CSV; defaults to `<out>.profile.csv`.
    #[arg(long)]
    pub profile: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "sosrep")]
    pub estimator: EstimatorChoice,
    #[arg(long, default_value = "label")]
    pub label_column: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub grid: GridArgs,
    #[command(flatten)]
    pub kernel: KernelArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub fd: FdArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct TwoBlockArgs {
    #[arg(long)]
    pub gamma: f64,
    #[arg(long)]
    pub gamma_prime: f64,
    #[arg(long)]
    pub beta: f64,
    /// Size of the first cluster.
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    /// Size of the second cluster; defaults to `n`.
    #[arg(long = "m-size")]
    pub m_size: Option<usize>,
    /// Report JSON; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    #[arg(long, default_value_t = 20000)]
    pub n_iters: usize,
    #[arg(long, default_value_t = 1e-12)]
    pub grad_tol: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct ExperimentArgs {
    #[arg(value_enum)]
    pub protocol: Protocol,
    /// Directory receiving reports and tables.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Labelled CSV datasets; repeat for several.
    #[arg(long)]
    pub data: Vec<PathBuf>,
    /// Built-in synthetic dataset used in addition to `--data`.
    #[arg(long, value_enum)]
    pub synthetic: Option<SyntheticChoice>,
    #[arg(long, default_value_t = 2000)]
    pub synthetic_n: usize,
    #[arg(long, default_value = "label")]
    pub label_column: String,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3")]
    pub seeds: Vec<u64>,
    /// Comma-separated methods; defaults to all six.
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
    /// Duplication factors for the duplicates protocol.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5,6")]
    pub ks: Vec<usize>,
    #[arg(long, default_value_t = 0.7)]
    pub train_frac: f64,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long, default_value_t = 1e-2)]
    pub sigma_min: f64,
    #[arg(long, default_value_t = 1e1)]
    pub sigma_max: f64,
    #[arg(long, default_value_t = 25)]
    pub sigma_points: usize,
    #[command(flatten)]
    pub kernel: KernelArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub fd: FdArgs,
    /// Initializations per method for the negfrac protocol.
    #[arg(long, default_value_t = 50)]
    pub n_init: usize,
    /// Step size for the negfrac protocol.
    #[arg(long, default_value_t = 0.01)]
    pub negfrac_lr: f64,
    /// Sample sizes for the consistency protocol.
    #[arg(long, value_delimiter = ',', default_value = "50,200,800")]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    pub repetitions: usize,
}

/// Parameters of one invocation, embedded verbatim in every artifact.
#[derive(Debug, Serialize)]
pub struct RunConfig<'a> {
    pub tool_version: &'static str,
    #[serde(flatten)]
    pub command: &'a Command,
}

/// Envelope of every JSON artifact.
#[derive(Debug, Serialize)]
pub struct Artifact<'a, T: Serialize> {
    pub format_version: &'static str,
    pub run_config: &'a RunConfig<'a>,
    pub result: T,
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    format_version: &'static str,
    error: ErrorBody<'a>,
    exit_code: i32,
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    kind: &'a str,
    message: String,
}

/// Exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_USAGE
    }
}

fn print_error(kind: &str, message: String, code: i32) {
    let report = ErrorReport {
        format_version: ARTIFACT_FORMAT_VERSION,
        error: ErrorBody { kind, message },
        exit_code: code,
    };
    eprintln!(
        "{}",
        serde_json::to_string(&report).unwrap_or_else(|_| "{\"error\":{}}".to_string())
    );
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var("SOSREP_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::InvalidParameter(format!("SOSREP_THREADS must be a positive integer, got {value:?}")))?;
    // A pool built earlier in the same process keeps its size.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            eprint!("{e}");
            print_error("usage", e.kind().to_string(), EXIT_USAGE);
            return EXIT_USAGE;
        }
    };
    match configure_threads().and_then(|()| execute(&cli.command)) {
        Ok(()) => 0,
        Err(e) => {
            let code = exit_code(&e);
            print_error(e.kind(), e.to_string(), code);
            code
        }
    }
}

/// Runs an already parsed command.
pub fn execute(command: &Command) -> Result<()> {
    let config = RunConfig {
        tool_version: env!("CARGO_PKG_VERSION"),
        command,
    };
    match command {
        Command::Fit(a) => cmd_fit(a, &config),
        Command::Score(a) => cmd_score(a, &config),
        Command::Tune(a) => cmd_tune(a, &config),
        Command::TwoBlock(a) => cmd_two_block(a, &config),
        Command::Experiment(a) => cmd_experiment(a, &config),
    }
}

fn write_artifact<T: Serialize>(path: &Path, config: &RunConfig, result: T) -> Result<()> {
    write_json_atomic(
        path,
        &Artifact {
            format_version: ARTIFACT_FORMAT_VERSION,
            run_config: config,
            result,
        },
    )
}

#[derive(Serialize)]
struct TableMeta<'a> {
    table: &'a str,
    columns: &'a [&'a str],
}

/// Writes a CSV table and its `<path>.meta.json` sidecar.
fn write_table(path: &Path, config: &RunConfig, columns: &[&str], body: &str) -> Result<()> {
    let mut text = columns.join(",");
    text.push('\n');
    text.push_str(body);
    write_atomic(path, text.as_bytes())?;
    let mut meta = path.as_os_str().to_owned();
    meta.push(".meta.json");
    let table = path
        .file_name()
        .map_or_else(String::new, |s| s.to_string_lossy().into_owned());
    write_artifact(
        Path::new(&meta),
        config,
        TableMeta {
            table: &table,
            columns,
        },
    )
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn positive(name: &str, v: f64) -> Result<f64> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(Error::InvalidParameter(format!("{name} must be positive and finite, got {v}")))
    }
}

impl KernelArgs {
    fn spec(&self, d: usize, seed: u64) -> Result<KernelSpec> {
        match self.kernel {
            KernelChoice::Sdo => {
                let a = positive("a", self.a)?;
                let params = match self.m {
                    Some(m) => SdoParams::new(a, m, d)?,
                    None => SdoParams::with_default_order(a, d)?,
                };
                if self.n_z == 0 {
                    return Err(Error::InvalidParameter("n-z must be positive".into()));
                }
                Ok(KernelSpec::Sdo(FrequencySpec {
                    scheme: self.sampling_scheme(),
                    normalization: if self.exact_normalization {
                        Normalization::Exact
                    } else {
                        Normalization::AsSampled
                    },
                    ..FrequencySpec::new(params, self.n_z, seed)
                }))
            }
            KernelChoice::Gaussian | KernelChoice::Laplacian => {
                let family = if matches!(self.kernel, KernelChoice::Gaussian) {
                    KernelFamily::Gaussian
                } else {
                    KernelFamily::Laplacian
                };
                Ok(KernelSpec::ClosedForm(ClosedFormKernel::new(family, positive("sigma", self.sigma)?, d)?))
            }
        }
    }

    fn sampling_scheme(&self) -> SamplingScheme {
        match self.scheme {
            SchemeChoice::Iid => SamplingScheme::Iid,
            SchemeChoice::Stratified => SamplingScheme::Stratified,
        }
    }
}

impl SolverArgs {
    fn options(&self, seed: u64) -> Result<SolverOptions> {
        let opts = SolverOptions {
            method: match self.method {
                MethodChoice::Natural => GradientMethod::Natural,
                MethodChoice::Standard => GradientMethod::Standard,
            },
            lr: self.lr,
            n_iters: self.n_iters,
            seed,
            grad_tol: self.grad_tol,
            ..Default::default()
        };
        opts.validate()?;
        Ok(opts)
    }
}

impl FdArgs {
    fn options(&self, seed: u64) -> Result<FdOptions> {
        let opts = FdOptions {
            n_fd_iters: self.n_fd_iters,
            h: self.h,
            probe: match self.probe {
                ProbeChoice::Rademacher => Probe::Rademacher,
                ProbeChoice::ThreePoint => Probe::ThreePoint,
            },
            seed,
        };
        opts.validate()?;
        Ok(opts)
    }
}

impl GridArgs {
    fn candidates(&self) -> Result<Vec<f64>> {
        let grid = match &self.a_grid {
            Some(g) => {
                let mut g = g.clone();
                for &v in &g {
                    positive("grid value", v)?;
                }
                g.sort_by(|a, b| b.total_cmp(a));
                if g.windows(2).any(|w| w[0] == w[1]) {
                    return Err(Error::InvalidParameter("grid values must be distinct".into()));
                }
                g
            }
            None => log_grid_descending(self.a_min, self.a_max, self.a_points)?,
        };
        Ok(grid)
    }
}

#[derive(Serialize)]
struct FitMetrics<'a> {
    objective: f64,
    rkhs_norm_sq: f64,
    iterations: usize,
    converged: bool,
    grad_norm: f64,
    n_train: usize,
    dim: usize,
    model_path: &'a Path,
    warnings: Vec<String>,
}

fn cmd_fit(args: &FitArgs, config: &RunConfig) -> Result<()> {
    let ds = load_csv(&args.train, Some(&args.label_column))?;
    let kernel = args.kernel.spec(ds.dim(), args.seed)?;
    let solver = args.solver.options(args.seed)?;
    let model = fit_model(ds.x.view(), &kernel, &solver)?;
    model.save_with_config(&args.out, config)?;
    let outcome = model.outcome();
    let mut warnings = Vec::new();
    if outcome.clamp_warnings > 0 {
        warnings.push(format!(
            "{} iterations clamped a near-zero density",
            outcome.clamp_warnings
        ));
    }
    if !outcome.converged {
        warnings.push(format!(
            "gradient sup-norm {:e} above tolerance after {} iterations",
            outcome.grad_norm, outcome.iterations
        ));
    }
    let metrics = FitMetrics {
        objective: outcome.objective,
        rkhs_norm_sq: outcome.rkhs_norm_sq,
        iterations: outcome.iterations,
        converged: outcome.converged,
        grad_norm: outcome.grad_norm,
        n_train: ds.len(),
        dim: ds.dim(),
        model_path: &args.out,
        warnings,
    };
    let path = args
        .metrics
        .clone()
        .unwrap_or_else(|| with_suffix(&args.out, ".metrics.json"));
    write_artifact(&path, config, metrics)
}

fn cmd_score(args: &ScoreArgs, config: &RunConfig) -> Result<()> {
    let model = FittedModel::load(&args.model)?;
    let ds = load_csv(&args.query, Some(&args.label_column))?;
    let expected = model.x_train().ncols();
    if ds.dim() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            got: ds.dim(),
        });
    }
    let density = if ds.is_empty() {
        ndarray::Array1::zeros(0)
    } else {
        model.evaluate_density(ds.x.view())?
    };
    let mut body = String::new();
    for (i, v) in density.iter().enumerate() {
        let _ = writeln!(body, "{i},{},{}", fmt_float(*v), fmt_float(-v));
    }
    write_table(&args.out, config, &["row", "pre_density", "anomaly_score"], &body)
}

#[derive(Serialize)]
struct TuneReport<'a> {
    estimator: EstimatorChoice,
    kernel: KernelSpec,
    candidates: &'a [f64],
    selected: f64,
    selected_index: usize,
    stable: bool,
    evaluations: usize,
    profile: &'a FdProfile,
    profile_path: &'a Path,
    warnings: &'a [String],
}

fn cmd_tune(args: &TuneArgs, config: &RunConfig) -> Result<()> {
    let train = load_csv(&args.train, Some(&args.label_column))?;
    let test = load_csv(&args.test, Some(&args.label_column))?;
    if train.dim() != test.dim() {
        return Err(Error::DimensionMismatch {
            expected: train.dim(),
            got: test.dim(),
        });
    }
    let candidates = args.grid.candidates()?;
    if candidates.len() < 7 {
        return Err(Error::ProfileTooShort {
            needed: 7,
            got: candidates.len(),
        });
    }
    let kernel = args.kernel.spec(train.dim(), args.seed)?;
    let solver = args.solver.options(args.seed)?;
    let fd = args.fd.options(args.seed)?;
    let outcome = match args.estimator {
        EstimatorChoice::Sosrep => tune_sosrep(train.x.view(), test.x.view(), &kernel, &candidates, &solver, &fd)?,
        EstimatorChoice::Kde => tune_kde(train.x.view(), test.x.view(), &kernel, &candidates, &fd)?,
    };
    let profile_path = args
        .profile
        .clone()
        .unwrap_or_else(|| with_suffix(&args.out, ".profile.csv"));
    let csv = outcome.profile.to_csv()?;
    let (header, body) = csv.split_once('\n').unwrap_or((&csv, ""));
    let columns: Vec<&str> = header.split(',').collect();
    write_table(&profile_path, config, &columns, body)?;
    write_artifact(
        &args.out,
        config,
        TuneReport {
            estimator: args.estimator,
            kernel: kernel.with_scale_parameter(outcome.selected)?,
            candidates: &candidates,
            selected: outcome.selected,
            selected_index: outcome.selected_index,
            stable: outcome.stable,
            evaluations: outcome.evaluations,
            profile: &outcome.profile,
            profile_path: &profile_path,
            warnings: &outcome.warnings,
        },
    )
}

fn cmd_two_block(args: &TwoBlockArgs, config: &RunConfig) -> Result<()> {
    let spec = BlockSpec::new(
        args.n,
        args.m_size.unwrap_or(args.n),
        args.gamma,
        args.gamma_prime,
        args.beta,
    )?;
    let opts = SolverOptions {
        lr: args.lr,
        n_iters: args.n_iters,
        grad_tol: args.grad_tol,
        seed: args.seed,
        ..Default::default()
    };
    opts.validate()?;
    let report = verify_against_solver(&spec, &opts)?;
    match &args.out {
        Some(path) => write_artifact(path, config, report),
        None => {
            let text = serde_json::to_string_pretty(&Artifact {
                format_version: ARTIFACT_FORMAT_VERSION,
                run_config: config,
                result: report,
            })?;
            use std::io::Write;
            match writeln!(std::io::stdout().lock(), "{text}") {
                Err(source) if source.kind() != std::io::ErrorKind::BrokenPipe => Err(Error::Io {
                    path: "<stdout>".into(),
                    source,
                }),
                _ => Ok(()),
            }
        }
    }
}

fn experiment_datasets(args: &ExperimentArgs) -> Result<Vec<Dataset>> {
    let mut out = Vec::new();
    for p in &args.data {
        out.push(load_csv(p, Some(&args.label_column))?);
    }
    let seed = args.seeds.first().copied().unwrap_or(0);
    match args.synthetic {
        Some(SyntheticChoice::Mixture) => out.push(gaussian_mixture_with_outliers(args.synthetic_n, 0.05, seed)?),
        Some(SyntheticChoice::TwoClusters) => {
            let half = args.synthetic_n / 2;
            out.push(two_clusters(half, args.synthetic_n - half, seed)?);
        }
        None => {}
    }
    if out.is_empty() {
        return Err(Error::InvalidParameter(
            "this protocol needs --data or --synthetic".into(),
        ));
    }
    Ok(out)
}

fn ad_config(args: &ExperimentArgs) -> Result<AdConfig> {
    let a_grid = args.grid.candidates()?;
    let sigma_grid = log_grid_descending(args.sigma_min, args.sigma_max, args.sigma_points)?;
    for g in [&a_grid, &sigma_grid] {
        if g.len() < 7 {
            return Err(Error::ProfileTooShort { needed: 7, got: g.len() });
        }
    }
    if !(args.train_frac > 0.0 && args.train_frac < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "train-frac must lie in (0, 1), got {}",
            args.train_frac
        )));
    }
    Ok(AdConfig {
        n_features: args.kernel.n_z,
        m: args.kernel.m,
        scheme: args.kernel.sampling_scheme(),
        a_grid,
        sigma_grid,
        solver: args.solver.options(0)?,
        fd: args.fd.options(0)?,
        train_frac: args.train_frac,
    })
}

fn methods(args: &ExperimentArgs) -> Result<Vec<AdMethod>> {
    match &args.methods {
        None => Ok(AdMethod::ALL.to_vec()),
        Some(list) => list.iter().map(|s| AdMethod::parse(s.trim())).collect(),
    }
}

fn safe_name(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn cmd_experiment(args: &ExperimentArgs, config: &RunConfig) -> Result<()> {
    if args.seeds.is_empty() {
        return Err(Error::EmptyInput("seed list"));
    }
    match args.protocol {
        Protocol::Ad => experiment_ad(args, config),
        Protocol::Duplicates => experiment_duplicates(args, config),
        Protocol::Negfrac => experiment_negfrac(args, config),
        Protocol::Consistency => experiment_consistency(args, config),
    }
}

fn experiment_ad(args: &ExperimentArgs, config: &RunConfig) -> Result<()> {
    let datasets = experiment_datasets(args)?;
    let methods = methods(args)?;
    let cfg = ad_config(args)?;
    ensure_dir(&args.out_dir)?;
    let mut values = vec![vec![None; datasets.len()]; methods.len()];
    for (di, ds) in datasets.iter().enumerate() {
        for (mi, &method) in methods.iter().enumerate() {
            let report = run_ad(ds, method, &args.seeds, &cfg)?;
            values[mi][di] = Some(report.mean_auc);
            let path = args
                .out_dir
                .join(format!("ad_{}_{}.json", safe_name(&ds.name), method.name()));
            write_artifact(&path, config, &report)?;
        }
    }
    let table = AucTable {
        methods: methods.iter().map(|m| m.name().to_string()).collect(),
        datasets: datasets.iter().map(|d| d.name.clone()).collect(),
        values,
    };
    let mut columns = vec!["dataset"];
    columns.extend(methods.iter().map(|m| m.name()));
    let mut body = String::new();
    for (di, name) in table.datasets.iter().enumerate() {
        body.push_str(name);
        for row in &table.values {
            body.push(',');
            body.push_str(&row[di].map_or_else(String::new, fmt_float));
        }
        body.push('\n');
    }
    write_table(&args.out_dir.join("auc_table.csv"), config, &columns, &body)?;
    let ranks = rank_aggregate(&table)?;
    let mut body = String::new();
    for (mi, m) in ranks.methods.iter().enumerate() {
        body.push_str(m);
        for r in &ranks.ranks[mi] {
            body.push(',');
            body.push_str(&fmt_float(*r));
        }
        body.push(',');
        body.push_str(&fmt_float(ranks.mean_ranks[mi]));
        body.push('\n');
    }
    let mut columns = vec!["method"];
    columns.extend(table.datasets.iter().map(String::as_str));
    columns.push("mean_rank");
    write_table(&args.out_dir.join("rank_table.csv"), config, &columns, &body)
}

fn experiment_duplicates(args: &ExperimentArgs, config: &RunConfig) -> Result<()> {
    let datasets = experiment_datasets(args)?;
    let methods = methods(args)?;
    let cfg = ad_config(args)?;
    if args.ks.is_empty() {
        return Err(Error::EmptyInput("duplication factors"));
    }
    ensure_dir(&args.out_dir)?;
    let mut body = String::new();
    for ds in &datasets {
        for &method in &methods {
            let reports: Vec<ExperimentReport> = duplicates_experiment(ds, method, &args.ks, &args.seeds, &cfg)?;
            for r in &reports {
                let path = args.out_dir.join(format!(
                    "duplicates_{}_{}_k{}.json",
                    safe_name(&ds.name),
                    method.name(),
                    r.duplication
                ));
                write_artifact(&path, config, r)?;
                let _ = writeln!(
                    body,
                    "{},{},{},{}",
                    ds.name,
                    method.name(),
                    r.duplication,
                    fmt_float(r.mean_auc)
                );
            }
        }
    }
    write_table(
        &args.out_dir.join("duplicates_auc.csv"),
        config,
        &["dataset", "method", "k", "mean_auc"],
        &body,
    )
}

fn experiment_negfrac(args: &ExperimentArgs, config: &RunConfig) -> Result<()> {
    let datasets = experiment_datasets(args)?;
    ensure_dir(&args.out_dir)?;
    let seed = args.seeds[0];
    let cfg = NegFracConfig {
        n_init: args.n_init,
        n_iters: args.solver.n_iters,
        lr: args.negfrac_lr,
        seed,
    };
    let mut body = String::new();
    for ds in &datasets {
        let kernel = args.kernel.spec(ds.dim(), seed)?;
        let report = negative_fraction_experiment(&ds.name, ds.x.view(), &kernel, &cfg)?;
        let path = args.out_dir.join(format!("negfrac_{}.json", safe_name(&ds.name)));
        write_artifact(&path, config, &report)?;
        for s in [&report.natural, &report.standard] {
            let method = match s.method {
                GradientMethod::Natural => "natural",
                GradientMethod::Standard => "standard",
            };
            let _ = writeln!(
                body,
                "{},{method},{},{},{}",
                ds.name,
                fmt_float(report.initial_worst_mean),
                fmt_float(s.worst_mean),
                s.divergences
            );
        }
    }
    write_table(
        &args.out_dir.join("negfrac.csv"),
        config,
        &["dataset", "method", "initial_worst5_mean", "final_worst5_mean", "divergences"],
        &body,
    )
}

fn experiment_consistency(args: &ExperimentArgs, config: &RunConfig) -> Result<()> {
    if args.sizes.is_empty() {
        return Err(Error::EmptyInput("sample sizes"));
    }
    ensure_dir(&args.out_dir)?;
    let cfg = ConsistencyConfig {
        sample_sizes: args.sizes.clone(),
        repetitions: args.repetitions,
        n_features: args.kernel.n_z,
        scheme: args.kernel.sampling_scheme(),
        solver: args.solver.options(0)?,
        seed: args.seeds[0],
        ..Default::default()
    };
    let report = consistency_experiment(&cfg)?;
    write_artifact(&args.out_dir.join("consistency.json"), config, &report)?;
    let mut body = String::new();
    for row in &report.rows {
        for (rep, e) in row.errors.iter().enumerate() {
            let _ = writeln!(body, "{},{},{rep},{}", row.n, fmt_float(row.a), fmt_float(*e));
        }
    }
    write_table(
        &args.out_dir.join("consistency.csv"),
        config,
        &["n", "a", "repetition", "l2_error"],
        &body,
    )
}

/// Renders a matrix as CSV text under the given header.
pub fn matrix_to_csv(x: &Array2<f64>, header: &[&str]) -> String {
    let mut s = header.join(",");
    s.push('\n');
    for row in x.rows() {
        let cells: Vec<String> = row.iter().map(|v| fmt_float(*v)).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_protocol_is_usage_error() {
        assert_eq!(run(["sosrep", "experiment", "bogus", "--out-dir", "x"]), EXIT_USAGE);
    }

    #[test]
    fn help_exits_zero() {
        assert_eq!(run(["sosrep", "--help"]), 0);
    }

    #[test]
    fn exit_codes_follow_error_kind() {
        assert_eq!(exit_code(&Error::Diverged { iteration: 3 }), EXIT_NUMERICAL);
        assert_eq!(exit_code(&Error::SingleClass), EXIT_USAGE);
        assert_eq!(
            exit_code(&Error::io("x", std::io::Error::other("missing"))),
            EXIT_USAGE
        );
    }

    #[test]
    fn explicit_grid_is_sorted_descending() {
        let g = GridArgs {
            a_grid: Some(vec![0.1, 10.0, 1.0]),
            a_min: 1e-6,
            a_max: 1e2,
            a_points: 25,
        };
        assert_eq!(g.candidates().unwrap(), vec![10.0, 1.0, 0.1]);
    }
}
