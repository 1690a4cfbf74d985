//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 on usage errors (bad flags, missing or
//! malformed config), 2 on runtime failures.

use std::ffi::OsString;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;

use crate::bench::{
    emit_table, run_experiment, write_replication_plot, DictionarySpec, Experiment, ExperimentConfig, TableFormat,
};
use crate::diagnostics::{check_theorem1_conditions, EigenMode, Theorem1Options};
use crate::dictionary::Entries;
use crate::error::{Error, Result};
use crate::lasso::{weighted_lasso, SolverOptions};
use crate::precondition::{compute_inverse_images, compute_weights, PreconditionedSystem, DEFAULT_TAU};
use crate::problem::{build_convolution_operator, evaluate_test_function, noise_scale, Grid, InverseProblem, Kernel, TestFunction};
use crate::select::{lasso_cv, LassoCvOptions};
use crate::wavelet::{estimate_noise_scale, Family};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

/// Environment variable giving the default worker count.
pub const THREADS_ENV: &str = "ILLPOSED_THREADS";

#[derive(Debug, Parser)]
#[command(name = "illposed", version, about = "Weighted-Lasso deconvolution over overcomplete dictionaries")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a Monte Carlo experiment and print or write its table.
    Bench(BenchArgs),
    /// Check restricted eigenvalues and the random-dictionary conditions.
    Diagnose(DiagnoseArgs),
    /// Deconvolve one data set given as a CSV with columns x, y.
    Solve(SolveArgs),
    /// Write a dictionary to CSV.
    Dict(DictArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Markdown,
}

impl From<FormatArg> for TableFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => TableFormat::Csv,
            FormatArg::Markdown => TableFormat::Markdown,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FnArg {
    F1,
    F2,
    F3,
}

impl From<FnArg> for TestFunction {
    fn from(f: FnArg) -> Self {
        match f {
            FnArg::F1 => TestFunction::F1,
            FnArg::F2 => TestFunction::F2,
            FnArg::F3 => TestFunction::F3,
        }
    }
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// JSON experiment configuration; flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    snr: Option<f64>,
    #[arg(long = "fn", value_enum)]
    func: Option<FnArg>,
    #[arg(long)]
    n: Option<usize>,
    /// Table destination; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Plot data (truth and estimates) of the first replication.
    #[arg(long)]
    plot: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, value_enum, default_value = "csv")]
    format: FormatArg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DictKind {
    Laguerre,
    Rows,
    Cols,
    Structured,
}

#[derive(Debug, Args)]
struct DictSpecArgs {
    #[arg(long, value_enum, default_value = "laguerre")]
    kind: DictKind,
    #[arg(long, default_value_t = 32)]
    n: usize,
    /// Number of atoms (random and structured dictionaries).
    #[arg(long, default_value_t = 64)]
    p: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long = "T", default_value_t = 4.0)]
    t_max: f64,
    /// Frame size `m` of the structured construction.
    #[arg(long)]
    m: Option<usize>,
    /// Frame constant `k` of the structured construction.
    #[arg(long, default_value_t = 1.0)]
    k: f64,
    /// Rademacher instead of Gaussian entries.
    #[arg(long)]
    rademacher: bool,
}

impl DictSpecArgs {
    fn spec(&self) -> DictionarySpec {
        let entries = if self.rademacher { Entries::Rademacher } else { Entries::Gaussian };
        match self.kind {
            DictKind::Laguerre => DictionarySpec::default(),
            DictKind::Rows => DictionarySpec::RandomRows {
                p: self.p,
                seed: self.seed,
                entries,
            },
            DictKind::Cols => DictionarySpec::RandomCols {
                p: self.p,
                seed: self.seed,
                entries,
            },
            DictKind::Structured => DictionarySpec::Structured {
                p: self.p,
                m: self.m.unwrap_or(2 * self.n),
                k: self.k,
                seed: self.seed,
            },
        }
    }
}

#[derive(Debug, Args)]
struct DiagnoseArgs {
    #[command(flatten)]
    dict: DictSpecArgs,
    /// Sparsity level; restricted eigenvalues are taken at order 2s.
    #[arg(long, default_value_t = 4)]
    s: usize,
    #[arg(long, default_value_t = 0.5)]
    delta: f64,
    /// Defaults to the smallest admissible value 4/(1-delta)^2.
    #[arg(long = "K0")]
    k0: Option<f64>,
    #[arg(long, default_value_t = 3.0)]
    mu: f64,
    #[arg(long = "C1", default_value_t = 1.0)]
    c1: f64,
    /// Enumerate all supports instead of probing random ones.
    #[arg(long)]
    exhaustive: bool,
    #[arg(long, default_value_t = 2000)]
    probes: usize,
    /// Noise draws for the sparsity conditions.
    #[arg(long, default_value_t = 20)]
    reps: usize,
    #[arg(long = "fn", value_enum, default_value = "f1")]
    func: FnArg,
    #[arg(long, default_value_t = 3.0)]
    snr: f64,
    #[arg(long, default_value_t = DEFAULT_TAU)]
    tau: f64,
    /// Report destination (JSON); standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Writes the weights ν and α₀ as CSV.
    #[arg(long)]
    weights_out: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Args)]
struct SolveArgs {
    /// CSV with columns x and y (and optionally f_true).
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "exp")]
    kernel: String,
    /// Right end of the grid; must match the last abscissa of the input.
    #[arg(long = "T")]
    t_max: Option<f64>,
    /// Noise level σ; estimated from the finest wavelet details when absent.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long = "N_grid", default_value_t = 200)]
    n_grid: usize,
    /// Output CSV; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DictArgs {
    #[command(flatten)]
    dict: DictSpecArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Runs the command line `argv` (program name first) and returns the exit code.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    match run(cli.command) {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

fn usage(e: Error) -> Failure {
    Failure::Usage(e.to_string())
}

fn threads(flag: Option<usize>) -> std::result::Result<Option<usize>, Failure> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Failure::Usage(format!("{THREADS_ENV} must be a nonnegative integer, got '{v}'"))),
        _ => Ok(None),
    }
}

fn in_pool<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> std::result::Result<R, Failure> {
    match threads {
        Some(t) if t > 0 => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| Failure::Runtime(Error::invalid(format!("cannot start worker pool: {e}"))))?;
            Ok(pool.install(f))
        }
        _ => Ok(f()),
    }
}

fn write_output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::file(p, e)),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Error::file("<stdout>", e)),
    }
}

fn run(cmd: Command) -> std::result::Result<(), Failure> {
    match cmd {
        Command::Bench(a) => bench(a),
        Command::Diagnose(a) => diagnose(a),
        Command::Solve(a) => solve(a),
        Command::Dict(a) => dict(a),
    }
}

fn bench(a: BenchArgs) -> std::result::Result<(), Failure> {
    let mut cfg = match &a.config {
        Some(path) => ExperimentConfig::load(path).map_err(usage)?,
        None => {
            let (Some(f), Some(n), Some(snr)) = (a.func, a.n, a.snr) else {
                return Err(Failure::Usage("bench needs --config or all of --fn, --n and --snr".into()));
            };
            ExperimentConfig::new(f.into(), n, snr)
        }
    };
    if let Some(s) = a.seed {
        cfg.master_seed = s;
    }
    if let Some(r) = a.reps {
        cfg.replications = r;
    }
    if let Some(s) = a.snr {
        cfg.snr = s;
        cfg.sigma = None;
    }
    if let Some(f) = a.func {
        cfg.test_function = f.into();
    }
    if let Some(n) = a.n {
        cfg.n = n;
    }
    if let Some(o) = a.out {
        cfg.output = Some(o);
    }
    if let Some(p) = a.plot {
        cfg.plot_output = Some(p);
    }
    cfg.validate().map_err(usage)?;
    let t = threads(a.threads)?;
    let plot = cfg.plot_output.clone();
    let out = cfg.output.clone();
    let report = in_pool(t, move || -> Result<_> {
        if let Some(p) = &plot {
            let exp = Experiment::new(cfg.clone())?;
            write_replication_plot(&exp, 0, p)?;
        }
        run_experiment(cfg)
    })??;
    write_output(out.as_deref(), &emit_table(&report, a.format.into()))?;
    Ok(())
}

fn diagnose(a: DiagnoseArgs) -> std::result::Result<(), Failure> {
    let grid = Grid::new(a.dict.t_max, a.dict.n).map_err(usage)?;
    let phi = a.dict.spec().build(&grid).map_err(usage)?;
    let k0 = a.k0.unwrap_or_else(|| crate::diagnostics::min_k0(a.delta));
    let opts = Theorem1Options {
        s: a.s,
        delta: a.delta,
        k0,
        mu: a.mu,
        c1: a.c1,
        replications: a.reps,
        seed: a.dict.seed,
        eigen_mode: if a.exhaustive {
            EigenMode::Exhaustive
        } else {
            EigenMode::Probe {
                n_probes: a.probes,
                seed: a.dict.seed,
            }
        },
        kappa_probes: 64,
    };
    let t = threads(a.threads)?;
    let func: TestFunction = a.func.into();
    let snr = a.snr;
    let tau = a.tau;
    let weights_out = a.weights_out.clone();
    let report = in_pool(t, move || -> Result<_> {
        let q = build_convolution_operator(|x| Kernel::Exp.eval(x), &grid);
        let f = evaluate_test_function(func, &grid);
        let psi = compute_inverse_images(&q, &phi)?;
        let nu = compute_weights(&psi)?;
        let sigma = crate::problem::sigma_from_snr(&(&q * &f), snr, grid.t_max())?;
        if let Some(path) = &weights_out {
            let a0 = crate::precondition::alpha0(sigma, &grid, phi.p(), tau)?;
            write_weights(path, &nu, a0)?;
        }
        // Lasso at the universal penalty α₀ for each noise draw
        let fit = |seed: u64| {
            let problem = InverseProblem::with_sigma(q.clone(), f.clone(), sigma, grid.clone(), seed)?;
            let sys = PreconditionedSystem::from_inverse_images(psi.clone(), &q, &phi, &problem.y, &grid, sigma, tau)?;
            weighted_lasso(&sys.gram, &sys.b, &sys.nu, sys.alpha0, &DVector::zeros(phi.p()), SolverOptions::default())
        };
        check_theorem1_conditions(&phi, &nu, &f, &opts, fit)
    })?
    .map_err(|e| match e {
        Error::InvalidArgument(_) | Error::Capacity { .. } => usage(e),
        other => Failure::Runtime(other),
    })?;
    write_output(a.out.as_deref(), &(report.to_json()? + "\n"))?;
    Ok(())
}

fn write_weights(path: &Path, nu: &DVector<f64>, alpha0: f64) -> Result<()> {
    let mut text = String::from("atom,nu,alpha0\n");
    for (j, v) in nu.iter().enumerate() {
        text.push_str(&format!("{j},{v:?},{alpha0:?}\n"));
    }
    std::fs::write(path, text).map_err(|e| Error::file(path, e))
}

fn solve(a: SolveArgs) -> std::result::Result<(), Failure> {
    let kernel = Kernel::from_id(&a.kernel).map_err(usage)?;
    if !a.input.exists() {
        return Err(Failure::Usage(format!("input file not found: {}", a.input.display())));
    }
    let mut problem = InverseProblem::read_csv(&a.input, kernel, a.sigma.unwrap_or(0.0))?;
    if let Some(t) = a.t_max {
        if (t - problem.grid.t_max()).abs() > 1e-9 * t.abs().max(1.0) {
            return Err(Failure::Usage(format!(
                "--T {t} does not match the last abscissa {} of the input",
                problem.grid.t_max()
            )));
        }
    }
    let sigma_eff = match a.sigma {
        Some(s) => noise_scale(s, &problem.grid),
        None => {
            let est = estimate_noise_scale(problem.y.as_slice(), Family::Db8)?;
            problem.sigma = est / problem.grid.step().sqrt();
            est
        }
    };
    let phi = DictionarySpec::default().build(&problem.grid)?;
    let opts = LassoCvOptions {
        grid_size: a.n_grid,
        ..LassoCvOptions::default()
    };
    let res = lasso_cv(&problem, &phi, None, sigma_eff, &opts)?;
    let mut text = String::from(if problem.f_true.is_some() { "x,f_hat,f_true\n" } else { "x,f_hat\n" });
    for (i, x) in problem.grid.points().iter().enumerate() {
        match &problem.f_true {
            Some(f) => text.push_str(&format!("{x:?},{:?},{:?}\n", res.f_hat[i], f[i])),
            None => text.push_str(&format!("{x:?},{:?}\n", res.f_hat[i])),
        }
    }
    write_output(a.out.as_deref(), &text)?;
    Ok(())
}

fn dict(a: DictArgs) -> std::result::Result<(), Failure> {
    let grid = Grid::new(a.dict.t_max, a.dict.n).map_err(usage)?;
    let phi = a.dict.spec().build(&grid).map_err(usage)?;
    match a.out {
        Some(p) => phi.write_csv(&p)?,
        None => phi.write_csv_to(std::io::stdout().lock())?,
    }
    Ok(())
}
