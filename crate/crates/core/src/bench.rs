//! Monte Carlo harness for the deconvolution experiments.
//!
//! A run is a pure function of its [`ExperimentConfig`]: replication `r` draws
//! its noise from the substream `derive_seed(master_seed, r)` and results are
//! aggregated in replication order, so the report does not depend on the
//! number of worker threads.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{default_k_range, oracle_select, oracle_select_over_scales, Method, BASELINE_SCALES};
use crate::dictionary::{
    build_laguerre_dictionary, build_random_dictionary_with, build_structured_dictionary, build_tight_frame,
    default_laguerre_parameters, Dictionary, Entries, RandomKind,
};
use crate::error::{Error, Result};
use crate::precondition::{compute_inverse_images, DEFAULT_TAU};
use crate::problem::{
    build_convolution_operator, csv_to_file, evaluate_test_function, noise_scale, rms_error, sigma_from_snr, Grid,
    InverseProblem, Kernel, TestFunction,
};
use crate::rng;
use crate::select::{estimate_f, lasso_cv, Comparison, LassoCvOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// Weighted Lasso with the pilot-based path selection.
    LassoCv,
    /// Truncated SVD with the level chosen against the truth.
    SvdOracle,
    /// Laguerre least squares at `laguerre_b`, `K` chosen against the truth.
    LaguerreOracle,
    /// Best point of the Lasso path against the truth.
    LassoOracle,
    /// Laguerre least squares with both `K` and the scale chosen against the truth.
    LaguerreOracleBgrid,
}

impl Estimator {
    pub fn id(self) -> &'static str {
        match self {
            Estimator::LassoCv => "lasso_cv",
            Estimator::SvdOracle => "svd_oracle",
            Estimator::LaguerreOracle => "laguerre_oracle",
            Estimator::LassoOracle => "lasso_oracle",
            Estimator::LaguerreOracleBgrid => "laguerre_oracle_bgrid",
        }
    }

    pub fn from_id(id: &str) -> Result<Self> {
        [
            Estimator::LassoCv,
            Estimator::SvdOracle,
            Estimator::LaguerreOracle,
            Estimator::LassoOracle,
            Estimator::LaguerreOracleBgrid,
        ]
        .into_iter()
        .find(|e| e.id() == id)
        .ok_or_else(|| Error::invalid(format!("unknown estimator '{id}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DictionarySpec {
    /// Scale-major Laguerre dictionary; omitted lists use the default 4 × 16 layout.
    Laguerre {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        degrees: Option<Vec<usize>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        scales: Option<Vec<f64>>,
    },
    RandomRows {
        p: usize,
        seed: u64,
        #[serde(default = "gaussian")]
        entries: Entries,
    },
    RandomCols {
        p: usize,
        seed: u64,
        #[serde(default = "gaussian")]
        entries: Entries,
    },
    Structured { p: usize, m: usize, k: f64, seed: u64 },
}

fn gaussian() -> Entries {
    Entries::Gaussian
}

impl Default for DictionarySpec {
    fn default() -> Self {
        DictionarySpec::Laguerre {
            degrees: None,
            scales: None,
        }
    }
}

impl DictionarySpec {
    pub fn build(&self, grid: &Grid) -> Result<Dictionary> {
        let n = grid.len();
        match self {
            DictionarySpec::Laguerre { degrees, scales } => {
                let (d0, s0) = default_laguerre_parameters();
                build_laguerre_dictionary(grid, degrees.as_deref().unwrap_or(&d0), scales.as_deref().unwrap_or(&s0))
            }
            DictionarySpec::RandomRows { p, seed, entries } => {
                build_random_dictionary_with(RandomKind::Rows, *entries, n, *p, *seed)
            }
            DictionarySpec::RandomCols { p, seed, entries } => {
                build_random_dictionary_with(RandomKind::Cols, *entries, n, *p, *seed)
            }
            DictionarySpec::Structured { p, m, k, seed } => {
                let frame = build_tight_frame(n, *m, *k)?;
                build_structured_dictionary(&frame, *p, *seed)
            }
        }
    }
}

fn default_t() -> f64 {
    4.0
}
fn default_grid() -> usize {
    200
}
fn default_reps() -> usize {
    100
}
fn default_tau() -> f64 {
    DEFAULT_TAU
}
fn default_b() -> f64 {
    1.0
}
fn default_kernel() -> Kernel {
    Kernel::Exp
}
fn default_estimators() -> Vec<Estimator> {
    vec![Estimator::LaguerreOracle, Estimator::LassoCv, Estimator::SvdOracle]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub test_function: TestFunction,
    pub n: usize,
    pub snr: f64,
    /// Noise level `σ`; when present it overrides `snr`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(rename = "T", default = "default_t")]
    pub t_max: f64,
    #[serde(default = "default_kernel")]
    pub kernel: Kernel,
    #[serde(default)]
    pub dictionary: DictionarySpec,
    #[serde(rename = "N_grid", default = "default_grid")]
    pub n_grid: usize,
    #[serde(default = "default_reps")]
    pub replications: usize,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<Estimator>,
    #[serde(default = "default_b")]
    pub laguerre_b: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_range: Option<Vec<usize>>,
    #[serde(default)]
    pub comparison: Comparison,
    /// Keep per-replication errors in the report.
    #[serde(default)]
    pub keep_replications: bool,
    /// Where the table is written.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    /// Where plot data for the first replication is written.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plot_output: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Defaults for one benchmark cell.
    pub fn new(test_function: TestFunction, n: usize, snr: f64) -> Self {
        ExperimentConfig {
            test_function,
            n,
            snr,
            sigma: None,
            t_max: default_t(),
            kernel: default_kernel(),
            dictionary: DictionarySpec::default(),
            n_grid: default_grid(),
            replications: default_reps(),
            tau: default_tau(),
            master_seed: 0,
            estimators: default_estimators(),
            laguerre_b: default_b(),
            k_range: None,
            comparison: Comparison::Image,
            keep_replications: false,
            output: None,
            plot_output: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::invalid("replications must be at least 1"));
        }
        if self.n < 2 {
            return Err(Error::invalid(format!("n must be at least 2, got {}", self.n)));
        }
        let needs_pilot = self.estimators.contains(&Estimator::LassoCv);
        if needs_pilot && (self.n < 4 || !self.n.is_power_of_two()) {
            return Err(Error::invalid(format!("lasso_cv needs n to be a power of two, got {}", self.n)));
        }
        if self.sigma.is_none() && !(self.snr > 0.0) {
            return Err(Error::invalid(format!("snr must be positive, got {}", self.snr)));
        }
        if let Some(s) = self.sigma {
            if !(s >= 0.0) {
                return Err(Error::invalid(format!("sigma must be nonnegative, got {s}")));
            }
        }
        if self.n_grid < 2 {
            return Err(Error::invalid(format!("N_grid must be at least 2, got {}", self.n_grid)));
        }
        if !(self.tau > 0.0) || !(self.laguerre_b > 0.0) || !(self.t_max > 0.0) {
            return Err(Error::invalid("tau, laguerre_b and T must be positive"));
        }
        let mut seen = self.estimators.clone();
        seen.sort_by_key(|e| e.id());
        seen.dedup();
        if seen.len() != self.estimators.len() {
            return Err(Error::invalid("estimators must not repeat"));
        }
        if let Some(k) = &self.k_range {
            if k.is_empty() || k.iter().any(|&v| v == 0 || v > self.n) {
                return Err(Error::invalid(format!("k_range entries must lie in 1..={}", self.n)));
            }
        }
        Ok(())
    }

    fn k_values(&self) -> Vec<usize> {
        self.k_range.clone().unwrap_or_else(|| default_k_range(self.n))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub estimator: Estimator,
    pub mean_error: f64,
    pub std_error: f64,
    /// Per-replication errors in replication order, when requested.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub errors: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub sigma: f64,
    pub summaries: Vec<EstimatorSummary>,
    pub completed: usize,
    pub failed_replications: Vec<usize>,
}

impl ExperimentReport {
    pub fn summary(&self, estimator: Estimator) -> Option<&EstimatorSummary> {
        self.summaries.iter().find(|s| s.estimator == estimator)
    }

    pub fn mean(&self, estimator: Estimator) -> Option<f64> {
        self.summary(estimator).map(|s| s.mean_error)
    }
}

/// Everything shared by the replications of one configuration.
pub struct Experiment {
    config: ExperimentConfig,
    grid: Grid,
    operator: DMatrix<f64>,
    f_true: DVector<f64>,
    sigma: f64,
    dictionary: Dictionary,
    psi: Option<DMatrix<f64>>,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let grid = Grid::new(config.t_max, config.n)?;
        let kernel = config.kernel;
        let operator = build_convolution_operator(|x| kernel.eval(x), &grid);
        let f_true = evaluate_test_function(config.test_function, &grid);
        let sigma = match config.sigma {
            Some(s) => s,
            None => sigma_from_snr(&(&operator * &f_true), config.snr, config.t_max)?,
        };
        let dictionary = config.dictionary.build(&grid)?;
        let lasso = config
            .estimators
            .iter()
            .any(|e| matches!(e, Estimator::LassoCv | Estimator::LassoOracle));
        let psi = if lasso {
            Some(compute_inverse_images(&operator, &dictionary)?)
        } else {
            None
        };
        Ok(Experiment {
            config,
            grid,
            operator,
            f_true,
            sigma,
            dictionary,
            psi,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn f_true(&self) -> &DVector<f64> {
        &self.f_true
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn dictionary(&self) -> &Dictionary {
        &self.dictionary
    }

    /// Noisy problem of replication `r`.
    pub fn problem(&self, r: usize) -> Result<InverseProblem> {
        let seed = rng::derive_seed(self.config.master_seed, r as u64);
        InverseProblem::with_sigma(self.operator.clone(), self.f_true.clone(), self.sigma, self.grid.clone(), seed)
    }

    /// Estimates of every enabled estimator for replication `r`, in config order.
    pub fn estimates(&self, r: usize) -> Result<Vec<(Estimator, DVector<f64>)>> {
        let problem = self.problem(r)?;
        let cfg = &self.config;
        let sigma_eff = noise_scale(self.sigma, &self.grid);
        let opts = LassoCvOptions {
            grid_size: cfg.n_grid,
            tau: cfg.tau,
            comparison: cfg.comparison,
            ..LassoCvOptions::default()
        };
        let mut cv = None;
        let mut out = Vec::with_capacity(cfg.estimators.len());
        for &est in &cfg.estimators {
            let f_hat = match est {
                Estimator::LassoCv | Estimator::LassoOracle => {
                    if cv.is_none() {
                        cv = Some(lasso_cv(&problem, &self.dictionary, self.psi.as_ref(), sigma_eff, &opts)?);
                    }
                    let res = cv.as_ref().expect("computed above");
                    if est == Estimator::LassoCv {
                        res.f_hat.clone()
                    } else {
                        self.best_on_path(res)?
                    }
                }
                Estimator::SvdOracle => oracle_select(Method::Svd, &problem, &cfg.k_values(), 1.0)?.f_hat,
                Estimator::LaguerreOracle => {
                    oracle_select(Method::Laguerre, &problem, &cfg.k_values(), cfg.laguerre_b)?.f_hat
                }
                Estimator::LaguerreOracleBgrid => {
                    oracle_select_over_scales(&problem, &cfg.k_values(), &BASELINE_SCALES)?.f_hat
                }
            };
            if f_hat.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("{} produced a non-finite estimate", est.id())));
            }
            out.push((est, f_hat));
        }
        Ok(out)
    }

    fn best_on_path(&self, res: &crate::select::LassoCvResult) -> Result<DVector<f64>> {
        let mut best: Option<(f64, DVector<f64>)> = None;
        for fit in &res.path.fits {
            let f = estimate_f(fit, &self.dictionary)?;
            let e = rms_error(&f, &self.f_true);
            if best.as_ref().is_none_or(|(b, _)| e < *b) {
                best = Some((e, f));
            }
        }
        best.map(|(_, f)| f).ok_or_else(|| Error::invalid("empty path"))
    }

    fn errors(&self, r: usize) -> Result<Vec<f64>> {
        Ok(self
            .estimates(r)?
            .iter()
            .map(|(_, f)| rms_error(f, &self.f_true))
            .collect())
    }

    pub fn run(&self) -> Result<ExperimentReport> {
        let reps = self.config.replications;
        let results: Vec<Result<Vec<f64>>> = (0..reps).into_par_iter().map(|r| self.errors(r)).collect();
        let mut failed = Vec::new();
        let mut rows = Vec::with_capacity(reps);
        for (r, res) in results.into_iter().enumerate() {
            match res {
                Ok(e) => rows.push(e),
                Err(_) => failed.push(r),
            }
        }
        // abort above 5% failures
        if failed.len() * 20 > reps || rows.is_empty() {
            return Err(Error::TooManyFailures {
                fails: failed.len(),
                total: reps,
            });
        }
        let summaries = self
            .config
            .estimators
            .iter()
            .enumerate()
            .map(|(i, &est)| {
                let errs: Vec<f64> = rows.iter().map(|row| row[i]).collect();
                let (mean_error, std_error) = mean_std(&errs);
                EstimatorSummary {
                    estimator: est,
                    mean_error,
                    std_error,
                    errors: if self.config.keep_replications { errs } else { Vec::new() },
                }
            })
            .collect();
        Ok(ExperimentReport {
            config: self.config.clone(),
            sigma: self.sigma,
            summaries,
            completed: rows.len(),
            failed_replications: failed,
        })
    }
}

/// Mean and sample standard deviation (divisor `len − 1`, zero for one value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let m = values.len();
    if m == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / m as f64;
    if m == 1 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (m - 1) as f64).sqrt())
}

pub fn run_experiment(config: ExperimentConfig) -> Result<ExperimentReport> {
    Experiment::new(config)?.run()
}

/// Runs on a dedicated pool of `threads` workers. The report is identical
/// for every thread count.
pub fn run_experiment_with_threads(config: ExperimentConfig, threads: usize) -> Result<ExperimentReport> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))?;
    pool.install(|| run_experiment(config))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableFormat {
    #[default]
    Csv,
    Markdown,
}

impl TableFormat {
    pub fn from_id(id: &str) -> Result<Self> {
        match id {
            "csv" => Ok(TableFormat::Csv),
            "markdown" | "md" => Ok(TableFormat::Markdown),
            other => Err(Error::invalid(format!("unknown table format '{other}' (expected csv or markdown)"))),
        }
    }
}

pub const TABLE_HEADER: [&str; 8] = [
    "test_function",
    "n",
    "snr",
    "estimator",
    "mean_error",
    "std_error",
    "completed",
    "failed",
];

/// Renders one row per estimator. CSV values use the shortest representation
/// that parses back to the same `f64`.
pub fn emit_table(report: &ExperimentReport, format: TableFormat) -> String {
    emit_tables(std::slice::from_ref(report), format)
}

/// Several reports in one table, e.g. the cells of a full grid.
pub fn emit_tables(reports: &[ExperimentReport], format: TableFormat) -> String {
    let mut out = String::new();
    match format {
        TableFormat::Csv => {
            out.push_str(&TABLE_HEADER.join(","));
            out.push('\n');
            for rep in reports {
                let c = &rep.config;
                for s in &rep.summaries {
                    let _ = writeln!(
                        out,
                        "{},{},{:?},{},{:?},{:?},{},{}",
                        c.test_function.id(),
                        c.n,
                        c.snr,
                        s.estimator.id(),
                        s.mean_error,
                        s.std_error,
                        rep.completed,
                        rep.failed_replications.len()
                    );
                }
            }
        }
        TableFormat::Markdown => {
            out.push_str("| function | n | SNR | estimator | mean error (std) |\n");
            out.push_str("|---|---|---|---|---|\n");
            for rep in reports {
                let c = &rep.config;
                for s in &rep.summaries {
                    let _ = writeln!(
                        out,
                        "| {} | {} | {} | {} | {:.6} ({:.6}) |",
                        c.test_function.id(),
                        c.n,
                        c.snr,
                        s.estimator.id(),
                        s.mean_error,
                        s.std_error
                    );
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct TableRow {
    pub test_function: TestFunction,
    pub n: usize,
    pub snr: f64,
    pub estimator: Estimator,
    pub mean_error: f64,
    pub std_error: f64,
    pub completed: usize,
    pub failed: usize,
}

pub fn parse_table_csv(text: &str) -> Result<Vec<TableRow>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

/// Writes `x, f_true` and one column per named estimate.
pub fn emit_plot_data(
    grid: &Grid,
    f_true: &DVector<f64>,
    estimates: &[(String, DVector<f64>)],
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let n = grid.len();
    if f_true.len() != n || estimates.iter().any(|(_, v)| v.len() != n) {
        return Err(Error::invalid(format!("every column must have length {n}")));
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_to_file(path, e))?;
    let mut header = vec!["x".to_string(), "f_true".to_string()];
    header.extend(estimates.iter().map(|(name, _)| name.clone()));
    w.write_record(&header).map_err(|e| csv_to_file(path, e))?;
    for i in 0..n {
        let mut row = vec![format!("{:?}", grid.points()[i]), format!("{:?}", f_true[i])];
        row.extend(estimates.iter().map(|(_, v)| format!("{:?}", v[i])));
        w.write_record(&row).map_err(|e| csv_to_file(path, e))?;
    }
    w.flush().map_err(|e| Error::file(path, e))?;
    Ok(())
}

/// Plot data of replication `r`: truth and every enabled estimator.
pub fn write_replication_plot(exp: &Experiment, r: usize, path: impl AsRef<Path>) -> Result<()> {
    let est: Vec<(String, DVector<f64>)> = exp
        .estimates(r)?
        .into_iter()
        .map(|(e, f)| (e.id().to_string(), f))
        .collect();
    emit_plot_data(exp.grid(), exp.f_true(), &est, path)
}
