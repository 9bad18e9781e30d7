//! Experiment orchestration: configuration layering, the environment ×
//! observation-count grid, artifact files and the command-line front end.
//!
//! Configuration is resolved as built-in defaults, then an optional JSON
//! file, then flags. Cells run one after another; MCMC within a cell uses
//! the inference worker pool. Every artifact except the `timing` key of the
//! manifest is a pure function of the resolved configuration.

use std::collections::HashSet;
use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{chain_seed, run_parallel, InferenceConfig};
use crate::model::{MediaEnvironment, ModelParams, OutletSpec};
use crate::oracle::{OracleConfig, PosteriorGrid, WeightTable};
use crate::report::{self, Density, FigureInput, Histogram, Panel, PolarizationMetrics};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

pub const FIGURE_FILE: &str = "figure2.svg";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Mcmc,
    Oracle,
    Both,
    Validate,
}

impl Mode {
    fn runs_mcmc(self) -> bool {
        self != Mode::Oracle
    }

    fn runs_oracle(self) -> bool {
        self != Mode::Mcmc
    }
}

/// A built-in environment by name, or a custom mixture. Custom entries use
/// the default outlet types unless `outlets` replaces all three.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EnvironmentEntry {
    Builtin(String),
    Custom(CustomEnvironment),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomEnvironment {
    pub name: String,
    pub weights: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outlets: Option<[OutletSpec; 3]>,
}

impl EnvironmentEntry {
    pub fn resolve(&self) -> Result<MediaEnvironment> {
        match self {
            EnvironmentEntry::Builtin(name) => MediaEnvironment::builtin(name).ok_or_else(|| {
                Error::config(
                    "environments",
                    format!("unknown environment `{name}` (built-ins are ME1, ME2, ME3)"),
                )
            }),
            EnvironmentEntry::Custom(c) => {
                let env = MediaEnvironment {
                    name: c.name.clone(),
                    weights: c.weights,
                    outlets: c.outlets.unwrap_or(MediaEnvironment::me1().outlets),
                };
                env.validate().map_err(|e| match e {
                    Error::Config { key, message } => Error::Config {
                        key: format!("environments.{key}"),
                        message,
                    },
                    other => other,
                })?;
                Ok(env)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub environments: Vec<EnvironmentEntry>,
    pub observation_counts: Vec<usize>,
    pub model: ModelParams,
    pub inference: InferenceConfig,
    pub oracle: OracleConfig,
    pub output_dir: PathBuf,
    pub mode: Mode,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            environments: ["ME1", "ME2", "ME3"]
                .into_iter()
                .map(|s| EnvironmentEntry::Builtin(s.to_string()))
                .collect(),
            observation_counts: vec![1, 10, 100],
            model: ModelParams::default(),
            inference: InferenceConfig::default(),
            oracle: OracleConfig::default(),
            output_dir: PathBuf::from("out"),
            mode: Mode::Both,
        }
    }
}

impl ExperimentConfig {
    /// Resolves every environment entry and checks all nested settings.
    pub fn validate(&self) -> Result<Vec<MediaEnvironment>> {
        if self.environments.is_empty() {
            return Err(Error::config("environments", "at least one environment is required"));
        }
        let envs = self
            .environments
            .iter()
            .map(EnvironmentEntry::resolve)
            .collect::<Result<Vec<_>>>()?;
        let mut seen = HashSet::new();
        for env in &envs {
            if !seen.insert(env.name.to_ascii_lowercase()) {
                return Err(Error::config(
                    "environments",
                    format!("environment `{}` listed twice", env.name),
                ));
            }
            if env.name.contains(['/', '\\']) {
                return Err(Error::config(
                    "environments",
                    format!("environment name `{}` cannot be used in a file name", env.name),
                ));
            }
        }
        if self.observation_counts.is_empty() {
            return Err(Error::config("observation_counts", "at least one count is required"));
        }
        if self.observation_counts.contains(&0) {
            return Err(Error::config("observation_counts", "counts must be >= 1"));
        }
        let distinct: HashSet<_> = self.observation_counts.iter().collect();
        if distinct.len() != self.observation_counts.len() {
            return Err(Error::config("observation_counts", "counts must be distinct"));
        }
        self.model.validate()?;
        self.inference.validate()?;
        self.oracle.validate()?;
        Ok(envs)
    }
}

/// Command-line overrides. Unset fields leave the file or default value.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// JSON configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Environments, comma separated (ME1, ME2, ME3).
    #[arg(long, value_delimiter = ',')]
    pub env: Vec<String>,
    /// Observation counts, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub observations: Vec<usize>,
    #[arg(long)]
    pub chains: Option<usize>,
    /// Sweeps per chain.
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub burn_in: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Oracle grid points over [-4, 4].
    #[arg(long)]
    pub grid_points: Option<usize>,
    /// Worker threads for MCMC. Does not change any output.
    #[arg(long)]
    pub workers: Option<usize>,
}

/// Defaults, then the file named by `overrides.config`, then the flags.
pub fn parse_config(overrides: &Overrides, mode: Option<Mode>) -> Result<ExperimentConfig> {
    let mut config = match &overrides.config {
        Some(path) => load_config_file(path)?,
        None => ExperimentConfig::default(),
    };
    if !overrides.env.is_empty() {
        config.environments = overrides
            .env
            .iter()
            .map(|s| EnvironmentEntry::Builtin(s.clone()))
            .collect();
    }
    if !overrides.observations.is_empty() {
        config.observation_counts = overrides.observations.clone();
    }
    let inf = &mut config.inference;
    if let Some(v) = overrides.chains {
        inf.n_chains = v;
    }
    if let Some(v) = overrides.iters {
        inf.iterations_per_chain = v;
        inf.total_iterations = None;
    }
    if let Some(v) = overrides.burn_in {
        inf.burn_in = v;
    }
    if let Some(v) = overrides.thin {
        inf.thin = v;
    }
    if let Some(v) = overrides.seed {
        inf.seed = v;
    }
    if let Some(v) = &overrides.out {
        config.output_dir = v.clone();
    }
    if let Some(v) = overrides.grid_points {
        config.oracle.grid.points = v;
    }
    if let Some(m) = mode {
        config.mode = m;
    }
    config.validate()?;
    Ok(config)
}

pub fn load_config_file(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| {
        Error::config("config", format!("cannot read {}: {e}", path.display()))
    })?;
    parse_config_str(&text)
}

/// Parses a JSON configuration; errors name the offending key path.
pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let key = if path == "." { "config".to_string() } else { path };
        Error::config(key, e.into_inner().to_string())
    })
}

/// Seed of one cell, derived from the experiment seed, the environment name
/// and the observation count, so a cell reruns alone with the same samples.
pub fn cell_seed(seed: u64, env: &str, n_observations: usize) -> u64 {
    // FNV-1a
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let label = format!("{env}/{n_observations}");
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    chain_seed(seed, h)
}

/// Largest histogram-to-oracle TV distance a cell may show.
pub fn tv_tolerance(n_observations: usize) -> f64 {
    match n_observations {
        0..=1 => 0.03,
        2..=10 => 0.05,
        _ => 0.10,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Complete,
    ValidationFailed,
    Incomplete,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CellFiles {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hist: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle: Option<String>,
    pub metrics: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub env: String,
    pub n_observations: usize,
    /// Seed passed to the chains of this cell.
    pub cell_seed: u64,
    pub files: CellFiles,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kept_samples: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub acceptance_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TvRow {
    pub env: String,
    pub n_observations: usize,
    pub tv_distance: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub mirror_tv: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub total_seconds: f64,
    pub cells: Vec<CellTiming>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellTiming {
    pub env: String,
    pub n_observations: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub status: RunStatus,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub cells: Vec<CellRecord>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub tv_table: Vec<TvRow>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub figure: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
    /// Wall-clock measurements; the only non-reproducible part of a run.
    pub timing: Timing,
}

/// Contents of `{env}_{N}_metrics.json`. The top-level metrics come from
/// the oracle when it ran, otherwise from the MCMC histogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    pub env: String,
    pub n_observations: usize,
    pub source: String,
    #[serde(flatten)]
    pub metrics: PolarizationMetrics,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mcmc: Option<PolarizationMetrics>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub tv_distance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mirror_tv: Option<f64>,
}

fn write_file(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    body(&mut out)?;
    out.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

struct CellOutcome {
    record: CellRecord,
    tv: Option<TvRow>,
    panel: Panel,
}

fn run_cell(
    config: &ExperimentConfig,
    env: &MediaEnvironment,
    table: Option<&WeightTable>,
    n: usize,
    workers: Option<usize>,
) -> Result<CellOutcome> {
    let dir = &config.output_dir;
    let stem = format!("{}_{n}", env.name);
    let seed = cell_seed(config.inference.seed, &env.name, n);
    let mut files = CellFiles {
        metrics: format!("{stem}_metrics.json"),
        ..CellFiles::default()
    };
    let mut record = CellRecord {
        env: env.name.clone(),
        n_observations: n,
        cell_seed: seed,
        files: CellFiles::default(),
        kept_samples: None,
        acceptance_rate: None,
    };

    let mut histogram: Option<Histogram> = None;
    if config.mode.runs_mcmc() {
        let inference = InferenceConfig { seed, ..config.inference.clone() };
        let samples = run_parallel(env, &config.model, n, &inference, workers)?;
        let h = report::bin(&samples)?;
        let name = format!("{stem}_samples.csv");
        write_file(&dir.join(&name), |w| samples.write_csv(w))?;
        files.samples = Some(name);
        let name = format!("{stem}_hist.csv");
        write_file(&dir.join(&name), |w| h.write_csv(w))?;
        files.hist = Some(name);
        record.kept_samples = Some(samples.len());
        record.acceptance_rate = Some(samples.acceptance_rate);
        histogram = Some(h);
    }

    let mut grid: Option<PosteriorGrid> = None;
    if let Some(table) = table {
        let g = table.posterior(n);
        let name = format!("{stem}_oracle.csv");
        write_file(&dir.join(&name), |w| g.write_csv(w))?;
        files.oracle = Some(name);
        grid = Some(g);
    }

    let mcmc_metrics = histogram.as_ref().map(|h| report::metrics(Density::Samples(h)));
    let oracle_metrics = grid.as_ref().map(|g| report::metrics(Density::Oracle(g)));
    let tv = match (&histogram, &grid) {
        (Some(h), Some(g)) => {
            let tv_distance = report::tv_distance(h, g)?;
            let tolerance = tv_tolerance(n);
            Some(TvRow {
                env: env.name.clone(),
                n_observations: n,
                tv_distance,
                tolerance,
                passed: tv_distance < tolerance,
                mirror_tv: report::mirror_tv(h),
            })
        }
        _ => None,
    };
    let (source, primary, secondary) = match (oracle_metrics, mcmc_metrics) {
        (Some(o), m) => ("oracle", o, m),
        (None, Some(m)) => ("mcmc", m, None),
        (None, None) => unreachable!("every mode runs the oracle or MCMC"),
    };
    let cell_metrics = CellMetrics {
        env: env.name.clone(),
        n_observations: n,
        source: source.to_string(),
        metrics: primary.clone(),
        mcmc: secondary,
        tv_distance: tv.as_ref().map(|t| t.tv_distance),
        mirror_tv: histogram.as_ref().map(report::mirror_tv),
    };
    write_json(&dir.join(&files.metrics), &cell_metrics)?;
    record.files = files;

    Ok(CellOutcome {
        record,
        tv,
        panel: Panel {
            histogram,
            overlay: grid,
            metrics: Some(primary),
        },
    })
}

/// Result of a finished or aborted run.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub manifest: Manifest,
    /// Set when a cell failed; the manifest on disk is marked incomplete.
    pub error: Option<String>,
}

impl RunSummary {
    pub fn exit_code(&self) -> i32 {
        match self.manifest.status {
            RunStatus::Complete => EXIT_OK,
            RunStatus::ValidationFailed => EXIT_VALIDATION,
            RunStatus::Incomplete => EXIT_RUNTIME,
        }
    }
}

/// Runs every requested cell and writes the artifacts and the manifest into
/// `config.output_dir`. Configuration errors are returned before anything
/// is written; a failing cell still leaves a manifest marked incomplete.
pub fn run_experiment(config: &ExperimentConfig, workers: Option<usize>) -> Result<RunSummary> {
    let envs = config.validate()?;
    fs::create_dir_all(&config.output_dir)?;
    let started = Instant::now();

    let mut manifest = Manifest {
        status: RunStatus::Incomplete,
        seed: config.inference.seed,
        config: config.clone(),
        cells: Vec::new(),
        tv_table: Vec::new(),
        figure: None,
        error: None,
        timing: Timing::default(),
    };
    let counts = &config.observation_counts;
    let mut panels: Vec<Panel> = vec![Panel::default(); envs.len() * counts.len()];

    let outcome = (|| -> Result<()> {
        for (col, env) in envs.iter().enumerate() {
            let table = if config.mode.runs_oracle() {
                Some(WeightTable::compute(env, &config.model, &config.oracle)?)
            } else {
                None
            };
            for (row, &n) in counts.iter().enumerate() {
                let t = Instant::now();
                let cell = run_cell(config, env, table.as_ref(), n, workers)?;
                manifest.timing.cells.push(CellTiming {
                    env: env.name.clone(),
                    n_observations: n,
                    seconds: t.elapsed().as_secs_f64(),
                });
                manifest.cells.push(cell.record);
                manifest.tv_table.extend(cell.tv);
                panels[row * envs.len() + col] = cell.panel;
            }
        }
        let figure = report::emit_figure(&FigureInput {
            columns: envs.iter().map(|e| e.name.clone()).collect(),
            rows: counts.clone(),
            panels,
        })?;
        fs::write(config.output_dir.join(FIGURE_FILE), figure)?;
        manifest.figure = Some(FIGURE_FILE.to_string());
        Ok(())
    })();

    let error = match outcome {
        Ok(()) => {
            let failed = manifest.tv_table.iter().any(|row| !row.passed);
            manifest.status = if config.mode == Mode::Validate && failed {
                RunStatus::ValidationFailed
            } else {
                RunStatus::Complete
            };
            None
        }
        Err(e) => {
            manifest.error = Some(e.to_string());
            Some(e.to_string())
        }
    };
    manifest.timing.total_seconds = started.elapsed().as_secs_f64();
    write_json(&config.output_dir.join(MANIFEST_FILE), &manifest)?;
    Ok(RunSummary { manifest, error })
}

#[derive(Debug, Parser)]
#[command(name = "polarize", version, about = "Opinion formation under media environments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// MCMC and oracle for every cell, with the TV table in the manifest.
    Run(Overrides),
    /// Quadrature posterior only.
    Oracle(Overrides),
    /// MCMC only.
    Mcmc(Overrides),
    /// Like `run`, but exits 1 when a cell exceeds its TV tolerance.
    Validate(Overrides),
    /// Prints the resolved configuration as JSON.
    PrintConfig(Overrides),
}

fn exit_code_for(e: &Error) -> i32 {
    match e {
        Error::Config { .. } => EXIT_USAGE,
        _ => EXIT_RUNTIME,
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let (overrides, mode) = match &cli.command {
        Command::Run(o) => (o, Some(Mode::Both)),
        Command::Oracle(o) => (o, Some(Mode::Oracle)),
        Command::Mcmc(o) => (o, Some(Mode::Mcmc)),
        Command::Validate(o) => (o, Some(Mode::Validate)),
        Command::PrintConfig(o) => (o, None),
    };
    let config = match parse_config(overrides, mode) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    if let Command::PrintConfig(_) = cli.command {
        return match serde_json::to_string_pretty(&config) {
            Ok(text) => {
                println!("{text}");
                EXIT_OK
            }
            Err(e) => {
                eprintln!("error: {e}");
                EXIT_RUNTIME
            }
        };
    }
    match run_experiment(&config, overrides.workers) {
        Ok(summary) => {
            for row in &summary.manifest.tv_table {
                println!(
                    "{} N={}: tv {:.4} (tolerance {:.2}) mirror {:.4} {}",
                    row.env,
                    row.n_observations,
                    row.tv_distance,
                    row.tolerance,
                    row.mirror_tv,
                    if row.passed { "ok" } else { "FAIL" }
                );
            }
            if let Some(e) = &summary.error {
                eprintln!("error: {e}");
            }
            let status = match summary.manifest.status {
                RunStatus::Complete => "complete",
                RunStatus::ValidationFailed => "validation failed",
                RunStatus::Incomplete => "incomplete",
            };
            println!(
                "{} cells written to {} ({status})",
                summary.manifest.cells.len(),
                config.output_dir.display(),
            );
            summary.exit_code()
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}
