//! Command-line front end: `validate`, `fit` and `simulate`.
//!
//! Exit codes are 0 on success, 1 when the computation itself fails (an
//! irregular graph, a failed fit), and 2 for usage and I/O problems.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::BasisConfig;
use crate::dataset::{ColumnKind, CsvOptions, DataError, Dataset};
use crate::estimator::{bootstrap_covariance, format_table, EstimateError, EstimatingFunctionSpec, FitResult, Pipeline};
use crate::optimizer::{CvOptions, SolverOptions};
use crate::par::{self, Exec};
use crate::pattern_graph::{GraphError, PatternGraph};
use crate::simulator::{self, SimConfig, SimError, Simulator, StudyResult};
use crate::weights::{self, FitOptions, LambdaPolicy, WeightError, WeightMethod};

pub const DEFAULT_BOOTSTRAP: usize = 200;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Domain(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Domain(_) => 1,
            CliError::Usage(_) => 2,
        }
    }
}

impl From<GraphError> for CliError {
    fn from(e: GraphError) -> Self {
        match e {
            GraphError::Io(_) | GraphError::Json(_) => CliError::Usage(e.to_string()),
            other => CliError::Domain(other.to_string()),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::DimensionMismatch { .. } | DataError::MaskedCell { .. } => CliError::Domain(e.to_string()),
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<EstimateError> for CliError {
    fn from(e: EstimateError) -> Self {
        CliError::Domain(e.to_string())
    }
}

impl From<WeightError> for CliError {
    fn from(e: WeightError) -> Self {
        match e {
            WeightError::Io(_) | WeightError::Csv(_) => CliError::Usage(e.to_string()),
            other => CliError::Domain(other.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Io(_) | SimError::Csv(_) | SimError::Config(_) | SimError::UnknownGraph(_) => {
                CliError::Usage(e.to_string())
            }
            SimError::Graph(g) => g.into(),
            other => CliError::Domain(other.to_string()),
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Usage(format!("{}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(name = "pgbal", version, about = "Balancing weights for nonignorable missing data under pattern graphs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check that a pattern graph file is regular.
    Validate { graph: PathBuf },
    /// Fit weights and the weighted logistic regression described by a run config.
    Fit {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run a simulation study.
    Simulate {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitMethod {
    Entropy,
    Local,
    Seq,
    Cc,
}

impl From<FitMethod> for WeightMethod {
    fn from(m: FitMethod) -> Self {
        match m {
            FitMethod::Entropy => WeightMethod::Entropy,
            FitMethod::Local => WeightMethod::Local,
            FitMethod::Seq => WeightMethod::Sequential,
            FitMethod::Cc => WeightMethod::Cc,
        }
    }
}

/// `"cv"` or a fixed penalty level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LambdaSetting {
    Fixed(f64),
    Named(String),
}

impl Default for LambdaSetting {
    fn default() -> Self {
        LambdaSetting::Named("cv".into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variance {
    #[default]
    Sandwich,
    Bootstrap(usize),
}

/// Everything one `fit` run needs. Relative paths are taken from the
/// config file's directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub graph: PathBuf,
    pub data: PathBuf,
    #[serde(default = "default_na")]
    pub na_token: String,
    /// Column kinds that override inference.
    #[serde(default)]
    pub column_kinds: BTreeMap<String, ColumnKind>,
    pub outcome: String,
    /// Defaults to every column except the outcome.
    #[serde(default)]
    pub predictors: Option<Vec<String>>,
    pub method: FitMethod,
    #[serde(default)]
    pub lambda: LambdaSetting,
    #[serde(default)]
    pub basis: BasisConfig,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub cv: CvOptions,
    #[serde(default)]
    pub variance: Variance,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

fn default_na() -> String {
    "NA".into()
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))
    }

    /// Reads the file and makes its paths absolute against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.graph, &mut cfg.data, &mut cfg.out] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn lambda_policy(&self) -> Result<LambdaPolicy, CliError> {
        match &self.lambda {
            LambdaSetting::Fixed(v) if v.is_finite() && *v >= 0.0 => Ok(LambdaPolicy::Fixed(*v)),
            LambdaSetting::Named(s) if s == "cv" => Ok(LambdaPolicy::Cv),
            other => Err(CliError::Usage(format!("lambda must be \"cv\" or a non-negative number, got {other:?}"))),
        }
    }

    pub fn check(&self) -> Result<(), CliError> {
        for p in [&self.graph, &self.data] {
            if !p.is_file() {
                return Err(CliError::Usage(format!("{}: no such file", p.display())));
            }
        }
        if self.outcome.is_empty() {
            return Err(CliError::Usage("outcome column is empty".into()));
        }
        if let Some(pred) = &self.predictors {
            if pred.contains(&self.outcome) {
                return Err(CliError::Usage(format!("outcome {:?} is also listed as a predictor", self.outcome)));
            }
        }
        if let Variance::Bootstrap(b) = self.variance {
            if b < 2 {
                return Err(CliError::Usage(format!("bootstrap needs at least 2 replicates, got {b}")));
            }
        }
        self.lambda_policy()?;
        Ok(())
    }

    fn fit_options(&self, exec: Exec) -> Result<FitOptions, CliError> {
        let mut cv = self.cv;
        cv.seed = self.seed;
        Ok(FitOptions { basis: self.basis.clone(), solver: self.solver, cv, lambda: self.lambda_policy()?, exec })
    }
}

pub fn cmd_validate(path: &Path, out: &mut impl Write) -> Result<bool, CliError> {
    let g = PatternGraph::read(path)?;
    let report = g.validate();
    let _ = writeln!(out, "{report}");
    Ok(report.is_regular())
}

/// Files written by [`cmd_fit`].
pub const FIT_FILES: [&str; 4] = ["fit.json", "weights.csv", "balance.csv", "table.txt"];

pub fn cmd_fit(path: &Path, common: &Common, out: &mut impl Write) -> Result<FitResult, CliError> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.out = o.clone();
    }
    cfg.check()?;
    let g = PatternGraph::load(&cfg.graph)?;
    let opts = CsvOptions { na_token: cfg.na_token.clone(), kind_overrides: cfg.column_kinds.clone() };
    let ds = Dataset::load_csv(&cfg.data, &opts)?;
    let predictors: Vec<String> = match &cfg.predictors {
        Some(p) => p.clone(),
        None => ds.column_names().iter().filter(|c| **c != cfg.outcome).cloned().collect(),
    };
    let spec = EstimatingFunctionSpec::new(&ds, &cfg.outcome, &predictors).map_err(|e| match e {
        EstimateError::Data(d) => CliError::from(d),
        other => other.into(),
    })?;
    let exec = Exec::Parallel;
    let pipeline = Pipeline { method: cfg.method.into(), fit: cfg.fit_options(exec)?, spec };

    let sandwich_ok = g.all_type1() || cfg.method == FitMethod::Cc;
    let (fit, run) = match cfg.variance {
        Variance::Sandwich if sandwich_ok => pipeline.fit_sandwich(&g, &ds)?,
        v => {
            let b = match v {
                Variance::Bootstrap(b) => b,
                Variance::Sandwich => {
                    log::warn!("sandwich covariance needs type1 coefficients; using {DEFAULT_BOOTSTRAP} bootstrap replicates");
                    DEFAULT_BOOTSTRAP
                }
            };
            let run = pipeline.run(&g, &ds)?;
            let boot = bootstrap_covariance(&ds, &g, &pipeline, &run.models, b, cfg.seed, exec)?;
            let mut fit =
                FitResult::new(&pipeline.method.to_string(), pipeline.spec.names.clone(), &run.newton, &boot.cov, "bootstrap");
            fit.low_precision = boot.low_precision;
            (fit, run)
        }
    };

    std::fs::create_dir_all(&cfg.out).map_err(|e| io_err(&cfg.out, e))?;
    let write = |name: &str, bytes: &[u8]| -> Result<(), CliError> {
        let p = cfg.out.join(name);
        std::fs::write(&p, bytes).map_err(|e| io_err(&p, e))
    };
    write("fit.json", (fit.to_json() + "\n").as_bytes())?;
    let mut buf = Vec::new();
    run.weights.write_csv(&ds, &mut buf)?;
    write("weights.csv", &buf)?;
    let rows = if run.models.is_empty() { Vec::new() } else { weights::balance_report(&run.weights, &run.models, &g, &ds)? };
    let mut buf = Vec::new();
    weights::write_balance_csv(&rows, &mut buf)?;
    write("balance.csv", &buf)?;
    let table = format_table(std::slice::from_ref(&fit));
    write("table.txt", table.as_bytes())?;
    let _ = write!(out, "{table}");
    if !fit.converged {
        return Err(CliError::Domain("weighted estimating equation did not converge".into()));
    }
    Ok(fit)
}

/// Name of the study table written by [`cmd_simulate`].
pub const STUDY_FILE: &str = "study.csv";

pub fn cmd_simulate(path: &Path, common: &Common, out: &mut impl Write) -> Result<Vec<StudyResult>, CliError> {
    let mut cfg = SimConfig::load(path)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let rebase = |name: &mut String| {
        if name.ends_with(".json") && Path::new(name.as_str()).is_relative() {
            *name = base.join(&*name).to_string_lossy().into_owned();
        }
    };
    rebase(&mut cfg.graph);
    cfg.fit_graphs.iter_mut().for_each(rebase);
    let sim = Simulator::new(cfg)?;
    let graphs = simulator::fit_graphs(&sim)?;
    let results = simulator::sensitivity_study(&sim, &graphs, Exec::Parallel)?;
    let dir = common.out.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    let p = dir.join(STUDY_FILE);
    let file = std::fs::File::create(&p).map_err(|e| io_err(&p, e))?;
    StudyResult::write_csv(&results, file)?;
    for r in &results {
        let _ = writeln!(out, "{}", r.summary());
    }
    Ok(results)
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let mut stdout = std::io::stdout().lock();
    let threads = match &cli.command {
        Command::Fit { common, .. } | Command::Simulate { common, .. } => common.threads,
        Command::Validate { .. } => None,
    };
    if let Some(n) = threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return 2;
        }
        par::set_threads(n);
    }
    let result = match &cli.command {
        Command::Validate { graph } => cmd_validate(graph, &mut stdout).map(|ok| if ok { 0 } else { 1 }),
        Command::Fit { config, common } => cmd_fit(config, common, &mut stdout).map(|_| 0),
        Command::Simulate { config, common } => cmd_simulate(config, common, &mut stdout).map(|_| 0),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.code()
        }
    }
}

