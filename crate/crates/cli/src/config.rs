//! Experiment configuration: JSON file, flag overrides and validation.

use clap::{Args, ValueEnum};
use gremlab::analysis::MAX_GENERATOR_LEAVES;
use gremlab::dynamics::QTable;
use gremlab::hierarchy::HierarchySpec;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const SCHEMA_VERSION: u32 = 1;
pub const SEED_ENV: &str = "GREMLAB_SEED";
pub const DEFAULT_SEED: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    Aging,
    Clocks,
    Cascade,
    Limits,
    Oracle,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Aging => "aging",
            Experiment::Clocks => "clocks",
            Experiment::Cascade => "cascade",
            Experiment::Limits => "limits",
            Experiment::Oracle => "oracle",
        }
    }

    fn default_trajectories(self) -> u64 {
        match self {
            Experiment::Cascade | Experiment::Oracle => 10_000,
            _ => 1000,
        }
    }

    /// Aging: absolute error; clocks: KS distance; cascade and oracle: stderr multiple.
    fn default_tolerance(self) -> f64 {
        match self {
            Experiment::Aging => 0.05,
            Experiment::Clocks => 0.1,
            _ => 3.0,
        }
    }

    fn default_gamma(self) -> f64 {
        match self {
            Experiment::Cascade => 0.05,
            _ => 1e-4,
        }
    }
}

/// Command-line flags shared by every experiment. Lists are comma separated.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// JSON config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed (falls back to the config, then GREMLAB_SEED, then 1).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory for curve.csv and meta.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Number of levels.
    #[arg(long = "L")]
    pub levels: Option<usize>,
    /// Branching number.
    #[arg(long)]
    pub n: Option<u32>,
    /// Strictly increasing exponents in (0,1), one per level.
    #[arg(long)]
    pub alphas: Option<String>,
    #[arg(long)]
    pub rho: Option<f64>,
    /// Branching numbers to sweep (defaults to n).
    #[arg(long = "n-list", alias = "n_list")]
    pub n_list: Option<String>,
    /// Trajectory or sample count.
    #[arg(long = "M")]
    pub trajectories: Option<u64>,
    /// Theta grid (aging, limits), time grid (clocks) or Laplace arguments (cascade).
    #[arg(long)]
    pub theta: Option<String>,
    /// Overlap profile q(k/L), k = 0..=L; the default is q(x) = x.
    #[arg(long)]
    pub q: Option<String>,
    /// Truncation level of jump sizes.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Pass threshold; its meaning depends on the experiment.
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// Oracle windows as t:s pairs.
    #[arg(long)]
    pub windows: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileSpec {
    #[serde(rename = "L")]
    levels: Option<usize>,
    n: Option<u32>,
    alphas: Option<Vec<f64>>,
    rho: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    schema_version: u32,
    experiment: Option<Experiment>,
    #[serde(default)]
    spec: FileSpec,
    n_list: Option<Vec<u32>>,
    #[serde(rename = "M")]
    trajectories: Option<u64>,
    theta: Option<Vec<f64>>,
    q: Option<Vec<f64>>,
    seed: Option<u64>,
    gamma: Option<f64>,
    tolerance: Option<f64>,
    windows: Option<Vec<[f64; 2]>>,
    out: Option<PathBuf>,
}

/// Fully resolved and validated run configuration; echoed into meta.json.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub experiment: Experiment,
    pub spec: HierarchySpec,
    pub n_list: Vec<u32>,
    #[serde(rename = "M")]
    pub trajectories: u64,
    pub theta: Vec<f64>,
    pub q: Vec<f64>,
    pub seed: u64,
    pub gamma: f64,
    pub tolerance: f64,
    pub windows: Vec<[f64; 2]>,
    pub out: PathBuf,
}

impl ExperimentConfig {
    pub fn q_table(&self) -> QTable {
        QTable::new(self.q.clone()).expect("validated")
    }
}

pub fn parse_list<T: std::str::FromStr>(name: &str, text: &str) -> Result<Vec<T>, String> {
    let text = text.trim();
    if text.is_empty() {
        return Ok(Vec::new());
    }
    text.split(',').map(|s| s.trim().parse::<T>().map_err(|_| format!("--{name}: cannot parse {s:?}"))).collect()
}

fn parse_windows(text: &str) -> Result<Vec<[f64; 2]>, String> {
    let text = text.trim();
    if text.is_empty() {
        return Ok(Vec::new());
    }
    text.split(',')
        .map(|pair| {
            let (t, s) = pair.split_once(':').ok_or_else(|| format!("--windows: {pair:?} is not t:s"))?;
            let parse = |v: &str| v.trim().parse::<f64>().map_err(|_| format!("--windows: cannot parse {v:?}"));
            Ok([parse(t)?, parse(s)?])
        })
        .collect()
}

fn read_file(path: &Path) -> Result<FileConfig, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let cfg: FileConfig = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    if cfg.schema_version != SCHEMA_VERSION {
        return Err(format!(
            "{}: schema_version {} is not supported (expected {SCHEMA_VERSION})",
            path.display(),
            cfg.schema_version
        ));
    }
    Ok(cfg)
}

/// Merges flags over the file and defaults, then checks every module precondition.
/// `env_seed` is the value of `GREMLAB_SEED`, if set.
pub fn resolve(experiment: Experiment, args: &RunArgs, env_seed: Option<&str>) -> Result<ExperimentConfig, String> {
    let file = match &args.config {
        Some(p) => read_file(p)?,
        None => FileConfig::default(),
    };
    if let Some(e) = file.experiment {
        if e != experiment {
            return Err(format!("config is for experiment {}, not {}", e.name(), experiment.name()));
        }
    }
    let flag_list = |name: &str, v: &Option<String>| v.as_deref().map(|s| parse_list::<f64>(name, s)).transpose();
    let alphas = flag_list("alphas", &args.alphas)?.or(file.spec.alphas).unwrap_or_else(|| vec![0.4, 0.8]);
    let levels = args.levels.or(file.spec.levels).unwrap_or(alphas.len());
    if levels != alphas.len() {
        return Err(format!("L = {levels} but {} alphas given", alphas.len()));
    }
    let n_list = args.n_list.as_deref().map(|s| parse_list::<u32>("n-list", s)).transpose()?.or(file.n_list);
    let n = args.n.or(file.spec.n).or_else(|| n_list.as_ref().and_then(|l| l.last().copied())).unwrap_or(100);
    let rho = args.rho.or(file.spec.rho).unwrap_or(1.1);
    let spec = HierarchySpec::new(n, alphas, rho).map_err(|e| e.to_string())?;
    let n_list = n_list.unwrap_or_else(|| vec![n]);
    if n_list.is_empty() {
        return Err("empty n list".into());
    }
    for &m in &n_list {
        spec.with_branching(m).map_err(|e| e.to_string())?;
    }

    let theta = flag_list("theta", &args.theta)?.or(file.theta).unwrap_or_else(|| vec![0.5, 1.0, 3.0]);
    if theta.is_empty() {
        return Err("empty theta grid".into());
    }
    if let Some(t) = theta.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
        return Err(format!("theta {t} must be positive and finite"));
    }
    let q = flag_list("q", &args.q)?.or(file.q).unwrap_or_else(|| QTable::identity(levels).values().to_vec());
    if q.len() != levels + 1 {
        return Err(format!("q needs L + 1 = {} entries, got {}", levels + 1, q.len()));
    }
    QTable::new(q.clone()).map_err(|e| e.to_string())?;

    let trajectories = args.trajectories.or(file.trajectories).unwrap_or(experiment.default_trajectories());
    if trajectories < 2 {
        return Err(format!("M = {trajectories}; need at least 2 for a standard error"));
    }
    let seed = match (args.seed, file.seed, env_seed) {
        (Some(s), _, _) | (None, Some(s), _) => s,
        (None, None, Some(text)) => {
            text.trim().parse().map_err(|_| format!("{SEED_ENV}={text:?} is not an unsigned integer"))?
        }
        (None, None, None) => DEFAULT_SEED,
    };
    let gamma = args.gamma.or(file.gamma).unwrap_or(experiment.default_gamma());
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(format!("gamma {gamma} must be positive"));
    }
    let tolerance = args.tolerance.or(file.tolerance).unwrap_or(experiment.default_tolerance());
    if !(tolerance > 0.0) {
        return Err(format!("tolerance {tolerance} must be positive"));
    }
    let windows = args
        .windows
        .as_deref()
        .map(parse_windows)
        .transpose()?
        .or(file.windows)
        .unwrap_or_else(|| vec![[2.0, 2.0], [5.0, 5.0], [10.0, 3.0]]);
    let out = args.out.clone().or(file.out).unwrap_or_else(|| PathBuf::from(format!("gremlab-{}", experiment.name())));

    match experiment {
        Experiment::Oracle => {
            if windows.is_empty() {
                return Err("empty window list".into());
            }
            if let Some(w) =
                windows.iter().find(|w| !(w[0] >= 0.0 && w[1] >= 0.0 && w[0].is_finite() && w[1].is_finite()))
            {
                return Err(format!("window {}:{} must be nonnegative", w[0], w[1]));
            }
            for &m in &n_list {
                let leaves = (m as f64).powi(levels as i32);
                if leaves > MAX_GENERATOR_LEAVES as f64 {
                    return Err(format!("n = {m}, L = {levels} gives {leaves} leaves; the oracle handles at most {MAX_GENERATOR_LEAVES}"));
                }
            }
        }
        Experiment::Aging | Experiment::Clocks | Experiment::Limits => {
            spec.aging_level().map_err(|e| e.to_string())?;
        }
        Experiment::Cascade => {}
    }
    Ok(ExperimentConfig {
        schema_version: SCHEMA_VERSION,
        experiment,
        spec,
        n_list,
        trajectories,
        theta,
        q,
        seed,
        gamma,
        tolerance,
        windows,
        out,
    })
}
