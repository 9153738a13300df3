//! Flat `key = value` run configuration.
//!
//! Lines starting with `#` are comments. Unknown keys are rejected. Command
//! line flags are applied after the file and override it.
//!
//! | key              | default                        |
//! |------------------|--------------------------------|
//! | `t_max`          | 200                            |
//! | `eps_toc`        | 1e-6                           |
//! | `snr0`           | 100                            |
//! | `damping`        | 1                              |
//! | `lambda_eps`     | 1e-8                           |
//! | `algo`           | nnspl1d (`nnspl2d` for images) |
//! | `algos`          | nnspl1d,indep                  |
//! | `grid`           | unset (`ROWSxCOLS`)            |
//! | `adjacency`      | unset (path)                   |
//! | `n`, `k`, `l`    | 100, 25, 4                     |
//! | `mu0`, `tau0`    | 3, 1                           |
//! | `ratios`         | 0.25,0.3,...,0.6 (0.5 for images) |
//! | `trials`         | 100 (1 for images)             |
//! | `snr_db`         | noiseless                      |
//! | `seed`           | 0                              |
//! | `jobs`           | 1                              |
//! | `timing`         | false                          |
//! | `nmse_threshold_db` | -60                         |
//! | `support_tol`    | 1e-4                           |
//! | `sparsity`       | 0.12                           |
//! | `synthetic`      | unset (`ROWSxCOLS`)            |
//! | `out`, `trials_out`, `metrics_out` | unset (paths) |

use std::path::{Path, PathBuf};

use nnspl::bench::{BlockSparseSpec, SUCCESS_NMSE_DB, SUPPORT_TOL};
use nnspl::learning::parse_dims;
use nnspl::SolverConfig;

use crate::error::{CliError, Result};

/// Topology choice as given on the command line; grid dimensions and
/// adjacency files are resolved later against the signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlgoName {
    Nnspl1d,
    Nnspl2d,
    FullSet,
    Indep,
}

impl AlgoName {
    pub fn parse(s: &str) -> std::result::Result<Self, String> {
        match s.trim() {
            "nnspl1d" => Ok(AlgoName::Nnspl1d),
            "nnspl2d" => Ok(AlgoName::Nnspl2d),
            "fullset" => Ok(AlgoName::FullSet),
            "indep" => Ok(AlgoName::Indep),
            other => Err(format!("unknown algorithm {other:?} (expected nnspl1d, nnspl2d, fullset or indep)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub solver: SolverConfig,
    pub algo: AlgoName,
    pub algos: Vec<AlgoName>,
    pub grid: Option<(usize, usize)>,
    pub adjacency: Option<PathBuf>,
    pub signal: BlockSparseSpec,
    pub ratios: Vec<f64>,
    pub trials: usize,
    pub snr_db: Option<f64>,
    pub seed: u64,
    pub jobs: usize,
    pub timing: bool,
    pub nmse_threshold_db: f64,
    pub support_tol: f64,
    pub sparsity: f64,
    pub synthetic: Option<(usize, usize)>,
    pub out: Option<PathBuf>,
    pub trials_out: Option<PathBuf>,
    pub metrics_out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            solver: SolverConfig::default(),
            algo: AlgoName::Nnspl1d,
            algos: vec![AlgoName::Nnspl1d, AlgoName::Indep],
            grid: None,
            adjacency: None,
            signal: BlockSparseSpec::default(),
            ratios: (5..=12).map(|i| (i * 5) as f64 / 100.0).collect(),
            trials: 100,
            snr_db: None,
            seed: 0,
            jobs: 1,
            timing: false,
            nmse_threshold_db: SUCCESS_NMSE_DB,
            support_tol: SUPPORT_TOL,
            sparsity: 0.12,
            synthetic: None,
            out: None,
            trials_out: None,
            metrics_out: None,
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
    value
        .parse::<T>()
        .map_err(|_| format!("invalid value for {key}: {value:?}"))
}

fn list<T>(key: &str, value: &str, f: impl Fn(&str) -> std::result::Result<T, String>) -> std::result::Result<Vec<T>, String> {
    let value = value.trim();
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|s| f(s.trim()).map_err(|e| format!("{key}: {e}")))
        .collect()
}

fn boolean(key: &str, value: &str) -> std::result::Result<bool, String> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(format!("invalid value for {key}: {value:?} (expected true or false)")),
    }
}

impl RunConfig {
    /// Defaults for the image subcommand: one recovery at M/N = 0.5 on a grid.
    pub fn image_defaults() -> Self {
        Self {
            algo: AlgoName::Nnspl2d,
            ratios: vec![0.5],
            trials: 1,
            ..Self::default()
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let value = value.trim();
        match key {
            "t_max" => self.solver.t_max = num(key, value)?,
            "eps_toc" => self.solver.eps_toc = num(key, value)?,
            "snr0" => self.solver.snr0 = num(key, value)?,
            "damping" => self.solver.damping = num(key, value)?,
            "lambda_eps" => self.solver.lambda_eps = num(key, value)?,
            "algo" => self.algo = AlgoName::parse(value)?,
            "algos" => self.algos = list(key, value, AlgoName::parse)?,
            "grid" => self.grid = Some(parse_dims(value).map_err(|e| e.to_string())?),
            "adjacency" => self.adjacency = Some(PathBuf::from(value)),
            "n" => self.signal.n = num(key, value)?,
            "k" => self.signal.k = num(key, value)?,
            "l" => self.signal.l = num(key, value)?,
            "mu0" => self.signal.mu0 = num(key, value)?,
            "tau0" => self.signal.tau0 = num(key, value)?,
            "ratios" => self.ratios = list(key, value, |s| num::<f64>("ratio", s))?,
            "trials" => self.trials = num(key, value)?,
            "snr_db" => {
                self.snr_db = match value {
                    "none" | "noiseless" | "inf" => None,
                    _ => Some(num(key, value)?),
                }
            }
            "seed" => self.seed = num(key, value)?,
            "jobs" => self.jobs = num(key, value)?,
            "timing" => self.timing = boolean(key, value)?,
            "nmse_threshold_db" => self.nmse_threshold_db = num(key, value)?,
            "support_tol" => self.support_tol = num(key, value)?,
            "sparsity" => self.sparsity = num(key, value)?,
            "synthetic" => self.synthetic = Some(parse_dims(value).map_err(|e| e.to_string())?),
            "out" => self.out = Some(PathBuf::from(value)),
            "trials_out" => self.trials_out = Some(PathBuf::from(value)),
            "metrics_out" => self.metrics_out = Some(PathBuf::from(value)),
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    pub fn apply_text(&mut self, text: &str, path: &Path) -> Result<()> {
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::parse(path, idx + 1, "expected `key = value`"))?;
            self.set(key.trim(), value).map_err(|msg| CliError::parse(path, idx + 1, msg))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        self.apply_text(&text, path)
    }

    /// Applies `key=value` overrides in order.
    pub fn apply_overrides<'a>(&mut self, pairs: impl IntoIterator<Item = (&'a str, String)>) -> Result<()> {
        for (key, value) in pairs {
            self.set(key, &value).map_err(CliError::Usage)?;
        }
        Ok(())
    }
}
