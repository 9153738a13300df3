//! Subcommand implementations. Each takes a resolved [`RunConfig`] and a
//! writer standing in for stdout, so they can be driven from tests.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use nnspl::bench::{
    generate_cluster_image, measurements_for, nmse_db, noise_at_snr, pattern_match, run_sweep, trial_stream,
    Aggregate, SignalSource, SweepConfig, TrialRecord,
};
use nnspl::learning::parse_adjacency;
use nnspl::model::{generate_matrix, stream_rng};
use nnspl::{solve, MeasurementModel, SolveResult, SolveStatus, TopologyKind};

use crate::config::{AlgoName, RunConfig};
use crate::error::{CliError, Result};
use crate::io::{self, fmt_f64};
use crate::pgm::{self, GrayImage};

fn out_err(e: std::io::Error) -> CliError {
    CliError::io("<stdout>", e)
}

/// Maps an algorithm name to a topology for a signal of length `n`.
/// An adjacency file, when given, replaces the nearest-neighbor topologies.
/// `natural_grid` supplies dimensions when `grid` is unset (images).
pub fn resolve_topology(
    algo: AlgoName,
    n: usize,
    grid: Option<(usize, usize)>,
    natural_grid: Option<(usize, usize)>,
    adjacency: Option<&Path>,
) -> Result<TopologyKind> {
    match algo {
        AlgoName::Indep => return Ok(TopologyKind::Independent),
        AlgoName::FullSet => return Ok(TopologyKind::FullSet),
        _ => {}
    }
    if let Some(path) = adjacency {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let lists = parse_adjacency(&text).map_err(|e| CliError::parse(path, 0, e.to_string()))?;
        if lists.len() != n {
            return Err(CliError::Usage(format!(
                "{}: adjacency has {} entries, signal has {n}",
                path.display(),
                lists.len()
            )));
        }
        return Ok(TopologyKind::Custom(lists));
    }
    match algo {
        AlgoName::Nnspl1d => Ok(TopologyKind::Chain1D),
        _ => {
            let (rows, cols) = grid.or(natural_grid).ok_or_else(|| {
                CliError::Usage("nnspl2d needs grid dimensions (--grid ROWSxCOLS)".into())
            })?;
            if rows * cols != n {
                return Err(CliError::Usage(format!("grid {rows}x{cols} does not match signal length {n}")));
            }
            Ok(TopologyKind::Grid2D { rows, cols })
        }
    }
}

fn summary_line(res: &SolveResult) -> String {
    format!(
        "iterations={} status={} mu0={} tau0={} delta0={} mean_lambda={}",
        res.iterations,
        res.status,
        fmt_f64(res.hp_final.mu0),
        fmt_f64(res.hp_final.tau0),
        fmt_f64(res.hp_final.delta0),
        fmt_f64(res.hp_final.mean_lambda()),
    )
}

/// Recovers `x` from a matrix file and a measurement file.
///
/// The estimate goes to `cfg.out`, or to `stdout` when unset; the summary
/// line goes to `stdout` after a file write and to `stderr` otherwise. A
/// divergent run still writes the last finite iterate, then fails.
pub fn recover(cfg: &RunConfig, matrix: &Path, measurements: &Path, stdout: &mut dyn Write) -> Result<SolveResult> {
    let a = io::read_matrix(matrix)?;
    let y = io::read_vector(measurements)?;
    if y.len() != a.rows() {
        return Err(CliError::Usage(format!(
            "dimension mismatch: {} has {} rows but {} has {} entries",
            matrix.display(),
            a.rows(),
            measurements.display(),
            y.len()
        )));
    }
    let mm = MeasurementModel::new(a, y)?;
    let mut solver = cfg.solver.clone();
    solver.topology = resolve_topology(cfg.algo, mm.n(), cfg.grid, None, cfg.adjacency.as_deref())?;
    let res = solve(&mm, &solver)?;

    let summary = summary_line(&res);
    match &cfg.out {
        Some(path) => {
            io::write_vector(path, &res.xhat)?;
            writeln!(stdout, "{summary}").map_err(out_err)?;
        }
        None => {
            for v in &res.xhat {
                writeln!(stdout, "{}", fmt_f64(*v)).map_err(out_err)?;
            }
            eprintln!("{summary}");
        }
    }
    if res.status == SolveStatus::Diverged {
        return Err(CliError::Diverged { iterations: res.iterations });
    }
    Ok(res)
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// Nonfinite means (no valid trials) are written as empty fields.
fn finite(v: f64) -> String {
    if v.is_finite() {
        fmt_f64(v)
    } else {
        String::new()
    }
}

pub const SWEEP_HEADER: &str = "ratio,algo,trials,success_rate,pattern_rate,mean_nmse_db,mean_iters,mean_seconds";
pub const TRIALS_HEADER: &str = "ratio,algo,trial,seed,stream,m,snr_db,nmse_db,success,pattern_success,iterations,status,seconds";

pub fn aggregates_csv(aggs: &[Aggregate]) -> String {
    let mut s = String::from(SWEEP_HEADER);
    s.push('\n');
    for a in aggs {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            fmt_f64(a.ratio),
            a.algo,
            a.trials,
            opt(a.success_rate),
            finite(a.pattern_rate),
            finite(a.mean_nmse_db),
            finite(a.mean_iters),
            opt(a.mean_seconds),
        );
    }
    s
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn trials_csv(records: &[TrialRecord]) -> String {
    let mut s = String::from(TRIALS_HEADER);
    s.push('\n');
    for r in records {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            fmt_f64(r.ratio),
            r.algo,
            r.trial,
            r.base_seed,
            r.stream,
            r.m,
            opt(r.snr_db),
            opt(r.nmse_db),
            r.success,
            r.pattern_success,
            r.iterations,
            csv_field(&r.status),
            opt(r.wall_seconds),
        );
    }
    s
}

/// Builds the library sweep configuration from the run configuration.
pub fn sweep_config(cfg: &RunConfig) -> Result<SweepConfig> {
    let source = match cfg.synthetic {
        Some((rows, cols)) => SignalSource::ClusterImage {
            rows,
            cols,
            sparsity: cfg.sparsity,
            mu0: cfg.signal.mu0,
            tau0: cfg.signal.tau0,
        },
        None => {
            cfg.signal.validate()?;
            SignalSource::BlockSparse(cfg.signal)
        }
    };
    let n = source.len();
    let algos = cfg
        .algos
        .iter()
        .map(|&a| resolve_topology(a, n, cfg.grid, cfg.synthetic, cfg.adjacency.as_deref()))
        .collect::<Result<Vec<_>>>()?;
    let mut sc = SweepConfig::new(source);
    sc.ratios = cfg.ratios.clone();
    sc.trials = cfg.trials;
    sc.snr_db = cfg.snr_db;
    sc.algos = algos;
    sc.base_seed = cfg.seed;
    sc.solver = cfg.solver.clone();
    sc.timing = cfg.timing;
    sc.jobs = cfg.jobs.max(1);
    sc.success_nmse_db = cfg.nmse_threshold_db;
    sc.support_tol = cfg.support_tol;
    Ok(sc)
}

/// Runs a sweep. The aggregate table goes to `cfg.out` or `stdout`; the
/// per-trial table goes to `cfg.trials_out` when set.
pub fn sweep(cfg: &RunConfig, stdout: &mut dyn Write) -> Result<()> {
    let sc = sweep_config(cfg)?;
    let output = run_sweep(&sc)?;
    let table = aggregates_csv(&output.aggregates);
    match &cfg.out {
        Some(path) => io::write_bytes(path, table.as_bytes())?,
        None => stdout.write_all(table.as_bytes()).map_err(out_err)?,
    }
    if let Some(path) = &cfg.trials_out {
        io::write_bytes(path, trials_csv(&output.records).as_bytes())?;
    }
    Ok(())
}

/// Where the image subcommand gets its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub enum ImageSource {
    Pgm(PathBuf),
    Synthetic { rows: usize, cols: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageReport {
    pub rows: usize,
    pub cols: usize,
    pub m: usize,
    pub ratio: f64,
    pub algo: String,
    pub iterations: usize,
    /// `converged`, `max_iterations`, `diverged` or `excluded` (all-zero image).
    pub status: String,
    pub nmse_db: Option<f64>,
    pub pattern_success: bool,
    pub estimate: Vec<f64>,
}

pub const IMAGE_HEADER: &str = "rows,cols,m,ratio,algo,iterations,status,nmse_db,pattern_success";

impl ImageReport {
    pub fn csv(&self) -> String {
        format!(
            "{IMAGE_HEADER}\n{},{},{},{},{},{},{},{},{}\n",
            self.rows,
            self.cols,
            self.m,
            fmt_f64(self.ratio),
            self.algo,
            self.iterations,
            self.status,
            opt(self.nmse_db),
            self.pattern_success,
        )
    }
}

/// Recovers one image from random Gaussian measurements at the first ratio
/// in `cfg.ratios`. Draws use the stream of trial 0 at ratio index 0, in the
/// order image, matrix, noise.
pub fn image(cfg: &RunConfig, source: &ImageSource, stdout: &mut dyn Write) -> Result<ImageReport> {
    let ratio = *cfg
        .ratios
        .first()
        .ok_or_else(|| CliError::Usage("no measurement ratio given".into()))?;
    if !(ratio > 0.0 && ratio.is_finite()) {
        return Err(CliError::Usage(format!("measurement ratio must be positive, got {ratio}")));
    }
    let mut rng = stream_rng(cfg.seed, trial_stream(0, 0));
    let (rows, cols, x, scale) = match source {
        ImageSource::Pgm(path) => {
            let img = pgm::read(path)?;
            (img.height, img.width, img.to_unit(), 1.0)
        }
        &ImageSource::Synthetic { rows, cols } => {
            let img = generate_cluster_image(rows, cols, cfg.sparsity, cfg.signal.mu0, cfg.signal.tau0, &mut rng)?;
            let max = img.pixels.iter().fold(0.0f64, |a, &b| a.max(b));
            (rows, cols, img.pixels, if max > 0.0 { max } else { 1.0 })
        }
    };
    let n = rows * cols;
    let m = measurements_for(ratio, n);
    let a = generate_matrix(m, n, &mut rng);
    let mut y = a.matvec(&x);
    if let Some(snr) = cfg.snr_db {
        if y.iter().any(|&v| v != 0.0) {
            let w = noise_at_snr(&y, snr, &mut rng);
            y.iter_mut().zip(&w).for_each(|(v, e)| *v += e);
        }
    }
    let mm = MeasurementModel::new(a, y)?;
    let mut solver = cfg.solver.clone();
    solver.topology = resolve_topology(cfg.algo, n, cfg.grid, Some((rows, cols)), cfg.adjacency.as_deref())?;
    let res = solve(&mm, &solver)?;

    let (status, nmse, pattern) = match nmse_db(&res.xhat, &x) {
        Ok(db) => (res.status.as_str().to_string(), Some(db), pattern_match(&res.xhat, &x, cfg.support_tol)),
        Err(nnspl::Error::ZeroSignal) => ("excluded".to_string(), None, false),
        Err(e) => return Err(e.into()),
    };
    let report = ImageReport {
        rows,
        cols,
        m,
        ratio,
        algo: solver.topology.label().to_string(),
        iterations: res.iterations,
        status,
        nmse_db: nmse,
        pattern_success: pattern,
        estimate: res.xhat,
    };

    if let Some(path) = &cfg.out {
        pgm::write(path, &GrayImage::from_values(cols, rows, &report.estimate, scale))?;
    }
    let csv = report.csv();
    if let Some(path) = &cfg.metrics_out {
        io::write_bytes(path, csv.as_bytes())?;
    }
    stdout.write_all(csv.as_bytes()).map_err(out_err)?;
    if report.status == "excluded" {
        eprintln!("note: the image is all zero; NMSE is undefined and the run is excluded");
    }
    if res.status == SolveStatus::Diverged {
        return Err(CliError::Diverged { iterations: res.iterations });
    }
    Ok(report)
}
