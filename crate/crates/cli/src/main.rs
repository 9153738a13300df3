use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use nnspl_cli::commands::{self, ImageSource};
use nnspl_cli::config::RunConfig;
use nnspl_cli::error::{CliError, Result};

/// Sparse recovery by approximate message passing with nearest-neighbor
/// sparsity pattern learning.
///
/// Exit codes: 0 success, 1 divergence, 2 usage or input error, 3 I/O error.
#[derive(Parser)]
#[command(name = "nnspl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Configuration file of `key = value` lines; flags override it.
    #[arg(long, short = 'c', global = true)]
    config: Option<PathBuf>,
    /// Base seed for all random draws.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for sweeps.
    #[arg(long, short = 'j', global = true)]
    jobs: Option<usize>,
    /// Sparse ratio topology: nnspl1d, nnspl2d, fullset or indep.
    #[arg(long, global = true)]
    algo: Option<String>,
    /// Output file.
    #[arg(long, short = 'o', global = true)]
    out: Option<PathBuf>,
    /// Adjacency list file (`i: j k` per line) replacing the nnspl topologies.
    #[arg(long, global = true)]
    adjacency: Option<PathBuf>,
    /// Grid dimensions for nnspl2d, as ROWSxCOLS.
    #[arg(long, global = true)]
    grid: Option<String>,
    /// Any configuration key, as KEY=VALUE; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Recover a signal from a matrix file and a measurement file.
    Recover {
        /// Measurement matrix (text or AMPV1 binary).
        matrix: PathBuf,
        /// Measurement vector.
        measurements: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Monte-Carlo sweep over measurement ratios.
    Sweep {
        /// Comma-separated topologies to compare.
        #[arg(long)]
        algos: Option<String>,
        /// Comma-separated measurement ratios M/N.
        #[arg(long)]
        ratios: Option<String>,
        #[arg(long)]
        trials: Option<usize>,
        /// Measurement SNR in dB; noiseless when omitted.
        #[arg(long)]
        snr_db: Option<f64>,
        /// Per-trial CSV output.
        #[arg(long)]
        trials_out: Option<PathBuf>,
        /// Record wall-clock time per solve (makes output nondeterministic).
        #[arg(long)]
        timing: bool,
        /// Use synthetic clustered images of size ROWSxCOLS instead of block-sparse vectors.
        #[arg(long)]
        synthetic: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Recover an 8-bit grayscale image from random measurements.
    Image {
        /// PGM input (P2 or P5).
        #[arg(long, conflicts_with = "synthetic", required_unless_present = "synthetic")]
        input: Option<PathBuf>,
        /// Generate a clustered image of size ROWSxCOLS instead.
        #[arg(long)]
        synthetic: Option<String>,
        /// Target fraction of nonzero pixels for synthetic images.
        #[arg(long)]
        sparsity: Option<f64>,
        /// Measurement ratio M/N.
        #[arg(long)]
        ratio: Option<f64>,
        #[arg(long)]
        snr_db: Option<f64>,
        /// Metrics CSV output.
        #[arg(long)]
        metrics_out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

fn build_config(base: RunConfig, common: &Common, extra: Vec<(&'static str, String)>) -> Result<RunConfig> {
    let mut cfg = base;
    if let Some(path) = &common.config {
        cfg.apply_file(path)?;
    }
    let mut pairs: Vec<(&str, String)> = Vec::new();
    let path = |p: &PathBuf| p.display().to_string();
    if let Some(v) = common.seed {
        pairs.push(("seed", v.to_string()));
    }
    if let Some(v) = common.jobs {
        pairs.push(("jobs", v.to_string()));
    }
    if let Some(v) = &common.algo {
        pairs.push(("algo", v.clone()));
    }
    if let Some(v) = &common.out {
        pairs.push(("out", path(v)));
    }
    if let Some(v) = &common.adjacency {
        pairs.push(("adjacency", path(v)));
    }
    if let Some(v) = &common.grid {
        pairs.push(("grid", v.clone()));
    }
    pairs.extend(extra);
    for kv in &common.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        pairs.push((k.trim(), v.to_string()));
    }
    cfg.apply_overrides(pairs)?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let mut stdout = std::io::stdout().lock();
    match cli.command {
        Command::Recover { matrix, measurements, common } => {
            let cfg = build_config(RunConfig::default(), &common, Vec::new())?;
            commands::recover(&cfg, &matrix, &measurements, &mut stdout)?;
        }
        Command::Sweep { algos, ratios, trials, snr_db, trials_out, timing, synthetic, common } => {
            let mut extra = Vec::new();
            if let Some(v) = algos {
                extra.push(("algos", v));
            }
            if let Some(v) = ratios {
                extra.push(("ratios", v));
            }
            if let Some(v) = trials {
                extra.push(("trials", v.to_string()));
            }
            if let Some(v) = snr_db {
                extra.push(("snr_db", v.to_string()));
            }
            if let Some(v) = trials_out {
                extra.push(("trials_out", v.display().to_string()));
            }
            if timing {
                extra.push(("timing", "true".to_string()));
            }
            if let Some(v) = synthetic {
                extra.push(("synthetic", v));
            }
            let cfg = build_config(RunConfig::default(), &common, extra)?;
            commands::sweep(&cfg, &mut stdout)?;
        }
        Command::Image { input, synthetic, sparsity, ratio, snr_db, metrics_out, common } => {
            let mut extra = Vec::new();
            if let Some(v) = &synthetic {
                extra.push(("synthetic", v.clone()));
            }
            if let Some(v) = sparsity {
                extra.push(("sparsity", v.to_string()));
            }
            if let Some(v) = ratio {
                extra.push(("ratios", v.to_string()));
            }
            if let Some(v) = snr_db {
                extra.push(("snr_db", v.to_string()));
            }
            if let Some(v) = metrics_out {
                extra.push(("metrics_out", v.display().to_string()));
            }
            let cfg = build_config(RunConfig::image_defaults(), &common, extra)?;
            let source = match (input, cfg.synthetic) {
                (Some(path), _) => ImageSource::Pgm(path),
                (None, Some((rows, cols))) => ImageSource::Synthetic { rows, cols },
                (None, None) => return Err(CliError::Usage("image needs --input or --synthetic".into())),
            };
            commands::image(&cfg, &source, &mut stdout)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("nnspl: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
