//! Experiment harness: clustered sparse test signals, recovery metrics and
//! sweeps over the measurement ratio `M/N`.

use std::time::Instant;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::amp::{solve, SolveStatus};
use crate::error::{Error, Result};
use crate::learning::TopologyKind;
use crate::model::{generate_matrix, norm_sq, stream_rng, MeasurementModel, SolverConfig};

/// A trial succeeds when its NMSE is below this level.
pub const SUCCESS_NMSE_DB: f64 = -60.0;
/// Coefficients smaller than this in magnitude count as zero.
pub const SUPPORT_TOL: f64 = 1e-4;
/// Reported NMSE is never below this (exact recovery would be `-inf`).
pub const NMSE_FLOOR_DB: f64 = -400.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockSparseSpec {
    pub n: usize,
    /// Number of nonzeros.
    pub k: usize,
    /// Number of blocks.
    pub l: usize,
    pub mu0: f64,
    pub tau0: f64,
}

impl Default for BlockSparseSpec {
    fn default() -> Self {
        Self { n: 100, k: 25, l: 4, mu0: 3.0, tau0: 1.0 }
    }
}

impl BlockSparseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(1 <= self.l && self.l <= self.k && self.k <= self.n) {
            return Err(Error::Config(format!(
                "block spec needs 1 <= L <= K <= N, got N={} K={} L={}",
                self.n, self.k, self.l
            )));
        }
        if !(self.tau0 >= 0.0 && self.tau0.is_finite() && self.mu0.is_finite()) {
            return Err(Error::Config("block spec needs finite mu0 and tau0 >= 0".into()));
        }
        let needed = self.k + self.l - 1;
        if needed > self.n {
            return Err(Error::InfeasiblePlacement { needed, n: self.n });
        }
        Ok(())
    }
}

/// Uniformly random composition of `total` into `parts` positive integers.
fn random_composition<R: Rng + ?Sized>(total: usize, parts: usize, rng: &mut R) -> Vec<usize> {
    debug_assert!(parts >= 1 && parts <= total);
    let mut cuts: Vec<usize> = sample(rng, total - 1, parts - 1).into_iter().map(|c| c + 1).collect();
    cuts.sort_unstable();
    let mut sizes = Vec::with_capacity(parts);
    let mut last = 0;
    for c in cuts {
        sizes.push(c - last);
        last = c;
    }
    sizes.push(total - last);
    sizes
}

/// Uniformly random weak composition of `total` into `parts` nonnegative integers.
fn random_weak_composition<R: Rng + ?Sized>(total: usize, parts: usize, rng: &mut R) -> Vec<usize> {
    random_composition(total + parts, parts, rng).into_iter().map(|s| s - 1).collect()
}

/// `K` nonzeros in `L` separated blocks of random sizes at random positions,
/// with values drawn i.i.d. from `N(μ0, τ0)`.
///
/// Block sizes are a uniform composition of `K`. Positions are uniform over
/// all placements in which no two blocks touch, so the support always has
/// exactly `L` maximal runs.
pub fn generate_block_sparse<R: Rng + ?Sized>(spec: &BlockSparseSpec, rng: &mut R) -> Result<Vec<f64>> {
    spec.validate()?;
    let sizes = random_composition(spec.k, spec.l, rng);
    // Uniform over valid placements of labelled blocks: a uniform spatial
    // order plus uniformly distributed slack zeros, with one mandatory zero
    // between consecutive blocks.
    let mut order: Vec<usize> = (0..spec.l).collect();
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let slack = spec.n - spec.k - (spec.l - 1);
    let gaps = random_weak_composition(slack, spec.l + 1, rng);
    let slab = Normal::new(spec.mu0, spec.tau0.sqrt()).expect("validated slab");

    let mut x = vec![0.0; spec.n];
    let mut pos = gaps[0];
    for (rank, &b) in order.iter().enumerate() {
        for v in &mut x[pos..pos + sizes[b]] {
            *v = slab.sample(rng);
        }
        pos += sizes[b];
        if rank + 1 < spec.l {
            pos += 1 + gaps[rank + 1];
        }
    }
    Ok(x)
}

/// Number of maximal runs of nonzero entries.
pub fn count_blocks(x: &[f64]) -> usize {
    let mut runs = 0;
    let mut inside = false;
    for &v in x {
        let nz = v != 0.0;
        if nz && !inside {
            runs += 1;
        }
        inside = nz;
    }
    runs
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterImage {
    pub rows: usize,
    pub cols: usize,
    /// Row-major pixel values.
    pub pixels: Vec<f64>,
    /// Realized fraction of nonzero pixels.
    pub fraction: f64,
}

/// Synthetic 2D clustered sparse image: a few seed pixels grown into random
/// 4-connected blobs until the nonzero fraction reaches `target_sparsity`.
/// Nonzero values are i.i.d. `N(μ0, τ0)`.
pub fn generate_cluster_image<R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    target_sparsity: f64,
    mu0: f64,
    tau0: f64,
    rng: &mut R,
) -> Result<ClusterImage> {
    if rows == 0 || cols == 0 {
        return Err(Error::Config("image dimensions must be positive".into()));
    }
    if !(target_sparsity > 0.0 && target_sparsity < 1.0) {
        return Err(Error::Config(format!(
            "target sparsity must lie in (0, 1), got {target_sparsity}"
        )));
    }
    let slab = Normal::new(mu0, tau0.sqrt()).map_err(|e| Error::Config(format!("slab: {e}")))?;
    let n = rows * cols;
    let target = ((target_sparsity * n as f64).round() as usize).clamp(1, n);
    let clusters = (((target as f64).sqrt() / 4.0).round() as usize).clamp(1, (target / 2).max(1));

    let mut active = vec![false; n];
    let mut in_frontier = vec![false; n];
    let mut frontier: Vec<usize> = Vec::new();
    let mut count = 0;

    let neighbors = |p: usize| {
        let (q, l) = (p / cols, p % cols);
        let mut nb = Vec::with_capacity(4);
        if l > 0 {
            nb.push(p - 1);
        }
        if l + 1 < cols {
            nb.push(p + 1);
        }
        if q > 0 {
            nb.push(p - cols);
        }
        if q + 1 < rows {
            nb.push(p + cols);
        }
        nb
    };
    let activate = |p: usize, active: &mut [bool], frontier: &mut Vec<usize>, in_frontier: &mut [bool]| {
        active[p] = true;
        for q in neighbors(p) {
            if !active[q] && !in_frontier[q] {
                in_frontier[q] = true;
                frontier.push(q);
            }
        }
    };

    for seed in sample(rng, n, clusters) {
        if count >= target {
            break;
        }
        if active[seed] {
            continue;
        }
        activate(seed, &mut active, &mut frontier, &mut in_frontier);
        count += 1;
        // Pair each seed with a neighbor so no pixel ends up isolated.
        let free: Vec<usize> = neighbors(seed).into_iter().filter(|&q| !active[q]).collect();
        if count < target && !free.is_empty() {
            let q = free[rng.random_range(0..free.len())];
            activate(q, &mut active, &mut frontier, &mut in_frontier);
            count += 1;
        }
    }
    while count < target {
        if frontier.is_empty() {
            break;
        }
        let idx = rng.random_range(0..frontier.len());
        let p = frontier.swap_remove(idx);
        if active[p] {
            continue;
        }
        activate(p, &mut active, &mut frontier, &mut in_frontier);
        count += 1;
    }

    let pixels: Vec<f64> = active
        .iter()
        .map(|&on| if on { slab.sample(rng) } else { 0.0 })
        .collect();
    let fraction = pixels.iter().filter(|&&v| v != 0.0).count() as f64 / n as f64;
    Ok(ClusterImage { rows, cols, pixels, fraction })
}

/// `20 log10(‖x̂ - x‖ / ‖x‖)`, floored at [`NMSE_FLOOR_DB`].
pub fn nmse_db(xhat: &[f64], x: &[f64]) -> Result<f64> {
    if xhat.len() != x.len() {
        return Err(Error::Dimension { what: "estimate length", expected: x.len(), got: xhat.len() });
    }
    let ref_sq = norm_sq(x);
    if ref_sq == 0.0 {
        return Err(Error::ZeroSignal);
    }
    let err_sq: f64 = xhat.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
    if err_sq == 0.0 {
        return Ok(NMSE_FLOOR_DB);
    }
    Ok((10.0 * (err_sq / ref_sq).log10()).max(NMSE_FLOOR_DB))
}

/// True iff both vectors have the same support at magnitude threshold `tol`.
pub fn pattern_match(xhat: &[f64], x: &[f64], tol: f64) -> bool {
    assert_eq!(xhat.len(), x.len(), "pattern_match dimensions");
    xhat.iter().zip(x).all(|(a, b)| (a.abs() >= tol) == (b.abs() >= tol))
}

/// `20 log10(‖A x‖ / ‖w‖)`.
pub fn realized_snr_db(ax: &[f64], w: &[f64]) -> f64 {
    10.0 * (norm_sq(ax) / norm_sq(w)).log10()
}

/// Gaussian noise rescaled so that `‖w‖ = ‖A x‖ · 10^(-snr/20)` exactly.
pub fn noise_at_snr<R: Rng + ?Sized>(ax: &[f64], snr_db: f64, rng: &mut R) -> Vec<f64> {
    let mut w: Vec<f64> = (0..ax.len()).map(|_| rng.sample(StandardNormal)).collect();
    let target = norm_sq(ax).sqrt() * 10f64.powf(-snr_db / 20.0);
    let scale = target / norm_sq(&w).sqrt();
    w.iter_mut().for_each(|v| *v *= scale);
    w
}

/// Where the ground-truth signals of a sweep come from.
#[derive(Debug, Clone, PartialEq)]
pub enum SignalSource {
    BlockSparse(BlockSparseSpec),
    ClusterImage { rows: usize, cols: usize, sparsity: f64, mu0: f64, tau0: f64 },
    /// The same signal in every trial (e.g. a loaded image).
    Fixed(Vec<f64>),
}

impl SignalSource {
    pub fn len(&self) -> usize {
        match self {
            SignalSource::BlockSparse(spec) => spec.n,
            SignalSource::ClusterImage { rows, cols, .. } => rows * cols,
            SignalSource::Fixed(x) => x.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<f64>> {
        match self {
            SignalSource::BlockSparse(spec) => generate_block_sparse(spec, rng),
            &SignalSource::ClusterImage { rows, cols, sparsity, mu0, tau0 } => {
                Ok(generate_cluster_image(rows, cols, sparsity, mu0, tau0, rng)?.pixels)
            }
            SignalSource::Fixed(x) => Ok(x.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    /// Measurement ratios `M/N`.
    pub ratios: Vec<f64>,
    pub trials: usize,
    pub source: SignalSource,
    /// `None` for noiseless measurements.
    pub snr_db: Option<f64>,
    pub algos: Vec<TopologyKind>,
    pub base_seed: u64,
    /// Template solver settings; the topology is taken from `algos`.
    pub solver: SolverConfig,
    /// Measure wall-clock time per solve. Timings make output nondeterministic.
    pub timing: bool,
    /// Worker threads; 0 or 1 runs on the calling thread.
    pub jobs: usize,
    /// Keep every estimate in its record.
    pub keep_estimates: bool,
    pub success_nmse_db: f64,
    pub support_tol: f64,
}

impl SweepConfig {
    pub fn new(source: SignalSource) -> Self {
        Self {
            ratios: (5..=12).map(|i| (i * 5) as f64 / 100.0).collect(),
            trials: 100,
            source,
            snr_db: None,
            algos: vec![TopologyKind::Chain1D, TopologyKind::Independent],
            base_seed: 0,
            solver: SolverConfig::default(),
            timing: false,
            jobs: 1,
            keep_estimates: false,
            success_nmse_db: SUCCESS_NMSE_DB,
            support_tol: SUPPORT_TOL,
        }
    }
}

/// Stream index of trial `trial` at ratio `ratio_index`. Every algorithm
/// sees the same problem instance.
pub fn trial_stream(ratio_index: usize, trial: usize) -> u64 {
    ((ratio_index as u64) << 32) | trial as u64
}

/// Number of measurements for ratio `M/N` at signal length `n` (at least 1).
pub fn measurements_for(ratio: f64, n: usize) -> usize {
    ((ratio * n as f64).round() as usize).max(1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub ratio_index: usize,
    pub ratio: f64,
    pub trial: usize,
    pub algo_index: usize,
    pub algo: String,
    pub base_seed: u64,
    pub stream: u64,
    pub m: usize,
    pub snr_db: Option<f64>,
    /// `None` when the trial is excluded (zero reference signal) or failed.
    pub nmse_db: Option<f64>,
    pub success: bool,
    pub pattern_success: bool,
    pub iterations: usize,
    pub status: String,
    pub wall_seconds: Option<f64>,
    pub estimate: Option<Vec<f64>>,
}

impl TrialRecord {
    pub fn excluded(&self) -> bool {
        self.status == "excluded"
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub ratio: f64,
    pub algo: String,
    /// Trials that produced a metric.
    pub trials: usize,
    /// Only reported for noiseless sweeps.
    pub success_rate: Option<f64>,
    pub pattern_rate: f64,
    pub mean_nmse_db: f64,
    pub mean_iters: f64,
    pub mean_seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutput {
    pub records: Vec<TrialRecord>,
    pub aggregates: Vec<Aggregate>,
}

fn run_trial(cfg: &SweepConfig, ratio_index: usize, trial: usize) -> Vec<TrialRecord> {
    let ratio = cfg.ratios[ratio_index];
    let stream = trial_stream(ratio_index, trial);
    let n = cfg.source.len();
    let m = measurements_for(ratio, n);
    let base = |algo_index: usize, algo: &TopologyKind| TrialRecord {
        ratio_index,
        ratio,
        trial,
        algo_index,
        algo: algo.label().to_string(),
        base_seed: cfg.base_seed,
        stream,
        m,
        snr_db: cfg.snr_db,
        nmse_db: None,
        success: false,
        pattern_success: false,
        iterations: 0,
        status: String::new(),
        wall_seconds: None,
        estimate: None,
    };
    let failed = |msg: String| {
        cfg.algos
            .iter()
            .enumerate()
            .map(|(i, algo)| TrialRecord { status: format!("error: {msg}"), ..base(i, algo) })
            .collect::<Vec<_>>()
    };

    let mut rng = stream_rng(cfg.base_seed, stream);
    let x = match cfg.source.draw(&mut rng) {
        Ok(x) => x,
        Err(e) => return failed(e.to_string()),
    };
    let a = generate_matrix(m, n, &mut rng);
    let mut y = a.matvec(&x);
    if let Some(snr) = cfg.snr_db {
        if norm_sq(&y) > 0.0 {
            let w = noise_at_snr(&y, snr, &mut rng);
            y.iter_mut().zip(&w).for_each(|(v, e)| *v += e);
        }
    }
    let mm = match MeasurementModel::new(a, y) {
        Ok(mm) => mm,
        Err(e) => return failed(e.to_string()),
    };

    cfg.algos
        .iter()
        .enumerate()
        .map(|(algo_index, algo)| {
            let solver = SolverConfig { topology: algo.clone(), ..cfg.solver.clone() };
            let start = cfg.timing.then(Instant::now);
            let result = solve(&mm, &solver);
            let wall_seconds = start.map(|s| s.elapsed().as_secs_f64());
            let mut rec = TrialRecord { wall_seconds, ..base(algo_index, algo) };
            match result {
                Err(e) => rec.status = format!("error: {e}"),
                Ok(res) => {
                    rec.iterations = res.iterations;
                    match nmse_db(&res.xhat, &x) {
                        Ok(db) => {
                            rec.nmse_db = Some(db);
                            rec.success = db < cfg.success_nmse_db && res.status != SolveStatus::Diverged;
                            rec.pattern_success = pattern_match(&res.xhat, &x, cfg.support_tol);
                            rec.status = res.status.as_str().to_string();
                        }
                        Err(_) => rec.status = "excluded".to_string(),
                    }
                    if cfg.keep_estimates {
                        rec.estimate = Some(res.xhat);
                    }
                }
            }
            rec
        })
        .collect()
}

/// Aggregates records per `(ratio, algo)`, in ratio then algorithm order.
pub fn aggregate(records: &[TrialRecord], noiseless: bool) -> Vec<Aggregate> {
    let mut keys: Vec<(usize, usize)> = records.iter().map(|r| (r.ratio_index, r.algo_index)).collect();
    keys.sort_unstable();
    keys.dedup();
    keys.into_iter()
        .map(|(ri, ai)| {
            let mut group: Vec<&TrialRecord> = records
                .iter()
                .filter(|r| r.ratio_index == ri && r.algo_index == ai && r.nmse_db.is_some())
                .collect();
            group.sort_by_key(|r| r.trial);
            let first = records.iter().find(|r| r.ratio_index == ri && r.algo_index == ai).expect("key from records");
            let count = group.len();
            let mean = |f: &dyn Fn(&TrialRecord) -> f64| {
                if count == 0 {
                    f64::NAN
                } else {
                    group.iter().map(|r| f(r)).sum::<f64>() / count as f64
                }
            };
            let frac = |f: &dyn Fn(&TrialRecord) -> bool| mean(&|r| if f(r) { 1.0 } else { 0.0 });
            let mean_seconds = if group.iter().all(|r| r.wall_seconds.is_some()) && count > 0 {
                Some(mean(&|r| r.wall_seconds.unwrap_or(0.0)))
            } else {
                None
            };
            Aggregate {
                ratio: first.ratio,
                algo: first.algo.clone(),
                trials: count,
                success_rate: noiseless.then(|| frac(&|r| r.success)),
                pattern_rate: frac(&|r| r.pattern_success),
                mean_nmse_db: mean(&|r| r.nmse_db.unwrap_or(f64::NAN)),
                mean_iters: mean(&|r| r.iterations as f64),
                mean_seconds,
            }
        })
        .collect()
}

/// Runs every `(ratio, trial, algorithm)` combination. Per-trial failures
/// are recorded, never propagated.
pub fn run_sweep(cfg: &SweepConfig) -> Result<SweepOutput> {
    if cfg.algos.is_empty() {
        return Err(Error::Config("no algorithms selected".into()));
    }
    if cfg.ratios.iter().any(|&r| !(r > 0.0 && r.is_finite())) {
        return Err(Error::Config("measurement ratios must be positive".into()));
    }
    if !(cfg.support_tol >= 0.0) || !cfg.success_nmse_db.is_finite() {
        return Err(Error::Config("invalid success threshold or support tolerance".into()));
    }
    if cfg.source.is_empty() {
        return Err(Error::Config("empty signal".into()));
    }
    cfg.solver.validate()?;

    let tasks: Vec<(usize, usize)> = (0..cfg.ratios.len())
        .flat_map(|ri| (0..cfg.trials).map(move |t| (ri, t)))
        .collect();
    let mut records: Vec<TrialRecord> = if cfg.jobs > 1 {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.jobs)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| tasks.par_iter().flat_map_iter(|&(ri, t)| run_trial(cfg, ri, t)).collect())
    } else {
        tasks.iter().flat_map(|&(ri, t)| run_trial(cfg, ri, t)).collect()
    };
    records.sort_by_key(|r| (r.ratio_index, r.algo_index, r.trial));
    let aggregates = aggregate(&records, cfg.snr_db.is_none());
    Ok(SweepOutput { records, aggregates })
}
