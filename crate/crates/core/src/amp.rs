//! The message passing loop.
//!
//! One iteration runs, in order:
//!
//! 1. factor-node update: `V_a = Σ_i A_ai² ν_i`,
//!    `Z_a = Σ_i A_ai x̂_i - V_a / (Δ0 + V_a_prev) · (y_a - Z_a_prev)`;
//! 2. variable-node update: `Σ_i = [Σ_a A_ai² / (Δ0 + V_a)]⁻¹`,
//!    `R_i = x̂_i + Σ_i Σ_a A_ai (y_a - Z_a) / (Δ0 + V_a)`, followed by the
//!    scalar denoiser `x̂_i = g_a(R_i, Σ_i)`, `ν_i = g_c(R_i, Σ_i)`;
//! 3. nearest-neighbor update of the sparse ratios;
//! 4. EM updates of `μ0`, `τ0` and `Δ0`.
//!
//! The loop stops after `t_max` iterations or once
//! `‖x̂_new - x̂_old‖ < eps_toc ‖x̂_old‖`.

use crate::denoiser::{posterior_batch_into, PosteriorBatch};
use crate::error::{Error, Result};
use crate::learning::{init_hyperparams, update_lambda_into, update_noise, update_slab, NeighborTopology};
use crate::model::{norm_sq, Hyperparams, MeasurementModel, SolverConfig};

/// Estimates larger than this in norm are treated as divergence.
pub const DIVERGENCE_NORM: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct AmpState {
    /// Iteration counter, starting at 1.
    pub t: usize,
    /// Posterior means `x̂`.
    pub xhat: Vec<f64>,
    /// Posterior variances `ν`.
    pub nu: Vec<f64>,
    /// Factor-node variances `V_a`.
    pub v: Vec<f64>,
    /// Onsager-corrected factor-node means `Z_a`.
    pub z: Vec<f64>,
    /// Effective scalar-channel noise variances `Σ_i`.
    pub sigma: Vec<f64>,
    /// Scalar-channel observations `R_i`.
    pub r: Vec<f64>,
    /// Posterior support probabilities `π_i`.
    pub pi: Vec<f64>,
    /// Active-component posterior means `m_i`.
    pub m_post: Vec<f64>,
    /// Active-component posterior variances `V_i`.
    pub v_post: Vec<f64>,
}

impl AmpState {
    pub fn is_finite(&self) -> bool {
        [&self.xhat, &self.nu, &self.v, &self.z, &self.sigma, &self.r, &self.pi, &self.m_post, &self.v_post]
            .iter()
            .all(|v| v.iter().all(|x| x.is_finite()))
    }
}

/// Starts from the prior moments: `x̂ = λ μ0`, `ν = λ (μ0² + τ0) - (λ μ0)²`,
/// with `V = 1` and `Z = y` for the previous factor-node values.
pub fn init_state(mm: &MeasurementModel, hp: &Hyperparams) -> AmpState {
    let n = mm.n();
    let xhat: Vec<f64> = hp.lambda.iter().map(|&l| l * hp.mu0).collect();
    let nu = hp
        .lambda
        .iter()
        .zip(&xhat)
        .map(|(&l, &x)| l * (hp.mu0 * hp.mu0 + hp.tau0) - x * x)
        .collect();
    AmpState {
        t: 1,
        xhat,
        nu,
        v: vec![1.0; mm.m()],
        z: mm.y().to_vec(),
        sigma: vec![0.0; n],
        r: vec![0.0; n],
        pi: hp.lambda.clone(),
        m_post: vec![hp.mu0; n],
        v_post: vec![hp.tau0; n],
    }
}

const LANES: usize = 4;

/// `(Σ a² ν, Σ a x)` over one row, with independent partial sums per lane.
#[inline]
fn row_sums(a: &[f64], nu: &[f64], x: &[f64]) -> (f64, f64) {
    let mut v = [0.0; LANES];
    let mut z = [0.0; LANES];
    let (ac, ar) = a.split_at(a.len() - a.len() % LANES);
    let (nc, nr) = nu.split_at(ac.len());
    let (xc, xr) = x.split_at(ac.len());
    for ((a4, n4), x4) in ac.chunks_exact(LANES).zip(nc.chunks_exact(LANES)).zip(xc.chunks_exact(LANES)) {
        for k in 0..LANES {
            v[k] += a4[k] * a4[k] * n4[k];
            z[k] += a4[k] * x4[k];
        }
    }
    let mut v_sum = (v[0] + v[1]) + (v[2] + v[3]);
    let mut z_sum = (z[0] + z[1]) + (z[2] + z[3]);
    for ((&aa, &n), &xx) in ar.iter().zip(nr).zip(xr) {
        v_sum += aa * aa * n;
        z_sum += aa * xx;
    }
    (v_sum, z_sum)
}

#[inline]
fn factor_row(state: &mut AmpState, coeffs: &[f64], y: f64, row: usize, delta0: f64) {
    let (v_new, ax) = row_sums(coeffs, &state.nu, &state.xhat);
    let onsager = v_new / (delta0 + state.v[row]) * (y - state.z[row]);
    state.z[row] = ax - onsager;
    state.v[row] = v_new;
}

#[inline]
fn accumulate_row(coeffs: &[f64], w: f64, e: f64, precision: &mut [f64], correlation: &mut [f64]) {
    for ((p, c), &aa) in precision.iter_mut().zip(correlation.iter_mut()).zip(coeffs) {
        *p += aa * aa * w;
        *c += aa * e;
    }
}

fn finish_variable(state: &mut AmpState, precision: &[f64], correlation: &[f64]) -> Result<()> {
    for i in 0..precision.len() {
        if precision[i] == 0.0 {
            return Err(Error::DegenerateMatrix { column: i });
        }
        let s = 1.0 / precision[i];
        state.sigma[i] = s;
        state.r[i] = state.xhat[i] + s * correlation[i];
    }
    Ok(())
}

/// Step 1: replaces `state.v`, `state.z` by the current iteration's values.
pub fn factor_update(state: &mut AmpState, mm: &MeasurementModel, hp: &Hyperparams) {
    let a = mm.a();
    for row in 0..a.rows() {
        factor_row(state, a.row(row), mm.y()[row], row, hp.delta0);
    }
}

/// Step 2 (first half): computes `Σ` and `R` from the current `V`, `Z`.
pub fn variable_update(state: &mut AmpState, mm: &MeasurementModel, hp: &Hyperparams) -> Result<()> {
    let a = mm.a();
    let y = mm.y();
    let n = a.cols();
    let mut precision = vec![0.0; n];
    let mut correlation = vec![0.0; n];
    for (row, &yr) in y.iter().enumerate() {
        let w = 1.0 / (hp.delta0 + state.v[row]);
        let e = (yr - state.z[row]) * w;
        accumulate_row(a.row(row), w, e, &mut precision, &mut correlation);
    }
    finish_variable(state, &precision, &correlation)
}

/// Steps 1 and 2 in a single sweep over the rows of `A`. Row `a` of the
/// variable-node sums only needs `V_a` and `Z_a`, so each row is used twice
/// while it is in cache. Bit-identical to `factor_update` followed by
/// `variable_update`.
fn factor_variable_update(state: &mut AmpState, mm: &MeasurementModel, hp: &Hyperparams) -> Result<bool> {
    let a = mm.a();
    let y = mm.y();
    let n = a.cols();
    let mut precision = vec![0.0; n];
    let mut correlation = vec![0.0; n];
    for (row, &yr) in y.iter().enumerate() {
        let coeffs = a.row(row);
        factor_row(state, coeffs, yr, row, hp.delta0);
        let w = 1.0 / (hp.delta0 + state.v[row]);
        let e = (yr - state.z[row]) * w;
        accumulate_row(coeffs, w, e, &mut precision, &mut correlation);
    }
    if !all_finite(&state.v) || !all_finite(&state.z) {
        return Ok(false);
    }
    finish_variable(state, &precision, &correlation)?;
    Ok(true)
}

/// Step 2 (second half): scalar denoising of every channel, with damping
/// `x̂ ← β g_a + (1 - β) x̂` (and likewise for `ν`).
pub fn denoise(state: &mut AmpState, hp: &Hyperparams, damping: f64) -> Result<()> {
    let mut post = PosteriorBatch {
        pi: std::mem::take(&mut state.pi),
        m: std::mem::take(&mut state.m_post),
        v: std::mem::take(&mut state.v_post),
        ga: Vec::new(),
        gc: Vec::new(),
    };
    post.ga = vec![0.0; state.r.len()];
    post.gc = vec![0.0; state.r.len()];
    posterior_batch_into(&state.r, &state.sigma, hp.mu0, hp.tau0, &hp.lambda, &mut post)?;
    if damping == 1.0 {
        state.xhat.copy_from_slice(&post.ga);
        state.nu.copy_from_slice(&post.gc);
    } else {
        let keep = 1.0 - damping;
        for (x, &g) in state.xhat.iter_mut().zip(&post.ga) {
            *x = damping * g + keep * *x;
        }
        for (x, &g) in state.nu.iter_mut().zip(&post.gc) {
            *x = damping * g + keep * *x;
        }
    }
    state.pi = post.pi;
    state.m_post = post.m;
    state.v_post = post.v;
    Ok(())
}

/// Steps 3 and 4: sparse ratios from the neighbor rule, then `μ0`, `τ0`, `Δ0`.
/// The noise update uses this iteration's `Z`, `V` and the old `Δ0`.
pub fn learn_hyperparams(
    state: &AmpState,
    mm: &MeasurementModel,
    hp: &mut Hyperparams,
    topo: &NeighborTopology,
    lambda_eps: f64,
) -> Result<()> {
    update_lambda_into(&state.pi, topo, lambda_eps, &mut hp.lambda)?;
    let (mu, tau) = update_slab(&state.pi, &state.m_post, &state.v_post, hp.mu0, hp.tau0);
    let delta = update_noise(mm.y(), &state.z, &state.v, hp.delta0);
    hp.mu0 = mu;
    hp.tau0 = tau;
    hp.delta0 = delta;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Step {
    Continue,
    Diverged,
}

fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// One full iteration. Returns [`Step::Diverged`] as soon as a non-finite
/// quantity appears; the state is then left partially updated.
pub fn iterate_once(
    state: &mut AmpState,
    mm: &MeasurementModel,
    hp: &mut Hyperparams,
    topo: &NeighborTopology,
    cfg: &SolverConfig,
) -> Result<Step> {
    if !factor_variable_update(state, mm, hp)? {
        return Ok(Step::Diverged);
    }
    if !all_finite(&state.sigma) || !all_finite(&state.r) || state.sigma.iter().any(|&s| s <= 0.0) {
        return Ok(Step::Diverged);
    }
    denoise(state, hp, cfg.damping)?;
    learn_hyperparams(state, mm, hp, topo, cfg.lambda_eps)?;
    state.t += 1;
    let hp_ok = hp.mu0.is_finite() && hp.tau0.is_finite() && hp.delta0.is_finite();
    if !hp_ok || !state.is_finite() {
        return Ok(Step::Diverged);
    }
    Ok(Step::Continue)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    MaxIterations,
    Diverged,
}

impl SolveStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SolveStatus::Converged => "converged",
            SolveStatus::MaxIterations => "max_iterations",
            SolveStatus::Diverged => "diverged",
        }
    }
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryPoint {
    pub relative_change: f64,
    pub delta0: f64,
    pub mean_lambda: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    /// Final estimate. On divergence, the last finite iterate.
    pub xhat: Vec<f64>,
    pub hp_final: Hyperparams,
    pub iterations: usize,
    pub status: SolveStatus,
    pub trajectory: Option<Vec<TrajectoryPoint>>,
}

/// Runs the full algorithm from the default initialization.
pub fn solve(mm: &MeasurementModel, cfg: &SolverConfig) -> Result<SolveResult> {
    cfg.validate()?;
    let topo = NeighborTopology::build(&cfg.topology, mm.n())?;
    let hp = init_hyperparams(mm, cfg)?;
    solve_from(mm, cfg, &topo, hp)
}

/// Runs the loop from caller-supplied initial hyperparameters.
pub fn solve_from(
    mm: &MeasurementModel,
    cfg: &SolverConfig,
    topo: &NeighborTopology,
    mut hp: Hyperparams,
) -> Result<SolveResult> {
    if topo.len() != mm.n() || hp.lambda.len() != mm.n() {
        return Err(Error::Dimension {
            what: "topology / sparse ratio length",
            expected: mm.n(),
            got: if topo.len() != mm.n() { topo.len() } else { hp.lambda.len() },
        });
    }
    let mut state = init_state(mm, &hp);
    let mut trajectory = cfg.record_trajectory.then(Vec::new);
    let mut prev = state.xhat.clone();
    let mut prev_hp = hp.clone();
    let mut status = SolveStatus::MaxIterations;
    let mut iterations = 0;

    while iterations < cfg.t_max {
        prev.copy_from_slice(&state.xhat);
        prev_hp.clone_from(&hp);
        let step = iterate_once(&mut state, mm, &mut hp, topo, cfg)?;
        iterations += 1;
        let new_sq = norm_sq(&state.xhat);
        if step == Step::Diverged || !(new_sq.sqrt() <= DIVERGENCE_NORM) {
            state.xhat.copy_from_slice(&prev);
            hp = prev_hp;
            status = SolveStatus::Diverged;
            break;
        }
        let prev_norm = norm_sq(&prev).sqrt();
        let change: f64 = state
            .xhat
            .iter()
            .zip(&prev)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        if let Some(traj) = trajectory.as_mut() {
            traj.push(TrajectoryPoint {
                relative_change: if prev_norm > 0.0 { change / prev_norm } else { change },
                delta0: hp.delta0,
                mean_lambda: hp.mean_lambda(),
            });
        }
        let converged = if prev_norm > 0.0 {
            change < cfg.eps_toc * prev_norm
        } else {
            new_sq == 0.0
        };
        if converged {
            status = SolveStatus::Converged;
            break;
        }
    }

    Ok(SolveResult {
        xhat: state.xhat,
        hp_final: hp,
        iterations,
        status,
        trajectory,
    })
}
