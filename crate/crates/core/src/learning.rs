//! Hyperparameter learning: neighbor topologies, the nearest-neighbor sparse
//! ratio rule, and the closed-form EM updates of the slab and noise variance.
//!
//! The sparse ratio of coefficient `i` is set to the average posterior support
//! probability over its neighbor set `N(i)`:
//!
//! ```text
//! λ_i ← (1 / |N(i)|) Σ_{j ∈ N(i)} π_j
//! ```
//!
//! Chain and grid neighborhoods exclude `i` itself. The whole-set neighborhood
//! collapses every λ to the common mean (a single learned sparsity level), and
//! the self-only neighborhood gives the plain EM update `λ_i ← π_i`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::{norm_sq, Hyperparams, MeasurementModel, SolverConfig, VAR_FLOOR};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TopologyKind {
    /// `N(i) = {i}`.
    Independent,
    /// `N(i)` = every index, including `i`.
    FullSet,
    /// `N(i) = {i - 1, i + 1}` clipped to the signal.
    Chain1D,
    /// 4-neighborhood on a row-major `rows × cols` grid.
    Grid2D { rows: usize, cols: usize },
    /// Explicit adjacency lists.
    Custom(Vec<Vec<usize>>),
}

impl TopologyKind {
    /// Short name used on the command line and in result files.
    pub fn label(&self) -> &'static str {
        match self {
            TopologyKind::Independent => "indep",
            TopologyKind::FullSet => "fullset",
            TopologyKind::Chain1D => "nnspl1d",
            TopologyKind::Grid2D { .. } => "nnspl2d",
            TopologyKind::Custom(_) => "custom",
        }
    }
}

impl fmt::Display for TopologyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Adjacency {
    Identity,
    All,
    Lists(Vec<Vec<usize>>),
}

/// The map `i ↦ N(i)` for a signal of fixed length.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborTopology {
    kind: TopologyKind,
    n: usize,
    adjacency: Adjacency,
}

impl NeighborTopology {
    pub fn build(kind: &TopologyKind, n: usize) -> Result<Self> {
        let adjacency = match kind {
            TopologyKind::Independent => Adjacency::Identity,
            TopologyKind::FullSet => Adjacency::All,
            TopologyKind::Chain1D => Adjacency::Lists(
                (0..n)
                    .map(|i| {
                        let mut nb = Vec::with_capacity(2);
                        if i > 0 {
                            nb.push(i - 1);
                        }
                        if i + 1 < n {
                            nb.push(i + 1);
                        }
                        nb
                    })
                    .collect(),
            ),
            &TopologyKind::Grid2D { rows, cols } => {
                if rows.checked_mul(cols) != Some(n) {
                    return Err(Error::Topology(format!(
                        "grid {rows}x{cols} does not cover a signal of length {n}"
                    )));
                }
                let mut lists = Vec::with_capacity(n);
                for q in 0..rows {
                    for l in 0..cols {
                        let mut nb = Vec::with_capacity(4);
                        if l > 0 {
                            nb.push(q * cols + l - 1);
                        }
                        if l + 1 < cols {
                            nb.push(q * cols + l + 1);
                        }
                        if q > 0 {
                            nb.push((q - 1) * cols + l);
                        }
                        if q + 1 < rows {
                            nb.push((q + 1) * cols + l);
                        }
                        lists.push(nb);
                    }
                }
                Adjacency::Lists(lists)
            }
            TopologyKind::Custom(lists) => {
                if lists.len() != n {
                    return Err(Error::Topology(format!(
                        "adjacency has {} entries for a signal of length {n}",
                        lists.len()
                    )));
                }
                for (i, nb) in lists.iter().enumerate() {
                    if let Some(&j) = nb.iter().find(|&&j| j >= n) {
                        return Err(Error::Topology(format!("neighbor {j} of {i} is out of range")));
                    }
                    if nb.contains(&i) {
                        return Err(Error::Topology(format!("index {i} lists itself as a neighbor")));
                    }
                }
                Adjacency::Lists(lists.clone())
            }
        };
        Ok(Self {
            kind: kind.clone(),
            n,
            adjacency,
        })
    }

    pub fn kind(&self) -> &TopologyKind {
        &self.kind
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Neighbor indices of `i`, in ascending order for the built-in kinds
    /// except the grid, which lists left, right, up, down.
    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        assert!(i < self.n, "index {i} out of range");
        match &self.adjacency {
            Adjacency::Identity => vec![i],
            Adjacency::All => (0..self.n).collect(),
            Adjacency::Lists(lists) => lists[i].clone(),
        }
    }

    pub fn degree(&self, i: usize) -> usize {
        match &self.adjacency {
            Adjacency::Identity => 1,
            Adjacency::All => self.n,
            Adjacency::Lists(lists) => lists[i].len(),
        }
    }
}

/// Parses the adjacency text format: one line per index, `i: j k l`.
///
/// Blank lines and lines starting with `#` are skipped. Every index in
/// `0..n` must appear exactly once, where `n` is the number of entry lines.
pub fn parse_adjacency(text: &str) -> Result<Vec<Vec<usize>>> {
    let mut entries: Vec<(usize, Vec<usize>)> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| Error::Topology(format!("line {}: {msg}", lineno + 1));
        let (head, tail) = line
            .split_once(':')
            .ok_or_else(|| err("expected `i: j k ...`".into()))?;
        let i = head
            .trim()
            .parse::<usize>()
            .map_err(|e| err(format!("bad index {:?}: {e}", head.trim())))?;
        let nb = tail
            .split_whitespace()
            .map(|tok| tok.parse::<usize>().map_err(|e| err(format!("bad neighbor {tok:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        entries.push((i, nb));
    }
    let n = entries.len();
    let mut lists: Vec<Option<Vec<usize>>> = vec![None; n];
    for (i, nb) in entries {
        let slot = lists
            .get_mut(i)
            .ok_or_else(|| Error::Topology(format!("index {i} out of range for {n} entries")))?;
        if slot.is_some() {
            return Err(Error::Topology(format!("index {i} listed twice")));
        }
        *slot = Some(nb);
    }
    Ok(lists.into_iter().map(|s| s.expect("every slot filled")).collect())
}

/// Writes adjacency lists in the format read by [`parse_adjacency`].
pub fn format_adjacency(lists: &[Vec<usize>]) -> String {
    let mut out = String::new();
    for (i, nb) in lists.iter().enumerate() {
        out.push_str(&i.to_string());
        out.push(':');
        for j in nb {
            out.push(' ');
            out.push_str(&j.to_string());
        }
        out.push('\n');
    }
    out
}

impl FromStr for TopologyKind {
    type Err = Error;

    /// Accepts `indep`, `fullset`, `nnspl1d` and `nnspl2d:ROWSxCOLS`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "indep" | "independent" => Ok(TopologyKind::Independent),
            "fullset" => Ok(TopologyKind::FullSet),
            "nnspl1d" | "chain1d" => Ok(TopologyKind::Chain1D),
            _ => {
                if let Some(dims) = s.strip_prefix("nnspl2d:") {
                    let (r, c) = parse_dims(dims)?;
                    Ok(TopologyKind::Grid2D { rows: r, cols: c })
                } else {
                    Err(Error::Config(format!("unknown topology {s:?}")))
                }
            }
        }
    }
}

/// Parses `ROWSxCOLS`.
pub fn parse_dims(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::Config(format!("expected ROWSxCOLS, got {s:?}"));
    let (r, c) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    let r = r.trim().parse::<usize>().map_err(|_| bad())?;
    let c = c.trim().parse::<usize>().map_err(|_| bad())?;
    if r == 0 || c == 0 {
        return Err(bad());
    }
    Ok((r, c))
}

/// Nearest-neighbor sparse ratio update, clamped to `[eps, 1 - eps]`.
pub fn update_lambda(pi: &[f64], topo: &NeighborTopology, eps: f64) -> Result<Vec<f64>> {
    let mut out = vec![0.0; pi.len()];
    update_lambda_into(pi, topo, eps, &mut out)?;
    Ok(out)
}

pub(crate) fn update_lambda_into(pi: &[f64], topo: &NeighborTopology, eps: f64, out: &mut [f64]) -> Result<()> {
    if pi.len() != topo.n {
        return Err(Error::Dimension {
            what: "support probability length",
            expected: topo.n,
            got: pi.len(),
        });
    }
    let clamp = |v: f64| v.clamp(eps, 1.0 - eps);
    match &topo.adjacency {
        Adjacency::Identity => {
            for (o, &p) in out.iter_mut().zip(pi) {
                *o = clamp(p);
            }
        }
        Adjacency::All => {
            if pi.is_empty() {
                return Ok(());
            }
            let mean = clamp(pi.iter().sum::<f64>() / pi.len() as f64);
            out.iter_mut().for_each(|o| *o = mean);
        }
        Adjacency::Lists(lists) => {
            for (i, (o, nb)) in out.iter_mut().zip(lists).enumerate() {
                if nb.is_empty() {
                    return Err(Error::EmptyNeighborhood(i));
                }
                let s: f64 = nb.iter().map(|&j| pi[j]).sum();
                *o = clamp(s / nb.len() as f64);
            }
        }
    }
    Ok(())
}

/// EM update of the noise variance from the factor-node means `Z` and
/// variances `V` of the current sweep.
pub fn update_noise(y: &[f64], z: &[f64], v: &[f64], delta_prev: f64) -> f64 {
    assert!(y.len() == z.len() && y.len() == v.len(), "update_noise dimensions");
    if y.is_empty() {
        return delta_prev.max(VAR_FLOOR);
    }
    let d = delta_prev;
    let sum: f64 = y
        .iter()
        .zip(z)
        .zip(v)
        .map(|((&ya, &za), &va)| {
            let scale = 1.0 + va / d;
            (ya - za).powi(2) / (scale * scale) + d * va / (d + va)
        })
        .sum();
    (sum / y.len() as f64).max(VAR_FLOOR)
}

/// EM updates of the slab mean and variance. The variance update centers on
/// the previous mean `mu_prev`. Returns the previous values unchanged when all
/// support probabilities are zero.
pub fn update_slab(pi: &[f64], m: &[f64], v: &[f64], mu_prev: f64, tau_prev: f64) -> (f64, f64) {
    assert!(pi.len() == m.len() && pi.len() == v.len(), "update_slab dimensions");
    let mass: f64 = pi.iter().sum();
    if !(mass > 0.0) {
        return (mu_prev, tau_prev);
    }
    let mut first = 0.0;
    let mut spread = 0.0;
    for ((&p, &mi), &vi) in pi.iter().zip(m).zip(v) {
        first += p * mi;
        spread += p * ((mu_prev - mi).powi(2) + vi);
    }
    (first / mass, (spread / mass).max(VAR_FLOOR))
}

/// Initial hyperparameters: `λ = 1/2`, `Δ0 = ‖y‖² / (M (SNR0 + 1))`, `μ0 = 0`,
/// `τ0 = (‖y‖² - M Δ0) / (λ ‖A‖_F²)`.
pub fn init_hyperparams(mm: &MeasurementModel, cfg: &SolverConfig) -> Result<Hyperparams> {
    let fro = mm.a().frobenius_sq();
    if !(fro > 0.0) {
        return Err(Error::InvalidModel("measurement matrix is identically zero".into()));
    }
    const LAMBDA_INIT: f64 = 0.5;
    let m = mm.m() as f64;
    let y_sq = norm_sq(mm.y());
    let delta0 = (y_sq / (m * (cfg.snr0 + 1.0))).max(VAR_FLOOR);
    let tau0 = ((y_sq - m * delta0) / (LAMBDA_INIT * fro)).max(VAR_FLOOR);
    Ok(Hyperparams {
        mu0: 0.0,
        tau0,
        delta0,
        lambda: vec![LAMBDA_INIT; mm.n()],
    })
}
