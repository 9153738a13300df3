//! Linear Gaussian measurement model `y = A x + w` and the spike and slab prior.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::learning::TopologyKind;

/// Lower bound applied to the learned slab and noise variances.
pub const VAR_FLOOR: f64 = 1e-12;

/// Sparse ratios are clamped to `[LAMBDA_EPS, 1 - LAMBDA_EPS]` by default.
pub const LAMBDA_EPS: f64 = 1e-8;

/// Dense row-major real matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension {
                what: "matrix data length",
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(Error::Dimension {
                    what: "matrix row length",
                    expected: cols,
                    got: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `A x`.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "matvec dimension");
        (0..self.rows).map(|r| dot(self.row(r), x)).collect()
    }

    /// `Aᵀ y`.
    pub fn matvec_t(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.rows, "matvec_t dimension");
        let mut out = vec![0.0; self.cols];
        for (r, &yr) in y.iter().enumerate() {
            for (o, &a) in out.iter_mut().zip(self.row(r)) {
                *o += a * yr;
            }
        }
        out
    }

    pub fn column_norms(&self) -> Vec<f64> {
        let mut sq = vec![0.0; self.cols];
        for r in 0..self.rows {
            for (s, &a) in sq.iter_mut().zip(self.row(r)) {
                *s += a * a;
            }
        }
        sq.into_iter().map(f64::sqrt).collect()
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|a| a * a).sum()
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn norm_sq(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum()
}

/// The pair `(A, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementModel {
    a: Matrix,
    y: Vec<f64>,
}

impl MeasurementModel {
    pub fn new(a: Matrix, y: Vec<f64>) -> Result<Self> {
        if a.rows() == 0 || a.cols() == 0 {
            return Err(Error::InvalidModel(format!(
                "matrix must be non-empty, got {}x{}",
                a.rows(),
                a.cols()
            )));
        }
        if y.len() != a.rows() {
            return Err(Error::Dimension {
                what: "measurement vector length",
                expected: a.rows(),
                got: y.len(),
            });
        }
        if !a.is_finite() || !y.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidModel("non-finite entries".into()));
        }
        Ok(Self { a, y })
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    /// Number of measurements `M`.
    pub fn m(&self) -> usize {
        self.a.rows()
    }

    /// Signal length `N`.
    pub fn n(&self) -> usize {
        self.a.cols()
    }
}

/// Prior and noise parameters learned by EM.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    /// Slab mean.
    pub mu0: f64,
    /// Slab variance.
    pub tau0: f64,
    /// Noise variance.
    pub delta0: f64,
    /// Per-coefficient sparse ratios.
    pub lambda: Vec<f64>,
}

impl Hyperparams {
    pub fn mean_lambda(&self) -> f64 {
        if self.lambda.is_empty() {
            return 0.0;
        }
        self.lambda.iter().sum::<f64>() / self.lambda.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub t_max: usize,
    pub eps_toc: f64,
    pub topology: TopologyKind,
    /// Step size applied to the mean and variance updates; 1 disables damping.
    pub damping: f64,
    /// SNR guess used to initialize the noise variance.
    pub snr0: f64,
    pub lambda_eps: f64,
    pub record_trajectory: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            t_max: 200,
            eps_toc: 1e-6,
            topology: TopologyKind::Chain1D,
            damping: 1.0,
            snr0: 100.0,
            lambda_eps: LAMBDA_EPS,
            record_trajectory: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_max == 0 {
            return Err(Error::Config("t_max must be positive".into()));
        }
        if !(self.eps_toc > 0.0 && self.eps_toc.is_finite()) {
            return Err(Error::Config(format!("eps_toc must be > 0, got {}", self.eps_toc)));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::Config(format!("damping must lie in (0, 1], got {}", self.damping)));
        }
        if !(self.snr0 > 0.0 && self.snr0.is_finite()) {
            return Err(Error::Config(format!("snr0 must be > 0, got {}", self.snr0)));
        }
        if !(0.0..0.5).contains(&self.lambda_eps) {
            return Err(Error::Config(format!(
                "lambda_eps must lie in [0, 0.5), got {}",
                self.lambda_eps
            )));
        }
        Ok(())
    }
}

/// Seeded ChaCha8 generator on an explicit stream.
///
/// Independent experiments share `seed` and differ in `stream`, so each one
/// gets its own non-overlapping keystream.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// I.i.d. standard normal `m × n` matrix with unit-norm columns.
pub fn generate_matrix<R: Rng + ?Sized>(m: usize, n: usize, rng: &mut R) -> Matrix {
    assert!(m >= 1 && n >= 1, "matrix dimensions must be positive");
    let mut data: Vec<f64> = (0..m * n).map(|_| rng.sample(StandardNormal)).collect();
    for c in 0..n {
        loop {
            let sq: f64 = (0..m).map(|r| data[r * n + c].powi(2)).sum();
            if sq > 0.0 {
                let norm = sq.sqrt();
                for r in 0..m {
                    data[r * n + c] /= norm;
                }
                break;
            }
            for r in 0..m {
                data[r * n + c] = rng.sample(StandardNormal);
            }
        }
    }
    Matrix { rows: m, cols: n, data }
}

/// `A x + w` with `w ~ N(0, delta I)`.
pub fn measure<R: Rng + ?Sized>(a: &Matrix, x: &[f64], delta: f64, rng: &mut R) -> Result<Vec<f64>> {
    if x.len() != a.cols() {
        return Err(Error::Dimension {
            what: "signal length",
            expected: a.cols(),
            got: x.len(),
        });
    }
    if !(delta >= 0.0 && delta.is_finite()) {
        return Err(Error::InvalidModel(format!("noise variance must be >= 0, got {delta}")));
    }
    if !a.is_finite() || !x.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidModel("non-finite entries".into()));
    }
    let mut y = a.matvec(x);
    if delta > 0.0 {
        let sd = delta.sqrt();
        for v in &mut y {
            *v += sd * rng.sample::<f64, _>(StandardNormal);
        }
    }
    Ok(y)
}
