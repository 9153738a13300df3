//! Bernoulli-Gaussian posterior of the decoupled scalar channel `R = x + w̃`,
//! `w̃ ~ N(0, Σ)`, under the prior `(1 - λ) δ(x) + λ N(x; μ0, τ0)`.
//!
//! The posterior is again a spike and slab mixture,
//! `(1 - π) δ(x) + π N(x; m, V)` with
//!
//! ```text
//! V = τ0 Σ / (Σ + τ0)
//! m = (τ0 R + Σ μ0) / (Σ + τ0)
//! π = logistic(logit(λ) + L)
//! L = ½ ln(Σ / (Σ + τ0)) + R² / 2Σ - (R - μ0)² / 2(Σ + τ0)
//! ```
//!
//! and the MMSE estimate and its variance are `g_a = π m` and
//! `g_c = π (m² + V) - g_a²`.

use crate::error::{Error, Result};

/// The logistic argument is clamped to this magnitude.
const LOGIT_CLAMP: f64 = 500.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarChannel {
    pub r: f64,
    pub sigma: f64,
}

/// Slab parameters plus the sparse ratio of one coefficient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarPrior {
    pub mu0: f64,
    pub tau0: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorMoments {
    /// Posterior support probability.
    pub pi: f64,
    /// Mean of the active component.
    pub m: f64,
    /// Variance of the active component.
    pub v: f64,
    /// Posterior mean.
    pub ga: f64,
    /// Posterior variance.
    pub gc: f64,
}

#[inline]
fn logistic(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

/// Log-likelihood ratio of "active" against "zero" for one channel.
#[inline]
pub fn log_activity_ratio(ch: ScalarChannel, mu0: f64, tau0: f64) -> f64 {
    let s = ch.sigma;
    -0.5 * (tau0 / s).ln_1p() + ch.r * ch.r / (2.0 * s) - (ch.r - mu0).powi(2) / (2.0 * (s + tau0))
}

fn check(index: usize, ch: ScalarChannel, prior: ScalarPrior) -> Result<()> {
    let bad = |reason: String| Err(Error::InvalidChannel { index, reason });
    if !(ch.sigma > 0.0 && ch.sigma.is_finite()) {
        return bad(format!("sigma must be positive and finite, got {}", ch.sigma));
    }
    if !ch.r.is_finite() {
        return bad(format!("r must be finite, got {}", ch.r));
    }
    if !(prior.tau0 > 0.0 && prior.tau0.is_finite()) {
        return bad(format!("tau0 must be positive and finite, got {}", prior.tau0));
    }
    if !prior.mu0.is_finite() {
        return bad(format!("mu0 must be finite, got {}", prior.mu0));
    }
    if !(0.0..=1.0).contains(&prior.lambda) {
        return bad(format!("lambda must lie in [0, 1], got {}", prior.lambda));
    }
    Ok(())
}

fn posterior_unchecked(ch: ScalarChannel, prior: ScalarPrior) -> PosteriorMoments {
    let ScalarPrior { mu0, tau0, lambda } = prior;
    let s = ch.sigma;
    let denom = s + tau0;
    let v = tau0 * s / denom;
    let m = (tau0 * ch.r + s * mu0) / denom;
    let logit = lambda.ln() - (-lambda).ln_1p();
    let arg = (logit + log_activity_ratio(ch, mu0, tau0)).clamp(-LOGIT_CLAMP, LOGIT_CLAMP);
    let pi = logistic(arg);
    let ga = pi * m;
    // π(m² + V) - (πm)², arranged so that it cannot go negative.
    let gc = pi * v + pi * (1.0 - pi) * m * m;
    PosteriorMoments { pi, m, v, ga, gc }
}

/// Posterior moments of one scalar channel.
pub fn posterior(ch: ScalarChannel, prior: ScalarPrior) -> Result<PosteriorMoments> {
    check(0, ch, prior)?;
    Ok(posterior_unchecked(ch, prior))
}

/// Element-wise posterior over a whole signal.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PosteriorBatch {
    pub pi: Vec<f64>,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub ga: Vec<f64>,
    pub gc: Vec<f64>,
}

impl PosteriorBatch {
    pub fn with_len(n: usize) -> Self {
        Self {
            pi: vec![0.0; n],
            m: vec![0.0; n],
            v: vec![0.0; n],
            ga: vec![0.0; n],
            gc: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.pi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pi.is_empty()
    }

    pub fn get(&self, i: usize) -> PosteriorMoments {
        PosteriorMoments {
            pi: self.pi[i],
            m: self.m[i],
            v: self.v[i],
            ga: self.ga[i],
            gc: self.gc[i],
        }
    }
}

/// Applies [`posterior`] to every `(R_i, Σ_i, λ_i)` with shared slab parameters.
pub fn posterior_batch(r: &[f64], sigma: &[f64], mu0: f64, tau0: f64, lambda: &[f64]) -> Result<PosteriorBatch> {
    let mut out = PosteriorBatch::with_len(r.len());
    posterior_batch_into(r, sigma, mu0, tau0, lambda, &mut out)?;
    Ok(out)
}

pub(crate) fn posterior_batch_into(
    r: &[f64],
    sigma: &[f64],
    mu0: f64,
    tau0: f64,
    lambda: &[f64],
    out: &mut PosteriorBatch,
) -> Result<()> {
    let n = r.len();
    for (what, len) in [("sigma length", sigma.len()), ("lambda length", lambda.len())] {
        if len != n {
            return Err(Error::Dimension { what, expected: n, got: len });
        }
    }
    if out.len() != n {
        *out = PosteriorBatch::with_len(n);
    }
    for i in 0..n {
        let ch = ScalarChannel { r: r[i], sigma: sigma[i] };
        let prior = ScalarPrior { mu0, tau0, lambda: lambda[i] };
        check(i, ch, prior)?;
        let p = posterior_unchecked(ch, prior);
        out.pi[i] = p.pi;
        out.m[i] = p.m;
        out.v[i] = p.v;
        out.ga[i] = p.ga;
        out.gc[i] = p.gc;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn post(r: f64, sigma: f64, mu0: f64, tau0: f64, lambda: f64) -> PosteriorMoments {
        posterior(ScalarChannel { r, sigma }, ScalarPrior { mu0, tau0, lambda }).unwrap()
    }

    #[test]
    fn standard_fixture_matches_quadrature_values() {
        // Reference values from high-precision quadrature of prior × likelihood.
        let p = post(0.0, 1.0, 0.0, 1.0, 0.5);
        assert!((p.pi - 0.414_213_562_373_095_05).abs() < 1e-12);
        assert_eq!(p.m, 0.0);
        assert_eq!(p.v, 0.5);
        assert_eq!(p.ga, 0.0);
        assert!((p.gc - 0.207_106_781_186_547_52).abs() < 1e-12);

        let p = post(1.3, 0.2, 0.5, 2.0, 0.1);
        assert!((p.pi - 0.664_491_153_485_304_03).abs() < 1e-12);
        assert!((p.ga - 0.815_511_870_186_509_51).abs() < 1e-12);
        assert!((p.gc - 0.456_612_439_992_945_92).abs() < 1e-12);

        let p = post(-2.5, 0.7, 3.0, 1.0, 0.3);
        assert!((p.pi - 0.003_256_882_709_922_237_6).abs() < 1e-14);
        assert!((p.ga + 0.000_766_325_343_511_115_01).abs() < 1e-15);
        assert!((p.gc - 0.001_520_793_942_144_370_4).abs() < 1e-15);
    }

    #[test]
    fn spike_only_prior_gives_zero() {
        for &(r, s, mu, tau) in &[(0.5, 1.0, 0.0, 1.0), (1.0, 0.5, 3.0, 1.0), (-1.0, 2.0, -1.0, 0.3), (12.0, 0.3, 3.0, 1.0)] {
            let l = log_activity_ratio(ScalarChannel { r, sigma: s }, mu, tau);
            let p = post(r, s, mu, tau, 1e-8);
            // π = λ e^L / (1 - λ + λ e^L) < λ e^L / (1 - λ)
            assert!(p.pi <= 1e-8 * l.exp() / (1.0 - 1e-8), "{p:?}");
            if l.abs() <= 2.0 {
                assert!(p.pi < 1e-6 && p.ga.abs() < 1e-6 && p.gc < 1e-6, "{p:?}");
            }
        }
    }

    #[test]
    fn slab_only_prior_is_gaussian_conjugate() {
        let p = post(2.0, 1.5, 2.0, 1.5, 1.0 - 1e-8);
        assert!((p.pi - 1.0).abs() < 1e-6);
        assert!((p.ga - 2.0).abs() < 1e-6);
        assert!((p.gc - 0.75).abs() < 1e-6);
    }

    #[test]
    fn huge_evidence_does_not_overflow() {
        let p = post(1e4, 1e-6, 0.0, 1.0, 0.5);
        assert!(p.pi == 1.0 && p.ga.is_finite() && p.gc.is_finite());
        let p = post(0.0, 1e-12, 1e4, 1e-12, 0.5);
        assert!(p.pi.is_finite() && p.pi >= 0.0);
        // λ at the boundaries is tolerated.
        assert_eq!(post(1.0, 1.0, 0.0, 1.0, 0.0).pi, logistic(-LOGIT_CLAMP));
        assert_eq!(post(1.0, 1.0, 0.0, 1.0, 1.0).pi, 1.0);
    }

    #[test]
    fn invalid_channels_are_rejected() {
        let prior = ScalarPrior { mu0: 0.0, tau0: 1.0, lambda: 0.5 };
        assert!(posterior(ScalarChannel { r: 0.0, sigma: 0.0 }, prior).is_err());
        assert!(posterior(ScalarChannel { r: 0.0, sigma: -1.0 }, prior).is_err());
        assert!(posterior(ScalarChannel { r: f64::NAN, sigma: 1.0 }, prior).is_err());
        let bad = ScalarPrior { tau0: 0.0, ..prior };
        assert!(posterior(ScalarChannel { r: 0.0, sigma: 1.0 }, bad).is_err());
    }

    #[test]
    fn batch_edge_cases() {
        let b = posterior_batch(&[], &[], 0.0, 1.0, &[]).unwrap();
        assert!(b.is_empty());

        let b = posterior_batch(&[0.7; 3], &[0.4; 3], 1.0, 2.0, &[0.3; 3]).unwrap();
        assert_eq!(b.get(0), b.get(1));
        assert_eq!(b.get(1), b.get(2));

        let err = posterior_batch(&[0.0, 1.0], &[1.0, 0.0], 0.0, 1.0, &[0.5, 0.5]).unwrap_err();
        assert!(matches!(err, Error::InvalidChannel { index: 1, .. }));
        assert!(posterior_batch(&[0.0], &[1.0, 1.0], 0.0, 1.0, &[0.5]).is_err());
    }

    #[test]
    fn batch_equals_elementwise_loop() {
        use rand::Rng;
        let mut rng = crate::model::stream_rng(99, 0);
        let n = 100;
        let r: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let s: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..3.0)).collect();
        let lam: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..0.99)).collect();
        let b = posterior_batch(&r, &s, 0.7, 1.3, &lam).unwrap();
        for i in 0..n {
            assert_eq!(b.get(i), post(r[i], s[i], 0.7, 1.3, lam[i]));
        }
    }

    proptest! {
        #[test]
        fn moment_bounds(
            r in -20.0..20.0f64,
            sigma in 1e-4..50.0f64,
            mu0 in -5.0..5.0f64,
            tau0 in 1e-4..50.0f64,
            lambda in 1e-8..(1.0 - 1e-8),
        ) {
            let p = post(r, sigma, mu0, tau0, lambda);
            prop_assert!((0.0..=1.0).contains(&p.pi));
            prop_assert!(p.v > 0.0 && p.v < sigma.min(tau0) + 1e-15 * sigma.min(tau0));
            prop_assert!(p.gc >= 0.0);
            prop_assert!(p.gc <= p.pi * (p.m * p.m + p.v) * (1.0 + 1e-12));
            prop_assert_eq!(p.ga, p.pi * p.m);
        }

        #[test]
        fn mean_is_nondecreasing_in_r(
            r in -10.0..10.0f64,
            dr in 1e-3..1.0f64,
            sigma in 1e-2..10.0f64,
            mu0 in -3.0..3.0f64,
            tau0 in 1e-2..10.0f64,
            lambda in 0.01..0.99f64,
        ) {
            let lo = post(r, sigma, mu0, tau0, lambda).ga;
            let hi = post(r + dr, sigma, mu0, tau0, lambda).ga;
            prop_assert!(hi >= lo - 1e-12 * lo.abs().max(1.0));
        }
    }
}
