//! Clark's moment-matching approximation for the maximum of correlated
//! Gaussian variables.
//!
//! `max(A, B)` is replaced by a Gaussian with the exact first two moments of
//! the maximum. Folding a list pairwise, and carrying each remaining
//! variable's correlation to the running maximum forward, approximates the
//! maximum of the whole list.
//!
//! Correlation propagation follows Clark's original result,
//!
//! ```text
//! ρ[K, max(A, B)] = (σ_B ρ_KB Φ(α) + σ_A ρ_KA Φ(-α)) / σ_max(A,B)
//! ```
//!
//! with `α = (μ_B - μ_A) / a`. The denominator is the standard deviation of
//! the pair's normal approximation, not `σ_K`.

use crate::error::{Error, Result};
use crate::gaussian::{CorrelationMatrix, GaussianMoments};
use crate::normal::{std_normal_cdf, std_normal_pdf};

/// Below this combined spread the pair is treated as perfectly correlated
/// with equal variances and the larger-mean operand is returned.
pub const DEGENERATE_SPREAD: f64 = 1e-12;

/// Propagated correlations overshooting [-1, 1] by more than this are
/// reported as a consistency warning.
pub const CLAMP_WARNING: f64 = 1e-6;

/// Result of one pairwise max.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClarkPairResult {
    pub moments: GaussianMoments,
    /// `(μ_b - μ_a) / a`; `±∞` on the degenerate branch, signed toward the
    /// operand that was returned.
    pub alpha: f64,
    /// `a = sqrt(σ_a² + σ_b² - 2 σ_a σ_b ρ)`.
    pub spread: f64,
}

impl ClarkPairResult {
    pub fn is_degenerate(&self) -> bool {
        self.spread < DEGENERATE_SPREAD
    }
}

fn check_rho(rho: f64) -> Result<()> {
    if rho.is_nan() || rho.abs() > 1.0 + 1e-12 {
        return Err(Error::domain(format!("correlation {rho} outside [-1, 1]")));
    }
    Ok(())
}

/// Gaussian approximation of `max(a, b)` where `corr(a, b) = rho`.
pub fn clark_max_pair(a: GaussianMoments, b: GaussianMoments, rho: f64) -> Result<ClarkPairResult> {
    check_rho(rho)?;
    if a.std_dev < 0.0 || b.std_dev < 0.0 {
        return Err(Error::domain("negative standard deviation"));
    }
    let rho = rho.clamp(-1.0, 1.0);

    // Evaluate in a canonical operand order so the result does not depend on
    // argument order at all; only the sign of alpha does.
    let swapped = (b.mean, b.std_dev) < (a.mean, a.std_dev);
    let (lo, hi) = if swapped { (b, a) } else { (a, b) };

    let spread2 = lo.variance() + hi.variance() - 2.0 * lo.std_dev * hi.std_dev * rho;
    let spread = spread2.max(0.0).sqrt();

    if spread < DEGENERATE_SPREAD {
        // hi has the larger (or equal) mean; on a tie the two are the same
        // distribution, so which one is returned does not matter.
        let alpha = if swapped {
            f64::NEG_INFINITY
        } else {
            f64::INFINITY
        };
        return Ok(ClarkPairResult {
            moments: hi,
            alpha,
            spread,
        });
    }

    let alpha_c = (hi.mean - lo.mean) / spread;
    let p_hi = std_normal_cdf(alpha_c);
    let p_lo = std_normal_cdf(-alpha_c);
    let dens = std_normal_pdf(alpha_c);

    // Centre the means before forming m2 - m1² to avoid cancellation.
    let centre = 0.5 * (lo.mean + hi.mean);
    let d_lo = lo.mean - centre;
    let d_hi = hi.mean - centre;
    let m1 = d_hi * p_hi + d_lo * p_lo + spread * dens;
    let m2 = (d_hi * d_hi + hi.variance()) * p_hi
        + (d_lo * d_lo + lo.variance()) * p_lo
        + (d_hi + d_lo) * spread * dens;
    let var = (m2 - m1 * m1).max(0.0);

    Ok(ClarkPairResult {
        moments: GaussianMoments {
            mean: centre + m1,
            std_dev: var.sqrt(),
        },
        alpha: if swapped { -alpha_c } else { alpha_c },
        spread,
    })
}

/// Correlation between a third variable `K` and the pair result, before
/// clamping.
fn corr_propagate_raw(
    rho_k_a: f64,
    rho_k_b: f64,
    pair: &ClarkPairResult,
    sigma_a: f64,
    sigma_b: f64,
) -> f64 {
    if pair.moments.std_dev < DEGENERATE_SPREAD {
        return if pair.alpha >= 0.0 { rho_k_b } else { rho_k_a };
    }
    let (w_b, w_a) = if pair.alpha.is_infinite() {
        if pair.alpha > 0.0 {
            (1.0, 0.0)
        } else {
            (0.0, 1.0)
        }
    } else {
        (std_normal_cdf(pair.alpha), std_normal_cdf(-pair.alpha))
    };
    (sigma_b * rho_k_b * w_b + sigma_a * rho_k_a * w_a) / pair.moments.std_dev
}

/// Correlation of a third variable with `max(a, b)`, clamped to [-1, 1].
pub fn clark_corr_propagate(
    rho_k_a: f64,
    rho_k_b: f64,
    pair: &ClarkPairResult,
    sigma_a: f64,
    sigma_b: f64,
) -> f64 {
    corr_propagate_raw(rho_k_a, rho_k_b, pair, sigma_a, sigma_b).clamp(-1.0, 1.0)
}

/// Outcome of a full fold, with the diagnostics reports print.
#[derive(Debug, Clone, PartialEq)]
pub struct MaxReduction {
    pub moments: GaussianMoments,
    /// Fold order as indices into the input list.
    pub order: Vec<usize>,
    /// Largest amount by which a propagated correlation left [-1, 1].
    pub clamp_excess: f64,
}

impl MaxReduction {
    pub fn has_consistency_warning(&self) -> bool {
        self.clamp_excess > CLAMP_WARNING
    }
}

/// Fold order: increasing mean, then decreasing std_dev, then index.
pub fn fold_order(stages: &[GaussianMoments]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..stages.len()).collect();
    order.sort_by(|&i, &j| {
        stages[i]
            .mean
            .total_cmp(&stages[j].mean)
            .then(stages[j].std_dev.total_cmp(&stages[i].std_dev))
            .then(i.cmp(&j))
    });
    order
}

/// Gaussian approximation of the maximum of all `stages`.
pub fn max_reduce(stages: &[GaussianMoments], corr: &CorrelationMatrix) -> Result<GaussianMoments> {
    max_reduce_detailed(stages, corr).map(|r| r.moments)
}

pub fn max_reduce_detailed(
    stages: &[GaussianMoments],
    corr: &CorrelationMatrix,
) -> Result<MaxReduction> {
    let n = stages.len();
    if n == 0 {
        return Err(Error::domain("max of an empty list"));
    }
    if corr.dim() != n {
        return Err(Error::domain(format!(
            "correlation matrix is {0}x{0} but there are {n} variables",
            corr.dim()
        )));
    }
    let order = fold_order(stages);

    let mut running = stages[order[0]];
    // to_running[k]: correlation of order[k] with the running maximum.
    let mut to_running: Vec<f64> = order.iter().map(|&k| corr.get(order[0], k)).collect();
    let mut clamp_excess: f64 = 0.0;

    for j in 1..n {
        let next = stages[order[j]];
        let pair = clark_max_pair(running, next, to_running[j])?;
        for k in (j + 1)..n {
            let raw = corr_propagate_raw(
                to_running[k],
                corr.get(order[j], order[k]),
                &pair,
                running.std_dev,
                next.std_dev,
            );
            clamp_excess = clamp_excess.max(raw.abs() - 1.0);
            to_running[k] = raw.clamp(-1.0, 1.0);
        }
        running = pair.moments;
    }

    Ok(MaxReduction {
        moments: running,
        order,
        clamp_excess: clamp_excess.max(0.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn g(mean: f64, sd: f64) -> GaussianMoments {
        GaussianMoments::new(mean, sd).unwrap()
    }

    #[test]
    fn max_with_itself() {
        let r = clark_max_pair(g(100.0, 3.0), g(100.0, 3.0), 1.0).unwrap();
        assert!(r.is_degenerate());
        assert_eq!(r.moments, g(100.0, 3.0));
    }

    #[test]
    fn degenerate_returns_larger_mean() {
        let r = clark_max_pair(g(101.0, 2.0), g(100.0, 2.0), 1.0).unwrap();
        assert_eq!(r.moments.mean, 101.0);
        assert_eq!(r.alpha, f64::NEG_INFINITY);
        let r = clark_max_pair(g(100.0, 2.0), g(101.0, 2.0), 1.0).unwrap();
        assert_eq!(r.moments.mean, 101.0);
        assert_eq!(r.alpha, f64::INFINITY);
    }

    #[test]
    fn iid_standard_pair_closed_form() {
        // E[max] = 1/sqrt(pi), Var = 1 - 1/pi.
        let r = clark_max_pair(g(0.0, 1.0), g(0.0, 1.0), 0.0).unwrap();
        assert!((r.moments.mean - 0.564_189_583_547_756_3).abs() < 1e-12);
        assert!((r.moments.std_dev - 0.825_645_271_176_556_4).abs() < 1e-12);
        assert!((r.spread - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn shifted_pair_mean() {
        let r = clark_max_pair(g(0.0, 1.0), g(3.0, 1.0), 0.0).unwrap();
        assert!((r.moments.mean - 3.008_622_864_324_781).abs() < 1e-12);
        assert!((r.alpha - 3.0 / 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_rho() {
        assert!(clark_max_pair(g(0.0, 1.0), g(0.0, 1.0), 1.5).is_err());
        assert!(clark_max_pair(g(0.0, 1.0), g(0.0, 1.0), f64::NAN).is_err());
    }

    #[test]
    fn propagate_examples() {
        let a = g(0.0, 1.0);
        let b = g(0.0, 1.0);
        let pair = clark_max_pair(a, b, 0.0).unwrap();
        assert_eq!(clark_corr_propagate(0.0, 0.0, &pair, 1.0, 1.0), 0.0);
        // 0.5 / sqrt(1 - 1/pi)
        let r = clark_corr_propagate(0.5, 0.5, &pair, 1.0, 1.0);
        assert!((r - 0.605_586_948_118_158_3).abs() < 1e-12);

        let pair = clark_max_pair(a, b, 0.4).unwrap();
        let r = clark_corr_propagate(1.0, 1.0, &pair, 1.0, 1.0);
        assert!(r > 1.0 - 1e-6 && r <= 1.0);
    }

    #[test]
    fn propagate_degenerate_takes_dominant() {
        let pair = clark_max_pair(g(5.0, 1.0), g(4.0, 1.0), 1.0).unwrap();
        assert_eq!(clark_corr_propagate(0.3, 0.8, &pair, 1.0, 1.0), 0.3);
        let zero = clark_max_pair(g(5.0, 0.0), g(4.0, 0.0), 0.0).unwrap();
        assert_eq!(clark_corr_propagate(0.3, 0.8, &zero, 0.0, 0.0), 0.3);
    }

    #[test]
    fn reduce_single_and_empty() {
        let c = CorrelationMatrix::identity(1);
        assert_eq!(max_reduce(&[g(7.0, 2.0)], &c).unwrap(), g(7.0, 2.0));
        assert!(max_reduce(&[], &CorrelationMatrix::identity(0)).is_err());
        assert!(max_reduce(&[g(1.0, 1.0)], &CorrelationMatrix::identity(2)).is_err());
    }

    #[test]
    fn reduce_perfectly_correlated_identical() {
        for n in 1..8 {
            let stages = vec![g(120.0, 4.0); n];
            let c = CorrelationMatrix::uniform(n, 1.0).unwrap();
            let r = max_reduce(&stages, &c).unwrap();
            assert_eq!(r, g(120.0, 4.0));
        }
    }

    #[test]
    fn iid_std_dev_shrinks_with_count() {
        let mut prev = f64::INFINITY;
        for n in 1..=12 {
            let stages = vec![g(100.0, 3.0); n];
            let r = max_reduce(&stages, &CorrelationMatrix::identity(n)).unwrap();
            assert!(r.std_dev < prev, "n={n}");
            prev = r.std_dev;
        }
    }

    #[test]
    fn fold_order_ties() {
        let s = [g(2.0, 1.0), g(1.0, 1.0), g(2.0, 3.0), g(1.0, 1.0)];
        assert_eq!(fold_order(&s), vec![1, 3, 2, 0]);
    }

    fn moments() -> impl Strategy<Value = GaussianMoments> {
        (-50.0..50.0f64, 0.0..10.0f64).prop_map(|(m, s)| g(m, s))
    }

    proptest! {
        #[test]
        fn pair_is_commutative(a in moments(), b in moments(), rho in -1.0..=1.0f64) {
            let x = clark_max_pair(a, b, rho).unwrap();
            let y = clark_max_pair(b, a, rho).unwrap();
            prop_assert!((x.moments.mean - y.moments.mean).abs() <= 1e-12);
            prop_assert!((x.moments.std_dev - y.moments.std_dev).abs() <= 1e-12);
            prop_assert!(x.alpha == -y.alpha || (x.alpha.is_infinite() && x.is_degenerate()));
        }

        #[test]
        fn pair_respects_jensen(a in moments(), b in moments(), rho in -1.0..=1.0f64) {
            let x = clark_max_pair(a, b, rho).unwrap();
            prop_assert!(x.moments.mean >= a.mean.max(b.mean) - 1e-9);
            prop_assert!(x.spread >= 0.0);
        }

        #[test]
        fn pair_mean_monotone(a in moments(), b in moments(), rho in -1.0..=1.0f64, bump in 0.0..5.0f64) {
            let base = clark_max_pair(a, b, rho).unwrap().moments.mean;
            let up_a = clark_max_pair(g(a.mean + bump, a.std_dev), b, rho).unwrap().moments.mean;
            let up_b = clark_max_pair(a, g(b.mean + bump, b.std_dev), rho).unwrap().moments.mean;
            prop_assert!(up_a >= base - 1e-9);
            prop_assert!(up_b >= base - 1e-9);
        }

        #[test]
        fn reduce_respects_jensen(
            stages in prop::collection::vec(moments(), 1..10),
            rho in 0.0..0.95f64,
        ) {
            let c = CorrelationMatrix::uniform(stages.len(), rho).unwrap();
            let r = max_reduce(&stages, &c).unwrap();
            let lower = stages.iter().map(|s| s.mean).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(r.mean >= lower - 1e-9);
        }
    }
}
