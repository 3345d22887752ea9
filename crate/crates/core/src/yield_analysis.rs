//! Parametric yield of a pipeline and the per-stage design space it implies.

use serde::{Deserialize, Serialize};

use crate::clark::{max_reduce_detailed, MaxReduction};
use crate::error::{Error, Result};
use crate::gaussian::GaussianMoments;
use crate::normal::{normal_cdf_or_step, quantile_unchecked};
use crate::variation::{stage_correlation_matrix, GateInstance, PipelineModel, VariationSpec};

/// Target clock period and the probability of meeting it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct YieldQuery {
    pub target_delay: f64,
    pub target_yield: f64,
}

impl YieldQuery {
    pub fn new(target_delay: f64, target_yield: f64) -> Result<Self> {
        if !(target_delay > 0.0) || !target_delay.is_finite() {
            return Err(Error::invalid("target_delay", "must be > 0"));
        }
        if !(target_yield > 0.0 && target_yield < 1.0) {
            return Err(Error::invalid("target_yield", "must lie in (0, 1)"));
        }
        Ok(Self {
            target_delay,
            target_yield,
        })
    }

    /// `Φ⁻¹(Y)`.
    pub fn z(&self) -> f64 {
        quantile_unchecked(self.target_yield)
    }

    /// `Φ⁻¹(Y^{1/n})`, the per-stage quantile when `n` independent equal
    /// stages share the target.
    pub fn per_stage_z(&self, n_stages: usize) -> f64 {
        quantile_unchecked(self.target_yield.powf(1.0 / n_stages as f64))
    }
}

/// Clark approximation of the pipeline delay distribution.
pub fn pipeline_distribution(p: &PipelineModel) -> Result<GaussianMoments> {
    pipeline_distribution_detailed(p).map(|r| r.moments)
}

pub fn pipeline_distribution_detailed(p: &PipelineModel) -> Result<MaxReduction> {
    p.validate()?;
    let stages = p.stage_moments();
    let corr = stage_correlation_matrix(p);
    max_reduce_detailed(&stages, &corr)
}

/// Product of per-stage yields, exact for independent stages.
pub fn yield_independent(stages: &[GaussianMoments], target_delay: f64) -> Result<f64> {
    if stages.is_empty() {
        return Err(Error::domain("yield of an empty pipeline"));
    }
    Ok(stages
        .iter()
        .map(|s| normal_cdf_or_step(target_delay, s.mean, s.std_dev))
        .product())
}

/// `Φ((T - μ_T) / σ_T)`, a step at `μ_T` when `σ_T = 0`.
pub fn yield_gaussian(dist: &GaussianMoments, target_delay: f64) -> f64 {
    normal_cdf_or_step(target_delay, dist.mean, dist.std_dev)
}

/// Largest stage mean; no pipeline mean can be below it.
pub fn mean_lower_bound(stages: &[GaussianMoments]) -> Result<f64> {
    stages
        .iter()
        .map(|s| s.mean)
        .reduce(f64::max)
        .ok_or_else(|| Error::domain("mean bound of an empty pipeline"))
}

/// `T - σ_T Φ⁻¹(Y)`: the largest admissible pipeline (and stage) mean.
pub fn stage_mean_upper_bound(q: &YieldQuery, sigma_t: f64) -> f64 {
    q.target_delay - sigma_t * q.z()
}

/// Necessary condition on any single stage: `μ + σ Φ⁻¹(Y) ≤ T`.
pub fn relaxed_stage_bound(m: &GaussianMoments, q: &YieldQuery) -> bool {
    m.mean + m.std_dev * q.z() <= q.target_delay
}

/// Condition for `n_stages` uncorrelated equal stages:
/// `μ + σ Φ⁻¹(Y^{1/N}) ≤ T`.
pub fn stringent_stage_bound(m: &GaussianMoments, q: &YieldQuery, n_stages: usize) -> Result<bool> {
    if n_stages == 0 {
        return Err(Error::domain("number of stages must be >= 1"));
    }
    Ok(m.mean + m.std_dev * q.per_stage_z(n_stages) <= q.target_delay)
}

/// Delay moments of the smallest and largest realizable single gates, used
/// to draw the realizable band `μ = (μ_g / σ_g²) σ²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainBounds {
    pub mu_min: f64,
    pub sigma_min: f64,
    pub mu_max: f64,
    pub sigma_max: f64,
}

impl ChainBounds {
    /// Evaluates a gate at its lower (`min`) and upper (`max`) size bound.
    pub fn from_gate(g: &GateInstance, v: &VariationSpec) -> Self {
        let slow = g.delay_at(g.min_size);
        let fast = g.delay_at(g.max_size);
        Self {
            mu_min: slow,
            sigma_min: v.total_sigma_ratio * slow,
            mu_max: fast,
            sigma_max: v.total_sigma_ratio * fast,
        }
    }
}

/// One grid point of the design-space plot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignSpacePoint {
    pub mu: f64,
    pub sigma: f64,
    pub feasible_relaxed: bool,
    pub feasible_stringent: bool,
    pub realizable: bool,
}

/// Boundary curves sampled at one σ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignSpaceRow {
    pub sigma: f64,
    /// μ on the single-stage bound.
    pub mu_relaxed: f64,
    /// μ on the N-stage bound.
    pub mu_stringent: f64,
    /// μ on the curve of minimum-size gates.
    pub mu_realizable_min: f64,
    /// μ on the curve of maximum-size gates.
    pub mu_realizable_max: f64,
    /// The lowest realizable μ at this σ, classified against both bounds.
    pub lowest_realizable: DesignSpacePoint,
}

fn realizable_band(sigma: f64, chain: &ChainBounds) -> Result<(f64, f64)> {
    if !(chain.sigma_min > 0.0) || !(chain.sigma_max > 0.0) {
        return Err(Error::domain(
            "realizable curves need sigma_min > 0 and sigma_max > 0",
        ));
    }
    let a = chain.mu_min / (chain.sigma_min * chain.sigma_min) * sigma * sigma;
    let b = chain.mu_max / (chain.sigma_max * chain.sigma_max) * sigma * sigma;
    Ok((a, b))
}

/// Classifies a single `(μ, σ)` against both bounds and the realizable band.
pub fn classify_point(
    mu: f64,
    sigma: f64,
    q: &YieldQuery,
    n_stages: usize,
    chain: &ChainBounds,
) -> Result<DesignSpacePoint> {
    let (a, b) = realizable_band(sigma, chain)?;
    let m = GaussianMoments::new(mu, sigma)?;
    Ok(DesignSpacePoint {
        mu,
        sigma,
        feasible_relaxed: relaxed_stage_bound(&m, q),
        feasible_stringent: stringent_stage_bound(&m, q, n_stages)?,
        realizable: mu >= a.min(b) && mu <= a.max(b),
    })
}

/// Samples the bound curves on `sigma_grid` (non-empty, strictly increasing).
pub fn design_space_region(
    q: &YieldQuery,
    n_stages: usize,
    chain: &ChainBounds,
    sigma_grid: &[f64],
) -> Result<Vec<DesignSpaceRow>> {
    if sigma_grid.is_empty() {
        return Err(Error::domain("sigma grid is empty"));
    }
    if sigma_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::domain("sigma grid must be strictly increasing"));
    }
    if sigma_grid.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
        return Err(Error::domain("sigma grid values must be finite and >= 0"));
    }
    if n_stages == 0 {
        return Err(Error::domain("number of stages must be >= 1"));
    }
    let z1 = q.z();
    let zn = q.per_stage_z(n_stages);
    sigma_grid
        .iter()
        .map(|&sigma| {
            let (mu_realizable_min, mu_realizable_max) = realizable_band(sigma, chain)?;
            let lowest = mu_realizable_min.min(mu_realizable_max);
            Ok(DesignSpaceRow {
                sigma,
                mu_relaxed: q.target_delay - sigma * z1,
                mu_stringent: q.target_delay - sigma * zn,
                mu_realizable_min,
                mu_realizable_max,
                lowest_realizable: classify_point(lowest, sigma, q, n_stages, chain)?,
            })
        })
        .collect()
}
