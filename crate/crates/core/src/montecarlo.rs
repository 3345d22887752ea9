//! Monte-Carlo reference for the analytical pipeline model.
//!
//! Each die is a row of jointly Gaussian stage delays. Rows are generated in
//! fixed-size batches; batch `b` draws from the ChaCha8 stream `b` of a
//! generator keyed by the configured seed, so the sample matrix depends only
//! on `(seed, samples, batch_size)` and not on how many threads fill it.
//! Standard normals come from the inverse-cdf transform through
//! [`crate::normal::std_normal_quantile`].

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{CorrelationMatrix, GaussianMoments};
use crate::normal::{quantile_unchecked, std_normal_pdf};
use crate::variation::{stage_correlation_matrix, PipelineModel};
use crate::yield_analysis::{
    pipeline_distribution_detailed, yield_gaussian, yield_independent, YieldQuery,
};

/// Eigenvalues below this are raised to it during repair.
pub const EIGENVALUE_FLOOR: f64 = 1e-10;
/// Matrices with an eigenvalue below `-REPAIR_LIMIT` are rejected.
pub const REPAIR_LIMIT: f64 = 1e-4;
const PIVOT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct McConfig {
    pub samples: usize,
    pub seed: u64,
    pub batch_size: usize,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            samples: 100_000,
            seed: 42,
            batch_size: 4096,
        }
    }
}

impl McConfig {
    pub fn new(samples: usize, seed: u64) -> Self {
        Self {
            samples,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::invalid("samples", "must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be >= 1"));
        }
        Ok(())
    }
}

/// Row-major `samples × stages` matrix of delays.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl SampleMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows)
            .map(|i| self.data[i * self.cols + j])
            .collect()
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols)
    }

    /// Per-die maximum over stages.
    pub fn row_maxima(&self) -> Vec<f64> {
        self.iter_rows()
            .map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect()
    }
}

/// Lower-triangular factor `L` with `L Lᵀ = C`, row-major.
///
/// PSD inputs (including rank-deficient ones) are factored directly with
/// zero pivots dropped, so exact structure such as all-ones blocks survives.
/// Indefinite inputs are repaired first: eigenvalues are raised to
/// [`EIGENVALUE_FLOOR`] and the diagonal is rescaled back to one.
pub fn correlation_factor(c: &CorrelationMatrix) -> Result<Vec<f64>> {
    if let Some(l) = semidefinite_cholesky(c.as_slice(), c.dim()) {
        return Ok(l);
    }
    let repaired = repair_psd(c)?;
    semidefinite_cholesky(repaired.as_slice(), repaired.dim()).ok_or(Error::NotPsd {
        min_eigenvalue: f64::NAN,
    })
}

/// Returns `None` when a pivot is clearly negative.
fn semidefinite_cholesky(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        if d < -PIVOT_TOL {
            return None;
        }
        if d <= PIVOT_TOL {
            continue;
        }
        let ljj = d.sqrt();
        l[j * n + j] = ljj;
        for i in (j + 1)..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / ljj;
        }
    }
    Some(l)
}

/// Eigenvalue-clamping repair toward the nearest correlation matrix.
pub fn repair_psd(c: &CorrelationMatrix) -> Result<CorrelationMatrix> {
    let n = c.dim();
    let m = nalgebra::DMatrix::from_row_slice(n, n, c.as_slice());
    let eig = m.symmetric_eigen();
    let min_eigenvalue = eig
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if min_eigenvalue < -REPAIR_LIMIT {
        return Err(Error::NotPsd { min_eigenvalue });
    }
    let clamped = eig.eigenvalues.map(|v| v.max(EIGENVALUE_FLOOR));
    let rebuilt = &eig.eigenvectors
        * nalgebra::DMatrix::from_diagonal(&clamped)
        * eig.eigenvectors.transpose();
    let scale: Vec<f64> = (0..n).map(|i| rebuilt[(i, i)].sqrt()).collect();
    CorrelationMatrix::from_fn(n, |i, j| {
        let v = 0.5 * (rebuilt[(i, j)] + rebuilt[(j, i)]) / (scale[i] * scale[j]);
        v.clamp(-1.0, 1.0)
    })
}

#[inline]
fn open_unit(rng: &mut ChaCha8Rng) -> f64 {
    // 53 random bits centred in their cell: never 0 or 1.
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Draws `cfg.samples` rows of jointly Gaussian variables.
pub fn sample_correlated(
    moments: &[GaussianMoments],
    corr: &CorrelationMatrix,
    cfg: &McConfig,
) -> Result<SampleMatrix> {
    cfg.validate()?;
    let n = moments.len();
    if n == 0 || corr.dim() != n {
        return Err(Error::domain(
            "moments and correlation matrix disagree in size",
        ));
    }
    let l = correlation_factor(corr)?;
    let batches = cfg.samples.div_ceil(cfg.batch_size);

    let chunks: Vec<Vec<f64>> = (0..batches)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(b as u64);
            let start = b * cfg.batch_size;
            let rows = cfg.batch_size.min(cfg.samples - start);
            let mut out = Vec::with_capacity(rows * n);
            let mut e = vec![0.0; n];
            for _ in 0..rows {
                for v in e.iter_mut() {
                    *v = quantile_unchecked(open_unit(&mut rng));
                }
                for i in 0..n {
                    let row = &l[i * n..i * n + i + 1];
                    let z: f64 = row.iter().zip(&e).map(|(a, b)| a * b).sum();
                    out.push(moments[i].mean + moments[i].std_dev * z);
                }
            }
            out
        })
        .collect();

    let mut data = Vec::with_capacity(cfg.samples * n);
    for c in chunks {
        data.extend_from_slice(&c);
    }
    Ok(SampleMatrix {
        rows: cfg.samples,
        cols: n,
        data,
    })
}

/// Samples per-stage delays of `p`, one row per die.
pub fn sample_stage_delays(p: &PipelineModel, cfg: &McConfig) -> Result<SampleMatrix> {
    p.validate()?;
    sample_correlated(&p.stage_moments(), &stage_correlation_matrix(p), cfg)
}

/// Mean and unbiased standard deviation.
pub fn sample_moments(values: &[f64]) -> GaussianMoments {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    GaussianMoments {
        mean,
        std_dev: var.sqrt(),
    }
}

/// Moments of the per-row maximum and the fraction of rows below `target`.
pub fn empirical_max_stats(
    samples: &SampleMatrix,
    target_delay: f64,
) -> Result<(GaussianMoments, f64)> {
    if samples.rows == 0 || samples.cols == 0 {
        return Err(Error::domain("empty sample matrix"));
    }
    let maxima = samples.row_maxima();
    let passing = maxima.iter().filter(|&&m| m < target_delay).count();
    Ok((
        sample_moments(&maxima),
        passing as f64 / maxima.len() as f64,
    ))
}

/// Pearson correlation of two equally long samples.
pub fn sample_correlation(a: &[f64], b: &[f64]) -> f64 {
    let ma = sample_moments(a);
    let mb = sample_moments(b);
    let n = a.len() as f64;
    let cov = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - ma.mean) * (y - mb.mean))
        .sum::<f64>()
        / (n - 1.0);
    cov / (ma.std_dev * mb.std_dev)
}

/// Analytical model against Monte-Carlo for one pipeline and target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub samples: usize,
    pub seed: u64,
    pub target_delay: f64,
    pub empirical: GaussianMoments,
    pub empirical_yield: f64,
    pub analytical: GaussianMoments,
    pub analytical_yield: f64,
    /// Product-of-stages yield, exact only for independent stages.
    pub independent_yield: f64,
    pub mean_error_pct: f64,
    pub sigma_error_pct: f64,
    pub standard_error_mean: f64,
    /// Largest correlation overshoot clamped during the fold.
    pub clamp_excess: f64,
}

fn pct_error(analytical: f64, empirical: f64) -> f64 {
    if empirical == 0.0 {
        if analytical == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (analytical - empirical).abs() / empirical.abs() * 100.0
    }
}

pub fn model_error_report(p: &PipelineModel, q: &YieldQuery, cfg: &McConfig) -> Result<McReport> {
    let samples = sample_stage_delays(p, cfg)?;
    report_from_samples(p, q, cfg, &samples)
}

pub fn report_from_samples(
    p: &PipelineModel,
    q: &YieldQuery,
    cfg: &McConfig,
    samples: &SampleMatrix,
) -> Result<McReport> {
    let reduction = pipeline_distribution_detailed(p)?;
    let analytical = reduction.moments;
    let (empirical, empirical_yield) = empirical_max_stats(samples, q.target_delay)?;
    Ok(McReport {
        samples: cfg.samples,
        seed: cfg.seed,
        target_delay: q.target_delay,
        empirical,
        empirical_yield,
        analytical,
        analytical_yield: yield_gaussian(&analytical, q.target_delay),
        independent_yield: yield_independent(&p.stage_moments(), q.target_delay)?,
        mean_error_pct: pct_error(analytical.mean, empirical.mean),
        sigma_error_pct: pct_error(analytical.std_dev, empirical.std_dev),
        standard_error_mean: empirical.std_dev / (cfg.samples as f64).sqrt(),
        clamp_excess: reduction.clamp_excess,
    })
}

/// One histogram bin with the empirical and analytical densities (1/ps).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub empirical_density: f64,
    pub analytical_density: f64,
}

/// Equal-width histogram of `values` over their range, overlaid with the
/// Gaussian density of `analytical` at each bin centre.
pub fn delay_histogram(
    values: &[f64],
    bins: usize,
    analytical: &GaussianMoments,
) -> Vec<HistogramBin> {
    if values.is_empty() || bins == 0 {
        return Vec::new();
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo {
        (hi - lo) / bins as f64
    } else {
        1.0
    };
    let mut counts = vec![0usize; bins];
    for &v in values {
        let k = (((v - lo) / width) as usize).min(bins - 1);
        counts[k] += 1;
    }
    let n = values.len() as f64;
    counts
        .iter()
        .enumerate()
        .map(|(k, &count)| {
            let lower = lo + k as f64 * width;
            let centre = lower + 0.5 * width;
            let analytical_density = if analytical.std_dev > 0.0 {
                std_normal_pdf((centre - analytical.mean) / analytical.std_dev) / analytical.std_dev
            } else {
                0.0
            };
            HistogramBin {
                lower,
                upper: lower + width,
                count,
                empirical_density: count as f64 / (n * width),
                analytical_density,
            }
        })
        .collect()
}
