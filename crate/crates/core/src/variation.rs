//! Gate and stage delay models under inter-die, spatially correlated and
//! random process variation.
//!
//! A gate at size factor `x` has mean delay `p + q/x` and area
//! `area_coefficient · x`. Its standard deviation is a fixed fraction of the
//! mean, split across the three variation sources by variance fraction.
//! Within a stage, inter-die and systematic components add linearly (all the
//! gates share one die and one position) while random components add in
//! quadrature.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{CorrelationMatrix, GaussianMoments};

const FRACTION_SUM_TOL: f64 = 1e-9;

/// Split of delay variance over the three variation sources.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariationSpec {
    pub inter_die_fraction: f64,
    pub systematic_fraction: f64,
    pub random_fraction: f64,
    /// σ/μ of a single gate delay.
    pub total_sigma_ratio: f64,
    /// Distance at which the systematic correlation falls to 1/e.
    pub spatial_corr_length: f64,
}

impl VariationSpec {
    pub fn new(
        inter_die_fraction: f64,
        systematic_fraction: f64,
        random_fraction: f64,
        total_sigma_ratio: f64,
        spatial_corr_length: f64,
    ) -> Result<Self> {
        let v = Self {
            inter_die_fraction,
            systematic_fraction,
            random_fraction,
            total_sigma_ratio,
            spatial_corr_length,
        };
        v.validate()?;
        Ok(v)
    }

    /// Only random intra-die variation.
    pub fn random_only(total_sigma_ratio: f64) -> Self {
        Self::new(0.0, 0.0, 1.0, total_sigma_ratio, 1.0).expect("valid preset")
    }

    /// Only inter-die variation.
    pub fn inter_die_only(total_sigma_ratio: f64) -> Self {
        Self::new(1.0, 0.0, 0.0, total_sigma_ratio, 1.0).expect("valid preset")
    }

    pub fn validate(&self) -> Result<()> {
        let fractions = [
            ("variation.inter_die_fraction", self.inter_die_fraction),
            ("variation.systematic_fraction", self.systematic_fraction),
            ("variation.random_fraction", self.random_fraction),
        ];
        for (field, f) in fractions {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::invalid(field, format!("{f} is outside [0, 1]")));
            }
        }
        let sum: f64 = fractions.iter().map(|(_, f)| f).sum();
        if (sum - 1.0).abs() > FRACTION_SUM_TOL {
            return Err(Error::invalid(
                "variation",
                format!(
                    "inter_die_fraction + systematic_fraction + random_fraction = {sum}, expected 1"
                ),
            ));
        }
        if !(self.total_sigma_ratio >= 0.0) || !self.total_sigma_ratio.is_finite() {
            return Err(Error::invalid(
                "variation.total_sigma_ratio",
                "must be >= 0",
            ));
        }
        if !(self.spatial_corr_length > 0.0) || !self.spatial_corr_length.is_finite() {
            return Err(Error::invalid(
                "variation.spatial_corr_length",
                "must be > 0",
            ));
        }
        Ok(())
    }

    /// Spatial correlation kernel `exp(-d / L)`.
    pub fn spatial_kernel(&self, distance: f64) -> f64 {
        (-distance.abs() / self.spatial_corr_length).exp()
    }
}

/// One sizable gate in a stage's critical chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GateInstance {
    /// Size-independent delay (ps).
    #[serde(rename = "p")]
    pub intrinsic_delay: f64,
    /// Delay at unit size that scales as 1/x (ps).
    #[serde(rename = "q")]
    pub drive_coefficient: f64,
    pub area_coefficient: f64,
    #[serde(rename = "x")]
    pub size: f64,
    #[serde(rename = "L")]
    pub min_size: f64,
    #[serde(rename = "U")]
    pub max_size: f64,
}

impl GateInstance {
    pub fn new(
        intrinsic_delay: f64,
        drive_coefficient: f64,
        area_coefficient: f64,
        size: f64,
        min_size: f64,
        max_size: f64,
    ) -> Result<Self> {
        let g = Self {
            intrinsic_delay,
            drive_coefficient,
            area_coefficient,
            size,
            min_size,
            max_size,
        };
        g.validate("gate")?;
        Ok(g)
    }

    pub(crate) fn validate(&self, at: &str) -> Result<()> {
        let finite = [
            ("p", self.intrinsic_delay),
            ("q", self.drive_coefficient),
            ("area_coefficient", self.area_coefficient),
            ("x", self.size),
            ("L", self.min_size),
            ("U", self.max_size),
        ];
        for (name, v) in finite {
            if !v.is_finite() {
                return Err(Error::invalid(format!("{at}.{name}"), "must be finite"));
            }
        }
        if self.intrinsic_delay < 0.0 {
            return Err(Error::invalid(format!("{at}.p"), "must be >= 0"));
        }
        if self.drive_coefficient < 0.0 {
            return Err(Error::invalid(format!("{at}.q"), "must be >= 0"));
        }
        if self.area_coefficient <= 0.0 {
            return Err(Error::invalid(
                format!("{at}.area_coefficient"),
                "must be > 0",
            ));
        }
        if self.min_size <= 0.0 {
            return Err(Error::invalid(format!("{at}.L"), "must be > 0"));
        }
        if self.max_size < self.min_size {
            return Err(Error::invalid(format!("{at}.U"), "must be >= L"));
        }
        if self.size < self.min_size || self.size > self.max_size {
            return Err(Error::invalid(
                format!("{at}.x"),
                format!(
                    "{} is outside [{}, {}]",
                    self.size, self.min_size, self.max_size
                ),
            ));
        }
        Ok(())
    }

    /// Mean delay at size `x`.
    #[inline]
    pub fn delay_at(&self, x: f64) -> f64 {
        self.intrinsic_delay + self.drive_coefficient / x
    }

    #[inline]
    pub fn mean_delay(&self) -> f64 {
        self.delay_at(self.size)
    }

    #[inline]
    pub fn area(&self) -> f64 {
        self.area_coefficient * self.size
    }

    pub fn with_size(mut self, x: f64) -> Self {
        self.size = x.clamp(self.min_size, self.max_size);
        self
    }
}

/// Per-source standard deviations of a gate or stage delay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayComponents {
    pub mean: f64,
    pub sigma_inter: f64,
    pub sigma_sys: f64,
    pub sigma_rand: f64,
}

impl DelayComponents {
    pub fn total_sigma(&self) -> f64 {
        (self.sigma_inter * self.sigma_inter
            + self.sigma_sys * self.sigma_sys
            + self.sigma_rand * self.sigma_rand)
            .sqrt()
    }

    pub fn moments(&self) -> GaussianMoments {
        GaussianMoments {
            mean: self.mean,
            std_dev: self.total_sigma(),
        }
    }
}

pub fn gate_delay_moments(g: &GateInstance, v: &VariationSpec) -> DelayComponents {
    let mean = g.mean_delay();
    let sigma = v.total_sigma_ratio * mean;
    DelayComponents {
        mean,
        sigma_inter: v.inter_die_fraction.sqrt() * sigma,
        sigma_sys: v.systematic_fraction.sqrt() * sigma,
        sigma_rand: v.random_fraction.sqrt() * sigma,
    }
}

/// A pipeline stage: latch overhead plus one chain of gates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageModel {
    pub position: f64,
    /// Clock-to-Q plus setup time (ps).
    pub latch_overhead: f64,
    pub gates: Vec<GateInstance>,
}

impl StageModel {
    pub fn new(position: f64, latch_overhead: f64, gates: Vec<GateInstance>) -> Result<Self> {
        let s = Self {
            position,
            latch_overhead,
            gates,
        };
        s.validate("stage")?;
        Ok(s)
    }

    pub(crate) fn validate(&self, at: &str) -> Result<()> {
        if self.gates.is_empty() {
            return Err(Error::invalid(
                format!("{at}.gates"),
                "a stage needs at least one gate",
            ));
        }
        if !(self.latch_overhead >= 0.0) || !self.latch_overhead.is_finite() {
            return Err(Error::invalid(
                format!("{at}.latch_overhead"),
                "must be >= 0",
            ));
        }
        if !self.position.is_finite() {
            return Err(Error::invalid(format!("{at}.position"), "must be finite"));
        }
        for (i, g) in self.gates.iter().enumerate() {
            g.validate(&format!("{at}.gates[{i}]"))?;
        }
        Ok(())
    }

    pub fn logic_depth(&self) -> usize {
        self.gates.len()
    }

    pub fn area(&self) -> f64 {
        self.gates.iter().map(GateInstance::area).sum()
    }

    pub fn mean_delay(&self) -> f64 {
        self.latch_overhead + self.gates.iter().map(GateInstance::mean_delay).sum::<f64>()
    }

    pub fn sizes(&self) -> Vec<f64> {
        self.gates.iter().map(|g| g.size).collect()
    }

    /// Copy with the given sizes, clamped into each gate's bounds.
    pub fn with_sizes(&self, sizes: &[f64]) -> Self {
        let gates = self
            .gates
            .iter()
            .zip(sizes)
            .map(|(g, &x)| g.with_size(x))
            .collect();
        Self {
            gates,
            ..self.clone()
        }
    }
}

pub fn stage_distribution(s: &StageModel, v: &VariationSpec) -> DelayComponents {
    let mut chain = 0.0;
    let mut sum_sq = 0.0;
    for g in &s.gates {
        let d = g.mean_delay();
        chain += d;
        sum_sq += d * d;
    }
    stage_components(s.latch_overhead, chain, sum_sq, v)
}

/// Stage components from the chain delay sum and the sum of squared gate
/// delays.
#[inline]
pub(crate) fn stage_components(
    latch_overhead: f64,
    chain: f64,
    sum_sq: f64,
    v: &VariationSpec,
) -> DelayComponents {
    let r = v.total_sigma_ratio;
    DelayComponents {
        mean: latch_overhead + chain,
        sigma_inter: v.inter_die_fraction.sqrt() * r * chain,
        sigma_sys: v.systematic_fraction.sqrt() * r * chain,
        sigma_rand: v.random_fraction.sqrt() * r * sum_sq.sqrt(),
    }
}

/// Ordered stages sharing one variation specification.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineModel {
    pub stages: Vec<StageModel>,
    pub variation: VariationSpec,
    /// When present, used verbatim instead of the correlation derived from
    /// the variation components.
    pub correlation_override: Option<CorrelationMatrix>,
}

impl PipelineModel {
    pub fn new(stages: Vec<StageModel>, variation: VariationSpec) -> Result<Self> {
        let p = Self {
            stages,
            variation,
            correlation_override: None,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_correlation(mut self, corr: CorrelationMatrix) -> Result<Self> {
        self.correlation_override = Some(corr);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::invalid(
                "stages",
                "a pipeline needs at least one stage",
            ));
        }
        self.variation.validate()?;
        for (i, s) in self.stages.iter().enumerate() {
            s.validate(&format!("stages[{i}]"))?;
        }
        if let Some(c) = &self.correlation_override {
            if c.dim() != self.stages.len() {
                return Err(Error::invalid(
                    "correlation_matrix",
                    format!(
                        "is {0}x{0} but there are {1} stages",
                        c.dim(),
                        self.stages.len()
                    ),
                ));
            }
        }
        Ok(())
    }

    pub fn num_stages(&self) -> usize {
        self.stages.len()
    }

    pub fn total_area(&self) -> f64 {
        self.stages.iter().map(StageModel::area).sum()
    }

    pub fn stage_components(&self) -> Vec<DelayComponents> {
        self.stages
            .iter()
            .map(|s| stage_distribution(s, &self.variation))
            .collect()
    }

    pub fn stage_moments(&self) -> Vec<GaussianMoments> {
        self.stage_components()
            .iter()
            .map(DelayComponents::moments)
            .collect()
    }
}

/// Correlation matrix between stage delays.
pub fn stage_correlation_matrix(p: &PipelineModel) -> CorrelationMatrix {
    if let Some(c) = &p.correlation_override {
        return c.clone();
    }
    correlation_from_components(&p.stage_components(), &p.stages, &p.variation)
}

pub(crate) fn correlation_from_components(
    comps: &[DelayComponents],
    stages: &[StageModel],
    v: &VariationSpec,
) -> CorrelationMatrix {
    correlation_with_kernel(comps, |i, j| {
        v.spatial_kernel(stages[i].position - stages[j].position)
    })
}

/// Stage correlation given the spatial kernel between stages `i` and `j`.
pub(crate) fn correlation_with_kernel(
    comps: &[DelayComponents],
    kernel: impl Fn(usize, usize) -> f64,
) -> CorrelationMatrix {
    let n = comps.len();
    let sigma: Vec<f64> = comps.iter().map(DelayComponents::total_sigma).collect();
    let mut entries = vec![0.0; n * n];
    for i in 0..n {
        entries[i * n + i] = 1.0;
        for j in (i + 1)..n {
            let rho = if sigma[i] > 0.0 && sigma[j] > 0.0 {
                let cov = comps[i].sigma_inter * comps[j].sigma_inter
                    + kernel(i, j) * comps[i].sigma_sys * comps[j].sigma_sys;
                (cov / (sigma[i] * sigma[j])).clamp(-1.0, 1.0)
            } else {
                0.0
            };
            entries[i * n + j] = rho;
            entries[j * n + i] = rho;
        }
    }
    CorrelationMatrix::from_parts_unchecked(n, entries)
}

/// Stage of `n_l` identical minimum-size inverters with random-only
/// variation: `(n_l·μ_min, √n_l·σ_min)`.
pub fn inverter_chain_relation(n_l: usize, mu_min: f64, sigma_min: f64) -> Result<GaussianMoments> {
    if n_l == 0 {
        return Err(Error::domain("logic depth must be >= 1"));
    }
    if !(mu_min > 0.0) || !(sigma_min >= 0.0) {
        return Err(Error::domain("need mu_min > 0 and sigma_min >= 0"));
    }
    let n = n_l as f64;
    GaussianMoments::new(n * mu_min, n.sqrt() * sigma_min)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gate(p: f64, q: f64) -> GateInstance {
        GateInstance::new(p, q, 1.0, 1.0, 0.5, 8.0).unwrap()
    }

    fn spec(fi: f64, fs: f64, fr: f64, ratio: f64) -> VariationSpec {
        VariationSpec::new(fi, fs, fr, ratio, 1.0).unwrap()
    }

    #[test]
    fn gate_components_single_source() {
        let g = gate(5.0, 5.0);
        let d = gate_delay_moments(&g, &spec(0.0, 0.0, 1.0, 0.1));
        assert_eq!(d.mean, 10.0);
        assert!((d.sigma_rand - 1.0).abs() < 1e-15);
        assert_eq!((d.sigma_inter, d.sigma_sys), (0.0, 0.0));
        let d = gate_delay_moments(&g, &spec(1.0, 0.0, 0.0, 0.1));
        assert!((d.sigma_inter - 1.0).abs() < 1e-15);
    }

    #[test]
    fn gate_delay_decreases_with_size() {
        let g = gate(2.0, 6.0);
        let mut prev = f64::INFINITY;
        for i in 0..=30 {
            let x = 0.5 + 7.5 * i as f64 / 30.0;
            let d = g.with_size(x).mean_delay();
            assert!(d < prev);
            prev = d;
        }
        assert!((g.with_size(8.0).mean_delay() - (2.0 + 6.0 / 8.0)).abs() < 1e-15);
    }

    #[test]
    fn variance_decomposition() {
        let v = spec(0.3, 0.2, 0.5, 0.07);
        let g = gate(3.0, 4.0);
        let d = gate_delay_moments(&g, &v);
        let total = 0.07 * d.mean;
        assert!((d.total_sigma() - total).abs() / total < 1e-9);

        let s = StageModel::new(
            0.0,
            4.0,
            vec![gate(1.0, 2.0), gate(3.0, 1.0), gate(2.0, 2.0)],
        )
        .unwrap();
        let c = stage_distribution(&s, &v);
        let var = c.sigma_inter.powi(2) + c.sigma_sys.powi(2) + c.sigma_rand.powi(2);
        assert!((var.sqrt() - c.total_sigma()).abs() < 1e-12);
    }

    #[test]
    fn stage_mean_adds_latch() {
        let s = StageModel::new(0.0, 2.0, vec![gate(5.0, 5.0)]).unwrap();
        assert_eq!(stage_distribution(&s, &spec(0.0, 0.0, 1.0, 0.1)).mean, 12.0);
    }

    #[test]
    fn random_variability_shrinks_as_sqrt_depth() {
        let v = spec(0.0, 0.0, 1.0, 0.1);
        let chain = |n| StageModel::new(0.0, 0.0, vec![gate(5.0, 5.0); n]).unwrap();
        for n in [1, 2, 5, 10] {
            let a = stage_distribution(&chain(n), &v).moments().variability();
            let b = stage_distribution(&chain(2 * n), &v)
                .moments()
                .variability();
            assert!((a / b - 2f64.sqrt()).abs() < 1e-12);
        }
        let v = spec(1.0, 0.0, 0.0, 0.1);
        for n in [1, 3, 12] {
            let cv = stage_distribution(&chain(n), &v).moments().variability();
            assert!((cv - 0.1).abs() < 1e-12);
        }
    }

    #[test]
    fn chain_matches_inverter_relation() {
        let v = spec(0.0, 0.0, 1.0, 0.1);
        for n in [1, 4, 10, 24] {
            let s = StageModel::new(0.0, 0.0, vec![gate(4.0, 6.0); n]).unwrap();
            let m = stage_distribution(&s, &v).moments();
            let r = inverter_chain_relation(n, 10.0, 1.0).unwrap();
            assert!((m.mean - r.mean).abs() < 1e-12);
            assert!((m.std_dev - r.std_dev).abs() < 1e-12);
        }
    }

    #[test]
    fn inverter_relation_examples() {
        let r = inverter_chain_relation(1, 10.0, 1.0).unwrap();
        assert_eq!((r.mean, r.std_dev), (10.0, 1.0));
        let r = inverter_chain_relation(10, 10.0, 1.0).unwrap();
        assert_eq!(r.mean, 100.0);
        assert!((r.std_dev - 3.162_277_660_168_379_5).abs() < 1e-12);
        // mu = (mu_min / sigma_min^2) sigma^2
        assert!((r.mean - 10.0 * r.std_dev.powi(2)).abs() < 1e-9);
        let r4 = inverter_chain_relation(4, 10.0, 1.0).unwrap();
        assert!((r4.variability() - 0.5 * 0.1).abs() < 1e-15);
        assert!(inverter_chain_relation(0, 10.0, 1.0).is_err());
    }

    fn pipeline(v: VariationSpec, positions: &[f64]) -> PipelineModel {
        let stages = positions
            .iter()
            .enumerate()
            .map(|(i, &x)| StageModel::new(x, 3.0, vec![gate(2.0 + i as f64, 4.0); 3]).unwrap())
            .collect();
        PipelineModel::new(stages, v).unwrap()
    }

    #[test]
    fn correlation_presets() {
        let c = stage_correlation_matrix(&pipeline(spec(0.0, 0.0, 1.0, 0.1), &[0.0, 1.0, 2.0]));
        assert_eq!(c, CorrelationMatrix::identity(3));
        let c = stage_correlation_matrix(&pipeline(spec(1.0, 0.0, 0.0, 0.1), &[0.0, 5.0, 9.0]));
        for i in 0..3 {
            for j in 0..3 {
                assert!((c.get(i, j) - 1.0).abs() < 1e-15);
            }
        }
        let v = VariationSpec::new(0.0, 1.0, 0.0, 0.1, 2.5).unwrap();
        let c = stage_correlation_matrix(&pipeline(v, &[0.0, 2.5]));
        assert!((c.get(0, 1) - (-1f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn correlation_is_psd() {
        let v = VariationSpec::new(0.2, 0.5, 0.3, 0.1, 1.5).unwrap();
        let p = pipeline(v, &[0.0, 0.4, 1.1, 3.0, 3.2, 7.0]);
        let ev = stage_correlation_matrix(&p).eigenvalues();
        assert!(ev[0] >= -1e-8);
    }

    #[test]
    fn zero_sigma_stage_is_uncorrelated() {
        let p = pipeline(spec(1.0, 0.0, 0.0, 0.0), &[0.0, 1.0]);
        assert_eq!(stage_correlation_matrix(&p).get(0, 1), 0.0);
    }

    #[test]
    fn validation_names_fields() {
        let err = VariationSpec::new(0.5, 0.2, 0.2, 0.1, 1.0).unwrap_err();
        assert!(err.to_string().contains("variation"));
        let err = GateInstance::new(1.0, 1.0, 1.0, 9.0, 0.5, 8.0).unwrap_err();
        assert!(matches!(err, Error::Invalid { ref field, .. } if field == "gate.x"));
        assert!(StageModel::new(0.0, 1.0, vec![]).is_err());
        assert!(StageModel::new(0.0, -1.0, vec![gate(1.0, 1.0)]).is_err());
        assert!(PipelineModel::new(vec![], spec(0.0, 0.0, 1.0, 0.1)).is_err());
        let p = pipeline(spec(0.0, 0.0, 1.0, 0.1), &[0.0, 1.0]);
        assert!(p.with_correlation(CorrelationMatrix::identity(3)).is_err());
    }
}
