//! Reference pipelines for sweeps, benchmarks and tests.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::montecarlo::{sample_moments, sample_stage_delays, McConfig};
use crate::variation::{GateInstance, PipelineModel, StageModel, VariationSpec};
use crate::yield_analysis::{pipeline_distribution, YieldQuery};

/// Minimum-size inverter: 10 ps at x = 1, sizable up to 8x.
pub fn inverter() -> GateInstance {
    GateInstance {
        intrinsic_delay: 2.0,
        drive_coefficient: 8.0,
        area_coefficient: 1.0,
        size: 1.0,
        min_size: 1.0,
        max_size: 8.0,
    }
}

/// `n_stages` identical stages of `depth` copies of `gate`, at positions
/// 0, 1, 2, ...
pub fn uniform_pipeline(
    n_stages: usize,
    depth: usize,
    gate: GateInstance,
    latch_overhead: f64,
    v: VariationSpec,
) -> Result<PipelineModel> {
    if n_stages == 0 || depth == 0 {
        return Err(Error::domain(
            "need at least one stage and one gate per stage",
        ));
    }
    let stages = (0..n_stages)
        .map(|i| StageModel::new(i as f64, latch_overhead, vec![gate; depth]))
        .collect::<Result<Vec<_>>>()?;
    PipelineModel::new(stages, v)
}

/// Named variation regime used by the logic-depth sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regime {
    pub name: String,
    pub variation: VariationSpec,
}

impl Regime {
    pub fn new(name: impl Into<String>, variation: VariationSpec) -> Self {
        Self {
            name: name.into(),
            variation,
        }
    }

    /// Random-only, inter-die-only and a 50/25/25 mix, all at `ratio`.
    pub fn standard(ratio: f64) -> Vec<Regime> {
        vec![
            Regime::new("random", VariationSpec::random_only(ratio)),
            Regime::new("inter", VariationSpec::inter_die_only(ratio)),
            Regime::new(
                "mixed",
                VariationSpec::new(0.5, 0.25, 0.25, ratio, 2.0).expect("valid preset"),
            ),
        ]
    }
}

/// Pipelines of a fixed total logic depth split into different numbers of
/// stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub total_levels: usize,
    pub stage_counts: Vec<usize>,
    pub regimes: Vec<Regime>,
    /// Fixed latch overhead added to every stage (ps).
    pub latch_overhead: f64,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.total_levels == 0 {
            return Err(Error::invalid("total_levels", "must be >= 1"));
        }
        if self.stage_counts.is_empty() {
            return Err(Error::invalid("stage_counts", "must not be empty"));
        }
        for (i, &n) in self.stage_counts.iter().enumerate() {
            if n == 0 || !self.total_levels.is_multiple_of(n) {
                return Err(Error::invalid(
                    format!("stage_counts[{i}]"),
                    format!("{n} does not divide {} levels", self.total_levels),
                ));
            }
        }
        if !(self.latch_overhead >= 0.0) || !self.latch_overhead.is_finite() {
            return Err(Error::invalid("latch_overhead", "must be >= 0"));
        }
        if self.regimes.is_empty() {
            return Err(Error::invalid("regimes", "must not be empty"));
        }
        for r in &self.regimes {
            r.variation.validate()?;
        }
        Ok(())
    }
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            total_levels: 120,
            stage_counts: vec![2, 3, 4, 5, 6, 8, 10, 12, 15, 20],
            regimes: Regime::standard(0.1),
            latch_overhead: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub regime: String,
    pub n_stages: usize,
    pub logic_depth: usize,
    pub mean: f64,
    pub std_dev: f64,
    pub variability: f64,
    pub mc_mean: Option<f64>,
    pub mc_std_dev: Option<f64>,
    pub mc_variability: Option<f64>,
}

/// Pipeline-delay variability for every (regime, stage count) pair.
pub fn variability_sweep(spec: &SweepSpec, mc: Option<&McConfig>) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    let mut rows = Vec::new();
    for regime in &spec.regimes {
        for &n in &spec.stage_counts {
            let depth = spec.total_levels / n;
            let p = uniform_pipeline(n, depth, inverter(), spec.latch_overhead, regime.variation)?;
            let d = pipeline_distribution(&p)?;
            let (mc_mean, mc_std_dev) = match mc {
                Some(cfg) => {
                    let samples = sample_stage_delays(&p, cfg)?;
                    let m = sample_moments(&samples.row_maxima());
                    (Some(m.mean), Some(m.std_dev))
                }
                None => (None, None),
            };
            rows.push(SweepRow {
                regime: regime.name.clone(),
                n_stages: n,
                logic_depth: depth,
                mean: d.mean,
                std_dev: d.std_dev,
                variability: d.std_dev / d.mean,
                mc_mean,
                mc_std_dev,
                mc_variability: mc_mean.zip(mc_std_dev).map(|(m, s)| s / m),
            });
        }
    }
    Ok(rows)
}

fn gate(p: f64, q: f64, c: f64, max: f64) -> GateInstance {
    GateInstance {
        intrinsic_delay: p,
        drive_coefficient: q,
        area_coefficient: c,
        size: 1.0,
        min_size: 0.5,
        max_size: max,
    }
}

/// `n` copies of `g`; with `spread`, p and q follow a fixed ±30 % pattern so
/// the gates in a stage are not all alike.
fn chain(position: f64, latch: f64, n: usize, g: GateInstance, spread: bool) -> StageModel {
    let gates = (0..n)
        .map(|i| {
            let j = if spread {
                1.0 + 0.3 * ((i * 7 % 5) as f64 - 2.0) / 2.0
            } else {
                1.0
            };
            GateInstance {
                intrinsic_delay: g.intrinsic_delay * j,
                drive_coefficient: g.drive_coefficient * j,
                ..g
            }
        })
        .collect();
    StageModel::new(position, latch, gates).expect("valid synthetic stage")
}

/// Three stages with different area-delay curves: a mid-size chain, a
/// short chain of large gates and a long chain of cheap ones.
pub fn three_stage_heterogeneous() -> (PipelineModel, YieldQuery) {
    let v = VariationSpec::new(0.5, 0.25, 0.25, 0.1, 2.0).expect("valid preset");
    let stages = vec![
        chain(0.0, 5.0, 12, gate(1.0, 6.0, 1.0, 4.0), false),
        chain(1.0, 5.0, 8, gate(1.5, 10.0, 2.0, 4.0), false),
        chain(2.0, 5.0, 16, gate(0.8, 3.0, 0.5, 4.0), false),
    ];
    let p = PipelineModel::new(stages, v).expect("valid synthetic pipeline");
    (p, YieldQuery::new(100.0, 0.8).expect("valid query"))
}

/// Four heterogeneous stages of 10, 20, 30 and 40 gates. `first_stage_max`
/// caps the size of the gates in the first stage.
pub fn four_stage_benchmark(v: VariationSpec, first_stage_max: f64) -> PipelineModel {
    let stages = vec![
        chain(0.0, 6.0, 10, gate(2.0, 14.0, 3.0, first_stage_max), true),
        chain(1.0, 6.0, 20, gate(1.2, 5.0, 1.0, 6.0), true),
        chain(2.0, 6.0, 30, gate(0.8, 2.5, 0.6, 6.0), true),
        chain(3.0, 6.0, 40, gate(0.5, 2.0, 0.4, 6.0), true),
    ];
    PipelineModel::new(stages, v).expect("valid synthetic pipeline")
}

/// Operating point where the balanced baseline misses the yield target:
/// random-only variation and a first stage that cannot be sized up enough.
pub fn four_stage_repair_case() -> (PipelineModel, YieldQuery) {
    (
        four_stage_benchmark(VariationSpec::random_only(0.1), 3.4),
        YieldQuery::new(70.0, 0.8).expect("valid query"),
    )
}

/// Operating point where strong inter-die correlation lets the baseline
/// overshoot the target, leaving area to recover.
pub fn four_stage_area_case() -> (PipelineModel, YieldQuery) {
    let v = VariationSpec::new(0.7, 0.1, 0.2, 0.1, 2.0).expect("valid preset");
    (
        four_stage_benchmark(v, 6.0),
        YieldQuery::new(70.0, 0.8).expect("valid query"),
    )
}
