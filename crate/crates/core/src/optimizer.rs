//! Yield-constrained sizing of pipeline stages.
//!
//! The per-stage sizer minimises `Σ c_g x_g` subject to `μ + kσ ≤ budget`
//! with a Lagrangian fixed point: for fixed delay weights the stationarity
//! condition gives every gate size in closed form as a function of one
//! multiplier, which is then found by bisection. The weights are refreshed
//! from the new sizes until they settle.
//!
//! The pipeline-level optimiser sizes one stage at a time against a working
//! budget, re-folds the pipeline after every stage, and moves the budget by
//! the remaining slack. A second phase trades delay between stages whenever
//! the marginal area rates say it pays.

use serde::{Deserialize, Serialize};

use crate::clark::max_reduce;
use crate::error::{Error, Result};
use crate::gaussian::{CorrelationMatrix, GaussianMoments};
use crate::variation::{
    correlation_with_kernel, stage_components, DelayComponents, PipelineModel, StageModel,
    VariationSpec,
};
use crate::yield_analysis::{pipeline_distribution, yield_gaussian, YieldQuery};

const LR_MAX_ITERS: usize = 200;
const LR_TOL: f64 = 1e-10;
const BISECT_ITERS: usize = 200;
/// Relative step used for the sensitivity finite difference.
const SENSITIVITY_STEP: f64 = 1e-3;
/// A solution meets the target when its yield is at least `Y - FEASIBILITY_TOL`.
pub const FEASIBILITY_TOL: f64 = 1e-9;

/// One point of a stage's area-delay trade-off curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AreaDelayPoint {
    pub area: f64,
    pub delay_mean: f64,
    pub delay_sigma: f64,
}

/// Result of sizing a single stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageSizing {
    pub stage: StageModel,
    /// `false` when even the all-maximum sizing misses the budget.
    pub feasible: bool,
    /// `μ + kσ` at the returned sizes.
    pub constraint: f64,
    /// Area saved per unit of extra budget at the optimum.
    pub multiplier: f64,
}

impl StageSizing {
    pub fn area(&self) -> f64 {
        self.stage.area()
    }
}

fn stage_constraint(s: &StageModel, v: &VariationSpec, k: f64, x: &[f64]) -> f64 {
    let mut chain = 0.0;
    let mut sum_sq = 0.0;
    for (g, &xi) in s.gates.iter().zip(x) {
        let d = g.delay_at(xi);
        chain += d;
        sum_sq += d * d;
    }
    let c = stage_components(s.latch_overhead, chain, sum_sq, v);
    c.mean + k * c.total_sigma()
}

/// `∂(μ + kσ)/∂d_g` for every gate at sizes `x`.
fn delay_weights(s: &StageModel, v: &VariationSpec, k: f64, x: &[f64]) -> Vec<f64> {
    let d: Vec<f64> = s
        .gates
        .iter()
        .zip(x)
        .map(|(g, &xi)| g.delay_at(xi))
        .collect();
    let chain: f64 = d.iter().sum();
    let sum_sq: f64 = d.iter().map(|di| di * di).sum();
    let a = v.inter_die_fraction + v.systematic_fraction;
    let fr = v.random_fraction;
    let r = v.total_sigma_ratio;
    let root = (a * chain * chain + fr * sum_sq).sqrt();
    d.iter()
        .map(|&di| {
            if root > 0.0 {
                (1.0 + k * r * (a * chain + fr * di) / root).max(1e-9)
            } else {
                1.0
            }
        })
        .collect()
}

fn sizes_for_multiplier(s: &StageModel, w: &[f64], ln_lambda: f64) -> Vec<f64> {
    let lambda = ln_lambda.exp();
    s.gates
        .iter()
        .zip(w)
        .map(|(g, &wi)| {
            if g.drive_coefficient > 0.0 {
                (lambda * wi * g.drive_coefficient / g.area_coefficient)
                    .sqrt()
                    .clamp(g.min_size, g.max_size)
            } else {
                g.min_size
            }
        })
        .collect()
}

/// Smallest multiplier whose closed-form sizes meet the budget.
fn solve_multiplier(
    s: &StageModel,
    v: &VariationSpec,
    k: f64,
    budget: f64,
    w: &[f64],
) -> (f64, Vec<f64>) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (g, &wi) in s.gates.iter().zip(w) {
        if g.drive_coefficient > 0.0 {
            let scale = g.area_coefficient / (wi * g.drive_coefficient);
            lo = lo.min((g.min_size * g.min_size * scale).ln());
            hi = hi.max((g.max_size * g.max_size * scale).ln());
        }
    }
    lo -= 1.0;
    hi += 1.0;
    for _ in 0..BISECT_ITERS {
        let mid = 0.5 * (lo + hi);
        if stage_constraint(s, v, k, &sizes_for_multiplier(s, w, mid)) <= budget {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo < 1e-14 {
            break;
        }
    }
    (hi.exp(), sizes_for_multiplier(s, w, hi))
}

/// Minimum-area sizing of one stage subject to `μ + kσ ≤ budget`.
///
/// The current sizes are only used as a starting point. When the budget
/// cannot be met the all-maximum sizing is returned with `feasible = false`.
pub fn size_stage(s: &StageModel, v: &VariationSpec, budget: f64, k: f64) -> Result<StageSizing> {
    if !budget.is_finite() || budget <= 0.0 {
        return Err(Error::domain("stage budget must be finite and > 0"));
    }
    if !k.is_finite() {
        return Err(Error::domain("k must be finite"));
    }
    let upper: Vec<f64> = s.gates.iter().map(|g| g.max_size).collect();
    let at_upper = stage_constraint(s, v, k, &upper);
    if budget <= s.latch_overhead || at_upper > budget {
        return Ok(StageSizing {
            stage: s.with_sizes(&upper),
            feasible: false,
            constraint: at_upper,
            multiplier: f64::INFINITY,
        });
    }
    let lower: Vec<f64> = s.gates.iter().map(|g| g.min_size).collect();
    let at_lower = stage_constraint(s, v, k, &lower);
    if at_lower <= budget {
        return Ok(StageSizing {
            stage: s.with_sizes(&lower),
            feasible: true,
            constraint: at_lower,
            multiplier: 0.0,
        });
    }

    let mut x = s.sizes();
    let mut w = delay_weights(s, v, k, &x);
    let mut multiplier = 0.0;
    for iter in 0..LR_MAX_ITERS {
        let (lambda, next) = solve_multiplier(s, v, k, budget, &w);
        let change = x
            .iter()
            .zip(&next)
            .map(|(a, b)| ((a - b) / b).abs())
            .fold(0.0, f64::max);
        x = next;
        multiplier = lambda;
        if change < LR_TOL {
            break;
        }
        let fresh = delay_weights(s, v, k, &x);
        // damp late iterations in case the weights start to oscillate
        let damp = if iter < 20 { 1.0 } else { 0.5 };
        for (wi, fi) in w.iter_mut().zip(fresh) {
            *wi += damp * (fi - *wi);
        }
    }
    let stage = s.with_sizes(&x);
    Ok(StageSizing {
        constraint: stage_constraint(&stage, v, k, &x),
        stage,
        feasible: true,
        multiplier,
    })
}

/// Budget range `[all-maximum, all-minimum]` of `μ + kσ` for a stage.
pub fn budget_range(s: &StageModel, v: &VariationSpec, k: f64) -> (f64, f64) {
    let upper: Vec<f64> = s.gates.iter().map(|g| g.max_size).collect();
    let lower: Vec<f64> = s.gates.iter().map(|g| g.min_size).collect();
    (
        stage_constraint(s, v, k, &upper),
        stage_constraint(s, v, k, &lower),
    )
}

/// Best `μ + kσ` sizing whose area does not exceed `target_area`.
pub fn size_stage_to_area(
    s: &StageModel,
    v: &VariationSpec,
    k: f64,
    target_area: f64,
) -> Result<StageSizing> {
    let min_area: f64 = s
        .gates
        .iter()
        .map(|g| g.area_coefficient * g.min_size)
        .sum();
    let max_area: f64 = s
        .gates
        .iter()
        .map(|g| g.area_coefficient * g.max_size)
        .sum();
    let (b_lo, b_hi) = budget_range(s, v, k);
    if target_area >= max_area {
        return size_stage(s, v, b_lo, k);
    }
    if target_area <= min_area {
        return size_stage(s, v, b_hi, k);
    }
    let (mut lo, mut hi) = (b_lo, b_hi);
    let mut best = size_stage(s, v, hi, k)?;
    let mut warm = s.clone();
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        let t = size_stage(&warm, v, mid, k)?;
        if t.area() <= target_area {
            hi = mid;
            warm = t.stage.clone();
            best = t;
        } else {
            lo = mid;
        }
        if (hi - lo) <= 1e-13 * hi {
            break;
        }
    }
    Ok(best)
}

/// Samples the optimal area-delay curve of a stage at `points` budgets
/// spread evenly over its realizable range.
pub fn area_delay_curve(
    s: &StageModel,
    v: &VariationSpec,
    k: f64,
    points: usize,
) -> Result<Vec<AreaDelayPoint>> {
    if points < 2 {
        return Err(Error::domain("an area-delay curve needs at least 2 points"));
    }
    let (b_lo, b_hi) = budget_range(s, v, k);
    let mut warm = s.clone();
    let mut out = Vec::with_capacity(points);
    for i in 0..points {
        let b = b_lo + (b_hi - b_lo) * i as f64 / (points - 1) as f64;
        let t = size_stage(&warm, v, b.max(f64::MIN_POSITIVE), k)?;
        let m = crate::variation::stage_distribution(&t.stage, v).moments();
        out.push(AreaDelayPoint {
            area: t.area(),
            delay_mean: m.mean,
            delay_sigma: m.std_dev,
        });
        warm = t.stage;
    }
    Ok(out)
}

/// `|∂A/∂μ|` of a stage along uniform relative scaling of all sizes,
/// divided by `scale` (area per unit delay). `None` when no gate can move.
pub fn stage_sensitivity(s: &StageModel, _v: &VariationSpec, scale: f64) -> Option<f64> {
    let up: Vec<f64> = s
        .gates
        .iter()
        .map(|g| g.size * (1.0 + SENSITIVITY_STEP))
        .collect();
    let down: Vec<f64> = s
        .gates
        .iter()
        .map(|g| g.size * (1.0 - SENSITIVITY_STEP))
        .collect();
    let a = s.with_sizes(&up);
    let b = s.with_sizes(&down);
    let d_area = a.area() - b.area();
    let d_mean = a.mean_delay() - b.mean_delay();
    if d_mean.abs() <= 1e-12 * s.mean_delay() || d_area.abs() <= 0.0 || !(scale > 0.0) {
        return None;
    }
    Some((d_area / d_mean).abs() / scale)
}

/// Normalised sensitivity of every stage, in units of the pipeline's
/// total area over total mean stage delay.
pub fn pipeline_sensitivities(p: &PipelineModel) -> Vec<Option<f64>> {
    let area = p.total_area();
    let delay: f64 = p.stages.iter().map(StageModel::mean_delay).sum();
    p.stages
        .iter()
        .map(|s| stage_sensitivity(s, &p.variation, area / delay))
        .collect()
}

/// Stage visiting order: ascending sensitivity, frozen stages last, ties by
/// index.
pub fn sensitivity_order(p: &PipelineModel) -> Vec<usize> {
    let r = pipeline_sensitivities(p);
    let mut order: Vec<usize> = (0..r.len()).collect();
    order.sort_by(|&i, &j| {
        let key = |x: Option<f64>| x.unwrap_or(f64::INFINITY);
        key(r[i]).total_cmp(&key(r[j])).then(i.cmp(&j))
    });
    order
}

/// Area and analytical yield after an accepted optimiser iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub total_area: f64,
    pub yield_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SizingSolution {
    pub pipeline: PipelineModel,
    /// Per stage, per gate size factors.
    pub sizes: Vec<Vec<f64>>,
    pub per_stage: Vec<GaussianMoments>,
    pub stage_areas: Vec<f64>,
    pub total_area: f64,
    pub distribution: GaussianMoments,
    pub achieved_yield: f64,
    pub iterations: usize,
    pub feasible: bool,
    pub history: Vec<IterationRecord>,
}

impl SizingSolution {
    fn evaluate(
        pipeline: PipelineModel,
        q: &YieldQuery,
        iterations: usize,
        feasible: Option<bool>,
        history: Vec<IterationRecord>,
    ) -> Result<Self> {
        let distribution = pipeline_distribution(&pipeline)?;
        let achieved_yield = yield_gaussian(&distribution, q.target_delay);
        Ok(Self {
            sizes: pipeline.stages.iter().map(StageModel::sizes).collect(),
            per_stage: pipeline.stage_moments(),
            stage_areas: pipeline.stages.iter().map(StageModel::area).collect(),
            total_area: pipeline.total_area(),
            distribution,
            achieved_yield,
            iterations,
            feasible: feasible.unwrap_or(achieved_yield >= q.target_yield - FEASIBILITY_TOL),
            history,
            pipeline,
        })
    }

    fn record(&self) -> IterationRecord {
        IterationRecord {
            total_area: self.total_area,
            yield_value: self.achieved_yield,
        }
    }
}

/// Sizes every stage on its own for budget `T` at the per-stage yield
/// `Y^{1/N}`, ignoring correlation.
pub fn balanced_baseline(p: &PipelineModel, q: &YieldQuery) -> Result<SizingSolution> {
    p.validate()?;
    let k = q.per_stage_z(p.num_stages());
    let mut stages = Vec::with_capacity(p.num_stages());
    let mut all_feasible = true;
    for s in &p.stages {
        let t = size_stage(s, &p.variation, q.target_delay, k)?;
        all_feasible &= t.feasible;
        stages.push(t.stage);
    }
    let sized = PipelineModel {
        stages,
        ..p.clone()
    };
    let sol = SizingSolution::evaluate(sized, q, 1, Some(all_feasible), Vec::new())?;
    let rec = sol.record();
    Ok(SizingSolution {
        history: vec![rec],
        ..sol
    })
}

/// Settings for the constant-area imbalance search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExploreOptions {
    pub steps: usize,
    /// Area moved per step as a fraction of the starting total area.
    pub step_fraction: f64,
    /// Number of times a rejected step is halved before giving up.
    pub refinements: usize,
}

impl Default for ExploreOptions {
    fn default() -> Self {
        Self {
            steps: 50,
            step_fraction: 0.01,
            refinements: 4,
        }
    }
}

/// State after one area transfer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub step: usize,
    pub donor: usize,
    pub receiver: usize,
    pub total_area: f64,
    pub yield_value: f64,
    pub stage_means_spread: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExploreOutcome {
    pub solution: SizingSolution,
    /// Accepted transfers, starting with the initial state as step 0.
    pub trace: Vec<TracePoint>,
    /// Donor and receiver of the last accepted transfer.
    pub last_move: Option<(usize, usize)>,
}

fn trace_point(
    p: &PipelineModel,
    q: &YieldQuery,
    step: usize,
    donor: usize,
    receiver: usize,
) -> Result<TracePoint> {
    let d = pipeline_distribution(p)?;
    let means: Vec<f64> = p.stages.iter().map(StageModel::mean_delay).collect();
    let max = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = means.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(TracePoint {
        step,
        donor,
        receiver,
        total_area: p.total_area(),
        yield_value: yield_gaussian(&d, q.target_delay),
        stage_means_spread: max - min,
    })
}

/// Moves up to `amount` of area from `donor` to `receiver`, keeping the
/// total fixed. Returns `None` when either stage is at its bound.
fn transfer_area(
    p: &PipelineModel,
    k: f64,
    donor: usize,
    receiver: usize,
    amount: f64,
) -> Result<Option<PipelineModel>> {
    let v = &p.variation;
    let d = &p.stages[donor];
    let r = &p.stages[receiver];
    let d_min: f64 = d
        .gates
        .iter()
        .map(|g| g.area_coefficient * g.min_size)
        .sum();
    let r_max: f64 = r
        .gates
        .iter()
        .map(|g| g.area_coefficient * g.max_size)
        .sum();
    let amount = amount.min(d.area() - d_min).min(r_max - r.area());
    if amount <= 1e-12 * p.total_area() {
        return Ok(None);
    }
    let grown = size_stage_to_area(r, v, k, r.area() + amount)?;
    let gained = grown.area() - r.area();
    if gained <= 0.0 {
        return Ok(None);
    }
    let mut shrunk = size_stage_to_area(d, v, k, d.area() - gained)?;
    // the donor bisection lands at or below its target; give the difference
    // back to the receiver so the total is preserved
    let mut grown = grown;
    let spare = d.area() - gained - shrunk.area();
    if spare > 1e-12 * p.total_area() {
        grown = size_stage_to_area(r, v, k, grown.area() + spare)?;
    }
    if shrunk.area() >= d.area() {
        shrunk = size_stage_to_area(d, v, k, d.area())?;
    }
    let mut next = p.clone();
    next.stages[donor] = shrunk.stage;
    next.stages[receiver] = grown.stage;
    Ok(Some(next))
}

fn stage_delay_k(p: &PipelineModel, q: &YieldQuery) -> f64 {
    q.per_stage_z(p.num_stages())
}

/// Hill-climbs constant-area transfers from the stage with the largest
/// sensitivity to the one with the smallest, keeping a move only when the
/// analytical yield improves.
pub fn unbalance_explore(
    p: &PipelineModel,
    q: &YieldQuery,
    opts: &ExploreOptions,
) -> Result<ExploreOutcome> {
    p.validate()?;
    if !(opts.step_fraction > 0.0) {
        return Err(Error::domain("step_fraction must be > 0"));
    }
    let k = stage_delay_k(p, q);
    let start_area = p.total_area();
    let mut cur = p.clone();
    let mut cur_yield = trace_point(&cur, q, 0, 0, 0)?.yield_value;
    let mut trace = vec![trace_point(&cur, q, 0, 0, 0)?];
    let mut last_move = None;
    let mut accepted = 0;

    for _ in 0..opts.steps {
        let r = pipeline_sensitivities(&cur);
        let live: Vec<usize> = (0..r.len()).filter(|&i| r[i].is_some()).collect();
        if live.len() < 2 {
            break;
        }
        let donor = *live
            .iter()
            .max_by(|&&a, &&b| r[a].unwrap().total_cmp(&r[b].unwrap()).then(b.cmp(&a)))
            .unwrap();
        let receiver = *live
            .iter()
            .min_by(|&&a, &&b| r[a].unwrap().total_cmp(&r[b].unwrap()).then(a.cmp(&b)))
            .unwrap();
        if donor == receiver {
            break;
        }
        let mut amount = opts.step_fraction * start_area;
        let mut moved = false;
        for _ in 0..=opts.refinements {
            if let Some(next) = transfer_area(&cur, k, donor, receiver, amount)? {
                let tp = trace_point(&next, q, accepted + 1, donor, receiver)?;
                if tp.yield_value > cur_yield + 1e-12 {
                    cur = next;
                    cur_yield = tp.yield_value;
                    accepted += 1;
                    trace.push(tp);
                    last_move = Some((donor, receiver));
                    moved = true;
                    break;
                }
            }
            amount *= 0.5;
        }
        if !moved {
            break;
        }
    }
    let solution = SizingSolution::evaluate(cur, q, accepted, None, Vec::new())?;
    let history = trace
        .iter()
        .map(|t| IterationRecord {
            total_area: t.total_area,
            yield_value: t.yield_value,
        })
        .collect();
    Ok(ExploreOutcome {
        solution: SizingSolution {
            history,
            ..solution
        },
        trace,
        last_move,
    })
}

/// Keeps moving area from `donor` to `receiver` regardless of the effect on
/// yield, recording every step.
pub fn forced_transfers(
    p: &PipelineModel,
    q: &YieldQuery,
    donor: usize,
    receiver: usize,
    steps: usize,
    step_fraction: f64,
) -> Result<Vec<TracePoint>> {
    p.validate()?;
    let n = p.num_stages();
    if donor >= n || receiver >= n || donor == receiver {
        return Err(Error::domain(
            "donor and receiver must be distinct stage indices",
        ));
    }
    let k = stage_delay_k(p, q);
    let amount = step_fraction * p.total_area();
    let mut cur = p.clone();
    let mut out = vec![trace_point(&cur, q, 0, donor, receiver)?];
    for step in 1..=steps {
        match transfer_area(&cur, k, donor, receiver, amount)? {
            Some(next) => {
                out.push(trace_point(&next, q, step, donor, receiver)?);
                cur = next;
            }
            None => break,
        }
    }
    Ok(out)
}

/// What the global optimiser is asked to achieve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizeMode {
    /// Reach the yield target with as little extra area as possible; stages
    /// are only ever made faster than the input.
    #[default]
    EnsureYield,
    /// Minimise total area subject to the yield target.
    MinArea,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizeOptions {
    pub mode: OptimizeMode,
    pub max_iterations: usize,
    /// Stop the budget iteration once the slack moves by less than this
    /// fraction of the target delay.
    pub slack_tolerance: f64,
    /// Cap on delay-exchange rounds after the budget iteration.
    pub max_exchange_rounds: usize,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        Self {
            mode: OptimizeMode::EnsureYield,
            max_iterations: 50,
            slack_tolerance: 1e-3,
            max_exchange_rounds: 10,
        }
    }
}

impl OptimizeOptions {
    pub fn with_mode(mode: OptimizeMode) -> Self {
        Self {
            mode,
            ..Self::default()
        }
    }
}

struct Trial {
    stage: StageModel,
    comps: DelayComponents,
    budget: f64,
}

/// Working state of the global optimiser.
struct Engine<'a> {
    v: &'a VariationSpec,
    corr_override: Option<&'a CorrelationMatrix>,
    k: f64,
    target: f64,
    stages: Vec<StageModel>,
    comps: Vec<DelayComponents>,
    budgets: Vec<f64>,
    /// Constraint value at all-maximum and all-minimum sizes.
    range: Vec<(f64, f64)>,
    /// Spatial kernel between stage pairs, row major.
    kernel: Vec<f64>,
    /// Score the pipeline by `-(T - μ_T)/σ_T`, a monotone stand-in for the
    /// yield, instead of `μ_T + kσ_T`.
    yield_score: bool,
}

#[derive(Clone)]
struct Snapshot {
    stages: Vec<StageModel>,
    comps: Vec<DelayComponents>,
    budgets: Vec<f64>,
}

impl<'a> Engine<'a> {
    fn new(p: &'a PipelineModel, k: f64, target: f64) -> Self {
        let v = &p.variation;
        let comps = p.stage_components();
        let budgets = comps.iter().map(|c| c.mean + k * c.total_sigma()).collect();
        let range = p.stages.iter().map(|s| budget_range(s, v, k)).collect();
        let n = p.num_stages();
        let mut kernel = vec![1.0; n * n];
        for i in 0..n {
            for j in 0..n {
                kernel[i * n + j] = v.spatial_kernel(p.stages[i].position - p.stages[j].position);
            }
        }
        Self {
            kernel,
            v,
            corr_override: p.correlation_override.as_ref(),
            k,
            target,
            stages: p.stages.clone(),
            comps,
            budgets,
            range,
            yield_score: false,
        }
    }

    fn metric_of(&self, comps: &[DelayComponents]) -> Result<f64> {
        let moments: Vec<GaussianMoments> = comps.iter().map(DelayComponents::moments).collect();
        let m = match self.corr_override {
            Some(c) => max_reduce(&moments, c)?,
            None => max_reduce(&moments, &self.correlation(comps))?,
        };
        if self.yield_score {
            let margin = self.target - m.mean;
            return Ok(if m.std_dev > 0.0 {
                -margin / m.std_dev
            } else {
                -margin.signum() * f64::MAX
            });
        }
        Ok(m.mean + self.k * m.std_dev)
    }

    fn correlation(&self, comps: &[DelayComponents]) -> CorrelationMatrix {
        let n = comps.len();
        correlation_with_kernel(comps, |i, j| self.kernel[i * n + j])
    }

    fn metric(&self) -> Result<f64> {
        self.metric_of(&self.comps)
    }

    fn metric_with(&self, i: usize, c: DelayComponents) -> Result<f64> {
        let mut comps = self.comps.clone();
        comps[i] = c;
        self.metric_of(&comps)
    }

    fn area(&self) -> f64 {
        self.stages.iter().map(StageModel::area).sum()
    }

    fn trial(&self, i: usize, budget: f64) -> Result<Trial> {
        let (lo, hi) = self.range[i];
        let b = budget.clamp(lo, hi);
        let t = size_stage(&self.stages[i], self.v, b.max(f64::MIN_POSITIVE), self.k)?;
        let comps = crate::variation::stage_distribution(&t.stage, self.v);
        Ok(Trial {
            stage: t.stage,
            comps,
            budget: b,
        })
    }

    fn commit(&mut self, i: usize, t: Trial) {
        self.stages[i] = t.stage;
        self.comps[i] = t.comps;
        self.budgets[i] = t.budget;
    }

    fn snapshot(&self) -> Snapshot {
        Snapshot {
            stages: self.stages.clone(),
            comps: self.comps.clone(),
            budgets: self.budgets.clone(),
        }
    }

    fn restore(&mut self, s: Snapshot) {
        self.stages = s.stages;
        self.comps = s.comps;
        self.budgets = s.budgets;
    }

    fn unit(&self) -> f64 {
        if self.yield_score {
            1.0
        } else {
            self.target
        }
    }

    fn feasible_metric(&self, m: f64) -> bool {
        m <= self.target * (1.0 + 1e-12)
    }

    /// Largest budget for stage `i` in `[from, to]` keeping the metric at or
    /// below `cap`. Commits it and returns whether anything changed.
    fn loosen_to_cap(&mut self, i: usize, to: f64, cap: f64) -> Result<bool> {
        let from = self.budgets[i];
        let to = to.min(self.range[i].1);
        if to <= from * (1.0 + 1e-12) {
            return Ok(false);
        }
        let t = self.trial(i, to)?;
        if self.metric_with(i, t.comps)? <= cap {
            self.commit(i, t);
            return Ok(true);
        }
        let g_to = self.metric_with(i, t.comps)? - cap;
        let g_from = self.metric()? - cap;
        if g_from > 0.0 {
            return Ok(false);
        }
        // Illinois regula falsi on the monotone metric
        let (mut lo, mut g_lo, mut hi, mut g_hi) = (from, g_from, to, g_to);
        let tol = 1e-10 * self.unit();
        let mut best: Option<Trial> = None;
        let mut last_side = 0i8;
        for _ in 0..40 {
            let mut x = hi - g_hi * (hi - lo) / (g_hi - g_lo);
            if !(x > lo && x < hi) {
                x = 0.5 * (lo + hi);
            }
            let t = self.trial(i, x)?;
            let g = self.metric_with(i, t.comps)? - cap;
            if g <= 0.0 {
                lo = x;
                g_lo = g;
                best = Some(t);
                if last_side == -1 {
                    g_hi *= 0.5;
                }
                last_side = -1;
            } else {
                hi = x;
                g_hi = g;
                if last_side == 1 {
                    g_lo *= 0.5;
                }
                last_side = 1;
            }
            if (best.is_some() && g_lo >= -tol) || hi - lo <= 1e-9 * self.target {
                break;
            }
        }
        match best {
            Some(t) => {
                self.commit(i, t);
                Ok(true)
            }
            None => Ok(false),
        }
    }
}

/// Sizes every stage against a common working budget `A_0` (capped per
/// stage by `caps` when given) and moves `A_0` by the pipeline slack until
/// the slack settles.
fn budget_phase(
    e: &mut Engine,
    order: &[usize],
    caps: Option<&[f64]>,
    opts: &OptimizeOptions,
    q: &YieldQuery,
    history: &mut Vec<IterationRecord>,
) -> Result<usize> {
    let t = e.target;
    let tol = opts.slack_tolerance * t;
    let ensure = caps.is_some();
    let mut a0 = match caps {
        Some(c) => c.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        None => t,
    };
    let floor = e.range.iter().map(|r| r.0).fold(f64::INFINITY, f64::min);

    let mut prev: Option<(f64, f64)> = None;
    let mut feasible_below: Option<f64> = None;
    let mut infeasible_above: Option<f64> = None;
    let mut accepted: Option<(Snapshot, f64, f64, bool)> = None;
    let mut iterations = 0;

    for _ in 0..opts.max_iterations {
        iterations += 1;
        for &i in order {
            let b = match caps {
                Some(c) if a0 >= c[i] => continue,
                Some(c) => a0.min(c[i]),
                None => a0,
            };
            let trial = e.trial(i, b)?;
            e.commit(i, trial);
        }
        let m = e.metric()?;
        let slack = t - m;
        let feasible = e.feasible_metric(m);
        let area = e.area();
        let y = yield_of_metric(e, q)?;

        let accept = match &accepted {
            None => true,
            Some((_, a_area, a_yield, a_feas)) => {
                if ensure {
                    y >= *a_yield - 1e-15
                } else if feasible {
                    !*a_feas || area <= *a_area
                } else {
                    !*a_feas && y >= *a_yield - 1e-15
                }
            }
        };
        if accept {
            accepted = Some((e.snapshot(), area, y, feasible));
            history.push(IterationRecord {
                total_area: area,
                yield_value: y,
            });
        }

        if feasible {
            feasible_below = Some(feasible_below.map_or(a0, |f: f64| f.max(a0)));
        } else {
            infeasible_above = Some(infeasible_above.map_or(a0, |f: f64| f.min(a0)));
        }
        let settled = prev.is_some_and(|(_, s)| (slack - s).abs() < tol) || slack.abs() < tol;
        if feasible && (ensure || settled) {
            break;
        }
        if !feasible && a0 <= floor {
            // every stage is already at its fastest
            break;
        }

        let slope = match prev {
            Some((pa, ps)) if (a0 - pa).abs() > 1e-12 * t => {
                ((ps - slack) / (a0 - pa)).clamp(0.05, 1.5)
            }
            _ => 1.0,
        };
        let mut next = a0 + slack / slope;
        if let (Some(lo), Some(hi)) = (feasible_below, infeasible_above) {
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
        }
        if !feasible && next < floor {
            next = floor;
        }
        prev = Some((a0, slack));
        a0 = next;
    }
    if let Some((snap, ..)) = accepted {
        e.restore(snap);
    }
    Ok(iterations)
}

fn yield_of_metric(e: &Engine, q: &YieldQuery) -> Result<f64> {
    let moments: Vec<GaussianMoments> = e.comps.iter().map(DelayComponents::moments).collect();
    let d = match e.corr_override {
        Some(c) => max_reduce(&moments, c)?,
        None => max_reduce(&moments, &e.correlation(&e.comps))?,
    };
    Ok(yield_gaussian(&d, q.target_delay))
}

/// Pairs the stage where extra speed is cheapest with the stage where
/// slowing down saves the most area, while the exchange lowers total area
/// and keeps the metric at or below `cap`.
fn exchange_phase(
    e: &mut Engine,
    caps: Option<&[f64]>,
    mut cap_metric: f64,
    opts: &OptimizeOptions,
    q: &YieldQuery,
    history: &mut Vec<IterationRecord>,
) -> Result<usize> {
    let n = e.stages.len();
    if n < 2 {
        return Ok(0);
    }
    let t = e.target;
    let mut delta = 0.02 * t;
    let delta_min = 1e-4 * t;
    let unit = e.unit();
    let mut rounds = 0;
    let upper = |e: &Engine, i: usize| match caps {
        Some(c) => c[i].min(e.range[i].1),
        None => e.range[i].1,
    };

    while rounds < opts.max_exchange_rounds && delta >= delta_min {
        rounds += 1;
        let area_before = e.area();
        let mut changed = false;
        if e.yield_score {
            // never give back yield already gained
            cap_metric = cap_metric.min(e.metric()?);
        }

        // spend any slack left on the stage that saves the most area
        let m = e.metric()?;
        if m < cap_metric - 1e-9 * unit {
            let mut best: Option<(usize, f64)> = None;
            for i in 0..n {
                let b = (e.budgets[i] + delta).min(upper(e, i));
                if b <= e.budgets[i] {
                    continue;
                }
                let tr = e.trial(i, b)?;
                let gain = e.stages[i].area() - tr.stage.area();
                if gain > 0.0 && best.is_none_or(|(_, g)| gain > g) {
                    best = Some((i, gain));
                }
            }
            if let Some((i, _)) = best {
                let to = upper(e, i);
                changed |= e.loosen_to_cap(i, to, cap_metric)?;
            }
        }

        let m = e.metric()?;
        let mut tighten = Vec::new();
        let mut loosen = Vec::new();
        for i in 0..n {
            let a = e.stages[i].area();
            if e.budgets[i] - delta >= e.range[i].0 {
                let tr = e.trial(i, e.budgets[i] - delta)?;
                let dm = m - e.metric_with(i, tr.comps)?;
                let da = tr.stage.area() - a;
                if dm > 1e-12 * unit {
                    tighten.push((i, da.max(0.0) / dm));
                }
            }
            let b = (e.budgets[i] + delta).min(upper(e, i));
            if b > e.budgets[i] * (1.0 + 1e-12) {
                let tr = e.trial(i, b)?;
                let dm = e.metric_with(i, tr.comps)? - m;
                let gain = a - tr.stage.area();
                if gain > 0.0 {
                    let rate = if dm > 1e-12 * unit {
                        gain / dm
                    } else {
                        f64::INFINITY
                    };
                    loosen.push((i, rate));
                }
            }
        }
        tighten.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        loosen.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));

        let mut used = vec![false; n];
        for &(r, cost) in &tighten {
            if used[r] {
                continue;
            }
            let Some(&(d, gain)) = loosen.iter().find(|(d, _)| !used[*d] && *d != r) else {
                break;
            };
            if gain <= cost * (1.0 + 1e-9) {
                break;
            }
            used[r] = true;
            used[d] = true;
            let snap = e.snapshot();
            let before = e.area();
            let tr = e.trial(r, e.budgets[r] - delta)?;
            e.commit(r, tr);
            let to = upper(e, d);
            e.loosen_to_cap(d, to, cap_metric)?;
            if e.area() < before * (1.0 - 1e-12) && e.metric()? <= cap_metric {
                changed = true;
            } else {
                e.restore(snap);
            }
        }

        if changed && e.area() < area_before * (1.0 - 1e-7) {
            history.push(IterationRecord {
                total_area: e.area(),
                yield_value: yield_of_metric(e, q)?,
            });
        } else {
            delta *= 0.5;
        }
    }
    Ok(rounds)
}

/// Yield-constrained sizing of the whole pipeline, one stage at a time.
pub fn global_optimize(
    p: &PipelineModel,
    q: &YieldQuery,
    opts: &OptimizeOptions,
) -> Result<SizingSolution> {
    p.validate()?;
    if opts.max_iterations == 0 {
        return Err(Error::domain("max_iterations must be >= 1"));
    }
    let input = SizingSolution::evaluate(p.clone(), q, 0, None, Vec::new())?;
    let input_record = input.record();
    if opts.mode == OptimizeMode::EnsureYield && input.feasible {
        return Ok(SizingSolution {
            history: vec![input_record],
            ..input
        });
    }

    let k = q.z();
    let order = sensitivity_order(p);
    let mut e = Engine::new(p, k, q.target_delay);
    let mut history = vec![input_record];
    let caps = match opts.mode {
        OptimizeMode::EnsureYield => Some(e.budgets.clone()),
        OptimizeMode::MinArea => None,
    };
    let mut iterations = budget_phase(&mut e, &order, caps.as_deref(), opts, q, &mut history)?;

    let m = e.metric()?;
    let feasible_now = e.feasible_metric(m);
    if feasible_now {
        let cap_metric = match opts.mode {
            OptimizeMode::EnsureYield => {
                e.yield_score = true;
                e.metric()?
            }
            OptimizeMode::MinArea => q.target_delay,
        };
        iterations += exchange_phase(&mut e, caps.as_deref(), cap_metric, opts, q, &mut history)?;
    }

    let sized = PipelineModel {
        stages: e.stages,
        ..p.clone()
    };
    let sol = SizingSolution::evaluate(sized, q, iterations, None, history)?;
    if opts.mode == OptimizeMode::MinArea
        && input.feasible
        && sol.total_area >= input.total_area * (1.0 - 1e-9)
    {
        return Ok(SizingSolution {
            iterations: 1,
            history: vec![input_record],
            ..input
        });
    }
    Ok(sol)
}
