//! Statistical timing of pipelined circuits under process variation.
//!
//! Stage delays are modelled as correlated Gaussians; the pipeline delay is
//! their maximum, approximated with Clark's moment-matching fold. On top of
//! that sit parametric yield estimates, per-stage design-space bounds, a
//! Monte-Carlo reference, and a yield-constrained stage sizer.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod clark;
pub mod error;
pub mod gaussian;
pub mod montecarlo;
pub mod normal;
pub mod optimizer;
pub mod synthetic;
pub mod variation;
pub mod yield_analysis;

pub use clark::{clark_corr_propagate, clark_max_pair, max_reduce, ClarkPairResult, MaxReduction};
pub use error::{Error, Result};
pub use gaussian::{CorrelationMatrix, GaussianMoments};
pub use montecarlo::{model_error_report, McConfig, McReport, SampleMatrix};
pub use normal::{std_normal_cdf, std_normal_pdf, std_normal_quantile};
pub use optimizer::{
    area_delay_curve, balanced_baseline, forced_transfers, global_optimize, pipeline_sensitivities,
    size_stage, size_stage_to_area, stage_sensitivity, unbalance_explore, AreaDelayPoint,
    ExploreOptions, ExploreOutcome, IterationRecord, OptimizeMode, OptimizeOptions, SizingSolution,
    StageSizing, TracePoint,
};
pub use variation::{
    gate_delay_moments, inverter_chain_relation, stage_correlation_matrix, stage_distribution,
    DelayComponents, GateInstance, PipelineModel, StageModel, VariationSpec,
};
pub use yield_analysis::{
    design_space_region, mean_lower_bound, pipeline_distribution, relaxed_stage_bound,
    stage_mean_upper_bound, stringent_stage_bound, yield_gaussian, yield_independent, ChainBounds,
    DesignSpacePoint, DesignSpaceRow, YieldQuery,
};
