use pipeyield_core::montecarlo::{sample_correlation, sample_stage_delays};
use pipeyield_core::synthetic::{
    four_stage_repair_case, inverter, three_stage_heterogeneous, uniform_pipeline,
};
use pipeyield_core::{
    balanced_baseline, global_optimize, mean_lower_bound, model_error_report,
    pipeline_distribution, stage_correlation_matrix, unbalance_explore, yield_independent,
    ExploreOptions, McConfig, OptimizeMode, OptimizeOptions, PipelineModel, StageModel,
    VariationSpec, YieldQuery,
};

#[test]
fn analysis_agrees_with_sampling_on_a_mixed_pipeline() {
    let v = VariationSpec::new(0.5, 0.25, 0.25, 0.1, 2.0).unwrap();
    let p = uniform_pipeline(6, 8, inverter(), 10.0, v).unwrap();
    let d = pipeline_distribution(&p).unwrap();
    assert!(d.mean >= mean_lower_bound(&p.stage_moments()).unwrap());
    let q = YieldQuery::new(d.mean + d.std_dev, 0.8).unwrap();
    let r = model_error_report(&p, &q, &McConfig::new(50_000, 3)).unwrap();
    assert!(r.mean_error_pct < 0.5, "{r:?}");
    assert!(r.sigma_error_pct < 5.0, "{r:?}");
    assert!(
        (r.analytical_yield - r.empirical_yield).abs() < 0.02,
        "{r:?}"
    );
}

#[test]
fn sampled_stage_correlation_follows_the_model() {
    let v = VariationSpec::new(0.3, 0.5, 0.2, 0.1, 1.5).unwrap();
    let p = uniform_pipeline(4, 6, inverter(), 5.0, v).unwrap();
    let c = stage_correlation_matrix(&p);
    let s = sample_stage_delays(&p, &McConfig::new(100_000, 11)).unwrap();
    for (i, j) in [(0, 1), (0, 3), (1, 2)] {
        let rho = sample_correlation(&s.column(i), &s.column(j));
        let se = (1.0 - c.get(i, j).powi(2)) / (100_000f64).sqrt();
        assert!(
            (rho - c.get(i, j)).abs() < 4.0 * se,
            "({i},{j}): {rho} vs {}",
            c.get(i, j)
        );
    }
}

#[test]
fn balanced_baseline_meets_the_target_under_independence() {
    let q = YieldQuery::new(60.0, 0.8).unwrap();
    let p = uniform_pipeline(3, 8, inverter(), 5.0, VariationSpec::random_only(0.1)).unwrap();
    let b = balanced_baseline(&p, &q).unwrap();
    assert!(b.feasible);
    let y = yield_independent(&b.per_stage, q.target_delay).unwrap();
    assert!((y - 0.8).abs() < 0.01, "{y}");
}

#[test]
fn explore_then_optimize_keeps_sizes_in_bounds() {
    let (p, q) = three_stage_heterogeneous();
    let base = balanced_baseline(&p, &q).unwrap();
    let explored = unbalance_explore(&base.pipeline, &q, &ExploreOptions::default()).unwrap();
    assert!(explored.solution.achieved_yield >= base.achieved_yield);
    let s = global_optimize(
        &explored.solution.pipeline,
        &q,
        &OptimizeOptions::with_mode(OptimizeMode::MinArea),
    )
    .unwrap();
    assert!(s.feasible);
    assert!(s.total_area <= explored.solution.total_area * (1.0 + 1e-9));
    for (stage, sizes) in s.pipeline.stages.iter().zip(&s.sizes) {
        for (g, &x) in stage.gates.iter().zip(sizes) {
            assert!(x >= g.min_size && x <= g.max_size);
        }
    }
}

#[test]
fn repaired_yield_holds_up_under_sampling() {
    let (p, q) = four_stage_repair_case();
    let base = balanced_baseline(&p, &q).unwrap();
    let s = global_optimize(&base.pipeline, &q, &OptimizeOptions::default()).unwrap();
    assert!(s.feasible && s.achieved_yield >= 0.8);
    let r = model_error_report(&s.pipeline, &q, &McConfig::new(100_000, 5)).unwrap();
    assert!(r.empirical_yield >= 0.79, "{}", r.empirical_yield);
}

#[test]
fn model_types_round_trip_through_json() {
    let stage = StageModel::new(2.0, 7.5, vec![inverter(); 3]).unwrap();
    let text = serde_json::to_string(&stage).unwrap();
    assert!(text.contains("\"p\":2.0") && text.contains("\"U\":8.0"));
    let back: StageModel = serde_json::from_str(&text).unwrap();
    assert_eq!(back, stage);
    let v: VariationSpec = serde_json::from_str(
        r#"{"inter_die_fraction":1,"systematic_fraction":0,"random_fraction":0,"total_sigma_ratio":0.1,"spatial_corr_length":1}"#,
    )
    .unwrap();
    assert_eq!(PipelineModel::new(vec![stage], v).unwrap().num_stages(), 1);
    assert!(
        serde_json::from_str::<VariationSpec>(r#"{"inter_die_fraction":1,"bogus":0}"#).is_err()
    );
}
