use std::fs;
use std::path::Path;

use pipeyield_core::montecarlo::{delay_histogram, report_from_samples, sample_stage_delays};
use pipeyield_core::synthetic::{variability_sweep, Regime, SweepSpec};
use pipeyield_core::yield_analysis::pipeline_distribution_detailed;
use pipeyield_core::{
    balanced_baseline, design_space_region, global_optimize, stage_correlation_matrix,
    yield_gaussian, yield_independent, ChainBounds, CorrelationMatrix, GaussianMoments, McConfig,
    OptimizeOptions, PipelineModel, VariationSpec, YieldQuery,
};

use crate::file::{parse_file, OptimizationRecord, PipelineFile};
use crate::report::{Cell, Report, Section};
use crate::{
    AnalyzeArgs, BoundsArgs, Cli, CliError, Command, McArgs, ModeArg, OptimizeArgs, Outcome,
    SweepArgs, YieldArgs, EXIT_INFEASIBLE, EXIT_OK,
};

type Result<T> = std::result::Result<T, CliError>;

pub fn execute(cli: &Cli) -> Result<Outcome> {
    let mut warnings = Vec::new();
    let (report, code) = match &cli.command {
        Command::Analyze(a) => (analyze(a, &mut warnings)?, EXIT_OK),
        Command::Yield(a) => (yield_cmd(a, &mut warnings)?, EXIT_OK),
        Command::Bounds(a) => (bounds(a)?, EXIT_OK),
        Command::Mc(a) => (mc(a, &mut warnings)?, EXIT_OK),
        Command::Sweep(a) => (sweep(a)?, EXIT_OK),
        Command::Optimize(a) => optimize(a, &mut warnings)?,
    };
    Ok(Outcome {
        stdout: report.render(cli.format),
        stderr: warnings.iter().map(|w| format!("warning: {w}\n")).collect(),
        code,
    })
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn load(path: &Path) -> Result<PipelineModel> {
    Ok(parse_file(&read(path)?)?.to_model()?)
}

fn clamp_warning(p: &PipelineModel, warnings: &mut Vec<String>) -> Result<GaussianMoments> {
    let r = pipeline_distribution_detailed(p)?;
    if r.has_consistency_warning() {
        warnings.push(format!(
            "propagated correlations left [-1, 1] by up to {:.3e} and were clamped",
            r.clamp_excess
        ));
    }
    Ok(r.moments)
}

fn stage_table(name: &str, p: &PipelineModel) -> Section {
    let mut s = Section::new(
        name,
        &[
            "stage_idx",
            "position_grid",
            "logic_depth_count",
            "area_au",
            "mu_ps",
            "sigma_ps",
            "variability_frac",
        ],
    );
    for (i, (st, m)) in p.stages.iter().zip(p.stage_moments()).enumerate() {
        s.push(vec![
            i.into(),
            st.position.into(),
            st.logic_depth().into(),
            st.area().into(),
            m.mean.into(),
            m.std_dev.into(),
            m.variability().into(),
        ]);
    }
    s
}

fn correlation_table(c: &CorrelationMatrix) -> Section {
    let n = c.dim();
    let mut columns = vec!["stage_idx".to_string()];
    columns.extend((0..n).map(|j| format!("rho_{j}")));
    let mut s = Section::with_columns("correlation", columns);
    for (i, row) in c.rows().into_iter().enumerate() {
        let mut cells: Vec<Cell> = vec![i.into()];
        cells.extend(row.into_iter().map(Cell::from));
        s.push(cells);
    }
    s
}

fn analyze(a: &AnalyzeArgs, warnings: &mut Vec<String>) -> Result<Report> {
    let p = load(&a.file)?;
    let d = clamp_warning(&p, warnings)?;
    let mut r = Report::default();
    r.push(stage_table("stages", &p));
    r.push(correlation_table(&stage_correlation_matrix(&p)));
    r.push(Section::record(
        "pipeline",
        vec![
            ("stages_count", p.num_stages().into()),
            ("area_au", p.total_area().into()),
            ("mu_ps", d.mean.into()),
            ("sigma_ps", d.std_dev.into()),
            ("variability_frac", d.variability().into()),
        ],
    ));
    Ok(r)
}

fn yield_cmd(a: &YieldArgs, warnings: &mut Vec<String>) -> Result<Report> {
    let mut p = load(&a.file)?;
    if a.independent {
        let n = p.num_stages();
        p = p.with_correlation(CorrelationMatrix::identity(n))?;
    }
    let d = clamp_warning(&p, warnings)?;
    let gaussian = yield_gaussian(&d, a.target);
    let independent = yield_independent(&p.stage_moments(), a.target)?;
    let mut r = Report::default();
    r.push(Section::record(
        "yield",
        vec![
            ("target_ps", a.target.into()),
            (
                "correlation",
                if a.independent {
                    "independent"
                } else {
                    "model"
                }
                .into(),
            ),
            ("mu_ps", d.mean.into()),
            ("sigma_ps", d.std_dev.into()),
            ("gaussian_yield_frac", gaussian.into()),
            ("independent_yield_frac", independent.into()),
            ("gap_frac", (gaussian - independent).into()),
        ],
    ));
    Ok(r)
}

fn bounds(a: &BoundsArgs) -> Result<Report> {
    let p = load(&a.file)?;
    let q = YieldQuery::new(a.target, a.yield_target)?;
    // the realizable band is drawn from a chain of the first stage's first gate
    let chain = ChainBounds::from_gate(&p.stages[0].gates[0], &p.variation);
    let rows = design_space_region(&q, p.num_stages(), &chain, &a.sigma_grid.0)?;
    let mut s = Section::new(
        "bounds",
        &[
            "sigma_ps",
            "mu_relaxed_ps",
            "mu_stringent_ps",
            "mu_realizable_min_ps",
            "mu_realizable_max_ps",
        ],
    );
    for row in rows {
        s.push(vec![
            row.sigma.into(),
            row.mu_relaxed.into(),
            row.mu_stringent.into(),
            row.mu_realizable_min.into(),
            row.mu_realizable_max.into(),
        ]);
    }
    let mut r = Report::default();
    r.push(s);
    Ok(r)
}

fn mc(a: &McArgs, warnings: &mut Vec<String>) -> Result<Report> {
    let p = load(&a.file)?;
    let q = YieldQuery::new(a.target, 0.5)?;
    let cfg = McConfig::new(a.samples as usize, a.seed);
    let samples = sample_stage_delays(&p, &cfg)?;
    let rep = report_from_samples(&p, &q, &cfg, &samples)?;
    clamp_warning(&p, warnings)?;
    if let Some(path) = &a.histogram {
        let bins = delay_histogram(&samples.row_maxima(), a.bins, &rep.analytical);
        let mut h = Section::new(
            "histogram",
            &[
                "lower_ps",
                "upper_ps",
                "count",
                "empirical_density_per_ps",
                "analytical_density_per_ps",
            ],
        );
        for b in bins {
            h.push(vec![
                b.lower.into(),
                b.upper.into(),
                b.count.into(),
                b.empirical_density.into(),
                b.analytical_density.into(),
            ]);
        }
        write(path, &h.to_csv())?;
    }
    let mut r = Report::default();
    r.push(Section::record(
        "mc",
        vec![
            ("samples_count", rep.samples.into()),
            ("seed", rep.seed.into()),
            ("target_ps", rep.target_delay.into()),
            ("mc_mu_ps", rep.empirical.mean.into()),
            ("mc_sigma_ps", rep.empirical.std_dev.into()),
            ("mc_yield_frac", rep.empirical_yield.into()),
            ("model_mu_ps", rep.analytical.mean.into()),
            ("model_sigma_ps", rep.analytical.std_dev.into()),
            ("model_yield_frac", rep.analytical_yield.into()),
            ("independent_yield_frac", rep.independent_yield.into()),
            ("mu_error_pct", rep.mean_error_pct.into()),
            ("sigma_error_pct", rep.sigma_error_pct.into()),
            ("mu_standard_error_ps", rep.standard_error_mean.into()),
        ],
    ));
    Ok(r)
}

fn regime(name: &str, ratio: f64) -> Result<Regime> {
    let v = match name {
        "random" => VariationSpec::random_only(ratio),
        "inter" => VariationSpec::inter_die_only(ratio),
        "mixed" => VariationSpec::new(0.5, 0.25, 0.25, ratio, 2.0)?,
        other => {
            return Err(CliError::Usage(format!(
                "unknown regime `{other}` (expected random, inter or mixed)"
            )))
        }
    };
    v.validate()?;
    Ok(Regime::new(name, v))
}

fn sweep(a: &SweepArgs) -> Result<Report> {
    let spec = SweepSpec {
        total_levels: a.total_levels,
        stage_counts: a.stage_counts.clone(),
        regimes: a
            .regimes
            .iter()
            .map(|n| regime(n, a.ratio))
            .collect::<Result<_>>()?,
        latch_overhead: a.latch_overhead,
    };
    let cfg = McConfig::new(a.samples as usize, a.seed);
    let rows = variability_sweep(&spec, (a.samples > 0).then_some(&cfg))?;
    let mut s = Section::new(
        "sweep",
        &[
            "regime",
            "stages_count",
            "logic_depth_count",
            "mu_ps",
            "sigma_ps",
            "variability_frac",
            "mc_mu_ps",
            "mc_sigma_ps",
            "mc_variability_frac",
        ],
    );
    let opt = |x: Option<f64>| x.map_or(Cell::Text(String::new()), Cell::Num);
    for row in rows {
        s.push(vec![
            row.regime.into(),
            row.n_stages.into(),
            row.logic_depth.into(),
            row.mean.into(),
            row.std_dev.into(),
            row.variability.into(),
            opt(row.mc_mean),
            opt(row.mc_std_dev),
            opt(row.mc_variability),
        ]);
    }
    let mut r = Report::default();
    r.push(s);
    Ok(r)
}

fn optimize(a: &OptimizeArgs, warnings: &mut Vec<String>) -> Result<(Report, i32)> {
    let input = load(&a.file)?;
    let q = YieldQuery::new(a.target, a.yield_target)?;
    let start = if a.from_baseline {
        balanced_baseline(&input, &q)?.pipeline
    } else {
        input
    };
    let opts = OptimizeOptions::with_mode(a.mode.into());
    let sol = global_optimize(&start, &q, &opts)?;
    clamp_warning(&sol.pipeline, warnings)?;

    let before = start.stage_moments();
    let before_dist = clamp_warning(&start, &mut Vec::new())?;
    let before_area = start.total_area();
    let before_yield = yield_gaussian(&before_dist, q.target_delay);

    let mut stages = Section::new(
        "stages",
        &[
            "stage_idx",
            "initial_area_au",
            "initial_mu_ps",
            "initial_sigma_ps",
            "initial_stage_yield_frac",
            "final_area_au",
            "final_mu_ps",
            "final_sigma_ps",
            "final_stage_yield_frac",
        ],
    );
    for (i, (b, f)) in before.iter().zip(&sol.per_stage).enumerate() {
        stages.push(vec![
            i.into(),
            start.stages[i].area().into(),
            b.mean.into(),
            b.std_dev.into(),
            yield_gaussian(b, q.target_delay).into(),
            sol.stage_areas[i].into(),
            f.mean.into(),
            f.std_dev.into(),
            yield_gaussian(f, q.target_delay).into(),
        ]);
    }
    let mode = match a.mode {
        ModeArg::EnsureYield => "ensure-yield",
        ModeArg::MinArea => "min-area",
    };
    let mut r = Report::default();
    r.push(stages);
    r.push(Section::record(
        "pipeline",
        vec![
            ("mode", mode.into()),
            ("target_ps", q.target_delay.into()),
            ("target_yield_frac", q.target_yield.into()),
            ("initial_area_au", before_area.into()),
            ("final_area_au", sol.total_area.into()),
            (
                "area_change_pct",
                ((sol.total_area / before_area - 1.0) * 100.0).into(),
            ),
            ("initial_yield_frac", before_yield.into()),
            ("final_yield_frac", sol.achieved_yield.into()),
            ("final_mu_ps", sol.distribution.mean.into()),
            ("final_sigma_ps", sol.distribution.std_dev.into()),
            ("iterations_count", sol.iterations.into()),
            ("feasible", sol.feasible.into()),
        ],
    ));
    if let Some(n) = a.seed_verify {
        let cfg = McConfig::new(n as usize, a.seed);
        let samples = sample_stage_delays(&sol.pipeline, &cfg)?;
        let rep = report_from_samples(&sol.pipeline, &q, &cfg, &samples)?;
        let y = rep.empirical_yield;
        r.push(Section::record(
            "verification",
            vec![
                ("samples_count", rep.samples.into()),
                ("seed", rep.seed.into()),
                ("mc_yield_frac", y.into()),
                (
                    "mc_yield_standard_error_frac",
                    (y * (1.0 - y) / n as f64).sqrt().into(),
                ),
                ("model_yield_frac", rep.analytical_yield.into()),
                ("mc_mu_ps", rep.empirical.mean.into()),
                ("mc_sigma_ps", rep.empirical.std_dev.into()),
            ],
        ));
    }
    if let Some(path) = &a.output {
        let mut f = PipelineFile::from_model(&sol.pipeline);
        f.optimization = Some(OptimizationRecord {
            mode: mode.to_string(),
            target_delay: q.target_delay,
            target_yield: q.target_yield,
            achieved_yield: sol.achieved_yield,
            total_area: sol.total_area,
            feasible: sol.feasible,
        });
        write(path, &f.to_json())?;
    }
    if !sol.feasible {
        warnings.push(format!(
            "yield target {} at {} ps not reached; best solution yields {:.4}",
            q.target_yield, q.target_delay, sol.achieved_yield
        ));
        return Ok((r, EXIT_INFEASIBLE));
    }
    Ok((r, EXIT_OK))
}
