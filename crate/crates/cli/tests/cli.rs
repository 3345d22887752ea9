use std::fs;
use std::path::{Path, PathBuf};

use pipeyield_cli::{parse_file, parse_pipeline, run, serialize_pipeline, Outcome};
use pipeyield_core::synthetic::{
    four_stage_area_case, four_stage_repair_case, inverter, uniform_pipeline,
};
use pipeyield_core::{inverter_chain_relation, CorrelationMatrix, PipelineModel, VariationSpec};
use tempfile::TempDir;

fn write_model(dir: &Path, name: &str, p: &PipelineModel) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, serialize_pipeline(p)).unwrap();
    path
}

fn cli(args: &[&str]) -> Outcome {
    run(std::iter::once("pipeyield").chain(args.iter().copied()))
}

fn csv_rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn mixed() -> VariationSpec {
    VariationSpec::new(0.5, 0.25, 0.25, 0.1, 2.0).unwrap()
}

#[test]
fn five_stage_override_is_used_verbatim() {
    let dir = TempDir::new().unwrap();
    let c =
        CorrelationMatrix::from_fn(5, |i, j| if i.abs_diff(j) == 1 { 0.3 } else { 0.1 }).unwrap();
    let p = uniform_pipeline(5, 4, inverter(), 5.0, mixed())
        .unwrap()
        .with_correlation(c.clone())
        .unwrap();
    let path = write_model(dir.path(), "p.json", &p);
    let parsed = parse_pipeline(&fs::read(&path).unwrap()).unwrap();
    assert_eq!(parsed.correlation_override.as_ref(), Some(&c));

    let out = cli(&["analyze", path.to_str().unwrap(), "--format", "csv"]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    let corr = out.stdout.split("# correlation\n").nth(1).unwrap();
    let rows = csv_rows(corr);
    assert_eq!(rows[0][1], "rho_0");
    assert_eq!(rows[1][2], "0.3");
    assert_eq!(rows[1][3], "0.1");
}

#[test]
fn round_trip_is_stable() {
    let (p, _) = four_stage_area_case();
    let text = serialize_pipeline(&p);
    let again = parse_pipeline(text.as_bytes()).unwrap();
    assert_eq!(again, p);
    assert_eq!(serialize_pipeline(&again), text);
}

#[test]
fn bad_fractions_name_the_field() {
    let dir = TempDir::new().unwrap();
    let p = uniform_pipeline(1, 1, inverter(), 0.0, mixed()).unwrap();
    let text =
        serialize_pipeline(&p).replace("\"random_fraction\": 0.25", "\"random_fraction\": 0.15");
    let path = dir.path().join("bad.json");
    fs::write(&path, text).unwrap();
    let out = cli(&["analyze", path.to_str().unwrap()]);
    assert_eq!(out.code, 1);
    assert!(out.stderr.contains("`variation`"), "{}", out.stderr);
    assert!(out.stderr.contains("0.9"), "{}", out.stderr);
}

#[test]
fn syntax_errors_report_a_location() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("broken.json");
    fs::write(&path, "{\n  \"schema_version\": \"1\",\n  \"stages\": [}\n").unwrap();
    let out = cli(&["analyze", path.to_str().unwrap()]);
    assert_eq!(out.code, 1);
    assert!(out.stderr.contains("line 3"), "{}", out.stderr);
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(cli(&["frobnicate"]).code, 2);
    assert_eq!(cli(&["yield", "x.json"]).code, 2);
    let help = cli(&["--help"]);
    assert_eq!(help.code, 0);
    for c in ["analyze", "yield", "bounds", "mc", "sweep", "optimize"] {
        assert!(help.stdout.contains(c), "{c} missing from help");
    }
}

#[test]
fn yield_reports_both_estimates() {
    let dir = TempDir::new().unwrap();
    let p = uniform_pipeline(4, 10, inverter(), 10.0, VariationSpec::random_only(0.1)).unwrap();
    let path = write_model(dir.path(), "p.json", &p);
    let out = cli(&[
        "yield",
        path.to_str().unwrap(),
        "--target",
        "118",
        "--format",
        "csv",
    ]);
    assert_eq!(out.code, 0);
    let rows = csv_rows(&out.stdout);
    let col = |name: &str| -> f64 {
        let j = rows[0].iter().position(|c| c == name).unwrap();
        rows[1][j].parse().unwrap()
    };
    let (g, i, gap) = (
        col("gaussian_yield_frac"),
        col("independent_yield_frac"),
        col("gap_frac"),
    );
    assert!((g - i - gap).abs() < 1e-15);
    assert!(gap.abs() < 0.01);
}

#[test]
fn bounds_csv_columns() {
    let dir = TempDir::new().unwrap();
    let (p, _) = four_stage_repair_case();
    let path = write_model(dir.path(), "p.json", &p);
    let out = cli(&[
        "bounds",
        path.to_str().unwrap(),
        "--target",
        "70",
        "--yield",
        "0.8",
        "--sigma-grid",
        "0.5:2.5:5",
        "--format",
        "csv",
    ]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    let rows = csv_rows(&out.stdout);
    assert_eq!(
        rows[0],
        [
            "sigma_ps",
            "mu_relaxed_ps",
            "mu_stringent_ps",
            "mu_realizable_min_ps",
            "mu_realizable_max_ps"
        ]
    );
    assert_eq!(rows.len(), 6);
    for r in &rows[1..] {
        let relaxed: f64 = r[1].parse().unwrap();
        let stringent: f64 = r[2].parse().unwrap();
        assert!(stringent <= relaxed);
    }
}

#[test]
fn mc_is_deterministic_across_thread_counts() {
    let dir = TempDir::new().unwrap();
    let p = uniform_pipeline(6, 5, inverter(), 10.0, mixed()).unwrap();
    let path = write_model(dir.path(), "p.json", &p);
    let hist = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    let go = |threads: &str, h: &str| {
        cli(&[
            "mc",
            path.to_str().unwrap(),
            "--samples",
            "2e4",
            "--target",
            "70",
            "--format",
            "csv",
            "--threads",
            threads,
            "--histogram",
            h,
        ])
    };
    let a = go("1", &hist("a.csv"));
    let b = go("4", &hist("b.csv"));
    assert_eq!(a.code, 0, "{}", a.stderr);
    assert_eq!(a, b);
    assert_eq!(
        fs::read(hist("a.csv")).unwrap(),
        fs::read(hist("b.csv")).unwrap()
    );
    assert!(a.stdout.contains(",42,"), "seed is echoed");
}

#[test]
fn sweep_single_stage_row_is_the_chain() {
    let out = cli(&[
        "sweep",
        "--stage-counts",
        "1",
        "--regimes",
        "random",
        "--latch-overhead",
        "0",
        "--samples",
        "0",
        "--format",
        "csv",
    ]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    let rows = csv_rows(&out.stdout);
    let want = inverter_chain_relation(120, 10.0, 1.0).unwrap();
    let variability: f64 = rows[1][5].parse().unwrap();
    assert!((variability - want.variability()).abs() < 1e-12);
    assert_eq!(rows[1][6], "");
}

#[test]
fn sweep_rejects_non_divisors_and_unknown_regimes() {
    assert_eq!(
        cli(&["sweep", "--stage-counts", "7", "--samples", "0"]).code,
        1
    );
    assert_eq!(
        cli(&["sweep", "--regimes", "cosmic", "--samples", "0"]).code,
        2
    );
}

#[test]
fn optimize_writes_a_loadable_file() {
    let dir = TempDir::new().unwrap();
    let (p, _) = four_stage_repair_case();
    let input = write_model(dir.path(), "in.json", &p);
    let output = dir.path().join("out.json");
    let out = cli(&[
        "optimize",
        input.to_str().unwrap(),
        "--target",
        "70",
        "--yield",
        "0.8",
        "--from-baseline",
        "--output",
        output.to_str().unwrap(),
        "--seed-verify",
        "20000",
    ]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    assert!(out.stdout.contains("verification"));
    let f = parse_file(&fs::read(&output).unwrap()).unwrap();
    let rec = f.optimization.clone().unwrap();
    assert!(rec.feasible);
    assert!(rec.achieved_yield >= 0.8 - 1e-9);
    let model = f.to_model().unwrap();
    assert!((model.total_area() - rec.total_area).abs() < 1e-9);
}

#[test]
fn infeasible_optimize_still_writes_the_best_solution() {
    let dir = TempDir::new().unwrap();
    let (p, _) = four_stage_repair_case();
    let input = write_model(dir.path(), "in.json", &p);
    let output = dir.path().join("out.json");
    let out = cli(&[
        "optimize",
        input.to_str().unwrap(),
        "--target",
        "40",
        "--yield",
        "0.8",
        "--output",
        output.to_str().unwrap(),
    ]);
    assert_eq!(out.code, 3);
    assert!(out.stderr.contains("not reached"));
    let f = parse_file(&fs::read(&output).unwrap()).unwrap();
    assert!(!f.optimization.unwrap().feasible);
}

#[test]
fn optimize_output_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let (p, _) = four_stage_area_case();
    let input = write_model(dir.path(), "in.json", &p);
    let go = || {
        cli(&[
            "optimize",
            input.to_str().unwrap(),
            "--target",
            "70",
            "--yield",
            "0.8",
            "--mode",
            "min-area",
            "--from-baseline",
            "--format",
            "structured",
        ])
    };
    let (a, b) = (go(), go());
    assert_eq!(a.code, 0, "{}", a.stderr);
    assert_eq!(a, b);
    let v: serde_json::Value = serde_json::from_str(&a.stdout).unwrap();
    assert!(v["pipeline"][0]["area_change_pct"].as_f64().unwrap() < 0.0);
}

#[test]
fn shipped_data_files_parse() {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data");
    let mut n = 0;
    for entry in fs::read_dir(data).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "json") {
            parse_pipeline(&fs::read(&path).unwrap())
                .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            n += 1;
        }
    }
    assert!(n >= 2);
}
