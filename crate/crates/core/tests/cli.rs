use std::path::Path;

use illposed::bench::{parse_table_csv, ExperimentConfig};
use illposed::cli::{cli_main, EXIT_OK, EXIT_RUNTIME, EXIT_USAGE};
use illposed::problem::{Grid, InverseProblem, Kernel, TestFunction, build_convolution_operator, evaluate_test_function, rms_error};

fn run(args: &[&str]) -> i32 {
    cli_main(std::iter::once("illposed").chain(args.iter().copied()))
}

fn path_arg(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

fn small_config(dir: &Path) -> std::path::PathBuf {
    let mut config = ExperimentConfig::new(TestFunction::F1, 32, 3.0);
    config.replications = 6;
    config.master_seed = 11;
    let path = dir.join("cell.json");
    std::fs::write(&path, config.to_json().unwrap()).unwrap();
    path
}

#[test]
fn bench_with_config_writes_a_table() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let out = dir.path().join("table.csv");
    assert_eq!(run(&["bench", "--config", path_arg(&config), "--out", path_arg(&out)]), EXIT_OK);
    let rows = parse_table_csv(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r.completed == 6 && r.mean_error > 0.0));
}

#[test]
fn bench_flags_override_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    assert_eq!(run(&["bench", "--config", path_arg(&config), "--out", path_arg(&a)]), EXIT_OK);
    assert_eq!(
        run(&["bench", "--config", path_arg(&config), "--seed", "12", "--reps", "4", "--out", path_arg(&b)]),
        EXIT_OK
    );
    let rows = parse_table_csv(&std::fs::read_to_string(&b).unwrap()).unwrap();
    assert!(rows.iter().all(|r| r.completed == 4));
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn bench_output_is_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let tables: Vec<Vec<u8>> = ["1", "3"]
        .iter()
        .map(|t| {
            let out = dir.path().join(format!("t{t}.csv"));
            assert_eq!(
                run(&["bench", "--config", path_arg(&config), "--threads", t, "--out", path_arg(&out)]),
                EXIT_OK
            );
            std::fs::read(out).unwrap()
        })
        .collect();
    assert_eq!(tables[0], tables[1]);
}

#[test]
fn missing_config_is_a_usage_error() {
    assert_eq!(run(&["bench", "--config", "/nonexistent/cell.json"]), EXIT_USAGE);
}

#[test]
fn bench_without_config_needs_the_cell() {
    assert_eq!(run(&["bench", "--fn", "f1", "--n", "32"]), EXIT_USAGE);
}

#[test]
fn unknown_flags_and_subcommands_are_usage_errors() {
    assert_eq!(run(&["bench", "--bogus"]), EXIT_USAGE);
    assert_eq!(run(&["frobnicate"]), EXIT_USAGE);
    assert_eq!(run(&[]), EXIT_USAGE);
}

#[test]
fn help_exits_cleanly() {
    assert_eq!(run(&["--help"]), EXIT_OK);
}

#[test]
fn invalid_config_values_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{"test_function": "f1", "n": 30, "snr": 3, "estimators": ["lasso_cv"]}"#).unwrap();
    assert_ne!(run(&["bench", "--config", path_arg(&path)]), EXIT_OK);
}

#[test]
fn solve_recovers_noiseless_in_span_signal() {
    let dir = tempfile::tempdir().unwrap();
    let grid = Grid::new(4.0, 32).unwrap();
    let operator = build_convolution_operator(|x| Kernel::Exp.eval(x), &grid);
    let f = evaluate_test_function(TestFunction::F3, &grid);
    let problem = InverseProblem::with_sigma(operator, f.clone(), 0.0, grid, 0).unwrap();
    let input = dir.path().join("y.csv");
    problem.write_csv(&input).unwrap();
    let out = dir.path().join("f_hat.csv");
    assert_eq!(
        run(&[
            "solve", "--input", path_arg(&input), "--kernel", "exp", "--T", "4", "--sigma", "0",
            "--N_grid", "2000", "--out", path_arg(&out),
        ]),
        EXIT_OK
    );
    let mut reader = csv::Reader::from_path(&out).unwrap();
    assert_eq!(reader.headers().unwrap(), vec!["x", "f_hat", "f_true"]);
    let f_hat: Vec<f64> = reader
        .records()
        .map(|r| r.unwrap()[1].parse().unwrap())
        .collect();
    let err = rms_error(&nalgebra::DVector::from_vec(f_hat), &f);
    assert!(err <= 1e-3, "{err}");
}

#[test]
fn solve_rejects_a_mismatched_interval() {
    let dir = tempfile::tempdir().unwrap();
    let grid = Grid::new(4.0, 16).unwrap();
    let problem = InverseProblem::simulate(Kernel::Exp, TestFunction::F1, grid, 3.0, 1).unwrap();
    let input = dir.path().join("y.csv");
    problem.write_csv(&input).unwrap();
    assert_eq!(run(&["solve", "--input", path_arg(&input), "--T", "5"]), EXIT_USAGE);
    assert_eq!(run(&["solve", "--input", "/nonexistent/y.csv"]), EXIT_USAGE);
}

#[test]
fn solve_with_a_bad_grid_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("y.csv");
    std::fs::write(&input, "x,y\n1,0.1\n1.5,0.2\n4,0.3\n").unwrap();
    assert_eq!(run(&["solve", "--input", path_arg(&input)]), EXIT_RUNTIME);
}

#[test]
fn dict_writes_labelled_columns() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("phi.csv");
    assert_eq!(run(&["dict", "--kind", "laguerre", "--n", "32", "--out", path_arg(&out)]), EXIT_OK);
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap().split(',').count(), 64);
    assert_eq!(lines.count(), 32);
}

#[test]
fn diagnose_reports_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.json");
    let weights = dir.path().join("nu.csv");
    assert_eq!(
        run(&[
            "diagnose", "--kind", "rows", "--n", "32", "--p", "48", "--s", "2", "--reps", "3", "--probes", "50",
            "--out", path_arg(&out), "--weights-out", path_arg(&weights),
        ]),
        EXIT_OK
    );
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(report["n"], 32);
    assert_eq!(report["p"], 48);
    assert!(report["lamin"].as_f64().unwrap() <= report["lamax"].as_f64().unwrap());
    assert_eq!(std::fs::read_to_string(&weights).unwrap().lines().count(), 49);
}

#[test]
fn diagnose_rejects_a_small_k0() {
    assert_eq!(run(&["diagnose", "--n", "32", "--K0", "1"]), EXIT_USAGE);
}
