use std::path::{Path, PathBuf};
use std::process::Command;

fn run(args: &[&str], log: &str) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_preddir"))
        .args(args)
        .env("RUST_LOG", log)
        .output()
        .unwrap();
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn simulate_study(dir: &Path, name: &str, body: &str) -> PathBuf {
    let cfg = dir.join(format!("{name}.txt"));
    std::fs::write(&cfg, format!("study = {name}\n{body}")).unwrap();
    let (code, err) = run(&["simulate", "--config", s(&cfg), "--out-dir", s(dir)], "warn");
    assert_eq!(code, 0, "{err}");
    dir.join(format!("{name}.csv"))
}

const CONTINUOUS: &str = "n = 400\np = 3\nseed = 7\neffect = linear\neffect.beta = 1, 0, 0\noutcome.sigma = 0.5\n";
const SURVIVAL: &str = "n = 300\np = 3\nseed = 8\noutcome = survival\neffect = linear\neffect.beta = 1, 0, 0\n";

#[test]
fn missing_seed_exits_with_input_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.txt");
    std::fs::write(&cfg, "n = 10\np = 2\n").unwrap();
    let (code, err) = run(&["simulate", "--config", s(&cfg), "--out-dir", s(dir.path())], "warn");
    assert_eq!(code, 2);
    assert!(err.contains("seed"), "{err}");
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.txt");
    std::fs::write(&cfg, "n = 10\np = 2\nseed = 1\nsigma = 3\n").unwrap();
    let (code, err) = run(&["simulate", "--config", s(&cfg), "--out-dir", s(dir.path())], "warn");
    assert_eq!(code, 2, "{err}");
    assert!(err.contains("sigma"), "{err}");
}

#[test]
fn missing_data_file_exits_with_input_code() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.csv");
    let (code, _) = run(&["fit", "--data", s(&missing), "--seed", "1", "--out-dir", s(dir.path())], "warn");
    assert_eq!(code, 2);
}

#[test]
fn linear_fit_recovers_direction() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate_study(dir.path(), "a", CONTINUOUS);
    let out = dir.path().join("fit");
    let (code, err) = run(
        &["fit", "--data", s(&data), "--seed", "2", "--method", "linear", "--out-dir", s(&out)],
        "warn",
    );
    assert_eq!(code, 0, "{err}");
    let text = std::fs::read_to_string(out.join("directions.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "z1,z2,z3,eigenvalue");
    let first: Vec<f64> = lines.next().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    let norm = first[..3].iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(first[0].abs() / norm >= 0.95, "{first:?}");
    let scores = std::fs::read_to_string(out.join("scores.csv")).unwrap();
    assert_eq!(scores.lines().count(), 401);
}

#[test]
fn survival_fit_logs_pseudo_outcome_and_scores_every_subject() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate_study(dir.path(), "a", SURVIVAL);
    let out = dir.path().join("fit");
    let (code, err) = run(
        &["fit", "--data", s(&data), "--seed", "2", "--method", "kernel", "--out-dir", s(&out)],
        "info",
    );
    assert_eq!(code, 0, "{err}");
    assert!(err.contains("martingale residuals"), "{err}");
    let scores = std::fs::read_to_string(out.join("scores.csv")).unwrap();
    assert_eq!(scores.lines().count(), 301);
    assert!(out.join("kernel.csv").exists());
}

#[test]
fn evaluate_rejects_schema_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let train = simulate_study(dir.path(), "a", SURVIVAL);
    let other = simulate_study(dir.path(), "b", CONTINUOUS);
    let fit = dir.path().join("fit");
    let (code, err) = run(&["fit", "--data", s(&train), "--seed", "2", "--out-dir", s(&fit)], "warn");
    assert_eq!(code, 0, "{err}");
    let (code, err) = run(
        &[
            "evaluate", "--model", s(&fit.join("model.json")), "--data", s(&other), "--seed", "2",
            "--out-dir", s(&dir.path().join("eval")),
        ],
        "warn",
    );
    assert_eq!(code, 2, "{err}");
}

#[test]
fn evaluate_writes_one_effect_row() {
    let dir = tempfile::tempdir().unwrap();
    let train = simulate_study(dir.path(), "a", SURVIVAL);
    let test = simulate_study(dir.path(), "b", &SURVIVAL.replace("seed = 8", "seed = 9"));
    let fit = dir.path().join("fit");
    let (code, err) = run(&["fit", "--data", s(&train), "--seed", "2", "--out-dir", s(&fit)], "warn");
    assert_eq!(code, 0, "{err}");
    let ev = dir.path().join("eval");
    let (code, err) = run(
        &["evaluate", "--model", s(&fit.join("model.json")), "--data", s(&test), "--seed", "2", "--out-dir", s(&ev)],
        "warn",
    );
    assert_eq!(code, 0, "{err}");
    let text = std::fs::read_to_string(ev.join("effects.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("study,mode,measure,estimate"));
    assert!(lines[1].contains("hazard_ratio") || lines[1].contains(",failed,"), "{}", lines[1]);
}

#[test]
fn meta_writes_a_row_per_training_study() {
    let dir = tempfile::tempdir().unwrap();
    let paths: Vec<PathBuf> = [("a", 11), ("b", 12), ("c", 13)]
        .iter()
        .map(|(name, seed)| simulate_study(dir.path(), name, &SURVIVAL.replace("seed = 8", &format!("seed = {seed}"))))
        .collect();
    let out = dir.path().join("meta");
    let mut args = vec!["meta", "--seed", "4", "--method", "linear", "--out-dir", s(&out)];
    for p in &paths {
        args.push("--data");
        args.push(s(p));
    }
    let (code, err) = run(&args, "warn");
    assert_eq!(code, 0, "{err}");
    let effects = std::fs::read_to_string(out.join("effects.csv")).unwrap();
    let studies: Vec<&str> = effects.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(studies, ["a", "b", "c"]);
    let directions = std::fs::read_to_string(out.join("directions.csv")).unwrap();
    assert_eq!(directions.lines().count(), 4);
    assert!(out.join("concordance_matrix.csv").exists());
    assert!(out.join("scores_by_study.csv").exists());
}

#[test]
fn meta_needs_two_studies() {
    let dir = tempfile::tempdir().unwrap();
    let a = simulate_study(dir.path(), "a", SURVIVAL);
    let (code, _) = run(&["meta", "--data", s(&a), "--seed", "1", "--out-dir", s(&dir.path().join("m"))], "warn");
    assert_eq!(code, 2);
}

#[test]
fn simulate_is_reproducible() {
    let x = tempfile::tempdir().unwrap();
    let y = tempfile::tempdir().unwrap();
    let a = simulate_study(x.path(), "a", SURVIVAL);
    let b = simulate_study(y.path(), "a", SURVIVAL);
    assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    assert_eq!(
        std::fs::read(x.path().join("truth.csv")).unwrap(),
        std::fs::read(y.path().join("truth.csv")).unwrap()
    );
}
