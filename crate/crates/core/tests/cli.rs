//! Command-line behavior: exit codes, artifacts and reproducibility.

use std::fs;
use std::path::{Path, PathBuf};

use robotune::cli::commands::load;
use robotune::cli::{cmd_replay, main_with_args};

fn scenario_path(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join(format!("../../scenarios/{name}.toml"))
        .display()
        .to_string()
}

fn run(args: &[&str]) -> i32 {
    main_with_args(std::iter::once("robotune").chain(args.iter().copied()))
}

fn tune_into(dir: &Path) -> i32 {
    let out = dir.display().to_string();
    run(&[
        "tune",
        "--scenario",
        &scenario_path("basic_nav_web"),
        "--budget",
        "14",
        "--out",
        &out,
    ])
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(run(&["frobnicate"]), 1);
    assert_eq!(run(&["tune", "--mode", "bogus"]), 1);
}

#[test]
fn validation_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    assert_eq!(
        run(&["tune", "--scenario", "no/such/file.toml", "--out", &out]),
        2
    );
    assert_eq!(
        run(&[
            "tune",
            "--scenario",
            &scenario_path("basic_nav_web"),
            "--budget",
            "2",
            "--out",
            &out
        ]),
        2
    );
    assert_eq!(run(&["report", "--out", &out]), 2);
}

#[test]
fn tune_writes_artifacts_and_reruns_identically() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    assert_eq!(tune_into(a.path()), 0);
    assert_eq!(tune_into(b.path()), 0);
    for f in [
        "history.ndjson",
        "outcome.json",
        "best_config.json",
        "summary.csv",
        "progress.csv",
    ] {
        let left = fs::read(a.path().join(f)).unwrap();
        assert_eq!(left, fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let summary = fs::read_to_string(a.path().join("summary.csv")).unwrap();
    for variant in ["default", "tuned", "cgroups_only", "random_1"] {
        assert!(summary.lines().any(|l| l.starts_with(variant)), "{variant}");
    }
}

#[test]
fn replaying_a_trial_reproduces_it() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(tune_into(dir.path()), 0);
    let history = fs::read_to_string(dir.path().join("history.ndjson")).unwrap();
    let trial = dir.path().join("trial.json");
    fs::write(&trial, history.lines().nth(3).unwrap()).unwrap();
    let sc = load(Path::new(&scenario_path("basic_nav_web"))).unwrap();
    assert_eq!(
        cmd_replay(&sc, &trial, 42, None).unwrap().matches,
        Some(true)
    );
}

#[test]
fn report_merges_runs() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(tune_into(&dir.path().join("a")), 0);
    assert_eq!(tune_into(&dir.path().join("b")), 0);
    let root = dir.path().display().to_string();
    assert_eq!(run(&["report", "--out", &root]), 0);
    let merged = fs::read_to_string(dir.path().join("report/summary.csv")).unwrap();
    assert!(merged.starts_with("run,variant,"));
    for run in ["a", "b"] {
        assert!(
            merged
                .lines()
                .any(|l| l.starts_with(&format!("{run},tuned,"))),
            "{merged}"
        );
    }
}

#[test]
fn unsat_is_a_successful_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    assert_eq!(
        run(&[
            "tune",
            "--scenario",
            &scenario_path("basic_nav_unsat"),
            "--out",
            &out
        ]),
        0
    );
    assert!(fs::read_to_string(dir.path().join("outcome.json"))
        .unwrap()
        .to_lowercase()
        .contains("unsat"));
}
