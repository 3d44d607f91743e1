use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use epicon::io::{scenario_to_json, RunManifest};
use epicon::preset;

fn epicon(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_epicon"))
        .args(args)
        .env_remove("EPICON_OUT")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn report(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

fn write_scenario(dir: &Path, edit: impl FnOnce(&mut serde_json::Value)) -> String {
    let mut v: serde_json::Value = serde_json::from_str(&scenario_to_json(&preset("sir_paper_qq_008").unwrap())).unwrap();
    edit(&mut v);
    let path = dir.join("scenario.json");
    fs::write(&path, v.to_string()).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn solve_writes_a_converged_report() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("qq");
    let run = epicon(&["solve", "--preset", "sir_paper_qq_008", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&run), 0, "{}", stderr(&run));
    let r = report(&out);
    assert_eq!(r["converged"], true);
    assert_eq!(r["method"], "fbsm");
    for f in ["trajectory.csv", "control.csv", "costates.csv", "scenario.json", "manifest.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let manifest: RunManifest = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert!(manifest.verify().unwrap().is_empty());

    let again = epicon(&["analyze", out.to_str().unwrap()]);
    assert_eq!(code(&again), 0, "{}", stderr(&again));
    assert!(out.join("structure.json").exists());
}

#[test]
fn unconverged_solve_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("short");
    let run = epicon(&[
        "solve", "--preset", "sir_paper_qq_008", "--max-iters", "2", "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(code(&run), 2);
    assert_eq!(report(&out)["converged"], false);
}

#[test]
fn broken_closed_population_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let path = write_scenario(tmp.path(), |v| v["model"]["sigma"] = serde_json::json!([0.05]));
    let run = epicon(&["validate", "--scenario", &path]);
    assert_eq!(code(&run), 1);
    assert!(stderr(&run).contains("closed-population residual -0.01 in column 1"), "{}", stderr(&run));
}

#[test]
fn missing_key_and_bad_exponent() {
    let tmp = tempfile::tempdir().unwrap();
    let path = write_scenario(tmp.path(), |v| {
        v["cost"].as_object_mut().unwrap().remove("q");
    });
    let run = epicon(&["validate", "--scenario", &path]);
    assert_eq!(code(&run), 1);
    assert!(stderr(&run).contains("cost.q"), "{}", stderr(&run));

    let path = write_scenario(tmp.path(), |v| v["cost"]["q"] = serde_json::json!([3.0]));
    let run = epicon(&["validate", "--scenario", &path]);
    assert_eq!(code(&run), 1);
    assert!(stderr(&run).contains("q out of [1,2]"), "{}", stderr(&run));
}

#[test]
fn unknown_preset_and_missing_file() {
    assert_eq!(code(&epicon(&["validate", "--preset", "nope"])), 1);
    let run = epicon(&["simulate", "--scenario", "/nonexistent/scenario.json", "--out", "/tmp/unused"]);
    assert_eq!(code(&run), 3);
}

#[test]
fn simulate_conserves_mass_and_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for dir in [&a, &b] {
        let run = epicon(&["simulate", "--preset", "sir_paper_ll_01", "--control", "zero", "--out", dir.to_str().unwrap()]);
        assert_eq!(code(&run), 0, "{}", stderr(&run));
    }
    let text = fs::read_to_string(a.join("trajectory.csv")).unwrap();
    let mut rows = 0;
    for line in text.lines().skip(1) {
        let v: Vec<f64> = line.split(',').map(|f| f.parse().unwrap()).collect();
        let total: f64 = v[1..].iter().sum();
        assert!((total - 1.0).abs() <= 1e-9, "{line}");
        rows += 1;
    }
    assert_eq!(rows, 3601);
    for f in ["trajectory.csv", "control.csv", "costates.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn output_directory_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("env_out");
    let run = Command::new(env!("CARGO_BIN_EXE_epicon"))
        .args(["simulate", "--preset", "seir", "--control", "max"])
        .env("EPICON_OUT", &dir)
        .output()
        .unwrap();
    assert_eq!(code(&run), 0, "{}", stderr(&run));
    assert_eq!(report(&dir)["command"], "simulate");
}

#[test]
fn presets_are_listed() {
    let run = epicon(&["presets"]);
    assert_eq!(code(&run), 0);
    let text = String::from_utf8(run.stdout).unwrap();
    for name in epicon::PRESET_NAMES {
        assert!(text.contains(name), "{name}");
    }
}
