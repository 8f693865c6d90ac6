use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

const TINY: &str = "[agent]\nepisodes = 2\ninitial_random_episodes = 1\neval_episodes = 2\n\n[general]\nupdate_steps = 3\n";

fn lambda(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lambda")).args(args).output().unwrap()
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn train(dir: &Path, name: &str, seed: &str) -> (Output, String) {
    let cfg = dir.join("tiny.toml");
    fs::write(&cfg, TINY).unwrap();
    let out = dir.join(name);
    let run = out.to_str().unwrap().to_string();
    (lambda(&["train", "--config", cfg.to_str().unwrap(), "--seed", seed, "--out", &run]), run)
}

#[test]
fn train_eval_and_refuse_to_overwrite() {
    let dir = tempfile::tempdir().unwrap();
    let (out, run) = train(dir.path(), "run", "3");
    let scores = stdout_json(&out);
    for key in ["J", "Jc", "rho_c", "steps"] {
        assert!(scores.get(key).is_some(), "missing {key}");
    }
    let on_disk: Value = serde_json::from_slice(&fs::read(Path::new(&run).join("scores.json")).unwrap()).unwrap();
    assert_eq!(on_disk, scores);
    assert_eq!(stdout_json(&lambda(&["eval", &run])), scores);

    let (again, _) = train(dir.path(), "run", "4");
    assert!(!again.status.success());
    assert!(String::from_utf8_lossy(&again.stderr).starts_with("error:"));
}

#[test]
fn report_writes_one_csv_per_metric() {
    let dir = tempfile::tempdir().unwrap();
    let (a, run_a) = train(dir.path(), "a", "0");
    let (b, run_b) = train(dir.path(), "b", "1");
    assert!(a.status.success() && b.status.success());
    let csv = dir.path().join("csv");
    let summary = stdout_json(&lambda(&["report", &run_a, &run_b, "--out", csv.to_str().unwrap()]));
    assert_eq!(summary["seeds"], 2);
    assert_eq!(summary["scores"]["seeds"], 2);
    for metric in ["J", "Jc_0", "rho_c", "lambda_0"] {
        let text = fs::read_to_string(csv.join(format!("{metric}.csv"))).unwrap();
        assert!(text.starts_with("step,mean,p5,p95\n"), "{metric}");
        assert_eq!(text.lines().count(), 3, "{metric}");
    }
}

#[test]
fn lp_solve_reads_a_cmdp_file() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("cmdp.json");
    let cmdp = json!({
        "n_states": 2,
        "n_actions": 2,
        "horizon": 2,
        "transitions": [1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0],
        "rewards": [0.0, 1.0, 0.5, 0.5],
        "costs": [[0.0, 0.0, 1.0, 1.0]],
        "initial": [1.0, 0.0],
        "thresholds": [0.5]
    });
    fs::write(&file, cmdp.to_string()).unwrap();
    for method in ["simplex", "dual"] {
        let sol = stdout_json(&lambda(&["lp-solve", file.to_str().unwrap(), "--method", method]));
        assert!((sol["value"].as_f64().unwrap() - 1.25).abs() < 1e-6, "{method}: {sol}");
    }
    let grid = stdout_json(&lambda(&["lp-solve"]));
    assert!(grid["constraint_values"][0].as_f64().unwrap() <= 5.0 + 1e-9);
}

#[test]
fn normalize_against_a_characteristic_run() {
    let dir = tempfile::tempdir().unwrap();
    let scores = dir.path().join("scores.json");
    let reference = dir.path().join("reference.json");
    fs::write(&scores, json!({"J": 30.0, "Jc": 26.0, "rho_c": 0.02, "steps": 100}).to_string()).unwrap();
    fs::write(&reference, json!({"J": 60.0, "Jc": [35.0], "rho_c": 0.08, "steps": 100}).to_string()).unwrap();
    let out = stdout_json(&lambda(&[
        "normalize",
        "--scores",
        scores.to_str().unwrap(),
        "--characteristic",
        reference.to_str().unwrap(),
        "--threshold",
        "25",
    ]));
    assert!((out["Jc"][0].as_f64().unwrap() - 0.1).abs() < 1e-12);
    assert!((out["J"].as_f64().unwrap() - 0.5).abs() < 1e-12);
    assert!((out["rho_c"].as_f64().unwrap() - 0.25).abs() < 1e-12);
}

#[test]
fn bad_inputs_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let out = lambda(&["train", "--env", "nowhere", "--episodes", "1", "--out", run.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));
    assert!(!lambda(&["eval", dir.path().join("missing").to_str().unwrap()]).status.success());
    assert!(!lambda(&["train", "--variant", "reckless", "--out", run.to_str().unwrap()]).status.success());
}
