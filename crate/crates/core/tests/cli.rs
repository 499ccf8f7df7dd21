use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rmpfusion::fixtures;
use rmpfusion::weights::WeightSpec;
use serde_json::Value;

fn rmpfusion(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rmpfusion"))
        .args(args)
        .env("RMPFUSION_LOG", "error")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

/// A copy of the 2d1level experiment with a handful of short demonstrations.
fn small_config(dir: &Path) -> String {
    for f in ["2d1level.expert.json", "2d1level.learner.json"] {
        fs::copy(fixture_dir().join(f), dir.join(f)).unwrap();
    }
    let text = fs::read_to_string(fixture_dir().join("2d1level.experiment.json")).unwrap();
    let mut cfg: Value = serde_json::from_str(&text).unwrap();
    cfg["train_data"] = serde_json::json!({"envs": 1, "traj_per_env": 2, "points_per_traj": 10});
    cfg["test_data"] = serde_json::json!({"envs": 1, "traj_per_env": 2, "points_per_traj": 10});
    cfg["train"]["minibatch"] = 10.into();
    cfg["train"]["checkpoint_every"] = 5.into();
    let path = dir.join("small.json");
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(code(&rmpfusion(&["verify", "--suite", "nonsense"])), 2);
    assert_eq!(code(&rmpfusion(&["gen-data", "--config", "/nonexistent.json", "--out", "/tmp/x"])), 2);
    assert_eq!(code(&rmpfusion(&["gen-data", "--config", "fixture:nope", "--out", "/tmp/x"])), 2);
}

#[test]
fn verify_reports_a_passing_suite() {
    let out = rmpfusion(&["verify", "--suite", "lemma2", "--seed", "0"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["passed"], true);
    assert!(report["checks"].as_u64().unwrap() > 0);
}

#[test]
fn stability_of_a_negative_weight_tree_fails_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = fixtures::tree_spec("ytree").unwrap();
    spec.edges[1].weight = WeightSpec::constant(-1.0);
    let path = dir.path().join("bad.json");
    fs::write(&path, spec.to_json()).unwrap();
    let report_path = dir.path().join("report.json");
    let out = rmpfusion(&[
        "verify",
        "--suite",
        "stability",
        "--tree",
        path.to_str().unwrap(),
        "--out",
        report_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1);
    let report: Value = serde_json::from_str(&fs::read_to_string(report_path).unwrap()).unwrap();
    assert_eq!(report["passed"], false);
    assert!(report.to_string().contains("contract_violation"));
}

#[test]
fn gen_data_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let res = rmpfusion(&["gen-data", "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    }
    for f in ["train.jsonl", "test.jsonl", "summary.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_eq!(fs::read_to_string(a.join("train.jsonl")).unwrap().lines().count(), 20);
    let clash = rmpfusion(&["gen-data", "--config", &cfg, "--seed", "2", "--out", a.to_str().unwrap()]);
    assert_eq!(code(&clash), 2);
}

#[test]
fn train_rollout_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = small_config(d);
    let data = d.join("data");
    assert_eq!(code(&rmpfusion(&["gen-data", "--config", &cfg, "--out", data.to_str().unwrap()])), 0);
    let run = d.join("run");
    let res = rmpfusion(&[
        "train",
        "--config",
        &cfg,
        "--data",
        data.join("train.jsonl").to_str().unwrap(),
        "--iterations",
        "10",
        "--out",
        run.to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    for f in ["checkpoint-000005.json", "checkpoint-000010.json", "final.json", "curve.csv"] {
        assert!(run.join(f).exists(), "{f}");
    }
    assert_eq!(fs::read_to_string(run.join("curve.csv")).unwrap().lines().count(), 11);

    let res = rmpfusion(&[
        "eval",
        "--config",
        &cfg,
        "--model",
        "expert",
        "--data",
        data.join("test.jsonl").to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let report: Value = serde_json::from_slice(&res.stdout).unwrap();
    assert_eq!(report["completion_rate"], 1.0);

    let traj = d.join("roll/learner.csv");
    let res = rmpfusion(&[
        "rollout",
        "--config",
        &cfg,
        "--model",
        run.join("final.json").to_str().unwrap(),
        "--seed",
        "3",
        "--horizon",
        "1",
        "--out",
        traj.to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    assert!(d.join("roll/learner.env.json").exists());

    let plots = d.join("plots");
    let res = rmpfusion(&[
        "plot",
        "--trajectory",
        traj.to_str().unwrap(),
        "--curve",
        run.join("curve.csv").to_str().unwrap(),
        "--out",
        plots.to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    for f in ["trajectories.svg", "lyapunov.svg", "curve.svg"] {
        assert!(fs::read_to_string(plots.join(f)).unwrap().starts_with("<svg"), "{f}");
    }
}

#[test]
fn assert_safe_fails_on_collision() {
    let dir = tempfile::tempdir().unwrap();
    let traj = dir.path().join("expert.csv");
    let first = rmpfusion(&[
        "rollout",
        "--config",
        "fixture:2d1level",
        "--model",
        "expert",
        "--horizon",
        "0.5",
        "--out",
        traj.to_str().unwrap(),
    ]);
    assert_eq!(code(&first), 0, "{}", String::from_utf8_lossy(&first.stderr));
    let env_file = dir.path().join("expert.env.json");
    let env: Value = serde_json::from_str(&fs::read_to_string(&env_file).unwrap()).unwrap();
    let c = &env["obstacles"][0]["center"];
    let start = format!("{},{},0,0", c[0], c[1].as_f64().unwrap() + 0.01);
    let out = rmpfusion(&[
        "rollout",
        "--config",
        "fixture:2d1level",
        "--model",
        "expert",
        "--env",
        env_file.to_str().unwrap(),
        "--start",
        &start,
        "--assert-safe",
        "--out",
        dir.path().join("inside.csv").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1);
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "\"collision\"");
}

#[test]
fn plotting_an_empty_trajectory_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.csv");
    fs::write(&empty, "").unwrap();
    let out_dir = dir.path().join("plots");
    let out = rmpfusion(&["plot", "--trajectory", empty.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(!out_dir.exists());
}
