//! End-to-end runs of the `qinit` binary.

use std::path::Path;
use std::process::Command;

use qinit::harness::{read_csv_rows, read_json, CurveRow, EvalReport, RunMetrics, RunRecord};

const SMALL: &str = "[experiment]\nvalidation_episodes = 1000\ncurve_every = 2\ncurve_episodes = 300\n\
checkpoint_every = 2\nbootstrap_resamples = 10\ncalibration_shots = 4000\n\
threshold_fractions = [0.0, 0.4]\nthreshold_episodes = 500\nlambdas = [0.02, 0.08]\n\
[ppo]\ntraining_steps = 4\nbatch_measurements = 300\n";

fn qinit(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_qinit")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("cfg.toml");
    std::fs::write(&p, text).unwrap();
    p.display().to_string()
}

#[test]
fn dry_run_prints_resolved_config() {
    let out = qinit(&["--scenario", "qutrit-4action", "--dry-run", "train"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("scenario = \"qutrit-4action\""));
    assert!(text.contains("n_actions = 4"));
    assert!(text.contains("levels = 3"));
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[experiment]\nlambdas = [-0.5]\n");
    let out = qinit(&["--config", &cfg, "train"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("experiment.lambdas[0]"));
    let cfg = write_config(dir.path(), "[experiment]\nscenario = \"qutrit-4action\"\n[topology]\nn_actions = 3\n");
    let out = qinit(&["--config", &cfg, "--dry-run", "train"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("topology.n_actions"));
}

#[test]
fn latency_report_json() {
    let out = qinit(&["latency"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["per_layer_ns"], 32.0);
    assert_eq!(v["total_nn_ns"], 48.0);
}

#[test]
fn train_persists_round_trippable_artifacts_and_eval_reads_them() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let run_dir = dir.path().join("run");
    let out = qinit(&["--config", &cfg, "--seed", "5", "--out", run_dir.to_str().unwrap(), "train"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let record: RunRecord = read_json(&run_dir.join("run.json")).unwrap();
    assert_eq!(record.seed, 5);
    assert_eq!(record.checkpoints.len(), 3);
    assert!(record.checkpoints.iter().all(|c| Path::new(c).exists()));
    let metrics: RunMetrics = read_json(&run_dir.join("metrics.json")).unwrap();
    assert_eq!(metrics, record.metrics);
    let again = serde_json::to_string_pretty(&metrics).unwrap() + "\n";
    assert_eq!(again, std::fs::read_to_string(run_dir.join("metrics.json")).unwrap());
    let curve: Vec<CurveRow> = read_csv_rows(&run_dir.join("learning_curve.csv")).unwrap();
    assert_eq!(curve.iter().map(|r| r.step).collect::<Vec<_>>(), vec![2, 4]);

    let eval_dir = dir.path().join("eval");
    let policy = run_dir.join("policy.json");
    let out = qinit(&[
        "--config", &cfg, "--out", eval_dir.to_str().unwrap(), "eval", policy.to_str().unwrap(), "--episodes", "800",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: EvalReport = read_json(&eval_dir.join("eval.json")).unwrap();
    assert_eq!(report.validation.len(), 2);
    assert_eq!(report.validation[0].episodes, 800);
    assert!(eval_dir.join("policy_map_equilibrium_u.csv").exists());
    assert!(eval_dir.join("policy_map_inverted_u.json").exists());

    // a memory topology cannot load a memoryless checkpoint
    let out = qinit(&["--scenario", "weak-qubit-l2", "eval", policy.to_str().unwrap(), "--episodes", "10"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("topology"));
}

#[test]
fn sweep_writes_both_frontiers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out_dir = dir.path().join("sweep");
    let out = qinit(&["--config", &cfg, "--out", out_dir.to_str().unwrap(), "--threads", "2", "sweep-lambda"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let agents: Vec<qinit::harness::FrontierRow> = read_csv_rows(&out_dir.join("frontier.csv")).unwrap();
    assert_eq!(agents.iter().map(|r| r.lambda).collect::<Vec<_>>(), vec![0.02, 0.08]);
    let thr: Vec<qinit::harness::ThresholdPoint> = read_csv_rows(&out_dir.join("threshold_frontier.csv")).unwrap();
    assert_eq!(thr.len(), 2);
    assert!(thr.iter().all(|t| t.accept_threshold <= t.discriminate_threshold));
}

#[test]
fn simulate_and_discriminate_from_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[experiment]\nscenario = \"discrimination\"\n[discrimination]\ntau_samples = [64, 128]\n\
         [discrimination.classifier]\nmax_epochs = 3\nrestarts = 1\n",
    );
    let sim = dir.path().join("sim");
    let out = qinit(&["--config", &cfg, "--out", sim.to_str().unwrap(), "simulate-traces", "--n", "64", "--len", "128"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(sim.join("mean_traces.csv").exists());
    let traces = sim.join("traces.csv");
    let disc = dir.path().join("disc");
    let out = qinit(&[
        "--config", &cfg, "--out", disc.to_str().unwrap(), "discriminate", "--traces", traces.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(disc.join("discrimination.csv").exists());
}
