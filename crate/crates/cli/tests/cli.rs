//! End-to-end checks of the `neseek` binary: artifact layout, exit codes,
//! determinism, and the wording of operator-facing output.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn neseek(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_neseek"))
        .args(args)
        .output()
        .expect("binary launches")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

/// Path of a scenario bundled with the repository.
fn bundled(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
        .canonicalize()
        .expect("bundled scenario exists")
}

/// Two-player energy game on a mutual ring; small enough that a full run
/// takes milliseconds.
const TINY_HVAC: &str = r#"
[game]
name = "hvac"
a = [1.0, 1.0]
b = [10.0, 15.0]
c = 0.1
d = 10.0

[graph]
nodes = 2
edges = [[1, 2], [2, 1]]

[gains]
kappa = 5.0

[sim]
t_end = 0.5
step = 0.001
decimate = 100
"#;

fn write_scenario(dir: &TempDir, name: &str, body: &str) -> PathBuf {
    let path = dir.path().join(name);
    fs::write(&path, body).expect("scenario written");
    path
}

#[test]
fn run_writes_artifacts_and_reruns_identically() {
    let dir = TempDir::new().unwrap();
    let scenario = write_scenario(&dir, "tiny.toml", TINY_HVAC);
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");

    let first = neseek(&["run", scenario.to_str().unwrap(), "--out", out_a.to_str().unwrap()]);
    assert_eq!(code(&first), 0, "stderr: {}", stderr(&first));
    assert!(stdout(&first).contains("final relative error"));

    let trace = fs::read_to_string(out_a.join("trace.csv")).expect("trace written");
    let mut lines = trace.lines();
    assert_eq!(
        lines.next().unwrap(),
        "time,mode,x1_1[0],x1_2[0],x2_1[0],x2_2[0],error_to_ne,consensus_gap"
    );
    // 500 steps decimated by 100, plus the initial sample.
    assert_eq!(lines.count(), 6);
    assert!(trace.lines().nth(1).unwrap().starts_with("0,safe,"));

    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_a.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["diverged"], serde_json::Value::Bool(false));
    assert_eq!(summary["samples"], serde_json::json!(6));

    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_a.join("report.json")).unwrap()).unwrap();
    assert!(report["certification"].is_object());

    let second = neseek(&["run", scenario.to_str().unwrap(), "--out", out_b.to_str().unwrap(), "--quiet"]);
    assert_eq!(code(&second), 0);
    assert!(stdout(&second).is_empty(), "--quiet must silence the console");
    assert_eq!(
        fs::read(out_a.join("trace.csv")).unwrap(),
        fs::read(out_b.join("trace.csv")).unwrap(),
        "identical inputs must reproduce the trace byte for byte"
    );
}

#[test]
fn missing_gain_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let scenario = write_scenario(
        &dir,
        "nogain.toml",
        &TINY_HVAC.replace("kappa = 5.0", ""),
    );
    let out = neseek(&["run", scenario.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(
        stderr(&out).contains("kappa"),
        "the error should name the missing field: {}",
        stderr(&out)
    );
}

#[test]
fn unknown_game_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let scenario = write_scenario(
        &dir,
        "chess.toml",
        &TINY_HVAC.replace("name = \"hvac\"", "name = \"chess\""),
    );
    let out = neseek(&["run", scenario.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("unknown game 'chess'"), "{}", stderr(&out));
}

#[test]
fn generator_without_budget_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let scenario = write_scenario(
        &dir,
        "nobudget.toml",
        &format!(
            "{TINY_HVAC}\n[schedule]\nhorizon = 1.0\n[schedule.generator]\nseed = 1\n"
        ),
    );
    let out = neseek(&["run", scenario.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("budget"), "{}", stderr(&out));
}

#[test]
fn diverged_run_exits_3_but_writes_partial_artifacts() {
    let dir = TempDir::new().unwrap();
    let scenario = write_scenario(
        &dir,
        "blowup.toml",
        &TINY_HVAC
            .replace("kappa = 5.0", "kappa = 1.0e6")
            .replace("step = 0.001", "step = 0.01")
            .replace("t_end = 0.5", "t_end = 1.0")
            .replace("decimate = 100", "decimate = 1"),
    );
    let out_dir = dir.path().join("blowup");
    let out = neseek(&["run", scenario.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 3, "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("diverged"), "{}", stderr(&out));

    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["diverged"], serde_json::Value::Bool(true));
    assert!(out_dir.join("trace.csv").exists());
}

#[test]
fn verify_schedule_judges_bundled_scenarios() {
    let ok = neseek(&["verify-schedule", bundled("hvac_certified.toml").to_str().unwrap()]);
    assert_eq!(code(&ok), 0, "stderr: {}", stderr(&ok));
    assert!(
        stdout(&ok).contains("schedule holds the budget: true"),
        "{}",
        stdout(&ok)
    );

    let bad = neseek(&["verify-schedule", bundled("hvac_violated.toml").to_str().unwrap()]);
    assert_eq!(code(&bad), 0, "a failed check is a finding, not an error");
    assert!(
        stdout(&bad).contains("schedule holds the budget: false"),
        "{}",
        stdout(&bad)
    );
}

#[test]
fn verify_schedule_without_budget_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let scenario = write_scenario(&dir, "tiny.toml", TINY_HVAC);
    let out = neseek(&["verify-schedule", scenario.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("schedule.budget"), "{}", stderr(&out));
}

#[test]
fn oracle_prints_equilibrium_and_constants() {
    let dir = TempDir::new().unwrap();
    let scenario = write_scenario(
        &dir,
        "production.toml",
        r#"
[game]
name = "cournot"
a = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0]
b = [10.0, 14.0, 18.0, 22.0, 26.0, 30.0]
c = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0]
d = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0]
f0 = 720.0
f1 = 1.0

[graph]
nodes = 6
edges = [[1, 2], [2, 3], [3, 4], [4, 5], [5, 6], [6, 1]]

[gains]
kappa = 1.0

[sim]
t_end = 1.0
step = 0.001
decimate = 100
"#,
    );
    let out = neseek(&["oracle", scenario.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("game: cournot (6 players)"), "{text}");
    // First player's equilibrium production is 110 units.
    assert!(text.contains("110"), "{text}");
    assert!(text.contains("residual"), "{text}");
    assert!(text.contains("epsilon = "), "{text}");
    assert!(text.contains("gain bound kappa*"), "{text}");
}

#[test]
fn kappa_sweep_tabulates_each_member() {
    let dir = TempDir::new().unwrap();
    let scenario = write_scenario(&dir, "tiny.toml", TINY_HVAC);
    let root = dir.path().join("sweep");
    let out = neseek(&[
        "sweep",
        scenario.to_str().unwrap(),
        "--axis",
        "kappa",
        "2.0",
        "8.0",
        "--out",
        root.to_str().unwrap(),
        "--quiet",
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));

    let table = fs::read_to_string(root.join("sweep.csv")).expect("sweep table written");
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 3, "header plus one row per value: {table}");
    assert!(lines[0].starts_with("axis,value,final_relative_error"));
    assert!(lines[1].starts_with("kappa,2.0,"));
    assert!(lines[2].starts_with("kappa,8.0,"));

    for member in ["kappa_2", "kappa_8"] {
        for artifact in ["trace.csv", "summary.json", "report.json"] {
            assert!(
                root.join(member).join(artifact).exists(),
                "missing {member}/{artifact}"
            );
        }
    }

    // A stiffer consensus gain must not slow convergence on this scenario.
    let rel = |line: &str| -> f64 { line.split(',').nth(2).unwrap().parse().unwrap() };
    assert!(rel(lines[2]) <= rel(lines[1]));
}
