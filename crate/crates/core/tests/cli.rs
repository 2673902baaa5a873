use std::path::{Path, PathBuf};
use std::process::{Command as Proc, Output};

use pmed_core::cli::{parse_config, Command, ConfigError, InitialData, PotentialConfig};

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn pmed(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Proc::new(env!("CARGO_BIN_EXE_pmed"));
    cmd.args(args);
    if let Some(t) = threads {
        cmd.env("PMED_THREADS", t);
    }
    cmd.output().expect("binary runs")
}

fn run_config(command: &str, config: &Path, out: &Path, threads: Option<&str>) -> Output {
    pmed(
        &[command, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()],
        threads,
    )
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("config.json");
    std::fs::write(&p, text).unwrap();
    p
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL_SIMULATE: &str = r#"{
  "grid": { "dim": 1, "L": 3.0, "h": 0.1 },
  "physics": { "m": 2.0, "potential": { "kind": "quadratic", "a": 1.0 } },
  "solver": { "t_end": 0.5, "snapshot_every": 0.25 },
  "initial": { "kind": "bump", "center": [0.2], "radius": 0.8, "height": 0.5 }
}"#;

#[test]
fn every_sample_config_runs_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let cases = [
        ("simulate", "simulate.json", vec!["snapshots.csv", "snapshots.ndjson", "mass.csv"]),
        ("equilibrium", "equilibrium.json", vec!["equilibrium.csv"]),
        ("verify-barriers", "verify_barriers.json", vec!["residuals.csv"]),
        ("compare", "compare.json", vec!["comparison.csv"]),
        ("convergence", "convergence.json", vec!["hausdorff.csv", "shell_check.csv", "mass.csv"]),
    ];
    for (cmd, file, outputs) in cases {
        let out = tmp.path().join(cmd);
        let o = run_config(cmd, &configs_dir().join(file), &out, None);
        assert_eq!(o.status.code(), Some(0), "{cmd}: {}", stderr(&o));
        for name in outputs {
            assert!(out.join(name).is_file(), "{cmd} did not write {name}");
        }
    }
}

#[test]
fn snapshot_csv_has_one_row_per_cell_and_time() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL_SIMULATE);
    let o = run_config("simulate", &cfg, &tmp.path().join("o"), None);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = std::fs::read_to_string(tmp.path().join("o/snapshots.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,i,x,rho,u"));
    assert_eq!(lines.count(), 3 * 60);
    let mass = std::fs::read_to_string(tmp.path().join("o/mass.csv")).unwrap();
    assert_eq!(mass.lines().count(), 4);
}

#[test]
fn outputs_are_byte_identical_across_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs_dir().join("verify_barriers.json");
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert_eq!(run_config("verify-barriers", &cfg, &a, Some("1")).status.code(), Some(0));
    assert_eq!(run_config("verify-barriers", &cfg, &b, Some("4")).status.code(), Some(0));
    assert_eq!(
        std::fs::read(a.join("residuals.csv")).unwrap(),
        std::fs::read(b.join("residuals.csv")).unwrap()
    );

    let sim = write_config(tmp.path(), SMALL_SIMULATE);
    run_config("simulate", &sim, &a, Some("1"));
    run_config("simulate", &sim, &b, Some("3"));
    assert_eq!(
        std::fs::read(a.join("snapshots.csv")).unwrap(),
        std::fs::read(b.join("snapshots.csv")).unwrap()
    );
}

#[test]
fn invalid_config_reports_every_problem_and_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{
  "grid": { "dim": 3, "L": 3.0, "h": 0.1, "extra": 1 },
  "physics": { "m": 0.5, "potential": { "kind": "quadratic", "a": 1.0 } },
  "solver": { "t_end": -1.0 },
  "initial": { "kind": "bump", "radius": 0.8, "height": 0.5 }
}"#,
    );
    let out = tmp.path().join("o");
    let o = run_config("simulate", &cfg, &out, None);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("pmed: error[config]: "), "{err}");
    for needle in ["grid.dim", "grid.extra", "physics.m", "solver.t_end"] {
        assert!(err.contains(needle), "missing {needle} in {err}");
    }
    assert!(!out.exists());
}

#[test]
fn malformed_json_reports_line_and_column() {
    match parse_config("{\n  \"grid\": {\n    \"dim\": 1,,\n  }\n}", Command::Simulate) {
        Err(ConfigError::Parse { line, column, .. }) => {
            assert_eq!(line, 3);
            assert!(column > 0);
        }
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn runtime_failure_exits_two_without_partial_output() {
    let tmp = tempfile::tempdir().unwrap();
    // The bump spreads into the wall long before t_end.
    let cfg = write_config(
        tmp.path(),
        r#"{
  "grid": { "dim": 1, "L": 1.0, "h": 0.1 },
  "physics": { "m": 2.0, "potential": { "kind": "polynomial", "coefficients": [0.0] } },
  "solver": { "t_end": 5.0, "snapshot_every": 0.5 },
  "initial": { "kind": "bump", "radius": 0.5, "height": 1.0 }
}"#,
    );
    let out = tmp.path().join("o");
    let o = run_config("simulate", &cfg, &out, None);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.starts_with("pmed: error[domain-overflow]: at t = "), "{err}");
    assert!(!out.join("snapshots.csv").exists());
    assert!(!out.join("mass.csv").exists());
}

#[test]
fn failed_check_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    // A spherical wave is a supersolution, not a subsolution.
    let cfg = write_config(
        tmp.path(),
        r#"{
  "physics": { "m": 2.0, "potential": { "kind": "quadratic", "a": 1.0 } },
  "barriers": [ { "kind": "spherical_wave", "A": 1.0, "omega": 2.0, "B": 0.6, "R": 1.0, "check": "sub" } ]
}"#,
    );
    let out = tmp.path().join("o");
    let o = run_config("verify-barriers", &cfg, &out, None);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.join("residuals.csv")).unwrap();
    assert!(csv.lines().nth(1).unwrap().ends_with(",false"));
}

#[test]
fn missing_config_file_is_an_io_error() {
    let o = pmed(&["simulate", "--config", "/nonexistent/pmed.json"], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("pmed: error[io]: "));
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    assert_eq!(pmed(&["frobnicate"], None).status.code(), Some(2));
}

#[test]
fn config_defaults_are_filled_in() {
    let cfg = parse_config(SMALL_SIMULATE, Command::Simulate).unwrap();
    let s = cfg.solver.unwrap();
    assert_eq!(s.cfl_safety, 0.4);
    assert_eq!(s.support_threshold, None);
    assert_eq!(cfg.potential, PotentialConfig::Quadratic { a: 1.0 });
    assert_eq!(
        cfg.initial,
        Some(InitialData::Bump {
            center: vec![0.2],
            radius: 0.8,
            height: 0.5
        })
    );
    assert_eq!(cfg.output.directory, PathBuf::from("."));
}

#[test]
fn command_field_must_match_the_invocation() {
    let text = SMALL_SIMULATE.replacen('{', "{ \"command\": \"compare\",", 1);
    let err = parse_config(&text, Command::Simulate).unwrap_err().to_string();
    assert!(err.contains("command"), "{err}");
}

#[test]
fn compare_requires_its_section() {
    let err = parse_config(SMALL_SIMULATE, Command::Compare).unwrap_err().to_string();
    assert!(err.contains("compare: missing required section"), "{err}");
}

#[test]
fn convergence_needs_a_convex_potential() {
    let text = SMALL_SIMULATE.replace(
        r#"{ "kind": "quadratic", "a": 1.0 }"#,
        r#"{ "kind": "polynomial", "coefficients": [0.0, -1.0] }"#,
    );
    let err = parse_config(&text, Command::Convergence).unwrap_err().to_string();
    assert!(err.contains("strictly convex"), "{err}");
}

#[test]
fn grid_with_fractional_cell_count_is_rejected() {
    let text = SMALL_SIMULATE.replace("\"h\": 0.1", "\"h\": 0.07");
    let err = parse_config(&text, Command::Simulate).unwrap_err().to_string();
    assert!(err.starts_with("grid"), "{err}");
}
