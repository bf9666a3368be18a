//! Black-box tests of the installed binary: exit codes, artifact layout,
//! and the verify subcommand's fault handling.

use std::process::{Command, Output};

use tempfile::tempdir;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_funnel-mpc"))
        .args(args)
        .output()
        .expect("binary is runnable")
}

fn exit_code(output: &Output) -> i32 {
    output.status.code().expect("no signal")
}

fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

#[test]
fn trivial_run_writes_a_single_row_trace() {
    let dir = tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let output = run(&["fmpc", "--preset", "mass-on-car", "--out", out, "--t-end", "0"]);
    assert_eq!(exit_code(&output), 0, "stderr: {}", stderr(&output));

    let text = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2, "header plus exactly one sample");
    assert!(lines[0].starts_with("t,y,y_ref,e_1,e_2,psi_1,psi_2,"));

    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["steps"], 0);
    assert_eq!(summary["feasibility"]["feasible"], true);
}

#[test]
fn missing_config_file_exits_3() {
    let dir = tempdir().unwrap();
    let missing = dir.path().join("missing.json");
    let output = run(&["fmpc", "--config", missing.to_str().unwrap()]);
    assert_eq!(exit_code(&output), 3);
    assert!(stderr(&output).contains("cannot read"));
}

#[test]
fn unknown_scenario_keys_exit_3() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("scenario.json");
    std::fs::write(&path, r#"{"t_end": 1.0, "unknown_knob": true}"#).unwrap();
    let output = run(&["fmpc", "--config", path.to_str().unwrap()]);
    assert_eq!(exit_code(&output), 3);
    assert!(stderr(&output).contains("unknown field"));
}

#[test]
fn usage_errors_exit_3_and_help_exits_0() {
    assert_eq!(exit_code(&run(&["bogus-subcommand"])), 3);
    assert_eq!(
        exit_code(&run(&[
            "fmpc", "--config", "a.json", "--preset", "mass-on-car"
        ])),
        3
    );
    assert_eq!(exit_code(&run(&["fmpc"])), 3, "a scenario source is required");
    assert_eq!(exit_code(&run(&["--help"])), 0);
}

/// A short predictive run verifies clean; corrupting a value flips verify to
/// exit 2, while making the file unparseable exits 3.
#[test]
fn verify_distinguishes_violations_from_parse_errors() {
    let dir = tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let output = run(&[
        "fmpc", "--preset", "mass-on-car", "--out", out, "--t-end", "0.2",
    ]);
    assert_eq!(exit_code(&output), 0, "stderr: {}", stderr(&output));

    let verify = |extra: &str| {
        run(&[
            "verify", "--preset", "mass-on-car", "--out", out, "--t-end", extra,
        ])
    };
    assert_eq!(exit_code(&verify("0.2")), 0);

    // Push one e_1 value outside the funnel (still a valid number).
    let path = dir.path().join("trace.csv");
    let clean = std::fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = clean.lines().map(String::from).collect();
    let mut fields: Vec<String> = lines[3].split(',').map(String::from).collect();
    fields[3] = "9.0000000000000000e0".into();
    lines[3] = fields.join(",");
    std::fs::write(&path, lines.join("\n")).unwrap();
    let output = verify("0.2");
    assert_eq!(exit_code(&output), 2, "stderr: {}", stderr(&output));

    // Structural damage is a parse error, not a violation.
    std::fs::write(&path, "t,broken\n0,1\n").unwrap();
    assert_eq!(exit_code(&verify("0.2")), 3);
}

/// Baseline traces are exempt from the tube and input-bound claims but are
/// still checked for funnel containment.
#[test]
fn baseline_trace_verifies_under_relaxed_claims() {
    let dir = tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let output = run(&[
        "funnel-controller", "--preset", "mass-on-car", "--out", out, "--t-end", "1",
    ]);
    assert_eq!(exit_code(&output), 0, "stderr: {}", stderr(&output));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["mode"], "funnel-controller");
    assert!(summary.get("solver").is_none(), "no solver ran");

    let output = run(&[
        "verify", "--preset", "mass-on-car", "--out", out, "--t-end", "1",
    ]);
    assert_eq!(exit_code(&output), 0, "stderr: {}", stderr(&output));
}
