//! Subcommand implementations: each runs a controller (or checks a finished
//! run), writes `trace.csv` / `summary.json` artifacts into the output
//! directory, and reports feasibility through [`Failure`].

use std::path::Path;

use serde_json::{json, Value};

use funnel_mpc::chain;
use funnel_mpc::fmpc::{
    self, FeasibilityReport, FmpcError, RunSummary, StepDiagnostics, ViolationKind,
};
use funnel_mpc::funnel_controller::FunnelController;
use funnel_mpc::ode::Trajectory;

use crate::config::Scenario;
use crate::trace::{self, TraceData};

/// A failed run, split by exit code: configuration and I/O problems exit
/// with 3, feasibility violations with 2.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Feasibility(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => 3,
            Failure::Feasibility(_) => 2,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Feasibility(m) => m,
        }
    }
}

fn ensure_out_dir(out: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(out)
        .map_err(|e| Failure::Config(format!("cannot create {}: {e}", out.display())))
}

fn write_json(path: &Path, value: &Value) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Failure::Config(format!("cannot serialize summary: {e}")))?;
    text.push('\n');
    std::fs::write(path, text)
        .map_err(|e| Failure::Config(format!("cannot write {}: {e}", path.display())))
}

fn kind_name(kind: ViolationKind) -> &'static str {
    match kind {
        ViolationKind::FunnelBoundary => "funnel-boundary",
        ViolationKind::TerminalTube => "terminal-tube",
    }
}

fn feasibility_json(report: &FeasibilityReport<f64>) -> Value {
    json!({
        "feasible": report.is_feasible(),
        "samples_checked": report.samples_checked,
        "tube_times_checked": report.tube_times_checked,
        "min_funnel_margin": report.min_funnel_margin,
        "min_tube_margin": report.min_tube_margin,
        "violations": report
            .violations
            .iter()
            .map(|v| {
                json!({
                    "time": v.time,
                    "level": v.level,
                    "margin": v.margin,
                    "kind": kind_name(v.kind),
                })
            })
            .collect::<Vec<_>>(),
    })
}

/// The a-priori output-derivative bound evaluated with the tightening
/// factors actually observed in the run (the per-level ratio maxima,
/// clamped into (0, 1)), plus whether the recorded chain magnitudes
/// respected the bound.
fn derivative_bound_json(scenario: &Scenario, summary: &RunSummary<f64>) -> Value {
    let r = scenario.funnel.relative_degree();
    let eps_observed: Vec<f64> = (0..r.saturating_sub(1))
        .map(|i| {
            summary
                .max_ratios
                .get(i)
                .copied()
                .unwrap_or(0.0)
                .clamp(1e-9, 1.0 - 1e-9)
        })
        .collect();
    let bound = chain::derivative_bound(
        &scenario.funnel,
        scenario.reference.as_ref(),
        scenario.fmpc.t_start,
        &eps_observed,
    );
    let satisfied = summary
        .max_chain_levels
        .iter()
        .all(|&level| level <= bound);
    json!({
        "bound": bound,
        "eps_observed": eps_observed,
        "satisfied": satisfied,
    })
}

fn solver_json(steps: &[StepDiagnostics<f64>]) -> Value {
    let iterations: u64 = steps.iter().map(|s| s.stats.iterations).sum();
    let cost_evaluations: u64 = steps.iter().map(|s| s.stats.cost_evaluations).sum();
    let gradient_evaluations: u64 = steps.iter().map(|s| s.stats.gradient_evaluations).sum();
    let max_restart = steps.iter().map(|s| s.stats.restart_index).max().unwrap_or(0);
    json!({
        "problems_solved": steps.len(),
        "total_iterations": iterations,
        "total_cost_evaluations": cost_evaluations,
        "total_gradient_evaluations": gradient_evaluations,
        "max_restart_index": max_restart,
    })
}

fn run_summary_json(
    mode: &str,
    scenario: &Scenario,
    summary: &RunSummary<f64>,
    report: &FeasibilityReport<f64>,
    steps: Option<&[StepDiagnostics<f64>]>,
) -> Value {
    let mut value = json!({
        "mode": mode,
        "t_start": scenario.fmpc.t_start,
        "t_end": scenario.fmpc.t_end,
        "steps": summary.steps,
        "duration": summary.duration,
        "max_ratios": summary.max_ratios,
        "max_chain_levels": summary.max_chain_levels,
        "max_abs_input": summary.max_abs_input,
        "input_bound": scenario.fmpc.ocp.input_bound,
        "input_energy": summary.input_energy,
        "stage_cost_integral": summary.stage_cost_integral,
        "min_funnel_margin": summary.min_funnel_margin,
        "min_tube_margin": summary.min_tube_margin,
        "derivative_bound": derivative_bound_json(scenario, summary),
        "feasibility": feasibility_json(report),
    });
    if let Some(steps) = steps {
        value["solver"] = solver_json(steps);
    }
    value
}

fn feasibility_failure(report: &FeasibilityReport<f64>) -> Option<Failure> {
    let first = report.violations.first()?;
    Some(Failure::Feasibility(format!(
        "feasibility violated: {} at t = {} (level {}, margin {:e}; {} violation(s) total)",
        kind_name(first.kind),
        first.time,
        first.level + 1,
        first.margin,
        report.violations.len(),
    )))
}

struct FinishedRun {
    trajectory: Trajectory<f64>,
    summary: RunSummary<f64>,
    report: FeasibilityReport<f64>,
    steps: Option<Vec<StepDiagnostics<f64>>>,
}

fn predictive_run(scenario: &Scenario) -> Result<FinishedRun, Failure> {
    let result = fmpc::run(
        &scenario.plant,
        &scenario.funnel,
        scenario.reference.as_ref(),
        &scenario.fmpc,
    )
    .map_err(|e| match e {
        FmpcError::InvalidConfig(_) => Failure::Config(format!("invalid run: {e}")),
        other => Failure::Feasibility(format!("predictive run failed: {other}")),
    })?;
    let report = fmpc::check_recursive_feasibility(
        &result.trajectory,
        &scenario.plant,
        &scenario.funnel,
        scenario.reference.as_ref(),
        &scenario.fmpc.ocp.feasibility_eps,
        scenario.fmpc.ocp.delta,
        scenario.fmpc.ocp.solver.terminal_tol,
    );
    Ok(FinishedRun {
        trajectory: result.trajectory,
        summary: result.summary,
        report,
        steps: Some(result.steps),
    })
}

fn baseline_run(scenario: &Scenario) -> Result<FinishedRun, Failure> {
    let controller = FunnelController::new(
        &scenario.plant,
        &scenario.funnel,
        scenario.reference.as_ref(),
        None,
    )
    .map_err(|e| Failure::Config(format!("invalid baseline controller: {e}")))?;
    let trajectory = controller
        .run_closed_loop(
            &scenario.fmpc.initial_state,
            (scenario.fmpc.t_start, scenario.fmpc.t_end),
            scenario.sample_dt,
            &scenario.fmpc.ocp.integrator,
            &scenario.fmpc.ocp.cost,
        )
        .map_err(|e| Failure::Feasibility(format!("baseline run failed: {e}")))?;
    let summary = fmpc::summarize(&trajectory);
    // The baseline law does not enforce the terminal tube; unit factors make
    // the grid check equivalent to (non-strict) funnel containment, so only
    // genuine funnel violations can fail the run.
    let ones = vec![1.0; scenario.funnel.relative_degree()];
    let report = fmpc::check_recursive_feasibility(
        &trajectory,
        &scenario.plant,
        &scenario.funnel,
        scenario.reference.as_ref(),
        &ones,
        scenario.fmpc.ocp.delta,
        scenario.fmpc.ocp.solver.terminal_tol,
    );
    Ok(FinishedRun {
        trajectory,
        summary,
        report,
        steps: None,
    })
}

fn write_run(
    out: &Path,
    scenario: &Scenario,
    run: &FinishedRun,
    mode: &str,
    trace_name: &str,
    summary: Option<&str>,
) -> Result<Value, Failure> {
    trace::write_csv(
        &out.join(trace_name),
        &run.trajectory,
        &scenario.funnel,
        scenario.reference.as_ref(),
    )
    .map_err(Failure::Config)?;
    let value = run_summary_json(mode, scenario, &run.summary, &run.report, run.steps.as_deref());
    if let Some(name) = summary {
        write_json(&out.join(name), &value)?;
    }
    Ok(value)
}

/// `fmpc`: the receding-horizon controller over the scenario span.
pub fn run_fmpc(scenario: &Scenario, out: &Path) -> Result<(), Failure> {
    ensure_out_dir(out)?;
    let run = predictive_run(scenario)?;
    write_run(out, scenario, &run, "fmpc", "trace.csv", Some("summary.json"))?;
    match feasibility_failure(&run.report) {
        Some(failure) => Err(failure),
        None => Ok(()),
    }
}

/// `funnel-controller`: the closed-form baseline law over the same span.
pub fn run_funnel_controller(scenario: &Scenario, out: &Path) -> Result<(), Failure> {
    ensure_out_dir(out)?;
    let run = baseline_run(scenario)?;
    write_run(
        out,
        scenario,
        &run,
        "funnel-controller",
        "trace.csv",
        Some("summary.json"),
    )?;
    match feasibility_failure(&run.report) {
        Some(failure) => Err(failure),
        None => Ok(()),
    }
}

/// `compare`: both controllers on the same scenario, with a combined
/// summary contrasting their input energies.
pub fn run_compare(scenario: &Scenario, out: &Path) -> Result<(), Failure> {
    ensure_out_dir(out)?;
    let predictive = predictive_run(scenario)?;
    let baseline = baseline_run(scenario)?;
    let fmpc_value = write_run(out, scenario, &predictive, "fmpc", "fmpc_trace.csv", None)?;
    let baseline_value = write_run(
        out,
        scenario,
        &baseline,
        "funnel-controller",
        "funnel_controller_trace.csv",
        None,
    )?;
    let summary = json!({
        "fmpc": fmpc_value,
        "funnel_controller": baseline_value,
        "comparison": {
            "fmpc_input_energy": predictive.summary.input_energy,
            "funnel_controller_input_energy": baseline.summary.input_energy,
            "fmpc_uses_less_input_energy":
                predictive.summary.input_energy < baseline.summary.input_energy,
            "fmpc_max_abs_input": predictive.summary.max_abs_input,
            "funnel_controller_max_abs_input": baseline.summary.max_abs_input,
        },
    });
    write_json(&out.join("summary.json"), &summary)?;
    match feasibility_failure(&predictive.report).or_else(|| feasibility_failure(&baseline.report))
    {
        Some(failure) => Err(failure),
        None => Ok(()),
    }
}

/// `verify`: re-checks a written trace against the scenario's funnel and
/// reference, independently of the code that produced it. Baseline traces
/// (detected from the `mode` field of an adjacent `summary.json`) are held
/// to strict funnel containment and column consistency only; predictive
/// traces additionally to the shrunk tube on the `delta` grid and the input
/// bound (the baseline law enforces neither).
pub fn run_verify(scenario: &Scenario, out: &Path) -> Result<(), Failure> {
    let path = out.join("trace.csv");
    let data = trace::read_csv(&path).map_err(Failure::Config)?;
    let predictive = !summary_says_baseline(out);
    verify_trace(scenario, &data, predictive).map_err(Failure::Feasibility)
}

fn summary_says_baseline(out: &Path) -> bool {
    let Ok(text) = std::fs::read_to_string(out.join("summary.json")) else {
        return false;
    };
    let Ok(value) = serde_json::from_str::<Value>(&text) else {
        return false;
    };
    value.get("mode").and_then(Value::as_str) == Some("funnel-controller")
}

/// The checks behind `verify`; returns the first failed check.
pub fn verify_trace(
    scenario: &Scenario,
    data: &TraceData,
    predictive: bool,
) -> Result<(), String> {
    let funnel = &scenario.funnel;
    let r = funnel.relative_degree();
    if data.levels != r {
        return Err(format!(
            "trace has {} chain levels but the scenario needs {r}",
            data.levels
        ));
    }
    if data.inputs != 1 {
        return Err(format!("trace has {} inputs, expected 1", data.inputs));
    }
    if data.rows.is_empty() {
        return Err("trace has no rows".into());
    }

    let eps = &scenario.fmpc.ocp.feasibility_eps;
    let delta = scenario.fmpc.ocp.delta;
    let bound = scenario.fmpc.ocp.input_bound;
    let tube_tol = scenario.fmpc.ocp.solver.terminal_tol;
    let t0 = data.rows[0].t;
    let mut tube_times = 0usize;

    for row in &data.rows {
        let t = row.t;
        // Funnel radii stated in the file must match the scenario's funnel.
        let radii = funnel.radii(t);
        for i in 0..r {
            let psi = radii[i];
            if !((row.psi[i] - psi).abs() <= 1e-9 * psi.abs().max(1.0)) {
                return Err(format!(
                    "t = {t}: psi_{} = {} does not match the scenario funnel ({psi})",
                    i + 1,
                    row.psi[i]
                ));
            }
        }
        // The reference column must match the scenario's reference signal.
        let expected_ref = scenario.reference.derivative_vec(t, 0)[0];
        if !((row.y_ref - expected_ref).abs() <= 1e-9 * expected_ref.abs().max(1.0)) {
            return Err(format!(
                "t = {t}: y_ref = {} does not match the scenario reference ({expected_ref})",
                row.y_ref
            ));
        }
        // The first error must be the tracking error of the y column.
        let e1 = row.y - row.y_ref;
        if !((row.e[0] - e1).abs() <= 1e-9 * e1.abs().max(1.0)) {
            return Err(format!(
                "t = {t}: e_1 = {} is not y - y_ref = {e1}",
                row.e[0]
            ));
        }
        for i in 0..r {
            let (e, psi, ratio) = (row.e[i], row.psi[i], row.ratio[i]);
            if !e.is_finite() {
                return Err(format!("t = {t}: e_{} is not finite", i + 1));
            }
            // Containment: strictly inside the funnel at every sample.
            if !(e.abs() < psi) {
                return Err(format!(
                    "t = {t}: |e_{}| = {} reaches psi_{} = {psi}",
                    i + 1,
                    e.abs(),
                    i + 1
                ));
            }
            // Stated ratios must agree with |e| / psi.
            let expected = e.abs() / psi;
            if !((ratio - expected).abs() <= 1e-9) {
                return Err(format!(
                    "t = {t}: ratio_{} = {ratio} but |e|/psi = {expected}",
                    i + 1
                ));
            }
        }
        // Input bound (predictive traces only: the baseline law is
        // deliberately unsaturated).
        if predictive {
            for &u in &row.u {
                if !(u.abs() <= bound) {
                    return Err(format!("t = {t}: |u| = {} exceeds the bound {bound}", u.abs()));
                }
            }
        }
        // Tube containment on the delta grid (predictive traces only).
        let steps = (t - t0) / delta;
        if predictive && (steps - (steps + 0.5).floor()).abs() <= 1e-6 {
            tube_times += 1;
            for i in 0..r {
                let margin = eps[i] * radii[i] - row.e[i].abs();
                if margin < -tube_tol {
                    return Err(format!(
                        "t = {t}: tube margin for level {} is {margin:e}",
                        i + 1
                    ));
                }
            }
        }
    }
    if predictive && tube_times == 0 {
        return Err("no trace samples fall on the tube grid".into());
    }
    Ok(())
}
