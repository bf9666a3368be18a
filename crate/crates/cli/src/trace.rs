//! Trace CSV files: one row per sample holding the output, the reference,
//! the chained errors, the funnel radii, the error/radius ratios, the input
//! and the barrier stage cost. Values are written with 17 significant digits
//! so they round-trip through text exactly.

use std::fmt::Write as _;
use std::path::Path;

use funnel_mpc::chain;
use funnel_mpc::funnel::FunnelTrajectory;
use funnel_mpc::ode::Trajectory;
use funnel_mpc::reference::ReferenceSignal;

/// One parsed trace row; vector lengths follow the file header.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    pub y: f64,
    pub y_ref: f64,
    /// Chained error norms-with-sign: `e_i` is scalar for single-output runs.
    pub e: Vec<f64>,
    pub psi: Vec<f64>,
    /// Norm ratios `|e_i| / psi_i` (not squared).
    pub ratio: Vec<f64>,
    pub u: Vec<f64>,
    pub stage_cost: f64,
}

/// A parsed trace file.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceData {
    /// Chain depth `r` (number of `e_*` columns).
    pub levels: usize,
    /// Input dimension `m` (number of `u_*` columns).
    pub inputs: usize,
    pub rows: Vec<TraceRow>,
}

fn push_value(line: &mut String, value: f64) {
    // `{:.16e}` prints 17 significant digits; non-finite values print as
    // `inf` / `-inf` / `NaN`, all of which `f64::from_str` accepts back.
    let _ = write!(line, ",{value:.16e}");
}

/// Renders a trajectory as CSV text. Errors and ratios are recomputed from
/// the recorded output chain rather than copied from annotations, so the
/// file is faithful to the states even for unannotated runs. Only
/// single-output traces are supported (scalar `y` column).
pub fn render_csv(
    trajectory: &Trajectory<f64>,
    funnel: &FunnelTrajectory<f64>,
    reference: &dyn ReferenceSignal<f64>,
) -> Result<String, String> {
    let r = funnel.relative_degree();
    let m = reference.dim();
    if m != 1 {
        return Err("trace files support single-output runs only".into());
    }

    let mut text = String::from("t,y,y_ref");
    for i in 1..=r {
        let _ = write!(text, ",e_{i}");
    }
    for i in 1..=r {
        let _ = write!(text, ",psi_{i}");
    }
    for i in 1..=r {
        let _ = write!(text, ",ratio_{i}");
    }
    text.push_str(",u_1,stage_cost\n");

    for point in &trajectory.points {
        if point.chain.len() != r || point.input.len() != 1 {
            return Err("trace rows must match the funnel depth and input dimension".into());
        }
        let t = point.time;
        let state = chain::chain(t, &point.chain, funnel, reference);
        let radii = funnel.radii(t);

        let mut line = format!("{t:.16e}");
        push_value(&mut line, point.chain[0]);
        push_value(&mut line, reference.derivative_vec(t, 0)[0]);
        for i in 0..r {
            // A saturated chain stops: deeper errors are undefined.
            push_value(
                &mut line,
                state.errors.get(i).map_or(f64::NAN, |e| e[0]),
            );
        }
        for i in 0..r {
            push_value(&mut line, radii[i]);
        }
        for i in 0..r {
            // |e_i| / psi_i computed directly (not sqrt of the squared
            // ratio) so the column reproduces `|e_i| / psi_i` bit for bit.
            push_value(
                &mut line,
                state.errors.get(i).map_or(f64::NAN, |e| e[0].abs() / radii[i]),
            );
        }
        push_value(&mut line, point.input[0]);
        push_value(&mut line, point.stage_cost.unwrap_or(f64::NAN));
        line.push('\n');
        text.push_str(&line);
    }
    Ok(text)
}

/// Writes [`render_csv`] output to `path`.
pub fn write_csv(
    path: &Path,
    trajectory: &Trajectory<f64>,
    funnel: &FunnelTrajectory<f64>,
    reference: &dyn ReferenceSignal<f64>,
) -> Result<(), String> {
    let text = render_csv(trajectory, funnel, reference)?;
    std::fs::write(path, text).map_err(|e| format!("cannot write {}: {e}", path.display()))
}

fn parse_field(field: &str, line: usize) -> Result<f64, String> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| format!("line {line}: `{field}` is not a number"))
}

/// Parses a trace file produced by [`write_csv`].
pub fn read_csv(path: &Path) -> Result<TraceData, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or("empty trace file")?;
    let columns: Vec<&str> = header.split(',').map(str::trim).collect();

    let levels = columns
        .iter()
        .filter(|c| c.starts_with("e_"))
        .count();
    let inputs = columns.iter().filter(|c| c.starts_with("u_")).count();
    let mut expected = vec!["t".to_string(), "y".into(), "y_ref".into()];
    expected.extend((1..=levels).map(|i| format!("e_{i}")));
    expected.extend((1..=levels).map(|i| format!("psi_{i}")));
    expected.extend((1..=levels).map(|i| format!("ratio_{i}")));
    expected.extend((1..=inputs).map(|i| format!("u_{i}")));
    expected.push("stage_cost".into());
    if levels == 0 || inputs == 0 || columns != expected {
        return Err(format!("unrecognized trace header `{header}`"));
    }

    let mut rows = Vec::new();
    for (index, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let n = index + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != expected.len() {
            return Err(format!(
                "line {n}: expected {} fields, found {}",
                expected.len(),
                fields.len()
            ));
        }
        let mut values = fields
            .iter()
            .map(|f| parse_field(f, n))
            .collect::<Result<Vec<f64>, String>>()?
            .into_iter();
        let mut take = |count: usize| -> Vec<f64> { values.by_ref().take(count).collect() };
        let head = take(3);
        let row = TraceRow {
            t: head[0],
            y: head[1],
            y_ref: head[2],
            e: take(levels),
            psi: take(levels),
            ratio: take(levels),
            u: take(inputs),
            stage_cost: take(1)[0],
        };
        rows.push(row);
    }
    Ok(TraceData {
        levels,
        inputs,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use funnel_mpc::funnel::FunnelParams;
    use funnel_mpc::ode::{IntegrationStats, TrajectoryPoint};
    use funnel_mpc::reference::CosineReference;

    fn benchmark_funnel() -> FunnelTrajectory<f64> {
        FunnelTrajectory::solve(
            FunnelParams::new(
                vec![1.5, 1.35],
                vec![0.15, 0.675],
                vec![1.1],
                vec![4.1, 2.0],
            )
            .unwrap(),
        )
    }

    fn sample_trajectory() -> Trajectory<f64> {
        let points = [0.0, 0.25, 0.5]
            .iter()
            .map(|&t: &f64| TrajectoryPoint {
                time: t,
                state: vec![0.0; 4],
                chain: vec![0.1 * t.cos(), -0.2 * t.sin()],
                input: vec![3.0 * t],
                ratios: vec![],
                stage_cost: Some(t),
            })
            .collect();
        Trajectory {
            points,
            stats: IntegrationStats::default(),
        }
    }

    #[test]
    fn csv_round_trips_exactly() {
        let funnel = benchmark_funnel();
        let reference = CosineReference::unit();
        let trajectory = sample_trajectory();
        let dir = std::env::temp_dir().join("funnel-mpc-trace-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("trace.csv");
        write_csv(&path, &trajectory, &funnel, &reference).unwrap();

        let data = read_csv(&path).unwrap();
        assert_eq!(data.levels, 2);
        assert_eq!(data.inputs, 1);
        assert_eq!(data.rows.len(), 3);
        for (row, point) in data.rows.iter().zip(&trajectory.points) {
            assert_eq!(row.t, point.time);
            assert_eq!(row.y, point.chain[0]);
            assert_eq!(row.u[0], point.input[0]);
            assert_eq!(row.stage_cost, point.stage_cost.unwrap());
            let radii = funnel.radii(row.t);
            assert_eq!(row.psi, radii);
            // e_1 = y - y_ref and the ratio columns match |e| / psi.
            assert_eq!(row.e[0], row.y - row.y_ref);
            for i in 0..2 {
                assert_eq!(row.ratio[i], (row.e[i].abs() / row.psi[i]));
            }
        }
    }

    #[test]
    fn infinities_round_trip() {
        let funnel = benchmark_funnel();
        let reference = CosineReference::unit();
        let mut trajectory = sample_trajectory();
        trajectory.points[1].chain[0] = 10.0; // far outside the funnel
        trajectory.points[1].stage_cost = Some(f64::INFINITY);
        let text = render_csv(&trajectory, &funnel, &reference).unwrap();
        assert!(text.contains("inf"));
        let dir = std::env::temp_dir().join("funnel-mpc-trace-test-inf");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("trace.csv");
        std::fs::write(&path, text).unwrap();
        let data = read_csv(&path).unwrap();
        assert_eq!(data.rows[1].stage_cost, f64::INFINITY);
        // Level 2 of a saturated chain is undefined and reads back as NaN.
        assert!(data.rows[1].e[1].is_nan());
    }

    #[test]
    fn malformed_files_are_rejected() {
        let dir = std::env::temp_dir().join("funnel-mpc-trace-test-bad");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.csv");
        std::fs::write(&path, "t,y\n1,2\n").unwrap();
        assert!(read_csv(&path).unwrap_err().contains("header"));
        std::fs::write(
            &path,
            "t,y,y_ref,e_1,psi_1,ratio_1,u_1,stage_cost\n0,0,0,0\n",
        )
        .unwrap();
        assert!(read_csv(&path).unwrap_err().contains("fields"));
        std::fs::write(
            &path,
            "t,y,y_ref,e_1,psi_1,ratio_1,u_1,stage_cost\n0,0,0,0,1,0,0,oops\n",
        )
        .unwrap();
        assert!(read_csv(&path).unwrap_err().contains("not a number"));
    }
}
