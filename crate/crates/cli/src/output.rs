//! Per-control-step CSV and the run summary.

use std::io::{self, Write};

use panmpc::sim::{obstacle_position, Outcome, Scenario, SimLog};
use serde::Serialize;

pub const CSV_SCHEMA: &str = "panmpc-log/1";
pub const SUMMARY_SCHEMA: &str = "panmpc-summary/1";

/// Tolerance used when counting actuator bound violations.
pub const BOUND_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CsvOptions {
    /// Write measured solve times; off by default because they differ
    /// between otherwise identical runs.
    pub timing: bool,
}

pub fn csv_header(rotors: usize, obstacles: usize) -> Vec<String> {
    let mut cols: Vec<String> = ["t[s]", "p_x[m]", "p_y[m]", "p_z[m]", "q_w[-]", "q_x[-]", "q_y[-]", "q_z[-]"]
        .iter()
        .chain(&["v_x[m/s]", "v_y[m/s]", "v_z[m/s]", "w_x[rad/s]", "w_y[rad/s]", "w_z[rad/s]"])
        .map(|s| s.to_string())
        .collect();
    cols.extend((1..=rotors).map(|i| format!("speed_{i}[Hz]")));
    cols.extend((1..=rotors).map(|i| format!("rate_{i}[Hz/s]")));
    cols.push("cos_beta[-]".into());
    cols.push("dist_target[m]".into());
    cols.extend((1..=obstacles).map(|j| format!("dist_obs_{j}[m]")));
    cols.extend((1..=obstacles).map(|j| format!("slack_{j}[m]")));
    for c in ["qp_iters[-]", "kkt_residual[-]", "solve_us[us]", "fov_min[-]", "degraded[-]"] {
        cols.push(c.into());
    }
    cols
}

/// Shortest text that parses back to the same value.
fn fmt_f64(v: &f64) -> String {
    format!("{v:?}")
}

pub fn write_csv(out: &mut impl Write, scenario: &Scenario, log: &SimLog, options: CsvOptions) -> io::Result<()> {
    let rotors = scenario.ocp.rotor_count();
    writeln!(out, "# schema: {CSV_SCHEMA}")?;
    writeln!(out, "{}", csv_header(rotors, scenario.obstacles.len()).join(","))?;
    let mut row: Vec<String> = Vec::new();
    for rec in &log.control {
        row.clear();
        let x = &rec.state;
        row.push(fmt_f64(&rec.t));
        row.extend(x.p.iter().map(fmt_f64));
        row.extend(x.q.to_array().iter().map(fmt_f64));
        row.extend(x.v.iter().chain(x.omega.iter()).map(fmt_f64));
        row.extend(x.speeds.iter().map(fmt_f64));
        row.extend(rec.rate.0.iter().map(fmt_f64));
        row.push(fmt_f64(&rec.output.cos_beta));
        row.push(fmt_f64(&rec.target_distance));
        row.extend(rec.obstacle_distances.iter().map(fmt_f64));
        row.extend(rec.slacks.iter().map(fmt_f64));
        row.push(rec.stats.qp_iterations.to_string());
        row.push(fmt_f64(&rec.stats.kkt_residual));
        row.push(if options.timing { rec.stats.solve_us } else { 0 }.to_string());
        row.push(fmt_f64(&rec.fov.iter().copied().fold(f64::INFINITY, f64::min)));
        row.push(u8::from(rec.stats.degraded).to_string());
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Stat {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

impl Stat {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Option<Self> {
        let (mut min, mut max, mut sum, mut n) = (f64::INFINITY, f64::NEG_INFINITY, 0.0, 0usize);
        for v in values {
            min = min.min(v);
            max = max.max(v);
            sum += v;
            n += 1;
        }
        (n > 0).then(|| Self {
            min,
            max,
            mean: sum / n as f64,
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct BoundViolations {
    pub speed: usize,
    pub rate: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub schema: &'static str,
    pub status: &'static str,
    pub failure_reason: Option<String>,
    pub aborted_at: Option<f64>,
    pub simulated_time: f64,
    pub control_steps: usize,
    pub plant_steps: usize,
    /// Smallest distance to any obstacle over all plant steps, m.
    pub min_obstacle_distance: Option<f64>,
    pub min_obstacle_distance_each: Vec<f64>,
    pub max_slack: f64,
    /// Largest negative field-of-view residual, reported as a positive number.
    pub max_fov_violation: f64,
    pub bound_violations: BoundViolations,
    pub degraded_steps: usize,
    pub fov_relaxed_steps: usize,
    pub target_distance: Option<Stat>,
    pub mean_cos_beta: Option<f64>,
    pub qp_iterations: Option<Stat>,
    pub solve_time_us: Option<Stat>,
    pub wall_time_s: f64,
}

pub fn summarize(scenario: &Scenario, log: &SimLog, wall_time_s: f64) -> Summary {
    let p = scenario.ocp.model.params();
    let mut violations = BoundViolations::default();
    let mut nearest = vec![f64::INFINITY; scenario.obstacles.len()];
    for rec in &log.plant {
        for (i, w) in rec.state.speeds.iter().enumerate() {
            if *w < p.speed_min[i] - BOUND_TOL || *w > p.speed_max[i] + BOUND_TOL {
                violations.speed += 1;
            }
        }
        for (i, r) in rec.rate.0.iter().enumerate() {
            if *r < p.accel_min[i] - BOUND_TOL || *r > p.accel_max[i] + BOUND_TOL {
                violations.rate += 1;
            }
        }
        for (d, obs) in nearest.iter_mut().zip(&scenario.obstacles) {
            *d = d.min((rec.state.p - obstacle_position(obs, rec.t)).norm());
        }
    }
    let (status, failure_reason, aborted_at) = match &log.outcome {
        Outcome::Completed => ("completed", None, None),
        Outcome::Aborted { t, reason } => ("aborted", Some(reason.clone()), Some(*t)),
    };
    let c = &log.control;
    Summary {
        schema: SUMMARY_SCHEMA,
        status,
        failure_reason,
        aborted_at,
        simulated_time: log.plant.last().map_or(0.0, |r| r.t),
        control_steps: c.len(),
        plant_steps: log.plant.len().saturating_sub(1),
        min_obstacle_distance: nearest.iter().copied().reduce(f64::min),
        min_obstacle_distance_each: nearest,
        max_slack: c.iter().flat_map(|r| r.slacks.iter().copied()).fold(0.0, f64::max),
        max_fov_violation: c.iter().flat_map(|r| r.fov.iter().map(|f| -f)).fold(0.0, f64::max),
        bound_violations: violations,
        degraded_steps: c.iter().filter(|r| r.stats.degraded).count(),
        fov_relaxed_steps: c.iter().filter(|r| r.stats.fov_relaxed).count(),
        target_distance: Stat::of(c.iter().map(|r| r.target_distance)),
        mean_cos_beta: Stat::of(c.iter().map(|r| r.output.cos_beta)).map(|s| s.mean),
        qp_iterations: Stat::of(c.iter().map(|r| r.stats.qp_iterations as f64)),
        solve_time_us: Stat::of(c.iter().map(|r| r.stats.solve_us as f64)),
        wall_time_s,
    }
}
