//! End-to-end acceptance run. Prints one line per criterion and exits nonzero
//! if any of them fails.

use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use panmpc::quat::Vec3;
use panmpc::sim::{obstacle_position, run_closed_loop, Scenario, TargetModel};
use panmpc::verify::{
    CondensingOracle, FiniteDifferenceOracle, IntegratorOrderOracle, OracleConfig, OracleSuite, QpEnumerationOracle,
};
use panmpc_cli::{parse_scenario, run_and_write, CsvOptions, RunResult, TRACKING_SCENARIO};

const BOUND_TOL: f64 = 1e-6;
const SAFETY_RADIUS: f64 = 1.0;
const STANDOFF: f64 = 1.0;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn tracking(overrides: &[&str]) -> Scenario {
    let overrides: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    parse_scenario(TRACKING_SCENARIO, "tracking.toml", &overrides).expect("bundled scenario parses")
}

fn run_into(dir: &Path, scenario: Scenario) -> (RunResult, Duration) {
    let start = Instant::now();
    let run = run_and_write(scenario, dir, false, CsvOptions::default()).expect("output is writable");
    (run, start.elapsed())
}

fn actuator_bounds(run: &RunResult, elapsed: Duration) -> Verdict {
    let p = run.scenario.ocp.model.params();
    let (mut speed_bad, mut rate_bad) = (0usize, 0usize);
    let (mut speed_lo, mut speed_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut rate_lo, mut rate_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for rec in &run.log.plant {
        for i in 0..rec.state.speeds.len() {
            let (w, r) = (rec.state.speeds[i], rec.rate.0[i]);
            speed_lo = speed_lo.min(w);
            speed_hi = speed_hi.max(w);
            rate_lo = rate_lo.min(r);
            rate_hi = rate_hi.max(r);
            speed_bad += usize::from(w < p.speed_min[i] - BOUND_TOL || w > p.speed_max[i] + BOUND_TOL);
            rate_bad += usize::from(r < p.accel_min[i] - BOUND_TOL || r > p.accel_max[i] + BOUND_TOL);
        }
    }
    let bounds_ok = (p.speed_min.iter().all(|&v| v == 40.0) && p.speed_max.iter().all(|&v| v == 90.0))
        && (p.accel_min.iter().all(|&v| v == -110.0) && p.accel_max.iter().all(|&v| v == 200.0));
    let fast = elapsed < Duration::from_secs(120);
    verdict(
        run.log.completed() && bounds_ok && speed_bad == 0 && rate_bad == 0 && fast,
        format!(
            "speeds [{speed_lo:.3}, {speed_hi:.3}] Hz, rates [{rate_lo:.3}, {rate_hi:.3}] Hz/s, \
             {speed_bad}+{rate_bad} violations, {:.1} s",
            elapsed.as_secs_f64()
        ),
    )
}

fn obstacles_and_standoff(run: &RunResult) -> Verdict {
    let max_slack = run.log.control.iter().flat_map(|c| c.slacks.iter().copied()).fold(0.0, f64::max);
    let mut nearest = f64::INFINITY;
    for rec in &run.log.plant {
        for obs in &run.scenario.obstacles {
            nearest = nearest.min((rec.state.p - obstacle_position(obs, rec.t)).norm());
        }
    }
    let radii_ok = run.scenario.obstacles.iter().all(|o| o.safety_radius == SAFETY_RADIUS);
    let settled: Vec<f64> = run.log.control.iter().filter(|c| c.t >= 2.0).map(|c| c.target_distance).collect();
    let lo = settled.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = settled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = settled.iter().sum::<f64>() / settled.len() as f64;
    verdict(
        run.log.completed()
            && radii_ok
            && nearest >= SAFETY_RADIUS - max_slack
            && max_slack < 0.05
            && !settled.is_empty()
            && lo >= 0.5
            && hi <= 2.0
            && (mean - STANDOFF).abs() <= 0.25,
        format!(
            "min obstacle distance {nearest:.4} m, max slack {max_slack:.4} m, \
             target distance after 2 s [{lo:.3}, {hi:.3}] mean {mean:.3} m"
        ),
    )
}

fn wide_camera(dir: &Path) -> Verdict {
    let quarter = std::f64::consts::FRAC_PI_4;
    let h = format!("camera.half_angle_h={quarter:?}");
    let v = format!("camera.half_angle_v={quarter:?}");
    let (run, _) = run_into(dir, tracking(&[&h, &v]));
    let cam = &run.scenario.ocp.camera;
    let late = run.log.control.iter().filter(|c| c.t > 1.0);
    let worst = late.flat_map(|c| c.fov.iter().copied()).fold(f64::INFINITY, f64::min);
    let n = run.log.control.len();
    let mean_cos = run.log.control.iter().map(|c| c.output.cos_beta).sum::<f64>() / n as f64;
    verdict(
        run.log.completed()
            && cam.half_angle_h == quarter
            && cam.half_angle_v == quarter
            && n > 0
            && worst >= 0.0
            && mean_cos >= 0.9,
        format!("min FoV residual after 1 s {worst:.4}, mean cos_beta {mean_cos:.4}"),
    )
}

fn oracle(suite: &dyn OracleSuite, budget: Option<Duration>) -> Verdict {
    match suite.run(&OracleConfig::default()) {
        Ok(r) => {
            let in_time = budget.is_none_or(|b| r.elapsed < b);
            verdict(
                r.passed() && in_time,
                format!(
                    "{}: {} cases, {} failures, worst {:.2e} (tol {:.1e}), {:.2} s; {}",
                    r.suite,
                    r.cases,
                    r.failures,
                    r.worst,
                    r.tolerance,
                    r.elapsed.as_secs_f64(),
                    r.detail
                ),
            )
        }
        Err(e) => verdict(false, format!("{}: {e}", suite.name())),
    }
}

fn regulation() -> Verdict {
    let mut s = Scenario::tracking().unwrap();
    s.obstacles.clear();
    s.target = TargetModel::stationary(Vec3::new(1.0, 0.0, 0.0));
    s.t_end = 5.0;
    let start = s.x0.p;
    let log = match run_closed_loop(&s) {
        Ok(log) => log,
        Err(e) => return verdict(false, e.to_string()),
    };
    let position = log.plant.iter().map(|r| (r.state.p - start).norm()).fold(0.0, f64::max);
    let rate = log.control.iter().map(|c| c.rate.0.amax()).fold(0.0, f64::max);
    let reached = log.plant.last().is_some_and(|r| r.t >= 5.0 - 1e-9);
    verdict(
        log.completed() && reached && position < 1e-3 && rate < 1e-6,
        format!("max position error {position:.2e} m, max rate {rate:.2e} Hz/s over {:.1} s", s.t_end),
    )
}

fn determinism(first: &Path, second: &Path) -> Verdict {
    run_into(second, tracking(&[]));
    let a = fs::read(first.join("log.csv")).expect("first log");
    let b = fs::read(second.join("log.csv")).expect("second log");
    verdict(!a.is_empty() && a == b, format!("{} and {} bytes, identical: {}", a.len(), b.len(), a == b))
}

fn main() -> ExitCode {
    let tmp = tempfile::tempdir().expect("temporary directory");
    let dir = |name: &str| tmp.path().join(name);

    let (tracking_run, elapsed) = run_into(&dir("tracking"), tracking(&[]));
    let results = [
        ("actuator bounds", actuator_bounds(&tracking_run, elapsed)),
        ("obstacles and standoff", obstacles_and_standoff(&tracking_run)),
        ("target stays in view", wide_camera(&dir("wide"))),
        ("qp oracle", oracle(&QpEnumerationOracle::default(), Some(Duration::from_secs(10)))),
        ("sensitivity oracle", oracle(&FiniteDifferenceOracle::default(), Some(Duration::from_secs(30)))),
        ("integrator order", oracle(&IntegratorOrderOracle::default(), None)),
        ("condensing oracle", oracle(&CondensingOracle::default(), None)),
        ("equilibrium regulation", regulation()),
        ("determinism", determinism(&dir("tracking"), &dir("repeat"))),
    ];

    let mut failed = 0;
    for (i, (name, v)) in results.iter().enumerate() {
        println!("criterion {}: {} {name}: {}", i + 1, if v.pass { "PASS" } else { "FAIL" }, v.detail);
        failed += usize::from(!v.pass);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
