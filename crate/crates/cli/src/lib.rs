//! Command implementations behind the `panmpc` binary.

pub mod config;
pub mod output;
pub mod plot;

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use panmpc::sim::{run_closed_loop, Scenario, SimLog};
use panmpc::verify::{oracle_suites, Mutation, OracleConfig, OracleReport};

pub use config::{load_scenario, parse_scenario, ConfigError, TRACKING_SCENARIO};
pub use output::{summarize, write_csv, CsvOptions, Summary};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Success = 0,
    SimulationFailure = 1,
    ConfigError = 2,
    VerificationFailure = 3,
}

#[derive(Debug, Clone, Default)]
pub struct RunConfig {
    pub scenario: PathBuf,
    pub out: PathBuf,
    pub overrides: Vec<String>,
    pub plots: bool,
    pub timing: bool,
}

#[derive(Debug)]
pub struct RunResult {
    pub scenario: Scenario,
    pub log: SimLog,
    pub summary: Summary,
}

/// Runs a scenario and writes `log.csv`, `summary.json` and, with plots on,
/// three SVG figures into `out`.
pub fn run_and_write(scenario: Scenario, out: &Path, plots: bool, csv: CsvOptions) -> std::io::Result<RunResult> {
    fs::create_dir_all(out)?;
    let start = Instant::now();
    let log = match run_closed_loop(&scenario) {
        Ok(log) => log,
        Err(e) => {
            // Only reachable when the scenario fails validation inside the
            // loop; still leave a summary behind.
            let failed = SimLog {
                plant: vec![],
                control: vec![],
                outcome: panmpc::sim::Outcome::Aborted {
                    t: 0.0,
                    reason: e.to_string(),
                },
            };
            let summary = summarize(&scenario, &failed, start.elapsed().as_secs_f64());
            fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
            return Ok(RunResult {
                scenario,
                log: failed,
                summary,
            });
        }
    };
    let summary = summarize(&scenario, &log, start.elapsed().as_secs_f64());

    let mut w = BufWriter::new(fs::File::create(out.join("log.csv"))?);
    write_csv(&mut w, &scenario, &log, csv)?;
    drop(w);
    fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    if plots {
        fs::write(out.join("path.svg"), plot::path_figure(&scenario, &log))?;
        fs::write(out.join("rotors.svg"), plot::rotor_figure(&scenario, &log))?;
        fs::write(out.join("distances.svg"), plot::distance_figure(&scenario, &log))?;
    }
    Ok(RunResult { scenario, log, summary })
}

pub fn simulate_command(cfg: &RunConfig) -> Exit {
    let scenario = match load_scenario(&cfg.scenario, &cfg.overrides) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return Exit::ConfigError;
        }
    };
    match run_and_write(scenario, &cfg.out, cfg.plots, CsvOptions { timing: cfg.timing }) {
        Ok(run) => {
            let s = &run.summary;
            println!("status: {}", s.status);
            if let Some(reason) = &s.failure_reason {
                println!("reason: {reason}");
            }
            println!("control steps: {}", s.control_steps);
            if let Some(d) = s.min_obstacle_distance {
                println!("min obstacle distance: {d:.4} m (max slack {:.4})", s.max_slack);
            }
            if let Some(t) = s.target_distance {
                println!("target distance: mean {:.3} m, range [{:.3}, {:.3}]", t.mean, t.min, t.max);
            }
            println!(
                "bound violations: speed {}, rate {}; degraded steps {}",
                s.bound_violations.speed, s.bound_violations.rate, s.degraded_steps
            );
            println!("wrote {}", cfg.out.display());
            if run.log.completed() {
                Exit::Success
            } else {
                Exit::SimulationFailure
            }
        }
        Err(e) => {
            eprintln!("error: cannot write output to {}: {e}", cfg.out.display());
            Exit::SimulationFailure
        }
    }
}

pub fn run_oracles(config: &OracleConfig, only: &[String]) -> Result<Vec<OracleReport>, String> {
    let registry = oracle_suites();
    let names: Vec<String> = if only.is_empty() {
        registry.names().iter().map(|s| s.to_string()).collect()
    } else {
        only.to_vec()
    };
    names
        .iter()
        .map(|name| {
            let suite = registry.create(name).map_err(|e| e.to_string())?;
            suite.run(config).map_err(|e| format!("{name}: {e}"))
        })
        .collect()
}

pub fn format_report_table(reports: &[OracleReport]) -> String {
    let mut out = format!("{:<18} {:>6} {:>6} {:>10} {:>10} {:>9}  {}\n", "suite", "result", "cases", "worst", "tolerance", "time", "detail");
    for r in reports {
        out.push_str(&format!(
            "{:<18} {:>6} {:>6} {:>10.2e} {:>10.1e} {:>8.2}s  {}\n",
            r.suite,
            if r.passed() { "PASS" } else { "FAIL" },
            r.cases,
            r.worst,
            r.tolerance,
            r.elapsed.as_secs_f64(),
            r.detail
        ));
    }
    out
}

pub fn verify_command(seed: u64, only: &[String], mutation: Option<Mutation>) -> Exit {
    match run_oracles(&OracleConfig { seed, mutation }, only) {
        Ok(reports) => {
            print!("{}", format_report_table(&reports));
            if reports.iter().all(OracleReport::passed) {
                Exit::Success
            } else {
                Exit::VerificationFailure
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            Exit::ConfigError
        }
    }
}
