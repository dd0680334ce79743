use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn panmpc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_panmpc")).args(args).output().expect("binary runs")
}

fn scenario() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/tracking.toml")
}

fn listing(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    names
}

#[test]
fn short_run_writes_log_and_summary_only() {
    let out = tempfile::tempdir().unwrap();
    let res = panmpc(&[
        "simulate",
        "--scenario",
        scenario().to_str().unwrap(),
        "--out",
        out.path().to_str().unwrap(),
        "--set",
        "sim.t_end=0.3",
        "--set",
        "ocp.N=25",
    ]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    assert_eq!(listing(out.path()), ["log.csv", "summary.json"]);

    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["schema"], "panmpc-summary/1");
    assert_eq!(summary["status"], "completed");
    assert_eq!(summary["control_steps"], 20);
    let csv = fs::read_to_string(out.path().join("log.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2 + 20);
}

#[test]
fn plots_are_written_on_request() {
    let out = tempfile::tempdir().unwrap();
    let res = panmpc(&[
        "simulate",
        "--scenario",
        scenario().to_str().unwrap(),
        "--out",
        out.path().to_str().unwrap(),
        "--set",
        "sim.t_end=0.06",
        "--plots",
    ]);
    assert_eq!(res.status.code(), Some(0));
    assert_eq!(listing(out.path()), ["distances.svg", "log.csv", "path.svg", "rotors.svg", "summary.json"]);
    assert!(fs::read_to_string(out.path().join("path.svg")).unwrap().starts_with("<svg"));
}

#[test]
fn builtin_scenario_by_name() {
    let out = tempfile::tempdir().unwrap();
    let res = panmpc(&["simulate", "--scenario", "tracking", "--out", out.path().to_str().unwrap(), "--set", "sim.t_end=0.03"]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
}

#[test]
fn bad_configuration_exits_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let broken = dir.path().join("broken.toml");
    fs::write(&broken, "[sim]\nt_end = \n").unwrap();
    for args in [
        vec!["simulate", "--scenario", broken.to_str().unwrap()],
        vec!["simulate", "--scenario", "/nonexistent/scenario.toml"],
        vec!["simulate", "--scenario", scenario().to_str().unwrap(), "--set", "ocp.N=0"],
        vec!["simulate", "--scenario", scenario().to_str().unwrap(), "--set", "ocp.no_such_key=1"],
    ] {
        let mut args = args.clone();
        args.extend(["--out", out.to_str().unwrap()]);
        let res = panmpc(&args);
        assert_eq!(res.status.code(), Some(2), "{args:?}");
        assert!(String::from_utf8_lossy(&res.stderr).starts_with("error:"));
    }
    assert!(!out.exists());
}

#[test]
fn parse_errors_point_at_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let broken = dir.path().join("broken.toml");
    fs::write(&broken, "[sim]\nt_end = \n").unwrap();
    let res = panmpc(&["simulate", "--scenario", broken.to_str().unwrap()]);
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("broken.toml:2:"), "{err}");
}

#[test]
fn verify_passes_by_default_and_with_another_seed() {
    for args in [vec!["verify"], vec!["verify", "--seed", "5"]] {
        let res = panmpc(&args);
        let table = String::from_utf8_lossy(&res.stdout);
        assert_eq!(res.status.code(), Some(0), "{table}");
        for suite in ["qp_enumeration", "fd_jacobians", "integrator_order", "condensing"] {
            assert!(table.lines().any(|l| l.starts_with(suite) && l.contains("PASS")), "{suite}\n{table}");
        }
    }
}

#[test]
fn injected_gradient_error_is_caught() {
    let res = panmpc(&["verify", "--suite", "fd_jacobians", "--inject", "flip-obstacle-gradient"]);
    assert_eq!(res.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&res.stdout).contains("FAIL"));
}

#[test]
fn unknown_suite_is_a_usage_error() {
    let res = panmpc(&["verify", "--suite", "nope"]);
    assert_eq!(res.status.code(), Some(2));
}
