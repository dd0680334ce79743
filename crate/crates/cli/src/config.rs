//! Scenario files: TOML with every section spelled out, unknown keys
//! rejected, and dotted `key=value` overrides applied before validation.

use std::path::Path;

use nalgebra::DVector;
use panmpc::model::{thrust::thrust_models, Gtmr, GtmrParams, State};
use panmpc::ocp::{OcpConfig, Weights};
use panmpc::perception::CameraModel;
use panmpc::quat::{quat_normalize, Mat3, Quaternion, Vec3};
use panmpc::sim::{ObstacleModel, ObstacleMotion, Scenario, TargetModel};
use panmpc::solver::qp::{qp_solvers, QpOptions};
use panmpc::solver::rti::RtiOptions;
use serde::Deserialize;
use toml::{Table, Value};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{0} required")]
    Missing(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("bad override `{0}`: {1}")]
    Override(String, String),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub sim: SimSection,
    pub vehicle: VehicleSection,
    pub camera: CameraSection,
    pub ocp: OcpSection,
    pub solver: SolverSection,
    pub target: TargetSection,
    #[serde(default)]
    pub obstacles: Vec<ObstacleSection>,
    pub initial: InitialSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub t_end: f64,
    pub plant_dt: f64,
    pub ctrl_dt: f64,
    pub ref_dt: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RotorSection {
    pub position: [f64; 3],
    pub axis: [f64; 3],
    /// +1 counter-clockwise, -1 clockwise.
    pub spin: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleSection {
    pub mass: f64,
    pub gravity: f64,
    /// Principal moments, kg·m².
    pub inertia: [f64; 3],
    pub thrust_model: String,
    /// Give exactly one of these two; a hover speed fixes the thrust
    /// coefficient so that level hover balances gravity.
    pub hover_speed: Option<f64>,
    pub thrust_coeff: Option<f64>,
    pub drag_to_thrust: f64,
    pub speed_min: f64,
    pub speed_max: f64,
    pub rate_min: f64,
    pub rate_max: f64,
    pub rotors: Vec<RotorSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraSection {
    pub position: [f64; 3],
    /// Body-to-camera quaternion `[w, x, y, z]`; forward-looking if absent.
    pub orientation: Option<[f64; 4]>,
    pub half_angle_h: f64,
    pub half_angle_v: f64,
    pub z_min: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsSection {
    pub position: f64,
    pub attitude: f64,
    pub velocity: f64,
    pub angular_velocity: f64,
    pub acceleration: f64,
    pub angular_acceleration: f64,
    pub cos_beta: f64,
    pub cos_beta_rate: f64,
    pub distance: f64,
    pub slack: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OcpSection {
    /// Shooting nodes.
    #[serde(rename = "N")]
    pub horizon: usize,
    pub step: f64,
    pub standoff: f64,
    pub weights: WeightsSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub backend: String,
    pub max_iter: usize,
    pub feasibility_tol: f64,
    pub slack_slope_floor: f64,
    pub regularization: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSection {
    pub start: [f64; 3],
    pub direction: [f64; 3],
    pub speed: f64,
    pub duration: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleSection {
    pub start: [f64; 3],
    pub motion: ObstacleMotion,
    #[serde(default)]
    pub launch_velocity: [f64; 3],
    #[serde(default)]
    pub gravity: f64,
    #[serde(default)]
    pub launch_time: f64,
    pub safety_radius: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    pub position: [f64; 3],
    /// `[w, x, y, z]`.
    pub attitude: [f64; 4],
    #[serde(default)]
    pub velocity: [f64; 3],
    #[serde(default)]
    pub angular_velocity: [f64; 3],
    /// Rotor speeds, Hz; hover speeds if absent.
    pub speeds: Option<Vec<f64>>,
}

fn vec3(a: [f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

fn invalid(e: impl ToString) -> ConfigError {
    ConfigError::Invalid(e.to_string())
}

impl ScenarioFile {
    pub fn into_scenario(self) -> Result<Scenario, ConfigError> {
        let v = &self.vehicle;
        let n = v.rotors.len();
        let thrust_model = thrust_models().create(&v.thrust_model).map_err(invalid)?;
        let thrust_coeff = match (v.hover_speed, v.thrust_coeff) {
            (Some(hover), None) => {
                let lift: f64 = v.rotors.iter().map(|r| vec3(r.axis).normalize().z).sum();
                v.mass * v.gravity / (lift * thrust_model.thrust_term(hover))
            }
            (None, Some(c)) => c,
            _ => return Err(invalid("give exactly one of vehicle.hover_speed and vehicle.thrust_coeff")),
        };
        let params = GtmrParams {
            mass: v.mass,
            gravity: v.gravity,
            inertia: Mat3::from_diagonal(&vec3(v.inertia)),
            rotor_positions: v.rotors.iter().map(|r| vec3(r.position)).collect(),
            rotor_axes: v.rotors.iter().map(|r| vec3(r.axis)).collect(),
            spin_directions: v.rotors.iter().map(|r| r.spin).collect(),
            thrust_coeff,
            drag_to_thrust: v.drag_to_thrust,
            speed_min: vec![v.speed_min; n],
            speed_max: vec![v.speed_max; n],
            accel_min: vec![v.rate_min; n],
            accel_max: vec![v.rate_max; n],
            thrust_model,
        };
        let model = Gtmr::new(params).map_err(invalid)?;

        let c = &self.camera;
        let camera = CameraModel {
            position: vec3(c.position),
            orientation: match c.orientation {
                Some([w, x, y, z]) => Quaternion::new(w, x, y, z),
                None => CameraModel::forward_looking(),
            },
            half_angle_h: c.half_angle_h,
            half_angle_v: c.half_angle_v,
            z_min: c.z_min,
        };

        let w = &self.ocp.weights;
        let weights = Weights {
            position: w.position,
            attitude: w.attitude,
            velocity: w.velocity,
            angular_velocity: w.angular_velocity,
            acceleration: w.acceleration,
            angular_acceleration: w.angular_acceleration,
            cos_beta: w.cos_beta,
            cos_beta_rate: w.cos_beta_rate,
            distance: w.distance,
            slack: w.slack,
        };

        let s = &self.solver;
        let rti = RtiOptions {
            qp: QpOptions {
                max_iter: s.max_iter,
                feasibility_tol: s.feasibility_tol,
            },
            solver: qp_solvers().create(&s.backend).map_err(invalid)?,
            slack_slope_floor: s.slack_slope_floor,
            regularization: s.regularization,
        };

        let t = &self.target;
        let direction = vec3(t.direction);
        if !(direction.norm() > 0.0) && t.speed != 0.0 {
            return Err(invalid("target.direction must be nonzero"));
        }
        let target = TargetModel {
            start: vec3(t.start),
            velocity: if t.speed == 0.0 { Vec3::zeros() } else { direction.normalize() * t.speed },
            duration: t.duration,
        };

        let obstacles = self
            .obstacles
            .iter()
            .map(|o| ObstacleModel {
                start: vec3(o.start),
                launch_velocity: vec3(o.launch_velocity),
                motion: o.motion,
                gravity: o.gravity,
                launch_time: o.launch_time,
                safety_radius: o.safety_radius,
            })
            .collect();

        let i = &self.initial;
        let [qw, qx, qy, qz] = i.attitude;
        let attitude = quat_normalize(&Quaternion::new(qw, qx, qy, qz)).map_err(invalid)?;
        let mut x0 = model.hover_state(vec3(i.position), attitude).map_err(invalid)?;
        x0.v = vec3(i.velocity);
        x0.omega = vec3(i.angular_velocity);
        if let Some(speeds) = &i.speeds {
            x0 = State {
                speeds: DVector::from_vec(speeds.clone()),
                ..x0
            };
        }

        let scenario = Scenario {
            ocp: OcpConfig {
                horizon: self.ocp.horizon,
                step: self.ocp.step,
                weights,
                standoff: self.ocp.standoff,
                camera,
                model,
            },
            rti,
            target,
            obstacles,
            x0,
            t_end: self.sim.t_end,
            plant_dt: self.sim.plant_dt,
            ctrl_dt: self.sim.ctrl_dt,
            ref_dt: self.sim.ref_dt,
        };
        scenario.validate().map_err(invalid)?;
        Ok(scenario)
    }
}

/// 1-based line and column of byte `offset` in `src`.
fn line_column(src: &str, offset: usize) -> (usize, usize) {
    let before = &src[..offset.min(src.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

/// Turns serde's messages into the crate's error kinds: a missing field is
/// reported by name, everything else keeps its position when known.
fn classify(path: &str, src: Option<&str>, err: &toml::de::Error) -> ConfigError {
    let message = err.message().trim().to_string();
    if let Some(rest) = message.strip_prefix("missing field `") {
        if let Some(name) = rest.split('`').next() {
            return ConfigError::Missing(name.to_string());
        }
    }
    match (src, err.span()) {
        (Some(src), Some(span)) => {
            let (line, column) = line_column(src, span.start);
            ConfigError::Parse {
                path: path.to_string(),
                line,
                column,
                message,
            }
        }
        _ => ConfigError::Invalid(message),
    }
}

fn parse_override_value(raw: &str) -> Value {
    match format!("v = {raw}").parse::<Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(raw.to_string())),
        Err(_) => Value::String(raw.to_string()),
    }
}

fn set_path(node: &mut Value, parts: &[&str], value: Value) -> Result<(), String> {
    let (head, rest) = parts.split_first().ok_or("empty key")?;
    let child = match node {
        Value::Table(t) if rest.is_empty() => {
            t.insert(head.to_string(), value);
            return Ok(());
        }
        Value::Table(t) => t.entry(head.to_string()).or_insert_with(|| Value::Table(Table::new())),
        Value::Array(a) => {
            let idx: usize = head.parse().map_err(|_| format!("`{head}` is not an array index"))?;
            let len = a.len();
            let slot = a.get_mut(idx).ok_or(format!("index {idx} out of range (len {len})"))?;
            if rest.is_empty() {
                *slot = value;
                return Ok(());
            }
            slot
        }
        _ => return Err(format!("`{head}` is below a scalar")),
    };
    set_path(child, rest, value)
}

/// Sets a dotted `key=value` in `root`; numeric segments index arrays.
pub fn apply_override(root: &mut Value, spec: &str) -> Result<(), ConfigError> {
    let bad = |msg: String| ConfigError::Override(spec.to_string(), msg);
    let (key, raw) = spec.split_once('=').ok_or_else(|| bad("expected key=value".into()))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(bad("empty key segment".into()));
    }
    set_path(root, &parts, parse_override_value(raw.trim())).map_err(bad)
}

pub fn parse_scenario(src: &str, path: &str, overrides: &[String]) -> Result<Scenario, ConfigError> {
    let file: ScenarioFile = if overrides.is_empty() {
        toml::from_str(src).map_err(|e| classify(path, Some(src), &e))?
    } else {
        let table: Table = src.parse().map_err(|e| classify(path, Some(src), &e))?;
        let mut root = Value::Table(table);
        for o in overrides {
            apply_override(&mut root, o)?;
        }
        ScenarioFile::deserialize(root).map_err(|e| classify(path, None, &e))?
    };
    file.into_scenario()
}

/// Reads a scenario file. The name `tracking` selects the built-in scenario
/// unless a file of that name exists.
pub fn load_scenario(path: &Path, overrides: &[String]) -> Result<Scenario, ConfigError> {
    if path == Path::new("tracking") && !path.exists() {
        return parse_scenario(TRACKING_SCENARIO, "tracking.toml", overrides);
    }
    let display = path.display().to_string();
    let src = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: display.clone(),
        source,
    })?;
    parse_scenario(&src, &display, overrides)
}

/// The shipped scenario, compiled in so tests and `--scenario tracking` work
/// from any directory.
pub const TRACKING_SCENARIO: &str = include_str!("../scenarios/tracking.toml");
