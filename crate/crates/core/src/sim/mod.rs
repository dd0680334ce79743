//! Closed-loop simulation: a moving target, ballistic or static obstacles,
//! the controller running every `ctrl_dt` and the plant integrated at
//! `plant_dt` with the last rate held between updates.

use serde::{Deserialize, Serialize};

use crate::model::{ControlRate, Gtmr, GtmrParams, State};
use crate::ocp::{self, ObstacleTrack, OcpConfig, OutputVector, ReferencePoint, TargetSample, Weights};
use crate::perception::CameraModel;
use crate::quat::{Quaternion, Vec3};
use crate::solver::rti::{rti_step, shift_warm_start, RtiOptions, RtiWorkspace, StepStats};
use crate::{Error, Result};

/// Relative slack allowed when checking that one period divides another.
const PERIOD_RATIO_TOL: f64 = 1e-9;

/// Horizontal bearings shorter than this keep the previous heading.
const DEGENERATE_BEARING: f64 = 1e-9;

/// Target moving at constant velocity for `duration`, then stopping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetModel {
    pub start: Vec3,
    pub velocity: Vec3,
    pub duration: f64,
}

impl TargetModel {
    /// Ascending ramp from (6, 6, 0) along (1, 1, 1)/√3 at 1 m/s for 10 s.
    pub fn ramp() -> Self {
        Self {
            start: Vec3::new(6.0, 6.0, 0.0),
            velocity: Vec3::new(1.0, 1.0, 1.0).normalize(),
            duration: 10.0,
        }
    }

    pub fn stationary(at: Vec3) -> Self {
        Self {
            start: at,
            velocity: Vec3::zeros(),
            duration: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObstacleMotion {
    Static,
    Ballistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObstacleModel {
    pub start: Vec3,
    pub launch_velocity: Vec3,
    pub motion: ObstacleMotion,
    /// Downward acceleration while ballistic, m/s².
    pub gravity: f64,
    pub launch_time: f64,
    pub safety_radius: f64,
}

impl ObstacleModel {
    pub fn fixed(at: Vec3, safety_radius: f64) -> Self {
        Self {
            start: at,
            launch_velocity: Vec3::zeros(),
            motion: ObstacleMotion::Static,
            gravity: 0.0,
            launch_time: 0.0,
            safety_radius,
        }
    }
}

pub fn target_position(target: &TargetModel, t: f64) -> TargetSample {
    let moving = t < target.duration;
    TargetSample {
        position: target.start + target.velocity * t.min(target.duration).max(0.0),
        velocity: if moving { target.velocity } else { Vec3::zeros() },
    }
}

pub fn obstacle_position(obs: &ObstacleModel, t: f64) -> Vec3 {
    match obs.motion {
        ObstacleMotion::Static => obs.start,
        ObstacleMotion::Ballistic => {
            let tau = (t - obs.launch_time).max(0.0);
            obs.start + obs.launch_velocity * tau - Vec3::z() * (0.5 * obs.gravity * tau * tau)
        }
    }
}

/// Obstacle positions at `t + k·step` for `k = 0 … horizon`.
pub fn obstacle_track_over_horizon(obs: &ObstacleModel, t: f64, horizon: usize, step: f64) -> ObstacleTrack {
    ObstacleTrack {
        positions: (0..=horizon).map(|k| obstacle_position(obs, t + k as f64 * step)).collect(),
        safety_radius: obs.safety_radius,
    }
}

pub fn target_track_over_horizon(target: &TargetModel, t: f64, horizon: usize, step: f64) -> Vec<TargetSample> {
    (0..=horizon).map(|k| target_position(target, t + k as f64 * step)).collect()
}

/// References placing the vehicle `standoff` behind the target along the
/// current horizontal bearing, facing the target. The bearing is taken once
/// from `vehicle` to the first target sample and held over the track.
/// Returns the references and the heading used.
pub fn reference_from_target(
    standoff: f64,
    track: &[TargetSample],
    vehicle: &Vec3,
    previous_yaw: f64,
) -> Result<(Vec<ReferencePoint>, f64)> {
    let first = track
        .first()
        .ok_or_else(|| Error::InvalidParams("target track is empty".into()))?;
    let mut bearing = first.position - vehicle;
    bearing.z = 0.0;
    let yaw = if bearing.norm() < DEGENERATE_BEARING {
        previous_yaw
    } else {
        bearing.y.atan2(bearing.x)
    };
    let heading = Vec3::new(yaw.cos(), yaw.sin(), 0.0);
    let attitude = Quaternion::from_yaw(yaw);
    let refs = track
        .iter()
        .map(|sample| ReferencePoint {
            v: sample.velocity,
            ..ReferencePoint::hover(sample.position - heading * standoff, attitude, standoff)
        })
        .collect();
    Ok((refs, yaw))
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub ocp: OcpConfig,
    pub rti: RtiOptions,
    pub target: TargetModel,
    pub obstacles: Vec<ObstacleModel>,
    pub x0: State,
    pub t_end: f64,
    pub plant_dt: f64,
    pub ctrl_dt: f64,
    /// Reference period. References are rebuilt at every control step, so
    /// this only has to be at least `ctrl_dt`.
    pub ref_dt: f64,
}

impl Scenario {
    /// The tracking run with default parameters: hover at the origin, ramp
    /// target, one thrown and one fixed obstacle.
    pub fn tracking() -> Result<Self> {
        let model = Gtmr::new(GtmrParams::coplanar_quadrotor())?;
        let x0 = model.hover_state(Vec3::zeros(), Quaternion::identity())?;
        let gravity = GtmrParams::DEFAULT_GRAVITY;
        Ok(Self {
            ocp: OcpConfig {
                horizon: 50,
                step: 0.015,
                weights: Weights::default(),
                standoff: 1.0,
                camera: CameraModel::default(),
                model,
            },
            rti: RtiOptions::default(),
            target: TargetModel::ramp(),
            obstacles: vec![
                ObstacleModel {
                    start: Vec3::new(2.0, 6.0, 0.0),
                    launch_velocity: Vec3::new(0.5, 0.0, 4.0),
                    motion: ObstacleMotion::Ballistic,
                    gravity,
                    launch_time: 2.0,
                    safety_radius: 1.0,
                },
                ObstacleModel::fixed(Vec3::new(10.0, 6.0, 2.0), 1.0),
            ],
            x0,
            t_end: 10.0,
            plant_dt: 0.001,
            ctrl_dt: 0.015,
            ref_dt: 0.015,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidParams(msg.into()));
        self.ocp.validate()?;
        if !(self.plant_dt > 0.0) {
            return bad("plant_dt must be positive");
        }
        if !(self.plant_dt <= self.ctrl_dt) {
            return bad("plant_dt must not exceed ctrl_dt");
        }
        if !(self.ref_dt >= self.ctrl_dt) {
            return bad("ref_dt must not be shorter than ctrl_dt");
        }
        if integer_ratio(self.ctrl_dt, self.plant_dt).is_none() {
            return bad("ctrl_dt must be an integer multiple of plant_dt");
        }
        if !(self.t_end >= 0.0) || !self.t_end.is_finite() {
            return bad("t_end must be finite and nonnegative");
        }
        if self.x0.rotor_count() != self.ocp.rotor_count() {
            return bad("x0 has the wrong number of rotor speeds");
        }
        if !self.x0.is_finite() || ((self.x0.q.norm()) - 1.0).abs() > 1e-9 {
            return bad("x0 must be finite with a unit attitude quaternion");
        }
        if !(self.target.duration >= 0.0) {
            return bad("target duration must be nonnegative");
        }
        for obs in &self.obstacles {
            if !(obs.safety_radius > 0.0) {
                return bad("obstacle safety_radius must be positive");
            }
            if obs.motion == ObstacleMotion::Ballistic && !(obs.gravity >= 0.0) {
                return bad("obstacle gravity must be nonnegative");
            }
        }
        Ok(())
    }

    /// Plant steps per control step.
    pub fn substeps(&self) -> usize {
        integer_ratio(self.ctrl_dt, self.plant_dt).unwrap_or(1)
    }
}

fn integer_ratio(long: f64, short: f64) -> Option<usize> {
    let ratio = long / short;
    let rounded = ratio.round();
    ((ratio - rounded).abs() <= PERIOD_RATIO_TOL * rounded.max(1.0) && rounded >= 1.0).then_some(rounded as usize)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantRecord {
    pub t: f64,
    pub state: State,
    /// Rate held from `t` to the next record.
    pub rate: ControlRate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlRecord {
    pub t: f64,
    /// Measured state the step was solved from.
    pub state: State,
    pub output: OutputVector,
    pub reference: Vec3,
    pub target: Vec3,
    pub target_distance: f64,
    /// First-node slack per obstacle.
    pub slacks: Vec<f64>,
    pub obstacle_distances: Vec<f64>,
    /// Field-of-view row residuals at the measured state; `≥ 0` means visible.
    pub fov: Vec<f64>,
    pub rate: ControlRate,
    pub stats: StepStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome {
    Completed,
    Aborted { t: f64, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimLog {
    pub plant: Vec<PlantRecord>,
    pub control: Vec<ControlRecord>,
    pub outcome: Outcome,
}

impl SimLog {
    pub fn completed(&self) -> bool {
        self.outcome == Outcome::Completed
    }

    pub fn final_state(&self) -> Option<&State> {
        self.plant.last().map(|r| &r.state)
    }
}

struct Loop<'a> {
    scenario: &'a Scenario,
    ws: RtiWorkspace,
    yaw: f64,
    shifts: usize,
}

impl Loop<'_> {
    fn control(&mut self, t: f64, x: &State) -> Result<ControlRecord> {
        let sc = self.scenario;
        let cfg = &sc.ocp;
        let targets = target_track_over_horizon(&sc.target, t, cfg.horizon, cfg.step);
        let tracks: Vec<_> = sc
            .obstacles
            .iter()
            .map(|o| obstacle_track_over_horizon(o, t, cfg.horizon, cfg.step))
            .collect();
        let (refs, yaw) = reference_from_target(cfg.standoff, &targets, &x.p, self.yaw)?;
        self.yaw = yaw;
        let reference = refs[0];
        let target = targets[0];
        let inst = ocp::assemble_ocp(cfg, x.clone(), refs, targets, tracks)?;

        let (rate, stats) = rti_step(cfg, &mut self.ws, &inst, &sc.rti)?;
        for _ in 0..self.shifts {
            shift_warm_start(&mut self.ws);
        }

        let output = ocp::output_map(cfg, x, &rate, &target, &reference.attitude)?;
        let cp = crate::perception::project_to_camera(&cfg.camera, x, &target.position);
        Ok(ControlRecord {
            t,
            state: x.clone(),
            output,
            reference: reference.p,
            target: target.position,
            target_distance: output.distance,
            slacks: self.ws.slacks.first().map(|s| s.iter().copied().collect()).unwrap_or_default(),
            obstacle_distances: inst.obstacles.iter().map(|o| (x.p - o.positions[0]).norm()).collect(),
            fov: cfg.camera.fov_rows().iter().map(|row| row.eval(&cp)).collect(),
            rate,
            stats,
        })
    }
}

/// Runs the scenario to `t_end`. Solver failures and non-finite states end
/// the run early; the log then carries the reason.
pub fn run_closed_loop(scenario: &Scenario) -> Result<SimLog> {
    scenario.validate()?;
    let substeps = scenario.substeps();
    let total = (scenario.t_end / scenario.plant_dt).round() as usize;
    let shifts = integer_ratio(scenario.ctrl_dt, scenario.ocp.step).unwrap_or(0);
    let mut lp = Loop {
        scenario,
        ws: RtiWorkspace::new(),
        yaw: scenario.x0.q.xyz.z.atan2(scenario.x0.q.w) * 2.0,
        shifts,
    };

    let mut log = SimLog {
        plant: Vec::with_capacity(total + 1),
        control: Vec::with_capacity(total / substeps + 1),
        outcome: Outcome::Completed,
    };
    let mut x = scenario.x0.clone();
    let mut rate = ControlRate::zeros(scenario.ocp.rotor_count());
    let time = |i: usize| i as f64 * scenario.plant_dt;

    for i in 0..total {
        let t = time(i);
        if i % substeps == 0 {
            match lp.control(t, &x) {
                Ok(record) => {
                    rate = record.rate.clone();
                    log.control.push(record);
                }
                Err(e) => {
                    log::error!("controller failed at t = {t:.3}: {e}");
                    log.plant.push(PlantRecord { t, state: x, rate });
                    log.outcome = Outcome::Aborted { t, reason: e.to_string() };
                    return Ok(log);
                }
            }
        }
        log.plant.push(PlantRecord {
            t,
            state: x.clone(),
            rate: rate.clone(),
        });
        x = scenario.ocp.model.rk4_step(&x, &rate, scenario.plant_dt);
        if !x.is_finite() {
            let t = time(i + 1);
            log::error!("plant state became non-finite at t = {t:.3}");
            log.outcome = Outcome::Aborted {
                t,
                reason: "plant state became non-finite".into(),
            };
            return Ok(log);
        }
    }
    log.plant.push(PlantRecord {
        t: time(total),
        state: x,
        rate,
    });
    Ok(log)
}
