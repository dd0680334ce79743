//! The tracking optimal control problem: output map, weighted least-squares
//! stage cost, hard actuator and visibility constraints, and slack-relaxed
//! obstacle constraints.
//!
//! Everything here is evaluated at a single stage. The solver module stacks
//! the stages and linearizes them along the current trajectory.

use nalgebra::{DMatrix, DVector, Matrix3xX, SVector};
use serde::{Deserialize, Serialize};

use crate::model::{local_dim, ControlRate, Gtmr, State, LOC_P, LOC_TH, LOC_U, LOC_V, LOC_W};
use crate::perception::{self, CameraModel, CameraPoint};
use crate::quat::{self, Quaternion, Vec3};
use crate::{Error, Result};

/// Number of scalar outputs.
pub const OUTPUT_DIM: usize = 21;
pub const Y_P: usize = 0;
pub const Y_ATT: usize = 3;
pub const Y_V: usize = 6;
pub const Y_W: usize = 9;
pub const Y_VDOT: usize = 12;
pub const Y_WDOT: usize = 15;
pub const Y_COS_BETA: usize = 18;
pub const Y_COS_BETA_RATE: usize = 19;
pub const Y_DIST: usize = 20;

pub type OutputArray = SVector<f64, OUTPUT_DIM>;

/// Diagonal output and slack weights. Each vector weight applies to all
/// three axes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Weights {
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

impl Default for Weights {
    fn default() -> Self {
        Self {
            position: 1.0,
            attitude: 1.0,
            velocity: 0.1,
            angular_velocity: 0.1,
            acceleration: 0.01,
            angular_acceleration: 0.01,
            cos_beta: 100.0,
            cos_beta_rate: 100.0,
            distance: 10.0,
            slack: 1e4,
        }
    }
}

impl Weights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.position,
            self.attitude,
            self.velocity,
            self.angular_velocity,
            self.acceleration,
            self.angular_acceleration,
            self.cos_beta,
            self.cos_beta_rate,
            self.distance,
            self.slack,
        ];
        if all.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidParams("weights must be finite and nonnegative".into()));
        }
        Ok(())
    }

    pub fn output_diagonal(&self) -> OutputArray {
        let mut w = OutputArray::zeros();
        for (start, value) in [
            (Y_P, self.position),
            (Y_ATT, self.attitude),
            (Y_V, self.velocity),
            (Y_W, self.angular_velocity),
            (Y_VDOT, self.acceleration),
            (Y_WDOT, self.angular_acceleration),
        ] {
            w.fixed_rows_mut::<3>(start).fill(value);
        }
        w[Y_COS_BETA] = self.cos_beta;
        w[Y_COS_BETA_RATE] = self.cos_beta_rate;
        w[Y_DIST] = self.distance;
        w
    }

    /// Multiplies every weight, slack included, by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            position: self.position * factor,
            attitude: self.attitude * factor,
            velocity: self.velocity * factor,
            angular_velocity: self.angular_velocity * factor,
            acceleration: self.acceleration * factor,
            angular_acceleration: self.angular_acceleration * factor,
            cos_beta: self.cos_beta * factor,
            cos_beta_rate: self.cos_beta_rate * factor,
            distance: self.distance * factor,
            slack: self.slack * factor,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutputVector {
    pub p: Vec3,
    /// Geodesic attitude error with respect to the reference attitude.
    pub attitude_error: Vec3,
    pub v: Vec3,
    pub omega: Vec3,
    pub v_dot: Vec3,
    pub omega_dot: Vec3,
    pub cos_beta: f64,
    pub cos_beta_rate: f64,
    pub distance: f64,
}

impl OutputVector {
    pub fn to_array(&self) -> OutputArray {
        let mut y = OutputArray::zeros();
        y.fixed_rows_mut::<3>(Y_P).copy_from(&self.p);
        y.fixed_rows_mut::<3>(Y_ATT).copy_from(&self.attitude_error);
        y.fixed_rows_mut::<3>(Y_V).copy_from(&self.v);
        y.fixed_rows_mut::<3>(Y_W).copy_from(&self.omega);
        y.fixed_rows_mut::<3>(Y_VDOT).copy_from(&self.v_dot);
        y.fixed_rows_mut::<3>(Y_WDOT).copy_from(&self.omega_dot);
        y[Y_COS_BETA] = self.cos_beta;
        y[Y_COS_BETA_RATE] = self.cos_beta_rate;
        y[Y_DIST] = self.distance;
        y
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferencePoint {
    pub p: Vec3,
    pub attitude: Quaternion,
    pub v: Vec3,
    pub omega: Vec3,
    pub v_dot: Vec3,
    pub omega_dot: Vec3,
    pub cos_beta: f64,
    pub cos_beta_rate: f64,
    pub distance: f64,
}

impl ReferencePoint {
    /// Hold `p` and `attitude` at rest with the target centred at `standoff`.
    pub fn hover(p: Vec3, attitude: Quaternion, standoff: f64) -> Self {
        Self {
            p,
            attitude,
            v: Vec3::zeros(),
            omega: Vec3::zeros(),
            v_dot: Vec3::zeros(),
            omega_dot: Vec3::zeros(),
            cos_beta: 1.0,
            cos_beta_rate: 0.0,
            distance: standoff,
        }
    }

    /// Desired output values; the attitude entry is zero because the
    /// output already holds the error with respect to [`Self::attitude`].
    pub fn to_array(&self) -> OutputArray {
        OutputVector {
            p: self.p,
            attitude_error: Vec3::zeros(),
            v: self.v,
            omega: self.omega,
            v_dot: self.v_dot,
            omega_dot: self.omega_dot,
            cos_beta: self.cos_beta,
            cos_beta_rate: self.cos_beta_rate,
            distance: self.distance,
        }
        .to_array()
    }
}

/// Target position and velocity at one shooting node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetSample {
    pub position: Vec3,
    pub velocity: Vec3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObstacleTrack {
    /// One position per shooting node.
    pub positions: Vec<Vec3>,
    pub safety_radius: f64,
}

#[derive(Debug, Clone)]
pub struct OcpConfig {
    pub horizon: usize,
    /// Shooting interval, s.
    pub step: f64,
    pub weights: Weights,
    /// Desired vehicle-to-target distance, m.
    pub standoff: f64,
    pub camera: CameraModel,
    pub model: Gtmr,
}

impl OcpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::InvalidParams("horizon must be at least 1".into()));
        }
        if !(self.step > 0.0) {
            return Err(Error::InvalidParams("shooting step must be positive".into()));
        }
        if !(self.standoff > 0.0) {
            return Err(Error::InvalidParams("standoff must be positive".into()));
        }
        self.weights.validate()?;
        self.camera.validate()
    }

    pub fn rotor_count(&self) -> usize {
        self.model.rotor_count()
    }
}

/// Output map at one stage. Accelerations come from the model; they do not
/// depend on the rate input, which is accepted for signature symmetry.
pub fn output_map(
    cfg: &OcpConfig,
    state: &State,
    _rate: &ControlRate,
    target: &TargetSample,
    reference_attitude: &Quaternion,
) -> Result<OutputVector> {
    let (v_dot, omega_dot) = cfg.model.accelerations(&state.q, &state.omega, &state.speeds);
    let cp = perception::project_to_camera(&cfg.camera, state, &target.position);
    Ok(OutputVector {
        p: state.p,
        attitude_error: quat::geodesic_error(&state.q, reference_attitude),
        v: state.v,
        omega: state.omega,
        v_dot,
        omega_dot,
        cos_beta: perception::cos_beta(&cp)?,
        cos_beta_rate: perception::cos_beta_rate(&cfg.camera, state, &target.position, &target.velocity)?,
        distance: (state.p - target.position).norm(),
    })
}

/// `y − y_d`.
pub fn output_residual(y: &OutputVector, reference: &ReferencePoint) -> OutputArray {
    y.to_array() - reference.to_array()
}

/// Weighted squared output residual plus the quadratic slack penalty.
pub fn stage_cost(weights: &Weights, y: &OutputVector, reference: &ReferencePoint, slacks: &[f64]) -> f64 {
    let r = output_residual(y, reference);
    let tracking: f64 = weights
        .output_diagonal()
        .iter()
        .zip(r.iter())
        .map(|(w, e)| w * e * e)
        .sum();
    tracking + slacks.iter().map(|s| weights.slack * s * s).sum::<f64>()
}

/// Camera point and its Jacobian with respect to the local state.
pub fn camera_point_jacobian(cam: &CameraModel, state: &State, target: &Vec3) -> (CameraPoint, Matrix3xX<f64>) {
    let n = state.rotor_count();
    let rot_t = quat::quat_to_rot(&state.q).transpose();
    let mount_t = cam.mounting_rotation().transpose();
    let body = rot_t * (target - state.p);
    let cp = CameraPoint(mount_t * (body - cam.position));
    let mut jac = Matrix3xX::zeros(local_dim(n));
    jac.fixed_columns_mut::<3>(LOC_P).copy_from(&(-mount_t * rot_t));
    jac.fixed_columns_mut::<3>(LOC_TH).copy_from(&(mount_t * quat::skew(&body)));
    (cp, jac)
}

/// Camera point rate and its Jacobian with respect to the local state.
fn camera_rate_jacobian(cam: &CameraModel, state: &State, target: &TargetSample) -> (Vec3, Matrix3xX<f64>) {
    let n = state.rotor_count();
    let rot_t = quat::quat_to_rot(&state.q).transpose();
    let mount_t = cam.mounting_rotation().transpose();
    let body = rot_t * (target.position - state.p);
    let rel_vel = rot_t * (target.velocity - state.v);
    let rate = mount_t * (rel_vel - state.omega.cross(&body));
    let w = quat::skew(&state.omega);
    let mut jac = Matrix3xX::zeros(local_dim(n));
    jac.fixed_columns_mut::<3>(LOC_P).copy_from(&(mount_t * w * rot_t));
    jac.fixed_columns_mut::<3>(LOC_TH)
        .copy_from(&(mount_t * (quat::skew(&rel_vel) - w * quat::skew(&body))));
    jac.fixed_columns_mut::<3>(LOC_V).copy_from(&(-mount_t * rot_t));
    jac.fixed_columns_mut::<3>(LOC_W).copy_from(&(mount_t * quat::skew(&body)));
    (rate, jac)
}

/// Output map and its Jacobian with respect to the local state
/// `(δp, δθ, δv, δω, δΩ)`, where the attitude is perturbed as `q ∘ exp(δθ/2)`.
pub fn output_jacobian(
    cfg: &OcpConfig,
    state: &State,
    target: &TargetSample,
    reference_attitude: &Quaternion,
) -> Result<(OutputVector, DMatrix<f64>)> {
    let n = state.rotor_count();
    let model = &cfg.model;
    let params = model.params();
    let rot = quat::quat_to_rot(&state.q);
    let mut jac = DMatrix::zeros(OUTPUT_DIM, local_dim(n));

    jac.fixed_view_mut::<3, 3>(Y_P, LOC_P).fill_with_identity();
    jac.fixed_view_mut::<3, 3>(Y_V, LOC_V).fill_with_identity();
    jac.fixed_view_mut::<3, 3>(Y_W, LOC_W).fill_with_identity();

    let attitude_error = quat::geodesic_error(&state.q, reference_attitude);
    let d_att = quat::so3_left_jacobian_inv(&(attitude_error * 2.0)) * rot * 0.5;
    jac.fixed_view_mut::<3, 3>(Y_ATT, LOC_TH).copy_from(&d_att);

    let (body_force, _) = model.wrench(&state.speeds);
    let dw = DMatrix::from_diagonal(&state.speeds.map(|s| params.thrust_model.thrust_term_derivative(s)));
    let alloc = model.allocation();
    jac.fixed_view_mut::<3, 3>(Y_VDOT, LOC_TH)
        .copy_from(&(-rot * quat::skew(&body_force) / params.mass));
    jac.view_mut((Y_VDOT, LOC_U), (3, n))
        .copy_from(&(rot * (&alloc.force * &dw) / params.mass));

    let inertia_inv = model.inertia_inverse();
    let j_omega = params.inertia * state.omega;
    jac.fixed_view_mut::<3, 3>(Y_WDOT, LOC_W)
        .copy_from(&(inertia_inv * (quat::skew(&j_omega) - quat::skew(&state.omega) * params.inertia)));
    jac.view_mut((Y_WDOT, LOC_U), (3, n))
        .copy_from(&(inertia_inv * (&alloc.moment * &dw)));

    let (cp, d_cp) = camera_point_jacobian(&cfg.camera, state, &target.position);
    let cos_beta = perception::cos_beta(&cp)?;
    let grad = perception::cos_beta_gradient(&cp);
    jac.row_mut(Y_COS_BETA).copy_from(&(grad.transpose() * &d_cp));

    let (cp_rate, d_rate) = camera_rate_jacobian(&cfg.camera, state, target);
    let cos_beta_rate = perception::cos_beta_rate_from(&cp.0, &cp_rate);
    let (d_c, d_cdot) = perception::cos_beta_rate_partials(&cp.0, &cp_rate);
    jac.row_mut(Y_COS_BETA_RATE)
        .copy_from(&(d_c.transpose() * &d_cp + d_cdot.transpose() * &d_rate));

    let offset = state.p - target.position;
    let distance = offset.norm();
    if distance > 0.0 {
        jac.fixed_view_mut::<1, 3>(Y_DIST, LOC_P)
            .copy_from(&(offset.transpose() / distance));
    }

    let (v_dot, omega_dot) = model.accelerations(&state.q, &state.omega, &state.speeds);
    let y = OutputVector {
        p: state.p,
        attitude_error,
        v: state.v,
        omega: state.omega,
        v_dot,
        omega_dot,
        cos_beta,
        cos_beta_rate,
        distance,
    };
    Ok((y, jac))
}

/// Hard-constraint residuals at one stage; every entry must be `≥ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct HardResiduals {
    pub speed_lower: DVector<f64>,
    pub speed_upper: DVector<f64>,
    /// Empty at the terminal stage, which has no rate input.
    pub rate_lower: DVector<f64>,
    pub rate_upper: DVector<f64>,
    /// One entry per row of [`CameraModel::fov_rows`].
    pub fov: Vec<f64>,
}

impl HardResiduals {
    pub fn concat(&self) -> Vec<f64> {
        self.speed_lower
            .iter()
            .chain(self.speed_upper.iter())
            .chain(self.rate_lower.iter())
            .chain(self.rate_upper.iter())
            .chain(self.fov.iter())
            .copied()
            .collect()
    }

    pub fn min(&self) -> f64 {
        self.concat().into_iter().fold(f64::INFINITY, f64::min)
    }
}

/// Actuator box and field-of-view residuals. Pass `rate = None` at the
/// terminal stage.
pub fn hard_constraints(cfg: &OcpConfig, state: &State, rate: Option<&ControlRate>, target: &Vec3) -> HardResiduals {
    let p = cfg.model.params();
    let lo = DVector::from_column_slice(&p.speed_min);
    let hi = DVector::from_column_slice(&p.speed_max);
    let (rate_lower, rate_upper) = match rate {
        Some(r) => (
            &r.0 - DVector::from_column_slice(&p.accel_min),
            DVector::from_column_slice(&p.accel_max) - &r.0,
        ),
        None => (DVector::zeros(0), DVector::zeros(0)),
    };
    let cp = perception::project_to_camera(&cfg.camera, state, target);
    HardResiduals {
        speed_lower: &state.speeds - lo,
        speed_upper: hi - &state.speeds,
        rate_lower,
        rate_upper,
        fov: cfg.camera.fov_rows().iter().map(|row| row.eval(&cp)).collect(),
    }
}

/// Squared-distance obstacle residuals `‖p − p_o‖² + s² − Γ²` at stage `k`.
pub fn obstacle_constraints(p: &Vec3, obstacles: &[ObstacleTrack], k: usize, slacks: &[f64]) -> Vec<f64> {
    obstacles
        .iter()
        .zip(slacks)
        .map(|(obs, s)| {
            let d = p - obs.positions[k];
            d.norm_squared() + s * s - obs.safety_radius * obs.safety_radius
        })
        .collect()
}

/// Gradient of one obstacle residual with respect to the position.
pub fn obstacle_gradient(p: &Vec3, obstacle: &Vec3) -> Vec3 {
    (p - obstacle) * 2.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OcpDims {
    pub horizon: usize,
    pub rotors: usize,
    pub obstacles: usize,
    /// Ambient state variables over all nodes.
    pub state_vars: usize,
    pub control_vars: usize,
    pub slack_vars: usize,
}

/// One control step's problem data: the measured state pins node 0, and the
/// references and tracks cover every node.
#[derive(Debug, Clone)]
pub struct OcpInstance {
    pub x0: State,
    pub references: Vec<ReferencePoint>,
    pub targets: Vec<TargetSample>,
    pub obstacles: Vec<ObstacleTrack>,
    pub dims: OcpDims,
}

pub fn assemble_ocp(
    cfg: &OcpConfig,
    x0: State,
    references: Vec<ReferencePoint>,
    targets: Vec<TargetSample>,
    obstacles: Vec<ObstacleTrack>,
) -> Result<OcpInstance> {
    let nodes = cfg.horizon + 1;
    let n = cfg.rotor_count();
    if x0.rotor_count() != n {
        return Err(Error::Dimension(format!("initial state has {} rotors, model has {n}", x0.rotor_count())));
    }
    if references.len() != nodes {
        return Err(Error::Dimension(format!("{} references for {nodes} nodes", references.len())));
    }
    if targets.len() != nodes {
        return Err(Error::Dimension(format!("{} target samples for {nodes} nodes", targets.len())));
    }
    for (j, obs) in obstacles.iter().enumerate() {
        if obs.positions.len() != nodes {
            return Err(Error::Dimension(format!(
                "obstacle {j} track has {} samples for {nodes} nodes",
                obs.positions.len()
            )));
        }
        if !(obs.safety_radius > 0.0) {
            return Err(Error::InvalidParams(format!("obstacle {j} safety radius must be positive")));
        }
    }
    if !x0.is_finite() {
        return Err(Error::NonFinite("initial state".into()));
    }
    let dims = OcpDims {
        horizon: cfg.horizon,
        rotors: n,
        obstacles: obstacles.len(),
        state_vars: nodes * crate::model::ambient_dim(n),
        control_vars: cfg.horizon * n,
        slack_vars: nodes * obstacles.len(),
    };
    Ok(OcpInstance {
        x0,
        references,
        targets,
        obstacles,
        dims,
    })
}

#[cfg(test)]
mod tests;
