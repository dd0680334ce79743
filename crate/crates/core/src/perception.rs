//! Pinhole camera geometry for a single point target.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::model::State;
use crate::quat::{self, Mat3, Quaternion, Vec3};
use crate::{Error, Result};

/// Half-angles at or above this are treated as an unbounded field of view.
const UNBOUNDED_HALF_ANGLE: f64 = FRAC_PI_2 - 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    /// Camera origin in the body frame, m.
    pub position: Vec3,
    /// Body-to-camera mounting rotation: columns of its matrix are the camera axes in body coordinates.
    pub orientation: Quaternion,
    pub half_angle_h: f64,
    pub half_angle_v: f64,
    /// Minimum optical-axis depth enforced by the cheirality row, m.
    pub z_min: f64,
}

impl Default for CameraModel {
    fn default() -> Self {
        Self {
            position: Vec3::new(0.1, 0.0, 0.0),
            orientation: Self::forward_looking(),
            half_angle_h: FRAC_PI_2,
            half_angle_v: FRAC_PI_2,
            z_min: 0.05,
        }
    }
}

impl CameraModel {
    /// Mounting with the optical axis along body x: camera (x, y, z) = body (-y, -z, x).
    pub fn forward_looking() -> Quaternion {
        let r = Mat3::from_columns(&[-Vec3::y(), -Vec3::z(), Vec3::x()]);
        quat::rot_to_quat(&r)
    }

    pub fn validate(&self) -> Result<()> {
        if ((self.orientation.norm()) - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParams("camera orientation must be a unit quaternion".into()));
        }
        for (name, a) in [("half_angle_h", self.half_angle_h), ("half_angle_v", self.half_angle_v)] {
            if !(a > 0.0 && a <= FRAC_PI_2 + 1e-12) {
                return Err(Error::InvalidParams(format!("{name} must lie in (0, pi/2]")));
            }
        }
        if !(self.z_min > 0.0) {
            return Err(Error::InvalidParams("z_min must be positive".into()));
        }
        Ok(())
    }

    pub fn mounting_rotation(&self) -> Mat3 {
        quat::quat_to_rot(&self.orientation)
    }

    /// Affine visibility rows `coeffᵀ cp + offset ≥ 0` over the camera-frame point.
    pub fn fov_rows(&self) -> Vec<FovRow> {
        let mut rows = Vec::with_capacity(5);
        if self.half_angle_h < UNBOUNDED_HALF_ANGLE {
            let t = self.half_angle_h.tan();
            rows.push(FovRow::new(FovKind::HorizontalPlus, Vec3::new(1.0, 0.0, t), 0.0));
            rows.push(FovRow::new(FovKind::HorizontalMinus, Vec3::new(-1.0, 0.0, t), 0.0));
        }
        if self.half_angle_v < UNBOUNDED_HALF_ANGLE {
            let t = self.half_angle_v.tan();
            rows.push(FovRow::new(FovKind::VerticalPlus, Vec3::new(0.0, 1.0, t), 0.0));
            rows.push(FovRow::new(FovKind::VerticalMinus, Vec3::new(0.0, -1.0, t), 0.0));
        }
        rows.push(FovRow::new(FovKind::Cheirality, Vec3::z(), -self.z_min));
        rows
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FovKind {
    HorizontalPlus,
    HorizontalMinus,
    VerticalPlus,
    VerticalMinus,
    Cheirality,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FovRow {
    pub kind: FovKind,
    pub coeff: Vec3,
    pub offset: f64,
}

impl FovRow {
    fn new(kind: FovKind, coeff: Vec3, offset: f64) -> Self {
        Self { kind, coeff, offset }
    }

    pub fn eval(&self, cp: &CameraPoint) -> f64 {
        self.coeff.dot(&cp.0) + self.offset
    }
}

/// Target coordinates in the camera frame, m.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPoint(pub Vec3);

impl CameraPoint {
    pub fn depth(&self) -> f64 {
        self.0.z
    }
}

/// `R_Cᵀ (R(q)ᵀ (p_M − p) − p_C)`.
pub fn project_to_camera(cam: &CameraModel, state: &State, target: &Vec3) -> CameraPoint {
    let body = quat::quat_to_rot(&state.q).transpose() * (target - state.p);
    CameraPoint(cam.mounting_rotation().transpose() * (body - cam.position))
}

/// Inverse rigid transform of [`project_to_camera`].
pub fn camera_to_world(cam: &CameraModel, state: &State, cp: &CameraPoint) -> Vec3 {
    let body = cam.mounting_rotation() * cp.0 + cam.position;
    state.p + quat::quat_to_rot(&state.q) * body
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FovResiduals {
    /// `tan α_h · z + x`, `tan α_h · z − x`; absent for an unbounded horizontal angle.
    pub horizontal: Option<[f64; 2]>,
    pub vertical: Option<[f64; 2]>,
    /// `z − z_min`.
    pub cheirality: f64,
}

impl FovResiduals {
    pub fn min(&self) -> f64 {
        self.values().into_iter().fold(f64::INFINITY, f64::min)
    }

    pub fn values(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(5);
        out.extend(self.horizontal.iter().flatten());
        out.extend(self.vertical.iter().flatten());
        out.push(self.cheirality);
        out
    }
}

pub fn fov_residuals(cam: &CameraModel, cp: &CameraPoint) -> Result<FovResiduals> {
    if cp.depth() <= 0.0 {
        return Err(Error::TargetBehindCamera(cp.depth()));
    }
    let mut res = FovResiduals {
        horizontal: None,
        vertical: None,
        cheirality: cp.depth() - cam.z_min,
    };
    let rows = cam.fov_rows();
    for pair in rows.chunks(2) {
        if let [a, b] = pair {
            let vals = [a.eval(cp), b.eval(cp)];
            match a.kind {
                FovKind::HorizontalPlus => res.horizontal = Some(vals),
                FovKind::VerticalPlus => res.vertical = Some(vals),
                _ => {}
            }
        }
    }
    Ok(res)
}

/// Cosine of the angle between the optical axis and the bearing to the target.
pub fn cos_beta(cp: &CameraPoint) -> Result<f64> {
    let n = cp.0.norm();
    if n == 0.0 {
        return Err(Error::ZeroNormPoint);
    }
    Ok(cp.0.z / n)
}

/// Gradient of [`cos_beta`] with respect to the camera point.
pub fn cos_beta_gradient(cp: &CameraPoint) -> Vec3 {
    let n = cp.0.norm();
    let cb = cp.0.z / n;
    (Vec3::z() - cp.0 * (cb / n)) / n
}

/// Time derivative of the camera point with the mounting fixed.
pub fn camera_point_rate(cam: &CameraModel, state: &State, target: &Vec3, target_vel: &Vec3) -> Vec3 {
    let rt = quat::quat_to_rot(&state.q).transpose();
    let body = rt * (target - state.p);
    let body_rate = rt * (target_vel - state.v) - state.omega.cross(&body);
    cam.mounting_rotation().transpose() * body_rate
}

/// `d/dt (z/‖c‖)` given the point and its rate.
pub fn cos_beta_rate_from(c: &Vec3, c_dot: &Vec3) -> f64 {
    let r = c.norm();
    c_dot.z / r - c.z * c.dot(c_dot) / (r * r * r)
}

/// Partials of [`cos_beta_rate_from`] with respect to `c` and `ċ`.
pub fn cos_beta_rate_partials(c: &Vec3, c_dot: &Vec3) -> (Vec3, Vec3) {
    let r = c.norm();
    let r3 = r * r * r;
    let r5 = r3 * r * r;
    let cdc = c.dot(c_dot);
    let d_c = -c * (c_dot.z / r3) - Vec3::z() * (cdc / r3) - c_dot * (c.z / r3)
        + c * (3.0 * c.z * cdc / r5);
    let d_cdot = Vec3::z() / r - c * (c.z / r3);
    (d_c, d_cdot)
}

pub fn cos_beta_rate(cam: &CameraModel, state: &State, target: &Vec3, target_vel: &Vec3) -> Result<f64> {
    let c = project_to_camera(cam, state, target);
    if c.0.norm() == 0.0 {
        return Err(Error::ZeroNormPoint);
    }
    let c_dot = camera_point_rate(cam, state, target, target_vel);
    Ok(cos_beta_rate_from(&c.0, &c_dot))
}
