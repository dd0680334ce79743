//! Quaternion and 3-vector algebra.
//!
//! Hamilton convention, scalar first. A unit quaternion `q` rotates body
//! vectors into the world frame: `v_world = q ∘ (0, v_body) ∘ q*`.

use std::ops::{Mul, Neg};

use nalgebra::{Matrix3, Matrix3x4, Matrix4, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::Error;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Below this vector-part norm the logarithm falls back to its first-order series.
const LOG_SERIES_THRESHOLD: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quaternion {
    pub w: f64,
    pub xyz: Vec3,
}

impl Default for Quaternion {
    fn default() -> Self {
        Self::identity()
    }
}

impl Quaternion {
    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self {
            w,
            xyz: Vector3::new(x, y, z),
        }
    }

    pub const fn identity() -> Self {
        Self::new(1.0, 0.0, 0.0, 0.0)
    }

    pub fn pure(v: Vec3) -> Self {
        Self { w: 0.0, xyz: v }
    }

    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 {
            return Self::identity();
        }
        let half = 0.5 * angle;
        Self {
            w: half.cos(),
            xyz: axis * (half.sin() / n),
        }
    }

    /// Rotation about world z, the only rotation the reference generator emits.
    pub fn from_yaw(yaw: f64) -> Self {
        Self::from_axis_angle(&Vec3::z(), yaw)
    }

    pub fn from_vector4(v: &Vector4<f64>) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub fn to_vector4(&self) -> Vector4<f64> {
        Vector4::new(self.w, self.xyz.x, self.xyz.y, self.xyz.z)
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.w, self.xyz.x, self.xyz.y, self.xyz.z]
    }

    pub fn norm_squared(&self) -> f64 {
        self.w * self.w + self.xyz.norm_squared()
    }

    pub fn norm(&self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            w: self.w * s,
            xyz: self.xyz * s,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.w.is_finite() && self.xyz.iter().all(|c| c.is_finite())
    }

    pub fn conj(&self) -> Self {
        quat_conj(self)
    }

    /// Matrix `L(a)` with `a ∘ b = L(a) b` in (w, x, y, z) coordinates.
    pub fn left_matrix(&self) -> Matrix4<f64> {
        let (w, x, y, z) = (self.w, self.xyz.x, self.xyz.y, self.xyz.z);
        Matrix4::new(
            w, -x, -y, -z, //
            x, w, -z, y, //
            y, z, w, -x, //
            z, -y, x, w,
        )
    }

    /// Matrix `R(b)` with `a ∘ b = R(b) a` in (w, x, y, z) coordinates.
    pub fn right_matrix(&self) -> Matrix4<f64> {
        let (w, x, y, z) = (self.w, self.xyz.x, self.xyz.y, self.xyz.z);
        Matrix4::new(
            w, -x, -y, -z, //
            x, w, z, -y, //
            y, -z, w, x, //
            z, y, -x, w,
        )
    }

    /// Rotates `v` by this (unit) quaternion.
    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        quat_to_rot(self) * v
    }
}

impl Mul for Quaternion {
    type Output = Quaternion;

    fn mul(self, rhs: Quaternion) -> Quaternion {
        quat_mul(&self, &rhs)
    }
}

impl Neg for Quaternion {
    type Output = Quaternion;

    fn neg(self) -> Quaternion {
        self.scale(-1.0)
    }
}

/// Hamilton product `a ∘ b`.
pub fn quat_mul(a: &Quaternion, b: &Quaternion) -> Quaternion {
    Quaternion {
        w: a.w * b.w - a.xyz.dot(&b.xyz),
        xyz: b.xyz * a.w + a.xyz * b.w + a.xyz.cross(&b.xyz),
    }
}

pub fn quat_conj(q: &Quaternion) -> Quaternion {
    Quaternion { w: q.w, xyz: -q.xyz }
}

pub fn quat_normalize(q: &Quaternion) -> Result<Quaternion, Error> {
    let n = q.norm();
    if !(n > 1e-12) {
        return Err(Error::DegenerateQuaternion);
    }
    Ok(q.scale(1.0 / n))
}

/// Quaternion logarithm in half-angle form: for `q = (cos θ/2, sin θ/2 · axis)`
/// returns `θ/2 · axis`. The sign is disambiguated so that `log(q) = log(-q)`,
/// which bounds the result norm by π/2.
pub fn quat_log(q: &Quaternion) -> Vec3 {
    let (w, v) = if q.w < 0.0 { (-q.w, -q.xyz) } else { (q.w, q.xyz) };
    let n = v.norm();
    if n < LOG_SERIES_THRESHOLD {
        return v;
    }
    v * (n.atan2(w) / n)
}

/// Inverse of [`quat_log`] on the ball of radius π/2: `exp(φ) = (cos‖φ‖, sin‖φ‖ φ/‖φ‖)`.
pub fn quat_exp(phi: &Vec3) -> Quaternion {
    let n = phi.norm();
    if n < LOG_SERIES_THRESHOLD {
        return Quaternion {
            w: 1.0 - 0.5 * n * n,
            xyz: *phi,
        };
    }
    Quaternion {
        w: n.cos(),
        xyz: phi * (n.sin() / n),
    }
}

/// Geodesic attitude error `log(q ∘ q_d*)`, zero iff `q = ±q_d`.
pub fn geodesic_error(q: &Quaternion, q_d: &Quaternion) -> Vec3 {
    quat_log(&quat_mul(q, &quat_conj(q_d)))
}

/// Body-to-world rotation matrix. Uses the homogeneous quadratic form, so
/// it is only orthogonal for unit input.
pub fn quat_to_rot(q: &Quaternion) -> Mat3 {
    let (w, x, y, z) = (q.w, q.xyz.x, q.xyz.y, q.xyz.z);
    let (ww, xx, yy, zz) = (w * w, x * x, y * y, z * z);
    Matrix3::new(
        ww + xx - yy - zz,
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        ww - xx + yy - zz,
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        ww - xx - yy + zz,
    )
}

/// Shepperd's method; the returned quaternion has a nonnegative scalar part.
pub fn rot_to_quat(r: &Mat3) -> Quaternion {
    let trace = r.trace();
    let q = if trace > 0.0 {
        let s = 2.0 * (1.0 + trace).sqrt();
        Quaternion::new(
            0.25 * s,
            (r[(2, 1)] - r[(1, 2)]) / s,
            (r[(0, 2)] - r[(2, 0)]) / s,
            (r[(1, 0)] - r[(0, 1)]) / s,
        )
    } else if r[(0, 0)] > r[(1, 1)] && r[(0, 0)] > r[(2, 2)] {
        let s = 2.0 * (1.0 + r[(0, 0)] - r[(1, 1)] - r[(2, 2)]).sqrt();
        Quaternion::new(
            (r[(2, 1)] - r[(1, 2)]) / s,
            0.25 * s,
            (r[(0, 1)] + r[(1, 0)]) / s,
            (r[(0, 2)] + r[(2, 0)]) / s,
        )
    } else if r[(1, 1)] > r[(2, 2)] {
        let s = 2.0 * (1.0 + r[(1, 1)] - r[(0, 0)] - r[(2, 2)]).sqrt();
        Quaternion::new(
            (r[(0, 2)] - r[(2, 0)]) / s,
            (r[(0, 1)] + r[(1, 0)]) / s,
            0.25 * s,
            (r[(1, 2)] + r[(2, 1)]) / s,
        )
    } else {
        let s = 2.0 * (1.0 + r[(2, 2)] - r[(0, 0)] - r[(1, 1)]).sqrt();
        Quaternion::new(
            (r[(1, 0)] - r[(0, 1)]) / s,
            (r[(0, 2)] + r[(2, 0)]) / s,
            (r[(1, 2)] + r[(2, 1)]) / s,
            0.25 * s,
        )
    };
    if q.w < 0.0 {
        -q
    } else {
        q
    }
}

/// Cross-product matrix: `skew(a) b = a × b`.
pub fn skew(a: &Vec3) -> Mat3 {
    Matrix3::new(0.0, -a.z, a.y, a.z, 0.0, -a.x, -a.y, a.x, 0.0)
}

/// Jacobian of `R(q) v` with respect to the four (w, x, y, z) components of
/// `q`, differentiating the homogeneous quadratic form of [`quat_to_rot`].
pub fn rotate_jacobian(q: &Quaternion, v: &Vec3) -> Matrix3x4<f64> {
    let qv = q.xyz;
    let dw = (v * q.w + qv.cross(v)) * 2.0;
    let dv = (Mat3::identity() * qv.dot(v) + qv * v.transpose() - v * qv.transpose() - skew(v) * q.w)
        * 2.0;
    let mut out = Matrix3x4::zeros();
    out.set_column(0, &dw);
    out.fixed_view_mut::<3, 3>(0, 1).copy_from(&dv);
    out
}

/// Inverse left Jacobian of SO(3) at rotation vector `phi`.
pub fn so3_left_jacobian_inv(phi: &Vec3) -> Mat3 {
    let theta = phi.norm();
    let k = skew(phi);
    let coeff = if theta < 1e-5 {
        1.0 / 12.0 + theta * theta / 720.0
    } else {
        1.0 / (theta * theta) - (1.0 + theta.cos()) / (2.0 * theta * theta.sin())
    };
    Mat3::identity() - k * 0.5 + k * k * coeff
}

/// Right-multiplicative retraction `q ∘ exp(δ/2)` with `δ` a body-frame rotation vector.
pub fn retract(q: &Quaternion, delta: &Vec3) -> Quaternion {
    quat_mul(q, &quat_exp(&(delta * 0.5)))
}

/// Local coordinates of `q` around `q_ref`: the body rotation vector `δ`
/// with `retract(q_ref, δ) = ±q`.
pub fn local_coordinates(q_ref: &Quaternion, q: &Quaternion) -> Vec3 {
    quat_log(&quat_mul(&quat_conj(q_ref), q)) * 2.0
}
