//! GTMR rigid-body dynamics with the propeller speeds appended to the state
//! and their time derivatives as the control input.

pub mod thrust;

use std::f64::consts::FRAC_1_SQRT_2;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Matrix3xX};
use serde::{Deserialize, Serialize};

use crate::quat::{self, Mat3, Quaternion, Vec3};
use crate::{Error, Result};

pub use thrust::{thrust_models, ThrustModel};

// Offsets into the ambient state vector [p q v ω Ω] (quaternion as 4 numbers).
pub const AMB_P: usize = 0;
pub const AMB_Q: usize = 3;
pub const AMB_V: usize = 7;
pub const AMB_W: usize = 10;
pub const AMB_U: usize = 13;

// Offsets into the local (tangent) coordinates [δp δθ δv δω δΩ].
pub const LOC_P: usize = 0;
pub const LOC_TH: usize = 3;
pub const LOC_V: usize = 6;
pub const LOC_W: usize = 9;
pub const LOC_U: usize = 12;

pub const fn ambient_dim(rotors: usize) -> usize {
    AMB_U + rotors
}

pub const fn local_dim(rotors: usize) -> usize {
    LOC_U + rotors
}

#[derive(Clone)]
pub struct GtmrParams {
    pub mass: f64,
    pub gravity: f64,
    pub inertia: Mat3,
    pub rotor_positions: Vec<Vec3>,
    /// Unit thrust directions in the body frame.
    pub rotor_axes: Vec<Vec3>,
    /// +1 counter-clockwise, -1 clockwise.
    pub spin_directions: Vec<f64>,
    /// N/Hz² for the quadratic model.
    pub thrust_coeff: f64,
    /// Drag-to-thrust ratio, m.
    pub drag_to_thrust: f64,
    pub speed_min: Vec<f64>,
    pub speed_max: Vec<f64>,
    pub accel_min: Vec<f64>,
    pub accel_max: Vec<f64>,
    pub thrust_model: Arc<dyn ThrustModel>,
}

impl fmt::Debug for GtmrParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GtmrParams")
            .field("mass", &self.mass)
            .field("gravity", &self.gravity)
            .field("inertia", &self.inertia)
            .field("rotors", &self.rotor_count())
            .field("thrust_coeff", &self.thrust_coeff)
            .field("drag_to_thrust", &self.drag_to_thrust)
            .field("thrust_model", &self.thrust_model.name())
            .finish_non_exhaustive()
    }
}

impl GtmrParams {
    pub const DEFAULT_MASS: f64 = 1.042;
    pub const DEFAULT_GRAVITY: f64 = 9.84;
    pub const DEFAULT_ARM: f64 = 0.17;
    pub const DEFAULT_DRAG_TO_THRUST: f64 = 0.016;
    pub const DEFAULT_HOVER_SPEED: f64 = 65.0;

    /// Coplanar X-configuration quadrotor with the default mass, inertia and
    /// actuator limits; `c_f` puts hover at 65 Hz.
    pub fn coplanar_quadrotor() -> Self {
        let mass = Self::DEFAULT_MASS;
        let gravity = Self::DEFAULT_GRAVITY;
        let hover = Self::DEFAULT_HOVER_SPEED;
        let arm = Self::DEFAULT_ARM * FRAC_1_SQRT_2;
        Self {
            mass,
            gravity,
            inertia: Mat3::from_diagonal(&Vec3::new(0.015, 0.015, 0.070)),
            rotor_positions: vec![
                Vec3::new(arm, arm, 0.0),
                Vec3::new(-arm, arm, 0.0),
                Vec3::new(-arm, -arm, 0.0),
                Vec3::new(arm, -arm, 0.0),
            ],
            rotor_axes: vec![Vec3::z(); 4],
            spin_directions: vec![1.0, -1.0, 1.0, -1.0],
            thrust_coeff: mass * gravity / (4.0 * hover * hover),
            drag_to_thrust: Self::DEFAULT_DRAG_TO_THRUST,
            speed_min: vec![40.0; 4],
            speed_max: vec![90.0; 4],
            accel_min: vec![-110.0; 4],
            accel_max: vec![200.0; 4],
            thrust_model: Arc::new(thrust::Quadratic),
        }
    }

    pub fn rotor_count(&self) -> usize {
        self.rotor_positions.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.rotor_count();
        let bad = |msg: String| Err(Error::InvalidParams(msg));
        if n == 0 {
            return bad("rotor_count must be positive".into());
        }
        for (name, len) in [
            ("rotor_axes", self.rotor_axes.len()),
            ("spin_directions", self.spin_directions.len()),
            ("speed_min", self.speed_min.len()),
            ("speed_max", self.speed_max.len()),
            ("accel_min", self.accel_min.len()),
            ("accel_max", self.accel_max.len()),
        ] {
            if len != n {
                return bad(format!("{name} has {len} entries, expected {n}"));
            }
        }
        if !(self.mass > 0.0) {
            return bad("mass must be positive".into());
        }
        if !(self.gravity > 0.0) {
            return bad("gravity must be positive".into());
        }
        if !(self.thrust_coeff > 0.0) {
            return bad("thrust_coeff must be positive".into());
        }
        if (self.inertia - self.inertia.transpose()).amax() > 1e-12 * self.inertia.amax() {
            return bad("inertia must be symmetric".into());
        }
        if self.inertia.cholesky().is_none() {
            return bad("inertia must be positive definite".into());
        }
        for i in 0..n {
            if ((self.rotor_axes[i].norm()) - 1.0).abs() > 1e-9 {
                return bad(format!("rotor_axes[{i}] must be unit norm"));
            }
            if self.spin_directions[i] != 1.0 && self.spin_directions[i] != -1.0 {
                return bad(format!("spin_directions[{i}] must be +1 or -1"));
            }
            if !(self.speed_min[i] < self.speed_max[i]) {
                return bad(format!("speed_min[{i}] must be below speed_max[{i}]"));
            }
            if !(self.accel_min[i] < 0.0 && 0.0 < self.accel_max[i]) {
                return bad(format!("accel bounds of rotor {i} must bracket zero"));
            }
        }
        Ok(())
    }
}

/// Force and moment allocation: column `i` maps rotor `i`'s thrust term to
/// body force and torque.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationMatrices {
    pub force: Matrix3xX<f64>,
    pub moment: Matrix3xX<f64>,
}

pub fn build_allocation(params: &GtmrParams) -> AllocationMatrices {
    let n = params.rotor_count();
    let cf = params.thrust_coeff;
    let mut force = Matrix3xX::zeros(n);
    let mut moment = Matrix3xX::zeros(n);
    for i in 0..n {
        let axis = params.rotor_axes[i];
        force.set_column(i, &(axis * cf));
        let lever = params.rotor_positions[i].cross(&axis) * cf;
        let drag = axis * (params.spin_directions[i] * cf * params.drag_to_thrust);
        moment.set_column(i, &(lever - drag));
    }
    AllocationMatrices { force, moment }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub p: Vec3,
    pub q: Quaternion,
    pub v: Vec3,
    pub omega: Vec3,
    /// Propeller speeds, Hz.
    pub speeds: DVector<f64>,
}

impl State {
    pub fn at_rest(p: Vec3, q: Quaternion, speeds: DVector<f64>) -> Self {
        Self {
            p,
            q,
            v: Vec3::zeros(),
            omega: Vec3::zeros(),
            speeds,
        }
    }

    pub fn rotor_count(&self) -> usize {
        self.speeds.len()
    }

    pub fn is_finite(&self) -> bool {
        self.p.iter().all(|c| c.is_finite())
            && self.q.is_finite()
            && self.v.iter().all(|c| c.is_finite())
            && self.omega.iter().all(|c| c.is_finite())
            && self.speeds.iter().all(|c| c.is_finite())
    }

    pub fn to_vector(&self) -> DVector<f64> {
        let n = self.rotor_count();
        let mut x = DVector::zeros(ambient_dim(n));
        x.fixed_rows_mut::<3>(AMB_P).copy_from(&self.p);
        x.fixed_rows_mut::<4>(AMB_Q).copy_from(&self.q.to_vector4());
        x.fixed_rows_mut::<3>(AMB_V).copy_from(&self.v);
        x.fixed_rows_mut::<3>(AMB_W).copy_from(&self.omega);
        x.rows_mut(AMB_U, n).copy_from(&self.speeds);
        x
    }

    pub fn from_vector(x: &DVector<f64>) -> Self {
        let n = x.len() - AMB_U;
        Self {
            p: x.fixed_rows::<3>(AMB_P).into_owned(),
            q: Quaternion::from_vector4(&x.fixed_rows::<4>(AMB_Q).into_owned()),
            v: x.fixed_rows::<3>(AMB_V).into_owned(),
            omega: x.fixed_rows::<3>(AMB_W).into_owned(),
            speeds: x.rows(AMB_U, n).into_owned(),
        }
    }

    /// `self ⊕ δ` in local coordinates; the attitude moves by `q ∘ exp(δθ/2)`.
    pub fn retract(&self, delta: &DVector<f64>) -> State {
        let n = self.rotor_count();
        debug_assert_eq!(delta.len(), local_dim(n));
        let q = quat::retract(&self.q, &delta.fixed_rows::<3>(LOC_TH).into_owned());
        State {
            p: self.p + delta.fixed_rows::<3>(LOC_P),
            q: quat::quat_normalize(&q).unwrap_or(q),
            v: self.v + delta.fixed_rows::<3>(LOC_V),
            omega: self.omega + delta.fixed_rows::<3>(LOC_W),
            speeds: &self.speeds + delta.rows(LOC_U, n),
        }
    }

    /// `other ⊖ self`: local coordinates of `other` around `self`.
    pub fn local_difference(&self, other: &State) -> DVector<f64> {
        let n = self.rotor_count();
        let mut d = DVector::zeros(local_dim(n));
        d.fixed_rows_mut::<3>(LOC_P).copy_from(&(other.p - self.p));
        d.fixed_rows_mut::<3>(LOC_TH)
            .copy_from(&quat::local_coordinates(&self.q, &other.q));
        d.fixed_rows_mut::<3>(LOC_V).copy_from(&(other.v - self.v));
        d.fixed_rows_mut::<3>(LOC_W).copy_from(&(other.omega - self.omega));
        d.rows_mut(LOC_U, n).copy_from(&(&other.speeds - &self.speeds));
        d
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlRate(pub DVector<f64>);

impl ControlRate {
    pub fn zeros(rotors: usize) -> Self {
        Self(DVector::zeros(rotors))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateDerivative {
    pub p_dot: Vec3,
    /// Raw quaternion derivative `½ q ∘ (0, ω)`.
    pub q_dot: Quaternion,
    pub v_dot: Vec3,
    pub omega_dot: Vec3,
    pub speeds_dot: DVector<f64>,
}

/// A validated parameter set with its allocation matrices and inverse
/// inertia cached.
#[derive(Debug, Clone)]
pub struct Gtmr {
    params: GtmrParams,
    alloc: AllocationMatrices,
    inertia_inv: Mat3,
}

impl Gtmr {
    pub fn new(params: GtmrParams) -> Result<Self> {
        params.validate()?;
        let alloc = build_allocation(&params);
        let inertia_inv = params
            .inertia
            .try_inverse()
            .ok_or_else(|| Error::InvalidParams("singular inertia".into()))?;
        Ok(Self {
            params,
            alloc,
            inertia_inv,
        })
    }

    pub fn params(&self) -> &GtmrParams {
        &self.params
    }

    pub fn allocation(&self) -> &AllocationMatrices {
        &self.alloc
    }

    pub fn inertia_inverse(&self) -> &Mat3 {
        &self.inertia_inv
    }

    pub fn rotor_count(&self) -> usize {
        self.params.rotor_count()
    }

    fn thrust_terms(&self, speeds: &DVector<f64>) -> DVector<f64> {
        speeds.map(|s| self.params.thrust_model.thrust_term(s))
    }

    /// Body-frame control force and torque produced by the given speeds.
    pub fn wrench(&self, speeds: &DVector<f64>) -> (Vec3, Vec3) {
        let w = self.thrust_terms(speeds);
        (&self.alloc.force * &w, &self.alloc.moment * &w)
    }

    /// Linear and angular accelerations `(v̇, ω̇)`; these do not depend on the rate input.
    pub fn accelerations(&self, q: &Quaternion, omega: &Vec3, speeds: &DVector<f64>) -> (Vec3, Vec3) {
        let (f, m) = self.wrench(speeds);
        let p = &self.params;
        let v_dot = quat::quat_to_rot(q) * f / p.mass - Vec3::z() * p.gravity;
        let omega_dot = self.inertia_inv * (m - omega.cross(&(p.inertia * omega)));
        (v_dot, omega_dot)
    }

    pub fn dynamics(&self, state: &State, rate: &ControlRate) -> StateDerivative {
        let (v_dot, omega_dot) = self.accelerations(&state.q, &state.omega, &state.speeds);
        StateDerivative {
            p_dot: state.v,
            q_dot: quat::quat_mul(&state.q, &Quaternion::pure(state.omega)).scale(0.5),
            v_dot,
            omega_dot,
            speeds_dot: rate.0.clone(),
        }
    }

    /// Flat-vector form of [`Gtmr::dynamics`] over the ambient state.
    pub fn dynamics_vector(&self, x: &DVector<f64>, rate: &DVector<f64>) -> DVector<f64> {
        let n = self.rotor_count();
        let q = Quaternion::from_vector4(&x.fixed_rows::<4>(AMB_Q).into_owned());
        let omega: Vec3 = x.fixed_rows::<3>(AMB_W).into_owned();
        let speeds = x.rows(AMB_U, n).into_owned();
        let (v_dot, omega_dot) = self.accelerations(&q, &omega, &speeds);
        let q_dot = quat::quat_mul(&q, &Quaternion::pure(omega)).scale(0.5);
        let mut f = DVector::zeros(ambient_dim(n));
        f.fixed_rows_mut::<3>(AMB_P).copy_from(&x.fixed_rows::<3>(AMB_V));
        f.fixed_rows_mut::<4>(AMB_Q).copy_from(&q_dot.to_vector4());
        f.fixed_rows_mut::<3>(AMB_V).copy_from(&v_dot);
        f.fixed_rows_mut::<3>(AMB_W).copy_from(&omega_dot);
        f.rows_mut(AMB_U, n).copy_from(rate);
        f
    }

    /// Jacobian of [`Gtmr::dynamics_vector`] with respect to the ambient
    /// state. The rate Jacobian is the constant `[0; I]`.
    pub fn dynamics_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let n = self.rotor_count();
        let p = &self.params;
        let q = Quaternion::from_vector4(&x.fixed_rows::<4>(AMB_Q).into_owned());
        let omega: Vec3 = x.fixed_rows::<3>(AMB_W).into_owned();
        let speeds = x.rows(AMB_U, n).into_owned();
        let w = self.thrust_terms(&speeds);
        let dw = DMatrix::from_diagonal(&speeds.map(|s| p.thrust_model.thrust_term_derivative(s)));
        let body_force = &self.alloc.force * &w;
        let rot = quat::quat_to_rot(&q);

        let dim = ambient_dim(n);
        let mut jac = DMatrix::zeros(dim, dim);
        jac.fixed_view_mut::<3, 3>(AMB_P, AMB_V)
            .copy_from(&Mat3::identity());

        jac.fixed_view_mut::<4, 4>(AMB_Q, AMB_Q)
            .copy_from(&(Quaternion::pure(omega).right_matrix() * 0.5));
        jac.fixed_view_mut::<4, 3>(AMB_Q, AMB_W)
            .copy_from(&(q.left_matrix().fixed_columns::<3>(1) * 0.5));

        jac.fixed_view_mut::<3, 4>(AMB_V, AMB_Q)
            .copy_from(&(quat::rotate_jacobian(&q, &body_force) / p.mass));
        let dv_du = rot * (&self.alloc.force * &dw) / p.mass;
        jac.view_mut((AMB_V, AMB_U), (3, n)).copy_from(&dv_du);

        let j_omega = p.inertia * omega;
        let dw_dw = self.inertia_inv * (quat::skew(&j_omega) - quat::skew(&omega) * p.inertia);
        jac.fixed_view_mut::<3, 3>(AMB_W, AMB_W).copy_from(&dw_dw);
        let dwdot_du = self.inertia_inv * (&self.alloc.moment * &dw);
        jac.view_mut((AMB_W, AMB_U), (3, n)).copy_from(&dwdot_du);
        jac
    }

    /// Speeds for which the vehicle hovers level: the least-norm thrust
    /// terms cancelling gravity with zero torque, mapped back through the
    /// thrust model.
    pub fn hover_speeds(&self) -> Result<DVector<f64>> {
        let n = self.rotor_count();
        let mut alloc = DMatrix::zeros(6, n);
        alloc.view_mut((0, 0), (3, n)).copy_from(&self.alloc.force);
        alloc.view_mut((3, 0), (3, n)).copy_from(&self.alloc.moment);
        let mut target = DVector::zeros(6);
        target[2] = self.params.mass * self.params.gravity;
        let svd = alloc.clone().svd(true, true);
        let w = svd
            .solve(&target, 1e-12)
            .map_err(|e| Error::InvalidParams(format!("allocation solve failed: {e}")))?;
        let residual = (&alloc * &w - &target).norm();
        if residual > 1e-9 * target.norm() {
            return Err(Error::InvalidParams(
                "allocation cannot produce a static hover wrench".into(),
            ));
        }
        w.iter()
            .map(|&t| self.params.thrust_model.speed_for_thrust_term(t))
            .collect::<Result<Vec<_>>>()
            .map(DVector::from_vec)
    }

    pub fn hover_state(&self, p: Vec3, q: Quaternion) -> Result<State> {
        Ok(State::at_rest(p, q, self.hover_speeds()?))
    }

    /// One classical RK4 step over the raw ambient vector (no renormalization).
    pub fn rk4_step_vector(&self, x: &DVector<f64>, rate: &DVector<f64>, h: f64) -> DVector<f64> {
        let k1 = self.dynamics_vector(x, rate);
        let k2 = self.dynamics_vector(&(x + &k1 * (0.5 * h)), rate);
        let k3 = self.dynamics_vector(&(x + &k2 * (0.5 * h)), rate);
        let k4 = self.dynamics_vector(&(x + &k3 * h), rate);
        x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
    }

    /// RK4 step followed by quaternion renormalization.
    pub fn rk4_step(&self, state: &State, rate: &ControlRate, h: f64) -> State {
        let mut next = State::from_vector(&self.rk4_step_vector(&state.to_vector(), &rate.0, h));
        if let Ok(q) = quat::quat_normalize(&next.q) {
            next.q = q;
        }
        next
    }

    /// RK4 step with its ambient sensitivities `A = ∂x⁺/∂x` and `B = ∂x⁺/∂rate`,
    /// propagated through the four stages. The returned state is the raw
    /// (unnormalized) RK4 result that `A` and `B` differentiate.
    pub fn rk4_step_with_sensitivity(
        &self,
        state: &State,
        rate: &ControlRate,
        h: f64,
    ) -> (State, DMatrix<f64>, DMatrix<f64>) {
        let (x_next, a, b) = self.rk4_sensitivity_vector(&state.to_vector(), &rate.0, h);
        (State::from_vector(&x_next), a, b)
    }

    pub fn rk4_sensitivity_vector(
        &self,
        x: &DVector<f64>,
        rate: &DVector<f64>,
        h: f64,
    ) -> (DVector<f64>, DMatrix<f64>, DMatrix<f64>) {
        let n = self.rotor_count();
        let dim = ambient_dim(n);
        let cols = dim + n;
        // Seed: d x / d(x, rate) = [I 0].
        let mut seed = DMatrix::zeros(dim, cols);
        seed.view_mut((0, 0), (dim, dim)).fill_with_identity();
        let mut rate_jac = DMatrix::zeros(dim, cols);
        rate_jac.view_mut((AMB_U, dim), (n, n)).fill_with_identity();

        let stage = |xs: &DVector<f64>, dxs: &DMatrix<f64>| {
            let k = self.dynamics_vector(xs, rate);
            let dk = self.dynamics_jacobian(xs) * dxs + &rate_jac;
            (k, dk)
        };
        let (k1, d1) = stage(x, &seed);
        let (k2, d2) = stage(&(x + &k1 * (0.5 * h)), &(&seed + &d1 * (0.5 * h)));
        let (k3, d3) = stage(&(x + &k2 * (0.5 * h)), &(&seed + &d2 * (0.5 * h)));
        let (k4, d4) = stage(&(x + &k3 * h), &(&seed + &d3 * h));
        let x_next = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        let total = seed + (d1 + d2 * 2.0 + d3 * 2.0 + d4) * (h / 6.0);
        let a = total.columns(0, dim).into_owned();
        let b = total.columns(dim, n).into_owned();
        (x_next, a, b)
    }

    /// Sensitivities in local coordinates: maps `(δx, δrate)` around `state`
    /// to `δx⁺` around the normalized successor, which is also returned.
    pub fn local_step_sensitivity(
        &self,
        state: &State,
        rate: &ControlRate,
        h: f64,
    ) -> (State, DMatrix<f64>, DMatrix<f64>) {
        let n = self.rotor_count();
        let (raw, a_amb, b_amb) = self.rk4_step_with_sensitivity(state, rate, h);
        let q_norm = raw.q.norm();
        let mut next = raw;
        next.q = next.q.scale(1.0 / q_norm);

        let amb = ambient_dim(n);
        let loc = local_dim(n);
        // Input embedding: δθ ↦ δq = ½ q ∘ (0, δθ).
        let mut embed = DMatrix::zeros(amb, loc);
        embed.fixed_view_mut::<3, 3>(AMB_P, LOC_P).fill_with_identity();
        embed
            .fixed_view_mut::<4, 3>(AMB_Q, LOC_TH)
            .copy_from(&(state.q.left_matrix().fixed_columns::<3>(1) * 0.5));
        embed.fixed_view_mut::<6, 6>(AMB_V, LOC_V).fill_with_identity();
        embed.view_mut((AMB_U, LOC_U), (n, n)).fill_with_identity();
        // Output projection: δq⁺ ↦ δθ⁺ = 2 vec(q̂⁺* ∘ δq⁺) / ‖q⁺‖.
        let mut project = DMatrix::zeros(loc, amb);
        project.fixed_view_mut::<3, 3>(LOC_P, AMB_P).fill_with_identity();
        let conj_left = next.q.conj().left_matrix();
        project
            .fixed_view_mut::<3, 4>(LOC_TH, AMB_Q)
            .copy_from(&(conj_left.fixed_rows::<3>(1) * (2.0 / q_norm)));
        project.fixed_view_mut::<6, 6>(LOC_V, AMB_V).fill_with_identity();
        project.view_mut((LOC_U, AMB_U), (n, n)).fill_with_identity();

        let a = &project * a_amb * embed;
        let b = project * b_amb;
        (next, a, b)
    }
}
