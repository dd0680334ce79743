//! Finite-difference helpers, random problem generators and the oracle
//! suites run by `verify`.

use std::fmt::Debug;
use std::sync::Arc;
use std::time::Duration;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::Serialize;

use crate::model::{local_dim, State};
use crate::quat::{quat_normalize, Quaternion, Vec3};
use crate::registry::Registry;
use crate::solver::condense::{ConstraintGroup, RowTag, ShootingProblem, Stage, StageDynamics, StageRows};
use crate::solver::qp::QpProblem;
use crate::Result;

mod suites;

pub use suites::{CondensingOracle, FiniteDifferenceOracle, IntegratorOrderOracle, QpEnumerationOracle};

/// Deliberate defects the suites can inject into the analytic side, to
/// confirm that an oracle actually detects a wrong derivative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mutation {
    FlipObstacleGradient,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OracleConfig {
    pub seed: u64,
    pub mutation: Option<Mutation>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub suite: &'static str,
    pub cases: usize,
    pub failures: usize,
    /// Worst observed value of the suite's checked quantity.
    pub worst: f64,
    pub tolerance: f64,
    pub elapsed: Duration,
    pub detail: String,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

pub trait OracleSuite: Debug + Send + Sync {
    fn name(&self) -> &'static str;

    fn description(&self) -> &'static str;

    fn run(&self, config: &OracleConfig) -> Result<OracleReport>;
}

pub fn oracle_suites() -> Registry<dyn OracleSuite> {
    let mut reg: Registry<dyn OracleSuite> = Registry::new("oracle suite");
    reg.register("qp_enumeration", || Arc::new(QpEnumerationOracle::default()));
    reg.register("fd_jacobians", || Arc::new(FiniteDifferenceOracle::default()));
    reg.register("integrator_order", || Arc::new(IntegratorOrderOracle::default()));
    reg.register("condensing", || Arc::new(CondensingOracle::default()));
    reg
}

pub fn random_vec3(rng: &mut impl Rng, scale: f64) -> Vec3 {
    Vec3::new(
        rng.random_range(-scale..scale),
        rng.random_range(-scale..scale),
        rng.random_range(-scale..scale),
    )
}

pub fn random_unit_quaternion(rng: &mut impl Rng) -> Quaternion {
    loop {
        let q = Quaternion::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        if q.norm() > 0.1 {
            return quat_normalize(&q).expect("norm checked above");
        }
    }
}

/// Random four-rotor state with speeds well inside the default box.
pub fn random_state(rng: &mut impl Rng) -> State {
    State {
        p: random_vec3(rng, 3.0),
        q: random_unit_quaternion(rng),
        v: random_vec3(rng, 2.0),
        omega: random_vec3(rng, 2.0),
        speeds: DVector::from_fn(4, |_, _| rng.random_range(45.0..85.0)),
    }
}

/// Strictly convex QP with up to `max_vars` variables and up to
/// `max_inequalities` one-sided rows, all satisfied at a random point.
pub fn random_qp(rng: &mut impl Rng, max_vars: usize, max_inequalities: usize) -> QpProblem {
    let n = rng.random_range(1..=max_vars);
    let m = rng.random_range(0..=max_inequalities);
    let root = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let hessian = &root * root.transpose() + DMatrix::identity(n, n) * 0.1;
    let gradient = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
    let interior = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let a = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
    let at_interior = &a * &interior;
    let mut lower = DVector::from_element(m, f64::NEG_INFINITY);
    let mut upper = DVector::from_element(m, f64::INFINITY);
    for i in 0..m {
        let margin = rng.random_range(0.0..0.5);
        if rng.random_bool(0.5) {
            lower[i] = at_interior[i] - margin;
        } else {
            upper[i] = at_interior[i] + margin;
        }
    }
    QpProblem::new(hessian, gradient).with_inequalities(a, lower, upper)
}

/// Central-difference Jacobian of `f` with respect to the local coordinates
/// of `state`, perturbing through [`State::retract`].
pub fn local_fd_jacobian(state: &State, step: f64, f: impl Fn(&State) -> DVector<f64>) -> DMatrix<f64> {
    let dim = local_dim(state.rotor_count());
    let base = f(state);
    let mut jac = DMatrix::zeros(base.len(), dim);
    for i in 0..dim {
        let mut delta = DVector::zeros(dim);
        delta[i] = step;
        let plus = f(&state.retract(&delta));
        delta[i] = -step;
        let minus = f(&state.retract(&delta));
        jac.set_column(i, &((plus - minus) / (2.0 * step)));
    }
    jac
}

/// `‖a − b‖_F / max(‖b‖_F, floor)`.
pub fn relative_error(a: &DMatrix<f64>, b: &DMatrix<f64>, floor: f64) -> f64 {
    (a - b).norm() / b.norm().max(floor)
}

/// Random well-posed shooting problem: positive definite stage Hessians and,
/// when `constrained`, bounds and rows that the zero increment satisfies.
pub fn random_shooting_problem(
    rng: &mut impl Rng,
    horizon: usize,
    nx: usize,
    nu: usize,
    ns: usize,
    constrained: bool,
) -> ShootingProblem {
    let mut uniform = |rows: usize, cols: usize, scale: f64| {
        DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
    };
    let initial_deviation = uniform(nx, 1, 0.5).column(0).into_owned();
    let mut stages = Vec::with_capacity(horizon + 1);
    for k in 0..=horizon {
        let m = uniform(nx, nx, 1.0);
        let state_hessian = &m * m.transpose() + DMatrix::identity(nx, nx) * 0.1;
        let state_gradient = uniform(nx, 1, 1.0).column(0).into_owned();
        let terminal = k == horizon;
        let cu = if terminal { 0 } else { nu };
        let r = uniform(cu, cu, 0.3);
        let control_hessian = &r * r.transpose() + DMatrix::identity(cu, cu) * 0.05;
        let control_gradient = uniform(cu, 1, 0.5).column(0).into_owned();
        let dynamics = (!terminal).then(|| StageDynamics {
            a: DMatrix::identity(nx, nx) + uniform(nx, nx, 0.3),
            b: uniform(nx, nu, 1.0),
            defect: uniform(nx, 1, 0.1).column(0).into_owned(),
        });
        let slack_hessian = DVector::from_fn(ns, |_, _| 2.0 + 8.0 * (k as f64 + 1.0) / (horizon as f64 + 1.0));
        let slack_gradient = uniform(ns, 1, 0.2).column(0).into_owned();
        stages.push(Stage {
            dynamics,
            state_hessian,
            state_gradient,
            constant: 0.0,
            control_hessian,
            control_gradient,
            control_lower: DVector::from_element(cu, f64::NEG_INFINITY),
            control_upper: DVector::from_element(cu, f64::INFINITY),
            slack_hessian,
            slack_gradient,
            slack_lower: DVector::zeros(ns),
            slack_upper: DVector::from_element(ns, f64::INFINITY),
            rows: StageRows::empty(nx, ns),
        });
    }
    let mut problem = ShootingProblem { initial_deviation, stages };
    if !constrained {
        return problem;
    }
    let free = problem.propagate(&vec![DVector::zeros(nu); horizon]);
    for (k, st) in problem.stages.iter_mut().enumerate() {
        for i in 0..st.control_lower.len() {
            st.control_lower[i] = -rng.random_range(0.05..1.0);
            st.control_upper[i] = rng.random_range(0.05..1.0);
        }
        let rows = rng.random_range(0..=2);
        for index in 0..rows {
            let cx: Vec<f64> = (0..nx).map(|_| rng.random_range(-1.0..1.0)).collect();
            let cs: Vec<f64> = (0..ns).map(|_| rng.random_range(0.0..1.0)).collect();
            let value: f64 = cx.iter().zip(free[k].iter()).map(|(a, b)| a * b).sum();
            let lower = value - rng.random_range(0.0..0.5);
            let upper = if rng.random_bool(0.5) { value + rng.random_range(0.0..0.5) } else { f64::INFINITY };
            let tag = RowTag { group: ConstraintGroup::Speed, stage: k, index };
            st.rows.push(tag, &cx, &cs, lower, upper);
        }
    }
    problem
}
