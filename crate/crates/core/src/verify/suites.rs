use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    local_fd_jacobian, random_qp, random_shooting_problem, random_state, random_vec3, relative_error, Mutation,
    OracleConfig, OracleReport, OracleSuite,
};
use crate::model::{ControlRate, Gtmr, GtmrParams, State, LOC_P, LOC_U};
use crate::ocp::{self, ObstacleTrack, OcpConfig, TargetSample, Weights};
use crate::perception::CameraModel;
use crate::quat::{Mat3, Vec3};
use crate::solver::active_set::DualActiveSet;
use crate::solver::condense::{condense, sparse_qp};
use crate::solver::enumeration::Enumeration;
use crate::solver::qp::{QpOptions, QpSolver, QpStatus};
use crate::Result;

/// Active-set QP against brute-force enumeration of active sets.
#[derive(Debug, Clone)]
pub struct QpEnumerationOracle {
    pub problems: usize,
    pub max_vars: usize,
    pub max_inequalities: usize,
    pub primal_tol: f64,
    pub objective_tol: f64,
}

impl Default for QpEnumerationOracle {
    fn default() -> Self {
        Self {
            problems: 500,
            max_vars: 4,
            max_inequalities: 6,
            primal_tol: 1e-8,
            objective_tol: 1e-10,
        }
    }
}

impl OracleSuite for QpEnumerationOracle {
    fn name(&self) -> &'static str {
        "qp_enumeration"
    }

    fn description(&self) -> &'static str {
        "active-set QP vs active-set enumeration"
    }

    fn run(&self, config: &OracleConfig) -> Result<OracleReport> {
        let start = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let opts = QpOptions::default();
        let brute = Enumeration::default();
        let (mut failures, mut worst_primal, mut worst_objective) = (0, 0.0f64, 0.0f64);
        for _ in 0..self.problems {
            let qp = random_qp(&mut rng, self.max_vars, self.max_inequalities);
            let fast = DualActiveSet.solve(&qp, None, &opts)?;
            let slow = brute.solve(&qp, None, &opts)?;
            if fast.status != QpStatus::Optimal || slow.status != QpStatus::Optimal {
                failures += 1;
                continue;
            }
            let primal = (&fast.z - &slow.z).amax();
            let objective = (fast.objective - slow.objective).abs();
            worst_primal = worst_primal.max(primal);
            worst_objective = worst_objective.max(objective);
            if primal > self.primal_tol || objective > self.objective_tol {
                failures += 1;
            }
        }
        Ok(OracleReport {
            suite: self.name(),
            cases: self.problems,
            failures,
            worst: worst_primal,
            tolerance: self.primal_tol,
            elapsed: start.elapsed(),
            detail: format!("max |Δz| {worst_primal:.2e}, max |Δf| {worst_objective:.2e}"),
        })
    }
}

/// Analytic derivatives against central differences: the local RK4
/// sensitivities, the output Jacobian behind the cost, and the Jacobians of
/// the hard and obstacle constraints.
#[derive(Debug, Clone)]
pub struct FiniteDifferenceOracle {
    pub points: usize,
    pub step: f64,
    pub tolerance: f64,
}

impl Default for FiniteDifferenceOracle {
    fn default() -> Self {
        Self {
            points: 200,
            step: 1e-6,
            tolerance: 1e-5,
        }
    }
}

struct Sample {
    state: State,
    rate: ControlRate,
    target: TargetSample,
    obstacles: Vec<ObstacleTrack>,
}

fn oracle_config(model: Gtmr) -> OcpConfig {
    OcpConfig {
        horizon: 1,
        step: 0.015,
        weights: Weights::default(),
        standoff: 1.0,
        camera: CameraModel {
            position: Vec3::new(0.1, -0.03, 0.02),
            half_angle_h: 0.7,
            half_angle_v: 0.5,
            ..CameraModel::default()
        },
        model,
    }
}

fn sample(rng: &mut ChaCha8Rng, cfg: &OcpConfig) -> Sample {
    let state = random_state(rng);
    let p = cfg.model.params();
    let rate = ControlRate(DVector::from_fn(cfg.rotor_count(), |i, _| {
        rng.random_range(p.accel_min[i]..p.accel_max[i])
    }));
    let target = TargetSample {
        position: state.p + random_vec3(rng, 3.0),
        velocity: random_vec3(rng, 1.0),
    };
    let obstacles = (0..2)
        .map(|_| ObstacleTrack {
            positions: vec![state.p + random_vec3(rng, 2.0)],
            safety_radius: 1.0,
        })
        .collect();
    Sample {
        state,
        rate,
        target,
        obstacles,
    }
}

/// State Jacobian of every constraint residual at a node: speed box, rate
/// box (state-independent), field-of-view rows, then obstacles.
fn constraint_values(cfg: &OcpConfig, s: &State, rate: &ControlRate, target: &Vec3, obstacles: &[ObstacleTrack]) -> DVector<f64> {
    let mut values = ocp::hard_constraints(cfg, s, Some(rate), target).concat();
    values.extend(ocp::obstacle_constraints(&s.p, obstacles, 0, &vec![0.0; obstacles.len()]));
    DVector::from_vec(values)
}

fn constraint_jacobian(cfg: &OcpConfig, x: &Sample, mutation: Option<Mutation>) -> DMatrix<f64> {
    let n = cfg.rotor_count();
    let nx = crate::model::local_dim(n);
    let rows = cfg.camera.fov_rows();
    let mut jac = DMatrix::zeros(4 * n + rows.len() + x.obstacles.len(), nx);
    for i in 0..n {
        jac[(i, LOC_U + i)] = 1.0;
        jac[(n + i, LOC_U + i)] = -1.0;
    }
    let (_, d_cp) = ocp::camera_point_jacobian(&cfg.camera, &x.state, &x.target.position);
    for (r, row) in rows.iter().enumerate() {
        jac.row_mut(4 * n + r).copy_from(&(row.coeff.transpose() * &d_cp));
    }
    let sign = if mutation == Some(Mutation::FlipObstacleGradient) { -1.0 } else { 1.0 };
    for (j, obs) in x.obstacles.iter().enumerate() {
        let g = ocp::obstacle_gradient(&x.state.p, &obs.positions[0]) * sign;
        let r = 4 * n + rows.len() + j;
        for c in 0..3 {
            jac[(r, LOC_P + c)] = g[c];
        }
    }
    jac
}

impl OracleSuite for FiniteDifferenceOracle {
    fn name(&self) -> &'static str {
        "fd_jacobians"
    }

    fn description(&self) -> &'static str {
        "RK4 sensitivities, output and constraint Jacobians vs central differences"
    }

    fn run(&self, config: &OracleConfig) -> Result<OracleReport> {
        let start = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let cfg = oracle_config(Gtmr::new(GtmrParams::coplanar_quadrotor())?);
        let h = cfg.step;
        let eps = self.step;
        let mut worst = [0.0f64; 4];
        let mut failures = 0;
        for _ in 0..self.points {
            let x = sample(&mut rng, &cfg);
            let model = &cfg.model;

            let (next, a, b) = model.local_step_sensitivity(&x.state, &x.rate, h);
            let step = |s: &State| next.local_difference(&model.rk4_step(s, &x.rate, h));
            let fd_a = local_fd_jacobian(&x.state, eps, step);
            let mut fd_b = DMatrix::zeros(a.nrows(), x.rate.0.len());
            for i in 0..x.rate.0.len() {
                let mut plus = x.rate.clone();
                plus.0[i] += eps;
                let mut minus = x.rate.clone();
                minus.0[i] -= eps;
                let d = next.local_difference(&model.rk4_step(&x.state, &plus, h))
                    - next.local_difference(&model.rk4_step(&x.state, &minus, h));
                fd_b.set_column(i, &(d / (2.0 * eps)));
            }
            let rk4 = relative_error(&a, &fd_a, 1e-12).max(relative_error(&b, &fd_b, 1e-12));

            let q_ref = crate::verify::random_unit_quaternion(&mut rng);
            let (_, out_jac) = ocp::output_jacobian(&cfg, &x.state, &x.target, &q_ref)?;
            let fd_out = local_fd_jacobian(&x.state, eps, |s| {
                let y = ocp::output_map(&cfg, s, &x.rate, &x.target, &q_ref).expect("target is off the camera origin");
                DVector::from_column_slice(y.to_array().as_slice())
            });
            let output = relative_error(&out_jac, &fd_out, 1e-12);

            let con_jac = constraint_jacobian(&cfg, &x, config.mutation);
            let fd_con = local_fd_jacobian(&x.state, eps, |s| {
                constraint_values(&cfg, s, &x.rate, &x.target.position, &x.obstacles)
            });
            let constraints = relative_error(&con_jac, &fd_con, 1e-12);

            let errors = [rk4, output, constraints];
            for (w, e) in worst.iter_mut().zip(errors) {
                *w = w.max(e);
            }
            if errors.iter().any(|e| !(*e <= self.tolerance)) {
                failures += 1;
            }
        }
        let overall = worst.iter().copied().fold(0.0, f64::max);
        Ok(OracleReport {
            suite: self.name(),
            cases: self.points,
            failures,
            worst: overall,
            tolerance: self.tolerance,
            elapsed: start.elapsed(),
            detail: format!(
                "worst relative error: rk4 {:.2e}, outputs {:.2e}, constraints {:.2e}",
                worst[0], worst[1], worst[2]
            ),
        })
    }
}

/// Convergence order of the RK4 step on a tumbling rigid body: the endpoint
/// error against a very fine reference must shrink by a factor in
/// `[ratio_min, ratio_max]` each time the step is halved.
#[derive(Debug, Clone)]
pub struct IntegratorOrderOracle {
    pub duration: f64,
    pub steps: Vec<f64>,
    pub reference_step: f64,
    pub ratio_min: f64,
    pub ratio_max: f64,
}

impl Default for IntegratorOrderOracle {
    fn default() -> Self {
        Self {
            duration: 0.4,
            steps: vec![0.04, 0.02, 0.01, 0.005],
            reference_step: 1e-6,
            ratio_min: 12.0,
            ratio_max: 20.0,
        }
    }
}

impl IntegratorOrderOracle {
    /// Body with three distinct principal moments, equal rotor speeds (no
    /// net torque) and a fast spin off every principal axis.
    pub fn tumbling_body() -> Result<(Gtmr, State)> {
        let mut params = GtmrParams::coplanar_quadrotor();
        params.inertia = Mat3::from_diagonal(&Vec3::new(0.012, 0.02, 0.03));
        let model = Gtmr::new(params)?;
        let mut state = model.hover_state(Vec3::zeros(), crate::quat::Quaternion::identity())?;
        state.omega = Vec3::new(4.0, 0.5, -2.5);
        state.v = Vec3::new(0.3, -0.2, 0.5);
        Ok((model, state))
    }

    fn integrate(model: &Gtmr, x0: &State, duration: f64, h: f64) -> State {
        let steps = (duration / h).round() as usize;
        let rate = ControlRate::zeros(x0.rotor_count());
        (0..steps).fold(x0.clone(), |x, _| model.rk4_step(&x, &rate, h))
    }

    /// Error ratios between consecutive step sizes.
    pub fn ratios(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let (model, x0) = Self::tumbling_body()?;
        let reference = Self::integrate(&model, &x0, self.duration, self.reference_step);
        let errors: Vec<f64> = self
            .steps
            .iter()
            .map(|&h| reference.local_difference(&Self::integrate(&model, &x0, self.duration, h)).norm())
            .collect();
        let ratios = errors.windows(2).map(|w| w[0] / w[1]).collect();
        Ok((errors, ratios))
    }
}

impl OracleSuite for IntegratorOrderOracle {
    fn name(&self) -> &'static str {
        "integrator_order"
    }

    fn description(&self) -> &'static str {
        "RK4 error ratio per step halving on a tumbling body"
    }

    fn run(&self, _config: &OracleConfig) -> Result<OracleReport> {
        let start = Instant::now();
        let (errors, ratios) = self.ratios()?;
        let failures = ratios
            .iter()
            .filter(|r| !(**r >= self.ratio_min && **r <= self.ratio_max))
            .count();
        let worst = ratios
            .iter()
            .copied()
            .max_by(|a, b| (a - 16.0).abs().total_cmp(&(b - 16.0).abs()))
            .unwrap_or(f64::NAN);
        let errors: Vec<String> = errors.iter().map(|e| format!("{e:.2e}")).collect();
        let ratios_txt: Vec<String> = ratios.iter().map(|r| format!("{r:.2}")).collect();
        Ok(OracleReport {
            suite: self.name(),
            cases: ratios.len(),
            failures,
            worst,
            tolerance: self.ratio_max,
            elapsed: start.elapsed(),
            detail: format!(
                "errors [{}], ratios [{}], accepted [{}, {}]",
                errors.join(", "),
                ratios_txt.join(", "),
                self.ratio_min,
                self.ratio_max
            ),
        })
    }
}

/// Condensed QP optimum against the equality-constrained sparse QP.
#[derive(Debug, Clone)]
pub struct CondensingOracle {
    pub instances: usize,
    pub max_horizon: usize,
    pub tolerance: f64,
}

impl Default for CondensingOracle {
    fn default() -> Self {
        Self {
            instances: 50,
            max_horizon: 3,
            tolerance: 1e-8,
        }
    }
}

impl OracleSuite for CondensingOracle {
    fn name(&self) -> &'static str {
        "condensing"
    }

    fn description(&self) -> &'static str {
        "condensed vs sparse optimal values"
    }

    fn run(&self, config: &OracleConfig) -> Result<OracleReport> {
        let start = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let opts = QpOptions::default();
        let (mut failures, mut worst) = (0, 0.0f64);
        for _ in 0..self.instances {
            let horizon = rng.random_range(1..=self.max_horizon);
            let constrained = rng.random_bool(0.75);
            let problem = random_shooting_problem(&mut rng, horizon, 4, 2, 1, constrained);
            let dense = DualActiveSet.solve(&condense(&problem)?.qp, None, &opts)?;
            let sparse = DualActiveSet.solve(&sparse_qp(&problem)?, None, &opts)?;
            if dense.status != QpStatus::Optimal || sparse.status != QpStatus::Optimal {
                failures += 1;
                continue;
            }
            let gap = (dense.objective - sparse.objective).abs();
            worst = worst.max(gap);
            if gap > self.tolerance {
                failures += 1;
            }
        }
        Ok(OracleReport {
            suite: self.name(),
            cases: self.instances,
            failures,
            worst,
            tolerance: self.tolerance,
            elapsed: start.elapsed(),
            detail: format!("max |Δf| {worst:.2e}"),
        })
    }
}
