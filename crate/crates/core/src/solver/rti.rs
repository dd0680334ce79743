//! One real-time iteration per control step: linearize the OCP along the
//! stored trajectory, condense, solve the QP warm-started from the previous
//! active set, and take the full step.

use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::active_set::DualActiveSet;
use super::condense::{
    condense, expand, ActiveTag, ConstraintGroup, CondensedQp, RowTag, ShootingProblem, Stage, StageDynamics,
    StageRows, VarTag,
};
use super::qp::{kkt_residual, QpOptions, QpSolution, QpSolver, QpStatus};
use crate::model::{local_dim, ControlRate, State, LOC_P, LOC_U};
use crate::ocp::{self, OcpConfig, OcpInstance};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct RtiOptions {
    pub qp: QpOptions,
    pub solver: Arc<dyn QpSolver>,
    /// Lower limit on the slope used when linearizing `s²`, m. Without it
    /// a zero slack has zero first-order effect on the obstacle row.
    pub slack_slope_floor: f64,
    /// Levenberg shift relative to the mean Hessian diagonal.
    pub regularization: f64,
}

impl RtiOptions {
    /// A cold start over the full horizon can change a few hundred active
    /// constraints before it settles.
    pub const QP_MAX_ITER: usize = 1000;
}

impl Default for RtiOptions {
    fn default() -> Self {
        Self {
            qp: QpOptions {
                max_iter: Self::QP_MAX_ITER,
                ..QpOptions::default()
            },
            solver: Arc::new(DualActiveSet),
            slack_slope_floor: 0.1,
            regularization: 1e-8,
        }
    }
}

/// Trajectory and active set carried between control steps.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RtiWorkspace {
    /// Nodes `0 … N`.
    pub states: Vec<State>,
    /// Inputs `0 … N−1`.
    pub rates: Vec<ControlRate>,
    /// Per node, one slack per obstacle.
    pub slacks: Vec<DVector<f64>>,
    pub active_set: Vec<ActiveTag>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub qp_iterations: usize,
    pub kkt_residual: f64,
    pub solve_us: u64,
    pub status: QpStatus,
    /// The returned rate did not come from an accepted QP solution.
    pub degraded: bool,
    /// The field-of-view group was removed to recover feasibility.
    pub fov_relaxed: bool,
    /// Stages whose field-of-view rows were skipped because the target was
    /// behind the camera along the trajectory.
    pub fov_stages_dropped: usize,
}

impl RtiWorkspace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_initialized(&self) -> bool {
        !self.states.is_empty()
    }

    pub fn horizon(&self) -> usize {
        self.rates.len()
    }

    /// Initial guess: forward simulation from `x0` with zero rates and zero
    /// slacks, so the dynamics hold exactly.
    pub fn cold_start(cfg: &OcpConfig, x0: &State, obstacles: usize) -> Self {
        let n = cfg.rotor_count();
        let zero = ControlRate::zeros(n);
        let mut states = Vec::with_capacity(cfg.horizon + 1);
        states.push(x0.clone());
        for k in 0..cfg.horizon {
            let next = cfg.model.rk4_step(&states[k], &zero, cfg.step);
            states.push(next);
        }
        Self {
            states,
            rates: vec![zero; cfg.horizon],
            slacks: vec![DVector::zeros(obstacles); cfg.horizon + 1],
            active_set: Vec::new(),
        }
    }

    fn matches(&self, cfg: &OcpConfig, obstacles: usize) -> bool {
        self.states.len() == cfg.horizon + 1
            && self.rates.len() == cfg.horizon
            && self.slacks.len() == cfg.horizon + 1
            && self.slacks.iter().all(|s| s.len() == obstacles)
            && self.states.iter().all(|s| s.rotor_count() == cfg.rotor_count())
    }
}

/// Shifts the trajectory one node forward, duplicating the last node and
/// input, and moves the active-set tags with it.
pub fn shift_warm_start(ws: &mut RtiWorkspace) {
    if !ws.is_initialized() {
        return;
    }
    let horizon = ws.horizon();
    ws.states.remove(0);
    ws.states.push(ws.states.last().expect("nonempty trajectory").clone());
    if !ws.rates.is_empty() {
        ws.rates.remove(0);
        ws.rates.push(ws.rates.last().cloned().unwrap_or_else(|| ControlRate::zeros(0)));
    }
    ws.slacks.remove(0);
    ws.slacks.push(ws.slacks.last().expect("nonempty slacks").clone());

    let mut tags = Vec::with_capacity(ws.active_set.len() + 8);
    for tag in &ws.active_set {
        let stage = tag.stage();
        let last = match tag {
            ActiveTag::Var(VarTag::Control { .. }, _) => horizon.saturating_sub(1),
            _ => horizon,
        };
        if stage > 0 {
            tags.push(tag.with_stage(stage - 1));
        }
        if stage == last {
            tags.push(*tag);
        }
    }
    tags.sort();
    tags.dedup();
    ws.active_set = tags;
}

/// Which constraint groups to include when linearizing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearizeOptions {
    pub field_of_view: bool,
    pub slack_slope_floor: f64,
}

impl Default for LinearizeOptions {
    fn default() -> Self {
        Self {
            field_of_view: true,
            slack_slope_floor: 0.1,
        }
    }
}

/// Gauss-Newton model of the OCP around the workspace trajectory. Returns
/// the shooting problem and the number of stages whose field-of-view rows
/// were skipped.
pub fn linearize(
    cfg: &OcpConfig,
    inst: &OcpInstance,
    ws: &RtiWorkspace,
    options: &LinearizeOptions,
) -> Result<(ShootingProblem, usize)> {
    let horizon = cfg.horizon;
    let n = cfg.rotor_count();
    let nx = local_dim(n);
    let ns = inst.obstacles.len();
    if !ws.matches(cfg, ns) {
        return Err(Error::Dimension("workspace does not match the problem".into()));
    }
    if !ws.states.iter().all(State::is_finite) || !ws.rates.iter().all(|r| r.0.iter().all(|v| v.is_finite())) {
        return Err(Error::NonFinite("trajectory".into()));
    }
    let params = cfg.model.params();
    let weights = cfg.weights.output_diagonal();
    let fov_rows = cfg.camera.fov_rows();
    let mut fov_dropped = 0;

    let mut stages = Vec::with_capacity(horizon + 1);
    for k in 0..=horizon {
        let x = &ws.states[k];
        let target = &inst.targets[k];
        let reference = &inst.references[k];

        let dynamics = if k < horizon {
            let (next, a, b) = cfg.model.local_step_sensitivity(x, &ws.rates[k], cfg.step);
            Some(StageDynamics {
                a,
                b,
                defect: ws.states[k + 1].local_difference(&next),
            })
        } else {
            None
        };

        let (y, jac) = ocp::output_jacobian(cfg, x, target, &reference.attitude)?;
        let residual = ocp::output_residual(&y, reference);
        let weighted_jac = DMatrix::from_fn(jac.nrows(), nx, |i, j| weights[i] * jac[(i, j)]);
        let state_hessian = jac.transpose() * &weighted_jac * 2.0;
        let weighted_res = DVector::from_fn(residual.len(), |i, _| weights[i] * residual[i]);
        let state_gradient = jac.transpose() * &weighted_res * 2.0;
        let constant = residual.dot(&weighted_res);

        let s_bar = &ws.slacks[k];
        let q_s = cfg.weights.slack;
        let mut rows = StageRows::empty(nx, ns);
        if k > 0 {
            for i in 0..n {
                let mut cx = vec![0.0; nx];
                cx[LOC_U + i] = 1.0;
                rows.push(
                    RowTag { group: ConstraintGroup::Speed, stage: k, index: i },
                    &cx,
                    &vec![0.0; ns],
                    params.speed_min[i] - x.speeds[i],
                    params.speed_max[i] - x.speeds[i],
                );
            }
            if options.field_of_view {
                let (cp, d_cp) = ocp::camera_point_jacobian(&cfg.camera, x, &target.position);
                if cp.depth() > 0.0 {
                    for (index, row) in fov_rows.iter().enumerate() {
                        let cx = row.coeff.transpose() * &d_cp;
                        rows.push(
                            RowTag { group: ConstraintGroup::FieldOfView, stage: k, index },
                            cx.as_slice(),
                            &vec![0.0; ns],
                            -row.eval(&cp),
                            f64::INFINITY,
                        );
                    }
                } else {
                    log::debug!("stage {k}: target behind camera (depth {:.3}), field-of-view rows skipped", cp.depth());
                    fov_dropped += 1;
                }
            }
        }
        let obstacle_res = ocp::obstacle_constraints(&x.p, &inst.obstacles, k, s_bar.as_slice());
        for (j, obs) in inst.obstacles.iter().enumerate() {
            let mut cx = vec![0.0; nx];
            let grad = ocp::obstacle_gradient(&x.p, &obs.positions[k]);
            cx[LOC_P..LOC_P + 3].copy_from_slice(grad.as_slice());
            let mut cs = vec![0.0; ns];
            cs[j] = 2.0 * s_bar[j].max(options.slack_slope_floor);
            rows.push(
                RowTag { group: ConstraintGroup::Obstacle, stage: k, index: j },
                &cx,
                &cs,
                -obstacle_res[j],
                f64::INFINITY,
            );
        }

        let (control_lower, control_upper, control_hessian, control_gradient) = if k < horizon {
            let r = &ws.rates[k].0;
            (
                DVector::from_column_slice(&params.accel_min) - r,
                DVector::from_column_slice(&params.accel_max) - r,
                DMatrix::zeros(n, n),
                DVector::zeros(n),
            )
        } else {
            (DVector::zeros(0), DVector::zeros(0), DMatrix::zeros(0, 0), DVector::zeros(0))
        };

        stages.push(Stage {
            dynamics,
            state_hessian,
            state_gradient,
            constant,
            control_hessian,
            control_gradient,
            control_lower,
            control_upper,
            slack_hessian: DVector::from_element(ns, 2.0 * q_s),
            slack_gradient: s_bar * (2.0 * q_s),
            slack_lower: -s_bar,
            slack_upper: DVector::from_element(ns, f64::INFINITY),
            rows,
        });
    }
    let problem = ShootingProblem {
        initial_deviation: ws.states[0].local_difference(&inst.x0),
        stages,
    };
    Ok((problem, fov_dropped))
}

struct Attempt {
    problem: ShootingProblem,
    condensed: CondensedQp,
    solution: QpSolution,
    fov_dropped: usize,
}

fn attempt(
    cfg: &OcpConfig,
    inst: &OcpInstance,
    ws: &RtiWorkspace,
    options: &RtiOptions,
    field_of_view: bool,
) -> Result<Attempt> {
    let lin = LinearizeOptions {
        field_of_view,
        slack_slope_floor: options.slack_slope_floor,
    };
    let (problem, fov_dropped) = linearize(cfg, inst, ws, &lin)?;
    let mut condensed = condense(&problem)?;
    let nz = condensed.qp.num_vars();
    let shift = options.regularization * condensed.qp.hessian.trace() / nz as f64;
    for i in 0..nz {
        condensed.qp.hessian[(i, i)] += shift;
    }
    let warm = condensed.refs_from_tags(&ws.active_set);
    let warm = (!warm.is_empty()).then_some(warm.as_slice());
    let solution = options.solver.solve(&condensed.qp, warm, &options.qp)?;
    Ok(Attempt {
        problem,
        condensed,
        solution,
        fov_dropped,
    })
}

/// The previous first input, clipped so both the rate box and the speed box
/// over one shooting step hold.
fn fallback_rate(cfg: &OcpConfig, ws: &RtiWorkspace, x0: &State) -> ControlRate {
    let p = cfg.model.params();
    let n = cfg.rotor_count();
    let prev = ws.rates.first().cloned().unwrap_or_else(|| ControlRate::zeros(n));
    ControlRate(DVector::from_fn(n, |i, _| {
        let lo = p.accel_min[i].max((p.speed_min[i] - x0.speeds[i]) / cfg.step);
        let hi = p.accel_max[i].min((p.speed_max[i] - x0.speeds[i]) / cfg.step);
        prev.0[i].clamp(lo.min(0.0), hi.max(0.0))
    }))
}

/// Runs one real-time iteration and returns the first rate of the updated
/// trajectory. A cold start is performed if the workspace is empty or does
/// not match the problem dimensions.
pub fn rti_step(
    cfg: &OcpConfig,
    ws: &mut RtiWorkspace,
    inst: &OcpInstance,
    options: &RtiOptions,
) -> Result<(ControlRate, StepStats)> {
    let start = Instant::now();
    if !ws.matches(cfg, inst.obstacles.len()) {
        *ws = RtiWorkspace::cold_start(cfg, &inst.x0, inst.obstacles.len());
    }

    let mut fov_relaxed = false;
    let mut result = attempt(cfg, inst, ws, options, true)?;
    let has_fov = result
        .condensed
        .row_tags
        .iter()
        .any(|t| t.group == ConstraintGroup::FieldOfView);
    if result.solution.status == QpStatus::Infeasible && has_fov {
        log::debug!("QP infeasible with field-of-view rows; retrying without them");
        fov_relaxed = true;
        result = attempt(cfg, inst, ws, options, false)?;
    }

    let Attempt {
        problem,
        condensed,
        solution,
        fov_dropped,
    } = result;
    let kkt = kkt_residual(&condensed.qp, &solution).max();
    let mut stats = StepStats {
        qp_iterations: solution.iterations,
        kkt_residual: kkt,
        solve_us: 0,
        status: solution.status,
        degraded: fov_relaxed,
        fov_relaxed,
        fov_stages_dropped: fov_dropped,
    };

    if solution.status != QpStatus::Optimal {
        log::warn!("QP returned {:?}; holding the previous input", solution.status);
        let rate = fallback_rate(cfg, ws, &inst.x0);
        ws.states[0] = inst.x0.clone();
        ws.active_set.clear();
        stats.degraded = true;
        stats.solve_us = start.elapsed().as_micros() as u64;
        return Ok((rate, stats));
    }

    let deviations = expand(&problem, &condensed, &solution.z);
    let controls = condensed.controls(&solution.z);
    let slacks = condensed.slacks(&solution.z);
    for (k, state) in ws.states.iter_mut().enumerate() {
        *state = if k == 0 { inst.x0.clone() } else { state.retract(&deviations[k]) };
    }
    for (rate, delta) in ws.rates.iter_mut().zip(&controls) {
        rate.0 += delta;
    }
    for (s, delta) in ws.slacks.iter_mut().zip(&slacks) {
        *s += delta;
        s.apply(|v| *v = v.max(0.0));
    }
    ws.active_set = condensed.tags_from_refs(&solution.active_set);

    stats.solve_us = start.elapsed().as_micros() as u64;
    Ok((ws.rates[0].clone(), stats))
}

#[cfg(test)]
mod tests;
