//! Condensing of a linearized multiple-shooting problem into a dense QP.
//!
//! Stage `k` has local state deviation `δx_k`, control increment `Δr_k`
//! (for `k < N`) and slack increment `Δs_k`. The deviations follow
//!
//! ```text
//!     δx_0     = given
//!     δx_{k+1} = A_k δx_k + B_k Δr_k + d_k
//! ```
//!
//! so every `δx_k` is an affine function `G_k z + h_k` of the dense vector
//! `z = [Δr_0 … Δr_{N−1}, Δs_0 … Δs_N]`. Only the first `k · n_u` columns
//! of `G_k` are nonzero, which the products below exploit.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::qp::{ConstraintRef, QpProblem};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ConstraintGroup {
    Speed,
    FieldOfView,
    Obstacle,
}

/// Stable identity of one constraint row, independent of its position in
/// the assembled QP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RowTag {
    pub group: ConstraintGroup,
    pub stage: usize,
    pub index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum VarTag {
    Control { stage: usize, index: usize },
    Slack { stage: usize, index: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Side {
    Lower,
    Upper,
}

/// An active constraint side in stage-relative form, so it can be carried
/// across control steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ActiveTag {
    Row(RowTag, Side),
    Var(VarTag, Side),
}

impl ActiveTag {
    pub fn stage(&self) -> usize {
        match self {
            ActiveTag::Row(t, _) => t.stage,
            ActiveTag::Var(VarTag::Control { stage, .. } | VarTag::Slack { stage, .. }, _) => *stage,
        }
    }

    pub fn with_stage(&self, stage: usize) -> Self {
        match *self {
            ActiveTag::Row(t, s) => ActiveTag::Row(RowTag { stage, ..t }, s),
            ActiveTag::Var(VarTag::Control { index, .. }, s) => ActiveTag::Var(VarTag::Control { stage, index }, s),
            ActiveTag::Var(VarTag::Slack { index, .. }, s) => ActiveTag::Var(VarTag::Slack { stage, index }, s),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageDynamics {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub defect: DVector<f64>,
}

/// General rows `lower ≤ C_x δx_k + C_s Δs_k ≤ upper`.
#[derive(Debug, Clone, PartialEq)]
pub struct StageRows {
    pub state: DMatrix<f64>,
    pub slack: DMatrix<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    pub tags: Vec<RowTag>,
}

impl StageRows {
    pub fn empty(nx: usize, ns: usize) -> Self {
        Self {
            state: DMatrix::zeros(0, nx),
            slack: DMatrix::zeros(0, ns),
            lower: DVector::zeros(0),
            upper: DVector::zeros(0),
            tags: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    /// Appends one row.
    pub fn push(&mut self, tag: RowTag, state: &[f64], slack: &[f64], lower: f64, upper: f64) {
        let m = self.len();
        let state_cols = self.state.ncols();
        let slack_cols = self.slack.ncols();
        self.state = self.state.clone().insert_row(m, 0.0);
        self.state.row_mut(m).copy_from_slice(&state[..state_cols]);
        self.slack = self.slack.clone().insert_row(m, 0.0);
        self.slack.row_mut(m).copy_from_slice(&slack[..slack_cols]);
        self.lower = self.lower.clone().push(lower);
        self.upper = self.upper.clone().push(upper);
        self.tags.push(tag);
    }

    /// Keeps only the rows whose tag satisfies `keep`.
    pub fn retain(&self, keep: impl Fn(&RowTag) -> bool) -> Self {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep(&self.tags[i])).collect();
        Self {
            state: self.state.select_rows(idx.iter()),
            slack: self.slack.select_rows(idx.iter()),
            lower: self.lower.select_rows(idx.iter()),
            upper: self.upper.select_rows(idx.iter()),
            tags: idx.iter().map(|&i| self.tags[i]).collect(),
        }
    }
}

/// Quadratic model and constraints of one shooting node. The cost is
/// `½ δxᵀ Q δx + qᵀ δx + c + ½ Δrᵀ R Δr + rᵀ Δr + Σ ½ S_j Δs_j² + σ_j Δs_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    /// `None` at the terminal node.
    pub dynamics: Option<StageDynamics>,
    pub state_hessian: DMatrix<f64>,
    pub state_gradient: DVector<f64>,
    pub constant: f64,
    pub control_hessian: DMatrix<f64>,
    pub control_gradient: DVector<f64>,
    pub control_lower: DVector<f64>,
    pub control_upper: DVector<f64>,
    pub slack_hessian: DVector<f64>,
    pub slack_gradient: DVector<f64>,
    pub slack_lower: DVector<f64>,
    pub slack_upper: DVector<f64>,
    pub rows: StageRows,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShootingProblem {
    pub initial_deviation: DVector<f64>,
    pub stages: Vec<Stage>,
}

impl ShootingProblem {
    pub fn horizon(&self) -> usize {
        self.stages.len() - 1
    }

    pub fn state_dim(&self) -> usize {
        self.initial_deviation.len()
    }

    pub fn control_dim(&self) -> usize {
        self.stages[0].control_gradient.len()
    }

    pub fn slack_dim(&self) -> usize {
        self.stages[0].slack_gradient.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Dimension(msg));
        if self.stages.len() < 2 {
            return bad("shooting problem needs at least two nodes".into());
        }
        let (nx, nu, ns) = (self.state_dim(), self.control_dim(), self.slack_dim());
        let last = self.horizon();
        for (k, st) in self.stages.iter().enumerate() {
            let expected_nu = if k < last { nu } else { 0 };
            match (&st.dynamics, k < last) {
                (Some(d), true) => {
                    if d.a.shape() != (nx, nx) || d.b.shape() != (nx, nu) || d.defect.len() != nx {
                        return bad(format!("stage {k} dynamics"));
                    }
                }
                (None, false) => {}
                _ => return bad(format!("stage {k} dynamics presence")),
            }
            if st.state_hessian.shape() != (nx, nx) || st.state_gradient.len() != nx {
                return bad(format!("stage {k} state cost"));
            }
            if st.control_hessian.shape() != (expected_nu, expected_nu)
                || st.control_gradient.len() != expected_nu
                || st.control_lower.len() != expected_nu
                || st.control_upper.len() != expected_nu
            {
                return bad(format!("stage {k} control block"));
            }
            if st.slack_hessian.len() != ns
                || st.slack_gradient.len() != ns
                || st.slack_lower.len() != ns
                || st.slack_upper.len() != ns
            {
                return bad(format!("stage {k} slack block"));
            }
            let m = st.rows.len();
            if st.rows.state.shape() != (m, nx)
                || st.rows.slack.shape() != (m, ns)
                || st.rows.lower.len() != m
                || st.rows.upper.len() != m
            {
                return bad(format!("stage {k} rows"));
            }
        }
        Ok(())
    }

    /// Forward simulation of the linear dynamics for given increments.
    pub fn propagate(&self, controls: &[DVector<f64>]) -> Vec<DVector<f64>> {
        let mut out = Vec::with_capacity(self.stages.len());
        let mut x = self.initial_deviation.clone();
        for (k, st) in self.stages.iter().enumerate() {
            out.push(x.clone());
            if let Some(d) = &st.dynamics {
                x = &d.a * &x + &d.b * &controls[k] + &d.defect;
            }
        }
        out
    }
}

/// Dense QP in `z = [Δr, Δs]` with the bookkeeping to map constraint
/// indices back to stage tags.
#[derive(Debug, Clone)]
pub struct CondensedQp {
    pub qp: QpProblem,
    pub row_tags: Vec<RowTag>,
    pub var_tags: Vec<VarTag>,
    pub horizon: usize,
    pub control_dim: usize,
    pub slack_dim: usize,
}

impl CondensedQp {
    pub fn control_offset(&self, stage: usize) -> usize {
        stage * self.control_dim
    }

    pub fn slack_offset(&self, stage: usize) -> usize {
        self.horizon * self.control_dim + stage * self.slack_dim
    }

    pub fn controls(&self, z: &DVector<f64>) -> Vec<DVector<f64>> {
        (0..self.horizon)
            .map(|k| z.rows(self.control_offset(k), self.control_dim).into_owned())
            .collect()
    }

    pub fn slacks(&self, z: &DVector<f64>) -> Vec<DVector<f64>> {
        (0..=self.horizon)
            .map(|k| z.rows(self.slack_offset(k), self.slack_dim).into_owned())
            .collect()
    }

    /// Translates stage tags into constraint references of this QP; tags
    /// with no matching constraint are skipped.
    pub fn refs_from_tags(&self, tags: &[ActiveTag]) -> Vec<ConstraintRef> {
        let rows: HashMap<RowTag, usize> = self.row_tags.iter().enumerate().map(|(i, t)| (*t, i)).collect();
        let vars: HashMap<VarTag, usize> = self.var_tags.iter().enumerate().map(|(i, t)| (*t, i)).collect();
        let mut out = Vec::with_capacity(tags.len());
        for tag in tags {
            let r = match *tag {
                ActiveTag::Row(t, side) => rows.get(&t).and_then(|&i| match side {
                    Side::Lower if self.qp.ineq_lower[i].is_finite() => Some(ConstraintRef::RowLower(i)),
                    Side::Upper if self.qp.ineq_upper[i].is_finite() => Some(ConstraintRef::RowUpper(i)),
                    _ => None,
                }),
                ActiveTag::Var(t, side) => vars.get(&t).and_then(|&i| match side {
                    Side::Lower if self.qp.var_lower[i].is_finite() => Some(ConstraintRef::VarLower(i)),
                    Side::Upper if self.qp.var_upper[i].is_finite() => Some(ConstraintRef::VarUpper(i)),
                    _ => None,
                }),
            };
            out.extend(r);
        }
        out
    }

    pub fn tags_from_refs(&self, refs: &[ConstraintRef]) -> Vec<ActiveTag> {
        refs.iter()
            .filter_map(|r| match *r {
                ConstraintRef::RowLower(i) => Some(ActiveTag::Row(self.row_tags[i], Side::Lower)),
                ConstraintRef::RowUpper(i) => Some(ActiveTag::Row(self.row_tags[i], Side::Upper)),
                ConstraintRef::VarLower(i) => Some(ActiveTag::Var(self.var_tags[i], Side::Lower)),
                ConstraintRef::VarUpper(i) => Some(ActiveTag::Var(self.var_tags[i], Side::Upper)),
                ConstraintRef::Equality(_) => None,
            })
            .collect()
    }
}

/// Eliminates the state deviations.
pub fn condense(problem: &ShootingProblem) -> Result<CondensedQp> {
    problem.validate()?;
    let horizon = problem.horizon();
    let (nx, nu, ns) = (problem.state_dim(), problem.control_dim(), problem.slack_dim());
    let n_ctrl = horizon * nu;
    let nz = n_ctrl + (horizon + 1) * ns;

    let mut hessian = DMatrix::zeros(nz, nz);
    let mut gradient = DVector::zeros(nz);
    let mut offset = 0.0;
    let mut var_lower = DVector::from_element(nz, f64::NEG_INFINITY);
    let mut var_upper = DVector::from_element(nz, f64::INFINITY);
    let mut var_tags = Vec::with_capacity(nz);
    for k in 0..horizon {
        var_tags.extend((0..nu).map(|index| VarTag::Control { stage: k, index }));
    }
    for k in 0..=horizon {
        var_tags.extend((0..ns).map(|index| VarTag::Slack { stage: k, index }));
    }

    let total_rows: usize = problem.stages.iter().map(|s| s.rows.len()).sum();
    let mut ineq = DMatrix::zeros(total_rows, nz);
    let mut lower = DVector::zeros(total_rows);
    let mut upper = DVector::zeros(total_rows);
    let mut row_tags = Vec::with_capacity(total_rows);

    let mut g_mat = DMatrix::<f64>::zeros(nx, n_ctrl);
    let mut h_vec = problem.initial_deviation.clone();
    let mut row = 0;
    for (k, st) in problem.stages.iter().enumerate() {
        let width = k * nu;
        let gk = g_mat.columns(0, width);

        // State cost.
        let qh = &st.state_hessian * &h_vec + &st.state_gradient;
        offset += 0.5 * h_vec.dot(&(&st.state_hessian * &h_vec)) + st.state_gradient.dot(&h_vec) + st.constant;
        if width > 0 {
            let qg = &st.state_hessian * gk;
            let block = gk.transpose() * qg;
            let mut view = hessian.view_mut((0, 0), (width, width));
            view += block;
            let mut gv = gradient.rows_mut(0, width);
            gv += gk.transpose() * &qh;
        }

        // Control cost and bounds.
        if k < horizon {
            let c = k * nu;
            let mut view = hessian.view_mut((c, c), (nu, nu));
            view += &st.control_hessian;
            let mut gv = gradient.rows_mut(c, nu);
            gv += &st.control_gradient;
            var_lower.rows_mut(c, nu).copy_from(&st.control_lower);
            var_upper.rows_mut(c, nu).copy_from(&st.control_upper);
        }

        // Slack cost and bounds.
        let s0 = n_ctrl + k * ns;
        for j in 0..ns {
            hessian[(s0 + j, s0 + j)] += st.slack_hessian[j];
            gradient[s0 + j] += st.slack_gradient[j];
        }
        var_lower.rows_mut(s0, ns).copy_from(&st.slack_lower);
        var_upper.rows_mut(s0, ns).copy_from(&st.slack_upper);

        // General rows.
        let m = st.rows.len();
        if m > 0 {
            let shift = &st.rows.state * &h_vec;
            if width > 0 {
                ineq.view_mut((row, 0), (m, width)).copy_from(&(&st.rows.state * gk));
            }
            ineq.view_mut((row, s0), (m, ns)).copy_from(&st.rows.slack);
            for i in 0..m {
                lower[row + i] = st.rows.lower[i] - shift[i];
                upper[row + i] = st.rows.upper[i] - shift[i];
            }
            row_tags.extend_from_slice(&st.rows.tags);
            row += m;
        }

        // Propagate the affine map to the next node.
        if let Some(d) = &st.dynamics {
            let mut next = DMatrix::zeros(nx, n_ctrl);
            if width > 0 {
                next.view_mut((0, 0), (nx, width)).copy_from(&(&d.a * gk));
            }
            next.view_mut((0, width), (nx, nu)).copy_from(&d.b);
            g_mat = next;
            h_vec = &d.a * &h_vec + &d.defect;
        }
    }

    // Symmetrize against round-off in the block products.
    let hessian = (&hessian + hessian.transpose()) * 0.5;
    let mut qp = QpProblem::new(hessian, gradient)
        .with_inequalities(ineq, lower, upper)
        .with_bounds(var_lower, var_upper);
    qp.offset = offset;
    Ok(CondensedQp {
        qp,
        row_tags,
        var_tags,
        horizon,
        control_dim: nu,
        slack_dim: ns,
    })
}

/// Recovers the state deviations `δx_0 … δx_N` from a condensed solution.
pub fn expand(problem: &ShootingProblem, condensed: &CondensedQp, z: &DVector<f64>) -> Vec<DVector<f64>> {
    problem.propagate(&condensed.controls(z))
}

/// The same problem with the state deviations kept as variables, ordered
/// `[δx_0 … δx_N, Δr_0 … Δr_{N−1}, Δs_0 … Δs_N]`, and the dynamics as
/// equality constraints. Used as a reference for [`condense`].
pub fn sparse_qp(problem: &ShootingProblem) -> Result<QpProblem> {
    problem.validate()?;
    let horizon = problem.horizon();
    let (nx, nu, ns) = (problem.state_dim(), problem.control_dim(), problem.slack_dim());
    let n_state = (horizon + 1) * nx;
    let n_ctrl = horizon * nu;
    let nz = n_state + n_ctrl + (horizon + 1) * ns;
    let xo = |k: usize| k * nx;
    let uo = |k: usize| n_state + k * nu;
    let so = |k: usize| n_state + n_ctrl + k * ns;

    let mut hessian = DMatrix::zeros(nz, nz);
    let mut gradient = DVector::zeros(nz);
    let mut offset = 0.0;
    let mut var_lower = DVector::from_element(nz, f64::NEG_INFINITY);
    let mut var_upper = DVector::from_element(nz, f64::INFINITY);
    let n_eq = (horizon + 1) * nx;
    let mut eq = DMatrix::zeros(n_eq, nz);
    let mut eq_rhs = DVector::zeros(n_eq);
    let total_rows: usize = problem.stages.iter().map(|s| s.rows.len()).sum();
    let mut ineq = DMatrix::zeros(total_rows, nz);
    let mut lower = DVector::zeros(total_rows);
    let mut upper = DVector::zeros(total_rows);

    eq.view_mut((0, 0), (nx, nx)).fill_with_identity();
    eq_rhs.rows_mut(0, nx).copy_from(&problem.initial_deviation);
    let mut row = 0;
    for (k, st) in problem.stages.iter().enumerate() {
        hessian.view_mut((xo(k), xo(k)), (nx, nx)).copy_from(&st.state_hessian);
        gradient.rows_mut(xo(k), nx).copy_from(&st.state_gradient);
        offset += st.constant;
        if k < horizon {
            hessian.view_mut((uo(k), uo(k)), (nu, nu)).copy_from(&st.control_hessian);
            gradient.rows_mut(uo(k), nu).copy_from(&st.control_gradient);
            var_lower.rows_mut(uo(k), nu).copy_from(&st.control_lower);
            var_upper.rows_mut(uo(k), nu).copy_from(&st.control_upper);
        }
        for j in 0..ns {
            hessian[(so(k) + j, so(k) + j)] = st.slack_hessian[j];
            gradient[so(k) + j] = st.slack_gradient[j];
        }
        var_lower.rows_mut(so(k), ns).copy_from(&st.slack_lower);
        var_upper.rows_mut(so(k), ns).copy_from(&st.slack_upper);

        let m = st.rows.len();
        ineq.view_mut((row, xo(k)), (m, nx)).copy_from(&st.rows.state);
        ineq.view_mut((row, so(k)), (m, ns)).copy_from(&st.rows.slack);
        lower.rows_mut(row, m).copy_from(&st.rows.lower);
        upper.rows_mut(row, m).copy_from(&st.rows.upper);
        row += m;

        if let Some(d) = &st.dynamics {
            // δx_{k+1} − A δx_k − B Δr_k = d_k
            let r0 = (k + 1) * nx;
            eq.view_mut((r0, xo(k + 1)), (nx, nx)).fill_with_identity();
            eq.view_mut((r0, xo(k)), (nx, nx)).copy_from(&(-&d.a));
            eq.view_mut((r0, uo(k)), (nx, nu)).copy_from(&(-&d.b));
            eq_rhs.rows_mut(r0, nx).copy_from(&d.defect);
        }
    }
    let mut qp = QpProblem::new(hessian, gradient)
        .with_equalities(eq, eq_rhs)
        .with_inequalities(ineq, lower, upper)
        .with_bounds(var_lower, var_upper);
    qp.offset = offset;
    Ok(qp)
}

#[cfg(test)]
mod tests {
    use super::super::active_set::DualActiveSet;
    use super::super::qp::{solve_qp, QpOptions, QpSolver, QpStatus};
    use super::*;
    use crate::verify::random_shooting_problem;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_stage_hessian_matches_hand_assembly() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut problem = random_shooting_problem(&mut rng, 1, 3, 2, 0, false);
        let b = problem.stages[0].dynamics.as_ref().unwrap().b.clone();
        let w = problem.stages[1].state_hessian.clone();
        let r = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        problem.stages[0].control_hessian = r.clone();
        let cqp = condense(&problem).unwrap();
        let expected = b.transpose() * &w * &b + r;
        assert_relative_eq!(cqp.qp.hessian, expected, epsilon = 1e-12);
    }

    #[test]
    fn unconstrained_single_stage_matches_least_squares() {
        // Stage-1 cost ‖C δx_1 + e‖² + ‖D Δr_0‖², solved via SVD.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut problem = random_shooting_problem(&mut rng, 1, 4, 2, 0, false);
        let c = DMatrix::from_fn(5, 4, |_, _| rng.random_range(-1.0..1.0));
        let e = DVector::from_fn(5, |_, _| rng.random_range(-1.0..1.0));
        let dmat = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 0.7]));
        for st in problem.stages.iter_mut() {
            st.rows = StageRows::empty(4, 0);
            st.control_lower.fill(f64::NEG_INFINITY);
            st.control_upper.fill(f64::INFINITY);
            st.state_hessian.fill(0.0);
            st.state_gradient.fill(0.0);
        }
        problem.stages[1].state_hessian = c.transpose() * &c * 2.0;
        problem.stages[1].state_gradient = c.transpose() * &e * 2.0;
        problem.stages[0].control_hessian = dmat.transpose() * &dmat * 2.0;
        problem.stages[0].control_gradient = DVector::zeros(2);

        let cqp = condense(&problem).unwrap();
        let sol = solve_qp(&cqp.qp, None).unwrap();

        let dynamics = problem.stages[0].dynamics.as_ref().unwrap();
        let h1 = &dynamics.a * &problem.initial_deviation + &dynamics.defect;
        let mut stacked = DMatrix::zeros(7, 2);
        stacked.view_mut((0, 0), (5, 2)).copy_from(&(&c * &dynamics.b));
        stacked.view_mut((5, 0), (2, 2)).copy_from(&dmat);
        let mut rhs = DVector::zeros(7);
        rhs.rows_mut(0, 5).copy_from(&(-(&c * h1 + &e)));
        let ls = stacked.svd(true, true).solve(&rhs, 1e-14).unwrap();
        assert_relative_eq!(sol.z, ls, epsilon = 1e-10);
    }

    #[test]
    fn condensed_and_sparse_optima_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let opts = QpOptions::default();
        for _ in 0..50 {
            let horizon = rng.random_range(1..=3);
            let problem = random_shooting_problem(&mut rng, horizon, 4, 2, 1, true);
            let cqp = condense(&problem).unwrap();
            let dense = DualActiveSet.solve(&cqp.qp, None, &opts).unwrap();
            let sparse = DualActiveSet.solve(&sparse_qp(&problem).unwrap(), None, &opts).unwrap();
            assert_eq!(dense.status, QpStatus::Optimal);
            assert_eq!(sparse.status, QpStatus::Optimal);
            assert!(
                (dense.objective - sparse.objective).abs() <= 1e-8,
                "{} vs {}",
                dense.objective,
                sparse.objective
            );
        }
    }

    #[test]
    fn expand_reproduces_objective_and_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let problem = random_shooting_problem(&mut rng, 3, 4, 2, 1, true);
        let cqp = condense(&problem).unwrap();
        let z = DVector::from_fn(cqp.qp.num_vars(), |_, _| rng.random_range(-1.0..1.0));
        let xs = expand(&problem, &cqp, &z);
        let controls = cqp.controls(&z);
        let slacks = cqp.slacks(&z);
        let mut direct = 0.0;
        let mut rows = Vec::new();
        for (k, st) in problem.stages.iter().enumerate() {
            let x = &xs[k];
            direct += 0.5 * x.dot(&(&st.state_hessian * x)) + st.state_gradient.dot(x) + st.constant;
            if k < cqp.horizon {
                let u = &controls[k];
                direct += 0.5 * u.dot(&(&st.control_hessian * u)) + st.control_gradient.dot(u);
            }
            for j in 0..cqp.slack_dim {
                let s = slacks[k][j];
                direct += 0.5 * st.slack_hessian[j] * s * s + st.slack_gradient[j] * s;
            }
            rows.extend((&st.rows.state * x + &st.rows.slack * &slacks[k]).iter().copied());
        }
        assert_relative_eq!(cqp.qp.objective(&z), direct, epsilon = 1e-9, max_relative = 1e-12);
        // Condensed rows differ from the stage rows by the zero-increment
        // value folded into the bounds.
        let condensed_rows = &cqp.qp.ineq_matrix * &z;
        let free = problem.propagate(&vec![DVector::zeros(cqp.control_dim); cqp.horizon]);
        let shifts: Vec<f64> = problem
            .stages
            .iter()
            .zip(&free)
            .flat_map(|(st, h)| (&st.rows.state * h).iter().copied().collect::<Vec<_>>())
            .collect();
        assert_eq!(rows.len(), condensed_rows.len());
        for i in 0..rows.len() {
            assert_relative_eq!(condensed_rows[i] + shifts[i], rows[i], epsilon = 1e-10);
        }
    }

    #[test]
    fn tags_round_trip_through_refs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let problem = random_shooting_problem(&mut rng, 3, 4, 2, 1, true);
        let cqp = condense(&problem).unwrap();
        let sol = solve_qp(&cqp.qp, None).unwrap();
        let tags = cqp.tags_from_refs(&sol.active_set);
        let mut back = cqp.refs_from_tags(&tags);
        back.sort();
        assert_eq!(back, sol.active_set);
    }

    #[test]
    fn dimension_errors_are_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut problem = random_shooting_problem(&mut rng, 2, 4, 2, 1, true);
        problem.stages[1].control_gradient = DVector::zeros(3);
        assert!(matches!(condense(&problem), Err(Error::Dimension(_))));
    }
}
