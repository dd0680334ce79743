//! Dual active-set method for strictly convex QPs (Goldfarb–Idnani).
//!
//! Starts from the unconstrained minimizer and repeatedly adds the most
//! violated constraint, dropping active constraints whose multipliers would
//! turn negative. The factorization `J = L⁻ᵀ Q` and the triangular `R` of the
//! active normals are updated with Givens rotations, so each add/drop costs
//! O(n²).
//!
//! A warm start installs the supplied working set directly: its
//! equality-constrained minimizer is computed, negative multipliers are
//! dropped until the point is dual feasible, and the method resumes from
//! there. If the supplied set is optimal no iteration is taken.

use nalgebra::{DMatrix, DVector};

use super::qp::{ConstraintRef, QpOptions, QpProblem, QpSolution, QpSolver, QpStatus};
use crate::{Error, Result};

/// Relative size of the null-space component below which a normal is
/// considered linearly dependent on the active set.
const DEPENDENCE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, Default)]
pub struct DualActiveSet;

impl QpSolver for DualActiveSet {
    fn name(&self) -> &'static str {
        "active_set"
    }

    fn solve(&self, qp: &QpProblem, warm_start: Option<&[ConstraintRef]>, options: &QpOptions) -> Result<QpSolution> {
        qp.validate()?;
        let mut ws = Workspace::new(qp, options)?;
        let status = ws.run(warm_start);
        Ok(ws.into_solution(status))
    }
}

#[derive(Debug, Clone, Copy)]
enum Normal {
    Eq(usize),
    Row(usize, f64),
    Var(usize, f64),
}

#[derive(Debug, Clone, Copy)]
struct Side {
    id: ConstraintRef,
    normal: Normal,
    rhs: f64,
}

impl Side {
    fn is_equality(&self) -> bool {
        matches!(self.normal, Normal::Eq(_))
    }
}

struct Workspace<'a> {
    qp: &'a QpProblem,
    options: &'a QpOptions,
    n: usize,
    sides: Vec<Side>,
    j: DMatrix<f64>,
    r: DMatrix<f64>,
    active: Vec<usize>,
    u: Vec<f64>,
    x: DVector<f64>,
    iterations: usize,
}

fn givens(a: f64, b: f64) -> (f64, f64, f64) {
    let rho = a.hypot(b);
    if rho == 0.0 {
        (1.0, 0.0, 0.0)
    } else {
        (a / rho, b / rho, rho)
    }
}

fn rotate_columns(m: &mut DMatrix<f64>, i: usize, k: usize, c: f64, s: f64) {
    for row in 0..m.nrows() {
        let (a, b) = (m[(row, i)], m[(row, k)]);
        m[(row, i)] = c * a + s * b;
        m[(row, k)] = -s * a + c * b;
    }
}

impl<'a> Workspace<'a> {
    fn new(qp: &'a QpProblem, options: &'a QpOptions) -> Result<Self> {
        let n = qp.num_vars();
        let chol = qp.hessian.clone().cholesky().ok_or_else(|| {
            Error::Qp("Hessian is not positive definite".into())
        })?;
        let l = chol.l();
        debug_assert!(
            (0..n).all(|i| l[(i, i)] > 0.0),
            "Cholesky pivots certify a positive definite Hessian"
        );
        // J = L⁻ᵀ: solve Lᵀ J = I.
        let j = l
            .transpose()
            .solve_upper_triangular(&DMatrix::identity(n, n))
            .ok_or_else(|| Error::Qp("singular Cholesky factor".into()))?;

        let mut sides = Vec::new();
        for i in 0..qp.eq_rhs.len() {
            sides.push(Side { id: ConstraintRef::Equality(i), normal: Normal::Eq(i), rhs: qp.eq_rhs[i] });
        }
        for i in 0..qp.ineq_lower.len() {
            if qp.ineq_lower[i].is_finite() {
                sides.push(Side { id: ConstraintRef::RowLower(i), normal: Normal::Row(i, 1.0), rhs: qp.ineq_lower[i] });
            }
        }
        for i in 0..qp.ineq_upper.len() {
            if qp.ineq_upper[i].is_finite() {
                sides.push(Side { id: ConstraintRef::RowUpper(i), normal: Normal::Row(i, -1.0), rhs: -qp.ineq_upper[i] });
            }
        }
        for k in 0..n {
            if qp.var_lower[k].is_finite() {
                sides.push(Side { id: ConstraintRef::VarLower(k), normal: Normal::Var(k, 1.0), rhs: qp.var_lower[k] });
            }
        }
        for k in 0..n {
            if qp.var_upper[k].is_finite() {
                sides.push(Side { id: ConstraintRef::VarUpper(k), normal: Normal::Var(k, -1.0), rhs: -qp.var_upper[k] });
            }
        }

        // Unconstrained minimizer x = -J Jᵀ g.
        let x = -(&j * (j.transpose() * &qp.gradient));
        Ok(Self {
            qp,
            options,
            n,
            sides,
            j,
            r: DMatrix::zeros(n, n),
            active: Vec::new(),
            u: Vec::new(),
            x,
            iterations: 0,
        })
    }

    fn normal_dot(&self, s: usize, x: &DVector<f64>) -> f64 {
        match self.sides[s].normal {
            Normal::Eq(i) => self.qp.eq_matrix.row(i).dot(&x.transpose()),
            Normal::Row(i, sign) => sign * self.qp.ineq_matrix.row(i).dot(&x.transpose()),
            Normal::Var(k, sign) => sign * x[k],
        }
    }

    fn normal_norm(&self, s: usize) -> f64 {
        match self.sides[s].normal {
            Normal::Eq(i) => self.qp.eq_matrix.row(i).norm(),
            Normal::Row(i, _) => self.qp.ineq_matrix.row(i).norm(),
            Normal::Var(..) => 1.0,
        }
    }

    /// `d = Jᵀ n_s`.
    fn jt_normal(&self, s: usize) -> DVector<f64> {
        match self.sides[s].normal {
            Normal::Eq(i) => self.j.tr_mul(&self.qp.eq_matrix.row(i).transpose()),
            Normal::Row(i, sign) => self.j.tr_mul(&self.qp.ineq_matrix.row(i).transpose()) * sign,
            Normal::Var(k, sign) => self.j.row(k).transpose() * sign,
        }
    }

    fn q(&self) -> usize {
        self.active.len()
    }

    /// Solves `R r = rhs` over the leading q×q block.
    fn solve_r(&self, rhs: &[f64]) -> Vec<f64> {
        let q = rhs.len();
        let mut out = rhs.to_vec();
        for i in (0..q).rev() {
            let mut acc = out[i];
            for k in i + 1..q {
                acc -= self.r[(i, k)] * out[k];
            }
            out[i] = acc / self.r[(i, i)];
        }
        out
    }

    /// Solves `Rᵀ y = rhs` over the leading q×q block.
    fn solve_rt(&self, rhs: &[f64]) -> Vec<f64> {
        let q = rhs.len();
        let mut out = rhs.to_vec();
        for i in 0..q {
            let mut acc = out[i];
            for k in 0..i {
                acc -= self.r[(k, i)] * out[k];
            }
            out[i] = acc / self.r[(i, i)];
        }
        out
    }

    fn null_component_small(&self, d: &DVector<f64>) -> bool {
        let q = self.q();
        let tail = d.rows(q, self.n - q).norm();
        tail <= DEPENDENCE_TOL * d.norm().max(f64::MIN_POSITIVE)
    }

    /// Appends side `s` (with `d = Jᵀ n_s`) to the factorization.
    fn factor_add(&mut self, s: usize, mut d: DVector<f64>) {
        let q = self.q();
        for k in (q + 1..self.n).rev() {
            if d[k] == 0.0 {
                continue;
            }
            let (c, sn, rho) = givens(d[k - 1], d[k]);
            d[k - 1] = rho;
            d[k] = 0.0;
            rotate_columns(&mut self.j, k - 1, k, c, sn);
        }
        for i in 0..=q {
            self.r[(i, q)] = d[i];
        }
        self.active.push(s);
    }

    /// Removes the active constraint at position `pos` and its multiplier.
    fn factor_drop(&mut self, pos: usize) {
        let q = self.q();
        for col in pos..q - 1 {
            for row in 0..q {
                self.r[(row, col)] = self.r[(row, col + 1)];
            }
        }
        for row in 0..q {
            self.r[(row, q - 1)] = 0.0;
        }
        for k in pos..q - 1 {
            let (c, sn, rho) = givens(self.r[(k, k)], self.r[(k + 1, k)]);
            self.r[(k, k)] = rho;
            self.r[(k + 1, k)] = 0.0;
            for col in k + 1..q - 1 {
                let (a, b) = (self.r[(k, col)], self.r[(k + 1, col)]);
                self.r[(k, col)] = c * a + sn * b;
                self.r[(k + 1, col)] = -sn * a + c * b;
            }
            rotate_columns(&mut self.j, k, k + 1, c, sn);
        }
        self.active.remove(pos);
        self.u.remove(pos);
    }

    /// Minimizer and multipliers of the QP with the active set as equalities.
    fn equality_point(&mut self) {
        let q = self.q();
        let b: Vec<f64> = self.active.iter().map(|&s| self.sides[s].rhs).collect();
        let y = self.solve_rt(&b);
        let j1 = self.j.columns(0, q);
        let j2 = self.j.columns(q, self.n - q);
        let mut x = j1 * DVector::from_vec(y.clone());
        x -= &j2 * (j2.tr_mul(&self.qp.gradient));
        let jg = j1.tr_mul(&self.qp.gradient);
        let rhs: Vec<f64> = (0..q).map(|i| y[i] + jg[i]).collect();
        self.u = self.solve_r(&rhs);
        self.x = x;
    }

    fn slack(&self, s: usize) -> f64 {
        self.normal_dot(s, &self.x) - self.sides[s].rhs
    }

    fn tolerance(&self, s: usize) -> f64 {
        self.options.feasibility_tol * self.sides[s].rhs.abs().max(1.0)
    }

    fn run(&mut self, warm_start: Option<&[ConstraintRef]>) -> QpStatus {
        // Equalities first; they are never dropped.
        for s in 0..self.sides.len() {
            if !self.sides[s].is_equality() {
                break;
            }
            let d = self.jt_normal(s);
            if self.null_component_small(&d) {
                if self.slack(s).abs() > self.tolerance(s) * 1e2 {
                    return QpStatus::Infeasible;
                }
                continue;
            }
            self.factor_add(s, d);
            self.u.push(0.0);
            self.equality_point();
        }

        if let Some(warm) = warm_start {
            if self.install_warm_start(warm) {
                return QpStatus::MaxIter;
            }
        }

        let mut scratch_ax = DVector::zeros(self.qp.ineq_matrix.nrows());
        loop {
            // Most violated inactive inequality; ties resolved by side order.
            self.qp.ineq_matrix.mul_to(&self.x, &mut scratch_ax);
            let mut worst: Option<(usize, f64)> = None;
            for s in 0..self.sides.len() {
                let side = self.sides[s];
                if side.is_equality() || self.active.contains(&s) {
                    continue;
                }
                let value = match side.normal {
                    Normal::Row(i, sign) => sign * scratch_ax[i],
                    Normal::Var(k, sign) => sign * self.x[k],
                    Normal::Eq(_) => unreachable!(),
                };
                let slack = value - side.rhs;
                if slack < -self.tolerance(s) {
                    let scaled = slack / self.normal_norm(s);
                    if worst.is_none_or(|(_, w)| scaled < w) {
                        worst = Some((s, scaled));
                    }
                }
            }
            let Some((p, _)) = worst else {
                return QpStatus::Optimal;
            };
            match self.add_constraint(p) {
                Ok(()) => {}
                Err(status) => return status,
            }
        }
    }

    /// Returns `true` when the iteration budget ran out.
    fn install_warm_start(&mut self, warm: &[ConstraintRef]) -> bool {
        let mut wanted: Vec<ConstraintRef> = warm.to_vec();
        wanted.sort();
        wanted.dedup();
        for id in wanted {
            let Some(s) = self.sides.iter().position(|side| side.id == id) else {
                continue;
            };
            if self.sides[s].is_equality() || self.active.contains(&s) {
                continue;
            }
            let d = self.jt_normal(s);
            if self.null_component_small(&d) {
                continue;
            }
            self.factor_add(s, d);
            self.u.push(0.0);
        }
        self.equality_point();
        loop {
            let mut most_negative: Option<(usize, f64)> = None;
            for (pos, &s) in self.active.iter().enumerate() {
                if self.sides[s].is_equality() {
                    continue;
                }
                if self.u[pos] < 0.0 && most_negative.is_none_or(|(_, m)| self.u[pos] < m) {
                    most_negative = Some((pos, self.u[pos]));
                }
            }
            let Some((pos, _)) = most_negative else {
                return false;
            };
            if self.iterations >= self.options.max_iter {
                return true;
            }
            self.factor_drop(pos);
            self.iterations += 1;
            self.equality_point();
        }
    }

    /// Moves to the minimizer with side `p` added, taking partial steps
    /// (drops) as needed.
    fn add_constraint(&mut self, p: usize) -> std::result::Result<(), QpStatus> {
        let mut u_p = 0.0;
        loop {
            if self.iterations >= self.options.max_iter {
                return Err(QpStatus::MaxIter);
            }
            let q = self.q();
            let d = self.jt_normal(p);
            let j2 = self.j.columns(q, self.n - q);
            let z = &j2 * d.rows(q, self.n - q);
            let r = self.solve_r(&d.as_slice()[..q]);

            // Dual step length limited by inequality multipliers reaching zero.
            let mut t1 = f64::INFINITY;
            let mut block = None;
            for pos in 0..q {
                if self.sides[self.active[pos]].is_equality() || r[pos] <= 0.0 {
                    continue;
                }
                let ratio = self.u[pos] / r[pos];
                if ratio < t1 {
                    t1 = ratio;
                    block = Some(pos);
                }
            }
            let dependent = self.null_component_small(&d);
            let slack = self.slack(p);
            // zᵀ n_p = ‖d₂‖² with d₂ the null-space part of d.
            let t2 = if dependent {
                f64::INFINITY
            } else {
                -slack / d.rows(q, self.n - q).norm_squared()
            };
            let t = t1.min(t2);
            if !t.is_finite() {
                return Err(QpStatus::Infeasible);
            }
            for pos in 0..q {
                self.u[pos] -= t * r[pos];
            }
            u_p += t;
            self.iterations += 1;
            if t2.is_finite() {
                self.x += &z * t;
            }
            if t2 <= t1 {
                self.factor_add(p, d);
                self.u.push(u_p);
                return Ok(());
            }
            let pos = block.expect("finite partial step has a blocking constraint");
            self.u[pos] = 0.0;
            self.factor_drop(pos);
        }
    }

    fn into_solution(self, status: QpStatus) -> QpSolution {
        let qp = self.qp;
        let n = self.n;
        let mut eq_mult = DVector::zeros(qp.eq_rhs.len());
        let mut row_mult = DVector::zeros(qp.ineq_matrix.nrows());
        let mut var_mult = DVector::zeros(n);
        let mut active_set = Vec::with_capacity(self.active.len());
        for (pos, &s) in self.active.iter().enumerate() {
            let side = self.sides[s];
            let u = self.u[pos];
            match side.normal {
                Normal::Eq(i) => eq_mult[i] = u,
                Normal::Row(i, sign) => row_mult[i] += sign * u,
                Normal::Var(k, sign) => var_mult[k] += sign * u,
            }
            active_set.push(side.id);
        }
        active_set.sort();
        QpSolution {
            objective: qp.objective(&self.x),
            z: self.x,
            eq_multipliers: eq_mult,
            row_multipliers: row_mult,
            var_multipliers: var_mult,
            active_set,
            status,
            iterations: self.iterations,
        }
    }
}
