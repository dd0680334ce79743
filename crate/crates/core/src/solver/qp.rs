//! Dense convex QP data types, the backend trait and KKT checking.
//!
//! ```text
//!     minimize    ½ zᵀ H z + gᵀ z + offset
//!     subject to  A_eq z = b_eq
//!                 lower ≤ A_in z ≤ upper
//!                 z_lower ≤ z ≤ z_upper
//! ```
//!
//! Infinite bounds are allowed and mean "no constraint".

use std::fmt::Debug;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::registry::Registry;
use crate::{Error, Result};

use super::active_set::DualActiveSet;
use super::enumeration::Enumeration;

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub hessian: DMatrix<f64>,
    pub gradient: DVector<f64>,
    pub offset: f64,
    pub eq_matrix: DMatrix<f64>,
    pub eq_rhs: DVector<f64>,
    pub ineq_matrix: DMatrix<f64>,
    pub ineq_lower: DVector<f64>,
    pub ineq_upper: DVector<f64>,
    pub var_lower: DVector<f64>,
    pub var_upper: DVector<f64>,
}

impl QpProblem {
    /// Unconstrained problem; add constraint groups with the `with_*` builders.
    pub fn new(hessian: DMatrix<f64>, gradient: DVector<f64>) -> Self {
        let n = gradient.len();
        Self {
            hessian,
            gradient,
            offset: 0.0,
            eq_matrix: DMatrix::zeros(0, n),
            eq_rhs: DVector::zeros(0),
            ineq_matrix: DMatrix::zeros(0, n),
            ineq_lower: DVector::zeros(0),
            ineq_upper: DVector::zeros(0),
            var_lower: DVector::from_element(n, f64::NEG_INFINITY),
            var_upper: DVector::from_element(n, f64::INFINITY),
        }
    }

    pub fn with_equalities(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.eq_matrix = a;
        self.eq_rhs = b;
        self
    }

    pub fn with_inequalities(mut self, a: DMatrix<f64>, lower: DVector<f64>, upper: DVector<f64>) -> Self {
        self.ineq_matrix = a;
        self.ineq_lower = lower;
        self.ineq_upper = upper;
        self
    }

    pub fn with_bounds(mut self, lower: DVector<f64>, upper: DVector<f64>) -> Self {
        self.var_lower = lower;
        self.var_upper = upper;
        self
    }

    pub fn num_vars(&self) -> usize {
        self.gradient.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        let dim = |what: &str| Err(Error::Dimension(format!("QP {what}")));
        if self.hessian.shape() != (n, n) {
            return dim("hessian");
        }
        if self.eq_matrix.ncols() != n || self.eq_matrix.nrows() != self.eq_rhs.len() {
            return dim("equality block");
        }
        let mi = self.ineq_matrix.nrows();
        if self.ineq_matrix.ncols() != n || self.ineq_lower.len() != mi || self.ineq_upper.len() != mi {
            return dim("inequality block");
        }
        if self.var_lower.len() != n || self.var_upper.len() != n {
            return dim("bounds");
        }
        let finite = |m: &DMatrix<f64>| m.iter().all(|v| v.is_finite());
        if !finite(&self.hessian) || !self.gradient.iter().all(|v| v.is_finite()) || !finite(&self.eq_matrix) || !finite(&self.ineq_matrix) {
            return Err(Error::NonFinite("QP data".into()));
        }
        Ok(())
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.hessian * z)) + self.gradient.dot(z) + self.offset
    }

    /// Largest violation of any constraint at `z`.
    pub fn max_violation(&self, z: &DVector<f64>) -> f64 {
        let mut worst: f64 = 0.0;
        let eq = &self.eq_matrix * z - &self.eq_rhs;
        worst = worst.max(eq.amax());
        let az = &self.ineq_matrix * z;
        for i in 0..az.len() {
            worst = worst.max(self.ineq_lower[i] - az[i]).max(az[i] - self.ineq_upper[i]);
        }
        for j in 0..z.len() {
            worst = worst.max(self.var_lower[j] - z[j]).max(z[j] - self.var_upper[j]);
        }
        worst
    }
}

/// One side of one constraint; the ordering is the deterministic tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ConstraintRef {
    Equality(usize),
    RowLower(usize),
    RowUpper(usize),
    VarLower(usize),
    VarUpper(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QpStatus {
    Optimal,
    MaxIter,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub z: DVector<f64>,
    pub objective: f64,
    pub eq_multipliers: DVector<f64>,
    /// Signed: positive when the lower side is active, negative for the upper side.
    pub row_multipliers: DVector<f64>,
    /// Signed like `row_multipliers`.
    pub var_multipliers: DVector<f64>,
    pub active_set: Vec<ConstraintRef>,
    pub status: QpStatus,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct KktReport {
    pub stationarity: f64,
    pub primal_infeasibility: f64,
    pub dual_infeasibility: f64,
    pub complementarity: f64,
}

impl KktReport {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal_infeasibility)
            .max(self.dual_infeasibility)
            .max(self.complementarity)
    }
}

/// KKT residuals of `sol` for `qp` in the ∞-norm.
pub fn kkt_residual(qp: &QpProblem, sol: &QpSolution) -> KktReport {
    let z = &sol.z;
    let mut grad = &qp.hessian * z + &qp.gradient;
    grad -= qp.eq_matrix.transpose() * &sol.eq_multipliers;
    grad -= qp.ineq_matrix.transpose() * &sol.row_multipliers;
    grad -= &sol.var_multipliers;

    let mut dual: f64 = 0.0;
    let mut comp: f64 = 0.0;
    let mut side = |y: f64, value: f64, lower: f64, upper: f64| {
        if y > 0.0 {
            if lower.is_finite() {
                comp = comp.max((y * (value - lower)).abs());
            } else {
                dual = dual.max(y);
            }
        } else if y < 0.0 {
            if upper.is_finite() {
                comp = comp.max((y * (upper - value)).abs());
            } else {
                dual = dual.max(-y);
            }
        }
    };
    let az = &qp.ineq_matrix * z;
    for i in 0..az.len() {
        side(sol.row_multipliers[i], az[i], qp.ineq_lower[i], qp.ineq_upper[i]);
    }
    for j in 0..z.len() {
        side(sol.var_multipliers[j], z[j], qp.var_lower[j], qp.var_upper[j]);
    }
    KktReport {
        stationarity: grad.amax(),
        primal_infeasibility: qp.max_violation(z),
        dual_infeasibility: dual,
        complementarity: comp,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpOptions {
    pub max_iter: usize,
    /// Absolute feasibility tolerance on each constraint.
    pub feasibility_tol: f64,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            feasibility_tol: 1e-10,
        }
    }
}

/// A dense QP backend. Implementations must be deterministic: identical
/// problems and warm starts give bit-identical solutions.
pub trait QpSolver: Debug + Send + Sync {
    fn name(&self) -> &'static str;

    fn solve(&self, qp: &QpProblem, warm_start: Option<&[ConstraintRef]>, options: &QpOptions) -> Result<QpSolution>;
}

pub fn qp_solvers() -> Registry<dyn QpSolver> {
    let mut reg: Registry<dyn QpSolver> = Registry::new("QP solver");
    reg.register("active_set", || Arc::new(DualActiveSet));
    reg.register("enumeration", || Arc::new(Enumeration::default()));
    reg
}

/// Solves with the default active-set backend and options.
pub fn solve_qp(qp: &QpProblem, warm_start: Option<&[ConstraintRef]>) -> Result<QpSolution> {
    DualActiveSet.solve(qp, warm_start, &QpOptions::default())
}
