//! Brute-force reference QP solver.
//!
//! Enumerates every candidate working set of inequality sides, solves the
//! resulting KKT system with a dense LU factorization, and keeps the best
//! primal and dual feasible point. Exponential in the number of constraints,
//! so only usable for small problems; it exists to check the active-set
//! backend.

use nalgebra::{DMatrix, DVector};

use super::qp::{ConstraintRef, QpOptions, QpProblem, QpSolution, QpSolver, QpStatus};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct Enumeration {
    /// Refuse problems with more inequality sides than this.
    pub max_sides: usize,
}

impl Default for Enumeration {
    fn default() -> Self {
        Self { max_sides: 16 }
    }
}

#[derive(Clone, Copy)]
struct Side {
    id: ConstraintRef,
    row: usize,
    sign: f64,
    rhs: f64,
}

impl Enumeration {
    fn sides(qp: &QpProblem) -> Vec<Side> {
        let mut sides = Vec::new();
        let mi = qp.ineq_matrix.nrows();
        for i in 0..mi {
            if qp.ineq_lower[i].is_finite() {
                sides.push(Side { id: ConstraintRef::RowLower(i), row: i, sign: 1.0, rhs: qp.ineq_lower[i] });
            }
        }
        for i in 0..mi {
            if qp.ineq_upper[i].is_finite() {
                sides.push(Side { id: ConstraintRef::RowUpper(i), row: i, sign: -1.0, rhs: -qp.ineq_upper[i] });
            }
        }
        for k in 0..qp.num_vars() {
            if qp.var_lower[k].is_finite() {
                sides.push(Side { id: ConstraintRef::VarLower(k), row: mi + k, sign: 1.0, rhs: qp.var_lower[k] });
            }
        }
        for k in 0..qp.num_vars() {
            if qp.var_upper[k].is_finite() {
                sides.push(Side { id: ConstraintRef::VarUpper(k), row: mi + k, sign: -1.0, rhs: -qp.var_upper[k] });
            }
        }
        sides
    }

    fn normal(qp: &QpProblem, side: &Side) -> DVector<f64> {
        let mi = qp.ineq_matrix.nrows();
        if side.row < mi {
            qp.ineq_matrix.row(side.row).transpose() * side.sign
        } else {
            let mut e = DVector::zeros(qp.num_vars());
            e[side.row - mi] = side.sign;
            e
        }
    }
}

impl QpSolver for Enumeration {
    fn name(&self) -> &'static str {
        "enumeration"
    }

    fn solve(&self, qp: &QpProblem, _warm_start: Option<&[ConstraintRef]>, options: &QpOptions) -> Result<QpSolution> {
        qp.validate()?;
        let n = qp.num_vars();
        let me = qp.eq_rhs.len();
        let sides = Self::sides(qp);
        if sides.len() > self.max_sides {
            return Err(Error::Qp(format!(
                "enumeration limited to {} constraint sides, got {}",
                self.max_sides,
                sides.len()
            )));
        }
        let normals: Vec<DVector<f64>> = sides.iter().map(|s| Self::normal(qp, s)).collect();
        let tol = options.feasibility_tol.max(1e-9);

        let mut best: Option<QpSolution> = None;
        let mut checked = 0usize;
        for mask in 0u64..(1u64 << sides.len()) {
            let chosen: Vec<usize> = (0..sides.len()).filter(|&i| mask & (1 << i) != 0).collect();
            // Opposite sides of the same row cannot both be active unless
            // the bounds coincide; the KKT system will be singular then anyway.
            if me + chosen.len() > n {
                continue;
            }
            checked += 1;
            let m = me + chosen.len();
            let mut kkt = DMatrix::zeros(n + m, n + m);
            let mut rhs = DVector::zeros(n + m);
            kkt.view_mut((0, 0), (n, n)).copy_from(&qp.hessian);
            rhs.rows_mut(0, n).copy_from(&(-&qp.gradient));
            for i in 0..me {
                let a = qp.eq_matrix.row(i);
                for c in 0..n {
                    kkt[(n + i, c)] = a[c];
                    kkt[(c, n + i)] = -a[c];
                }
                rhs[n + i] = qp.eq_rhs[i];
            }
            for (slot, &s) in chosen.iter().enumerate() {
                let a = &normals[s];
                for c in 0..n {
                    kkt[(n + me + slot, c)] = a[c];
                    kkt[(c, n + me + slot)] = -a[c];
                }
                rhs[n + me + slot] = sides[s].rhs;
            }
            let Some(sol) = kkt.lu().solve(&rhs) else {
                continue;
            };
            if !sol.iter().all(|v| v.is_finite()) {
                continue;
            }
            let z = sol.rows(0, n).into_owned();
            let mult = sol.rows(n, m);
            if chosen.iter().enumerate().any(|(slot, _)| mult[me + slot] < -tol) {
                continue;
            }
            if qp.max_violation(&z) > tol {
                continue;
            }
            let objective = qp.objective(&z);
            if best.as_ref().is_some_and(|b| b.objective <= objective) {
                continue;
            }
            let mut row_mult = DVector::zeros(qp.ineq_matrix.nrows());
            let mut var_mult = DVector::zeros(n);
            let mi = qp.ineq_matrix.nrows();
            for (slot, &s) in chosen.iter().enumerate() {
                let side = sides[s];
                let y = side.sign * mult[me + slot];
                if side.row < mi {
                    row_mult[side.row] += y;
                } else {
                    var_mult[side.row - mi] += y;
                }
            }
            let mut active_set: Vec<ConstraintRef> = (0..me).map(ConstraintRef::Equality).collect();
            active_set.extend(chosen.iter().map(|&s| sides[s].id));
            active_set.sort();
            best = Some(QpSolution {
                z,
                objective,
                eq_multipliers: mult.rows(0, me).into_owned(),
                row_multipliers: row_mult,
                var_multipliers: var_mult,
                active_set,
                status: QpStatus::Optimal,
                iterations: 0,
            });
        }

        Ok(match best {
            Some(mut sol) => {
                sol.iterations = checked;
                sol
            }
            None => QpSolution {
                z: DVector::zeros(n),
                objective: f64::INFINITY,
                eq_multipliers: DVector::zeros(me),
                row_multipliers: DVector::zeros(qp.ineq_matrix.nrows()),
                var_multipliers: DVector::zeros(n),
                active_set: Vec::new(),
                status: QpStatus::Infeasible,
                iterations: checked,
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::super::active_set::DualActiveSet;
    use super::super::qp::kkt_residual;
    use super::*;
    use nalgebra::{dmatrix, dvector};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn scalar_lower_bound() {
        let qp = QpProblem::new(dmatrix![1.0], dvector![0.0]).with_bounds(dvector![1.0], dvector![f64::INFINITY]);
        let sol = Enumeration::default().solve(&qp, None, &QpOptions::default()).unwrap();
        assert!((sol.z[0] - 1.0).abs() < 1e-14);
        assert!((sol.var_multipliers[0] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn refuses_large_problems() {
        let n = 9;
        let qp = QpProblem::new(DMatrix::identity(n, n), DVector::zeros(n))
            .with_bounds(DVector::from_element(n, -1.0), DVector::from_element(n, 1.0));
        assert!(Enumeration::default().solve(&qp, None, &QpOptions::default()).is_err());
    }

    fn random_qp(rng: &mut ChaCha8Rng) -> QpProblem {
        let n = rng.random_range(2..=4);
        let mi = rng.random_range(0..=3);
        let me = rng.random_range(0..=1);
        let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let h = &m * m.transpose() + DMatrix::identity(n, n) * 0.1;
        let g = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
        // Constraints are built around a known feasible point.
        let z0 = DVector::from_fn(n, |_, _| rng.random_range(-0.5..0.5));
        let a = DMatrix::from_fn(mi, n, |_, _| rng.random_range(-1.0..1.0));
        let az = &a * &z0;
        let lower = DVector::from_fn(mi, |i, _| az[i] - rng.random_range(0.0..1.0));
        let upper = DVector::from_fn(mi, |i, _| {
            if rng.random_bool(0.5) { az[i] + rng.random_range(0.0..1.0) } else { f64::INFINITY }
        });
        let aeq = DMatrix::from_fn(me, n, |_, _| rng.random_range(-1.0..1.0));
        let beq = &aeq * &z0;
        let vl = DVector::from_fn(n, |i, _| if rng.random_bool(0.5) { z0[i] - 1.0 } else { f64::NEG_INFINITY });
        let vu = DVector::from_fn(n, |i, _| if rng.random_bool(0.3) { z0[i] + 0.3 } else { f64::INFINITY });
        QpProblem::new(h, g)
            .with_equalities(aeq, beq)
            .with_inequalities(a, lower, upper)
            .with_bounds(vl, vu)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(300))]

        #[test]
        fn active_set_matches_enumeration(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let qp = random_qp(&mut rng);
            let opts = QpOptions::default();
            let reference = Enumeration::default().solve(&qp, None, &opts).unwrap();
            let sol = DualActiveSet.solve(&qp, None, &opts).unwrap();
            prop_assert_eq!(reference.status, QpStatus::Optimal);
            prop_assert_eq!(sol.status, QpStatus::Optimal);
            prop_assert!((&sol.z - &reference.z).amax() <= 1e-8,
                "active set {:?} vs enumeration {:?}", sol.z, reference.z);
            prop_assert!(kkt_residual(&qp, &sol).max() < 1e-8);

            let warm = DualActiveSet.solve(&qp, Some(&sol.active_set), &opts).unwrap();
            prop_assert!(warm.iterations <= 1);
            prop_assert!((&warm.z - &sol.z).amax() <= 1e-9);
        }
    }
}
