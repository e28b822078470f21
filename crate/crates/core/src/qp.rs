//! Strictly convex inequality-constrained QP:
//!
//! ```text
//! minimize    ½ wᵀ Q w + cᵀ w
//! subject to  M w <= r
//! ```
//!
//! [`solve_qp`] is a dual active-set method (Goldfarb–Idnani). It starts from
//! the unconstrained minimizer and adds violated rows one at a time, so no
//! feasible starting point is needed and an empty feasible set is detected
//! exactly. [`enumerate_oracle`] is an exhaustive active-set enumeration used
//! as ground truth in tests.

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, check_finite, Error, Result};
use crate::linalg::{self, row_rank, select_entries, select_rows};

/// Symmetry tolerance for `Q`.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Scale-relative tolerance for primal feasibility and activity.
pub const FEAS_TOL: f64 = 1e-9;
/// Relative singular-value threshold for rank decisions.
pub const RANK_TOL: f64 = 1e-10;
/// Largest constraint count accepted by the enumeration oracle.
pub const ORACLE_MAX_ROWS: usize = 16;

#[derive(Clone, Debug, PartialEq)]
pub struct QpProblem {
    q: DMatrix<f64>,
    c: DVector<f64>,
    m: DMatrix<f64>,
    r: DVector<f64>,
}

impl QpProblem {
    pub fn new(q: DMatrix<f64>, c: DVector<f64>, m: DMatrix<f64>, r: DVector<f64>) -> Result<Self> {
        let p = c.len();
        check_dim("QP quadratic rows", p, q.nrows())?;
        check_dim("QP quadratic cols", p, q.ncols())?;
        check_dim("QP constraint cols", p, m.ncols())?;
        check_dim("QP right-hand side", m.nrows(), r.len())?;
        if q.iter().chain(m.iter()).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("QP matrices"));
        }
        check_finite("QP linear term", &c)?;
        check_finite("QP right-hand side", &r)?;
        if linalg::asymmetry(&q) > SYMMETRY_TOL {
            return Err(Error::NotPositiveDefinite);
        }
        Ok(Self { q, c, m, r })
    }

    pub fn unconstrained(q: DMatrix<f64>, c: DVector<f64>) -> Result<Self> {
        let p = c.len();
        Self::new(q, c, DMatrix::zeros(0, p), DVector::zeros(0))
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }
    pub fn c(&self) -> &DVector<f64> {
        &self.c
    }
    pub fn m(&self) -> &DMatrix<f64> {
        &self.m
    }
    pub fn r(&self) -> &DVector<f64> {
        &self.r
    }

    pub fn num_vars(&self) -> usize {
        self.c.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.r.len()
    }

    /// `1 + ‖c‖ + ‖r‖`; all solver tolerances are relative to it.
    pub fn scale(&self) -> f64 {
        1.0 + self.c.norm() + self.r.norm()
    }

    pub fn objective(&self, w: &DVector<f64>) -> f64 {
        0.5 * w.dot(&(&self.q * w)) + self.c.dot(w)
    }

    /// Same QP with only the listed constraint rows.
    pub fn with_rows(&self, rows: &[usize]) -> Self {
        Self {
            q: self.q.clone(),
            c: self.c.clone(),
            m: select_rows(&self.m, rows),
            r: select_entries(&self.r, rows),
        }
    }

    /// Rows with `|M_i w - r_i| <= FEAS_TOL * scale`.
    pub fn tight_rows(&self, w: &DVector<f64>) -> Vec<usize> {
        let tol = FEAS_TOL * self.scale();
        (&self.m * w - &self.r)
            .iter()
            .enumerate()
            .filter(|(_, s)| s.abs() <= tol)
            .map(|(i, _)| i)
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QpWarning {
    /// The tight rows at the solution are linearly dependent; the reported
    /// multipliers are one valid choice among many.
    RankDeficientActiveSet,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QpSolution {
    pub w: DVector<f64>,
    /// One multiplier per constraint row, in row order.
    pub multipliers: DVector<f64>,
    /// Rows tight at `w`.
    pub active: Vec<usize>,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub warnings: Vec<QpWarning>,
}

impl QpSolution {
    pub fn multipliers_unique(&self) -> bool {
        !self.warnings.contains(&QpWarning::RankDeficientActiveSet)
    }
}

/// Sum of the stationarity, primal feasibility, dual feasibility and
/// complementarity defects of `(w, multipliers)`.
pub fn kkt_residual(qp: &QpProblem, w: &DVector<f64>, multipliers: &DVector<f64>) -> Result<f64> {
    check_dim("KKT residual primal", qp.num_vars(), w.len())?;
    check_dim("KKT residual dual", qp.num_constraints(), multipliers.len())?;
    let slack = &qp.m * w - &qp.r;
    let stationarity = (&qp.q * w + &qp.c + qp.m.transpose() * multipliers).norm();
    let primal = linalg::positive_part(&slack).norm();
    let dual = multipliers.map(|x| (-x).max(0.0)).norm();
    let complementarity: f64 = multipliers
        .iter()
        .zip(slack.iter())
        .map(|(l, s)| (l * s).abs())
        .sum();
    Ok(stationarity + primal + dual + complementarity)
}

fn finish(qp: &QpProblem, w: DVector<f64>, multipliers: DVector<f64>, iterations: usize) -> Result<QpSolution> {
    let active = qp.tight_rows(&w);
    let mut warnings = Vec::new();
    if row_rank(&select_rows(&qp.m, &active), RANK_TOL) < active.len() {
        warnings.push(QpWarning::RankDeficientActiveSet);
    }
    let kkt_residual = kkt_residual(qp, &w, &multipliers)?;
    Ok(QpSolution {
        w,
        multipliers,
        active,
        kkt_residual,
        iterations,
        warnings,
    })
}

/// Solve the QP with the dual active-set method.
///
/// The working set is kept linearly independent. Violated rows enter in
/// lowest-index order and ties in the drop ratio test also go to the lowest
/// index, which rules out cycling on degenerate instances.
pub fn solve_qp(qp: &QpProblem) -> Result<QpSolution> {
    let p = qp.num_vars();
    let m = qp.num_constraints();
    let chol = qp.q.clone().cholesky().ok_or(Error::NotPositiveDefinite)?;
    let l = chol.l();
    let scale = qp.scale();
    let feas_tol = 1e-12 * scale;
    let max_iter = 50 * (m + p) + 100;

    // Columns v_i = L^{-1} n_i with n_i = -M_i^T, i.e. the constraint normals
    // in the coordinates where Q becomes the identity.
    let mut normals = -qp.m.transpose();
    if m > 0 && !l.solve_lower_triangular_mut(&mut normals) {
        return Err(Error::NotPositiveDefinite);
    }
    let normals = normals;

    let mut x = -chol.solve(&qp.c);
    let mut working: Vec<usize> = Vec::new();
    let mut duals: Vec<f64> = Vec::new();
    let mut iterations = 0;

    loop {
        let slack = &qp.r - &qp.m * &x;
        let entering = (0..m).find(|&i| slack[i] < -feas_tol && !working.contains(&i));
        let Some(enter) = entering else { break };
        let v_plus = normals.column(enter).clone_owned();
        let mut dual_plus = 0.0;

        loop {
            iterations += 1;
            if iterations > max_iter {
                return Err(Error::MaxIterations(max_iter));
            }
            // Split v_plus into its component in span(B) (coefficients `dir`)
            // and the orthogonal remainder.
            let (dir, remainder) = if working.is_empty() {
                (DVector::zeros(0), v_plus.clone())
            } else {
                let b = DMatrix::from_fn(p, working.len(), |i, j| normals[(i, working[j])]);
                let qr = b.clone().qr();
                let qb = qr.q();
                let coeffs = qb.transpose() * &v_plus;
                let dir = qr
                    .r()
                    .solve_upper_triangular(&coeffs)
                    .ok_or(Error::MaxIterations(iterations))?;
                let remainder = &v_plus - &b * &dir;
                (dir, remainder)
            };

            // Partial step bound: first working multiplier to hit zero.
            let dir_tol = 1e-12 * dir.amax().max(1.0);
            let mut partial: Option<(f64, usize)> = None;
            for (j, &rj) in dir.iter().enumerate() {
                if rj > dir_tol {
                    let t = duals[j] / rj;
                    let better = match partial {
                        None => true,
                        Some((tb, kb)) => t < tb || (t == tb && working[j] < working[kb]),
                    };
                    if better {
                        partial = Some((t, j));
                    }
                }
            }

            let dependent = remainder.norm() <= 1e-10 * v_plus.norm();
            if dependent {
                let Some((t, k)) = partial else {
                    return Err(Error::Infeasible);
                };
                for (dj, rj) in duals.iter_mut().zip(dir.iter()) {
                    *dj -= t * rj;
                }
                dual_plus += t;
                working.remove(k);
                duals.remove(k);
                continue;
            }

            let mut z = remainder.clone();
            if !l.tr_solve_lower_triangular_mut(&mut z) {
                return Err(Error::NotPositiveDefinite);
            }
            let s_enter = qp.r[enter] - qp.m.row(enter).dot(&x.transpose());
            let full = (-s_enter).max(0.0) / remainder.norm_squared();
            let (t, add) = match partial {
                Some((tp, _)) if tp < full => (tp, false),
                _ => (full, true),
            };
            x += &z * t;
            for (dj, rj) in duals.iter_mut().zip(dir.iter()) {
                *dj -= t * rj;
            }
            dual_plus += t;
            if add {
                working.push(enter);
                duals.push(dual_plus);
                break;
            }
            let (_, k) = partial.expect("partial step implies a blocking multiplier");
            working.remove(k);
            duals.remove(k);
        }
    }

    let mut multipliers = DVector::zeros(m);
    for (&i, &d) in working.iter().zip(duals.iter()) {
        multipliers[i] = d.max(0.0);
    }
    finish(qp, x, multipliers, iterations)
}

/// Exhaustive active-set enumeration: solve the equality-constrained KKT
/// system for every subset of rows (smallest first) and return the first
/// candidate that is primal feasible with nonnegative multipliers.
/// Rank-deficient subsets are solved in the least-squares sense.
pub fn enumerate_oracle(qp: &QpProblem) -> Result<QpSolution> {
    let p = qp.num_vars();
    let m = qp.num_constraints();
    if m > ORACLE_MAX_ROWS {
        return Err(Error::TooManyConstraints {
            limit: ORACLE_MAX_ROWS,
            found: m,
        });
    }
    if qp.q.clone().cholesky().is_none() {
        return Err(Error::NotPositiveDefinite);
    }
    let tol = FEAS_TOL * qp.scale();
    let mut visited = 0;
    for size in 0..=m {
        for subset in (0..m).combinations(size) {
            visited += 1;
            let k = subset.len();
            let ms = select_rows(&qp.m, &subset);
            let mut kkt = DMatrix::zeros(p + k, p + k);
            kkt.view_mut((0, 0), (p, p)).copy_from(&qp.q);
            kkt.view_mut((0, p), (p, k)).copy_from(&ms.transpose());
            kkt.view_mut((p, 0), (k, p)).copy_from(&ms);
            let mut rhs = DVector::zeros(p + k);
            rhs.rows_mut(0, p).copy_from(&(-&qp.c));
            rhs.rows_mut(p, k).copy_from(&select_entries(&qp.r, &subset));

            let full_rank = row_rank(&ms, RANK_TOL) == k;
            let sol = if full_rank {
                match kkt.lu().solve(&rhs) {
                    Some(s) => s,
                    None => continue,
                }
            } else {
                match kkt.svd(true, true).solve(&rhs, 1e-12) {
                    Ok(s) => s,
                    Err(_) => continue,
                }
            };
            let w = sol.rows(0, p).clone_owned();
            let lam = sol.rows(p, k).clone_owned();
            let slack = &qp.m * &w - &qp.r;
            let on_rows = subset.iter().all(|&i| slack[i].abs() <= tol);
            let feasible = slack.iter().all(|&s| s <= tol);
            let dual_ok = lam.iter().all(|&l| l >= -tol);
            if on_rows && feasible && dual_ok {
                let mut multipliers = DVector::zeros(m);
                for (&i, &l) in subset.iter().zip(lam.iter()) {
                    multipliers[i] = l.max(0.0);
                }
                return finish(qp, w, multipliers, visited);
            }
        }
    }
    Err(Error::Infeasible)
}
