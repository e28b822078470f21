#![allow(dead_code)]

use fbopt::linalg::{row_rank, select_rows};
use fbopt::QpProblem;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

pub fn v(x: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(x)
}

/// Strictly convex QP with `p <= 4` variables and `m <= 6` rows whose
/// feasible set contains a random point with some rows tight.
pub fn random_qp(rng: &mut impl Rng) -> QpProblem {
    let p = rng.random_range(1..=4);
    let m = rng.random_range(0..=6);
    let b = DMatrix::from_fn(p, p, |_, _| rng.random_range(-1.0..1.0));
    let q = b.transpose() * &b + DMatrix::identity(p, p) * rng.random_range(0.1..2.0);
    let c = DVector::from_fn(p, |_, _| rng.random_range(-5.0..5.0));
    let rows = DMatrix::from_fn(m, p, |_, _| rng.random_range(-2.0..2.0));
    let x0 = DVector::from_fn(p, |_, _| rng.random_range(-1.0..1.0));
    let slack = DVector::from_fn(m, |_, _| {
        if rng.random_bool(0.3) {
            0.0
        } else {
            rng.random_range(0.0..1.0)
        }
    });
    let r = &rows * x0 + slack;
    QpProblem::new(q, c, rows, r).expect("valid QP")
}

/// Linear independence of the rows of `qp` that are tight at `w`.
pub fn licq_at(qp: &QpProblem, w: &DVector<f64>) -> bool {
    let tight = qp.tight_rows(w);
    row_rank(&select_rows(qp.m(), &tight), 1e-8) == tight.len()
}
