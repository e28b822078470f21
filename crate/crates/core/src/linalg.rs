//! Small dense linear-algebra helpers shared by the solver and diagnostics.

use nalgebra::{DMatrix, DVector};

/// Numerical row rank: singular values above `tol * sigma_max` count.
pub fn row_rank(rows: &DMatrix<f64>, tol: f64) -> usize {
    if rows.nrows() == 0 || rows.ncols() == 0 {
        return 0;
    }
    let sv = rows.singular_values();
    let largest = sv.max();
    if largest == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > tol * largest).count()
}

/// Stack the rows with the given indices into a new matrix.
pub fn select_rows(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), m.ncols(), |i, j| m[(idx[i], j)])
}

pub fn select_entries(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_fn(idx.len(), |i, _| v[idx[i]])
}

pub fn min_eigenvalue(sym: &DMatrix<f64>) -> f64 {
    sym.clone().symmetric_eigenvalues().min()
}

pub fn max_eigenvalue(sym: &DMatrix<f64>) -> f64 {
    sym.clone().symmetric_eigenvalues().max()
}

/// Largest absolute asymmetry `|m_ij - m_ji|`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// `sqrt(w' G w)`.
pub fn metric_norm(g: &DMatrix<f64>, w: &DVector<f64>) -> f64 {
    w.dot(&(g * w)).max(0.0).sqrt()
}

pub fn positive_part(v: &DVector<f64>) -> DVector<f64> {
    v.map(|x| x.max(0.0))
}
