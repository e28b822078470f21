//! Tangent cone of the feasible set and the metric projection onto it.
//!
//! As `α → 0` the right-hand sides of the inactive linearized rows of the
//! controller QP grow like `1/α`, so only the active rows remain and the
//! controller direction approaches the projection of `-G⁻¹∇Φ̃ᵀ` onto the
//! tangent cone. [`limit_consistency`] measures that convergence.

use nalgebra::{DMatrix, DVector};

use crate::controller::sigma_hat;
use crate::error::{check_dim, Error, Result};
use crate::linalg::select_rows;
use crate::model::ProblemSpec;
use crate::qp::{solve_qp, QpProblem};

/// `{w | A_I w <= 0, C_J ∇h(u) w <= 0}` for the active input rows `I` and
/// active output rows `J` at `u`.
#[derive(Clone, Debug, PartialEq)]
pub struct TangentCone {
    pub rows: DMatrix<f64>,
    pub base_point: DVector<f64>,
    pub active_input: Vec<usize>,
    pub active_output: Vec<usize>,
}

impl TangentCone {
    pub fn contains(&self, w: &DVector<f64>, tol: f64) -> bool {
        (&self.rows * w).iter().all(|&s| s <= tol)
    }
}

pub fn tangent_cone(problem: &ProblemSpec, u: &DVector<f64>, tol: f64) -> Result<TangentCone> {
    let y = problem.eval_plant(u)?;
    let in_res = problem.input_set.residual(u)?;
    let out_res = problem.output_set.residual(&y)?;
    let worst = in_res.iter().chain(out_res.iter()).copied().fold(f64::NEG_INFINITY, f64::max);
    if worst > tol {
        return Err(Error::NotFeasible { violation: worst });
    }
    let active_input = problem.input_set.active_set(u, tol)?;
    let active_output = problem.output_set.active_set(&y, tol)?;
    let a_rows = select_rows(problem.input_set.a(), &active_input);
    let c_rows = select_rows(&problem.output_constraint_jacobian(u)?, &active_output);
    let p = problem.input_dim();
    let mut rows = DMatrix::zeros(a_rows.nrows() + c_rows.nrows(), p);
    rows.view_mut((0, 0), (a_rows.nrows(), p)).copy_from(&a_rows);
    rows.view_mut((a_rows.nrows(), 0), (c_rows.nrows(), p)).copy_from(&c_rows);
    Ok(TangentCone {
        rows,
        base_point: u.clone(),
        active_input,
        active_output,
    })
}

/// `argmin_{w in cone} ‖w - f‖²_G`.
pub fn project_tangent_cone(cone: &TangentCone, g: &DMatrix<f64>, f: &DVector<f64>) -> Result<DVector<f64>> {
    let p = cone.rows.ncols();
    check_dim("cone projection vector", p, f.len())?;
    let qp = QpProblem::new(g.clone(), -(g * f), cone.rows.clone(), DVector::zeros(cone.rows.nrows()))?;
    Ok(solve_qp(&qp)?.w)
}

/// Projected gradient field `Π[-G⁻¹∇Φ̃ᵀ](u)` at a feasible `u`.
pub fn projected_gradient(problem: &ProblemSpec, u: &DVector<f64>, tol: f64) -> Result<DVector<f64>> {
    let cone = tangent_cone(problem, u, tol)?;
    let y = problem.eval_plant(u)?;
    let g = problem.metric_at(u)?;
    let grad = problem.reduced_gradient(u, &y)?;
    let f = -g.clone().cholesky().ok_or(Error::NotPositiveDefinite)?.solve(&grad);
    project_tangent_cone(&cone, &g, &f)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LimitRow {
    pub alpha: f64,
    pub sigma: DVector<f64>,
    pub deviation: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LimitTable {
    pub projection: DVector<f64>,
    pub rows: Vec<LimitRow>,
}

impl LimitTable {
    /// Deviations never grow by more than `slack` from one step size to the
    /// next smaller one.
    pub fn is_non_increasing(&self, slack: f64) -> bool {
        self.rows.windows(2).all(|w| w[1].deviation <= w[0].deviation + slack)
    }

    pub fn tail_deviation(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.deviation)
    }
}

/// `‖σ_α(u) - Π(u)‖` for each step size in `alphas` (expected decreasing).
pub fn limit_consistency(problem: &ProblemSpec, u: &DVector<f64>, alphas: &[f64], tol: f64) -> Result<LimitTable> {
    let projection = projected_gradient(problem, u, tol)?;
    let y = problem.eval_plant(u)?;
    let rows = alphas
        .iter()
        .map(|&alpha| {
            let sigma = sigma_hat(problem, u, &y, alpha)?.w;
            let deviation = (&sigma - &projection).norm();
            Ok(LimitRow {
                alpha,
                sigma,
                deviation,
            })
        })
        .collect::<Result<_>>()?;
    Ok(LimitTable { projection, rows })
}
