//! The feedback law `u+ = u + alpha * sigma(u, y)`.
//!
//! `sigma` is the minimizer of `‖w + G⁻¹ ∇Φ̃ᵀ‖²_G` over the linearized
//! feasible set `A(u + αw) <= b`, `C(y + α ∇h(u) w) <= d`. After multiplying
//! the objective by `α` and dropping constants this is the QP
//!
//! ```text
//! minimize    ½ α wᵀ G w + α ∇Φ̃ w
//! subject to  α A w        <= b - A u
//!             α C ∇h(u) w  <= d - C y
//! ```
//!
//! whose multipliers are reported directly as `(nu, mu)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{self, metric_norm, row_rank, select_rows};
use crate::model::{ProblemSpec, ACTIVE_TOL};
use crate::qp::{solve_qp, QpProblem, QpSolution};

/// Assembled projection QP with its row partition: the first `input_rows`
/// rows come from the input polyhedron, the rest from the output polyhedron.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionQp {
    pub qp: QpProblem,
    pub input_rows: usize,
    pub output_rows: usize,
}

impl ProjectionQp {
    /// Split a stacked multiplier vector into `(nu, mu)`.
    pub fn split(&self, multipliers: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let nu = multipliers.rows(0, self.input_rows).clone_owned();
        let mu = multipliers.rows(self.input_rows, self.output_rows).clone_owned();
        (nu, mu)
    }
}

/// One evaluation of the controller.
#[derive(Clone, Debug, PartialEq)]
pub struct ControllerStep {
    pub u: DVector<f64>,
    pub y: DVector<f64>,
    pub alpha: f64,
    pub w: DVector<f64>,
    /// Multipliers of the input rows.
    pub nu: DVector<f64>,
    /// Multipliers of the linearized output rows.
    pub mu: DVector<f64>,
    pub u_next: DVector<f64>,
    /// `‖w‖_{G(u)}`.
    pub sigma_norm_g: f64,
    pub qp_iterations: usize,
    pub multipliers_unique: bool,
}

impl ControllerStep {
    /// `‖w‖_G`, zero exactly at fixed points of the iteration.
    pub fn stationarity_residual(&self) -> f64 {
        self.sigma_norm_g
    }
}

pub fn assemble_projection_qp(
    problem: &ProblemSpec,
    u: &DVector<f64>,
    y: &DVector<f64>,
    alpha: f64,
) -> Result<ProjectionQp> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Config(format!("step size must be positive, got {alpha}")));
    }
    let p = problem.input_dim();
    check_dim("controller input", p, u.len())?;
    check_dim("controller measurement", problem.output_dim(), y.len())?;
    let g = problem.metric_at(u)?;
    let grad = problem.reduced_gradient(u, y)?;
    let out_rows = problem.output_constraint_jacobian(u)?;
    let a = problem.input_set.a();
    let (q_in, l_out) = (a.nrows(), out_rows.nrows());

    let mut m = DMatrix::zeros(q_in + l_out, p);
    m.view_mut((0, 0), (q_in, p)).copy_from(&(a * alpha));
    m.view_mut((q_in, 0), (l_out, p)).copy_from(&(&out_rows * alpha));
    let mut r = DVector::zeros(q_in + l_out);
    r.rows_mut(0, q_in)
        .copy_from(&(problem.input_set.b() - a * u));
    r.rows_mut(q_in, l_out)
        .copy_from(&(problem.output_set.b() - problem.output_set.a() * y));

    Ok(ProjectionQp {
        qp: QpProblem::new(g * alpha, grad * alpha, m, r)?,
        input_rows: q_in,
        output_rows: l_out,
    })
}

fn step_from_solution(
    problem: &ProblemSpec,
    assembled: &ProjectionQp,
    sol: QpSolution,
    u: &DVector<f64>,
    y: &DVector<f64>,
    alpha: f64,
) -> Result<ControllerStep> {
    let (nu, mu) = assembled.split(&sol.multipliers);
    let g = problem.metric_at(u)?;
    let u_next = u + &sol.w * alpha;
    Ok(ControllerStep {
        u: u.clone(),
        y: y.clone(),
        alpha,
        sigma_norm_g: metric_norm(&g, &sol.w),
        multipliers_unique: sol.multipliers_unique(),
        qp_iterations: sol.iterations,
        w: sol.w,
        nu,
        mu,
        u_next,
    })
}

/// Evaluate the controller at input `u` with measurement `y`.
pub fn sigma_hat(problem: &ProblemSpec, u: &DVector<f64>, y: &DVector<f64>, alpha: f64) -> Result<ControllerStep> {
    let assembled = assemble_projection_qp(problem, u, y, alpha)?;
    let sol = solve_qp(&assembled.qp).map_err(|e| match e {
        Error::Infeasible => Error::LinearizedSetEmpty {
            u: u.iter().copied().collect(),
        },
        other => other,
    })?;
    step_from_solution(problem, &assembled, sol, u, y, alpha)
}

/// Measure `y = h(u)` and evaluate one controller step.
pub fn feedback_step(problem: &ProblemSpec, u: &DVector<f64>, alpha: f64) -> Result<ControllerStep> {
    let y = problem.eval_plant(u)?;
    sigma_hat(problem, u, &y, alpha)
}

/// KKT residual of the original problem at `u` with multipliers `(nu, mu)`:
/// stationarity `∇Φ̃ᵀ + Aᵀν + ∇hᵀCᵀμ`, feasibility of `u` and `h(u)`,
/// dual feasibility and complementarity.
pub fn problem_kkt_residual(
    problem: &ProblemSpec,
    u: &DVector<f64>,
    nu: &DVector<f64>,
    mu: &DVector<f64>,
) -> Result<f64> {
    check_dim("input multipliers", problem.input_set.num_rows(), nu.len())?;
    check_dim("output multipliers", problem.output_set.num_rows(), mu.len())?;
    let y = problem.eval_plant(u)?;
    let grad = problem.reduced_gradient(u, &y)?;
    let out_rows = problem.output_constraint_jacobian(u)?;
    let stationarity = (grad + problem.input_set.a().transpose() * nu + out_rows.transpose() * mu).norm();
    let in_res = problem.input_set.residual(u)?;
    let out_res = problem.output_set.residual(&y)?;
    let primal = linalg::positive_part(&in_res).norm() + linalg::positive_part(&out_res).norm();
    let dual = nu.iter().chain(mu.iter()).map(|x| (-x).max(0.0)).sum::<f64>();
    let comp: f64 = nu
        .iter()
        .zip(in_res.iter())
        .chain(mu.iter().zip(out_res.iter()))
        .map(|(l, s)| (l * s).abs())
        .sum();
    Ok(stationarity + primal + dual + comp)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LicqReport {
    /// Indices into the stacked rows `[A; C ∇h(u)]` that are active at `w`.
    pub active_rows: Vec<usize>,
    pub rank: usize,
    pub holds: bool,
}

/// Linear independence of the rows of `[A; C ∇h(u)]` active at `w` in the
/// linearized set. `tol` is the relative singular-value threshold.
pub fn check_licq(
    problem: &ProblemSpec,
    u: &DVector<f64>,
    y: &DVector<f64>,
    alpha: f64,
    w: &DVector<f64>,
    tol: f64,
) -> Result<LicqReport> {
    let assembled = assemble_projection_qp(problem, u, y, alpha)?;
    check_dim("LICQ direction", problem.input_dim(), w.len())?;
    let slack = assembled.qp.m() * w - assembled.qp.r();
    let active_rows: Vec<usize> = slack
        .iter()
        .enumerate()
        .filter(|(_, s)| s.abs() <= ACTIVE_TOL)
        .map(|(i, _)| i)
        .collect();
    let mut stacked = DMatrix::zeros(assembled.qp.num_constraints(), problem.input_dim());
    stacked
        .view_mut((0, 0), (assembled.input_rows, problem.input_dim()))
        .copy_from(problem.input_set.a());
    stacked
        .view_mut((assembled.input_rows, 0), (assembled.output_rows, problem.input_dim()))
        .copy_from(&problem.output_constraint_jacobian(u)?);
    let rank = row_rank(&select_rows(&stacked, &active_rows), tol);
    Ok(LicqReport {
        holds: rank == active_rows.len(),
        active_rows,
        rank,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::registry::builtin_example;
    use crate::qp::enumerate_oracle;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn assembled_qp_at_origin() {
        let problem = builtin_example();
        let asm = assemble_projection_qp(&problem, &v(&[0.0, 0.0]), &v(&[0.5]), 0.01).unwrap();
        assert_eq!((asm.input_rows, asm.output_rows), (4, 2));
        assert!((asm.qp.q() - DMatrix::identity(2, 2) * 0.01).amax() < 1e-15);
        assert!((asm.qp.c() - v(&[0.01, -0.04])).amax() < 1e-15);
        assert_eq!(asm.qp.num_constraints(), 6);
        assert!((asm.qp.r() - v(&[1.0, 1.0, 1.0, 1.0, 0.5, 0.5])).amax() < 1e-15);
    }

    #[test]
    fn face_row_has_zero_right_side() {
        let problem = builtin_example();
        let u = v(&[1.0, 0.0]);
        let y = problem.eval_plant(&u).unwrap();
        let asm = assemble_projection_qp(&problem, &u, &y, 0.01).unwrap();
        assert_eq!(asm.qp.r()[0], 0.0);
    }

    #[test]
    fn slack_constraints_give_unconstrained_step() {
        let problem = builtin_example();
        let step = sigma_hat(&problem, &v(&[0.0, 0.0]), &v(&[0.5]), 0.01).unwrap();
        assert!((&step.w - v(&[-1.0, 4.0])).amax() < 1e-12);
        assert!(step.nu.iter().chain(step.mu.iter()).all(|&m| m == 0.0));
        assert!((step.stationarity_residual() - 17f64.sqrt()).abs() < 1e-12);
        let oracle = enumerate_oracle(&assemble_projection_qp(&problem, &v(&[0.0, 0.0]), &v(&[0.5]), 0.01).unwrap().qp).unwrap();
        assert!((oracle.w - &step.w).amax() < 1e-12);
    }

    #[test]
    fn feedback_step_from_origin() {
        let problem = builtin_example();
        let step = feedback_step(&problem, &v(&[0.0, 0.0]), 0.01).unwrap();
        assert!((step.u_next - v(&[-0.01, 0.04])).amax() < 1e-14);
    }

    #[test]
    fn optimum_is_a_fixed_point() {
        let problem = builtin_example();
        let star = v(&[-0.5, 1.0]);
        let step = feedback_step(&problem, &star, 0.01).unwrap();
        assert!(step.w.amax() < 1e-12);
        assert!((&step.u_next - &star).amax() < 1e-14);
        assert!((step.mu[1] - 0.5).abs() < 1e-9);
        assert!((step.nu[1] - 3.5).abs() < 1e-9);
        assert!(problem_kkt_residual(&problem, &star, &step.nu, &step.mu).unwrap() < 1e-9);
    }

    #[test]
    fn corner_step_stays_in_box() {
        let problem = builtin_example();
        for alpha in [0.01, 0.1, 1.0] {
            let step = feedback_step(&problem, &v(&[1.0, 1.0]), alpha).unwrap();
            assert!(problem.input_set.contains(&step.u_next, 1e-9).unwrap());
        }
    }

    #[test]
    fn output_active_point_has_positive_multiplier() {
        let problem = builtin_example();
        // h(u) = 0 and the descent direction points out of Y.
        let u = v(&[-0.5, 0.0]);
        let y = problem.eval_plant(&u).unwrap();
        assert_eq!(y[0], 0.0);
        let step = sigma_hat(&problem, &u, &y, 0.01).unwrap();
        assert!(step.mu[1] > 0.0);
        let jac = problem.output_constraint_jacobian(&u).unwrap();
        let lin = -y[0] + 0.01 * (jac.row(1) * &step.w)[0];
        assert!(lin.abs() < 1e-12);
        let report = check_licq(&problem, &u, &y, 0.01, &step.w, 1e-10).unwrap();
        assert_eq!(report.active_rows, vec![5]);
        assert!(report.holds);
    }

    #[test]
    fn licq_interior_and_duplicates() {
        let problem = builtin_example();
        let u = v(&[0.0, 0.0]);
        let y = v(&[0.5]);
        let report = check_licq(&problem, &u, &y, 0.01, &v(&[0.0, 0.0]), 1e-10).unwrap();
        assert!(report.active_rows.is_empty() && report.holds);

        let mut dup = builtin_example();
        let a = problem.input_set.a();
        let rows = DMatrix::from_fn(5, 2, |i, j| a[(i.min(3), j)]);
        let b = DVector::from_fn(5, |i, _| problem.input_set.b()[i.min(3)]);
        dup.input_set = crate::model::Polyhedron::new(rows, b).unwrap();
        // u2 = -1 makes the duplicated lower bound on u2 active twice.
        let u = v(&[0.0, -1.0]);
        let y = dup.eval_plant(&u).unwrap();
        let report = check_licq(&dup, &u, &y, 0.01, &v(&[0.0, 0.0]), 1e-10).unwrap();
        assert_eq!(report.active_rows, vec![3, 4]);
        assert!(!report.holds);
    }

    #[test]
    fn zero_gradient_interior_point_is_fixed() {
        let mut problem = builtin_example();
        // Cost minimized at (0.1, 0.2), where h = 0.408 is strictly inside Y.
        problem.objective = std::sync::Arc::new(crate::model::FnObjective::new(
            |u, _| (u[0] - 0.1).powi(2) + (u[1] - 0.2).powi(2),
            |u, _| DVector::from_vec(vec![2.0 * (u[0] - 0.1), 2.0 * (u[1] - 0.2), 0.0]),
        ));
        let step = feedback_step(&problem, &v(&[0.1, 0.2]), 0.5).unwrap();
        assert_eq!(step.w.amax(), 0.0);
    }

    #[test]
    fn rejects_bad_step_size() {
        let problem = builtin_example();
        assert!(feedback_step(&problem, &v(&[0.0, 0.0]), 0.0).is_err());
        assert!(feedback_step(&problem, &v(&[0.0, 0.0]), f64::NAN).is_err());
    }
}
