//! Projected primal-dual iteration on the augmented Lagrangian
//!
//! ```text
//! L(u, μ) = Φ̃(u) + μᵀ(C h(u) - d) + ρ/2 ‖max{0, C h(u) - d}‖²
//! u+ = P_U(u - α ∇_u Lᵀ),   μ+ = max{0, μ + γ ∇_μ Lᵀ}
//! ```
//!
//! used as the comparison scheme for the projected controller.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::linalg::positive_part;
use crate::model::{Polyhedron, ProblemSpec};
use crate::qp::{solve_qp, QpProblem};

#[derive(Clone, Debug, PartialEq)]
pub struct SaddlePointState {
    pub u: DVector<f64>,
    pub mu: DVector<f64>,
    pub alpha: f64,
    pub gamma: f64,
    pub rho: f64,
}

impl SaddlePointState {
    pub fn new(u: DVector<f64>, mu: DVector<f64>, alpha: f64, gamma: f64, rho: f64) -> Result<Self> {
        if !(alpha > 0.0 && gamma > 0.0 && rho >= 0.0) {
            return Err(Error::Config(format!(
                "saddle-point parameters need alpha > 0, gamma > 0, rho >= 0 (got {alpha}, {gamma}, {rho})"
            )));
        }
        if mu.iter().any(|&m| m < 0.0) {
            return Err(Error::Config("dual iterate must be nonnegative".into()));
        }
        Ok(Self {
            u,
            mu,
            alpha,
            gamma,
            rho,
        })
    }
}

pub fn augmented_lagrangian(problem: &ProblemSpec, u: &DVector<f64>, mu: &DVector<f64>, rho: f64) -> Result<f64> {
    check_dim("dual iterate", problem.output_set.num_rows(), mu.len())?;
    let y = problem.eval_plant(u)?;
    let gap = problem.output_set.residual(&y)?;
    let cost = problem.objective_value(u, &y)?;
    Ok(cost + mu.dot(&gap) + 0.5 * rho * positive_part(&gap).norm_squared())
}

/// `(∇_u L, ∇_μ L)`. The penalty gradient uses `max{0, ·}`, which is zero on
/// the constraint boundary.
pub fn augmented_lagrangian_gradients(
    problem: &ProblemSpec,
    u: &DVector<f64>,
    mu: &DVector<f64>,
    rho: f64,
) -> Result<(DVector<f64>, DVector<f64>)> {
    check_dim("dual iterate", problem.output_set.num_rows(), mu.len())?;
    let y = problem.eval_plant(u)?;
    let gap = problem.output_set.residual(&y)?;
    let rows = problem.output_constraint_jacobian(u)?;
    let grad_u = problem.reduced_gradient(u, &y)? + rows.transpose() * (mu + positive_part(&gap) * rho);
    Ok((grad_u, gap))
}

pub fn saddle_point_step(state: &SaddlePointState, problem: &ProblemSpec) -> Result<SaddlePointState> {
    let (grad_u, grad_mu) = augmented_lagrangian_gradients(problem, &state.u, &state.mu, state.rho)?;
    let u = project_polyhedron(&problem.input_set, &(&state.u - grad_u * state.alpha))?;
    let mu = positive_part(&(&state.mu + grad_mu * state.gamma));
    Ok(SaddlePointState {
        u,
        mu,
        ..state.clone()
    })
}

/// Primal-dual fixed-point residual
/// `‖u - P_U(u - ∇_u L)‖ + ‖μ - max{0, μ + ∇_μ L}‖`; zero exactly at KKT
/// points of the original problem.
pub fn saddle_kkt_residual(problem: &ProblemSpec, u: &DVector<f64>, mu: &DVector<f64>, rho: f64) -> Result<f64> {
    let (grad_u, grad_mu) = augmented_lagrangian_gradients(problem, u, mu, rho)?;
    let primal = (u - project_polyhedron(&problem.input_set, &(u - grad_u))?).norm();
    let dual = (mu - positive_part(&(mu + grad_mu))).norm();
    Ok(primal + dual)
}

/// Euclidean projection onto the polyhedron. Axis-aligned sets are clamped
/// componentwise; anything else goes through the QP solver.
pub fn project_polyhedron(set: &Polyhedron, x: &DVector<f64>) -> Result<DVector<f64>> {
    check_dim("projection point", set.dim(), x.len())?;
    if let Some((lo, hi)) = set.as_box() {
        if lo.iter().zip(hi.iter()).any(|(l, h)| l > h) {
            return Err(Error::Infeasible);
        }
        return Ok(DVector::from_fn(x.len(), |i, _| x[i].clamp(lo[i], hi[i])));
    }
    project_polyhedron_qp(set, x)
}

/// Projection via `min ‖z‖² - 2xᵀz` subject to `A z <= b`.
pub fn project_polyhedron_qp(set: &Polyhedron, x: &DVector<f64>) -> Result<DVector<f64>> {
    check_dim("projection point", set.dim(), x.len())?;
    let p = set.dim();
    let qp = QpProblem::new(DMatrix::identity(p, p) * 2.0, x * -2.0, set.a().clone(), set.b().clone())?;
    Ok(solve_qp(&qp)?.w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::registry::builtin_example;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn box_projection_clamps() {
        let set = Polyhedron::from_box(&[-1.0, -1.0], &[1.0, 1.0]).unwrap();
        assert_eq!(project_polyhedron(&set, &v(&[2.0, 0.5])).unwrap(), v(&[1.0, 0.5]));
        assert_eq!(project_polyhedron(&set, &v(&[0.2, -0.3])).unwrap(), v(&[0.2, -0.3]));
        let qp = project_polyhedron_qp(&set, &v(&[2.0, 0.5])).unwrap();
        assert!((qp - v(&[1.0, 0.5])).amax() < 1e-12);
    }

    #[test]
    fn halfspace_projection() {
        let set = Polyhedron::new(DMatrix::from_row_slice(1, 2, &[1.0, 0.0]), v(&[0.0])).unwrap();
        // Axis-aligned, so this takes the clamp path; the QP path must agree.
        assert_eq!(project_polyhedron(&set, &v(&[1.0, 1.0])).unwrap(), v(&[0.0, 1.0]));
        let qp = project_polyhedron_qp(&set, &v(&[1.0, 1.0])).unwrap();
        assert!((qp - v(&[0.0, 1.0])).amax() < 1e-12);
        // A tilted halfspace x1 + x2 <= 0.
        let tilted = Polyhedron::new(DMatrix::from_row_slice(1, 2, &[1.0, 1.0]), v(&[0.0])).unwrap();
        let z = project_polyhedron(&tilted, &v(&[1.0, 1.0])).unwrap();
        assert!(z.amax() < 1e-12);
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(SaddlePointState::new(v(&[0.0]), v(&[0.0]), 0.0, 1.0, 1.0).is_err());
        assert!(SaddlePointState::new(v(&[0.0]), v(&[-1.0]), 0.1, 1.0, 1.0).is_err());
    }

    #[test]
    fn augmented_lagrangian_examples() {
        let problem = builtin_example();
        let origin = v(&[0.0, 0.0]);
        assert!((augmented_lagrangian(&problem, &origin, &v(&[1.0, 1.0]), 0.0).unwrap() - 1.0).abs() < 1e-15);
        for rho in [0.0, 1.0, 1000.0] {
            assert!((augmented_lagrangian(&problem, &origin, &v(&[0.0, 0.0]), rho).unwrap() - 2.0).abs() < 1e-15);
            let (_, grad_mu) = augmented_lagrangian_gradients(&problem, &origin, &v(&[0.3, 0.0]), rho).unwrap();
            assert_eq!(grad_mu, v(&[-0.5, -0.5]));
        }
    }

    #[test]
    fn saddle_step_from_origin() {
        let problem = builtin_example();
        for (gamma, rho) in [(0.5, 1.0), (5.0, 1000.0)] {
            let state = SaddlePointState::new(v(&[0.0, 0.0]), v(&[0.0, 0.0]), 0.01, gamma, rho).unwrap();
            let next = saddle_point_step(&state, &problem).unwrap();
            assert!((next.u - v(&[-0.01, 0.04])).amax() < 1e-15);
            assert_eq!(next.mu, v(&[0.0, 0.0]));
        }
    }

    #[test]
    fn saddle_step_clamps_to_box() {
        let problem = builtin_example();
        let state = SaddlePointState::new(v(&[1.0, 1.0]), v(&[0.0, 0.0]), 1.0, 1.0, 1.0).unwrap();
        let next = saddle_point_step(&state, &problem).unwrap();
        assert!(problem.input_set.contains(&next.u, 0.0).unwrap());
    }

    #[test]
    fn optimum_is_saddle_stationary() {
        let problem = builtin_example();
        let star = v(&[-0.5, 1.0]);
        let step = crate::controller::feedback_step(&problem, &star, 0.01).unwrap();
        for rho in [0.0, 1.0, 1000.0] {
            assert!(saddle_kkt_residual(&problem, &star, &step.mu, rho).unwrap() < 1e-9);
        }
    }
}
