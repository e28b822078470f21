//! Central-difference validation of the analytic derivative oracles.

use nalgebra::DVector;

use crate::model::ProblemSpec;
use crate::error::Result;

pub const FD_STEP: f64 = 1e-6;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FdReport {
    pub points: usize,
    pub jacobian: f64,
    pub objective_gradient: f64,
    pub reduced_gradient: f64,
}

impl FdReport {
    pub fn max(&self) -> f64 {
        self.jacobian.max(self.objective_gradient).max(self.reduced_gradient)
    }
}

/// `|a - b| / max(1, |a|)`.
fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(1.0)
}

/// Central difference of `f` along coordinate `k` of `x`; the divisor is the
/// step actually realized in floating point.
fn central<F: Fn(&DVector<f64>) -> DVector<f64>>(f: F, x: &DVector<f64>, k: usize, h: f64) -> DVector<f64> {
    let mut up = x.clone();
    let mut dn = x.clone();
    up[k] += h;
    dn[k] -= h;
    let step = up[k] - dn[k];
    (f(&up) - f(&dn)) / step
}

/// Largest relative error of `∇h`, `∇Φ` and `∇Φ̃` against central
/// differences over `points`.
pub fn finite_difference_check(problem: &ProblemSpec, points: &[DVector<f64>]) -> Result<FdReport> {
    let p = problem.input_dim();
    let n = problem.output_dim();
    let mut report = FdReport {
        points: points.len(),
        ..FdReport::default()
    };
    for u in points {
        let y = problem.eval_plant(u)?;
        let jac = problem.plant_jacobian(u)?;
        let grad = problem.objective.gradient(u, &y);
        let reduced = problem.reduced_gradient(u, &y)?;
        for k in 0..p {
            let col = central(|x| problem.plant.eval(x), u, k, FD_STEP);
            for i in 0..n {
                report.jacobian = report.jacobian.max(rel_err(jac[(i, k)], col[i]));
            }
            let du = central(|x| DVector::from_element(1, problem.objective.eval(x, &y)), u, k, FD_STEP);
            report.objective_gradient = report.objective_gradient.max(rel_err(grad[k], du[0]));
            let dr = central(
                |x| {
                    let yx = problem.plant.eval(x);
                    DVector::from_element(1, problem.objective.eval(x, &yx))
                },
                u,
                k,
                FD_STEP,
            );
            report.reduced_gradient = report.reduced_gradient.max(rel_err(reduced[k], dr[0]));
        }
        for k in 0..n {
            let dy = central(|yy| DVector::from_element(1, problem.objective.eval(u, yy)), &y, k, FD_STEP);
            report.objective_gradient = report.objective_gradient.max(rel_err(grad[p + k], dy[0]));
        }
    }
    Ok(report)
}
