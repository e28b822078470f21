//! Named builtin problems referenced by scenario files.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{ConstantMetric, FnObjective, FnPlant, Polyhedron, ProblemSpec};

pub const BUILTIN_NAMES: &[&str] = &["example", "linear", "affine"];

pub fn lookup(name: &str) -> Result<ProblemSpec> {
    match name {
        "example" => Ok(builtin_example()),
        "linear" => Ok(linear_problem()),
        "affine" => Ok(affine_problem()),
        other => Err(Error::UnknownProblem(other.to_string())),
    }
}

pub fn all_builtins() -> Vec<ProblemSpec> {
    BUILTIN_NAMES.iter().map(|n| lookup(n).expect("registered name")).collect()
}

/// Scalar output interval `lo <= y <= hi` as rows `[1; -1]`, `[hi; -lo]`.
fn interval(lo: f64, hi: f64) -> Polyhedron {
    Polyhedron::new(
        DMatrix::from_column_slice(2, 1, &[1.0, -1.0]),
        DVector::from_column_slice(&[hi, -lo]),
    )
    .expect("valid interval")
}

/// Two-input, one-output test instance with a cubic plant:
///
/// ```text
/// h(u)    = u2³ + u1 - u2 + 0.5
/// Φ(u, y) = 1.5 u1² + u2² - u2³ + u1 u2 - 3 u2 + 1.5 + y
/// U = [-1, 1]²,  Y = [0, 1],  G = I
/// ```
///
/// The cubic terms cancel in `Φ(u, h(u))`, which is the convex quadratic
/// `1.5 u1² + u2² + u1 u2 + u1 - 4 u2 + 2`, while the output constraint
/// stays nonlinear.
pub fn builtin_example() -> ProblemSpec {
    let plant = FnPlant::new(
        2,
        1,
        |u| DVector::from_element(1, u[1].powi(3) + u[0] - u[1] + 0.5),
        |u| DMatrix::from_row_slice(1, 2, &[1.0, 3.0 * u[1] * u[1] - 1.0]),
    );
    let objective = FnObjective::new(
        |u, y| {
            1.5 * u[0] * u[0] + u[1] * u[1] - u[1].powi(3) + u[0] * u[1] - 3.0 * u[1] + 1.5 + y[0]
        },
        |u, _y| {
            DVector::from_column_slice(&[
                3.0 * u[0] + u[1],
                2.0 * u[1] - 3.0 * u[1] * u[1] + u[0] - 3.0,
                1.0,
            ])
        },
    );
    ProblemSpec::new(
        "example",
        Arc::new(plant),
        Arc::new(objective),
        Polyhedron::from_box(&[-1.0, -1.0], &[1.0, 1.0]).expect("valid box"),
        interval(0.0, 1.0),
        Arc::new(ConstantMetric::identity(2)),
    )
    .expect("consistent dimensions")
}

/// Identity plant with linear cost `y1 + y2` on the unit box and the output
/// halfspace `y1 + y2 >= -1`.
pub fn linear_problem() -> ProblemSpec {
    let objective = FnObjective::new(
        |_u, y| y.sum(),
        |_u, _y| DVector::from_column_slice(&[0.0, 0.0, 1.0, 1.0]),
    );
    ProblemSpec::new(
        "linear",
        Arc::new(FnPlant::identity(2)),
        Arc::new(objective),
        Polyhedron::from_box(&[-1.0, -1.0], &[1.0, 1.0]).expect("valid box"),
        Polyhedron::new(DMatrix::from_row_slice(1, 2, &[-1.0, -1.0]), DVector::from_element(1, 1.0))
            .expect("valid halfspace"),
        Arc::new(ConstantMetric::identity(2)),
    )
    .expect("consistent dimensions")
}

/// Affine plant, quadratic cost and a constant non-identity metric.
pub fn affine_problem() -> ProblemSpec {
    let gain = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, -0.3, 1.0]);
    let offset = DVector::from_column_slice(&[0.2, -0.1]);
    let target = DVector::from_column_slice(&[0.8, -0.6]);
    let t2 = target.clone();
    let objective = FnObjective::new(
        move |u, y| 0.5 * (u - &target).norm_squared() + 0.5 * y.norm_squared(),
        move |u, y| {
            let mut g = DVector::zeros(4);
            g.rows_mut(0, 2).copy_from(&(u - &t2));
            g.rows_mut(2, 2).copy_from(y);
            g
        },
    );
    let output_set = Polyhedron::new(
        DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]),
        DVector::from_column_slice(&[0.3, 0.5]),
    )
    .expect("valid output set");
    ProblemSpec::new(
        "affine",
        Arc::new(FnPlant::affine(gain, offset)),
        Arc::new(objective),
        Polyhedron::from_box(&[-1.0, -1.0], &[1.0, 1.0]).expect("valid box"),
        output_set,
        Arc::new(
            ConstantMetric::new(DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0])).expect("SPD metric"),
        ),
    )
    .expect("consistent dimensions")
}
