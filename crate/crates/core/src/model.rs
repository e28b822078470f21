//! Problem instances: the steady-state plant map, the cost, the input and
//! output polyhedra and the metric used for projections.

use std::fmt;
use std::sync::Arc;

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, check_finite, Error, Result};
use crate::linalg;

/// Default absolute tolerance for deciding whether a constraint is active.
pub const ACTIVE_TOL: f64 = 1e-9;

/// Steady-state input-to-output map `y = h(u)` and its Jacobian.
pub trait Plant: Send + Sync {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn eval(&self, u: &DVector<f64>) -> DVector<f64>;
    /// `n x p` sensitivity matrix.
    fn jacobian(&self, u: &DVector<f64>) -> DMatrix<f64>;
}

/// Cost `Phi(u, y)` with its gradient stacked as `[d/du, d/dy]`.
pub trait Objective: Send + Sync {
    fn eval(&self, u: &DVector<f64>, y: &DVector<f64>) -> f64;
    fn gradient(&self, u: &DVector<f64>, y: &DVector<f64>) -> DVector<f64>;
}

/// Position-dependent symmetric positive definite weighting `G(u)`.
pub trait Metric: Send + Sync {
    fn eval(&self, u: &DVector<f64>) -> DMatrix<f64>;
}

type VecFn = dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync;
type MatFn = dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync;
type CostFn = dyn Fn(&DVector<f64>, &DVector<f64>) -> f64 + Send + Sync;
type CostGradFn = dyn Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync;

/// Plant assembled from closures.
pub struct FnPlant {
    input_dim: usize,
    output_dim: usize,
    eval: Box<VecFn>,
    jacobian: Box<MatFn>,
}

impl FnPlant {
    pub fn new(
        input_dim: usize,
        output_dim: usize,
        eval: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        jacobian: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            input_dim,
            output_dim,
            eval: Box::new(eval),
            jacobian: Box::new(jacobian),
        }
    }

    /// `h(u) = u`.
    pub fn identity(dim: usize) -> Self {
        Self::new(dim, dim, |u| u.clone(), move |_| DMatrix::identity(dim, dim))
    }

    /// `h(u) = B u + offset`.
    pub fn affine(gain: DMatrix<f64>, offset: DVector<f64>) -> Self {
        let (n, p) = gain.shape();
        let jac = gain.clone();
        Self::new(p, n, move |u| &gain * u + &offset, move |_| jac.clone())
    }
}

impl Plant for FnPlant {
    fn input_dim(&self) -> usize {
        self.input_dim
    }
    fn output_dim(&self) -> usize {
        self.output_dim
    }
    fn eval(&self, u: &DVector<f64>) -> DVector<f64> {
        (self.eval)(u)
    }
    fn jacobian(&self, u: &DVector<f64>) -> DMatrix<f64> {
        (self.jacobian)(u)
    }
}

impl fmt::Debug for FnPlant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FnPlant({} -> {})", self.input_dim, self.output_dim)
    }
}

/// Objective assembled from closures.
pub struct FnObjective {
    eval: Box<CostFn>,
    gradient: Box<CostGradFn>,
}

impl FnObjective {
    pub fn new(
        eval: impl Fn(&DVector<f64>, &DVector<f64>) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            eval: Box::new(eval),
            gradient: Box::new(gradient),
        }
    }
}

impl Objective for FnObjective {
    fn eval(&self, u: &DVector<f64>, y: &DVector<f64>) -> f64 {
        (self.eval)(u, y)
    }
    fn gradient(&self, u: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        (self.gradient)(u, y)
    }
}

/// Constant metric `G(u) = G`.
#[derive(Clone, Debug)]
pub struct ConstantMetric(DMatrix<f64>);

impl ConstantMetric {
    pub fn identity(dim: usize) -> Self {
        Self(DMatrix::identity(dim, dim))
    }

    /// Rejects matrices that are not symmetric (1e-12) or not positive definite.
    pub fn new(g: DMatrix<f64>) -> Result<Self> {
        if !g.is_square() || linalg::asymmetry(&g) > 1e-12 {
            return Err(Error::NotPositiveDefinite);
        }
        if g.clone().cholesky().is_none() {
            return Err(Error::NotPositiveDefinite);
        }
        Ok(Self(g))
    }
}

impl Metric for ConstantMetric {
    fn eval(&self, _u: &DVector<f64>) -> DMatrix<f64> {
        self.0.clone()
    }
}

/// Polyhedron `{x | A x <= b}`.
#[derive(Clone, Debug, PartialEq)]
pub struct Polyhedron {
    a: DMatrix<f64>,
    b: DVector<f64>,
}

impl Polyhedron {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        check_dim("polyhedron right-hand side", a.nrows(), b.len())?;
        if a.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("polyhedron matrix"));
        }
        check_finite("polyhedron right-hand side", &b)?;
        for (i, row) in a.row_iter().enumerate() {
            if row.norm() == 0.0 {
                return Err(Error::ZeroRow { row: i });
            }
        }
        Ok(Self { a, b })
    }

    /// Box `lower <= x <= upper`, encoded as `p` upper-bound rows followed by
    /// `p` lower-bound rows.
    pub fn from_box(lower: &[f64], upper: &[f64]) -> Result<Self> {
        check_dim("box bounds", lower.len(), upper.len())?;
        let p = lower.len();
        let mut a = DMatrix::zeros(2 * p, p);
        let mut b = DVector::zeros(2 * p);
        for i in 0..p {
            a[(i, i)] = 1.0;
            b[i] = upper[i];
            a[(p + i, i)] = -1.0;
            b[p + i] = -lower[i];
        }
        Self::new(a, b)
    }

    /// The whole space (no rows).
    pub fn whole_space(dim: usize) -> Self {
        Self {
            a: DMatrix::zeros(0, dim),
            b: DVector::zeros(0),
        }
    }

    pub fn dim(&self) -> usize {
        self.a.ncols()
    }

    pub fn num_rows(&self) -> usize {
        self.a.nrows()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    /// `A x - b`.
    pub fn residual(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("polyhedron point", self.dim(), x.len())?;
        Ok(&self.a * x - &self.b)
    }

    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> Result<bool> {
        Ok(self.residual(x)?.iter().all(|&r| r <= tol))
    }

    /// Indices with `A_i x - b_i >= -tol`; for feasible `x` these are the
    /// active rows.
    pub fn active_set(&self, x: &DVector<f64>, tol: f64) -> Result<Vec<usize>> {
        Ok(self
            .residual(x)?
            .iter()
            .enumerate()
            .filter(|(_, &r)| r >= -tol)
            .map(|(i, _)| i)
            .collect())
    }

    /// Componentwise `max{0, A x - b}`.
    pub fn violation(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(linalg::positive_part(&self.residual(x)?))
    }

    /// Bounds `(lower, upper)` if every row is axis-aligned. Missing bounds
    /// are infinite.
    pub fn as_box(&self) -> Option<(DVector<f64>, DVector<f64>)> {
        let p = self.dim();
        let mut lo = DVector::from_element(p, f64::NEG_INFINITY);
        let mut hi = DVector::from_element(p, f64::INFINITY);
        for (i, row) in self.a.row_iter().enumerate() {
            let mut nz = row.iter().enumerate().filter(|(_, &v)| v != 0.0);
            let (j, &coef) = nz.next()?;
            if nz.next().is_some() {
                return None;
            }
            let bound = self.b[i] / coef;
            if coef > 0.0 {
                hi[j] = hi[j].min(bound);
            } else {
                lo[j] = lo[j].max(bound);
            }
        }
        Some((lo, hi))
    }

    /// Vertices by enumerating every `p`-subset of rows. Intended for the
    /// small sets used here.
    pub fn vertices(&self) -> Vec<DVector<f64>> {
        let p = self.dim();
        let mut out: Vec<DVector<f64>> = Vec::new();
        for subset in (0..self.num_rows()).combinations(p) {
            let rows = linalg::select_rows(&self.a, &subset);
            let rhs = linalg::select_entries(&self.b, &subset);
            let Some(x) = rows.lu().solve(&rhs) else {
                continue;
            };
            if !x.iter().all(|v| v.is_finite()) {
                continue;
            }
            let scale = 1.0 + x.amax();
            if self.contains(&x, 1e-10 * scale).unwrap_or(false)
                && !out.iter().any(|v| (v - &x).amax() <= 1e-10 * scale)
            {
                out.push(x);
            }
        }
        out
    }

    /// Axis-aligned bounding box; errors if the set is unbounded or empty.
    pub fn bounding_box(&self) -> Result<(DVector<f64>, DVector<f64>)> {
        if let Some((lo, hi)) = self.as_box() {
            if lo.iter().chain(hi.iter()).all(|v| v.is_finite()) {
                if lo.iter().zip(hi.iter()).any(|(l, h)| l > h) {
                    return Err(Error::Unbounded("bound an empty box"));
                }
                return Ok((lo, hi));
            }
        }
        let verts = self.vertices();
        if verts.is_empty() {
            return Err(Error::Unbounded("compute a bounding box"));
        }
        let p = self.dim();
        let mut lo = DVector::from_element(p, f64::INFINITY);
        let mut hi = DVector::from_element(p, f64::NEG_INFINITY);
        for v in &verts {
            for j in 0..p {
                lo[j] = lo[j].min(v[j]);
                hi[j] = hi[j].max(v[j]);
            }
        }
        // A bounded polytope must not admit a recession direction: check
        // that the midpoint pushed far along each axis leaves the set.
        let mid = (&lo + &hi) * 0.5;
        let span = (&hi - &lo).amax().max(1.0);
        for j in 0..p {
            for sign in [-1.0, 1.0] {
                let mut probe = mid.clone();
                probe[j] += sign * 1e3 * span;
                if self.contains(&probe, 0.0)? {
                    return Err(Error::Unbounded("compute a bounding box"));
                }
            }
        }
        Ok((lo, hi))
    }
}

/// A complete feedback-optimization instance.
#[derive(Clone)]
pub struct ProblemSpec {
    pub name: String,
    pub plant: Arc<dyn Plant>,
    pub objective: Arc<dyn Objective>,
    pub input_set: Polyhedron,
    pub output_set: Polyhedron,
    pub metric: Arc<dyn Metric>,
}

impl fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("name", &self.name)
            .field("input_dim", &self.input_dim())
            .field("output_dim", &self.output_dim())
            .field("input_rows", &self.input_set.num_rows())
            .field("output_rows", &self.output_set.num_rows())
            .finish()
    }
}

impl ProblemSpec {
    pub fn new(
        name: impl Into<String>,
        plant: Arc<dyn Plant>,
        objective: Arc<dyn Objective>,
        input_set: Polyhedron,
        output_set: Polyhedron,
        metric: Arc<dyn Metric>,
    ) -> Result<Self> {
        check_dim("input set", plant.input_dim(), input_set.dim())?;
        check_dim("output set", plant.output_dim(), output_set.dim())?;
        Ok(Self {
            name: name.into(),
            plant,
            objective,
            input_set,
            output_set,
            metric,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.plant.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.plant.output_dim()
    }

    pub fn eval_plant(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        eval_plant(self.plant.as_ref(), u)
    }

    pub fn plant_jacobian(&self, u: &DVector<f64>) -> Result<DMatrix<f64>> {
        eval_plant_jacobian(self.plant.as_ref(), u)
    }

    pub fn metric_at(&self, u: &DVector<f64>) -> Result<DMatrix<f64>> {
        check_dim("metric point", self.input_dim(), u.len())?;
        let g = self.metric.eval(u);
        check_dim("metric rows", self.input_dim(), g.nrows())?;
        check_dim("metric cols", self.input_dim(), g.ncols())?;
        Ok(g)
    }

    pub fn objective_value(&self, u: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
        check_dim("objective input", self.input_dim(), u.len())?;
        check_dim("objective output", self.output_dim(), y.len())?;
        Ok(self.objective.eval(u, y))
    }

    /// Composed cost `Phi(u, h(u))`.
    pub fn reduced_cost(&self, u: &DVector<f64>) -> Result<f64> {
        let y = self.eval_plant(u)?;
        self.objective_value(u, &y)
    }

    /// Gradient of `Phi(u, h(u))`, i.e. `grad_u Phi + grad h' grad_y Phi`,
    /// evaluated with the supplied measurement `y`.
    pub fn reduced_gradient(&self, u: &DVector<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("reduced gradient input", self.input_dim(), u.len())?;
        check_dim("reduced gradient output", self.output_dim(), y.len())?;
        let p = self.input_dim();
        let n = self.output_dim();
        let grad = self.objective.gradient(u, y);
        check_dim("objective gradient", p + n, grad.len())?;
        let jac = self.plant_jacobian(u)?;
        Ok(grad.rows(0, p) + jac.transpose() * grad.rows(p, n))
    }

    /// `C grad h(u)`: the output-constraint rows pulled back to input space.
    pub fn output_constraint_jacobian(&self, u: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(self.output_set.a() * self.plant_jacobian(u)?)
    }

    /// Componentwise `max{0, C h(u) - d}`.
    pub fn output_violation(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        self.output_set.violation(&self.eval_plant(u)?)
    }
}

pub fn eval_plant(plant: &dyn Plant, u: &DVector<f64>) -> Result<DVector<f64>> {
    check_dim("plant input", plant.input_dim(), u.len())?;
    check_finite("plant input", u)?;
    let y = plant.eval(u);
    check_dim("plant output", plant.output_dim(), y.len())?;
    Ok(y)
}

pub fn eval_plant_jacobian(plant: &dyn Plant, u: &DVector<f64>) -> Result<DMatrix<f64>> {
    check_dim("plant input", plant.input_dim(), u.len())?;
    check_finite("plant input", u)?;
    let j = plant.jacobian(u);
    check_dim("jacobian rows", plant.output_dim(), j.nrows())?;
    check_dim("jacobian cols", plant.input_dim(), j.ncols())?;
    Ok(j)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_box() -> Polyhedron {
        Polyhedron::from_box(&[-1.0, -1.0], &[1.0, 1.0]).unwrap()
    }

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn box_active_sets() {
        let set = unit_box();
        assert_eq!(set.active_set(&v(&[1.0, 0.0]), ACTIVE_TOL).unwrap(), vec![0]);
        assert!(set.active_set(&v(&[0.0, 0.0]), ACTIVE_TOL).unwrap().is_empty());
        assert_eq!(set.active_set(&v(&[1.0, -1.0]), ACTIVE_TOL).unwrap(), vec![0, 3]);
    }

    #[test]
    fn interval_violation() {
        let y_set = Polyhedron::new(DMatrix::from_column_slice(2, 1, &[1.0, -1.0]), v(&[1.0, 0.0]))
            .unwrap();
        assert_eq!(y_set.violation(&v(&[0.5])).unwrap(), v(&[0.0, 0.0]));
        let hi = y_set.violation(&v(&[1.2])).unwrap();
        assert!((hi[0] - 0.2).abs() < 1e-15 && hi[1] == 0.0);
        let lo = y_set.violation(&v(&[-0.3])).unwrap();
        assert!(lo[0] == 0.0 && (lo[1] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn zero_rows_rejected() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert!(matches!(
            Polyhedron::new(a, v(&[1.0, 1.0])),
            Err(Error::ZeroRow { row: 1 })
        ));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let set = unit_box();
        assert!(matches!(
            set.violation(&v(&[1.0])),
            Err(Error::DimensionMismatch { .. })
        ));
        let plant = FnPlant::identity(1);
        assert!(eval_plant(&plant, &v(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn identity_plant() {
        let plant = FnPlant::identity(1);
        assert_eq!(eval_plant(&plant, &v(&[3.0])).unwrap(), v(&[3.0]));
        assert_eq!(
            eval_plant_jacobian(&plant, &v(&[3.0])).unwrap(),
            DMatrix::identity(1, 1)
        );
    }

    #[test]
    fn chain_rule_collapses_for_identity_plant() {
        let problem = ProblemSpec::new(
            "id",
            Arc::new(FnPlant::identity(3)),
            Arc::new(FnObjective::new(
                |_, y| y.sum(),
                |u, y| {
                    let mut g = DVector::zeros(u.len() + y.len());
                    g.rows_mut(u.len(), y.len()).fill(1.0);
                    g
                },
            )),
            Polyhedron::whole_space(3),
            Polyhedron::whole_space(3),
            Arc::new(ConstantMetric::identity(3)),
        )
        .unwrap();
        let u = v(&[0.3, -2.0, 5.0]);
        let g = problem.reduced_gradient(&u, &u).unwrap();
        assert_eq!(g, DVector::from_element(3, 1.0));
    }

    #[test]
    fn box_detection_and_bounds() {
        let (lo, hi) = unit_box().as_box().unwrap();
        assert_eq!(lo, v(&[-1.0, -1.0]));
        assert_eq!(hi, v(&[1.0, 1.0]));
        // Triangle x >= 0, y >= 0, x + y <= 1.
        let tri = Polyhedron::new(
            DMatrix::from_row_slice(3, 2, &[-1.0, 0.0, 0.0, -1.0, 1.0, 1.0]),
            v(&[0.0, 0.0, 1.0]),
        )
        .unwrap();
        assert!(tri.as_box().is_none());
        assert_eq!(tri.vertices().len(), 3);
        let (lo, hi) = tri.bounding_box().unwrap();
        assert!((lo - v(&[0.0, 0.0])).amax() < 1e-12);
        assert!((hi - v(&[1.0, 1.0])).amax() < 1e-12);
        let half = Polyhedron::new(DMatrix::from_row_slice(1, 2, &[1.0, 0.0]), v(&[0.0])).unwrap();
        assert!(half.bounding_box().is_err());
    }

    #[test]
    fn metric_validation() {
        assert!(ConstantMetric::new(DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0])).is_ok());
        assert!(ConstantMetric::new(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0])).is_err());
        assert!(ConstantMetric::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0])).is_err());
    }
}
