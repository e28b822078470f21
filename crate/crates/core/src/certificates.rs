//! Lyapunov certificate for the projected feedback law.
//!
//! `V(u) = Φ̃(u) + ξ Σ max{0, C_i h(u) - d_i}` does not increase along the
//! closed loop when `α < α* = 2 λ_min(G) / (L + ξ Σ ℓ_i)`. The constants are
//! not available in closed form for general plants, so they are estimated by
//! seeded sampling over the input set and inflated by fixed safety factors.
//! Trajectories re-check the certificate a posteriori.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::controller::sigma_hat;
use crate::error::{check_dim, Error, Result};
use crate::linalg;
use crate::model::{Polyhedron, ProblemSpec};

pub const LIPSCHITZ_SAFETY: f64 = 1.1;
pub const LIPSCHITZ_FLOOR: f64 = 1e-12;
pub const XI_SAFETY: f64 = 2.0;
/// Lower bound on ξ; returned when no output multiplier is ever positive.
pub const XI_FLOOR: f64 = 1.0;
/// Relative slack allowed in `V(u+) - V(u) <= 0`.
pub const DESCENT_TOL: f64 = 1e-12;

/// Which points of the input set the estimators visit.
#[derive(Clone, Debug, PartialEq)]
pub enum Sampler {
    /// `per_axis` equally spaced values per coordinate of the bounding box,
    /// filtered to the set.
    Grid { per_axis: usize },
    /// Uniform points in the bounding box, filtered to the set.
    Random { count: usize, seed: u64 },
    /// Explicit points.
    Points(Vec<DVector<f64>>),
}

impl Default for Sampler {
    fn default() -> Self {
        Sampler::Random { count: 400, seed: 0 }
    }
}

impl Sampler {
    fn seed(&self) -> u64 {
        match self {
            Sampler::Random { seed, .. } => *seed,
            _ => 0,
        }
    }

    pub fn points(&self, set: &Polyhedron) -> Result<Vec<DVector<f64>>> {
        let p = set.dim();
        match self {
            Sampler::Points(pts) => {
                for x in pts {
                    check_dim("sample point", p, x.len())?;
                }
                Ok(pts.clone())
            }
            Sampler::Grid { per_axis } => {
                let (lo, hi) = set.bounding_box()?;
                let k = (*per_axis).max(1);
                let total = k.pow(p as u32);
                let mut out = Vec::with_capacity(total);
                for flat in 0..total {
                    let mut idx = flat;
                    let x = DVector::from_fn(p, |j, _| {
                        let i = idx % k;
                        idx /= k;
                        if k == 1 {
                            0.5 * (lo[j] + hi[j])
                        } else {
                            lo[j] + (hi[j] - lo[j]) * i as f64 / (k - 1) as f64
                        }
                    });
                    if set.contains(&x, 0.0)? {
                        out.push(x);
                    }
                }
                Ok(out)
            }
            Sampler::Random { count, seed } => {
                let (lo, hi) = set.bounding_box()?;
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let mut out = Vec::with_capacity(*count);
                let mut attempts = 0usize;
                while out.len() < *count && attempts < 1000 * count.max(&1) {
                    attempts += 1;
                    let x = DVector::from_fn(p, |j, _| rng.random_range(lo[j]..=hi[j]));
                    if set.contains(&x, 0.0)? {
                        out.push(x);
                    }
                }
                Ok(out)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CertificateConstants {
    /// Lipschitz constant of `∇Φ̃` on the input set.
    pub l: f64,
    /// Lipschitz constants of the rows `C_i ∇h`.
    pub ell: DVector<f64>,
    /// Upper bound on the output multipliers.
    pub xi: f64,
    pub lambda_min_g: f64,
    pub alpha_star: f64,
}

impl CertificateConstants {
    pub fn new(l: f64, ell: DVector<f64>, xi: f64, lambda_min_g: f64) -> Result<Self> {
        // Written so that NaN fails the check.
        let positive = |x: f64| x > 0.0;
        if !(positive(l) && positive(xi) && positive(lambda_min_g) && ell.iter().all(|&e| positive(e))) {
            return Err(Error::Config(
                "certificate constants must all be positive".into(),
            ));
        }
        let alpha_star = alpha_star(lambda_min_g, l, xi, &ell);
        Ok(Self {
            l,
            ell,
            xi,
            lambda_min_g,
            alpha_star,
        })
    }
}

/// `2 λ_min(G) / (L + ξ Σ ℓ_i)`.
pub fn alpha_star(lambda_min_g: f64, l: f64, xi: f64, ell: &DVector<f64>) -> f64 {
    2.0 * lambda_min_g / (l + xi * ell.sum())
}

/// `Φ̃(u) + ξ Σ max{0, C_i h(u) - d_i}`.
pub fn lyapunov_value(problem: &ProblemSpec, xi: f64, u: &DVector<f64>) -> Result<f64> {
    let y = problem.eval_plant(u)?;
    let cost = problem.objective_value(u, &y)?;
    let violation = problem.output_set.violation(&y)?.sum();
    Ok(cost + xi * violation)
}

/// Per-row bound `ℓ_i / 2 ‖α w‖²` on the output violation after one step.
pub fn transient_violation_bound(ell: &DVector<f64>, alpha: f64, w: &DVector<f64>) -> DVector<f64> {
    let step_sq = (w * alpha).norm_squared();
    ell.map(|e| 0.5 * e * step_sq)
}

/// `true` when `after` does not exceed `before` beyond the relative slack.
pub fn is_descent(before: f64, after: f64) -> bool {
    after - before <= DESCENT_TOL * (1.0 + before.abs())
}

#[derive(Clone, Debug, PartialEq)]
pub struct LipschitzEstimate {
    pub l: f64,
    pub ell: DVector<f64>,
}

struct Sample {
    x: DVector<f64>,
    grad: DVector<f64>,
    rows: DMatrix<f64>,
}

fn sample_derivatives(problem: &ProblemSpec, x: DVector<f64>) -> Result<Sample> {
    let y = problem.eval_plant(&x)?;
    let grad = problem.reduced_gradient(&x, &y)?;
    let rows = problem.output_constraint_jacobian(&x)?;
    Ok(Sample { x, grad, rows })
}

/// Sampled Lipschitz constants of `∇Φ̃` and of each `C_i ∇h`.
///
/// Difference quotients are taken over all sample pairs plus short
/// probes from every sample along the coordinate axes and one random
/// direction, so curvature peaks are seen locally as well.
pub fn estimate_lipschitz(problem: &ProblemSpec, sampler: &Sampler) -> Result<LipschitzEstimate> {
    let set = &problem.input_set;
    let base = sampler.points(set)?;
    let p = problem.input_dim();
    let span = match set.bounding_box() {
        Ok((lo, hi)) => (hi - lo).amax().max(f64::EPSILON),
        Err(_) => 1.0,
    };
    let probe = 1e-4 * span;
    let mut rng = ChaCha8Rng::seed_from_u64(sampler.seed() ^ 0x5eed);

    let mut pairs: Vec<(DVector<f64>, DVector<f64>)> = Vec::new();
    for x in &base {
        let mut dirs: Vec<DVector<f64>> = (0..p)
            .map(|k| DVector::from_fn(p, |j, _| if j == k { 1.0 } else { 0.0 }))
            .collect();
        let random = DVector::from_fn(p, |_, _| rng.random_range(-1.0..=1.0));
        if random.norm() > 0.0 {
            dirs.push(random.normalize());
        }
        for d in dirs {
            for sign in [1.0, -1.0] {
                let z = x + &d * (sign * probe);
                if set.contains(&z, 0.0)? {
                    pairs.push((x.clone(), z));
                    break;
                }
            }
        }
    }

    let samples: Vec<Sample> = base
        .iter()
        .cloned()
        .map(|x| sample_derivatives(problem, x))
        .collect::<Result<_>>()?;
    let probes: Vec<(Sample, Sample)> = pairs
        .into_iter()
        .map(|(x, z)| Ok((sample_derivatives(problem, x)?, sample_derivatives(problem, z)?)))
        .collect::<Result<_>>()?;

    let l_rows = problem.output_set.num_rows();
    let mut best_l = 0.0_f64;
    let mut best_ell = vec![0.0_f64; l_rows];
    let mut visit = |a: &Sample, b: &Sample| {
        let dist = (&a.x - &b.x).norm();
        if dist == 0.0 {
            return;
        }
        best_l = best_l.max((&a.grad - &b.grad).norm() / dist);
        for (i, e) in best_ell.iter_mut().enumerate() {
            *e = e.max((a.rows.row(i) - b.rows.row(i)).norm() / dist);
        }
    };
    for i in 0..samples.len() {
        for j in (i + 1)..samples.len() {
            visit(&samples[i], &samples[j]);
        }
    }
    for (a, b) in &probes {
        visit(a, b);
    }

    Ok(LipschitzEstimate {
        l: (LIPSCHITZ_SAFETY * best_l).max(LIPSCHITZ_FLOOR),
        ell: DVector::from_iterator(
            l_rows,
            best_ell.into_iter().map(|e| (LIPSCHITZ_SAFETY * e).max(LIPSCHITZ_FLOOR)),
        ),
    })
}

/// Smallest eigenvalue of `G(u)` over the sampled points.
pub fn estimate_lambda_min_g(problem: &ProblemSpec, sampler: &Sampler) -> Result<f64> {
    let mut best = f64::INFINITY;
    for x in sampler.points(&problem.input_set)? {
        best = best.min(linalg::min_eigenvalue(&problem.metric_at(&x)?));
    }
    if !best.is_finite() {
        return Err(Error::Config("sampler produced no points".into()));
    }
    Ok(best)
}

#[derive(Clone, Debug, PartialEq)]
pub struct XiEstimate {
    pub xi: f64,
    /// Largest output multiplier seen over the samples.
    pub max_mu: f64,
    pub evaluated: usize,
    /// Samples where the linearized set was empty.
    pub skipped: Vec<DVector<f64>>,
}

/// `max(XI_SAFETY * max_mu, XI_FLOOR)`.
pub fn xi_from_observed(max_mu: f64) -> f64 {
    (XI_SAFETY * max_mu).max(XI_FLOOR)
}

/// Bound on the output multipliers of the projection QP at step size `alpha`,
/// taken as the largest multiplier over the samples times [`XI_SAFETY`].
pub fn estimate_xi(problem: &ProblemSpec, alpha: f64, sampler: &Sampler) -> Result<XiEstimate> {
    let points = sampler.points(&problem.input_set)?;
    let results: Vec<(DVector<f64>, Result<f64>)> = points
        .into_par_iter()
        .map(|u| {
            let mu = problem
                .eval_plant(&u)
                .and_then(|y| sigma_hat(problem, &u, &y, alpha))
                .map(|step| step.mu.iter().copied().fold(0.0, f64::max));
            (u, mu)
        })
        .collect();
    let mut max_mu = 0.0_f64;
    let mut evaluated = 0;
    let mut skipped = Vec::new();
    for (u, res) in results {
        match res {
            Ok(mu) => {
                evaluated += 1;
                max_mu = max_mu.max(mu);
            }
            Err(Error::LinearizedSetEmpty { .. }) => {
                log::warn!("linearized set empty at sample {:?}; skipped", u.as_slice());
                skipped.push(u);
            }
            Err(e) => return Err(e),
        }
    }
    Ok(XiEstimate {
        xi: xi_from_observed(max_mu),
        max_mu,
        evaluated,
        skipped,
    })
}

/// Estimate every constant with one sampler; ξ is evaluated at `alpha`.
pub fn estimate_constants(problem: &ProblemSpec, alpha: f64, sampler: &Sampler) -> Result<CertificateConstants> {
    let lip = estimate_lipschitz(problem, sampler)?;
    let xi = estimate_xi(problem, alpha, sampler)?;
    let lambda = estimate_lambda_min_g(problem, sampler)?;
    CertificateConstants::new(lip.l, lip.ell, xi.xi, lambda)
}
