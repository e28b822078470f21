//! Closed-loop runs of the projected controller and the saddle-point scheme.

use nalgebra::DVector;
use rayon::prelude::*;

use crate::baselines::{saddle_kkt_residual, saddle_point_step, SaddlePointState};
use crate::certificates::{
    estimate_constants, is_descent, lyapunov_value, transient_violation_bound, CertificateConstants, Sampler,
    XI_FLOOR,
};
use crate::controller::{feedback_step, problem_kkt_residual};
use crate::error::{Error, Result};
use crate::harness::config::{InitialCondition, ScenarioConfig, Scheme, SweepGrid};
use crate::harness::registry;
use crate::model::ProblemSpec;

/// Slack allowed on top of the per-step violation bound.
pub const VIOLATION_BOUND_SLACK: f64 = 1e-9;
/// Samples used when a scenario asks for certificate constants.
pub const CERTIFY_SAMPLES: usize = 400;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Converged,
    IterBudget,
    /// Budget exhausted on a run whose certificate failed along the way.
    CertificateViolated,
    Error,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRow {
    pub iter: usize,
    pub u: DVector<f64>,
    pub y: DVector<f64>,
    pub v: f64,
    /// `‖σ_α‖_G` (projected) or the primal-dual KKT residual (saddle).
    pub residual: f64,
    pub max_violation: f64,
    /// Output multipliers (projected) or dual iterate (saddle).
    pub mu: DVector<f64>,
}

/// A-posteriori checks of the Lyapunov certificate along one run.
#[derive(Clone, Debug, PartialEq)]
pub struct CertificateReport {
    pub constants: CertificateConstants,
    /// Steps where `V` increased beyond the relative slack.
    pub v_increases: usize,
    /// Steps where an output multiplier exceeded ξ.
    pub mu_exceedances: usize,
    /// Steps where the measured violation exceeded `ℓ_i/2 ‖αw‖²`.
    pub bound_violations: usize,
    pub max_mu: f64,
}

impl CertificateReport {
    pub fn violated(&self) -> bool {
        self.v_increases > 0 || self.mu_exceedances > 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryLog {
    pub scheme: Scheme,
    pub alpha: f64,
    pub input_dim: usize,
    pub output_dim: usize,
    pub dual_dim: usize,
    pub rows: Vec<TrajectoryRow>,
    pub status: Status,
    pub error: Option<String>,
    /// KKT residual of the original problem at the last iterate using the
    /// last step's multipliers (projected scheme only).
    pub final_kkt_residual: Option<f64>,
    pub certificate: Option<CertificateReport>,
}

impl TrajectoryLog {
    fn empty(scheme: Scheme, alpha: f64, problem: &ProblemSpec) -> Self {
        Self {
            scheme,
            alpha,
            input_dim: problem.input_dim(),
            output_dim: problem.output_dim(),
            dual_dim: problem.output_set.num_rows(),
            rows: Vec::new(),
            status: Status::IterBudget,
            error: None,
            final_kkt_residual: None,
            certificate: None,
        }
    }

    pub fn last(&self) -> Option<&TrajectoryRow> {
        self.rows.last()
    }

    pub fn final_residual(&self) -> f64 {
        self.last().map_or(f64::INFINITY, |r| r.residual)
    }

    /// Number of controller steps taken.
    pub fn steps(&self) -> usize {
        self.rows.len().saturating_sub(1)
    }

    /// Largest output violation over the iterates after the initial one.
    pub fn max_transient_violation(&self) -> f64 {
        self.rows.iter().skip(1).map(|r| r.max_violation).fold(0.0, f64::max)
    }

    /// Largest violation committed by a step that started from an iterate
    /// satisfying the output constraints. Violations left over from an
    /// infeasible start are excluded.
    pub fn max_violation_from_feasible(&self) -> f64 {
        self.rows
            .windows(2)
            .filter(|w| w[0].max_violation <= 0.0)
            .map(|w| w[1].max_violation)
            .fold(0.0, f64::max)
    }

    fn fail(&mut self, err: Error) {
        self.status = Status::Error;
        self.error = Some(err.to_string());
    }
}

fn max_violation(problem: &ProblemSpec, y: &DVector<f64>) -> Result<f64> {
    Ok(problem.output_set.violation(y)?.iter().copied().fold(0.0, f64::max))
}

/// Iterate `u+ = u + α σ_α(u)` from `u0`.
///
/// Row `k` holds the iterate `u_k` and the controller quantities computed
/// there. The run stops at the first row with `‖σ_α‖_G <= tol` or after
/// `max_iters` steps. With `certificate`, each step is checked for
/// `V`-descent, `μ <= ξ` and the per-step violation bound.
pub fn simulate_projected(
    problem: &ProblemSpec,
    u0: &DVector<f64>,
    alpha: f64,
    max_iters: usize,
    tol: f64,
    certificate: Option<&CertificateConstants>,
    xi_for_v: f64,
) -> TrajectoryLog {
    let mut log = TrajectoryLog::empty(Scheme::Projected, alpha, problem);
    let xi = certificate.map_or(xi_for_v, |c| c.xi);
    let mut report = certificate.map(|c| CertificateReport {
        constants: c.clone(),
        v_increases: 0,
        mu_exceedances: 0,
        bound_violations: 0,
        max_mu: 0.0,
    });
    let mut u = u0.clone();
    let mut prev: Option<(f64, DVector<f64>)> = None;

    for iter in 0..=max_iters {
        let outcome = (|| -> Result<(TrajectoryRow, crate::controller::ControllerStep)> {
            let step = feedback_step(problem, &u, alpha)?;
            let row = TrajectoryRow {
                iter,
                u: u.clone(),
                y: step.y.clone(),
                v: lyapunov_value(problem, xi, &u)?,
                residual: step.stationarity_residual(),
                max_violation: max_violation(problem, &step.y)?,
                mu: step.mu.clone(),
            };
            Ok((row, step))
        })();
        let (row, step) = match outcome {
            Ok(x) => x,
            Err(e) => {
                log.fail(e);
                break;
            }
        };

        if let (Some(rep), Some(c)) = (report.as_mut(), certificate) {
            if let Some((v_prev, bound)) = &prev {
                if !is_descent(*v_prev, row.v) {
                    rep.v_increases += 1;
                }
                let gap = problem
                    .output_set
                    .residual(&row.y)
                    .expect("dimensions checked by feedback_step");
                if gap.iter().zip(bound.iter()).any(|(g, b)| *g > b + VIOLATION_BOUND_SLACK) {
                    rep.bound_violations += 1;
                }
            }
            let mu_max = step.mu.iter().copied().fold(0.0, f64::max);
            rep.max_mu = rep.max_mu.max(mu_max);
            if mu_max > c.xi {
                rep.mu_exceedances += 1;
            }
            prev = Some((row.v, transient_violation_bound(&c.ell, alpha, &step.w)));
        }

        let converged = row.residual <= tol;
        log.rows.push(row);
        if converged || iter == max_iters {
            log.status = if converged { Status::Converged } else { Status::IterBudget };
            log.final_kkt_residual = problem_kkt_residual(problem, &u, &step.nu, &step.mu).ok();
            break;
        }
        u = step.u_next;
    }

    if let Some(rep) = &report {
        if rep.violated() && log.status == Status::IterBudget {
            log.status = Status::CertificateViolated;
        }
    }
    log.certificate = report;
    log
}

/// Projected primal-dual iteration from `(u0, μ = 0)`.
#[allow(clippy::too_many_arguments)]
pub fn simulate_saddle(
    problem: &ProblemSpec,
    u0: &DVector<f64>,
    alpha: f64,
    gamma: f64,
    rho: f64,
    max_iters: usize,
    tol: f64,
    xi_for_v: f64,
) -> TrajectoryLog {
    let mut log = TrajectoryLog::empty(Scheme::Saddle, alpha, problem);
    let mut state = match SaddlePointState::new(
        u0.clone(),
        DVector::zeros(problem.output_set.num_rows()),
        alpha,
        gamma,
        rho,
    ) {
        Ok(s) => s,
        Err(e) => {
            log.fail(e);
            return log;
        }
    };
    for iter in 0..=max_iters {
        let row = (|| -> Result<TrajectoryRow> {
            let y = problem.eval_plant(&state.u)?;
            let row = TrajectoryRow {
                iter,
                u: state.u.clone(),
                v: lyapunov_value(problem, xi_for_v, &state.u)?,
                residual: saddle_kkt_residual(problem, &state.u, &state.mu, rho)?,
                max_violation: max_violation(problem, &y)?,
                mu: state.mu.clone(),
                y,
            };
            if !(row.residual.is_finite() && row.mu.iter().all(|m| m.is_finite())) {
                return Err(Error::NonFinite("saddle-point iterate"));
            }
            Ok(row)
        })();
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                log.fail(e);
                return log;
            }
        };
        let converged = row.residual <= tol;
        log.rows.push(row);
        if converged || iter == max_iters {
            log.status = if converged { Status::Converged } else { Status::IterBudget };
            return log;
        }
        state = match saddle_point_step(&state, problem) {
            Ok(s) => s,
            Err(e) => {
                log.fail(e);
                return log;
            }
        };
    }
    log
}

/// Certificate constants for a scenario, estimated at the configured step
/// size with a seeded random sampler.
pub fn scenario_constants(problem: &ProblemSpec, config: &ScenarioConfig) -> Result<CertificateConstants> {
    estimate_constants(
        problem,
        config.alpha,
        &Sampler::Random {
            count: CERTIFY_SAMPLES,
            seed: config.seed,
        },
    )
}

fn run_point(problem: &ProblemSpec, config: &ScenarioConfig, u0: &DVector<f64>, constants: Option<&CertificateConstants>) -> TrajectoryLog {
    let xi_for_v = config.xi.unwrap_or(XI_FLOOR);
    match config.scheme {
        Scheme::Projected => {
            let alpha = match (config.alpha_fraction, constants) {
                (Some(frac), Some(c)) => frac * c.alpha_star,
                _ => config.alpha,
            };
            simulate_projected(problem, u0, alpha, config.max_iters, config.stationarity_tol, constants, xi_for_v)
        }
        Scheme::Saddle => simulate_saddle(
            problem,
            u0,
            config.alpha,
            config.gamma.unwrap_or_default(),
            config.rho.unwrap_or_default(),
            config.max_iters,
            config.stationarity_tol,
            xi_for_v,
        ),
    }
}

fn prepare(config: &ScenarioConfig) -> Result<(ProblemSpec, Vec<DVector<f64>>, Option<CertificateConstants>)> {
    config.validate()?;
    let problem = registry::lookup(&config.problem)?;
    let points = config.initial_points(&problem)?;
    let wants_constants = config.scheme == Scheme::Projected && (config.certify || config.alpha_fraction.is_some());
    let constants = if wants_constants {
        Some(scenario_constants(&problem, config)?)
    } else {
        None
    };
    Ok((problem, points, constants))
}

/// Run a scenario with a single initial point.
pub fn run_trajectory(config: &ScenarioConfig) -> Result<TrajectoryLog> {
    if let InitialCondition::Grid(_) = config.u0 {
        return Err(Error::Config("run_trajectory needs a single u0 point; use run_scenario for grids".into()));
    }
    let (problem, points, constants) = prepare(config)?;
    Ok(run_point(&problem, config, &points[0], constants.as_ref()))
}

/// Run a scenario for every initial point (grids expand in row-major order
/// with the first coordinate varying fastest).
pub fn run_scenario(config: &ScenarioConfig) -> Result<Vec<TrajectoryLog>> {
    let (problem, points, constants) = prepare(config)?;
    Ok(points
        .par_iter()
        .map(|u0| run_point(&problem, config, u0, constants.as_ref()))
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRun {
    pub config: ScenarioConfig,
    pub logs: Vec<TrajectoryLog>,
}

/// One scenario per grid point (cartesian product of the non-empty lists).
pub fn sweep(base: &ScenarioConfig, grid: &SweepGrid) -> Result<Vec<SweepRun>> {
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let or_base = |list: &[f64], base: Option<f64>| -> Vec<Option<f64>> {
        if list.is_empty() {
            vec![base]
        } else {
            list.iter().copied().map(Some).collect()
        }
    };
    let mut configs = Vec::new();
    for alpha in or_base(&grid.alpha, Some(base.alpha)) {
        for gamma in or_base(&grid.gamma, base.gamma) {
            for rho in or_base(&grid.rho, base.rho) {
                configs.push(ScenarioConfig {
                    alpha: alpha.unwrap_or(base.alpha),
                    gamma,
                    rho,
                    ..base.clone()
                });
            }
        }
    }
    configs
        .into_par_iter()
        .map(|config| {
            let logs = run_scenario(&config)?;
            Ok(SweepRun { config, logs })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompareRow {
    pub u0: DVector<f64>,
    pub projected: TrajectoryLog,
    pub saddle: TrajectoryLog,
}

/// Default dual step and augmentation for `compare` when the scenario does
/// not set them.
pub const COMPARE_DEFAULT_GAMMA: f64 = 0.5;
pub const COMPARE_DEFAULT_RHO: f64 = 1.0;

/// Projected and saddle-point runs from the same initial points with the
/// same primal step size.
pub fn compare(config: &ScenarioConfig) -> Result<Vec<CompareRow>> {
    config.validate()?;
    let problem = registry::lookup(&config.problem)?;
    let points = config.initial_points(&problem)?;
    let gamma = config.gamma.unwrap_or(COMPARE_DEFAULT_GAMMA);
    let rho = config.rho.unwrap_or(COMPARE_DEFAULT_RHO);
    let xi = config.xi.unwrap_or(XI_FLOOR);
    Ok(points
        .par_iter()
        .map(|u0| CompareRow {
            u0: u0.clone(),
            projected: simulate_projected(&problem, u0, config.alpha, config.max_iters, config.stationarity_tol, None, xi),
            saddle: simulate_saddle(&problem, u0, config.alpha, gamma, rho, config.max_iters, config.stationarity_tol, xi),
        })
        .collect())
}
