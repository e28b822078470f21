//! Command-line driver for closed-loop feedback-optimization experiments.
//!
//! Exit codes: 0 when every run converged (or a report completed), 2 when a
//! run stopped without converging, 1 on errors.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use fbopt::certificates::{estimate_constants, Sampler};
use fbopt::harness::trajectory::CERTIFY_SAMPLES;
use fbopt::harness::{
    compare, finite_difference_check, lookup, run_scenario, sweep, write_csv, ScenarioConfig, Status, SweepGrid,
    TrajectoryLog,
};
use nalgebra::DVector;

#[derive(Parser)]
#[command(name = "fbopt", version, about = "Feedback optimization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write one CSV per initial condition.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Output directory; defaults to the scenario's `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a scenario for every point of a parameter grid.
    Sweep {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Projected and saddle-point schemes side by side.
    Compare {
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Derivative check and certificate constants for a builtin problem.
    Check {
        #[arg(long)]
        problem: String,
        /// Step size at which the multiplier bound is estimated.
        #[arg(long, default_value_t = 0.01)]
        alpha: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Random points for the finite-difference check.
        #[arg(long, default_value_t = 100)]
        points: usize,
    },
}

fn main() -> ExitCode {
    env_logger::init();
    match dispatch(Cli::parse().command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

/// Returns whether every run converged.
fn dispatch(command: Command) -> Result<bool> {
    match command {
        Command::Run { scenario, out } => {
            let config = load_scenario(&scenario)?;
            let dir = output_dir(out, &config)?;
            let logs = run_scenario(&config)?;
            write_logs(&dir, &logs)?;
            print_summary(&logs);
            Ok(all_converged(&logs))
        }
        Command::Sweep { scenario, grid, out } => {
            let config = load_scenario(&scenario)?;
            let dir = output_dir(out, &config)?;
            let grid = SweepGrid::load(&grid)?;
            let runs = sweep(&config, &grid)?;
            let mut ok = true;
            for (k, run) in runs.iter().enumerate() {
                let sub = dir.join(format!("run_{k:03}"));
                write_logs(&sub, &run.logs)?;
                fs::write(sub.join("scenario.cfg"), run.config.to_text())
                    .with_context(|| format!("writing {}", sub.display()))?;
                println!(
                    "# run_{k:03}: alpha={} gamma={} rho={}",
                    run.config.alpha,
                    opt(run.config.gamma),
                    opt(run.config.rho)
                );
                print_summary(&run.logs);
                ok &= all_converged(&run.logs);
            }
            Ok(ok)
        }
        Command::Compare { scenario } => {
            let config = load_scenario(&scenario)?;
            let rows = compare(&config)?;
            println!(
                "{:<24} {:<12} {:>8} {:>11} {:<12} {:>8} {:>11}",
                "u0", "projected", "steps", "residual", "saddle", "steps", "residual"
            );
            for row in &rows {
                println!(
                    "{:<24} {:<12} {:>8} {:>11.3e} {:<12} {:>8} {:>11.3e}",
                    fmt_vec(&row.u0),
                    format!("{:?}", row.projected.status),
                    row.projected.steps(),
                    row.projected.final_residual(),
                    format!("{:?}", row.saddle.status),
                    row.saddle.steps(),
                    row.saddle.final_residual(),
                );
            }
            Ok(true)
        }
        Command::Check {
            problem,
            alpha,
            seed,
            points,
        } => {
            let spec = lookup(&problem)?;
            let samples = Sampler::Random { count: points, seed }.points(&spec.input_set)?;
            let fd = finite_difference_check(&spec, &samples)?;
            let sampler = Sampler::Random {
                count: CERTIFY_SAMPLES,
                seed,
            };
            let c = estimate_constants(&spec, alpha, &sampler)?;
            println!("problem            {problem}");
            println!("fd points          {}", fd.points);
            println!("fd jacobian        {:.3e}", fd.jacobian);
            println!("fd cost gradient   {:.3e}", fd.objective_gradient);
            println!("fd reduced grad    {:.3e}", fd.reduced_gradient);
            println!("L                  {:.6}", c.l);
            println!("ell                {}", fmt_vec(&c.ell));
            println!("xi (alpha={alpha})   {:.6}", c.xi);
            println!("lambda_min(G)      {:.6}", c.lambda_min_g);
            println!("alpha*             {:.6e}", c.alpha_star);
            Ok(true)
        }
    }
}

fn load_scenario(path: &Path) -> Result<ScenarioConfig> {
    ScenarioConfig::load(path).with_context(|| format!("loading scenario {}", path.display()))
}

fn output_dir(out: Option<PathBuf>, config: &ScenarioConfig) -> Result<PathBuf> {
    match out.or_else(|| config.output_dir.clone()) {
        Some(dir) => Ok(dir),
        None => bail!("no output directory: pass --out or set output_dir in the scenario"),
    }
}

fn write_logs(dir: &Path, logs: &[TrajectoryLog]) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for (k, log) in logs.iter().enumerate() {
        let name = if logs.len() == 1 {
            "trajectory.csv".to_string()
        } else {
            format!("trajectory_{k:03}.csv")
        };
        write_csv(log, &dir.join(name))?;
    }
    Ok(())
}

fn print_summary(logs: &[TrajectoryLog]) {
    println!(
        "{:>4} {:<24} {:<20} {:>8} {:>11} {:>11}",
        "run", "u0", "status", "steps", "residual", "max_viol"
    );
    for (k, log) in logs.iter().enumerate() {
        let u0 = log.rows.first().map_or_else(String::new, |r| fmt_vec(&r.u));
        let mut status = format!("{:?}", log.status);
        if log.certificate.as_ref().is_some_and(|c| c.violated()) && log.status == Status::Converged {
            status.push('*');
        }
        println!(
            "{k:>4} {u0:<24} {status:<20} {:>8} {:>11.3e} {:>11.3e}",
            log.steps(),
            log.final_residual(),
            log.max_transient_violation()
        );
        if let Some(err) = &log.error {
            println!("     error: {err}");
        }
    }
    if logs.iter().any(|l| l.certificate.as_ref().is_some_and(|c| c.violated())) {
        println!("     * certificate check failed along the run (V increase or mu > xi)");
    }
}

fn all_converged(logs: &[TrajectoryLog]) -> bool {
    logs.iter().all(|l| l.status == Status::Converged)
}

fn fmt_vec(x: &DVector<f64>) -> String {
    let parts: Vec<String> = x.iter().map(|v| format!("{v:.4}")).collect();
    format!("({})", parts.join(", "))
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "-".into(), |v| v.to_string())
}
