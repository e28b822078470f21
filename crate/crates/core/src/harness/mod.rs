//! Scenario files, closed-loop runs, sweeps and CSV output.

pub mod config;
pub mod csvlog;
pub mod fdcheck;
pub mod registry;
pub mod trajectory;

pub use config::{InitialCondition, ScenarioConfig, Scheme, SweepGrid};
pub use csvlog::{header, read_csv, write_csv};
pub use fdcheck::{finite_difference_check, FdReport};
pub use registry::{all_builtins, builtin_example, lookup, BUILTIN_NAMES};
pub use trajectory::{
    compare, run_scenario, run_trajectory, simulate_projected, simulate_saddle, sweep, CompareRow, Status,
    TrajectoryLog, TrajectoryRow,
};
