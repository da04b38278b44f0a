//! Configuration, orchestration and the command line.
//!
//! Every subcommand runs all of its checks before reporting, writes its
//! outputs into one directory and summarizes them in `report.txt`.

pub mod blowup;
pub mod cli;
pub mod config;
pub mod plot;
pub mod report;
pub mod simulate;

pub use blowup::{compare_blowup, BlowupParams, BlowupReport, Outcome};
pub use cli::{cli, run_cli, EXIT_FAIL, EXIT_OK, EXIT_USAGE};
pub use config::{InitialData, RunConfig, Tolerances, REFERENCE_CONFIG};
pub use plot::{plot, render_svg, PlotStyle};
pub use report::{Monitor, RunReport, VerdictRow};
pub use simulate::{simulate, simulate_all, Simulation};
