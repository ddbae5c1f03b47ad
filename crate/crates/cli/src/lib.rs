//! Command-line front end for `rclab-core`: runs, ESD solves, verification
//! reports, CSV traces and SVG plots.

pub mod commands;
pub mod csvio;
pub mod error;
pub mod report;
pub mod svg;

pub use commands::{cmd_analyze, cmd_esd, cmd_plot, cmd_simulate, cmd_verify, resolve_scenario, RunOptions, Scenario};
pub use error::{CliError, Result};
pub use report::RunReport;
