//! Experiment harness for `mmslab-core`: scenario files, the experiments
//! behind them, and self-describing JSON/CSV reports.

pub mod error;
pub mod experiments;
pub mod io;
pub mod profiles;
pub mod report;
pub mod scenario;

pub use error::{HarnessError, Result};
pub use report::{Check, Report};
pub use scenario::{load_scenario, parse_scenario, Experiment, Scenario};
