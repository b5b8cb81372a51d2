//! Experiment plumbing around `sosp-core`: specs, drivers, artifact files,
//! hard-instance descriptors, ReLU dataset files and landscape grids.

pub mod dataset;
pub mod descriptor;
pub mod error;
pub mod landscape;
pub mod output;
pub mod run;
pub mod spec;

pub use error::{HarnessError, Result};
pub use run::{run, Outcome, RunOptions};
pub use spec::{ExperimentSpec, Kind, Resolved};
