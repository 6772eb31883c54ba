//! Experiment harness for projection-based reduced-order models.
//!
//! An experiment runs a high-dimensional model, compresses its snapshots
//! into POD bases, replays the dynamics with Galerkin and Petrov-Galerkin
//! reduced models (optionally hyperreduced) and reports how well
//! quantities of interest are reproduced.

pub mod config;
pub mod error;
pub mod flow;
pub mod pipeline;
pub mod qoi;
pub mod report;
pub mod snapio;

use std::path::Path;

pub use config::{ExperimentConfig, Stage};
pub use error::{HarnessError, HarnessResult};
pub use pipeline::{Classification, Experiment, PipelineState, RunKind, RunRecord};
pub use qoi::{compute_energy, compute_enstrophy_dissipation, relative_error, QoiProbe};
pub use report::{OutputDir, RunReport};

/// Runs every stage named in `config` and, when `out` is given, writes the
/// report, CSV histories and artifacts there.
pub fn run_experiment(config: &ExperimentConfig, out: Option<&Path>) -> HarnessResult<RunReport> {
    let experiment = Experiment::new(config.clone())?;
    let mut state = PipelineState::default();
    experiment.run(&mut state)?;
    let report = RunReport::new(config, experiment.qoi_labels(), &state);
    if let Some(dir) = out {
        let dir = OutputDir::new(dir)?;
        dir.save_state(&state, config.report.write_artifacts)?;
        dir.write_report(&report, config.report.write_csv)?;
    }
    Ok(report)
}
