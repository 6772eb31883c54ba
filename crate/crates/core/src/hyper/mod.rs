//! ECSW hyperreduction.

pub mod ecsw;
pub mod nnls;

pub use ecsw::{
    assemble_training, hyperreduced_residual, nnls_solve, EcswSampleSet, EcswTrainingSystem, HyperreducedBackend,
};
pub use nnls::{nnls, NnlsSolution};
