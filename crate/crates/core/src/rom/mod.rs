//! Reduced bases, projections and reduced-order stepping.

pub mod pod;
pub mod projection;
pub mod prom;
pub mod quadratic;
pub mod snapshots;
pub mod weighting;

pub use pod::{build_pod, energy_fraction, select_rank, Normalization, PodCriterion, ReducedBasis};
pub use projection::{
    galerkin_reduced_residual, left_basis, min_weighted_residual, pg_reduced_system, step_direction_error_check,
    LeftBasisStrategy, RecomputePolicy, StepDirectionCheck, StrategyKind,
};
pub use prom::{solve_prom_step, FullOrderBackend, PromSystem, ReducedBackend, ReducedStage};
pub use quadratic::{precompute_quadratic, verify_quadratic, QuadraticBackend, QuadraticRomOperators};
pub use snapshots::{collect_snapshots, SnapshotRecorder, SnapshotSchedule, SnapshotSet};
pub use weighting::{l1_weights, ResolvedWeight, ThetaSupplier, Weighting};
