//! Projection-based model order reduction: Galerkin and Petrov-Galerkin
//! reduced-order models built from any semi-discrete model, with quadratic
//! operator pre-computation and ECSW hyperreduction.

pub mod error;
pub mod linalg;
pub mod model;
pub mod models;
pub mod rom;
pub mod timeint;
pub mod hyper;

pub use error::{Error, Result};
pub use model::{
    jacobian_fd_check, residual, CellContribution, CellJacobian, Jacobian, LinearOperator,
    ParamPoint, SemiDiscreteModel, State,
};
