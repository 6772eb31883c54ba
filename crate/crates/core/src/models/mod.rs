//! Built-in desk-scale high-dimensional models.

pub mod burgers;
pub mod linear;
pub mod quadratic;
pub mod spectral;

pub use burgers::{BurgersModel, UpwindOrder};
pub use linear::LinearModel;
pub use quadratic::{third_difference_defect, QuadraticModel, QuadraticOperator, QuadraticTerm};
pub use spectral::{SpectralConfig, SpectralField, SpectralNSModel};
