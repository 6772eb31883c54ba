//! Implicit time integration and the nonlinear solvers behind it.

pub mod integrate;
pub mod newton;
pub mod tableau;

pub use integrate::{
    bdf3_step, dirk_step, rk4_integrate, HdmSystem, ImplicitSystem, Integrator, Scheme, StageContext, StageRecorder,
};
pub use newton::{
    gauss_newton_solve, least_squares, newton_iterate, newton_solve, LinearSolveStrategy, NewtonConfig,
    NewtonProblem, NewtonReport,
};
pub use tableau::{dirk2_tableau, dirk3_tableau, ButcherTableau};
