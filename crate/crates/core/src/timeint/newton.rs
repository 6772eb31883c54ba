//! Newton and Gauss-Newton iterations.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::linalg::dense_solve;
use crate::model::Jacobian;
use crate::rom::weighting::Weighting;

/// How full-order Newton corrections are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LinearSolveStrategy {
    /// Direct factorization when the Jacobian is materialized, otherwise the
    /// model's approximate shifted solve.
    #[default]
    Auto,
    /// Always factor the (materialized) Jacobian.
    Direct,
    /// Simplified Newton through the model's approximate shifted solve.
    ModelApproximate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewtonConfig {
    pub atol: f64,
    pub rtol: f64,
    pub max_iterations: usize,
    #[serde(default)]
    pub linear_solver: LinearSolveStrategy,
    /// Optional convergence on the update size: `‖δ‖∞ ≤ tol · (1 + ‖y‖∞)`.
    #[serde(default)]
    pub step_tolerance: Option<f64>,
    /// Keep every iterate in the report.
    #[serde(default)]
    pub record_iterates: bool,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self {
            atol: 1e-10,
            rtol: 1e-8,
            max_iterations: 20,
            linear_solver: LinearSolveStrategy::Auto,
            step_tolerance: None,
            record_iterates: false,
        }
    }
}

impl NewtonConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.atol > 0.0) || !(self.rtol > 0.0) {
            return Err(Error::Config("Newton tolerances must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("Newton needs at least one iteration".into()));
        }
        Ok(())
    }

    fn converged(&self, norm: f64, initial: f64) -> bool {
        norm <= self.atol + self.rtol * initial
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct NewtonReport {
    /// Number of corrections applied.
    pub iterations: usize,
    pub initial_norm: f64,
    pub final_norm: f64,
    /// `y₀, y₁, …` when requested.
    pub iterates: Vec<DVector<f64>>,
}

/// A nonlinear system solved by Newton-type corrections.
pub trait NewtonProblem {
    /// The quantity driven to zero; its norm is the convergence measure.
    fn residual(&mut self, y: &DVector<f64>) -> Result<DVector<f64>>;
    /// Correction `δ` solving the linearized system `J(y) δ = −r`.
    fn correction(&mut self, y: &DVector<f64>, r: &DVector<f64>) -> Result<DVector<f64>>;
}

/// Runs Newton iterations until `‖r‖₂ ≤ atol + rtol·‖r₀‖₂`.
pub fn newton_iterate<P: NewtonProblem + ?Sized>(
    problem: &mut P,
    y0: &DVector<f64>,
    config: &NewtonConfig,
) -> Result<(DVector<f64>, NewtonReport)> {
    config.validate()?;
    let mut y = y0.clone();
    let mut report = NewtonReport::default();
    if config.record_iterates {
        report.iterates.push(y.clone());
    }
    let mut r = problem.residual(&y)?;
    ensure_finite("Newton residual", r.as_slice())?;
    report.initial_norm = r.norm();
    report.final_norm = report.initial_norm;
    loop {
        if config.converged(report.final_norm, report.initial_norm) {
            return Ok((y, report));
        }
        if report.iterations == config.max_iterations {
            return Err(Error::NonConvergence {
                iterations: report.iterations,
                residual_norm: report.final_norm,
            });
        }
        let delta = problem.correction(&y, &r)?;
        ensure_finite("Newton correction", delta.as_slice())?;
        y += &delta;
        report.iterations += 1;
        if config.record_iterates {
            report.iterates.push(y.clone());
        }
        r = problem.residual(&y)?;
        ensure_finite("Newton residual", r.as_slice())?;
        report.final_norm = r.norm();
        if let Some(tol) = config.step_tolerance {
            if delta.amax() <= tol * (1.0 + y.amax()) {
                return Ok((y, report));
            }
        }
    }
}

struct DenseProblem<R, J> {
    residual: R,
    jacobian: J,
}

impl<R, J> NewtonProblem for DenseProblem<R, J>
where
    R: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
    J: FnMut(&DVector<f64>) -> Result<DMatrix<f64>>,
{
    fn residual(&mut self, y: &DVector<f64>) -> Result<DVector<f64>> {
        (self.residual)(y)
    }

    fn correction(&mut self, y: &DVector<f64>, r: &DVector<f64>) -> Result<DVector<f64>> {
        let j = (self.jacobian)(y)?;
        dense_solve(&j, &(-r))
    }
}

/// Newton's method for a small dense system given by closures.
pub fn newton_solve<R, J>(
    residual: R,
    jacobian: J,
    y0: &DVector<f64>,
    config: &NewtonConfig,
) -> Result<(DVector<f64>, NewtonReport)>
where
    R: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
    J: FnMut(&DVector<f64>) -> Result<DMatrix<f64>>,
{
    newton_iterate(&mut DenseProblem { residual, jacobian }, y0, config)
}

/// Minimizes `‖r(u₀ + V y)‖²_Θ` by Gauss-Newton.
///
/// Each correction solves the weighted linear least-squares problem
/// `min_δ ‖Lᵀ (J V δ + r)‖` (`Θ = L Lᵀ`) by Householder QR. Convergence is
/// measured on the first-order optimality condition `‖Vᵀ Jᵀ Θ r‖₂`.
pub fn gauss_newton_solve<R, J>(
    mut residual: R,
    mut jacobian: J,
    offset: &DVector<f64>,
    basis: &DMatrix<f64>,
    weighting: &Weighting,
    y0: &DVector<f64>,
    config: &NewtonConfig,
) -> Result<(DVector<f64>, NewtonReport)>
where
    R: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
    J: FnMut(&DVector<f64>) -> Result<Jacobian>,
{
    config.validate()?;
    if basis.nrows() != offset.len() {
        return Err(Error::dims("basis rows", offset.len(), basis.nrows()));
    }
    if y0.len() != basis.ncols() {
        return Err(Error::dims("reduced coordinates", basis.ncols(), y0.len()));
    }
    let mut y = y0.clone();
    let mut report = NewtonReport::default();
    if config.record_iterates {
        report.iterates.push(y.clone());
    }
    loop {
        let u = offset + basis * &y;
        let r = residual(&u)?;
        ensure_finite("Gauss-Newton residual", r.as_slice())?;
        let jv = jacobian(&u)?.apply_columns(basis);
        let theta = weighting.resolve(&u, &r)?;
        let gradient = jv.tr_mul(&theta.apply(&r));
        let g = gradient.norm();
        if report.iterations == 0 {
            report.initial_norm = g;
        }
        report.final_norm = g;
        if config.converged(g, report.initial_norm) {
            return Ok((y, report));
        }
        if report.iterations == config.max_iterations {
            return Err(Error::NonConvergence {
                iterations: report.iterations,
                residual_norm: g,
            });
        }
        let a = theta.half_apply_columns(&jv);
        let b = theta.half_apply(&r);
        let delta = least_squares(a, &(-b))?;
        y += &delta;
        report.iterations += 1;
        if config.record_iterates {
            report.iterates.push(y.clone());
        }
        if let Some(tol) = config.step_tolerance {
            if delta.amax() <= tol * (1.0 + y.amax()) {
                report.final_norm = g;
                return Ok((y, report));
            }
        }
    }
}

/// `argmin ‖A x − b‖₂` for a tall full-column-rank `A`.
pub fn least_squares(a: DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let (m, n) = a.shape();
    if m < n {
        return Err(Error::LinearSolve(format!("underdetermined least squares ({m} × {n})")));
    }
    let scale = a.amax();
    let qr = a.qr();
    let r = qr.r();
    let rmax = r.diagonal().amax();
    if scale == 0.0 || r.diagonal().iter().any(|d| d.abs() <= 1e-13 * rmax) {
        return Err(Error::LinearSolve("rank-deficient least-squares matrix".into()));
    }
    let qtb = qr.q().tr_mul(b);
    r.solve_upper_triangular(&qtb)
        .ok_or_else(|| Error::LinearSolve("rank-deficient least-squares matrix".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> NewtonConfig {
        NewtonConfig::default()
    }

    #[test]
    fn linear_residual_converges_in_one_iteration() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, -1.0, 0.5, 0.0, 2.0]);
        let b = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let (y, rep) = newton_solve(
            |y| Ok(&a * y - &b),
            |_| Ok(a.clone()),
            &DVector::from_element(3, 10.0),
            &cfg(),
        )
        .unwrap();
        assert_eq!(rep.iterations, 1);
        assert!((&a * y - &b).amax() < 1e-12);
    }

    #[test]
    fn scalar_root() {
        let (y, _) = newton_solve(
            |y| Ok(DVector::from_element(1, y[0] * y[0] - 4.0)),
            |y| Ok(DMatrix::from_element(1, 1, 2.0 * y[0])),
            &DVector::from_element(1, 3.0),
            &cfg(),
        )
        .unwrap();
        assert!((y[0] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn wrong_sign_jacobian_does_not_converge() {
        let err = newton_solve(
            |y| Ok(DVector::from_element(1, y[0] * y[0] - 4.0)),
            |y| Ok(DMatrix::from_element(1, 1, -2.0 * y[0])),
            &DVector::from_element(1, 3.0),
            &cfg(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonConvergence { iterations: 20, .. }), "{err:?}");
    }

    #[test]
    fn singular_jacobian_is_a_linear_solve_error() {
        let err = newton_solve(
            |y| Ok(DVector::from_element(2, y[0] + y[1] - 1.0)),
            |_| Ok(DMatrix::from_element(2, 2, 1.0)),
            &DVector::zeros(2),
            &cfg(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::LinearSolve(_)));
    }

    #[test]
    fn gauss_newton_linear_identity_weight_is_one_step() {
        let a = DMatrix::from_fn(8, 8, |i, j| if i == j { 3.0 } else { ((i + 2 * j) % 3) as f64 * 0.2 });
        let b = DVector::from_fn(8, |i, _| (i as f64).cos());
        let v = DMatrix::from_fn(8, 2, |i, j| ((i + 1) * (j + 2)) as f64 % 5.0 - 2.0);
        let u0 = DVector::zeros(8);
        let (y, rep) = gauss_newton_solve(
            |u| Ok(&a * u - &b),
            |_| Ok(Jacobian::Dense(a.clone())),
            &u0,
            &v,
            &Weighting::Identity,
            &DVector::zeros(2),
            &cfg(),
        )
        .unwrap();
        assert_eq!(rep.iterations, 1);
        // normal equations oracle
        let av = &a * &v;
        let expect = (av.transpose() * &av).lu().solve(&(av.transpose() * &b)).unwrap();
        assert!((y - expect).amax() < 1e-12);
    }

    #[test]
    fn rank_deficient_least_squares_is_reported() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        assert!(least_squares(a, &DVector::zeros(3)).is_err());
    }
}
