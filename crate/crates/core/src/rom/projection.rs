//! Left bases and projected systems.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::dense_solve;
use crate::model::{residual, ParamPoint, SemiDiscreteModel};
use crate::rom::pod::ReducedBasis;
use crate::rom::weighting::{ResolvedWeight, Weighting};
use crate::timeint::newton::least_squares;

/// When a Petrov-Galerkin left basis is rebuilt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RecomputePolicy {
    /// At every nonlinear iteration (true Gauss-Newton).
    PerIteration,
    /// Once per time step, then frozen for all iterations of that step.
    #[default]
    PerTimestep,
}

#[derive(Debug, Clone)]
pub enum StrategyKind {
    /// `W = V`.
    Galerkin,
    /// `W = J V`.
    Lspg,
    /// `W = Θ J V` for a supplied SPD `Θ`.
    ThetaWeighted(Weighting),
    /// `W = Θ J V` with the diagonal ℓ¹ weighting of the current residual.
    L1Irls,
}

#[derive(Debug, Clone)]
pub struct LeftBasisStrategy {
    pub kind: StrategyKind,
    pub recompute: RecomputePolicy,
}

impl LeftBasisStrategy {
    pub fn galerkin() -> Self {
        Self { kind: StrategyKind::Galerkin, recompute: RecomputePolicy::PerIteration }
    }

    pub fn lspg(recompute: RecomputePolicy) -> Self {
        Self { kind: StrategyKind::Lspg, recompute }
    }

    pub fn theta_weighted(weighting: Weighting, recompute: RecomputePolicy) -> Self {
        Self { kind: StrategyKind::ThetaWeighted(weighting), recompute }
    }

    pub fn l1_irls(recompute: RecomputePolicy) -> Self {
        Self { kind: StrategyKind::L1Irls, recompute }
    }

    pub fn is_galerkin(&self) -> bool {
        matches!(self.kind, StrategyKind::Galerkin)
    }

    /// `Θ` of the residual-minimization form; `None` for Galerkin.
    pub fn weighting(&self) -> Option<Weighting> {
        match &self.kind {
            StrategyKind::Galerkin => None,
            StrategyKind::Lspg => Some(Weighting::Identity),
            StrategyKind::ThetaWeighted(w) => Some(w.clone()),
            StrategyKind::L1Irls => Some(Weighting::L1Residual),
        }
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            StrategyKind::Galerkin => "galerkin",
            StrategyKind::Lspg => "lspg",
            StrategyKind::ThetaWeighted(_) => "theta_weighted",
            StrategyKind::L1Irls => "l1_irls",
        }
    }

    /// Parses `galerkin`, `lspg` or `l1_irls` (a weighted strategy needs a supplier
    /// and cannot be named in configuration).
    pub fn from_name(name: &str, recompute: RecomputePolicy) -> Result<Self> {
        match name {
            "galerkin" => Ok(Self::galerkin()),
            "lspg" => Ok(Self::lspg(recompute)),
            "l1_irls" => Ok(Self::l1_irls(recompute)),
            other => Err(Error::Config(format!("unknown projection strategy '{other}'"))),
        }
    }
}

/// `W` for the given strategy at a point where `JV` and `r` are known.
pub fn left_basis(
    strategy: &LeftBasisStrategy,
    v: &DMatrix<f64>,
    jv: &DMatrix<f64>,
    u: &DVector<f64>,
    r: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    match strategy.weighting() {
        None => Ok(v.clone()),
        Some(w) => Ok(w.resolve(u, r)?.apply_columns(jv)),
    }
}

/// `Vᵀ r(u₀ + V y, V ẏ)`.
pub fn galerkin_reduced_residual(
    model: &dyn SemiDiscreteModel,
    basis: &ReducedBasis,
    y: &DVector<f64>,
    ydot: &DVector<f64>,
    mu: &ParamPoint,
) -> Result<DVector<f64>> {
    check_reduced(basis, y, ydot)?;
    let r = residual(model, &basis.reconstruct(y), &(&basis.v * ydot), mu)?;
    Ok(basis.v.tr_mul(&r))
}

/// `(Wᵀ r, Wᵀ J V)` at `u = u₀ + V y`, `u̇ = V ẏ`, with `J = ∂r/∂u`.
pub fn pg_reduced_system(
    model: &dyn SemiDiscreteModel,
    basis: &ReducedBasis,
    strategy: &LeftBasisStrategy,
    y: &DVector<f64>,
    ydot: &DVector<f64>,
    mu: &ParamPoint,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    check_reduced(basis, y, ydot)?;
    let u = basis.reconstruct(y);
    let r = residual(model, &u, &(&basis.v * ydot), mu)?;
    let jv = model.jacobian(&u, mu).apply_columns(&basis.v);
    let w = left_basis(strategy, &basis.v, &jv, &u, &r)?;
    Ok((w.tr_mul(&r), w.tr_mul(&jv)))
}

fn check_reduced(basis: &ReducedBasis, y: &DVector<f64>, ydot: &DVector<f64>) -> Result<()> {
    if y.len() != basis.dim() {
        return Err(Error::dims("reduced coordinates", basis.dim(), y.len()));
    }
    if ydot.len() != basis.dim() {
        return Err(Error::dims("reduced velocity", basis.dim(), ydot.len()));
    }
    Ok(())
}

/// Both reduced step directions for one linearized problem `J Δu = −r`.
#[derive(Debug, Clone)]
pub struct StepDirectionCheck {
    /// Solution of `(ΘJV)ᵀ J V x = −(ΘJV)ᵀ r`.
    pub petrov_galerkin: DVector<f64>,
    /// Minimizer of `‖V x − Δu‖²_{JᵀΘJ}` with `Δu = −J⁻¹ r`.
    pub minimizer: DVector<f64>,
    /// `‖petrov_galerkin − minimizer‖∞`.
    pub discrepancy: f64,
}

/// Solves the Petrov-Galerkin linear system with `W = ΘJV` and, independently,
/// the energy-norm projection of the full Newton step onto `range(V)`.
pub fn step_direction_error_check(
    j: &DMatrix<f64>,
    r: &DVector<f64>,
    v: &DMatrix<f64>,
    theta: &ResolvedWeight,
) -> Result<StepDirectionCheck> {
    let n_full = j.nrows();
    if j.ncols() != n_full || r.len() != n_full || v.nrows() != n_full {
        return Err(Error::dims("step-direction problem", n_full, v.nrows().min(r.len())));
    }
    let jv = j * v;
    let w = theta.apply_columns(&jv);
    let petrov_galerkin = dense_solve(&w.tr_mul(&jv), &(-w.tr_mul(r)))?;

    let du = dense_solve(j, &(-r))?;
    // Normal equations of the energy-norm fit: (VᵀJᵀΘJV) x = VᵀJᵀΘJ Δu.
    let gram = jv.tr_mul(&theta.apply_columns(&jv));
    let rhs = jv.tr_mul(&theta.apply(&(j * &du)));
    let minimizer = gram
        .cholesky()
        .ok_or_else(|| Error::LinearSolve("reduced normal matrix is not positive definite".into()))?
        .solve(&rhs);
    let discrepancy = (&petrov_galerkin - &minimizer).amax();
    Ok(StepDirectionCheck { petrov_galerkin, minimizer, discrepancy })
}

/// `min_x ‖J V x + r‖_Θ`.
pub fn min_weighted_residual(
    j: &DMatrix<f64>,
    r: &DVector<f64>,
    v: &DMatrix<f64>,
    theta: &ResolvedWeight,
) -> Result<f64> {
    let jv = j * v;
    let a = theta.half_apply_columns(&jv);
    let b = theta.half_apply(r);
    let x = least_squares(a.clone(), &(-&b))?;
    Ok((a * x + b).norm())
}
