//! Reduced-order time stepping.
//!
//! A [`PromSystem`] plugs into the integrators of [`crate::timeint`] and
//! advances reduced coordinates `y`. How the projected stage equations are
//! evaluated is left to a [`ReducedBackend`]: the full-order model, exact
//! quadratic pre-computation, or a hyperreduced sample of cells.

use nalgebra::{DMatrix, DVector};

use crate::error::{ensure_finite, Error, Result};
use crate::linalg::dense_solve;
use crate::model::{ParamPoint, SemiDiscreteModel};
use crate::rom::pod::ReducedBasis;
use crate::rom::projection::{left_basis, LeftBasisStrategy, RecomputePolicy};
use crate::timeint::integrate::{ImplicitSystem, Integrator, StageContext};
use crate::timeint::newton::{newton_iterate, NewtonConfig, NewtonProblem, NewtonReport};

/// A stage equation `M V (y − ỹ)·shift + f(u₀ + V y) = 0` in reduced form.
#[derive(Debug, Clone, Copy)]
pub struct ReducedStage<'a> {
    pub t: f64,
    /// `1/γ`.
    pub shift: f64,
    /// `ỹ`.
    pub predictor: &'a DVector<f64>,
}

/// Evaluates projected stage systems.
pub trait ReducedBackend {
    fn reduced_dim(&self) -> usize;

    /// Returns `(Wᵀ R(y), Wᵀ J_R(y) V)`. With `refresh_left` the backend
    /// rebuilds its left basis at `y`; otherwise it reuses the previous one.
    fn stage_system(
        &mut self,
        stage: &ReducedStage<'_>,
        y: &DVector<f64>,
        refresh_left: bool,
    ) -> Result<(DVector<f64>, DMatrix<f64>)>;
}

/// Projects full-order residuals and Jacobians; cost scales with `N`.
pub struct FullOrderBackend<'a, M: SemiDiscreteModel + ?Sized> {
    model: &'a M,
    basis: &'a ReducedBasis,
    mu: ParamPoint,
    strategy: LeftBasisStrategy,
    mass_v: DMatrix<f64>,
    left: Option<DMatrix<f64>>,
}

impl<'a, M: SemiDiscreteModel + ?Sized> FullOrderBackend<'a, M> {
    pub fn new(model: &'a M, basis: &'a ReducedBasis, mu: ParamPoint, strategy: LeftBasisStrategy) -> Result<Self> {
        if basis.full_dim() != model.dim() {
            return Err(Error::dims("basis rows", model.dim(), basis.full_dim()));
        }
        if mu.dim() != model.param_dim() {
            return Err(Error::dims("parameter point", model.param_dim(), mu.dim()));
        }
        let mass_v = match model.mass_matrix() {
            Some(m) => m.mul_dense(&basis.v),
            None => basis.v.clone(),
        };
        Ok(Self { model, basis, mu, strategy, mass_v, left: None })
    }
}

impl<M: SemiDiscreteModel + ?Sized> ReducedBackend for FullOrderBackend<'_, M> {
    fn reduced_dim(&self) -> usize {
        self.basis.dim()
    }

    fn stage_system(
        &mut self,
        stage: &ReducedStage<'_>,
        y: &DVector<f64>,
        refresh_left: bool,
    ) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let u = self.basis.reconstruct(y);
        ensure_finite("reconstructed state", u.as_slice())?;
        let r = &self.mass_v * (y - stage.predictor) * stage.shift + self.model.f_eval(&u, &self.mu);
        ensure_finite("stage residual", r.as_slice())?;
        let jrv = &self.mass_v * stage.shift + self.model.jacobian(&u, &self.mu).apply_columns(&self.basis.v);
        if self.strategy.is_galerkin() {
            return Ok((self.basis.v.tr_mul(&r), self.basis.v.tr_mul(&jrv)));
        }
        if refresh_left || self.left.is_none() {
            self.left = Some(left_basis(&self.strategy, &self.basis.v, &jrv, &u, &r)?);
        }
        let w = self.left.as_ref().expect("left basis set above");
        Ok((w.tr_mul(&r), w.tr_mul(&jrv)))
    }
}

/// Reduced-order stage solver: Newton on the projected stage equations.
pub struct PromSystem<B: ReducedBackend> {
    pub backend: B,
    pub newton: NewtonConfig,
    pub recompute: RecomputePolicy,
    new_step: bool,
    pub last_report: NewtonReport,
    pub total_iterations: usize,
}

impl<B: ReducedBackend> PromSystem<B> {
    pub fn new(backend: B, newton: NewtonConfig, recompute: RecomputePolicy) -> Result<Self> {
        newton.validate()?;
        Ok(Self { backend, newton, recompute, new_step: true, last_report: NewtonReport::default(), total_iterations: 0 })
    }
}

struct ProjectedStage<'s, B: ReducedBackend> {
    backend: &'s mut B,
    stage: ReducedStage<'s>,
    per_iteration: bool,
    new_step: &'s mut bool,
    jacobian: Option<DMatrix<f64>>,
}

impl<B: ReducedBackend> NewtonProblem for ProjectedStage<'_, B> {
    fn residual(&mut self, y: &DVector<f64>) -> Result<DVector<f64>> {
        let refresh = self.per_iteration || *self.new_step;
        *self.new_step = false;
        let (r, j) = self.backend.stage_system(&self.stage, y, refresh)?;
        self.jacobian = Some(j);
        Ok(r)
    }

    fn correction(&mut self, _y: &DVector<f64>, r: &DVector<f64>) -> Result<DVector<f64>> {
        let j = self.jacobian.as_ref().ok_or_else(|| Error::LinearSolve("no reduced Jacobian".into()))?;
        dense_solve(j, &(-r))
    }
}

impl<B: ReducedBackend> ImplicitSystem for PromSystem<B> {
    fn begin_step(&mut self, _t: f64, _dt: f64) -> Result<()> {
        self.new_step = true;
        Ok(())
    }

    fn solve_stage(&mut self, ctx: &StageContext<'_>, guess: &DVector<f64>) -> Result<DVector<f64>> {
        if guess.len() != self.backend.reduced_dim() {
            return Err(Error::dims("reduced coordinates", self.backend.reduced_dim(), guess.len()));
        }
        let mut problem = ProjectedStage {
            backend: &mut self.backend,
            stage: ReducedStage { t: ctx.t, shift: 1.0 / ctx.gamma, predictor: ctx.predictor },
            per_iteration: self.recompute == RecomputePolicy::PerIteration,
            new_step: &mut self.new_step,
            jacobian: None,
        };
        let (y, report) = newton_iterate(&mut problem, guess, &self.newton)?;
        self.total_iterations += report.iterations;
        self.last_report = report;
        Ok(y)
    }
}

/// Advances reduced coordinates by one step of `integrator`.
pub fn solve_prom_step<B: ReducedBackend>(
    integrator: &mut Integrator,
    system: &mut PromSystem<B>,
) -> Result<DVector<f64>> {
    integrator.step(system).cloned()
}
