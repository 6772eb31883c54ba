//! Fixed-step implicit integration of `M ẋ + f(x) = 0`.
//!
//! Every implicit stage, whether DIRK or BDF, has the same shape: find `x`
//! such that
//!
//! ```text
//! M (x − x̃) / γ + f(x) = 0
//! ```
//!
//! with a predictor `x̃` and coefficient `γ` supplied by the scheme. The scheme
//! only combines vectors, so it works in whatever coordinates the
//! [`ImplicitSystem`] uses (full-order states or reduced coordinates).

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::linalg::{dense_solve, SparseLu};
use crate::model::{Jacobian, ParamPoint, SemiDiscreteModel};
use crate::timeint::newton::{newton_iterate, LinearSolveStrategy, NewtonConfig, NewtonProblem, NewtonReport};
use crate::timeint::tableau::{dirk2_tableau, dirk3_tableau, ButcherTableau};

/// Data defining one implicit stage.
#[derive(Debug, Clone, Copy)]
pub struct StageContext<'a> {
    /// Time at which the stage equation is evaluated.
    pub t: f64,
    pub gamma: f64,
    pub predictor: &'a DVector<f64>,
}

/// Something that can solve implicit stage equations.
pub trait ImplicitSystem {
    /// Called once before the stages of each time step.
    fn begin_step(&mut self, _t: f64, _dt: f64) -> Result<()> {
        Ok(())
    }

    /// Solves the stage equation starting from `guess`.
    fn solve_stage(&mut self, ctx: &StageContext<'_>, guess: &DVector<f64>) -> Result<DVector<f64>>;
}

/// One DIRK step from `(t, x)`.
pub fn dirk_step<S: ImplicitSystem + ?Sized>(
    system: &mut S,
    tableau: &ButcherTableau,
    x: &DVector<f64>,
    t: f64,
    dt: f64,
) -> Result<DVector<f64>> {
    if !(dt > 0.0) {
        return Err(Error::Config(format!("time step must be positive, got {dt}")));
    }
    system.begin_step(t, dt)?;
    let s = tableau.stages();
    let mut slopes: Vec<DVector<f64>> = Vec::with_capacity(s);
    let mut last = x.clone();
    for i in 0..s {
        let mut predictor = x.clone();
        for (j, k) in slopes.iter().enumerate() {
            predictor.axpy(dt * tableau.a[(i, j)], k, 1.0);
        }
        let gamma = dt * tableau.a[(i, i)];
        let ctx = StageContext { t: t + tableau.c[i] * dt, gamma, predictor: &predictor };
        last = system.solve_stage(&ctx, &last)?;
        slopes.push((&last - &predictor) / gamma);
    }
    if tableau.is_stiffly_accurate() {
        return Ok(last);
    }
    let mut out = x.clone();
    for (j, k) in slopes.iter().enumerate() {
        out.axpy(dt * tableau.b[j], k, 1.0);
    }
    Ok(out)
}

/// One BDF3 step. `history` holds `[xₙ, xₙ₋₁, xₙ₋₂]`, newest first.
pub fn bdf3_step<S: ImplicitSystem + ?Sized>(
    system: &mut S,
    history: [&DVector<f64>; 3],
    t: f64,
    dt: f64,
) -> Result<DVector<f64>> {
    if !(dt > 0.0) {
        return Err(Error::Config(format!("time step must be positive, got {dt}")));
    }
    let [x0, x1, x2] = history;
    if x1.len() != x0.len() || x2.len() != x0.len() {
        return Err(Error::dims("BDF3 history", x0.len(), x1.len().min(x2.len())));
    }
    system.begin_step(t, dt)?;
    let predictor = (x0 * 18.0 - x1 * 9.0 + x2 * 2.0) / 11.0;
    let ctx = StageContext { t: t + dt, gamma: 6.0 * dt / 11.0, predictor: &predictor };
    system.solve_stage(&ctx, x0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Dirk2,
    Dirk3,
    Bdf3,
}

impl Scheme {
    pub fn order(self) -> u32 {
        match self {
            Scheme::Dirk2 => 2,
            Scheme::Dirk3 | Scheme::Bdf3 => 3,
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dirk2" => Ok(Scheme::Dirk2),
            "dirk3" => Ok(Scheme::Dirk3),
            "bdf3" => Ok(Scheme::Bdf3),
            other => Err(Error::Config(format!("unknown time scheme '{other}'"))),
        }
    }
}

/// Fixed-step driver. BDF3 is started with two DIRK3 steps.
#[derive(Debug, Clone)]
pub struct Integrator {
    scheme: Scheme,
    dt: f64,
    t0: f64,
    steps: usize,
    /// Newest first; at most three entries.
    history: VecDeque<DVector<f64>>,
    tableau: Option<ButcherTableau>,
    startup: ButcherTableau,
}

impl Integrator {
    pub fn new(scheme: Scheme, dt: f64, t0: f64, x0: DVector<f64>) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::Config(format!("time step must be positive, got {dt}")));
        }
        ensure_finite("initial state", x0.as_slice())?;
        let tableau = match scheme {
            Scheme::Dirk2 => Some(dirk2_tableau()),
            Scheme::Dirk3 => Some(dirk3_tableau()),
            Scheme::Bdf3 => None,
        };
        Ok(Self {
            scheme,
            dt,
            t0,
            steps: 0,
            history: VecDeque::from([x0]),
            tableau,
            startup: dirk3_tableau(),
        })
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// `t₀ + k·Δt` after `k` steps, computed without accumulating round-off.
    pub fn time(&self) -> f64 {
        self.t0 + self.steps as f64 * self.dt
    }

    pub fn steps_taken(&self) -> usize {
        self.steps
    }

    pub fn state(&self) -> &DVector<f64> {
        &self.history[0]
    }

    /// Advances one step. On failure the integrator is left unchanged.
    pub fn step<S: ImplicitSystem + ?Sized>(&mut self, system: &mut S) -> Result<&DVector<f64>> {
        let t = self.time();
        let next = match (&self.tableau, self.history.len()) {
            (Some(tab), _) => dirk_step(system, tab, &self.history[0], t, self.dt)?,
            (None, 3) => bdf3_step(
                system,
                [&self.history[0], &self.history[1], &self.history[2]],
                t,
                self.dt,
            )?,
            (None, _) => dirk_step(system, &self.startup, &self.history[0], t, self.dt)?,
        };
        ensure_finite("integrated state", next.as_slice())?;
        self.history.push_front(next);
        self.history.truncate(3);
        self.steps += 1;
        Ok(&self.history[0])
    }
}

/// Stage solver for a full-order model using Newton's method.
pub struct HdmSystem<'a, M: SemiDiscreteModel + ?Sized> {
    pub model: &'a M,
    pub mu: ParamPoint,
    pub newton: NewtonConfig,
    /// Report of the most recent stage solve.
    pub last_report: NewtonReport,
    /// Total Newton corrections over the lifetime of the system.
    pub total_iterations: usize,
}

impl<'a, M: SemiDiscreteModel + ?Sized> HdmSystem<'a, M> {
    pub fn new(model: &'a M, mu: ParamPoint, newton: NewtonConfig) -> Result<Self> {
        newton.validate()?;
        if mu.dim() != model.param_dim() {
            return Err(Error::dims("parameter point", model.param_dim(), mu.dim()));
        }
        Ok(Self { model, mu, newton, last_report: NewtonReport::default(), total_iterations: 0 })
    }
}

struct HdmStage<'s, M: SemiDiscreteModel + ?Sized> {
    model: &'s M,
    mu: &'s ParamPoint,
    strategy: LinearSolveStrategy,
    inv_gamma: f64,
    predictor: &'s DVector<f64>,
}

/// `M/γ + J` as a sparse matrix.
fn shifted_sparse<M: SemiDiscreteModel + ?Sized>(model: &M, j: &crate::linalg::CsrMatrix, shift: f64) -> crate::linalg::CsrMatrix {
    match model.mass_matrix() {
        Some(mass) => mass.linear_combination(shift, j, 1.0),
        None => j.shifted(shift),
    }
}

impl<M: SemiDiscreteModel + ?Sized> NewtonProblem for HdmStage<'_, M> {
    fn residual(&mut self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let diff = x - self.predictor;
        Ok(self.model.mass_apply(&diff) * self.inv_gamma + self.model.f_eval(x, self.mu))
    }

    fn correction(&mut self, x: &DVector<f64>, r: &DVector<f64>) -> Result<DVector<f64>> {
        let rhs = -r;
        let approximate = || {
            self.model
                .approximate_shifted_solve(x, self.inv_gamma, &rhs)
                .ok_or_else(|| Error::Unsupported("model provides no approximate shifted solve".into()))
        };
        if self.strategy == LinearSolveStrategy::ModelApproximate {
            return approximate();
        }
        match self.model.jacobian(x, self.mu) {
            Jacobian::Sparse(j) => SparseLu::new(&shifted_sparse(self.model, &j, self.inv_gamma))?.solve(&rhs),
            Jacobian::Dense(j) => {
                let mass = match self.model.mass_matrix() {
                    Some(m) => m.to_dense(),
                    None => DMatrix::identity(j.nrows(), j.ncols()),
                };
                dense_solve(&(mass * self.inv_gamma + j), &rhs)
            }
            op @ Jacobian::Operator(_) => {
                if self.strategy == LinearSolveStrategy::Auto {
                    approximate()
                } else {
                    let dense = op.to_dense();
                    let n = dense.nrows();
                    let mass = match self.model.mass_matrix() {
                        Some(m) => m.to_dense(),
                        None => DMatrix::identity(n, n),
                    };
                    dense_solve(&(mass * self.inv_gamma + dense), &rhs)
                }
            }
        }
    }
}

impl<M: SemiDiscreteModel + ?Sized> ImplicitSystem for HdmSystem<'_, M> {
    fn solve_stage(&mut self, ctx: &StageContext<'_>, guess: &DVector<f64>) -> Result<DVector<f64>> {
        let mut stage = HdmStage {
            model: self.model,
            mu: &self.mu,
            strategy: self.newton.linear_solver,
            inv_gamma: 1.0 / ctx.gamma,
            predictor: ctx.predictor,
        };
        let (x, report) = newton_iterate(&mut stage, guess, &self.newton)?;
        self.total_iterations += report.iterations;
        self.last_report = report;
        Ok(x)
    }
}

/// Wraps a system and keeps every converged stage solution.
///
/// Multi-stage schemes pass through intermediate states that are not step
/// results; a basis meant to contain the whole discrete trajectory must be
/// built from these too.
pub struct StageRecorder<S> {
    pub inner: S,
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
}

impl<S> StageRecorder<S> {
    pub fn new(inner: S) -> Self {
        Self { inner, times: Vec::new(), states: Vec::new() }
    }
}

impl<S: ImplicitSystem> ImplicitSystem for StageRecorder<S> {
    fn begin_step(&mut self, t: f64, dt: f64) -> Result<()> {
        self.inner.begin_step(t, dt)
    }

    fn solve_stage(&mut self, ctx: &StageContext<'_>, guess: &DVector<f64>) -> Result<DVector<f64>> {
        let x = self.inner.solve_stage(ctx, guess)?;
        self.times.push(ctx.t);
        self.states.push(x.clone());
        Ok(x)
    }
}

/// Classical explicit RK4 for `ẋ = g(t, x)`; a reference solution for tests.
pub fn rk4_integrate<G>(mut g: G, x0: &DVector<f64>, t0: f64, dt: f64, steps: usize) -> DVector<f64>
where
    G: FnMut(f64, &DVector<f64>) -> DVector<f64>,
{
    let mut x = x0.clone();
    let mut t = t0;
    for _ in 0..steps {
        let k1 = g(t, &x);
        let k2 = g(t + dt / 2.0, &(&x + &k1 * (dt / 2.0)));
        let k3 = g(t + dt / 2.0, &(&x + &k2 * (dt / 2.0)));
        let k4 = g(t + dt, &(&x + &k3 * dt));
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        t += dt;
    }
    x
}
