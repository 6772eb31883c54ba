//! The semi-discrete model contract `M(μ) u̇ + f(u; μ) = 0` and the
//! residual/Jacobian evaluation shared by full-order and reduced solves.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::linalg::CsrMatrix;

/// Parameter point `μ`. Built-in models carry an empty point.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamPoint {
    pub values: Vec<f64>,
}

impl ParamPoint {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        ensure_finite("parameter point", &values)?;
        Ok(Self { values })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// A state vector tagged with its time.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub u: DVector<f64>,
    pub t: f64,
}

impl State {
    pub fn new(u: DVector<f64>, t: f64) -> Self {
        Self { u, t }
    }
}

/// A linear map available only through its action.
pub trait LinearOperator: Send + Sync {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;
    fn apply(&self, x: &DVector<f64>) -> DVector<f64>;
}

/// Jacobian `∂f/∂u` with optional materialization.
#[derive(Clone)]
pub enum Jacobian {
    Sparse(CsrMatrix),
    Dense(DMatrix<f64>),
    Operator(Arc<dyn LinearOperator>),
}

impl std::fmt::Debug for Jacobian {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Jacobian::Sparse(m) => write!(f, "Jacobian::Sparse({}x{}, nnz={})", m.nrows(), m.ncols(), m.nnz()),
            Jacobian::Dense(m) => write!(f, "Jacobian::Dense({}x{})", m.nrows(), m.ncols()),
            Jacobian::Operator(op) => write!(f, "Jacobian::Operator({}x{})", op.nrows(), op.ncols()),
        }
    }
}

impl Jacobian {
    pub fn dim(&self) -> usize {
        match self {
            Jacobian::Sparse(m) => m.nrows(),
            Jacobian::Dense(m) => m.nrows(),
            Jacobian::Operator(op) => op.nrows(),
        }
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            Jacobian::Sparse(m) => m.mul_vec(x),
            Jacobian::Dense(m) => m * x,
            Jacobian::Operator(op) => op.apply(x),
        }
    }

    /// `J · B` column by column.
    pub fn apply_columns(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Jacobian::Sparse(m) => m.mul_dense(b),
            Jacobian::Dense(m) => m * b,
            Jacobian::Operator(op) => {
                let mut out = DMatrix::zeros(op.nrows(), b.ncols());
                for k in 0..b.ncols() {
                    out.set_column(k, &op.apply(&b.column(k).into_owned()));
                }
                out
            }
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            Jacobian::Sparse(m) => m.to_dense(),
            Jacobian::Dense(m) => m.clone(),
            Jacobian::Operator(op) => {
                let n = op.ncols();
                self.apply_columns(&DMatrix::identity(n, n))
            }
        }
    }
}

/// The contribution of one cell to the global residual: values placed at `rows`.
#[derive(Debug, Clone, PartialEq)]
pub struct CellContribution {
    pub rows: Vec<usize>,
    pub values: Vec<f64>,
}

/// Derivative of a cell contribution with respect to the states in `cols`.
/// `values` is `rows.len() × cols.len()`.
#[derive(Debug, Clone, PartialEq)]
pub struct CellJacobian {
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    pub values: DMatrix<f64>,
}

/// High-dimensional semi-discrete model `M u̇ + f(u; μ) = 0`.
///
/// Implementations are immutable after construction and may be shared
/// read-only across concurrent simulations.
pub trait SemiDiscreteModel: Send + Sync {
    /// State dimension `N`.
    fn dim(&self) -> usize;

    /// Parameter dimension `p`.
    fn param_dim(&self) -> usize {
        0
    }

    /// Number of cells in the additive residual decomposition.
    fn cell_count(&self) -> usize;

    /// `M x`. Identity unless overridden.
    fn mass_apply(&self, x: &DVector<f64>) -> DVector<f64> {
        x.clone()
    }

    /// Sparse mass matrix; `None` means identity.
    fn mass_matrix(&self) -> Option<CsrMatrix> {
        None
    }

    fn f_eval(&self, u: &DVector<f64>, mu: &ParamPoint) -> DVector<f64>;

    fn jacobian(&self, u: &DVector<f64>, mu: &ParamPoint) -> Jacobian;

    /// State indices read when evaluating `cell`.
    fn cell_stencil(&self, cell: usize) -> Vec<usize>;

    /// Cell `e`'s share of `M u̇ + f(u)`. Must read `u` only on the cell stencil.
    fn cell_residual(
        &self,
        u: &DVector<f64>,
        udot: &DVector<f64>,
        mu: &ParamPoint,
        cell: usize,
    ) -> CellContribution;

    /// Derivative of [`cell_residual`](Self::cell_residual) with respect to `u`
    /// (the `u̇` part is excluded).
    fn cell_jacobian(&self, u: &DVector<f64>, mu: &ParamPoint, cell: usize) -> CellJacobian;

    /// Solves `(shift·M + Ĵ) x = rhs` where `Ĵ` is a model-chosen
    /// approximation of the Jacobian near `u`. Used by simplified-Newton
    /// stage solves when the true Jacobian is matrix-free.
    fn approximate_shifted_solve(
        &self,
        _u: &DVector<f64>,
        _shift: f64,
        _rhs: &DVector<f64>,
    ) -> Option<DVector<f64>> {
        None
    }
}

fn check_inputs(
    model: &dyn SemiDiscreteModel,
    u: &DVector<f64>,
    udot: Option<&DVector<f64>>,
    mu: &ParamPoint,
) -> Result<()> {
    if u.len() != model.dim() {
        return Err(Error::dims("state", model.dim(), u.len()));
    }
    if let Some(udot) = udot {
        if udot.len() != model.dim() {
            return Err(Error::dims("state derivative", model.dim(), udot.len()));
        }
    }
    if mu.dim() != model.param_dim() {
        return Err(Error::dims("parameter point", model.param_dim(), mu.dim()));
    }
    Ok(())
}

/// `r = M u̇ + f(u; μ)`.
pub fn residual(
    model: &dyn SemiDiscreteModel,
    u: &DVector<f64>,
    udot: &DVector<f64>,
    mu: &ParamPoint,
) -> Result<DVector<f64>> {
    check_inputs(model, u, Some(udot), mu)?;
    let r = model.mass_apply(udot) + model.f_eval(u, mu);
    ensure_finite("residual", r.as_slice())?;
    Ok(r)
}

/// Sum of all per-cell contributions, assembled into a length-`N` vector.
pub fn assemble_cell_residuals(
    model: &dyn SemiDiscreteModel,
    u: &DVector<f64>,
    udot: &DVector<f64>,
    mu: &ParamPoint,
) -> Result<DVector<f64>> {
    check_inputs(model, u, Some(udot), mu)?;
    let mut r = DVector::zeros(model.dim());
    for cell in 0..model.cell_count() {
        let c = model.cell_residual(u, udot, mu, cell);
        for (&row, &v) in c.rows.iter().zip(&c.values) {
            r[row] += v;
        }
    }
    Ok(r)
}

/// Maximum over probe directions `d` of
/// `|J d − (f(u+hd) − f(u−hd))/(2h)| / (1 + |J d|)` (∞-norms).
///
/// Directions are deterministic pseudo-random unit vectors; at least 20 are
/// used.
pub fn jacobian_fd_check(
    model: &dyn SemiDiscreteModel,
    u: &DVector<f64>,
    mu: &ParamPoint,
    h: f64,
    directions: usize,
) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::Config(format!("finite-difference step must be positive, got {h}")));
    }
    check_inputs(model, u, None, mu)?;
    let n = model.dim();
    let jac = model.jacobian(u, mu);
    let mut state = 0x9e37_79b9_7f4a_7c15u64;
    let mut next = move || {
        // xorshift64*, deterministic probe directions
        state ^= state >> 12;
        state ^= state << 25;
        state ^= state >> 27;
        (state.wrapping_mul(0x2545_f491_4f6c_dd1d) >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    };
    let mut worst = 0.0f64;
    for _ in 0..directions.max(20) {
        let mut d = DVector::from_fn(n, |_, _| next());
        let norm = d.norm();
        if norm == 0.0 {
            continue;
        }
        d /= norm;
        let jd = jac.apply(&d);
        let fp = model.f_eval(&(u + h * &d), mu);
        let fm = model.f_eval(&(u - h * &d), mu);
        let fd = (fp - fm) / (2.0 * h);
        let jd_norm = jd.amax();
        let err = (jd - fd).amax() / (1.0 + jd_norm);
        ensure_finite("finite-difference check", &[err])?;
        worst = worst.max(err);
    }
    Ok(worst)
}

/// A generic row-decomposed model defined by closures; mainly for tests and
/// for wrapping external discretizations.
pub struct FnModel<F, J>
where
    F: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync,
    J: Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync,
{
    dim: usize,
    f: F,
    jac: J,
}

impl<F, J> FnModel<F, J>
where
    F: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync,
    J: Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync,
{
    pub fn new(dim: usize, f: F, jac: J) -> Self {
        Self { dim, f, jac }
    }
}

impl<F, J> SemiDiscreteModel for FnModel<F, J>
where
    F: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync,
    J: Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn cell_count(&self) -> usize {
        self.dim
    }

    fn f_eval(&self, u: &DVector<f64>, _mu: &ParamPoint) -> DVector<f64> {
        (self.f)(u)
    }

    fn jacobian(&self, u: &DVector<f64>, _mu: &ParamPoint) -> Jacobian {
        Jacobian::Dense((self.jac)(u))
    }

    fn cell_stencil(&self, _cell: usize) -> Vec<usize> {
        (0..self.dim).collect()
    }

    fn cell_residual(
        &self,
        u: &DVector<f64>,
        udot: &DVector<f64>,
        mu: &ParamPoint,
        cell: usize,
    ) -> CellContribution {
        let f = self.f_eval(u, mu);
        CellContribution {
            rows: vec![cell],
            values: vec![udot[cell] + f[cell]],
        }
    }

    fn cell_jacobian(&self, u: &DVector<f64>, _mu: &ParamPoint, cell: usize) -> CellJacobian {
        let j = (self.jac)(u);
        CellJacobian {
            rows: vec![cell],
            cols: (0..self.dim).collect(),
            values: j.rows(cell, 1).into_owned(),
        }
    }
}
