//! Linear model `f(u) = A u − b`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{CellContribution, CellJacobian, Jacobian, ParamPoint, SemiDiscreteModel};

#[derive(Debug, Clone)]
pub struct LinearModel {
    a: DMatrix<f64>,
    b: DVector<f64>,
    spd: bool,
    row_support: Vec<Vec<usize>>,
}

impl LinearModel {
    /// General (possibly nonsymmetric) operator.
    pub fn new(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        Self::build(a, b, false)
    }

    /// Operator declared symmetric positive definite; checked on construction.
    pub fn new_spd(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        Self::build(a, b, true)
    }

    fn build(a: DMatrix<f64>, b: DVector<f64>, spd: bool) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::dims("square operator", a.nrows(), a.ncols()));
        }
        if b.len() != a.nrows() {
            return Err(Error::dims("forcing vector", a.nrows(), b.len()));
        }
        if spd {
            let asym = (&a - a.transpose()).amax();
            if asym >= 1e-12 {
                return Err(Error::Config(format!("operator flagged SPD but ‖A−Aᵀ‖ = {asym:e}")));
            }
            if a.clone().cholesky().is_none() {
                return Err(Error::NotSpd);
            }
        }
        let row_support = (0..a.nrows())
            .map(|r| (0..a.ncols()).filter(|&c| a[(r, c)] != 0.0).collect())
            .collect();
        Ok(Self {
            a,
            b,
            spd,
            row_support,
        })
    }

    pub fn operator(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn forcing(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn is_spd(&self) -> bool {
        self.spd
    }

    /// The equilibrium `A u = b`.
    pub fn equilibrium(&self) -> Result<DVector<f64>> {
        crate::linalg::dense_solve(&self.a, &self.b)
    }
}

impl SemiDiscreteModel for LinearModel {
    fn dim(&self) -> usize {
        self.a.nrows()
    }

    fn cell_count(&self) -> usize {
        self.a.nrows()
    }

    fn f_eval(&self, u: &DVector<f64>, _mu: &ParamPoint) -> DVector<f64> {
        &self.a * u - &self.b
    }

    fn jacobian(&self, _u: &DVector<f64>, _mu: &ParamPoint) -> Jacobian {
        Jacobian::Dense(self.a.clone())
    }

    fn cell_stencil(&self, cell: usize) -> Vec<usize> {
        self.row_support[cell].clone()
    }

    fn cell_residual(
        &self,
        u: &DVector<f64>,
        udot: &DVector<f64>,
        _mu: &ParamPoint,
        cell: usize,
    ) -> CellContribution {
        let au: f64 = self.row_support[cell].iter().map(|&c| self.a[(cell, c)] * u[c]).sum();
        CellContribution {
            rows: vec![cell],
            values: vec![udot[cell] + au - self.b[cell]],
        }
    }

    fn cell_jacobian(&self, _u: &DVector<f64>, _mu: &ParamPoint, cell: usize) -> CellJacobian {
        let cols = self.row_support[cell].clone();
        let values = DMatrix::from_fn(1, cols.len(), |_, k| self.a[(cell, cols[k])]);
        CellJacobian {
            rows: vec![cell],
            cols,
            values,
        }
    }
}
