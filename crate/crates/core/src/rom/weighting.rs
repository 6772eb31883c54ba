//! SPD weightings `Θ` defining the residual norm `‖r‖²_Θ = rᵀ Θ r`.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Supplies a state-dependent SPD weighting, e.g. `Θ = J⁻¹` for SPD Jacobians.
pub trait ThetaSupplier: Send + Sync {
    fn theta(&self, u: &DVector<f64>) -> Result<DMatrix<f64>>;
}

impl<F> ThetaSupplier for F
where
    F: Fn(&DVector<f64>) -> Result<DMatrix<f64>> + Send + Sync,
{
    fn theta(&self, u: &DVector<f64>) -> Result<DMatrix<f64>> {
        self(u)
    }
}

/// How `Θ` is obtained at an iterate.
#[derive(Clone)]
pub enum Weighting {
    Identity,
    Diagonal(DVector<f64>),
    Dense(DMatrix<f64>),
    Supplied(Arc<dyn ThetaSupplier>),
    /// `Θᵢᵢ = 1/|rᵢ|` (or 1 where `rᵢ = 0`), so that `‖r‖²_Θ = ‖r‖₁`.
    L1Residual,
}

impl std::fmt::Debug for Weighting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Weighting::Identity => write!(f, "Identity"),
            Weighting::Diagonal(d) => write!(f, "Diagonal(len={})", d.len()),
            Weighting::Dense(m) => write!(f, "Dense({}x{})", m.nrows(), m.ncols()),
            Weighting::Supplied(_) => write!(f, "Supplied"),
            Weighting::L1Residual => write!(f, "L1Residual"),
        }
    }
}

/// `Θ` at a specific iterate, factored when dense.
#[derive(Debug, Clone)]
pub enum ResolvedWeight {
    Identity,
    Diagonal(DVector<f64>),
    Dense {
        theta: DMatrix<f64>,
        factor: Cholesky<f64, Dyn>,
    },
}

/// Diagonal of the ℓ¹ weighting for residual `r`.
pub fn l1_weights(r: &DVector<f64>) -> DVector<f64> {
    r.map(|ri| if ri != 0.0 { 1.0 / ri.abs() } else { 1.0 })
}

impl Weighting {
    /// Evaluates `Θ` at state `u` with residual `r`.
    pub fn resolve(&self, u: &DVector<f64>, r: &DVector<f64>) -> Result<ResolvedWeight> {
        match self {
            Weighting::Identity => Ok(ResolvedWeight::Identity),
            Weighting::Diagonal(d) => ResolvedWeight::diagonal(d.clone(), r.len()),
            Weighting::Dense(m) => ResolvedWeight::dense(m.clone(), r.len()),
            Weighting::Supplied(s) => ResolvedWeight::dense(s.theta(u)?, r.len()),
            Weighting::L1Residual => ResolvedWeight::diagonal(l1_weights(r), r.len()),
        }
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, Weighting::Identity)
    }
}

impl ResolvedWeight {
    pub fn diagonal(d: DVector<f64>, n: usize) -> Result<Self> {
        if d.len() != n {
            return Err(Error::dims("diagonal weighting", n, d.len()));
        }
        if d.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
            return Err(Error::NotSpd);
        }
        Ok(ResolvedWeight::Diagonal(d))
    }

    /// Checks symmetry and positive definiteness through a Cholesky factorization.
    pub fn dense(theta: DMatrix<f64>, n: usize) -> Result<Self> {
        if theta.shape() != (n, n) {
            return Err(Error::dims("weighting matrix", n, theta.nrows()));
        }
        let scale = theta.amax().max(f64::MIN_POSITIVE);
        if (&theta - theta.transpose()).amax() > 1e-10 * scale {
            return Err(Error::NotSpd);
        }
        let factor = theta.clone().cholesky().ok_or(Error::NotSpd)?;
        Ok(ResolvedWeight::Dense { theta, factor })
    }

    /// `Θ x`.
    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            ResolvedWeight::Identity => x.clone(),
            ResolvedWeight::Diagonal(d) => d.component_mul(x),
            ResolvedWeight::Dense { theta, .. } => theta * x,
        }
    }

    /// `Θ B`.
    pub fn apply_columns(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            ResolvedWeight::Identity => b.clone(),
            ResolvedWeight::Diagonal(d) => {
                let mut out = b.clone();
                for (i, mut row) in out.row_iter_mut().enumerate() {
                    row *= d[i];
                }
                out
            }
            ResolvedWeight::Dense { theta, .. } => theta * b,
        }
    }

    /// `Lᵀ B` with `Θ = L Lᵀ`, so that `‖Lᵀ x‖² = ‖x‖²_Θ`.
    pub fn half_apply_columns(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            ResolvedWeight::Identity => b.clone(),
            ResolvedWeight::Diagonal(d) => {
                let mut out = b.clone();
                for (i, mut row) in out.row_iter_mut().enumerate() {
                    row *= d[i].sqrt();
                }
                out
            }
            ResolvedWeight::Dense { factor, .. } => factor.l().transpose() * b,
        }
    }

    pub fn half_apply(&self, x: &DVector<f64>) -> DVector<f64> {
        let m = DMatrix::from_column_slice(x.len(), 1, x.as_slice());
        self.half_apply_columns(&m).column(0).into_owned()
    }

    /// `‖x‖²_Θ = Σᵢ Θᵢᵢ xᵢ²` for diagonal weightings, `xᵀ Θ x` otherwise.
    pub fn norm_squared(&self, x: &DVector<f64>) -> f64 {
        match self {
            ResolvedWeight::Identity => x.norm_squared(),
            ResolvedWeight::Diagonal(d) => d.iter().zip(x.iter()).map(|(w, xi)| w * xi * xi).sum(),
            ResolvedWeight::Dense { theta, .. } => x.dot(&(theta * x)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn l1_weights_follow_the_diagonal_formula() {
        let r = DVector::from_vec(vec![2.0, -0.5, 0.0]);
        let w = l1_weights(&r);
        assert_eq!(w.as_slice(), &[0.5, 2.0, 1.0]);
        let theta = ResolvedWeight::diagonal(w, 3).unwrap();
        assert_eq!(theta.norm_squared(&r), 2.5);
        assert_eq!(r.lp_norm(1), 2.5);
    }

    #[test]
    fn non_spd_weight_is_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(ResolvedWeight::dense(m, 2), Err(Error::NotSpd)));
        let nonsym = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 2.0]);
        assert!(matches!(ResolvedWeight::dense(nonsym, 2), Err(Error::NotSpd)));
        assert!(matches!(
            ResolvedWeight::diagonal(DVector::from_vec(vec![1.0, 0.0]), 2),
            Err(Error::NotSpd)
        ));
    }

    #[test]
    fn half_application_reproduces_norm() {
        let m = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let w = ResolvedWeight::dense(m, 3).unwrap();
        let x = DVector::from_vec(vec![0.3, -1.2, 2.0]);
        assert!((w.half_apply(&x).norm_squared() - w.norm_squared(&x)).abs() < 1e-13);
    }
}
