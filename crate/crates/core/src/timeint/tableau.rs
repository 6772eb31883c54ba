use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Butcher tableau of a diagonally implicit Runge-Kutta scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct ButcherTableau {
    pub name: &'static str,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: DVector<f64>,
}

impl ButcherTableau {
    pub fn stages(&self) -> usize {
        self.b.len()
    }

    /// Checks lower-triangularity, `Σⱼ aᵢⱼ = cᵢ` and `Σ b = 1` to `tol`.
    pub fn validate(&self, tol: f64) -> Result<()> {
        let s = self.stages();
        if self.a.shape() != (s, s) || self.c.len() != s {
            return Err(Error::Config(format!("{}: inconsistent tableau shapes", self.name)));
        }
        for i in 0..s {
            for j in i + 1..s {
                if self.a[(i, j)] != 0.0 {
                    return Err(Error::Config(format!("{}: tableau is not lower triangular", self.name)));
                }
            }
            let row: f64 = self.a.row(i).sum();
            if (row - self.c[i]).abs() > tol {
                return Err(Error::Config(format!("{}: row {i} sums to {row}, c = {}", self.name, self.c[i])));
            }
            if !(self.a[(i, i)] > 0.0) {
                return Err(Error::Config(format!("{}: diagonal entry {i} must be positive", self.name)));
            }
        }
        if (self.b.sum() - 1.0).abs() > tol {
            return Err(Error::Config(format!("{}: weights sum to {}", self.name, self.b.sum())));
        }
        Ok(())
    }

    /// Last row of `A` equals `b`, so the final stage is the step result.
    pub fn is_stiffly_accurate(&self) -> bool {
        let s = self.stages();
        (0..s).all(|j| self.a[(s - 1, j)] == self.b[j])
    }

    pub fn is_singly_diagonal(&self) -> bool {
        let d = self.a[(0, 0)];
        (1..self.stages()).all(|i| self.a[(i, i)] == d)
    }
}

/// Two-stage, second-order, L-stable SDIRK with `α = 1 − √2/2`.
pub fn dirk2_tableau() -> ButcherTableau {
    let alpha = 1.0 - std::f64::consts::SQRT_2 / 2.0;
    ButcherTableau {
        name: "DIRK2",
        a: DMatrix::from_row_slice(2, 2, &[alpha, 0.0, 1.0 - alpha, alpha]),
        b: DVector::from_vec(vec![1.0 - alpha, alpha]),
        c: DVector::from_vec(vec![alpha, 1.0]),
    }
}

/// Three-stage, third-order, L-stable SDIRK.
pub fn dirk3_tableau() -> ButcherTableau {
    let theta = (2f64.sqrt() / 4.0).atan() / 3.0;
    let alpha = 1.0 + 6f64.sqrt() / 2.0 * theta.sin() - 2f64.sqrt() / 2.0 * theta.cos();
    let tau2 = (1.0 + alpha) / 2.0;
    let b1 = -(6.0 * alpha * alpha - 16.0 * alpha + 1.0) / 4.0;
    let b2 = (6.0 * alpha * alpha - 20.0 * alpha + 5.0) / 4.0;
    ButcherTableau {
        name: "DIRK3",
        a: DMatrix::from_row_slice(
            3,
            3,
            &[alpha, 0.0, 0.0, tau2 - alpha, alpha, 0.0, b1, b2, alpha],
        ),
        b: DVector::from_vec(vec![b1, b2, alpha]),
        c: DVector::from_vec(vec![alpha, tau2, 1.0]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dirk2_coefficients() {
        let t = dirk2_tableau();
        assert!((t.a[(0, 0)] - 0.29289321881345254).abs() < 4.0 * f64::EPSILON);
        assert_eq!(t.b.sum(), 1.0);
        t.validate(1e-14).unwrap();
        assert!(t.is_stiffly_accurate() && t.is_singly_diagonal());
    }

    #[test]
    fn dirk3_coefficients() {
        let t = dirk3_tableau();
        assert!((t.a[(0, 0)] - 0.4358665215084590).abs() < 1e-15);
        assert!((t.b[0] + t.b[1] + t.a[(2, 2)] - 1.0).abs() < 1e-14);
        t.validate(1e-14).unwrap();
        assert!(t.is_stiffly_accurate() && t.is_singly_diagonal());
    }

    #[test]
    fn dirk3_alpha_is_root_of_order_condition() {
        // α solves 6α³ − 18α² + 9α − 1 = 0 (third-order SDIRK condition)
        let a = dirk3_tableau().a[(0, 0)];
        assert!((6.0 * a * a * a - 18.0 * a * a + 9.0 * a - 1.0).abs() < 1e-14);
    }

    #[test]
    fn rejects_malformed_tableau() {
        let mut t = dirk2_tableau();
        t.c[0] = 0.5;
        assert!(t.validate(1e-14).is_err());
        let mut t = dirk2_tableau();
        t.a[(0, 1)] = 0.1;
        assert!(t.validate(1e-14).is_err());
    }
}
