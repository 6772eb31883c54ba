//! Models whose nonlinearity is exactly quadratic, `f(u) = c + A u + H(u, u)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::CsrMatrix;
use crate::model::{CellContribution, CellJacobian, Jacobian, ParamPoint, SemiDiscreteModel};

/// Access to the constant, linear and symmetric bilinear parts of a quadratic `f`.
pub trait QuadraticOperator: Send + Sync {
    fn quadratic_dim(&self) -> usize;
    fn constant_term(&self) -> DVector<f64>;
    fn linear_apply(&self, x: &DVector<f64>) -> DVector<f64>;
    /// Symmetric bilinear form `H(x, y) = H(y, x)`.
    fn bilinear_apply(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64>;

    /// `c + A u + H(u, u)`.
    fn quadratic_eval(&self, u: &DVector<f64>) -> DVector<f64> {
        self.constant_term() + self.linear_apply(u) + self.bilinear_apply(u, u)
    }
}

/// One stored term of `H`: contributes `w · (x_j y_k + x_k y_j) / 2` to row `i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticTerm {
    pub row: usize,
    pub j: usize,
    pub k: usize,
    pub weight: f64,
}

#[derive(Debug, Clone)]
pub struct QuadraticModel {
    c: DVector<f64>,
    a: CsrMatrix,
    terms_by_row: Vec<Vec<QuadraticTerm>>,
    stencils: Vec<Vec<usize>>,
}

impl QuadraticModel {
    pub fn new(c: DVector<f64>, a: CsrMatrix, terms: Vec<QuadraticTerm>) -> Result<Self> {
        let n = c.len();
        if a.nrows() != n || a.ncols() != n {
            return Err(Error::dims("linear operator", n, a.nrows()));
        }
        let mut terms_by_row = vec![Vec::new(); n];
        for t in terms {
            if t.row >= n || t.j >= n || t.k >= n {
                return Err(Error::Config(format!("quadratic term {t:?} out of range for N={n}")));
            }
            terms_by_row[t.row].push(t);
        }
        let stencils = (0..n)
            .map(|r| {
                let mut s: Vec<usize> = a.row(r).map(|(c, _)| c).collect();
                for t in &terms_by_row[r] {
                    s.push(t.j);
                    s.push(t.k);
                }
                s.sort_unstable();
                s.dedup();
                s
            })
            .collect();
        Ok(Self {
            c,
            a,
            terms_by_row,
            stencils,
        })
    }

    /// `f(u) = u ∘ u`.
    pub fn elementwise_square(n: usize) -> Self {
        let terms = (0..n)
            .map(|i| QuadraticTerm {
                row: i,
                j: i,
                k: i,
                weight: 1.0,
            })
            .collect();
        Self::new(DVector::zeros(n), CsrMatrix::from_triplets(n, n, &[]), terms)
            .expect("valid by construction")
    }

    pub fn linear_part(&self) -> &CsrMatrix {
        &self.a
    }

    fn row_value(&self, u: &[f64], row: usize) -> f64 {
        let lin: f64 = self.a.row(row).map(|(c, v)| v * u[c]).sum();
        let quad: f64 = self.terms_by_row[row].iter().map(|t| t.weight * u[t.j] * u[t.k]).sum();
        self.c[row] + lin + quad
    }

    fn row_derivatives(&self, u: &[f64], row: usize) -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, f64)> = self.a.row(row).collect();
        for t in &self.terms_by_row[row] {
            out.push((t.j, t.weight * u[t.k]));
            out.push((t.k, t.weight * u[t.j]));
        }
        out
    }
}

impl QuadraticOperator for QuadraticModel {
    fn quadratic_dim(&self) -> usize {
        self.c.len()
    }

    fn constant_term(&self) -> DVector<f64> {
        self.c.clone()
    }

    fn linear_apply(&self, x: &DVector<f64>) -> DVector<f64> {
        self.a.mul_vec(x)
    }

    fn bilinear_apply(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.c.len(),
            self.terms_by_row.iter().map(|terms| {
                terms
                    .iter()
                    .map(|t| 0.5 * t.weight * (x[t.j] * y[t.k] + x[t.k] * y[t.j]))
                    .sum::<f64>()
            }),
        )
    }
}

impl SemiDiscreteModel for QuadraticModel {
    fn dim(&self) -> usize {
        self.c.len()
    }

    fn cell_count(&self) -> usize {
        self.c.len()
    }

    fn f_eval(&self, u: &DVector<f64>, _mu: &ParamPoint) -> DVector<f64> {
        let s = u.as_slice();
        DVector::from_iterator(self.c.len(), (0..self.c.len()).map(|r| self.row_value(s, r)))
    }

    fn jacobian(&self, u: &DVector<f64>, _mu: &ParamPoint) -> Jacobian {
        let s = u.as_slice();
        let n = self.c.len();
        let mut triplets = Vec::new();
        for r in 0..n {
            triplets.extend(self.row_derivatives(s, r).into_iter().map(|(c, v)| (r, c, v)));
        }
        Jacobian::Sparse(CsrMatrix::from_triplets(n, n, &triplets))
    }

    fn cell_stencil(&self, cell: usize) -> Vec<usize> {
        self.stencils[cell].clone()
    }

    fn cell_residual(
        &self,
        u: &DVector<f64>,
        udot: &DVector<f64>,
        _mu: &ParamPoint,
        cell: usize,
    ) -> CellContribution {
        CellContribution {
            rows: vec![cell],
            values: vec![udot[cell] + self.row_value(u.as_slice(), cell)],
        }
    }

    fn cell_jacobian(&self, u: &DVector<f64>, _mu: &ParamPoint, cell: usize) -> CellJacobian {
        let cols = self.stencils[cell].clone();
        let mut values = DMatrix::zeros(1, cols.len());
        for (c, v) in self.row_derivatives(u.as_slice(), cell) {
            let k = cols.binary_search(&c).expect("stencil covers derivative");
            values[(0, k)] += v;
        }
        CellJacobian {
            rows: vec![cell],
            cols,
            values,
        }
    }
}

/// Largest relative third finite difference of `f` along `directions`,
/// `‖f(u+3hd) − 3f(u+2hd) + 3f(u+hd) − f(u)‖∞ / (1 + ‖f(u)‖∞ + ‖f(u+3hd)‖∞)`.
/// Zero (to roundoff) exactly when `f` is at most quadratic along each line.
pub fn third_difference_defect(
    model: &dyn SemiDiscreteModel,
    u: &DVector<f64>,
    directions: &[DVector<f64>],
    h: f64,
) -> f64 {
    let mu = ParamPoint::empty();
    directions
        .iter()
        .map(|d| {
            let f0 = model.f_eval(u, &mu);
            let f1 = model.f_eval(&(u + h * d), &mu);
            let f2 = model.f_eval(&(u + 2.0 * h * d), &mu);
            let f3 = model.f_eval(&(u + 3.0 * h * d), &mu);
            let scale = 1.0 + f0.amax() + f3.amax();
            (&f3 - 3.0 * f2 + 3.0 * f1 - &f0).amax() / scale
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::jacobian_fd_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_quadratic(n: usize, seed: u64) -> QuadraticModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let mut trip = Vec::new();
        for i in 0..n {
            trip.push((i, i, -2.0 + rng.gen_range(-0.1..0.1)));
            trip.push((i, (i + 1) % n, rng.gen_range(-0.5..0.5)));
        }
        let a = CsrMatrix::from_triplets(n, n, &trip);
        let terms = (0..3 * n)
            .map(|_| QuadraticTerm {
                row: rng.gen_range(0..n),
                j: rng.gen_range(0..n),
                k: rng.gen_range(0..n),
                weight: rng.gen_range(-0.3..0.3),
            })
            .collect();
        QuadraticModel::new(c, a, terms).unwrap()
    }

    #[test]
    fn bilinear_part_is_symmetric() {
        let m = random_quadratic(30, 1);
        let x = DVector::from_fn(30, |i, _| (i as f64).sin());
        let y = DVector::from_fn(30, |i, _| (i as f64 * 0.7).cos());
        let d = (m.bilinear_apply(&x, &y) - m.bilinear_apply(&y, &x)).amax();
        assert!(d < 1e-12);
    }

    #[test]
    fn reconstruction_matches_black_box_evaluation() {
        let m = random_quadratic(40, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let u = DVector::from_fn(40, |_, _| rng.gen_range(-2.0..2.0));
            let direct = m.f_eval(&u, &ParamPoint::empty());
            let rebuilt = m.quadratic_eval(&u);
            assert!((direct - rebuilt).amax() < 1e-12);
        }
    }

    #[test]
    fn third_difference_vanishes() {
        let m = random_quadratic(25, 4);
        let u = DVector::from_element(25, 0.3);
        let dirs: Vec<_> = (0..5).map(|k| DVector::from_fn(25, |i, _| ((i + k) as f64).cos())).collect();
        assert!(third_difference_defect(&m, &u, &dirs, 0.5) < 1e-13);
    }

    #[test]
    fn jacobian_is_consistent() {
        let m = random_quadratic(25, 5);
        let u = DVector::from_fn(25, |i, _| (i as f64 * 0.37).sin());
        let err = jacobian_fd_check(&m, &u, &ParamPoint::empty(), 1e-6, 20).unwrap();
        assert!(err < 1e-8, "{err}");
    }
}
