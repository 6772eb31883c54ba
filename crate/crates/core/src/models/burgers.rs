//! Periodic viscous Burgers equation, finite-volume upwind convection plus
//! central diffusion.
//!
//! The convective flux `u²/2` is split as `F⁺(u) = ½ max(u,0)²` and
//! `F⁻(u) = ½ min(u,0)²`; `F⁺` is differenced backward and `F⁻` forward, so
//! every cell is upwinded according to the sign of its local speed and the
//! scheme stays conservative when the speed changes sign.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::CsrMatrix;
use crate::model::{CellContribution, CellJacobian, Jacobian, ParamPoint, SemiDiscreteModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UpwindOrder {
    First,
    Second,
}

impl UpwindOrder {
    pub fn from_int(order: u32) -> Result<Self> {
        match order {
            1 => Ok(UpwindOrder::First),
            2 => Ok(UpwindOrder::Second),
            other => Err(Error::Config(format!("upwind order must be 1 or 2, got {other}"))),
        }
    }

    fn reach(self) -> usize {
        match self {
            UpwindOrder::First => 1,
            UpwindOrder::Second => 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BurgersModel {
    n: usize,
    length: f64,
    dx: f64,
    nu: f64,
    order: UpwindOrder,
    counters: Option<Arc<Vec<AtomicU64>>>,
}

#[inline]
fn flux_plus(u: f64) -> f64 {
    let p = u.max(0.0);
    0.5 * p * p
}

#[inline]
fn flux_minus(u: f64) -> f64 {
    let m = u.min(0.0);
    0.5 * m * m
}

impl BurgersModel {
    pub fn new(n: usize, length: f64, viscosity: f64, order: UpwindOrder) -> Result<Self> {
        if n < 3 {
            return Err(Error::Config(format!("Burgers grid needs at least 3 cells, got {n}")));
        }
        if !(length > 0.0) || !length.is_finite() {
            return Err(Error::Config(format!("domain length must be positive, got {length}")));
        }
        if viscosity < 0.0 || !viscosity.is_finite() {
            return Err(Error::Config(format!("viscosity must be nonnegative, got {viscosity}")));
        }
        Ok(Self {
            n,
            length,
            dx: length / n as f64,
            nu: viscosity,
            order,
            counters: None,
        })
    }

    /// Enables per-cell evaluation counters for [`cell_residual`](SemiDiscreteModel::cell_residual)
    /// and [`cell_jacobian`](SemiDiscreteModel::cell_jacobian).
    pub fn instrumented(mut self) -> Self {
        self.counters = Some(Arc::new((0..self.n).map(|_| AtomicU64::new(0)).collect()));
        self
    }

    /// Cells whose per-cell evaluation counter is nonzero.
    pub fn evaluated_cells(&self) -> Vec<usize> {
        self.counters
            .as_ref()
            .map(|c| {
                c.iter()
                    .enumerate()
                    .filter(|(_, k)| k.load(Ordering::Relaxed) > 0)
                    .map(|(i, _)| i)
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn reset_counters(&self) {
        if let Some(c) = &self.counters {
            c.iter().for_each(|k| k.store(0, Ordering::Relaxed));
        }
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn viscosity(&self) -> f64 {
        self.nu
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn order(&self) -> UpwindOrder {
        self.order
    }

    /// Cell-center coordinates `x_i = (i + ½) Δx`.
    pub fn cell_centers(&self) -> Vec<f64> {
        (0..self.n).map(|i| (i as f64 + 0.5) * self.dx).collect()
    }

    /// Samples `g` at the cell centers.
    pub fn sample(&self, g: impl Fn(f64) -> f64) -> DVector<f64> {
        DVector::from_iterator(self.n, self.cell_centers().into_iter().map(g))
    }

    #[inline]
    fn wrap(&self, i: usize, offset: isize) -> usize {
        (i as isize + offset).rem_euclid(self.n as isize) as usize
    }

    fn count(&self, cell: usize) {
        if let Some(c) = &self.counters {
            c[cell].fetch_add(1, Ordering::Relaxed);
        }
    }

    /// `f_i` read from the stencil of cell `i` only.
    #[inline]
    fn cell_f(&self, u: &[f64], i: usize) -> f64 {
        let at = |o: isize| u[self.wrap(i, o)];
        let (um, u0, up) = (at(-1), at(0), at(1));
        let conv = match self.order {
            UpwindOrder::First => {
                (flux_plus(u0) - flux_plus(um) + flux_minus(up) - flux_minus(u0)) / self.dx
            }
            UpwindOrder::Second => {
                let (umm, upp) = (at(-2), at(2));
                (3.0 * flux_plus(u0) - 4.0 * flux_plus(um) + flux_plus(umm) - flux_minus(upp)
                    + 4.0 * flux_minus(up)
                    - 3.0 * flux_minus(u0))
                    / (2.0 * self.dx)
            }
        };
        let diff = self.nu * (up - 2.0 * u0 + um) / (self.dx * self.dx);
        conv - diff
    }

    /// Row `i` of `∂f/∂u` as `(offset, value)` pairs, offsets may repeat on tiny grids.
    fn cell_derivatives(&self, u: &[f64], i: usize) -> Vec<(isize, f64)> {
        let at = |o: isize| u[self.wrap(i, o)];
        let p = |v: f64| v.max(0.0);
        let m = |v: f64| v.min(0.0);
        let d = self.nu / (self.dx * self.dx);
        let mut out = match self.order {
            UpwindOrder::First => vec![
                (-1, -p(at(-1)) / self.dx),
                (0, (p(at(0)) - m(at(0))) / self.dx),
                (1, m(at(1)) / self.dx),
            ],
            UpwindOrder::Second => {
                let h = 2.0 * self.dx;
                vec![
                    (-2, p(at(-2)) / h),
                    (-1, -4.0 * p(at(-1)) / h),
                    (0, 3.0 * (p(at(0)) - m(at(0))) / h),
                    (1, 4.0 * m(at(1)) / h),
                    (2, -m(at(2)) / h),
                ]
            }
        };
        out.push((-1, -d));
        out.push((0, 2.0 * d));
        out.push((1, -d));
        out
    }
}

impl SemiDiscreteModel for BurgersModel {
    fn dim(&self) -> usize {
        self.n
    }

    fn cell_count(&self) -> usize {
        self.n
    }

    fn f_eval(&self, u: &DVector<f64>, _mu: &ParamPoint) -> DVector<f64> {
        let s = u.as_slice();
        DVector::from_iterator(self.n, (0..self.n).map(|i| self.cell_f(s, i)))
    }

    fn jacobian(&self, u: &DVector<f64>, _mu: &ParamPoint) -> Jacobian {
        let s = u.as_slice();
        let mut triplets = Vec::with_capacity(self.n * (2 * self.order.reach() + 3));
        for i in 0..self.n {
            for (o, v) in self.cell_derivatives(s, i) {
                triplets.push((i, self.wrap(i, o), v));
            }
        }
        Jacobian::Sparse(CsrMatrix::from_triplets(self.n, self.n, &triplets))
    }

    fn cell_stencil(&self, cell: usize) -> Vec<usize> {
        let r = self.order.reach() as isize;
        let mut s: Vec<usize> = (-r..=r).map(|o| self.wrap(cell, o)).collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    fn cell_residual(
        &self,
        u: &DVector<f64>,
        udot: &DVector<f64>,
        _mu: &ParamPoint,
        cell: usize,
    ) -> CellContribution {
        self.count(cell);
        CellContribution {
            rows: vec![cell],
            values: vec![udot[cell] + self.cell_f(u.as_slice(), cell)],
        }
    }

    fn cell_jacobian(&self, u: &DVector<f64>, _mu: &ParamPoint, cell: usize) -> CellJacobian {
        self.count(cell);
        let cols = self.cell_stencil(cell);
        let mut values = DMatrix::zeros(1, cols.len());
        for (o, v) in self.cell_derivatives(u.as_slice(), cell) {
            let c = self.wrap(cell, o);
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{assemble_cell_residuals, jacobian_fd_check, residual};
    use proptest::prelude::*;

    #[test]
    fn uniform_state_is_steady() {
        for order in [UpwindOrder::First, UpwindOrder::Second] {
            let m = BurgersModel::new(16, 1.0, 0.01, order).unwrap();
            let u = DVector::from_element(16, 0.7);
            let r = residual(&m, &u, &DVector::zeros(16), &ParamPoint::empty()).unwrap();
            assert!(r.amax() < 1e-14);
        }
    }

    #[test]
    fn hand_evaluated_upwind_fluxes() {
        let m = BurgersModel::new(3, 3.0, 0.0, UpwindOrder::First).unwrap();
        let f = m.f_eval(&DVector::from_vec(vec![2.0, 1.0, 1.0]), &ParamPoint::empty());
        assert_eq!(f.as_slice(), &[1.5, -1.5, 0.0]);
    }

    #[test]
    fn negative_speeds_difference_forward() {
        let m = BurgersModel::new(3, 3.0, 0.0, UpwindOrder::First).unwrap();
        let f = m.f_eval(&DVector::from_vec(vec![-2.0, -1.0, -1.0]), &ParamPoint::empty());
        // (F(u_{i+1}) - F(u_i)) / Δx with F = u²/2
        assert_eq!(f.as_slice(), &[-1.5, 0.0, 1.5]);
    }

    #[test]
    fn fd_check_at_random_state() {
        for order in [UpwindOrder::First, UpwindOrder::Second] {
            let m = BurgersModel::new(64, 1.0, 1e-3, order).unwrap();
            let u = m.sample(|x| 0.3 + (2.0 * std::f64::consts::PI * x).sin() + 0.2 * (7.0 * x).cos());
            let h = 1e-6 * (1.0 + u.amax());
            let err = jacobian_fd_check(&m, &u, &ParamPoint::empty(), h, 20).unwrap();
            assert!(err < 1e-5, "{order:?}: {err}");
        }
    }

    #[test]
    fn cell_jacobian_matches_global_rows() {
        let m = BurgersModel::new(12, 1.0, 1e-2, UpwindOrder::Second).unwrap();
        let u = m.sample(|x| (6.0 * x).sin());
        let j = m.jacobian(&u, &ParamPoint::empty()).to_dense();
        for cell in 0..12 {
            let cj = m.cell_jacobian(&u, &ParamPoint::empty(), cell);
            for (k, &c) in cj.cols.iter().enumerate() {
                assert!((cj.values[(0, k)] - j[(cell, c)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn instrumentation_counts_cells() {
        let m = BurgersModel::new(10, 1.0, 1e-2, UpwindOrder::First).unwrap().instrumented();
        let u = DVector::from_element(10, 1.0);
        m.cell_residual(&u, &u, &ParamPoint::empty(), 3);
        m.cell_residual(&u, &u, &ParamPoint::empty(), 7);
        assert_eq!(m.evaluated_cells(), vec![3, 7]);
        m.reset_counters();
        assert!(m.evaluated_cells().is_empty());
    }

    proptest! {
        #[test]
        fn inviscid_momentum_is_conserved(values in prop::collection::vec(0.01f64..3.0, 8..64),
                                          second in any::<bool>()) {
            let order = if second { UpwindOrder::Second } else { UpwindOrder::First };
            let m = BurgersModel::new(values.len(), 2.0, 0.0, order).unwrap();
            let f = m.f_eval(&DVector::from_vec(values), &ParamPoint::empty());
            prop_assert!(f.sum().abs() < 1e-12 * (1.0 + f.amax()));
        }

        #[test]
        fn cells_sum_to_global_residual(values in prop::collection::vec(-2.0f64..2.0, 8..48),
                                        rate in -1.0f64..1.0) {
            let n = values.len();
            let m = BurgersModel::new(n, 1.0, 1e-2, UpwindOrder::Second).unwrap();
            let u = DVector::from_vec(values);
            let udot = DVector::from_fn(n, |i, _| rate * i as f64);
            let mu = ParamPoint::empty();
            let global = residual(&m, &u, &udot, &mu).unwrap();
            let summed = assemble_cell_residuals(&m, &u, &udot, &mu).unwrap();
            prop_assert!((&global - &summed).amax() <= 1e-12 * (1.0 + summed.amax()));
        }
    }
}
