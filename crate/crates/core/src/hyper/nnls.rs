//! Lawson-Hanson active-set nonnegative least squares with an early exit.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct NnlsSolution {
    /// Full weight vector (zeros outside the passive set).
    pub x: DVector<f64>,
    /// `‖G x − b‖₂ / ‖b‖₂`.
    pub relative_residual: f64,
    pub iterations: usize,
    /// True when the tolerance was met before Lawson-Hanson optimality.
    pub early_exit: bool,
}

/// Thin QR of the passive columns, maintained by modified Gram-Schmidt.
struct PassiveQr {
    m: usize,
    q: Vec<DVector<f64>>,
    r: Vec<Vec<f64>>, // r[k] = column k of R (length k + 1)
}

impl PassiveQr {
    fn new(m: usize) -> Self {
        Self { m, q: Vec::new(), r: Vec::new() }
    }

    /// Appends a column; returns false (and leaves the factorization intact)
    /// when it is numerically dependent on the current ones.
    fn push(&mut self, col: &DVector<f64>) -> bool {
        let norm0 = col.norm();
        if norm0 == 0.0 {
            return false;
        }
        let mut w = col.clone();
        let mut coeffs = vec![0.0; self.q.len() + 1];
        // Two passes of MGS keep Q orthonormal to working precision.
        for _ in 0..2 {
            for (k, qk) in self.q.iter().enumerate() {
                let c = qk.dot(&w);
                w.axpy(-c, qk, 1.0);
                coeffs[k] += c;
            }
        }
        let nw = w.norm();
        if nw <= 1e-12 * norm0 {
            return false;
        }
        coeffs[self.q.len()] = nw;
        self.q.push(w / nw);
        self.r.push(coeffs);
        true
    }

    fn rebuild(g: &DMatrix<f64>, passive: &[usize]) -> (Self, Vec<usize>) {
        let mut qr = Self::new(g.nrows());
        let mut kept = Vec::with_capacity(passive.len());
        for &j in passive {
            if qr.push(&g.column(j).into_owned()) {
                kept.push(j);
            }
        }
        (qr, kept)
    }

    /// Least-squares coefficients for `b` in the passive columns.
    fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        debug_assert_eq!(b.len(), self.m);
        let k = self.q.len();
        let qtb: Vec<f64> = self.q.iter().map(|q| q.dot(b)).collect();
        let mut z = DVector::zeros(k);
        for i in (0..k).rev() {
            let mut s = qtb[i];
            for j in i + 1..k {
                s -= self.r[j][i] * z[j];
            }
            z[i] = s / self.r[i][i];
        }
        z
    }
}

/// Solves `min ‖G x − b‖₂` subject to `x ≥ 0`, stopping as soon as
/// `‖G x − b‖₂ ≤ tolerance · ‖b‖₂`.
///
/// The entering column is the one with the largest gradient entry; ties go to
/// the lowest index, so results are deterministic.
pub fn nnls(g: &DMatrix<f64>, b: &DVector<f64>, tolerance: f64, max_iterations: usize) -> Result<NnlsSolution> {
    let (m, ncols) = g.shape();
    if b.len() != m {
        return Err(Error::dims("NNLS right-hand side", m, b.len()));
    }
    if !(tolerance >= 0.0) {
        return Err(Error::Config(format!("NNLS tolerance must be nonnegative, got {tolerance}")));
    }
    let bnorm = b.norm();
    let mut x = DVector::zeros(ncols);
    let relative = |x: &DVector<f64>| {
        let r = (g * x - b).norm();
        if bnorm > 0.0 {
            r / bnorm
        } else {
            r
        }
    };
    if bnorm == 0.0 {
        return Ok(NnlsSolution { x, relative_residual: 0.0, iterations: 0, early_exit: true });
    }
    let gscale = g.amax();
    let dual_tol = 10.0 * f64::EPSILON * gscale * bnorm * (m.max(ncols) as f64);
    let mut passive: Vec<usize> = Vec::new();
    let mut in_passive = vec![false; ncols];
    let mut rejected = vec![false; ncols];
    let mut qr = PassiveQr::new(m);
    let mut iterations = 0;

    loop {
        let res = b - g * &x;
        let rel = res.norm() / bnorm;
        if rel <= tolerance {
            return Ok(NnlsSolution { x, relative_residual: rel, iterations, early_exit: true });
        }
        let w = g.tr_mul(&res);
        let mut best: Option<(usize, f64)> = None;
        for j in 0..ncols {
            if in_passive[j] || rejected[j] {
                continue;
            }
            if w[j] > dual_tol && best.map_or(true, |(_, bw)| w[j] > bw) {
                best = Some((j, w[j]));
            }
        }
        let Some((j, _)) = best else {
            return Ok(NnlsSolution { relative_residual: relative(&x), x, iterations, early_exit: false });
        };
        if iterations >= max_iterations {
            return Err(Error::Nnls { iterations, residual: rel });
        }
        iterations += 1;
        if !qr.push(&g.column(j).into_owned()) {
            rejected[j] = true;
            continue;
        }
        passive.push(j);
        in_passive[j] = true;

        // Inner loop: keep the passive solution feasible.
        loop {
            let z = qr.solve(b);
            if z.iter().all(|&v| v > 0.0) {
                for v in x.iter_mut() {
                    *v = 0.0;
                }
                for (k, &p) in passive.iter().enumerate() {
                    x[p] = z[k];
                }
                break;
            }
            let mut alpha = f64::INFINITY;
            for (k, &p) in passive.iter().enumerate() {
                if z[k] <= 0.0 {
                    let denom = x[p] - z[k];
                    let a = if denom > 0.0 { x[p] / denom } else { 0.0 };
                    alpha = alpha.min(a);
                }
            }
            for (k, &p) in passive.iter().enumerate() {
                x[p] += alpha * (z[k] - x[p]);
            }
            let leaving: Vec<usize> = passive
                .iter()
                .enumerate()
                .filter(|&(k, &p)| z[k] <= 0.0 && x[p] <= 1e-14 * (1.0 + x.amax()))
                .map(|(_, &p)| p)
                .collect();
            // At least the blocking index leaves.
            let leaving = if leaving.is_empty() {
                let (k, _) = passive
                    .iter()
                    .enumerate()
                    .filter(|&(k, _)| z[k] <= 0.0)
                    .map(|(k, &p)| (k, x[p]))
                    .fold((usize::MAX, f64::INFINITY), |acc, c| if c.1 < acc.1 { c } else { acc });
                vec![passive[k]]
            } else {
                leaving
            };
            for &p in &leaving {
                x[p] = 0.0;
                in_passive[p] = false;
            }
            passive.retain(|p| in_passive[*p]);
            let (rebuilt, kept) = PassiveQr::rebuild(g, &passive);
            for &p in &passive {
                if !kept.contains(&p) {
                    in_passive[p] = false;
                    x[p] = 0.0;
                }
            }
            passive = kept;
            qr = rebuilt;
            if passive.is_empty() {
                break;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Exhaustive oracle: best unconstrained LS over every support whose
    /// solution is nonnegative.
    fn brute_force(g: &DMatrix<f64>, b: &DVector<f64>) -> f64 {
        let n = g.ncols();
        let mut best = b.norm();
        for mask in 1u32..(1 << n) {
            let cols: Vec<usize> = (0..n).filter(|j| mask & (1 << j) != 0).collect();
            let sub = g.select_columns(&cols);
            let Some(z) = (sub.tr_mul(&sub)).cholesky().map(|c| c.solve(&sub.tr_mul(b))) else { continue };
            if z.iter().all(|&v| v >= 0.0) {
                best = best.min((&sub * z - b).norm());
            }
        }
        best
    }

    #[test]
    fn identity_design_clips_negative_entries() {
        let g = DMatrix::identity(2, 2);
        let b = DVector::from_vec(vec![3.0, -1.0]);
        let s = nnls(&g, &b, 1e-3, 100).unwrap();
        assert_eq!(s.x.as_slice(), &[3.0, 0.0]);
        assert!((s.relative_residual * b.norm() - 1.0).abs() < 1e-14);
        assert!(!s.early_exit);
    }

    #[test]
    fn unit_weights_are_feasible_with_zero_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = DMatrix::from_fn(15, 30, |_, _| rng.gen_range(-1.0..1.0));
        let b = &g * DVector::from_element(30, 1.0);
        let s = nnls(&g, &b, 1e-2, 500).unwrap();
        assert!(s.relative_residual <= 1e-2);
        assert!(s.x.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn recovers_sparse_nonnegative_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let g = DMatrix::from_fn(20, 50, |_, _| rng.gen_range(-1.0..1.0));
        let mut truth = DVector::zeros(50);
        for &j in &[3usize, 17, 29, 41] {
            truth[j] = rng.gen_range(0.5..2.0);
        }
        let b = &g * &truth;
        let s = nnls(&g, &b, 1e-12, 500).unwrap();
        assert!(s.relative_residual * b.norm() <= 1e-10);
        assert!(s.x.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn matches_exhaustive_search_on_small_problems() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..30 {
            let g = DMatrix::from_fn(8, 6, |_, _| rng.gen_range(-1.0..1.0));
            let b = DVector::from_fn(8, |_, _| rng.gen_range(-1.0..1.0));
            let s = nnls(&g, &b, 0.0, 200).unwrap();
            let oracle = brute_force(&g, &b);
            assert!((s.relative_residual * b.norm() - oracle).abs() < 1e-10, "{} vs {oracle}", s.relative_residual);
        }
    }

    #[test]
    fn ties_choose_the_lowest_index() {
        let g = DMatrix::from_row_slice(2, 3, &[1.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let b = DVector::from_vec(vec![1.0, 0.0]);
        let s = nnls(&g, &b, 1e-12, 10).unwrap();
        assert_eq!(s.x.as_slice(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn iteration_cap_reports_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = DMatrix::from_fn(10, 10, |_, _| rng.gen_range(0.0..1.0));
        let b = &g * DVector::from_element(10, 1.0);
        assert!(matches!(nnls(&g, &b, 1e-14, 1), Err(Error::Nnls { iterations: 1, .. })));
    }
}
