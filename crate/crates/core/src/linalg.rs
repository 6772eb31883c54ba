//! Sparse storage and direct solvers used by the full-order stage solves.
//!
//! Desk-scale discretizations are narrow-banded once the periodic wrap is
//! folded away, so factorization goes through a banded LU with partial
//! pivoting and falls back to dense LU when no narrow ordering exists.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from `(row, col, value)` triplets; duplicate entries are summed.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; nrows + 1];
        for &(r, c, _) in triplets {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) out of bounds");
            counts[r + 1] += 1;
        }
        for i in 0..nrows {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut cols = vec![0usize; triplets.len()];
        let mut vals = vec![0.0; triplets.len()];
        for &(r, c, v) in triplets {
            let k = fill[r];
            cols[k] = c;
            vals[k] = v;
            fill[r] += 1;
        }

        let mut row_ptr = Vec::with_capacity(nrows + 1);
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        row_ptr.push(0);
        let mut scratch: Vec<(usize, f64)> = Vec::new();
        for r in 0..nrows {
            scratch.clear();
            scratch.extend((counts[r]..counts[r + 1]).map(|k| (cols[k], vals[k])));
            scratch.sort_by_key(|&(c, _)| c);
            for &(c, v) in &scratch {
                if col_idx.len() > row_ptr[r] && *col_idx.last().unwrap() == c {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_idx.push(c);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            nrows: n,
            ncols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let mut triplets = Vec::new();
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                if m[(r, c)] != 0.0 {
                    triplets.push((r, c, m[(r, c)]));
                }
            }
        }
        Self::from_triplets(m.nrows(), m.ncols(), &triplets)
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Iterates the stored entries of row `r` as `(col, value)`.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.ncols);
        DVector::from_iterator(
            self.nrows,
            (0..self.nrows).map(|r| self.row(r).map(|(c, v)| v * x[c]).sum::<f64>()),
        )
    }

    /// `self * b` for a dense right-hand side with few columns.
    pub fn mul_dense(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(b.nrows(), self.ncols);
        let mut out = DMatrix::zeros(self.nrows, b.ncols());
        for k in 0..b.ncols() {
            let col = b.column(k);
            for r in 0..self.nrows {
                out[(r, k)] = self.row(r).map(|(c, v)| v * col[c]).sum();
            }
        }
        out
    }

    /// Returns `shift * I + self`.
    pub fn shifted(&self, shift: f64) -> Self {
        assert_eq!(self.nrows, self.ncols);
        let mut triplets: Vec<(usize, usize, f64)> = Vec::with_capacity(self.nnz() + self.nrows);
        for r in 0..self.nrows {
            triplets.extend(self.row(r).map(|(c, v)| (r, c, v)));
            triplets.push((r, r, shift));
        }
        Self::from_triplets(self.nrows, self.ncols, &triplets)
    }

    /// Returns `a * self + b * other` (same shape).
    pub fn linear_combination(&self, a: f64, other: &CsrMatrix, b: f64) -> Self {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let mut triplets = Vec::with_capacity(self.nnz() + other.nnz());
        for r in 0..self.nrows {
            triplets.extend(self.row(r).map(|(c, v)| (r, c, a * v)));
            triplets.extend(other.row(r).map(|(c, v)| (r, c, b * v)));
        }
        Self::from_triplets(self.nrows, self.ncols, &triplets)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                m[(r, c)] += v;
            }
        }
        m
    }

    /// Lower and upper bandwidth of `P A Pᵀ` for the ordering `perm`
    /// (`perm[new] = old`).
    fn bandwidth_under(&self, perm: &[usize]) -> (usize, usize) {
        let mut inverse = vec![0usize; perm.len()];
        for (new, &old) in perm.iter().enumerate() {
            inverse[old] = new;
        }
        let (mut kl, mut ku) = (0usize, 0usize);
        for r in 0..self.nrows {
            let nr = inverse[r];
            for (c, _) in self.row(r) {
                let nc = inverse[c];
                if nr > nc {
                    kl = kl.max(nr - nc);
                } else {
                    ku = ku.max(nc - nr);
                }
            }
        }
        (kl, ku)
    }
}

/// Ordering `0, n-1, 1, n-2, …` which turns a cyclic band into an ordinary band.
fn interleaved_order(n: usize) -> Vec<usize> {
    let mut perm = Vec::with_capacity(n);
    let (mut lo, mut hi) = (0usize, n);
    while lo < hi {
        perm.push(lo);
        lo += 1;
        if lo < hi {
            hi -= 1;
            perm.push(hi);
        }
    }
    perm
}

/// LU factorization with partial pivoting in band storage.
#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    // upper bandwidth of U after pivoting fill (kl + ku)
    kuf: usize,
    ab: Vec<f64>,
    pivots: Vec<usize>,
    perm: Vec<usize>,
}

impl BandedLu {
    fn ld(&self) -> usize {
        self.kl + self.kuf + 1
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.ab[j * self.ld() + self.kuf + i - j]
    }

    #[inline]
    fn at_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        let ld = self.ld();
        &mut self.ab[j * ld + self.kuf + i - j]
    }

    fn factor(a: &CsrMatrix, perm: Vec<usize>, kl: usize, ku: usize) -> Result<Self> {
        let n = a.nrows();
        let kuf = kl + ku;
        let ld = 2 * kl + ku + 1;
        let mut lu = Self {
            n,
            kl,
            kuf,
            ab: vec![0.0; ld * n],
            pivots: vec![0; n],
            perm,
        };
        let mut inverse = vec![0usize; n];
        for (new, &old) in lu.perm.iter().enumerate() {
            inverse[old] = new;
        }
        for r in 0..n {
            for (c, v) in a.row(r) {
                *lu.at_mut(inverse[r], inverse[c]) += v;
            }
        }

        let scale = lu.ab.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for j in 0..n {
            let km = kl.min(n - 1 - j);
            let mut p = 0;
            let mut best = lu.at(j, j).abs();
            for r in 1..=km {
                let v = lu.at(j + r, j).abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            lu.pivots[j] = j + p;
            if best <= f64::EPSILON * scale * n as f64 || !best.is_finite() {
                return Err(Error::LinearSolve(format!(
                    "matrix is singular to working precision at column {j}"
                )));
            }
            let last = (j + kuf).min(n - 1);
            if p != 0 {
                for c in j..=last {
                    let a = lu.at(j, c);
                    let b = lu.at(j + p, c);
                    *lu.at_mut(j, c) = b;
                    *lu.at_mut(j + p, c) = a;
                }
            }
            let pivot = lu.at(j, j);
            for r in 1..=km {
                *lu.at_mut(j + r, j) /= pivot;
            }
            for c in j + 1..=last {
                let t = lu.at(j, c);
                if t != 0.0 {
                    for r in 1..=km {
                        let l = lu.at(j + r, j);
                        *lu.at_mut(j + r, c) -= l * t;
                    }
                }
            }
        }
        Ok(lu)
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let n = self.n;
        let mut y: Vec<f64> = self.perm.iter().map(|&old| b[old]).collect();
        for j in 0..n {
            y.swap(j, self.pivots[j]);
            let km = self.kl.min(n - 1 - j);
            let yj = y[j];
            for r in 1..=km {
                y[j + r] -= self.at(j + r, j) * yj;
            }
        }
        for j in (0..n).rev() {
            y[j] /= self.at(j, j);
            let yj = y[j];
            for i in j.saturating_sub(self.kuf)..j {
                y[i] -= self.at(i, j) * yj;
            }
        }
        let mut x = DVector::zeros(n);
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }

    pub fn bandwidths(&self) -> (usize, usize) {
        (self.kl, self.kuf - self.kl)
    }
}

/// Direct factorization of a square sparse matrix.
#[derive(Debug, Clone)]
pub enum SparseLu {
    Banded(BandedLu),
    Dense(nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
}

impl SparseLu {
    pub fn new(a: &CsrMatrix) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::dims("square matrix", a.nrows(), a.ncols()));
        }
        let n = a.nrows();
        let natural: Vec<usize> = (0..n).collect();
        let folded = interleaved_order(n);
        let (kl0, ku0) = a.bandwidth_under(&natural);
        let (kl1, ku1) = a.bandwidth_under(&folded);
        let (perm, kl, ku) = if kl1 + ku1 < kl0 + ku0 {
            (folded, kl1, ku1)
        } else {
            (natural, kl0, ku0)
        };
        if 4 * (2 * kl + ku + 1) < n {
            Ok(SparseLu::Banded(BandedLu::factor(a, perm, kl, ku)?))
        } else {
            let lu = a.to_dense().lu();
            if !lu.is_invertible() {
                return Err(Error::LinearSolve("matrix is singular".into()));
            }
            Ok(SparseLu::Dense(lu))
        }
    }

    pub fn solve(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        let x = match self {
            SparseLu::Banded(lu) => lu.solve(b),
            SparseLu::Dense(lu) => lu
                .solve(b)
                .ok_or_else(|| Error::LinearSolve("matrix is singular".into()))?,
        };
        crate::error::ensure_finite("linear solve", x.as_slice())?;
        Ok(x)
    }
}

/// Solves a small dense square system by LU with partial pivoting.
pub fn dense_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    if a.nrows() != a.ncols() || a.nrows() != b.len() {
        return Err(Error::dims("dense system", a.nrows(), b.len()));
    }
    let x = a
        .clone()
        .lu()
        .solve(b)
        .ok_or_else(|| Error::LinearSolve("reduced matrix is singular".into()))?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::LinearSolve("reduced matrix is numerically singular".into()));
    }
    Ok(x)
}

/// Infinity norm of a vector.
pub fn norm_inf(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}
