//! Proper orthogonal decomposition of snapshot sets.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::rom::snapshots::SnapshotSet;

/// How many left singular vectors to keep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PodCriterion {
    /// Smallest `n` with `Σᵢ≤ₙ σᵢ² ≥ fraction · Σ σᵢ²`.
    Energy(f64),
    Rank(usize),
    /// Every direction above round-off, i.e. the numerical rank.
    Untruncated,
}

/// Scaling applied to the centred snapshots before the SVD.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    #[default]
    None,
    /// The state is split into `blocks` equal contiguous blocks (one per
    /// physical variable); each is divided by its largest absolute value over
    /// the snapshot set.
    BlockMaxAbs { blocks: usize },
}

/// Affine trial subspace `u ≈ u₀ + V y` with orthonormal `V`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedBasis {
    pub offset: DVector<f64>,
    pub v: DMatrix<f64>,
    /// All singular values of the (scaled) snapshot matrix, non-increasing.
    pub singular_values: Vec<f64>,
    pub criterion: PodCriterion,
    /// Per-block scale factors used before the SVD (all ones without normalization).
    pub block_scales: Vec<f64>,
}

const ORTHONORMALITY_TOL: f64 = 1e-12;

impl ReducedBasis {
    /// Wraps an externally supplied basis after checking `VᵀV = I`.
    pub fn new(offset: DVector<f64>, v: DMatrix<f64>) -> Result<Self> {
        if v.nrows() != offset.len() {
            return Err(Error::dims("basis rows", offset.len(), v.nrows()));
        }
        let basis = Self {
            offset,
            criterion: PodCriterion::Rank(v.ncols()),
            v,
            singular_values: Vec::new(),
            block_scales: vec![1.0],
        };
        let defect = basis.orthonormality_defect();
        if defect > ORTHONORMALITY_TOL {
            return Err(Error::DegenerateBasis(format!("basis is not orthonormal (defect {defect:.3e})")));
        }
        Ok(basis)
    }

    /// `N`.
    pub fn full_dim(&self) -> usize {
        self.v.nrows()
    }

    /// `n`.
    pub fn dim(&self) -> usize {
        self.v.ncols()
    }

    pub fn orthonormality_defect(&self) -> f64 {
        (self.v.tr_mul(&self.v) - DMatrix::identity(self.dim(), self.dim())).amax()
    }

    pub fn reconstruct(&self, y: &DVector<f64>) -> DVector<f64> {
        &self.offset + &self.v * y
    }

    /// Orthogonal projection coordinates `Vᵀ(u − u₀)`.
    pub fn project(&self, u: &DVector<f64>) -> DVector<f64> {
        self.v.tr_mul(&(u - &self.offset))
    }

    /// Basis made of the leading `n` columns.
    pub fn truncated(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.dim() {
            return Err(Error::Config(format!("cannot truncate a {}-column basis to {n}", self.dim())));
        }
        Ok(Self {
            offset: self.offset.clone(),
            v: self.v.columns(0, n).into_owned(),
            singular_values: self.singular_values.clone(),
            criterion: PodCriterion::Rank(n),
            block_scales: self.block_scales.clone(),
        })
    }

    /// Fraction of snapshot energy captured by the first `n` modes.
    pub fn energy_fraction(&self, n: usize) -> f64 {
        energy_fraction(&self.singular_values, n)
    }
}

pub fn energy_fraction(sigma: &[f64], n: usize) -> f64 {
    let total: f64 = sigma.iter().map(|s| s * s).sum();
    if total == 0.0 {
        return 0.0;
    }
    sigma.iter().take(n).map(|s| s * s).sum::<f64>() / total
}

/// Number of modes selected by `criterion` for singular values `sigma`.
pub fn select_rank(sigma: &[f64], criterion: PodCriterion) -> Result<usize> {
    let rank = numerical_rank(sigma);
    match criterion {
        PodCriterion::Energy(f) => {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::Config(format!("energy fraction must lie in (0, 1), got {f}")));
            }
            let total: f64 = sigma.iter().map(|s| s * s).sum();
            let mut acc = 0.0;
            for (i, s) in sigma.iter().enumerate() {
                acc += s * s;
                if acc >= f * total {
                    return Ok(i + 1);
                }
            }
            Ok(rank)
        }
        PodCriterion::Rank(n) => {
            if n == 0 || n > sigma.len() {
                return Err(Error::Config(format!("requested {n} modes from {} snapshots", sigma.len())));
            }
            Ok(n)
        }
        PodCriterion::Untruncated => Ok(rank),
    }
}

fn numerical_rank(sigma: &[f64]) -> usize {
    let first = sigma.first().copied().unwrap_or(0.0);
    let tol = first * f64::EPSILON * sigma.len().max(1) as f64;
    sigma.iter().take_while(|&&s| s > tol).count().max(1)
}

/// Flips each column so that its largest-magnitude entry is positive.
fn fix_signs(v: &mut DMatrix<f64>) {
    for mut col in v.column_iter_mut() {
        let imax = col.iamax();
        if col[imax] < 0.0 {
            col.neg_mut();
        }
    }
}

/// Builds a POD basis from `snapshots` around the offset `u₀`.
pub fn build_pod(
    snapshots: &SnapshotSet,
    offset: &DVector<f64>,
    criterion: PodCriterion,
    normalization: Normalization,
) -> Result<ReducedBasis> {
    if snapshots.is_empty() {
        return Err(Error::DegenerateBasis("no snapshots".into()));
    }
    let n_full = snapshots.dim();
    if offset.len() != n_full {
        return Err(Error::dims("affine offset", n_full, offset.len()));
    }
    ensure_finite("affine offset", offset.as_slice())?;
    let mut x = snapshots.states.clone();
    for mut col in x.column_iter_mut() {
        col -= offset;
    }
    let blocks = match normalization {
        Normalization::None => 1,
        Normalization::BlockMaxAbs { blocks } => blocks,
    };
    if blocks == 0 || n_full % blocks != 0 {
        return Err(Error::Config(format!("{blocks} blocks do not divide state dimension {n_full}")));
    }
    let block_len = n_full / blocks;
    let mut scales = vec![1.0; blocks];
    if matches!(normalization, Normalization::BlockMaxAbs { .. }) {
        for (b, scale) in scales.iter_mut().enumerate() {
            let m = x.rows(b * block_len, block_len).amax();
            *scale = if m > 0.0 { m } else { 1.0 };
            x.rows_mut(b * block_len, block_len).scale_mut(1.0 / *scale);
        }
    }
    if x.amax() == 0.0 {
        return Err(Error::DegenerateBasis("snapshot matrix is zero after centring".into()));
    }

    let svd = x.svd(true, false);
    let u = svd.u.ok_or_else(|| Error::DegenerateBasis("SVD failed".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));
    let sigma: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let n = select_rank(&sigma, criterion)?;
    let mut v = u.select_columns(&order[..n]);

    if scales.iter().any(|&s| s != scales[0]) {
        // Undo the scaling and re-orthonormalize; the span is what matters.
        for (b, &scale) in scales.iter().enumerate() {
            v.rows_mut(b * block_len, block_len).scale_mut(scale);
        }
        v = v.qr().q();
    }
    fix_signs(&mut v);
    let basis = ReducedBasis { offset: offset.clone(), v, singular_values: sigma, criterion, block_scales: scales };
    let defect = basis.orthonormality_defect();
    if defect > ORTHONORMALITY_TOL {
        return Err(Error::DegenerateBasis(format!("POD basis lost orthonormality (defect {defect:.3e})")));
    }
    Ok(basis)
}
