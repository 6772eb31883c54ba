//! Energy-conserving sampling and weighting.
//!
//! The projected residual is a sum of per-cell terms, `Wᵀ r = Σₑ Wₑᵀ rₑ`.
//! Training finds a sparse set of cells `E` and positive weights `ξₑ` with
//! `Σ_{e∈E} ξₑ Wₑᵀ rₑ ≈ Wᵀ r` on training states; online only the sampled
//! cells and the state entries their stencils read are ever touched.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::hyper::nnls::nnls;
use crate::model::{ParamPoint, SemiDiscreteModel};
use crate::rom::pod::ReducedBasis;
use crate::rom::projection::{LeftBasisStrategy, StrategyKind};
use crate::rom::prom::{ReducedBackend, ReducedStage};
use crate::rom::snapshots::SnapshotSet;
use crate::rom::weighting::{l1_weights, Weighting};

/// Left-basis rule for one cell, restricted to what is computable locally.
#[derive(Debug, Clone, PartialEq)]
enum LocalRule {
    Galerkin,
    /// `Wₑ = Θₑ J_{R,e} V` with `Θ` diagonal (`None` means identity).
    Weighted(Option<DVector<f64>>),
    L1,
}

fn local_rule(strategy: &LeftBasisStrategy) -> Result<LocalRule> {
    match &strategy.kind {
        StrategyKind::Galerkin => Ok(LocalRule::Galerkin),
        StrategyKind::Lspg => Ok(LocalRule::Weighted(None)),
        StrategyKind::ThetaWeighted(Weighting::Identity) => Ok(LocalRule::Weighted(None)),
        StrategyKind::ThetaWeighted(Weighting::Diagonal(d)) => Ok(LocalRule::Weighted(Some(d.clone()))),
        StrategyKind::L1Irls | StrategyKind::ThetaWeighted(Weighting::L1Residual) => Ok(LocalRule::L1),
        StrategyKind::ThetaWeighted(_) => Err(Error::Unsupported(
            "hyperreduction needs a weighting that is local to cells (identity or diagonal)".into(),
        )),
    }
}

/// Cell-local pieces of a projected residual.
struct CellTerms {
    /// `Wₑᵀ rₑ`.
    residual: DVector<f64>,
    /// `Wₑ`, rows of the cell (kept for freezing).
    left: DMatrix<f64>,
    /// `J_{R,e} V`, rows of the cell.
    jrv: DMatrix<f64>,
}

/// Evaluates cell `e`'s projected contribution. `u` and `udot` need valid
/// entries only on the cell stencil.
#[allow(clippy::too_many_arguments)]
fn cell_terms<M: SemiDiscreteModel + ?Sized>(
    model: &M,
    basis: &ReducedBasis,
    rule: &LocalRule,
    u: &DVector<f64>,
    udot: &DVector<f64>,
    shift: f64,
    mu: &ParamPoint,
    cell: usize,
    frozen_left: Option<&DMatrix<f64>>,
    need_jacobian: bool,
) -> Result<CellTerms> {
    let n = basis.dim();
    let c = model.cell_residual(u, udot, mu, cell);
    ensure_finite("cell residual", &c.values)?;
    let rows = &c.rows;
    let vrows = DMatrix::from_fn(rows.len(), n, |i, k| basis.v[(rows[i], k)]);
    let r = DVector::from_column_slice(&c.values);
    let jrv = if need_jacobian || !matches!(rule, LocalRule::Galerkin) {
        let cj = model.cell_jacobian(u, mu, cell);
        if cj.rows != *rows {
            return Err(Error::dims("cell Jacobian rows", rows.len(), cj.rows.len()));
        }
        let vcols = DMatrix::from_fn(cj.cols.len(), n, |i, k| basis.v[(cj.cols[i], k)]);
        ensure_finite("cell Jacobian", cj.values.as_slice())?;
        &cj.values * vcols + &vrows * shift
    } else {
        DMatrix::zeros(rows.len(), n)
    };
    let left = match frozen_left {
        Some(w) => w.clone(),
        None => match rule {
            LocalRule::Galerkin => vrows,
            LocalRule::Weighted(None) => jrv.clone(),
            LocalRule::Weighted(Some(d)) => {
                let mut w = jrv.clone();
                for (i, &row) in rows.iter().enumerate() {
                    w.row_mut(i).scale_mut(d[row]);
                }
                w
            }
            LocalRule::L1 => {
                let theta = l1_weights(&r);
                let mut w = jrv.clone();
                for i in 0..rows.len() {
                    w.row_mut(i).scale_mut(theta[i]);
                }
                w
            }
        },
    };
    Ok(CellTerms { residual: left.tr_mul(&r), left, jrv })
}

/// `G` and `b` of the ECSW training problem.
#[derive(Debug, Clone)]
pub struct EcswTrainingSystem {
    /// `(n · n_train) × n_cells`; column `e` stacks `Wₑᵀ rₑ` over snapshots.
    pub g: DMatrix<f64>,
    /// `G · 1`, the exact projected residuals.
    pub b: DVector<f64>,
    pub snapshot_times: Vec<f64>,
    pub reduced_dim: usize,
}

/// Assembles the training system from states in `training`.
///
/// Contributions are those of `f` alone (`u̇ = 0`): at converged stage
/// solutions the full residual nearly vanishes and would make a useless
/// target. For Petrov-Galerkin strategies the left basis uses the stage
/// Jacobian `shift·M + J`, matching what the online solver builds.
pub fn assemble_training<M: SemiDiscreteModel + ?Sized>(
    model: &M,
    basis: &ReducedBasis,
    strategy: &LeftBasisStrategy,
    training: &SnapshotSet,
    shift: f64,
    mu: &ParamPoint,
) -> Result<EcswTrainingSystem> {
    if training.is_empty() {
        return Err(Error::Config("ECSW training needs at least one snapshot".into()));
    }
    if training.dim() != model.dim() || basis.full_dim() != model.dim() {
        return Err(Error::dims("training snapshots", model.dim(), training.dim()));
    }
    if model.mass_matrix().is_some() {
        return Err(Error::Unsupported("cell-wise mass splitting needs an identity mass matrix".into()));
    }
    let rule = local_rule(strategy)?;
    let n = basis.dim();
    let cells = model.cell_count();
    let mut g = DMatrix::zeros(n * training.len(), cells);
    let zero = DVector::zeros(model.dim());
    for s in 0..training.len() {
        let u = training.column(s);
        for e in 0..cells {
            let t = cell_terms(model, basis, &rule, &u, &zero, shift, mu, e, None, false)?;
            g.view_mut((s * n, e), (n, 1)).copy_from(&t.residual);
        }
    }
    let b = g.column_sum();
    Ok(EcswTrainingSystem { g, b, snapshot_times: training.times.clone(), reduced_dim: n })
}

/// Sampled cells and their positive weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcswSampleSet {
    pub indices: Vec<usize>,
    pub weights: Vec<f64>,
    /// `‖Gξ − b‖₂ / ‖b‖₂` on the training system.
    pub achieved_residual: f64,
    pub epsilon: f64,
}

impl EcswSampleSet {
    /// Every cell with unit weight.
    pub fn full(cells: usize) -> Self {
        Self { indices: (0..cells).collect(), weights: vec![1.0; cells], achieved_residual: 0.0, epsilon: 0.0 }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn validate(&self, cells: usize) -> Result<()> {
        if self.indices.is_empty() {
            return Err(Error::Sample("empty sample set".into()));
        }
        if self.indices.len() != self.weights.len() {
            return Err(Error::Sample("index and weight counts differ".into()));
        }
        if let Some(&bad) = self.indices.iter().find(|&&e| e >= cells) {
            return Err(Error::Sample(format!("cell {bad} out of range (model has {cells} cells)")));
        }
        if self.weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(Error::Sample("weights must be finite and positive".into()));
        }
        Ok(())
    }
}

/// Solves the training NNLS with early exit at `epsilon`.
pub fn nnls_solve(system: &EcswTrainingSystem, epsilon: f64) -> Result<EcswSampleSet> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::Config(format!("ECSW tolerance must lie in (0, 1), got {epsilon}")));
    }
    let cap = 3 * system.g.ncols() + 10;
    let sol = nnls(&system.g, &system.b, epsilon, cap)?;
    let (indices, weights): (Vec<usize>, Vec<f64>) =
        sol.x.iter().enumerate().filter(|(_, &w)| w > 0.0).map(|(e, &w)| (e, w)).unzip();
    let sample = EcswSampleSet { indices, weights, achieved_residual: sol.relative_residual, epsilon };
    if sample.achieved_residual > epsilon {
        return Err(Error::Nnls { iterations: sol.iterations, residual: sample.achieved_residual });
    }
    if sample.is_empty() {
        return Err(Error::Sample("training produced no sampled cells".into()));
    }
    Ok(sample)
}

/// Online evaluator over the reduced mesh.
pub struct HyperreducedBackend<'a, M: SemiDiscreteModel + ?Sized> {
    model: &'a M,
    basis: &'a ReducedBasis,
    mu: ParamPoint,
    rule: LocalRule,
    sample: EcswSampleSet,
    /// Sorted state indices read by sampled cells.
    mesh: Vec<usize>,
    /// Full-length buffers, NaN outside the reduced mesh.
    u_buf: DVector<f64>,
    udot_buf: DVector<f64>,
    frozen: Option<Vec<DMatrix<f64>>>,
}

impl<'a, M: SemiDiscreteModel + ?Sized> HyperreducedBackend<'a, M> {
    pub fn new(
        model: &'a M,
        basis: &'a ReducedBasis,
        mu: ParamPoint,
        strategy: &LeftBasisStrategy,
        sample: EcswSampleSet,
    ) -> Result<Self> {
        sample.validate(model.cell_count())?;
        if basis.full_dim() != model.dim() {
            return Err(Error::dims("basis rows", model.dim(), basis.full_dim()));
        }
        if model.mass_matrix().is_some() {
            return Err(Error::Unsupported("cell-wise mass splitting needs an identity mass matrix".into()));
        }
        let rule = local_rule(strategy)?;
        let mut mesh = BTreeSet::new();
        for &e in &sample.indices {
            mesh.extend(model.cell_stencil(e));
        }
        // Rows written by a cell are part of its stencil for every built-in
        // model; include them explicitly so the mass term is always readable.
        let zero = DVector::from_element(model.dim(), 0.0);
        for &e in &sample.indices {
            mesh.extend(model.cell_residual(&zero, &zero, &mu, e).rows);
        }
        let n_full = model.dim();
        Ok(Self {
            model,
            basis,
            mu,
            rule,
            sample,
            mesh: mesh.into_iter().collect(),
            u_buf: DVector::from_element(n_full, f64::NAN),
            udot_buf: DVector::from_element(n_full, f64::NAN),
            frozen: None,
        })
    }

    pub fn sample(&self) -> &EcswSampleSet {
        &self.sample
    }

    /// State indices on the reduced mesh.
    pub fn reduced_mesh(&self) -> &[usize] {
        &self.mesh
    }

    fn load(&mut self, y: &DVector<f64>, ydot: &DVector<f64>) {
        for &i in &self.mesh {
            let vi = self.basis.v.row(i);
            self.u_buf[i] = self.basis.offset[i] + vi.dot(&y.transpose());
            self.udot_buf[i] = vi.dot(&ydot.transpose());
        }
    }

    fn accumulate(&mut self, shift: f64, refresh: bool, need_jacobian: bool) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let n = self.basis.dim();
        let mut r = DVector::zeros(n);
        let mut j = DMatrix::zeros(n, n);
        let refresh = refresh || self.frozen.is_none() || matches!(self.rule, LocalRule::Galerkin);
        let mut lefts = Vec::with_capacity(if refresh { self.sample.len() } else { 0 });
        for (k, (&e, &w)) in self.sample.indices.iter().zip(&self.sample.weights).enumerate() {
            let frozen = if refresh { None } else { self.frozen.as_ref().map(|f| &f[k]) };
            let t = cell_terms(
                self.model,
                self.basis,
                &self.rule,
                &self.u_buf,
                &self.udot_buf,
                shift,
                &self.mu,
                e,
                frozen,
                need_jacobian,
            )?;
            r.axpy(w, &t.residual, 1.0);
            if need_jacobian {
                j += t.left.tr_mul(&t.jrv) * w;
            }
            if refresh {
                lefts.push(t.left);
            }
        }
        if refresh && !matches!(self.rule, LocalRule::Galerkin) {
            self.frozen = Some(lefts);
        }
        Ok((r, j))
    }

    /// `Σₑ ξₑ Wₑᵀ rₑ(u₀ + V y, V ẏ)` with `W` built from `J = ∂r/∂u`.
    pub fn residual(&mut self, y: &DVector<f64>, ydot: &DVector<f64>) -> Result<DVector<f64>> {
        if y.len() != self.basis.dim() || ydot.len() != self.basis.dim() {
            return Err(Error::dims("reduced coordinates", self.basis.dim(), y.len()));
        }
        self.load(y, ydot);
        Ok(self.accumulate(0.0, true, false)?.0)
    }
}

impl<M: SemiDiscreteModel + ?Sized> ReducedBackend for HyperreducedBackend<'_, M> {
    fn reduced_dim(&self) -> usize {
        self.basis.dim()
    }

    fn stage_system(
        &mut self,
        stage: &ReducedStage<'_>,
        y: &DVector<f64>,
        refresh_left: bool,
    ) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let ydot = (y - stage.predictor) * stage.shift;
        self.load(y, &ydot);
        self.accumulate(stage.shift, refresh_left, true)
    }
}

/// One-shot hyperreduced projected residual.
pub fn hyperreduced_residual<M: SemiDiscreteModel + ?Sized>(
    model: &M,
    basis: &ReducedBasis,
    strategy: &LeftBasisStrategy,
    sample: &EcswSampleSet,
    y: &DVector<f64>,
    ydot: &DVector<f64>,
    mu: &ParamPoint,
) -> Result<DVector<f64>> {
    HyperreducedBackend::new(model, basis, mu.clone(), strategy, sample.clone())?.residual(y, ydot)
}
