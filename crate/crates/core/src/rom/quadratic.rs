//! Exact offline/online split for models with a quadratic `f`.
//!
//! With `u = u₀ + V y` and `f(u) = c + A u + H(u, u)`,
//!
//! ```text
//! f(u₀ + V y) = c' + Σₖ yₖ A'Vₖ + Σⱼₖ yⱼ yₖ hⱼₖ
//! c' = f(u₀),  A'Vₖ = A Vₖ + 2 H(u₀, Vₖ),  hⱼₖ = H(Vⱼ, Vₖ)
//! ```
//!
//! so every full-order vector met online (the stage residual and the columns
//! of `J V`) is a combination of the fixed set `{c', MVₖ, A'Vₖ, hⱼₖ}`. Galerkin
//! needs only their projections onto `V`; LSPG needs their Gram matrix.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{ParamPoint, SemiDiscreteModel};
use crate::models::{third_difference_defect, QuadraticOperator};
use crate::rom::pod::ReducedBasis;
use crate::rom::projection::{LeftBasisStrategy, StrategyKind};
use crate::rom::prom::{ReducedBackend, ReducedStage};

/// Reduced operators of a quadratic model. Online methods touch only these
/// `n`-sized arrays; `operations` counts their multiply-adds.
#[derive(Debug, Clone)]
pub struct QuadraticRomOperators {
    n: usize,
    /// `Vᵀ c'`.
    pub constant: DVector<f64>,
    /// `Vᵀ M V`.
    pub mass: DMatrix<f64>,
    /// `Vᵀ A' V`.
    pub linear: DMatrix<f64>,
    /// `quadratic[i][(j, k)] = Vᵢᵀ hⱼₖ`.
    pub quadratic: Vec<DMatrix<f64>>,
    /// Gram matrix of `{c', MVₖ, A'Vₖ, hⱼₖ (j ≤ k)}`.
    pub gram: DMatrix<f64>,
    /// Full-order dimension and basis size the operators were built from.
    pub source_dim: usize,
    operations: u64,
}

/// Largest tolerated third-difference defect for a model declared quadratic.
const QUADRATIC_TOL: f64 = 1e-9;

impl QuadraticRomOperators {
    pub fn reduced_dim(&self) -> usize {
        self.n
    }

    /// Multiply-adds performed by online evaluations so far.
    pub fn operations(&self) -> u64 {
        self.operations
    }

    pub fn reset_operations(&mut self) {
        self.operations = 0;
    }

    fn index_mass(&self, k: usize) -> usize {
        1 + k
    }

    fn index_linear(&self, k: usize) -> usize {
        1 + self.n + k
    }

    fn index_pair(&self, j: usize, k: usize) -> usize {
        let (j, k) = if j <= k { (j, k) } else { (k, j) };
        // row-major packing of the upper triangle
        1 + 2 * self.n + j * self.n - j * (j + 1) / 2 + k
    }

    fn check(&self, y: &DVector<f64>) -> Result<()> {
        if y.len() != self.n {
            return Err(Error::dims("reduced coordinates", self.n, y.len()));
        }
        Ok(())
    }

    /// `Vᵀ f(u₀ + V y)`.
    pub fn reduced_f(&mut self, y: &DVector<f64>) -> Result<DVector<f64>> {
        self.check(y)?;
        let n = self.n;
        let mut out = &self.constant + &self.linear * y;
        for i in 0..n {
            out[i] += y.dot(&(&self.quadratic[i] * y));
        }
        self.operations += (n * n + n * (n * n + n)) as u64;
        Ok(out)
    }

    /// `Vᵀ J(u₀ + V y) V`.
    pub fn reduced_jacobian(&mut self, y: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check(y)?;
        let n = self.n;
        let mut out = self.linear.clone();
        for i in 0..n {
            let row = self.quadratic[i].tr_mul(y) * 2.0;
            for k in 0..n {
                out[(i, k)] += row[k];
            }
        }
        self.operations += (n * n * n + n * n) as u64;
        Ok(out)
    }

    /// Galerkin stage system `(Vᵀ R, Vᵀ J_R V)`.
    pub fn galerkin_stage(
        &mut self,
        shift: f64,
        predictor: &DVector<f64>,
        y: &DVector<f64>,
    ) -> Result<(DVector<f64>, DMatrix<f64>)> {
        self.check(predictor)?;
        let r = self.reduced_f(y)? + &self.mass * (y - predictor) * shift;
        let j = self.reduced_jacobian(y)? + &self.mass * shift;
        self.operations += (2 * self.n * self.n) as u64;
        Ok((r, j))
    }

    /// Dense coefficients of the stage residual in the vector set.
    fn residual_coefficients(&self, shift: f64, predictor: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        let n = self.n;
        let mut a = DVector::zeros(self.gram.nrows());
        a[0] = 1.0;
        for k in 0..n {
            a[self.index_mass(k)] = shift * (y[k] - predictor[k]);
            a[self.index_linear(k)] = y[k];
            for j in 0..=k {
                let w = if j == k { 1.0 } else { 2.0 };
                a[self.index_pair(j, k)] = w * y[j] * y[k];
            }
        }
        a
    }

    /// Sparse coefficients of column `m` of `J_R V` at `y`.
    fn jacobian_column(&self, shift: f64, y: &DVector<f64>, m: usize) -> Vec<(usize, f64)> {
        let mut c = Vec::with_capacity(self.n + 2);
        c.push((self.index_mass(m), shift));
        c.push((self.index_linear(m), 1.0));
        for j in 0..self.n {
            c.push((self.index_pair(j, m), 2.0 * y[j]));
        }
        c
    }

    /// LSPG stage system `(Wᵀ R(y), Wᵀ J_R(y) V)` with `W = J_R(y_w) V`.
    pub fn lspg_stage(
        &mut self,
        shift: f64,
        predictor: &DVector<f64>,
        y: &DVector<f64>,
        y_w: &DVector<f64>,
    ) -> Result<(DVector<f64>, DMatrix<f64>)> {
        self.check(predictor)?;
        self.check(y)?;
        self.check(y_w)?;
        let n = self.n;
        let p = self.gram.nrows();
        let g = &self.gram * self.residual_coefficients(shift, predictor, y);
        self.operations += (p * p) as u64;
        let w_cols: Vec<_> = (0..n).map(|l| self.jacobian_column(shift, y_w, l)).collect();
        let j_cols: Vec<_> = (0..n).map(|m| self.jacobian_column(shift, y, m)).collect();
        let mut r = DVector::zeros(n);
        let mut jac = DMatrix::zeros(n, n);
        for (l, wl) in w_cols.iter().enumerate() {
            r[l] = wl.iter().map(|&(s, c)| c * g[s]).sum();
            for (m, jm) in j_cols.iter().enumerate() {
                let mut acc = 0.0;
                for &(s, cs) in wl {
                    for &(t, ct) in jm {
                        acc += cs * ct * self.gram[(s, t)];
                    }
                }
                jac[(l, m)] = acc;
            }
        }
        self.operations += (n * (n + 2) + n * n * (n + 2) * (n + 2)) as u64;
        Ok((r, jac))
    }
}

/// Checks that `f_eval` really is the quadratic `c + A u + H(u, u)`.
pub fn verify_quadratic<M>(model: &M, basis: &ReducedBasis, seed: u64) -> Result<f64>
where
    M: SemiDiscreteModel + QuadraticOperator,
{
    let n_full = model.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 + basis.offset.amax();
    let mut dirs: Vec<DVector<f64>> = basis.v.column_iter().take(3).map(|c| c * scale).collect();
    dirs.push(DVector::from_fn(n_full, |_, _| rng.gen_range(-scale..scale)));
    let mut defect = third_difference_defect(model, &basis.offset, &dirs, 1.0);
    let mu = ParamPoint::empty();
    for d in &dirs {
        let u = &basis.offset + d;
        let f = model.f_eval(&u, &mu);
        let q = model.quadratic_eval(&u);
        defect = defect.max((f - &q).amax() / (1.0 + q.amax()));
    }
    if defect > QUADRATIC_TOL {
        return Err(Error::NotQuadratic { defect });
    }
    Ok(defect)
}

/// Builds the reduced operators. Offline cost is `O(N n⁴)`; nothing online
/// depends on `N`.
pub fn precompute_quadratic<M>(model: &M, basis: &ReducedBasis) -> Result<QuadraticRomOperators>
where
    M: SemiDiscreteModel + QuadraticOperator,
{
    let n_full = model.dim();
    if model.quadratic_dim() != n_full || basis.full_dim() != n_full {
        return Err(Error::dims("quadratic model", n_full, basis.full_dim()));
    }
    verify_quadratic(model, basis, 0x5eed)?;
    let n = basis.dim();
    let v = &basis.v;
    let u0 = &basis.offset;
    let cols: Vec<DVector<f64>> = v.column_iter().map(|c| c.into_owned()).collect();

    let c_prime = model.quadratic_eval(u0);
    let mv: Vec<DVector<f64>> = cols.iter().map(|c| model.mass_apply(c)).collect();
    let av: Vec<DVector<f64>> =
        cols.iter().map(|c| model.linear_apply(c) + model.bilinear_apply(u0, c) * 2.0).collect();

    let p = 1 + 2 * n + n * (n + 1) / 2;
    let mut set = DMatrix::zeros(n_full, p);
    set.set_column(0, &c_prime);
    for k in 0..n {
        set.set_column(1 + k, &mv[k]);
        set.set_column(1 + n + k, &av[k]);
    }
    let mut quadratic = vec![DMatrix::zeros(n, n); n];
    let mut col = 1 + 2 * n;
    for j in 0..n {
        for k in j..n {
            let h = model.bilinear_apply(&cols[j], &cols[k]);
            let vh = v.tr_mul(&h);
            for i in 0..n {
                quadratic[i][(j, k)] = vh[i];
                quadratic[i][(k, j)] = vh[i];
            }
            set.set_column(col, &h);
            col += 1;
        }
    }
    debug_assert_eq!(col, p);
    let mass = DMatrix::from_fn(n, n, |i, k| cols[i].dot(&mv[k]));
    let linear = DMatrix::from_fn(n, n, |i, k| cols[i].dot(&av[k]));
    Ok(QuadraticRomOperators {
        n,
        constant: v.tr_mul(&c_prime),
        mass,
        linear,
        quadratic,
        gram: set.tr_mul(&set),
        source_dim: n_full,
        operations: 0,
    })
}

/// Online backend evaluating stages purely from precomputed operators.
#[derive(Debug, Clone)]
pub struct QuadraticBackend {
    pub operators: QuadraticRomOperators,
    lspg: bool,
    frozen: Option<DVector<f64>>,
}

impl QuadraticBackend {
    /// Galerkin or plain LSPG; other weightings have no exact precomputation.
    pub fn new(operators: QuadraticRomOperators, strategy: &LeftBasisStrategy) -> Result<Self> {
        let lspg = match strategy.kind {
            StrategyKind::Galerkin => false,
            StrategyKind::Lspg => true,
            _ => {
                return Err(Error::Unsupported(format!(
                    "quadratic pre-computation supports galerkin and lspg, not {}",
                    strategy.name()
                )))
            }
        };
        Ok(Self { operators, lspg, frozen: None })
    }
}

impl ReducedBackend for QuadraticBackend {
    fn reduced_dim(&self) -> usize {
        self.operators.reduced_dim()
    }

    fn stage_system(
        &mut self,
        stage: &ReducedStage<'_>,
        y: &DVector<f64>,
        refresh_left: bool,
    ) -> Result<(DVector<f64>, DMatrix<f64>)> {
        if !self.lspg {
            return self.operators.galerkin_stage(stage.shift, stage.predictor, y);
        }
        if refresh_left || self.frozen.is_none() {
            self.frozen = Some(y.clone());
        }
        let y_w = self.frozen.clone().expect("left-basis state set above");
        self.operators.lspg_stage(stage.shift, stage.predictor, y, &y_w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::CsrMatrix;
    use crate::models::{QuadraticModel, QuadraticTerm};
    use crate::rom::prom::FullOrderBackend;
    use crate::rom::projection::RecomputePolicy;

    fn random_quadratic(n: usize, seed: u64) -> QuadraticModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let mut trip = Vec::new();
        for i in 0..n {
            trip.push((i, i, -2.0));
            trip.push((i, (i + 1) % n, rng.gen_range(-0.5..0.5)));
        }
        let terms = (0..3 * n)
            .map(|_| QuadraticTerm {
                row: rng.gen_range(0..n),
                j: rng.gen_range(0..n),
                k: rng.gen_range(0..n),
                weight: rng.gen_range(-0.3..0.3),
            })
            .collect();
        QuadraticModel::new(c, CsrMatrix::from_triplets(n, n, &trip), terms).unwrap()
    }

    fn random_basis(n_full: usize, n: usize, seed: u64) -> ReducedBasis {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = DMatrix::from_fn(n_full, n, |_, _| rng.gen_range(-1.0..1.0)).qr().q();
        let u0 = DVector::from_fn(n_full, |_, _| rng.gen_range(-0.5..0.5));
        ReducedBasis::new(u0, v).unwrap()
    }

    #[test]
    fn square_map_hand_contraction() {
        let model = QuadraticModel::elementwise_square(2);
        let s = 1.0 / 2f64.sqrt();
        let basis = ReducedBasis::new(DVector::zeros(2), DMatrix::from_column_slice(2, 1, &[s, s])).unwrap();
        let mut ops = precompute_quadratic(&model, &basis).unwrap();
        assert!((ops.quadratic[0][(0, 0)] - s).abs() < 1e-15);
        let y = DVector::from_element(1, 3.0);
        assert!((ops.reduced_f(&y).unwrap()[0] - 9.0 * s).abs() < 1e-14);
    }

    #[test]
    fn linear_special_case() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = CsrMatrix::from_dense(&DMatrix::from_fn(10, 10, |_, _| rng.gen_range(-1.0..1.0)));
        let c = DVector::from_fn(10, |_, _| rng.gen_range(-1.0..1.0));
        let model = QuadraticModel::new(c.clone(), a.clone(), Vec::new()).unwrap();
        let basis = ReducedBasis::new(DVector::zeros(10), random_basis(10, 3, 4).v).unwrap();
        let mut ops = precompute_quadratic(&model, &basis).unwrap();
        let y = DVector::from_fn(3, |_, _| rng.gen_range(-1.0..1.0));
        let v = &basis.v;
        let expect = v.transpose() * a.to_dense() * v * &y + v.transpose() * &c;
        assert!((ops.reduced_f(&y).unwrap() - expect).amax() < 1e-13);
        assert!(ops.quadratic.iter().all(|h| h.amax() == 0.0));
    }

    #[test]
    fn online_matches_direct_projection() {
        let model = random_quadratic(200, 17);
        let basis = random_basis(200, 8, 18);
        let mut ops = precompute_quadratic(&model, &basis).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let mu = ParamPoint::empty();
        for _ in 0..100 {
            let y = DVector::from_fn(8, |_, _| rng.gen_range(-1.0..1.0));
            let direct = basis.v.tr_mul(&model.f_eval(&basis.reconstruct(&y), &mu));
            let online = ops.reduced_f(&y).unwrap();
            assert!((online - &direct).amax() < 1e-10 * (1.0 + direct.amax()));
            let jd = model.jacobian(&basis.reconstruct(&y), &mu).apply_columns(&basis.v);
            let jo = ops.reduced_jacobian(&y).unwrap();
            assert!((jo - basis.v.tr_mul(&jd)).amax() < 1e-10);
        }
    }

    #[test]
    fn online_cost_is_independent_of_full_dimension() {
        let counts: Vec<u64> = [200usize, 400]
            .iter()
            .map(|&n_full| {
                let mut ops = precompute_quadratic(&random_quadratic(n_full, 3), &random_basis(n_full, 5, 4)).unwrap();
                let y = DVector::from_element(5, 0.1);
                ops.galerkin_stage(10.0, &y, &y).unwrap();
                ops.lspg_stage(10.0, &y, &y, &y).unwrap();
                ops.operations()
            })
            .collect();
        assert!(counts[0] > 0);
        assert_eq!(counts[0], counts[1]);
    }

    #[test]
    fn lspg_contraction_matches_full_order_backend() {
        let model = random_quadratic(60, 5);
        let basis = random_basis(60, 4, 6);
        let ops = precompute_quadratic(&model, &basis).unwrap();
        let strategy = LeftBasisStrategy::lspg(RecomputePolicy::PerTimestep);
        let mut quad = QuadraticBackend::new(ops, &strategy).unwrap();
        let mut full = FullOrderBackend::new(&model, &basis, ParamPoint::empty(), strategy).unwrap();
        let ytilde = DVector::from_vec(vec![0.1, -0.2, 0.05, 0.3]);
        let stage = ReducedStage { t: 0.0, shift: 25.0, predictor: &ytilde };
        let y0 = DVector::from_vec(vec![0.2, 0.1, -0.1, 0.0]);
        let y1 = DVector::from_vec(vec![0.25, 0.05, -0.12, 0.02]);
        for (y, refresh) in [(&y0, true), (&y1, false)] {
            let (rq, jq) = quad.stage_system(&stage, y, refresh).unwrap();
            let (rf, jf) = full.stage_system(&stage, y, refresh).unwrap();
            assert!((&rq - &rf).amax() < 1e-10 * (1.0 + rf.amax()), "{rq} vs {rf}");
            assert!((&jq - &jf).amax() < 1e-10 * (1.0 + jf.amax()));
        }
    }

    #[test]
    fn non_quadratic_model_is_rejected() {
        struct Cubic(QuadraticModel);
        impl SemiDiscreteModel for Cubic {
            fn dim(&self) -> usize {
                self.0.dim()
            }
            fn cell_count(&self) -> usize {
                self.0.cell_count()
            }
            fn f_eval(&self, u: &DVector<f64>, mu: &ParamPoint) -> DVector<f64> {
                self.0.f_eval(u, mu) + u.map(|x| x * x * x)
            }
            fn jacobian(&self, u: &DVector<f64>, mu: &ParamPoint) -> crate::model::Jacobian {
                self.0.jacobian(u, mu)
            }
            fn cell_stencil(&self, cell: usize) -> Vec<usize> {
                self.0.cell_stencil(cell)
            }
            fn cell_residual(
                &self,
                u: &DVector<f64>,
                udot: &DVector<f64>,
                mu: &ParamPoint,
                cell: usize,
            ) -> crate::model::CellContribution {
                self.0.cell_residual(u, udot, mu, cell)
            }
            fn cell_jacobian(&self, u: &DVector<f64>, mu: &ParamPoint, cell: usize) -> crate::model::CellJacobian {
                self.0.cell_jacobian(u, mu, cell)
            }
        }
        impl QuadraticOperator for Cubic {
            fn quadratic_dim(&self) -> usize {
                self.0.quadratic_dim()
            }
            fn constant_term(&self) -> DVector<f64> {
                self.0.constant_term()
            }
            fn linear_apply(&self, x: &DVector<f64>) -> DVector<f64> {
                self.0.linear_apply(x)
            }
            fn bilinear_apply(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
                self.0.bilinear_apply(x, y)
            }
        }
        let model = Cubic(random_quadratic(20, 1));
        let err = precompute_quadratic(&model, &random_basis(20, 3, 2)).unwrap_err();
        assert!(matches!(err, Error::NotQuadratic { .. }));
    }
}
