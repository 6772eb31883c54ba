//! Periodic incompressible Navier-Stokes in rotational form, discretized by a
//! pseudo-spectral Fourier-Galerkin method on `[0, 2πL)^d`, `d ∈ {2, 3}`.
//!
//! The semi-discrete state is the velocity sampled on the uniform grid,
//! component-major: index `c * n^d + p` with point index
//! `p = (iz * n + iy) * n + ix`. The right-hand side is evaluated in
//! coefficient space,
//!
//! ```text
//! ∂v̂/∂t = P[ −(ω×v)^ − ν |k|² v̂ ],
//! ```
//!
//! with the product formed on the grid, truncated by the 2/3 rule, and `P`
//! the Leray projection onto divergence-free fields. As a residual model,
//! `f(u) = −F⁻¹(rhs)`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{ensure_finite, Error, Result};
use crate::model::{
    CellContribution, CellJacobian, Jacobian, LinearOperator, ParamPoint, SemiDiscreteModel,
};
use crate::models::quadratic::QuadraticOperator;

/// Velocity coefficients, one FFT-ordered array per component.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    pub components: Vec<Vec<Complex64>>,
}

impl SpectralField {
    pub fn max_abs(&self) -> f64 {
        self.components
            .iter()
            .flatten()
            .fold(0.0f64, |m, z| m.max(z.norm()))
    }
}

struct Grid {
    dim: usize,
    n: usize,
    npts: usize,
    length: f64,
    // first-derivative wavevector per point, Nyquist set to zero
    k: Vec<[f64; 3]>,
    // |k|² with the Nyquist wavenumber kept
    k_sq: Vec<f64>,
    keep: Vec<bool>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Grid {
    fn new(dim: usize, n: usize, length: f64) -> Self {
        let npts = n.pow(dim as u32);
        let mode = |i: usize| -> i64 {
            if i < n / 2 {
                i as i64
            } else {
                i as i64 - n as i64
            }
        };
        let mut k = Vec::with_capacity(npts);
        let mut k_sq = Vec::with_capacity(npts);
        let mut keep = Vec::with_capacity(npts);
        for p in 0..npts {
            let mut kv = [0.0; 3];
            let mut ksq = 0.0;
            let mut kept = true;
            for axis in 0..dim {
                let i = (p / n.pow(axis as u32)) % n;
                let m = mode(i);
                let wave = m as f64 / length;
                ksq += wave * wave;
                kv[axis] = if 2 * m.unsigned_abs() as usize == n { 0.0 } else { wave };
                kept &= 3 * m.unsigned_abs() < n as u64;
            }
            k.push(kv);
            k_sq.push(ksq);
            keep.push(kept);
        }
        let mut planner = FftPlanner::new();
        Self {
            dim,
            n,
            npts,
            length,
            k,
            k_sq,
            keep,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }
    }

    fn transform(&self, data: &mut [Complex64], inverse: bool) {
        let fft = if inverse { &self.inverse } else { &self.forward };
        let n = self.n;
        let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
        fft.process_with_scratch(data, &mut scratch);
        let mut lines = vec![Complex64::default(); self.npts];
        for axis in 1..self.dim {
            let stride = n.pow(axis as u32);
            let outer_count = self.npts / (stride * n);
            for outer in 0..outer_count {
                for i in 0..n {
                    for inner in 0..stride {
                        lines[(outer * stride + inner) * n + i] =
                            data[outer * stride * n + i * stride + inner];
                    }
                }
            }
            fft.process_with_scratch(&mut lines, &mut scratch);
            for outer in 0..outer_count {
                for i in 0..n {
                    for inner in 0..stride {
                        data[outer * stride * n + i * stride + inner] =
                            lines[(outer * stride + inner) * n + i];
                    }
                }
            }
        }
        if inverse {
            let scale = 1.0 / self.npts as f64;
            data.iter_mut().for_each(|z| *z *= scale);
        }
    }

    fn forward_real(&self, values: &[f64]) -> Vec<Complex64> {
        let mut data: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform(&mut data, false);
        data
    }

    fn inverse_real(&self, coeffs: &[Complex64]) -> Vec<f64> {
        let mut data = coeffs.to_vec();
        self.transform(&mut data, true);
        data.into_iter().map(|z| z.re).collect()
    }

    /// Leray projection in place.
    fn project(&self, comps: &mut [Vec<Complex64>]) {
        for p in 0..self.npts {
            let k = self.k[p];
            let kk: f64 = k[..self.dim].iter().map(|x| x * x).sum();
            if kk == 0.0 {
                continue;
            }
            let mut dot = Complex64::default();
            for (c, comp) in comps.iter().enumerate() {
                dot += comp[p] * k[c];
            }
            for (c, comp) in comps.iter_mut().enumerate() {
                comp[p] -= dot * (k[c] / kk);
            }
        }
    }

    /// Vorticity coefficients; one component in 2D, three in 3D.
    fn curl(&self, v: &[Vec<Complex64>]) -> Vec<Vec<Complex64>> {
        let i = Complex64::new(0.0, 1.0);
        let k = &self.k;
        if self.dim == 2 {
            vec![(0..self.npts).map(|p| i * (k[p][0] * v[1][p] - k[p][1] * v[0][p])).collect()]
        } else {
            vec![
                (0..self.npts).map(|p| i * (k[p][1] * v[2][p] - k[p][2] * v[1][p])).collect(),
                (0..self.npts).map(|p| i * (k[p][2] * v[0][p] - k[p][0] * v[2][p])).collect(),
                (0..self.npts).map(|p| i * (k[p][0] * v[1][p] - k[p][1] * v[0][p])).collect(),
            ]
        }
    }

    /// Pointwise `ω × v` on the grid.
    fn cross(&self, w: &[Vec<f64>], v: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let np = self.npts;
        if self.dim == 2 {
            vec![
                (0..np).map(|p| -w[0][p] * v[1][p]).collect(),
                (0..np).map(|p| w[0][p] * v[0][p]).collect(),
            ]
        } else {
            vec![
                (0..np).map(|p| w[1][p] * v[2][p] - w[2][p] * v[1][p]).collect(),
                (0..np).map(|p| w[2][p] * v[0][p] - w[0][p] * v[2][p]).collect(),
                (0..np).map(|p| w[0][p] * v[1][p] - w[1][p] * v[0][p]).collect(),
            ]
        }
    }

    /// Dealiased coefficients of a grid product, mean mode removed.
    fn truncated_forward(&self, comps: &[Vec<f64>]) -> Vec<Vec<Complex64>> {
        comps
            .iter()
            .map(|c| {
                let mut hat = self.forward_real(c);
                for (p, z) in hat.iter_mut().enumerate() {
                    if !self.keep[p] || p == 0 {
                        *z = Complex64::default();
                    }
                }
                hat
            })
            .collect()
    }
}

/// Configuration-level description of a spectral model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralConfig {
    pub dim: usize,
    pub resolution: usize,
    pub viscosity: f64,
    pub length_scale: f64,
    pub velocity_scale: f64,
}

#[derive(Clone)]
pub struct SpectralNSModel {
    grid: Arc<Grid>,
    nu: f64,
    v0: f64,
}

impl std::fmt::Debug for SpectralNSModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectralNSModel")
            .field("dim", &self.grid.dim)
            .field("resolution", &self.grid.n)
            .field("viscosity", &self.nu)
            .field("length_scale", &self.grid.length)
            .field("velocity_scale", &self.v0)
            .finish()
    }
}

impl SpectralNSModel {
    pub fn new(config: SpectralConfig) -> Result<Self> {
        if config.dim != 2 && config.dim != 3 {
            return Err(Error::Config(format!("spatial dimension must be 2 or 3, got {}", config.dim)));
        }
        if config.resolution < 4 || !config.resolution.is_power_of_two() {
            return Err(Error::Config(format!(
                "resolution must be a power of two ≥ 4, got {}",
                config.resolution
            )));
        }
        if !(config.viscosity >= 0.0) || !(config.length_scale > 0.0) {
            return Err(Error::Config("viscosity must be ≥ 0 and length scale > 0".into()));
        }
        Ok(Self {
            grid: Arc::new(Grid::new(config.dim, config.resolution, config.length_scale)),
            nu: config.viscosity,
            v0: config.velocity_scale,
        })
    }

    pub fn spatial_dim(&self) -> usize {
        self.grid.dim
    }

    pub fn resolution(&self) -> usize {
        self.grid.n
    }

    pub fn points(&self) -> usize {
        self.grid.npts
    }

    pub fn viscosity(&self) -> f64 {
        self.nu
    }

    pub fn length_scale(&self) -> f64 {
        self.grid.length
    }

    pub fn velocity_scale(&self) -> f64 {
        self.v0
    }

    /// Grid coordinate along one axis.
    pub fn coordinate(&self, index: usize) -> f64 {
        2.0 * std::f64::consts::PI * self.grid.length * index as f64 / self.grid.n as f64
    }

    /// Grid coordinates `(x, y, z)` of point `p` (`z = 0` in 2D).
    pub fn point_coordinates(&self, p: usize) -> [f64; 3] {
        let n = self.grid.n;
        let mut out = [0.0; 3];
        for (axis, x) in out.iter_mut().enumerate().take(self.grid.dim) {
            *x = self.coordinate((p / n.pow(axis as u32)) % n);
        }
        out
    }

    pub fn point_index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        let n = self.grid.n;
        (iz * n + iy) * n + ix
    }

    /// Samples a velocity field given pointwise.
    pub fn sample(&self, field: impl Fn([f64; 3]) -> [f64; 3]) -> DVector<f64> {
        let np = self.grid.npts;
        let mut u = DVector::zeros(self.grid.dim * np);
        for p in 0..np {
            let v = field(self.point_coordinates(p));
            for c in 0..self.grid.dim {
                u[c * np + p] = v[c];
            }
        }
        u
    }

    fn split(&self, u: &DVector<f64>) -> Vec<Vec<f64>> {
        let np = self.grid.npts;
        (0..self.grid.dim).map(|c| u.as_slice()[c * np..(c + 1) * np].to_vec()).collect()
    }

    fn join(&self, comps: &[Vec<f64>]) -> DVector<f64> {
        DVector::from_iterator(self.grid.dim * self.grid.npts, comps.iter().flatten().copied())
    }

    pub fn to_spectral(&self, u: &DVector<f64>) -> SpectralField {
        SpectralField {
            components: self.split(u).iter().map(|c| self.grid.forward_real(c)).collect(),
        }
    }

    pub fn to_physical(&self, field: &SpectralField) -> DVector<f64> {
        let comps: Vec<Vec<f64>> =
            field.components.iter().map(|c| self.grid.inverse_real(c)).collect();
        self.join(&comps)
    }

    /// `i k · v̂` at every wavevector.
    pub fn divergence(&self, field: &SpectralField) -> Vec<Complex64> {
        let i = Complex64::new(0.0, 1.0);
        (0..self.grid.npts)
            .map(|p| {
                (0..self.grid.dim)
                    .map(|c| i * self.grid.k[p][c] * field.components[c][p])
                    .sum()
            })
            .collect()
    }

    /// Coefficient-space right-hand side `P[−(ω×v)^ − ν|k|² v̂]`.
    pub fn spectral_rhs(&self, u_hat: &SpectralField) -> Result<SpectralField> {
        if u_hat.components.len() != self.grid.dim
            || u_hat.components.iter().any(|c| c.len() != self.grid.npts)
        {
            return Err(Error::dims("spectral field", self.grid.dim * self.grid.npts, u_hat.components.iter().map(Vec::len).sum()));
        }
        let g = &self.grid;
        let omega_hat = g.curl(&u_hat.components);
        let v: Vec<Vec<f64>> = u_hat.components.iter().map(|c| g.inverse_real(c)).collect();
        let w: Vec<Vec<f64>> = omega_hat.iter().map(|c| g.inverse_real(c)).collect();
        let mut out = g.truncated_forward(&g.cross(&w, &v));
        for (c, comp) in out.iter_mut().enumerate() {
            for (p, z) in comp.iter_mut().enumerate() {
                *z = -*z - self.nu * g.k_sq[p] * u_hat.components[c][p];
            }
        }
        g.project(&mut out);
        for comp in &out {
            if let Some(index) = comp.iter().position(|z| !z.re.is_finite() || !z.im.is_finite()) {
                return Err(Error::NonFinite { what: "spectral right-hand side", index });
            }
        }
        Ok(SpectralField { components: out })
    }

    /// `H` without symmetrization: `P[(ω(a) × b)^]`, dealiased, in physical space.
    fn advect(&self, a_vort: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<Complex64>> {
        let g = &self.grid;
        let mut hat = g.truncated_forward(&g.cross(a_vort, b));
        g.project(&mut hat);
        hat
    }

    fn vorticity_grid(&self, v_hat: &[Vec<Complex64>]) -> Vec<Vec<f64>> {
        self.grid.curl(v_hat).iter().map(|c| self.grid.inverse_real(c)).collect()
    }

    /// Physical-space vorticity components of a state.
    pub fn vorticity(&self, u: &DVector<f64>) -> Vec<Vec<f64>> {
        self.vorticity_grid(&self.to_spectral(u).components)
    }

    fn viscous_hat(&self, x_hat: &[Vec<Complex64>]) -> Vec<Vec<Complex64>> {
        let mut out: Vec<Vec<Complex64>> = x_hat
            .iter()
            .map(|c| c.iter().zip(&self.grid.k_sq).map(|(z, k2)| z * (self.nu * k2)).collect())
            .collect();
        self.grid.project(&mut out);
        out
    }

    fn physical(&self, hat: &[Vec<Complex64>]) -> DVector<f64> {
        let comps: Vec<Vec<f64>> = hat.iter().map(|c| self.grid.inverse_real(c)).collect();
        self.join(&comps)
    }

    /// Taylor-Green initial field. 3D uses `(sin x cos y cos z, −cos x sin y cos z, 0)`,
    /// 2D the classical `(sin x cos y, −cos x sin y)`, coordinates scaled by `L`
    /// and amplitude `V0`.
    pub fn tgv_initial_condition(&self) -> DVector<f64> {
        let (l, v0) = (self.grid.length, self.v0);
        let three = self.grid.dim == 3;
        self.sample(|[x, y, z]| {
            let cz = if three { (z / l).cos() } else { 1.0 };
            [
                v0 * (x / l).sin() * (y / l).cos() * cz,
                -v0 * (x / l).cos() * (y / l).sin() * cz,
                0.0,
            ]
        })
    }

    /// Adds 2D streamfunction modes `ψ = a cos((kx x + ky y)/L + φ)`,
    /// giving the divergence-free velocity `(∂ψ/∂y, −∂ψ/∂x)`.
    pub fn add_streamfunction_modes(&self, u: &DVector<f64>, modes: &[(i32, i32, f64, f64)]) -> Result<DVector<f64>> {
        if self.grid.dim != 2 {
            return Err(Error::Unsupported("streamfunction modes are two-dimensional".into()));
        }
        let l = self.grid.length;
        let extra = self.sample(|[x, y, _]| {
            let mut v = [0.0; 3];
            for &(kx, ky, a, phi) in modes {
                let (kx, ky) = (kx as f64 / l, ky as f64 / l);
                let s = -(a) * (kx * x + ky * y + phi).sin();
                v[0] += s * ky;
                v[1] -= s * kx;
            }
            v
        });
        Ok(u + extra)
    }

    /// Volume-averaged kinetic energy `⟨½|v|²⟩` by grid quadrature.
    pub fn kinetic_energy(&self, u: &DVector<f64>) -> f64 {
        0.5 * u.norm_squared() / self.grid.npts as f64
    }

    /// Enstrophy-based dissipation rate `2ν ⟨½|ω|²⟩`.
    pub fn enstrophy_dissipation(&self, u: &DVector<f64>) -> f64 {
        let w = self.vorticity(u);
        let sum: f64 = w.iter().flatten().map(|x| x * x).sum();
        2.0 * self.nu * 0.5 * sum / self.grid.npts as f64
    }

    /// Largest `|i k · v̂|` over all wavevectors.
    pub fn max_divergence(&self, u: &DVector<f64>) -> f64 {
        self.divergence(&self.to_spectral(u)).iter().fold(0.0, |m, z| m.max(z.norm()))
    }
}

impl SemiDiscreteModel for SpectralNSModel {
    fn dim(&self) -> usize {
        self.grid.dim * self.grid.npts
    }

    fn cell_count(&self) -> usize {
        self.grid.npts
    }

    fn f_eval(&self, u: &DVector<f64>, _mu: &ParamPoint) -> DVector<f64> {
        let g = &self.grid;
        let u_hat: Vec<Vec<Complex64>> = self.split(u).iter().map(|c| g.forward_real(c)).collect();
        let w = self.vorticity_grid(&u_hat);
        let v = self.split(u);
        let adv = self.advect(&w, &v);
        let visc = self.viscous_hat(&u_hat);
        let sum: Vec<Vec<Complex64>> = adv
            .iter()
            .zip(&visc)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect())
            .collect();
        self.physical(&sum)
    }

    fn jacobian(&self, u: &DVector<f64>, _mu: &ParamPoint) -> Jacobian {
        Jacobian::Operator(Arc::new(SpectralJacobian {
            model: self.clone(),
            velocity: self.split(u),
            vorticity: self.vorticity(u),
        }))
    }

    /// Grid node: every velocity component at that node. The pseudo-spectral
    /// residual is global, so the stencil is the whole grid.
    fn cell_stencil(&self, _cell: usize) -> Vec<usize> {
        (0..self.dim()).collect()
    }

    fn cell_residual(
        &self,
        u: &DVector<f64>,
        udot: &DVector<f64>,
        mu: &ParamPoint,
        cell: usize,
    ) -> CellContribution {
        let f = self.f_eval(u, mu);
        let rows: Vec<usize> = (0..self.grid.dim).map(|c| c * self.grid.npts + cell).collect();
        let values = rows.iter().map(|&r| udot[r] + f[r]).collect();
        CellContribution { rows, values }
    }

    /// Materializes the node's Jacobian rows column by column; intended for small grids.
    fn cell_jacobian(&self, u: &DVector<f64>, mu: &ParamPoint, cell: usize) -> CellJacobian {
        let n = self.dim();
        let rows: Vec<usize> = (0..self.grid.dim).map(|c| c * self.grid.npts + cell).collect();
        let jac = self.jacobian(u, mu);
        let mut values = DMatrix::zeros(rows.len(), n);
        let mut e = DVector::zeros(n);
        for col in 0..n {
            e[col] = 1.0;
            let jc = jac.apply(&e);
            for (k, &r) in rows.iter().enumerate() {
                values[(k, col)] = jc[r];
            }
            e[col] = 0.0;
        }
        CellJacobian {
            rows,
            cols: (0..n).collect(),
            values,
        }
    }

    /// Inverts `shift·I + νP(−Δ)` exactly in coefficient space.
    fn approximate_shifted_solve(
        &self,
        _u: &DVector<f64>,
        shift: f64,
        rhs: &DVector<f64>,
    ) -> Option<DVector<f64>> {
        let g = &self.grid;
        let r_hat: Vec<Vec<Complex64>> = self.split(rhs).iter().map(|c| g.forward_real(c)).collect();
        let mut sol = r_hat.clone();
        g.project(&mut sol);
        for c in 0..g.dim {
            for p in 0..g.npts {
                let solenoidal = sol[c][p];
                let gradient = r_hat[c][p] - solenoidal;
                sol[c][p] = solenoidal / (shift + self.nu * g.k_sq[p]) + gradient / shift;
            }
        }
        let x = self.physical(&sol);
        ensure_finite("shifted solve", x.as_slice()).ok()?;
        Some(x)
    }
}

impl QuadraticOperator for SpectralNSModel {
    fn quadratic_dim(&self) -> usize {
        self.dim()
    }

    fn constant_term(&self) -> DVector<f64> {
        DVector::zeros(self.dim())
    }

    fn linear_apply(&self, x: &DVector<f64>) -> DVector<f64> {
        let x_hat: Vec<Vec<Complex64>> = self.split(x).iter().map(|c| self.grid.forward_real(c)).collect();
        self.physical(&self.viscous_hat(&x_hat))
    }

    fn bilinear_apply(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        let (xs, ys) = (self.split(x), self.split(y));
        let wx = self.vorticity(x);
        let wy = self.vorticity(y);
        let a = self.advect(&wx, &ys);
        let b = self.advect(&wy, &xs);
        let sum: Vec<Vec<Complex64>> = a
            .iter()
            .zip(&b)
            .map(|(p, q)| p.iter().zip(q).map(|(s, t)| 0.5 * (s + t)).collect())
            .collect();
        self.physical(&sum)
    }
}

/// Matrix-free Jacobian `J d = νP(−Δ)d + P[ω(u)×d + ω(d)×u]`.
struct SpectralJacobian {
    model: SpectralNSModel,
    velocity: Vec<Vec<f64>>,
    vorticity: Vec<Vec<f64>>,
}

impl LinearOperator for SpectralJacobian {
    fn nrows(&self) -> usize {
        self.model.dim()
    }

    fn ncols(&self) -> usize {
        self.model.dim()
    }

    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        let m = &self.model;
        let g = &m.grid;
        let xs = m.split(x);
        let x_hat: Vec<Vec<Complex64>> = xs.iter().map(|c| g.forward_real(c)).collect();
        let wx = m.vorticity_grid(&x_hat);
        let np = g.npts;
        let a = g.cross(&self.vorticity, &xs);
        let b = g.cross(&wx, &self.velocity);
        let summed: Vec<Vec<f64>> =
            a.iter().zip(&b).map(|(p, q)| (0..np).map(|i| p[i] + q[i]).collect()).collect();
        let mut adv = g.truncated_forward(&summed);
        let visc: Vec<Vec<Complex64>> = x_hat
            .iter()
            .map(|c| c.iter().zip(&g.k_sq).map(|(z, k2)| z * (m.nu * k2)).collect())
            .collect();
        for (a, v) in adv.iter_mut().zip(&visc) {
            a.iter_mut().zip(v).for_each(|(s, t)| *s += t);
        }
        g.project(&mut adv);
        m.physical(&adv)
    }
}
