//! Experiment configuration.
//!
//! Configurations are TOML files with the sections `[model]`, `[time]`,
//! `[snapshots]`, `[pod]`, `[rom]`, `[ecsw]`, `[qoi]` and `[report]`. Every
//! key is optional; missing keys take the defaults of [`ExperimentConfig::default`],
//! which describe the Burgers experiment. A minimal file for the 2D
//! Taylor-Green case:
//!
//! ```toml
//! [model]
//! kind = "tgv2d"
//! resolution = 64
//! viscosity = 0.01
//!
//! [qoi]
//! probes = [{ kind = "volume_kinetic_energy" }]
//! ```
//!
//! Unknown keys are rejected so that typos do not silently fall back to
//! defaults.

use std::path::Path;

use pmor::rom::{LeftBasisStrategy, Normalization, RecomputePolicy};
use pmor::timeint::{LinearSolveStrategy, NewtonConfig, Scheme};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, HarnessResult};
use crate::qoi::QoiProbe;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Burgers,
    Tgv2d,
    Tgv3d,
}

/// A divergence-free streamfunction mode added to the 2D Taylor-Green field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeSpec {
    pub kx: i32,
    pub ky: i32,
    pub amplitude: f64,
    #[serde(default)]
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Cells (Burgers) or grid points per direction (spectral).
    pub resolution: usize,
    /// Domain length (Burgers) or the length scale `L` of a `2πL` box.
    pub length: f64,
    pub viscosity: f64,
    pub upwind_order: u32,
    /// Burgers initial condition `mean + amplitude·sin(2πx/length)`.
    pub mean: f64,
    pub amplitude: f64,
    /// Taylor-Green amplitude `V0`.
    pub velocity_scale: f64,
    pub perturbation_modes: Vec<ModeSpec>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::Burgers,
            resolution: 2048,
            length: 1.0,
            viscosity: 1e-4,
            upwind_order: 2,
            mean: 1.0,
            amplitude: 0.5,
            velocity_scale: 1.0,
            perturbation_modes: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeConfig {
    pub scheme: Scheme,
    pub dt: f64,
    /// End of the training window; snapshots are collected on `[0, train_end]`.
    pub train_end: f64,
    pub t_max: f64,
}

impl Default for TimeConfig {
    fn default() -> Self {
        Self { scheme: Scheme::Dirk2, dt: 1e-3, train_end: 2.0, t_max: 3.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SnapshotConfig {
    pub delta_s: f64,
    /// Record every converged implicit stage instead of sampling step ends.
    pub every_stage: bool,
}

impl Default for SnapshotConfig {
    fn default() -> Self {
        Self { delta_s: 0.01, every_stage: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PodConfig {
    /// Energy fractions; one basis per entry.
    pub energy_tiers: Vec<f64>,
    /// Fixed ranks, used instead of `energy_tiers` when non-empty.
    pub ranks: Vec<usize>,
    /// Keep the full numerical rank; overrides the two lists above.
    pub untruncated: bool,
    pub normalization: Normalization,
}

impl Default for PodConfig {
    fn default() -> Self {
        Self {
            energy_tiers: vec![0.9, 0.99, 0.999, 0.9999],
            ranks: Vec::new(),
            untruncated: false,
            normalization: Normalization::None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RomBackendKind {
    /// Quadratic pre-computation when the model supports it, else full order.
    #[default]
    Auto,
    FullOrder,
    Quadratic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NewtonSection {
    pub atol: f64,
    pub rtol: f64,
    pub max_iterations: usize,
    pub linear_solver: LinearSolveStrategy,
}

impl Default for NewtonSection {
    fn default() -> Self {
        let d = NewtonConfig::default();
        Self { atol: d.atol, rtol: d.rtol, max_iterations: d.max_iterations, linear_solver: d.linear_solver }
    }
}

impl NewtonSection {
    pub fn to_config(&self) -> NewtonConfig {
        NewtonConfig {
            atol: self.atol,
            rtol: self.rtol,
            max_iterations: self.max_iterations,
            linear_solver: self.linear_solver,
            ..NewtonConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RomConfig {
    /// Projection strategies by name: `galerkin`, `lspg`, `l1_irls`.
    pub strategies: Vec<String>,
    pub recompute: RecomputePolicy,
    pub backend: RomBackendKind,
    /// Newton settings for the HDM.
    pub hdm_newton: NewtonSection,
    /// Newton settings for reduced models.
    pub newton: NewtonSection,
}

impl Default for RomConfig {
    fn default() -> Self {
        Self {
            strategies: vec!["galerkin".into(), "lspg".into()],
            recompute: RecomputePolicy::PerTimestep,
            backend: RomBackendKind::Auto,
            hdm_newton: NewtonSection::default(),
            newton: NewtonSection::default(),
        }
    }
}

impl RomConfig {
    pub fn strategies(&self) -> HarnessResult<Vec<LeftBasisStrategy>> {
        self.strategies.iter().map(|s| Ok(LeftBasisStrategy::from_name(s, self.recompute)?)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EcswConfig {
    pub epsilon: f64,
    /// Strategies that get a hyperreduced model.
    pub strategies: Vec<String>,
    /// Use every k-th training snapshot.
    pub training_stride: usize,
}

impl Default for EcswConfig {
    fn default() -> Self {
        Self { epsilon: 1e-2, strategies: vec!["lspg".into()], training_stride: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QoiConfig {
    pub probes: Vec<QoiProbe>,
    /// Sampling interval of QoI histories and of the error metric.
    pub delta_s: f64,
}

impl Default for QoiConfig {
    fn default() -> Self {
        Self { probes: vec![QoiProbe::PointValue { location: vec![0.75], component: 0 }], delta_s: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    pub write_csv: bool,
    pub write_artifacts: bool,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self { write_csv: true, write_artifacts: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Hdm,
    Pod,
    Rom,
    Ecsw,
    Hprom,
    Compare,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    pub stages: Vec<Stage>,
    pub model: ModelConfig,
    pub time: TimeConfig,
    pub snapshots: SnapshotConfig,
    pub pod: PodConfig,
    pub rom: RomConfig,
    pub ecsw: EcswConfig,
    pub qoi: QoiConfig,
    pub report: ReportConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "burgers".into(),
            seed: 0,
            stages: vec![Stage::Hdm, Stage::Pod, Stage::Rom, Stage::Ecsw, Stage::Hprom, Stage::Compare],
            model: ModelConfig::default(),
            time: TimeConfig::default(),
            snapshots: SnapshotConfig::default(),
            pod: PodConfig::default(),
            rom: RomConfig::default(),
            ecsw: EcswConfig::default(),
            qoi: QoiConfig::default(),
            report: ReportConfig::default(),
        }
    }
}

fn positive(what: &str, v: f64) -> HarnessResult<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(HarnessError::Config(format!("{what} must be positive and finite, got {v}")))
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> HarnessResult<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> HarnessResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration is always representable in TOML")
    }

    /// The 2D Taylor-Green experiment with a few extra vortex modes so the
    /// trajectory is not confined to a single direction.
    pub fn tgv2d() -> Self {
        Self {
            name: "tgv2d".into(),
            stages: vec![Stage::Hdm, Stage::Pod, Stage::Rom, Stage::Compare],
            model: ModelConfig {
                kind: ModelKind::Tgv2d,
                resolution: 128,
                viscosity: 1.0 / 1600.0,
                perturbation_modes: vec![
                    ModeSpec { kx: 1, ky: 2, amplitude: 0.2, phase: 0.3 },
                    ModeSpec { kx: 2, ky: 3, amplitude: 0.1, phase: 1.1 },
                    ModeSpec { kx: 3, ky: 1, amplitude: 0.05, phase: 2.0 },
                ],
                ..ModelConfig::default()
            },
            time: TimeConfig { scheme: Scheme::Dirk3, dt: 1e-3, train_end: 1.0, t_max: 1.0 },
            rom: RomConfig {
                hdm_newton: NewtonSection { linear_solver: LinearSolveStrategy::ModelApproximate, ..NewtonSection::default() },
                ..RomConfig::default()
            },
            qoi: QoiConfig {
                probes: vec![QoiProbe::VolumeKineticEnergy, QoiProbe::EnstrophyDissipation],
                delta_s: 0.01,
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> HarnessResult<()> {
        let m = &self.model;
        if m.resolution < 4 {
            return Err(HarnessError::Config(format!("model resolution must be at least 4, got {}", m.resolution)));
        }
        positive("model.length", m.length)?;
        if !(m.viscosity >= 0.0) || !m.viscosity.is_finite() {
            return Err(HarnessError::Config(format!("model.viscosity must be ≥ 0, got {}", m.viscosity)));
        }
        if !m.perturbation_modes.is_empty() && m.kind != ModelKind::Tgv2d {
            return Err(HarnessError::Config("perturbation modes are only available for tgv2d".into()));
        }
        positive("time.dt", self.time.dt)?;
        positive("time.t_max", self.time.t_max)?;
        if !(self.time.train_end > 0.0 && self.time.train_end <= self.time.t_max) {
            return Err(HarnessError::Config(format!(
                "time.train_end must lie in (0, t_max], got {}",
                self.time.train_end
            )));
        }
        positive("snapshots.delta_s", self.snapshots.delta_s)?;
        positive("qoi.delta_s", self.qoi.delta_s)?;
        for (what, ds) in [("snapshots.delta_s", self.snapshots.delta_s), ("qoi.delta_s", self.qoi.delta_s)] {
            let k = ds / self.time.dt;
            if (k - k.round()).abs() > 1e-9 * k.max(1.0) || k.round() < 1.0 {
                return Err(HarnessError::Config(format!("{what} must be a whole multiple of time.dt")));
            }
        }
        let steps = self.time.t_max / self.time.dt;
        if (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) {
            return Err(HarnessError::Config("time.t_max must be a whole multiple of time.dt".into()));
        }
        if self.pod.energy_tiers.iter().any(|&f| !(f > 0.0 && f <= 1.0)) {
            return Err(HarnessError::Config("pod.energy_tiers entries must lie in (0, 1]".into()));
        }
        if !self.pod.untruncated && self.pod.ranks.is_empty() && self.pod.energy_tiers.is_empty() {
            return Err(HarnessError::Config("pod needs energy_tiers, ranks or untruncated".into()));
        }
        if self.pod.ranks.contains(&0) {
            return Err(HarnessError::Config("pod.ranks entries must be positive".into()));
        }
        self.rom.strategies().map_err(|e| HarnessError::Config(e.to_string()))?;
        for s in &self.ecsw.strategies {
            LeftBasisStrategy::from_name(s, self.rom.recompute).map_err(|e| HarnessError::Config(e.to_string()))?;
        }
        if !(self.ecsw.epsilon > 0.0 && self.ecsw.epsilon < 1.0) {
            return Err(HarnessError::Config(format!("ecsw.epsilon must lie in (0, 1), got {}", self.ecsw.epsilon)));
        }
        if self.ecsw.training_stride == 0 {
            return Err(HarnessError::Config("ecsw.training_stride must be positive".into()));
        }
        for section in [&self.rom.newton, &self.rom.hdm_newton] {
            section.to_config().validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        }
        if self.qoi.probes.is_empty() {
            return Err(HarnessError::Config("qoi.probes must name at least one quantity".into()));
        }
        Ok(())
    }
}
