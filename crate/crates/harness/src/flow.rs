//! The concrete models an experiment can run.

use nalgebra::DVector;
use pmor::models::{BurgersModel, SpectralConfig, SpectralNSModel, UpwindOrder};
use pmor::SemiDiscreteModel;

use crate::config::{ModelConfig, ModelKind};
use crate::error::{HarnessError, HarnessResult};

#[derive(Debug, Clone)]
pub enum FlowModel {
    Burgers(BurgersModel),
    Spectral(SpectralNSModel),
}

impl FlowModel {
    pub fn from_config(cfg: &ModelConfig) -> HarnessResult<Self> {
        match cfg.kind {
            ModelKind::Burgers => {
                let order = UpwindOrder::from_int(cfg.upwind_order)?;
                Ok(FlowModel::Burgers(BurgersModel::new(cfg.resolution, cfg.length, cfg.viscosity, order)?))
            }
            ModelKind::Tgv2d | ModelKind::Tgv3d => {
                let dim = if cfg.kind == ModelKind::Tgv2d { 2 } else { 3 };
                Ok(FlowModel::Spectral(SpectralNSModel::new(SpectralConfig {
                    dim,
                    resolution: cfg.resolution,
                    viscosity: cfg.viscosity,
                    length_scale: cfg.length,
                    velocity_scale: cfg.velocity_scale,
                })?))
            }
        }
    }

    pub fn as_model(&self) -> &dyn SemiDiscreteModel {
        match self {
            FlowModel::Burgers(m) => m,
            FlowModel::Spectral(m) => m,
        }
    }

    /// Initial state described by the model section.
    pub fn initial_condition(&self, cfg: &ModelConfig) -> HarnessResult<DVector<f64>> {
        match self {
            FlowModel::Burgers(m) => {
                let (l, a, b) = (m.length(), cfg.amplitude, cfg.mean);
                Ok(m.sample(|x| b + a * (2.0 * std::f64::consts::PI * x / l).sin()))
            }
            FlowModel::Spectral(m) => {
                let u = m.tgv_initial_condition();
                if cfg.perturbation_modes.is_empty() {
                    return Ok(u);
                }
                let modes: Vec<(i32, i32, f64, f64)> =
                    cfg.perturbation_modes.iter().map(|p| (p.kx, p.ky, p.amplitude, p.phase)).collect();
                Ok(m.add_streamfunction_modes(&u, &modes)?)
            }
        }
    }

    pub fn spectral(&self) -> HarnessResult<&SpectralNSModel> {
        match self {
            FlowModel::Spectral(m) => Ok(m),
            FlowModel::Burgers(_) => Err(HarnessError::Config("this quantity needs a spectral flow model".into())),
        }
    }
}
