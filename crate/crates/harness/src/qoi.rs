//! Quantities of interest and the relative-error metric.

use nalgebra::DVector;
use pmor::models::SpectralNSModel;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, HarnessResult};
use crate::flow::FlowModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum QoiProbe {
    /// One state component at the grid point nearest `location`.
    PointValue {
        location: Vec<f64>,
        #[serde(default)]
        component: usize,
    },
    VolumeKineticEnergy,
    EnstrophyDissipation,
    /// Domain average of `u^exponent` (Burgers) or `|v|^exponent` (flows).
    IntegralCustom { exponent: u32 },
}

impl QoiProbe {
    pub fn label(&self) -> String {
        match self {
            QoiProbe::PointValue { location, component } => {
                let loc: Vec<String> = location.iter().map(|x| format!("{x}")).collect();
                format!("point_{}_c{component}", loc.join("_"))
            }
            QoiProbe::VolumeKineticEnergy => "kinetic_energy".into(),
            QoiProbe::EnstrophyDissipation => "enstrophy_dissipation".into(),
            QoiProbe::IntegralCustom { exponent } => format!("integral_p{exponent}"),
        }
    }

    /// Resolves the probe against a model, checking that it is supported.
    pub fn bind(&self, model: &FlowModel) -> HarnessResult<BoundQoi> {
        match (self, model) {
            (QoiProbe::PointValue { location, component }, FlowModel::Burgers(m)) => {
                if location.len() != 1 || *component != 0 {
                    return Err(HarnessError::Config("Burgers point probes take one coordinate and component 0".into()));
                }
                let x = location[0];
                if !(0.0..m.length()).contains(&x) {
                    return Err(HarnessError::Config(format!("probe location {x} outside [0, {})", m.length())));
                }
                let cell = ((x / m.dx()).floor() as usize).min(m.cell_centers().len() - 1);
                Ok(BoundQoi::Index(cell))
            }
            (QoiProbe::PointValue { location, component }, FlowModel::Spectral(m)) => {
                let d = m.spatial_dim();
                if location.len() != d || *component >= d {
                    return Err(HarnessError::Config(format!(
                        "spectral point probes take {d} coordinates and a component below {d}"
                    )));
                }
                let period = 2.0 * std::f64::consts::PI * m.length_scale();
                let h = period / m.resolution() as f64;
                let mut idx = [0usize; 3];
                for (k, &x) in location.iter().enumerate() {
                    if !(0.0..period).contains(&x) {
                        return Err(HarnessError::Config(format!("probe coordinate {x} outside [0, {period})")));
                    }
                    idx[k] = ((x / h).round() as usize) % m.resolution();
                }
                let point = m.point_index(idx[0], idx[1], idx[2]);
                Ok(BoundQoi::Index(component * m.points() + point))
            }
            (QoiProbe::VolumeKineticEnergy, _) => Ok(BoundQoi::KineticEnergy(model.spectral()?.clone())),
            (QoiProbe::EnstrophyDissipation, _) => Ok(BoundQoi::Enstrophy(model.spectral()?.clone())),
            (QoiProbe::IntegralCustom { exponent }, FlowModel::Burgers(_)) => {
                Ok(BoundQoi::Power { exponent: *exponent, components: 1 })
            }
            (QoiProbe::IntegralCustom { exponent }, FlowModel::Spectral(m)) => {
                Ok(BoundQoi::Power { exponent: *exponent, components: m.spatial_dim() })
            }
        }
    }
}

/// A probe ready to be evaluated on states.
#[derive(Debug, Clone)]
pub enum BoundQoi {
    Index(usize),
    KineticEnergy(SpectralNSModel),
    Enstrophy(SpectralNSModel),
    Power { exponent: u32, components: usize },
}

impl BoundQoi {
    pub fn evaluate(&self, u: &DVector<f64>) -> f64 {
        match self {
            BoundQoi::Index(i) => u[*i],
            BoundQoi::KineticEnergy(m) => compute_energy(m, u),
            BoundQoi::Enstrophy(m) => compute_enstrophy_dissipation(m, u),
            BoundQoi::Power { exponent, components } => {
                let points = u.len() / components;
                let sum: f64 = if *components == 1 {
                    u.iter().map(|v| v.powi(*exponent as i32)).sum()
                } else {
                    (0..points)
                        .map(|p| {
                            let s: f64 = (0..*components).map(|c| u[c * points + p].powi(2)).sum();
                            s.sqrt().powi(*exponent as i32)
                        })
                        .sum()
                };
                sum / points as f64
            }
        }
    }
}

/// Volume-averaged kinetic energy by grid quadrature.
pub fn compute_energy(model: &SpectralNSModel, u: &DVector<f64>) -> f64 {
    model.kinetic_energy(u)
}

/// Enstrophy-based dissipation rate `2ν ⟨½|ω|²⟩`.
pub fn compute_enstrophy_dissipation(model: &SpectralNSModel, u: &DVector<f64>) -> f64 {
    model.enstrophy_dissipation(u)
}

/// `100 · ‖Q − Q̃‖₂ / ‖Q‖₂`, in percent.
pub fn relative_error(q: &[f64], q_approx: &[f64]) -> HarnessResult<f64> {
    if q.len() != q_approx.len() {
        return Err(HarnessError::Metric(format!("series lengths differ ({} vs {})", q.len(), q_approx.len())));
    }
    let den = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if den == 0.0 || !den.is_finite() {
        return Err(HarnessError::Metric("reference series is identically zero or not finite".into()));
    }
    let num = q.iter().zip(q_approx).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    Ok(100.0 * num / den)
}
