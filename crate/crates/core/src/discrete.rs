//! A spectral model placed on a lattice: mode weights, Green recursion and
//! the discrete counterparts of `Φ`.

use std::f64::consts::PI;

use thiserror::Error;

use crate::green::{Gain, GreenRecursion};
use crate::lattice::{Lattice, LatticeError, ModeTable};
use crate::malliavin::HGeometry;
use crate::spectral::{ball_volume, check_wellposed, Correlation, SpectralModel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiscretizationError {
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error("lattice dimension {lattice} differs from model dimension {model}")]
    DimensionMismatch { lattice: usize, model: usize },
    #[error("lattice horizon {lattice} differs from model horizon {model}")]
    HorizonMismatch { lattice: f64, model: f64 },
    #[error("model is not well-posed: the noise term has no finite variance")]
    IllPosed,
}

/// Everything a path computation needs; immutable and shared across workers.
#[derive(Debug, Clone)]
pub struct LatticeModel {
    lattice: Lattice,
    model: SpectralModel,
    modes: ModeTable,
    geometry: HGeometry,
    green: GreenRecursion,
}

/// `μ` per lattice mode: density times the cell volume `L^{-d}`. The Riesz
/// singularity at the origin is replaced by the `μ`-mass of the ball with the
/// volume of one cell.
pub fn mode_weights(model: &SpectralModel, lattice: &Lattice, radius: &[f64]) -> Vec<f64> {
    let cell = lattice.frequency_cell();
    let d = lattice.dim();
    radius
        .iter()
        .map(|&rho| match model.correlation {
            Correlation::Riesz { .. } if rho == 0.0 => {
                let r0 = (cell / ball_volume(d)).powf(1.0 / d as f64);
                model.ball_mass(r0)
            }
            _ => model.density(rho) * cell,
        })
        .collect()
}

impl LatticeModel {
    pub fn new(model: SpectralModel, lattice: Lattice) -> Result<Self, DiscretizationError> {
        if lattice.dim() != model.dim() {
            return Err(DiscretizationError::DimensionMismatch {
                lattice: lattice.dim(),
                model: model.dim(),
            });
        }
        if (lattice.horizon() - model.horizon).abs() > 1e-12 * model.horizon {
            return Err(DiscretizationError::HorizonMismatch {
                lattice: lattice.horizon(),
                model: model.horizon,
            });
        }
        if !check_wellposed(&model).satisfied {
            return Err(DiscretizationError::IllPosed);
        }
        let modes = lattice.modes();
        let weights = mode_weights(&model, &lattice, &modes.radius);
        let geometry = HGeometry::new(model.clone(), lattice.clone(), weights);
        let green = GreenRecursion::new(model.operator, &lattice, &modes.radius);
        Ok(LatticeModel {
            lattice,
            model,
            modes,
            geometry,
            green,
        })
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn model(&self) -> &SpectralModel {
        &self.model
    }

    pub fn modes(&self) -> &ModeTable {
        &self.modes
    }

    pub fn geometry(&self) -> &HGeometry {
        &self.geometry
    }

    pub fn weights(&self) -> &[f64] {
        self.geometry.weights()
    }

    pub fn green(&self) -> &GreenRecursion {
        &self.green
    }

    /// Variance of the lattice stochastic convolution at every time level,
    /// `Δt Σ_k μ_k Σ_{i ≤ n} a_i(k)²`.
    pub fn phi_lattice(&self) -> Vec<f64> {
        let m = self.lattice.steps();
        let dt = self.lattice.dt();
        let mut out = vec![0.0; m + 1];
        for (k, &mu) in self.weights().iter().enumerate() {
            if mu == 0.0 {
                continue;
            }
            let mut acc = 0.0;
            for (n, slot) in out.iter_mut().enumerate().skip(1) {
                let a = self.green.weight(Gain::Noise, n, k);
                acc += a * a;
                *slot += dt * mu * acc;
            }
        }
        out
    }

    /// Spatial covariance of one noise increment at lattice lag `h` (flat
    /// site index), divided by `Δt`.
    pub fn increment_covariance(&self, h: usize) -> f64 {
        let x: Vec<f64> = self
            .lattice
            .unflatten(h)
            .iter()
            .map(|&i| i as f64 * self.lattice.spacing())
            .collect();
        self.weights()
            .iter()
            .enumerate()
            .map(|(k, &mu)| {
                let xi = self.lattice.frequency(k);
                let phase: f64 = xi.iter().zip(&x).map(|(a, b)| a * b).sum();
                mu * (2.0 * PI * phase).cos()
            })
            .sum()
    }
}
