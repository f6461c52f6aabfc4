//! Spectral synthesis of the driving noise and of the stochastic convolution.

use num_complex::Complex64;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::discrete::{DiscretizationError, LatticeModel};
use crate::green::Gain;
use crate::lattice::{Lattice, LatticeFft, LatticeField};
use crate::rng::{StreamKey, BASE_STREAM};
use crate::spectral::SpectralModel;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NoiseError {
    #[error(transparent)]
    Discretization(#[from] DiscretizationError),
    #[error("noise paths live on different lattices")]
    LatticeMismatch,
    #[error("cannot coarsen {0} time steps into pairs")]
    OddSteps(usize),
    #[error("Mehler parameter must be nonnegative, got {0}")]
    NegativeTheta(f64),
}

/// Frequency-space increments `ΔŴ_j(ξ_k)`, `j = 0..M`, of one noise path.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePath {
    key: StreamKey,
    lattice: Lattice,
    increments: Vec<Complex64>,
}

impl NoisePath {
    pub fn key(&self) -> StreamKey {
        self.key
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn steps(&self) -> usize {
        self.lattice.steps()
    }

    pub fn increment(&self, j: usize) -> &[Complex64] {
        let s = self.lattice.sites();
        &self.increments[j * s..(j + 1) * s]
    }

    pub fn increment_mut(&mut self, j: usize) -> &mut [Complex64] {
        let s = self.lattice.sites();
        &mut self.increments[j * s..(j + 1) * s]
    }

    /// Largest violation of `ΔŴ(-ξ) = conj ΔŴ(ξ)` over all steps.
    pub fn hermitian_defect(&self, partner: &[usize]) -> f64 {
        (0..self.steps())
            .flat_map(|j| {
                let inc = self.increment(j);
                partner.iter().enumerate().map(move |(k, &p)| (inc[k] - inc[p].conj()).norm())
            })
            .fold(0.0, f64::max)
    }

    /// Spatial increment `ΔW_j(x)` before truncation to its real part.
    pub fn spatial_increment(&self, j: usize, fft: &mut LatticeFft) -> Vec<Complex64> {
        let mut buf = self.increment(j).to_vec();
        fft.inverse(&mut buf);
        buf
    }

    /// Sums consecutive pairs of increments, giving the same path on a lattice
    /// with half as many time steps.
    pub fn coarsen(&self) -> Result<NoisePath, NoiseError> {
        let m = self.steps();
        if !m.is_multiple_of(2) {
            return Err(NoiseError::OddSteps(m));
        }
        let lat = &self.lattice;
        let coarse = Lattice::new(
            lat.dim(),
            lat.side(),
            lat.points(),
            lat.horizon(),
            m / 2,
            lat.spectral_cutoff(),
        )
        .map_err(DiscretizationError::from)?;
        let s = lat.sites();
        let mut increments = Vec::with_capacity(m / 2 * s);
        for j in 0..m / 2 {
            let (a, b) = (self.increment(2 * j), self.increment(2 * j + 1));
            increments.extend(a.iter().zip(b).map(|(x, y)| x + y));
        }
        Ok(NoisePath {
            key: self.key,
            lattice: coarse,
            increments,
        })
    }
}

impl LatticeModel {
    /// Centered Gaussian increments with `E|ΔŴ_j(ξ_k)|² = Δt·μ_k`, Hermitian in
    /// `ξ`, step `j` drawn from its own substream of `key`.
    pub fn sample_noise(&self, key: StreamKey) -> NoisePath {
        let lat = self.lattice();
        let s = lat.sites();
        let m = lat.steps();
        let dt = lat.dt();
        let partner = &self.modes().partner;
        let scale: Vec<f64> = self.weights().iter().map(|mu| (dt * mu).sqrt()).collect();
        let mut increments = vec![Complex64::new(0.0, 0.0); m * s];
        for j in 0..m {
            let mut rng = key.rng(j as u64);
            let inc = &mut increments[j * s..(j + 1) * s];
            for k in 0..s {
                let p = partner[k];
                if k < p {
                    let a: f64 = StandardNormal.sample(&mut rng);
                    let b: f64 = StandardNormal.sample(&mut rng);
                    let z = Complex64::new(a, b) * (scale[k] * std::f64::consts::FRAC_1_SQRT_2);
                    inc[k] = z;
                    inc[p] = z.conj();
                } else if k == p {
                    let a: f64 = StandardNormal.sample(&mut rng);
                    inc[k] = Complex64::new(a * scale[k], 0.0);
                }
            }
        }
        NoisePath {
            key,
            lattice: lat.clone(),
            increments,
        }
    }

    /// `X̂(t_n) = Σ_{j<n} a_{n-j} ΔŴ_j`, returned in space with `X(0) = 0`.
    pub fn build_x(&self, noise: &NoisePath) -> LatticeField {
        let lat = self.lattice();
        let green = self.green();
        let mut fft = LatticeFft::new(lat);
        let mut field = LatticeField::zeros(lat, lat.steps() + 1);
        let mut state = green.state();
        let mut buf = vec![Complex64::new(0.0, 0.0); lat.sites()];
        for n in 1..=lat.steps() {
            green.advance(&mut state, noise.increment(n - 1), Gain::Noise);
            buf.copy_from_slice(state.output());
            fft.inverse(&mut buf);
            for (out, v) in field.level_mut(n).iter_mut().zip(&buf) {
                *out = v.re;
            }
        }
        field
    }
}

/// Noise path `0` of `seed` for a model placed on `lattice`.
pub fn sample_noise(lattice: &Lattice, model: &SpectralModel, seed: u64) -> Result<NoisePath, NoiseError> {
    let ctx = LatticeModel::new(model.clone(), lattice.clone())?;
    Ok(ctx.sample_noise(StreamKey::new(seed, 0, BASE_STREAM)))
}

/// `e^{-θ} w + √(1 - e^{-2θ}) w′`, increment by increment.
pub fn mehler_shift(w: &NoisePath, w_prime: &NoisePath, theta: f64) -> Result<NoisePath, NoiseError> {
    let mut out = w.clone();
    mehler_shift_into(&mut out, w, w_prime, theta)?;
    Ok(out)
}

/// [`mehler_shift`] writing into an existing buffer.
pub fn mehler_shift_into(out: &mut NoisePath, w: &NoisePath, w_prime: &NoisePath, theta: f64) -> Result<(), NoiseError> {
    if w.lattice != w_prime.lattice || out.lattice != w.lattice {
        return Err(NoiseError::LatticeMismatch);
    }
    if !(theta >= 0.0) {
        return Err(NoiseError::NegativeTheta(theta));
    }
    let a = (-theta).exp();
    let b = (-(-2.0 * theta).exp_m1()).sqrt();
    for ((o, x), y) in out.increments.iter_mut().zip(&w.increments).zip(&w_prime.increments) {
        *o = x * a + y * b;
    }
    out.key = w.key;
    Ok(())
}
