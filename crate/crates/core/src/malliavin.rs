//! Malliavin derivative of `u(t*, x_ref)` and the `H` geometry.
//!
//! A kernel is stored through its sensitivities `κ_j(ξ_k) = ∂F/∂ΔŴ_j(ξ_k)`,
//! which are the Fourier coefficients of `v ↦ D_{t_j,v}F`. They are obtained
//! with one backward (adjoint) sweep of the linearized Volterra recursion
//! instead of propagating one slice per past time.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::discrete::LatticeModel;
use crate::green::Gain;
use crate::lattice::{Lattice, LatticeFft, LatticeField};
use crate::noise::{mehler_shift_into, NoiseError};
use crate::rng::StreamKey;
use crate::solver::{DriftSpec, SolveError, SolutionPath};
use crate::spectral::SpectralModel;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MalliavinError {
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error("non-finite derivative at step {step}")]
    NonFinite { step: usize },
    #[error("kernels or geometry live on different lattices")]
    GeometryMismatch,
    #[error("target step {target} outside 1..={steps}")]
    BadTarget { target: usize, steps: usize },
    #[error("need {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("{0}")]
    Shape(String),
}

/// Spectral weights `μ_k` of the lattice modes; defines `⟨·,·⟩_H`.
#[derive(Debug, Clone, PartialEq)]
pub struct HGeometry {
    model: SpectralModel,
    lattice: Lattice,
    weights: Vec<f64>,
}

impl HGeometry {
    pub fn new(model: SpectralModel, lattice: Lattice, weights: Vec<f64>) -> Self {
        HGeometry { model, lattice, weights }
    }

    pub fn model(&self) -> &SpectralModel {
        &self.model
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// `D_{r,v}u(t*, x_ref)` in frequency representation, one slice per past
/// time index `r < t*`.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeKernel {
    lattice: Lattice,
    target: usize,
    x_ref: usize,
    slices: Vec<Complex64>,
}

impl DerivativeKernel {
    pub fn zeros(lattice: &Lattice, target: usize) -> Self {
        DerivativeKernel {
            lattice: lattice.clone(),
            target,
            x_ref: 0,
            slices: vec![Complex64::new(0.0, 0.0); target * lattice.sites()],
        }
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn target(&self) -> usize {
        self.target
    }

    pub fn x_ref(&self) -> usize {
        self.x_ref
    }

    /// Frequency slice at time index `j`; zero for `j ≥ t*`.
    pub fn slice(&self, j: usize) -> Option<&[Complex64]> {
        let s = self.lattice.sites();
        (j < self.target).then(|| &self.slices[j * s..(j + 1) * s])
    }

    fn slice_mut(&mut self, j: usize) -> &mut [Complex64] {
        let s = self.lattice.sites();
        &mut self.slices[j * s..(j + 1) * s]
    }

    /// `v ↦ D_{t_j,v}u` on the lattice sites.
    pub fn spatial_slice(&self, j: usize) -> Vec<f64> {
        let sites = self.lattice.sites();
        let Some(slice) = self.slice(j) else {
            return vec![0.0; sites];
        };
        let mut buf = slice.to_vec();
        LatticeFft::new(&self.lattice).forward(&mut buf);
        let cell = self.lattice.frequency_cell();
        buf.iter().map(|v| v.re * cell).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.slices.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    /// `self − other` on common slices.
    pub fn minus(&self, other: &DerivativeKernel) -> Result<DerivativeKernel, MalliavinError> {
        if self.lattice != other.lattice || self.target != other.target {
            return Err(MalliavinError::GeometryMismatch);
        }
        let mut out = self.clone();
        for (a, b) in out.slices.iter_mut().zip(&other.slices) {
            *a -= b;
        }
        Ok(out)
    }

    pub fn scaled(&self, c: f64) -> DerivativeKernel {
        let mut out = self.clone();
        out.slices.iter_mut().for_each(|v| *v *= c);
        out
    }
}

/// `Δt Σ_r Σ_k μ_k Re(κ₁ conj κ₂)`.
pub fn h_inner(h1: &DerivativeKernel, h2: &DerivativeKernel, geom: &HGeometry) -> Result<f64, MalliavinError> {
    if h1.lattice != geom.lattice || h2.lattice != geom.lattice {
        return Err(MalliavinError::GeometryMismatch);
    }
    let common = h1.target.min(h2.target);
    let mut total = 0.0;
    for j in 0..common {
        let (a, b) = (h1.slice(j).unwrap(), h2.slice(j).unwrap());
        for ((x, y), &mu) in a.iter().zip(b).zip(&geom.weights) {
            total += mu * (x.re * y.re + x.im * y.im);
        }
    }
    Ok(total * geom.lattice.dt())
}

pub fn h_norm(h: &DerivativeKernel, geom: &HGeometry) -> Result<f64, MalliavinError> {
    Ok(h_inner(h, h, geom)?.max(0.0).sqrt())
}

impl LatticeModel {
    fn check_target(&self, target: usize) -> Result<(), MalliavinError> {
        let steps = self.lattice().steps();
        if target == 0 || target > steps {
            return Err(MalliavinError::BadTarget { target, steps });
        }
        Ok(())
    }

    /// Kernel `Γ(t* − r, x_ref − v)` of `X(t*, x_ref)`.
    pub fn free_kernel(&self, target: usize) -> Result<DerivativeKernel, MalliavinError> {
        self.check_target(target)?;
        let mut out = DerivativeKernel::zeros(self.lattice(), target);
        let green = self.green();
        for j in 0..target {
            for (k, v) in out.slice_mut(j).iter_mut().enumerate() {
                *v = Complex64::new(green.weight(Gain::Noise, target - j, k), 0.0);
            }
        }
        Ok(out)
    }

    /// Derivative of `u(t_target, x_ref = 0)` along the trajectory `u`.
    pub fn derivative_of_field(
        &self,
        u: &LatticeField,
        drift: &DriftSpec,
        target: usize,
        fft: &mut LatticeFft,
    ) -> Result<DerivativeKernel, MalliavinError> {
        self.check_target(target)?;
        if u.lattice() != self.lattice() {
            return Err(MalliavinError::GeometryMismatch);
        }
        let lat = self.lattice();
        let sites = lat.sites();
        let dt = lat.dt();
        let norm = 1.0 / sites as f64;
        let green = self.green();
        let sensitive = !drift.is_zero() && !matches!(drift, DriftSpec::Constant { .. });
        let mut out = DerivativeKernel::zeros(lat, target);
        let mut noise_state = green.state();
        let mut drift_state = green.state();
        // Fourier transform of the point mass at x_ref = 0.
        let mut lam_hat = vec![Complex64::new(1.0, 0.0); sites];
        let mut conj = vec![Complex64::new(0.0, 0.0); sites];
        let mut buf = vec![Complex64::new(0.0, 0.0); sites];
        for n in (0..target).rev() {
            for (c, l) in conj.iter_mut().zip(&lam_hat) {
                *c = l.conj();
            }
            green.advance(&mut noise_state, &conj, Gain::Noise);
            out.slice_mut(n).copy_from_slice(noise_state.output());
            if !sensitive {
                lam_hat.fill(Complex64::new(0.0, 0.0));
                continue;
            }
            green.advance(&mut drift_state, &lam_hat, Gain::Drift);
            buf.copy_from_slice(drift_state.output());
            fft.inverse(&mut buf);
            for (b, &un) in buf.iter_mut().zip(u.level(n)) {
                *b = Complex64::new(dt * drift.b_prime(un) * b.re * norm, 0.0);
            }
            fft.forward(&mut buf);
            if buf.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
                return Err(MalliavinError::NonFinite { step: n });
            }
            lam_hat.copy_from_slice(&buf);
        }
        Ok(out)
    }
}

/// [`LatticeModel::derivative_of_field`] for a solved path.
pub fn propagate_derivative(
    ctx: &LatticeModel,
    u: &SolutionPath,
    drift: &DriftSpec,
    target: usize,
) -> Result<DerivativeKernel, MalliavinError> {
    let mut fft = LatticeFft::new(ctx.lattice());
    ctx.derivative_of_field(&u.field, drift, target, &mut fft)
}

/// `‖Du(t_r, x_ref)‖_H` for each time index in `steps`.
pub fn derivative_norms(
    ctx: &LatticeModel,
    u: &LatticeField,
    drift: &DriftSpec,
    steps: &[usize],
    fft: &mut LatticeFft,
) -> Result<Vec<f64>, MalliavinError> {
    steps
        .iter()
        .map(|&r| h_norm(&ctx.derivative_of_field(u, drift, r, fft)?, ctx.geometry()))
        .collect()
}

/// Replicate-averaged `‖D̃u(t_target)‖_H` on `e^{-θ}W + √(1-e^{-2θ})W′` for
/// each `θ`, with `W′` drawn from the prime streams of `key`.
pub fn shifted_norms(
    ctx: &LatticeModel,
    key: StreamKey,
    drift: &DriftSpec,
    target: usize,
    thetas: &[f64],
    replicates: usize,
) -> Result<Vec<f64>, MalliavinError> {
    let mut fft = LatticeFft::new(ctx.lattice());
    let w = ctx.sample_noise(key);
    let mut shifted = w.clone();
    let diag = StreamKey::new(key.seed, key.path, crate::rng::DIAGNOSTIC_STREAM);
    thetas
        .iter()
        .enumerate()
        .map(|(q, &theta)| {
            let mut acc = 0.0;
            for r in 0..replicates.max(1) {
                let w_prime = ctx.sample_noise(diag.prime(q, r));
                mehler_shift_into(&mut shifted, &w, &w_prime, theta)?;
                let u = ctx.solve_mild(&ctx.build_x(&shifted), drift)?;
                acc += h_norm(&ctx.derivative_of_field(&u.field, drift, target, &mut fft)?, ctx.geometry())?;
            }
            Ok(acc / replicates.max(1) as f64)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub excluded: bool,
    /// Conditional mean of the norm for each column of the input.
    pub mean: Vec<f64>,
    pub ratio: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormDiagnostic {
    pub phi_t: f64,
    pub bins: Vec<NormBin>,
    /// Unconditional means per column.
    pub overall_mean: Vec<f64>,
    /// `sup` over retained bins and columns of `mean / √Φ(t)`.
    pub ratio_sup: f64,
}

/// Minimum number of samples for a bin to enter the supremum.
pub const MIN_BIN_COUNT: usize = 30;

/// Binned `Ê[‖Du(r)‖_H | F ∈ bin] / √Φ(t)` over equal-probability bins of `F`.
/// `norms[p][c]` is the norm for path `p` and column `c` (a time `r` or a θ).
pub fn conditional_norm_diag(norms: &[Vec<f64>], f: &[f64], phi_t: f64, bins: usize) -> Result<NormDiagnostic, MalliavinError> {
    if norms.len() != f.len() {
        return Err(MalliavinError::Shape(format!("{} norm rows for {} samples", norms.len(), f.len())));
    }
    let bins = bins.max(1);
    if f.len() < bins {
        return Err(MalliavinError::TooFewSamples { needed: bins, got: f.len() });
    }
    let cols = norms.first().map_or(0, Vec::len);
    let mut order: Vec<usize> = (0..f.len()).collect();
    order.sort_by(|&a, &b| f[a].total_cmp(&f[b]));
    let scale = phi_t.sqrt();
    let mut out = Vec::with_capacity(bins);
    let mut ratio_sup = 0.0f64;
    for b in 0..bins {
        let start = b * f.len() / bins;
        let end = (b + 1) * f.len() / bins;
        let members = &order[start..end];
        let count = members.len();
        let mean: Vec<f64> = (0..cols)
            .map(|c| members.iter().map(|&i| norms[i][c]).sum::<f64>() / count.max(1) as f64)
            .collect();
        let ratio: Vec<f64> = mean.iter().map(|m| m / scale).collect();
        let excluded = count < MIN_BIN_COUNT;
        if !excluded {
            ratio_sup = ratio.iter().fold(ratio_sup, |a, &r| a.max(r));
        }
        out.push(NormBin {
            lo: f[members[0]],
            hi: f[members[count - 1]],
            count,
            excluded,
            mean,
            ratio,
        });
    }
    let overall_mean = (0..cols)
        .map(|c| norms.iter().map(|r| r[c]).sum::<f64>() / norms.len() as f64)
        .collect();
    Ok(NormDiagnostic {
        phi_t,
        bins: out,
        overall_mean,
        ratio_sup,
    })
}
