//! Per-mode causal convolution with the Green multiplier in `O(1)` per step.
//!
//! Every lag kernel used on the lattice has the form `K(i) = e₁ᵀ R^{i-1} g`
//! for a per-mode transition `R` and gain `g`, so the causal sum
//! `G_n = Σ_{j<n} K(n-j) f_j` obeys `S_n = R S_{n-1} + g f_{n-1}`,
//! `G_n = e₁ᵀ S_n`. The reverse sum `Σ_{m>n} K(m-n) f_m` runs the same
//! recursion backwards.
//!
//! Two gains are kept per mode:
//!
//! * drift: `K(i) = 𝓕Γ(iΔt)`, the left-endpoint rule;
//! * noise: heat uses the root-mean-square of `𝓕Γ` over the time cell,
//!   wave uses the cell midpoint.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::lattice::Lattice;
use crate::spectral::OperatorKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gain {
    Drift,
    Noise,
}

#[derive(Debug, Clone)]
enum Transition {
    /// Scalar decay, `R = e^{-4π²Δtρ²}`.
    Decay { ratio: Vec<f64>, drift: Vec<f64>, noise: Vec<f64> },
    /// Harmonic oscillator at `ω = 2πρ` advanced by `Δt`.
    Oscillator {
        cos: Vec<f64>,
        sin_over_omega: Vec<f64>,
        omega_sin: Vec<f64>,
        drift: Vec<[f64; 2]>,
        noise: Vec<[f64; 2]>,
    },
}

/// Transition tables for every lattice mode.
#[derive(Debug, Clone)]
pub struct GreenRecursion {
    transition: Transition,
    dt: f64,
    radius: Vec<f64>,
    op: OperatorKind,
}

/// Recursion state for all modes; the second component is used by the wave
/// oscillator only.
#[derive(Debug, Clone)]
pub struct LagState {
    first: Vec<Complex64>,
    second: Vec<Complex64>,
}

impl LagState {
    pub fn output(&self) -> &[Complex64] {
        &self.first
    }

    pub fn clear(&mut self) {
        self.first.fill(Complex64::new(0.0, 0.0));
        self.second.fill(Complex64::new(0.0, 0.0));
    }
}

impl GreenRecursion {
    pub fn new(op: OperatorKind, lattice: &Lattice, radius: &[f64]) -> Self {
        let dt = lattice.dt();
        let transition = match op {
            OperatorKind::Heat { .. } => {
                let mut ratio = Vec::with_capacity(radius.len());
                let mut noise = Vec::with_capacity(radius.len());
                for &rho in radius {
                    let a = 4.0 * PI * PI * rho * rho;
                    let e = (-a * dt).exp();
                    ratio.push(e);
                    noise.push(if a * dt < 1e-12 {
                        1.0
                    } else {
                        // (1 - e^{-2aΔt}) / (2aΔt), computed without cancellation.
                        (-(-2.0 * a * dt).exp_m1() / (2.0 * a * dt)).sqrt()
                    });
                }
                Transition::Decay {
                    drift: ratio.clone(),
                    ratio,
                    noise,
                }
            }
            OperatorKind::Wave { .. } => {
                let n = radius.len();
                let (mut cos, mut sin_over_omega, mut omega_sin) =
                    (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
                let (mut drift, mut noise) = (Vec::with_capacity(n), Vec::with_capacity(n));
                for &rho in radius {
                    let omega = 2.0 * PI * rho;
                    let sinc = |h: f64| if omega * h < 1e-8 { h } else { (omega * h).sin() / omega };
                    cos.push((omega * dt).cos());
                    sin_over_omega.push(sinc(dt));
                    omega_sin.push(omega * (omega * dt).sin());
                    drift.push([sinc(dt), (omega * dt).cos()]);
                    noise.push([sinc(0.5 * dt), (0.5 * omega * dt).cos()]);
                }
                Transition::Oscillator {
                    cos,
                    sin_over_omega,
                    omega_sin,
                    drift,
                    noise,
                }
            }
        };
        GreenRecursion {
            transition,
            dt,
            radius: radius.to_vec(),
            op,
        }
    }

    pub fn modes(&self) -> usize {
        self.radius.len()
    }

    pub fn state(&self) -> LagState {
        let zero = Complex64::new(0.0, 0.0);
        let second = match self.transition {
            Transition::Decay { .. } => Vec::new(),
            Transition::Oscillator { .. } => vec![zero; self.modes()],
        };
        LagState {
            first: vec![zero; self.modes()],
            second,
        }
    }

    /// `S ← R S + g f`.
    pub fn advance(&self, state: &mut LagState, input: &[Complex64], gain: Gain) {
        match &self.transition {
            Transition::Decay { ratio, drift, noise } => {
                let g = match gain {
                    Gain::Drift => drift,
                    Gain::Noise => noise,
                };
                for (((s, &f), &r), &g) in state.first.iter_mut().zip(input).zip(ratio).zip(g) {
                    *s = *s * r + f * g;
                }
            }
            Transition::Oscillator {
                cos,
                sin_over_omega,
                omega_sin,
                drift,
                noise,
            } => {
                let g = match gain {
                    Gain::Drift => drift,
                    Gain::Noise => noise,
                };
                for k in 0..input.len() {
                    let (a, b) = (state.first[k], state.second[k]);
                    state.first[k] = a * cos[k] + b * sin_over_omega[k] + input[k] * g[k][0];
                    state.second[k] = b * cos[k] - a * omega_sin[k] + input[k] * g[k][1];
                }
            }
        }
    }

    /// `K(lag)` at mode `k` for the given gain, evaluated directly.
    pub fn weight(&self, gain: Gain, lag: usize, k: usize) -> f64 {
        if lag == 0 {
            return 0.0;
        }
        let rho = self.radius[k];
        let i = lag as f64;
        match (self.op, gain) {
            (_, Gain::Drift) => self.op.fourier_radial(i * self.dt, rho),
            (OperatorKind::Heat { .. }, Gain::Noise) => {
                let Transition::Decay { ratio, noise, .. } = &self.transition else {
                    unreachable!()
                };
                ratio[k].powi(lag as i32 - 1) * noise[k]
            }
            (OperatorKind::Wave { .. }, Gain::Noise) => self.op.fourier_radial((i - 0.5) * self.dt, rho),
        }
    }
}
