//! Independent per-mode oracles for linear drift `b(u) = λu`.
#![allow(dead_code)]

use std::f64::consts::PI;

use num_complex::Complex64;
use nvlab::lattice::Lattice;
use nvlab::noise::NoisePath;
use nvlab::spectral::OperatorKind;

/// `Γ̂(mΔt)` at radius `rho`, used by the drift convolution.
pub fn drift_weight(op: OperatorKind, rho: f64, m: usize, dt: f64) -> f64 {
    let t = m as f64 * dt;
    match op {
        OperatorKind::Heat { .. } => (-4.0 * PI * PI * rho * rho * t).exp(),
        OperatorKind::Wave { .. } => {
            if rho == 0.0 {
                t
            } else {
                (2.0 * PI * rho * t).sin() / (2.0 * PI * rho)
            }
        }
    }
}

/// Weight of the noise increment `m` steps back: RMS of `Γ̂` over the cell for
/// heat, midpoint value for wave.
pub fn noise_weight(op: OperatorKind, rho: f64, m: usize, dt: f64) -> f64 {
    match op {
        OperatorKind::Heat { .. } => {
            let a = 8.0 * PI * PI * rho * rho;
            let rms = if a == 0.0 { 1.0 } else { ((1.0 - (-a * dt).exp()) / (a * dt)).sqrt() };
            (-4.0 * PI * PI * rho * rho * (m - 1) as f64 * dt).exp() * rms
        }
        OperatorKind::Wave { .. } => {
            let t = (m as f64 - 0.5) * dt;
            if rho == 0.0 {
                t
            } else {
                (2.0 * PI * rho * t).sin() / (2.0 * PI * rho)
            }
        }
    }
}

/// Response `w_m` of one mode to a unit increment `m` steps back:
/// `w_m = a_m + λΔt Σ_{l<m} Γ̂((m−l)Δt) w_l`.
pub fn impulse_response(op: OperatorKind, rho: f64, lambda: f64, dt: f64, steps: usize) -> Vec<f64> {
    let mut w = vec![0.0; steps + 1];
    for m in 1..=steps {
        let mut acc = noise_weight(op, rho, m, dt);
        for l in 1..m {
            acc += lambda * dt * drift_weight(op, rho, m - l, dt) * w[l];
        }
        w[m] = acc;
    }
    w
}

pub fn radius(lat: &Lattice, k: usize) -> f64 {
    lat.frequency(k).iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `Var u(t_n, x) = Σ_k Δt μ_k Σ_{m ≤ n} w_m(k)²` for every level; modes of
/// equal radius share one response.
pub fn linear_variance(op: OperatorKind, lat: &Lattice, weights: &[f64], lambda: f64) -> Vec<f64> {
    let dt = lat.dt();
    let m = lat.steps();
    let mut cache: Vec<(f64, Vec<f64>)> = Vec::new();
    let mut out = vec![0.0; m + 1];
    for (k, &mu) in weights.iter().enumerate() {
        if mu == 0.0 {
            continue;
        }
        let rho = radius(lat, k);
        let w = match cache.iter().find(|(r, _)| (r - rho).abs() < 1e-12) {
            Some((_, w)) => w.clone(),
            None => {
                let w = impulse_response(op, rho, lambda, dt, m);
                cache.push((rho, w.clone()));
                w
            }
        };
        let mut acc = 0.0;
        for n in 1..=m {
            acc += w[n] * w[n];
            out[n] += dt * mu * acc;
        }
    }
    out
}

/// Field at level `n` from the increments by the per-mode convolution and a
/// direct inverse transform.
pub fn linear_field(op: OperatorKind, noise: &NoisePath, lambda: f64, n: usize) -> Vec<f64> {
    let lat = noise.lattice().clone();
    let dt = lat.dt();
    let sites = lat.sites();
    let mut hat = vec![Complex64::new(0.0, 0.0); sites];
    for (k, h) in hat.iter_mut().enumerate() {
        let w = impulse_response(op, radius(&lat, k), lambda, dt, n);
        *h = (0..n).map(|j| noise.increment(j)[k] * w[n - j]).sum();
    }
    (0..sites)
        .map(|s| {
            let x = lat.unflatten(s);
            let mut v = Complex64::new(0.0, 0.0);
            for (k, h) in hat.iter().enumerate() {
                let idx = lat.unflatten(k);
                let phase: f64 = idx
                    .iter()
                    .zip(&x)
                    .map(|(&i, &xi)| lat.signed_index(i) as f64 * xi as f64 / lat.points() as f64)
                    .sum();
                v += h * Complex64::from_polar(1.0, 2.0 * PI * phase);
            }
            v.re
        })
        .collect()
}
