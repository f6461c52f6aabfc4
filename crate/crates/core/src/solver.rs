//! Explicit left-endpoint solver for the mild equation
//! `u(t,x) = X(t,x) + ∫_0^t ∫ b(u(s,x-y)) Γ(t-s,dy) ds`.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::discrete::LatticeModel;
use crate::green::Gain;
use crate::lattice::{LatticeFft, LatticeField};
use crate::rng::{StreamKey, BASE_STREAM};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("non-finite solution at step {step} (max |u| before blow-up {max_abs})")]
    NonFinite { step: usize, max_abs: f64 },
    #[error("field lattice does not match the model lattice")]
    LatticeMismatch,
    #[error("ensemble needs at least 2 paths, got {0}")]
    TooFewPaths(usize),
    #[error("{failed} of {total} paths failed (limit 0.1%); first: {first}")]
    TooManyFailures { failed: usize, total: usize, first: String },
    #[error("monitored site {0} outside the lattice")]
    BadSite(usize),
}

/// Drift catalog. Every entry is `C¹` with bounded derivative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DriftSpec {
    Zero,
    Constant { c: f64 },
    Linear { lambda: f64 },
    /// `b(u) = a·arctan(u)`.
    Arctan { a: f64 },
    /// `b(u) = a·sin(u)`.
    Sine { a: f64 },
}

impl DriftSpec {
    pub fn b(&self, u: f64) -> f64 {
        match *self {
            DriftSpec::Zero => 0.0,
            DriftSpec::Constant { c } => c,
            DriftSpec::Linear { lambda } => lambda * u,
            DriftSpec::Arctan { a } => a * u.atan(),
            DriftSpec::Sine { a } => a * u.sin(),
        }
    }

    pub fn b_prime(&self, u: f64) -> f64 {
        match *self {
            DriftSpec::Zero | DriftSpec::Constant { .. } => 0.0,
            DriftSpec::Linear { lambda } => lambda,
            DriftSpec::Arctan { a } => a / (1.0 + u * u),
            DriftSpec::Sine { a } => a * u.cos(),
        }
    }

    /// `sup |b′|`.
    pub fn lip(&self) -> f64 {
        match *self {
            DriftSpec::Zero | DriftSpec::Constant { .. } => 0.0,
            DriftSpec::Linear { lambda } => lambda.abs(),
            DriftSpec::Arctan { a } | DriftSpec::Sine { a } => a.abs(),
        }
    }

    /// True when `b′` does not depend on its argument, which makes the
    /// Malliavin derivative of `u` deterministic.
    pub fn has_constant_derivative(&self) -> bool {
        matches!(self, DriftSpec::Zero | DriftSpec::Constant { .. } | DriftSpec::Linear { .. })
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, DriftSpec::Zero | DriftSpec::Constant { c: 0.0 })
    }

    pub fn name(&self) -> String {
        match *self {
            DriftSpec::Zero => "zero".into(),
            DriftSpec::Constant { c } => format!("constant({c})"),
            DriftSpec::Linear { lambda } => format!("linear({lambda})"),
            DriftSpec::Arctan { a } => format!("arctan({a})"),
            DriftSpec::Sine { a } => format!("sine({a})"),
        }
    }
}

/// One solved path, monitored at `x_ref`.
#[derive(Debug, Clone)]
pub struct SolutionPath {
    pub field: LatticeField,
    pub x_ref: usize,
    pub u_ref: Vec<f64>,
}

impl LatticeModel {
    /// `u_n = X_n + Δt Σ_{j<n} 𝓕⁻¹[𝓕Γ(t_n - t_j) · 𝓕 b(u_j)]`.
    pub fn solve_mild(&self, x: &LatticeField, drift: &DriftSpec) -> Result<SolutionPath, SolveError> {
        if x.lattice() != self.lattice() || x.levels() != self.lattice().steps() + 1 {
            return Err(SolveError::LatticeMismatch);
        }
        let mut field = x.clone();
        if !drift.is_zero() {
            let mut fft = LatticeFft::new(self.lattice());
            self.add_drift(&mut field, drift, &mut fft)?;
        }
        let u_ref = (0..field.levels()).map(|n| field.at(n, 0)).collect();
        Ok(SolutionPath { field, x_ref: 0, u_ref })
    }

    /// Adds the drift convolution to `field` in place, level by level.
    pub(crate) fn add_drift(&self, field: &mut LatticeField, drift: &DriftSpec, fft: &mut LatticeFft) -> Result<(), SolveError> {
        let lat = self.lattice();
        let sites = lat.sites();
        let dt = lat.dt();
        let norm = 1.0 / sites as f64;
        let green = self.green();
        let mut state = green.state();
        let mut buf = vec![Complex64::new(0.0, 0.0); sites];
        let mut max_abs = 0.0f64;
        for n in 1..=lat.steps() {
            for (slot, &u) in buf.iter_mut().zip(field.level(n - 1)) {
                *slot = Complex64::new(drift.b(u) * norm, 0.0);
            }
            fft.forward(&mut buf);
            green.advance(&mut state, &buf, Gain::Drift);
            buf.copy_from_slice(state.output());
            fft.inverse(&mut buf);
            let level = field.level_mut(n);
            let mut finite = true;
            for (u, v) in level.iter_mut().zip(&buf) {
                *u += dt * v.re;
                finite &= u.is_finite();
            }
            if !finite {
                return Err(SolveError::NonFinite { step: n, max_abs });
            }
            max_abs = level.iter().fold(max_abs, |m, v| m.max(v.abs()));
        }
        Ok(())
    }
}

/// Per-path monitored series of an ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub seed: u64,
    pub sites: Vec<usize>,
    pub levels: usize,
    /// Indices of paths that solved; failed paths are left out.
    pub paths: Vec<u64>,
    pub failures: Vec<(u64, String)>,
    /// `series[p][s][n] = u_p(t_n, sites[s])`.
    pub series: Vec<Vec<Vec<f64>>>,
}

impl Ensemble {
    pub fn len(&self) -> usize {
        self.series.len()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    /// `u(t_n, sites[s])` across paths.
    pub fn sample(&self, site: usize, n: usize) -> Vec<f64> {
        self.series.iter().map(|p| p[site][n]).collect()
    }

    pub fn mean(&self, site: usize, n: usize) -> f64 {
        self.sample(site, n).iter().sum::<f64>() / self.len() as f64
    }

    /// Centered sample `F = u − m̂` at `(t_n, sites[s])`.
    pub fn centered(&self, site: usize, n: usize) -> Vec<f64> {
        let m = self.mean(site, n);
        self.sample(site, n).into_iter().map(|v| v - m).collect()
    }

    /// Unbiased sample variance at `(t_n, sites[s])`.
    pub fn variance(&self, site: usize, n: usize) -> f64 {
        let f = self.centered(site, n);
        f.iter().map(|v| v * v).sum::<f64>() / (f.len() as f64 - 1.0)
    }
}

impl LatticeModel {
    /// Solves path `p` of `seed` and returns the full trajectory.
    pub fn solve_path(&self, drift: &DriftSpec, seed: u64, path: u64) -> Result<SolutionPath, SolveError> {
        let noise = self.sample_noise(StreamKey::new(seed, path, BASE_STREAM));
        self.solve_mild(&self.build_x(&noise), drift)
    }

    /// Solves `n_paths` independent paths and keeps the series at `sites`.
    pub fn ensemble_solve(&self, drift: &DriftSpec, n_paths: usize, seed: u64, sites: &[usize]) -> Result<Ensemble, SolveError> {
        if n_paths < 2 {
            return Err(SolveError::TooFewPaths(n_paths));
        }
        if let Some(&bad) = sites.iter().find(|&&s| s >= self.lattice().sites()) {
            return Err(SolveError::BadSite(bad));
        }
        let results: Vec<Result<Vec<Vec<f64>>, SolveError>> = (0..n_paths as u64)
            .into_par_iter()
            .map(|p| {
                let sol = self.solve_path(drift, seed, p)?;
                Ok(sites
                    .iter()
                    .map(|&s| (0..sol.field.levels()).map(|n| sol.field.at(n, s)).collect())
                    .collect())
            })
            .collect();
        let mut ensemble = Ensemble {
            seed,
            sites: sites.to_vec(),
            levels: self.lattice().steps() + 1,
            paths: Vec::with_capacity(n_paths),
            failures: Vec::new(),
            series: Vec::with_capacity(n_paths),
        };
        for (p, r) in results.into_iter().enumerate() {
            match r {
                Ok(s) => {
                    ensemble.paths.push(p as u64);
                    ensemble.series.push(s);
                }
                Err(e) => ensemble.failures.push((p as u64, e.to_string())),
            }
        }
        if ensemble.failures.len() * 1000 > n_paths {
            return Err(SolveError::TooManyFailures {
                failed: ensemble.failures.len(),
                total: n_paths,
                first: ensemble.failures[0].1.clone(),
            });
        }
        Ok(ensemble)
    }
}
