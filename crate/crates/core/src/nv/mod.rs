//! Nourdin–Viens machinery: `g_F(z) = E[⟨DF, −DL⁻¹F⟩_H | F = z]` through the
//! Mehler representation
//! `⟨DF, −DL⁻¹F⟩_H = ∫_0^∞ e^{-θ} E′⟨DF, D̃F_θ⟩_H dθ`, the density formula
//! `ρ(z) = E|F| / (2 g_F(z)) · exp(−∫_0^z y / g_F(y) dy)` and the drift
//! decomposition `g_F = Φ + A₁ + A₂ + A₃`.

pub mod laguerre;
pub mod regression;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::discrete::LatticeModel;
use crate::lattice::{LatticeFft, LatticeField};
use crate::malliavin::{h_inner, DerivativeKernel, MalliavinError};
use crate::noise::mehler_shift_into;
use crate::rng::{StreamKey, BASE_STREAM};
use crate::solver::DriftSpec;

pub use laguerre::ThetaQuadrature;
pub use regression::{quantile_sorted, BandwidthChoice, KernelRegression};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NvError {
    #[error(transparent)]
    Malliavin(#[from] MalliavinError),
    #[error("{failed} of {total} paths failed; first: {first}")]
    PathFailures { failed: usize, total: usize, first: String },
    #[error("need at least {needed} paths, got {got}")]
    TooFewPaths { needed: usize, got: usize },
    #[error("n_primes must be at least 1")]
    NoReplicates,
    #[error("no z on the grid has effective sample size >= {0}")]
    EmptyRange(f64),
    #[error("estimated g is not positive at z = {z} (g = {g}); the density formula is undefined")]
    NonPositiveG { z: f64, g: f64 },
    #[error("the retained z range [{lo}, {hi}] does not contain 0")]
    ZeroOutsideRange { lo: f64, hi: f64 },
    #[error("E|F| must be positive, got {0}")]
    BadMoment(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MehlerOptions {
    pub quadrature: ThetaQuadrature,
    pub n_primes: usize,
}

impl Default for MehlerOptions {
    fn default() -> Self {
        MehlerOptions {
            quadrature: ThetaQuadrature::gauss_laguerre(8),
            n_primes: 1,
        }
    }
}

/// Per-path Monte Carlo quantities at one target time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MehlerRecord {
    pub path: u64,
    /// `u(t*, x_ref)`, not centered.
    pub u: f64,
    /// `Σ_q w_q avg_r ⟨DF, D̃F⟩_H`.
    pub y: f64,
    /// `⟨D X, D F − D X⟩_H`.
    pub a1: f64,
    /// `Σ_q w_q avg_r ⟨D X, D̃F − D X⟩_H`.
    pub a2: f64,
    /// `Σ_q w_q avg_r ⟨D F − D X, D̃F − D X⟩_H`.
    pub a3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MehlerSamples {
    pub target: usize,
    pub time: f64,
    /// `‖D X(t*, x_ref)‖²_H` on the lattice.
    pub phi_lattice: f64,
    pub n_primes: usize,
    pub records: Vec<MehlerRecord>,
}

impl MehlerSamples {
    pub fn u(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.u).collect()
    }

    pub fn mean_u(&self) -> f64 {
        self.records.iter().map(|r| r.u).sum::<f64>() / self.records.len() as f64
    }

    /// `F = u − m̂`.
    pub fn centered(&self) -> Vec<f64> {
        let m = self.mean_u();
        self.records.iter().map(|r| r.u - m).collect()
    }

    /// Plug-in `E|F|`.
    pub fn mean_abs_f(&self) -> f64 {
        let f = self.centered();
        f.iter().map(|v| v.abs()).sum::<f64>() / f.len() as f64
    }

    pub fn negative_fraction(&self) -> f64 {
        self.records.iter().filter(|r| r.y < 0.0).count() as f64 / self.records.len() as f64
    }
}

struct TargetData {
    target: usize,
    free: DerivativeKernel,
    phi_lattice: f64,
    /// Derivative when it does not depend on the path.
    fixed: Option<DerivativeKernel>,
}

fn path_records(
    ctx: &LatticeModel,
    drift: &DriftSpec,
    key: StreamKey,
    targets: &[TargetData],
    opts: &MehlerOptions,
) -> Result<Vec<MehlerRecord>, MalliavinError> {
    let geom = ctx.geometry();
    let mut fft = LatticeFft::new(ctx.lattice());
    let w = ctx.sample_noise(key);
    let u = ctx.solve_mild(&ctx.build_x(&w), drift)?;
    let wsum: f64 = opts.quadrature.weights.iter().sum();

    let kernels: Vec<DerivativeKernel> = targets
        .iter()
        .map(|t| match &t.fixed {
            Some(k) => Ok(k.clone()),
            None => ctx.derivative_of_field(&u.field, drift, t.target, &mut fft),
        })
        .collect::<Result<_, _>>()?;
    let corrections: Vec<DerivativeKernel> = kernels
        .iter()
        .zip(targets)
        .map(|(k, t)| k.minus(&t.free))
        .collect::<Result<_, _>>()?;

    let mut records: Vec<MehlerRecord> = targets
        .iter()
        .zip(kernels.iter().zip(&corrections))
        .map(|(t, (_, d))| {
            Ok(MehlerRecord {
                path: key.path,
                u: u.field.at(t.target, 0),
                y: 0.0,
                a1: wsum * h_inner(&t.free, d, geom)?,
                a2: 0.0,
                a3: 0.0,
            })
        })
        .collect::<Result<_, MalliavinError>>()?;

    if targets.iter().all(|t| t.fixed.is_some()) {
        // D̃F = DF for every θ.
        for ((rec, t), (k, d)) in records.iter_mut().zip(targets).zip(kernels.iter().zip(&corrections)) {
            rec.y = wsum * h_inner(k, k, geom)?;
            rec.a2 = wsum * h_inner(&t.free, d, geom)?;
            rec.a3 = wsum * h_inner(d, d, geom)?;
        }
        return Ok(records);
    }

    let reps = opts.n_primes;
    let mut shifted = w.clone();
    for (q, (&theta, &weight)) in opts.quadrature.nodes.iter().zip(&opts.quadrature.weights).enumerate() {
        let wq = weight / reps as f64;
        for r in 0..reps {
            let w_prime = ctx.sample_noise(key.prime(q, r));
            mehler_shift_into(&mut shifted, &w, &w_prime, theta)?;
            let u_shift: LatticeField = ctx.solve_mild(&ctx.build_x(&shifted), drift)?.field;
            for ((rec, t), (k, d)) in records.iter_mut().zip(targets).zip(kernels.iter().zip(&corrections)) {
                let tilde = match &t.fixed {
                    Some(k) => k.clone(),
                    None => ctx.derivative_of_field(&u_shift, drift, t.target, &mut fft)?,
                };
                let tilde_d = tilde.minus(&t.free)?;
                rec.y += wq * h_inner(k, &tilde, geom)?;
                rec.a2 += wq * h_inner(&t.free, &tilde_d, geom)?;
                rec.a3 += wq * h_inner(d, &tilde_d, geom)?;
            }
        }
    }
    Ok(records)
}

/// Runs the Mehler sampler on paths `0..n_paths` of `seed` for every target
/// step at once. Paths whose solve fails are dropped and reported through
/// an error when they exceed 0.1%.
pub fn mehler_samples(
    ctx: &LatticeModel,
    drift: &DriftSpec,
    seed: u64,
    n_paths: usize,
    targets: &[usize],
    opts: &MehlerOptions,
) -> Result<Vec<MehlerSamples>, NvError> {
    if opts.n_primes == 0 {
        return Err(NvError::NoReplicates);
    }
    if n_paths < 2 {
        return Err(NvError::TooFewPaths { needed: 2, got: n_paths });
    }
    let phi_lat = ctx.phi_lattice();
    let zero_field = LatticeField::zeros(ctx.lattice(), ctx.lattice().steps() + 1);
    let mut fft = LatticeFft::new(ctx.lattice());
    let data: Vec<TargetData> = targets
        .iter()
        .map(|&target| {
            let free = ctx.free_kernel(target)?;
            let fixed = if drift.has_constant_derivative() {
                Some(ctx.derivative_of_field(&zero_field, drift, target, &mut fft)?)
            } else {
                None
            };
            Ok(TargetData {
                target,
                free,
                phi_lattice: phi_lat[target],
                fixed,
            })
        })
        .collect::<Result<_, MalliavinError>>()?;

    let results: Vec<Result<Vec<MehlerRecord>, MalliavinError>> = (0..n_paths as u64)
        .into_par_iter()
        .map(|p| path_records(ctx, drift, StreamKey::new(seed, p, BASE_STREAM), &data, opts))
        .collect();
    let mut out: Vec<MehlerSamples> = data
        .iter()
        .map(|t| MehlerSamples {
            target: t.target,
            time: ctx.lattice().time(t.target),
            phi_lattice: t.phi_lattice,
            n_primes: opts.n_primes,
            records: Vec::with_capacity(n_paths),
        })
        .collect();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(recs) => {
                for (s, rec) in out.iter_mut().zip(recs) {
                    s.records.push(rec);
                }
            }
            Err(e) => failures.push(e.to_string()),
        }
    }
    if failures.len() * 1000 > n_paths {
        return Err(NvError::PathFailures {
            failed: failures.len(),
            total: n_paths,
            first: failures[0].clone(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionOptions {
    pub grid_points: usize,
    /// Grid spans these quantiles of `F`.
    pub quantile_range: (f64, f64),
    pub min_effective_n: f64,
    pub bootstrap: usize,
    pub cv_points: usize,
    pub seed: u64,
    /// Overrides cross-validation when set.
    pub bandwidth: Option<f64>,
}

impl Default for RegressionOptions {
    fn default() -> Self {
        RegressionOptions {
            grid_points: 101,
            quantile_range: (0.001, 0.999),
            min_effective_n: 30.0,
            bootstrap: 200,
            cv_points: 2000,
            seed: 0,
            bandwidth: None,
        }
    }
}

/// `ĝ_F` on a `z` grid with bootstrap standard errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GEstimate {
    pub time: f64,
    pub z: Vec<f64>,
    pub g: Vec<f64>,
    pub se: Vec<f64>,
    pub effective_n: Vec<f64>,
    /// Grid points where the raw regression was negative and was set to 0.
    pub clipped: Vec<bool>,
    pub n_paths: usize,
    pub n_primes: usize,
    pub bandwidth: BandwidthChoice,
    /// Grid points dropped for effective sample size below the threshold.
    pub excluded: usize,
    pub negative_raw_fraction: f64,
    #[serde(skip)]
    pub f_sorted: Vec<f64>,
}

impl GEstimate {
    /// `[q_lo, q_hi]` quantiles of the `F` sample.
    pub fn f_range(&self, lo: f64, hi: f64) -> (f64, f64) {
        (quantile_sorted(&self.f_sorted, lo), quantile_sorted(&self.f_sorted, hi))
    }

    /// Linear interpolation of `ĝ` on the retained grid.
    pub fn interpolate(&self, z: f64) -> f64 {
        crate::spectral::quadrature::interpolate(&self.z, &self.g, z)
    }
}

struct Smoother {
    reg: KernelRegression,
    z: Vec<f64>,
    effective_n: Vec<f64>,
    bandwidth: BandwidthChoice,
    f_sorted: Vec<f64>,
}

fn smoother(f: &[f64], y: &[f64], opts: &RegressionOptions) -> Result<Smoother, NvError> {
    let reg = KernelRegression::new(f, y);
    let bandwidth = match opts.bandwidth {
        Some(h) => BandwidthChoice {
            bandwidth: h,
            candidates: vec![h],
            scores: vec![reg.loo_score(h, opts.cv_points)],
        },
        None => reg.cross_validated_bandwidth(opts.cv_points),
    };
    let mut f_sorted = f.to_vec();
    f_sorted.sort_by(f64::total_cmp);
    let lo = quantile_sorted(&f_sorted, opts.quantile_range.0);
    let hi = quantile_sorted(&f_sorted, opts.quantile_range.1);
    let m = opts.grid_points.max(2);
    let grid: Vec<f64> = (0..m).map(|i| lo + (hi - lo) * i as f64 / (m - 1) as f64).collect();
    let h = bandwidth.bandwidth;
    let fits: Vec<_> = grid.iter().map(|&z| reg.at(z, h)).collect();
    let keep: Vec<usize> = (0..m).filter(|&i| fits[i].effective_n >= opts.min_effective_n).collect();
    if keep.is_empty() {
        return Err(NvError::EmptyRange(opts.min_effective_n));
    }
    Ok(Smoother {
        z: keep.iter().map(|&i| grid[i]).collect(),
        effective_n: keep.iter().map(|&i| fits[i].effective_n).collect(),
        reg,
        bandwidth,
        f_sorted,
    })
}

impl Smoother {
    fn values(&self, y: &[f64], f: &[f64]) -> Vec<f64> {
        let reg = KernelRegression::new(f, y);
        self.z.iter().map(|&z| reg.at(z, self.bandwidth.bandwidth).value).collect()
    }

    fn se(&self, y: &[f64], f: &[f64], opts: &RegressionOptions, stream: u64) -> Vec<f64> {
        let reg = KernelRegression::new(f, y);
        reg.bootstrap_se(&self.z, self.bandwidth.bandwidth, opts.bootstrap, StreamKey::new(opts.seed, 0, stream), true)
    }
}

/// Regresses `Y` on `F = u − m̂` to estimate `g_F`.
pub fn estimate_g_f(samples: &MehlerSamples, opts: &RegressionOptions) -> Result<GEstimate, NvError> {
    let n = samples.records.len();
    if n < 2 {
        return Err(NvError::TooFewPaths { needed: 2, got: n });
    }
    let f = samples.centered();
    let y: Vec<f64> = samples.records.iter().map(|r| r.y).collect();
    let s = smoother(&f, &y, opts)?;
    let values: Vec<f64> = s.z.iter().map(|&z| s.reg.at(z, s.bandwidth.bandwidth).value).collect();
    let clipped: Vec<bool> = values.iter().map(|&v| v < 0.0).collect();
    let g: Vec<f64> = values.iter().map(|&v| v.max(0.0)).collect();
    let se = s.reg.bootstrap_se(&s.z, s.bandwidth.bandwidth, opts.bootstrap, StreamKey::new(opts.seed, samples.target as u64, 0), true);
    Ok(GEstimate {
        time: samples.time,
        excluded: opts.grid_points.max(2) - s.z.len(),
        z: s.z,
        g,
        se,
        effective_n: s.effective_n,
        clipped,
        n_paths: n,
        n_primes: samples.n_primes,
        bandwidth: s.bandwidth,
        negative_raw_fraction: samples.negative_fraction(),
        f_sorted: s.f_sorted,
    })
}

/// Mehler sampler and regression for a single target in one call.
pub fn estimate_g_f_at(
    ctx: &LatticeModel,
    drift: &DriftSpec,
    seed: u64,
    n_paths: usize,
    target: usize,
    mehler: &MehlerOptions,
    regression: &RegressionOptions,
) -> Result<(MehlerSamples, GEstimate), NvError> {
    let samples = mehler_samples(ctx, drift, seed, n_paths, &[target], mehler)?.remove(0);
    let g = estimate_g_f(&samples, regression)?;
    Ok((samples, g))
}

/// `Φ`, `Â₁`, `Â₂`, `Â₃` and `ĝ_F − Φ − ΣÂ_i` on the `ĝ` grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub time: f64,
    pub z: Vec<f64>,
    pub phi: f64,
    pub phi_lattice: f64,
    pub g: Vec<f64>,
    pub a1: Vec<f64>,
    pub a2: Vec<f64>,
    pub a3: Vec<f64>,
    pub se_g: Vec<f64>,
    pub se_a1: Vec<f64>,
    pub se_a2: Vec<f64>,
    pub se_a3: Vec<f64>,
    /// `ĝ − Φ_lattice − Â₁ − Â₂ − Â₃`.
    pub residual: Vec<f64>,
}

impl Decomposition {
    /// Largest `|residual| / se_g` over the grid.
    pub fn max_standardized_residual(&self) -> f64 {
        self.residual
            .iter()
            .zip(&self.se_g)
            .map(|(r, s)| if *s > 0.0 { r.abs() / s } else if *r == 0.0 { 0.0 } else { f64::INFINITY })
            .fold(0.0, f64::max)
    }
}

/// Regresses each correction term on `F` with the bandwidth chosen for `ĝ`.
/// `phi` is the continuum `Φ(t)`, reported alongside the lattice value used
/// in the identity.
pub fn decompose_g_f(samples: &MehlerSamples, phi: f64, opts: &RegressionOptions) -> Result<Decomposition, NvError> {
    let f = samples.centered();
    let col = |sel: fn(&MehlerRecord) -> f64| -> Vec<f64> { samples.records.iter().map(sel).collect() };
    let (y, a1, a2, a3) = (col(|r| r.y), col(|r| r.a1), col(|r| r.a2), col(|r| r.a3));
    let s = smoother(&f, &y, opts)?;
    let g = s.values(&y, &f);
    let (v1, v2, v3) = (s.values(&a1, &f), s.values(&a2, &f), s.values(&a3, &f));
    let residual = (0..g.len())
        .map(|i| g[i] - samples.phi_lattice - v1[i] - v2[i] - v3[i])
        .collect();
    Ok(Decomposition {
        time: samples.time,
        phi,
        phi_lattice: samples.phi_lattice,
        se_g: s.se(&y, &f, opts, 0),
        se_a1: s.se(&a1, &f, opts, 1),
        se_a2: s.se(&a2, &f, opts, 2),
        se_a3: s.se(&a3, &f, opts, 3),
        z: s.z,
        g,
        a1: v1,
        a2: v2,
        a3: v3,
        residual,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GBounds {
    pub c1: f64,
    pub c2: f64,
    pub pass: bool,
    pub range: (f64, f64),
    pub points: usize,
}

/// `min` and `max` of `ĝ/Φ` over the grid points inside `range` (all points
/// when `None`).
pub fn check_g_bounds(g: &GEstimate, phi_t: f64, range: Option<(f64, f64)>) -> GBounds {
    let (lo, hi) = range.unwrap_or((f64::NEG_INFINITY, f64::INFINITY));
    let ratios: Vec<f64> = g
        .z
        .iter()
        .zip(&g.g)
        .filter(|(z, _)| **z >= lo && **z <= hi)
        .map(|(_, v)| v / phi_t)
        .collect();
    let c1 = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let c2 = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    GBounds {
        c1,
        c2,
        pass: !ratios.is_empty() && c1 > 0.0,
        range: (lo.max(g.z[0]), hi.min(g.z[g.z.len() - 1])),
        points: ratios.len(),
    }
}

/// Density reconstructed from `ĝ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NvDensity {
    pub z: Vec<f64>,
    pub rho: Vec<f64>,
    pub e_abs_f: f64,
    /// `∫ρ` over the grid (trapezoid).
    pub mass: f64,
    pub bandwidth: f64,
}

/// `ρ(z) = E|F| / (2ĝ(z)) · exp(−∫_0^z y/ĝ(y) dy)`, integral by trapezoids from
/// `0` outward.
pub fn density_from_g(g: &GEstimate, e_abs_f: f64) -> Result<NvDensity, NvError> {
    if !(e_abs_f > 0.0 && e_abs_f.is_finite()) {
        return Err(NvError::BadMoment(e_abs_f));
    }
    if let Some(i) = g.g.iter().position(|&v| !(v > 0.0)) {
        return Err(NvError::NonPositiveG { z: g.z[i], g: g.g[i] });
    }
    let (z, gv) = (&g.z, &g.g);
    let n = z.len();
    if !(z[0] <= 0.0 && z[n - 1] >= 0.0) {
        return Err(NvError::ZeroOutsideRange { lo: z[0], hi: z[n - 1] });
    }
    let integrand = |i: usize| z[i] / gv[i];
    // Segment [z[i0], z[i0+1]] holds 0.
    let i0 = z.partition_point(|&v| v <= 0.0).saturating_sub(1).min(n.saturating_sub(2));
    let mut cum = vec![0.0; n];
    if n >= 2 {
        // The integrand vanishes at 0.
        cum[i0 + 1] = 0.5 * z[i0 + 1] * integrand(i0 + 1);
        cum[i0] = 0.5 * z[i0] * integrand(i0);
        for i in i0 + 2..n {
            cum[i] = cum[i - 1] + 0.5 * (z[i] - z[i - 1]) * (integrand(i) + integrand(i - 1));
        }
        for i in (0..i0).rev() {
            cum[i] = cum[i + 1] - 0.5 * (z[i + 1] - z[i]) * (integrand(i) + integrand(i + 1));
        }
    }
    let rho: Vec<f64> = (0..n).map(|i| e_abs_f / (2.0 * gv[i]) * (-cum[i]).exp()).collect();
    let mass = trapezoid(z, &rho);
    Ok(NvDensity {
        z: z.clone(),
        rho,
        e_abs_f,
        mass,
        bandwidth: g.bandwidth.bandwidth,
    })
}

pub fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2).zip(y.windows(2)).map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1])).sum()
}

impl NvDensity {
    /// `∫|ρ − p|` over the grid plus the mass of `p` outside it.
    pub fn l1_against<P: Fn(f64) -> f64>(&self, pdf: P, cdf: impl Fn(f64) -> f64) -> f64 {
        let diff: Vec<f64> = self.z.iter().zip(&self.rho).map(|(&z, &r)| (r - pdf(z)).abs()).collect();
        let n = self.z.len();
        let outside = cdf(self.z[0]) + (1.0 - cdf(self.z[n - 1]));
        trapezoid(&self.z, &diff) + outside
    }
}
