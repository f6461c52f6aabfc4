//! Independent density estimates and checks of the Gaussian sandwich
//! `E|F|/(C₂Φ) e^{-(z-m)²/(C₁Φ)} ≤ p(z) ≤ E|F|/(C₁Φ) e^{-(z-m)²/(C₂Φ)}`.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::nv::regression::{quantile_sorted, silverman};
use crate::nv::{trapezoid, NvDensity};

/// Samples below this size are refused by the KDE and the KS test.
pub const MIN_SAMPLE: usize = 1000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VerifyError {
    #[error("insufficient n: need at least {needed} samples, got {got}")]
    InsufficientSample { needed: usize, got: usize },
    #[error("degenerate sample: zero variance")]
    Degenerate,
    #[error("density grids do not overlap")]
    DisjointRanges,
    #[error("nothing to fit")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KdeDensity {
    pub z: Vec<f64>,
    pub p: Vec<f64>,
    pub bandwidth: f64,
    pub n: usize,
}

fn mean_sd(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v.sqrt())
}

/// Gaussian KDE with Silverman bandwidth on `points` grid points over
/// `m̂ ± half_width` (`5·sd` when `None`).
pub fn kde(sample: &[f64], half_width: Option<f64>, points: usize) -> Result<KdeDensity, VerifyError> {
    if sample.len() < MIN_SAMPLE {
        return Err(VerifyError::InsufficientSample {
            needed: MIN_SAMPLE,
            got: sample.len(),
        });
    }
    let (m, sd) = mean_sd(sample);
    if !(sd > 0.0) {
        return Err(VerifyError::Degenerate);
    }
    let h = silverman(sample);
    let half = half_width.unwrap_or(5.0 * sd);
    let points = points.max(2);
    let z: Vec<f64> = (0..points)
        .map(|i| m - half + 2.0 * half * i as f64 / (points - 1) as f64)
        .collect();
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    let norm = 1.0 / (sample.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    let p = z
        .iter()
        .map(|&zi| {
            let lo = sorted.partition_point(|&v| v < zi - 8.0 * h);
            let hi = sorted.partition_point(|&v| v <= zi + 8.0 * h);
            sorted[lo..hi]
                .iter()
                .map(|&v| {
                    let d = (zi - v) / h;
                    (-0.5 * d * d).exp()
                })
                .sum::<f64>()
                * norm
        })
        .collect();
    Ok(KdeDensity {
        z,
        p,
        bandwidth: h,
        n: sample.len(),
    })
}

/// A density on a grid, in the coordinates of `u` (not centered).
#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity {
    pub z: Vec<f64>,
    pub p: Vec<f64>,
}

impl From<&KdeDensity> for GridDensity {
    fn from(k: &KdeDensity) -> Self {
        GridDensity { z: k.z.clone(), p: k.p.clone() }
    }
}

impl GridDensity {
    /// NV density of `F = u − m̂`, shifted back by `m̂`.
    pub fn from_nv(nv: &NvDensity, center: f64) -> Self {
        GridDensity {
            z: nv.z.iter().map(|z| z + center).collect(),
            p: nv.rho.clone(),
        }
    }

    pub fn mass(&self) -> f64 {
        trapezoid(&self.z, &self.p)
    }

    /// Grid points of the central `frac` probability range of the density.
    pub fn central_range(&self, frac: f64) -> (f64, f64) {
        let n = self.z.len();
        let mut cdf = vec![0.0; n];
        for i in 1..n {
            cdf[i] = cdf[i - 1] + 0.5 * (self.z[i] - self.z[i - 1]) * (self.p[i] + self.p[i - 1]);
        }
        let total = cdf[n - 1];
        let tail = 0.5 * (1.0 - frac) * total;
        let lo = cdf.iter().position(|&c| c >= tail).unwrap_or(0);
        let hi = cdf.iter().rposition(|&c| c <= total - tail).unwrap_or(n - 1);
        (self.z[lo], self.z[hi.max(lo)])
    }
}

/// One time level entering a sandwich fit.
#[derive(Debug, Clone, PartialEq)]
pub struct SandwichInput {
    pub density: GridDensity,
    pub m: f64,
    pub phi_t: f64,
    pub e_abs: f64,
    /// Checked `z` range; central 99% of the density when `None`.
    pub range: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandwichFit {
    pub m: Vec<f64>,
    pub phi_t: Vec<f64>,
    pub c1: f64,
    pub c2: f64,
    pub feasible: bool,
    pub ranges: Vec<(f64, f64)>,
    pub points_checked: usize,
}

impl SandwichFit {
    pub fn ratio(&self) -> f64 {
        self.c2 / self.c1
    }
}

/// Constant grid `2^{k/4}`, `k = -16..=32`.
pub fn constant_grid() -> Vec<f64> {
    (-16..=32).map(|k| 2f64.powf(k as f64 / 4.0)).collect()
}

const BOUND_TOL: f64 = 1e-9;

fn satisfies(c1: f64, c2: f64, pts: &[(f64, f64, f64, f64)]) -> bool {
    // (p, (z-m)², Φ, E|F|)
    pts.iter().all(|&(p, d2, phi, e)| {
        let lower = e / (c2 * phi) * (-d2 / (c1 * phi)).exp();
        let upper = e / (c1 * phi) * (-d2 / (c2 * phi)).exp();
        lower <= p * (1.0 + BOUND_TOL) && p <= upper * (1.0 + BOUND_TOL)
    })
}

/// One pair `(C₁, C₂)` from the constant grid valid at every input;
/// minimizes `C₂/C₁`, ties broken towards `C₁C₂ = 4`.
pub fn fit_sandwich_joint(inputs: &[SandwichInput]) -> Result<SandwichFit, VerifyError> {
    if inputs.is_empty() {
        return Err(VerifyError::Empty);
    }
    let mut pts = Vec::new();
    let mut ranges = Vec::new();
    for input in inputs {
        let (lo, hi) = input.range.unwrap_or_else(|| input.density.central_range(0.99));
        ranges.push((lo, hi));
        for (&z, &p) in input.density.z.iter().zip(&input.density.p) {
            if z >= lo && z <= hi {
                pts.push((p, (z - input.m).powi(2), input.phi_t, input.e_abs));
            }
        }
    }
    let grid = constant_grid();
    let mut best: Option<(f64, f64, f64, f64)> = None;
    for &c1 in &grid {
        for &c2 in grid.iter().filter(|&&c| c >= c1) {
            if !satisfies(c1, c2, &pts) {
                continue;
            }
            let ratio = c2 / c1;
            let tie = (c1 * c2 / 4.0).ln().abs();
            let better = match best {
                None => true,
                Some((_, _, r, t)) => ratio < r * (1.0 - 1e-12) || (ratio <= r * (1.0 + 1e-12) && tie < t),
            };
            if better {
                best = Some((c1, c2, ratio, tie));
            }
        }
    }
    let (c1, c2, feasible) = match best {
        Some((c1, c2, _, _)) => (c1, c2, true),
        None => (f64::NAN, f64::NAN, false),
    };
    Ok(SandwichFit {
        m: inputs.iter().map(|i| i.m).collect(),
        phi_t: inputs.iter().map(|i| i.phi_t).collect(),
        c1,
        c2,
        feasible,
        ranges,
        points_checked: pts.len(),
    })
}

pub fn fit_sandwich(density: &GridDensity, m: f64, phi_t: f64, e_abs: f64) -> SandwichFit {
    fit_sandwich_joint(&[SandwichInput {
        density: density.clone(),
        m,
        phi_t,
        e_abs,
        range: None,
    }])
    .expect("one input")
}

/// Whether the given pair satisfies both bounds at every checked point.
pub fn sandwich_holds(input: &SandwichInput, c1: f64, c2: f64) -> bool {
    let (lo, hi) = input.range.unwrap_or_else(|| input.density.central_range(0.99));
    let pts: Vec<_> = input
        .density
        .z
        .iter()
        .zip(&input.density.p)
        .filter(|(z, _)| **z >= lo && **z <= hi)
        .map(|(&z, &p)| (p, (z - input.m).powi(2), input.phi_t, input.e_abs))
        .collect();
    satisfies(c1, c2, &pts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KsReport {
    pub statistic: f64,
    /// Asymptotic 1% critical value `1.6276/√n` (one-sample) or
    /// `1.628·√((n+m)/(nm))` (two-sample).
    pub threshold: f64,
    pub slack: f64,
    pub pass: bool,
    pub n: usize,
}

/// One-sample KS statistic against `N(m, Φ)` with verdict
/// `D < slack · threshold`.
pub fn gaussian_ks(sample: &[f64], m: f64, phi_t: f64, slack: f64) -> Result<KsReport, VerifyError> {
    let n = sample.len();
    if n < MIN_SAMPLE {
        return Err(VerifyError::InsufficientSample { needed: MIN_SAMPLE, got: n });
    }
    let normal = Normal::new(m, phi_t.sqrt()).map_err(|_| VerifyError::Degenerate)?;
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    let nf = n as f64;
    let statistic = sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let c = normal.cdf(x);
            (c - i as f64 / nf).max((i + 1) as f64 / nf - c)
        })
        .fold(0.0, f64::max);
    let threshold = 1.6276 / nf.sqrt();
    Ok(KsReport {
        statistic,
        threshold,
        slack,
        pass: statistic < slack * threshold,
        n,
    })
}

/// Two-sample KS test at the 1% level.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsReport, VerifyError> {
    let (n, m) = (a.len(), b.len());
    if n.min(m) < MIN_SAMPLE {
        return Err(VerifyError::InsufficientSample { needed: MIN_SAMPLE, got: n.min(m) });
    }
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < n && j < m {
        let v = x[i].min(y[j]);
        while i < n && x[i] <= v {
            i += 1;
        }
        while j < m && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let threshold = 1.628 * ((n + m) as f64 / (n * m) as f64).sqrt();
    Ok(KsReport {
        statistic: d,
        threshold,
        slack: 1.0,
        pass: d < threshold,
        n: n + m,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossReport {
    pub l1: f64,
    pub overlap: (f64, f64),
    pub nv_bandwidth: f64,
    pub kde_bandwidth: f64,
}

/// `∫|ρ_NV − p̂_KDE|` on the overlap of the grids, with `ρ_NV` shifted by
/// `center` and `p̂_KDE` interpolated onto the NV grid (trapezoid rule on the
/// union of both grids restricted to the overlap).
pub fn cross_validate(nv: &NvDensity, k: &KdeDensity, center: f64) -> Result<CrossReport, VerifyError> {
    let a = GridDensity::from_nv(nv, center);
    let lo = a.z[0].max(k.z[0]);
    let hi = a.z[a.z.len() - 1].min(k.z[k.z.len() - 1]);
    if !(hi > lo) {
        return Err(VerifyError::DisjointRanges);
    }
    let mut xs: Vec<f64> = a
        .z
        .iter()
        .chain(&k.z)
        .copied()
        .filter(|&z| z >= lo && z <= hi)
        .chain([lo, hi])
        .collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let interp = crate::spectral::quadrature::interpolate;
    let diff: Vec<f64> = xs
        .iter()
        .map(|&x| (interp(&a.z, &a.p, x) - interp(&k.z, &k.p, x)).abs())
        .collect();
    Ok(CrossReport {
        l1: trapezoid(&xs, &diff),
        overlap: (lo, hi),
        nv_bandwidth: nv.bandwidth,
        kde_bandwidth: k.bandwidth,
    })
}

/// Grid point of the largest density value.
pub fn mode(z: &[f64], p: &[f64]) -> f64 {
    let i = p
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    z[i]
}

/// Sample quantile (linear interpolation).
pub fn quantile(sample: &[f64], q: f64) -> f64 {
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    quantile_sorted(&s, q)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian_grid(m: f64, phi: f64) -> GridDensity {
        let sd = phi.sqrt();
        let z: Vec<f64> = (0..401).map(|i| m - 5.0 * sd + 10.0 * sd * i as f64 / 400.0).collect();
        let p = z
            .iter()
            .map(|x| (-(x - m).powi(2) / (2.0 * phi)).exp() / (2.0 * std::f64::consts::PI * phi).sqrt())
            .collect();
        GridDensity { z, p }
    }

    #[test]
    fn exact_gaussian_fits_with_two_and_two() {
        let phi = 0.3;
        let g = gaussian_grid(0.4, phi);
        let e_abs = (2.0 * phi / std::f64::consts::PI).sqrt();
        let fit = fit_sandwich(&g, 0.4, phi, e_abs);
        assert!(fit.feasible);
        assert_eq!((fit.c1, fit.c2), (2.0, 2.0));
    }

    #[test]
    fn ks_refuses_small_samples() {
        let s = vec![0.0; 10];
        assert!(matches!(
            gaussian_ks(&s, 0.0, 1.0, 1.0),
            Err(VerifyError::InsufficientSample { .. })
        ));
    }

    #[test]
    fn kde_refuses_degenerate() {
        assert_eq!(kde(&vec![1.0; 2000], None, 101), Err(VerifyError::Degenerate));
    }

    #[test]
    fn identical_inputs_cross_validate_to_zero() {
        let z: Vec<f64> = (0..101).map(|i| -3.0 + 0.06 * i as f64).collect();
        let p: Vec<f64> = z.iter().map(|x| (-x * x / 2.0f64).exp() / (2.0 * std::f64::consts::PI).sqrt()).collect();
        let nv = NvDensity {
            z: z.clone(),
            rho: p.clone(),
            e_abs_f: 0.8,
            mass: 1.0,
            bandwidth: 0.1,
        };
        let k = KdeDensity { z, p, bandwidth: 0.1, n: 1000 };
        assert_eq!(cross_validate(&nv, &k, 0.0).unwrap().l1, 0.0);
        assert_eq!(cross_validate(&nv, &k, 100.0), Err(VerifyError::DisjointRanges));
    }
}
