//! Adaptive Simpson quadrature and radial integrals against spectral measures.

/// Adaptive Simpson on `[a, b]` with absolute tolerance `abs_tol`.
///
/// The interval is pre-split into `pieces` panels so that oscillatory
/// integrands are not accepted on a lucky coarse sample.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, abs_tol: f64, pieces: usize) -> f64 {
    if b <= a {
        return 0.0;
    }
    let pieces = pieces.max(1);
    let h = (b - a) / pieces as f64;
    let tol = abs_tol / pieces as f64;
    (0..pieces)
        .map(|i| {
            let lo = a + i as f64 * h;
            let hi = if i + 1 == pieces { b } else { lo + h };
            let mid = 0.5 * (lo + hi);
            let (flo, fmid, fhi) = (f(lo), f(mid), f(hi));
            let whole = (hi - lo) / 6.0 * (flo + 4.0 * fmid + fhi);
            refine(f, lo, hi, flo, fmid, fhi, whole, tol, 48)
        })
        .sum()
}

#[allow(clippy::too_many_arguments)]
fn refine<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    refine(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + refine(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Radial part of an isotropic spectral measure, `μ(dξ) = w(ρ) dρ` after
/// integrating out the angles.
#[derive(Debug, Clone)]
pub enum RadialMeasure {
    /// `w(ρ) = coef · ρ^exponent`, `exponent > -1`.
    Power { coef: f64, exponent: f64 },
    /// `w(ρ) = surface · ρ^{d-1} · m(ρ)` with `m` piecewise linear on the
    /// knots and zero beyond them.
    Table {
        surface: f64,
        dim: usize,
        radius: Vec<f64>,
        density: Vec<f64>,
    },
}

impl RadialMeasure {
    pub fn weight(&self, rho: f64) -> f64 {
        match self {
            RadialMeasure::Power { coef, exponent } => coef * rho.powf(*exponent),
            RadialMeasure::Table {
                surface,
                dim,
                radius,
                density,
            } => surface * rho.powi(*dim as i32 - 1) * interpolate(radius, density, rho),
        }
    }

    /// Upper end of the support, if bounded.
    pub fn support_end(&self) -> Option<f64> {
        match self {
            RadialMeasure::Power { .. } => None,
            RadialMeasure::Table { radius, .. } => radius.last().copied(),
        }
    }
}

/// Piecewise-linear interpolation, zero outside `[xs[0], xs[last]]`.
pub fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if xs.is_empty() || x < xs[0] || x > xs[xs.len() - 1] {
        return 0.0;
    }
    let i = xs.partition_point(|&v| v <= x);
    if i == 0 {
        return ys[0];
    }
    if i >= xs.len() {
        return ys[xs.len() - 1];
    }
    let (x0, x1) = (xs[i - 1], xs[i]);
    let w = (x - x0) / (x1 - x0);
    ys[i - 1] * (1.0 - w) + ys[i] * w
}

/// `∫_a^b kernel(ρ) w(ρ) dρ` over one panel. The panel `[0, b]` of a power
/// measure is integrated after `v = ρ^{p+1}` so the weight singularity at the
/// origin disappears.
fn panel<K: Fn(f64) -> f64>(measure: &RadialMeasure, kernel: &K, a: f64, b: f64, tol: f64) -> f64 {
    match measure {
        RadialMeasure::Power { coef, exponent } if a == 0.0 && exponent.fract() != 0.0 => {
            let q = exponent + 1.0;
            let g = |v: f64| {
                if v <= 0.0 {
                    kernel(0.0)
                } else {
                    kernel(v.powf(1.0 / q))
                }
            };
            coef / q * adaptive_simpson(&g, 0.0, b.powf(q), tol * q / coef.abs().max(1e-300), 16)
        }
        _ => {
            let g = |rho: f64| {
                let w = measure.weight(rho);
                if w == 0.0 {
                    0.0
                } else {
                    kernel(rho) * w
                }
            };
            adaptive_simpson(&g, a, b, tol, 16)
        }
    }
}

/// Panel edges: `[0, r0]` then doubling up to `r_max` (or the table knots).
fn panel_edges(measure: &RadialMeasure, r0: f64, r_max: f64) -> Vec<f64> {
    if let RadialMeasure::Table { radius, .. } = measure {
        let mut edges = vec![0.0];
        edges.extend(radius.iter().copied().filter(|&r| r > 0.0 && r <= r_max));
        if *edges.last().unwrap() < r_max.min(*radius.last().unwrap()) {
            edges.push(r_max.min(*radius.last().unwrap()));
        }
        return edges;
    }
    let mut edges = vec![0.0, r0];
    while *edges.last().unwrap() < r_max {
        let next = (edges.last().unwrap() * 2.0).min(r_max);
        edges.push(next);
    }
    edges
}

/// `∫_0^R kernel(ρ) w(ρ) dρ`, absolute tolerance split across panels.
pub fn truncated_radial<K: Fn(f64) -> f64>(measure: &RadialMeasure, kernel: &K, scale: f64, cutoff: f64, abs_tol: f64) -> f64 {
    let edges = panel_edges(measure, (scale / 64.0).min(cutoff), cutoff);
    let tol = abs_tol / edges.len() as f64;
    edges
        .windows(2)
        .map(|w| panel(measure, kernel, w[0], w[1], tol))
        .sum()
}

/// `∫_0^∞ kernel(ρ) w(ρ) dρ` for kernels with `kernel(ρ) ~ tail_coef · ρ^{-2}`.
///
/// The integral is computed up to `r_max` and the remainder is added in
/// closed form from the asymptote. Returns `None` when the tail diverges.
/// A zero `tail_coef` declares a kernel that decays faster than any power.
pub fn radial_integral<K: Fn(f64) -> f64>(
    measure: &RadialMeasure,
    kernel: &K,
    tail_coef: f64,
    scale: f64,
    r_max: f64,
    rel_tol: f64,
) -> Option<f64> {
    let tail = match measure {
        RadialMeasure::Power { .. } if tail_coef == 0.0 => 0.0,
        RadialMeasure::Power { coef, exponent } => {
            let p = exponent - 2.0;
            if p >= -1.0 {
                return None;
            }
            coef * tail_coef * r_max.powf(p + 1.0) / (-(p + 1.0))
        }
        RadialMeasure::Table { .. } => 0.0,
    };
    let cutoff = measure.support_end().map_or(r_max, |end| end.min(r_max));
    // Coarse pass fixes the magnitude for the absolute tolerance.
    let rough = truncated_radial(measure, kernel, scale, cutoff, f64::MAX).abs() + tail.abs();
    let body = truncated_radial(measure, kernel, scale, cutoff, rel_tol * rough.max(1e-300));
    Some(body + tail)
}
