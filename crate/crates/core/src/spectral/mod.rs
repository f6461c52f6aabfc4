//! Operators, noise correlations and the deterministic spectral quantities
//! built from them: `𝓕Γ(t)(ξ)`, `Γ(t, ℝ^d)`, `Φ(t)`, `Ψ(t)`.
//!
//! Fourier convention throughout: `𝓕φ(ξ) = ∫ e^{-2πi x·ξ} φ(x) dx`. Heat is
//! `∂_t u = Δu`, wave is `∂_t² u = Δu`, both with vanishing initial data.
//! Under this convention
//!
//! * heat: `𝓕Γ(t)(ξ) = exp(-4π² t |ξ|²)`, mass `1`;
//! * wave (d ≤ 3): `𝓕Γ(t)(ξ) = sin(2π t |ξ|) / (2π |ξ|)`, mass `t`.

pub mod quadrature;
mod wellposed;

use std::f64::consts::PI;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;
use thiserror::Error;

pub use quadrature::RadialMeasure;
pub use wellposed::{check_wellposed, t0_condition, T0Verdict, WellPosedness};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("unsupported operator: {0}")]
    UnsupportedOperator(String),
    #[error("invalid correlation: {0}")]
    InvalidCorrelation(String),
    #[error("frequency has {got} components, operator dimension is {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("time {t} outside [0, {horizon}]")]
    OutOfHorizon { t: f64, horizon: f64 },
    #[error("ill-posed model: {0}")]
    IllPosed(String),
    #[error("no feasible T0 on the time grid (condition fails already at t = {first_time})")]
    NoFeasibleT0 { first_time: f64 },
    #[error("horizon must be positive, got {0}")]
    BadHorizon(f64),
}

/// Second-order operator `L` of the equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum OperatorKind {
    Heat { dim: usize },
    Wave { dim: usize },
}

impl OperatorKind {
    pub fn heat(dim: usize) -> Result<Self, SpectralError> {
        let op = OperatorKind::Heat { dim };
        op.validate()?;
        Ok(op)
    }

    pub fn wave(dim: usize) -> Result<Self, SpectralError> {
        let op = OperatorKind::Wave { dim };
        op.validate()?;
        Ok(op)
    }

    pub fn dim(&self) -> usize {
        match *self {
            OperatorKind::Heat { dim } | OperatorKind::Wave { dim } => dim,
        }
    }

    pub fn validate(&self) -> Result<(), SpectralError> {
        match *self {
            OperatorKind::Heat { dim: 0 } => {
                Err(SpectralError::UnsupportedOperator("heat needs dimension >= 1".into()))
            }
            OperatorKind::Wave { dim } if !(1..=3).contains(&dim) => Err(SpectralError::UnsupportedOperator(
                format!("wave equation is covered for d in 1..=3, got d = {dim}"),
            )),
            _ => Ok(()),
        }
    }

    /// `𝓕Γ(t)` as a function of `|ξ|`.
    pub fn fourier_radial(&self, t: f64, rho: f64) -> f64 {
        match self {
            OperatorKind::Heat { .. } => (-4.0 * PI * PI * t * rho * rho).exp(),
            OperatorKind::Wave { .. } => {
                let omega = 2.0 * PI * rho;
                if omega * t < 1e-8 {
                    t
                } else {
                    (omega * t).sin() / omega
                }
            }
        }
    }

    /// `∫_0^t |𝓕Γ(s)(ρ)|² ds` in closed form.
    pub fn energy_radial(&self, t: f64, rho: f64) -> f64 {
        match self {
            OperatorKind::Heat { .. } => {
                let a = 8.0 * PI * PI * rho * rho;
                if a * t < 1e-12 {
                    t
                } else {
                    -(-a * t).exp_m1() / a
                }
            }
            OperatorKind::Wave { .. } => {
                let omega = 2.0 * PI * rho;
                let x = omega * t;
                if x < 1e-2 {
                    let w2 = omega * omega;
                    t.powi(3) / 3.0 - w2 * t.powi(5) / 15.0 + 2.0 * w2 * w2 * t.powi(7) / 315.0
                } else {
                    (0.5 * t - (2.0 * x).sin() / (4.0 * omega)) / (omega * omega)
                }
            }
        }
    }

    /// Coefficient `A` in `energy_radial(t, ρ) ~ A ρ^{-2}` as `ρ → ∞`.
    pub fn energy_tail_coef(&self, t: f64) -> f64 {
        match self {
            OperatorKind::Heat { .. } => 1.0 / (8.0 * PI * PI),
            OperatorKind::Wave { .. } => t / (8.0 * PI * PI),
        }
    }

    /// Radial scale over which `energy_radial(t, ·)` varies.
    fn energy_scale(&self, t: f64) -> f64 {
        match self {
            OperatorKind::Heat { .. } => 1.0 / (2.0 * PI * (2.0 * t).sqrt()),
            OperatorKind::Wave { .. } => 1.0 / (2.0 * t),
        }
    }
}

/// Piecewise-linear radial spectral density, zero beyond its last knot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabulatedDensity {
    radius: Vec<f64>,
    density: Vec<f64>,
}

impl TabulatedDensity {
    pub fn new(radius: Vec<f64>, density: Vec<f64>) -> Result<Self, SpectralError> {
        if radius.len() < 2 || radius.len() != density.len() {
            return Err(SpectralError::InvalidCorrelation(
                "tabulated density needs at least two (radius, density) rows".into(),
            ));
        }
        if radius[0] < 0.0 || radius.windows(2).any(|w| w[1] <= w[0]) {
            return Err(SpectralError::InvalidCorrelation(
                "tabulated radii must be nonnegative and strictly increasing".into(),
            ));
        }
        if density.iter().any(|d| !(*d >= 0.0 && d.is_finite())) {
            return Err(SpectralError::InvalidCorrelation(
                "tabulated density must be finite and nonnegative".into(),
            ));
        }
        Ok(TabulatedDensity { radius, density })
    }

    /// Reads a two-column CSV `(xi_radius, density)` with a header row.
    pub fn from_csv(path: &Path) -> Result<Self, SpectralError> {
        let bad = |e: String| SpectralError::InvalidCorrelation(format!("{}: {e}", path.display()));
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| bad(e.to_string()))?;
        let (mut radius, mut density) = (Vec::new(), Vec::new());
        for record in reader.records() {
            let record = record.map_err(|e| bad(e.to_string()))?;
            if record.len() != 2 {
                return Err(bad(format!("expected 2 columns, found {}", record.len())));
            }
            let parse = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("{s:?}: {e}")));
            radius.push(parse(&record[0])?);
            density.push(parse(&record[1])?);
        }
        TabulatedDensity::new(radius, density)
    }

    pub fn radius(&self) -> &[f64] {
        &self.radius
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    pub fn eval(&self, rho: f64) -> f64 {
        quadrature::interpolate(&self.radius, &self.density, rho)
    }
}

/// Spatial correlation of the noise, given through its spectral measure `μ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Correlation {
    /// `Λ = δ_0`, `μ` = Lebesgue measure.
    WhiteNoise,
    /// `Λ(dx) = |x|^{-ε} dx`, `μ(dξ) = c_{d,ε} |ξ|^{ε-d} dξ`.
    Riesz { epsilon: f64 },
    Tabulated(TabulatedDensity),
}

/// Normalization `c_{d,ε} = π^{ε-d/2} Γ((d-ε)/2) / Γ(ε/2)` of the Fourier
/// transform of `|x|^{-ε}` under the `e^{-2πi x·ξ}` convention.
pub fn riesz_constant(dim: usize, epsilon: f64) -> f64 {
    let d = dim as f64;
    PI.powf(epsilon - 0.5 * d) * gamma(0.5 * (d - epsilon)) / gamma(0.5 * epsilon)
}

/// Area of the unit sphere in `ℝ^d` (`2` points for `d = 1`).
pub fn sphere_area(dim: usize) -> f64 {
    let d = dim as f64;
    2.0 * PI.powf(0.5 * d) / gamma(0.5 * d)
}

/// Volume of the unit ball in `ℝ^d`.
pub fn ball_volume(dim: usize) -> f64 {
    let d = dim as f64;
    PI.powf(0.5 * d) / gamma(0.5 * d + 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralModel {
    pub operator: OperatorKind,
    pub correlation: Correlation,
    pub horizon: f64,
}

impl SpectralModel {
    pub fn new(operator: OperatorKind, correlation: Correlation, horizon: f64) -> Result<Self, SpectralError> {
        let model = SpectralModel {
            operator,
            correlation,
            horizon,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<(), SpectralError> {
        self.operator.validate()?;
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(SpectralError::BadHorizon(self.horizon));
        }
        if let Correlation::Riesz { epsilon } = self.correlation {
            let d = self.dim() as f64;
            if !(epsilon > 0.0 && epsilon < d) {
                return Err(SpectralError::InvalidCorrelation(format!(
                    "Riesz exponent must satisfy 0 < epsilon < d = {d}, got {epsilon}"
                )));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.operator.dim()
    }

    /// Spectral density `dμ/dξ` at `|ξ| = ρ` (infinite at `0` for Riesz).
    pub fn density(&self, rho: f64) -> f64 {
        match &self.correlation {
            Correlation::WhiteNoise => 1.0,
            Correlation::Riesz { epsilon } => {
                riesz_constant(self.dim(), *epsilon) * rho.powf(epsilon - self.dim() as f64)
            }
            Correlation::Tabulated(t) => t.eval(rho),
        }
    }

    /// `μ` of the ball `|ξ| ≤ r`.
    pub fn ball_mass(&self, r: f64) -> f64 {
        let d = self.dim();
        match &self.correlation {
            Correlation::WhiteNoise => ball_volume(d) * r.powi(d as i32),
            Correlation::Riesz { epsilon } => {
                riesz_constant(d, *epsilon) * sphere_area(d) * r.powf(*epsilon) / epsilon
            }
            Correlation::Tabulated(_) => {
                quadrature::truncated_radial(&self.radial_measure(), &|_| 1.0, r, r, 1e-12)
            }
        }
    }

    /// `μ` after integrating out the angles.
    pub fn radial_measure(&self) -> RadialMeasure {
        let d = self.dim();
        match &self.correlation {
            Correlation::WhiteNoise => RadialMeasure::Power {
                coef: sphere_area(d),
                exponent: d as f64 - 1.0,
            },
            Correlation::Riesz { epsilon } => RadialMeasure::Power {
                coef: sphere_area(d) * riesz_constant(d, *epsilon),
                exponent: epsilon - 1.0,
            },
            Correlation::Tabulated(t) => RadialMeasure::Table {
                surface: sphere_area(d),
                dim: d,
                radius: t.radius.clone(),
                density: t.density.clone(),
            },
        }
    }

    /// Exponent `p` with `∫ μ(dξ)/(1+|ξ|²)` integrand `~ ρ^p` at infinity.
    pub fn dalang_tail_exponent(&self) -> Option<f64> {
        match &self.correlation {
            Correlation::WhiteNoise => Some(self.dim() as f64 - 3.0),
            Correlation::Riesz { epsilon } => Some(epsilon - 3.0),
            Correlation::Tabulated(_) => None,
        }
    }
}

/// `𝓕Γ(t)(ξ)`; real for the supported operators.
pub fn fourier_green(op: OperatorKind, t: f64, xi: &[f64]) -> Result<Complex64, SpectralError> {
    op.validate()?;
    if xi.len() != op.dim() {
        return Err(SpectralError::DimensionMismatch {
            expected: op.dim(),
            got: xi.len(),
        });
    }
    if t < 0.0 {
        return Err(SpectralError::OutOfHorizon { t, horizon: f64::INFINITY });
    }
    let rho = xi.iter().map(|x| x * x).sum::<f64>().sqrt();
    Ok(Complex64::new(op.fourier_radial(t, rho), 0.0))
}

/// `Γ(t, ℝ^d)`.
pub fn green_mass(op: OperatorKind, t: f64) -> f64 {
    match op {
        OperatorKind::Heat { .. } => 1.0,
        OperatorKind::Wave { .. } => t.max(0.0),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureOptions {
    pub rel_tol: f64,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        QuadratureOptions { rel_tol: 1e-6 }
    }
}

fn check_times(model: &SpectralModel, times: &[f64]) -> Result<(), SpectralError> {
    for &t in times {
        if !(t >= 0.0 && t <= model.horizon * (1.0 + 1e-12)) {
            return Err(SpectralError::OutOfHorizon {
                t,
                horizon: model.horizon,
            });
        }
    }
    Ok(())
}

/// Truncation radius for the body of the radial integral at time `t`.
fn radial_cutoff(op: OperatorKind, t: f64) -> f64 {
    match op {
        // Beyond this radius exp(-8π²tρ²) < e^{-60}.
        OperatorKind::Heat { .. } => (60.0 / (8.0 * PI * PI * t)).sqrt().max(64.0),
        OperatorKind::Wave { .. } => (256.0 / t).max(64.0),
    }
}

/// `Φ(t) = ∫_0^t ∫ |𝓕Γ(s)(ξ)|² μ(dξ) ds` for each time.
///
/// The time integral is done in closed form per frequency, the radial
/// integral adaptively with an analytic algebraic tail.
pub fn compute_phi(model: &SpectralModel, times: &[f64], opts: &QuadratureOptions) -> Result<Vec<f64>, SpectralError> {
    model.validate()?;
    check_times(model, times)?;
    let measure = model.radial_measure();
    let op = model.operator;
    times
        .iter()
        .map(|&t| {
            if t == 0.0 {
                return Ok(0.0);
            }
            let kernel = |rho: f64| op.energy_radial(t, rho);
            quadrature::radial_integral(
                &measure,
                &kernel,
                op.energy_tail_coef(t),
                op.energy_scale(t),
                radial_cutoff(op, t),
                opts.rel_tol,
            )
            .ok_or_else(|| {
                SpectralError::IllPosed(format!(
                    "the variance integral diverges at infinity (tail exponent {:?} >= -1)",
                    model.dalang_tail_exponent()
                ))
            })
        })
        .collect()
}

/// `Ψ(t) = ∫_0^t Γ(s, ℝ^d) ds` by composite Simpson in time.
pub fn compute_psi(model: &SpectralModel, times: &[f64]) -> Result<Vec<f64>, SpectralError> {
    model.validate()?;
    check_times(model, times)?;
    let op = model.operator;
    Ok(times
        .iter()
        .map(|&t| quadrature::adaptive_simpson(&|s| green_mass(op, s), 0.0, t, 1e-14, 4))
        .collect())
}

/// `Φ`, `Ψ` and `sup Γ(t, ℝ^d)` on a time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceProfile {
    pub times: Vec<f64>,
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
    pub gamma_sup: f64,
}

impl VarianceProfile {
    pub fn compute(model: &SpectralModel, times: &[f64], opts: &QuadratureOptions) -> Result<Self, SpectralError> {
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(SpectralError::OutOfHorizon {
                t: f64::NAN,
                horizon: model.horizon,
            });
        }
        let gamma_sup = times
            .iter()
            .chain(std::iter::once(&0.0))
            .map(|&t| green_mass(model.operator, t))
            .fold(0.0, f64::max);
        Ok(VarianceProfile {
            times: times.to_vec(),
            phi: compute_phi(model, times, opts)?,
            psi: compute_psi(model, times)?,
            gamma_sup,
        })
    }

    /// Uniform grid `T/n, 2T/n, ..., T`.
    pub fn uniform(model: &SpectralModel, n: usize, opts: &QuadratureOptions) -> Result<Self, SpectralError> {
        let times: Vec<f64> = (1..=n).map(|i| model.horizon * i as f64 / n as f64).collect();
        Self::compute(model, &times, opts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn heat1_white(h: f64) -> SpectralModel {
        SpectralModel::new(OperatorKind::Heat { dim: 1 }, Correlation::WhiteNoise, h).unwrap()
    }

    #[test]
    fn wave_dimension_is_bounded() {
        assert!(OperatorKind::wave(4).is_err());
        assert!(OperatorKind::heat(0).is_err());
        assert!(OperatorKind::heat(7).is_ok());
        assert!(fourier_green(OperatorKind::Wave { dim: 5 }, 1.0, &[0.0; 5]).is_err());
    }

    #[test]
    fn riesz_exponent_range() {
        let op = OperatorKind::Heat { dim: 2 };
        assert!(SpectralModel::new(op, Correlation::Riesz { epsilon: 2.0 }, 1.0).is_err());
        assert!(SpectralModel::new(op, Correlation::Riesz { epsilon: 0.0 }, 1.0).is_err());
        assert!(SpectralModel::new(op, Correlation::Riesz { epsilon: 1.5 }, 1.0).is_ok());
    }

    #[test]
    fn wave_d1_zero_frequency_is_time() {
        let v = fourier_green(OperatorKind::Wave { dim: 1 }, 0.7, &[0.0]).unwrap();
        assert_eq!(v, Complex64::new(0.7, 0.0));
    }

    #[test]
    fn green_at_time_zero() {
        for xi in [0.0, 0.3, 5.0] {
            let h = fourier_green(OperatorKind::Heat { dim: 1 }, 0.0, &[xi]).unwrap();
            let w = fourier_green(OperatorKind::Wave { dim: 1 }, 0.0, &[xi]).unwrap();
            assert_eq!(h.re, 1.0);
            assert_eq!(w.re, 0.0);
        }
    }

    #[test]
    fn masses() {
        assert_eq!(green_mass(OperatorKind::Heat { dim: 3 }, 0.4), 1.0);
        assert_eq!(green_mass(OperatorKind::Wave { dim: 3 }, 0.4), 0.4);
        assert_eq!(green_mass(OperatorKind::Wave { dim: 1 }, 0.4), 0.4);
    }

    #[test]
    fn energy_series_matches_closed_form_near_switch() {
        let op = OperatorKind::Wave { dim: 1 };
        let t = 0.5;
        let rho = 0.0099 / (2.0 * PI * t);
        let omega = 2.0 * PI * rho;
        let direct = (0.5 * t - (2.0 * omega * t).sin() / (4.0 * omega)) / (omega * omega);
        assert_relative_eq!(op.energy_radial(t, rho), direct, max_relative = 1e-6);
    }

    #[test]
    fn phi_heat_white_closed_form() {
        let m = heat1_white(1.0);
        let times = [0.05, 0.3, 1.0];
        let phi = compute_phi(&m, &times, &QuadratureOptions::default()).unwrap();
        for (t, p) in times.iter().zip(phi) {
            assert_relative_eq!(p, (t / (2.0 * PI)).sqrt(), max_relative = 1e-6);
        }
    }

    #[test]
    fn phi_vanishes_at_zero_and_rejects_out_of_horizon() {
        let m = heat1_white(1.0);
        assert_eq!(compute_phi(&m, &[0.0], &QuadratureOptions::default()).unwrap(), vec![0.0]);
        assert!(compute_phi(&m, &[1.5], &QuadratureOptions::default()).is_err());
    }

    #[test]
    fn phi_white_noise_heat_2d_is_ill_posed() {
        let m = SpectralModel::new(OperatorKind::Heat { dim: 2 }, Correlation::WhiteNoise, 1.0).unwrap();
        assert!(matches!(
            compute_phi(&m, &[0.5], &QuadratureOptions::default()),
            Err(SpectralError::IllPosed(_))
        ));
    }

    #[test]
    fn psi_closed_forms() {
        let heat = heat1_white(2.0);
        let wave = SpectralModel::new(OperatorKind::Wave { dim: 3 }, Correlation::Riesz { epsilon: 1.0 }, 2.0).unwrap();
        let times = [0.0, 0.5, 2.0];
        let ph = compute_psi(&heat, &times).unwrap();
        let pw = compute_psi(&wave, &times).unwrap();
        for i in 0..3 {
            assert_relative_eq!(ph[i], times[i], epsilon = 1e-14);
            assert_relative_eq!(pw[i], times[i] * times[i] / 2.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn riesz_constant_matches_gaussian_pairing() {
        // ∫ |x|^{-ε} e^{-π|x|²} dx = ∫ μ(dξ) e^{-π|ξ|²}, since e^{-π|x|²} is self-dual.
        for (d, eps) in [(1usize, 0.5f64), (2, 1.0), (3, 1.0), (3, 2.5)] {
            let s = sphere_area(d);
            let g = |r: f64| (-PI * r * r).exp();
            let lhs = s * quadrature::radial_integral(
                &RadialMeasure::Power { coef: 1.0, exponent: d as f64 - 1.0 - eps },
                &g, 0.0, 1.0, 16.0, 1e-10,
            )
            .unwrap();
            let rhs = riesz_constant(d, eps)
                * s
                * quadrature::radial_integral(&RadialMeasure::Power { coef: 1.0, exponent: eps - 1.0 }, &g, 0.0, 1.0, 16.0, 1e-10)
                    .unwrap();
            assert_relative_eq!(lhs, rhs, max_relative = 1e-7);
        }
    }

    #[test]
    fn tabulated_density_validation() {
        assert!(TabulatedDensity::new(vec![0.0, 1.0], vec![1.0, -1.0]).is_err());
        assert!(TabulatedDensity::new(vec![1.0, 0.5], vec![1.0, 1.0]).is_err());
        let t = TabulatedDensity::new(vec![0.0, 2.0], vec![1.0, 0.0]).unwrap();
        assert_eq!(t.eval(1.0), 0.5);
        assert_eq!(t.eval(3.0), 0.0);
    }

    #[test]
    fn tabulated_density_from_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mu.csv");
        std::fs::write(&path, "xi_radius,density\n0,1\n1, 0.5\n2,0\n").unwrap();
        let t = TabulatedDensity::from_csv(&path).unwrap();
        assert_eq!(t.radius(), &[0.0, 1.0, 2.0]);
        std::fs::write(&path, "0,1\n1,0.5\n").unwrap();
        // First row is taken as the header, leaving a single data row.
        assert!(TabulatedDensity::from_csv(&path).is_err());
    }
}
