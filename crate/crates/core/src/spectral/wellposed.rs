//! Well-posedness verdicts and the small-time condition for `T₀`.

use serde::{Deserialize, Serialize};

use super::{green_mass, quadrature, OperatorKind, SpectralError, SpectralModel, VarianceProfile};

/// Cutoffs `10^1, ..., 10^6` for the truncated radial integrals.
const CUTOFF_DECADES: std::ops::RangeInclusive<i32> = 1..=6;
/// Estimated exponents must clear `-1` by this margin to count as integrable.
const EXPONENT_MARGIN: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailDiagnostic {
    pub quantity: String,
    /// Exponent `p` of the radial integrand `~ ρ^p` when known analytically.
    pub known_exponent: Option<f64>,
    /// `None` when the integrand has bounded support.
    pub estimated_exponent: Option<f64>,
    pub cutoffs: Vec<f64>,
    pub truncated: Vec<f64>,
    pub convergent: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WellPosedness {
    pub satisfied: bool,
    pub phi: TailDiagnostic,
    pub dalang: TailDiagnostic,
    pub gamma_sup: f64,
    pub mass_bounded: bool,
    /// `∫ μ(dξ)/(1+|ξ|²)` when finite.
    pub dalang_integral: Option<f64>,
}

fn tail_test<K: Fn(f64) -> f64>(
    model: &SpectralModel,
    quantity: &str,
    kernel: &K,
    scale: f64,
    known_exponent: Option<f64>,
) -> TailDiagnostic {
    let measure = model.radial_measure();
    let cutoffs: Vec<f64> = CUTOFF_DECADES.map(|k| 10f64.powi(k)).collect();
    let mut truncated = Vec::with_capacity(cutoffs.len());
    let mut previous = 0.0;
    let mut lower = 0.0;
    for &c in &cutoffs {
        // Integrate decade by decade so each piece gets its own tolerance.
        let piece = decade_piece(&measure, kernel, scale, lower, c);
        previous += piece;
        truncated.push(previous);
        lower = c;
    }
    let n = truncated.len();
    let last = truncated[n - 1] - truncated[n - 2];
    let prior = truncated[n - 2] - truncated[n - 3];
    let (estimated_exponent, convergent) = if last == 0.0 && prior == 0.0 {
        (None, true)
    } else if last <= 0.0 || prior <= 0.0 {
        // Support ends inside the last decades: increments shrink to zero.
        (None, last <= prior)
    } else {
        let p = (last / prior).log10() - 1.0;
        (Some(p), p < -1.0 - EXPONENT_MARGIN)
    };
    TailDiagnostic {
        quantity: quantity.to_string(),
        known_exponent,
        estimated_exponent,
        cutoffs,
        truncated,
        convergent,
    }
}

fn decade_piece<K: Fn(f64) -> f64>(
    measure: &quadrature::RadialMeasure,
    kernel: &K,
    scale: f64,
    lower: f64,
    upper: f64,
) -> f64 {
    if lower == 0.0 {
        let rough = quadrature::truncated_radial(measure, kernel, scale, upper, f64::MAX).abs();
        return quadrature::truncated_radial(measure, kernel, scale, upper, 1e-9 * rough.max(1e-300));
    }
    let head = quadrature::truncated_radial(measure, kernel, scale, lower, 1e-9);
    let rough = quadrature::truncated_radial(measure, kernel, scale, upper, f64::MAX).abs();
    quadrature::truncated_radial(measure, kernel, scale, upper, 1e-9 * rough.max(1e-300)) - head
}

/// Checks `∫_0^T ∫ |𝓕Γ|² dμ dt < ∞`, `sup_t Γ(t, ℝ^d) < ∞` and Dalang's
/// condition `∫ μ(dξ)/(1+|ξ|²) < ∞`, each by the growth of truncated radial
/// integrals over decades of cutoff.
pub fn check_wellposed(model: &SpectralModel) -> WellPosedness {
    let op = model.operator;
    let horizon = model.horizon;
    let known = model.dalang_tail_exponent();
    let phi = tail_test(
        model,
        "variance",
        &|rho| op.energy_radial(horizon, rho),
        op.energy_scale(horizon),
        known,
    );
    let dalang = tail_test(model, "dalang", &|rho: f64| 1.0 / (1.0 + rho * rho), 1.0, known);

    let gamma_sup = match op {
        OperatorKind::Heat { .. } => 1.0,
        OperatorKind::Wave { .. } => green_mass(op, horizon),
    };
    let mass_bounded = gamma_sup.is_finite();
    let dalang_integral = if dalang.convergent {
        quadrature::radial_integral(
            &model.radial_measure(),
            &|rho: f64| 1.0 / (1.0 + rho * rho),
            1.0,
            1.0,
            1e4,
            1e-8,
        )
    } else {
        None
    };
    WellPosedness {
        satisfied: phi.convergent && dalang.convergent && mass_bounded,
        phi,
        dalang,
        gamma_sup,
        mass_bounded,
        dalang_integral,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct T0Verdict {
    pub t0: f64,
    pub lip: f64,
    pub k1: f64,
    /// `k₂` evaluated at `T₀`.
    pub k2: f64,
    /// `k₁ − k₂(Ψ(T₀)+Ψ(T₀)²)`.
    pub margin: f64,
}

/// `k₂(t) = 2·e^{2·lip·Ψ(t)}·max(lip, lip²)`.
pub fn smallness_k2(lip: f64, psi: f64) -> f64 {
    2.0 * (2.0 * lip * psi).exp() * lip.max(lip * lip)
}

/// Largest grid time with `k₁ − k₂(Ψ(t)+Ψ(t)²) > 0`, `k₁ = 1`.
pub fn t0_condition(profile: &VarianceProfile, lip: f64) -> Result<T0Verdict, SpectralError> {
    if !(lip >= 0.0 && lip.is_finite()) {
        return Err(SpectralError::InvalidCorrelation(format!(
            "Lipschitz bound must be finite and nonnegative, got {lip}"
        )));
    }
    let k1 = 1.0;
    let mut best = None;
    for (&t, &psi) in profile.times.iter().zip(&profile.psi) {
        let k2 = smallness_k2(lip, psi);
        let margin = k1 - k2 * (psi + psi * psi);
        if margin > 0.0 {
            best = Some(T0Verdict { t0: t, lip, k1, k2, margin });
        } else {
            break;
        }
    }
    best.ok_or(SpectralError::NoFeasibleT0 {
        first_time: profile.times.first().copied().unwrap_or(f64::NAN),
    })
}
