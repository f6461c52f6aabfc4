use std::f64::consts::PI;
use std::time::Instant;

use num_complex::Complex64;
use nvlab::lattice::{Lattice, LatticeFft};
use nvlab::spectral::{
    check_wellposed, compute_phi, compute_psi, fourier_green, riesz_constant, t0_condition, Correlation,
    OperatorKind, QuadratureOptions, SpectralModel, TabulatedDensity, VarianceProfile,
};
use proptest::prelude::*;
use statrs::function::gamma::gamma;

fn model(op: OperatorKind, c: Correlation, horizon: f64) -> SpectralModel {
    SpectralModel::new(op, c, horizon).unwrap()
}

#[test]
fn heat_white_variance_is_square_root_law() {
    let m = model(OperatorKind::Heat { dim: 1 }, Correlation::WhiteNoise, 1.0);
    let times = [0.01, 0.1, 0.25, 0.5, 1.0];
    let phi = compute_phi(&m, &times, &QuadratureOptions::default()).unwrap();
    for (t, p) in times.iter().zip(phi) {
        let exact = (t / (2.0 * PI)).sqrt();
        assert!((p / exact - 1.0).abs() < 1e-6, "t={t}: {p} vs {exact}");
    }
}

/// Heat with Riesz density `c|ξ|^{ε−d}`: radial Gamma integral, then the
/// time integral of `s^{−ε/2}`.
#[test]
fn heat_riesz_variance_matches_gamma_integral() {
    for (d, eps) in [(1, 0.5), (2, 1.0), (3, 1.0), (3, 1.7)] {
        let m = model(OperatorKind::Heat { dim: d }, Correlation::Riesz { epsilon: eps }, 1.0);
        let c = PI.powf(eps - d as f64 / 2.0) * gamma((d as f64 - eps) / 2.0) / gamma(eps / 2.0);
        assert!((riesz_constant(d, eps) / c - 1.0).abs() < 1e-12);
        let area = 2.0 * PI.powf(d as f64 / 2.0) / gamma(d as f64 / 2.0);
        for t in [0.1f64, 0.7] {
            let exact = c * area * 0.5 * gamma(eps / 2.0) * (8.0 * PI * PI).powf(-eps / 2.0) * t.powf(1.0 - eps / 2.0)
                / (1.0 - eps / 2.0);
            let got = compute_phi(&m, &[t], &QuadratureOptions::default()).unwrap()[0];
            assert!((got / exact - 1.0).abs() < 1e-5, "d={d} eps={eps} t={t}: {got} vs {exact}");
        }
    }
}

#[test]
fn wave_variances_have_closed_forms() {
    let opts = QuadratureOptions::default();
    // d = 1, white: ∫_0^t ∫ sin²(2πsρ)/(2πρ)² dρ ds = t²/4.
    let m = model(OperatorKind::Wave { dim: 1 }, Correlation::WhiteNoise, 2.0);
    for t in [0.3, 1.0, 2.0] {
        let p = compute_phi(&m, &[t], &opts).unwrap()[0];
        assert!((p / (t * t / 4.0) - 1.0).abs() < 1e-4, "{t}: {p}");
    }
    // d = 3, Riesz ε = 1: Λ(x) = 1/|x| against the surface measure gives t²/2.
    let m = model(OperatorKind::Wave { dim: 3 }, Correlation::Riesz { epsilon: 1.0 }, 1.0);
    for t in [0.5, 1.0] {
        let p = compute_phi(&m, &[t], &opts).unwrap()[0];
        assert!((p / (t * t / 2.0) - 1.0).abs() < 1e-4, "{t}: {p}");
    }
}

/// Cartesian tensor-grid quadrature in `ξ` for a tabulated isotropic density
/// on `ℝ²`, with the time integral done by hand.
#[test]
fn tabulated_density_matches_cartesian_quadrature() {
    let radius: Vec<f64> = (0..=4000).map(|i| i as f64 * 0.0025).collect();
    let density: Vec<f64> = radius.iter().map(|r| (-r * r).exp()).collect();
    let tab = TabulatedDensity::new(radius, density).unwrap();
    let m = model(OperatorKind::Heat { dim: 2 }, Correlation::Tabulated(tab), 1.0);
    let t = 0.05;
    let h = 0.005;
    let n = (6.0 / h) as i64;
    let mut sum = 0.0;
    for i in -n..=n {
        for j in -n..=n {
            let r2 = ((i * i + j * j) as f64) * h * h;
            let a = 8.0 * PI * PI * r2;
            let time = if a * t < 1e-8 { t } else { (1.0 - (-a * t).exp()) / a };
            sum += time * (-r2).exp();
        }
    }
    let cart = sum * h * h;
    let got = compute_phi(&m, &[t], &QuadratureOptions::default()).unwrap()[0];
    assert!((got / cart - 1.0).abs() < 1e-4, "{got} vs {cart}");
}

/// The lattice transform of the sampled heat kernel `(4πt)^{-1/2} e^{-x²/4t}`
/// reproduces the Fourier multiplier.
#[test]
fn heat_multiplier_is_fft_of_heat_kernel() {
    let lat = Lattice::new(1, 20.0, 512, 1.0, 1, 1.0).unwrap();
    let t = 0.3;
    let dx = lat.spacing();
    let mut buf: Vec<Complex64> = (0..lat.points())
        .map(|i| {
            let x = lat.signed_index(i) as f64 * dx;
            Complex64::new((-x * x / (4.0 * t)).exp() / (4.0 * PI * t).sqrt() * dx, 0.0)
        })
        .collect();
    LatticeFft::new(&lat).forward(&mut buf);
    for k in [0usize, 1, 5, 20, 40] {
        let xi = lat.frequency(k);
        let exact = fourier_green(OperatorKind::Heat { dim: 1 }, t, &xi).unwrap();
        assert!((buf[k] - exact).norm() < 1e-10, "k={k}: {} vs {exact}", buf[k]);
    }
}

/// `𝓕Γ(t)(ξ)` for the d = 3 wave kernel against a direct quadrature of
/// `e^{-2πi x·ξ}` over the sphere of radius `t` with density `1/(4πt)`.
#[test]
fn wave3d_multiplier_is_sphere_average() {
    let t = 0.7;
    let (nt, np) = (400usize, 400usize);
    for xi in [[0.3, 0.0, 0.0], [0.2, -0.5, 0.9], [1.3, 0.4, -0.2]] {
        let mut acc = Complex64::new(0.0, 0.0);
        for a in 0..nt {
            let th = PI * (a as f64 + 0.5) / nt as f64;
            for b in 0..np {
                let ph = 2.0 * PI * (b as f64 + 0.5) / np as f64;
                let x = [t * th.sin() * ph.cos(), t * th.sin() * ph.sin(), t * th.cos()];
                let phase = -2.0 * PI * (x[0] * xi[0] + x[1] * xi[1] + x[2] * xi[2]);
                acc += Complex64::from_polar(1.0, phase) * (t * t * th.sin());
            }
        }
        let sphere = acc * (PI / nt as f64) * (2.0 * PI / np as f64) / (4.0 * PI * t);
        let got = fourier_green(OperatorKind::Wave { dim: 3 }, t, &xi).unwrap();
        assert!((sphere - got).norm() < 1e-5, "{xi:?}: {sphere} vs {got}");
    }
}

#[test]
fn cumulative_mass_is_t_or_half_t_squared() {
    let heat = model(OperatorKind::Heat { dim: 2 }, Correlation::Riesz { epsilon: 1.0 }, 1.0);
    let wave = model(OperatorKind::Wave { dim: 3 }, Correlation::Riesz { epsilon: 1.0 }, 1.0);
    let times = [0.2, 0.5, 1.0];
    let ph = compute_psi(&heat, &times).unwrap();
    let pw = compute_psi(&wave, &times).unwrap();
    for i in 0..3 {
        assert!((ph[i] - times[i]).abs() < 1e-12);
        assert!((pw[i] - times[i] * times[i] / 2.0).abs() < 1e-12);
    }
}

#[test]
fn dalang_scan_flips_between_1_9_and_2_1() {
    let start = Instant::now();
    for op in [OperatorKind::Heat { dim: 3 }, OperatorKind::Wave { dim: 3 }] {
        let verdicts: Vec<bool> = [0.5, 1.0, 1.5, 1.9, 2.1, 2.5]
            .iter()
            .map(|&e| check_wellposed(&model(op, Correlation::Riesz { epsilon: e }, 1.0)).satisfied)
            .collect();
        assert_eq!(verdicts, [true, true, true, true, false, false], "{op:?}");
    }
    assert!(start.elapsed().as_secs_f64() < 5.0);
}

#[test]
fn smallness_time_shrinks_with_lipschitz_constant() {
    let m = model(OperatorKind::Heat { dim: 1 }, Correlation::WhiteNoise, 1.0);
    let p = VarianceProfile::uniform(&m, 400, &QuadratureOptions::default()).unwrap();
    let t: Vec<f64> = [0.1, 0.5, 1.0, 2.0].iter().map(|&l| t0_condition(&p, l).unwrap().t0).collect();
    assert!(t.windows(2).all(|w| w[1] < w[0]), "{t:?}");
    assert!(t0_condition(&p, 0.0).unwrap().t0 == 1.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn variance_is_nondecreasing(eps in 0.1f64..1.9, t1 in 0.01f64..0.5, dt in 0.001f64..0.5) {
        let m = model(OperatorKind::Wave { dim: 2 }, Correlation::Riesz { epsilon: eps }, 1.0);
        let phi = compute_phi(&m, &[t1, t1 + dt], &QuadratureOptions::default()).unwrap();
        prop_assert!(phi[1] >= phi[0] * (1.0 - 1e-6));
    }

    #[test]
    fn heat_riesz_variance_scales_as_power(eps in 0.2f64..1.8, t in 0.02f64..0.4) {
        let m = model(OperatorKind::Heat { dim: 2 }, Correlation::Riesz { epsilon: eps }, 1.0);
        let phi = compute_phi(&m, &[t, 2.0 * t], &QuadratureOptions::default()).unwrap();
        let expected = 2f64.powf(1.0 - eps / 2.0);
        prop_assert!((phi[1] / phi[0] / expected - 1.0).abs() < 1e-4);
    }
}
