mod common;

use nvlab::discrete::LatticeModel;
use nvlab::lattice::Lattice;
use nvlab::nv::{
    decompose_g_f, density_from_g, estimate_g_f, mehler_samples, MehlerOptions, NvError, RegressionOptions,
    ThetaQuadrature,
};
use nvlab::solver::DriftSpec;
use nvlab::spectral::{Correlation, OperatorKind, SpectralModel};

fn heat1d(points: usize, steps: usize) -> LatticeModel {
    let model = SpectralModel::new(OperatorKind::Heat { dim: 1 }, Correlation::WhiteNoise, 0.5).unwrap();
    let lat = Lattice::new(1, 4.0, points, 0.5, steps, 1.0).unwrap();
    LatticeModel::new(model, lat).unwrap()
}

#[test]
fn laguerre_rules_integrate_exponentials() {
    let q = ThetaQuadrature::gauss_laguerre(8);
    assert!((q.weights.iter().sum::<f64>() - 1.0).abs() < 1e-13);
    let q10 = ThetaQuadrature::gauss_laguerre(10);
    assert!((q10.integrate(|t| (-t).exp()) - 0.5).abs() < 1e-8);
    // Eight nodes leave an error of about 7e-8 on the same integrand.
    let e8 = (q.integrate(|t| (-t).exp()) - 0.5).abs();
    assert!(e8 > 1e-8 && e8 < 1e-7, "{e8}");
}

#[test]
fn zero_drift_g_equals_lattice_variance() {
    let c = heat1d(32, 20);
    let s = mehler_samples(&c, &DriftSpec::Zero, 1, 500, &[10, 20], &MehlerOptions::default()).unwrap();
    for samples in &s {
        let g = estimate_g_f(samples, &RegressionOptions::default()).unwrap();
        let phi = c.phi_lattice()[samples.target];
        assert!((samples.phi_lattice - phi).abs() < 1e-15);
        assert!(g.g.iter().all(|v| (v / phi - 1.0).abs() < 1e-8), "target {}", samples.target);
        assert!(g.se.iter().all(|&v| v < 1e-10 * phi));
    }
}

#[test]
fn linear_drift_g_equals_second_moment_oracle() {
    let c = heat1d(32, 20);
    let lambda = 0.6;
    let oracle = common::linear_variance(c.model().operator, c.lattice(), c.weights(), lambda);
    let s = mehler_samples(&c, &DriftSpec::Linear { lambda }, 2, 300, &[20], &MehlerOptions::default()).unwrap();
    let g = estimate_g_f(&s[0], &RegressionOptions::default()).unwrap();
    for v in &g.g {
        assert!((v / oracle[20] - 1.0).abs() < 1e-8, "{v} vs {}", oracle[20]);
    }
}

#[test]
fn decomposition_holds_record_by_record() {
    let c = heat1d(32, 20);
    let opts = MehlerOptions::default();
    let wsum: f64 = opts.quadrature.weights.iter().sum();
    for drift in [DriftSpec::Arctan { a: 1.5 }, DriftSpec::Sine { a: 1.0 }] {
        let s = mehler_samples(&c, &drift, 3, 40, &[12, 20], &opts).unwrap();
        for samples in &s {
            for r in &samples.records {
                let rhs = wsum * samples.phi_lattice + r.a1 + r.a2 + r.a3;
                assert!((r.y - rhs).abs() < 1e-12 * r.y.abs().max(samples.phi_lattice), "{drift:?} path {}", r.path);
            }
        }
        let d = decompose_g_f(&s[1], 0.0, &RegressionOptions { bootstrap: 20, min_effective_n: 5.0, ..Default::default() }).unwrap();
        let scale = d.g.iter().copied().fold(0.0, f64::max);
        // Kernel smoothing is linear in the response.
        assert!(d.residual.iter().all(|r| r.abs() < 1e-10 * scale));
    }
}

#[test]
fn bootstrap_se_shrinks_as_inverse_root_paths() {
    let c = heat1d(16, 12);
    let drift = DriftSpec::Arctan { a: 2.0 };
    let all = mehler_samples(&c, &drift, 4, 1600, &[12], &MehlerOptions::default()).unwrap().remove(0);
    let opts = RegressionOptions {
        bootstrap: 400,
        bandwidth: Some(0.15),
        grid_points: 21,
        quantile_range: (0.2, 0.8),
        ..Default::default()
    };
    let mean_se = |n: usize| {
        let mut s = all.clone();
        s.records.truncate(n);
        let g = estimate_g_f(&s, &opts).unwrap();
        g.se.iter().sum::<f64>() / g.se.len() as f64
    };
    let ratio = mean_se(400) / mean_se(800);
    assert!((1.3..=1.5).contains(&ratio), "{ratio}");
    let ratio = mean_se(800) / mean_se(1600);
    assert!((1.3..=1.5).contains(&ratio), "{ratio}");
}

#[test]
fn nonlinear_density_has_unit_mass() {
    let c = heat1d(32, 20);
    let s = mehler_samples(&c, &DriftSpec::Arctan { a: 1.0 }, 7, 20000, &[20], &MehlerOptions::default())
        .unwrap()
        .remove(0);
    let g = estimate_g_f(&s, &RegressionOptions { quantile_range: (0.0005, 0.9995), ..Default::default() }).unwrap();
    let rho = density_from_g(&g, s.mean_abs_f()).unwrap();
    assert!((rho.mass - 1.0).abs() < 0.02, "{}", rho.mass);
}

#[test]
fn density_refuses_non_positive_g() {
    let c = heat1d(16, 8);
    let s = mehler_samples(&c, &DriftSpec::Zero, 1, 200, &[8], &MehlerOptions::default()).unwrap().remove(0);
    let mut g = estimate_g_f(&s, &RegressionOptions::default()).unwrap();
    let mid = g.g.len() / 2;
    g.g[mid] = 0.0;
    assert!(matches!(density_from_g(&g, s.mean_abs_f()), Err(NvError::NonPositiveG { .. })));
    assert!(matches!(mehler_samples(&c, &DriftSpec::Zero, 1, 1, &[8], &MehlerOptions::default()), Err(NvError::TooFewPaths { .. })));
}
