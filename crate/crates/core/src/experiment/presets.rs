//! Named experiment configurations.

use std::path::PathBuf;

use super::config::{
    ConfigError, CorrelationConfig, ExperimentConfig, LadderConfig, LatticeConfig, ModelConfig, SamplingConfig,
    ScanConfig, Tolerances,
};
use crate::solver::DriftSpec;
use crate::spectral::OperatorKind;

/// Preset names with one-line descriptions, in catalog order.
pub const CATALOG: &[(&str, &str)] = &[
    ("heat1d-white-b0", "heat d=1, space-time white noise, no drift (Gaussian oracle)"),
    ("heat1d-white-linear", "heat d=1, white noise, linear drift 0.5u (second-moment oracle)"),
    ("heat1d-white-arctan", "heat d=1, white noise, drift arctan(u) (sandwich ladder)"),
    ("heat2d-riesz-arctan", "heat d=2, Riesz noise eps=1, drift arctan(u)"),
    ("wave1d-white-arctan", "wave d=1, white noise, drift arctan(u)"),
    ("wave3d-riesz-sine", "wave d=3, Riesz noise eps=1, drift sin(u)"),
    ("dalang-scan", "well-posedness scan over Riesz exponents at d=3, heat and wave"),
];

pub fn preset_names() -> Vec<&'static str> {
    CATALOG.iter().map(|(n, _)| *n).collect()
}

fn heat1d(name: &str, drift: DriftSpec) -> ExperimentConfig {
    ExperimentConfig {
        name: name.into(),
        seed: 20240611,
        output_dir: PathBuf::from("runs"),
        workers: None,
        model: ModelConfig {
            operator: OperatorKind::Heat { dim: 1 },
            correlation: CorrelationConfig::WhiteNoise,
            horizon: 0.5,
        },
        drift,
        lattice: LatticeConfig {
            points: 256,
            side: 8.0,
            steps: 200,
            spectral_cutoff: 8.0,
        },
        sampling: SamplingConfig {
            n_paths: 10_000,
            nv_paths: 10_000,
            diag_paths: 600,
            n_primes: 1,
            theta_nodes: 8,
            bins: 20,
            bootstrap: 200,
            g_grid_points: 101,
            kde_points: 401,
        },
        ladder: LadderConfig {
            t0_candidates: vec![0.5],
            fractions: vec![0.25, 0.5, 1.0],
        },
        tolerances: Tolerances::default(),
        scan: None,
    }
}

fn arctan_ladder() -> LadderConfig {
    LadderConfig {
        t0_candidates: vec![0.5, 0.25],
        fractions: vec![0.125, 0.25, 0.5],
    }
}

pub fn preset(name: &str) -> Result<ExperimentConfig, ConfigError> {
    let cfg = match name {
        "heat1d-white-b0" => heat1d(name, DriftSpec::Zero),
        "heat1d-white-linear" => heat1d(name, DriftSpec::Linear { lambda: 0.5 }),
        "heat1d-white-arctan" => {
            let mut c = heat1d(name, DriftSpec::Arctan { a: 1.0 });
            c.sampling.nv_paths = 2000;
            c.sampling.diag_paths = 1000;
            c.ladder = arctan_ladder();
            c
        }
        "heat2d-riesz-arctan" => {
            let mut c = heat1d(name, DriftSpec::Arctan { a: 1.0 });
            c.model = ModelConfig {
                operator: OperatorKind::Heat { dim: 2 },
                correlation: CorrelationConfig::Riesz { epsilon: 1.0 },
                horizon: 0.25,
            };
            c.lattice = LatticeConfig {
                points: 64,
                side: 6.0,
                steps: 25,
                spectral_cutoff: 4.0,
            };
            c.sampling.n_paths = 4000;
            c.sampling.nv_paths = 1000;
            c.sampling.diag_paths = 600;
            c.ladder = LadderConfig {
                t0_candidates: vec![0.25],
                fractions: vec![0.125, 0.25, 0.5],
            };
            c
        }
        "wave1d-white-arctan" => {
            let mut c = heat1d(name, DriftSpec::Arctan { a: 1.0 });
            c.model = ModelConfig {
                operator: OperatorKind::Wave { dim: 1 },
                correlation: CorrelationConfig::WhiteNoise,
                horizon: 1.0,
            };
            c.lattice = LatticeConfig {
                points: 512,
                side: 16.0,
                steps: 200,
                spectral_cutoff: 12.0,
            };
            c.sampling.nv_paths = 2000;
            c.sampling.diag_paths = 1000;
            c.ladder = LadderConfig {
                t0_candidates: vec![1.0, 0.5],
                fractions: vec![0.125, 0.25, 0.5],
            };
            c
        }
        "wave3d-riesz-sine" => {
            let mut c = heat1d(name, DriftSpec::Sine { a: 1.0 });
            c.model = ModelConfig {
                operator: OperatorKind::Wave { dim: 3 },
                correlation: CorrelationConfig::Riesz { epsilon: 1.0 },
                horizon: 0.5,
            };
            c.lattice = LatticeConfig {
                points: 32,
                side: 4.0,
                steps: 25,
                spectral_cutoff: 3.0,
            };
            c.sampling.n_paths = 1000;
            c.sampling.nv_paths = 200;
            c.sampling.diag_paths = 0;
            c.sampling.kde_points = 201;
            c.ladder = LadderConfig {
                t0_candidates: vec![0.5],
                fractions: vec![0.25, 0.5, 1.0],
            };
            c
        }
        "dalang-scan" => {
            let mut c = heat1d(name, DriftSpec::Zero);
            c.model = ModelConfig {
                operator: OperatorKind::Heat { dim: 3 },
                correlation: CorrelationConfig::Riesz { epsilon: 1.0 },
                horizon: 1.0,
            };
            c.lattice = LatticeConfig {
                points: 16,
                side: 4.0,
                steps: 10,
                spectral_cutoff: 1.0,
            };
            c.scan = Some(ScanConfig {
                dim: 3,
                operators: vec!["heat".into(), "wave".into()],
                epsilons: vec![0.5, 1.0, 1.5, 1.9, 2.1, 2.5],
            });
            c
        }
        other => return Err(ConfigError::UnknownPreset(other.into())),
    };
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_validates_and_round_trips() {
        for name in preset_names() {
            let c = preset(name).unwrap();
            c.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
            let back = ExperimentConfig::from_toml(&c.to_toml().unwrap()).unwrap();
            assert_eq!(back, c, "{name}");
        }
    }

    #[test]
    fn unknown_preset_is_an_error() {
        assert!(matches!(preset("nope"), Err(ConfigError::UnknownPreset(_))));
    }
}
