//! Experiment orchestration: configuration, presets, the staged pipeline and
//! its persisted artifacts.

pub mod config;
pub mod io;
pub mod manifest;
pub mod pipeline;
pub mod presets;

pub use config::{ConfigError, CorrelationConfig, ExperimentConfig};
pub use manifest::RunManifest;
pub use pipeline::{check, run, with_workers, CheckOutcome, CheckReport, RunError, RunOutcome, RunReport};
pub use presets::{preset, preset_names, CATALOG};

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn base() -> ExperimentConfig {
        preset("heat1d-white-arctan").unwrap()
    }

    #[test]
    fn hash_ignores_output_dir_and_workers() {
        let a = base();
        let mut b = a.clone();
        b.output_dir = "/elsewhere".into();
        b.workers = Some(3);
        assert_eq!(a.hash(), b.hash());
        b.seed += 1;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn invalid_lattice_is_rejected() {
        let mut c = base();
        c.lattice.points = 100;
        assert!(matches!(c.validate(), Err(ConfigError::Lattice(_))));
        let mut c = base();
        c.model.correlation = CorrelationConfig::Riesz { epsilon: 1.5 };
        assert!(matches!(c.validate(), Err(ConfigError::Model(_))));
        let mut c = base();
        c.tolerances.ks_slack = 0.0;
        assert!(matches!(c.validate(), Err(ConfigError::Invalid(_))));
        let mut c = base();
        c.ladder.fractions = vec![1e-6];
        assert!(c.validate().is_err());
    }

    #[test]
    fn malformed_config_fails_to_parse() {
        assert!(ExperimentConfig::from_toml("name = 3").is_err());
    }

    proptest! {
        #[test]
        fn config_round_trips(seed in any::<u64>(), horizon in 0.01f64..5.0, side in 0.5f64..50.0,
                              lambda in -3.0f64..3.0, frac in 0.001f64..1.0) {
            let mut c = base();
            c.seed = seed;
            c.model.horizon = horizon;
            c.lattice.side = side;
            c.drift = crate::solver::DriftSpec::Linear { lambda };
            c.ladder.fractions = vec![frac, 1.0];
            let text = c.to_toml().unwrap();
            prop_assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), c);
        }
    }
}
