//! Experiment configuration (TOML) and its validation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::lattice::{Lattice, LatticeError};
use crate::solver::DriftSpec;
use crate::spectral::{Correlation, OperatorKind, SpectralError, SpectralModel, TabulatedDensity};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("cannot serialize config: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("invalid lattice: {0}")]
    Lattice(#[from] LatticeError),
    #[error("invalid model: {0}")]
    Model(#[from] SpectralError),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("unknown preset {0:?}; run list-presets")]
    UnknownPreset(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CorrelationConfig {
    WhiteNoise,
    Riesz { epsilon: f64 },
    /// Two-column CSV `(xi_radius, density)` with a header row.
    Tabulated { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub operator: OperatorKind,
    pub correlation: CorrelationConfig,
    pub horizon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeConfig {
    pub points: usize,
    pub side: f64,
    pub steps: usize,
    pub spectral_cutoff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    /// Paths of the plain ensemble (KDE, KS, moments).
    pub n_paths: usize,
    /// Paths entering the Mehler sampler.
    pub nv_paths: usize,
    /// Paths for the conditional-norm diagnostics (0 disables them).
    pub diag_paths: usize,
    pub n_primes: usize,
    pub theta_nodes: usize,
    pub bins: usize,
    pub bootstrap: usize,
    pub g_grid_points: usize,
    pub kde_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderConfig {
    /// Candidate values of `T₀`, tried from the largest down.
    pub t0_candidates: Vec<f64>,
    /// Ladder times are `fraction · T₀`.
    pub fractions: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub quadrature_rel: f64,
    pub ks_slack: f64,
    pub min_effective_n: f64,
    /// Largest acceptable `C₂/C₁` for the empirical `T₀`.
    pub max_ratio: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            quadrature_rel: 1e-6,
            ks_slack: 1.5,
            min_effective_n: 30.0,
            max_ratio: 4.0,
        }
    }
}

/// Well-posedness scan over Riesz exponents; replaces the simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanConfig {
    pub dim: usize,
    pub operators: Vec<String>,
    pub epsilons: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub workers: Option<usize>,
    pub model: ModelConfig,
    pub drift: DriftSpec,
    pub lattice: LatticeConfig,
    pub sampling: SamplingConfig,
    pub ladder: LadderConfig,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scan: Option<ScanConfig>,
}

fn positive(name: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::Invalid(format!("{name} must be positive and finite, got {v}")))
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_toml(&text)?;
        // Relative CSV paths are resolved against the config location.
        if let CorrelationConfig::Tabulated { path: csv } = &mut cfg.model.correlation {
            if csv.is_relative() {
                if let Some(dir) = path.parent() {
                    *csv = dir.join(&*csv);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string(self)?)
    }

    pub fn correlation(&self) -> Result<Correlation, ConfigError> {
        Ok(match &self.model.correlation {
            CorrelationConfig::WhiteNoise => Correlation::WhiteNoise,
            CorrelationConfig::Riesz { epsilon } => Correlation::Riesz { epsilon: *epsilon },
            CorrelationConfig::Tabulated { path } => Correlation::Tabulated(TabulatedDensity::from_csv(path)?),
        })
    }

    pub fn spectral_model(&self) -> Result<SpectralModel, ConfigError> {
        Ok(SpectralModel::new(
            self.model.operator,
            self.correlation()?,
            self.model.horizon,
        )?)
    }

    pub fn build_lattice(&self) -> Result<Lattice, ConfigError> {
        let l = &self.lattice;
        Ok(Lattice::new(
            self.model.operator.dim(),
            l.side,
            l.points,
            self.model.horizon,
            l.steps,
            l.spectral_cutoff,
        )?)
    }

    /// Checks every field; nothing is computed before this passes.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.name.trim().is_empty() {
            return Err(ConfigError::Invalid("name must not be empty".into()));
        }
        self.spectral_model()?;
        self.build_lattice()?;
        let t = &self.tolerances;
        positive("tolerances.quadrature_rel", t.quadrature_rel)?;
        positive("tolerances.ks_slack", t.ks_slack)?;
        positive("tolerances.min_effective_n", t.min_effective_n)?;
        positive("tolerances.max_ratio", t.max_ratio)?;
        if let DriftSpec::Constant { c: v } | DriftSpec::Linear { lambda: v } | DriftSpec::Arctan { a: v } | DriftSpec::Sine { a: v } =
            self.drift
        {
            if !v.is_finite() {
                return Err(ConfigError::Invalid(format!("drift parameter must be finite, got {v}")));
            }
        }
        if let Some(w) = self.workers {
            if w == 0 {
                return Err(ConfigError::Invalid("workers must be at least 1".into()));
            }
        }
        if let Some(scan) = &self.scan {
            if scan.dim == 0 || scan.epsilons.is_empty() || scan.operators.is_empty() {
                return Err(ConfigError::Invalid("scan needs a dimension, operators and exponents".into()));
            }
            for op in &scan.operators {
                scan_operator(op, scan.dim)?;
            }
            for &e in &scan.epsilons {
                if !(e > 0.0 && e < scan.dim as f64) {
                    return Err(ConfigError::Invalid(format!("scan exponent {e} outside (0, {})", scan.dim)));
                }
            }
            return Ok(());
        }
        let s = &self.sampling;
        if s.n_paths < 2 || s.nv_paths < 2 {
            return Err(ConfigError::Invalid("n_paths and nv_paths must be at least 2".into()));
        }
        if s.n_primes == 0 || s.theta_nodes == 0 || s.bins == 0 || s.g_grid_points < 2 || s.kde_points < 2 {
            return Err(ConfigError::Invalid(
                "n_primes, theta_nodes and bins must be positive; grids need at least 2 points".into(),
            ));
        }
        let lad = &self.ladder;
        if lad.t0_candidates.is_empty() || lad.fractions.is_empty() {
            return Err(ConfigError::Invalid("ladder needs candidates and fractions".into()));
        }
        for &c in &lad.t0_candidates {
            if !(c > 0.0 && c <= self.model.horizon * (1.0 + 1e-12)) {
                return Err(ConfigError::Invalid(format!("T0 candidate {c} outside (0, T]")));
            }
        }
        for &f in &lad.fractions {
            if !(f > 0.0 && f <= 1.0) {
                return Err(ConfigError::Invalid(format!("ladder fraction {f} outside (0, 1]")));
            }
        }
        let lattice = self.build_lattice()?;
        for step in self.ladder_steps(&lattice) {
            if step == 0 {
                return Err(ConfigError::Invalid("a ladder time rounds to t = 0 on the time grid".into()));
            }
        }
        Ok(())
    }

    /// Ladder time steps of one candidate, snapped to the time grid.
    pub fn candidate_steps(&self, lattice: &Lattice, t0: f64) -> Vec<usize> {
        self.ladder.fractions.iter().map(|f| lattice.step_of(f * t0)).collect()
    }

    /// Union of all ladder steps, ascending.
    pub fn ladder_steps(&self, lattice: &Lattice) -> Vec<usize> {
        let mut steps: Vec<usize> = self
            .ladder
            .t0_candidates
            .iter()
            .flat_map(|&c| self.candidate_steps(lattice, c))
            .collect();
        steps.sort_unstable();
        steps.dedup();
        steps
    }

    /// SHA-256 of the canonical TOML without output location and worker count.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = PathBuf::new();
        canonical.workers = None;
        let text = canonical.to_toml().expect("config serializes");
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

pub fn scan_operator(name: &str, dim: usize) -> Result<OperatorKind, ConfigError> {
    let op = match name {
        "heat" => OperatorKind::Heat { dim },
        "wave" => OperatorKind::Wave { dim },
        other => return Err(ConfigError::Invalid(format!("unknown operator {other:?} (heat or wave)"))),
    };
    op.validate()?;
    Ok(op)
}
