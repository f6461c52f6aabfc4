//! The `run` and `check` pipelines.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::config::{scan_operator, ConfigError, ExperimentConfig};
use super::io::{atomic_write, read_table, write_table};
use super::manifest::{timestamp, RunManifest, Seeds, StageClock, StageResult};
use crate::discrete::LatticeModel;
use crate::lattice::{Lattice, LatticeFft};
use crate::malliavin::{conditional_norm_diag, derivative_norms, shifted_norms, NormDiagnostic};
use crate::nv::{
    check_g_bounds, decompose_g_f, density_from_g, estimate_g_f, mehler_samples, GBounds, MehlerOptions, MehlerRecord,
    MehlerSamples, RegressionOptions, ThetaQuadrature,
};
use crate::rng::{StreamKey, BASE_STREAM};
use crate::solver::Ensemble;
use crate::spectral::{
    check_wellposed, t0_condition, Correlation, QuadratureOptions, SpectralModel, T0Verdict, VarianceProfile,
    WellPosedness,
};
use crate::verify::{
    cross_validate, fit_sandwich, fit_sandwich_joint, gaussian_ks, kde, ks_two_sample, mode, CrossReport, GridDensity,
    KsReport, SandwichFit, SandwichInput,
};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot prepare output directory {path}: {source}")]
    Output { path: PathBuf, source: std::io::Error },
    #[error("stage {stage} failed: {message} (see {dir}/manifest.json)")]
    Stage { stage: String, message: String, dir: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    pub wellposed: WellPosedness,
    pub t0_condition: Option<T0Verdict>,
    pub t0_condition_error: Option<String>,
    pub phi_horizon: f64,
    pub psi_horizon: f64,
}

/// Verification verdicts at one ladder time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderPoint {
    pub step: usize,
    pub t: f64,
    pub phi: f64,
    pub phi_lattice: f64,
    /// Ensemble mean and variance of `u(t, x_ref)`.
    pub m: f64,
    pub variance: f64,
    pub variance_se: f64,
    pub e_abs: f64,
    pub ks: KsReport,
    /// Two-sample KS between two distant sites.
    pub homogeneity: KsReport,
    pub g_bounds: GBounds,
    pub g_bandwidth: f64,
    pub g_excluded: usize,
    pub nv_paths: usize,
    pub nv_mass: f64,
    pub nv_mean: f64,
    pub sandwich_nv: SandwichFit,
    pub sandwich_kde: SandwichFit,
    pub cross: CrossReport,
    pub decomposition_max_residual: f64,
    pub mode_nv: f64,
    pub mode_kde: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct T0Trial {
    pub t0: f64,
    pub steps: Vec<usize>,
    pub fit: SandwichFit,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct T0Report {
    pub trials: Vec<T0Trial>,
    /// Largest candidate whose ladder admits one pair with a small ratio.
    pub empirical: Option<f64>,
    pub theoretical: Option<f64>,
}

impl T0Report {
    pub fn accepted(&self) -> Option<&T0Trial> {
        self.trials.iter().find(|t| t.accepted)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticReport {
    pub step: usize,
    pub t: f64,
    pub paths: usize,
    /// Time indices `r ≤ t` of the derivative norms.
    pub norm_steps: Vec<usize>,
    pub thetas: Vec<f64>,
    /// `e^{lip·Ψ(t)}`.
    pub bound: f64,
    pub norms: NormDiagnostic,
    pub shifted: NormDiagnostic,
    pub norms_pass: bool,
    pub shifted_pass: bool,
    /// `sup shifted / sup plain`.
    pub constant_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub operator: String,
    pub dim: usize,
    pub epsilon: f64,
    pub satisfied: bool,
    pub known_exponent: Option<f64>,
    pub estimated_exponent: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub preset: String,
    pub config_hash: String,
    pub seed: u64,
    pub drift: String,
    pub lip: f64,
    pub spectral: Option<SpectralReport>,
    pub ladder: Vec<LadderPoint>,
    pub t0: Option<T0Report>,
    pub diagnostics: Option<DiagnosticReport>,
    pub scan: Vec<ScanRow>,
}

impl RunReport {
    pub fn at_step(&self, step: usize) -> Option<&LadderPoint> {
        self.ladder.iter().find(|p| p.step == step)
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub manifest: RunManifest,
    pub report: RunReport,
}

pub const REPORT: &str = "report.json";
const THETAS: [f64; 3] = [0.1, 1.0, 5.0];

fn create_run_dir(cfg: &ExperimentConfig, hash: &str) -> Result<PathBuf, RunError> {
    let base = cfg.output_dir.join(format!("{}_{}", &hash[..12], timestamp()));
    let mut dir = base.clone();
    let mut k = 1;
    while dir.exists() {
        dir = PathBuf::from(format!("{}-{k}", base.display()));
        k += 1;
    }
    fs::create_dir_all(&dir).map_err(|source| RunError::Output {
        path: dir.clone(),
        source,
    })?;
    Ok(dir)
}

fn new_manifest(cfg: &ExperimentConfig, command: &str, hash: &str) -> Result<RunManifest, RunError> {
    Ok(RunManifest {
        name: cfg.name.clone(),
        command: command.into(),
        config_hash: hash.into(),
        code_version: env!("CARGO_PKG_VERSION").into(),
        seeds: Seeds {
            noise: cfg.seed,
            bootstrap: cfg.seed,
        },
        started: timestamp(),
        finished: String::new(),
        stages: Vec::new(),
        failed_stage: None,
        outputs: Vec::new(),
        config: cfg.to_toml()?,
    })
}

fn empty_report(cfg: &ExperimentConfig, hash: &str) -> RunReport {
    RunReport {
        preset: cfg.name.clone(),
        config_hash: hash.into(),
        seed: cfg.seed,
        drift: cfg.drift.name(),
        lip: cfg.drift.lip(),
        spectral: None,
        ladder: Vec::new(),
        t0: None,
        diagnostics: None,
        scan: Vec::new(),
    }
}

/// Writes the report and manifest; converts a failed stage into an error.
fn conclude(
    dir: PathBuf,
    mut manifest: RunManifest,
    clock: StageClock,
    report: RunReport,
) -> Result<RunOutcome, RunError> {
    let io_err = |source| RunError::Output {
        path: dir.clone(),
        source,
    };
    let json = serde_json::to_vec_pretty(&report).map_err(|e| io_err(std::io::Error::other(e)))?;
    atomic_write(&dir.join(REPORT), &json).map_err(io_err)?;
    manifest.failed_stage = clock.failed().map(|r| r.name.clone());
    let failure = clock.failed().cloned();
    manifest.stages = clock.records;
    manifest.finish(&dir).map_err(io_err)?;
    if let Some(f) = failure {
        return Err(RunError::Stage {
            stage: f.name,
            message: f.error.unwrap_or_default(),
            dir,
        });
    }
    Ok(RunOutcome { dir, manifest, report })
}

fn scan_rows(cfg: &ExperimentConfig) -> StageResult<Vec<ScanRow>> {
    let scan = cfg.scan.as_ref().ok_or("no scan section")?;
    let mut rows = Vec::new();
    for op in &scan.operators {
        let kind = scan_operator(op, scan.dim)?;
        for &epsilon in &scan.epsilons {
            let model = SpectralModel::new(kind, Correlation::Riesz { epsilon }, cfg.model.horizon)?;
            let w = check_wellposed(&model);
            rows.push(ScanRow {
                operator: op.clone(),
                dim: scan.dim,
                epsilon,
                satisfied: w.satisfied,
                known_exponent: w.dalang.known_exponent,
                estimated_exponent: w.dalang.estimated_exponent,
            });
        }
    }
    Ok(rows)
}

fn write_scan(dir: &Path, rows: &[ScanRow]) -> StageResult<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["operator", "dim", "epsilon", "satisfied", "known_exponent", "estimated_exponent"])?;
    let opt = |v: Option<f64>| v.map_or_else(String::new, |v| v.to_string());
    for r in rows {
        w.write_record([
            r.operator.clone(),
            r.dim.to_string(),
            r.epsilon.to_string(),
            r.satisfied.to_string(),
            opt(r.known_exponent),
            opt(r.estimated_exponent),
        ])?;
    }
    atomic_write(&dir.join("scan.csv"), &w.into_inner().map_err(|e| e.to_string())?)?;
    Ok(())
}

struct Spectral {
    model: SpectralModel,
    lattice: Lattice,
    profile: VarianceProfile,
    report: SpectralReport,
}

/// Well-posedness, `Φ`/`Ψ` on the time grid and the smallness time. No
/// random numbers are drawn.
fn spectral_stage(cfg: &ExperimentConfig, dir: &Path, require_wellposed: bool) -> StageResult<Spectral> {
    let model = cfg.spectral_model()?;
    let lattice = cfg.build_lattice()?;
    let wellposed = check_wellposed(&model);
    if require_wellposed && !wellposed.satisfied {
        return Err(format!(
            "model is not well posed (variance tail exponent {:?}, Dalang tail exponent {:?})",
            wellposed.phi.estimated_exponent, wellposed.dalang.estimated_exponent
        )
        .into());
    }
    let times: Vec<f64> = (1..=lattice.steps()).map(|n| lattice.time(n)).collect();
    let opts = QuadratureOptions {
        rel_tol: cfg.tolerances.quadrature_rel,
    };
    let profile = VarianceProfile::compute(&model, &times, &opts)?;
    let (t0, t0_err) = match t0_condition(&profile, cfg.drift.lip()) {
        Ok(v) => (Some(v), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let mut t = vec![0.0];
    t.extend(&profile.times);
    let mut phi = vec![0.0];
    phi.extend(&profile.phi);
    let mut psi = vec![0.0];
    psi.extend(&profile.psi);
    let mut cols: Vec<(&str, Vec<f64>)> = vec![("t", t), ("phi", phi), ("psi", psi)];
    if wellposed.satisfied {
        let ctx = LatticeModel::new(model.clone(), lattice.clone())?;
        cols.push(("phi_lattice", ctx.phi_lattice()));
    }
    let headers: Vec<&str> = cols.iter().map(|c| c.0).collect();
    let columns: Vec<&[f64]> = cols.iter().map(|c| c.1.as_slice()).collect();
    write_table(&dir.join("spectral.csv"), &headers, &columns)?;
    let report = SpectralReport {
        phi_horizon: *profile.phi.last().unwrap_or(&0.0),
        psi_horizon: *profile.psi.last().unwrap_or(&0.0),
        wellposed,
        t0_condition: t0,
        t0_condition_error: t0_err,
    };
    Ok(Spectral {
        model,
        lattice,
        profile,
        report,
    })
}

fn moments(x: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    let m4 = x.iter().map(|v| (v - m).powi(4)).sum::<f64>() / n;
    let se = ((m4 - v * v).max(0.0) / n).sqrt();
    (m, v, se)
}

fn ensemble_stage(
    cfg: &ExperimentConfig,
    ctx: &LatticeModel,
    sp: &Spectral,
    steps: &[usize],
    dir: &Path,
) -> StageResult<Ensemble> {
    let far = ctx.lattice().sites() / 2;
    let ens = ctx.ensemble_solve(&cfg.drift, cfg.sampling.n_paths, cfg.seed, &[0, far])?;
    let levels = ctx.lattice().steps() + 1;
    let (mut t, mut phi, mut phil, mut mean, mut var, mut se) = (vec![], vec![], vec![], vec![], vec![], vec![]);
    let phi_lat = ctx.phi_lattice();
    for n in 0..levels {
        let s = ens.sample(0, n);
        let (m, v, e) = moments(&s);
        t.push(ctx.lattice().time(n));
        phi.push(if n == 0 { 0.0 } else { sp.profile.phi[n - 1] });
        phil.push(phi_lat[n]);
        mean.push(m);
        var.push(v);
        se.push(e);
    }
    write_table(
        &dir.join("ensemble_moments.csv"),
        &["t", "phi", "phi_lattice", "mean", "variance", "variance_se"],
        &[&t, &phi, &phil, &mean, &var, &se],
    )?;
    let paths: Vec<f64> = ens.paths.iter().map(|&p| p as f64).collect();
    let samples: Vec<Vec<f64>> = steps.iter().map(|&n| ens.sample(0, n)).collect();
    let names: Vec<String> = steps.iter().map(|n| format!("u_step{n}")).collect();
    let mut headers = vec!["path"];
    headers.extend(names.iter().map(String::as_str));
    let mut cols: Vec<&[f64]> = vec![&paths];
    cols.extend(samples.iter().map(Vec::as_slice));
    write_table(&dir.join("ensemble_samples.csv"), &headers, &cols)?;
    Ok(ens)
}

/// Same model and noise restricted to the first `steps` time steps.
fn truncated(ctx: &LatticeModel, steps: usize) -> StageResult<LatticeModel> {
    let lat = ctx.lattice();
    if steps == lat.steps() {
        return Ok(ctx.clone());
    }
    let horizon = lat.time(steps);
    let lattice = Lattice::new(lat.dim(), lat.side(), lat.points(), horizon, steps, lat.spectral_cutoff())?;
    let mut model = ctx.model().clone();
    model.horizon = horizon;
    Ok(LatticeModel::new(model, lattice)?)
}

const MEHLER_HEADERS: [&str; 6] = ["path", "u", "y", "a1", "a2", "a3"];

fn write_mehler(path: &Path, s: &MehlerSamples) -> StageResult<()> {
    let col = |f: fn(&MehlerRecord) -> f64| -> Vec<f64> { s.records.iter().map(f).collect() };
    let cols = [
        col(|r| r.path as f64),
        col(|r| r.u),
        col(|r| r.y),
        col(|r| r.a1),
        col(|r| r.a2),
        col(|r| r.a3),
    ];
    let refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
    write_table(path, &MEHLER_HEADERS, &refs)?;
    Ok(())
}

fn read_mehler(path: &Path, target: usize, time: f64, phi_lattice: f64, n_primes: usize) -> StageResult<MehlerSamples> {
    let (headers, cols) = read_table(path)?;
    if headers != MEHLER_HEADERS {
        return Err(format!("{} has unexpected columns {headers:?}", path.display()).into());
    }
    let records = (0..cols[0].len())
        .map(|i| MehlerRecord {
            path: cols[0][i] as u64,
            u: cols[1][i],
            y: cols[2][i],
            a1: cols[3][i],
            a2: cols[4][i],
            a3: cols[5][i],
        })
        .collect();
    Ok(MehlerSamples {
        target,
        time,
        phi_lattice,
        n_primes,
        records,
    })
}

/// Mehler samples for every ladder step, from the stage cache when present.
fn mehler_stage(
    cfg: &ExperimentConfig,
    ctx: &LatticeModel,
    nv_ctx: &LatticeModel,
    steps: &[usize],
    cache: &Path,
) -> StageResult<Vec<MehlerSamples>> {
    fs::create_dir_all(cache)?;
    let phi_lat = ctx.phi_lattice();
    let file = |n: usize| cache.join(format!("mehler_step{n}.csv"));
    let missing: Vec<usize> = steps.iter().copied().filter(|&n| !file(n).exists()).collect();
    if !missing.is_empty() {
        let opts = MehlerOptions {
            quadrature: ThetaQuadrature::gauss_laguerre(cfg.sampling.theta_nodes),
            n_primes: cfg.sampling.n_primes,
        };
        for s in mehler_samples(nv_ctx, &cfg.drift, cfg.seed, cfg.sampling.nv_paths, &missing, &opts)? {
            write_mehler(&file(s.target), &s)?;
        }
    }
    // Always read back so cached and fresh runs see identical numbers.
    steps
        .iter()
        .map(|&n| read_mehler(&file(n), n, ctx.lattice().time(n), phi_lat[n], cfg.sampling.n_primes))
        .collect()
}

fn bool_col(v: &[bool]) -> Vec<f64> {
    v.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
}

fn ladder_point(
    cfg: &ExperimentConfig,
    sp: &Spectral,
    ens: &Ensemble,
    samples: &MehlerSamples,
    dir: &Path,
) -> StageResult<(LadderPoint, SandwichInput)> {
    let n = samples.target;
    let phi = sp.profile.phi[n - 1];
    let reg = RegressionOptions {
        grid_points: cfg.sampling.g_grid_points,
        min_effective_n: cfg.tolerances.min_effective_n,
        bootstrap: cfg.sampling.bootstrap,
        seed: cfg.seed,
        ..RegressionOptions::default()
    };
    let g = estimate_g_f(samples, &reg)?;
    write_table(
        &dir.join(format!("g_step{n}.csv")),
        &["z", "g", "se", "effective_n", "clipped"],
        &[&g.z, &g.g, &g.se, &g.effective_n, &bool_col(&g.clipped)],
    )?;
    let dec = decompose_g_f(samples, phi, &reg)?;
    let phil = vec![dec.phi_lattice; dec.z.len()];
    write_table(
        &dir.join(format!("decomposition_step{n}.csv")),
        &["z", "g", "phi_lattice", "a1", "a2", "a3", "se_g", "se_a1", "se_a2", "se_a3", "residual"],
        &[
            &dec.z, &dec.g, &phil, &dec.a1, &dec.a2, &dec.a3, &dec.se_g, &dec.se_a1, &dec.se_a2, &dec.se_a3,
            &dec.residual,
        ],
    )?;
    let nv_mean = samples.mean_u();
    let nv = density_from_g(&g, samples.mean_abs_f())?;
    let nv_grid = GridDensity::from_nv(&nv, nv_mean);
    write_table(
        &dir.join(format!("density_nv_step{n}.csv")),
        &["u", "z", "rho"],
        &[&nv_grid.z, &nv.z, &nv.rho],
    )?;

    let sample = ens.sample(0, n);
    let (m, variance, variance_se) = moments(&sample);
    let e_abs = sample.iter().map(|v| (v - m).abs()).sum::<f64>() / sample.len() as f64;
    let k = kde(&sample, None, cfg.sampling.kde_points)?;
    write_table(&dir.join(format!("density_kde_step{n}.csv")), &["u", "p"], &[&k.z, &k.p])?;
    let ks_center = if cfg.drift.is_zero() { 0.0 } else { m };
    let ks = gaussian_ks(&sample, ks_center, phi, cfg.tolerances.ks_slack)?;
    let homogeneity = ks_two_sample(&sample, &ens.sample(1, n))?;
    let sandwich_nv = fit_sandwich(&nv_grid, nv_mean, phi, nv.e_abs_f);
    let kde_grid = GridDensity::from(&k);
    let sandwich_kde = fit_sandwich(&kde_grid, m, phi, e_abs);
    let cross = cross_validate(&nv, &k, nv_mean)?;
    let g_bounds = check_g_bounds(&g, phi, Some(g.f_range(0.05, 0.95)));
    let point = LadderPoint {
        step: n,
        t: samples.time,
        phi,
        phi_lattice: samples.phi_lattice,
        m,
        variance,
        variance_se,
        e_abs,
        ks,
        homogeneity,
        g_bounds,
        g_bandwidth: g.bandwidth.bandwidth,
        g_excluded: g.excluded,
        nv_paths: g.n_paths,
        nv_mass: nv.mass,
        nv_mean,
        sandwich_nv,
        sandwich_kde,
        cross,
        decomposition_max_residual: dec.max_standardized_residual(),
        mode_nv: mode(&nv_grid.z, &nv_grid.p),
        mode_kde: mode(&kde_grid.z, &kde_grid.p),
    };
    let input = SandwichInput {
        density: nv_grid,
        m: nv_mean,
        phi_t: phi,
        e_abs: nv.e_abs_f,
        range: None,
    };
    Ok((point, input))
}

fn t0_search(
    cfg: &ExperimentConfig,
    lattice: &Lattice,
    inputs: &[(usize, SandwichInput)],
    theoretical: Option<f64>,
) -> StageResult<T0Report> {
    let mut candidates = cfg.ladder.t0_candidates.clone();
    candidates.sort_by(|a, b| b.total_cmp(a));
    let mut trials = Vec::new();
    let mut empirical = None;
    for t0 in candidates {
        let steps = cfg.candidate_steps(lattice, t0);
        let chosen: Vec<SandwichInput> = steps
            .iter()
            .map(|s| {
                inputs
                    .iter()
                    .find(|(n, _)| n == s)
                    .map(|(_, i)| i.clone())
                    .ok_or_else(|| format!("ladder step {s} was not estimated"))
            })
            .collect::<Result<_, _>>()?;
        let fit = fit_sandwich_joint(&chosen)?;
        let accepted = empirical.is_none() && fit.feasible && fit.ratio() < cfg.tolerances.max_ratio;
        if accepted {
            empirical = Some(t0);
        }
        trials.push(T0Trial {
            t0,
            steps,
            fit,
            accepted,
        });
    }
    Ok(T0Report {
        trials,
        empirical,
        theoretical,
    })
}

/// `F`, plain norms per step and shifted norms per θ for one path.
type DiagRow = (f64, Vec<f64>, Vec<f64>);

fn diagnostics_stage(
    cfg: &ExperimentConfig,
    sp: &Spectral,
    nv_ctx: &LatticeModel,
    step: usize,
    dir: &Path,
) -> StageResult<DiagnosticReport> {
    let mut norm_steps: Vec<usize> = [0.25, 0.5, 0.75, 1.0]
        .iter()
        .map(|f| ((f * step as f64).round() as usize).max(1))
        .collect();
    norm_steps.dedup();
    let drift = &cfg.drift;
    let rows: Vec<StageResult<DiagRow>> = (0..cfg.sampling.diag_paths as u64)
        .into_par_iter()
        .map_init(
            || LatticeFft::new(nv_ctx.lattice()),
            |fft, p| {
                let sol = nv_ctx.solve_path(drift, cfg.seed, p)?;
                let norms = derivative_norms(nv_ctx, &sol.field, drift, &norm_steps, fft)?;
                let key = StreamKey::new(cfg.seed, p, BASE_STREAM);
                let shifted = shifted_norms(nv_ctx, key, drift, step, &THETAS, cfg.sampling.n_primes)?;
                Ok((sol.u_ref[step], norms, shifted))
            },
        )
        .collect();
    let rows = rows.into_iter().collect::<StageResult<Vec<_>>>()?;
    let mean = rows.iter().map(|r| r.0).sum::<f64>() / rows.len() as f64;
    let f: Vec<f64> = rows.iter().map(|r| r.0 - mean).collect();
    let norms: Vec<Vec<f64>> = rows.iter().map(|r| r.1.clone()).collect();
    let shifted: Vec<Vec<f64>> = rows.iter().map(|r| r.2.clone()).collect();
    let phi = sp.profile.phi[step - 1];
    let psi = sp.profile.psi[step - 1];
    let bound = (drift.lip() * psi).exp();
    let nd = conditional_norm_diag(&norms, &f, phi, cfg.sampling.bins)?;
    let sd = conditional_norm_diag(&shifted, &f, phi, cfg.sampling.bins)?;
    write_diag(&dir.join("norm_diagnostics.csv"), &nd, &norm_steps.iter().map(|n| format!("r_step{n}")).collect::<Vec<_>>())?;
    write_diag(&dir.join("shifted_diagnostics.csv"), &sd, &THETAS.iter().map(|t| format!("theta_{t}")).collect::<Vec<_>>())?;
    Ok(DiagnosticReport {
        step,
        t: nv_ctx.lattice().time(step),
        paths: rows.len(),
        norm_steps,
        thetas: THETAS.to_vec(),
        bound,
        norms_pass: nd.ratio_sup <= bound,
        shifted_pass: sd.ratio_sup <= bound,
        constant_ratio: sd.ratio_sup / nd.ratio_sup,
        norms: nd,
        shifted: sd,
    })
}

fn write_diag(path: &Path, d: &NormDiagnostic, names: &[String]) -> StageResult<()> {
    let lo: Vec<f64> = d.bins.iter().map(|b| b.lo).collect();
    let hi: Vec<f64> = d.bins.iter().map(|b| b.hi).collect();
    let count: Vec<f64> = d.bins.iter().map(|b| b.count as f64).collect();
    let excluded = bool_col(&d.bins.iter().map(|b| b.excluded).collect::<Vec<_>>());
    let ratios: Vec<Vec<f64>> = (0..names.len())
        .map(|c| d.bins.iter().map(|b| b.ratio[c]).collect())
        .collect();
    let mut headers = vec!["f_lo", "f_hi", "count", "excluded"];
    headers.extend(names.iter().map(String::as_str));
    let mut cols: Vec<&[f64]> = vec![&lo, &hi, &count, &excluded];
    cols.extend(ratios.iter().map(Vec::as_slice));
    write_table(path, &headers, &cols)?;
    Ok(())
}

/// Validates, then runs every stage and writes artifacts into a fresh run
/// directory under `output_dir`. Nothing is written for an invalid config.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutcome, RunError> {
    cfg.validate()?;
    let hash = cfg.hash();
    let dir = create_run_dir(cfg, &hash)?;
    let manifest = new_manifest(cfg, "run", &hash)?;
    let mut clock = StageClock::default();
    let mut report = empty_report(cfg, &hash);

    if cfg.scan.is_some() {
        if let Ok(rows) = clock.run("scan", || {
            let rows = scan_rows(cfg)?;
            write_scan(&dir, &rows)?;
            Ok(rows)
        }) {
            report.scan = rows;
        }
        return conclude(dir, manifest, clock, report);
    }

    let Ok(sp) = clock.run("spectral", || spectral_stage(cfg, &dir, true)) else {
        return conclude(dir, manifest, clock, report);
    };
    report.spectral = Some(sp.report.clone());
    let steps = cfg.ladder_steps(&sp.lattice);
    let max_step = *steps.last().expect("validated ladder");

    let contexts = clock.run("ensemble", || {
        let ctx = LatticeModel::new(sp.model.clone(), sp.lattice.clone())?;
        let ens = ensemble_stage(cfg, &ctx, &sp, &steps, &dir)?;
        let nv_ctx = truncated(&ctx, max_step)?;
        Ok((ctx, nv_ctx, ens))
    });
    let Ok((ctx, nv_ctx, ens)) = contexts else {
        return conclude(dir, manifest, clock, report);
    };

    let cache = cfg.output_dir.join("cache").join(&hash);
    let Ok(samples) = clock.run("mehler", || mehler_stage(cfg, &ctx, &nv_ctx, &steps, &cache)) else {
        return conclude(dir, manifest, clock, report);
    };

    let verified = clock.run("verify", || {
        let mut points = Vec::new();
        let mut inputs = Vec::new();
        for s in &samples {
            let (p, i) = ladder_point(cfg, &sp, &ens, s, &dir)?;
            points.push(p);
            inputs.push((s.target, i));
        }
        let theoretical = sp.report.t0_condition.as_ref().map(|v| v.t0);
        let t0 = t0_search(cfg, &sp.lattice, &inputs, theoretical)?;
        Ok((points, t0))
    });
    let Ok((points, t0)) = verified else {
        return conclude(dir, manifest, clock, report);
    };
    report.ladder = points;
    report.t0 = Some(t0);

    if cfg.sampling.diag_paths > 0 {
        if let Ok(d) = clock.run("diagnostics", || diagnostics_stage(cfg, &sp, &nv_ctx, max_step, &dir)) {
            report.diagnostics = Some(d);
        }
    }
    conclude(dir, manifest, clock, report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub preset: String,
    pub config_hash: String,
    pub spectral: Option<SpectralReport>,
    pub scan: Vec<ScanRow>,
}

pub struct CheckOutcome {
    pub dir: PathBuf,
    pub manifest: RunManifest,
    pub report: CheckReport,
}

/// Spectral checks and the smallness time only; writes `spectral.csv` (or
/// `scan.csv`) and `check.json`.
pub fn check(cfg: &ExperimentConfig) -> Result<CheckOutcome, RunError> {
    cfg.validate()?;
    let hash = cfg.hash();
    let dir = create_run_dir(cfg, &hash)?;
    let mut manifest = new_manifest(cfg, "check", &hash)?;
    let mut clock = StageClock::default();
    let mut report = CheckReport {
        preset: cfg.name.clone(),
        config_hash: hash,
        spectral: None,
        scan: Vec::new(),
    };
    if cfg.scan.is_some() {
        if let Ok(rows) = clock.run("scan", || {
            let rows = scan_rows(cfg)?;
            write_scan(&dir, &rows)?;
            Ok(rows)
        }) {
            report.scan = rows;
        }
    } else if let Ok(sp) = clock.run("spectral", || spectral_stage(cfg, &dir, false)) {
        report.spectral = Some(sp.report);
    }
    let io_err = |source| RunError::Output {
        path: dir.clone(),
        source,
    };
    let json = serde_json::to_vec_pretty(&report).map_err(|e| io_err(std::io::Error::other(e)))?;
    atomic_write(&dir.join("check.json"), &json).map_err(io_err)?;
    manifest.failed_stage = clock.failed().map(|r| r.name.clone());
    let failure = clock.failed().cloned();
    manifest.stages = clock.records;
    manifest.finish(&dir).map_err(io_err)?;
    if let Some(f) = failure {
        return Err(RunError::Stage {
            stage: f.name,
            message: f.error.unwrap_or_default(),
            dir,
        });
    }
    Ok(CheckOutcome { dir, manifest, report })
}

/// Runs `f` on a dedicated pool of `workers` threads (global pool when `None`).
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, rayon::ThreadPoolBuildError> {
    match workers {
        None => Ok(f()),
        Some(n) => Ok(rayon::ThreadPoolBuilder::new().num_threads(n).build()?.install(f)),
    }
}
