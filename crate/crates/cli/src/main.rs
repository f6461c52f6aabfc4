use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use nvlab::experiment::{self, preset, ExperimentConfig, CATALOG};

/// Density bounds for SPDEs with additive Gaussian noise: spectral checks,
/// Monte Carlo solves and Nourdin–Viens density estimates.
#[derive(Parser)]
#[command(name = "nvlab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline and write CSV/JSON artifacts.
    Run(RunArgs),
    /// Well-posedness, variance tables and smallness time; no simulation.
    Check(RunArgs),
    /// Print the preset catalog.
    ListPresets,
}

#[derive(Args)]
struct RunArgs {
    /// TOML configuration file.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Named preset (see list-presets).
    #[arg(long)]
    preset: Option<String>,
    /// Override the seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the number of paths of both the ensemble and the NV stage.
    #[arg(long)]
    paths: Option<usize>,
    /// Worker threads.
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), _) => ExperimentConfig::load(path)?,
            (None, Some(name)) => preset(name)?,
            (None, None) => bail!("pass --config FILE or --preset NAME"),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(n) = self.paths {
            cfg.sampling.n_paths = n;
            cfg.sampling.nv_paths = n;
        }
        if let Some(w) = self.workers {
            cfg.workers = Some(w);
        }
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.4}"))
}

fn run(args: &RunArgs) -> Result<()> {
    let cfg = args.config()?;
    let out = experiment::with_workers(cfg.workers, || experiment::run(&cfg)).context("building worker pool")??;
    let r = &out.report;
    println!("{:>8} {:>10} {:>10} {:>8} {:>8} {:>9} {:>6} {:>8}", "t", "phi", "m", "C1", "C2", "feasible", "KS", "L1");
    for p in &r.ladder {
        println!(
            "{:>8.4} {:>10.6} {:>10.6} {:>8.4} {:>8.4} {:>9} {:>6} {:>8.4}",
            p.t,
            p.phi,
            p.m,
            p.sandwich_nv.c1,
            p.sandwich_nv.c2,
            p.sandwich_nv.feasible,
            if p.ks.pass { "pass" } else { "fail" },
            p.cross.l1
        );
    }
    if let Some(t0) = &r.t0 {
        println!("empirical T0: {}  smallness T0: {}", fmt_opt(t0.empirical), fmt_opt(t0.theoretical));
    }
    if let Some(d) = &r.diagnostics {
        println!(
            "derivative norms at t={:.4}: sup ratio {:.4} (shifted {:.4}) vs bound {:.4}",
            d.t, d.norms.ratio_sup, d.shifted.ratio_sup, d.bound
        );
    }
    print_scan(&r.scan);
    println!("artifacts: {}", out.dir.display());
    Ok(())
}

fn print_scan(rows: &[experiment::pipeline::ScanRow]) {
    if rows.is_empty() {
        return;
    }
    println!("{:>8} {:>4} {:>8} {:>10} {:>10} {:>10}", "operator", "d", "eps", "wellposed", "known", "estimated");
    for r in rows {
        println!(
            "{:>8} {:>4} {:>8.3} {:>10} {:>10} {:>10}",
            r.operator,
            r.dim,
            r.epsilon,
            r.satisfied,
            fmt_opt(r.known_exponent),
            fmt_opt(r.estimated_exponent)
        );
    }
}

fn check(args: &RunArgs) -> Result<()> {
    let cfg = args.config()?;
    let out = experiment::check(&cfg)?;
    if let Some(s) = &out.report.spectral {
        let w = &s.wellposed;
        println!("well-posed: {}", w.satisfied);
        println!(
            "  variance tail exponent: known {} estimated {}",
            fmt_opt(w.phi.known_exponent),
            fmt_opt(w.phi.estimated_exponent)
        );
        println!(
            "  Dalang tail exponent:   known {} estimated {}",
            fmt_opt(w.dalang.known_exponent),
            fmt_opt(w.dalang.estimated_exponent)
        );
        println!("  sup mass of Green kernel: {:.6}", w.gamma_sup);
        println!("Phi(T) = {:.6}  Psi(T) = {:.6}", s.phi_horizon, s.psi_horizon);
        match (&s.t0_condition, &s.t0_condition_error) {
            (Some(v), _) => println!("smallness T0 = {:.6} (lip {}, margin {:.4})", v.t0, v.lip, v.margin),
            (None, Some(e)) => println!("smallness T0: {e}"),
            _ => {}
        }
    }
    print_scan(&out.report.scan);
    println!("tables: {}", out.dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => run(a),
        Command::Check(a) => check(a),
        Command::ListPresets => {
            for (name, desc) in CATALOG {
                println!("{name:<22} {desc}");
            }
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
