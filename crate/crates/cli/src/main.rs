//! `critmat`: batch runner for the experiments of the `critmat` library.

mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use critmat::models::CriticalFamily;
use serde_json::json;

use config::{ExperimentConfig, FileConfig, Kind, Overrides, Source};

#[derive(Parser)]
#[command(name = "critmat", version, about = "Random 2x2 matrix products near balanced hyperbolic critical points")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Birkhoff estimate of the Lyapunov exponent at one eps
    Lyapunov(Common),
    /// Lyapunov estimates over an eps list with a fit against 1/log(1/eps)
    LyapunovSweep(Common),
    /// Two-fiber histogram of the invariant measure in the z-picture
    Measure(Common),
    /// Passage times of the x-dynamics
    Passages(Common),
    /// Renewal statistics of the comparison processes and the coupled sandwich check
    Comparison(Common),
    /// f, F and the interval decomposition; Lyapunov exponent from orbit averages
    Cocycle(Common),
    /// Random-field Ising chain: invariant measure, Lyapunov exponent, free energy
    Ising(Common),
    /// Eigenvector residual of the reflected random-walk toy chain
    ToyChain {
        #[command(flatten)]
        common: Common,
        /// Largest chain size
        #[arg(long)]
        n: Option<usize>,
    },
    /// Check the family hypotheses and report constants without running
    Validate(Common),
}

#[derive(Args, Clone, Default)]
struct Common {
    /// TOML experiment config
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<u32>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run even if the family violates balance or non-triviality
    #[arg(long)]
    force: bool,
}

fn main() -> ExitCode {
    match real_main() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn real_main() -> anyhow::Result<ExitCode> {
    let cli = Cli::parse();
    let (kind, common, n) = match cli.command {
        Command::Lyapunov(c) => (Some(Kind::Lyapunov), c, None),
        Command::LyapunovSweep(c) => (Some(Kind::LyapunovSweep), c, None),
        Command::Measure(c) => (Some(Kind::Measure), c, None),
        Command::Passages(c) => (Some(Kind::Passages), c, None),
        Command::Comparison(c) => (Some(Kind::Comparison), c, None),
        Command::Cocycle(c) => (Some(Kind::Cocycle), c, None),
        Command::Ising(c) => (Some(Kind::Ising), c, None),
        Command::ToyChain { common, n } => (Some(Kind::ToyChain), common, n),
        Command::Validate(c) => (None, c, None),
    };
    let (file, src) = match &common.config {
        Some(p) => config::load(p)?,
        None => (FileConfig::default(), Source::default()),
    };
    let Some(kind) = kind else {
        return validate(file, &src);
    };
    let over = Overrides { seed: common.seed, workers: common.workers, out: common.out.clone(), n };
    let cfg = config::resolve(kind, file, over, &src)?;
    let fam = match &cfg.family {
        Some(spec) => Some(checked_family(spec.clone(), common.force)?),
        None => None,
    };
    execute(&cfg, fam.as_ref())?;
    Ok(ExitCode::SUCCESS)
}

/// Builds the family; hypothesis violations refuse the run unless forced.
fn checked_family(spec: critmat::models::FamilySpec, force: bool) -> anyhow::Result<CriticalFamily> {
    let fam = CriticalFamily::new_unchecked(spec)?;
    let violations = fam.hypothesis_violations();
    if !violations.is_empty() {
        let list: Vec<String> = violations.iter().map(|e| e.to_string()).collect();
        if !force {
            anyhow::bail!("family violates the hypotheses (use --force to run anyway): {}", list.join("; "));
        }
        eprintln!("warning: running despite: {}", list.join("; "));
    }
    Ok(fam)
}

fn validate(file: FileConfig, src: &Source) -> anyhow::Result<ExitCode> {
    let spec = file.family.context("validate needs a config with a [family] section")?;
    let fam = CriticalFamily::new_unchecked(spec)?;
    let violations: Vec<String> = fam.hypothesis_violations().iter().map(|e| e.to_string()).collect();
    let consts = fam.constants()?;
    let report = json!({
        "config": src.path,
        "family": fam.label().name(),
        "class": consts.class.name(),
        "constants": consts,
        "expected_log_kappa_sq": fam.expected_log_kappa_sq(),
        "violations": violations,
    });
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(if violations.is_empty() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn execute(cfg: &ExperimentConfig, fam: Option<&CriticalFamily>) -> anyhow::Result<()> {
    std::fs::create_dir_all(&cfg.out).with_context(|| format!("cannot create output directory {}", cfg.out.display()))?;
    let started = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let clock = Instant::now();
    let (files, summary) = run::run(cfg, fam)?;
    // The manifest is the only output that varies between identical runs.
    let manifest = json!({
        "tool": "critmat",
        "library_version": critmat::VERSION,
        "kind": cfg.kind.name(),
        "config": cfg,
        "files": files,
        "started_unix": started,
        "wall_time_seconds": clock.elapsed().as_secs_f64(),
    });
    run::write_json(&cfg.out, "manifest.json", &manifest)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    eprintln!("wrote {} files to {}", files.len() + 1, cfg.out.display());
    Ok(())
}
