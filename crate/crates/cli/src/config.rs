//! Experiment configuration: a TOML file merged with command-line overrides.

use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use critmat::models::FamilySpec;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Lyapunov,
    LyapunovSweep,
    Measure,
    Passages,
    Comparison,
    Cocycle,
    Ising,
    ToyChain,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Lyapunov => "lyapunov",
            Kind::LyapunovSweep => "lyapunov-sweep",
            Kind::Measure => "measure",
            Kind::Passages => "passages",
            Kind::Comparison => "comparison",
            Kind::Cocycle => "cocycle",
            Kind::Ising => "ising",
            Kind::ToyChain => "toy-chain",
        }
    }

    fn needs_family(self) -> bool {
        self != Kind::ToyChain
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Contents of a config file. Every field is optional so that a file can
/// hold just the family and leave the rest to flags and defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub kind: Option<Kind>,
    pub family: Option<FamilySpec>,
    pub eps: Option<f64>,
    pub eps_list: Option<Vec<f64>>,
    pub steps: Option<u64>,
    pub seed: Option<u64>,
    pub workers: Option<u32>,
    pub out: Option<PathBuf>,
    pub burn_in: Option<u64>,
    pub bins: Option<usize>,
    pub zmax: Option<f64>,
    pub theta_bins: Option<usize>,
    pub target_z: Option<f64>,
    /// Plateau cutoff Z of the cocycle corrector.
    pub cutoff: Option<f64>,
    /// Monte Carlo draws per expectation (cocycle).
    pub samples: Option<u64>,
    pub grid_points: Option<usize>,
    /// Comparison passages per variant.
    pub passages: Option<usize>,
    /// Ising coupling J; sets ε = e^{−2J} when eps is absent.
    pub coupling: Option<f64>,
    /// Largest chain size for toy-chain.
    pub n: Option<usize>,
}

/// Values given on the command line; they win over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub workers: Option<u32>,
    pub out: Option<PathBuf>,
    pub n: Option<usize>,
}

/// Fully resolved settings of one run; echoed into the manifest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub kind: Kind,
    pub family: Option<FamilySpec>,
    pub eps: Option<f64>,
    pub eps_list: Vec<f64>,
    pub steps: u64,
    pub seed: u64,
    pub workers: u32,
    pub out: PathBuf,
    pub burn_in: u64,
    pub bins: usize,
    pub zmax: f64,
    pub theta_bins: usize,
    pub target_z: f64,
    pub cutoff: f64,
    pub samples: u64,
    pub grid_points: usize,
    pub passages: usize,
    pub coupling: Option<f64>,
    pub n: usize,
}

pub const DEFAULT_STEPS: u64 = 1_000_000;
pub const DEFAULT_SEED: u64 = 1;
pub const DEFAULT_EPS_LIST: [f64; 5] = [1e-4, 1e-6, 1e-8, 1e-10, 1e-12];
pub const DEFAULT_THETA_BINS: usize = 200;
pub const DEFAULT_GRID_POINTS: usize = 201;
pub const DEFAULT_PASSAGES: usize = 2000;
pub const DEFAULT_TOY_N: usize = 200;

/// Config source text kept for locating keys in error messages.
#[derive(Debug, Clone, Default)]
pub struct Source {
    pub path: Option<PathBuf>,
    pub text: String,
}

impl Source {
    /// "path:line: " prefix for a top-level key, or just "path: ".
    fn at(&self, key: &str) -> String {
        let Some(path) = &self.path else {
            return String::new();
        };
        match key_line(&self.text, key) {
            Some(line) => format!("{}:{}: ", path.display(), line),
            None => format!("{}: ", path.display()),
        }
    }
}

/// 1-based line of the first `key = …` or `[key…` line.
fn key_line(text: &str, key: &str) -> Option<usize> {
    text.lines().position(|l| {
        let t = l.trim_start();
        let assign = t.strip_prefix(key).is_some_and(|rest| rest.trim_start().starts_with('='));
        let table = t.strip_prefix('[').is_some_and(|rest| rest.trim_start().starts_with(key));
        assign || table
    })
    .map(|i| i + 1)
}

pub fn load(path: &Path) -> anyhow::Result<(FileConfig, Source)> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
    let file: FileConfig = toml::from_str(&text).map_err(|e| {
        let line = e.span().map(|s| text[..s.start].matches('\n').count() + 1);
        match line {
            Some(l) => anyhow::anyhow!("{}:{}: {}", path.display(), l, e.message()),
            None => anyhow::anyhow!("{}: {}", path.display(), e.message()),
        }
    })?;
    Ok((file, Source { path: Some(path.to_path_buf()), text }))
}

pub fn resolve(kind: Kind, file: FileConfig, over: Overrides, src: &Source) -> anyhow::Result<ExperimentConfig> {
    if let Some(k) = file.kind {
        if k != kind {
            bail!("{}config is for `{}` but the subcommand is `{}`", src.at("kind"), k, kind);
        }
    }
    let eps = match (file.eps, file.coupling) {
        (Some(e), _) => Some(e),
        (None, Some(j)) if kind == Kind::Ising => Some((-2.0 * j).exp()),
        _ => None,
    };
    let cfg = ExperimentConfig {
        kind,
        family: file.family,
        eps,
        eps_list: file.eps_list.unwrap_or_else(|| DEFAULT_EPS_LIST.to_vec()),
        steps: file.steps.unwrap_or(DEFAULT_STEPS),
        seed: over.seed.or(file.seed).unwrap_or(DEFAULT_SEED),
        workers: over.workers.or(file.workers).unwrap_or(1),
        out: over.out.or(file.out).unwrap_or_else(|| PathBuf::from("out").join(kind.name())),
        burn_in: file.burn_in.unwrap_or(critmat::dynamics::DEFAULT_BURN_IN),
        bins: file.bins.unwrap_or(critmat::stats::DEFAULT_BINS),
        zmax: file.zmax.unwrap_or(critmat::stats::DEFAULT_ZMAX),
        theta_bins: file.theta_bins.unwrap_or(DEFAULT_THETA_BINS),
        target_z: file.target_z.unwrap_or(0.0),
        cutoff: file.cutoff.unwrap_or(critmat::cocycle::DEFAULT_CUTOFF),
        samples: file.samples.unwrap_or(critmat::cocycle::DEFAULT_SAMPLES),
        grid_points: file.grid_points.unwrap_or(DEFAULT_GRID_POINTS),
        passages: file.passages.unwrap_or(DEFAULT_PASSAGES),
        coupling: file.coupling,
        n: over.n.or(file.n).unwrap_or(DEFAULT_TOY_N),
    };
    validate(&cfg, src)?;
    Ok(cfg)
}

fn check_eps(eps: f64, key: &str, src: &Source) -> anyhow::Result<()> {
    if !(eps > 0.0 && eps < 1.0) {
        bail!("{}{key} = {eps} must lie in (0, 1)", src.at(key));
    }
    Ok(())
}

fn validate(cfg: &ExperimentConfig, src: &Source) -> anyhow::Result<()> {
    let k = cfg.kind;
    if k.needs_family() && cfg.family.is_none() {
        bail!("{}`{}` needs a [family] section", src.at("family"), k);
    }
    match k {
        Kind::LyapunovSweep => {
            if cfg.eps_list.len() < 3 {
                bail!("{}eps_list needs at least 3 values for a fit", src.at("eps_list"));
            }
            for &e in &cfg.eps_list {
                check_eps(e, "eps_list", src)?;
            }
        }
        Kind::ToyChain => {
            if cfg.n < 2 {
                bail!("{}n = {} must be at least 2", src.at("n"), cfg.n);
            }
        }
        _ => match cfg.eps {
            Some(e) => check_eps(e, if cfg.coupling.is_some() && k == Kind::Ising { "coupling" } else { "eps" }, src)?,
            None => bail!("{}`{}` needs eps", src.at("eps"), k),
        },
    }
    let positive = [
        ("steps", cfg.steps as f64),
        ("workers", cfg.workers as f64),
        ("bins", cfg.bins as f64),
        ("zmax", cfg.zmax),
        ("theta_bins", cfg.theta_bins as f64),
        ("samples", cfg.samples as f64),
        ("grid_points", cfg.grid_points as f64),
        ("passages", cfg.passages as f64),
    ];
    for (key, v) in positive {
        if !(v > 0.0) {
            bail!("{}{key} must be positive", src.at(key));
        }
    }
    if let Some(j) = cfg.coupling {
        if !(j > 0.0) {
            bail!("{}coupling = {j} must be positive", src.at("coupling"));
        }
    }
    if !(cfg.cutoff > 0.0 && cfg.cutoff < 1.0) {
        bail!("{}cutoff = {} must lie in (0, 1)", src.at("cutoff"), cfg.cutoff);
    }
    if !cfg.target_z.is_finite() {
        bail!("{}target_z must be finite", src.at("target_z"));
    }
    Ok(())
}
