//! One runner per experiment kind. Each writes its primary outputs into the
//! run directory and returns a JSON summary for the console.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context};
use critmat::cocycle::{self, CocycleConfig};
use critmat::comparison::{coupled_sandwich_run_with, renewal_estimates, toy_chain_residual, Variant};
use critmat::dynamics::{run_orbit_parallel, OrbitConfig, Sign};
use critmat::estimators::{
    ising_deterministic_term, lyapunov_asymptotic, lyapunov_birkhoff_with, lyapunov_fit, lyapunov_sweep,
    measure_distance, pullback_theta_density, LyapunovEstimate, ReferenceLaw, IDS_PER_PAIR_RATE,
};
use critmat::models::{CriticalFamily, FamilySpec, TypeClass};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{ExperimentConfig, Kind};

pub fn create(dir: &Path, name: &str) -> anyhow::Result<BufWriter<File>> {
    let path = dir.join(name);
    let f = File::create(&path).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(BufWriter::new(f))
}

pub fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> anyhow::Result<()> {
    let mut w = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn orbit_config(cfg: &ExperimentConfig, eps: f64) -> OrbitConfig {
    let mut o = OrbitConfig::new(eps, cfg.steps).burn_in(cfg.burn_in).target_z(cfg.target_z);
    o.bins = cfg.bins;
    o.zmax = cfg.zmax;
    o
}

fn eps_of(cfg: &ExperimentConfig) -> f64 {
    cfg.eps.expect("validated: eps present")
}

/// Runs the experiment and returns (files written, summary).
pub fn run(cfg: &ExperimentConfig, fam: Option<&CriticalFamily>) -> anyhow::Result<(Vec<&'static str>, Value)> {
    let dir = cfg.out.as_path();
    let family = || fam.context("this experiment needs a family");
    match cfg.kind {
        Kind::Lyapunov => lyapunov(cfg, family()?, dir),
        Kind::LyapunovSweep => sweep(cfg, family()?, dir),
        Kind::Measure => measure(cfg, family()?, dir),
        Kind::Passages => passages(cfg, family()?, dir),
        Kind::Comparison => comparison(cfg, family()?, dir),
        Kind::Cocycle => cocycle_run(cfg, family()?, dir),
        Kind::Ising => ising(cfg, family()?, dir),
        Kind::ToyChain => toy_chain(cfg, dir),
    }
}

fn lyapunov(cfg: &ExperimentConfig, fam: &CriticalFamily, dir: &Path) -> anyhow::Result<(Vec<&'static str>, Value)> {
    let eps = eps_of(cfg);
    let est = lyapunov_birkhoff_with(fam, &orbit_config(cfg, eps), cfg.seed, cfg.workers)?;
    let summary = json!({
        "estimate": est,
        "asymptotic_prediction": lyapunov_asymptotic(fam, eps).ok(),
    });
    write_json(dir, "lyapunov.json", &summary)?;
    Ok((vec!["lyapunov.json"], summary))
}

fn sweep(cfg: &ExperimentConfig, fam: &CriticalFamily, dir: &Path) -> anyhow::Result<(Vec<&'static str>, Value)> {
    let base = orbit_config(cfg, cfg.eps_list[0]);
    let rows = lyapunov_sweep(fam, &cfg.eps_list, &base, cfg.seed, cfg.workers)?;
    let mut w = csv::Writer::from_writer(create(dir, "sweep.csv")?);
    w.write_record(["eps", "gamma_hat", "stderr", "prediction"])?;
    for r in &rows {
        w.serialize((r.eps, r.gamma_hat, r.stderr, r.asymptotic_prediction))?;
    }
    w.flush()?;
    let points: Vec<(f64, f64)> = rows.iter().map(|r| (r.eps, r.gamma_hat)).collect();
    let fit = lyapunov_fit(&points)?;
    let summary = json!({
        "fit": fit,
        "expected_slope": fam.expected_log_kappa_sq(),
        "slope_ratio": fit.slope / fam.expected_log_kappa_sq(),
    });
    write_json(dir, "fit.json", &summary)?;
    Ok((vec!["sweep.csv", "fit.json"], summary))
}

fn measure(cfg: &ExperimentConfig, fam: &CriticalFamily, dir: &Path) -> anyhow::Result<(Vec<&'static str>, Value)> {
    let eps = eps_of(cfg);
    let stats = run_orbit_parallel(fam, &orbit_config(cfg, eps), cfg.seed, cfg.workers)?;
    stats.measure.write_csv(create(dir, "histogram.csv")?)?;
    let theta = pullback_theta_density(&stats.measure, eps, cfg.theta_bins)?;
    let mut w = csv::Writer::from_writer(create(dir, "theta.csv")?);
    w.write_record(["theta_lo", "theta_hi", "density"])?;
    for (e, d) in theta.edges.windows(2).zip(&theta.density) {
        w.serialize((e[0], e[1], d))?;
    }
    w.flush()?;
    let m = &stats.measure;
    let tail = |nu: Sign| m.mass_between(nu, 0.0, 1.0f64.min(m.zmax)) / m.total;
    let summary = json!({
        "steps": stats.steps,
        "distance_to_triangular": measure_distance(m, ReferenceLaw::Triangular)?,
        "mass_on_unit_interval_plus": tail(Sign::Plus),
        "mass_on_unit_interval_minus": tail(Sign::Minus),
        "theta_atom_infinity": theta.atom_infinity,
        "lyapunov": LyapunovEstimate::from(&stats),
    });
    write_json(dir, "summary.json", &summary)?;
    Ok((vec!["histogram.csv", "theta.csv", "summary.json"], summary))
}

fn passages(cfg: &ExperimentConfig, fam: &CriticalFamily, dir: &Path) -> anyhow::Result<(Vec<&'static str>, Value)> {
    let eps = eps_of(cfg);
    let stats = run_orbit_parallel(fam, &orbit_config(cfg, eps), cfg.seed, cfg.workers)?;
    stats.passages.write_csv(create(dir, "passages.csv")?)?;
    let rate = stats.passages.rate(stats.steps);
    let rotating = fam.constants()?.class == TypeClass::Rotating;
    let ids = rotating.then(|| {
        let l = eps.ln();
        json!({
            "ids": IDS_PER_PAIR_RATE * 0.5 * rate,
            "predicted": fam.expected_log_kappa_sq() / (4.0 * l * l),
        })
    });
    let summary = json!({
        "steps": stats.steps,
        "passages": stats.passages.len(),
        "rate": rate,
        "alternating": stats.passages.is_consistent(),
        "density_of_states": ids,
    });
    write_json(dir, "summary.json", &summary)?;
    Ok((vec!["passages.csv", "summary.json"], summary))
}

fn comparison(cfg: &ExperimentConfig, fam: &CriticalFamily, dir: &Path) -> anyhow::Result<(Vec<&'static str>, Value)> {
    let eps = eps_of(cfg);
    let slower = match fam.constants()?.class {
        TypeClass::Confined => Variant::SlowerConfined,
        _ => Variant::Slower,
    };
    let faster = renewal_estimates(Variant::Faster, fam, eps, cfg.passages, cfg.seed, cfg.target_z, cfg.workers)?;
    let slow = renewal_estimates(slower, fam, eps, cfg.passages, cfg.seed, cfg.target_z, cfg.workers)?;
    faster.write_csv(create(dir, "renewal_faster.csv")?)?;
    slow.write_csv(create(dir, "renewal_slower.csv")?)?;
    let sandwich = coupled_sandwich_run_with(fam, &orbit_config(cfg, eps), cfg.seed, 0)?;
    let summary = json!({ "faster": faster, "slower": slow, "sandwich": sandwich });
    write_json(dir, "summary.json", &summary)?;
    Ok((vec!["renewal_faster.csv", "renewal_slower.csv", "summary.json"], summary))
}

fn cocycle_run(cfg: &ExperimentConfig, fam: &CriticalFamily, dir: &Path) -> anyhow::Result<(Vec<&'static str>, Value)> {
    let eps = eps_of(cfg);
    let cc = CocycleConfig::new(eps).cutoff(cfg.cutoff).samples(cfg.samples);
    let rows = cocycle::corrected_grid(fam, &cc, &cocycle::uniform_grid(-1.0, 1.0, cfg.grid_points), cfg.seed)?;
    cocycle::write_grid_csv(&rows, create(dir, "cocycle.csv")?)?;
    let consts = fam.constants()?;
    let dec = cocycle::interval_decomposition(cfg.cutoff, eps, consts.c0, consts.c2)?;
    let plateau_value = dec.plateau_value(fam.expected_log_kappa_sq());
    let (lo, hi) = dec.plateau_middle();
    let middle: Vec<f64> = rows.iter().filter(|r| (lo..=hi).contains(&r.z.abs())).map(|r| r.big_f).collect();
    let ratio_range = middle.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
        (a.min(v / plateau_value), b.max(v / plateau_value))
    });
    let via_measure = cocycle::lyapunov_via_measure(fam, &orbit_config(cfg, eps), cfg.cutoff, cfg.seed, cfg.workers)?;
    let summary = json!({
        "decomposition": dec,
        "plateau_value": plateau_value,
        "plateau_ratio_min": ratio_range.0,
        "plateau_ratio_max": ratio_range.1,
        "lyapunov_via_measure": via_measure,
    });
    write_json(dir, "summary.json", &summary)?;
    Ok((vec!["cocycle.csv", "summary.json"], summary))
}

fn ising(cfg: &ExperimentConfig, fam: &CriticalFamily, dir: &Path) -> anyhow::Result<(Vec<&'static str>, Value)> {
    if !matches!(fam.spec(), FamilySpec::Ising { .. }) {
        bail!("`ising` needs family = \"ising\"");
    }
    let eps = eps_of(cfg);
    let stats = run_orbit_parallel(fam, &orbit_config(cfg, eps), cfg.seed, cfg.workers)?;
    stats.measure.write_csv(create(dir, "histogram.csv")?)?;
    let est = LyapunovEstimate::from(&stats);
    let coupling = cfg.coupling.unwrap_or(-0.5 * eps.ln());
    let summary = json!({
        "distance_to_uniform": measure_distance(&stats.measure, ReferenceLaw::UniformNegative)?,
        "lyapunov": est,
        "asymptotic_prediction": lyapunov_asymptotic(fam, eps).ok(),
        "coupling": coupling,
        "free_energy": ising_deterministic_term(coupling) + est.gamma_hat,
    });
    write_json(dir, "summary.json", &summary)?;
    Ok((vec!["histogram.csv", "summary.json"], summary))
}

fn toy_chain(cfg: &ExperimentConfig, dir: &Path) -> anyhow::Result<(Vec<&'static str>, Value)> {
    let mut w = csv::Writer::from_writer(create(dir, "toy_chain.csv")?);
    w.write_record(["n", "residual"])?;
    let mut worst = 0.0f64;
    for n in 2..=cfg.n {
        let r = toy_chain_residual(n)?;
        worst = worst.max(r);
        w.serialize((n, r))?;
    }
    w.flush()?;
    let summary = json!({ "max_n": cfg.n, "max_residual": worst });
    write_json(dir, "summary.json", &summary)?;
    Ok((vec!["toy_chain.csv", "summary.json"], summary))
}
