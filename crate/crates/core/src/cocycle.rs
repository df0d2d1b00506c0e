//! The integrand f^ε of the z-picture Furstenberg formula, its cocycle
//! correction F^ε = f^ε + g^ε − E g^ε(T⋆z), the interval decomposition used
//! to evaluate ∫μ_s F^ε, and the reconstruction of γ^ε from orbit averages.
//!
//! Fiber convention: on ν = + the line of x has |x| = ε^{−z}, on ν = − it
//! has |x| = ε^{z}. The one-step growth therefore averages to f^ε(z) on the
//! positive fiber and to f^ε(−z) on the negative one.

use serde::Serialize;

use crate::dynamics::{delta, run_orbit_parallel_observed, z_of_x, Observer, OrbitConfig, Sign, StepContext};
use crate::error::{Error, Result};
use crate::mat2::ExtendedReal;
use crate::models::{CriticalFamily, Sampler, BALANCE_TOL};
use crate::rng::{stream, Purpose, Stream};
use crate::stats::{mean_and_se, BatchMeans};

/// Plateau cutoff used for the reference plot.
pub const DEFAULT_CUTOFF: f64 = 2.0 / 3.0;
pub const DEFAULT_SAMPLES: u64 = 1_000_000;
pub const MIN_SAMPLES: u64 = 10_000;

/// Grid spacing of the tabulated f^ε used along orbits.
const TABLE_STEP: f64 = 1e-3;
/// Tabulated range |z| ≤ TABLE_RANGE; beyond it f^ε is evaluated directly.
const TABLE_RANGE: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CocycleConfig {
    /// Z ∈ (0, 1): h is linear-ish on [−Z, Z] and constant outside.
    pub cutoff: f64,
    pub eps: f64,
    /// Monte Carlo draws per expectation E g^ε(T⋆z).
    pub samples: u64,
}

impl CocycleConfig {
    pub fn new(eps: f64) -> Self {
        CocycleConfig { cutoff: DEFAULT_CUTOFF, eps, samples: DEFAULT_SAMPLES }
    }

    pub fn cutoff(mut self, cutoff: f64) -> Self {
        self.cutoff = cutoff;
        self
    }

    pub fn samples(mut self, samples: u64) -> Self {
        self.samples = samples;
        self
    }

    pub fn validate(&self) -> Result<()> {
        check_cutoff(self.cutoff)?;
        check_eps(self.eps)?;
        if self.samples < MIN_SAMPLES {
            return Err(Error::InvalidParameter(format!(
                "F^eps needs at least {MIN_SAMPLES} samples per expectation, got {}",
                self.samples
            )));
        }
        Ok(())
    }
}

fn check_cutoff(cutoff: f64) -> Result<()> {
    if cutoff > 0.0 && cutoff < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("cutoff Z = {cutoff} outside (0, 1)")))
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidEps { eps, allowed: "(0, 1)" })
    }
}

/// f^ε bound to one family and one ε. Expectations run over the quadrature
/// nodes of log κ, so evaluation is deterministic.
#[derive(Debug, Clone)]
pub struct Integrand {
    delta: f64,
    /// E[log κ]; exactly 0 for balanced families, where the quadrature value
    /// is rounding noise of order 1e-17 that would swamp f^ε in the tails.
    mean_log_kappa: f64,
    /// (weight, log κ)
    nodes: Vec<(f64, f64)>,
}

impl Integrand {
    pub fn new(fam: &CriticalFamily, eps: f64) -> Result<Self> {
        check_eps(eps)?;
        let nodes = fam.log_kappa_nodes().iter().map(|&(l, w)| (w, l)).collect();
        let mean = fam.mean_log_kappa();
        let mean_log_kappa = if mean.abs() <= BALANCE_TOL { 0.0 } else { mean };
        Ok(Integrand { delta: delta(eps), mean_log_kappa, nodes })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// f^ε(z); 0 at the point ∞ and for |z| so large that ε^{2|z|} underflows
    /// (up to 2·sgn(z)·E[log κ], which vanishes for balanced families).
    pub fn value(&self, z: f64) -> f64 {
        if !z.is_finite() {
            return 0.0;
        }
        // q = ε^{2|z|} ∈ (0, 1]; writing the ratio around the dominant term keeps
        // every logarithm argument in [1, 2].
        let q = (-2.0 * z.abs() / self.delta).exp();
        let s = if z >= 0.0 { 1.0 } else { -1.0 };
        let mut curved = 0.0;
        for &(w, l) in &self.nodes {
            curved += w * ((-4.0 * s * l).exp() * q).ln_1p();
        }
        2.0 * s * self.mean_log_kappa + (curved - q.ln_1p())
    }

    /// Value on a fiber: f^ε(ν·z).
    pub fn value_fiber(&self, z: f64, nu: Sign) -> f64 {
        self.value(nu.value() * z)
    }

    /// ∂_z f^ε(z) = 2·log(1/ε)·E[1/(1 + κ^{−4}ε^{2z}) − 1/(1 + ε^{2z})] for z ≥ 0,
    /// mirrored for z < 0.
    pub fn derivative(&self, z: f64) -> f64 {
        if !z.is_finite() {
            return 0.0;
        }
        let q = (-2.0 * z.abs() / self.delta).exp();
        let base = 1.0 / (1.0 + q);
        let mut acc = 0.0;
        if z >= 0.0 {
            for &(w, l) in &self.nodes {
                acc += w * (1.0 / (1.0 + (-4.0 * l).exp() * q) - base);
            }
        } else {
            for &(w, l) in &self.nodes {
                acc += w * (base - 1.0 / (1.0 + (4.0 * l).exp() * q));
            }
        }
        2.0 * acc / self.delta
    }
}

/// f^ε(z) by quadrature over the law of log κ. Requires 0 < ε < 1.
pub fn f_eps(z: f64, fam: &CriticalFamily, eps: f64) -> Result<f64> {
    Ok(Integrand::new(fam, eps)?.value(z))
}

/// Analytic ∂_z f^ε(z).
pub fn f_eps_derivative(z: f64, fam: &CriticalFamily, eps: f64) -> Result<f64> {
    Ok(Integrand::new(fam, eps)?.derivative(z))
}

/// f^ε on a uniform grid, interpolated by cubic Hermite with the analytic
/// slope. Used where f^ε is needed once per orbit step.
#[derive(Debug, Clone)]
struct IntegrandTable {
    exact: Integrand,
    values: Vec<f64>,
    slopes: Vec<f64>,
}

impl IntegrandTable {
    fn new(exact: Integrand) -> Self {
        let n = (2.0 * TABLE_RANGE / TABLE_STEP).round() as usize + 1;
        let grid = (0..n).map(|i| -TABLE_RANGE + i as f64 * TABLE_STEP);
        let (values, slopes) = grid.map(|z| (exact.value(z), exact.derivative(z))).unzip();
        IntegrandTable { exact, values, slopes }
    }

    fn eval(&self, z: f64) -> f64 {
        if !z.is_finite() {
            return 0.0;
        }
        if z.abs() >= TABLE_RANGE {
            return self.exact.value(z);
        }
        let pos = (z + TABLE_RANGE) / TABLE_STEP;
        let i = (pos.floor() as usize).min(self.values.len() - 2);
        let t = pos - i as f64;
        let (y0, y1) = (self.values[i], self.values[i + 1]);
        let (m0, m1) = (self.slopes[i] * TABLE_STEP, self.slopes[i + 1] * TABLE_STEP);
        let t2 = t * t;
        let t3 = t2 * t;
        (2.0 * t3 - 3.0 * t2 + 1.0) * y0 + (t3 - 2.0 * t2 + t) * m0 + (-2.0 * t3 + 3.0 * t2) * y1 + (t3 - t2) * m1
    }
}

/// h(z) = sgn(z)·Z/2 for |z| > Z and z − sgn(z)·z²/(2Z) otherwise; |h| ≤ Z/2.
pub fn h_fn(z: f64, cutoff: f64) -> f64 {
    if z.abs() > cutoff {
        z.signum() * cutoff / 2.0
    } else {
        z - z.signum() * z * z / (2.0 * cutoff)
    }
}

/// g^ε(z) = log(ε^{−h(z)} + ε^{h(z)}), with the point ∞ sent to h = Z/2.
pub fn g_eps(z: ExtendedReal, cutoff: f64, eps: f64) -> f64 {
    g_with_delta(z.to_f64(), cutoff, delta(eps))
}

/// g^ε from δ; infinite z means the point ∞.
#[inline]
fn g_with_delta(z: f64, cutoff: f64, dl: f64) -> f64 {
    let h = if z.is_finite() { h_fn(z, cutoff).abs() } else { cutoff / 2.0 };
    h / dl + (-2.0 * h / dl).exp().ln_1p()
}

/// x on fiber ν at height z: ν·exp(ν·z/δ), saturating to ∞.
#[inline]
fn fiber_x(z: f64, nu: Sign, dl: f64) -> ExtendedReal {
    if !z.is_finite() {
        return ExtendedReal::Infinity;
    }
    let mag = (nu.value() * z / dl).exp();
    if mag.is_finite() {
        ExtendedReal::Finite(nu.value() * mag)
    } else {
        ExtendedReal::Infinity
    }
}

/// Monte Carlo value of F^ε at one point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CorrectedValue {
    pub z: f64,
    pub f: f64,
    pub big_f: f64,
    /// Standard error of the Monte Carlo part E g^ε(T⋆z).
    pub std_error: f64,
}

/// F^ε(z) = f^ε(z) + g^ε(z) − E g^ε(T⋆z) on fiber ν, where T⋆z is the exact
/// one-step image of (z, ν) under a fresh draw of the full matrix.
pub fn corrected_f_eps(
    z: f64,
    nu: Sign,
    fam: &CriticalFamily,
    cfg: &CocycleConfig,
    seed: u64,
) -> Result<CorrectedValue> {
    cfg.validate()?;
    let integrand = Integrand::new(fam, cfg.eps)?;
    let sampler = fam.sampler(cfg.eps)?;
    corrected_with(z, nu, &integrand, &sampler, cfg, seed)
}

fn corrected_with(
    z: f64,
    nu: Sign,
    integrand: &Integrand,
    sampler: &Sampler<'_>,
    cfg: &CocycleConfig,
    seed: u64,
) -> Result<CorrectedValue> {
    let dl = integrand.delta();
    let eps = cfg.eps;
    let x = fiber_x(z, nu, dl);
    let g0 = g_with_delta(z, cfg.cutoff, dl);
    let mut rng = stream(seed, 0, Purpose::Cocycle);
    // Accumulate g(T⋆z) − g(z): small against g itself.
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..cfg.samples {
        let draw = sampler.draw(&mut rng);
        let (z1, _) = z_of_x(draw.x_action(eps).mobius_unchecked(x), dl);
        let d = g_with_delta(z1, cfg.cutoff, dl) - g0;
        sum += d;
        sum_sq += d * d;
    }
    let n = cfg.samples as f64;
    let mean = sum / n;
    let var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
    let f = integrand.value_fiber(z, nu);
    Ok(CorrectedValue { z, f, big_f: f - mean, std_error: (var / n).sqrt() })
}

/// (z, f^ε, F^ε) on the positive fiber over a grid. Every grid point reuses
/// the same random stream, so the curve is smooth in z.
pub fn corrected_grid(fam: &CriticalFamily, cfg: &CocycleConfig, zs: &[f64], seed: u64) -> Result<Vec<CorrectedValue>> {
    cfg.validate()?;
    let integrand = Integrand::new(fam, cfg.eps)?;
    let sampler = fam.sampler(cfg.eps)?;
    zs.iter().map(|&z| corrected_with(z, Sign::Plus, &integrand, &sampler, cfg, seed)).collect()
}

/// Uniform grid of `points` values on [lo, hi].
pub fn uniform_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..points).map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64).collect(),
    }
}

/// CSV with columns z, f, F, F_stderr.
pub fn write_grid_csv<W: std::io::Write>(rows: &[CorrectedValue], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["z", "f", "F", "F_stderr"])?;
    for r in rows {
        out.serialize((r.z, r.f, r.big_f, r.std_error))?;
    }
    out.flush().map_err(|e| Error::Csv(e.to_string()))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalKind {
    Center,
    Plateau,
    Transition,
    Tail,
}

impl IntervalKind {
    pub const ALL: [IntervalKind; 4] = [IntervalKind::Center, IntervalKind::Plateau, IntervalKind::Transition, IntervalKind::Tail];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Splits the extended line by |z|: I_0 = [0, r], I_γ = (r, Z − w),
/// I_Z = [Z − w, Z + w], I_∞ = (Z + w, ∞) ∪ {∞}, with r = δ·log(1/δ) and
/// w = δ(2C0 + 2C2·e^{2C0}·ε^{1−Z}).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IntervalDecomposition {
    pub cutoff: f64,
    pub eps: f64,
    pub delta: f64,
    pub center_radius: f64,
    pub transition_half_width: f64,
}

impl IntervalDecomposition {
    /// (lower, upper) bound of |z| on I_γ.
    pub fn plateau(&self) -> (f64, f64) {
        (self.center_radius, self.cutoff - self.transition_half_width)
    }

    pub fn transition(&self) -> (f64, f64) {
        (self.cutoff - self.transition_half_width, self.cutoff + self.transition_half_width)
    }

    /// Middle half of the plateau in |z|.
    pub fn plateau_middle(&self) -> (f64, f64) {
        let (lo, hi) = self.plateau();
        let q = (hi - lo) / 4.0;
        (lo + q, hi - q)
    }

    /// True when I_γ is non-empty, i.e. the four sets are as displayed.
    pub fn is_proper(&self) -> bool {
        let (lo, hi) = self.plateau();
        lo < hi
    }

    /// Classification by |z|, checked in the order I_0, I_γ, I_Z, I_∞ so that
    /// every point gets exactly one label.
    pub fn classify(&self, z: f64) -> IntervalKind {
        let a = z.abs();
        if !a.is_finite() {
            IntervalKind::Tail
        } else if a <= self.center_radius {
            IntervalKind::Center
        } else if a < self.cutoff - self.transition_half_width {
            IntervalKind::Plateau
        } else if a <= self.cutoff + self.transition_half_width {
            IntervalKind::Transition
        } else {
            IntervalKind::Tail
        }
    }

    /// Leading value of F^ε on I_γ: 2δ/Z·E[(log κ)²].
    pub fn plateau_value(&self, log_kappa_sq: f64) -> f64 {
        2.0 * self.delta / self.cutoff * log_kappa_sq
    }
}

pub fn interval_decomposition(cutoff: f64, eps: f64, c0: f64, c2: f64) -> Result<IntervalDecomposition> {
    check_cutoff(cutoff)?;
    check_eps(eps)?;
    let dl = delta(eps);
    Ok(IntervalDecomposition {
        cutoff,
        eps,
        delta: dl,
        center_radius: dl * (1.0 / dl).ln(),
        transition_half_width: dl * (2.0 * c0 + 2.0 * c2 * (2.0 * c0).exp() * eps.powf(1.0 - cutoff)),
    })
}

/// Which constant in front of ∫μ_s F^ε reproduces the Birkhoff γ̂.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// γ = ½∫μ_s F^ε
    Half,
    /// γ = ∫μ_s F^ε
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeasureLyapunov {
    pub eps: f64,
    pub delta: f64,
    pub cutoff: f64,
    pub steps: u64,
    pub gamma_hat: f64,
    pub gamma_std_error: f64,
    /// Orbit average of f^ε(ν_n z_n).
    pub mean_f: f64,
    pub mean_f_std_error: f64,
    /// Orbit average of a one-draw unbiased estimate of F^ε(z_n); the draw is
    /// independent of the orbit.
    pub mean_big_f: f64,
    pub mean_big_f_std_error: f64,
    /// Empirical μ_s mass of I_0, I_γ, I_Z, I_∞.
    pub interval_mass: [f64; 4],
    pub plateau_value: f64,
    /// μ̂_s(I_γ)·plateau value; the other intervals contribute at lower order.
    pub bookkeeping: f64,
    /// 2δ·E[(log κ)²]
    pub predicted_two_gamma: f64,
    /// |γ̂ − ½·mean F| and |γ̂ − mean F| in units of their combined standard error.
    pub half_z_score: f64,
    pub full_z_score: f64,
    pub normalization: Normalization,
}

impl MeasureLyapunov {
    pub fn gamma_half_f(&self) -> f64 {
        0.5 * self.mean_f
    }

    pub fn gamma_for(&self, n: Normalization) -> f64 {
        match n {
            Normalization::Half => 0.5 * self.mean_big_f,
            Normalization::Full => self.mean_big_f,
        }
    }
}

struct CocycleObserver<'a> {
    table: &'a IntegrandTable,
    decomposition: &'a IntervalDecomposition,
    sampler: Sampler<'a>,
    rng: Stream,
    eps: f64,
    delta: f64,
    cutoff: f64,
    f: BatchMeans,
    big_f: BatchMeans,
    counts: [u64; 4],
}

impl Observer for CocycleObserver<'_> {
    fn on_step(&mut self, step: &StepContext<'_>) {
        let fv = self.table.eval(step.nu.value() * step.z);
        let draw = self.sampler.draw(&mut self.rng);
        let (z1, _) = z_of_x(draw.x_action(self.eps).mobius_unchecked(step.x), self.delta);
        let dg = g_with_delta(z1, self.cutoff, self.delta) - g_with_delta(step.z, self.cutoff, self.delta);
        self.f.push(fv);
        self.big_f.push(fv - dg);
        self.counts[self.decomposition.classify(step.z).index()] += 1;
    }
}

/// Streams f^ε and F^ε along the orbit next to the Birkhoff sum, then decides
/// which normalization of ∫μ_s F^ε matches γ̂.
pub fn lyapunov_via_measure(
    fam: &CriticalFamily,
    cfg: &OrbitConfig,
    cutoff: f64,
    seed: u64,
    workers: u32,
) -> Result<MeasureLyapunov> {
    check_cutoff(cutoff)?;
    check_eps(cfg.eps)?;
    let consts = fam.constants()?;
    let decomposition = interval_decomposition(cutoff, cfg.eps, consts.c0, consts.c2)?;
    let table = IntegrandTable::new(Integrand::new(fam, cfg.eps)?);
    let sampler = fam.sampler(cfg.eps)?;
    let per_worker = cfg.steps / u64::from(workers.max(1));
    let make = |w: u32| CocycleObserver {
        table: &table,
        decomposition: &decomposition,
        sampler: sampler.clone(),
        rng: stream(seed, w, Purpose::Cocycle),
        eps: cfg.eps,
        delta: decomposition.delta,
        cutoff,
        f: BatchMeans::new(per_worker, cfg.batches),
        big_f: BatchMeans::new(per_worker, cfg.batches),
        counts: [0; 4],
    };
    let (stats, observers) = run_orbit_parallel_observed(fam, cfg, seed, workers, make)?;

    let mut observers = observers.into_iter();
    let first = observers.next().expect("at least one worker");
    let (mut f, mut big_f, mut counts) = (first.f, first.big_f, first.counts);
    for o in observers {
        f.merge(&o.f);
        big_f.merge(&o.big_f);
        for (c, oc) in counts.iter_mut().zip(o.counts) {
            *c += oc;
        }
    }
    let total = counts.iter().sum::<u64>() as f64;
    let interval_mass = counts.map(|c| c as f64 / total);
    let e2 = fam.expected_log_kappa_sq();
    let plateau_value = decomposition.plateau_value(e2);

    let gamma_hat = stats.birkhoff.mean();
    let gamma_se = stats.birkhoff.std_error();
    let z_score = |c: f64| {
        let se = (gamma_se * gamma_se + c * c * big_f.std_error() * big_f.std_error()).sqrt();
        (gamma_hat - c * big_f.mean()).abs() / se
    };
    let (half_z_score, full_z_score) = (z_score(0.5), z_score(1.0));
    let normalization = if half_z_score <= full_z_score { Normalization::Half } else { Normalization::Full };
    Ok(MeasureLyapunov {
        eps: cfg.eps,
        delta: decomposition.delta,
        cutoff,
        steps: stats.steps,
        gamma_hat,
        gamma_std_error: gamma_se,
        mean_f: f.mean(),
        mean_f_std_error: f.std_error(),
        mean_big_f: big_f.mean(),
        mean_big_f_std_error: big_f.std_error(),
        interval_mass,
        plateau_value,
        bookkeeping: interval_mass[IntervalKind::Plateau.index()] * plateau_value,
        predicted_two_gamma: 2.0 * decomposition.delta * e2,
        half_z_score,
        full_z_score,
        normalization,
    })
}

/// Spread (max − min) of F^ε over the middle half of I_γ, sampled at `points`
/// positive z values, together with the values.
pub fn plateau_profile(
    fam: &CriticalFamily,
    cfg: &CocycleConfig,
    decomposition: &IntervalDecomposition,
    points: usize,
    seed: u64,
) -> Result<Vec<CorrectedValue>> {
    let (lo, hi) = decomposition.plateau_middle();
    corrected_grid(fam, cfg, &uniform_grid(lo, hi, points), seed)
}

/// Mean and standard error of F^ε values, for summaries.
pub fn summarize(rows: &[CorrectedValue]) -> (f64, f64) {
    let v: Vec<f64> = rows.iter().map(|r| r.big_f).collect();
    mean_and_se(&v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::BoundedDistribution;

    fn pm_one() -> CriticalFamily {
        CriticalFamily::generic(
            BoundedDistribution::Discrete { values: vec![-1.0, 1.0], weights: vec![0.5, 0.5] },
            BoundedDistribution::constant(1.0),
            BoundedDistribution::constant(0.0),
            BoundedDistribution::constant(0.0),
        )
        .unwrap()
    }

    fn fig41() -> CriticalFamily {
        CriticalFamily::hopping(BoundedDistribution::centered(1.1, 0.4)).unwrap()
    }

    #[test]
    fn f_at_zero_is_log_cosh_two() {
        let v = f_eps(0.0, &pm_one(), 1e-6).unwrap();
        assert!((v - 2.0f64.cosh().ln()).abs() < 1e-12);
        assert!((v - 1.3250).abs() < 1e-4);
    }

    #[test]
    fn f_at_zero_matches_direct_expectation() {
        let fam = fig41();
        let direct = fam.expect_log_kappa(|l| (0.5 * ((2.0 * l).exp() + (-2.0 * l).exp())).ln());
        assert!((f_eps(0.0, &fam, 1e-8).unwrap() - direct).abs() < 1e-12);
    }

    #[test]
    fn f_matches_naive_formula_at_moderate_z() {
        // Oracle: the ratio form evaluated in plain powers, fine for |z|/δ small.
        let fam = fig41();
        let eps: f64 = 1e-3;
        let dl = delta(eps);
        for z in [-0.4, -0.1, 0.05, 0.3] {
            let naive = fam.expect_log_kappa(|l| {
                let s = z + dl * 2.0 * l;
                ((eps.powf(-s) + eps.powf(s)) / (eps.powf(-z) + eps.powf(z))).ln()
            });
            assert!((f_eps(z, &fam, eps).unwrap() - naive).abs() < 1e-10, "z = {z}");
        }
    }

    #[test]
    fn f_is_zero_at_infinity() {
        assert_eq!(f_eps(f64::INFINITY, &fig41(), 1e-6).unwrap(), 0.0);
    }

    #[test]
    fn derivative_matches_central_difference() {
        let fam = fig41();
        let it = Integrand::new(&fam, 1e-6).unwrap();
        for z in [-0.5, -0.2, -0.05, 0.03, 0.1, 0.4] {
            // central differences at h and 2h, Richardson-combined to cancel the h² term
            let h = 1e-4;
            let c = |h: f64| (it.value(z + h) - it.value(z - h)) / (2.0 * h);
            let fd = (4.0 * c(h) - c(2.0 * h)) / 3.0;
            let an = it.derivative(z);
            assert!((fd - an).abs() <= 1e-6 * an.abs().max(1e-3), "z = {z}: {fd} vs {an}");
        }
    }

    #[test]
    fn f_is_positive_and_below_two_c0() {
        let fam = fig41();
        let c0 = fam.c0();
        for eps in [1e-4, 1e-8] {
            let it = Integrand::new(&fam, eps).unwrap();
            for z in uniform_grid(-0.9, 0.9, 50) {
                let v = it.value(z);
                assert!(v > 0.0 && v < 2.0 * c0, "eps {eps}, z {z}: {v}");
            }
        }
    }

    #[test]
    fn f_decreases_away_from_the_center() {
        let fam = fig41();
        let eps = 1e-8;
        let it = Integrand::new(&fam, eps).unwrap();
        let edge = 2.0 * fam.c0() * it.delta();
        let h = 1e-4;
        for z in uniform_grid(edge + h, 0.9, 25).into_iter().flat_map(|z| [z, -z]) {
            let fd = (it.value(z + h) - it.value(z - h)) / (2.0 * h);
            assert!(z.signum() * fd < 0.0, "z = {z}: {fd}");
        }
    }

    #[test]
    fn f_tail_bound() {
        let fam = fig41();
        let eps: f64 = 1e-8;
        let it = Integrand::new(&fam, eps).unwrap();
        let r = 2.0 * it.delta() * (1.0 / it.delta()).ln();
        for z in [r, -r] {
            assert!(it.value(z) <= 10.0 * eps.powf(2.0 * r), "z = {z}");
        }
    }

    #[test]
    fn f_is_even_for_symmetric_laws() {
        let it = Integrand::new(&fig41(), 1e-6).unwrap();
        for z in uniform_grid(0.0, 1.0, 21) {
            assert!((it.value(z) - it.value(-z)).abs() < 1e-12);
        }
    }

    #[test]
    fn table_reproduces_exact_values() {
        let it = Integrand::new(&fig41(), 1e-8).unwrap();
        let table = IntegrandTable::new(it.clone());
        for z in [-1.7, -0.5, -0.0123, 0.0, 0.0004, 0.33, 2.5] {
            assert!((table.eval(z) - it.value(z)).abs() < 1e-8, "z = {z}");
        }
    }

    #[test]
    fn h_examples() {
        let zc = 2.0 / 3.0;
        assert_eq!(h_fn(0.0, zc), 0.0);
        assert!((h_fn(zc, zc) - zc / 2.0).abs() < 1e-15);
        assert!((h_fn(-zc, zc) + zc / 2.0).abs() < 1e-15);
        assert!((h_fn(zc + 1e-12, zc) - zc / 2.0).abs() < 1e-12);
        assert!((h_fn(zc / 2.0, zc) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn g_examples() {
        let zc = 2.0 / 3.0;
        let eps = 1e-6;
        assert!((g_eps(ExtendedReal::Finite(0.0), zc, eps) - 2.0f64.ln()).abs() < 1e-15);
        let at_inf = g_eps(ExtendedReal::Infinity, zc, eps);
        assert!(at_inf.is_finite());
        assert!((at_inf - g_eps(ExtendedReal::Finite(zc), zc, eps)).abs() < 1e-12);
        assert!((at_inf - g_eps(ExtendedReal::Finite(-zc), zc, eps)).abs() < 1e-12);
        // log(ε^{−Z/2} + ε^{Z/2}) directly
        let direct = (eps.powf(-zc / 2.0) + eps.powf(zc / 2.0)).ln();
        assert!((at_inf - direct).abs() < 1e-12);
        let mut prev = g_eps(ExtendedReal::Finite(0.0), zc, eps);
        for i in 1..=100 {
            let v = g_eps(ExtendedReal::Finite(zc * i as f64 / 100.0), zc, eps);
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn decomposition_example() {
        let d = interval_decomposition(2.0 / 3.0, 1e-6, 0.5, 1.0).unwrap();
        assert!((d.delta - 1.0 / 13.815_510_557_964_274).abs() < 1e-12);
        assert!((d.center_radius - 0.190).abs() < 1e-3);
        let tiny = interval_decomposition(0.5, 1e-200, 0.5, 1.0).unwrap();
        assert!((tiny.transition_half_width - tiny.delta * 2.0 * 0.5).abs() < 1e-12);
    }

    #[test]
    fn decomposition_labels_every_point_once() {
        let d = interval_decomposition(2.0 / 3.0, 1e-6, 0.76, 2.0).unwrap();
        assert!(d.is_proper());
        let (p_lo, p_hi) = d.plateau();
        let (t_lo, t_hi) = d.transition();
        assert_eq!(d.classify(0.0), IntervalKind::Center);
        assert_eq!(d.classify(-p_lo), IntervalKind::Center);
        assert_eq!(d.classify(p_lo + 1e-9), IntervalKind::Plateau);
        assert_eq!(d.classify(p_hi), IntervalKind::Transition);
        assert_eq!(d.classify(-t_lo), IntervalKind::Transition);
        assert_eq!(d.classify(t_hi), IntervalKind::Transition);
        assert_eq!(d.classify(t_hi + 1e-9), IntervalKind::Tail);
        assert_eq!(d.classify(f64::INFINITY), IntervalKind::Tail);
    }

    #[test]
    fn corrected_value_is_deterministic_and_small_at_the_center() {
        let fam = fig41();
        let cfg = CocycleConfig::new(1e-6).samples(20_000);
        let a = corrected_f_eps(0.0, Sign::Plus, &fam, &cfg, 3).unwrap();
        let b = corrected_f_eps(0.0, Sign::Plus, &fam, &cfg, 3).unwrap();
        assert_eq!(a, b);
        // f(0) is macroscopic, the correction removes most of it
        assert!(a.f > 0.1);
        assert!(a.big_f.abs() < 0.2 * a.f);
    }

    #[test]
    fn config_validation() {
        assert!(CocycleConfig::new(1e-6).validate().is_ok());
        assert!(CocycleConfig::new(1e-6).cutoff(1.0).validate().is_err());
        assert!(CocycleConfig::new(0.0).validate().is_err());
        assert!(CocycleConfig::new(1e-6).samples(10).validate().is_err());
    }
}
