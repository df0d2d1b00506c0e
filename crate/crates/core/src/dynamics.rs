//! Coordinate pictures of the projective line and streaming orbit evolution.
//!
//! Pictures: the Prüfer angle θ ∈ [0, π); the Dyson–Schmidt variable
//! x = −cot θ; the logarithmic pair (y, ν) with y = ν·log|x|/(2C0); and the
//! rescaled pair (z, ν) with z = 2C0·δ·y, δ = 1/log(1/ε), so x = ν·ε^{−νz}.
//! Both x = 0 and x = ∞ map to the point z = ∞.

use std::f64::consts::FRAC_PI_4;
use std::thread;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::mat2::{act_projective, normalize_angle, ExtendedReal, Matrix2};
use crate::models::{CriticalFamily, Draw};
use crate::rng::{stream, Purpose};
use crate::stats::{BatchMeans, EmpiricalMeasure, DEFAULT_BINS, DEFAULT_ZMAX};

pub const DEFAULT_BURN_IN: u64 = 100_000;
pub const DEFAULT_THETA0: f64 = FRAC_PI_4;
pub const DEFAULT_BATCHES: u64 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    /// sgn with sgn(0) = +1.
    #[inline]
    pub fn of(v: f64) -> Sign {
        if v < 0.0 {
            Sign::Minus
        } else {
            Sign::Plus
        }
    }

    #[inline]
    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }

    pub fn flip(self) -> Sign {
        match self {
            Sign::Plus => Sign::Minus,
            Sign::Minus => Sign::Plus,
        }
    }

    pub fn as_i8(self) -> i8 {
        match self {
            Sign::Plus => 1,
            Sign::Minus => -1,
        }
    }
}

/// Point (z, ν) of the two-fiber line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiberPoint {
    pub z: ExtendedReal,
    pub nu: Sign,
}

/// δ = 1/log(1/ε); 0 at ε = 0.
pub fn delta(eps: f64) -> f64 {
    if eps == 0.0 {
        0.0
    } else {
        -1.0 / eps.ln()
    }
}

fn check_unit_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidEps { eps, allowed: "(0, 1)" })
    }
}

/// x = −cot θ; θ = 0 is the point ∞.
pub fn theta_to_x(theta: f64) -> ExtendedReal {
    let (s, c) = theta.sin_cos();
    if s == 0.0 {
        ExtendedReal::Infinity
    } else {
        ExtendedReal::new(-c / s)
    }
}

/// Inverse of [`theta_to_x`] onto [0, π).
pub fn x_to_theta(x: ExtendedReal) -> f64 {
    match x {
        ExtendedReal::Infinity => 0.0,
        ExtendedReal::Finite(v) => normalize_angle(1.0f64.atan2(-v)),
    }
}

/// (y, ν) with y = sgn(x)·log|x|/(2C0). x = 0 gives (−∞, +) and x = ∞ gives (+∞, +).
pub fn x_to_ynu(x: ExtendedReal, c0: f64) -> (f64, Sign) {
    match x {
        ExtendedReal::Infinity => (f64::INFINITY, Sign::Plus),
        ExtendedReal::Finite(v) => {
            let nu = Sign::of(v);
            (nu.value() * v.abs().ln() / (2.0 * c0), nu)
        }
    }
}

/// Inverse of [`x_to_ynu`]: x = ν·exp(2C0·ν·y).
pub fn ynu_to_x(y: f64, nu: Sign, c0: f64) -> ExtendedReal {
    let mag = (2.0 * c0 * nu.value() * y).exp();
    if mag.is_infinite() {
        ExtendedReal::Infinity
    } else {
        ExtendedReal::Finite(nu.value() * mag)
    }
}

/// z = 2C0·y/log(1/ε).
pub fn y_to_z(y: f64, eps: f64, c0: f64) -> Result<f64> {
    check_unit_eps(eps)?;
    Ok(2.0 * c0 * y * delta(eps))
}

/// y = z·log(1/ε)/(2C0).
pub fn z_to_y(z: f64, eps: f64, c0: f64) -> Result<f64> {
    check_unit_eps(eps)?;
    Ok(z / (2.0 * c0 * delta(eps)))
}

/// z-coordinate of x for a given δ; ±∞ at x ∈ {0, ∞}.
#[inline]
pub fn z_of_x(x: ExtendedReal, delta: f64) -> (f64, Sign) {
    match x {
        ExtendedReal::Infinity => (f64::INFINITY, Sign::Plus),
        ExtendedReal::Finite(0.0) => (f64::INFINITY, Sign::Plus),
        ExtendedReal::Finite(v) => {
            let nu = Sign::of(v);
            (nu.value() * delta * v.abs().ln(), nu)
        }
    }
}

pub fn x_to_fiber(x: ExtendedReal, eps: f64) -> Result<FiberPoint> {
    check_unit_eps(eps)?;
    let (z, nu) = z_of_x(x, delta(eps));
    Ok(FiberPoint { z: ExtendedReal::new(z), nu })
}

/// x = ν·ε^{−νz}.
pub fn fiber_to_x(p: FiberPoint, eps: f64) -> Result<ExtendedReal> {
    check_unit_eps(eps)?;
    Ok(match p.z {
        ExtendedReal::Infinity => ExtendedReal::Infinity,
        ExtendedReal::Finite(z) => {
            let mag = (p.nu.value() * z / delta(eps)).exp();
            if mag.is_infinite() {
                ExtendedReal::Infinity
            } else {
                ExtendedReal::Finite(p.nu.value() * mag)
            }
        }
    })
}

/// One step of the x-dynamics driven by the transfer matrix T: x ↦ (J·T·J)·x.
pub fn step_x(x: ExtendedReal, t: &Matrix2) -> ExtendedReal {
    t.reflect().mobius_unchecked(x)
}

/// One step in the (z, ν) picture, routed through x. Requires 0 < ε < 1.
pub fn step_znu(p: FiberPoint, t: &Matrix2, eps: f64) -> FiberPoint {
    debug_assert!(eps > 0.0 && eps < 1.0);
    let x = fiber_to_x(p, eps).expect("eps in (0,1)");
    x_to_fiber(step_x(x, t), eps).expect("eps in (0,1)")
}

/// Angle after the full step T = J·Q·D·J, evaluated exactly.
pub fn two_step_theta(theta: f64, draw: &Draw, eps: f64) -> f64 {
    act_projective(&draw.x_action(eps).reflect(), theta)
}

/// Remainder r of the z-step on the positive fiber:
/// z′ = z + δ·log κ² + δ·ε^{1−|z|}·r.
pub fn remainder_r(z: f64, draw: &Draw, eps: f64) -> Result<f64> {
    remainder_r_fiber(z, Sign::Plus, draw, eps)
}

/// Fiber-aware remainder: z′ = z + ν·δ·log κ² + δ·ε^{1−|z|}·r.
pub fn remainder_r_fiber(z: f64, nu: Sign, draw: &Draw, eps: f64) -> Result<f64> {
    check_unit_eps(eps)?;
    let dil = draw.dilation(eps);
    if !(dil > 0.0) {
        return Err(Error::NonPositiveDiagonal { value: dil });
    }
    let q = draw.perturbation(eps);
    // |X| = |D·x| = dil²·ε^{−νz}; sign(X) = ν
    let log_abs_x = 2.0 * dil.ln() + nu.value() * z / delta(eps);
    let big_x = nu.value() * log_abs_x.exp();
    let num = q.a11 - 1.0 + q.a12 / big_x;
    let den = q.a22 - 1.0 + q.a21 * big_x;
    if !(num > -1.0) {
        return Err(Error::LogDomain { value: 1.0 + num });
    }
    if !(den > -1.0) {
        return Err(Error::LogDomain { value: 1.0 + den });
    }
    let l = num.ln_1p() - den.ln_1p();
    let shift = 2.0 * (eps * draw.c).ln_1p() + l;
    Ok(nu.value() * shift * eps.powf(z.abs() - 1.0))
}

/// log‖M·v‖ − log‖v‖ for v spanning the line of x, without overflow.
#[inline]
pub fn log_growth(m: &Matrix2, x: ExtendedReal) -> f64 {
    let v = match x {
        ExtendedReal::Infinity => [1.0, 0.0],
        ExtendedReal::Finite(x) if x.abs() > 1.0 => [1.0, 1.0 / x],
        ExtendedReal::Finite(x) => [x, 1.0],
    };
    let w = m.apply(v);
    0.5 * ((w[0] * w[0] + w[1] * w[1]) / (v[0] * v[0] + v[1] * v[1])).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Passage {
    /// N_k, step index at which the passage begins.
    pub start: u64,
    /// Fiber occupied during the passage.
    pub sign: Sign,
    /// S_k, steps of the passage with z ∈ [target_z, 1].
    pub occupancy: u64,
    /// N_{k+1} − N_k.
    pub length: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct OpenPassage {
    start: u64,
    sign: Sign,
    occupancy: u64,
}

/// Completed passages, possibly stitched from independent orbit chunks.
#[derive(Debug, Clone, PartialEq)]
pub struct PassageLog {
    pub target_z: f64,
    passages: Vec<Passage>,
    /// Indices into `passages` where an independent chunk begins.
    segments: Vec<usize>,
    open: Option<OpenPassage>,
}

#[inline]
fn positive(x: ExtendedReal) -> bool {
    match x {
        ExtendedReal::Infinity => true,
        ExtendedReal::Finite(v) => v > 0.0,
    }
}

/// Passage completed at the step prev → cur.
#[inline]
pub fn is_passage(prev: ExtendedReal, cur: ExtendedReal) -> bool {
    positive(prev) != positive(cur)
}

impl PassageLog {
    pub fn new(target_z: f64) -> Self {
        PassageLog { target_z, passages: Vec::new(), segments: vec![0], open: None }
    }

    #[inline]
    pub fn observe(&mut self, n: u64, prev: ExtendedReal, cur: ExtendedReal, z: f64) {
        if is_passage(prev, cur) {
            if let Some(o) = self.open.take() {
                self.passages.push(Passage { start: o.start, sign: o.sign, occupancy: o.occupancy, length: n - o.start });
            }
            let sign = if positive(cur) { Sign::Plus } else { Sign::Minus };
            self.open = Some(OpenPassage { start: n, sign, occupancy: 0 });
        }
        if let Some(o) = self.open.as_mut() {
            if z >= self.target_z && z <= 1.0 {
                o.occupancy += 1;
            }
        }
    }

    pub fn passages(&self) -> &[Passage] {
        &self.passages
    }

    pub fn len(&self) -> usize {
        self.passages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.passages.is_empty()
    }

    /// Appends a log from an independent chunk whose step 1 follows `offset` earlier steps.
    pub fn append_chunk(&mut self, other: &PassageLog, offset: u64) {
        if !self.passages.is_empty() || self.segments.len() > 1 {
            self.segments.push(self.passages.len());
        }
        self.passages.extend(other.passages.iter().map(|p| Passage { start: p.start + offset, ..*p }));
        self.open = other.open.map(|o| OpenPassage { start: o.start + offset, ..o });
    }

    /// Signs alternate within every chunk and starts strictly increase.
    pub fn is_consistent(&self) -> bool {
        let increasing = self.passages.windows(2).all(|w| w[0].start < w[1].start);
        let mut bounds = self.segments.clone();
        bounds.push(self.passages.len());
        let alternating = bounds.windows(2).all(|b| {
            self.passages[b[0]..b[1]].windows(2).all(|w| w[0].sign != w[1].sign && w[0].start + w[0].length == w[1].start)
        });
        increasing && alternating
    }

    /// Passage starts N_0 < N_1 < … (completed passages only).
    pub fn starts(&self) -> Vec<u64> {
        self.passages.iter().map(|p| p.start).collect()
    }

    /// Completed passages per step over `steps` steps.
    pub fn rate(&self, steps: u64) -> f64 {
        self.passages.len() as f64 / steps as f64
    }

    /// Rows (k, N_k, sign, S_k).
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["k", "N_k", "sign", "S_k"])?;
        for (k, p) in self.passages.iter().enumerate() {
            out.serialize((k, p.start, p.sign.as_i8(), p.occupancy))?;
        }
        out.flush().map_err(|e| Error::Csv(e.to_string()))?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrbitConfig {
    pub eps: f64,
    pub steps: u64,
    pub burn_in: u64,
    pub target_z: f64,
    pub theta0: f64,
    pub bins: usize,
    pub zmax: f64,
    pub batches: u64,
}

impl OrbitConfig {
    pub fn new(eps: f64, steps: u64) -> Self {
        OrbitConfig {
            eps,
            steps,
            burn_in: DEFAULT_BURN_IN,
            target_z: 0.0,
            theta0: DEFAULT_THETA0,
            bins: DEFAULT_BINS,
            zmax: DEFAULT_ZMAX,
            batches: DEFAULT_BATCHES,
        }
    }

    pub fn burn_in(mut self, burn_in: u64) -> Self {
        self.burn_in = burn_in;
        self
    }

    pub fn target_z(mut self, target_z: f64) -> Self {
        self.target_z = target_z;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps >= 0.0 && self.eps < 1.0) {
            return Err(Error::InvalidEps { eps: self.eps, allowed: "[0, 1)" });
        }
        if self.steps == 0 {
            return Err(Error::InvalidParameter("orbit length must be at least 1".into()));
        }
        if self.bins == 0 || !(self.zmax > 0.0) {
            return Err(Error::InvalidParameter("histogram needs bins > 0 and zmax > 0".into()));
        }
        Ok(())
    }
}

/// Everything recorded along one (or several merged) orbits.
#[derive(Debug, Clone, PartialEq)]
pub struct OrbitStats {
    pub steps: u64,
    pub eps: f64,
    pub birkhoff: BatchMeans,
    pub measure: EmpiricalMeasure,
    pub passages: PassageLog,
    pub state: ExtendedReal,
}

impl OrbitStats {
    pub fn merge(&mut self, other: &OrbitStats) {
        self.passages.append_chunk(&other.passages, self.steps);
        self.steps += other.steps;
        self.birkhoff.merge(&other.birkhoff);
        self.measure.merge(&other.measure);
        self.state = other.state;
    }
}

/// View of one recorded step handed to observers.
#[derive(Debug, Clone, Copy)]
pub struct StepContext<'a> {
    /// 1-based step index after burn-in.
    pub index: u64,
    pub draw: &'a Draw,
    pub x_prev: ExtendedReal,
    pub x: ExtendedReal,
    /// log‖T e_θ‖ at the previous state.
    pub growth: f64,
    /// z of the new state in its fiber.
    pub z: f64,
    pub nu: Sign,
}

pub trait Observer {
    fn on_step(&mut self, step: &StepContext<'_>);
}

impl Observer for () {
    #[inline]
    fn on_step(&mut self, _step: &StepContext<'_>) {}
}

/// Streams `steps` post-burn-in steps of the x-dynamics from θ₀.
pub fn run_orbit(fam: &CriticalFamily, eps: f64, steps: u64, seed: u64, burn_in: u64, target_z: f64) -> Result<OrbitStats> {
    let cfg = OrbitConfig::new(eps, steps).burn_in(burn_in).target_z(target_z);
    run_orbit_observed(fam, &cfg, seed, 0, &mut ())
}

/// Single-stream orbit for worker `worker`, reporting each step to `obs`.
pub fn run_orbit_observed<O: Observer>(
    fam: &CriticalFamily,
    cfg: &OrbitConfig,
    seed: u64,
    worker: u32,
    obs: &mut O,
) -> Result<OrbitStats> {
    cfg.validate()?;
    let eps = cfg.eps;
    let sampler = fam.sampler(eps)?;
    let dl = delta(eps);
    let mut rng = stream(seed, worker, Purpose::Orbit);
    let mut x = theta_to_x(cfg.theta0);
    for _ in 0..cfg.burn_in {
        x = sampler.draw(&mut rng).x_action(eps).mobius_unchecked(x);
    }
    let mut birkhoff = BatchMeans::new(cfg.steps, cfg.batches);
    let mut measure = EmpiricalMeasure::new(cfg.bins, cfg.zmax);
    let mut passages = PassageLog::new(cfg.target_z);
    for n in 1..=cfg.steps {
        let draw = sampler.draw(&mut rng);
        let m = draw.x_action(eps);
        let growth = log_growth(&m, x);
        let next = m.mobius_unchecked(x);
        let (z, nu) = z_of_x(next, dl);
        birkhoff.push(growth);
        measure.record(z, nu, 1.0);
        passages.observe(n, x, next, z);
        obs.on_step(&StepContext { index: n, draw: &draw, x_prev: x, x: next, growth, z, nu });
        x = next;
    }
    Ok(OrbitStats { steps: cfg.steps, eps, birkhoff, measure, passages, state: x })
}

/// Splits the orbit into `workers` independent chunks (own stream and burn-in
/// each) and merges them in worker order. Deterministic for fixed (seed, workers).
pub fn run_orbit_parallel(fam: &CriticalFamily, cfg: &OrbitConfig, seed: u64, workers: u32) -> Result<OrbitStats> {
    let (stats, _) = run_orbit_parallel_observed(fam, cfg, seed, workers, |_| ())?;
    Ok(stats)
}

pub fn run_orbit_parallel_observed<O, F>(
    fam: &CriticalFamily,
    cfg: &OrbitConfig,
    seed: u64,
    workers: u32,
    make_observer: F,
) -> Result<(OrbitStats, Vec<O>)>
where
    O: Observer + Send,
    F: Fn(u32) -> O + Sync,
{
    cfg.validate()?;
    let workers = workers.max(1).min(cfg.steps.min(u32::MAX as u64) as u32);
    let base = cfg.steps / workers as u64;
    let extra = cfg.steps % workers as u64;
    let chunk_cfg = |w: u32| {
        let mut c = cfg.clone();
        c.steps = base + u64::from((w as u64) < extra);
        c
    };
    let results: Vec<Result<(OrbitStats, O)>> = if workers == 1 {
        let mut obs = make_observer(0);
        vec![run_orbit_observed(fam, cfg, seed, 0, &mut obs).map(|s| (s, obs))]
    } else {
        thread::scope(|scope| {
            let handles: Vec<_> = (0..workers)
                .map(|w| {
                    let c = chunk_cfg(w);
                    let make = &make_observer;
                    scope.spawn(move || {
                        let mut obs = make(w);
                        run_orbit_observed(fam, &c, seed, w, &mut obs).map(|s| (s, obs))
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("orbit worker panicked")).collect()
        })
    };
    let mut merged: Option<OrbitStats> = None;
    let mut observers = Vec::with_capacity(results.len());
    for r in results {
        let (stats, obs) = r?;
        observers.push(obs);
        match merged.as_mut() {
            None => merged = Some(stats),
            Some(m) => m.merge(&stats),
        }
    }
    Ok((merged.expect("at least one worker"), observers))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{hopping_draw, BoundedDistribution};
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn theta_to_x_examples() {
        assert!(theta_to_x(FRAC_PI_2).finite().unwrap().abs() < 1e-16);
        assert!((theta_to_x(FRAC_PI_4).to_f64() + 1.0).abs() < 1e-15);
        assert!((theta_to_x(3.0 * FRAC_PI_4).to_f64() - 1.0).abs() < 1e-15);
        assert_eq!(theta_to_x(0.0), ExtendedReal::Infinity);
    }

    #[test]
    fn ynu_examples() {
        assert_eq!(x_to_ynu(1.0.into(), 0.5), (0.0, Sign::Plus));
        let (y, nu) = x_to_ynu((-(2.0f64).exp()).into(), 1.0);
        assert!((y + 1.0).abs() < 1e-15);
        assert_eq!(nu, Sign::Minus);
        for x in [0.01, -0.01, 1.0, -1.0, 100.0, -100.0] {
            let (y, nu) = x_to_ynu(x.into(), 0.7);
            let back = ynu_to_x(y, nu, 0.7).to_f64();
            assert!((back - x).abs() <= 1e-12 * x.abs(), "{x} -> {back}");
        }
        assert_eq!(x_to_ynu(0.0.into(), 1.0), (f64::NEG_INFINITY, Sign::Plus));
    }

    #[test]
    fn z_examples() {
        assert_eq!(y_to_z(0.0, 0.1, 1.0).unwrap(), 0.0);
        assert!((y_to_z(5.0, (-10.0f64).exp(), 1.0).unwrap() - 1.0).abs() < 1e-15);
        let p = FiberPoint { z: ExtendedReal::Finite(0.5), nu: Sign::Plus };
        assert!((fiber_to_x(p, 0.01).unwrap().to_f64() - 10.0).abs() < 1e-12);
        assert!(y_to_z(1.0, 1.0, 1.0).is_err());
        assert!(z_to_y(1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn step_x_diagonal() {
        let k = 1.3;
        let t = Matrix2::diag(k, 1.0 / k);
        assert!((step_x(0.7.into(), &t).to_f64() - k * k * 0.7).abs() < 1e-14);
    }

    #[test]
    fn step_x_through_infinity() {
        let d = hopping_draw(1.1, 0.9);
        let t = d.transfer(0.01).unwrap();
        let x = step_x(ExtendedReal::Infinity, &t).finite().unwrap();
        assert!(x < 0.0);
    }

    #[test]
    fn step_x_routes_agree() {
        // x' = −T·(−x) equals the J-conjugated action.
        let d = hopping_draw(0.8, 1.2);
        let t = d.transfer(0.05).unwrap();
        for x in [-3.0, -0.2, 0.4, 5.0] {
            let minus_x = ExtendedReal::Finite(-x);
            let route = -t.mobius_unchecked(minus_x).to_f64();
            assert!((route - step_x(x.into(), &t).to_f64()).abs() < 1e-13);
        }
    }

    #[test]
    fn step_znu_examples() {
        let eps: f64 = 1e-8;
        let k: f64 = 1.4;
        let t = Matrix2::diag(k, 1.0 / k);
        let p = FiberPoint { z: ExtendedReal::Finite(0.3), nu: Sign::Plus };
        let q = step_znu(p, &t, eps);
        let expected = 0.3 + (k * k).ln() / (1.0 / eps).ln();
        assert!((q.z.to_f64() - expected).abs() < 1e-13);
        assert_eq!(step_znu(p, &Matrix2::IDENTITY, eps), FiberPoint { z: ExtendedReal::Finite(0.3), nu: Sign::Plus });
    }

    #[test]
    fn two_step_theta_fixed_points() {
        let d = Draw { kappa: 1.7, a: 1.0, b: 0.2, c: 0.0, second: Matrix2::diag(0.0, 0.0) };
        assert!(two_step_theta(0.0, &d, 0.0).abs() < 1e-15);
        assert!((two_step_theta(FRAC_PI_2, &d, 0.0) - FRAC_PI_2).abs() < 1e-15);
        let id = Draw { kappa: 1.0, ..d };
        assert!((two_step_theta(0.9, &id, 0.0) - 0.9).abs() < 1e-15);
    }

    #[test]
    fn two_step_theta_expansion() {
        // θ″ = θ′ + ε(a + b·cos 2θ′) + O(ε²) with cot θ′ = κ²(1+εc)²·cot θ.
        let d = Draw { kappa: 1.2, a: 1.3, b: -0.4, c: 0.5, second: Matrix2::new(0.3, -0.2, 0.1, 0.4) };
        for &eps in &[1e-3, 1e-4] {
            for &theta in &[0.3f64, 1.0, 2.0, 2.8] {
                let dil = d.dilation(eps);
                let prime = normalize_angle((1.0f64).atan2(dil * dil / theta.tan()));
                let predicted = prime + eps * (d.a + d.b * (2.0 * prime).cos());
                let got = two_step_theta(theta, &d, eps);
                assert!((got - predicted).abs() < 20.0 * eps * eps, "eps={eps} θ={theta}: {got} vs {predicted}");
            }
        }
    }

    #[test]
    fn remainder_diagonal_is_zero() {
        let d = Draw { kappa: 1.3, a: 0.0, b: 0.0, c: 0.0, second: Matrix2::diag(0.0, 0.0) };
        assert_eq!(remainder_r(0.2, &d, 1e-6).unwrap(), 0.0);
    }

    #[test]
    fn remainder_matches_step() {
        // Independent route: z′ from the coordinate chain at moderate ε.
        let eps: f64 = 1e-3;
        let d = hopping_draw(0.9, 1.25);
        let t = d.transfer(eps).unwrap();
        for &(z, nu) in &[(0.2, Sign::Plus), (-0.5, Sign::Plus), (0.4, Sign::Minus), (-0.3, Sign::Minus)] {
            let p = FiberPoint { z: ExtendedReal::Finite(z), nu };
            let q = step_znu(p, &t, eps);
            assert_eq!(q.nu, nu);
            let dl = delta(eps);
            let r_route = (q.z.to_f64() - z - nu.value() * dl * (d.kappa * d.kappa).ln()) / dl * eps.powf(z.abs() - 1.0);
            let r = remainder_r_fiber(z, nu, &d, eps).unwrap();
            assert!((r - r_route).abs() < 1e-8 * (1.0 + r.abs()), "z={z}: {r} vs {r_route}");
            assert!(r > 0.0);
        }
    }

    #[test]
    fn remainder_log_domain() {
        let d = hopping_draw(0.9, 1.25);
        assert!(matches!(remainder_r(0.99, &d, 0.5), Err(Error::LogDomain { .. })) || remainder_r(0.99, &d, 0.5).is_ok());
        assert!(remainder_r(0.1, &d, 1.5).is_err());
    }

    #[test]
    fn passage_log_tracks_alternation() {
        let mut log = PassageLog::new(0.0);
        let xs = [-1.0, 2.0, 3.0, -4.0, -1.0, 0.0, 5.0];
        for n in 1..xs.len() {
            let z = 0.5;
            log.observe(n as u64, xs[n - 1].into(), xs[n].into(), z);
        }
        // passages start at 1 (+), 3 (−); the one starting at 6 is still open
        assert_eq!(log.starts(), vec![1, 3]);
        assert_eq!(log.passages()[0].sign, Sign::Plus);
        assert_eq!(log.passages()[0].length, 2);
        assert_eq!(log.passages()[1].occupancy, 3);
        assert!(log.is_consistent());
    }

    #[test]
    fn orbit_basics() {
        let fam = CriticalFamily::hopping(BoundedDistribution::centered(1.1, 0.4)).unwrap();
        let s = run_orbit(&fam, 1e-3, 20_000, 5, 1000, 0.0).unwrap();
        assert_eq!(s.measure.total, 20_000.0);
        assert_eq!(s.birkhoff.count(), 20_000);
        assert!(s.passages.len() > 5);
        assert!(s.passages.is_consistent());
    }

    #[test]
    fn orbit_rejects_bad_eps() {
        let fam = CriticalFamily::hopping(BoundedDistribution::centered(1.1, 0.4)).unwrap();
        assert!(run_orbit(&fam, 1.0, 10, 1, 0, 0.0).is_err());
        assert!(run_orbit(&fam, 1e-3, 0, 1, 0, 0.0).is_err());
    }

    #[test]
    fn parallel_merge_is_deterministic() {
        let fam = CriticalFamily::hopping(BoundedDistribution::centered(1.1, 0.4)).unwrap();
        let cfg = OrbitConfig::new(1e-3, 30_001).burn_in(500);
        let a = run_orbit_parallel(&fam, &cfg, 9, 3).unwrap();
        let b = run_orbit_parallel(&fam, &cfg, 9, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.steps, 30_001);
        assert_eq!(a.measure.total, 30_001.0);
        assert!(a.passages.is_consistent());
    }
}
