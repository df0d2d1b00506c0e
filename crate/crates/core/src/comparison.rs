//! Faster and slower comparison processes in the logarithmic picture, their
//! coupling to the true dynamics, renewal statistics, and the toy chain with
//! a triangular stationary vector.
//!
//! Each comparison process is a random walk driven by w = log κ / C0 with
//! drift ±δ², a hard wall on the left and an absorbing barrier on the right.
//! The second component is the overshoot over the target level.

use std::thread;

use serde::Serialize;

use crate::dynamics::{delta, is_passage, run_orbit_observed, Observer, OrbitConfig, StepContext, DEFAULT_BURN_IN};
use crate::error::{Error, Result};
use crate::mat2::ExtendedReal;
use crate::models::{CriticalFamily, HypothesisConstants, TypeClass};
use crate::rng::{stream, Purpose};
use crate::stats::mean_and_se;

/// Upper bound on the length of one simulated comparison passage.
pub const MAX_PASSAGE_STEPS: u64 = 1_000_000_000;

/// Threshold points in the x-picture and their images y = log(x)/(2C0).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Thresholds {
    pub eps: f64,
    pub delta: f64,
    pub c0: f64,
    /// Constant of the two-sided bound Q·(D·x) ≈ κ²x on [x̃₋, x̃₊].
    pub big_c: f64,
    pub x_hat_minus: f64,
    pub x_hat_c: f64,
    pub x_hat_plus: f64,
    pub x_tilde_minus: f64,
    pub x_tilde_c: f64,
    pub x_tilde_plus: f64,
    pub y_hat_minus: f64,
    pub y_hat_c: f64,
    pub y_hat_plus: f64,
    pub y_tilde_minus: f64,
    pub y_tilde_c: f64,
    pub y_tilde_plus: f64,
}

impl Thresholds {
    /// Needs 0 < ε < 1 and a positive drive constant (C1 for rotating
    /// families, the confining infimum for confined ones).
    pub fn new(consts: &HypothesisConstants, eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::InvalidEps { eps, allowed: "(0, 1)" });
        }
        let c1 = consts.drive_constant();
        if !(c1 > 0.0) {
            return Err(Error::WrongType { expected: "rotating or confined", found: consts.class.name() });
        }
        let c0 = consts.c0;
        let d = delta(eps);
        let d2 = d * d;
        let big_c = 8.0 * (3.0 * c0).exp() * consts.c2 / c0;
        let x_hat_minus = c1 * eps / 2.0;
        let x_hat_c = x_hat_minus * ((-2.0 * c0).exp() + 1.0);
        let x_hat_plus = 2.0 * (2.0 * c0).exp() / (c1 * eps);
        let x_tilde_minus = big_c * eps / d2;
        let x_tilde_c = (2.0 * c0 * (1.0 + d2)).exp() * x_tilde_minus;
        let x_tilde_plus = d2 / (big_c * eps);
        let y = |x: f64| x.ln() / (2.0 * c0);
        Ok(Thresholds {
            eps,
            delta: d,
            c0,
            big_c,
            x_hat_minus,
            x_hat_c,
            x_hat_plus,
            x_tilde_minus,
            x_tilde_c,
            x_tilde_plus,
            y_hat_minus: y(x_hat_minus),
            y_hat_c: y(x_hat_c),
            y_hat_plus: y(x_hat_plus),
            y_tilde_minus: y(x_tilde_minus),
            y_tilde_c: y(x_tilde_c),
            y_tilde_plus: y(x_tilde_plus),
        })
    }

    /// ŷ₋ < ŷ_c < ỹ₋ < ỹ_c < 0 < ỹ₊ < ŷ₊; fails when ε is too large.
    pub fn is_ordered(&self) -> bool {
        self.y_hat_minus < self.y_hat_c
            && self.y_hat_c < self.y_tilde_minus
            && self.y_tilde_minus < self.y_tilde_c
            && self.y_tilde_c < 0.0
            && 0.0 < self.y_tilde_plus
            && self.y_tilde_plus < self.y_hat_plus
    }

    /// Level y = z/(2C0·δ) corresponding to a target z.
    pub fn target_y(&self, z: f64) -> f64 {
        z / (2.0 * self.c0 * self.delta)
    }

    /// z-image of a y-level.
    pub fn z_of(&self, y: f64) -> f64 {
        2.0 * self.c0 * self.delta * y
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Faster,
    Slower,
    /// Slower process absorbed at ỹ₊ + ô instead of ŷ₊ + ô.
    SlowerConfined,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Faster => "faster",
            Variant::Slower => "slower",
            Variant::SlowerConfined => "slower_confined",
        }
    }
}

/// Fixed data of one comparison process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CompParams {
    pub variant: Variant,
    /// Hard wall: at or below it the next state is `reset`.
    pub wall: f64,
    pub reset: f64,
    pub start: f64,
    /// Absorbed once y ≥ absorb_base + o.
    pub absorb_base: f64,
    /// +δ² (faster) or −δ² (slower).
    pub drift: f64,
    /// Overshoot value meaning "not yet past the level": 1 ± δ².
    pub o_idle: f64,
    /// Level whose crossing sets the overshoot: y (faster) or y + 1 (slower).
    pub level: f64,
    /// Overshoot returns to idle once y ≤ level + reentry + o.
    pub reentry: f64,
}

impl CompParams {
    pub fn new(variant: Variant, th: &Thresholds, target_y: f64) -> Self {
        let d2 = th.delta * th.delta;
        match variant {
            Variant::Faster => CompParams {
                variant,
                wall: th.y_tilde_minus,
                reset: th.y_tilde_c,
                start: th.y_tilde_c,
                absorb_base: th.y_tilde_plus - 1.0 - d2,
                drift: d2,
                o_idle: 1.0 + d2,
                level: target_y,
                reentry: -1.0 - d2,
            },
            Variant::Slower | Variant::SlowerConfined => CompParams {
                variant,
                wall: th.y_hat_minus,
                reset: th.y_hat_c,
                start: th.y_hat_minus,
                absorb_base: if variant == Variant::Slower { th.y_hat_plus } else { th.y_tilde_plus },
                drift: -d2,
                o_idle: 1.0 - d2,
                level: target_y + 1.0,
                reentry: -1.0,
            },
        }
    }

    pub fn initial(&self) -> CompState {
        CompState { y: ExtendedReal::Finite(self.start), o: self.o_idle }
    }
}

/// State (y, o) of a comparison process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CompState {
    pub y: ExtendedReal,
    pub o: f64,
}

impl CompState {
    pub fn is_absorbed(&self) -> bool {
        self.y.is_infinite()
    }

    /// Occupancy indicator: past the level and not absorbed.
    pub fn occupied(&self, p: &CompParams) -> bool {
        self.o != p.o_idle && !self.is_absorbed()
    }
}

/// One transition driven by the signed increment `sw` = ±w.
#[inline]
pub fn comparison_step(p: &CompParams, s: CompState, sw: f64) -> CompState {
    let y = match s.y {
        ExtendedReal::Infinity => return s,
        ExtendedReal::Finite(y) => y,
    };
    let next = if y <= p.wall {
        ExtendedReal::Finite(p.reset)
    } else if y >= p.absorb_base + s.o {
        // Absorption keeps the overshoot, which is not read afterwards.
        return CompState { y: ExtendedReal::Infinity, o: s.o };
    } else {
        ExtendedReal::Finite(y + sw + p.drift)
    };
    let yn = next.to_f64();
    let o = if yn >= p.level && s.o == p.o_idle {
        yn - p.level
    } else if yn <= p.level + p.reentry + s.o && s.o != p.o_idle {
        p.o_idle
    } else {
        s.o
    };
    CompState { y: next, o }
}

/// Faster transition with passage parity k: increment (−1)^k·w + δ².
pub fn faster_step(p: &CompParams, s: CompState, w: f64, k: u64) -> CompState {
    debug_assert_eq!(p.variant, Variant::Faster);
    comparison_step(p, s, parity_sign(k) * w)
}

/// Slower transition with passage parity k: increment (−1)^k·w − δ².
pub fn slower_step(p: &CompParams, s: CompState, w: f64, k: u64) -> CompState {
    debug_assert_ne!(p.variant, Variant::Faster);
    comparison_step(p, s, parity_sign(k) * w)
}

fn parity_sign(k: u64) -> f64 {
    if k % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Outcome of one simulated comparison passage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PassageSample {
    /// Steps until absorption.
    pub t: u64,
    /// Occupied steps before absorption.
    pub s: u64,
}

/// Runs one passage to absorption with increments `sign·w` from `next_w`.
pub fn simulate_passage(p: &CompParams, sign: f64, mut next_w: impl FnMut() -> f64, max_steps: u64) -> Result<PassageSample> {
    let mut st = p.initial();
    let mut s = 0u64;
    let mut n = 1u64;
    while !st.is_absorbed() {
        if st.occupied(p) {
            s += 1;
        }
        if n >= max_steps {
            return Err(Error::InvalidParameter(format!("comparison passage not absorbed within {max_steps} steps")));
        }
        st = comparison_step(p, st, sign * next_w());
        n += 1;
    }
    Ok(PassageSample { t: n, s })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RenewalStats {
    pub variant: Variant,
    pub eps: f64,
    pub delta: f64,
    pub target_z: f64,
    #[serde(skip)]
    pub samples: Vec<PassageSample>,
    pub mean_t: f64,
    pub se_t: f64,
    pub mean_s: f64,
    pub se_s: f64,
    /// δ⁻²/E[(log κ)²]·((1−z)/2)².
    pub target_s: f64,
    /// (δ²·E[(log κ)²])⁻¹.
    pub target_t: f64,
    /// Ê[S]·δ²·E[(log κ)²]; ((1−z)/2)² in the limit.
    pub s_scaled: f64,
    /// 1/(Ê[T]·δ²·E[(log κ)²]); 1 in the limit.
    pub inv_t_scaled: f64,
}

impl RenewalStats {
    /// Rows (k, T, S).
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["k", "T", "S"])?;
        for (k, p) in self.samples.iter().enumerate() {
            out.serialize((k, p.t, p.s))?;
        }
        out.flush().map_err(|e| Error::Csv(e.to_string()))?;
        Ok(())
    }
}

/// Simulates `passages` independent passages of one comparison process,
/// alternating the parity k, with w drawn from the family.
pub fn renewal_estimates(
    variant: Variant,
    fam: &CriticalFamily,
    eps: f64,
    passages: usize,
    seed: u64,
    target_z: f64,
    workers: u32,
) -> Result<RenewalStats> {
    if passages < 100 {
        return Err(Error::InvalidParameter(format!("renewal estimates need at least 100 passages, got {passages}")));
    }
    let consts = fam.constants()?;
    let th = Thresholds::new(&consts, eps)?;
    let params = CompParams::new(variant, &th, th.target_y(target_z));
    let sampler = fam.sampler(eps)?;
    let c0 = consts.c0;
    let workers = workers.clamp(1, passages as u32) as usize;
    let chunk = |w: usize| -> Result<Vec<PassageSample>> {
        let mut rng = stream(seed, w as u32, Purpose::Renewal);
        (w..passages)
            .step_by(workers)
            .map(|k| simulate_passage(&params, parity_sign(k as u64), || sampler.draw(&mut rng).log_kappa() / c0, MAX_PASSAGE_STEPS))
            .collect()
    };
    let per_worker: Vec<Result<Vec<PassageSample>>> = if workers == 1 {
        vec![chunk(0)]
    } else {
        thread::scope(|scope| {
            let handles: Vec<_> = (0..workers).map(|w| scope.spawn(move || chunk(w))).collect();
            handles.into_iter().map(|h| h.join().expect("renewal worker panicked")).collect()
        })
    };
    let per_worker = per_worker.into_iter().collect::<Result<Vec<_>>>()?;
    // Interleave back into passage order k.
    let mut samples = Vec::with_capacity(passages);
    for k in 0..passages {
        samples.push(per_worker[k % workers][k / workers]);
    }
    let ts: Vec<f64> = samples.iter().map(|p| p.t as f64).collect();
    let ss: Vec<f64> = samples.iter().map(|p| p.s as f64).collect();
    let (mean_t, se_t) = mean_and_se(&ts);
    let (mean_s, se_s) = mean_and_se(&ss);
    let rate = th.delta * th.delta * fam.expected_log_kappa_sq();
    let half = (1.0 - target_z) / 2.0;
    Ok(RenewalStats {
        variant,
        eps,
        delta: th.delta,
        target_z,
        samples,
        mean_t,
        se_t,
        mean_s,
        se_s,
        target_s: half * half / rate,
        target_t: 1.0 / rate,
        s_scaled: mean_s * rate,
        inv_t_scaled: 1.0 / (mean_t * rate),
    })
}

/// Result of driving the true dynamics and both comparison processes with
/// shared draws.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct SandwichReport {
    pub steps: u64,
    /// Completed passages whose interior was checked.
    pub passages: u64,
    /// Interior points compared.
    pub comparisons: u64,
    /// Points where the slower process exceeded the true y.
    pub lower_violations: u64,
    /// Points where the true y exceeded the faster process.
    pub upper_violations: u64,
    /// Passages whose faster process was not absorbed at the passage end.
    pub absorption_failures: u64,
    /// Largest excess over either bound.
    pub max_excess: f64,
}

impl SandwichReport {
    pub fn violations(&self) -> u64 {
        self.lower_violations + self.upper_violations + self.absorption_failures
    }
}

struct OpenPassage {
    start: u64,
    /// Orientation (−1)^k of the passage.
    sign: f64,
    faster: CompState,
    slower: CompState,
    /// Confined type only: which side the passage started from.
    from_left: bool,
}

struct SandwichObserver {
    c0: f64,
    confined: bool,
    y_lo: f64,
    y_hi: f64,
    faster: CompParams,
    slower: CompParams,
    open: Option<OpenPassage>,
    report: SandwichReport,
}

impl SandwichObserver {
    /// y-coordinate compared against the processes (before orientation).
    fn y_of(&self, x: ExtendedReal) -> f64 {
        match x {
            ExtendedReal::Infinity => f64::INFINITY,
            ExtendedReal::Finite(v) => {
                let y = v.abs().ln() / (2.0 * self.c0);
                if self.confined || v >= 0.0 {
                    y
                } else {
                    -y
                }
            }
        }
    }

    /// New passage beginning at step m, if any.
    fn passage_start(&self, ctx: &StepContext<'_>, y: f64) -> Option<OpenPassage> {
        let fresh = |sign: f64, from_left: bool| OpenPassage {
            start: ctx.index,
            sign,
            faster: self.faster.initial(),
            slower: self.slower.initial(),
            from_left,
        };
        if self.confined {
            let outside_left = y < self.y_lo;
            let outside_right = y > self.y_hi;
            if !(outside_left || outside_right) {
                return None;
            }
            match &self.open {
                Some(o) if o.from_left == outside_left => None,
                _ => Some(fresh(if outside_left { 1.0 } else { -1.0 }, outside_left)),
            }
        } else if is_passage(ctx.x_prev, ctx.x) {
            let nu = if ctx.x.to_f64() < 0.0 { -1.0 } else { 1.0 };
            Some(fresh(nu, false))
        } else {
            None
        }
    }

    fn check(&mut self, y_oriented: f64) {
        let Some(o) = self.open.as_ref() else { return };
        self.report.comparisons += 1;
        let lo = o.slower.y.to_f64();
        let hi = o.faster.y.to_f64();
        if lo > y_oriented {
            self.report.lower_violations += 1;
            self.report.max_excess = self.report.max_excess.max(lo - y_oriented);
        }
        if y_oriented > hi {
            self.report.upper_violations += 1;
            self.report.max_excess = self.report.max_excess.max(y_oriented - hi);
        }
    }
}

impl Observer for SandwichObserver {
    fn on_step(&mut self, ctx: &StepContext<'_>) {
        self.report.steps += 1;
        let y = self.y_of(ctx.x);
        // Transition n−1 → n of the open passage uses the matrix of step N_k + n.
        if let Some(o) = self.open.as_mut() {
            if ctx.index - o.start >= 2 {
                let sw = o.sign * ctx.draw.log_kappa() / self.c0;
                o.faster = comparison_step(&self.faster, o.faster, sw);
                o.slower = comparison_step(&self.slower, o.slower, sw);
            }
        }
        if let Some(next) = self.passage_start(ctx, y) {
            if let Some(done) = self.open.take() {
                self.report.passages += 1;
                if !done.faster.is_absorbed() {
                    self.report.absorption_failures += 1;
                }
            }
            self.open = Some(next);
        } else if let Some(o) = self.open.as_ref() {
            let oriented = if self.confined { o.sign * y } else { y };
            self.check(oriented);
        }
    }
}

/// Couples the true y-dynamics with both comparison processes of the current
/// passage over `steps` steps after the default burn-in.
pub fn coupled_sandwich_run(fam: &CriticalFamily, eps: f64, steps: u64, seed: u64, target_z: f64) -> Result<SandwichReport> {
    coupled_sandwich_run_with(fam, &OrbitConfig::new(eps, steps).burn_in(DEFAULT_BURN_IN).target_z(target_z), seed, 0)
}

pub fn coupled_sandwich_run_with(fam: &CriticalFamily, cfg: &OrbitConfig, seed: u64, worker: u32) -> Result<SandwichReport> {
    let consts = fam.constants()?;
    let confined = match consts.class {
        TypeClass::Rotating => false,
        TypeClass::Confined => true,
        other => return Err(Error::WrongType { expected: "rotating or confined", found: other.name() }),
    };
    let th = Thresholds::new(&consts, cfg.eps)?;
    let target = th.target_y(cfg.target_z);
    let slower_variant = if confined { Variant::SlowerConfined } else { Variant::Slower };
    let mut obs = SandwichObserver {
        c0: consts.c0,
        confined,
        y_lo: th.y_tilde_minus,
        y_hi: th.y_tilde_plus,
        faster: CompParams::new(Variant::Faster, &th, target),
        slower: CompParams::new(slower_variant, &th, target),
        open: None,
        report: SandwichReport::default(),
    };
    run_orbit_observed(fam, cfg, seed, worker, &mut obs)?;
    Ok(obs.report)
}

/// Column-stochastic chain on {1, …, N}: steps ±1 with probability ½, a
/// reflecting wall at 1, and N+1 sent back to 1.
pub fn toy_chain_matrix(n: usize) -> Result<Vec<Vec<f64>>> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!("toy chain needs N >= 2, got {n}")));
    }
    let mut p = vec![vec![0.0; n]; n];
    p[0][0] += 0.5;
    p[0][n - 1] += 0.5;
    for i in 0..n {
        if i + 1 < n {
            p[i][i + 1] += 0.5;
            p[i + 1][i] += 0.5;
        }
    }
    Ok(p)
}

/// ‖P·v − v‖∞ for v = (N, N−1, …, 1).
pub fn toy_chain_residual(n: usize) -> Result<f64> {
    let p = toy_chain_matrix(n)?;
    let v: Vec<f64> = (0..n).map(|i| (n - i) as f64).collect();
    Ok(p.iter()
        .zip(&v)
        .map(|(row, vi)| (row.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() - vi).abs())
        .fold(0.0, f64::max))
}
