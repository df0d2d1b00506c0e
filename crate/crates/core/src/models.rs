//! Random matrix families near a balanced hyperbolic critical point.
//!
//! Every family is written as T = J·Q·D·J with J = diag(1,−1),
//! D = diag(κ(1+εc), 1/(κ(1+εc))) and
//! Q = [[1+ε²A11, ε(a−b)+ε²A12], [−ε(a+b)+ε²A21, 1+ε²A22]].
//! The orbit code works with the conjugate M = J·T·J = Q·D, which acts on the
//! Dyson–Schmidt variable x = −cot θ.

use std::num::NonZeroUsize;

use gauss_quad::legendre::GaussLegendre;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mat2::Matrix2;

const QUADRATURE_NODES: usize = 64;
const WEIGHT_SUM_TOL: f64 = 1e-12;
pub const BALANCE_TOL: f64 = 1e-10;
/// Largest ε over which the second-order block is bounded. The Ising block
/// blows up as ε → 1, so the bound is taken over (0, ½].
pub const SECOND_ORDER_EPS_MAX: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BoundedDistribution {
    Uniform { lo: f64, hi: f64 },
    TwoPoint { v1: f64, p1: f64, v2: f64 },
    Discrete { values: Vec<f64>, weights: Vec<f64> },
    Constant { value: f64 },
}

impl BoundedDistribution {
    pub fn uniform(lo: f64, hi: f64) -> Self {
        BoundedDistribution::Uniform { lo, hi }
    }

    /// Uniform on [center − half_width, center + half_width].
    pub fn centered(center: f64, half_width: f64) -> Self {
        BoundedDistribution::Uniform { lo: center - half_width, hi: center + half_width }
    }

    pub fn constant(value: f64) -> Self {
        BoundedDistribution::Constant { value }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidDistribution(m.to_string()));
        match self {
            BoundedDistribution::Uniform { lo, hi } => {
                if !lo.is_finite() || !hi.is_finite() {
                    return bad("uniform bounds must be finite (compact support)");
                }
                if lo > hi {
                    return bad("uniform requires lo <= hi");
                }
            }
            BoundedDistribution::TwoPoint { v1, p1, v2 } => {
                if !v1.is_finite() || !v2.is_finite() {
                    return bad("two-point values must be finite");
                }
                if !(0.0..=1.0).contains(p1) {
                    return bad("two-point probability must lie in [0, 1]");
                }
            }
            BoundedDistribution::Discrete { values, weights } => {
                if values.is_empty() || values.len() != weights.len() {
                    return bad("discrete needs equally many values and weights");
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return bad("discrete values must be finite");
                }
                if weights.iter().any(|w| !(*w >= 0.0)) {
                    return bad("discrete weights must be nonnegative");
                }
                let total: f64 = weights.iter().sum();
                if (total - 1.0).abs() > WEIGHT_SUM_TOL {
                    return bad("discrete weights must sum to 1");
                }
            }
            BoundedDistribution::Constant { value } => {
                if !value.is_finite() {
                    return bad("constant must be finite");
                }
            }
        }
        Ok(())
    }

    /// Closed support bounds (essential inf and sup).
    pub fn support(&self) -> (f64, f64) {
        match self {
            BoundedDistribution::Uniform { lo, hi } => (*lo, *hi),
            BoundedDistribution::TwoPoint { v1, p1, v2 } => {
                let pts: Vec<f64> = [(*v1, *p1), (*v2, 1.0 - p1)]
                    .iter()
                    .filter(|(_, p)| *p > 0.0)
                    .map(|(v, _)| *v)
                    .collect();
                bounds(&pts)
            }
            BoundedDistribution::Discrete { values, weights } => {
                let pts: Vec<f64> =
                    values.iter().zip(weights).filter(|(_, w)| **w > 0.0).map(|(v, _)| *v).collect();
                bounds(&pts)
            }
            BoundedDistribution::Constant { value } => (*value, *value),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            BoundedDistribution::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
            BoundedDistribution::TwoPoint { v1, p1, v2 } => {
                if rng.random::<f64>() < *p1 {
                    *v1
                } else {
                    *v2
                }
            }
            BoundedDistribution::Discrete { values, weights } => {
                let u = rng.random::<f64>();
                let mut acc = 0.0;
                for (v, w) in values.iter().zip(weights) {
                    acc += w;
                    if u < acc {
                        return *v;
                    }
                }
                // Rounding left u above the last partial sum.
                let last = weights.iter().rposition(|w| *w > 0.0).unwrap_or(0);
                values[last]
            }
            BoundedDistribution::Constant { value } => *value,
        }
    }

    /// (value, weight) pairs whose weighted sums approximate expectations:
    /// 64-node Gauss–Legendre for uniform laws, exact for atomic ones.
    pub fn quadrature(&self) -> Vec<(f64, f64)> {
        match self {
            BoundedDistribution::Uniform { lo, hi } if hi > lo => {
                let rule = GaussLegendre::new(NonZeroUsize::new(QUADRATURE_NODES).unwrap());
                let half = 0.5 * (hi - lo);
                let mid = 0.5 * (hi + lo);
                rule.iter().map(|(x, w)| (mid + half * x, 0.5 * w)).collect()
            }
            BoundedDistribution::Uniform { lo, .. } => vec![(*lo, 1.0)],
            BoundedDistribution::TwoPoint { v1, p1, v2 } => vec![(*v1, *p1), (*v2, 1.0 - p1)],
            BoundedDistribution::Discrete { values, weights } => {
                values.iter().copied().zip(weights.iter().copied()).collect()
            }
            BoundedDistribution::Constant { value } => vec![(*value, 1.0)],
        }
    }

    pub fn expect(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.quadrature().iter().map(|(v, w)| w * f(*v)).sum()
    }

    /// P[X > 0].
    pub fn prob_positive(&self) -> f64 {
        match self {
            BoundedDistribution::Uniform { lo, hi } => {
                if hi > lo {
                    ((hi - lo.max(0.0)) / (hi - lo)).clamp(0.0, 1.0)
                } else if *lo > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            _ => self.quadrature().iter().filter(|(v, _)| *v > 0.0).map(|(_, w)| w).sum(),
        }
    }

    /// P[X₂ > X₁] for two independent copies.
    fn prob_ordered_pair(&self) -> f64 {
        match self {
            BoundedDistribution::Uniform { lo, hi } => {
                if hi > lo {
                    0.5
                } else {
                    0.0
                }
            }
            _ => {
                let q = self.quadrature();
                let mut p = 0.0;
                for (vi, wi) in &q {
                    for (vj, wj) in &q {
                        if vi > vj {
                            p += wi * wj;
                        }
                    }
                }
                p
            }
        }
    }
}

fn bounds(pts: &[f64]) -> (f64, f64) {
    let lo = pts.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = pts.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

/// Family definitions as they appear in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum FamilySpec {
    /// Independent laws for log κ, a, b, c; second-order block ≡ 0.
    Generic {
        log_kappa: BoundedDistribution,
        a: BoundedDistribution,
        b: BoundedDistribution,
        c: BoundedDistribution,
    },
    /// Random hopping chain at the band center, i.i.d. hoppings t > 0.
    Hopping { hopping: BoundedDistribution },
    /// Chiral Dirac operator with random mass w = log κ.
    Dirac { w: BoundedDistribution },
    /// Random-field Ising chain, field h = log κ; ε = e^{−2J}.
    Ising { h: BoundedDistribution },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyLabel {
    Generic,
    Hopping,
    Dirac,
    Ising,
}

impl FamilyLabel {
    pub fn name(self) -> &'static str {
        match self {
            FamilyLabel::Generic => "generic",
            FamilyLabel::Hopping => "hopping",
            FamilyLabel::Dirac => "dirac",
            FamilyLabel::Ising => "ising",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TypeClass {
    Rotating,
    Confined,
    Unbalanced,
    Other,
}

impl TypeClass {
    pub fn name(self) -> &'static str {
        match self {
            TypeClass::Rotating => "rotating",
            TypeClass::Confined => "confined",
            TypeClass::Unbalanced => "unbalanced",
            TypeClass::Other => "other",
        }
    }
}

/// Essential bounds of the family. Infima are reported raw, so a negative
/// value means the corresponding type condition fails.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HypothesisConstants {
    /// ess sup |log κ|
    pub c0: f64,
    /// ess inf (a − |b|); positive for rotating families
    pub c1: f64,
    /// ess inf (b − |a|); positive when orbits stay in x < 0
    pub c1p: f64,
    /// ess inf (−b − |a|); positive when orbits stay in x > 0
    pub c1pp: f64,
    /// ess sup (|a| + |b| + |c|)
    pub c2: f64,
    /// sup ‖A^ε‖ over the support and 0 < ε ≤ ½
    pub c3: f64,
    pub mean_log_kappa: f64,
    pub class: TypeClass,
}

impl HypothesisConstants {
    /// Positive lower bound driving the threshold points: C1 for rotating
    /// families, the confining infimum otherwise.
    pub fn drive_constant(&self) -> f64 {
        match self.class {
            TypeClass::Confined => self.c1p.max(self.c1pp),
            _ => self.c1,
        }
    }

    /// Fiber holding a confined orbit: −1 for x < 0, +1 for x > 0.
    pub fn confined_side(&self) -> Option<i8> {
        if self.class != TypeClass::Confined {
            None
        } else if self.c1p > 0.0 {
            Some(-1)
        } else {
            Some(1)
        }
    }
}

/// One realization of the random data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Draw {
    pub kappa: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    /// Second-order block A^ε at the ε the draw was made for.
    pub second: Matrix2,
}

impl Draw {
    pub fn log_kappa(&self) -> f64 {
        self.kappa.ln()
    }

    /// κ(1+εc), the first diagonal entry of D.
    pub fn dilation(&self, eps: f64) -> f64 {
        self.kappa * (1.0 + eps * self.c)
    }

    pub fn diagonal(&self, eps: f64) -> Result<Matrix2> {
        let d = self.dilation(eps);
        if !(d > 0.0) {
            return Err(Error::NonPositiveDiagonal { value: d });
        }
        Ok(Matrix2::diag(d, 1.0 / d))
    }

    pub fn perturbation(&self, eps: f64) -> Matrix2 {
        let e2 = eps * eps;
        let s = &self.second;
        Matrix2::new(
            1.0 + e2 * s.a11,
            eps * (self.a - self.b) + e2 * s.a12,
            -eps * (self.a + self.b) + e2 * s.a21,
            1.0 + e2 * s.a22,
        )
    }

    /// M = Q·D, the action on x = −cot θ. Assumes κ(1+εc) > 0.
    #[inline]
    pub fn x_action(&self, eps: f64) -> Matrix2 {
        let d = self.dilation(eps);
        let q = self.perturbation(eps);
        Matrix2::new(q.a11 * d, q.a12 / d, q.a21 * d, q.a22 / d)
    }

    /// T = J·Q·D·J.
    pub fn transfer(&self, eps: f64) -> Result<Matrix2> {
        self.diagonal(eps)?;
        Ok(self.x_action(eps).reflect())
    }
}

/// Law of log κ reduced to weighted nodes.
#[derive(Debug, Clone)]
struct LogKappaLaw {
    nodes: Vec<(f64, f64)>,
    lo: f64,
    hi: f64,
    prob_positive: f64,
}

#[derive(Debug, Clone)]
pub struct CriticalFamily {
    spec: FamilySpec,
    law: LogKappaLaw,
}

impl CriticalFamily {
    /// Builds a family and enforces balance and non-triviality.
    pub fn new(spec: FamilySpec) -> Result<Self> {
        let fam = CriticalFamily::new_unchecked(spec)?;
        if let Some(e) = fam.hypothesis_violations().into_iter().next() {
            return Err(e);
        }
        Ok(fam)
    }

    /// Builds a family validating only the distributions themselves, for
    /// deliberately unbalanced experiments.
    pub fn new_unchecked(spec: FamilySpec) -> Result<Self> {
        let law = match &spec {
            FamilySpec::Generic { log_kappa, a, b, c } => {
                for d in [log_kappa, a, b, c] {
                    d.validate()?;
                }
                direct_law(log_kappa)
            }
            FamilySpec::Hopping { hopping } => {
                hopping.validate()?;
                let (lo, hi) = hopping.support();
                if !(lo > 0.0) {
                    return Err(Error::InvalidDistribution("hopping amplitudes must be positive".into()));
                }
                let q = hopping.quadrature();
                let logs: Vec<(f64, f64)> = q.iter().map(|(t, w)| (t.ln(), *w)).collect();
                let mut nodes = Vec::with_capacity(logs.len() * logs.len());
                for (l_even, w_even) in &logs {
                    for (l_odd, w_odd) in &logs {
                        nodes.push((l_even - l_odd, w_even * w_odd));
                    }
                }
                let spread = (hi / lo).ln();
                LogKappaLaw { nodes, lo: -spread, hi: spread, prob_positive: hopping.prob_ordered_pair() }
            }
            FamilySpec::Dirac { w } => {
                w.validate()?;
                direct_law(w)
            }
            FamilySpec::Ising { h } => {
                h.validate()?;
                direct_law(h)
            }
        };
        Ok(CriticalFamily { spec, law })
    }

    pub fn hopping(t: BoundedDistribution) -> Result<Self> {
        CriticalFamily::new(FamilySpec::Hopping { hopping: t })
    }

    pub fn dirac(w: BoundedDistribution) -> Result<Self> {
        CriticalFamily::new(FamilySpec::Dirac { w })
    }

    pub fn ising(h: BoundedDistribution) -> Result<Self> {
        CriticalFamily::new(FamilySpec::Ising { h })
    }

    pub fn generic(
        log_kappa: BoundedDistribution,
        a: BoundedDistribution,
        b: BoundedDistribution,
        c: BoundedDistribution,
    ) -> Result<Self> {
        CriticalFamily::new(FamilySpec::Generic { log_kappa, a, b, c })
    }

    pub fn spec(&self) -> &FamilySpec {
        &self.spec
    }

    pub fn label(&self) -> FamilyLabel {
        match self.spec {
            FamilySpec::Generic { .. } => FamilyLabel::Generic,
            FamilySpec::Hopping { .. } => FamilyLabel::Hopping,
            FamilySpec::Dirac { .. } => FamilyLabel::Dirac,
            FamilySpec::Ising { .. } => FamilyLabel::Ising,
        }
    }

    /// Balance and non-triviality failures, empty when both hold.
    pub fn hypothesis_violations(&self) -> Vec<Error> {
        let mut out = Vec::new();
        let mean = self.mean_log_kappa();
        if mean.abs() > BALANCE_TOL {
            out.push(Error::Unbalanced { mean });
        }
        if !(self.law.prob_positive > 0.0) {
            out.push(Error::Trivial);
        }
        out
    }

    /// E[g(log κ)] by quadrature over the law of log κ.
    pub fn expect_log_kappa(&self, g: impl Fn(f64) -> f64) -> f64 {
        self.law.nodes.iter().map(|(l, w)| w * g(*l)).sum()
    }

    pub fn log_kappa_nodes(&self) -> &[(f64, f64)] {
        &self.law.nodes
    }

    pub fn mean_log_kappa(&self) -> f64 {
        self.expect_log_kappa(|l| l)
    }

    /// E[(log κ)²].
    pub fn expected_log_kappa_sq(&self) -> f64 {
        self.expect_log_kappa(|l| l * l)
    }

    /// (ess inf, ess sup) of log κ.
    pub fn log_kappa_support(&self) -> (f64, f64) {
        (self.law.lo, self.law.hi)
    }

    /// ess sup |log κ|.
    pub fn c0(&self) -> f64 {
        self.law.lo.abs().max(self.law.hi.abs())
    }

    /// Essential range of c.
    fn c_support(&self) -> (f64, f64) {
        match &self.spec {
            FamilySpec::Generic { c, .. } => c.support(),
            _ => (0.0, 0.0),
        }
    }

    /// Accepts ε ≥ 0 with κ(1+εc) > 0 on the whole support.
    pub fn check_eps(&self, eps: f64) -> Result<()> {
        if !(eps >= 0.0) || !eps.is_finite() {
            return Err(Error::InvalidEps { eps, allowed: "[0, inf)" });
        }
        let (clo, chi) = self.c_support();
        let worst = (1.0 + eps * clo).min(1.0 + eps * chi);
        if !(worst > 0.0) {
            return Err(Error::NonPositiveDiagonal { value: worst });
        }
        Ok(())
    }

    /// Sampler with the ε-only pieces precomputed.
    pub fn sampler(&self, eps: f64) -> Result<Sampler<'_>> {
        self.check_eps(eps)?;
        let fixed_second = match self.spec {
            FamilySpec::Dirac { .. } => Some(dirac_second_order(eps)),
            FamilySpec::Ising { .. } => Some(ising_second_order(eps)),
            _ => None,
        };
        Ok(Sampler { fam: self, eps, fixed_second })
    }

    /// Samples T = J·Q·D·J together with the draw it was assembled from.
    pub fn sample_matrix<R: Rng + ?Sized>(&self, eps: f64, rng: &mut R) -> Result<(Matrix2, Draw)> {
        let sampler = self.sampler(eps)?;
        let draw = sampler.draw(rng);
        Ok((draw.transfer(eps)?, draw))
    }

    pub fn constants(&self) -> Result<HypothesisConstants> {
        let c0 = self.c0();
        if !c0.is_finite() {
            return Err(Error::InvalidDistribution("log kappa support is unbounded".into()));
        }
        let (c1, c1p, c1pp, c2) = match &self.spec {
            FamilySpec::Generic { a, b, c, .. } => {
                let (alo, ahi) = a.support();
                let (blo, bhi) = b.support();
                let (clo, chi) = c.support();
                let abs_sup = |lo: f64, hi: f64| lo.abs().max(hi.abs());
                // a, b drawn independently: the infimum separates.
                (
                    alo - abs_sup(blo, bhi),
                    blo - abs_sup(alo, ahi),
                    -bhi - abs_sup(alo, ahi),
                    abs_sup(alo, ahi) + abs_sup(blo, bhi) + abs_sup(clo, chi),
                )
            }
            FamilySpec::Hopping { hopping } => {
                // a = (1+u)/2, b = (u−1)/2 with u = t⁻²:
                // a−|b| = min(1,u), b−|a| = −1, −b−|a| = −u, |a|+|b| = max(1,u).
                let (lo, hi) = hopping.support();
                let (u_min, u_max) = (1.0 / (hi * hi), 1.0 / (lo * lo));
                (u_min.min(1.0), -1.0, -u_max, u_max.max(1.0))
            }
            FamilySpec::Dirac { .. } => (1.0, -1.0, -1.0, 1.0),
            FamilySpec::Ising { .. } => (-1.0, 1.0, -1.0, 1.0),
        };
        let c3 = self.second_order_bound();
        let mean_log_kappa = self.mean_log_kappa();
        let class = if mean_log_kappa.abs() > BALANCE_TOL {
            TypeClass::Unbalanced
        } else if c1 > 0.0 {
            TypeClass::Rotating
        } else if c1p > 0.0 || c1pp > 0.0 {
            TypeClass::Confined
        } else {
            TypeClass::Other
        };
        Ok(HypothesisConstants { c0, c1, c1p, c1pp, c2, c3, mean_log_kappa, class })
    }

    fn second_order_bound(&self) -> f64 {
        match &self.spec {
            FamilySpec::Generic { .. } => 0.0,
            FamilySpec::Hopping { hopping } => {
                let lo = hopping.support().0;
                1.0 / (lo * lo)
            }
            FamilySpec::Dirac { .. } | FamilySpec::Ising { .. } => {
                let block = |e: f64| match self.spec {
                    FamilySpec::Dirac { .. } => dirac_second_order(e),
                    _ => ising_second_order(e),
                };
                (0..=2000)
                    .map(|i| block(SECOND_ORDER_EPS_MAX * i as f64 / 2000.0).operator_norm())
                    .fold(0.0, f64::max)
            }
        }
    }
}

fn direct_law(d: &BoundedDistribution) -> LogKappaLaw {
    let (lo, hi) = d.support();
    LogKappaLaw { nodes: d.quadrature(), lo, hi, prob_positive: d.prob_positive() }
}

/// Draw generator bound to one ε.
#[derive(Debug, Clone)]
pub struct Sampler<'a> {
    fam: &'a CriticalFamily,
    eps: f64,
    fixed_second: Option<Matrix2>,
}

impl Sampler<'_> {
    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn family(&self) -> &CriticalFamily {
        self.fam
    }

    #[inline]
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Draw {
        match &self.fam.spec {
            FamilySpec::Generic { log_kappa, a, b, c } => Draw {
                kappa: log_kappa.sample(rng).exp(),
                a: a.sample(rng),
                b: b.sample(rng),
                c: c.sample(rng),
                second: Matrix2::new(0.0, 0.0, 0.0, 0.0),
            },
            FamilySpec::Hopping { hopping } => {
                let t_odd = hopping.sample(rng);
                let t_even = hopping.sample(rng);
                hopping_draw(t_odd, t_even)
            }
            FamilySpec::Dirac { w } => Draw {
                kappa: w.sample(rng).exp(),
                a: 1.0,
                b: 0.0,
                c: 0.0,
                second: self.fixed_second.expect("set for dirac"),
            },
            FamilySpec::Ising { h } => Draw {
                kappa: h.sample(rng).exp(),
                a: 0.0,
                b: 1.0,
                c: 0.0,
                second: self.fixed_second.expect("set for ising"),
            },
        }
    }
}

/// Draw record of one hopping pair. The product of the two one-site matrices
/// equals −J·Q·D·J for this record.
pub fn hopping_draw(t_odd: f64, t_even: f64) -> Draw {
    let u = 1.0 / (t_even * t_even);
    Draw {
        kappa: t_even / t_odd,
        a: 0.5 * (1.0 + u),
        b: 0.5 * (u - 1.0),
        c: 0.0,
        second: Matrix2::diag(-u, 0.0),
    }
}

/// Product of the two one-site transfer matrices [[−ε/t, −t],[1/t, 0]],
/// even site on the left.
pub fn hopping_transfer(t_odd: f64, t_even: f64, eps: f64) -> Result<Matrix2> {
    if !(t_odd > 0.0 && t_even > 0.0) {
        return Err(Error::InvalidParameter(format!("hopping amplitudes must be positive, got {t_odd}, {t_even}")));
    }
    let site = |t: f64| Matrix2::new(-eps / t, -t, 1.0 / t, 0.0);
    Ok(site(t_even) * site(t_odd))
}

/// Rotation by ε times diag(e^w, e^{−w}).
pub fn dirac_transfer(w: f64, eps: f64) -> Matrix2 {
    let (s, c) = eps.sin_cos();
    Matrix2::new(c, -s, s, c) * Matrix2::diag(w.exp(), (-w).exp())
}

/// Ising transfer matrix for field h and coupling J > 0, with ε = e^{−2J}.
pub fn ising_transfer(h: f64, coupling: f64) -> Result<(Matrix2, f64)> {
    if !(coupling > 0.0) {
        return Err(Error::InvalidParameter(format!("Ising coupling must be positive, got {coupling}")));
    }
    let eps = (-2.0 * coupling).exp();
    let s = 1.0 + ising_norm_excess(eps);
    let m = Matrix2::new(s, s * eps, s * eps, s) * Matrix2::diag(h.exp(), (-h).exp());
    Ok((m, eps))
}

/// (1−ε²)^{−1/2} − 1, accurate for tiny ε.
fn ising_norm_excess(eps: f64) -> f64 {
    (-0.5 * (-eps * eps).ln_1p()).exp_m1()
}

/// Second-order block of the Dirac family: Q = J·R(ε)·J.
pub fn dirac_second_order(eps: f64) -> Matrix2 {
    let e2 = eps * eps;
    let (alpha, beta) = if eps.abs() < 1e-2 {
        // (cos ε − 1)/ε² and (sin ε − ε)/ε² by their Taylor series
        (-0.5 + e2 / 24.0 - e2 * e2 / 720.0, eps * (-1.0 / 6.0 + e2 / 120.0 - e2 * e2 / 5040.0))
    } else {
        let half = (0.5 * eps).sin();
        (-2.0 * half * half / e2, (eps.sin() - eps) / e2)
    };
    Matrix2::new(alpha, beta, -beta, alpha)
}

/// Second-order block of the Ising family: ((s−1)/ε²)·[[1, −ε],[−ε, 1]].
pub fn ising_second_order(eps: f64) -> Matrix2 {
    let e2 = eps * eps;
    let m = if e2 < 1e-30 { 0.5 + 0.375 * e2 } else { ising_norm_excess(eps) / e2 };
    Matrix2::new(m, -m * eps, -m * eps, m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};
    use std::f64::consts::E;

    fn fig1() -> CriticalFamily {
        CriticalFamily::hopping(BoundedDistribution::centered(1.1, 0.4)).unwrap()
    }

    #[test]
    fn generic_example_matrix() {
        let fam = CriticalFamily::new_unchecked(FamilySpec::Generic {
            log_kappa: BoundedDistribution::constant(1.0),
            a: BoundedDistribution::constant(1.0),
            b: BoundedDistribution::constant(0.0),
            c: BoundedDistribution::constant(0.0),
        })
        .unwrap();
        let mut rng = stream(1, 0, Purpose::Sampling);
        let (t, draw) = fam.sample_matrix(0.1, &mut rng).unwrap();
        let expected = Matrix2::new(1.0, -0.1, 0.1, 1.0) * Matrix2::diag(E, 1.0 / E);
        assert!(t.max_abs_diff(&expected) < 1e-15, "{t:?}");
        assert_eq!(draw.kappa, E);
    }

    #[test]
    fn eps_zero_is_diagonal() {
        let mut rng = stream(2, 0, Purpose::Sampling);
        let (t, d) = fig1().sample_matrix(0.0, &mut rng).unwrap();
        assert_eq!(t, Matrix2::diag(d.kappa, 1.0 / d.kappa));
    }

    #[test]
    fn negative_eps_refused() {
        let mut rng = stream(2, 0, Purpose::Sampling);
        assert!(matches!(fig1().sample_matrix(-1e-3, &mut rng), Err(Error::InvalidEps { .. })));
    }

    #[test]
    fn nonpositive_diagonal_refused() {
        let fam = CriticalFamily::generic(
            BoundedDistribution::centered(0.0, 0.3),
            BoundedDistribution::constant(1.0),
            BoundedDistribution::constant(0.0),
            BoundedDistribution::uniform(-5.0, 0.0),
        )
        .unwrap();
        assert!(fam.check_eps(0.1).is_ok());
        assert!(matches!(fam.check_eps(0.25), Err(Error::NonPositiveDiagonal { .. })));
    }

    #[test]
    fn hopping_transfer_examples() {
        assert_eq!(hopping_transfer(1.0, 1.0, 0.0).unwrap(), Matrix2::IDENTITY.scale(-1.0));
        let m = hopping_transfer(1.0, 2.0, 0.0).unwrap();
        assert!(m.max_abs_diff(&Matrix2::diag(-2.0, -0.5)) < 1e-15);
        let m = hopping_transfer(0.9, 1.3, 0.05).unwrap();
        assert!((m.det() - 1.0).abs() < 1e-12);
        assert!(hopping_transfer(0.0, 1.0, 0.1).is_err());
    }

    #[test]
    fn hopping_product_matches_assembly() {
        for &(t1, t2, eps) in &[(0.9, 1.3, 0.05), (0.35, 0.65, 0.2), (1.5, 0.7, 1e-3)] {
            let direct = hopping_transfer(t1, t2, eps).unwrap();
            let assembled = hopping_draw(t1, t2).transfer(eps).unwrap();
            assert!(direct.max_abs_diff(&assembled.scale(-1.0)) < 1e-12, "{direct:?} vs {assembled:?}");
        }
    }

    #[test]
    fn dirac_transfer_examples() {
        assert_eq!(dirac_transfer(0.0, 0.0), Matrix2::IDENTITY);
        let m = dirac_transfer(0.5, 0.0);
        assert!(m.max_abs_diff(&Matrix2::diag(0.5f64.exp(), (-0.5f64).exp())) < 1e-15);
        let m = dirac_transfer(0.0, 0.1);
        let r = Matrix2::new(0.1f64.cos(), -0.1f64.sin(), 0.1f64.sin(), 0.1f64.cos());
        assert!(m.max_abs_diff(&r) < 1e-15);
    }

    #[test]
    fn dirac_assembly_matches_direct() {
        for &eps in &[1e-5, 3e-3, 0.05, 0.4] {
            let d = Draw { kappa: 0.3f64.exp(), a: 1.0, b: 0.0, c: 0.0, second: dirac_second_order(eps) };
            let t = d.transfer(eps).unwrap();
            assert!(t.max_abs_diff(&dirac_transfer(0.3, eps)) < 1e-14, "eps={eps}");
        }
    }

    #[test]
    fn ising_transfer_examples() {
        let (m, eps) = ising_transfer(0.0, 10.0).unwrap();
        assert!((m.a12 - (-20.0f64).exp()).abs() < 1e-20);
        assert!((m.a12 - 2.06e-9).abs() < 1e-11);
        assert!((m.a11 - 1.0).abs() < 1e-15);
        assert_eq!(eps, (-20.0f64).exp());
        let (m, _) = ising_transfer(0.3, 2.0).unwrap();
        assert!((m.det() - 1.0).abs() < 1e-12);
        let (_, eps) = ising_transfer(0.5, 1.0).unwrap();
        assert!((eps - 0.1353).abs() < 1e-4);
        assert!(ising_transfer(0.1, 0.0).is_err());
    }

    #[test]
    fn ising_assembly_matches_direct() {
        for &coupling in &[0.4, 1.0, 3.0, 12.0] {
            let (direct, eps) = ising_transfer(-0.12, coupling).unwrap();
            let d = Draw { kappa: (-0.12f64).exp(), a: 0.0, b: 1.0, c: 0.0, second: ising_second_order(eps) };
            assert!(d.transfer(eps).unwrap().max_abs_diff(&direct) < 1e-13, "J={coupling}");
        }
    }

    #[test]
    fn constants_examples() {
        let k = fig1().constants().unwrap();
        assert!((k.c0 - (15.0f64 / 7.0).ln()).abs() < 1e-14);
        assert!((k.c0 - 0.7621).abs() < 1e-4);
        assert_eq!(k.class, TypeClass::Rotating);
        // a − |b| = min(1, t⁻²) is smallest at t = 1.5
        assert!((k.c1 - 1.0 / 2.25).abs() < 1e-15);
        assert!((k.c2 - 1.0 / 0.49).abs() < 1e-14);

        let dirac = CriticalFamily::dirac(BoundedDistribution::centered(0.0, 0.5)).unwrap();
        let k = dirac.constants().unwrap();
        assert_eq!((k.c1, k.class), (1.0, TypeClass::Rotating));
        assert!((k.c3 - 0.5).abs() < 1e-6);

        let ising = CriticalFamily::ising(BoundedDistribution::centered(0.0, 0.15)).unwrap();
        let k = ising.constants().unwrap();
        assert_eq!(k.class, TypeClass::Confined);
        assert_eq!(k.confined_side(), Some(-1));
        assert!(k.c3.is_finite());
    }

    #[test]
    fn expected_log_kappa_sq_examples() {
        let two_point = CriticalFamily::generic(
            BoundedDistribution::TwoPoint { v1: 0.3, p1: 0.5, v2: -0.3 },
            BoundedDistribution::constant(1.0),
            BoundedDistribution::constant(0.0),
            BoundedDistribution::constant(0.0),
        )
        .unwrap();
        assert!((two_point.expected_log_kappa_sq() - 0.09).abs() < 1e-15);

        // Closed forms: ∫ln t = t ln t − t, ∫ln²t = t(ln²t − 2 ln t + 2).
        let (lo, hi) = (0.7f64, 1.5f64);
        let m1 = |t: f64| t * t.ln() - t;
        let m2 = |t: f64| t * (t.ln().powi(2) - 2.0 * t.ln() + 2.0);
        let mean = (m1(hi) - m1(lo)) / (hi - lo);
        let second = (m2(hi) - m2(lo)) / (hi - lo);
        let oracle = 2.0 * (second - mean * mean);
        let got = fig1().expected_log_kappa_sq();
        assert!((got - oracle).abs() < 1e-13, "{got} vs {oracle}");
        assert!((got - 0.0941).abs() < 1e-4);

        let ising = CriticalFamily::ising(BoundedDistribution::centered(0.0, 0.15)).unwrap();
        assert!((ising.expected_log_kappa_sq() - 0.0075).abs() < 1e-15);
    }

    #[test]
    fn hypothesis_checks() {
        let unbalanced = FamilySpec::Dirac { w: BoundedDistribution::uniform(-0.1, 0.3) };
        assert!(matches!(CriticalFamily::new(unbalanced.clone()), Err(Error::Unbalanced { .. })));
        let fam = CriticalFamily::new_unchecked(unbalanced).unwrap();
        assert_eq!(fam.constants().unwrap().class, TypeClass::Unbalanced);
        let clean = FamilySpec::Hopping { hopping: BoundedDistribution::constant(1.0) };
        assert!(matches!(CriticalFamily::new(clean), Err(Error::Trivial)));
        let bad = FamilySpec::Hopping { hopping: BoundedDistribution::uniform(0.0, 1.0) };
        assert!(CriticalFamily::new(bad).is_err());
        let unbounded = BoundedDistribution::uniform(0.0, f64::INFINITY);
        assert!(unbounded.validate().is_err());
        let weights = BoundedDistribution::Discrete { values: vec![1.0, 2.0], weights: vec![0.5, 0.6] };
        assert!(weights.validate().is_err());
    }
}
