//! Lyapunov exponents, comparisons of the empirical invariant measure with its
//! limit laws, the density of states near the critical energy and the
//! random-field Ising free energy.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::Serialize;

use crate::dynamics::{run_orbit_parallel, OrbitConfig, OrbitStats, Sign};
use crate::error::{Error, Result};
use crate::models::{BoundedDistribution, CriticalFamily, FamilySpec, TypeClass};
use crate::stats::EmpiricalMeasure;

/// Smallest orbit accepted by the Birkhoff estimator.
pub const MIN_BIRKHOFF_STEPS: u64 = 10_000;

/// Passage pairs per matrix step equal twice the density of states per site:
/// one pair is a half-turn of the angle, and each matrix spans two sites.
pub const IDS_PER_PAIR_RATE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LyapunovEstimate {
    /// Growth per matrix step.
    pub gamma_hat: f64,
    pub std_error: f64,
    pub steps: u64,
    pub eps: f64,
}

impl From<&OrbitStats> for LyapunovEstimate {
    fn from(s: &OrbitStats) -> Self {
        LyapunovEstimate { gamma_hat: s.birkhoff.mean(), std_error: s.birkhoff.std_error(), steps: s.steps, eps: s.eps }
    }
}

/// Birkhoff average of log‖T_n e_{θ_n}‖ along a single stream.
pub fn lyapunov_birkhoff(fam: &CriticalFamily, eps: f64, steps: u64, seed: u64) -> Result<LyapunovEstimate> {
    lyapunov_birkhoff_with(fam, &OrbitConfig::new(eps, steps), seed, 1)
}

pub fn lyapunov_birkhoff_with(fam: &CriticalFamily, cfg: &OrbitConfig, seed: u64, workers: u32) -> Result<LyapunovEstimate> {
    if cfg.steps < MIN_BIRKHOFF_STEPS {
        return Err(Error::InvalidParameter(format!(
            "Birkhoff estimate needs at least {MIN_BIRKHOFF_STEPS} steps, got {}",
            cfg.steps
        )));
    }
    let stats = run_orbit_parallel(fam, cfg, seed, workers)?;
    Ok(LyapunovEstimate::from(&stats))
}

fn require_balanced(fam: &CriticalFamily) -> Result<()> {
    let mean = fam.mean_log_kappa();
    if mean.abs() > crate::models::BALANCE_TOL {
        return Err(Error::Unbalanced { mean });
    }
    Ok(())
}

/// Leading small-ε prediction E[(log κ)²]/log(1/ε).
pub fn lyapunov_asymptotic(fam: &CriticalFamily, eps: f64) -> Result<f64> {
    require_balanced(fam)?;
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidEps { eps, allowed: "(0, 1)" });
    }
    Ok(fam.expected_log_kappa_sq() / (1.0 / eps).ln())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Least squares of γ̂ against 1/log(1/ε).
pub fn lyapunov_fit(points: &[(f64, f64)]) -> Result<LinearFit> {
    if points.len() < 3 {
        return Err(Error::DegenerateFit(format!("need at least 3 points, got {}", points.len())));
    }
    if points.iter().any(|&(e, g)| !(e > 0.0 && e < 1.0) || !g.is_finite()) {
        return Err(Error::DegenerateFit("every point needs 0 < eps < 1 and a finite estimate".into()));
    }
    let (emin, emax) = points.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &(e, _)| (lo.min(e), hi.max(e)));
    if (emax / emin).log10() < 2.0 {
        return Err(Error::DegenerateFit("eps values must span at least two decades".into()));
    }
    let xs: Vec<f64> = points.iter().map(|&(e, _)| 1.0 / (1.0 / e).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|&(_, g)| g).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    if !(sxx > 0.0) {
        return Err(Error::DegenerateFit("abscissae coincide".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    Ok(LinearFit { slope, intercept, r2 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub eps: f64,
    pub gamma_hat: f64,
    pub stderr: f64,
    pub asymptotic_prediction: f64,
}

/// Birkhoff estimates over a list of ε sharing one seed.
pub fn lyapunov_sweep(fam: &CriticalFamily, eps_list: &[f64], cfg: &OrbitConfig, seed: u64, workers: u32) -> Result<Vec<SweepRow>> {
    eps_list
        .iter()
        .map(|&eps| {
            let c = OrbitConfig { eps, ..cfg.clone() };
            let est = lyapunov_birkhoff_with(fam, &c, seed, workers)?;
            Ok(SweepRow {
                eps,
                gamma_hat: est.gamma_hat,
                stderr: est.std_error,
                asymptotic_prediction: lyapunov_asymptotic(fam, eps)?,
            })
        })
        .collect()
}

fn check_unit_interval(z1: f64, z2: f64) -> Result<()> {
    if -1.0 <= z1 && z1 <= z2 && z2 <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidInterval { lo: z1, hi: z2 })
    }
}

/// Limit mass of [z1, z2] on each fiber for the rotating type: density (1−z)/4.
pub fn triangular_reference(z1: f64, z2: f64) -> Result<f64> {
    check_unit_interval(z1, z2)?;
    Ok(0.25 * ((z2 - z1) - (z2 * z2 - z1 * z1) / 2.0))
}

/// Limit mass of [z, 1] on each fiber for the rotating type.
pub fn triangular_tail(z: f64) -> Result<f64> {
    check_unit_interval(z, 1.0)?;
    let h = (1.0 - z) / 2.0;
    Ok(0.5 * h * h)
}

/// Limit mass of [z1, z2] on the negative fiber for the confined type; the
/// positive fiber carries none.
pub fn uniform_reference(z1: f64, z2: f64) -> Result<f64> {
    check_unit_interval(z1, z2)?;
    Ok(0.5 * (z2 - z1))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceLaw {
    /// Both fibers, density (1−z)/4 each.
    Triangular,
    /// Negative fiber only, density ½.
    UniformNegative,
}

impl ReferenceLaw {
    pub fn fiber_mass(self, nu: Sign) -> f64 {
        match (self, nu) {
            (ReferenceLaw::Triangular, _) => 0.5,
            (ReferenceLaw::UniformNegative, Sign::Minus) => 1.0,
            (ReferenceLaw::UniformNegative, Sign::Plus) => 0.0,
        }
    }

    /// Mass on [−1, z] within fiber ν.
    pub fn mass_up_to(self, nu: Sign, z: f64) -> f64 {
        let z = z.clamp(-1.0, 1.0);
        match (self, nu) {
            (ReferenceLaw::Triangular, _) => 0.25 * ((z + 1.0) - (z * z - 1.0) / 2.0),
            (ReferenceLaw::UniformNegative, Sign::Minus) => 0.5 * (z + 1.0),
            (ReferenceLaw::UniformNegative, Sign::Plus) => 0.0,
        }
    }

    /// Conditional CDF within fiber ν; NaN on a fiber without mass.
    pub fn fiber_cdf(self, nu: Sign, z: f64) -> f64 {
        self.mass_up_to(nu, z) / self.fiber_mass(nu)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeasureDistance {
    /// max(ks_plus, ks_minus).
    pub ks: f64,
    /// sup over z ∈ [−1, 1] of |μ̂_+((−∞, z]) − μ_+((−∞, z])|, both normalised
    /// by the total mass of the two fibers.
    pub ks_plus: f64,
    pub ks_minus: f64,
    /// Same with each fiber conditioned on itself; NaN where either side has
    /// no mass on the fiber.
    pub ks_conditional_plus: f64,
    pub ks_conditional_minus: f64,
    /// Σ over bins inside [−1, 1] and both fibers of |empirical − reference| mass.
    pub l1: f64,
    /// Empirical mass outside [−1, 1], including ∞.
    pub overflow: f64,
    pub mass_plus: f64,
    pub mass_minus: f64,
}

/// KS distances between per-fiber distribution functions, read at every
/// histogram edge in [−1, 1]. Empirical mass below −1 counts toward the
/// empirical distribution function.
pub fn measure_distance(emp: &EmpiricalMeasure, law: ReferenceLaw) -> Result<MeasureDistance> {
    if !(emp.total > 0.0) {
        return Err(Error::InvalidParameter("empirical measure is empty".into()));
    }
    let edges: Vec<f64> = (0..=emp.bin_count()).map(|i| emp.edge(i)).filter(|z| (-1.0 - 1e-12..=1.0 + 1e-12).contains(z)).collect();
    let mut grid = edges.clone();
    grid.extend([-1.0, 1.0]);
    let sup = |nu: Sign, emp_norm: f64, ref_norm: f64| {
        grid.iter()
            .map(|&z| (emp.cumulative(nu, z) / emp_norm - law.mass_up_to(nu, z) / ref_norm).abs())
            .fold(0.0, f64::max)
    };
    let conditional = |nu: Sign| {
        let fiber_total = emp.fiber_mass(nu);
        if law.fiber_mass(nu) == 0.0 || fiber_total == 0.0 {
            f64::NAN
        } else {
            sup(nu, fiber_total, law.fiber_mass(nu))
        }
    };
    let ks_plus = sup(Sign::Plus, emp.total, 1.0);
    let ks_minus = sup(Sign::Minus, emp.total, 1.0);
    let mut l1 = 0.0;
    for nu in [Sign::Plus, Sign::Minus] {
        for w in edges.windows(2) {
            let e = emp.mass_between(nu, w[0], w[1]) / emp.total;
            let r = law.mass_up_to(nu, w[1]) - law.mass_up_to(nu, w[0]);
            l1 += (e - r).abs();
        }
    }
    Ok(MeasureDistance {
        ks: ks_plus.max(ks_minus),
        ks_plus,
        ks_minus,
        ks_conditional_plus: conditional(Sign::Plus),
        ks_conditional_minus: conditional(Sign::Minus),
        l1,
        overflow: emp.mass_outside(1.0) / emp.total,
        mass_plus: emp.fiber_mass(Sign::Plus) / emp.total,
        mass_minus: emp.fiber_mass(Sign::Minus) / emp.total,
    })
}

/// Histogram of the invariant measure over Prüfer angles.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThetaDensity {
    pub edges: Vec<f64>,
    /// Probability density per bin; integrates with `atom_infinity` to 1.
    pub density: Vec<f64>,
    /// Mass at z = ∞, which corresponds to both θ = 0 and θ = π/2.
    pub atom_infinity: f64,
}

impl ThetaDensity {
    pub fn total_mass(&self) -> f64 {
        self.density.iter().zip(self.edges.windows(2)).map(|(d, w)| d * (w[1] - w[0])).sum::<f64>() + self.atom_infinity
    }
}

/// Mass of fiber ν on (−∞, z], with the overflow bins as atoms at ±zmax.
fn fiber_cdf_extended(emp: &EmpiricalMeasure, nu: Sign, z: f64) -> f64 {
    let h = emp.fiber(nu);
    if z < -emp.zmax {
        0.0
    } else if z >= emp.zmax {
        h.below + h.bins.iter().sum::<f64>() + h.above
    } else {
        emp.cumulative(nu, z)
    }
}

/// z-coordinate of the angle θ ∈ [0, π): the negative fiber on (0, π/2), the
/// positive one on (π/2, π); z increases with θ on each.
fn theta_to_fiber_z(theta: f64, delta: f64) -> (Sign, f64) {
    if theta <= 0.0 {
        (Sign::Minus, f64::NEG_INFINITY)
    } else if theta < FRAC_PI_2 {
        (Sign::Minus, -delta * (1.0 / theta.tan()).ln())
    } else if theta == FRAC_PI_2 {
        (Sign::Plus, f64::NEG_INFINITY)
    } else if theta < PI {
        (Sign::Plus, delta * (-1.0 / theta.tan()).ln())
    } else {
        (Sign::Plus, f64::INFINITY)
    }
}

/// Pulls the z-histogram back to `bins` equal θ-bins on [0, π) (bins even, so
/// π/2 is an edge). Mass is spread uniformly in z within each z-bin.
pub fn pullback_theta_density(emp: &EmpiricalMeasure, eps: f64, bins: usize) -> Result<ThetaDensity> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidEps { eps, allowed: "(0, 1)" });
    }
    if bins < 2 || bins % 2 != 0 {
        return Err(Error::InvalidParameter(format!("theta bins must be even and at least 2, got {bins}")));
    }
    if !(emp.total > 0.0) {
        return Err(Error::InvalidParameter("empirical measure is empty".into()));
    }
    let delta = crate::dynamics::delta(eps);
    let width = PI / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|i| i as f64 * width).collect();
    let half = bins / 2;
    let density = (0..bins)
        .map(|i| {
            let nu = if i < half { Sign::Minus } else { Sign::Plus };
            // Bin edges sit exactly on 0, π/2 and π at the fiber ends.
            let lo = if i == half { f64::NEG_INFINITY } else { theta_to_fiber_z(edges[i], delta).1 };
            let hi = if i + 1 == half || i + 1 == bins { f64::INFINITY } else { theta_to_fiber_z(edges[i + 1], delta).1 };
            let lo_mass = if lo == f64::NEG_INFINITY { 0.0 } else { fiber_cdf_extended(emp, nu, lo) };
            let hi_mass = fiber_cdf_extended(emp, nu, hi);
            (hi_mass - lo_mass) / emp.total / width
        })
        .collect();
    let atom_infinity = (emp.plus.infinity + emp.minus.infinity) / emp.total;
    Ok(ThetaDensity { edges, density, atom_infinity })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IdsEstimate {
    /// Completed passage pairs per matrix step.
    pub pair_rate: f64,
    /// Density of states per site measured from the critical energy.
    pub ids: f64,
    /// E[(log κ)²]/(4·log²ε).
    pub predicted: f64,
    pub passages: usize,
}

/// Density of states near the critical energy from the passage rate.
pub fn ids_estimate(fam: &CriticalFamily, eps: f64, steps: u64, seed: u64) -> Result<IdsEstimate> {
    ids_estimate_with(fam, &OrbitConfig::new(eps, steps), seed, 1)
}

pub fn ids_estimate_with(fam: &CriticalFamily, cfg: &OrbitConfig, seed: u64, workers: u32) -> Result<IdsEstimate> {
    let class = fam.constants()?.class;
    if class != TypeClass::Rotating {
        return Err(Error::WrongType { expected: "rotating", found: class.name() });
    }
    if !(cfg.eps > 0.0) {
        return Err(Error::InvalidEps { eps: cfg.eps, allowed: "(0, 1)" });
    }
    let stats = run_orbit_parallel(fam, cfg, seed, workers)?;
    let pair_rate = 0.5 * stats.passages.rate(stats.steps);
    let log_eps = cfg.eps.ln();
    Ok(IdsEstimate {
        pair_rate,
        ids: IDS_PER_PAIR_RATE * pair_rate,
        predicted: fam.expected_log_kappa_sq() / (4.0 * log_eps * log_eps),
        passages: stats.passages.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FreeEnergy {
    /// ½·log(e^{2J} − e^{−2J}).
    pub deterministic: f64,
    pub lyapunov: LyapunovEstimate,
    pub free_energy: f64,
}

/// ½·log(e^{2J} − e^{−2J}) = J + ½·log(1 − e^{−4J}).
pub fn ising_deterministic_term(coupling: f64) -> f64 {
    coupling + 0.5 * (-(-4.0 * coupling).exp()).ln_1p()
}

/// Free energy density of the random-field Ising chain at coupling J > 0.
/// A zero field is accepted here even though it violates non-triviality.
pub fn ising_free_energy(h: &BoundedDistribution, coupling: f64, steps: u64, seed: u64) -> Result<FreeEnergy> {
    if !(coupling > 0.0) {
        return Err(Error::InvalidParameter(format!("Ising coupling must be positive, got {coupling}")));
    }
    let fam = CriticalFamily::new_unchecked(FamilySpec::Ising { h: h.clone() })?;
    require_balanced(&fam)?;
    let eps = (-2.0 * coupling).exp();
    let lyapunov = lyapunov_birkhoff(&fam, eps, steps, seed)?;
    let deterministic = ising_deterministic_term(coupling);
    Ok(FreeEnergy { deterministic, lyapunov, free_energy: deterministic + lyapunov.gamma_hat })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::run_orbit;

    fn fig1() -> CriticalFamily {
        CriticalFamily::hopping(BoundedDistribution::centered(1.1, 0.4)).unwrap()
    }

    #[test]
    fn birkhoff_zero_at_eps_zero() {
        let est = lyapunov_birkhoff(&fig1(), 0.0, 200_000, 1).unwrap();
        assert!(est.gamma_hat.abs() <= 4.0 * est.std_error, "{est:?}");
    }

    #[test]
    fn birkhoff_unbalanced_at_eps_zero() {
        let spec = FamilySpec::Generic {
            log_kappa: BoundedDistribution::uniform(-0.2, 0.4),
            a: BoundedDistribution::constant(1.0),
            b: BoundedDistribution::constant(0.0),
            c: BoundedDistribution::constant(0.0),
        };
        let fam = CriticalFamily::new_unchecked(spec).unwrap();
        let est = lyapunov_birkhoff(&fam, 0.0, 200_000, 2).unwrap();
        assert!((est.gamma_hat - 0.1).abs() <= 4.0 * est.std_error, "{est:?}");
    }

    #[test]
    fn birkhoff_rejects_short_orbits() {
        assert!(lyapunov_birkhoff(&fig1(), 1e-3, 100, 1).is_err());
    }

    #[test]
    fn birkhoff_matches_asymptotics_roughly() {
        let est = lyapunov_birkhoff(&fig1(), 1e-6, 1_000_000, 3).unwrap();
        let scaled = est.gamma_hat * (1e6f64).ln();
        assert!((scaled / 0.094061 - 1.0).abs() < 0.35, "{scaled}");
    }

    #[test]
    fn asymptotic_examples() {
        let two = CriticalFamily::generic(
            BoundedDistribution::TwoPoint { v1: 0.3, p1: 0.5, v2: -0.3 },
            BoundedDistribution::constant(1.0),
            BoundedDistribution::constant(0.0),
            BoundedDistribution::constant(0.0),
        )
        .unwrap();
        assert!((lyapunov_asymptotic(&two, (-10.0f64).exp()).unwrap() - 0.009).abs() < 1e-15);
        let fam = CriticalFamily::hopping(BoundedDistribution::uniform(0.7, 1.5)).unwrap();
        let v = lyapunov_asymptotic(&fam, 1e-8).unwrap();
        assert!((v / (0.094061 / (1e8f64).ln()) - 1.0).abs() < 1e-5);
        let e: f64 = 1e-5;
        assert!((lyapunov_asymptotic(&fam, e * e).unwrap() - 0.5 * lyapunov_asymptotic(&fam, e).unwrap()).abs() < 1e-16);
        assert!(lyapunov_asymptotic(&fam, 0.0).is_err());
    }

    #[test]
    fn asymptotic_refuses_unbalanced() {
        let spec = FamilySpec::Generic {
            log_kappa: BoundedDistribution::uniform(0.0, 0.4),
            a: BoundedDistribution::constant(1.0),
            b: BoundedDistribution::constant(0.0),
            c: BoundedDistribution::constant(0.0),
        };
        let fam = CriticalFamily::new_unchecked(spec).unwrap();
        assert!(matches!(lyapunov_asymptotic(&fam, 1e-3), Err(Error::Unbalanced { .. })));
    }

    #[test]
    fn fit_recovers_exact_line() {
        let pts: Vec<(f64, f64)> = [1e-4, 1e-6, 1e-8].iter().map(|&e: &f64| (e, 0.3 / (1.0 / e).ln())).collect();
        let fit = lyapunov_fit(&pts).unwrap();
        assert!((fit.slope - 0.3).abs() < 1e-12);
        assert!(fit.intercept.abs() < 1e-14);
        assert!((fit.r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fit_rejects_degenerate_input() {
        assert!(lyapunov_fit(&[(1e-4, 0.1), (1e-6, 0.1)]).is_err());
        assert!(lyapunov_fit(&[(1e-4, 0.1), (2e-4, 0.1), (3e-4, 0.1)]).is_err());
    }

    #[test]
    fn reference_masses() {
        assert!((triangular_reference(-1.0, 1.0).unwrap() - 0.5).abs() < 1e-15);
        assert!((triangular_reference(0.0, 1.0).unwrap() - 0.125).abs() < 1e-15);
        assert!((triangular_reference(-1.0, 0.0).unwrap() - 0.375).abs() < 1e-15);
        assert!((triangular_tail(0.0).unwrap() - 0.125).abs() < 1e-15);
        assert!((uniform_reference(-1.0, 1.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((uniform_reference(0.0, 1.0).unwrap() - 0.5).abs() < 1e-15);
        assert!((uniform_reference(-0.5, 0.5).unwrap() - 0.5).abs() < 1e-15);
        assert!(triangular_reference(-1.5, 0.0).is_err());
        assert!(uniform_reference(0.5, 0.2).is_err());
    }

    #[test]
    fn tail_agrees_with_interval_mass() {
        for z in [-0.7, 0.0, 0.4] {
            assert!((triangular_tail(z).unwrap() - triangular_reference(z, 1.0).unwrap()).abs() < 1e-15);
        }
    }

    /// Places the exact bin masses of the law at bin centres.
    fn discretize(law: ReferenceLaw) -> EmpiricalMeasure {
        let mut emp = EmpiricalMeasure::default();
        for nu in [Sign::Plus, Sign::Minus] {
            for i in 0..emp.bin_count() {
                let (lo, hi) = (emp.edge(i), emp.edge(i + 1));
                if lo >= -1.0 - 1e-12 && hi <= 1.0 + 1e-12 {
                    let m = law.mass_up_to(nu, hi) - law.mass_up_to(nu, lo);
                    emp.record(0.5 * (lo + hi), nu, m);
                }
            }
        }
        emp
    }

    #[test]
    fn exact_discretization_is_close() {
        for law in [ReferenceLaw::Triangular, ReferenceLaw::UniformNegative] {
            let emp = discretize(law);
            let d = measure_distance(&emp, law).unwrap();
            assert!(d.ks <= emp.bin_width(), "{law:?}: {d:?}");
            assert!(d.ks_conditional_minus <= emp.bin_width());
            assert!(d.l1 < 1e-9);
            assert!(d.overflow < 1e-12);
        }
        let d = measure_distance(&discretize(ReferenceLaw::UniformNegative), ReferenceLaw::UniformNegative).unwrap();
        assert!(d.ks_conditional_plus.is_nan());
        assert_eq!(d.ks_plus, 0.0);
    }

    #[test]
    fn distance_detects_wrong_law() {
        let emp = discretize(ReferenceLaw::Triangular);
        let d = measure_distance(&emp, ReferenceLaw::UniformNegative).unwrap();
        assert!(d.ks > 0.1);
    }

    #[test]
    fn pullback_preserves_mass() {
        let emp = run_orbit(&fig1(), 0.05, 50_000, 4, 1000, 0.0).unwrap().measure;
        let th = pullback_theta_density(&emp, 0.05, 360).unwrap();
        assert!((th.total_mass() - 1.0).abs() < 1e-12);
        assert!(th.density.iter().all(|&d| d >= 0.0));
    }

    #[test]
    fn pullback_of_uniform_z_matches_jacobian() {
        // Uniform z-mass on [−1, 1] of the negative fiber: θ ∈ (0, π/2), z = −δ·log cot θ,
        // so dz/dθ = δ/(sin θ cos θ) and the θ-density is ½·δ/(sin θ cos θ) inside the window.
        let eps: f64 = 0.05;
        let delta = crate::dynamics::delta(eps);
        let mut emp = EmpiricalMeasure::new(4000, 1.25);
        for i in 0..emp.bin_count() {
            let (lo, hi) = (emp.edge(i), emp.edge(i + 1));
            if lo >= -1.0 - 1e-12 && hi <= 1.0 + 1e-12 {
                emp.record(0.5 * (lo + hi), Sign::Minus, (hi - lo) / 2.0);
            }
        }
        let th = pullback_theta_density(&emp, eps, 720).unwrap();
        assert!((th.total_mass() - 1.0).abs() < 1e-12);
        for (k, &d) in th.density.iter().enumerate() {
            let mid = 0.5 * (th.edges[k] + th.edges[k + 1]);
            let window = mid.tan() > eps && mid.tan() < 1.0 / eps;
            let expected = if mid < FRAC_PI_2 && window { 0.5 * delta / (mid.sin() * mid.cos()) } else { 0.0 };
            // skip the two bins straddling the window edges
            let near_edge = (th.edges[k].tan() - eps) * (th.edges[k + 1].tan() - eps) <= 0.0
                || (th.edges[k].tan() - 1.0 / eps) * (th.edges[k + 1].tan() - 1.0 / eps) <= 0.0;
            if !near_edge {
                assert!((d - expected).abs() <= 0.01 * expected.max(1e-3), "bin {k}: {d} vs {expected}");
            }
        }
    }

    #[test]
    fn ids_refuses_confined() {
        let fam = CriticalFamily::ising(BoundedDistribution::centered(0.0, 0.15)).unwrap();
        assert!(matches!(ids_estimate(&fam, 1e-4, 10_000, 1), Err(Error::WrongType { .. })));
    }

    #[test]
    fn ising_deterministic_term_examples() {
        let v = ising_deterministic_term(5.0);
        assert!(v < 5.0 && 5.0 - v < 1e-8);
        let j: f64 = 0.3;
        let direct = 0.5 * ((2.0 * j).exp() - (-2.0 * j).exp()).ln();
        assert!((ising_deterministic_term(j) - direct).abs() < 1e-14);
    }

    #[test]
    fn clean_ising_matches_trace_oracle() {
        // (1/N)·log tr(T^N) with renormalisation, against log(2 cosh J).
        let j: f64 = 1.0;
        let (t, _) = crate::models::ising_transfer(0.0, j).unwrap();
        let mut p = crate::mat2::Matrix2::IDENTITY;
        let mut log_scale = 0.0;
        let n = 100_000;
        for _ in 0..n {
            p = p.mul(&t);
            let s = p.operator_norm();
            p = p.scale(1.0 / s);
            log_scale += s.ln();
        }
        let trace_oracle = (log_scale + p.trace().ln()) / n as f64 + ising_deterministic_term(j);
        let exact = (2.0 * j.cosh()).ln();
        assert!((trace_oracle - exact).abs() < 1e-3);
        let fe = ising_free_energy(&BoundedDistribution::constant(0.0), j, 100_000, 1).unwrap();
        assert!((fe.free_energy - exact).abs() < 1e-3, "{fe:?}");
    }
}
