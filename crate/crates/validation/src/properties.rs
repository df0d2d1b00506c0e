//! Invariants tying the θ-, x- and (z, ν)-pictures together, as property
//! checks. Every runner starts from a fixed seed so failures replay.

use std::f64::consts::PI;

use critmat::dynamics::{
    fiber_to_x, is_passage, run_orbit, run_orbit_parallel, step_x, step_znu, theta_to_x, two_step_theta, x_to_fiber,
    x_to_theta, OrbitConfig,
};
use critmat::mat2::{mobius, ExtendedReal, Matrix2};
use critmat::models::{BoundedDistribution, CriticalFamily};
use critmat::rng::{stream, Purpose};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestError, TestRng, TestRunner};

/// A named property check; `Err` carries the shrunk counterexample.
pub type Property = (&'static str, fn() -> Result<(), String>);

pub const ALL: [Property; 6] = [
    ("mobius group action", mobius_is_a_group_action),
    ("quarter turn squared", quarter_turn_squared_is_identity_on_the_line),
    ("picture consistency", pictures_agree_step_by_step),
    ("unit determinant", sl2_families_keep_unit_determinant),
    ("passage alternation", passages_alternate),
    ("reproducibility", runs_are_reproducible),
];

fn report<T: std::fmt::Debug>(r: Result<(), TestError<T>>) -> Result<(), String> {
    r.map_err(|e| e.to_string())
}

fn runner(cases: u32) -> TestRunner {
    let rng = TestRng::from_seed(RngAlgorithm::ChaCha, &[7u8; 32]);
    TestRunner::new_with_rng(Config { cases, failure_persistence: None, ..Config::default() }, rng)
}

/// Distance of two projective angles on the circle of circumference π.
fn angle_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(PI);
    d.min(PI - d)
}

fn point() -> impl Strategy<Value = ExtendedReal> {
    prop_oneof![
        9 => (-1e3f64..1e3).prop_map(ExtendedReal::Finite),
        1 => Just(ExtendedReal::Infinity),
    ]
}

fn invertible() -> impl Strategy<Value = Matrix2> {
    (-3.0f64..3.0, -3.0f64..3.0, -3.0f64..3.0, -3.0f64..3.0)
        .prop_map(|(a, b, c, d)| Matrix2::new(a, b, c, d))
        .prop_filter("well conditioned", |m| m.det().abs() > 0.1)
}

fn families() -> Vec<CriticalFamily> {
    vec![
        CriticalFamily::hopping(BoundedDistribution::centered(1.1, 0.4)).unwrap(),
        CriticalFamily::hopping(BoundedDistribution::centered(0.5, 0.15)).unwrap(),
        CriticalFamily::dirac(BoundedDistribution::uniform(-0.5, 0.5)).unwrap(),
        CriticalFamily::ising(BoundedDistribution::uniform(-0.15, 0.15)).unwrap(),
    ]
}

pub fn mobius_is_a_group_action() -> Result<(), String> {
    report(runner(2000)
        .run(&(invertible(), invertible(), point()), |(a, b, x)| {
            let lhs = mobius(&a.mul(&b), x).unwrap();
            let rhs = mobius(&a, mobius(&b, x).unwrap()).unwrap();
            // Compared as projective angles, which stays meaningful at poles.
            let gap = angle_gap(x_to_theta(lhs), x_to_theta(rhs));
            prop_assert!(gap <= 1e-10, "{lhs:?} vs {rhs:?}");
            Ok(())
        }))
}

pub fn quarter_turn_squared_is_identity_on_the_line() -> Result<(), String> {
    report(runner(1000)
        .run(&point(), |x| {
            let j = Matrix2::QUARTER_TURN;
            let twice = mobius(&j, mobius(&j, x).unwrap()).unwrap();
            match (x, twice) {
                (ExtendedReal::Infinity, ExtendedReal::Infinity) => {}
                (ExtendedReal::Finite(a), ExtendedReal::Finite(b)) => prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0)),
                other => prop_assert!(false, "{other:?}"),
            }
            Ok(())
        }))
}

pub fn pictures_agree_step_by_step() -> Result<(), String> {
    // From a common state, one step computed in θ, x and (z, ν) agrees after
    // conversion. Steps landing within 1e-8 of a pole are skipped.
    let fams = families();
    report(runner(8)
        .run(&(0..fams.len(), -8.0f64..-2.0, any::<u64>()), |(i, log_eps, seed)| {
            let fam = &fams[i];
            let eps = 10f64.powf(log_eps);
            let mut rng = stream(seed, 0, Purpose::Sampling);
            let mut x = theta_to_x(1.0);
            for _ in 0..10_000 {
                let (t, draw) = fam.sample_matrix(eps, &mut rng).unwrap();
                let theta = x_to_theta(x);
                let next = step_x(x, &t);
                let via_theta = two_step_theta(theta, &draw, eps);
                let via_z = fiber_to_x(step_znu(x_to_fiber(x, eps).unwrap(), &t, eps), eps).unwrap();
                let th_next = x_to_theta(next);
                let near_pole = th_next < 1e-8 || PI - th_next < 1e-8 || (th_next - PI / 2.0).abs() < 1e-8;
                if !near_pole {
                    prop_assert!(angle_gap(th_next, via_theta) <= 1e-9, "θ-picture: {th_next} vs {via_theta}");
                    prop_assert!(angle_gap(th_next, x_to_theta(via_z)) <= 1e-9, "z-picture: {next:?} vs {via_z:?}");
                }
                x = next;
            }
            Ok(())
        }))
}

pub fn sl2_families_keep_unit_determinant() -> Result<(), String> {
    let fams = families();
    report(runner(64)
        .run(&(0..fams.len(), -12.0f64..-1.0, any::<u64>()), |(i, log_eps, seed)| {
            let eps = 10f64.powf(log_eps);
            let mut rng = stream(seed, 0, Purpose::Sampling);
            for _ in 0..100 {
                let (t, _) = fams[i].sample_matrix(eps, &mut rng).unwrap();
                prop_assert!((t.det() - 1.0).abs() <= 1e-12, "det = {}", t.det());
            }
            Ok(())
        }))
}

pub fn passages_alternate() -> Result<(), String> {
    let fams = families();
    // The two rotating hopping families and Dirac change fiber; Ising never does.
    report(runner(12)
        .run(&(0..3usize, -10.0f64..-3.0, any::<u64>()), |(i, log_eps, seed)| {
            let eps = 10f64.powf(log_eps);
            let stats = run_orbit(&fams[i], eps, 200_000, seed, 1_000, 0.0).unwrap();
            prop_assert!(stats.passages.is_consistent());
            let p = stats.passages.passages();
            for w in p.windows(2) {
                prop_assert!(w[0].sign != w[1].sign);
                prop_assert_eq!(w[0].start + w[0].length, w[1].start);
            }
            Ok(())
        }))?;
    let crossing = is_passage(ExtendedReal::Finite(1.0), ExtendedReal::Finite(-1.0));
    let to_pole = is_passage(ExtendedReal::Finite(1.0), ExtendedReal::Infinity);
    if !crossing || to_pole {
        return Err(format!("is_passage: 1 -> -1 gave {crossing}, 1 -> inf gave {to_pole}"));
    }
    Ok(())
}

pub fn runs_are_reproducible() -> Result<(), String> {
    let fams = families();
    report(runner(6)
        .run(&(0..fams.len(), any::<u64>(), 1u32..4), |(i, seed, workers)| {
            let cfg = OrbitConfig::new(1e-8, 50_000).burn_in(1_000);
            let a = run_orbit_parallel(&fams[i], &cfg, seed, workers).unwrap();
            let b = run_orbit_parallel(&fams[i], &cfg, seed, workers).unwrap();
            prop_assert_eq!(a, b);
            Ok(())
        }))
}

#[cfg(test)]
mod tests {
    #[test]
    fn mobius_is_a_group_action() {
        super::mobius_is_a_group_action().unwrap();
    }

    #[test]
    fn quarter_turn_squared_is_identity_on_the_line() {
        super::quarter_turn_squared_is_identity_on_the_line().unwrap();
    }

    #[test]
    fn pictures_agree_step_by_step() {
        super::pictures_agree_step_by_step().unwrap();
    }

    #[test]
    fn sl2_families_keep_unit_determinant() {
        super::sl2_families_keep_unit_determinant().unwrap();
    }

    #[test]
    fn passages_alternate() {
        super::passages_alternate().unwrap();
    }

    #[test]
    fn runs_are_reproducible() {
        super::runs_are_reproducible().unwrap();
    }
}
