//! Real 2×2 matrices with their Möbius and projective actions.

use std::f64::consts::PI;
use std::ops::Mul;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Determinants at or below this magnitude count as singular.
pub const SINGULAR_DET: f64 = 1e-300;
/// Möbius denominators below this magnitude send the point to ∞.
pub const POLE_DENOMINATOR: f64 = 1e-300;
const UNIMODULAR_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Matrix2 {
    pub a11: f64,
    pub a12: f64,
    pub a21: f64,
    pub a22: f64,
}

impl Matrix2 {
    pub const IDENTITY: Matrix2 = Matrix2::new(1.0, 0.0, 0.0, 1.0);
    /// diag(1, −1)
    pub const REFLECTION: Matrix2 = Matrix2::new(1.0, 0.0, 0.0, -1.0);
    /// Quarter turn [[0,−1],[1,0]]; acts as x ↦ −1/x.
    pub const QUARTER_TURN: Matrix2 = Matrix2::new(0.0, -1.0, 1.0, 0.0);
    /// Swap [[0,1],[1,0]]; acts as x ↦ 1/x.
    pub const SWAP: Matrix2 = Matrix2::new(0.0, 1.0, 1.0, 0.0);

    pub const fn new(a11: f64, a12: f64, a21: f64, a22: f64) -> Self {
        Matrix2 { a11, a12, a21, a22 }
    }

    /// Checked constructor rejecting NaN and infinite entries.
    pub fn try_new(a11: f64, a12: f64, a21: f64, a22: f64) -> Result<Self> {
        let m = Matrix2::new(a11, a12, a21, a22);
        if m.is_finite() {
            Ok(m)
        } else {
            Err(Error::NonFiniteEntry)
        }
    }

    /// Constructor for matrices that must lie in SL(2,ℝ).
    pub fn unimodular(a11: f64, a12: f64, a21: f64, a22: f64) -> Result<Self> {
        let m = Matrix2::try_new(a11, a12, a21, a22)?;
        let det = m.det();
        if (det - 1.0).abs() > UNIMODULAR_TOL {
            return Err(Error::NotUnimodular { det });
        }
        Ok(m)
    }

    pub const fn diag(d1: f64, d2: f64) -> Self {
        Matrix2::new(d1, 0.0, 0.0, d2)
    }

    pub fn is_finite(&self) -> bool {
        self.a11.is_finite() && self.a12.is_finite() && self.a21.is_finite() && self.a22.is_finite()
    }

    pub fn det(&self) -> f64 {
        self.a11 * self.a22 - self.a12 * self.a21
    }

    pub fn trace(&self) -> f64 {
        self.a11 + self.a22
    }

    pub fn scale(&self, s: f64) -> Self {
        Matrix2::new(s * self.a11, s * self.a12, s * self.a21, s * self.a22)
    }

    pub fn add(&self, o: &Matrix2) -> Self {
        Matrix2::new(self.a11 + o.a11, self.a12 + o.a12, self.a21 + o.a21, self.a22 + o.a22)
    }

    pub fn mul(&self, o: &Matrix2) -> Self {
        Matrix2::new(
            self.a11 * o.a11 + self.a12 * o.a21,
            self.a11 * o.a12 + self.a12 * o.a22,
            self.a21 * o.a11 + self.a22 * o.a21,
            self.a21 * o.a12 + self.a22 * o.a22,
        )
    }

    pub fn inverse(&self) -> Result<Self> {
        let det = self.det();
        if det.abs() <= SINGULAR_DET {
            return Err(Error::SingularMatrix);
        }
        Ok(Matrix2::new(self.a22 / det, -self.a12 / det, -self.a21 / det, self.a11 / det))
    }

    /// J·A·J with J = diag(1,−1): flips the sign of the off-diagonal entries.
    pub fn reflect(&self) -> Self {
        Matrix2::new(self.a11, -self.a12, -self.a21, self.a22)
    }

    pub fn apply(&self, v: [f64; 2]) -> [f64; 2] {
        [self.a11 * v[0] + self.a12 * v[1], self.a21 * v[0] + self.a22 * v[1]]
    }

    /// Largest singular value.
    pub fn operator_norm(&self) -> f64 {
        let p = (self.a11 + self.a22).hypot(self.a21 - self.a12);
        let q = (self.a11 - self.a22).hypot(self.a12 + self.a21);
        0.5 * (p + q)
    }

    pub fn max_abs_diff(&self, o: &Matrix2) -> f64 {
        (self.a11 - o.a11)
            .abs()
            .max((self.a12 - o.a12).abs())
            .max((self.a21 - o.a21).abs())
            .max((self.a22 - o.a22).abs())
    }

    /// Möbius action on the finite-or-∞ line without the invertibility check.
    ///
    /// Callers guarantee `det ≠ 0`; the orbit loops use this on matrices whose
    /// determinant is fixed by construction.
    #[inline]
    pub fn mobius_unchecked(&self, x: ExtendedReal) -> ExtendedReal {
        match x {
            ExtendedReal::Infinity => {
                if self.a21.abs() < POLE_DENOMINATOR {
                    ExtendedReal::Infinity
                } else {
                    ExtendedReal::new(self.a11 / self.a21)
                }
            }
            ExtendedReal::Finite(v) => {
                // Divide through by v for large |v| so that a21·v cannot overflow.
                let (num, den) = if v.abs() > 1.0 {
                    (self.a11 + self.a12 / v, self.a21 + self.a22 / v)
                } else {
                    (self.a11 * v + self.a12, self.a21 * v + self.a22)
                };
                if den.abs() < POLE_DENOMINATOR {
                    ExtendedReal::Infinity
                } else {
                    ExtendedReal::new(num / den)
                }
            }
        }
    }
}

impl Mul for Matrix2 {
    type Output = Matrix2;
    fn mul(self, o: Matrix2) -> Matrix2 {
        Matrix2::mul(&self, &o)
    }
}

/// A point of the one-point compactification ℝ ∪ {∞}.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ExtendedReal {
    Finite(f64),
    Infinity,
}

impl ExtendedReal {
    /// Maps ±inf to the single point ∞. NaN is a caller bug.
    pub fn new(v: f64) -> Self {
        debug_assert!(!v.is_nan(), "NaN is not a point of the projective line");
        if v.is_finite() {
            ExtendedReal::Finite(v)
        } else {
            ExtendedReal::Infinity
        }
    }

    pub fn is_infinite(&self) -> bool {
        matches!(self, ExtendedReal::Infinity)
    }

    pub fn finite(&self) -> Option<f64> {
        match *self {
            ExtendedReal::Finite(v) => Some(v),
            ExtendedReal::Infinity => None,
        }
    }

    /// ∞ becomes `f64::INFINITY`.
    pub fn to_f64(&self) -> f64 {
        self.finite().unwrap_or(f64::INFINITY)
    }
}

impl From<f64> for ExtendedReal {
    fn from(v: f64) -> Self {
        ExtendedReal::new(v)
    }
}

pub fn mul(a: &Matrix2, b: &Matrix2) -> Matrix2 {
    a.mul(b)
}

/// x ↦ (a11·x + a12)/(a21·x + a22) on ℝ ∪ {∞}.
pub fn mobius(a: &Matrix2, x: ExtendedReal) -> Result<ExtendedReal> {
    if a.det().abs() <= SINGULAR_DET {
        return Err(Error::SingularMatrix);
    }
    Ok(a.mobius_unchecked(x))
}

/// Unit vector e_θ = (cos θ, sin θ).
pub fn unit(theta: f64) -> [f64; 2] {
    let (s, c) = theta.sin_cos();
    [c, s]
}

/// log‖A·e_θ‖.
pub fn log_norm_growth(a: &Matrix2, theta: f64) -> f64 {
    let v = a.apply(unit(theta));
    v[0].hypot(v[1]).ln()
}

/// Angle in [0, π) of the line spanned by A·e_θ.
pub fn act_projective(a: &Matrix2, theta: f64) -> f64 {
    let v = a.apply(unit(theta));
    normalize_angle(v[1].atan2(v[0]))
}

/// Representative in [0, π) of a projective angle.
pub fn normalize_angle(theta: f64) -> f64 {
    let mut t = theta.rem_euclid(PI);
    if t >= PI {
        t -= PI;
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn mobius_examples() {
        let x = mobius(&Matrix2::IDENTITY, 0.37.into()).unwrap();
        assert_eq!(x, ExtendedReal::Finite(0.37));
        let x = mobius(&Matrix2::QUARTER_TURN, 2.0.into()).unwrap();
        assert_eq!(x, ExtendedReal::Finite(-0.5));
        let a = Matrix2::new(2.0, 1.0, 1.0, 1.0);
        assert_eq!(mobius(&a, ExtendedReal::Infinity).unwrap(), ExtendedReal::Finite(2.0));
    }

    #[test]
    fn mobius_rejects_singular() {
        let a = Matrix2::new(1.0, 2.0, 2.0, 4.0);
        assert_eq!(mobius(&a, 1.0.into()), Err(Error::SingularMatrix));
        assert_eq!(Error::SingularMatrix.to_string(), "singular matrix");
    }

    #[test]
    fn mobius_pole_maps_to_infinity() {
        // denominator x + 1 vanishes at x = −1
        let a = Matrix2::new(2.0, 1.0, 1.0, 1.0);
        assert_eq!(mobius(&a, (-1.0).into()).unwrap(), ExtendedReal::Infinity);
        // a21 = 0 keeps ∞ fixed
        assert_eq!(mobius(&Matrix2::diag(2.0, 0.5), ExtendedReal::Infinity).unwrap(), ExtendedReal::Infinity);
    }

    #[test]
    fn mul_examples() {
        let b = Matrix2::new(1.5, -2.0, 0.25, 3.0);
        assert_eq!(Matrix2::IDENTITY * b, b);
        assert_eq!(Matrix2::REFLECTION * Matrix2::REFLECTION, Matrix2::IDENTITY);
    }

    #[test]
    fn inverse_oracle() {
        // Independent inverse: solve A·X = I column by column with Cramer's rule.
        let a = Matrix2::new(1.3, 0.4, -2.1, 0.1);
        let d = a.a11 * a.a22 - a.a21 * a.a12;
        let col1 = [(1.0 * a.a22 - 0.0 * a.a12) / d, (a.a11 * 0.0 - a.a21 * 1.0) / d];
        let col2 = [(0.0 * a.a22 - 1.0 * a.a12) / d, (a.a11 * 1.0 - a.a21 * 0.0) / d];
        let inv = a.inverse().unwrap();
        assert!(close(inv.a11, col1[0], 1e-14) && close(inv.a21, col1[1], 1e-14));
        assert!(close(inv.a12, col2[0], 1e-14) && close(inv.a22, col2[1], 1e-14));
        assert!((a * inv).max_abs_diff(&Matrix2::IDENTITY) < 1e-12);
    }

    #[test]
    fn unimodular_checked() {
        assert!(Matrix2::unimodular(2.0, 0.0, 0.0, 0.5).is_ok());
        assert!(matches!(Matrix2::unimodular(2.0, 0.0, 0.0, 0.6), Err(Error::NotUnimodular { .. })));
        assert_eq!(Matrix2::try_new(f64::NAN, 0.0, 0.0, 1.0), Err(Error::NonFiniteEntry));
    }

    #[test]
    fn log_norm_growth_examples() {
        assert!(log_norm_growth(&Matrix2::IDENTITY, 1.1).abs() < 1e-15);
        let k: f64 = 1.7;
        assert!(close(log_norm_growth(&Matrix2::diag(k, 1.0 / k), 0.0), k.ln(), 1e-15));
        // ‖(2, 1/2)/√2‖ = √((4 + 1/4)/2)
        let expected = 0.5 * ((4.0 + 0.25) / 2.0f64).ln();
        let got = log_norm_growth(&Matrix2::diag(2.0, 0.5), PI / 4.0);
        assert!(close(got, expected, 1e-14));
        assert!(close(got, 0.376_886, 1e-6));
    }

    #[test]
    fn act_projective_examples() {
        assert!(close(act_projective(&Matrix2::IDENTITY, 0.8), 0.8, 1e-15));
        assert!(close(act_projective(&Matrix2::QUARTER_TURN, 0.0), PI / 2.0, 1e-15));
        // (0,1) ↦ (−1,0), projectively angle 0
        assert!(act_projective(&Matrix2::QUARTER_TURN, PI / 2.0) < 1e-15);
    }

    #[test]
    fn operator_norm_oracle() {
        // σ_max² is the largest eigenvalue of AᵀA.
        let a = Matrix2::new(1.0, 2.0, -0.5, 3.0);
        let (p, q, r) = (
            a.a11 * a.a11 + a.a21 * a.a21,
            a.a11 * a.a12 + a.a21 * a.a22,
            a.a12 * a.a12 + a.a22 * a.a22,
        );
        let lmax = 0.5 * (p + r) + (0.25 * (p - r) * (p - r) + q * q).sqrt();
        assert!(close(a.operator_norm(), lmax.sqrt(), 1e-13));
    }

    #[test]
    fn normalize_angle_range() {
        for t in [-PI, -0.1, 0.0, PI - 1e-17, PI, 2.5 * PI] {
            let n = normalize_angle(t);
            assert!((0.0..PI).contains(&n), "{t} -> {n}");
        }
    }
}
