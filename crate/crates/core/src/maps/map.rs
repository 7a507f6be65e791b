use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;

use super::form::{BinaryForm, MAX_DEGREE};
use super::resultant::resultant;
use crate::error::{Error, Result};
use crate::geometry::{parse_complex, ProjectivePoint};

/// Maps whose distance proxy falls below this are rejected.
pub const DEGENERACY_TOL: f64 = 1e-12;

/// Lifts smaller than this at a unit point count as a common zero of P and Q.
pub const IMAGE_TOL: f64 = 1e-150;

/// Euclidean norm of the stacked coefficient vector after normalization.
///
/// With this scale the power map lifts to exactly `(z0^d, z1^d)`.
pub const COEFF_NORM: f64 = std::f64::consts::SQRT_2;

/// A rational map of degree `d` given by two binary forms `[P : Q]`.
#[derive(Clone, Debug, PartialEq)]
pub struct HomogeneousMap {
    p: BinaryForm,
    q: BinaryForm,
    dist: f64,
}

impl HomogeneousMap {
    /// Builds a map from raw coefficient vectors (index `i` multiplies `z0^i z1^(d-i)`).
    pub fn new(p: Vec<Complex64>, q: Vec<Complex64>) -> Result<Self> {
        if p.len() != q.len() {
            return Err(Error::InvalidMap(format!(
                "coefficient vectors have lengths {} and {}",
                p.len(),
                q.len()
            )));
        }
        let d = p.len().saturating_sub(1);
        if !(2..=MAX_DEGREE).contains(&d) {
            return Err(Error::InvalidMap(format!("degree {d} outside 2..={MAX_DEGREE}")));
        }
        if p.iter().chain(q.iter()).any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::InvalidMap("non-finite coefficient".into()));
        }
        let norm = p.iter().chain(q.iter()).map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::InvalidMap("all coefficients vanish".into()));
        }
        let s = COEFF_NORM / norm;
        let p = BinaryForm::new(p.into_iter().map(|c| c * s).collect());
        let q = BinaryForm::new(q.into_iter().map(|c| c * s).collect());
        let dist = resultant(&p, &q).norm().powf(1.0 / d as f64).min(1.0);
        if !(dist >= DEGENERACY_TOL) {
            return Err(Error::DegenerateMap { dist });
        }
        Ok(HomogeneousMap { p, q, dist })
    }

    /// `z^d`.
    pub fn power(d: usize) -> Result<Self> {
        if d < 2 {
            return Err(Error::InvalidMap(format!("degree {d} outside 2..={MAX_DEGREE}")));
        }
        Self::new(
            BinaryForm::monomial_z0(d).coeffs().to_vec(),
            BinaryForm::monomial_z1(d).coeffs().to_vec(),
        )
    }

    /// `z^d + c`.
    pub fn power_plus(d: usize, c: Complex64) -> Result<Self> {
        if d < 2 {
            return Err(Error::InvalidMap(format!("degree {d} outside 2..={MAX_DEGREE}")));
        }
        let mut p = BinaryForm::monomial_z0(d).coeffs().to_vec();
        p[0] = c;
        Self::new(p, BinaryForm::monomial_z1(d).coeffs().to_vec())
    }

    /// `(z^d + a) / (z^d + b)`.
    pub fn power_quotient(d: usize, a: Complex64, b: Complex64) -> Result<Self> {
        if d < 2 {
            return Err(Error::InvalidMap(format!("degree {d} outside 2..={MAX_DEGREE}")));
        }
        let mut p = BinaryForm::monomial_z0(d).coeffs().to_vec();
        let mut q = p.clone();
        p[0] = a;
        q[0] = b;
        Self::new(p, q)
    }

    pub fn degree(&self) -> usize {
        self.p.degree()
    }

    pub fn p(&self) -> &BinaryForm {
        &self.p
    }

    pub fn q(&self) -> &BinaryForm {
        &self.q
    }

    /// Stacked normalized coefficients `(P, Q)`.
    pub fn coefficients(&self) -> Vec<Complex64> {
        self.p.coeffs().iter().chain(self.q.coeffs()).copied().collect()
    }

    /// `(P(p), Q(p))` at the unit representative of `p`.
    pub fn lift(&self, p: &ProjectivePoint) -> (Complex64, Complex64) {
        let (z0, z1) = p.coords();
        (self.p.eval(z0, z1), self.q.eval(z0, z1))
    }

    pub fn evaluate(&self, p: &ProjectivePoint) -> Result<ProjectivePoint> {
        let (w0, w1) = self.lift(p);
        let norm = (w0.norm_sqr() + w1.norm_sqr()).sqrt();
        if !(norm >= IMAGE_TOL) {
            return Err(Error::DegenerateImage { norm });
        }
        ProjectivePoint::normalize(w0, w1).map_err(|_| Error::DegenerateImage { norm })
    }

    /// Norm of the differential at `p` in the chordal metric.
    pub fn derivative_norm(&self, p: &ProjectivePoint) -> f64 {
        let (z0, z1) = p.coords();
        let w0 = self.p.eval(z0, z1);
        let w1 = self.q.eval(z0, z1);
        let wn = w0.norm_sqr() + w1.norm_sqr();
        if wn == 0.0 {
            return 0.0;
        }
        // unit tangent vector orthogonal to the representative
        let v0 = -z1.conj();
        let v1 = z0.conj();
        let dp0 = self.p.d_z0().eval(z0, z1);
        let dp1 = self.p.d_z1().eval(z0, z1);
        let dq0 = self.q.d_z0().eval(z0, z1);
        let dq1 = self.q.d_z1().eval(z0, z1);
        let dw0 = dp0 * v0 + dp1 * v1;
        let dw1 = dq0 * v0 + dq1 * v1;
        (w0 * dw1 - w1 * dw0).norm() / wn
    }

    /// Sylvester resultant of the normalized forms.
    pub fn resultant(&self) -> Complex64 {
        resultant(&self.p, &self.q)
    }

    /// `min(1, |Res|^(1/d))` on the normalized coefficients.
    pub fn dist_to_degenerate(&self) -> f64 {
        self.dist
    }

    /// The same map with coefficients multiplied by `s` (renormalized).
    pub fn rescaled(&self, s: Complex64) -> Result<Self> {
        Self::new(self.p.scaled(s).coeffs().to_vec(), self.q.scaled(s).coeffs().to_vec())
    }
}

impl fmt::Display for HomogeneousMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let show = |c: &[Complex64]| {
            c.iter().map(|z| format!("{}{:+}i", z.re, z.im)).collect::<Vec<_>>().join(", ")
        };
        write!(f, "[P: {}; Q: {}]", show(self.p.coeffs()), show(self.q.coeffs()))
    }
}

/// Parses the affine shorthands `z^d`, `z^d+c` and `(z^d+a)/(z^d+b)`.
impl FromStr for HomogeneousMap {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let compact: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        let bad = || Error::Parse(format!("unrecognized map literal {s:?}"));
        if let Some((num, den)) = compact.split_once(")/(") {
            let num = num.strip_prefix('(').ok_or_else(bad)?;
            let den = den.strip_suffix(')').ok_or_else(bad)?;
            let (dn, a) = parse_power_term(num).ok_or_else(bad)?;
            let (dd, b) = parse_power_term(den).ok_or_else(bad)?;
            if dn != dd {
                return Err(Error::Parse(format!("numerator and denominator degrees differ in {s:?}")));
            }
            return HomogeneousMap::power_quotient(dn, a?, b?);
        }
        let (d, c) = parse_power_term(&compact).ok_or_else(bad)?;
        HomogeneousMap::power_plus(d, c?)
    }
}

// "z^d" or "z^d+c" / "z^d-c"; the constant may be parenthesized.
fn parse_power_term(s: &str) -> Option<(usize, Result<Complex64>)> {
    let rest = s.strip_prefix("z^")?;
    let digits = rest.chars().take_while(|c| c.is_ascii_digit()).count();
    if digits == 0 {
        return None;
    }
    let d: usize = rest[..digits].parse().ok()?;
    let tail = &rest[digits..];
    if tail.is_empty() {
        return Some((d, Ok(Complex64::new(0.0, 0.0))));
    }
    let (sign, body) = match tail.as_bytes()[0] {
        b'+' => (1.0, &tail[1..]),
        b'-' => (-1.0, &tail[1..]),
        _ => return None,
    };
    let body = body.strip_prefix('(').and_then(|b| b.strip_suffix(')')).unwrap_or(body);
    Some((d, parse_complex(body).map(|c| c * sign)))
}
