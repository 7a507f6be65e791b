//! Points of the complex projective line and the chordal metric.
//!
//! A point `[z0 : z1]` is stored as its unit-norm representative whose
//! coordinate of largest modulus is real and positive. The affine chart used
//! throughout is `z = z0 / z1`, so `[1 : 0]` is the point at infinity.
//!
//! The chordal distance `|z0 w1 - z1 w0|` of unit representatives has diameter
//! one and agrees with `|z - w| / sqrt((1 + |z|^2)(1 + |w|^2))` in the chart.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::de::{self, Deserializer};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this Euclidean norm a coordinate pair is treated as the zero vector.
pub const ZERO_VECTOR_TOL: f64 = 1e-300;

const UNIT_TOL: f64 = 1e-14;
const TIE_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectivePoint {
    z0: Complex64,
    z1: Complex64,
}

impl ProjectivePoint {
    pub const INFINITY: ProjectivePoint = ProjectivePoint {
        z0: Complex64::new(1.0, 0.0),
        z1: Complex64::new(0.0, 0.0),
    };

    pub const ZERO: ProjectivePoint = ProjectivePoint {
        z0: Complex64::new(0.0, 0.0),
        z1: Complex64::new(1.0, 0.0),
    };

    /// Canonical representative of `[z0 : z1]`.
    pub fn normalize(z0: Complex64, z1: Complex64) -> Result<Self> {
        if !(z0.is_finite() && z1.is_finite()) {
            return Err(Error::InvalidArgument("non-finite coordinate".into()));
        }
        // Scale first so that |z|^2 cannot overflow or underflow.
        let scale = z0.re.abs().max(z0.im.abs()).max(z1.re.abs()).max(z1.im.abs());
        if scale < ZERO_VECTOR_TOL {
            return Err(Error::ZeroVector);
        }
        if is_canonical(z0, z1) {
            return Ok(ProjectivePoint { z0, z1 });
        }
        let (a, b) = (z0 / scale, z1 / scale);
        let norm = (a.norm_sqr() + b.norm_sqr()).sqrt();
        let (a, b) = (a / norm, b / norm);
        let first_leads = a.norm_sqr() >= b.norm_sqr();
        let lead = if first_leads { a } else { b };
        let phase = lead.conj() / lead.norm_sqr().sqrt();
        // The leading coordinate becomes real up to rounding; make it exactly so.
        let (a, b) = if first_leads {
            (Complex64::new(a.norm_sqr().sqrt(), 0.0), b * phase)
        } else {
            (a * phase, Complex64::new(b.norm_sqr().sqrt(), 0.0))
        };
        Ok(ProjectivePoint { z0: a, z1: b })
    }

    /// The point `[z : 1]`.
    pub fn affine(z: Complex64) -> Result<Self> {
        Self::normalize(z, Complex64::new(1.0, 0.0))
    }

    pub fn from_affine_parts(re: f64, im: f64) -> Result<Self> {
        Self::affine(Complex64::new(re, im))
    }

    pub fn z0(&self) -> Complex64 {
        self.z0
    }

    pub fn z1(&self) -> Complex64 {
        self.z1
    }

    pub fn coords(&self) -> (Complex64, Complex64) {
        (self.z0, self.z1)
    }

    /// Affine coordinate `z0 / z1`, or `None` at infinity.
    pub fn to_affine(&self) -> Option<Complex64> {
        if self.z1.norm_sqr() == 0.0 {
            None
        } else {
            Some(self.z0 / self.z1)
        }
    }

    pub fn is_infinity(&self) -> bool {
        self.z1.norm_sqr() == 0.0
    }

    pub fn dist(&self, other: &ProjectivePoint) -> f64 {
        chordal_dist(self, other)
    }

    /// Equality up to a chordal tolerance.
    pub fn approx_eq(&self, other: &ProjectivePoint, tol: f64) -> bool {
        chordal_dist(self, other) <= tol
    }

    /// The antipodal point `[-conj(z1) : conj(z0)]` (chordal distance 1).
    pub fn antipode(&self) -> ProjectivePoint {
        ProjectivePoint::normalize(-self.z1.conj(), self.z0.conj())
            .expect("antipode of a unit vector is a unit vector")
    }
}

fn is_canonical(z0: Complex64, z1: Complex64) -> bool {
    let n0 = z0.norm_sqr();
    let n1 = z1.norm_sqr();
    if ((n0 + n1) - 1.0).abs() > UNIT_TOL {
        return false;
    }
    let real_pos = |c: Complex64| c.im == 0.0 && c.re > 0.0;
    if (n0 - n1).abs() <= TIE_TOL {
        real_pos(z0) || real_pos(z1)
    } else if n0 > n1 {
        real_pos(z0)
    } else {
        real_pos(z1)
    }
}

/// Chordal distance `|z0 w1 - z1 w0|`, clamped to `[0, 1]`.
pub fn chordal_dist(p: &ProjectivePoint, q: &ProjectivePoint) -> f64 {
    (p.z0 * q.z1 - p.z1 * q.z0).norm_sqr().sqrt().min(1.0)
}

/// Points uniformly spread over the sphere (Fibonacci lattice), pushed to the
/// projective line through the stereographic identification.
pub fn sphere_grid(count: usize) -> Vec<ProjectivePoint> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..count)
        .map(|k| {
            let cos_polar = 1.0 - (2.0 * k as f64 + 1.0) / count as f64;
            let polar = cos_polar.clamp(-1.0, 1.0).acos();
            point_from_sphere(polar, golden * k as f64)
        })
        .collect()
}

/// `[cos(polar/2) e^{i azimuth} : sin(polar/2)]`; polar angle 0 is infinity.
pub fn point_from_sphere(polar: f64, azimuth: f64) -> ProjectivePoint {
    let h = 0.5 * polar;
    ProjectivePoint::normalize(
        Complex64::from_polar(h.cos(), azimuth),
        Complex64::new(h.sin(), 0.0),
    )
    .unwrap_or(ProjectivePoint::INFINITY)
}

/// Polar and azimuthal angles of a point (inverse of [`point_from_sphere`]).
pub fn sphere_angles(p: &ProjectivePoint) -> (f64, f64) {
    let (a, b) = (p.z0.norm_sqr().sqrt(), p.z1.norm_sqr().sqrt());
    let polar = 2.0 * b.atan2(a);
    let azimuth = (p.z0 * p.z1.conj()).arg();
    (polar, azimuth)
}

impl fmt::Display for ProjectivePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.to_affine() {
            Some(z) if self.z1.norm() >= 1e-8 => write!(f, "{}{:+}i", z.re, z.im),
            _ => write!(f, "[{}{:+}i : {}{:+}i]", self.z0.re, self.z0.im, self.z1.re, self.z1.im),
        }
    }
}

/// Parses `a+bi` style affine shorthand, plus `inf` / `∞` for `[1 : 0]`.
impl FromStr for ProjectivePoint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        match t.as_str() {
            "inf" | "infinity" | "∞" => return Ok(ProjectivePoint::INFINITY),
            "" => return Err(Error::Parse("empty point literal".into())),
            _ => {}
        }
        let z = parse_complex(&t)?;
        ProjectivePoint::affine(z)
    }
}

/// Complex literal `a`, `bi`, `a+bi`, `a-bi`; `i` alone means `1i`.
pub fn parse_complex(s: &str) -> Result<Complex64> {
    let t: String = s.chars().filter(|c| !c.is_whitespace()).collect();
    let bad = || Error::Parse(format!("not a complex literal: {s:?}"));
    if t.is_empty() {
        return Err(bad());
    }
    if let Some(body) = t.strip_suffix('i').or_else(|| t.strip_suffix('j')) {
        // Split at the last sign that is not part of an exponent.
        let bytes = body.as_bytes();
        let mut split = None;
        for k in (1..bytes.len()).rev() {
            if (bytes[k] == b'+' || bytes[k] == b'-') && !matches!(bytes[k - 1], b'e' | b'E') {
                split = Some(k);
                break;
            }
        }
        let imag = |txt: &str| -> Result<f64> {
            match txt {
                "" | "+" => Ok(1.0),
                "-" => Ok(-1.0),
                _ => txt.parse::<f64>().map_err(|_| bad()),
            }
        };
        match split {
            Some(k) => {
                let re = body[..k].parse::<f64>().map_err(|_| bad())?;
                Ok(Complex64::new(re, imag(&body[k..])?))
            }
            None => Ok(Complex64::new(0.0, imag(body)?)),
        }
    } else {
        Ok(Complex64::new(t.parse::<f64>().map_err(|_| bad())?, 0.0))
    }
}

impl Serialize for ProjectivePoint {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        [[self.z0.re, self.z0.im], [self.z1.re, self.z1.im]].serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ProjectivePoint {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Pair([[f64; 2]; 2]),
            Text(String),
        }
        match Repr::deserialize(deserializer)? {
            Repr::Pair([[a, b], [c, d]]) => {
                ProjectivePoint::normalize(Complex64::new(a, b), Complex64::new(c, d))
                    .map_err(de::Error::custom)
            }
            Repr::Text(s) => s.parse().map_err(de::Error::custom),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn normalize_examples() {
        let p = ProjectivePoint::normalize(c(2.0, 0.0), c(0.0, 0.0)).unwrap();
        assert_eq!(p, ProjectivePoint::INFINITY);

        let p = ProjectivePoint::normalize(c(1.0, 0.0), c(1.0, 0.0)).unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert!((p.z0() - c(r, 0.0)).norm() < 1e-15);
        assert!((p.z1() - c(r, 0.0)).norm() < 1e-15);

        // 3+4i has modulus 5; the phase convention rotates it onto the positive axis.
        let p = ProjectivePoint::normalize(c(3.0, 4.0), c(0.0, 0.0)).unwrap();
        assert!((p.z0() - c(1.0, 0.0)).norm() < 1e-15);
        assert_eq!(p.z1(), c(0.0, 0.0));
    }

    #[test]
    fn zero_vector_rejected() {
        assert_eq!(ProjectivePoint::normalize(c(0.0, 0.0), c(0.0, 0.0)), Err(Error::ZeroVector));
        assert_eq!(ProjectivePoint::normalize(c(1e-301, 0.0), c(0.0, 0.0)), Err(Error::ZeroVector));
    }

    #[test]
    fn chordal_examples() {
        let inf = ProjectivePoint::INFINITY;
        let zero = ProjectivePoint::ZERO;
        assert_eq!(chordal_dist(&inf, &zero), 1.0);
        let p = ProjectivePoint::from_affine_parts(0.3, -0.7).unwrap();
        assert_eq!(chordal_dist(&p, &p), 0.0);
        let one = ProjectivePoint::from_affine_parts(1.0, 0.0).unwrap();
        let minus_one = ProjectivePoint::from_affine_parts(-1.0, 0.0).unwrap();
        assert!((chordal_dist(&one, &minus_one) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn chordal_matches_affine_formula() {
        let z = c(0.4, 1.3);
        let w = c(-2.0, 0.25);
        let expected = (z - w).norm() / ((1.0 + z.norm_sqr()) * (1.0 + w.norm_sqr())).sqrt();
        let d = chordal_dist(&ProjectivePoint::affine(z).unwrap(), &ProjectivePoint::affine(w).unwrap());
        assert!((d - expected).abs() < 1e-15);
    }

    #[test]
    fn parse_shorthand() {
        assert_eq!(parse_complex("0.4+0.7i").unwrap(), c(0.4, 0.7));
        assert_eq!(parse_complex("-i").unwrap(), c(0.0, -1.0));
        assert_eq!(parse_complex("2").unwrap(), c(2.0, 0.0));
        assert_eq!(parse_complex("1e-3-2.5i").unwrap(), c(1e-3, -2.5));
        assert_eq!(parse_complex("1.5e+2i").unwrap(), c(0.0, 150.0));
        assert!(parse_complex("abc").is_err());
        let p: ProjectivePoint = "inf".parse().unwrap();
        assert!(p.is_infinity());
        let p: ProjectivePoint = "0.5+0.3i".parse().unwrap();
        assert!((p.to_affine().unwrap() - c(0.5, 0.3)).norm() < 1e-15);
    }

    #[test]
    fn json_pairs_round_trip() {
        let p = ProjectivePoint::from_affine_parts(0.25, -1.5).unwrap();
        let s = serde_json::to_string(&p).unwrap();
        let q: ProjectivePoint = serde_json::from_str(&s).unwrap();
        assert_eq!(p, q);
        let q: ProjectivePoint = serde_json::from_str("\"0.25-1.5i\"").unwrap();
        assert!(p.approx_eq(&q, 1e-15));
    }

    #[test]
    fn sphere_grid_is_balanced() {
        let grid = sphere_grid(2000);
        let inside = grid.iter().filter(|p| p.z1().norm() > p.z0().norm()).count();
        assert!((inside as i64 - 1000).abs() <= 2);
        let p = point_from_sphere(1.1, -0.4);
        let (polar, az) = sphere_angles(&p);
        assert!((polar - 1.1).abs() < 1e-12 && (az + 0.4).abs() < 1e-12);
    }

    fn arb_point() -> impl Strategy<Value = ProjectivePoint> {
        (-1e3..1e3f64, -1e3..1e3f64, -1e3..1e3f64, -1e3..1e3f64)
            .prop_filter("nonzero", |(a, b, c, d)| a.abs() + b.abs() + c.abs() + d.abs() > 1e-6)
            .prop_map(|(a, b, cc, d)| ProjectivePoint::normalize(c(a, b), c(cc, d)).unwrap())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]

        #[test]
        fn normalize_is_idempotent(p in arb_point()) {
            let q = ProjectivePoint::normalize(p.z0(), p.z1()).unwrap();
            prop_assert_eq!(p.z0().re.to_bits(), q.z0().re.to_bits());
            prop_assert_eq!(p.z0().im.to_bits(), q.z0().im.to_bits());
            prop_assert_eq!(p.z1().re.to_bits(), q.z1().re.to_bits());
            prop_assert_eq!(p.z1().im.to_bits(), q.z1().im.to_bits());
            prop_assert!((p.z0().norm_sqr() + p.z1().norm_sqr() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn scaling_invariance(p in arb_point(), r in 1e-3..1e3f64, t in 0.0..6.3f64) {
            let s = Complex64::from_polar(r, t);
            let q = ProjectivePoint::normalize(p.z0() * s, p.z1() * s).unwrap();
            prop_assert!(chordal_dist(&p, &q) < 1e-14);
            prop_assert!((p.z0() - q.z0()).norm() < 1e-12 || (p.z0().norm() - p.z1().norm()).abs() < 1e-9);
        }

        #[test]
        fn metric_axioms(p in arb_point(), q in arb_point(), r in arb_point()) {
            let pq = chordal_dist(&p, &q);
            prop_assert!((0.0..=1.0).contains(&pq));
            prop_assert_eq!(pq.to_bits(), chordal_dist(&q, &p).to_bits());
            prop_assert!(pq <= chordal_dist(&p, &r) + chordal_dist(&r, &q) + 1e-9);
        }
    }
}
