//! Real observables on the sphere tagged with a regularity class.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{sphere_grid, ProjectivePoint};
use crate::seeding::{self, domain};

/// Chordal distance below which a DSH observable refuses to evaluate.
pub const POLE_GUARD: f64 = 1e-12;

/// Grid used for L¹ quadrature and sup-norm surrogates.
const SURROGATE_GRID: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum Regularity {
    Smooth,
    Holder(f64),
    /// `log ch(., a) - log ch(., b)`.
    Dsh { a: ProjectivePoint, b: ProjectivePoint },
}

type Evaluator = Arc<dyn Fn(&ProjectivePoint) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Kind {
    Constant(f64),
    Harmonic(u32),
    Holder { alpha: f64, anchor: ProjectivePoint },
    Dsh { a: ProjectivePoint, b: ProjectivePoint },
    Scaled(f64, Box<Observable>),
    Sum(Vec<Observable>),
    Power(Box<Observable>, u32),
    Custom(Evaluator),
}

/// A real function on the sphere with a regularity class and a norm surrogate.
#[derive(Clone)]
pub struct Observable {
    name: String,
    kind: Kind,
    class: Regularity,
    norm_surrogate: f64,
}

impl fmt::Debug for Observable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Observable")
            .field("name", &self.name)
            .field("class", &self.class)
            .field("norm_surrogate", &self.norm_surrogate)
            .finish()
    }
}

impl fmt::Display for Observable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

fn log_chordal(p: &ProjectivePoint, a: &ProjectivePoint) -> Result<f64> {
    let r = p.dist(a);
    if r < POLE_GUARD {
        return Err(Error::SingularHit { distance: r });
    }
    Ok(r.ln())
}

impl Observable {
    pub fn constant(c: f64) -> Self {
        Observable { name: format!("constant({c})"), kind: Kind::Constant(c), class: Regularity::Smooth, norm_surrogate: c.abs() }
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    /// `2 Re((z0 conj z1)^k)` on unit representatives; `2^(1-k) cos(k theta)` on the unit circle.
    pub fn harmonic(k: u32) -> Self {
        let mut o = Observable {
            name: format!("harmonic({k})"),
            kind: Kind::Harmonic(k),
            class: Regularity::Smooth,
            norm_surrogate: 0.0,
        };
        o.norm_surrogate = o.sup_norm() + o.holder_constant(1.0);
        o
    }

    /// `2^(k-1) harmonic(k)`, equal to `cos(k theta)` on the unit circle.
    pub fn circle_cosine(k: u32) -> Self {
        let mut o = Self::harmonic(k).scaled(2f64.powi(k as i32 - 1));
        o.name = format!("cos({k})");
        o
    }

    /// `ch(., anchor)^alpha`.
    pub fn holder(alpha: f64, anchor: ProjectivePoint) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::InvalidSpec(format!("Hölder exponent {alpha} outside (0, 1]")));
        }
        let mut o = Observable {
            name: format!("holder({alpha}, {anchor})"),
            kind: Kind::Holder { alpha, anchor },
            class: Regularity::Holder(alpha),
            norm_surrogate: 0.0,
        };
        o.norm_surrogate = o.sup_norm() + o.holder_constant(alpha);
        Ok(o)
    }

    /// `log ch(., a) - log ch(., b)`.
    pub fn dsh(a: ProjectivePoint, b: ProjectivePoint) -> Result<Self> {
        if a.dist(&b) < POLE_GUARD {
            return Err(Error::InvalidSpec("DSH poles must be distinct".into()));
        }
        let mut o = Observable { name: format!("dsh({a}, {b})"), kind: Kind::Dsh { a, b }, class: Regularity::Dsh { a, b }, norm_surrogate: 0.0 };
        o.norm_surrogate = o.l1_fubini_study() + 1.0;
        Ok(o)
    }

    /// A user-supplied function with declared class and surrogate.
    pub fn custom<F>(name: &str, class: Regularity, norm_surrogate: f64, f: F) -> Self
    where
        F: Fn(&ProjectivePoint) -> f64 + Send + Sync + 'static,
    {
        Observable { name: name.to_string(), kind: Kind::Custom(Arc::new(f)), class, norm_surrogate }
    }

    pub fn scaled(self, c: f64) -> Self {
        let norm_surrogate = c.abs() * self.norm_surrogate;
        Observable { name: format!("{c}*{}", self.name), class: self.class, norm_surrogate, kind: Kind::Scaled(c, Box::new(self)) }
    }

    pub fn sum(terms: Vec<Observable>) -> Self {
        let name = terms.iter().map(|t| t.name.clone()).collect::<Vec<_>>().join(" + ");
        let class = terms.iter().fold(Regularity::Smooth, |acc, t| rougher(acc, t.class));
        let norm_surrogate = terms.iter().map(|t| t.norm_surrogate).sum();
        Observable { name, class, norm_surrogate, kind: Kind::Sum(terms) }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn class(&self) -> Regularity {
        self.class
    }

    pub fn norm_surrogate(&self) -> f64 {
        self.norm_surrogate
    }

    /// True for the constant family (including sums and multiples of constants).
    pub fn constant_value(&self) -> Option<f64> {
        match &self.kind {
            Kind::Constant(c) => Some(*c),
            Kind::Scaled(c, inner) => inner.constant_value().map(|v| c * v),
            Kind::Sum(ts) => ts.iter().map(|t| t.constant_value()).sum(),
            _ => None,
        }
    }

    pub fn eval(&self, p: &ProjectivePoint) -> Result<f64> {
        match &self.kind {
            Kind::Constant(c) => Ok(*c),
            Kind::Harmonic(k) => {
                let (z0, z1) = p.coords();
                Ok(2.0 * (z0 * z1.conj()).powu(*k).re)
            }
            Kind::Holder { alpha, anchor } => Ok(p.dist(anchor).powf(*alpha)),
            Kind::Dsh { a, b } => Ok(log_chordal(p, a)? - log_chordal(p, b)?),
            Kind::Scaled(c, inner) => Ok(c * inner.eval(p)?),
            Kind::Sum(ts) => {
                let mut acc = 0.0;
                for t in ts {
                    acc += t.eval(p)?;
                }
                Ok(acc)
            }
            Kind::Power(inner, r) => Ok(inner.eval(p)?.powi(*r as i32)),
            Kind::Custom(f) => Ok(f(p)),
        }
    }

    /// `psi^r`, same class.
    pub fn power(&self, r: u32) -> Observable {
        if r == 1 {
            return self.clone();
        }
        let mut o = Observable {
            name: format!("({})^{r}", self.name),
            kind: Kind::Power(Box::new(self.clone()), r),
            class: self.class,
            norm_surrogate: 0.0,
        };
        o.norm_surrogate = o.l1_fubini_study() + self.norm_surrogate.powi(r as i32);
        o
    }

    fn sup_norm(&self) -> f64 {
        sphere_grid(SURROGATE_GRID).iter().filter_map(|p| self.eval(p).ok()).map(f64::abs).fold(0.0, f64::max)
    }

    /// Mean of `|psi|` against normalized area, by equal-weight grid quadrature.
    pub fn l1_fubini_study(&self) -> f64 {
        let pts = sphere_grid(SURROGATE_GRID);
        let vals: Vec<f64> = pts.iter().filter_map(|p| self.eval(p).ok()).map(f64::abs).collect();
        vals.iter().sum::<f64>() / vals.len().max(1) as f64
    }

    /// Pair-sampled estimate of `sup |psi(p) - psi(q)| / dist(p, q)^alpha`.
    fn holder_constant(&self, alpha: f64) -> f64 {
        let mut rng = seeding::stream(0, domain::HOLDER, 0x0b5);
        let mut best: f64 = 0.0;
        for &r in &[1e-4, 1e-3, 1e-2, 1e-1, 0.5] {
            for _ in 0..400 {
                let p = crate::green::random_sphere_point(&mut rng);
                let q = crate::green::point_at_distance(&p, r, &mut rng);
                if let (Ok(a), Ok(b)) = (self.eval(&p), self.eval(&q)) {
                    best = best.max((a - b).abs() / r.powf(alpha));
                }
            }
        }
        best
    }
}

fn rougher(a: Regularity, b: Regularity) -> Regularity {
    match (a, b) {
        (Regularity::Dsh { .. }, _) => a,
        (_, Regularity::Dsh { .. }) => b,
        (Regularity::Holder(x), Regularity::Holder(y)) => Regularity::Holder(x.min(y)),
        (Regularity::Holder(_), Regularity::Smooth) => a,
        (Regularity::Smooth, _) => b,
    }
}

/// Parses an observable spec: a `+`-separated sum of optionally scaled terms
/// `c*family(args)` where family is one of `harmonic(k)`, `cos(k)`,
/// `holder(alpha, a)`, `dsh(a, b)`, `constant(c)`, `zero`, `one`.
pub fn make_observable(spec: &str) -> Result<Observable> {
    let s: String = spec.chars().filter(|c| !c.is_whitespace()).collect();
    if s.is_empty() {
        return Err(Error::InvalidSpec("empty observable spec".into()));
    }
    let mut terms = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, ch) in s.char_indices() {
        match ch {
            '(' => depth += 1,
            ')' => depth -= 1,
            '+' if depth == 0 && i > start => {
                terms.push(parse_term(&s[start..i])?);
                start = i + 1;
            }
            _ => {}
        }
        if depth < 0 {
            return Err(Error::InvalidSpec(format!("unbalanced parentheses in {spec:?}")));
        }
    }
    if depth != 0 {
        return Err(Error::InvalidSpec(format!("unbalanced parentheses in {spec:?}")));
    }
    terms.push(parse_term(&s[start..])?);
    Ok(if terms.len() == 1 { terms.pop().expect("one term") } else { Observable::sum(terms) })
}

fn parse_term(t: &str) -> Result<Observable> {
    let bad = || Error::InvalidSpec(format!("unrecognized observable term {t:?}"));
    if let Some((c, rest)) = t.split_once('*') {
        if !c.contains('(') {
            let c: f64 = c.parse().map_err(|_| bad())?;
            return Ok(parse_term(rest)?.scaled(c));
        }
    }
    match t {
        "zero" => return Ok(Observable::zero()),
        "one" => return Ok(Observable::constant(1.0)),
        _ => {}
    }
    let open = t.find('(').ok_or_else(bad)?;
    let body = t[open + 1..].strip_suffix(')').ok_or_else(bad)?;
    let args: Vec<&str> = split_args(body);
    let point = |s: &str| s.parse::<ProjectivePoint>().map_err(|e| Error::InvalidSpec(e.to_string()));
    match (&t[..open], args.as_slice()) {
        ("harmonic", [k]) => Ok(Observable::harmonic(parse_order(k)?)),
        ("cos", [k]) => Ok(Observable::circle_cosine(parse_order(k)?)),
        ("holder", [a, p]) => Observable::holder(a.parse().map_err(|_| bad())?, point(p)?),
        ("dsh", [a, b]) => Observable::dsh(point(a)?, point(b)?),
        ("constant", [c]) => Ok(Observable::constant(c.parse().map_err(|_| bad())?)),
        _ => Err(bad()),
    }
}

fn parse_order(k: &str) -> Result<u32> {
    match k.parse::<u32>() {
        Ok(k) if k >= 1 => Ok(k),
        _ => Err(Error::InvalidSpec(format!("harmonic order {k:?} must be a positive integer"))),
    }
}

fn split_args(body: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut depth = 0;
    let mut start = 0;
    for (i, ch) in body.char_indices() {
        match ch {
            '(' => depth += 1,
            ')' => depth -= 1,
            ',' if depth == 0 => {
                out.push(&body[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    out.push(&body[start..]);
    out
}

/// Unit-circle point `e^{i theta}`.
pub fn circle_point(theta: f64) -> ProjectivePoint {
    ProjectivePoint::affine(Complex64::from_polar(1.0, theta)).expect("finite affine point")
}
