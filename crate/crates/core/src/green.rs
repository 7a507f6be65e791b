//! The Green function as the telescoping series `sum_j d^-j u_j(F_j(p))`.
//!
//! `u_j(p) = (1/2d) log |F̂_j(p̂)|^2` for the unit representative `p̂` and the
//! normalized lift `F̂_j`. For the power map this gives exactly
//! `g(p) = max(log|z0|, log|z1|) - (1/2) log(|z0|^2 + |z1|^2)`.

use std::sync::Mutex;

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fit::linear_fit;
use crate::geometry::{sphere_grid, ProjectivePoint};
use crate::maps::{topological_lyapunov, HomogeneousMap, MapSequence, IMAGE_TOL};
use crate::seeding::{self, domain};

/// Grid used for the sup-norm of each potential.
pub const SUP_GRID: usize = 10_000;

/// Inflation applied to grid sup-norms in tail bounds.
pub const SUP_INFLATION: f64 = 1.05;

/// Measured terms carried in the tail window before geometric extrapolation.
const TAIL_WINDOW: usize = 8;

/// Truncation depth after which the series is declared non-convergent.
const MAX_DEPTH: usize = 2000;

/// `u(p) = (1/2d) log |F̂(p̂)|^2`.
pub fn potential_step(f: &HomogeneousMap, p: &ProjectivePoint) -> Result<f64> {
    let (w0, w1) = f.lift(p);
    let n2 = w0.norm_sqr() + w1.norm_sqr();
    if !(n2.sqrt() >= IMAGE_TOL) {
        return Err(Error::DegenerateImage { norm: n2.sqrt() });
    }
    Ok(n2.ln() / (2.0 * f.degree() as f64))
}

/// `sup |u|` over a Fibonacci grid of `grid` points.
pub fn potential_sup(f: &HomogeneousMap, grid: usize) -> Result<f64> {
    let pts = sphere_grid(grid);
    let vals = pts.par_iter().map(|p| potential_step(f, p).map(f64::abs)).collect::<Result<Vec<_>>>()?;
    Ok(vals.into_iter().fold(0.0, f64::max))
}

/// Closed form of the Green function of any power map `z^d`.
pub fn power_map_green(p: &ProjectivePoint) -> f64 {
    let (z0, z1) = p.coords();
    let m = z0.norm().max(z1.norm());
    m.ln() - 0.5 * (z0.norm_sqr() + z1.norm_sqr()).ln()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GreenValue {
    pub value: f64,
    /// Number of series terms summed.
    pub depth: usize,
    /// Upper estimate of `|g - g_depth|`.
    pub tail_bound: f64,
}

/// Evaluates the Green function of a sequence, caching the per-index sup-norms.
#[derive(Debug)]
pub struct GreenFunction<'a> {
    seq: &'a MapSequence,
    grid: usize,
    sups: Mutex<Vec<f64>>,
}

impl<'a> GreenFunction<'a> {
    pub fn new(seq: &'a MapSequence) -> Self {
        Self::with_grid(seq, SUP_GRID)
    }

    pub fn with_grid(seq: &'a MapSequence, grid: usize) -> Self {
        GreenFunction { seq, grid, sups: Mutex::new(Vec::new()) }
    }

    pub fn sequence(&self) -> &MapSequence {
        self.seq
    }

    /// Grid sup-norm of `u_j`.
    pub fn sup_potential(&self, j: usize) -> Result<f64> {
        if self.seq.is_constant() {
            let mut s = self.sups.lock().expect("sup cache poisoned");
            if s.is_empty() {
                s.push(potential_sup(&*self.seq.map(0)?, self.grid)?);
            }
            return Ok(s[0]);
        }
        {
            let s = self.sups.lock().expect("sup cache poisoned");
            if j < s.len() {
                return Ok(s[j]);
            }
        }
        let start = self.sups.lock().expect("sup cache poisoned").len();
        let mut fresh = Vec::new();
        for k in start..=j {
            fresh.push(potential_sup(&*self.seq.map(k)?, self.grid)?);
        }
        let mut s = self.sups.lock().expect("sup cache poisoned");
        if s.len() == start {
            s.extend(fresh);
        }
        Ok(s[j])
    }

    /// Rigorous-in-trend bound on `sum_{j >= n} sup|u_j| / d^j`.
    pub fn tail_bound(&self, n: usize) -> Result<f64> {
        let d = self.seq.degree() as f64;
        let mut acc = 0.0;
        let mut last = 0.0f64;
        for j in n..n + TAIL_WINDOW {
            let s = self.sup_potential(j)?;
            last = last.max(s);
            acc += s * d.powi(-(j as i32));
        }
        let rest = last * d.powi(-((n + TAIL_WINDOW) as i32)) / (1.0 - 1.0 / d);
        Ok(SUP_INFLATION * (acc + rest))
    }

    /// `g_n(p) = sum_{j<n} d^-j u_j(F_j p)` for a fixed `n`.
    pub fn partial_sum(&self, p: &ProjectivePoint, n: usize) -> Result<f64> {
        let d = self.seq.degree() as f64;
        let mut y = *p;
        let mut acc = 0.0;
        let mut w = 1.0;
        for j in 0..n {
            let f = self.seq.map(j)?;
            acc += w * potential_step(&f, &y)?;
            w /= d;
            if j + 1 < n {
                y = f.evaluate(&y)?;
            }
        }
        Ok(acc)
    }

    /// `g(p)` truncated where the tail bound drops below `tol`.
    pub fn eval(&self, p: &ProjectivePoint, tol: f64) -> Result<GreenValue> {
        if !(tol > 0.0) {
            return Err(Error::InvalidArgument(format!("tol = {tol} must be positive")));
        }
        let d = self.seq.degree() as f64;
        let mut y = *p;
        let mut acc = 0.0;
        let mut w = 1.0;
        let mut prev_bound = f64::INFINITY;
        let mut stalls = 0;
        for j in 0..MAX_DEPTH {
            let bound = self.tail_bound(j)?;
            if bound < tol {
                return Ok(GreenValue { value: acc, depth: j, tail_bound: bound });
            }
            if bound >= prev_bound {
                stalls += 1;
                if stalls >= 3 {
                    return Err(Error::NoConvergence { depth: j, bound });
                }
            } else {
                stalls = 0;
            }
            prev_bound = bound;
            let f = self.seq.map(j)?;
            acc += w * potential_step(&f, &y)?;
            w /= d;
            y = f.evaluate(&y)?;
        }
        Err(Error::NoConvergence { depth: MAX_DEPTH, bound: prev_bound })
    }
}

/// `g(p)` with truncation tolerance `tol`.
pub fn green_function(seq: &MapSequence, p: &ProjectivePoint, tol: f64) -> Result<GreenValue> {
    GreenFunction::new(seq).eval(p, tol)
}

/// Per-index sup-norms of `u_j` against the distance proxy, with a fitted
/// power law `sup|u_j| ~ C dist_j^-q`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DegeneracyGauge {
    pub dists: Vec<f64>,
    pub sup_potentials: Vec<f64>,
    /// `None` when the distances do not vary enough to fit.
    pub constant: Option<f64>,
    pub exponent: Option<f64>,
}

pub fn degeneracy_gauge(seq: &MapSequence, n: usize, grid: usize) -> Result<DegeneracyGauge> {
    let g = GreenFunction::with_grid(seq, grid);
    let mut dists = Vec::with_capacity(n);
    let mut sups = Vec::with_capacity(n);
    for j in 0..n {
        dists.push(seq.map(j)?.dist_to_degenerate());
        sups.push(g.sup_potential(j)?);
    }
    let pairs: Vec<(f64, f64)> =
        dists.iter().zip(&sups).filter(|(_, s)| **s > 0.0).map(|(d, s)| (-d.ln(), s.ln())).collect();
    let x: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let y: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let spread = x.iter().copied().fold(f64::NEG_INFINITY, f64::max) - x.iter().copied().fold(f64::INFINITY, f64::min);
    let fit = if spread > 1e-9 { linear_fit(&x, &y) } else { None };
    Ok(DegeneracyGauge {
        dists,
        sup_potentials: sups,
        constant: fit.map(|f| f.intercept.exp()),
        exponent: fit.map(|f| f.slope),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HolderEstimate {
    pub alpha: f64,
    /// `log d / chi_top`.
    pub floor: f64,
    pub r_squared: f64,
    /// `(scale, max increment)` pairs used in the fit.
    pub moduli: Vec<(f64, f64)>,
}

/// Random unit point, uniform for the spherical area measure.
pub fn random_sphere_point<R: Rng + ?Sized>(rng: &mut R) -> ProjectivePoint {
    let u: f64 = rng.random_range(-1.0..1.0);
    let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    crate::geometry::point_from_sphere(u.acos(), phi)
}

/// A point at chordal distance `r` from `p` in a random direction.
pub fn point_at_distance<R: Rng + ?Sized>(p: &ProjectivePoint, r: f64, rng: &mut R) -> ProjectivePoint {
    let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let (z0, z1) = p.coords();
    let (a0, a1) = (-z1.conj(), z0.conj());
    let c = (1.0 - r * r).max(0.0).sqrt();
    let e = Complex64::from_polar(r, phi);
    ProjectivePoint::normalize(z0 * c + a0 * e, z1 * c + a1 * e).expect("unit combination of orthonormal vectors")
}

/// Fits `log sup |g(p) - g(q)|` against `log dist(p, q)` over random pairs at each scale.
pub fn holder_exponent_estimate(seq: &MapSequence, samples: usize, scales: &[f64], seed: u64) -> Result<HolderEstimate> {
    if samples < 1000 {
        return Err(Error::InvalidArgument(format!("samples = {samples} must be at least 1000")));
    }
    let lo = scales.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scales.iter().copied().fold(0.0, f64::max);
    if !(lo > 0.0 && hi <= 1.0 && hi / lo >= 100.0) {
        return Err(Error::InvalidArgument("scales must lie in (0, 1] and span at least two decades".into()));
    }
    let g = GreenFunction::new(seq);
    let tol = 1e-4 * lo;
    let per_scale = samples.div_ceil(scales.len());
    let mut moduli = Vec::with_capacity(scales.len());
    for (si, &r) in scales.iter().enumerate() {
        let incs = (0..per_scale)
            .into_par_iter()
            .map(|k| {
                let mut rng = seeding::stream(seed, domain::HOLDER, (si * per_scale + k) as u64);
                let p = random_sphere_point(&mut rng);
                let q = point_at_distance(&p, r, &mut rng);
                Ok((g.eval(&p, tol)?.value - g.eval(&q, tol)?.value).abs())
            })
            .collect::<Result<Vec<f64>>>()?;
        let m = incs.into_iter().fold(0.0, f64::max);
        moduli.push((r, m));
    }
    let x: Vec<f64> = moduli.iter().map(|(r, _)| r.ln()).collect();
    let y: Vec<f64> = moduli.iter().map(|(_, m)| m.max(f64::MIN_POSITIVE).ln()).collect();
    let fit = linear_fit(&x, &y).ok_or_else(|| Error::InvalidArgument("need at least two distinct scales".into()))?;
    let chi = topological_lyapunov(seq, 8, 2000)?;
    let floor = (seq.degree() as f64).ln() / chi.estimate;
    Ok(HolderEstimate { alpha: fit.slope, floor, r_squared: fit.r_squared, moduli })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pt(re: f64, im: f64) -> ProjectivePoint {
        ProjectivePoint::affine(Complex64::new(re, im)).unwrap()
    }

    fn squaring() -> MapSequence {
        MapSequence::constant(HomogeneousMap::power(2).unwrap())
    }

    #[test]
    fn potential_step_examples() {
        let f = HomogeneousMap::power(2).unwrap();
        let u = potential_step(&f, &pt(1.0, 0.0)).unwrap();
        assert!((u - 0.25 * 0.5f64.ln()).abs() < 1e-15);
        assert!((u + 0.173287).abs() < 1e-6);
        assert_eq!(potential_step(&f, &ProjectivePoint::INFINITY).unwrap(), 0.0);
    }

    #[test]
    fn potential_step_is_phase_invariant() {
        let f: HomogeneousMap = "(z^3+0.5i)/(z^3-2)".parse().unwrap();
        for s in [Complex64::new(-1.0, 0.0), Complex64::new(0.0, 1.0)] {
            let g = f.rescaled(s).unwrap();
            for p in sphere_grid(50) {
                assert_eq!(potential_step(&f, &p).unwrap(), potential_step(&g, &p).unwrap());
            }
        }
        let g = f.rescaled(Complex64::from_polar(1.0, 0.7)).unwrap();
        for p in sphere_grid(50) {
            assert!((potential_step(&f, &p).unwrap() - potential_step(&g, &p).unwrap()).abs() < 1e-14);
        }
    }

    #[test]
    fn green_examples() {
        let seq = squaring();
        let g = green_function(&seq, &pt(1.0, 0.0), 1e-6).unwrap();
        assert!((g.value + 0.5 * 2f64.ln()).abs() < 1e-6);
        assert!(g.tail_bound < 1e-6);
        let g = green_function(&seq, &ProjectivePoint::INFINITY, 1e-6).unwrap();
        assert_eq!(g.value, 0.0);
        // at affine 3 the closed form gives log 3 - (1/2) log 10
        let g = green_function(&seq, &pt(3.0, 0.0), 1e-8).unwrap();
        let expected = 3f64.ln() - 0.5 * 10f64.ln();
        assert!((g.value - expected).abs() < 1e-8);
        assert!((expected + 0.052680).abs() < 1e-6);
    }

    #[test]
    fn green_matches_closed_form_for_power_maps() {
        for d in [2usize, 3, 5] {
            let seq = MapSequence::constant(HomogeneousMap::power(d).unwrap());
            let gf = GreenFunction::new(&seq);
            let mut rng = seeding::stream(1, domain::HOLDER, d as u64);
            for _ in 0..200 {
                let p = random_sphere_point(&mut rng);
                let v = gf.eval(&p, 1e-7).unwrap();
                assert!((v.value - power_map_green(&p)).abs() < 1e-6, "d={d} p={p}");
            }
        }
    }

    #[test]
    fn cauchy_property_on_perturbed_sequence() {
        let seq = MapSequence::perturbed(HomogeneousMap::power(2).unwrap(), 0.05, 21).unwrap();
        let gf = GreenFunction::with_grid(&seq, 4000);
        let sups: Vec<f64> = (0..40).map(|j| gf.sup_potential(j).unwrap()).collect();
        for p in sphere_grid(200) {
            let vals: Vec<f64> = [2usize, 5, 10, 20, 40].iter().map(|&n| gf.partial_sum(&p, n).unwrap()).collect();
            for (a, &n) in [2usize, 5, 10, 20].iter().enumerate() {
                for (b, &m) in [5usize, 10, 20, 40].iter().enumerate().skip(a) {
                    let bound: f64 = (n..m).map(|j| SUP_INFLATION * sups[j] / 2f64.powi(j as i32)).sum();
                    assert!((vals[a] - vals[b + 1]).abs() <= bound + 1e-12);
                }
            }
        }
    }

    #[test]
    fn degenerating_sequence_converges_and_gauge_fits() {
        let seq = MapSequence::degenerating(2, crate::maps::DistanceProfile::RootExponential { rate: 1.0 }).unwrap();
        let g = green_function(&seq, &pt(0.3, 0.4), 1e-6).unwrap();
        assert!(g.value.is_finite() && g.tail_bound < 1e-6);
        let gauge = degeneracy_gauge(&seq, 30, 2000).unwrap();
        assert!(gauge.exponent.is_some());
        let c = degeneracy_gauge(&squaring(), 5, 2000).unwrap();
        assert!(c.exponent.is_none());
    }

    #[test]
    fn holder_estimate_for_squaring() {
        let seq = squaring();
        let h = holder_exponent_estimate(&seq, 1200, &[1e-4, 1e-3, 1e-2, 1e-1], 5).unwrap();
        assert!(h.alpha >= 0.9, "{h:?}");
        assert!(h.alpha <= 1.1, "{h:?}");
        assert!((h.floor - 1.0).abs() < 0.02, "{h:?}");
        assert!(holder_exponent_estimate(&seq, 10, &[1e-3, 1e-1], 5).is_err());
        assert!(holder_exponent_estimate(&seq, 1000, &[1e-2, 1e-1], 5).is_err());
    }

    #[test]
    fn points_at_prescribed_distance() {
        let mut rng = seeding::stream(3, domain::HOLDER, 0);
        for _ in 0..100 {
            let p = random_sphere_point(&mut rng);
            for r in [1e-6, 1e-3, 0.5, 1.0] {
                let q = point_at_distance(&p, r, &mut rng);
                assert!((p.dist(&q) - r).abs() < 1e-12);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn squaring_green_matches_closed_form(x in -4.0f64..4.0, y in -4.0f64..4.0) {
            let p = pt(x, y);
            let v = green_function(&squaring(), &p, 1e-6).unwrap();
            prop_assert!((v.value - power_map_green(&p)).abs() < 1e-5);
        }
    }
}
