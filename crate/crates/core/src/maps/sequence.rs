use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use num_complex::Complex64;
use rand::Rng;

use super::map::HomogeneousMap;
use crate::error::{Error, Result};
use crate::seeding::{self, domain};

/// Prescribed distance-to-degenerate profile `j -> dist_j`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DistanceProfile {
    /// `exp(-rate * j)`.
    Exponential { rate: f64 },
    /// `exp(-rate * sqrt(j))`.
    RootExponential { rate: f64 },
    /// `(1 + j)^(-exponent)`.
    Power { exponent: f64 },
}

impl DistanceProfile {
    pub fn dist(&self, j: usize) -> f64 {
        let j = j as f64;
        match *self {
            DistanceProfile::Exponential { rate } => (-rate * j).exp(),
            DistanceProfile::RootExponential { rate } => (-rate * j.sqrt()).exp(),
            DistanceProfile::Power { exponent } => (1.0 + j).powf(-exponent),
        }
    }
}

#[derive(Clone, Debug)]
pub enum Generator {
    Constant(HomogeneousMap),
    /// `f_j` = base coefficients plus `amplitude` times a uniform complex
    /// perturbation in the square `[-1, 1]^2`, drawn from the stream `(seed, j)`.
    Perturbed { base: HomogeneousMap, amplitude: f64, seed: u64 },
    /// Cycles through the list.
    Explicit(Vec<HomogeneousMap>),
    /// `P = z0^d`, `Q = t z0^d + s z1^d` with `s` solved so the distance proxy
    /// equals the profile and `t = 1 - s`.
    Degenerating { degree: usize, profile: DistanceProfile },
}

/// A lazily realized sequence `(f_0, f_1, ...)` of maps of a common degree.
#[derive(Debug)]
pub struct MapSequence {
    generator: Generator,
    degree: usize,
    cache: RwLock<HashMap<usize, Arc<HomogeneousMap>>>,
    constant: Option<Arc<HomogeneousMap>>,
}

impl Clone for MapSequence {
    fn clone(&self) -> Self {
        MapSequence::new(self.generator.clone()).expect("generator was validated")
    }
}

impl MapSequence {
    pub fn new(generator: Generator) -> Result<Self> {
        let (degree, constant) = match &generator {
            Generator::Constant(f) => (f.degree(), Some(Arc::new(f.clone()))),
            Generator::Perturbed { base, amplitude, .. } => {
                if !(amplitude.is_finite() && *amplitude >= 0.0) {
                    return Err(Error::InvalidArgument(format!("amplitude {amplitude} must be finite and >= 0")));
                }
                (base.degree(), None)
            }
            Generator::Explicit(list) => {
                let first = list.first().ok_or_else(|| Error::InvalidArgument("explicit sequence is empty".into()))?;
                if list.iter().any(|f| f.degree() != first.degree()) {
                    return Err(Error::InvalidArgument("explicit sequence mixes degrees".into()));
                }
                let constant = if list.len() == 1 { Some(Arc::new(first.clone())) } else { None };
                (first.degree(), constant)
            }
            Generator::Degenerating { degree, .. } => {
                if !(2..=super::form::MAX_DEGREE).contains(degree) {
                    return Err(Error::InvalidMap(format!("degree {degree} out of range")));
                }
                (*degree, None)
            }
        };
        Ok(MapSequence { generator, degree, cache: RwLock::new(HashMap::new()), constant })
    }

    pub fn constant(f: HomogeneousMap) -> Self {
        MapSequence::new(Generator::Constant(f)).expect("constant generator is always valid")
    }

    pub fn perturbed(base: HomogeneousMap, amplitude: f64, seed: u64) -> Result<Self> {
        MapSequence::new(Generator::Perturbed { base, amplitude, seed })
    }

    pub fn degenerating(degree: usize, profile: DistanceProfile) -> Result<Self> {
        MapSequence::new(Generator::Degenerating { degree, profile })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn generator(&self) -> &Generator {
        &self.generator
    }

    /// True when every `f_j` is the same map.
    pub fn is_constant(&self) -> bool {
        self.constant.is_some()
    }

    /// The map `f_j`, realized on first use.
    pub fn map(&self, j: usize) -> Result<Arc<HomogeneousMap>> {
        if let Some(f) = &self.constant {
            return Ok(Arc::clone(f));
        }
        if let Some(f) = self.cache.read().expect("map cache poisoned").get(&j) {
            return Ok(Arc::clone(f));
        }
        let f = Arc::new(self.realize(j)?);
        let mut cache = self.cache.write().expect("map cache poisoned");
        Ok(Arc::clone(cache.entry(j).or_insert(f)))
    }

    /// Forward composition `f_{start+n-1} o ... o f_start` applied to `x`.
    pub fn push_forward(
        &self,
        start: usize,
        n: usize,
        x: &crate::geometry::ProjectivePoint,
    ) -> Result<crate::geometry::ProjectivePoint> {
        let mut y = *x;
        for j in start..start + n {
            y = self.map(j)?.evaluate(&y)?;
        }
        Ok(y)
    }

    fn realize(&self, j: usize) -> Result<HomogeneousMap> {
        match &self.generator {
            Generator::Constant(f) => Ok(f.clone()),
            Generator::Explicit(list) => Ok(list[j % list.len()].clone()),
            Generator::Perturbed { base, amplitude, seed } => {
                let mut rng = seeding::stream(*seed, domain::MAP_PERTURBATION, j as u64);
                let mut noise = || {
                    let re: f64 = rng.random_range(-1.0..1.0);
                    let im: f64 = rng.random_range(-1.0..1.0);
                    Complex64::new(re, im) * *amplitude
                };
                let p: Vec<Complex64> = base.p().coeffs().iter().map(|c| c + noise()).collect();
                let q: Vec<Complex64> = base.q().coeffs().iter().map(|c| c + noise()).collect();
                HomogeneousMap::new(p, q)
            }
            Generator::Degenerating { degree, profile } => degenerating_map(*degree, profile.dist(j)),
        }
    }
}

/// Member of the degenerating family whose distance proxy equals `target`.
pub fn degenerating_map(degree: usize, target: f64) -> Result<HomogeneousMap> {
    if !(target > 0.0 && target <= 1.0) {
        return Err(Error::DegenerateMap { dist: target });
    }
    // Proxy of (z0^d, t z0^d + s z1^d) with t = 1 - s is s / (1 - s + s^2);
    // take the root in (0, 1] of D s^2 - (1 + D) s + D = 0.
    let dd = target;
    let disc = ((1.0 + dd) * (1.0 + dd) - 4.0 * dd * dd).max(0.0).sqrt();
    let s = 2.0 * dd / ((1.0 + dd) + disc);
    let t = 1.0 - s;
    let zero = Complex64::new(0.0, 0.0);
    let mut p = vec![zero; degree + 1];
    p[degree] = Complex64::new(1.0, 0.0);
    let mut q = vec![zero; degree + 1];
    q[degree] = Complex64::new(t, 0.0);
    q[0] = Complex64::new(s, 0.0);
    HomogeneousMap::new(p, q)
}
