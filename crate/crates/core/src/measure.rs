//! Equilibrium measures of tail sequences, sampled by backward iteration.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::ProjectivePoint;
use crate::maps::MapSequence;
use crate::observable::Observable;
use crate::preimage::{backward_orbit_sample_at, preimage_tree_at, preimages, TreeMode, FULL_TREE_MAX};
use crate::seeding::{self, domain};

/// Backward depth used when none is given.
pub const DEFAULT_DEPTH: usize = 30;

/// Levels inspected by the exceptional-base check.
const BASE_CHECK_LEVELS: usize = 3;

/// Default base point `0.4 + 0.7i`.
pub fn default_base() -> ProjectivePoint {
    ProjectivePoint::affine(Complex64::new(0.4, 0.7)).expect("finite affine point")
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Provenance {
    pub tail: usize,
    pub depth: usize,
    pub count: usize,
    pub base: ProjectivePoint,
    pub seed: u64,
}

/// Equal-weight point cloud approximating the measure of the tail sequence.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EmpiricalMeasure {
    pub points: Vec<ProjectivePoint>,
    pub weights: Vec<f64>,
    pub provenance: Provenance,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct IntegralEstimate {
    pub value: f64,
    pub stderr: f64,
    pub count: usize,
}

impl IntegralEstimate {
    /// Mean and standard error of equally weighted values.
    pub fn from_values(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return IntegralEstimate { value: f64::NAN, stderr: f64::NAN, count: 0 };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let stderr = if n > 1 {
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        IntegralEstimate { value: mean, stderr, count: n }
    }

    /// `|a - b| / sqrt(se_a^2 + se_b^2)`; zero when both agree exactly.
    pub fn z_score(&self, other: &IntegralEstimate) -> f64 {
        let diff = (self.value - other.value).abs();
        let se = self.stderr.hypot(other.stderr);
        if diff == 0.0 {
            0.0
        } else if se == 0.0 {
            f64::INFINITY
        } else {
            diff / se
        }
    }
}

/// Fails with `ExceptionalBase` when the first backward levels over `base`
/// never branch (a totally invariant point).
pub fn check_base(seq: &MapSequence, tail: usize, base: &ProjectivePoint) -> Result<()> {
    let tree = preimage_tree_at(seq, tail, base, BASE_CHECK_LEVELS, TreeMode::Full, FULL_TREE_MAX)?;
    let leaves = tree.leaves();
    let distinct = leaves.iter().skip(1).any(|n| n.point.dist(&leaves[0].point) > 1e-9);
    if distinct {
        Ok(())
    } else {
        Err(Error::ExceptionalBase)
    }
}

/// Stream seed for draw `i` of the cloud of tail `tail`.
fn draw_seed(seed: u64, tail: usize) -> u64 {
    seeding::child_seed(seed, domain::MEASURE, tail as u64)
}

/// `count` backward samples through `f_{tail+depth-1}, ..., f_tail` from `base`.
pub fn sample_equilibrium(
    seq: &MapSequence,
    tail: usize,
    depth: usize,
    count: usize,
    base: &ProjectivePoint,
    seed: u64,
) -> Result<EmpiricalMeasure> {
    if count == 0 || depth == 0 {
        return Err(Error::InvalidArgument("depth and count must be positive".into()));
    }
    check_base(seq, tail, base)?;
    let s = draw_seed(seed, tail);
    let points = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = seeding::stream(s, domain::MEASURE, i as u64);
            backward_orbit_sample_at(seq, tail, base, depth, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    let weights = vec![1.0 / count as f64; count];
    Ok(EmpiricalMeasure { points, weights, provenance: Provenance { tail, depth, count, base: *base, seed } })
}

/// Weighted mean of `psi` over the cloud, with standard error.
pub fn integrate(m: &EmpiricalMeasure, psi: &Observable) -> Result<IntegralEstimate> {
    if let Some(c) = psi.constant_value() {
        return Ok(IntegralEstimate { value: c, stderr: 0.0, count: m.points.len() });
    }
    let vals = m.points.par_iter().map(|p| psi.eval(p)).collect::<Result<Vec<f64>>>()?;
    Ok(IntegralEstimate::from_values(&vals))
}

/// Integral of an arbitrary fallible function over the cloud.
pub fn integrate_with<F>(m: &EmpiricalMeasure, f: F) -> Result<IntegralEstimate>
where
    F: Fn(&ProjectivePoint) -> Result<f64> + Sync + Send,
{
    let vals = m.points.par_iter().map(f).collect::<Result<Vec<f64>>>()?;
    Ok(IntegralEstimate::from_values(&vals))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Comparison {
    pub lhs: IntegralEstimate,
    pub rhs: IntegralEstimate,
    pub z_score: f64,
    pub pass: bool,
}

impl Comparison {
    pub fn new(lhs: IntegralEstimate, rhs: IntegralEstimate, z_max: f64) -> Self {
        let z_score = lhs.z_score(&rhs);
        Comparison { lhs, rhs, z_score, pass: z_score <= z_max }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct InvarianceReport {
    pub j: usize,
    /// `<mu_{j-1}, psi o f_{j-1}>` against `<mu_j, psi>`.
    pub pushforward: Comparison,
    /// `<mu_j, P_{j-1} psi'>` against `<mu_{j-1}, psi'>`.
    pub adjoint: Comparison,
    pub pass: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CloudParams {
    pub depth: usize,
    pub count: usize,
    pub base: ProjectivePoint,
    pub seed: u64,
}

impl CloudParams {
    pub fn new(count: usize, seed: u64) -> Self {
        CloudParams { depth: DEFAULT_DEPTH, count, base: default_base(), seed }
    }
}

/// Checks the push-forward and pull-back forms of `(f_{j-1})_* mu_{j-1} = mu_j`
/// at three combined standard errors.
pub fn check_invariance(
    seq: &MapSequence,
    j: usize,
    psi: &Observable,
    psi_adjoint: &Observable,
    params: &CloudParams,
) -> Result<InvarianceReport> {
    if j == 0 {
        return Err(Error::InvalidArgument("invariance needs j >= 1".into()));
    }
    let prev = sample_equilibrium(seq, j - 1, params.depth, params.count, &params.base, params.seed)?;
    let cur = sample_equilibrium(seq, j, params.depth, params.count, &params.base, params.seed)?;
    let f = seq.map(j - 1)?;

    let lhs = if let Some(c) = psi.constant_value() {
        IntegralEstimate { value: c, stderr: 0.0, count: params.count }
    } else {
        integrate_with(&prev, |p| psi.eval(&f.evaluate(p)?))?
    };
    let rhs = integrate(&cur, psi)?;
    let pushforward = Comparison::new(lhs, rhs, 3.0);

    let lhs = if let Some(c) = psi_adjoint.constant_value() {
        IntegralEstimate { value: c, stderr: 0.0, count: params.count }
    } else {
        integrate_with(&cur, |x| {
            let set = preimages(&f, x)?;
            let mut acc = 0.0;
            for (y, m) in &set.points {
                acc += *m as f64 * psi_adjoint.eval(y)?;
            }
            Ok(acc / set.degree() as f64)
        })?
    };
    let rhs = integrate(&prev, psi_adjoint)?;
    let adjoint = Comparison::new(lhs, rhs, 3.0);

    Ok(InvarianceReport { j, pushforward, adjoint, pass: pushforward.pass && adjoint.pass })
}
