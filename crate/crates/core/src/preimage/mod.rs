//! Fibers `f^{-1}(x)`, preimage trees of compositions and backward sampling.

mod roots;

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::ProjectivePoint;
use crate::maps::{abs_eval_form, eval_form};
use crate::maps::{HomogeneousMap, MapSequence};
use crate::seeding::{self, domain, Stream};

/// Backward-error bound every returned root must meet.
pub const RESIDUAL_TOL: f64 = 1e-9;

/// Chordal radius within which roots are merged into one point with multiplicity.
pub const CLUSTER_TOL: f64 = 1e-7;

/// Largest full tree, in leaves counted with multiplicity.
pub const FULL_TREE_MAX: u128 = 1_000_000;

/// Default switchover from full trees to sampled paths.
pub const FULL_TREE_DEFAULT: u128 = 10_000;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PreimageSet {
    /// Distinct preimages with multiplicities summing to the degree.
    pub points: Vec<(ProjectivePoint, usize)>,
    /// Backward error of each point.
    pub residuals: Vec<f64>,
}

impl PreimageSet {
    pub fn degree(&self) -> usize {
        self.points.iter().map(|(_, m)| m).sum()
    }

    /// A preimage drawn uniformly among the `d` roots counted with multiplicity.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ProjectivePoint {
        let mut u = rng.random_range(0..self.degree());
        for (p, m) in &self.points {
            if u < *m {
                return *p;
            }
            u -= m;
        }
        unreachable!("multiplicities sum to the degree")
    }

    /// Multiplicity-weighted mean of `psi` over the fiber.
    pub fn average<F: Fn(&ProjectivePoint) -> f64>(&self, psi: F) -> f64 {
        let d = self.degree() as f64;
        self.points.iter().map(|(p, m)| *m as f64 * psi(p)).sum::<f64>() / d
    }
}

/// `sum_i r_i z0^i z1^(d-i)` with `r = x1 P - x0 Q`, whose roots are `f^{-1}(x)`.
fn fiber_form(f: &HomogeneousMap, x: &ProjectivePoint) -> Vec<Complex64> {
    let (x0, x1) = x.coords();
    f.p().coeffs().iter().zip(f.q().coeffs()).map(|(p, q)| x1 * p - x0 * q).collect()
}

fn backward_error(r: &[Complex64], y: &ProjectivePoint) -> f64 {
    let (y0, y1) = y.coords();
    let num = eval_form(r, y0, y1).norm_sqr().sqrt();
    if num == 0.0 {
        return 0.0;
    }
    num / abs_eval_form(r, y0.norm_sqr().sqrt(), y1.norm_sqr().sqrt())
}

/// Newton steps in the chart where the root has modulus at most one; returns the point and its backward error.
fn polish(r: &[Complex64], y: ProjectivePoint) -> (ProjectivePoint, f64) {
    let mut best = y;
    let mut best_err = backward_error(r, &y);
    if best_err <= 2.0 * f64::EPSILON {
        return (best, best_err);
    }
    let (y0, y1) = y.coords();
    let first_chart = y0.norm_sqr() <= y1.norm_sqr();
    let coeffs: Vec<Complex64> = if first_chart { r.to_vec() } else { r.iter().rev().copied().collect() };
    let to_point = |z: Complex64| {
        if first_chart {
            ProjectivePoint::normalize(z, Complex64::new(1.0, 0.0))
        } else {
            ProjectivePoint::normalize(Complex64::new(1.0, 0.0), z)
        }
    };
    let mut z = if first_chart { y0 / y1 } else { y1 / y0 };
    for _ in 0..4 {
        if best_err == 0.0 {
            break;
        }
        let mut p = Complex64::new(0.0, 0.0);
        let mut dp = Complex64::new(0.0, 0.0);
        for c in coeffs.iter().rev() {
            dp = dp * z + p;
            p = p * z + c;
        }
        if dp.norm_sqr() == 0.0 {
            break;
        }
        let next = z - p / dp;
        if !next.is_finite() {
            break;
        }
        let Ok(cand) = to_point(next) else { break };
        let err = backward_error(r, &cand);
        if err < best_err {
            best = cand;
            best_err = err;
            z = next;
        } else {
            break;
        }
    }
    (best, best_err)
}

/// Roots of the binary form `r` on the sphere, with multiplicity, unclustered.
fn form_roots(r: &[Complex64]) -> Vec<ProjectivePoint> {
    let d = r.len() - 1;
    let scale = r.iter().map(|c| c.norm_sqr().sqrt()).fold(0.0, f64::max);
    let tiny = 4.0 * f64::EPSILON * scale;
    // Chart with the larger extreme coefficient: z = y0/y1 if |r_d| >= |r_0|.
    let first_chart = r[d].norm_sqr() >= r[0].norm_sqr();
    let c: Vec<Complex64> = if first_chart { r.to_vec() } else { r.iter().rev().copied().collect() };
    let (at_zero, at_inf) = if first_chart {
        (ProjectivePoint::ZERO, ProjectivePoint::INFINITY)
    } else {
        (ProjectivePoint::INFINITY, ProjectivePoint::ZERO)
    };
    let lo = c.iter().position(|v| v.norm_sqr().sqrt() > tiny).unwrap_or(d);
    let hi = c.iter().rposition(|v| v.norm_sqr().sqrt() > tiny).unwrap_or(0);
    let mut out = Vec::with_capacity(d);
    out.extend(std::iter::repeat_n(at_zero, lo));
    out.extend(std::iter::repeat_n(at_inf, d - hi));
    if hi > lo {
        for z in roots::aberth(&c[lo..=hi]) {
            let p = if first_chart {
                ProjectivePoint::normalize(z, Complex64::new(1.0, 0.0))
            } else {
                ProjectivePoint::normalize(Complex64::new(1.0, 0.0), z)
            };
            // A non-finite iterate is left to the residual check.
            out.push(p.unwrap_or(at_inf));
        }
    }
    out
}

fn cluster_mean(members: &[ProjectivePoint]) -> ProjectivePoint {
    if members.len() == 1 {
        return members[0];
    }
    let (a0, a1) = members[0].coords();
    let first_chart = a0.norm_sqr() <= a1.norm_sqr();
    let mut s = Complex64::new(0.0, 0.0);
    for m in members {
        let (y0, y1) = m.coords();
        s += if first_chart { y0 / y1 } else { y1 / y0 };
    }
    s /= members.len() as f64;
    let one = Complex64::new(1.0, 0.0);
    let p = if first_chart { ProjectivePoint::normalize(s, one) } else { ProjectivePoint::normalize(one, s) };
    p.unwrap_or(members[0])
}

/// The fiber `f^{-1}(x)` with multiplicities.
pub fn preimages(f: &HomogeneousMap, x: &ProjectivePoint) -> Result<PreimageSet> {
    let r = fiber_form(f, x);
    let raw: Vec<(ProjectivePoint, f64)> = form_roots(&r).into_iter().map(|y| polish(&r, y)).collect();

    // Clusters as index lists into `raw`.
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for (i, (y, _)) in raw.iter().enumerate() {
        match clusters.iter_mut().find(|c| raw[c[0]].0.dist(y) <= CLUSTER_TOL) {
            Some(c) => c.push(i),
            None => clusters.push(vec![i]),
        }
    }
    let mut points = Vec::with_capacity(clusters.len());
    let mut residuals = Vec::with_capacity(clusters.len());
    for c in &clusters {
        let (mut rep, mut err) = raw[c[0]];
        if c.len() > 1 {
            let members: Vec<ProjectivePoint> = c.iter().map(|&i| raw[i].0).collect();
            let mean = cluster_mean(&members);
            let e = backward_error(&r, &mean);
            // Averaging can only help a multiple root; keep the best member otherwise.
            if e < err {
                rep = mean;
                err = e;
            }
            for &i in &c[1..] {
                if raw[i].1 < err {
                    (rep, err) = raw[i];
                }
            }
        }
        if !(err <= RESIDUAL_TOL) {
            return Err(Error::SolverDivergence { residual: err, tol: RESIDUAL_TOL });
        }
        points.push((rep, c.len()));
        residuals.push(err);
    }
    Ok(PreimageSet { points, residuals })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum TreeMode {
    Full,
    Sampled { paths: usize, seed: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TreeNode {
    pub point: ProjectivePoint,
    /// Number of backward branches through this node (full mode) or 1 (sampled mode).
    pub multiplicity: u64,
}

/// Level-ordered backward tree of the composition `f_{base+depth-1} o ... o f_base`.
///
/// Level 0 is the root; level `l + 1` holds preimages of level `l` under
/// `f_{base + depth - 1 - l}`, so the last level is `F^{-1}(root)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PreimageTree {
    pub root: ProjectivePoint,
    pub depth: usize,
    pub base_index: usize,
    pub degree: usize,
    pub mode: TreeMode,
    pub levels: Vec<Vec<TreeNode>>,
}

impl PreimageTree {
    pub fn leaves(&self) -> &[TreeNode] {
        &self.levels[self.depth]
    }

    /// Total weight denominator of level `l`: `d^l` (full) or the path count.
    pub fn level_total(&self, level: usize) -> u64 {
        match self.mode {
            TreeMode::Full => (self.degree as u64).pow(level as u32),
            TreeMode::Sampled { paths, .. } => paths as u64,
        }
    }

    /// Weighted mean of `psi` over level `l` (an estimate of the composed transfer operator).
    pub fn level_mean<F: Fn(&ProjectivePoint) -> f64>(&self, level: usize, psi: F) -> f64 {
        let total = self.level_total(level) as f64;
        self.levels[level].iter().map(|n| n.multiplicity as f64 * psi(&n.point)).sum::<f64>() / total
    }

    /// Leaf weights; they sum to one.
    pub fn leaf_weights(&self) -> Vec<f64> {
        let total = self.level_total(self.depth) as f64;
        self.leaves().iter().map(|n| n.multiplicity as f64 / total).collect()
    }
}

/// `d^depth` as a leaf count, saturating.
pub fn full_tree_size(degree: usize, depth: usize) -> u128 {
    let mut n: u128 = 1;
    for _ in 0..depth {
        n = n.saturating_mul(degree as u128);
    }
    n
}

/// Preimage tree of `F_depth = f_{depth-1} o ... o f_0` over `x`.
pub fn preimage_tree(seq: &MapSequence, x: &ProjectivePoint, depth: usize, mode: TreeMode) -> Result<PreimageTree> {
    preimage_tree_at(seq, 0, x, depth, mode, FULL_TREE_MAX)
}

/// Preimage tree of the tail composition starting at `base`.
pub fn preimage_tree_at(
    seq: &MapSequence,
    base: usize,
    x: &ProjectivePoint,
    depth: usize,
    mode: TreeMode,
    budget: u128,
) -> Result<PreimageTree> {
    if depth == 0 {
        return Err(Error::InvalidArgument("tree depth must be at least 1".into()));
    }
    let degree = seq.degree();
    let mut levels = vec![vec![TreeNode { point: *x, multiplicity: 1 }]];
    match mode {
        TreeMode::Full => {
            let leaves = full_tree_size(degree, depth);
            let budget = budget.min(FULL_TREE_MAX);
            if leaves > budget {
                return Err(Error::BudgetExceeded { leaves, budget });
            }
            for l in 0..depth {
                let f = seq.map(base + depth - 1 - l)?;
                let next: Vec<Vec<TreeNode>> = levels[l]
                    .par_iter()
                    .map(|node| {
                        let set = preimages(&f, &node.point)?;
                        Ok(set
                            .points
                            .iter()
                            .map(|(p, m)| TreeNode { point: *p, multiplicity: node.multiplicity * *m as u64 })
                            .collect())
                    })
                    .collect::<Result<_>>()?;
                levels.push(next.into_iter().flatten().collect());
            }
        }
        TreeMode::Sampled { paths, seed } => {
            if paths == 0 {
                return Err(Error::InvalidArgument("sampled tree needs at least one path".into()));
            }
            let all: Vec<Vec<ProjectivePoint>> = (0..paths)
                .into_par_iter()
                .map(|k| {
                    let mut rng = seeding::stream(seed, domain::PREIMAGE_PATHS, k as u64);
                    backward_path(seq, base, x, depth, &mut rng)
                })
                .collect::<Result<_>>()?;
            for l in 1..=depth {
                levels.push(all.iter().map(|p| TreeNode { point: p[l], multiplicity: 1 }).collect());
            }
        }
    }
    Ok(PreimageTree { root: *x, depth, base_index: base, degree, mode, levels })
}

/// One uniformly random backward path `[x, y_1, ..., y_depth]` where
/// `f_{base+depth-l}(y_l) = y_{l-1}`.
pub fn backward_path(
    seq: &MapSequence,
    base: usize,
    x: &ProjectivePoint,
    depth: usize,
    rng: &mut Stream,
) -> Result<Vec<ProjectivePoint>> {
    let mut path = Vec::with_capacity(depth + 1);
    path.push(*x);
    let mut y = *x;
    for l in 0..depth {
        let f = seq.map(base + depth - 1 - l)?;
        y = preimages(&f, &y)?.sample(rng);
        path.push(y);
    }
    Ok(path)
}

/// Leaf of one uniformly random backward path through `f_{depth-1}, ..., f_0`.
pub fn backward_orbit_sample(seq: &MapSequence, x: &ProjectivePoint, depth: usize, rng: &mut Stream) -> Result<ProjectivePoint> {
    backward_orbit_sample_at(seq, 0, x, depth, rng)
}

/// As [`backward_orbit_sample`] for the tail sequence starting at `base`.
pub fn backward_orbit_sample_at(
    seq: &MapSequence,
    base: usize,
    x: &ProjectivePoint,
    depth: usize,
    rng: &mut Stream,
) -> Result<ProjectivePoint> {
    if depth == 0 {
        return Err(Error::InvalidArgument("depth must be at least 1".into()));
    }
    let mut y = *x;
    for l in 0..depth {
        let f = seq.map(base + depth - 1 - l)?;
        y = preimages(&f, &y)?.sample(rng);
    }
    Ok(y)
}
