//! Reversed-martingale decomposition `U_j = (psi_j + h_j - h_{j+1} o f_j) o F_j`
//! with `h_0 = 0` and `h_j = P_{j-1}(psi_{j-1} + h_{j-1})`.
//!
//! Unrolled, `h_j(x) = sum_{l=1}^{j} (P_{j-1} ... P_{j-l}) psi_{j-l}(x)`, the
//! level-`l` mean of `psi_{j-l}` over the backward tree of `x`. Levels up to
//! the full-tree cap are exact; deeper levels, up to `max_depth`, come from
//! sampled backward paths; levels beyond `max_depth` are dropped (their size
//! decays like `d^{-l}`).

use rayon::prelude::*;
use serde::Serialize;

use super::{centering_constants, check_list, mean_var, observable_at, report_grid, trajectory, variance_stderr};
use super::{BirkhoffSample, Centering, SampleOptions, StatReport};
use crate::error::{Error, Result};
use crate::fit::linear_fit;
use crate::geometry::ProjectivePoint;
use crate::green::random_sphere_point;
use crate::maps::MapSequence;
use crate::observable::Observable;
use crate::preimage::{backward_path, full_tree_size, preimage_tree_at, preimages, TreeMode, FULL_TREE_MAX};
use crate::seeding::{self, domain};

/// Evaluation budget for the `h_j`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct HBudget {
    /// Deepest level evaluated on a full tree.
    pub full_cap: usize,
    /// Sampled paths per evaluation for levels beyond the cap.
    pub paths: usize,
    /// Deepest level included at all.
    pub max_depth: usize,
}

impl Default for HBudget {
    fn default() -> Self {
        HBudget { full_cap: 6, paths: 64, max_depth: 6 }
    }
}

impl HBudget {
    fn validate(&self, degree: usize) -> Result<()> {
        let leaves = full_tree_size(degree, self.full_cap.min(self.max_depth));
        if leaves > FULL_TREE_MAX {
            return Err(Error::BudgetExceeded { leaves, budget: FULL_TREE_MAX });
        }
        if self.max_depth > self.full_cap && self.paths == 0 {
            return Err(Error::InvalidArgument("levels beyond the full-tree cap need sampled paths".into()));
        }
        Ok(())
    }
}

struct HContext<'a> {
    seq: &'a MapSequence,
    list: &'a [Observable],
    centering: &'a Centering,
    budget: HBudget,
    seed: u64,
}

impl HContext<'_> {
    fn centered(&self, j: usize, p: &ProjectivePoint) -> Result<f64> {
        Ok(observable_at(self.list, j).eval(p)? - self.centering.at(j))
    }

    /// `h_j(x)` with the standard error of its sampled part. `key` selects the path streams.
    fn h(&self, j: usize, x: &ProjectivePoint, key: u64) -> Result<(f64, f64)> {
        let m = j.min(self.budget.max_depth);
        let k = m.min(self.budget.full_cap);
        let mut value = 0.0;
        if k > 0 {
            let tree = preimage_tree_at(self.seq, j - k, x, k, TreeMode::Full, FULL_TREE_MAX)?;
            for l in 1..=k {
                let mut acc = 0.0;
                for node in &tree.levels[l] {
                    acc += node.multiplicity as f64 * self.centered(j - l, &node.point)?;
                }
                value += acc / tree.level_total(l) as f64;
            }
        }
        if m == k {
            return Ok((value, 0.0));
        }
        let s = seeding::derive(self.seed, domain::MARTINGALE, key);
        let mut tails = Vec::with_capacity(self.budget.paths);
        for p in 0..self.budget.paths {
            let mut rng = seeding::stream(s, domain::PREIMAGE_PATHS, p as u64);
            let path = backward_path(self.seq, j - m, x, m, &mut rng)?;
            let mut v = 0.0;
            for (l, y) in path.iter().enumerate().take(m + 1).skip(k + 1) {
                v += self.centered(j - l, y)?;
            }
            tails.push(v);
        }
        let (mean, var) = mean_var(&tails);
        Ok((value + mean, (var / tails.len() as f64).sqrt()))
    }
}

fn stream_key(traj: usize, j: usize, tag: u64) -> u64 {
    ((traj as u64) << 24) ^ ((j as u64) << 4) ^ tag
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MartingaleDecomposition {
    pub n_max: usize,
    pub count: usize,
    pub seed: u64,
    pub budget: HBudget,
    pub centering: Vec<f64>,
    /// `h_j(y_j)`, row-major `count x (n_max + 1)`.
    pub h: Vec<f64>,
    pub h_stderr: Vec<f64>,
    /// `U_j`, row-major `count x n_max`.
    pub u: Vec<f64>,
    /// Centered increments `psi_j(y_j) - c_j` on the same trajectories.
    pub x: Vec<f64>,
    /// `nu_n^2 = sum_{j<n} mean(U_j^2)` for `n = 0..=n_max`.
    pub nu2: Vec<f64>,
    /// `E[U_j^2 | B_{j+1}]` along each trajectory, when requested.
    pub conditional: Option<Vec<f64>>,
}

impl MartingaleDecomposition {
    fn row<'a>(&self, v: &'a [f64], i: usize, width: usize) -> &'a [f64] {
        &v[i * width..(i + 1) * width]
    }

    pub fn u_row(&self, i: usize) -> &[f64] {
        self.row(&self.u, i, self.n_max)
    }

    pub fn h_row(&self, i: usize) -> &[f64] {
        self.row(&self.h, i, self.n_max + 1)
    }

    pub fn birkhoff(&self) -> BirkhoffSample {
        BirkhoffSample {
            n_max: self.n_max,
            count: self.count,
            seed: self.seed,
            increments: self.x.clone(),
            centering: self.centering.clone(),
        }
    }

    /// Largest `|sum_{j<n} U_j - (S_n - h_n(y_n))|` over trajectories and `n`.
    pub fn telescoping_residual(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.count {
            let (u, h) = (self.u_row(i), self.h_row(i));
            let x = self.row(&self.x, i, self.n_max);
            let (mut su, mut s) = (0.0, 0.0);
            for n in 1..=self.n_max {
                su += u[n - 1];
                s += x[n - 1];
                worst = worst.max((su - (s - h[n])).abs());
            }
        }
        worst
    }

    /// Largest standard error of any sampled `h` evaluation.
    pub fn max_h_stderr(&self) -> f64 {
        self.h_stderr.iter().copied().fold(0.0, f64::max)
    }

    fn u_col(&self, j: usize) -> Vec<f64> {
        (0..self.count).map(|i| self.u_row(i)[j]).collect()
    }

    /// Pairwise covariances of the `U_j` and the variance of their sum against `nu_n^2`.
    pub fn orthogonality(&self) -> OrthogonalityReport {
        let cols: Vec<Vec<f64>> = (0..self.n_max).map(|j| self.u_col(j)).collect();
        let means: Vec<f64> = cols.iter().map(|c| mean_var(c).0).collect();
        let max_lag = if self.n_max <= 64 { self.n_max } else { 8 };
        let (mut pairs, mut exceed, mut max_z) = (0usize, 0usize, 0.0f64);
        for a in 0..self.n_max {
            for b in a + 1..self.n_max.min(a + max_lag + 1) {
                let w: Vec<f64> = cols[a].iter().zip(&cols[b]).map(|(x, y)| (x - means[a]) * (y - means[b])).collect();
                let (m, var) = mean_var(&w);
                let se = (var / w.len() as f64).sqrt();
                let z = if se > 0.0 { m.abs() / se } else if m == 0.0 { 0.0 } else { f64::INFINITY };
                pairs += 1;
                max_z = max_z.max(z);
                if z > 3.0 {
                    exceed += 1;
                }
            }
        }
        let sums: Vec<f64> = (0..self.count).map(|i| self.u_row(i).iter().sum()).collect();
        let (m, var) = mean_var(&sums);
        let var_stderr = variance_stderr(&sums, m, var);
        let nu2 = self.nu2[self.n_max];
        let sum_z = if var_stderr > 0.0 { (nu2 - var).abs() / var_stderr } else { 0.0 };
        let allowed = ((pairs as f64) * ORTHOGONALITY_ALLOWANCE).ceil().max(1.0) as usize;
        let pass = exceed <= allowed && sum_z <= 3.0;
        OrthogonalityReport { pairs, exceed, allowed, max_z, nu2, sum_variance: var, sum_variance_stderr: var_stderr, sum_z, pass }
    }
}

/// Fraction of pairs allowed beyond three standard errors (the null rate is 0.27%).
pub const ORTHOGONALITY_ALLOWANCE: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OrthogonalityReport {
    pub pairs: usize,
    /// Pairs with `|Cov(U_i, U_j)|` beyond three standard errors.
    pub exceed: usize,
    pub allowed: usize,
    pub max_z: f64,
    pub nu2: f64,
    pub sum_variance: f64,
    pub sum_variance_stderr: f64,
    pub sum_z: f64,
    pub pass: bool,
}

/// Builds `h_j` and `U_j` along `count` trajectories of length `n_max`.
///
/// With `conditional`, also evaluates `E[U_j^2 | B_{j+1}] = P_j(phi_j^2)(y_{j+1})`,
/// which costs `h_j` at every sibling of `y_j`.
pub fn martingale_decompose(
    seq: &MapSequence,
    list: &[Observable],
    n_max: usize,
    count: usize,
    budget: HBudget,
    conditional: bool,
    opts: &SampleOptions,
) -> Result<MartingaleDecomposition> {
    check_list(list, n_max)?;
    budget.validate(seq.degree())?;
    if count < 2 || n_max == 0 {
        return Err(Error::InvalidArgument("need at least two trajectories and one step".into()));
    }
    let centering = centering_constants(seq, list, n_max, opts)?;
    let ctx = HContext { seq, list, centering: &centering, budget, seed: opts.seed };
    let d = seq.degree() as f64;

    struct Row {
        h: Vec<f64>,
        hs: Vec<f64>,
        u: Vec<f64>,
        x: Vec<f64>,
        cv: Vec<f64>,
    }
    let rows = (0..count)
        .into_par_iter()
        .map(|i| {
            let y = trajectory(seq, n_max, opts, i)?;
            let mut h = Vec::with_capacity(n_max + 1);
            let mut hs = Vec::with_capacity(n_max + 1);
            for (j, yj) in y.iter().enumerate() {
                let (v, s) = ctx.h(j, yj, stream_key(i, j, 0))?;
                h.push(v);
                hs.push(s);
            }
            let x = (0..n_max).map(|j| ctx.centered(j, &y[j])).collect::<Result<Vec<f64>>>()?;
            let u: Vec<f64> = (0..n_max).map(|j| x[j] + h[j] - h[j + 1]).collect();
            let mut cv = Vec::new();
            if conditional {
                for j in 0..n_max {
                    let f = seq.map(j)?;
                    let fiber = preimages(&f, &y[j + 1])?;
                    let mut acc = 0.0;
                    for (k, (sib, mult)) in fiber.points.iter().enumerate() {
                        let hj = if sib.dist(&y[j]) < 1e-12 { h[j] } else { ctx.h(j, sib, stream_key(i, j, 1 + k as u64))?.0 };
                        let phi = ctx.centered(j, sib)? + hj - h[j + 1];
                        acc += *mult as f64 * phi * phi;
                    }
                    cv.push(acc / d);
                }
            }
            Ok(Row { h, hs, u, x, cv })
        })
        .collect::<Result<Vec<Row>>>()?;

    let mut nu2 = vec![0.0; n_max + 1];
    for j in 0..n_max {
        let m = rows.iter().map(|r| r.u[j] * r.u[j]).sum::<f64>() / count as f64;
        nu2[j + 1] = nu2[j] + m;
    }
    let mut md = MartingaleDecomposition {
        n_max,
        count,
        seed: opts.seed,
        budget,
        centering: (0..n_max).map(|j| centering.at(j)).collect(),
        h: Vec::with_capacity(count * (n_max + 1)),
        h_stderr: Vec::with_capacity(count * (n_max + 1)),
        u: Vec::with_capacity(count * n_max),
        x: Vec::with_capacity(count * n_max),
        nu2,
        conditional: None,
    };
    let mut cv = Vec::new();
    for r in rows {
        md.h.extend(r.h);
        md.h_stderr.extend(r.hs);
        md.u.extend(r.u);
        md.x.extend(r.x);
        cv.extend(r.cv);
    }
    if conditional {
        md.conditional = Some(cv);
    }
    Ok(md)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct IdentityRow {
    pub j: usize,
    /// Largest `|P_j(psi_j + h_j)(x) - h_{j+1}(x)|` over the points.
    pub max_residual: f64,
    /// Largest combined standard error of the two sides.
    pub max_stderr: f64,
}

/// `P_j(psi_j + h_j) - h_{j+1}` at `points` uniformly random points for each `j <= j_max`.
pub fn defining_identity_check(
    seq: &MapSequence,
    list: &[Observable],
    budget: HBudget,
    j_max: usize,
    points: usize,
    opts: &SampleOptions,
) -> Result<Vec<IdentityRow>> {
    check_list(list, j_max + 1)?;
    budget.validate(seq.degree())?;
    let centering = centering_constants(seq, list, j_max + 1, opts)?;
    let ctx = HContext { seq, list, centering: &centering, budget, seed: seeding::child_seed(opts.seed, domain::MARTINGALE, 1) };
    let d = seq.degree() as f64;
    (0..=j_max)
        .map(|j| {
            let f = seq.map(j)?;
            let res = (0..points)
                .into_par_iter()
                .map(|k| {
                    let mut rng = seeding::stream(opts.seed, domain::MARTINGALE, (j * points + k) as u64);
                    let x = random_sphere_point(&mut rng);
                    let (rhs, rhs_se) = ctx.h(j + 1, &x, stream_key(k, j + 1, 0))?;
                    let fiber = preimages(&f, &x)?;
                    let (mut lhs, mut var) = (0.0, 0.0);
                    for (m, (y, mult)) in fiber.points.iter().enumerate() {
                        let (hv, hs) = ctx.h(j, y, stream_key(k, j, 1 + m as u64))?;
                        let w = *mult as f64 / d;
                        lhs += w * (ctx.centered(j, y)? + hv);
                        var += w * w * hs * hs;
                    }
                    Ok(((lhs - rhs).abs(), (var + rhs_se * rhs_se).sqrt()))
                })
                .collect::<Result<Vec<(f64, f64)>>>()?;
            Ok(IdentityRow {
                j,
                max_residual: res.iter().map(|r| r.0).fold(0.0, f64::max),
                max_stderr: res.iter().map(|r| r.1).fold(0.0, f64::max),
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct VarianceRelationsRow {
    pub n: usize,
    /// Standard deviation of `S_n`.
    pub sigma: f64,
    /// Standard deviation of `sum_{j<n} U_j`.
    pub nu: f64,
    /// `sqrt(sum_{j<n} mean(U_j^2))`.
    pub nu_from_sum: f64,
    pub gap: f64,
    /// `||h_n(y_n)||_{L^2}` over trajectories.
    pub h_l2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VarianceRelations {
    pub rows: Vec<VarianceRelationsRow>,
    pub sup_gap: f64,
    pub sup_h: f64,
    /// Fitted slopes against `n`, with standard errors.
    pub gap_slope: (f64, f64),
    pub h_slope: (f64, f64),
    pub stat: StatReport,
}

/// Slopes below this are flat whatever their standard error.
const FLAT_SLOPE: f64 = 1e-9;

fn no_growth(slope: (f64, f64)) -> bool {
    slope.0 <= 2.0 * slope.1 + FLAT_SLOPE
}

/// `|sigma_n - nu_n|` and `||h_n||_{L^2}` across `n`; both must show no
/// growth over the second half of the grid.
pub fn variance_relations(md: &MartingaleDecomposition, b: &BirkhoffSample) -> Result<VarianceRelations> {
    let same = b.seed == md.seed
        && b.count == md.count
        && b.n_max >= md.n_max
        && (0..md.count).all(|i| {
            b.increments(i)[..md.n_max].iter().zip(&md.x[i * md.n_max..(i + 1) * md.n_max]).all(|(p, q)| (p - q).abs() <= 1e-12)
        });
    if !same {
        return Err(Error::InvalidArgument("Birkhoff sample and decomposition use different trajectories".into()));
    }
    let mut rows = Vec::new();
    for n in report_grid(md.n_max) {
        let s = b.sums_at(n);
        let su: Vec<f64> = (0..md.count).map(|i| md.u_row(i)[..n].iter().sum()).collect();
        let hn: Vec<f64> = (0..md.count).map(|i| md.h_row(i)[n]).collect();
        let sigma = mean_var(&s).1.sqrt();
        let nu = mean_var(&su).1.sqrt();
        let h_l2 = (hn.iter().map(|v| v * v).sum::<f64>() / md.count as f64).sqrt();
        rows.push(VarianceRelationsRow { n, sigma, nu, nu_from_sum: md.nu2[n].sqrt(), gap: (sigma - nu).abs(), h_l2 });
    }
    // Trends over the second half of the grid, past the transient of the first few h_j.
    let tail: Vec<&VarianceRelationsRow> = rows.iter().filter(|r| 2 * r.n >= md.n_max).collect();
    let x: Vec<f64> = tail.iter().map(|r| r.n as f64).collect();
    let slope = |y: Vec<f64>| linear_fit(&x, &y).map(|f| (f.slope, f.slope_stderr)).unwrap_or((0.0, 0.0));
    let gap_slope = slope(tail.iter().map(|r| r.gap).collect());
    let h_slope = slope(tail.iter().map(|r| r.h_l2).collect());
    let sup_gap = rows.iter().map(|r| r.gap).fold(0.0, f64::max);
    let sup_h = rows.iter().map(|r| r.h_l2).fold(0.0, f64::max);
    let pass = no_growth(gap_slope) && no_growth(h_slope);
    let stat = StatReport {
        test: "variance relations".into(),
        statistic: gap_slope.0,
        threshold: 2.0 * gap_slope.1 + FLAT_SLOPE,
        pass,
        count: md.count,
        seed: md.seed,
    };
    Ok(VarianceRelations { rows, sup_gap, sup_h, gap_slope, h_slope, stat })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AsipReport {
    pub gamma: f64,
    pub eps: f64,
    /// `a_n / nu_n^2` non-increasing and `a_n / nu_n` non-decreasing on the fitted `nu_n^2`.
    pub monotone_fitted: bool,
    /// The same on the empirical `nu_n^2`.
    pub monotone_empirical: bool,
    /// `(j, mean U_j^4)` on the report grid.
    pub fourth_moments: Vec<(usize, f64)>,
    pub sup_fourth_moment: f64,
    /// Largest over smallest fourth moment for `j >= 1`.
    pub moment_spread: f64,
    /// `(j, a_j^{-2} mean U_j^4, partial sum)` on the report grid.
    pub series: Vec<(usize, f64, f64)>,
    pub tail_index: usize,
    pub tail_increment: f64,
    pub tail_tol: f64,
    /// Fitted `p` in `a_j^{-2} E U_j^4 ~ j^{-p}` over the last half; summable iff `p > 1`.
    pub decay_exponent: Option<f64>,
    /// `(n, median |sum_{j<n} (E[U_j^2|B_{j+1}] - E U_j^2)| / a_n)` when conditional variances were computed.
    pub conditional_ratios: Option<Vec<(usize, f64)>>,
    pub stat: StatReport,
}

/// Lower end of the admissible `gamma` range for a given `eps`.
pub fn gamma_lower(eps: f64) -> f64 {
    (1.0 + eps) / (1.0 + 4.0 * eps)
}

/// Side conditions of the almost sure invariance principle for the `U_j`, with `a_n = nu_n^{2 gamma}` and `q = 2`.
pub fn asip_condition_check(
    md: &MartingaleDecomposition,
    gamma: f64,
    eps: f64,
    tail_index: usize,
    tail_tol: f64,
) -> Result<AsipReport> {
    if !(eps > 0.0) || !(gamma > gamma_lower(eps) && gamma < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "gamma = {gamma} must lie in ({:.4}, 1) for eps = {eps}",
            gamma_lower(eps)
        )));
    }
    if tail_index == 0 || tail_index >= md.n_max {
        return Err(Error::InvalidArgument(format!("tail index {tail_index} must lie in 1..{}", md.n_max)));
    }
    let n = md.n_max;
    let a = |nu2: f64| nu2.powf(gamma);
    let monotone = |nu2: &[f64]| {
        let valid: Vec<f64> = nu2.iter().copied().filter(|v| *v > 0.0).collect();
        valid.windows(2).all(|w| {
            let (r0, r1) = (a(w[0]) / w[0], a(w[1]) / w[1]);
            let (s0, s1) = (a(w[0]) / w[0].sqrt(), a(w[1]) / w[1].sqrt());
            r1 <= r0 && s1 >= s0
        })
    };
    let idx: Vec<f64> = (1..=n).map(|j| j as f64).collect();
    let fit = linear_fit(&idx, &md.nu2[1..]);
    let fitted: Vec<f64> = fit.map(|f| idx.iter().map(|&j| f.predict(j)).collect()).unwrap_or_default();
    let monotone_fitted = fit.is_some_and(|f| f.slope > 0.0) && monotone(&fitted);
    let monotone_empirical = monotone(&md.nu2[1..]);

    let m4: Vec<f64> = (0..n).map(|j| md.u_col(j).iter().map(|u| u.powi(4)).sum::<f64>() / md.count as f64).collect();
    let sup_fourth_moment = m4.iter().copied().fold(0.0, f64::max);
    let min4 = m4[1..].iter().copied().fold(f64::INFINITY, f64::min);
    let moment_spread = if min4 > 0.0 { sup_fourth_moment / min4 } else { f64::INFINITY };
    let mut terms = vec![0.0; n];
    for j in 1..n {
        let aj = a(md.nu2[j]);
        terms[j] = if aj > 0.0 { m4[j] / (aj * aj) } else { 0.0 };
    }
    let mut partial = vec![0.0; n];
    for j in 1..n {
        partial[j] = partial[j - 1] + terms[j];
    }
    let grid: Vec<usize> = report_grid(n - 1);
    let series = grid.iter().map(|&j| (j, terms[j], partial[j])).collect();
    let fourth_moments = grid.iter().map(|&j| (j, m4[j])).collect();
    let tail_increment = terms[tail_index];
    let half: Vec<usize> = (n / 2..n).filter(|&j| terms[j] > 0.0).collect();
    let decay_exponent = linear_fit(
        &half.iter().map(|&j| (j as f64).ln()).collect::<Vec<_>>(),
        &half.iter().map(|&j| terms[j].ln()).collect::<Vec<_>>(),
    )
    .map(|f| -f.slope);

    let conditional_ratios = md.conditional.as_ref().map(|cv| {
        let mean_u2: Vec<f64> = (0..n).map(|j| md.nu2[j + 1] - md.nu2[j]).collect();
        [n / 4, n / 2, n]
            .iter()
            .filter(|&&m| m > 0)
            .map(|&m| {
                let mut r: Vec<f64> = (0..md.count)
                    .map(|i| {
                        let row = &cv[i * n..(i + 1) * n];
                        (0..m).map(|j| row[j] - mean_u2[j]).sum::<f64>().abs() / a(md.nu2[m])
                    })
                    .collect();
                r.sort_by(f64::total_cmp);
                (m, r[r.len() / 2])
            })
            .collect::<Vec<_>>()
    });
    let conditional_ok = conditional_ratios.as_ref().is_none_or(|r| r.windows(2).all(|w| w[1].1 <= w[0].1));
    let summable = tail_increment < tail_tol && decay_exponent.is_none_or(|p| p > 1.0);
    let pass = monotone_fitted && summable && conditional_ok;
    let stat = StatReport { test: "asip conditions".into(), statistic: tail_increment, threshold: tail_tol, pass, count: md.count, seed: md.seed };
    Ok(AsipReport {
        gamma,
        eps,
        monotone_fitted,
        monotone_empirical,
        fourth_moments,
        sup_fourth_moment,
        moment_spread,
        series,
        tail_index,
        tail_increment,
        tail_tol,
        decay_exponent,
        conditional_ratios,
        stat,
    })
}
