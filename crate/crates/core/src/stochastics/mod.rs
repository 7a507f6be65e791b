//! Birkhoff sums along the sequence and their limit-theorem diagnostics.
//!
//! Trajectories are read off backward paths: a uniformly random backward
//! path of length `n + depth` from a base point, reversed, is a forward orbit
//! `y_0, ..., y_n` with `f_j(y_j) = y_{j+1}` whose start is distributed like
//! a depth-`(n + depth)` sample of `mu_0`. Forward iteration in floating
//! point would instead drift off the Julia set within a few dozen steps.

mod limit;
mod martingale;
mod mixing;
mod slln;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fit::linear_fit;
use crate::geometry::ProjectivePoint;
use crate::maps::MapSequence;
use crate::measure::{default_base, integrate, sample_equilibrium, IntegralEstimate, DEFAULT_DEPTH};
use crate::observable::Observable;
use crate::preimage::backward_path;
use crate::seeding::{self, domain};

pub use limit::{clt_test, ks_distance, ks_p_value, lil_check, CltReport, CltRow, LilReport, LIL_BAND};
pub use martingale::{
    asip_condition_check, defining_identity_check, gamma_lower, martingale_decompose, variance_relations, AsipReport, HBudget,
    IdentityRow, MartingaleDecomposition, OrthogonalityReport, VarianceRelations, VarianceRelationsRow,
};
pub use mixing::{mixing_check, multicorrelation_check, MixingReport, MixingRow, MulticorrelationReport};
pub use slln::{slln_check, CovarianceRow, SllnReport, SllnRow};

/// Headline verdict shared by every statistical check.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StatReport {
    pub test: String,
    pub statistic: f64,
    pub threshold: f64,
    pub pass: bool,
    pub count: usize,
    pub seed: u64,
}

/// Sampling parameters shared by the trajectory-based checks.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SampleOptions {
    /// Extra backward depth beyond the trajectory length.
    pub depth: usize,
    pub base: ProjectivePoint,
    pub seed: u64,
    /// Samples behind each centering constant.
    pub centering_count: usize,
}

impl SampleOptions {
    pub fn new(seed: u64) -> Self {
        SampleOptions { depth: DEFAULT_DEPTH, base: default_base(), seed, centering_count: 100_000 }
    }
}

/// The observable applied at step `j`: a single observable is reused.
fn observable_at(list: &[Observable], j: usize) -> &Observable {
    if list.len() == 1 {
        &list[0]
    } else {
        &list[j]
    }
}

fn check_list(list: &[Observable], n: usize) -> Result<()> {
    if list.is_empty() || (list.len() > 1 && list.len() < n) {
        return Err(Error::InvalidArgument(format!(
            "need one observable or at least {n}, got {}",
            list.len()
        )));
    }
    Ok(())
}

/// Orbit `y_0, ..., y_n` of trajectory `index`, with `f_j(y_j) = y_{j+1}`.
pub fn trajectory(seq: &MapSequence, n: usize, opts: &SampleOptions, index: usize) -> Result<Vec<ProjectivePoint>> {
    let mut rng = seeding::stream(opts.seed, domain::ORBITS, index as u64);
    let mut path = backward_path(seq, 0, &opts.base, n + opts.depth, &mut rng)?;
    path.truncate(n + opts.depth + 1);
    path.reverse();
    path.truncate(n + 1);
    Ok(path)
}

/// Per-tail centering constants `<mu_j, psi_j>`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Centering {
    pub values: Vec<IntegralEstimate>,
}

impl Centering {
    pub fn at(&self, j: usize) -> f64 {
        if self.values.len() == 1 {
            self.values[0].value
        } else {
            self.values[j].value
        }
    }

    pub fn stderr_at(&self, j: usize) -> f64 {
        if self.values.len() == 1 {
            self.values[0].stderr
        } else {
            self.values[j].stderr
        }
    }

    /// No centering.
    pub fn none(n: usize) -> Self {
        Centering { values: vec![IntegralEstimate { value: 0.0, stderr: 0.0, count: 0 }; n.max(1)] }
    }
}

/// `<mu_j, psi_j>` for `j < n`.
///
/// A constant sequence with a single observable has `mu_j = mu_0` and shares
/// one cloud. Otherwise each estimate is read off an independent batch of
/// backward paths, whose time-`j` points sample `mu_j`.
pub fn centering_constants(seq: &MapSequence, list: &[Observable], n: usize, opts: &SampleOptions) -> Result<Centering> {
    check_list(list, n)?;
    let seed = seeding::child_seed(opts.seed, domain::CENTERING, 0);
    if list.len() == 1 {
        if let Some(c) = list[0].constant_value() {
            return Ok(Centering { values: vec![IntegralEstimate { value: c, stderr: 0.0, count: 0 }] });
        }
        if seq.is_constant() {
            let cloud = sample_equilibrium(seq, 0, opts.depth, opts.centering_count, &opts.base, seed)?;
            return Ok(Centering { values: vec![integrate(&cloud, &list[0])?] });
        }
    }
    let copts = SampleOptions { seed, ..opts.clone() };
    let rows = (0..opts.centering_count)
        .into_par_iter()
        .map(|i| {
            let y = trajectory(seq, n, &copts, i)?;
            (0..n).map(|j| observable_at(list, j).eval(&y[j])).collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let values = (0..n)
        .map(|j| {
            let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            IntegralEstimate::from_values(&col)
        })
        .collect();
    Ok(Centering { values })
}

/// Centered increments `X_j = psi_j(y_j) - <mu_j, psi_j>` for each trajectory.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BirkhoffSample {
    pub n_max: usize,
    pub count: usize,
    pub seed: u64,
    /// Row-major `count x n_max`.
    pub increments: Vec<f64>,
    pub centering: Vec<f64>,
}

impl BirkhoffSample {
    pub fn from_increments(n_max: usize, count: usize, seed: u64, increments: Vec<f64>) -> Result<Self> {
        if increments.len() != n_max * count {
            return Err(Error::InvalidArgument("increment array has the wrong shape".into()));
        }
        Ok(BirkhoffSample { n_max, count, seed, increments, centering: vec![0.0; n_max] })
    }

    /// I.i.d. standard normal increments, for engine self-tests.
    pub fn synthetic_gaussian(n_max: usize, count: usize, seed: u64) -> Self {
        use rand::Rng;
        let increments = (0..count)
            .into_par_iter()
            .flat_map_iter(|i| {
                let rng = seeding::stream(seed, domain::SYNTHETIC, i as u64);
                rng.sample_iter(rand_distr::StandardNormal).take(n_max).collect::<Vec<f64>>()
            })
            .collect();
        BirkhoffSample { n_max, count, seed, increments, centering: vec![0.0; n_max] }
    }

    pub fn increments(&self, i: usize) -> &[f64] {
        &self.increments[i * self.n_max..(i + 1) * self.n_max]
    }

    /// `S_0, ..., S_{n_max}` of trajectory `i`.
    pub fn partial_sums(&self, i: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_max + 1);
        let mut s = 0.0;
        out.push(s);
        for x in self.increments(i) {
            s += x;
            out.push(s);
        }
        out
    }

    /// `S_n` across trajectories.
    pub fn sums_at(&self, n: usize) -> Vec<f64> {
        (0..self.count).map(|i| self.increments(i)[..n].iter().sum()).collect()
    }
}

/// Birkhoff sums of `count` trajectories of length `n_max`.
///
/// `list` holds one observable, centered per tail, or at least `n_max`.
pub fn birkhoff_sums(seq: &MapSequence, list: &[Observable], n_max: usize, count: usize, opts: &SampleOptions) -> Result<BirkhoffSample> {
    let centering = centering_constants(seq, list, n_max, opts)?;
    birkhoff_with(seq, list, n_max, count, opts, &centering)
}

pub(crate) fn birkhoff_with(
    seq: &MapSequence,
    list: &[Observable],
    n_max: usize,
    count: usize,
    opts: &SampleOptions,
    centering: &Centering,
) -> Result<BirkhoffSample> {
    check_list(list, n_max)?;
    if count < 2 || n_max == 0 {
        return Err(Error::InvalidArgument("need at least two trajectories and one step".into()));
    }
    let c: Vec<f64> = (0..n_max).map(|j| centering.at(j)).collect();
    let increments = (0..count)
        .into_par_iter()
        .map(|i| {
            let y = trajectory(seq, n_max, opts, i)?;
            (0..n_max).map(|j| Ok(observable_at(list, j).eval(&y[j])? - c[j])).collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?
        .concat();
    Ok(BirkhoffSample { n_max, count, seed: opts.seed, increments, centering: c })
}

/// Sample mean and unbiased variance.
pub(crate) fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 { v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (m, var)
}

/// Standard error of the sample variance.
fn variance_stderr(v: &[f64], mean: f64, var: f64) -> f64 {
    let n = v.len() as f64;
    let m4 = v.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
    ((m4 - var * var).max(0.0) / n).sqrt()
}

/// Indices at which per-`n` statistics are reported: every `n` up to 64, a
/// geometric grid beyond.
pub fn report_grid(n_max: usize) -> Vec<usize> {
    if n_max <= 64 {
        return (1..=n_max).collect();
    }
    let mut out: Vec<usize> = (1..=16).collect();
    let mut x = 16.0f64;
    while (x as usize) < n_max {
        x *= 2f64.powf(0.25);
        let k = (x.round() as usize).min(n_max);
        if k > *out.last().unwrap() {
            out.push(k);
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct VarianceRow {
    pub n: usize,
    pub variance: f64,
    pub stderr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VarianceCurve {
    pub rows: Vec<VarianceRow>,
    /// Fitted `b` in `sigma_n ~ n^b`, over `n >= 2` with positive variance.
    pub exponent: Option<f64>,
    /// Required growth exponent `1/4 + eps`.
    pub required: f64,
    pub stat: StatReport,
}

/// Allowed shortfall of the fitted growth exponent.
pub const EXPONENT_TOL: f64 = 0.05;

/// `sigma_n^2 = Var(S_n)` for each `n` and the growth-exponent verdict.
pub fn variance_curve(b: &BirkhoffSample, eps: f64) -> VarianceCurve {
    let mut rows = Vec::new();
    for n in report_grid(b.n_max) {
        let s = b.sums_at(n);
        let (m, var) = mean_var(&s);
        rows.push(VarianceRow { n, variance: var, stderr: variance_stderr(&s, m, var) });
    }
    let kept: Vec<&VarianceRow> = rows.iter().filter(|r| r.n >= 2 && r.variance > 0.0).collect();
    let x: Vec<f64> = kept.iter().map(|r| (r.n as f64).ln()).collect();
    let y: Vec<f64> = kept.iter().map(|r| 0.5 * r.variance.ln()).collect();
    let exponent = linear_fit(&x, &y).map(|f| f.slope);
    let required = 0.25 + eps;
    let pass = exponent.is_some_and(|e| e >= required - EXPONENT_TOL);
    let stat = StatReport {
        test: "variance growth".into(),
        statistic: exponent.unwrap_or(0.0),
        threshold: required - EXPONENT_TOL,
        pass,
        count: b.count,
        seed: b.seed,
    };
    VarianceCurve { rows, exponent, required, stat }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ErgodicReport {
    pub n: usize,
    /// `||(1/m) S_m||_{L^2}` at `m = n` and `m = 2n`, with standard errors.
    pub l2_n: f64,
    pub l2_2n: f64,
    pub stderr_n: f64,
    pub stderr_2n: f64,
    /// `c / sqrt(2n)` with `c` fitted at `n`, with slack.
    pub threshold: f64,
    /// Largest `|(1/2n) S_2n|` over trajectories.
    pub sup_2n: f64,
    pub stat: StatReport,
}

/// Slack on the `1/sqrt(n)` extrapolation in the ergodic verdict.
pub const ERGODIC_SLACK: f64 = 1.1;

fn rms_with_stderr(v: &[f64]) -> (f64, f64) {
    let sq: Vec<f64> = v.iter().map(|x| x * x).collect();
    let (m, var) = mean_var(&sq);
    let rms = m.sqrt();
    // Delta method for the square root.
    let se = if rms > 0.0 { (var / sq.len() as f64).sqrt() / (2.0 * rms) } else { 0.0 };
    (rms, se)
}

/// L² norm of the centered ergodic average at `n` and `2n`.
///
/// Passes when the norm decreases and the value at `2n` lies below the
/// `c/sqrt(n)` line fitted at `n` (with slack and three standard errors),
/// and below `abs_threshold` when one is given.
pub fn ergodic_average_check(
    seq: &MapSequence,
    psi: &Observable,
    n: usize,
    count: usize,
    abs_threshold: Option<f64>,
    opts: &SampleOptions,
) -> Result<ErgodicReport> {
    let b = birkhoff_sums(seq, std::slice::from_ref(psi), 2 * n, count, opts)?;
    let a_n: Vec<f64> = b.sums_at(n).iter().map(|s| s / n as f64).collect();
    let a_2n: Vec<f64> = b.sums_at(2 * n).iter().map(|s| s / (2 * n) as f64).collect();
    let (l2_n, stderr_n) = rms_with_stderr(&a_n);
    let (l2_2n, stderr_2n) = rms_with_stderr(&a_2n);
    let mut threshold = ERGODIC_SLACK * l2_n * (n as f64).sqrt() / ((2 * n) as f64).sqrt() + 3.0 * stderr_2n;
    if let Some(t) = abs_threshold {
        threshold = threshold.min(t);
    }
    let degenerate = l2_n == 0.0 && l2_2n == 0.0;
    let pass = degenerate || (l2_2n < l2_n && l2_2n <= threshold);
    let sup_2n = a_2n.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let stat = StatReport { test: "ergodic average".into(), statistic: l2_2n, threshold, pass, count, seed: opts.seed };
    Ok(ErgodicReport { n, l2_n, l2_2n, stderr_n, stderr_2n, threshold, sup_2n, stat })
}

/// `|<mu_n, psi>| + 2` against `||psi||_{L^1} + 2` for a `dsh(a, b)` observable.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SurrogateComparison {
    /// `(n, |<mu_n, psi>| + pole mass)`.
    pub rows: Vec<(usize, f64)>,
    pub reference: f64,
    /// Largest ratio in either direction.
    pub factor: f64,
    pub pass: bool,
}

/// Total pole mass of the `dsh(a, b)` family.
pub const DSH_POLE_MASS: f64 = 2.0;

pub fn dsh_surrogate_comparison(
    seq: &MapSequence,
    psi: &Observable,
    n_range: &[usize],
    count: usize,
    opts: &SampleOptions,
) -> Result<SurrogateComparison> {
    let reference = psi.l1_fubini_study() + DSH_POLE_MASS;
    let mut rows = Vec::new();
    let mut factor: f64 = 1.0;
    for &n in n_range {
        let cloud = sample_equilibrium(seq, n, opts.depth, count, &opts.base, opts.seed)?;
        let v = integrate(&cloud, psi)?.value.abs() + DSH_POLE_MASS;
        factor = factor.max(v / reference).max(reference / v);
        rows.push((n, v));
    }
    Ok(SurrogateComparison { rows, reference, factor, pass: factor <= 10.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maps::HomogeneousMap;
    use crate::observable::make_observable;

    pub(super) fn squaring() -> MapSequence {
        MapSequence::constant(HomogeneousMap::power(2).unwrap())
    }

    #[test]
    fn trajectories_are_orbits() {
        let seq = MapSequence::perturbed(HomogeneousMap::power(2).unwrap(), 0.05, 9).unwrap();
        let opts = SampleOptions::new(1);
        for i in 0..20 {
            let y = trajectory(&seq, 12, &opts, i).unwrap();
            assert_eq!(y.len(), 13);
            for j in 0..12 {
                let img = seq.map(j).unwrap().evaluate(&y[j]).unwrap();
                assert!(img.dist(&y[j + 1]) < 1e-8, "{i} {j}");
            }
        }
    }

    #[test]
    fn harmonic_trajectory_doubles_angles() {
        let opts = SampleOptions::new(2);
        let psi = Observable::harmonic(1);
        for i in 0..10 {
            let y = trajectory(&squaring(), 10, &opts, i).unwrap();
            let theta = y[0].to_affine().unwrap().arg();
            for (j, p) in y.iter().enumerate() {
                let expected = (2f64.powi(j as i32) * theta).cos();
                assert!((psi.eval(p).unwrap() - expected).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn increments_and_zero_observable() {
        let mut opts = SampleOptions::new(3);
        opts.centering_count = 1000;
        let psi = make_observable("holder(0.5, 0.2+0.1i)").unwrap();
        let b = birkhoff_sums(&squaring(), std::slice::from_ref(&psi), 8, 50, &opts).unwrap();
        for i in 0..50 {
            let y = trajectory(&squaring(), 8, &opts, i).unwrap();
            let s = b.partial_sums(i);
            assert_eq!(s[0], 0.0);
            for j in 0..8 {
                assert_eq!(s[j + 1] - s[j], b.increments(i)[j]);
                assert_eq!(b.increments(i)[j], psi.eval(&y[j]).unwrap() - b.centering[j]);
            }
        }
        let z = birkhoff_sums(&squaring(), &[Observable::zero()], 8, 50, &opts).unwrap();
        assert!(z.increments.iter().all(|v| *v == 0.0));
        assert!(variance_curve(&z, 0.25).rows.iter().all(|r| r.variance == 0.0));
    }

    #[test]
    fn lacunary_variance_is_half_n() {
        let mut opts = SampleOptions::new(4);
        opts.centering_count = 20_000;
        let b = birkhoff_sums(&squaring(), &[Observable::harmonic(1)], 12, 20_000, &opts).unwrap();
        let vc = variance_curve(&b, 0.2);
        for r in &vc.rows[1..] {
            let target = r.n as f64 / 2.0;
            assert!((r.variance - target).abs() < 4.0 * r.stderr + 0.03 * target, "{r:?}");
        }
        assert!((vc.exponent.unwrap() - 0.5).abs() < 0.03);
        assert!(vc.stat.pass);
    }

    #[test]
    fn coboundary_variance_stays_bounded() {
        let f = HomogeneousMap::power(2).unwrap();
        let zeta = Observable::harmonic(1);
        let psi = Observable::custom("coboundary", crate::observable::Regularity::Smooth, 4.0, move |p| {
            zeta.eval(p).unwrap() - zeta.eval(&f.evaluate(p).unwrap()).unwrap()
        });
        let mut opts = SampleOptions::new(5);
        opts.centering_count = 5000;
        let b = birkhoff_sums(&squaring(), &[psi], 30, 5000, &opts).unwrap();
        let vc = variance_curve(&b, 0.25);
        assert!(vc.rows.iter().all(|r| r.variance < 1.2), "{:?}", vc.rows);
        assert!(!vc.stat.pass);
    }

    #[test]
    fn ergodic_average_matches_variance_oracle() {
        let mut opts = SampleOptions::new(6);
        opts.centering_count = 20_000;
        let r = ergodic_average_check(&squaring(), &Observable::harmonic(1), 16, 20_000, None, &opts).unwrap();
        let oracle = |n: f64| 1.0 / (2.0 * n).sqrt();
        assert!((r.l2_n / oracle(16.0) - 1.0).abs() < 0.1, "{r:?}");
        assert!((r.l2_2n / oracle(32.0) - 1.0).abs() < 0.1, "{r:?}");
        assert!(r.stat.pass);
        let one = ergodic_average_check(&squaring(), &Observable::constant(1.0), 16, 100, None, &opts).unwrap();
        assert_eq!(one.l2_2n, 0.0);
        assert!(one.stat.pass);
    }

    #[test]
    fn gaussian_synthetic_is_deterministic() {
        let a = BirkhoffSample::synthetic_gaussian(10, 100, 3);
        let b = BirkhoffSample::synthetic_gaussian(10, 100, 3);
        assert_eq!(a, b);
        let (m, v) = mean_var(&a.increments);
        assert!(m.abs() < 0.15 && (v - 1.0).abs() < 0.15);
    }

    #[test]
    fn dsh_surrogates_are_comparable() {
        let psi = make_observable("dsh(0.5, inf)").unwrap();
        let r = dsh_surrogate_comparison(&squaring(), &psi, &[0, 1, 2, 4, 8], 2000, &SampleOptions::new(7)).unwrap();
        assert!(r.pass && r.factor < 10.0, "{r:?}");
    }
}
