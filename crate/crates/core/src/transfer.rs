//! Transfer operators `P_j psi(x) = (1/d) sum_{f_j(y) = x} psi(y)` and their
//! compositions, with decay-rate and exactness diagnostics.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fit::linear_fit;
use crate::geometry::ProjectivePoint;
use crate::maps::{HomogeneousMap, MapSequence};
use crate::measure::{default_base, integrate, sample_equilibrium, IntegralEstimate};
use crate::observable::{Observable, Regularity};
use crate::preimage::{
    backward_orbit_sample_at, full_tree_size, preimage_tree_at, preimages, TreeMode, FULL_TREE_DEFAULT, FULL_TREE_MAX,
};
use crate::seeding::{self, domain};

/// Absolute resolution below which a norm is indistinguishable from zero.
pub const ABSOLUTE_FLOOR: f64 = 1e-12;

/// Fewest values of `n` a decay fit accepts.
pub const MIN_FIT_POINTS: usize = 5;

/// `P psi(x)` for a single map.
pub fn apply_p(f: &HomogeneousMap, psi: &Observable, x: &ProjectivePoint) -> Result<f64> {
    if let Some(c) = psi.constant_value() {
        return Ok(c);
    }
    let set = preimages(f, x)?;
    let mut acc = 0.0;
    for (y, m) in &set.points {
        acc += *m as f64 * psi.eval(y)?;
    }
    Ok(acc / set.degree() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum TransferMode {
    Full,
    Sampled { paths: usize, seed: u64 },
    /// Full trees up to `full_max` leaves, sampled paths beyond.
    Auto { full_max: u128, paths: usize, seed: u64 },
}

impl TransferMode {
    pub fn auto(seed: u64) -> Self {
        TransferMode::Auto { full_max: FULL_TREE_DEFAULT, paths: 1000, seed }
    }

    fn resolve(&self, degree: usize, n: usize) -> TransferMode {
        match *self {
            TransferMode::Auto { full_max, paths, seed } => {
                if full_tree_size(degree, n) <= full_max {
                    TransferMode::Full
                } else {
                    TransferMode::Sampled { paths, seed }
                }
            }
            m => m,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TransferEvaluation {
    pub observable: String,
    pub n: usize,
    pub tail: usize,
    pub points: Vec<ProjectivePoint>,
    pub values: Vec<f64>,
    /// Zero in full mode.
    pub stderrs: Vec<f64>,
    pub mode: TransferMode,
}

/// `P_{tail+n-1} ... P_tail psi` at one point, with its standard error.
fn composed_at(
    seq: &MapSequence,
    tail: usize,
    psi: &Observable,
    x: &ProjectivePoint,
    n: usize,
    mode: TransferMode,
    point_index: usize,
) -> Result<(f64, f64)> {
    if let Some(c) = psi.constant_value() {
        return Ok((c, 0.0));
    }
    if n == 0 {
        return Ok((psi.eval(x)?, 0.0));
    }
    match mode {
        TransferMode::Full => {
            let tree = preimage_tree_at(seq, tail, x, n, TreeMode::Full, FULL_TREE_MAX)?;
            let total = tree.level_total(n) as f64;
            let mut acc = 0.0;
            for node in tree.leaves() {
                acc += node.multiplicity as f64 * psi.eval(&node.point)?;
            }
            Ok((acc / total, 0.0))
        }
        TransferMode::Sampled { paths, seed } => {
            let s = seeding::child_seed(seed, domain::TRANSFER, point_index as u64);
            let vals = (0..paths)
                .map(|k| {
                    let mut rng = seeding::stream(s, domain::PREIMAGE_PATHS, k as u64);
                    psi.eval(&backward_orbit_sample_at(seq, tail, x, n, &mut rng)?)
                })
                .collect::<Result<Vec<f64>>>()?;
            let est = IntegralEstimate::from_values(&vals);
            Ok((est.value, est.stderr))
        }
        TransferMode::Auto { .. } => unreachable!("resolved before use"),
    }
}

/// `P_{n-1} ... P_0 psi` at each point.
pub fn apply_composed(
    seq: &MapSequence,
    psi: &Observable,
    points: &[ProjectivePoint],
    n: usize,
    mode: TransferMode,
) -> Result<TransferEvaluation> {
    apply_composed_at(seq, 0, psi, points, n, mode)
}

/// `P_{tail+n-1} ... P_tail psi` at each point.
pub fn apply_composed_at(
    seq: &MapSequence,
    tail: usize,
    psi: &Observable,
    points: &[ProjectivePoint],
    n: usize,
    mode: TransferMode,
) -> Result<TransferEvaluation> {
    let mode = mode.resolve(seq.degree(), n);
    if mode == TransferMode::Full && full_tree_size(seq.degree(), n) > FULL_TREE_MAX {
        return Err(Error::BudgetExceeded { leaves: full_tree_size(seq.degree(), n), budget: FULL_TREE_MAX });
    }
    let out = points
        .par_iter()
        .enumerate()
        .map(|(i, x)| composed_at(seq, tail, psi, x, n, mode, i))
        .collect::<Result<Vec<_>>>()?;
    let (values, stderrs) = out.into_iter().unzip();
    Ok(TransferEvaluation { observable: psi.name().to_string(), n, tail, points: points.to_vec(), values, stderrs, mode })
}

/// Theoretical per-step decay rate for the observable's class.
pub fn theoretical_rate(class: Regularity, degree: usize) -> f64 {
    let ld = (degree as f64).ln();
    match class {
        Regularity::Holder(alpha) => 0.5 * alpha * ld,
        Regularity::Smooth | Regularity::Dsh { .. } => ld,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecayOptions {
    /// Tail index `j` of the operator `P_{j+n-1} ... P_j`.
    pub tail: usize,
    /// Cloud size per `n`.
    pub count: usize,
    pub depth: usize,
    pub base: ProjectivePoint,
    pub seed: u64,
    pub mode: TransferMode,
    /// Subtract the mean before taking norms.
    pub center: bool,
    /// Size of the independent cloud used for the reported centering constant.
    pub centering_count: usize,
    /// Required fraction of the theoretical rate.
    pub rate_slack: f64,
}

impl DecayOptions {
    pub fn new(seed: u64) -> Self {
        DecayOptions {
            tail: 0,
            count: 50_000,
            depth: 30,
            base: default_base(),
            seed,
            mode: TransferMode::auto(seed),
            center: true,
            centering_count: 100_000,
            rate_slack: 0.8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DecayRow {
    pub n: usize,
    pub l1: f64,
    pub l2: f64,
    pub lq: f64,
    /// Standard error of the L¹ norm.
    pub stderr: f64,
    /// Centering constant used at this `n` and its standard error.
    pub center: f64,
    pub center_stderr: f64,
    /// Norm below the noise floor, excluded from the fit.
    pub censored: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecayReport {
    pub observable: String,
    pub tail: usize,
    pub q: f64,
    pub rows: Vec<DecayRow>,
    /// `<mu_tail, psi>` from an independent cloud (reported for reference).
    pub centering: IntegralEstimate,
    /// Per-step decay rate `-slope` of `log ||P_n psi||_q`; `None` if fewer than two points survive censoring.
    pub fitted_rate: Option<f64>,
    pub fit_r_squared: Option<f64>,
    pub theoretical_rate: f64,
    /// Every norm is at the noise floor: the composed operator annihilates the observable on the cloud.
    pub vacuous: bool,
    pub pass: bool,
}

fn norms(values: &[f64], q: f64) -> (f64, f64, f64, f64) {
    let n = values.len() as f64;
    let abs: Vec<f64> = values.iter().map(|v| v.abs()).collect();
    let l1 = abs.iter().sum::<f64>() / n;
    let l2 = (values.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
    let lq = (abs.iter().map(|a| a.powf(q)).sum::<f64>() / n).powf(1.0 / q);
    let se = IntegralEstimate::from_values(&abs).stderr;
    (l1, l2, lq, se)
}

/// `||P_n psi||_{L^q(mu_{tail+n})}` over `n_range`, with a fitted per-step rate.
///
/// The centering constant at each `n` is `<mu_{tail+n}, P_n psi>` on the
/// evaluation cloud, which equals `<mu_tail, psi>` by the adjoint identity.
/// Norms within three of its standard errors (or below `ABSOLUTE_FLOOR`) are
/// censored from the fit.
pub fn decay_report(seq: &MapSequence, psi: &Observable, n_range: &[usize], q: f64, opts: &DecayOptions) -> Result<DecayReport> {
    if n_range.len() < MIN_FIT_POINTS {
        return Err(Error::InvalidArgument(format!("decay fits need at least {MIN_FIT_POINTS} values of n")));
    }
    decay_norms(seq, psi, n_range, q, opts)
}

/// Same as [`decay_report`] without the minimum number of `n` values.
pub fn decay_norms(seq: &MapSequence, psi: &Observable, n_range: &[usize], q: f64, opts: &DecayOptions) -> Result<DecayReport> {
    if !(q >= 1.0) {
        return Err(Error::InvalidArgument(format!("q = {q} must be at least 1")));
    }
    if n_range.is_empty() {
        return Err(Error::InvalidArgument("empty n range".into()));
    }
    let centering = if opts.center {
        let cloud = sample_equilibrium(seq, opts.tail, opts.depth, opts.centering_count, &opts.base, seeding::child_seed(opts.seed, domain::CENTERING, opts.tail as u64))?;
        integrate(&cloud, psi)?
    } else {
        IntegralEstimate { value: 0.0, stderr: 0.0, count: 0 }
    };

    let mut rows = Vec::with_capacity(n_range.len());
    for &n in n_range {
        let cloud = sample_equilibrium(seq, opts.tail + n, opts.depth, opts.count, &opts.base, opts.seed)?;
        let mode = match opts.mode {
            TransferMode::Sampled { paths, seed } => TransferMode::Sampled { paths, seed: seeding::child_seed(seed, domain::TRANSFER, n as u64) },
            TransferMode::Auto { full_max, paths, seed } => {
                TransferMode::Auto { full_max, paths, seed: seeding::child_seed(seed, domain::TRANSFER, n as u64) }
            }
            m => m,
        };
        let ev = apply_composed_at(seq, opts.tail, psi, &cloud.points, n, mode)?;
        let (center, center_stderr) = if opts.center {
            let est = IntegralEstimate::from_values(&ev.values);
            (est.value, est.stderr)
        } else {
            (0.0, 0.0)
        };
        let centered: Vec<f64> = ev.values.iter().map(|v| v - center).collect();
        let (l1, l2, lq, stderr) = norms(&centered, q);
        let floor = (3.0 * center_stderr).max(ABSOLUTE_FLOOR);
        rows.push(DecayRow { n, l1, l2, lq, stderr, center, center_stderr, censored: lq <= floor });
    }

    let kept: Vec<&DecayRow> = rows.iter().filter(|r| !r.censored).collect();
    let x: Vec<f64> = kept.iter().map(|r| r.n as f64).collect();
    let y: Vec<f64> = kept.iter().map(|r| r.lq.ln()).collect();
    let fit = linear_fit(&x, &y);
    let theoretical = theoretical_rate(psi.class(), seq.degree());
    let vacuous = kept.is_empty();
    let fitted_rate = fit.map(|f| -f.slope);
    let pass = match fitted_rate {
        Some(r) => r >= opts.rate_slack * theoretical,
        None => vacuous,
    };
    Ok(DecayReport {
        observable: psi.name().to_string(),
        tail: opts.tail,
        q,
        rows,
        centering,
        fitted_rate,
        fit_r_squared: fit.map(|f| f.r_squared),
        theoretical_rate: theoretical,
        vacuous,
        pass,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExactnessReport {
    pub observable: String,
    /// `(n, ||P_n psi||_{L^1(mu_n)}, stderr)`.
    pub norms: Vec<(usize, f64, f64)>,
    /// Final over initial norm (zero when both vanish).
    pub ratio: f64,
    /// Non-increasing after a burn-in of two steps, within two standard errors.
    pub monotone: bool,
    pub vacuous: bool,
    pub pass: bool,
}

/// L¹ norms of the centered composed operator with a monotone-trend verdict.
pub fn exactness_check(seq: &MapSequence, psi: &Observable, n_range: &[usize], opts: &DecayOptions) -> Result<ExactnessReport> {
    Ok(exactness_from(&decay_norms(seq, psi, n_range, 1.0, opts)?))
}

/// Exactness verdict from the L¹ rows of a decay report.
pub fn exactness_from(rep: &DecayReport) -> ExactnessReport {
    let norms: Vec<(usize, f64, f64)> = rep.rows.iter().map(|r| (r.n, if r.censored { 0.0 } else { r.l1 }, r.stderr)).collect();
    let first = norms.first().map(|r| r.1).unwrap_or(0.0);
    let last = norms.last().map(|r| r.1).unwrap_or(0.0);
    let ratio = if first > 0.0 { last / first } else { 0.0 };
    let burn = 2.min(norms.len());
    let monotone = norms[burn..].windows(2).all(|w| w[1].1 <= w[0].1 + 2.0 * w[0].2.hypot(w[1].2));
    ExactnessReport { observable: rep.observable.clone(), norms, ratio, monotone, vacuous: rep.vacuous, pass: monotone }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::observable::{circle_point, make_observable};

    fn squaring() -> MapSequence {
        MapSequence::constant(HomogeneousMap::power(2).unwrap())
    }

    #[test]
    fn apply_p_examples() {
        let f = HomogeneousMap::power(2).unwrap();
        let four = ProjectivePoint::affine(num_complex::Complex64::new(4.0, 0.0)).unwrap();
        assert_eq!(apply_p(&f, &Observable::constant(1.0), &four).unwrap(), 1.0);
        assert!(apply_p(&f, &Observable::harmonic(1), &four).unwrap().abs() < 1e-15);
        for k in 1..=6u32 {
            let psi = Observable::circle_cosine(k);
            for i in 0..10 {
                let t = 0.61 * i as f64;
                let v = apply_p(&f, &psi, &circle_point(t)).unwrap();
                let expected = if k % 2 == 0 { (k as f64 * t / 2.0).cos() } else { 0.0 };
                assert!((v - expected).abs() < 1e-12, "k={k} t={t}: {v} vs {expected}");
            }
        }
    }

    #[test]
    fn frequency_halving() {
        let seq = squaring();
        let pts: Vec<ProjectivePoint> = (0..20).map(|i| circle_point(0.3 * i as f64)).collect();
        let psi = Observable::circle_cosine(4);
        let e2 = apply_composed(&seq, &psi, &pts, 2, TransferMode::Full).unwrap();
        let e3 = apply_composed(&seq, &psi, &pts, 3, TransferMode::Full).unwrap();
        for (i, p) in pts.iter().enumerate() {
            let t = 0.3 * i as f64;
            assert!((e2.values[i] - t.cos()).abs() < 1e-12, "{p}");
            assert!(e3.values[i].abs() < 1e-12);
        }
        let e1 = apply_composed(&seq, &Observable::harmonic(1), &pts, 1, TransferMode::Full).unwrap();
        assert!(e1.values.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn linearity_positivity_and_tower() {
        let seq = MapSequence::perturbed(HomogeneousMap::power(2).unwrap(), 0.05, 4).unwrap();
        let a = make_observable("harmonic(1)").unwrap();
        let b = make_observable("holder(0.5, 0.3+0.1i)").unwrap();
        let combo = make_observable("2*harmonic(1) + -3*holder(0.5, 0.3+0.1i)").unwrap();
        let f = seq.map(0).unwrap();
        for p in crate::geometry::sphere_grid(50) {
            let lhs = apply_p(&f, &combo, &p).unwrap();
            let rhs = 2.0 * apply_p(&f, &a, &p).unwrap() - 3.0 * apply_p(&f, &b, &p).unwrap();
            assert!((lhs - rhs).abs() < 1e-10);
            assert!(apply_p(&f, &b, &p).unwrap() >= 0.0);
        }
        // P_{n-1} applied to the (n-1)-fold evaluation equals the n-fold one
        let pts = crate::geometry::sphere_grid(20);
        let n = 4;
        let full = apply_composed(&seq, &b, &pts, n, TransferMode::Full).unwrap();
        let fl = seq.map(n - 1).unwrap();
        for (i, x) in pts.iter().enumerate() {
            let fiber = preimages(&fl, x).unwrap();
            let mut acc = 0.0;
            for (y, m) in &fiber.points {
                acc += *m as f64 * apply_composed(&seq, &b, &[*y], n - 1, TransferMode::Full).unwrap().values[0];
            }
            assert!((acc / 2.0 - full.values[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn sampled_agrees_with_full() {
        let seq = squaring();
        let psi = make_observable("holder(0.5, 1)").unwrap();
        let pts: Vec<ProjectivePoint> = crate::geometry::sphere_grid(30);
        let full = apply_composed(&seq, &psi, &pts, 6, TransferMode::Full).unwrap();
        let samp = apply_composed(&seq, &psi, &pts, 6, TransferMode::Sampled { paths: 2000, seed: 7 }).unwrap();
        let bad = (0..pts.len()).filter(|&i| (full.values[i] - samp.values[i]).abs() > 3.0 * samp.stderrs[i]).count();
        assert!(bad <= 2, "{bad} of {}", pts.len());
    }

    #[test]
    fn budget_is_enforced() {
        let seq = squaring();
        let r = apply_composed(&seq, &Observable::harmonic(1), &[circle_point(0.1)], 21, TransferMode::Full);
        assert!(matches!(r, Err(Error::BudgetExceeded { .. })));
    }

    #[test]
    fn uncentered_constant_has_no_decay() {
        let mut opts = DecayOptions::new(3);
        opts.count = 200;
        opts.centering_count = 200;
        opts.center = false;
        let r = decay_report(&squaring(), &Observable::constant(1.0), &[1, 2, 3, 4, 5], 1.0, &opts).unwrap();
        assert!(r.rows.iter().all(|row| row.l1 == 1.0));
        assert_eq!(r.fitted_rate, Some(0.0));
        assert!(!r.pass);
    }

    #[test]
    fn log_distance_to_one_decays_at_log_two() {
        let mut opts = DecayOptions::new(5);
        opts.count = 4000;
        opts.centering_count = 4000;
        let psi = make_observable("dsh(1, inf)").unwrap();
        let r = decay_report(&squaring(), &psi, &[1, 2, 3, 4, 5, 6], 1.0, &opts).unwrap();
        let rate = r.fitted_rate.unwrap();
        assert!((rate - 2f64.ln()).abs() < 0.05, "{r:?}");
        assert!(r.pass);
        let e = exactness_check(&squaring(), &psi, &[1, 2, 3, 4, 5, 6], &opts).unwrap();
        assert!(e.pass && e.ratio < 2f64.powi(-4), "{e:?}");
    }

    #[test]
    fn zero_observable_is_vacuous() {
        let mut opts = DecayOptions::new(5);
        opts.count = 100;
        opts.centering_count = 100;
        let e = exactness_check(&squaring(), &Observable::zero(), &[1, 2, 3], &opts).unwrap();
        assert!(e.norms.iter().all(|r| r.1 == 0.0));
        assert!(e.vacuous);
    }
}
