//! Central limit and iterated-logarithm diagnostics.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use super::{mean_var, BirkhoffSample, StatReport};
use crate::error::{Error, Result};

/// Kolmogorov–Smirnov distance between the sample and the standard normal.
pub fn ks_distance(sample: &[f64]) -> f64 {
    let normal = Normal::standard();
    let mut v = sample.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut d: f64 = 0.0;
    for (i, x) in v.iter().enumerate() {
        let f = normal.cdf(*x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    d
}

/// Asymptotic p-value of a KS distance `d` for sample size `n`.
pub fn ks_p_value(d: f64, n: usize) -> f64 {
    let x = (n as f64).sqrt() * d;
    if x < 0.2 {
        return 1.0;
    }
    let mut p = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = 2.0 * (-1f64).powi(k - 1) * (-2.0 * kf * kf * x * x).exp();
        p += term;
        if term.abs() < 1e-16 {
            break;
        }
    }
    p.clamp(0.0, 1.0)
}

/// Variance below which `S_n / sigma_n` is not formed.
pub const VARIANCE_FLOOR: f64 = 1e-20;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CltRow {
    pub n: usize,
    pub sigma: f64,
    pub ks: f64,
    pub p_value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CltReport {
    pub rows: Vec<CltRow>,
    /// Empirical and normal quantiles at 1%, ..., 99% for the largest `n`.
    pub quantiles: Vec<(f64, f64)>,
    pub decreasing: bool,
    pub stat: StatReport,
}

fn quantile_pairs(sorted: &[f64]) -> Vec<(f64, f64)> {
    let normal = Normal::standard();
    let n = sorted.len();
    (1..100)
        .map(|k| {
            let q = k as f64 / 100.0;
            let idx = ((q * n as f64).ceil() as usize).clamp(1, n) - 1;
            (sorted[idx], normal.inverse_cdf(q))
        })
        .collect()
}

/// KS distance of `S_n / sigma_n` to `N(0, 1)` for each `n` in `n_list`.
///
/// Passes when the distance strictly decreases along `n_list` and ends below `threshold`.
pub fn clt_test(b: &BirkhoffSample, n_list: &[usize], threshold: f64) -> Result<CltReport> {
    if n_list.is_empty() || n_list.iter().any(|&n| n == 0 || n > b.n_max) {
        return Err(Error::InvalidArgument(format!("n list must lie in 1..={}", b.n_max)));
    }
    let mut rows = Vec::new();
    let mut last = Vec::new();
    for &n in n_list {
        let s = b.sums_at(n);
        let (_, var) = mean_var(&s);
        if !(var > VARIANCE_FLOOR) {
            return Err(Error::DegenerateVariance { variance: var });
        }
        let sigma = var.sqrt();
        let z: Vec<f64> = s.iter().map(|v| v / sigma).collect();
        let ks = ks_distance(&z);
        rows.push(CltRow { n, sigma, ks, p_value: ks_p_value(ks, z.len()) });
        last = z;
    }
    last.sort_by(f64::total_cmp);
    let decreasing = rows.windows(2).all(|w| w[1].ks < w[0].ks);
    let final_ks = rows.last().unwrap().ks;
    let stat = StatReport {
        test: "clt".into(),
        statistic: final_ks,
        threshold,
        pass: decreasing && final_ks < threshold,
        count: b.count,
        seed: b.seed,
    };
    Ok(CltReport { rows, quantiles: quantile_pairs(&last), decreasing, stat })
}

/// Acceptance band for the median running LIL ratio.
pub const LIL_BAND: (f64, f64) = (0.5, 1.3);

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LilReport {
    pub n_max: usize,
    /// First `n` with `sigma_n >= e^e`, where `log log sigma_n >= 1`.
    pub start: Option<usize>,
    /// Median over trajectories of `max_n S_n / (sigma_n sqrt(2 log log sigma_n))`.
    pub median: f64,
    pub quartiles: (f64, f64),
    pub degenerate: bool,
    pub caveat: String,
    pub stat: StatReport,
}

/// Running maximum of the LIL ratio; reports the cross-trajectory median.
///
/// Iterated-logarithm envelopes converge very slowly, so the band is coarse.
pub fn lil_check(b: &BirkhoffSample) -> Result<LilReport> {
    let caveat = "finite-n LIL envelopes converge extremely slowly; coarse consistency check".to_string();
    let n_max = b.n_max;
    // sigma_n for every n, one pass over the trajectories.
    let mut sums = vec![0.0; b.count];
    let mut sigma = vec![0.0; n_max + 1];
    let mut all = vec![0.0; b.count * (n_max + 1)];
    for n in 1..=n_max {
        for (i, s) in sums.iter_mut().enumerate() {
            *s += b.increments(i)[n - 1];
            all[i * (n_max + 1) + n] = *s;
        }
        sigma[n] = mean_var(&sums).1.sqrt();
    }
    let threshold = std::f64::consts::E.exp();
    let start = (1..=n_max).find(|&n| sigma[n] >= threshold);
    let Some(start) = start else {
        let degenerate = sigma[n_max] <= VARIANCE_FLOOR.sqrt();
        if !degenerate {
            return Err(Error::InvalidArgument(format!(
                "sigma at n_max = {} never reaches e^e; increase n_max",
                sigma[n_max]
            )));
        }
        let stat = StatReport { test: "lil".into(), statistic: 0.0, threshold: LIL_BAND.0, pass: false, count: b.count, seed: b.seed };
        return Ok(LilReport { n_max, start: None, median: 0.0, quartiles: (0.0, 0.0), degenerate: true, caveat, stat });
    };
    let envelope: Vec<f64> = (0..=n_max)
        .map(|n| if n >= start { sigma[n] * (2.0 * sigma[n].ln().ln()).sqrt() } else { f64::NAN })
        .collect();
    let mut maxima: Vec<f64> = (0..b.count)
        .map(|i| {
            let row = &all[i * (n_max + 1)..(i + 1) * (n_max + 1)];
            (start..=n_max).map(|n| row[n] / envelope[n]).fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    maxima.sort_by(f64::total_cmp);
    let at = |q: f64| maxima[((q * maxima.len() as f64) as usize).min(maxima.len() - 1)];
    let median = at(0.5);
    let pass = (LIL_BAND.0..=LIL_BAND.1).contains(&median);
    let stat = StatReport { test: "lil".into(), statistic: median, threshold: LIL_BAND.1, pass, count: b.count, seed: b.seed };
    Ok(LilReport { n_max, start: Some(start), median, quartiles: (at(0.25), at(0.75)), degenerate: false, caveat, stat })
}

#[cfg(test)]
mod tests {
    use super::super::tests::squaring;
    use super::super::{birkhoff_sums, SampleOptions};
    use super::*;
    use crate::observable::Observable;

    #[test]
    fn ks_engine_on_gaussians() {
        let b = BirkhoffSample::synthetic_gaussian(1, 20_000, 1);
        let d = ks_distance(&b.increments);
        // 99% null quantile of sqrt(n) D is 1.63
        assert!(d < 1.63 / (20_000f64).sqrt(), "{d}");
        assert!(ks_p_value(d, 20_000) > 0.01);
        assert!((ks_p_value(1.36 / 100.0, 10_000) - 0.05).abs() < 0.002);
        let shifted: Vec<f64> = b.increments.iter().map(|x| x + 0.1).collect();
        assert!(ks_distance(&shifted) > 0.03);
    }

    #[test]
    fn single_cosine_law() {
        // KS distance between the law of sqrt(2) cos(theta) and N(0,1), from the closed-form arcsine cdf.
        let normal = Normal::standard();
        let oracle = (0..200_000)
            .map(|i| {
                let x = -std::f64::consts::SQRT_2 + 2.0 * std::f64::consts::SQRT_2 * (i as f64 + 0.5) / 200_000.0;
                let f = 1.0 - (x / std::f64::consts::SQRT_2).acos() / std::f64::consts::PI;
                (f - normal.cdf(x)).abs()
            })
            .fold(0.0, f64::max);
        let mut opts = SampleOptions::new(3);
        opts.centering_count = 20_000;
        let b = birkhoff_sums(&squaring(), &[Observable::harmonic(1)], 6, 20_000, &opts).unwrap();
        let r = clt_test(&b, &[1, 6], 0.02).unwrap();
        assert!((r.rows[0].ks - oracle).abs() < 0.015, "{} vs {oracle}", r.rows[0].ks);
        assert!(r.decreasing);
        assert_eq!(r.quantiles.len(), 99);
        let z = birkhoff_sums(&squaring(), &[Observable::zero()], 4, 100, &opts).unwrap();
        assert!(matches!(clt_test(&z, &[4], 0.02), Err(Error::DegenerateVariance { .. })));
    }

    #[test]
    fn lil_engine_on_gaussians() {
        let b = BirkhoffSample::synthetic_gaussian(1 << 14, 200, 4);
        let r = lil_check(&b).unwrap();
        assert!(r.stat.pass, "{r:?}");
        let z = BirkhoffSample::from_increments(1000, 20, 0, vec![0.0; 20_000]).unwrap();
        let r = lil_check(&z).unwrap();
        assert!(r.degenerate && r.median == 0.0 && !r.stat.pass);
    }
}
