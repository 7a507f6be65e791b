//! Strong law of large numbers for powers of the observables.

use serde::Serialize;

use super::{birkhoff_sums, mean_var, SampleOptions, StatReport};
use crate::error::{Error, Result};
use crate::fit::linear_fit;
use crate::maps::MapSequence;
use crate::observable::Observable;
use crate::transfer::theoretical_rate;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SllnRow {
    pub n: usize,
    /// 95th percentile of `|S_n| / (sqrt(n) (log n)^{2+delta})` over trajectories.
    pub p95: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CovarianceRow {
    pub lag: usize,
    /// `Cov(X_j, X_{j+lag})` averaged over `j`.
    pub covariance: f64,
    pub stderr: f64,
    pub at_floor: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SllnReport {
    pub r: u32,
    pub delta: f64,
    pub rows: Vec<SllnRow>,
    pub covariances: Vec<CovarianceRow>,
    /// Per-lag decay of `log |Cov|` over resolved lags; `None` with fewer than two.
    pub covariance_rate: Option<f64>,
    pub covariance_floor: f64,
    pub covariance_pass: bool,
    pub stat: StatReport,
}

/// Largest lag in the covariance regression.
pub const MAX_LAG: usize = 8;

fn percentile(v: &mut [f64], q: f64) -> f64 {
    v.sort_by(f64::total_cmp);
    let k = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[k - 1]
}

/// Normalized sums of `psi^r` at `n_max/4`, `n_max/2` and `n_max`.
///
/// Passes when the 95th percentile decreases across the three times, ends
/// below `threshold`, and the lagged covariances decay at least at
/// `0.8` of the class rate.
pub fn slln_check(
    seq: &MapSequence,
    psi: &Observable,
    r: u32,
    delta: f64,
    n_max: usize,
    count: usize,
    threshold: f64,
    opts: &SampleOptions,
) -> Result<SllnReport> {
    if r == 0 || !(delta > 0.0) || n_max < 16 {
        return Err(Error::InvalidArgument("need r >= 1, delta > 0 and n_max >= 16".into()));
    }
    let obs = psi.power(r);
    let b = birkhoff_sums(seq, std::slice::from_ref(&obs), n_max, count, opts)?;
    let mut rows = Vec::new();
    for n in [n_max / 4, n_max / 2, n_max] {
        let nf = n as f64;
        let norm = nf.sqrt() * nf.ln().powf(2.0 + delta);
        let mut t: Vec<f64> = b.sums_at(n).iter().map(|s| (s / norm).abs()).collect();
        rows.push(SllnRow { n, p95: percentile(&mut t, 0.95) });
    }

    let lag_max = MAX_LAG.min(n_max - 1);
    let mut covariances = Vec::new();
    for lag in 0..=lag_max {
        let span = n_max - lag;
        let means_a: Vec<f64> = (0..span).map(|j| (0..count).map(|i| b.increments(i)[j]).sum::<f64>() / count as f64).collect();
        let means_b: Vec<f64> = (0..span).map(|j| (0..count).map(|i| b.increments(i)[j + lag]).sum::<f64>() / count as f64).collect();
        // Per-trajectory average over j of centered products: independent across trajectories.
        let per_traj: Vec<f64> = (0..count)
            .map(|i| {
                let x = b.increments(i);
                (0..span).map(|j| (x[j] - means_a[j]) * (x[j + lag] - means_b[j])).sum::<f64>() / span as f64
            })
            .collect();
        let (m, var) = mean_var(&per_traj);
        let se = (var / count as f64).sqrt();
        covariances.push(CovarianceRow { lag, covariance: m, stderr: se, at_floor: m.abs() <= 3.0 * se });
    }
    let resolved: Vec<&CovarianceRow> = covariances.iter().filter(|c| !c.at_floor).collect();
    let x: Vec<f64> = resolved.iter().map(|c| c.lag as f64).collect();
    let y: Vec<f64> = resolved.iter().map(|c| c.covariance.abs().ln()).collect();
    let covariance_rate = linear_fit(&x, &y).map(|f| -f.slope);
    let covariance_floor = theoretical_rate(psi.class(), seq.degree());
    let covariance_pass = covariance_rate.is_none_or(|rate| rate >= 0.8 * covariance_floor);

    let decreasing = rows.windows(2).all(|w| w[1].p95 < w[0].p95) || rows.iter().all(|r| r.p95 == 0.0);
    let last = rows.last().unwrap().p95;
    let pass = decreasing && last < threshold && covariance_pass;
    let stat = StatReport { test: "slln".into(), statistic: last, threshold, pass, count, seed: opts.seed };
    Ok(SllnReport { r, delta, rows, covariances, covariance_rate, covariance_floor, covariance_pass, stat })
}
