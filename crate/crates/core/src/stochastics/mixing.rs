//! Decay of correlations along the sequence.

use rayon::prelude::*;
use serde::Serialize;

use super::{mean_var, trajectory, SampleOptions, StatReport};
use crate::error::{Error, Result};
use crate::fit::linear_fit;
use crate::maps::MapSequence;
use crate::observable::Observable;
use crate::transfer::theoretical_rate;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MixingRow {
    pub n: usize,
    /// `<mu_0, (phi o F_n) psi> - <mu_n, phi><mu_0, psi>`.
    pub gap: f64,
    pub stderr: f64,
    /// `||phi||_{L^p(mu_n)}`.
    pub phi_lp: f64,
    /// Gap within three standard errors of zero.
    pub at_floor: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MixingReport {
    pub observables: (String, String),
    pub p: f64,
    pub rows: Vec<MixingRow>,
    /// Per-step decay of `log |gap|` over resolved rows; `None` with fewer than two.
    pub fitted_rate: Option<f64>,
    pub theoretical_rate: f64,
    pub stat: StatReport,
}

/// Required fraction of the theoretical rate.
pub const RATE_SLACK: f64 = 0.8;

/// Covariance of two samples with the standard error of its influence function.
fn covariance(a: &[f64], b: &[f64]) -> (f64, f64) {
    let (ma, _) = mean_var(a);
    let (mb, _) = mean_var(b);
    let w: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).collect();
    let (m, var) = mean_var(&w);
    (m, (var / w.len() as f64).sqrt())
}

/// Correlation gaps for each `n`, estimated from `count` trajectories.
pub fn mixing_check(
    seq: &MapSequence,
    phi: &Observable,
    psi: &Observable,
    n_range: &[usize],
    p: f64,
    count: usize,
    opts: &SampleOptions,
) -> Result<MixingReport> {
    if !(p > 1.0) {
        return Err(Error::InvalidArgument(format!("p = {p} must exceed 1")));
    }
    let n_max = n_range.iter().copied().max().ok_or_else(|| Error::InvalidArgument("empty n range".into()))?;
    let samples = (0..count)
        .into_par_iter()
        .map(|i| {
            let y = trajectory(seq, n_max, opts, i)?;
            let left = psi.eval(&y[0])?;
            let right = n_range.iter().map(|&n| phi.eval(&y[n])).collect::<Result<Vec<f64>>>()?;
            Ok((left, right))
        })
        .collect::<Result<Vec<_>>>()?;
    let psi_vals: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let trivial = phi.constant_value().is_some() || psi.constant_value().is_some();
    let mut rows = Vec::new();
    for (k, &n) in n_range.iter().enumerate() {
        let phi_vals: Vec<f64> = samples.iter().map(|s| s.1[k]).collect();
        let (gap, stderr) = if trivial { (0.0, 0.0) } else { covariance(&phi_vals, &psi_vals) };
        let phi_lp = (phi_vals.iter().map(|v| v.abs().powf(p)).sum::<f64>() / count as f64).powf(1.0 / p);
        rows.push(MixingRow { n, gap, stderr, phi_lp, at_floor: gap.abs() <= 3.0 * stderr });
    }
    let resolved: Vec<&MixingRow> = rows.iter().filter(|r| !r.at_floor).collect();
    let x: Vec<f64> = resolved.iter().map(|r| r.n as f64).collect();
    let y: Vec<f64> = resolved.iter().map(|r| r.gap.abs().ln()).collect();
    let fitted_rate = linear_fit(&x, &y).map(|f| -f.slope);
    let theoretical = theoretical_rate(psi.class(), seq.degree());
    let threshold = RATE_SLACK * theoretical;
    let pass = fitted_rate.is_none_or(|r| r >= threshold);
    let stat = StatReport {
        test: "mixing".into(),
        statistic: fitted_rate.unwrap_or(f64::INFINITY),
        threshold,
        pass,
        count,
        seed: opts.seed,
    };
    Ok(MixingReport {
        observables: (phi.name().to_string(), psi.name().to_string()),
        p,
        rows,
        fitted_rate,
        theoretical_rate: theoretical,
        stat,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MulticorrelationReport {
    pub times: Vec<usize>,
    /// `E[prod psi_i(y_{t_i})] - prod E[psi_i(y_{t_i})]`.
    pub gap: f64,
    pub stderr: f64,
    /// Smallest gap between consecutive times.
    pub min_gap: usize,
    /// `d^{-min_gap} prod ||psi_i||` with unit constant.
    pub bound: f64,
    pub stat: StatReport,
}

/// Largest number of observables in a multiple correlation.
pub const MAX_FACTORS: usize = 4;

/// Multiple correlation of `list[i]` at times `times[i]` against the product of single pairings.
pub fn multicorrelation_check(
    seq: &MapSequence,
    list: &[Observable],
    times: &[usize],
    count: usize,
    opts: &SampleOptions,
) -> Result<MulticorrelationReport> {
    if list.len() != times.len() || list.is_empty() || list.len() > MAX_FACTORS {
        return Err(Error::InvalidArgument(format!("need 1 to {MAX_FACTORS} observables, one per time")));
    }
    if times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidArgument("times must be non-decreasing".into()));
    }
    let min_gap = times.windows(2).map(|w| w[1] - w[0]).min().unwrap_or(0);
    let bound = (seq.degree() as f64).powi(-(min_gap as i32)) * list.iter().map(|o| o.norm_surrogate()).product::<f64>();

    // Constant factors come out of both terms exactly.
    let mut scale = 1.0;
    let mut active = Vec::new();
    for (o, &t) in list.iter().zip(times) {
        match o.constant_value() {
            Some(c) => scale *= c,
            None => active.push((o, t)),
        }
    }
    let (gap, stderr) = if active.len() <= 1 {
        (0.0, 0.0)
    } else {
        let t_max = active.iter().map(|a| a.1).max().unwrap();
        let cols = (0..count)
            .into_par_iter()
            .map(|i| {
                let y = trajectory(seq, t_max, opts, i)?;
                active.iter().map(|(o, t)| o.eval(&y[*t])).collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let k = active.len();
        let means: Vec<f64> = (0..k).map(|m| cols.iter().map(|c| c[m]).sum::<f64>() / count as f64).collect();
        let prod_means: f64 = means.iter().product();
        // Influence of one sample on the gap.
        let infl: Vec<f64> = cols
            .iter()
            .map(|c| {
                let mut v: f64 = c.iter().product();
                for m in 0..k {
                    let others: f64 = (0..k).filter(|&l| l != m).map(|l| means[l]).product();
                    v -= others * c[m];
                }
                v
            })
            .collect();
        let mean_prod = cols.iter().map(|c| c.iter().product::<f64>()).sum::<f64>() / count as f64;
        let (_, var) = mean_var(&infl);
        (mean_prod - prod_means, (var / count as f64).sqrt())
    };
    let (gap, stderr) = (scale * gap, scale.abs() * stderr);
    let threshold = bound + 3.0 * stderr;
    let stat = StatReport {
        test: "multiple correlation".into(),
        statistic: gap.abs(),
        threshold,
        pass: gap.abs() <= threshold,
        count,
        seed: opts.seed,
    };
    Ok(MulticorrelationReport { times: times.to_vec(), gap, stderr, min_gap, bound, stat })
}

#[cfg(test)]
mod tests {
    use super::super::tests::squaring;
    use super::*;
    use crate::maps::HomogeneousMap;
    use crate::observable::make_observable;

    /// Mean of `prod cos(k_i theta)` over the circle.
    fn cosine_product_mean(ks: &[i64]) -> f64 {
        let m = ks.len();
        let hits = (0..1u32 << m)
            .filter(|mask| ks.iter().enumerate().map(|(i, k)| if mask >> i & 1 == 1 { *k } else { -k }).sum::<i64>() == 0)
            .count();
        hits as f64 / (1u64 << m) as f64
    }

    #[test]
    fn fourier_oracle_gaps() {
        assert_eq!(cosine_product_mean(&[1, 1, 2]), 0.25);
        let psi = make_observable("harmonic(1) + harmonic(2)").unwrap();
        let r = mixing_check(&squaring(), &psi, &psi, &[0, 1, 2, 3, 4], 2.0, 40_000, &SampleOptions::new(1)).unwrap();
        // psi = cos t + cos(2t)/2 on the circle
        let oracle = [0.5 + 0.125, 0.25, 0.0, 0.0, 0.0];
        for (row, o) in r.rows.iter().zip(oracle) {
            assert!((row.gap - o).abs() <= 3.0 * row.stderr, "{row:?} vs {o}");
        }
        assert!(r.rows[2..].iter().all(|row| row.at_floor));
        let h = Observable::harmonic(1);
        let r = mixing_check(&squaring(), &h, &h, &[1, 2, 3], 2.0, 20_000, &SampleOptions::new(2)).unwrap();
        assert!(r.rows.iter().all(|row| row.at_floor));
        assert!(r.stat.pass);
        let c = Observable::constant(2.0);
        let r = mixing_check(&squaring(), &h, &c, &[1, 2], 2.0, 100, &SampleOptions::new(3)).unwrap();
        assert!(r.rows.iter().all(|row| row.gap == 0.0));
    }

    #[test]
    fn multicorrelations() {
        let h = Observable::harmonic(1);
        let opts = SampleOptions::new(4);
        let r = multicorrelation_check(&squaring(), &[h.clone(), h.clone(), h.clone()], &[0, 2, 4], 20_000, &opts).unwrap();
        assert!((r.gap - cosine_product_mean(&[1, 4, 16])).abs() <= 3.0 * r.stderr, "{r:?}");
        // cos t cos t cos 2t
        let r = multicorrelation_check(&squaring(), &[h.clone(), h.clone(), h.clone()], &[0, 0, 1], 20_000, &opts).unwrap();
        assert!((r.gap - 0.25).abs() <= 3.0 * r.stderr, "{r:?}");
        let c = Observable::constant(3.0);
        let r = multicorrelation_check(&squaring(), &[h.clone(), c], &[0, 3], 100, &opts).unwrap();
        assert_eq!(r.gap, 0.0);
        // Pairs agree with the covariance gap.
        let m = mixing_check(&squaring(), &h, &h, &[1], 2.0, 500, &opts).unwrap();
        let r = multicorrelation_check(&squaring(), &[h.clone(), h], &[0, 1], 500, &opts).unwrap();
        assert!((m.rows[0].gap - r.gap).abs() < 1e-12);
    }

    #[test]
    fn perturbed_dsh_mixing_decays() {
        let seq = MapSequence::perturbed(HomogeneousMap::power(2).unwrap(), 0.05, 11).unwrap();
        let psi = make_observable("dsh(1, inf)").unwrap();
        let r = mixing_check(&seq, &psi, &psi, &[0, 1, 2, 3, 4, 5], 2.0, 20_000, &SampleOptions::new(5)).unwrap();
        assert!(r.stat.pass, "{r:?}");
    }
}
