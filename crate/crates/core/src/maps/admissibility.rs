use serde::Serialize;

use super::sequence::MapSequence;
use crate::error::{Error, Result};
use crate::fit::linear_fit;

/// Tolerance on the fitted drift (condition A) and limit (condition B).
pub const FIT_TOL: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrendVerdict {
    pub pass: bool,
    /// Fitted liminf (A) or limit (B).
    pub estimate: f64,
    /// Fitted drift coefficient: `b` in `a + b sqrt(n)` (A) or `c` in `L + c / sqrt(j)` (B).
    pub trend: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AdmissibilityReport {
    pub n_max: usize,
    /// `dist_j` for `j = 0..=n_max`.
    pub dists: Vec<f64>,
    /// `(1/n) sum_{j<n} log dist_j` for `n = 1..=n_max`.
    pub cesaro_averages: Vec<f64>,
    /// `(1/j) log dist_j` for `j = 1..=n_max`.
    pub per_index_rates: Vec<f64>,
    pub verdict_a: TrendVerdict,
    pub verdict_b: TrendVerdict,
}

/// Diagnostics for the Cesàro condition (A) and the per-index condition (B).
///
/// Both verdicts are least-squares fits over the last half of the index range.
/// (A) fits `C_n = a + b sqrt(n)` and passes when `b >= -FIT_TOL`;
/// (B) fits `r_j = L + c / sqrt(j)` and passes when `|L| <= FIT_TOL`.
pub fn check_admissibility(seq: &MapSequence, n_max: usize) -> Result<AdmissibilityReport> {
    if n_max < 10 {
        return Err(Error::InvalidArgument(format!("n_max = {n_max} must be at least 10")));
    }
    let dists = (0..=n_max).map(|j| seq.map(j).map(|f| f.dist_to_degenerate())).collect::<Result<Vec<_>>>()?;

    // Running mean: exact for a constant input.
    let mut cesaro_averages = Vec::with_capacity(n_max);
    let mut mean = 0.0;
    for (k, d) in dists[..n_max].iter().enumerate() {
        mean += (d.ln() - mean) / (k + 1) as f64;
        cesaro_averages.push(mean);
    }
    let per_index_rates: Vec<f64> = (1..=n_max).map(|j| dists[j].ln() / j as f64).collect();

    let lo = n_max / 2;
    let ns: Vec<f64> = (lo..=n_max).map(|n| n as f64).collect();

    let xa: Vec<f64> = ns.iter().map(|n| n.sqrt()).collect();
    let ya: Vec<f64> = (lo..=n_max).map(|n| cesaro_averages[n - 1]).collect();
    let fa = linear_fit(&xa, &ya).expect("at least six distinct abscissae");
    let liminf = ya.iter().copied().fold(f64::INFINITY, f64::min);
    let verdict_a = TrendVerdict { pass: fa.slope >= -FIT_TOL, estimate: liminf, trend: fa.slope };

    let xb: Vec<f64> = ns.iter().map(|j| 1.0 / j.sqrt()).collect();
    let yb: Vec<f64> = (lo..=n_max).map(|j| per_index_rates[j - 1]).collect();
    let fb = linear_fit(&xb, &yb).expect("at least six distinct abscissae");
    let verdict_b = TrendVerdict { pass: fb.intercept.abs() <= FIT_TOL, estimate: fb.intercept, trend: fb.slope };

    Ok(AdmissibilityReport { n_max, dists, cesaro_averages, per_index_rates, verdict_a, verdict_b })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maps::{DistanceProfile, HomogeneousMap};

    #[test]
    fn constant_squaring_passes_both() {
        let seq = MapSequence::constant(HomogeneousMap::power(2).unwrap());
        let r = check_admissibility(&seq, 50).unwrap();
        assert!(r.verdict_a.pass && r.verdict_b.pass);
        assert!(r.cesaro_averages.iter().all(|&c| c == 0.0));
        assert_eq!(r.cesaro_averages.len(), 50);
        assert_eq!(r.per_index_rates.len(), 50);
    }

    #[test]
    fn constant_sequence_cesaro_is_exact() {
        let f: HomogeneousMap = "(z^2+0.3)/(z^2-0.9)".parse().unwrap();
        let l = f.dist_to_degenerate().ln();
        assert!(l < 0.0);
        let r = check_admissibility(&MapSequence::constant(f), 40).unwrap();
        assert!(r.cesaro_averages.iter().all(|&c| c == l));
    }

    #[test]
    fn exponential_profile_fails_b_with_limit_minus_one() {
        let seq = MapSequence::degenerating(2, DistanceProfile::Exponential { rate: 1.0 }).unwrap();
        let r = check_admissibility(&seq, 24).unwrap();
        assert!(!r.verdict_b.pass);
        assert!((r.verdict_b.estimate + 1.0).abs() < 0.05, "{}", r.verdict_b.estimate);
    }

    #[test]
    fn root_exponential_profile_passes_b_fails_a() {
        let seq = MapSequence::degenerating(2, DistanceProfile::RootExponential { rate: 1.0 }).unwrap();
        let r = check_admissibility(&seq, 400).unwrap();
        assert!(r.verdict_b.pass, "{:?}", r.verdict_b);
        assert!(!r.verdict_a.pass, "{:?}", r.verdict_a);
        assert!((r.verdict_a.trend + 2.0 / 3.0).abs() < 0.05);
    }

    #[test]
    fn rejects_short_ranges() {
        let seq = MapSequence::constant(HomogeneousMap::power(2).unwrap());
        assert!(check_admissibility(&seq, 9).is_err());
    }
}
