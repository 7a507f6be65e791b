use rayon::prelude::*;
use serde::Serialize;

use super::sequence::MapSequence;
use crate::error::{Error, Result};
use crate::geometry::{point_from_sphere, sphere_angles, sphere_grid, ProjectivePoint};

/// Number of best grid points refined by pattern search.
const REFINE_STARTS: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LyapunovEstimate {
    pub n: usize,
    /// `(1/n) log sup_x |D_x F_n|`.
    pub estimate: f64,
    /// `(1/n) sum_j log sup_x |D f_j|`, the sub-multiplicative upper trend.
    pub upper_trend: f64,
    /// Point where the supremum was found.
    pub argmax: ProjectivePoint,
}

/// `sum_{j<n} log |D f_j|` along the forward orbit of `x`.
fn log_orbit_derivative(seq: &MapSequence, start: usize, n: usize, x: &ProjectivePoint) -> f64 {
    let mut y = *x;
    let mut acc = 0.0;
    for j in start..start + n {
        let f = match seq.map(j) {
            Ok(f) => f,
            Err(_) => return f64::NEG_INFINITY,
        };
        let dn = f.derivative_norm(&y);
        if dn == 0.0 {
            return f64::NEG_INFINITY;
        }
        acc += dn.ln();
        if j + 1 < start + n {
            y = match f.evaluate(&y) {
                Ok(v) => v,
                Err(_) => return f64::NEG_INFINITY,
            };
        }
    }
    acc
}

/// Maximizes `objective` over the sphere: grid sweep, then compass search in
/// (polar, azimuth) coordinates from the best grid points.
fn maximize_on_sphere<F>(grid_size: usize, objective: F) -> (f64, ProjectivePoint)
where
    F: Fn(&ProjectivePoint) -> f64 + Sync,
{
    let grid = sphere_grid(grid_size);
    let values: Vec<f64> = grid.par_iter().map(&objective).collect();
    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let spacing = (4.0 * std::f64::consts::PI / grid_size as f64).sqrt();

    let refined: Vec<(f64, ProjectivePoint)> = order
        .iter()
        .take(REFINE_STARTS)
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&&i| {
            let (mut th, mut ph) = sphere_angles(&grid[i]);
            let mut best = values[i];
            let mut step = spacing;
            while step > 1e-13 {
                let mut improved = false;
                for (dt, dp) in [(1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0)] {
                    let (t2, p2) = (th + dt * step, ph + dp * step);
                    let v = objective(&point_from_sphere(t2, p2));
                    if v > best {
                        best = v;
                        th = t2;
                        ph = p2;
                        improved = true;
                        break;
                    }
                }
                if !improved {
                    step *= 0.5;
                }
            }
            (best, point_from_sphere(th, ph))
        })
        .collect();

    let mut best = (values[order[0]], grid[order[0]]);
    for cand in refined {
        if cand.0 > best.0 {
            best = cand;
        }
    }
    best
}

/// Topological Lyapunov exponent of the sequence over `n` steps.
pub fn topological_lyapunov(seq: &MapSequence, n: usize, grid_size: usize) -> Result<LyapunovEstimate> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    if grid_size < 1000 {
        return Err(Error::InvalidArgument(format!("grid_size = {grid_size} must be at least 1000")));
    }
    for j in 0..n {
        seq.map(j)?;
    }
    let (best, argmax) = maximize_on_sphere(grid_size, |x| log_orbit_derivative(seq, 0, n, x));

    let steps = if seq.is_constant() { 1 } else { n };
    let mut sup_sum = 0.0;
    for j in 0..steps {
        let f = seq.map(j)?;
        let (v, _) = maximize_on_sphere(grid_size, |x| f.derivative_norm(x).ln());
        sup_sum += v;
    }
    let upper_trend = if seq.is_constant() { sup_sum } else { sup_sum / n as f64 };

    Ok(LyapunovEstimate { n, estimate: best / n as f64, upper_trend, argmax })
}
