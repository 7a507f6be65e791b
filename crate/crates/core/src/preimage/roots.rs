//! Simultaneous root finding for univariate complex polynomials.

use num_complex::Complex64;

const MAX_ITER: usize = 500;

/// Roots of `sum_i c[i] z^i` with nonzero `c[0]` and `c[last]`, by
/// Aberth–Ehrlich iteration (Gauss–Seidel updates).
pub(crate) fn aberth(c: &[Complex64]) -> Vec<Complex64> {
    let m = c.len() - 1;
    match m {
        0 => return Vec::new(),
        1 => return vec![-c[0] / c[1]],
        2 => return quadratic(c[2], c[1], c[0]),
        _ => {}
    }
    let dc: Vec<Complex64> = (1..=m).map(|i| c[i] * i as f64).collect();
    let lead = c[m];
    let radius = (c[0].norm() / lead.norm()).powf(1.0 / m as f64);
    let mut z: Vec<Complex64> = (0..m)
        .map(|k| Complex64::from_polar(radius, 2.0 * std::f64::consts::PI * k as f64 / m as f64 + 0.4))
        .collect();
    for _ in 0..MAX_ITER {
        let mut converged = true;
        for i in 0..m {
            let zi = z[i];
            let (p, dp) = horner_with_derivative(c, &dc, zi);
            if p.norm_sqr() == 0.0 {
                continue;
            }
            let ratio = p / dp;
            let mut s = Complex64::new(0.0, 0.0);
            for (j, zj) in z.iter().enumerate() {
                if j != i {
                    s += (zi - zj).inv();
                }
            }
            let denom = Complex64::new(1.0, 0.0) - ratio * s;
            let w = if denom.is_finite() && denom.norm_sqr() > 0.0 { ratio / denom } else { ratio };
            if !w.is_finite() {
                continue;
            }
            z[i] = zi - w;
            if w.norm_sqr().sqrt() > 1e-15 * (1.0 + z[i].norm_sqr().sqrt()) {
                converged = false;
            }
        }
        if converged {
            break;
        }
    }
    z
}

fn horner_with_derivative(c: &[Complex64], dc: &[Complex64], z: Complex64) -> (Complex64, Complex64) {
    let mut p = Complex64::new(0.0, 0.0);
    for ci in c.iter().rev() {
        p = p * z + ci;
    }
    let mut dp = Complex64::new(0.0, 0.0);
    for ci in dc.iter().rev() {
        dp = dp * z + ci;
    }
    (p, dp)
}

/// Principal square root without the polar round trip.
fn sqrt(w: Complex64) -> Complex64 {
    let r = w.norm_sqr().sqrt();
    if r == 0.0 {
        return Complex64::new(0.0, 0.0);
    }
    let a = (0.5 * (r + w.re.abs())).sqrt();
    if w.re >= 0.0 {
        Complex64::new(a, w.im / (2.0 * a))
    } else {
        Complex64::new(w.im.abs() / (2.0 * a), a.copysign(w.im))
    }
}

/// Roots of `a z^2 + b z + c` avoiding cancellation.
fn quadratic(a: Complex64, b: Complex64, c: Complex64) -> Vec<Complex64> {
    let disc = sqrt(b * b - 4.0 * a * c);
    let q = if (b.conj() * disc).re >= 0.0 { -0.5 * (b + disc) } else { -0.5 * (b - disc) };
    if q.norm_sqr() == 0.0 {
        return vec![Complex64::new(0.0, 0.0); 2];
    }
    vec![q / a, c / q]
}
