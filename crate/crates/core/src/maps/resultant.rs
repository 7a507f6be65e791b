use num_complex::Complex64;

use super::form::BinaryForm;

/// Sylvester resultant of two binary forms of the same formal degree `d`.
///
/// Coefficients are read as polynomials in `z = z0 / z1` of formal degree `d`,
/// so a vanishing leading coefficient (a root at infinity) is handled by the
/// homogeneous determinant rather than by degree reduction.
pub fn resultant(p: &BinaryForm, q: &BinaryForm) -> Complex64 {
    assert_eq!(p.degree(), q.degree(), "resultant needs forms of equal degree");
    let d = p.degree();
    if d == 0 {
        return Complex64::new(1.0, 0.0);
    }
    let n = 2 * d;
    let mut m = vec![Complex64::new(0.0, 0.0); n * n];
    for r in 0..d {
        for k in 0..=d {
            m[r * n + r + k] = p.coeffs()[d - k];
            m[(r + d) * n + r + k] = q.coeffs()[d - k];
        }
    }
    determinant(&mut m, n)
}

/// Determinant by LU decomposition with partial pivoting (destroys `m`).
pub(crate) fn determinant(m: &mut [Complex64], n: usize) -> Complex64 {
    let mut det = Complex64::new(1.0, 0.0);
    for col in 0..n {
        let mut piv = col;
        let mut best = m[col * n + col].norm();
        for r in col + 1..n {
            let v = m[r * n + col].norm();
            if v > best {
                best = v;
                piv = r;
            }
        }
        if best == 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        if piv != col {
            for k in 0..n {
                m.swap(col * n + k, piv * n + k);
            }
            det = -det;
        }
        let pivot = m[col * n + col];
        det *= pivot;
        for r in col + 1..n {
            let factor = m[r * n + col] / pivot;
            if factor.norm_sqr() == 0.0 {
                continue;
            }
            for k in col + 1..n {
                let sub = factor * m[col * n + k];
                m[r * n + k] -= sub;
            }
        }
    }
    det
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn squaring_map_has_unit_resultant() {
        let r = resultant(&BinaryForm::monomial_z0(2), &BinaryForm::monomial_z1(2));
        assert!((r - c(1.0)).norm() < 1e-15);
    }

    #[test]
    fn quadratic_family_matches_closed_form() {
        for &t in &[0.0, 0.25, 0.5, 0.9, 0.999] {
            let p = BinaryForm::new(vec![c(0.0), c(0.0), c(1.0)]);
            let q = BinaryForm::new(vec![c(1.0 - t), c(0.0), c(t)]);
            let r = resultant(&p, &q);
            assert!((r.norm() - (1.0 - t).powi(2)).abs() < 1e-14, "t={t}: {r}");
        }
    }

    #[test]
    fn general_quadratics_match_binary_formula() {
        // (a0b2 - a2b0)^2 - (a0b1 - a1b0)(a1b2 - a2b1)
        let a = [Complex64::new(0.3, -1.0), Complex64::new(2.0, 0.5), Complex64::new(-0.7, 0.2)];
        let b = [Complex64::new(1.1, 0.4), Complex64::new(-0.2, 0.9), Complex64::new(0.5, -0.5)];
        let closed = (a[0] * b[2] - a[2] * b[0]).powu(2) - (a[0] * b[1] - a[1] * b[0]) * (a[1] * b[2] - a[2] * b[1]);
        let r = resultant(&BinaryForm::new(a.to_vec()), &BinaryForm::new(b.to_vec()));
        assert!((r.norm() - closed.norm()).abs() < 1e-13);
    }

    #[test]
    fn shared_root_gives_zero() {
        let p = BinaryForm::new(vec![c(1.0), c(-3.0), c(2.0)]);
        assert!(resultant(&p, &p).norm() < 1e-15);
        // common root at infinity
        let p = BinaryForm::new(vec![c(1.0), c(1.0), c(0.0)]);
        let q = BinaryForm::new(vec![c(2.0), c(-1.0), c(0.0)]);
        assert!(resultant(&p, &q).norm() < 1e-15);
    }

    #[test]
    fn product_of_root_differences() {
        // Res(prod (z - a_i), prod (z - b_j)) = prod (a_i - b_j) for monic forms
        let roots_p = [c(0.5), Complex64::new(-1.0, 2.0), c(3.0)];
        let roots_q = [Complex64::new(0.0, 1.0), c(-2.0), Complex64::new(1.5, -0.5)];
        let expand = |roots: &[Complex64]| {
            let mut coeffs = vec![c(1.0)];
            for r in roots {
                let mut next = vec![c(0.0); coeffs.len() + 1];
                for (i, ci) in coeffs.iter().enumerate() {
                    next[i + 1] += ci;
                    next[i] -= ci * r;
                }
                coeffs = next;
            }
            BinaryForm::new(coeffs)
        };
        let mut expected = c(1.0);
        for a in &roots_p {
            for b in &roots_q {
                expected *= a - b;
            }
        }
        let r = resultant(&expand(&roots_p), &expand(&roots_q));
        assert!((r.norm() - expected.norm()).abs() < 1e-10 * expected.norm());
    }
}
