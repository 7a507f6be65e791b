use num_complex::Complex64;

/// Largest supported algebraic degree.
pub const MAX_DEGREE: usize = 8;

/// A binary form `sum_i c[i] z0^i z1^(d-i)`.
///
/// In the chart `z = z0 / z1` this is the polynomial `sum_i c[i] z^i`.
#[derive(Clone, Debug, PartialEq)]
pub struct BinaryForm {
    coeffs: Vec<Complex64>,
}

impl BinaryForm {
    pub fn new(coeffs: Vec<Complex64>) -> Self {
        assert!(!coeffs.is_empty(), "a binary form needs at least one coefficient");
        BinaryForm { coeffs }
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    /// `z0^d`.
    pub fn monomial_z0(degree: usize) -> Self {
        let mut c = vec![Complex64::new(0.0, 0.0); degree + 1];
        c[degree] = Complex64::new(1.0, 0.0);
        BinaryForm::new(c)
    }

    /// `z1^d`.
    pub fn monomial_z1(degree: usize) -> Self {
        let mut c = vec![Complex64::new(0.0, 0.0); degree + 1];
        c[0] = Complex64::new(1.0, 0.0);
        BinaryForm::new(c)
    }

    pub fn scaled(&self, s: Complex64) -> Self {
        BinaryForm::new(self.coeffs.iter().map(|c| c * s).collect())
    }

    /// Evaluation, expanding in the ratio of the smaller to the larger coordinate.
    pub fn eval(&self, z0: Complex64, z1: Complex64) -> Complex64 {
        eval_form(&self.coeffs, z0, z1)
    }

    /// `sum_i |c_i| |z0|^i |z1|^(d-i)`, the scale used for backward errors.
    pub fn abs_eval(&self, a0: f64, a1: f64) -> f64 {
        abs_eval_form(&self.coeffs, a0, a1)
    }

    /// `d/dz0`, a form of degree `d - 1`.
    pub fn d_z0(&self) -> BinaryForm {
        let d = self.degree();
        if d == 0 {
            return BinaryForm::new(vec![Complex64::new(0.0, 0.0)]);
        }
        BinaryForm::new((0..d).map(|i| self.coeffs[i + 1] * (i + 1) as f64).collect())
    }

    /// `d/dz1`, a form of degree `d - 1`.
    pub fn d_z1(&self) -> BinaryForm {
        let d = self.degree();
        if d == 0 {
            return BinaryForm::new(vec![Complex64::new(0.0, 0.0)]);
        }
        BinaryForm::new((0..d).map(|i| self.coeffs[i] * (d - i) as f64).collect())
    }
}

pub(crate) fn eval_form(c: &[Complex64], z0: Complex64, z1: Complex64) -> Complex64 {
    let d = c.len() - 1;
    if z0.norm_sqr() >= z1.norm_sqr() {
        // z0^d * sum_i c_i t^(d-i), t = z1 / z0
        if z0.norm_sqr() == 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        let t = z1 / z0;
        let mut acc = Complex64::new(0.0, 0.0);
        for ci in c.iter() {
            acc = acc * t + ci;
        }
        acc * z0.powu(d as u32)
    } else {
        // z1^d * sum_i c_i s^i, s = z0 / z1
        let s = z0 / z1;
        let mut acc = Complex64::new(0.0, 0.0);
        for ci in c.iter().rev() {
            acc = acc * s + ci;
        }
        acc * z1.powu(d as u32)
    }
}

pub(crate) fn abs_eval_form(c: &[Complex64], a0: f64, a1: f64) -> f64 {
    // Horner in the chart where the ratio is at most one.
    let d = c.len() - 1;
    let mut acc = 0.0;
    if a0 >= a1 {
        if a0 == 0.0 {
            return 0.0;
        }
        let t = a1 / a0;
        for ci in c {
            acc = acc * t + ci.norm_sqr().sqrt();
        }
        acc * a0.powi(d as i32)
    } else {
        let s = a0 / a1;
        for ci in c.iter().rev() {
            acc = acc * s + ci.norm_sqr().sqrt();
        }
        acc * a1.powi(d as i32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn eval_matches_naive_sum() {
        let f = BinaryForm::new(vec![c(1.0, 2.0), c(-0.5, 0.0), c(0.0, 3.0), c(2.0, -1.0)]);
        for &(z0, z1) in &[(c(0.3, 0.1), c(1.0, -0.2)), (c(2.0, 1.0), c(0.1, 0.4)), (c(0.0, 0.0), c(1.0, 0.0))] {
            let naive: Complex64 = (0..=3).map(|i| f.coeffs()[i] * z0.powu(i as u32) * z1.powu(3 - i as u32)).sum();
            assert!((f.eval(z0, z1) - naive).norm() < 1e-12 * (1.0 + naive.norm()));
        }
    }

    #[test]
    fn partial_derivatives() {
        // z0^2 z1 + 3 z1^3
        let f = BinaryForm::new(vec![c(3.0, 0.0), c(0.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)]);
        let (z0, z1) = (c(0.7, -0.2), c(-1.1, 0.4));
        assert!((f.d_z0().eval(z0, z1) - 2.0 * z0 * z1).norm() < 1e-13);
        assert!((f.d_z1().eval(z0, z1) - (z0 * z0 + 9.0 * z1 * z1)).norm() < 1e-13);
    }
}
