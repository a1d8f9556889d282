//! Clamped B-spline bases for baseline intensities.
//!
//! The basis lives on `[lower, upper]` and is extended flat on both sides.
//! Integrals are exact: on each knot interval every basis function is a
//! polynomial of degree at most `degree`, and a Gauss-Legendre rule with
//! `degree / 2 + 1` nodes integrates such polynomials without error.

use crate::error::{Error, Result};

/// Highest supported polynomial degree.
pub const MAX_DEGREE: usize = 5;
/// Highest supported number of basis functions.
pub const MAX_BASIS: usize = 16;

#[derive(Clone, Debug, PartialEq)]
pub struct BSplineBasis {
    degree: usize,
    interior: Vec<f64>,
    lower: f64,
    upper: f64,
    knots: Vec<f64>,
    breaks: Vec<f64>,
    /// `cum[j][l]` is the integral of basis `l` from 0 to `breaks[j]`.
    cum: Vec<Vec<f64>>,
    at_lower: Vec<f64>,
    at_upper: Vec<f64>,
}

fn gauss_legendre(m: usize) -> (&'static [f64], &'static [f64]) {
    const X1: [f64; 1] = [0.0];
    const W1: [f64; 1] = [2.0];
    const X2: [f64; 2] = [-0.577_350_269_189_625_8, 0.577_350_269_189_625_8];
    const W2: [f64; 2] = [1.0, 1.0];
    const X3: [f64; 3] = [-0.774_596_669_241_483_4, 0.0, 0.774_596_669_241_483_4];
    const W3: [f64; 3] = [0.555_555_555_555_555_6, 0.888_888_888_888_888_8, 0.555_555_555_555_555_6];
    match m {
        1 => (&X1, &W1),
        2 => (&X2, &W2),
        _ => (&X3, &W3),
    }
}

impl BSplineBasis {
    /// Creates a clamped basis of the given degree.
    pub fn new(degree: usize, interior: Vec<f64>, lower: f64, upper: f64) -> Result<Self> {
        if degree > MAX_DEGREE {
            return Err(Error::Config(format!("spline degree {degree} exceeds {MAX_DEGREE}")));
        }
        if !(lower.is_finite() && upper.is_finite()) || lower < 0.0 || upper <= lower {
            return Err(Error::Config(format!(
                "spline boundary knots must satisfy 0 <= lower < upper (got {lower}, {upper})"
            )));
        }
        let mut prev = lower;
        for &k in &interior {
            if !(k > prev) {
                return Err(Error::Config("spline knots must be strictly increasing".into()));
            }
            prev = k;
        }
        if !(upper > prev) {
            return Err(Error::Config(
                "interior knots must lie strictly inside the boundary knots".into(),
            ));
        }
        let n_basis = interior.len() + degree + 1;
        if n_basis > MAX_BASIS {
            return Err(Error::Config(format!("spline has more than {MAX_BASIS} basis functions")));
        }
        let mut knots = vec![lower; degree + 1];
        knots.extend_from_slice(&interior);
        knots.extend(std::iter::repeat_n(upper, degree + 1));
        let mut breaks = vec![lower];
        breaks.extend_from_slice(&interior);
        breaks.push(upper);

        let mut basis = BSplineBasis {
            degree,
            interior,
            lower,
            upper,
            knots,
            breaks,
            cum: Vec::new(),
            at_lower: Vec::new(),
            at_upper: Vec::new(),
        };
        let mut v = vec![0.0; n_basis];
        basis.eval_raw(lower, &mut v);
        basis.at_lower = v.clone();
        basis.eval_raw(upper, &mut v);
        basis.at_upper = v.clone();

        let mut cum = Vec::with_capacity(basis.breaks.len());
        let mut acc: Vec<f64> = basis.at_lower.iter().map(|b| b * lower).collect();
        cum.push(acc.clone());
        for j in 0..basis.breaks.len() - 1 {
            let (a, b) = (basis.breaks[j], basis.breaks[j + 1]);
            basis.integrate_piece(a, b, &mut v);
            for (c, x) in acc.iter_mut().zip(&v) {
                *c += x;
            }
            cum.push(acc.clone());
        }
        basis.cum = cum;
        Ok(basis)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn interior(&self) -> &[f64] {
        &self.interior
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn n_basis(&self) -> usize {
        self.interior.len() + self.degree + 1
    }

    /// Evaluates every basis function at `t`, flat outside the boundary.
    pub fn eval(&self, t: f64, out: &mut [f64]) {
        if t <= self.lower {
            out[..self.n_basis()].copy_from_slice(&self.at_lower);
        } else if t >= self.upper {
            out[..self.n_basis()].copy_from_slice(&self.at_upper);
        } else {
            self.eval_raw(t, out);
        }
    }

    /// Integral of every basis function over `[0, t]`.
    pub fn integral(&self, t: f64, out: &mut [f64]) {
        let n = self.n_basis();
        if t <= self.lower {
            for (o, b) in out[..n].iter_mut().zip(&self.at_lower) {
                *o = b * t.max(0.0);
            }
            return;
        }
        if t >= self.upper {
            let last = &self.cum[self.cum.len() - 1];
            for l in 0..n {
                out[l] = last[l] + (t - self.upper) * self.at_upper[l];
            }
            return;
        }
        // breaks[j] <= t < breaks[j + 1]
        let j = self.breaks.partition_point(|&b| b <= t) - 1;
        let mut piece = [0.0; MAX_BASIS];
        self.integrate_piece(self.breaks[j], t, &mut piece[..n]);
        for l in 0..n {
            out[l] = self.cum[j][l] + piece[l];
        }
    }

    /// Gauss-Legendre integral over `[a, b]`, which must sit inside one knot interval.
    fn integrate_piece(&self, a: f64, b: f64, out: &mut [f64]) {
        let n = self.n_basis();
        out[..n].fill(0.0);
        if b <= a {
            return;
        }
        let (xs, ws) = gauss_legendre(self.degree / 2 + 1);
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let mut v = [0.0; MAX_BASIS];
        for (x, w) in xs.iter().zip(ws) {
            self.eval_raw(mid + half * x, &mut v[..n]);
            for l in 0..n {
                out[l] += w * half * v[l];
            }
        }
    }

    fn span(&self, t: f64) -> usize {
        let n = self.n_basis();
        if t >= self.upper {
            return n - 1;
        }
        // Largest i with knots[i] <= t, clamped to the valid span range.
        let i = self.knots.partition_point(|&k| k <= t) - 1;
        i.clamp(self.degree, n - 1)
    }

    /// Cox-de Boor recursion for the nonzero functions, written densely into `out`.
    fn eval_raw(&self, t: f64, out: &mut [f64]) {
        let n = self.n_basis();
        let p = self.degree;
        out[..n].fill(0.0);
        let i = self.span(t);
        let mut nz = [0.0; MAX_DEGREE + 1];
        let mut left = [0.0; MAX_DEGREE + 1];
        let mut right = [0.0; MAX_DEGREE + 1];
        nz[0] = 1.0;
        for j in 1..=p {
            left[j] = t - self.knots[i + 1 - j];
            right[j] = self.knots[i + j] - t;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let temp = if denom != 0.0 { nz[r] / denom } else { 0.0 };
                nz[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            nz[j] = saved;
        }
        for r in 0..=p {
            out[i - p + r] = nz[r];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(a + i as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn partition_of_unity() {
        for degree in 0..=3 {
            let b = BSplineBasis::new(degree, vec![0.3, 0.7, 1.1], 0.0, 2.0).unwrap();
            let mut v = vec![0.0; b.n_basis()];
            for i in 0..200 {
                let t = i as f64 * 0.0123;
                b.eval(t, &mut v);
                assert_relative_eq!(v.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
                assert!(v.iter().all(|&x| x >= -1e-15));
            }
        }
    }

    #[test]
    fn linear_spline_constant_coefficients() {
        let b = BSplineBasis::new(1, vec![1.0], 0.0, 2.0).unwrap();
        let mut v = vec![0.0; b.n_basis()];
        b.integral(2.0, &mut v);
        let total: f64 = v.iter().map(|x| 0.5 * x).sum();
        assert_relative_eq!(total, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn integral_matches_simpson_on_each_piece() {
        let b = BSplineBasis::new(3, vec![0.25, 0.6], 0.0, 1.5).unwrap();
        let n = b.n_basis();
        let mut v = vec![0.0; n];
        for &t in &[0.1, 0.25, 0.4, 0.6, 1.2, 1.5, 2.3] {
            b.integral(t, &mut v);
            for l in 0..n {
                let f = |x: f64| {
                    let mut w = vec![0.0; n];
                    b.eval(x, &mut w);
                    w[l]
                };
                // Simpson with breakpoints aligned to knots is exact for cubics.
                let mut pts = vec![0.0, 0.25, 0.6, 1.5];
                pts.retain(|&p| p < t);
                pts.push(t);
                let reference: f64 = pts.windows(2).map(|w| simpson(&f, w[0], w[1], 8)).sum();
                assert_relative_eq!(v[l], reference, epsilon = 1e-13, max_relative = 1e-11);
            }
        }
    }

    #[test]
    fn flat_extrapolation() {
        let b = BSplineBasis::new(2, vec![0.5], 0.0, 1.0).unwrap();
        let mut at = vec![0.0; b.n_basis()];
        let mut beyond = vec![0.0; b.n_basis()];
        b.eval(1.0, &mut at);
        b.eval(7.0, &mut beyond);
        assert_eq!(at, beyond);
        let mut i1 = vec![0.0; b.n_basis()];
        let mut i2 = vec![0.0; b.n_basis()];
        b.integral(1.0, &mut i1);
        b.integral(3.0, &mut i2);
        for l in 0..b.n_basis() {
            assert_relative_eq!(i2[l] - i1[l], 2.0 * at[l], epsilon = 1e-14);
        }
    }

    #[test]
    fn rejects_bad_knots() {
        assert!(BSplineBasis::new(1, vec![0.5, 0.5], 0.0, 1.0).is_err());
        assert!(BSplineBasis::new(1, vec![1.5], 0.0, 1.0).is_err());
        assert!(BSplineBasis::new(1, vec![], 1.0, 1.0).is_err());
        assert!(BSplineBasis::new(9, vec![], 0.0, 1.0).is_err());
    }
}
