//! BFGS minimisation with a backtracking Armijo line search.

use nalgebra::{DMatrix, DVector};

#[derive(Clone, Debug)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Stop when the largest absolute gradient entry falls below this.
    pub gtol: f64,
    /// Stop when the relative decrease of `f` stays below this for three iterations.
    pub ftol: f64,
    /// Cap on the Euclidean length of a single step.
    pub max_step: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        BfgsOptions {
            max_iter: 500,
            gtol: 1e-8,
            ftol: 1e-14,
            max_step: 5.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BfgsResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub message: String,
}

/// Minimises `f`, which writes the gradient into its second argument and
/// returns the function value.
pub fn minimize<F>(mut f: F, x0: &[f64], opts: &BfgsOptions) -> BfgsResult
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = DVector::from_column_slice(x0);
    let mut g = DVector::zeros(n);
    let mut fx = f(x.as_slice(), g.as_mut_slice());
    let mut evals = 1;
    if n == 0 {
        return BfgsResult {
            x: vec![],
            f: fx,
            grad: vec![],
            iterations: 0,
            evaluations: evals,
            converged: true,
            message: "no parameters".into(),
        };
    }
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return BfgsResult {
            x: x0.to_vec(),
            f: fx,
            grad: g.as_slice().to_vec(),
            iterations: 0,
            evaluations: evals,
            converged: false,
            message: "objective not finite at the starting point".into(),
        };
    }
    let mut hinv = DMatrix::<f64>::identity(n, n);
    let gnorm0 = g.amax();
    if gnorm0 > 0.0 {
        hinv *= (1.0 / gnorm0).min(1.0);
    }
    let mut small_steps = 0;
    let mut x_new = DVector::zeros(n);
    let mut g_new = DVector::zeros(n);
    for iter in 0..opts.max_iter {
        if g.amax() <= opts.gtol {
            return BfgsResult {
                x: x.as_slice().to_vec(),
                f: fx,
                grad: g.as_slice().to_vec(),
                iterations: iter,
                evaluations: evals,
                converged: true,
                message: "gradient tolerance reached".into(),
            };
        }
        let mut d = -(&hinv * &g);
        let mut slope = d.dot(&g);
        if slope >= 0.0 {
            hinv = DMatrix::identity(n, n);
            d = -g.clone();
            slope = d.dot(&g);
        }
        let dn = d.norm();
        if dn > opts.max_step {
            d *= opts.max_step / dn;
            slope *= opts.max_step / dn;
        }
        let mut step = 1.0;
        let mut accepted = false;
        let mut f_new = fx;
        for _ in 0..60 {
            x_new.copy_from(&x);
            x_new.axpy(step, &d, 1.0);
            f_new = f(x_new.as_slice(), g_new.as_mut_slice());
            evals += 1;
            if f_new.is_finite() && g_new.iter().all(|v| v.is_finite()) && f_new <= fx + 1e-4 * step * slope {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            return BfgsResult {
                x: x.as_slice().to_vec(),
                f: fx,
                grad: g.as_slice().to_vec(),
                iterations: iter,
                evaluations: evals,
                converged: g.amax() <= opts.gtol.sqrt(),
                message: "line search failed to decrease the objective".into(),
            };
        }
        let s = &x_new - &x;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        let rel_decrease = (fx - f_new) / fx.abs().max(1.0);
        x.copy_from(&x_new);
        g.copy_from(&g_new);
        fx = f_new;
        if sy > 1e-12 * s.norm() * y.norm() {
            if iter == 0 {
                hinv = DMatrix::identity(n, n) * (sy / y.dot(&y));
            }
            let rho = 1.0 / sy;
            let hy = &hinv * &y;
            let yhy = y.dot(&hy);
            // H+ = H - rho (s hy' + hy s') + (rho^2 y'Hy + rho) s s'
            hinv -= (&s * hy.transpose() + &hy * s.transpose()) * rho;
            hinv += (&s * s.transpose()) * (rho * rho * yhy + rho);
        }
        if rel_decrease < opts.ftol {
            small_steps += 1;
            if small_steps >= 3 {
                return BfgsResult {
                    x: x.as_slice().to_vec(),
                    f: fx,
                    grad: g.as_slice().to_vec(),
                    iterations: iter + 1,
                    evaluations: evals,
                    converged: true,
                    message: "relative function tolerance reached".into(),
                };
            }
        } else {
            small_steps = 0;
        }
    }
    BfgsResult {
        x: x.as_slice().to_vec(),
        f: fx,
        grad: g.as_slice().to_vec(),
        iterations: opts.max_iter,
        evaluations: evals,
        converged: g.amax() <= opts.gtol,
        message: "iteration limit reached".into(),
    }
}

/// Central-difference gradient of `f` with step `h`.
pub fn numerical_gradient<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], h: f64, out: &mut [f64]) {
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        let orig = xp[i];
        xp[i] = orig + h;
        let fp = f(&xp);
        xp[i] = orig - h;
        let fm = f(&xp);
        xp[i] = orig;
        out[i] = (fp - fm) / (2.0 * h);
    }
}

/// Central-difference Hessian from function values only.
pub fn numerical_hessian<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], h: f64) -> DMatrix<f64> {
    let n = x.len();
    let mut hm = DMatrix::zeros(n, n);
    let mut xp = x.to_vec();
    let f0 = f(&xp);
    for i in 0..n {
        for j in i..n {
            let v = if i == j {
                xp[i] = x[i] + h;
                let fp = f(&xp);
                xp[i] = x[i] - h;
                let fm = f(&xp);
                xp[i] = x[i];
                (fp - 2.0 * f0 + fm) / (h * h)
            } else {
                let mut corner = |si: f64, sj: f64, xp: &mut Vec<f64>| {
                    xp[i] = x[i] + si * h;
                    xp[j] = x[j] + sj * h;
                    let v = f(xp);
                    xp[i] = x[i];
                    xp[j] = x[j];
                    v
                };
                let fpp = corner(1.0, 1.0, &mut xp);
                let fpm = corner(1.0, -1.0, &mut xp);
                let fmp = corner(-1.0, 1.0, &mut xp);
                let fmm = corner(-1.0, -1.0, &mut xp);
                (fpp - fpm - fmp + fmm) / (4.0 * h * h)
            };
            hm[(i, j)] = v;
            hm[(j, i)] = v;
        }
    }
    hm
}
