//! Quasi-Newton minimization with finite-difference derivatives.

use nalgebra::{DMatrix, DVector};

use crate::numeric::{cholesky, cholesky_solve};

#[derive(Debug, Clone, Copy)]
pub struct BfgsSettings {
    /// Stop when |Δf| / max(|f|, 1) falls below this.
    pub rel_tol: f64,
    /// Stop when the largest parameter change falls below this.
    pub step_tol: f64,
    pub max_iter: usize,
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: DVector<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn fd_step(x: f64, rel: f64) -> f64 {
    rel * x.abs().max(1.0)
}

/// Central-difference gradient.
pub fn gradient<F: Fn(&DVector<f64>) -> f64>(f: &F, x: &DVector<f64>) -> DVector<f64> {
    let mut g = DVector::zeros(x.len());
    let mut xp = x.clone();
    for k in 0..x.len() {
        let h = fd_step(x[k], 1e-5);
        xp[k] = x[k] + h;
        let fp = f(&xp);
        xp[k] = x[k] - h;
        let fm = f(&xp);
        xp[k] = x[k];
        g[k] = (fp - fm) / (2.0 * h);
    }
    g
}

/// Central-difference Hessian restricted to the coordinates in `free`.
pub fn hessian<F: Fn(&DVector<f64>) -> f64>(
    f: &F,
    x: &DVector<f64>,
    free: &[usize],
) -> DMatrix<f64> {
    let m = free.len();
    let f0 = f(x);
    let h: Vec<f64> = free.iter().map(|&k| fd_step(x[k], 1e-4)).collect();
    let mut out = DMatrix::zeros(m, m);
    let mut xp = x.clone();
    let mut eval = |shifts: &[(usize, f64)]| {
        for &(k, d) in shifts {
            xp[k] += d;
        }
        let v = f(&xp);
        for &(k, _) in shifts {
            xp[k] = x[k];
        }
        v
    };
    for a in 0..m {
        let ka = free[a];
        let fp = eval(&[(ka, h[a])]);
        let fm = eval(&[(ka, -h[a])]);
        out[(a, a)] = (fp - 2.0 * f0 + fm) / (h[a] * h[a]);
        for b in 0..a {
            let kb = free[b];
            let fpp = eval(&[(ka, h[a]), (kb, h[b])]);
            let fpm = eval(&[(ka, h[a]), (kb, -h[b])]);
            let fmp = eval(&[(ka, -h[a]), (kb, h[b])]);
            let fmm = eval(&[(ka, -h[a]), (kb, -h[b])]);
            let v = (fpp - fpm - fmp + fmm) / (4.0 * h[a] * h[b]);
            out[(a, b)] = v;
            out[(b, a)] = v;
        }
    }
    out
}

/// BFGS on the inverse Hessian with a backtracking Armijo line search.
pub fn bfgs<F: Fn(&DVector<f64>) -> f64>(f: &F, x0: DVector<f64>, s: &BfgsSettings) -> Minimum {
    let n = x0.len();
    let mut x = x0;
    let mut fx = f(&x);
    let mut g = gradient(f, &x);
    let mut hinv = DMatrix::<f64>::identity(n, n);
    let mut first = true;
    let mut iterations = 0;

    while iterations < s.max_iter {
        iterations += 1;
        let mut dir = -(&hinv * &g);
        let mut slope = g.dot(&dir);
        if slope >= 0.0 {
            hinv = DMatrix::identity(n, n);
            dir = -g.clone();
            slope = g.dot(&dir);
        }
        if first {
            // keep the very first trial step modest
            let scale = (1.0 / dir.amax()).min(1.0);
            dir *= scale;
            slope *= scale;
        }
        let mut alpha = 1.0;
        let mut accepted = None;
        while alpha > 1e-12 {
            let xn = &x + &dir * alpha;
            let fxn = f(&xn);
            if fxn.is_finite() && fxn <= fx + 1e-4 * alpha * slope {
                accepted = Some((xn, fxn));
                break;
            }
            alpha *= 0.5;
        }
        let Some((xn, fxn)) = accepted else {
            // no descent along the quasi-Newton direction: treat as converged
            return Minimum {
                x,
                value: fx,
                iterations,
                converged: true,
            };
        };
        let gn = gradient(f, &xn);
        let step = &xn - &x;
        let yk = &gn - &g;
        let sy = step.dot(&yk);
        let rel_change = (fx - fxn).abs() / fxn.abs().max(1.0);
        let max_step = step.amax();
        x = xn;
        fx = fxn;
        g = gn;

        if sy > 1e-12 * step.norm() * yk.norm() {
            if first {
                hinv = DMatrix::identity(n, n) * (sy / yk.norm_squared());
                first = false;
            }
            let rho = 1.0 / sy;
            let hy = &hinv * &yk;
            let yhy = yk.dot(&hy);
            hinv += (&step * step.transpose()) * (rho * rho * yhy + rho)
                - (&hy * step.transpose() + &step * hy.transpose()) * rho;
        }

        if rel_change < s.rel_tol || max_step < s.step_tol {
            return Minimum {
                x,
                value: fx,
                iterations,
                converged: true,
            };
        }
    }
    Minimum {
        x,
        value: fx,
        iterations,
        converged: false,
    }
}

/// Newton refinement over the `free` coordinates using a fixed Hessian.
///
/// Returns the number of accepted steps; stops when the Hessian is not
/// positive definite or a step no longer decreases `f`.
pub fn newton_polish<F: Fn(&DVector<f64>) -> f64>(
    f: &F,
    x: &mut DVector<f64>,
    fx: &mut f64,
    hess: &DMatrix<f64>,
    free: &[usize],
    max_steps: usize,
) -> usize {
    let Some(l) = cholesky(hess) else {
        return 0;
    };
    let mut taken = 0;
    for _ in 0..max_steps {
        let g = gradient(f, x);
        let gf = DVector::from_iterator(free.len(), free.iter().map(|&k| g[k]));
        let d = cholesky_solve(&l, &gf);
        let mut cand = x.clone();
        for (a, &k) in free.iter().enumerate() {
            cand[k] -= d[a];
        }
        let fc = f(&cand);
        if fc.is_nan() || fc > *fx {
            break;
        }
        *x = cand;
        *fx = fc;
        taken += 1;
        if d.amax() < 1e-10 {
            break;
        }
    }
    taken
}
