//! Derivative-free minimization with box constraints.
//!
//! [`minimize`] runs an adaptive Nelder–Mead simplex search where every
//! trial point is projected onto the bounds, restarting from the incumbent
//! until a restart no longer improves the objective. A finite-difference
//! Newton polish then sharpens interior coordinates, which the simplex
//! alone only locates to about the square root of its tolerance.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimOptions {
    /// Evaluation budget shared by all phases.
    pub max_evals: usize,
    /// Convergence when the relative spread of objective values in the
    /// simplex falls below this.
    pub rel_tol: f64,
    /// Initial simplex edge, relative to `max(|x_i|, 1)`.
    pub initial_step: f64,
    pub polish: bool,
}

impl Default for OptimOptions {
    fn default() -> Self {
        Self {
            max_evals: 200_000,
            rel_tol: 1e-8,
            initial_step: 0.2,
            polish: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub fx: f64,
    pub n_evals: usize,
    pub converged: bool,
}

struct Counted<F> {
    f: F,
    evals: usize,
}

impl<F: FnMut(&[f64]) -> f64> Counted<F> {
    fn call(&mut self, x: &[f64]) -> f64 {
        self.evals += 1;
        let v = (self.f)(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    }
}

fn project(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for ((xi, lo), hi) in x.iter_mut().zip(lower).zip(upper) {
        *xi = xi.clamp(*lo, *hi);
    }
}

pub fn minimize<F>(f: F, x0: &[f64], lower: &[f64], upper: &[f64], opts: &OptimOptions) -> OptimResult
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    assert_eq!(lower.len(), n);
    assert_eq!(upper.len(), n);
    let mut f = Counted { f, evals: 0 };
    let mut x = x0.to_vec();
    project(&mut x, lower, upper);
    let mut fx = f.call(&x);
    if n == 0 {
        return OptimResult {
            x,
            fx,
            n_evals: f.evals,
            converged: true,
        };
    }

    let mut step = opts.initial_step;
    let mut converged = false;
    loop {
        let (xn, fxn, ok) = nelder_mead(&mut f, &x, fx, lower, upper, step, opts);
        let improvement = fx - fxn;
        x = xn;
        fx = fxn;
        if !ok {
            break;
        }
        if improvement <= opts.rel_tol * (fx.abs() + opts.rel_tol) {
            converged = true;
            break;
        }
        step = (step * 0.5).max(1e-3);
    }

    if converged && opts.polish {
        let (xp, fp) = newton_polish(&mut f, &x, fx, lower, upper, opts.max_evals);
        x = xp;
        fx = fp;
    }

    OptimResult {
        x,
        fx,
        n_evals: f.evals,
        converged,
    }
}

/// One simplex run from `x0`. Returns the best vertex, its value, and
/// whether the tolerance was met before the budget ran out.
fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    f: &mut Counted<F>,
    x0: &[f64],
    f0: f64,
    lower: &[f64],
    upper: &[f64],
    step: f64,
    opts: &OptimOptions,
) -> (Vec<f64>, f64, bool) {
    let n = x0.len();
    let nf = n as f64;
    // Adaptive coefficients (Gao & Han) behave better in higher dimension.
    let alpha = 1.0;
    let gamma = 1.0 + 2.0 / nf;
    let rho = 0.75 - 1.0 / (2.0 * nf);
    let sigma = 1.0 - 1.0 / nf;

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), f0));
    for i in 0..n {
        let mut v = x0.to_vec();
        let h = step * x0[i].abs().max(1.0);
        v[i] += h;
        if v[i] > upper[i] {
            v[i] = x0[i] - h;
        }
        project(&mut v, lower, upper);
        if v == x0 {
            v[i] = x0[i] + h * 1e-3;
            project(&mut v, lower, upper);
        }
        let fv = f.call(&v);
        simplex.push((v, fv));
    }

    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let f_best = simplex[0].1;
        let f_worst = simplex[n].1;
        if (f_worst - f_best).abs() <= opts.rel_tol * (f_best.abs() + opts.rel_tol) {
            let (x, fx) = simplex.swap_remove(0);
            return (x, fx, true);
        }
        if f.evals >= opts.max_evals {
            let (x, fx) = simplex.swap_remove(0);
            return (x, fx, false);
        }

        let mut centroid = vec![0.0; n];
        for (v, _) in &simplex[..n] {
            for (c, vi) in centroid.iter_mut().zip(v) {
                *c += vi / nf;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            let mut p: Vec<f64> = centroid
                .iter()
                .zip(&simplex[n].0)
                .map(|(c, w)| c + t * (c - w))
                .collect();
            project(&mut p, lower, upper);
            p
        };

        let xr = along(alpha);
        let fr = f.call(&xr);
        if fr < simplex[0].1 {
            let xe = along(alpha * gamma);
            let fe = f.call(&xe);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < simplex[n].1 {
            let xc = along(alpha * rho);
            let fc = f.call(&xc);
            (xc, fc)
        } else {
            let xc = along(-rho);
            let fc = f.call(&xc);
            (xc, fc)
        };
        if fc < simplex[n].1.min(fr) {
            simplex[n] = (xc, fc);
            continue;
        }
        // shrink toward the best vertex
        let best = simplex[0].0.clone();
        for vert in simplex.iter_mut().skip(1) {
            let mut p: Vec<f64> = best
                .iter()
                .zip(&vert.0)
                .map(|(b, v)| b + sigma * (v - b))
                .collect();
            project(&mut p, lower, upper);
            let fp = f.call(&p);
            *vert = (p, fp);
        }
    }
}

/// Relative step for central-difference gradients, about the cube root of
/// machine epsilon.
const GRAD_STEP: f64 = 6e-6;

/// Damped Newton iterations using central-difference derivatives on the
/// coordinates that are not pinned at a bound.
fn newton_polish<F: FnMut(&[f64]) -> f64>(
    f: &mut Counted<F>,
    x0: &[f64],
    f0: f64,
    lower: &[f64],
    upper: &[f64],
    max_evals: usize,
) -> (Vec<f64>, f64) {
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut fx = f0;
    for _ in 0..20 {
        let h: Vec<f64> = x.iter().map(|xi| 1e-4 * xi.abs().max(1.0)).collect();
        let free: Vec<usize> = (0..n)
            .filter(|&i| x[i] - lower[i] > 2.0 * h[i] && upper[i] - x[i] > 2.0 * h[i])
            .collect();
        let m = free.len();
        if m == 0 || f.evals + 2 * m * m + 4 * m + 12 > max_evals {
            break;
        }
        let mut grad = DVector::zeros(m);
        let mut hess = DMatrix::zeros(m, m);
        let mut probe = x.clone();
        for (a, &i) in free.iter().enumerate() {
            probe[i] = x[i] + h[i];
            let fp = f.call(&probe);
            probe[i] = x[i] - h[i];
            let fm = f.call(&probe);
            hess[(a, a)] = (fp - 2.0 * fx + fm) / (h[i] * h[i]);
            // the gradient uses a shorter step: its truncation error sets
            // the attainable accuracy of the optimum
            let hg = GRAD_STEP * x[i].abs().max(1.0);
            probe[i] = x[i] + hg;
            let gp = f.call(&probe);
            probe[i] = x[i] - hg;
            let gm = f.call(&probe);
            probe[i] = x[i];
            grad[a] = (gp - gm) / (2.0 * hg);
        }
        for a in 0..m {
            for b in (a + 1)..m {
                let (i, j) = (free[a], free[b]);
                let mut g = |si: f64, sj: f64| {
                    probe[i] = x[i] + si * h[i];
                    probe[j] = x[j] + sj * h[j];
                    let v = f.call(&probe);
                    probe[i] = x[i];
                    probe[j] = x[j];
                    v
                };
                let v = (g(1.0, 1.0) - g(1.0, -1.0) - g(-1.0, 1.0) + g(-1.0, -1.0))
                    / (4.0 * h[i] * h[j]);
                hess[(a, b)] = v;
                hess[(b, a)] = v;
            }
        }
        if grad.iter().any(|g| !g.is_finite()) || hess.iter().any(|v| !v.is_finite()) {
            break;
        }

        let mut damping = 0.0;
        let scale = hess.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
        let dir = loop {
            let mut hd = hess.clone();
            for a in 0..m {
                hd[(a, a)] += damping;
            }
            if let Some(ch) = hd.cholesky() {
                break Some(-ch.solve(&grad));
            }
            damping = if damping == 0.0 { 1e-8 * scale } else { damping * 10.0 };
            if damping > 1e8 * scale {
                break None;
            }
        };
        let Some(dir) = dir else { break };

        // Close to the optimum the decrease from a Newton step is below the
        // resolution of f, so a tiny full step is kept unless it is
        // measurably worse; the gradient still carries the information.
        let x_norm = free.iter().map(|&i| x[i] * x[i]).sum::<f64>().sqrt();
        let tiny = dir.norm() < 1e-6 * (1.0 + x_norm);
        let noise = 1e-13 * (fx.abs() + 1.0);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..12 {
            let mut trial = x.clone();
            for (a, &i) in free.iter().enumerate() {
                trial[i] += t * dir[a];
            }
            project(&mut trial, lower, upper);
            let ft = f.call(&trial);
            if ft < fx || (tiny && t == 1.0 && ft <= fx + noise) {
                x = trial;
                fx = fx.min(ft);
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted || dir.norm() * t < 1e-11 * (1.0 + x_norm) {
            break;
        }
    }
    (x, fx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock_minimum() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let r = minimize(
            f,
            &[-1.2, 1.0],
            &[f64::NEG_INFINITY; 2],
            &[f64::INFINITY; 2],
            &OptimOptions::default(),
        );
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-6, "{:?}", r.x);
        assert!((r.x[1] - 1.0).abs() < 1e-6, "{:?}", r.x);
    }

    #[test]
    fn respects_lower_bound() {
        // unconstrained minimum at x = -2; bounded at 0
        let f = |x: &[f64]| (x[0] + 2.0).powi(2) + (x[1] - 3.0).powi(2);
        let r = minimize(
            f,
            &[1.0, 1.0],
            &[0.0, f64::NEG_INFINITY],
            &[f64::INFINITY; 2],
            &OptimOptions::default(),
        );
        assert!(r.x[0] >= 0.0);
        assert!(r.x[0] < 1e-6, "{:?}", r.x);
        assert!((r.x[1] - 3.0).abs() < 1e-7);
    }

    #[test]
    fn budget_exhaustion_reports_not_converged() {
        let f = |x: &[f64]| x.iter().map(|v| (v - 5.0).powi(2)).sum::<f64>();
        let opts = OptimOptions {
            max_evals: 15,
            ..Default::default()
        };
        let r = minimize(f, &[0.0; 4], &[f64::NEG_INFINITY; 4], &[f64::INFINITY; 4], &opts);
        assert!(!r.converged);
        assert!(r.n_evals <= 15 + 5);
    }

    #[test]
    fn quadratic_polish_is_precise() {
        let f = |x: &[f64]| {
            let (a, b) = (x[0] - 0.123456789, x[1] + 2.5);
            3.0 * a * a + a * b + 2.0 * b * b + 7.0
        };
        let r = minimize(
            f,
            &[1.0, 1.0],
            &[f64::NEG_INFINITY; 2],
            &[f64::INFINITY; 2],
            &OptimOptions::default(),
        );
        assert!((r.x[0] - 0.123456789).abs() < 1e-9);
        assert!((r.x[1] + 2.5).abs() < 1e-9);
    }
}
