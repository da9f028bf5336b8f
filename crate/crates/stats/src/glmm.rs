//! Logistic mixed models by Laplace approximation.
//!
//! Conditional modes come from penalized iteratively reweighted least
//! squares (PIRLS). The fit runs in two stages: first θ alone with β
//! estimated jointly with the modes inside PIRLS, then θ and β together on
//! the Laplace deviance
//!
//! ```text
//! -2 log L(θ, β) ≈ -2 Σ log p(y | η) + ‖u‖² + log det(ΛᵀZᵀWZΛ + I)
//! ```
//!
//! evaluated at the conditional mode `u` for that (θ, β).

use std::cell::RefCell;

use nalgebra::{DMatrix, DVector};

use crate::design::Design;
use crate::error::{Result, StatsError};
use crate::fit::{assemble, FitParts, MixedModelFit};
use crate::formula::{Estimation, Family, ModelSpec};
use crate::lmm::FitOptions;
use crate::optimize::minimize;
use crate::table::DataTable;

const PIRLS_MAX_ITER: usize = 60;
const PIRLS_TOL: f64 = 1e-11;
/// Linear predictors beyond this magnitude on a row whose outcomes all
/// agree mean the likelihood is being driven to the 0/1 boundary.
const SEPARATION_ETA: f64 = 20.0;

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `-2 Σ [s η - n log(1 + e^η)]`
fn deviance_part(d: &Design, eta: &[f64]) -> f64 {
    -2.0 * d
        .rows
        .iter()
        .zip(eta)
        .map(|(r, e)| r.y * e - r.weight * softplus(*e))
        .sum::<f64>()
}

struct Working {
    weights: Vec<f64>,
    resid: Vec<f64>,
}

fn working(d: &Design, eta: &[f64]) -> Working {
    let mut weights = Vec::with_capacity(eta.len());
    let mut resid = Vec::with_capacity(eta.len());
    for (r, e) in d.rows.iter().zip(eta) {
        let mu = logistic(*e);
        weights.push(r.weight * mu * (1.0 - mu));
        resid.push(r.y - r.weight * mu);
    }
    Working { weights, resid }
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

struct Mode {
    u: DVector<f64>,
    beta: DVector<f64>,
    /// `-2 log L + ‖u‖²` at the mode.
    pdev: f64,
    /// `log det(ΛᵀZᵀWZΛ + I)` at the mode.
    logdet: f64,
}

impl Mode {
    fn laplace(&self) -> f64 {
        self.pdev + self.logdet
    }
}

/// PIRLS over `u` (and over β as well when `joint`), starting at (u0, β0).
fn pirls(d: &Design, theta: &[f64], beta0: &DVector<f64>, u0: &DVector<f64>, joint: bool) -> Result<Mode> {
    let (q, p) = (d.q, d.p);
    let mut u = u0.clone();
    let mut beta = beta0.clone();
    let eval = |u: &DVector<f64>, beta: &DVector<f64>| -> (Vec<f64>, f64) {
        let eta = add(&d.x_times(beta), &d.zl_times(theta, u));
        let pdev = deviance_part(d, &eta) + u.norm_squared();
        (eta, pdev)
    };
    let (mut eta, mut pdev) = eval(&u, &beta);
    if !pdev.is_finite() {
        return Err(StatsError::Numerical("non-finite penalized deviance".into()));
    }

    for _ in 0..PIRLS_MAX_ITER {
        let w = working(d, &eta);
        let cp = d.crossprod(theta, &w.weights);
        let (gz, gx) = d.transpose_times(theta, &w.resid);
        let gu = gz - &u;
        let (du, db) = if joint {
            let mut h = DMatrix::zeros(q + p, q + p);
            h.view_mut((0, 0), (q, q)).copy_from(&cp.a);
            h.view_mut((0, q), (q, p)).copy_from(&cp.b);
            h.view_mut((q, 0), (p, q)).copy_from(&cp.b.transpose());
            h.view_mut((q, q), (p, p)).copy_from(&cp.c);
            let mut g = DVector::zeros(q + p);
            g.rows_mut(0, q).copy_from(&gu);
            g.rows_mut(q, p).copy_from(&gx);
            let ch = h.cholesky().ok_or_else(|| hessian_failure(d, &eta))?;
            let step = ch.solve(&g);
            (step.rows(0, q).into_owned(), step.rows(q, p).into_owned())
        } else {
            let ch = cp.a.cholesky().ok_or_else(|| hessian_failure(d, &eta))?;
            (ch.solve(&gu), DVector::zeros(p))
        };

        let size = du.amax().max(db.amax());
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let un = &u + &du * t;
            let bn = &beta + &db * t;
            let (en, pn) = eval(&un, &bn);
            if pn.is_finite() && pn <= pdev + 1e-12 * pdev.abs() {
                u = un;
                beta = bn;
                eta = en;
                pdev = pn;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted || size * t < PIRLS_TOL {
            break;
        }
    }

    let w = working(d, &eta);
    let cp = d.crossprod(theta, &w.weights);
    let ch = cp.a.cholesky().ok_or_else(|| hessian_failure(d, &eta))?;
    let logdet = 2.0 * ch.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    Ok(Mode {
        u,
        beta,
        pdev,
        logdet,
    })
}

/// Covariance of β̂ from the penalized Hessian at the mode.
fn beta_covariance(d: &Design, theta: &[f64], mode: &Mode) -> Result<DMatrix<f64>> {
    let eta = add(&d.x_times(&mode.beta), &d.zl_times(theta, &mode.u));
    let w = working(d, &eta);
    let cp = d.crossprod(theta, &w.weights);
    let a = cp
        .a
        .cholesky()
        .ok_or_else(|| StatsError::Numerical("random-effects block not positive definite".into()))?;
    let schur = &cp.c - cp.b.transpose() * a.solve(&cp.b);
    schur
        .try_inverse()
        .ok_or_else(|| StatsError::Numerical("fixed-effects information is singular".into()))
}

fn pinned(d: &Design, eta: &[f64]) -> bool {
    d.rows.iter().zip(eta).any(|(r, e)| {
        let all_same = r.y == 0.0 || r.y == r.weight;
        all_same && e.abs() > SEPARATION_ETA
    })
}

/// A Hessian that loses definiteness while rows sit at the 0/1 boundary is
/// reported as separation rather than a generic numerical failure.
fn hessian_failure(d: &Design, eta: &[f64]) -> StatsError {
    if pinned(d, eta) {
        StatsError::SeparationDetected
    } else {
        StatsError::Numerical("PIRLS Hessian not positive definite".into())
    }
}

fn check_separation(d: &Design, theta: &[f64], mode: &Mode) -> Result<()> {
    let eta = add(&d.x_times(&mode.beta), &d.zl_times(theta, &mode.u));
    if pinned(d, &eta) {
        Err(StatsError::SeparationDetected)
    } else {
        Ok(())
    }
}

pub fn fit_glmm(data: &DataTable, spec: &ModelSpec, opts: &FitOptions) -> Result<MixedModelFit> {
    if spec.family != Family::BernoulliLogit {
        return Err(StatsError::WrongFamily("bernoulli_logit"));
    }
    spec.validate()?;
    let y = data.numeric(&spec.response)?;
    if y.iter().any(|v| *v != 0.0 && *v != 1.0) {
        return Err(StatsError::NonBinaryResponse(spec.response.clone()));
    }
    let d = Design::build(data, spec, true)?;
    let (q, p) = (d.q, d.p);

    let beta_init = match &opts.beta_start {
        Some(b) if b.len() == p => DVector::from_column_slice(b),
        _ => DVector::zeros(p),
    };
    let zero_u = DVector::zeros(q);

    if let Some(theta) = &opts.fixed_theta {
        let mode = pirls(&d, theta, &beta_init, &zero_u, true)?;
        check_separation(&d, theta, &mode)?;
        let cov = beta_covariance(&d, theta, &mode)?;
        return Ok(finish(&d, spec, theta.clone(), mode, cov, true, 1));
    }

    let (theta0, lower_theta) = d.theta_start_and_bounds();
    let theta0 = opts.theta_start.clone().unwrap_or(theta0);
    let upper_theta = d.theta_upper_bounds(1e3);
    let n_theta = d.n_theta;

    // stage 1: θ only, β inside PIRLS
    let warm = RefCell::new((zero_u.clone(), beta_init.clone()));
    let stage1 = minimize(
        |th| {
            let (u0, b0) = warm.borrow().clone();
            match pirls(&d, th, &b0, &u0, true) {
                Ok(m) => {
                    let dev = m.laplace();
                    *warm.borrow_mut() = (m.u, m.beta);
                    dev
                }
                Err(_) => f64::INFINITY,
            }
        },
        &theta0,
        &lower_theta,
        &upper_theta,
        &opts.optim,
    );
    let m1 = pirls(&d, &stage1.x, &beta_init, &zero_u, true)?;

    // stage 2: θ and β jointly
    let mut x0 = stage1.x.clone();
    x0.extend(m1.beta.iter());
    let mut lower = lower_theta;
    lower.extend(std::iter::repeat_n(f64::NEG_INFINITY, p));
    let mut upper = upper_theta;
    upper.extend(std::iter::repeat_n(f64::INFINITY, p));
    let warm_u = RefCell::new(m1.u.clone());
    let stage2_objective = |x: &[f64]| {
        let (th, b) = x.split_at(n_theta);
        let beta = DVector::from_column_slice(b);
        let u0 = warm_u.borrow().clone();
        match pirls(&d, th, &beta, &u0, false) {
            Ok(m) => {
                let dev = m.laplace();
                *warm_u.borrow_mut() = m.u;
                dev
            }
            Err(_) => f64::INFINITY,
        }
    };
    // Stage 1 profiles β by the penalized deviance rather than the Laplace
    // criterion, so a caller-supplied (θ, β) start can be slightly better.
    if let (Some(t), Some(b)) = (&opts.theta_start, &opts.beta_start) {
        if t.len() == n_theta && b.len() == p {
            let mut given = t.clone();
            given.extend(b.iter());
            let from_stage1 = stage2_objective(&x0);
            if stage2_objective(&given) < from_stage1 {
                x0 = given;
            } else {
                stage2_objective(&x0);
            }
        }
    }
    let mut budget = opts.optim;
    budget.max_evals = budget.max_evals.saturating_sub(stage1.n_evals).max(1);
    let stage2 = minimize(stage2_objective, &x0, &lower, &upper, &budget);

    let (theta, b) = stage2.x.split_at(n_theta);
    let beta = DVector::from_column_slice(b);
    let mode = pirls(&d, theta, &beta, &m1.u, false)?;
    check_separation(&d, theta, &mode)?;
    let cov = beta_covariance(&d, theta, &mode)?;
    Ok(finish(
        &d,
        spec,
        theta.to_vec(),
        mode,
        cov,
        stage1.converged && stage2.converged,
        stage1.n_evals + stage2.n_evals,
    ))
}

fn finish(
    d: &Design,
    spec: &ModelSpec,
    theta: Vec<f64>,
    mode: Mode,
    cov: DMatrix<f64>,
    converged: bool,
    n_evals: usize,
) -> MixedModelFit {
    let loglik = -mode.laplace() / 2.0;
    assemble(FitParts {
        design: d,
        family: Family::BernoulliLogit,
        estimation: Estimation::Ml,
        formula: spec.formula(),
        beta_cov: cov,
        beta: mode.beta,
        u: mode.u,
        scale: 1.0,
        residual_variance: None,
        loglik,
        n_params: d.p + d.n_theta,
        converged,
        n_evals,
        theta,
    })
}
