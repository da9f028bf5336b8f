//! Linear mixed models by profiled (restricted) maximum likelihood.
//!
//! For fixed θ the penalized least-squares problem
//!
//! ```text
//! [ΛᵀZᵀZΛ + I   ΛᵀZᵀX] [u]   [ΛᵀZᵀy]
//! [XᵀZΛ         XᵀX  ] [β] = [Xᵀy  ]
//! ```
//!
//! is solved by block Cholesky; β and σ² are profiled out in closed form and
//! the resulting deviance is minimized over θ alone.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::design::Design;
use crate::error::{Result, StatsError};
use crate::fit::{assemble, FitParts, MixedModelFit};
use crate::formula::{Estimation, Family, ModelSpec};
use crate::optimize::{minimize, OptimOptions};
use crate::table::DataTable;

#[derive(Debug, Clone, Default)]
pub struct FitOptions {
    pub optim: OptimOptions,
    /// Skip the outer optimization and evaluate at this θ.
    pub fixed_theta: Option<Vec<f64>>,
    /// Starting θ for the outer optimization.
    pub theta_start: Option<Vec<f64>>,
    /// Starting β (logit family only).
    pub beta_start: Option<Vec<f64>>,
}

struct Pls {
    deviance: f64,
    beta: DVector<f64>,
    u: DVector<f64>,
    sigma2: f64,
    /// Penalized residual sum of squares `‖y − Xβ − ZΛu‖² + ‖u‖²`.
    r2: f64,
    /// Unpenalized part `‖y − Xβ − ZΛu‖²`.
    rss: f64,
    /// `(RXᵀRX)⁻¹`, to be scaled by σ².
    rx_inv: DMatrix<f64>,
}

fn chol(m: DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    m.cholesky()
        .ok_or_else(|| StatsError::Numerical(format!("{what} is not positive definite")))
}

fn solve_pls(d: &Design, theta: &[f64], reml: bool) -> Result<Pls> {
    let n = d.rows.len() as f64;
    let p = d.p as f64;
    let ones = vec![1.0; d.rows.len()];
    let cp = d.crossprod(theta, &ones);
    let y: Vec<f64> = d.rows.iter().map(|r| r.y).collect();
    let (zty, xty) = d.transpose_times(theta, &y);

    let l = chol(cp.a, "ΛᵀZᵀZΛ + I")?;
    let lm = l.l();
    let cu = lm
        .solve_lower_triangular(&zty)
        .ok_or_else(|| StatsError::Numerical("triangular solve".into()))?;
    let rzx = lm
        .solve_lower_triangular(&cp.b)
        .ok_or_else(|| StatsError::Numerical("triangular solve".into()))?;
    let schur = &cp.c - rzx.transpose() * &rzx;
    let rx = chol(schur, "fixed-effects Schur complement")?;
    let beta = rx.solve(&(xty - rzx.transpose() * &cu));
    let u = lm
        .transpose()
        .solve_upper_triangular(&(cu - &rzx * &beta))
        .ok_or_else(|| StatsError::Numerical("triangular solve".into()))?;

    let fitted_x = d.x_times(&beta);
    let fitted_z = d.zl_times(theta, &u);
    let rss: f64 = y
        .iter()
        .zip(fitted_x.iter().zip(&fitted_z))
        .map(|(yi, (a, b))| (yi - a - b).powi(2))
        .sum();
    let r2 = rss + u.norm_squared();

    let ldl: f64 = 2.0 * lm.diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let two_pi = 2.0 * std::f64::consts::PI;
    let (deviance, sigma2) = if reml {
        let ldx: f64 = 2.0 * rx.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let dof = n - p;
        (
            ldl + ldx + dof * (1.0 + (two_pi * r2 / dof).ln()),
            r2 / dof,
        )
    } else {
        (ldl + n * (1.0 + (two_pi * r2 / n).ln()), r2 / n)
    };
    Ok(Pls {
        deviance,
        beta,
        u,
        sigma2,
        r2,
        rss,
        rx_inv: rx.inverse(),
    })
}

/// Scale for the random-effect covariances when the fit interpolates the
/// data exactly.
///
/// The profiled criterion is unbounded in that case and its limit spreads
/// the penalty over all n observations. The data only span rank([X Z])
/// dimensions, so the penalty is divided by that rank (less p under REML),
/// which is the estimate from the reduced, noise-free model.
fn collapsed_scale(d: &Design, pls: &Pls, reml: bool) -> Option<f64> {
    let n = d.rows.len();
    let mean = d.rows.iter().map(|r| r.y).sum::<f64>() / n as f64;
    let tss: f64 = d.rows.iter().map(|r| (r.y - mean).powi(2)).sum();
    if tss <= 0.0 || pls.rss > 1e-12 * tss {
        return None;
    }
    let identity: Vec<f64> = {
        let (start, _) = d.theta_start_and_bounds();
        start
    };
    let mut m = DMatrix::zeros(n, d.p + d.q);
    let mut entries = Vec::new();
    for (i, row) in d.rows.iter().enumerate() {
        for (j, v) in row.x.iter().enumerate() {
            m[(i, j)] = *v;
        }
        entries.clear();
        d.zl_row(row, &identity, &mut entries);
        for (j, v) in &entries {
            m[(i, d.p + j)] += v;
        }
    }
    let sv = m.singular_values();
    let tol = sv.max() * (n.max(d.p + d.q) as f64) * f64::EPSILON;
    let rank = sv.iter().filter(|s| **s > tol).count();
    let dof = if reml { rank.checked_sub(d.p)? } else { rank };
    (dof > 0).then(|| pls.r2 / dof as f64)
}

pub fn fit_lmm(data: &DataTable, spec: &ModelSpec, opts: &FitOptions) -> Result<MixedModelFit> {
    if spec.family != Family::Gaussian {
        return Err(StatsError::WrongFamily("gaussian"));
    }
    spec.validate()?;
    let d = Design::build(data, spec, false)?;
    if d.rows.len() <= d.p {
        return Err(StatsError::TooFewObservations {
            needed: d.p + 1,
            found: d.rows.len(),
        });
    }
    let reml = spec.estimation == Estimation::Reml;

    let (theta, converged, n_evals) = match &opts.fixed_theta {
        Some(t) => (t.clone(), true, 1),
        None => {
            let (start, lower) = d.theta_start_and_bounds();
            let start = opts.theta_start.clone().unwrap_or(start);
            // a vanishing residual sends the relative factor to infinity
            let upper = d.theta_upper_bounds(1e4);
            let r = minimize(
                |th| solve_pls(&d, th, reml).map_or(f64::INFINITY, |s| s.deviance),
                &start,
                &lower,
                &upper,
                &opts.optim,
            );
            (r.x, r.converged, r.n_evals)
        }
    };

    let pls = solve_pls(&d, &theta, reml)?;
    let n_params = d.p + d.n_theta + 1;
    let scale = collapsed_scale(&d, &pls, reml).unwrap_or(pls.sigma2);
    Ok(assemble(FitParts {
        design: &d,
        family: Family::Gaussian,
        estimation: spec.estimation,
        formula: spec.formula(),
        beta_cov: &pls.rx_inv * pls.sigma2,
        beta: pls.beta,
        u: pls.u,
        scale,
        residual_variance: Some(pls.sigma2),
        loglik: -pls.deviance / 2.0,
        n_params,
        converged,
        n_evals,
        theta,
    }))
}
