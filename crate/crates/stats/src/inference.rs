//! Likelihood-ratio tests, information criteria, R² families, odds ratios
//! and the per-task OLS slope.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};

use crate::error::{Result, StatsError};
use crate::fit::MixedModelFit;
use crate::formula::Family;

/// 97.5% quantile of the standard normal.
pub const Z_975: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    Greater,
    Less,
    TwoSided,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub df: Option<f64>,
    pub p_value: f64,
    pub alternative: Alternative,
    pub effect_size: Option<f64>,
}

/// Upper tail of χ²(df) at `x`.
pub fn chi2_sf(x: f64, df: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    let chi = ChiSquared::new(df).expect("positive df");
    chi.sf(x).clamp(0.0, 1.0)
}

/// Likelihood-ratio test of nested models: `Λ = -2 (ℓ_null - ℓ_alt)`.
///
/// A statistic that is negative only by optimizer noise (relative 1e-6) is
/// clamped to zero.
pub fn lrt(loglik_null: f64, loglik_alt: f64, df_delta: u32) -> Result<TestResult> {
    if df_delta < 1 {
        return Err(StatsError::InvalidDf);
    }
    let stat = -2.0 * (loglik_null - loglik_alt);
    let slack = 1e-6 * loglik_null.abs().max(1.0);
    if stat < -2.0 * slack {
        return Err(StatsError::NegativeStatistic(stat));
    }
    let stat = stat.max(0.0);
    Ok(TestResult {
        statistic: stat,
        df: Some(df_delta as f64),
        p_value: chi2_sf(stat, df_delta as f64),
        alternative: Alternative::Greater,
        effect_size: None,
    })
}

pub fn aic(n_params: usize, loglik: f64) -> f64 {
    2.0 * n_params as f64 - 2.0 * loglik
}

pub fn bic(n_params: usize, loglik: f64, n_obs: usize) -> f64 {
    n_params as f64 * (n_obs as f64).ln() - 2.0 * loglik
}

/// McFadden pseudo-R²: `1 - ℓ_full / ℓ_null`.
pub fn mcfadden_r2(loglik_full: f64, loglik_null: f64) -> f64 {
    1.0 - loglik_full / loglik_null
}

/// Nakagawa–Schielzeth marginal and conditional R².
///
/// The distribution-specific variance is π²/3 for the logit link and the
/// residual variance for the gaussian family.
pub fn nakagawa_r2(
    var_fixed: f64,
    var_random_total: f64,
    family: Family,
    residual_var: f64,
) -> Result<(f64, f64)> {
    for v in [var_fixed, var_random_total, residual_var] {
        if v < 0.0 || !v.is_finite() {
            return Err(StatsError::NegativeVariance(v));
        }
    }
    let var_dist = match family {
        Family::BernoulliLogit => std::f64::consts::PI.powi(2) / 3.0,
        Family::Gaussian => residual_var,
    };
    let total = var_fixed + var_random_total + var_dist;
    if total <= 0.0 {
        return Err(StatsError::AllZeroVariance);
    }
    Ok((var_fixed / total, (var_fixed + var_random_total) / total))
}

pub fn odds_ratio(beta: f64) -> f64 {
    beta.exp()
}

/// Per-cell odds ratio `exp(β + Σ_f u_slope[f, level_f])` using the
/// conditional modes of a model with random slopes on `covariate`.
///
/// `cell` lists (factor, level) pairs; factors without a random term in the
/// fit are an error, as are unknown levels.
pub fn conditional_odds_ratio(
    fit: &MixedModelFit,
    covariate: &str,
    cell: &[(&str, &str)],
) -> Result<f64> {
    let beta = fit
        .fixed(covariate)
        .ok_or_else(|| StatsError::UnknownColumn(covariate.to_string()))?
        .estimate;
    let mut eta = beta;
    for (factor, level) in cell {
        let modes = fit
            .modes(factor)
            .ok_or_else(|| StatsError::MissingSlope(factor.to_string()))?;
        let slot = modes
            .terms
            .iter()
            .position(|t| t == covariate)
            .ok_or_else(|| StatsError::MissingSlope(factor.to_string()))?;
        let lm = modes.level(level).ok_or_else(|| StatsError::MissingLevel {
            factor: factor.to_string(),
            level: level.to_string(),
        })?;
        eta += lm.values[slot];
    }
    Ok(eta.exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlsSlope {
    pub slope: f64,
    pub intercept: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub t: f64,
    pub p_value: f64,
    pub n: usize,
}

/// Simple least-squares regression of `y` on `x` with a t-based 95% CI and
/// two-sided p-value on the slope.
pub fn ols_slope(x: &[f64], y: &[f64]) -> Result<OlsSlope> {
    let n = x.len();
    if n != y.len() {
        return Err(StatsError::LengthMismatch {
            column: "y".into(),
            expected: n,
            found: y.len(),
        });
    }
    if n < 3 {
        return Err(StatsError::TooFewObservations { needed: 3, found: n });
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx <= f64::EPSILON * nf * mx.abs().max(1.0).powi(2) {
        return Err(StatsError::DegenerateX);
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - intercept - slope * a).powi(2))
        .sum();
    let dof = nf - 2.0;
    let se = (rss / dof / sxx).sqrt();
    let tdist = StudentsT::new(0.0, 1.0, dof).expect("positive dof");
    let tcrit = tdist.inverse_cdf(0.975);
    let (t, p) = if se > 0.0 {
        let t = slope / se;
        (t, (2.0 * tdist.sf(t.abs())).min(1.0))
    } else if slope.abs() <= f64::EPSILON * my.abs().max(1.0) {
        (0.0, 1.0)
    } else {
        (slope.signum() * f64::INFINITY, 0.0)
    };
    Ok(OlsSlope {
        slope,
        intercept,
        se,
        ci_low: slope - tcrit * se,
        ci_high: slope + tcrit * se,
        t,
        p_value: p,
        n,
    })
}
