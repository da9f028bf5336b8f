//! Fitted mixed-model summaries and the pieces shared by both fitters.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::design::Design;
use crate::formula::{Estimation, Family};
use crate::inference::{nakagawa_r2, Z_975};

/// Fixed-effect estimate with Wald inference against a standard normal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedEffect {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
    pub z: f64,
    pub p_value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// `exp(estimate)`, logit family only.
    pub odds_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceComponent {
    pub factor: String,
    /// `["(Intercept)"]` or `["(Intercept)", covariate]`.
    pub terms: Vec<String>,
    pub variances: Vec<f64>,
    pub covariance: Option<f64>,
    /// Intercept–slope correlation; absent when either variance is zero.
    pub correlation: Option<f64>,
}

impl VarianceComponent {
    pub fn intercept_variance(&self) -> f64 {
        self.variances[0]
    }

    pub fn slope_variance(&self) -> Option<f64> {
        self.variances.get(1).copied()
    }

    pub fn trace(&self) -> f64 {
        self.variances.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelMode {
    pub level: String,
    /// Intercept deviation, then slope deviation when present.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorModes {
    pub factor: String,
    pub terms: Vec<String>,
    pub levels: Vec<LevelMode>,
}

impl FactorModes {
    pub fn level(&self, level: &str) -> Option<&LevelMode> {
        self.levels.iter().find(|l| l.level == level)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedModelFit {
    pub formula: String,
    pub family: Family,
    pub estimation: Estimation,
    pub n_obs: usize,
    pub beta: Vec<FixedEffect>,
    pub theta: Vec<VarianceComponent>,
    /// Raw relative Cholesky parameters at the optimum.
    pub theta_raw: Vec<f64>,
    /// Residual variance σ², gaussian family only.
    pub residual_variance: Option<f64>,
    pub cond_modes: Vec<FactorModes>,
    /// Log-likelihood (REML criterion for REML fits, Laplace
    /// approximation for logit fits).
    pub loglik: f64,
    pub n_params: usize,
    pub aic: f64,
    pub bic: f64,
    pub converged: bool,
    /// A variance component collapsed to the boundary.
    pub singular: bool,
    pub n_evals: usize,
    pub var_fixed: f64,
    pub var_random: f64,
    pub r2_marginal: Option<f64>,
    pub r2_conditional: Option<f64>,
}

impl MixedModelFit {
    pub fn fixed(&self, name: &str) -> Option<&FixedEffect> {
        self.beta.iter().find(|b| b.name == name)
    }

    pub fn component(&self, factor: &str) -> Option<&VarianceComponent> {
        self.theta.iter().find(|c| c.factor == factor)
    }

    pub fn modes(&self, factor: &str) -> Option<&FactorModes> {
        self.cond_modes.iter().find(|m| m.factor == factor)
    }
}

/// Diagonal θ entries below this count as collapsed.
pub(crate) const SINGULAR_TOL: f64 = 1e-4;

pub(crate) fn is_singular(design: &Design, theta: &[f64]) -> bool {
    design.terms.iter().any(|t| {
        let b = t.block(theta);
        (0..t.dim).any(|i| b[i][i] < SINGULAR_TOL)
    })
}

pub(crate) struct FitParts<'a> {
    pub design: &'a Design,
    pub family: Family,
    pub estimation: Estimation,
    pub formula: String,
    pub theta: Vec<f64>,
    pub beta: DVector<f64>,
    pub beta_cov: DMatrix<f64>,
    pub u: DVector<f64>,
    /// Scale multiplying `Λ Λᵀ` (σ² for gaussian, 1 for logit).
    pub scale: f64,
    /// Residual variance, gaussian only.
    pub residual_variance: Option<f64>,
    pub loglik: f64,
    pub n_params: usize,
    pub converged: bool,
    pub n_evals: usize,
}

pub(crate) fn assemble(parts: FitParts<'_>) -> MixedModelFit {
    let d = parts.design;
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let beta = d
        .fixed_names
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let est = parts.beta[i];
            let se = parts.beta_cov[(i, i)].max(0.0).sqrt();
            let z = est / se;
            let p = if se > 0.0 {
                (2.0 * normal.sf(z.abs())).min(1.0)
            } else {
                f64::NAN
            };
            FixedEffect {
                name: name.clone(),
                estimate: est,
                se,
                z,
                p_value: p,
                ci_low: est - Z_975 * se,
                ci_high: est + Z_975 * se,
                odds_ratio: (parts.family == Family::BernoulliLogit).then(|| est.exp()),
            }
        })
        .collect();

    let theta_components: Vec<VarianceComponent> = d
        .terms
        .iter()
        .map(|t| {
            let c = t.relative_covariance(&parts.theta);
            let mut terms = vec!["(Intercept)".to_string()];
            if let Some(s) = &t.term.slope {
                terms.push(s.clone());
            }
            let variances: Vec<f64> = (0..t.dim).map(|i| parts.scale * c[i][i]).collect();
            let (covariance, correlation) = if t.dim == 2 {
                let cov = parts.scale * c[0][1];
                let corr = if variances[0] > 0.0 && variances[1] > 0.0 {
                    Some((cov / (variances[0] * variances[1]).sqrt()).clamp(-1.0, 1.0))
                } else {
                    None
                };
                (Some(cov), corr)
            } else {
                (None, None)
            };
            VarianceComponent {
                factor: t.term.factor.clone(),
                terms,
                variances,
                covariance,
                correlation,
            }
        })
        .collect();

    let modes = d.modes(&parts.theta, &parts.u);
    let cond_modes = d
        .terms
        .iter()
        .zip(modes)
        .map(|(t, lv)| FactorModes {
            factor: t.term.factor.clone(),
            terms: theta_components
                .iter()
                .find(|c| c.factor == t.term.factor)
                .map(|c| c.terms.clone())
                .unwrap_or_default(),
            levels: t
                .levels
                .iter()
                .zip(lv)
                .map(|(l, b)| LevelMode {
                    level: l.clone(),
                    values: b[..t.dim].to_vec(),
                })
                .collect(),
        })
        .collect();

    let var_fixed = d.fixed_prediction_variance(&parts.beta);
    let var_random: f64 = theta_components.iter().map(VarianceComponent::trace).sum();
    let residual_variance = parts.residual_variance;
    let (r2_marginal, r2_conditional) =
        match nakagawa_r2(var_fixed, var_random, parts.family, residual_variance.unwrap_or(0.0)) {
            Ok((m, c)) => (Some(m), Some(c)),
            Err(_) => (None, None),
        };

    let k = parts.n_params as f64;
    MixedModelFit {
        formula: parts.formula,
        family: parts.family,
        estimation: parts.estimation,
        n_obs: d.n_obs,
        beta,
        theta: theta_components,
        singular: is_singular(d, &parts.theta),
        theta_raw: parts.theta,
        residual_variance,
        cond_modes,
        loglik: parts.loglik,
        n_params: parts.n_params,
        aic: 2.0 * k - 2.0 * parts.loglik,
        bic: k * (d.n_obs as f64).ln() - 2.0 * parts.loglik,
        converged: parts.converged,
        n_evals: parts.n_evals,
        var_fixed,
        var_random,
        r2_marginal,
        r2_conditional,
    }
}
