//! Fitting a sequence of nested models, each warm-started from the last.
//!
//! Starting a larger model at the smaller model's optimum, with the added
//! parameters at zero, reproduces the smaller model's likelihood exactly.
//! The optimizer never leaves its starting point for a worse one, so the
//! fitted log-likelihoods are non-decreasing along the sequence.

use crate::error::Result;
use crate::fit::MixedModelFit;
use crate::formula::{Family, ModelSpec};
use crate::glmm::fit_glmm;
use crate::lmm::{fit_lmm, FitOptions};
use crate::table::DataTable;

/// Start values for `next` taken from `prev`, matched by factor and
/// fixed-effect name. Intercept-only blocks are embedded in the top-left of
/// intercept+slope blocks; anything new starts at zero.
pub fn warm_start(prev: &MixedModelFit, next: &ModelSpec, base: &FitOptions) -> FitOptions {
    let mut offsets = Vec::new();
    let mut at = 0;
    for c in &prev.theta {
        let n = if c.terms.len() == 2 { 3 } else { 1 };
        offsets.push((c.factor.as_str(), c.terms.len(), at));
        at += n;
    }
    let mut theta = Vec::new();
    for t in &next.random_terms {
        let found = offsets.iter().find(|(f, _, _)| *f == t.factor);
        let block: Vec<f64> = match (found, t.dim()) {
            (Some(&(_, 1, o)), 1) => vec![prev.theta_raw[o]],
            (Some(&(_, 1, o)), _) => vec![prev.theta_raw[o], 0.0, 0.0],
            (Some(&(_, _, o)), 1) => vec![prev.theta_raw[o]],
            (Some(&(_, _, o)), _) => prev.theta_raw[o..o + 3].to_vec(),
            (None, 1) => vec![0.0],
            (None, _) => vec![0.0, 0.0, 0.0],
        };
        theta.extend(block);
    }
    let mut names = vec!["(Intercept)".to_string()];
    names.extend(next.fixed_terms.iter().cloned());
    let beta = names
        .iter()
        .map(|n| prev.fixed(n).map_or(0.0, |b| b.estimate))
        .collect();
    FitOptions {
        optim: base.optim,
        fixed_theta: None,
        theta_start: Some(theta),
        beta_start: Some(beta),
    }
}

/// Fits `specs` in order, warm-starting each from the previous fit.
pub fn fit_nested(data: &DataTable, specs: &[ModelSpec], opts: &FitOptions) -> Result<Vec<MixedModelFit>> {
    let mut fits: Vec<MixedModelFit> = Vec::with_capacity(specs.len());
    for spec in specs {
        let o = match fits.last() {
            Some(prev) => warm_start(prev, spec, opts),
            None => opts.clone(),
        };
        let fit = match spec.family {
            Family::Gaussian => fit_lmm(data, spec, &o)?,
            Family::BernoulliLogit => fit_glmm(data, spec, &o)?,
        };
        fits.push(fit);
    }
    Ok(fits)
}
