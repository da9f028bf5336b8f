//! Statistical engine for generator–verifier coupling analysis.
//!
//! - [`fit_lmm`]: linear mixed models with crossed random effects (ML/REML).
//! - [`fit_glmm`]: logistic mixed models via Laplace approximation.
//! - [`fit_nested`]: a sequence of nested models with warm starts.
//! - [`lrt`], [`mcfadden_r2`], [`nakagawa_r2`], [`conditional_odds_ratio`]:
//!   model comparison and effect summaries.
//! - [`wilcoxon_signed_rank`], [`kruskal_wallis`], [`paired_cohens_d`],
//!   [`ols_slope`]: the paired and per-task tests.

mod design;
pub mod error;
pub mod fit;
pub mod formula;
pub mod glmm;
pub mod inference;
pub mod lmm;
pub mod nested;
pub mod nonparametric;
pub mod optimize;
pub mod table;

pub use error::{Result, StatsError};
pub use fit::{FactorModes, FixedEffect, LevelMode, MixedModelFit, VarianceComponent};
pub use formula::{Estimation, Family, ModelSpec, RandomTerm};
pub use glmm::fit_glmm;
pub use inference::{
    aic, bic, chi2_sf, conditional_odds_ratio, lrt, mcfadden_r2, nakagawa_r2, odds_ratio,
    ols_slope, Alternative, OlsSlope, TestResult,
};
pub use lmm::{fit_lmm, FitOptions};
pub use nested::{fit_nested, warm_start};
pub use nonparametric::{kruskal_wallis, paired_cohens_d, wilcoxon_signed_rank};
pub use optimize::{minimize, OptimOptions, OptimResult};
pub use table::{Column, DataTable};
