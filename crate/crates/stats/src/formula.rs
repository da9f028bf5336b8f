//! Model specifications and the small formula grammar used to write them:
//!
//! ```text
//! response ~ covariate + covariate + (1 | factor) + (1 + covariate | factor)
//! ```
//!
//! The intercept is always present; `1` may be written explicitly.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Result, StatsError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Gaussian,
    BernoulliLogit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimation {
    Ml,
    Reml,
}

/// One random-effects term: a grouping factor with an intercept and an
/// optional slope on a covariate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RandomTerm {
    pub factor: String,
    pub slope: Option<String>,
}

impl RandomTerm {
    pub fn intercept(factor: &str) -> Self {
        Self {
            factor: factor.to_string(),
            slope: None,
        }
    }

    pub fn intercept_and_slope(factor: &str, covariate: &str) -> Self {
        Self {
            factor: factor.to_string(),
            slope: Some(covariate.to_string()),
        }
    }

    /// Dimension of the per-level random-effect vector.
    pub fn dim(&self) -> usize {
        if self.slope.is_some() {
            2
        } else {
            1
        }
    }
}

impl fmt::Display for RandomTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.slope {
            Some(s) => write!(f, "(1 + {} | {})", s, self.factor),
            None => write!(f, "(1 | {})", self.factor),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub response: String,
    pub family: Family,
    pub fixed_terms: Vec<String>,
    pub random_terms: Vec<RandomTerm>,
    pub estimation: Estimation,
}

impl ModelSpec {
    pub fn parse(formula: &str, family: Family, estimation: Estimation) -> Result<Self> {
        let (lhs, rhs) = formula
            .split_once('~')
            .ok_or_else(|| StatsError::Formula(format!("missing `~` in `{formula}`")))?;
        let response = lhs.trim();
        check_ident(response)?;

        let mut fixed_terms = Vec::new();
        let mut random_terms = Vec::new();
        for term in split_top_level(rhs)? {
            let term = term.trim();
            if term.is_empty() {
                return Err(StatsError::Formula(format!("empty term in `{formula}`")));
            }
            if term == "1" {
                continue;
            }
            if let Some(inner) = term.strip_prefix('(') {
                let inner = inner
                    .strip_suffix(')')
                    .ok_or_else(|| StatsError::Formula(format!("unbalanced term `{term}`")))?;
                random_terms.push(parse_random(inner)?);
            } else {
                check_ident(term)?;
                if fixed_terms.iter().any(|t| t == term) {
                    return Err(StatsError::Formula(format!("duplicate term `{term}`")));
                }
                fixed_terms.push(term.to_string());
            }
        }
        let spec = Self {
            response: response.to_string(),
            family,
            fixed_terms,
            random_terms,
            estimation,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.estimation == Estimation::Reml && self.family != Family::Gaussian {
            return Err(StatsError::RemlRequiresGaussian);
        }
        let mut seen = std::collections::BTreeSet::new();
        for t in &self.random_terms {
            if !seen.insert(&t.factor) {
                return Err(StatsError::Formula(format!(
                    "factor `{}` appears in more than one random term",
                    t.factor
                )));
            }
        }
        Ok(())
    }

    pub fn formula(&self) -> String {
        let mut s = format!("{} ~ ", self.response);
        if self.fixed_terms.is_empty() {
            s.push('1');
        } else {
            s.push_str(&self.fixed_terms.join(" + "));
        }
        for t in &self.random_terms {
            s.push_str(&format!(" + {t}"));
        }
        s
    }
}

fn check_ident(s: &str) -> Result<()> {
    let mut chars = s.chars();
    let ok = match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {
            chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
        }
        _ => false,
    };
    if ok {
        Ok(())
    } else {
        Err(StatsError::Formula(format!("invalid name `{s}`")))
    }
}

fn split_top_level(s: &str) -> Result<Vec<&str>> {
    let mut depth = 0i32;
    let mut start = 0;
    let mut out = Vec::new();
    for (i, c) in s.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => {
                depth -= 1;
                if depth < 0 {
                    return Err(StatsError::Formula(format!("unbalanced `)` in `{s}`")));
                }
            }
            '+' if depth == 0 => {
                out.push(&s[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    if depth != 0 {
        return Err(StatsError::Formula(format!("unbalanced `(` in `{s}`")));
    }
    out.push(&s[start..]);
    Ok(out)
}

fn parse_random(inner: &str) -> Result<RandomTerm> {
    let (effects, factor) = inner
        .split_once('|')
        .ok_or_else(|| StatsError::Formula(format!("random term `({inner})` lacks `|`")))?;
    let factor = factor.trim();
    check_ident(factor)?;
    let parts: Vec<&str> = effects.split('+').map(str::trim).collect();
    match parts.as_slice() {
        ["1"] => Ok(RandomTerm::intercept(factor)),
        ["1", cov] => {
            check_ident(cov)?;
            Ok(RandomTerm::intercept_and_slope(factor, cov))
        }
        _ => Err(StatsError::Formula(format!(
            "unsupported random term `({inner})`; use (1|g) or (1+x|g)"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_full_coupling_model() {
        let spec = ModelSpec::parse(
            "ver_err ~ gen_err + (1 + gen_err | task) + (1+gen_err|model) + (1 + gen_err | dataset)",
            Family::BernoulliLogit,
            Estimation::Ml,
        )
        .unwrap();
        assert_eq!(spec.response, "ver_err");
        assert_eq!(spec.fixed_terms, vec!["gen_err"]);
        assert_eq!(spec.random_terms.len(), 3);
        assert!(spec.random_terms.iter().all(|t| t.slope.as_deref() == Some("gen_err")));
    }

    #[test]
    fn intercept_only_and_round_trip() {
        let spec = ModelSpec::parse("y ~ 1 + (1|g)", Family::Gaussian, Estimation::Reml).unwrap();
        assert!(spec.fixed_terms.is_empty());
        assert_eq!(spec.formula(), "y ~ 1 + (1 | g)");
        let again = ModelSpec::parse(&spec.formula(), Family::Gaussian, Estimation::Reml).unwrap();
        assert_eq!(again, spec);
    }

    #[test]
    fn reml_needs_gaussian() {
        let err = ModelSpec::parse("y ~ x", Family::BernoulliLogit, Estimation::Reml).unwrap_err();
        assert_eq!(err, StatsError::RemlRequiresGaussian);
    }

    #[test]
    fn malformed_formulas() {
        for f in ["y x", "y ~ (1|g", "y ~ (x|g)", "y ~ x + ", "y ~ (1|g) + (1|g)", "1y ~ x"] {
            assert!(
                ModelSpec::parse(f, Family::Gaussian, Estimation::Ml).is_err(),
                "{f} should fail"
            );
        }
    }
}
