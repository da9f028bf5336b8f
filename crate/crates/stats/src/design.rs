//! Shared design structure for the mixed-model fitters.
//!
//! Random effects use the relative-covariance-factor parameterization:
//! `b = Λθ u` with `u ~ N(0, σ² I)` (gaussian) or `u ~ N(0, I)` (logit).
//! For every random term the per-level block of `Λθ` is a lower-triangular
//! Cholesky factor whose entries, stored column-major, form the term's
//! slice of `θ`. Diagonal entries are bounded below by zero.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, StatsError};
use crate::formula::{ModelSpec, RandomTerm};
use crate::table::DataTable;

#[derive(Debug, Clone)]
pub(crate) struct TermLayout {
    pub term: RandomTerm,
    pub levels: Vec<String>,
    pub dim: usize,
    pub col_offset: usize,
    pub theta_offset: usize,
}

impl TermLayout {
    pub fn n_theta(&self) -> usize {
        self.dim * (self.dim + 1) / 2
    }

    /// Lower-triangular block for this term given the full θ vector.
    pub fn block(&self, theta: &[f64]) -> [[f64; 2]; 2] {
        let t = &theta[self.theta_offset..self.theta_offset + self.n_theta()];
        if self.dim == 1 {
            [[t[0], 0.0], [0.0, 0.0]]
        } else {
            [[t[0], 0.0], [t[1], t[2]]]
        }
    }

    /// Covariance `T Tᵀ` of the per-level effects (before residual scaling).
    pub fn relative_covariance(&self, theta: &[f64]) -> [[f64; 2]; 2] {
        let b = self.block(theta);
        let mut c = [[0.0; 2]; 2];
        for i in 0..self.dim {
            for j in 0..self.dim {
                c[i][j] = (0..self.dim).map(|k| b[i][k] * b[j][k]).sum();
            }
        }
        c
    }
}

/// Random-effect part of one row: which level of which term, and the
/// covariate values (`[1, x]` or `[1, _]`) multiplying that level's block.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ReEntry {
    pub term: usize,
    pub level: usize,
    pub z: [f64; 2],
}

#[derive(Debug, Clone)]
pub(crate) struct Row {
    pub x: Vec<f64>,
    pub re: Vec<ReEntry>,
    /// Response: the value (gaussian) or success count (binomial).
    pub y: f64,
    /// Number of trials represented by this row (1 for gaussian).
    pub weight: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct Design {
    pub rows: Vec<Row>,
    pub fixed_names: Vec<String>,
    pub terms: Vec<TermLayout>,
    pub p: usize,
    pub q: usize,
    pub n_theta: usize,
    pub n_obs: usize,
}

/// Crossproducts of `[ZΛ, X]` for one θ and one set of row weights.
pub(crate) struct Crossprod {
    /// `ΛᵀZᵀWZΛ + I`
    pub a: DMatrix<f64>,
    /// `ΛᵀZᵀWX`
    pub b: DMatrix<f64>,
    /// `XᵀWX`
    pub c: DMatrix<f64>,
}

impl Design {
    pub fn build(data: &DataTable, spec: &ModelSpec, compress: bool) -> Result<Self> {
        let n = data.n_rows();
        if n == 0 {
            return Err(StatsError::EmptyInput);
        }
        let y = data.numeric(&spec.response)?;

        let mut fixed_names = vec!["(Intercept)".to_string()];
        let mut fixed_cols: Vec<&[f64]> = Vec::new();
        for t in &spec.fixed_terms {
            fixed_cols.push(data.numeric(t)?);
            fixed_names.push(t.clone());
        }
        let p = fixed_names.len();

        let mut terms = Vec::new();
        let mut col_offset = 0;
        let mut theta_offset = 0;
        let mut term_codes: Vec<Vec<usize>> = Vec::new();
        let mut term_slopes: Vec<Option<&[f64]>> = Vec::new();
        for t in &spec.random_terms {
            let levels = data.levels(&t.factor)?;
            if levels.len() < 2 {
                return Err(StatsError::InsufficientLevels {
                    factor: t.factor.clone(),
                    found: levels.len(),
                });
            }
            let index: BTreeMap<&str, usize> =
                levels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
            let codes = data
                .factor(&t.factor)?
                .iter()
                .map(|v| index[v.as_str()])
                .collect();
            term_codes.push(codes);
            term_slopes.push(match &t.slope {
                Some(s) => Some(data.numeric(s)?),
                None => None,
            });
            let layout = TermLayout {
                term: t.clone(),
                dim: t.dim(),
                levels,
                col_offset,
                theta_offset,
            };
            col_offset += layout.levels.len() * layout.dim;
            theta_offset += layout.n_theta();
            terms.push(layout);
        }

        let make_row = |i: usize| -> Row {
            let mut x = Vec::with_capacity(p);
            x.push(1.0);
            x.extend(fixed_cols.iter().map(|c| c[i]));
            let re = terms
                .iter()
                .enumerate()
                .map(|(k, _)| ReEntry {
                    term: k,
                    level: term_codes[k][i],
                    z: [1.0, term_slopes[k].map_or(0.0, |s| s[i])],
                })
                .collect();
            Row {
                x,
                re,
                y: y[i],
                weight: 1.0,
            }
        };

        let rows = if compress {
            // identical covariate patterns share a linear predictor, so
            // Bernoulli rows collapse exactly into binomial counts
            let mut groups: BTreeMap<Vec<u64>, Row> = BTreeMap::new();
            for i in 0..n {
                let row = make_row(i);
                let mut key: Vec<u64> = row.x.iter().map(|v| v.to_bits()).collect();
                for e in &row.re {
                    key.push(e.level as u64);
                    key.push(e.z[1].to_bits());
                }
                groups
                    .entry(key)
                    .and_modify(|g| {
                        g.y += row.y;
                        g.weight += 1.0;
                    })
                    .or_insert(row);
            }
            groups.into_values().collect()
        } else {
            (0..n).map(make_row).collect()
        };

        Ok(Self {
            rows,
            fixed_names,
            q: col_offset,
            n_theta: theta_offset,
            terms,
            p,
            n_obs: n,
        })
    }

    /// Start value and lower bounds for θ: identity blocks, diagonals ≥ 0.
    pub fn theta_start_and_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let mut start = Vec::with_capacity(self.n_theta);
        let mut lower = Vec::with_capacity(self.n_theta);
        for t in &self.terms {
            if t.dim == 1 {
                start.push(1.0);
                lower.push(0.0);
            } else {
                start.extend([1.0, 0.0, 1.0]);
                lower.extend([0.0, f64::NEG_INFINITY, 0.0]);
            }
        }
        (start, lower)
    }

    /// Upper bounds for θ: `limit` in absolute value on every entry.
    pub fn theta_upper_bounds(&self, limit: f64) -> Vec<f64> {
        vec![limit; self.n_theta]
    }

    /// Nonzero entries of row `r` of `ZΛ`, as (column, value).
    pub fn zl_row(&self, row: &Row, theta: &[f64], out: &mut Vec<(usize, f64)>) {
        out.clear();
        for e in &row.re {
            let t = &self.terms[e.term];
            let blk = t.block(theta);
            let base = t.col_offset + e.level * t.dim;
            for j in 0..t.dim {
                let v: f64 = (0..t.dim).map(|i| e.z[i] * blk[i][j]).sum();
                out.push((base + j, v));
            }
        }
    }

    /// Per-row values of `ZΛu`.
    pub fn zl_times(&self, theta: &[f64], u: &DVector<f64>) -> Vec<f64> {
        let mut buf = Vec::new();
        self.rows
            .iter()
            .map(|row| {
                self.zl_row(row, theta, &mut buf);
                buf.iter().map(|(c, v)| v * u[*c]).sum()
            })
            .collect()
    }

    pub fn x_times(&self, beta: &DVector<f64>) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.x.iter().zip(beta.iter()).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn crossprod(&self, theta: &[f64], weights: &[f64]) -> Crossprod {
        let (q, p) = (self.q, self.p);
        let mut a = DMatrix::identity(q, q);
        let mut b = DMatrix::zeros(q, p);
        let mut c = DMatrix::zeros(p, p);
        let mut buf = Vec::new();
        for (row, &w) in self.rows.iter().zip(weights) {
            if w == 0.0 {
                continue;
            }
            self.zl_row(row, theta, &mut buf);
            for &(ci, vi) in &buf {
                let wv = w * vi;
                for &(cj, vj) in &buf {
                    a[(ci, cj)] += wv * vj;
                }
                for (k, xk) in row.x.iter().enumerate() {
                    b[(ci, k)] += wv * xk;
                }
            }
            for (i, xi) in row.x.iter().enumerate() {
                for (j, xj) in row.x.iter().enumerate() {
                    c[(i, j)] += w * xi * xj;
                }
            }
        }
        Crossprod { a, b, c }
    }

    /// `ΛᵀZᵀv` and `Xᵀv` for a per-row vector `v`.
    pub fn transpose_times(&self, theta: &[f64], v: &[f64]) -> (DVector<f64>, DVector<f64>) {
        let mut zu = DVector::zeros(self.q);
        let mut xv = DVector::zeros(self.p);
        let mut buf = Vec::new();
        for (row, &vi) in self.rows.iter().zip(v) {
            self.zl_row(row, theta, &mut buf);
            for &(c, z) in &buf {
                zu[c] += z * vi;
            }
            for (k, x) in row.x.iter().enumerate() {
                xv[k] += x * vi;
            }
        }
        (zu, xv)
    }

    /// Conditional modes `b = Λu` grouped by term and level.
    pub fn modes(&self, theta: &[f64], u: &DVector<f64>) -> Vec<Vec<[f64; 2]>> {
        self.terms
            .iter()
            .map(|t| {
                let blk = t.block(theta);
                (0..t.levels.len())
                    .map(|l| {
                        let base = t.col_offset + l * t.dim;
                        let mut b = [0.0; 2];
                        for i in 0..t.dim {
                            b[i] = (0..t.dim).map(|j| blk[i][j] * u[base + j]).sum();
                        }
                        b
                    })
                    .collect()
            })
            .collect()
    }

    /// Weighted sample variance of the fixed-effect predictions over the
    /// original observations.
    pub fn fixed_prediction_variance(&self, beta: &DVector<f64>) -> f64 {
        let eta = self.x_times(beta);
        let total: f64 = self.rows.iter().map(|r| r.weight).sum();
        if total <= 1.0 {
            return 0.0;
        }
        let mean = self
            .rows
            .iter()
            .zip(&eta)
            .map(|(r, e)| r.weight * e)
            .sum::<f64>()
            / total;
        self.rows
            .iter()
            .zip(&eta)
            .map(|(r, e)| r.weight * (e - mean).powi(2))
            .sum::<f64>()
            / (total - 1.0)
    }
}
