//! Simulators and reference implementations shared by the statistical tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use vaudit_stats::DataTable;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// `n` normal draws with standard deviation `sd`, shifted to sample mean zero.
pub fn centered_normals(rng: &mut ChaCha8Rng, n: usize, sd: f64) -> Vec<f64> {
    let v: Vec<f64> = (0..n).map(|_| sd * normal(rng)).collect();
    let m = v.iter().sum::<f64>() / n as f64;
    v.into_iter().map(|x| x - m).collect()
}

/// `n` bivariate normal (intercept, slope) draws with the given variances
/// and correlation, shifted to sample mean zero in both coordinates.
pub fn centered_pairs(rng: &mut ChaCha8Rng, n: usize, var_int: f64, var_slope: f64, rho: f64) -> Vec<[f64; 2]> {
    let (si, ss) = (var_int.sqrt(), var_slope.sqrt());
    let mut v: Vec<[f64; 2]> = (0..n)
        .map(|_| {
            let z1 = normal(rng);
            let z2 = normal(rng);
            [si * z1, ss * (rho * z1 + (1.0 - rho * rho).sqrt() * z2)]
        })
        .collect();
    for k in 0..2 {
        let m = v.iter().map(|p| p[k]).sum::<f64>() / n as f64;
        for p in &mut v {
            p[k] -= m;
        }
    }
    v
}

pub const TASKS: usize = 7;
pub const MODELS: usize = 6;
pub const DATASETS: usize = 5;

fn names(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

/// One row per (task, model, dataset): `y = β0 + slope·p_g + u_task +
/// u_model + u_dataset + ε`, with `p_g ~ U(0.1, 0.9)`.
pub fn simulate_cells(seed: u64, beta0: f64, slope: f64, sds: [f64; 3], sd_resid: f64) -> DataTable {
    let mut r = rng(seed);
    let ut = centered_normals(&mut r, TASKS, sds[0]);
    let um = centered_normals(&mut r, MODELS, sds[1]);
    let ud = centered_normals(&mut r, DATASETS, sds[2]);
    let (tn, mn, dn) = (names("t", TASKS), names("m", MODELS), names("d", DATASETS));
    let (mut y, mut pg, mut task, mut model, mut dataset) = (vec![], vec![], vec![], vec![], vec![]);
    for t in 0..TASKS {
        for m in 0..MODELS {
            for d in 0..DATASETS {
                let p = r.random_range(0.1..0.9);
                pg.push(p);
                y.push(beta0 + slope * p + ut[t] + um[m] + ud[d] + sd_resid * normal(&mut r));
                task.push(tn[t].clone());
                model.push(mn[m].clone());
                dataset.push(dn[d].clone());
            }
        }
    }
    DataTable::new()
        .with_numeric("y", y)
        .and_then(|t| t.with_numeric("p_g", pg))
        .and_then(|t| t.with_factor("task", task))
        .and_then(|t| t.with_factor("model", model))
        .and_then(|t| t.with_factor("dataset", dataset))
        .unwrap()
}

/// Random-effect covariance of one factor: (σ²_int, σ²_slope, ρ).
pub type Component = (f64, f64, f64);

/// Bernoulli observations from the crossed random-slope logistic model,
/// spread evenly across the 7 × 6 × 5 cells. Each cell has its own generator
/// error rate drawn from U(0.2, 0.8).
pub fn simulate_glmm(seed: u64, n: usize, beta: [f64; 2], comps: [Component; 3]) -> DataTable {
    let mut r = rng(seed);
    let ut = centered_pairs(&mut r, TASKS, comps[0].0, comps[0].1, comps[0].2);
    let um = centered_pairs(&mut r, MODELS, comps[1].0, comps[1].1, comps[1].2);
    let ud = centered_pairs(&mut r, DATASETS, comps[2].0, comps[2].1, comps[2].2);
    let n_cells = TASKS * MODELS * DATASETS;
    let rates: Vec<f64> = (0..n_cells).map(|_| r.random_range(0.2..0.8)).collect();
    let (tn, mn, dn) = (names("t", TASKS), names("m", MODELS), names("d", DATASETS));
    let (mut ver, mut gen, mut task, mut model, mut dataset) = (vec![], vec![], vec![], vec![], vec![]);
    for i in 0..n {
        let c = i % n_cells;
        let (t, m, d) = (c / (MODELS * DATASETS), (c / DATASETS) % MODELS, c % DATASETS);
        let g = if r.random::<f64>() < rates[c] { 1.0 } else { 0.0 };
        let eta = beta[0] + ut[t][0] + um[m][0] + ud[d][0] + g * (beta[1] + ut[t][1] + um[m][1] + ud[d][1]);
        let p = 1.0 / (1.0 + (-eta).exp());
        ver.push(if r.random::<f64>() < p { 1.0 } else { 0.0 });
        gen.push(g);
        task.push(tn[t].clone());
        model.push(mn[m].clone());
        dataset.push(dn[d].clone());
    }
    DataTable::new()
        .with_numeric("ver_err", ver)
        .and_then(|t| t.with_numeric("gen_err", gen))
        .and_then(|t| t.with_factor("task", task))
        .and_then(|t| t.with_factor("model", model))
        .and_then(|t| t.with_factor("dataset", dataset))
        .unwrap()
}

/// Plain logistic regression by Newton–Raphson (IRLS) on an explicit
/// design matrix whose first column is the intercept.
pub fn logistic_irls(x: &DMatrix<f64>, y: &[f64]) -> Vec<f64> {
    let n = x.nrows();
    let mut beta = DVector::zeros(x.ncols());
    for _ in 0..100 {
        let eta = x * &beta;
        let mut w = DVector::zeros(n);
        let mut z = DVector::zeros(n);
        for i in 0..n {
            let mu = 1.0 / (1.0 + (-eta[i]).exp());
            let wi = mu * (1.0 - mu);
            w[i] = wi;
            z[i] = eta[i] + (y[i] - mu) / wi;
        }
        let xtw = x.transpose() * DMatrix::from_diagonal(&w);
        let next = (&xtw * x).lu().solve(&(&xtw * z)).expect("nonsingular information");
        let change = (&next - &beta).amax();
        beta = next;
        if change < 1e-14 {
            break;
        }
    }
    beta.iter().copied().collect()
}

/// Upper and lower tail probabilities of W⁺ by enumerating all 2ⁿ sign
/// assignments of the given ranks.
pub fn signed_rank_tails_brute(ranks: &[f64], w_plus: f64) -> (f64, f64) {
    let n = ranks.len();
    let (mut ge, mut le) = (0u64, 0u64);
    for mask in 0u64..(1 << n) {
        let w: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
        if w >= w_plus - 1e-9 {
            ge += 1;
        }
        if w <= w_plus + 1e-9 {
            le += 1;
        }
    }
    let all = (1u64 << n) as f64;
    (ge as f64 / all, le as f64 / all)
}

/// Mid-ranks of |d| computed by counting, independent of any sorting.
pub fn abs_midranks_by_counting(d: &[f64]) -> Vec<f64> {
    d.iter()
        .map(|x| {
            let below = d.iter().filter(|y| y.abs() < x.abs()).count() as f64;
            let equal = d.iter().filter(|y| y.abs() == x.abs()).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}
