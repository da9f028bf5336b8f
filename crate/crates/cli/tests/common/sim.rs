//! Seeded simulators and reference implementations for the acceptance checks.

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

pub const TASKS: usize = 7;
pub const MODELS: usize = 6;
pub const DATASETS: usize = 5;

fn names(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

/// Bivariate normal (intercept, slope) deviations per level, shifted to
/// sample mean zero so the fixed effects are exactly the simulated ones.
fn pairs(rng: &mut ChaCha8Rng, n: usize, (var_int, var_slope, rho): (f64, f64, f64)) -> Vec<[f64; 2]> {
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

/// One row per (task, model, dataset) cell: `y = β0 + slope·p_g + u_task +
/// u_model + u_dataset + ε` with `p_g ~ U(0.1, 0.9)`.
pub fn simulate_cells(seed: u64, beta0: f64, slope: f64, sds: [f64; 3], sd_resid: f64) -> DataTable {
    let mut r = rng(seed);
    let ut: Vec<f64> = (0..TASKS).map(|_| sds[0] * normal(&mut r)).collect();
    let um: Vec<f64> = (0..MODELS).map(|_| sds[1] * normal(&mut r)).collect();
    let ud: Vec<f64> = (0..DATASETS).map(|_| sds[2] * normal(&mut r)).collect();
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

/// Bernoulli `ver_err` from the crossed random-slope logistic model on
/// `gen_err`, spread evenly over the 7 × 6 × 5 cells. Each cell draws its
/// generator error rate from U(0.2, 0.8).
pub fn simulate_glmm(seed: u64, n: usize, beta: [f64; 2], comps: [(f64, f64, f64); 3]) -> DataTable {
    let mut r = rng(seed);
    let ut = pairs(&mut r, TASKS, comps[0]);
    let um = pairs(&mut r, MODELS, comps[1]);
    let ud = pairs(&mut r, DATASETS, comps[2]);
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

/// Logistic regression by Newton–Raphson on an explicit design matrix.
pub fn logistic_irls(x: &DMatrix<f64>, y: &[f64]) -> Vec<f64> {
    let n = x.nrows();
    let mut beta = DVector::zeros(x.ncols());
    for _ in 0..100 {
        let eta = x * &beta;
        let mut w = DVector::zeros(n);
        let mut z = DVector::zeros(n);
        for i in 0..n {
            let mu = 1.0 / (1.0 + (-eta[i]).exp());
            w[i] = mu * (1.0 - mu);
            z[i] = eta[i] + (y[i] - mu) / w[i];
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

/// Mid-ranks of |d| by counting.
pub fn abs_midranks(d: &[f64]) -> Vec<f64> {
    d.iter()
        .map(|x| {
            let below = d.iter().filter(|y| y.abs() < x.abs()).count() as f64;
            let equal = d.iter().filter(|y| y.abs() == x.abs()).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

/// P(W⁺ ≥ w) and P(W⁺ ≤ w) over all 2ⁿ sign assignments of `ranks`.
pub fn signed_rank_tails(ranks: &[f64], w: f64) -> (f64, f64) {
    let n = ranks.len();
    let (mut ge, mut le) = (0u64, 0u64);
    for mask in 0u64..(1 << n) {
        let s: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
        if s >= w - 1e-9 {
            ge += 1;
        }
        if s <= w + 1e-9 {
            le += 1;
        }
    }
    let all = (1u64 << n) as f64;
    (ge as f64 / all, le as f64 / all)
}
