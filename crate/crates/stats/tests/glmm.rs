mod common;

use nalgebra::DMatrix;
use rand::Rng;
use vaudit_stats::{
    fit_glmm, fit_nested, lrt, mcfadden_r2, DataTable, Estimation, Family, FitOptions, ModelSpec,
};

const M0: &str = "ver_err ~ 1 + (1|task) + (1|model) + (1|dataset)";
const M1: &str = "ver_err ~ gen_err + (1|task) + (1|model) + (1|dataset)";
const M2: &str = "ver_err ~ gen_err + (1+gen_err|task) + (1+gen_err|model) + (1+gen_err|dataset)";

fn logit(s: &str) -> ModelSpec {
    ModelSpec::parse(s, Family::BernoulliLogit, Estimation::Ml).unwrap()
}

#[test]
fn zero_variance_components_reproduce_logistic_regression() {
    for seed in 100..105 {
        let mut r = common::rng(seed);
        let n = 400;
        let (mut y, mut x1, mut x2, mut g) = (vec![], vec![], vec![], vec![]);
        for i in 0..n {
            let a: f64 = r.random_range(-2.0..2.0);
            let b: f64 = if r.random::<f64>() < 0.4 { 1.0 } else { 0.0 };
            let eta = -0.3 + 0.8 * a - 1.1 * b;
            let p = 1.0 / (1.0 + (-eta).exp());
            y.push(if r.random::<f64>() < p { 1.0 } else { 0.0 });
            x1.push(a);
            x2.push(b);
            g.push(format!("g{}", i % 4));
        }
        let design = DMatrix::from_fn(n, 3, |i, j| match j {
            0 => 1.0,
            1 => x1[i],
            _ => x2[i],
        });
        let oracle = common::logistic_irls(&design, &y);

        let data = DataTable::new()
            .with_numeric("y", y)
            .unwrap()
            .with_numeric("x1", x1)
            .unwrap()
            .with_numeric("x2", x2)
            .unwrap()
            .with_factor("g", g)
            .unwrap();
        let opts = FitOptions {
            fixed_theta: Some(vec![0.0]),
            ..FitOptions::default()
        };
        let fit = fit_glmm(&data, &logit("y ~ x1 + x2 + (1|g)"), &opts).unwrap();
        for (b, o) in fit.beta.iter().zip(&oracle) {
            assert!((b.estimate - o).abs() < 1e-6, "seed {seed}: {} vs {o}", b.estimate);
        }
    }
}

#[test]
fn nested_coupling_models_are_monotone_and_recover_slope() {
    let comps = [(0.316, 0.485, -0.945), (1.582, 4.876, -0.967), (0.048, 0.128, -0.877)];
    let data = common::simulate_glmm(31, 6000, [-2.1, 4.0], comps);
    let fits = fit_nested(&data, &[logit(M0), logit(M1), logit(M2)], &FitOptions::default()).unwrap();
    let ll: Vec<f64> = fits.iter().map(|f| f.loglik).collect();
    assert!(ll[0] <= ll[1] + 1e-6 && ll[1] <= ll[2] + 1e-6, "{ll:?}");
    assert_eq!(
        fits.iter().map(|f| f.n_params).collect::<Vec<_>>(),
        vec![4, 5, 11]
    );
    let b1 = fits[2].fixed("gen_err").unwrap();
    assert!((b1.estimate - 4.0).abs() < 2.0 * b1.se, "{} ± {}", b1.estimate, b1.se);
    assert!(b1.odds_ratio.unwrap() > 1.0);
    for c in &fits[2].theta {
        assert_eq!(c.variances.len(), 2);
        if let Some(rho) = c.correlation {
            assert!(rho.abs() <= 1.0);
        }
    }
    let t = lrt(ll[0], ll[1], 1).unwrap();
    assert!(t.p_value < 1e-3);
    let r2 = mcfadden_r2(ll[2], ll[0]);
    assert!(r2 > 0.0 && r2 < 1.0);
    let (m, c) = (fits[2].r2_marginal.unwrap(), fits[2].r2_conditional.unwrap());
    assert!(0.0 <= m && m <= c && c <= 1.0);
}

#[test]
fn uncoupled_data_gives_small_slope() {
    let comps = [(0.1, 0.0, 0.0), (0.2, 0.0, 0.0), (0.05, 0.0, 0.0)];
    let data = common::simulate_glmm(5, 4000, [-1.0, 0.0], comps);
    let fit = fit_glmm(&data, &logit(M1), &FitOptions::default()).unwrap();
    let b1 = fit.fixed("gen_err").unwrap();
    assert!(b1.estimate.abs() < 3.0 * b1.se, "{} ± {}", b1.estimate, b1.se);
}
