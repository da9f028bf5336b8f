//! Paired and k-sample rank tests plus the paired standardized effect size.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Result, StatsError};
use crate::inference::{chi2_sf, Alternative, TestResult};

/// Largest sample (after dropping zero differences) for which the
/// signed-rank p-value is computed from the exact null distribution.
pub const WILCOXON_EXACT_MAX_N: usize = 25;

/// Mid-ranks (1-based) of `values`, plus the tie-group sizes.
pub fn midranks(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // positions i..j (0-based) share the average of ranks i+1..=j
        let avg = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = avg;
        }
        ties.push(j - i);
        i = j;
    }
    (ranks, ties)
}

/// Wilcoxon signed-rank test on paired samples, differences `a - b`.
///
/// Zero differences are dropped and tied magnitudes receive mid-ranks. With
/// at most [`WILCOXON_EXACT_MAX_N`] nonzero differences the p-value is
/// exact, conditional on the observed ranks; beyond that a normal
/// approximation with tie-corrected variance is used. The statistic is W⁺
/// and the effect size the matched-pairs rank-biserial correlation.
pub fn wilcoxon_signed_rank(pairs: &[(f64, f64)], alternative: Alternative) -> Result<TestResult> {
    let diffs: Vec<f64> = pairs.iter().map(|(a, b)| a - b).filter(|d| *d != 0.0).collect();
    if diffs.is_empty() {
        return Err(StatsError::AllZeroDifferences);
    }
    let n = diffs.len();
    let mags: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let (ranks, ties) = midranks(&mags);
    let w_plus: f64 = diffs
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| r)
        .sum();
    let total = (n * (n + 1)) as f64 / 2.0;
    let effect = (2.0 * w_plus - total) / total;

    let (p_ge, p_le) = if n <= WILCOXON_EXACT_MAX_N {
        exact_tails(&ranks, w_plus)
    } else {
        let nf = n as f64;
        let mean = total / 2.0;
        let tie_adj: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / 48.0;
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_adj;
        let z = (w_plus - mean) / var.sqrt();
        let normal = Normal::new(0.0, 1.0).expect("standard normal");
        (normal.sf(z), normal.cdf(z))
    };
    let p = match alternative {
        Alternative::Greater => p_ge,
        Alternative::Less => p_le,
        Alternative::TwoSided => (2.0 * p_ge.min(p_le)).min(1.0),
    };
    Ok(TestResult {
        statistic: w_plus,
        df: None,
        p_value: p.clamp(0.0, 1.0),
        alternative,
        effect_size: Some(effect),
    })
}

/// `P(W⁺ ≥ w)` and `P(W⁺ ≤ w)` under random signs on the given ranks.
fn exact_tails(ranks: &[f64], w_plus: f64) -> (f64, f64) {
    // mid-ranks are multiples of 1/2, so doubled ranks are integers
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let max: usize = doubled.iter().sum();
    let mut counts = vec![0u64; max + 1];
    counts[0] = 1;
    let mut reach = 0;
    for &r in &doubled {
        for s in (0..=reach).rev() {
            if counts[s] > 0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let target = (2.0 * w_plus).round() as usize;
    let all = 2f64.powi(ranks.len() as i32);
    let ge: u64 = counts[target..].iter().sum();
    let le: u64 = counts[..=target].iter().sum();
    (ge as f64 / all, le as f64 / all)
}

/// Kruskal–Wallis H test with tie correction; χ² reference on k − 1 df.
/// The effect size is ε² = H / (N − 1).
pub fn kruskal_wallis(groups: &[Vec<f64>]) -> Result<TestResult> {
    if groups.len() < 2 || groups.iter().any(Vec::is_empty) {
        return Err(StatsError::InsufficientGroups);
    }
    let pooled: Vec<f64> = groups.iter().flatten().copied().collect();
    let n = pooled.len() as f64;
    let (ranks, ties) = midranks(&pooled);
    let mut offset = 0;
    let mut sum_term = 0.0;
    for g in groups {
        let r: f64 = ranks[offset..offset + g.len()].iter().sum();
        sum_term += r * r / g.len() as f64;
        offset += g.len();
    }
    let h_raw = 12.0 / (n * (n + 1.0)) * sum_term - 3.0 * (n + 1.0);
    let correction =
        1.0 - ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / (n * n * n - n);
    let df = (groups.len() - 1) as f64;
    let (h, p) = if correction <= 0.0 {
        (0.0, 1.0)
    } else {
        let h = (h_raw / correction).max(0.0);
        (h, chi2_sf(h, df))
    };
    Ok(TestResult {
        statistic: h,
        df: Some(df),
        p_value: p,
        alternative: Alternative::Greater,
        effect_size: Some(h / (n - 1.0)),
    })
}

/// Mean paired difference divided by its sample standard deviation.
pub fn paired_cohens_d(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.len() < 2 {
        return Err(StatsError::TooFewObservations {
            needed: 2,
            found: pairs.len(),
        });
    }
    let diffs: Vec<f64> = pairs.iter().map(|(a, b)| a - b).collect();
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if var <= 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    Ok(mean / var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diffs(d: &[f64]) -> Vec<(f64, f64)> {
        d.iter().map(|v| (*v, 0.0)).collect()
    }

    #[test]
    fn all_positive_five() {
        let r = wilcoxon_signed_rank(&diffs(&[1.0, 2.0, 3.0, 4.0, 5.0]), Alternative::Greater).unwrap();
        assert_eq!(r.statistic, 15.0);
        assert_eq!(r.p_value, 1.0 / 32.0);
        assert_eq!(r.effect_size, Some(1.0));
    }

    #[test]
    fn antisymmetric_two_sided_is_one() {
        let r = wilcoxon_signed_rank(&diffs(&[-1.0, 1.0, -2.5, 2.5, -4.0, 4.0]), Alternative::TwoSided)
            .unwrap();
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn zero_differences_dropped() {
        let a = wilcoxon_signed_rank(&diffs(&[0.0, 1.0, 2.0, 0.0, 3.0]), Alternative::Greater).unwrap();
        let b = wilcoxon_signed_rank(&diffs(&[1.0, 2.0, 3.0]), Alternative::Greater).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            wilcoxon_signed_rank(&diffs(&[0.0, 0.0]), Alternative::TwoSided).unwrap_err(),
            StatsError::AllZeroDifferences
        );
    }

    #[test]
    fn large_sample_uses_normal_approximation() {
        let d: Vec<f64> = (1..=40).map(|i| if i % 4 == 0 { -(i as f64) } else { i as f64 }).collect();
        let r = wilcoxon_signed_rank(&diffs(&d), Alternative::Greater).unwrap();
        let neg: f64 = (1..=10).map(|k| (4 * k) as f64).sum();
        assert_eq!(r.statistic, 820.0 - neg);
        assert!(r.p_value > 0.0 && r.p_value < 0.01);
    }

    #[test]
    fn kruskal_hand_computed() {
        let r = kruskal_wallis(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert!((r.statistic - 2.4).abs() < 1e-12);
        assert_eq!(r.df, Some(1.0));
    }

    #[test]
    fn kruskal_degenerate_cases() {
        let r = kruskal_wallis(&[vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap();
        assert!(r.statistic.abs() < 1e-12);
        assert!((r.p_value - 1.0).abs() < 1e-12);
        let r = kruskal_wallis(&[vec![5.0; 3], vec![5.0; 2], vec![5.0]]).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
        assert_eq!(kruskal_wallis(&[vec![1.0]]).unwrap_err(), StatsError::InsufficientGroups);
        assert_eq!(
            kruskal_wallis(&[vec![1.0], vec![]]).unwrap_err(),
            StatsError::InsufficientGroups
        );
    }

    #[test]
    fn cohens_d_hand_computed() {
        let pairs = diffs(&[1.0, 1.0, 1.0, -1.0]);
        assert!((paired_cohens_d(&pairs).unwrap() - 0.5).abs() < 1e-15);
        let flipped: Vec<(f64, f64)> = pairs.iter().map(|(a, b)| (*b, *a)).collect();
        assert!((paired_cohens_d(&flipped).unwrap() + 0.5).abs() < 1e-15);
        assert_eq!(paired_cohens_d(&diffs(&[2.0, 2.0, 2.0])).unwrap_err(), StatsError::ZeroVariance);
    }

    #[test]
    fn midranks_average_ties() {
        let (r, t) = midranks(&[3.0, 1.0, 3.0, 2.0]);
        assert_eq!(r, vec![3.5, 1.0, 3.5, 2.0]);
        assert_eq!(t, vec![1, 1, 2]);
    }
}
