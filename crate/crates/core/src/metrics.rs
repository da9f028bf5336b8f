//! Verifier discrimination and agreement-bias metrics per cell.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{Verdict, VerdictLabel};
use crate::corpus::TaskLabel;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("empty input")]
    EmptyInput,
    #[error("confusion counts disagree with the deviation vector")]
    InconsistentCounts,
    #[error("record {0} has deviation inconsistent with its labels")]
    InconsistentRecord(String),
}

/// One generator answer checked by one verifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationRecord {
    pub example_id: String,
    pub generator_id: String,
    pub verifier_id: String,
    pub task: TaskLabel,
    pub dataset_id: String,
    /// 0 for single-turn runs; the revision index in loop runs.
    pub turn: u32,
    pub answer: String,
    /// Oracle correctness of `answer`.
    pub y_star: u8,
    /// 1 iff the verdict label is CORRECT.
    pub y_hat: u8,
    pub deviation: i8,
    pub verdict: Verdict,
}

impl VerificationRecord {
    pub fn new(
        example_id: String,
        generator_id: String,
        verifier_id: String,
        task: TaskLabel,
        dataset_id: String,
        turn: u32,
        answer: String,
        y_star: bool,
        verdict: Verdict,
    ) -> Self {
        let y_hat = u8::from(verdict.label == VerdictLabel::Correct);
        let y_star = u8::from(y_star);
        Self {
            example_id,
            generator_id,
            verifier_id,
            task,
            dataset_id,
            turn,
            answer,
            y_star,
            y_hat,
            deviation: y_hat as i8 - y_star as i8,
            verdict,
        }
    }

    pub fn check(&self) -> Result<(), MetricsError> {
        let ok = self.y_star <= 1
            && self.y_hat <= 1
            && self.deviation == self.y_hat as i8 - self.y_star as i8
            && (self.y_hat == 1) == (self.verdict.label == VerdictLabel::Correct);
        if ok {
            Ok(())
        } else {
            Err(MetricsError::InconsistentRecord(self.example_id.clone()))
        }
    }

    pub fn is_self(&self) -> bool {
        self.generator_id == self.verifier_id
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn n(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn add(&mut self, y_star: u8, y_hat: u8) {
        match (y_star, y_hat) {
            (1, 1) => self.tp += 1,
            (0, 1) => self.fp += 1,
            (0, _) => self.tn += 1,
            _ => self.fn_ += 1,
        }
    }

    pub fn merge(&mut self, other: &ConfusionCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.tn += other.tn;
        self.fn_ += other.fn_;
    }

    /// The deviation vector these counts imply, in a canonical order.
    pub fn deviations(&self) -> Vec<i8> {
        let mut d = vec![1; self.fp as usize];
        d.extend(std::iter::repeat_n(-1, self.fn_ as usize));
        d.extend(std::iter::repeat_n(0, (self.tp + self.tn) as usize));
        d
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub acc: f64,
    pub verifier_error: f64,
    pub fpr: f64,
    pub fnr: f64,
    pub bias: f64,
    pub dskew: f64,
    pub fpr_undefined: bool,
    pub fnr_undefined: bool,
    pub dskew_undefined: bool,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

/// dSkew from counts as an exact fraction `(numerator, denominator)`, or
/// `None` when the denominator vanishes (every deviation is zero).
///
/// With a = FP, b = FN and c = n − a − b the ordered-pair sums (diagonal
/// included) reduce to 2(2ab+ac+bc) and 2(a²+b²+ac+bc), so
/// 1 − Σ|dᵢ−dⱼ|/Σ|dᵢ+dⱼ| = (a−b)² / (a²+b²+ac+bc).
pub fn dskew_fraction(fp: u64, fn_: u64, n: u64) -> Option<(u128, u128)> {
    let (a, b, c) = (fp as u128, fn_ as u128, (n - fp - fn_) as u128);
    let den = a * a + b * b + a * c + b * c;
    (den != 0).then(|| (a.abs_diff(b).pow(2), den))
}

pub fn dskew_from_counts(fp: u64, fn_: u64, n: u64) -> (f64, bool) {
    match dskew_fraction(fp, fn_, n) {
        Some((num, den)) => (num as f64 / den as f64, false),
        None => (0.0, true),
    }
}

pub fn metrics_from_counts(c: &ConfusionCounts) -> Result<MetricSet, MetricsError> {
    let n = c.n();
    if n == 0 {
        return Err(MetricsError::EmptyInput);
    }
    let acc = (c.tp + c.tn) as f64 / n as f64;
    let (fpr, fpr_undefined) = ratio(c.fp, c.fp + c.tn);
    let (fnr, fnr_undefined) = ratio(c.fn_, c.fn_ + c.tp);
    let (dskew, dskew_undefined) = dskew_from_counts(c.fp, c.fn_, n);
    Ok(MetricSet {
        acc,
        verifier_error: 1.0 - acc,
        fpr,
        fnr,
        bias: (c.fp as f64 - c.fn_ as f64) / n as f64,
        dskew,
        fpr_undefined,
        fnr_undefined,
        dskew_undefined,
    })
}

/// Metrics after checking that `devs` is the deviation multiset of `counts`.
pub fn compute_metrics(counts: &ConfusionCounts, devs: &[i8]) -> Result<MetricSet, MetricsError> {
    let plus = devs.iter().filter(|d| **d == 1).count() as u64;
    let minus = devs.iter().filter(|d| **d == -1).count() as u64;
    let valid = devs.iter().all(|d| (-1..=1).contains(d));
    if !valid || plus != counts.fp || minus != counts.fn_ || devs.len() as u64 != counts.n() {
        return Err(MetricsError::InconsistentCounts);
    }
    metrics_from_counts(counts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasAxis {
    Fpr,
    Bias,
    Dskew,
}

impl BiasAxis {
    pub const ALL: [BiasAxis; 3] = [BiasAxis::Fpr, BiasAxis::Bias, BiasAxis::Dskew];

    pub fn name(self) -> &'static str {
        match self {
            BiasAxis::Fpr => "fpr",
            BiasAxis::Bias => "bias",
            BiasAxis::Dskew => "dskew",
        }
    }

    /// Axis value and whether it is undefined.
    pub fn value(self, m: &MetricSet) -> (f64, bool) {
        match self {
            BiasAxis::Fpr => (m.fpr, m.fpr_undefined),
            BiasAxis::Bias => (m.bias, false),
            BiasAxis::Dskew => (m.dskew, m.dskew_undefined),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub error_hi: f64,
    pub bias_hi: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            error_hi: 0.4,
            bias_hi: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quadrant {
    Desired,
    LowErrorHighBias,
    HighErrorLowBias,
    Mirage,
}

impl fmt::Display for Quadrant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Quadrant::Desired => "desired",
            Quadrant::LowErrorHighBias => "low_error_high_bias",
            Quadrant::HighErrorLowBias => "high_error_low_bias",
            Quadrant::Mirage => "mirage",
        })
    }
}

pub fn quadrant(m: &MetricSet, axis: BiasAxis, t: &Thresholds) -> Quadrant {
    let high_error = m.verifier_error >= t.error_hi;
    let high_bias = axis.value(m).0 >= t.bias_hi;
    match (high_error, high_bias) {
        (true, true) => Quadrant::Mirage,
        (true, false) => Quadrant::HighErrorLowBias,
        (false, true) => Quadrant::LowErrorHighBias,
        (false, false) => Quadrant::Desired,
    }
}

/// Which record fields form a cell key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroupBy {
    pub task: bool,
    pub generator: bool,
    pub verifier: bool,
    pub dataset: bool,
}

impl GroupBy {
    pub const FULL: GroupBy = GroupBy {
        task: true,
        generator: true,
        verifier: true,
        dataset: true,
    };
    pub const TASK_MODEL: GroupBy = GroupBy {
        task: true,
        generator: true,
        verifier: true,
        dataset: false,
    };
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellKey {
    pub task: Option<TaskLabel>,
    pub generator: Option<String>,
    pub verifier: Option<String>,
    pub dataset: Option<String>,
}

impl CellKey {
    pub fn of(r: &VerificationRecord, g: GroupBy) -> Self {
        Self {
            task: g.task.then_some(r.task),
            generator: g.generator.then(|| r.generator_id.clone()),
            verifier: g.verifier.then(|| r.verifier_id.clone()),
            dataset: g.dataset.then(|| r.dataset_id.clone()),
        }
    }
}

impl fmt::Display for CellKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts = [
            self.task.map(|t| t.slug().to_string()),
            self.generator.clone(),
            self.verifier.clone(),
            self.dataset.clone(),
        ];
        let parts: Vec<String> = parts.into_iter().map(|p| p.unwrap_or_else(|| "*".into())).collect();
        f.write_str(&parts.join("/"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub key: CellKey,
    pub counts: ConfusionCounts,
    pub metrics: MetricSet,
    /// Fraction of the cell's records whose answer was oracle-incorrect.
    pub p_g: f64,
}

/// Partitions records by `group_by`; cells come out in sorted key order.
pub fn aggregate(records: &[VerificationRecord], group_by: GroupBy) -> Result<Vec<Cell>, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut groups: BTreeMap<CellKey, ConfusionCounts> = BTreeMap::new();
    for r in records {
        r.check()?;
        groups.entry(CellKey::of(r, group_by)).or_default().add(r.y_star, r.y_hat);
    }
    groups
        .into_iter()
        .map(|(key, counts)| {
            Ok(Cell {
                key,
                metrics: metrics_from_counts(&counts)?,
                p_g: (counts.fp + counts.tn) as f64 / counts.n() as f64,
                counts,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricField {
    Acc,
    VerifierError,
    Fpr,
    Fnr,
    Bias,
    Dskew,
    /// Generator accuracy, 1 − p_g.
    GeneratorAcc,
    PG,
}

impl MetricField {
    pub fn of(self, c: &Cell) -> f64 {
        let m = &c.metrics;
        match self {
            MetricField::Acc => m.acc,
            MetricField::VerifierError => m.verifier_error,
            MetricField::Fpr => m.fpr,
            MetricField::Fnr => m.fnr,
            MetricField::Bias => m.bias,
            MetricField::Dskew => m.dskew,
            MetricField::GeneratorAcc => 1.0 - c.p_g,
            MetricField::PG => c.p_g,
        }
    }
}

/// Unweighted mean of one field across cells.
pub fn mean_across(cells: &[Cell], field: MetricField) -> Result<f64, MetricsError> {
    if cells.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    Ok(cells.iter().map(|c| field.of(c)).sum::<f64>() / cells.len() as f64)
}

/// A proportion as a percentage with one decimal.
pub fn percent_1dp(x: f64) -> String {
    format!("{:.1}", 100.0 * x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(tp: u64, fp: u64, tn: u64, fn_: u64) -> ConfusionCounts {
        ConfusionCounts { tp, fp, tn, fn_ }
    }

    #[test]
    fn worked_example() {
        let c = counts(3, 1, 4, 2);
        let m = compute_metrics(&c, &c.deviations()).unwrap();
        assert!((m.acc - 0.7).abs() < 1e-15);
        assert!((m.fpr - 0.2).abs() < 1e-15);
        assert!((m.fnr - 0.4).abs() < 1e-15);
        assert!((m.bias + 0.1).abs() < 1e-15);
        assert!((m.dskew - 1.0 / 26.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_vectors() {
        let m = metrics_from_counts(&counts(5, 0, 5, 0)).unwrap();
        assert_eq!((m.acc, m.bias, m.dskew, m.dskew_undefined), (1.0, 0.0, 0.0, true));
        let m = metrics_from_counts(&counts(0, 7, 0, 0)).unwrap();
        assert_eq!((m.fpr, m.bias, m.dskew), (1.0, 1.0, 1.0));
        assert!(m.fnr_undefined && m.fnr == 0.0);
        assert_eq!(metrics_from_counts(&counts(0, 0, 0, 4)).unwrap().dskew, 1.0);
        assert_eq!(metrics_from_counts(&counts(0, 3, 0, 3)).unwrap().dskew, 0.0);
    }

    #[test]
    fn inconsistent_devs_rejected() {
        assert_eq!(
            compute_metrics(&counts(1, 1, 0, 0), &[0, 0]).unwrap_err(),
            MetricsError::InconsistentCounts
        );
    }

    #[test]
    fn quadrant_examples() {
        let mut m = metrics_from_counts(&counts(1, 1, 1, 1)).unwrap();
        let t = Thresholds { error_hi: 0.4, bias_hi: 0.6 };
        (m.verifier_error, m.fpr) = (0.5, 0.9);
        assert_eq!(quadrant(&m, BiasAxis::Fpr, &t), Quadrant::Mirage);
        (m.verifier_error, m.fpr) = (0.1, 0.1);
        assert_eq!(quadrant(&m, BiasAxis::Fpr, &t), Quadrant::Desired);
        (m.verifier_error, m.fpr) = (0.5, 0.1);
        assert_eq!(quadrant(&m, BiasAxis::Fpr, &t), Quadrant::HighErrorLowBias);
        (m.verifier_error, m.fpr) = (0.1, 0.9);
        assert_eq!(quadrant(&m, BiasAxis::Fpr, &t), Quadrant::LowErrorHighBias);
    }
}
