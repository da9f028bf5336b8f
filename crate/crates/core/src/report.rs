//! Tables and plot data regenerated from a run directory.
//!
//! Everything here is derived from `records.jsonl`, `traces.jsonl`, the
//! fit files under `fits/` and an optional grounding-score file. Machine
//! CSVs keep full precision; presentation tables show percentages with one
//! decimal.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;
use vaudit_stats::{
    kruskal_wallis, lrt, mcfadden_r2, ols_slope, paired_cohens_d, wilcoxon_signed_rank, Alternative,
    MixedModelFit,
};

use crate::corpus::TaskLabel;
use crate::metrics::{
    aggregate, mean_across, percent_1dp, quadrant, BiasAxis, Cell, CellKey, ConfusionCounts, GroupBy,
    MetricField, MetricSet, MetricsError, Quadrant, Thresholds, VerificationRecord,
};
use crate::pipeline::{
    cross_summary, cumulative_agreement_bias, loop_outcomes, read_jsonl, CrossRow, LoopTrace,
    OutcomeCounts, PipelineError, Stamped, RECORDS_FILE, TRACES_FILE,
};

pub const CELLS_FILE: &str = "cells.csv";
pub const CELLS_DISPLAY_FILE: &str = "cells_display.csv";
pub const FITS_DIR: &str = "fits";
pub const TABLES_DIR: &str = "tables";
pub const PLOTS_DIR: &str = "plots";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReportError {
    #[error("run directory has no verification records")]
    EmptyRun,
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("csv: {0}")]
    Csv(String),
    #[error("io: {0}")]
    Io(String),
}

fn io(e: impl std::fmt::Display) -> ReportError {
    ReportError::Io(e.to_string())
}

fn csv_err(e: impl std::fmt::Display) -> ReportError {
    ReportError::Csv(e.to_string())
}

/// A fitted model as stored under `fits/`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitFile {
    pub name: String,
    pub fit: MixedModelFit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlotKind {
    Plane,
    Forest,
    CrossArrows,
    LoopStack,
    Violin,
}

/// One mark on a plot. `key` names the cell, fit or task it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotPoint {
    pub key: String,
    pub x: f64,
    pub y: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub low: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub high: Option<f64>,
    /// Arrow head for cross arrows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_end: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y_end: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub marker: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl PlotPoint {
    fn at(key: String, x: f64, y: f64) -> Self {
        Self {
            key,
            x,
            y,
            low: None,
            high: None,
            x_end: None,
            y_end: None,
            marker: None,
            note: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub label: String,
    pub points: Vec<PlotPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotData {
    pub plot_kind: PlotKind,
    pub series: Vec<Series>,
    pub metadata: Map<String, Value>,
    pub footnotes: Vec<String>,
}

impl PlotData {
    fn new(kind: PlotKind) -> Self {
        Self {
            plot_kind: kind,
            series: Vec::new(),
            metadata: Map::new(),
            footnotes: Vec::new(),
        }
    }

    pub fn n_points(&self) -> usize {
        self.series.iter().map(|s| s.points.len()).sum()
    }
}

fn series_for<'a>(plot: &'a mut PlotData, label: &str) -> &'a mut Series {
    if let Some(i) = plot.series.iter().position(|s| s.label == label) {
        return &mut plot.series[i];
    }
    plot.series.push(Series {
        label: label.to_string(),
        points: Vec::new(),
    });
    plot.series.last_mut().expect("just pushed")
}

/// Discrimination–bias plane: x = verifier error, y = the chosen bias
/// metric, one series per task, marker = generator. Cells whose y value is
/// undefined are left out and listed in the footnotes.
pub fn emit_plane(cells: &[Cell], axis: BiasAxis, t: &Thresholds) -> Result<PlotData, ReportError> {
    if cells.is_empty() {
        return Err(MetricsError::EmptyInput.into());
    }
    let mut plot = PlotData::new(PlotKind::Plane);
    plot.metadata.insert("x".into(), json!("verifier_error"));
    plot.metadata.insert("y".into(), json!(axis.name()));
    plot.metadata.insert("error_hi".into(), json!(t.error_hi));
    plot.metadata.insert("bias_hi".into(), json!(t.bias_hi));
    for c in cells {
        let (y, undefined) = axis.value(&c.metrics);
        if undefined {
            plot.footnotes.push(format!("{}: {} undefined, point omitted", c.key, axis.name()));
            continue;
        }
        let mut p = PlotPoint::at(c.key.to_string(), c.metrics.verifier_error, y);
        p.marker = c.key.generator.clone();
        p.note = Some(quadrant(&c.metrics, axis, t).to_string());
        let label = c.key.task.map(|k| k.slug()).unwrap_or("all");
        series_for(&mut plot, label).points.push(p);
    }
    Ok(plot)
}

/// Per-task OLS slope of `field` on the generator error rate across cells.
pub fn emit_forest(cells: &[Cell], field: MetricField, name: &str) -> PlotData {
    let mut plot = PlotData::new(PlotKind::Forest);
    plot.metadata.insert("response".into(), json!(name));
    plot.metadata.insert("covariate".into(), json!("p_g"));
    let mut by_task: BTreeMap<TaskLabel, Vec<&Cell>> = BTreeMap::new();
    for c in cells {
        if let Some(t) = c.key.task {
            by_task.entry(t).or_default().push(c);
        }
    }
    let series = series_for(&mut plot, name);
    let mut notes = Vec::new();
    for (task, cs) in by_task {
        let x: Vec<f64> = cs.iter().map(|c| c.p_g).collect();
        let y: Vec<f64> = cs.iter().map(|c| field.of(c)).collect();
        match ols_slope(&x, &y) {
            Ok(f) => {
                let mut p = PlotPoint::at(task.slug().to_string(), f.slope, f.p_value);
                p.low = Some(f.ci_low);
                p.high = Some(f.ci_high);
                p.note = Some(format!("n={}", f.n));
                series.points.push(p);
            }
            Err(e) => notes.push(format!("{}: {e}", task.slug())),
        }
    }
    plot.footnotes = notes;
    plot.metadata.insert("point_fields".into(), json!({"x": "slope", "y": "p_value"}));
    plot
}

/// Arrows from the self-verification point to the cross-average point.
pub fn emit_cross_arrows(rows: &[CrossRow]) -> PlotData {
    let mut plot = PlotData::new(PlotKind::CrossArrows);
    plot.metadata.insert("x".into(), json!("verifier_error"));
    plot.metadata.insert("y".into(), json!("fpr"));
    for r in rows {
        let key = format!("{}/{}", r.task.slug(), r.generator);
        let (Some(s), Some(c)) = (r.self_metrics, r.cross_avg) else {
            plot.footnotes.push(format!("{key}: missing self or cross verifiers"));
            continue;
        };
        let mut p = PlotPoint::at(key, s.verifier_error, s.fpr);
        p.x_end = Some(c.verifier_error);
        p.y_end = Some(c.fpr);
        p.marker = Some(r.generator.clone());
        series_for(&mut plot, r.task.slug()).points.push(p);
    }
    plot
}

pub fn emit_loop_stack(outcomes: &BTreeMap<TaskLabel, OutcomeCounts>) -> PlotData {
    let mut plot = PlotData::new(PlotKind::LoopStack);
    plot.metadata.insert("x".into(), json!("task"));
    plot.metadata.insert("y".into(), json!("fraction of turn-0 wrong answers"));
    for (label, pick) in [
        ("corrected", (|c: &OutcomeCounts| c.corrected) as fn(&OutcomeCounts) -> u64),
        ("still_wrong", |c| c.still_wrong),
        ("locked", |c| c.locked),
    ] {
        let s = series_for(&mut plot, label);
        for (i, (task, c)) in outcomes.iter().enumerate() {
            let mut p = PlotPoint::at(task.slug().to_string(), i as f64, c.fraction(pick(c)));
            p.note = Some(format!("{} of {}", pick(c), c.wrong_at_start));
            s.points.push(p);
        }
    }
    plot
}

/// One paired grounding measurement: how much of an answer's attribution
/// falls on the image for the generator and for the verifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundingScore {
    pub example_id: String,
    pub task: TaskLabel,
    #[serde(default)]
    pub model: Option<String>,
    pub generator_score: f64,
    pub verifier_score: f64,
}

pub fn read_grounding_scores(path: &Path) -> Result<Vec<GroundingScore>, ReportError> {
    let text = fs::read_to_string(path).map_err(|e| ReportError::Io(format!("{}: {e}", path.display())))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| ReportError::Io(format!("{}:{}: {e}", path.display(), i + 1))))
        .collect()
}

/// Paired generator-vs-verifier score distributions per task with a
/// one-sided Wilcoxon test (generator greater) and Cohen's d, plus a
/// Kruskal–Wallis test of the paired differences across tasks.
pub fn emit_violin(scores: &[GroundingScore]) -> PlotData {
    let mut plot = PlotData::new(PlotKind::Violin);
    let mut by_task: BTreeMap<TaskLabel, Vec<&GroundingScore>> = BTreeMap::new();
    for s in scores {
        by_task.entry(s.task).or_default().push(s);
    }
    let mut tests = Map::new();
    let mut diffs = Vec::new();
    for (task, ss) in &by_task {
        for (role, pick) in [
            ("generator", (|s: &GroundingScore| s.generator_score) as fn(&GroundingScore) -> f64),
            ("verifier", |s| s.verifier_score),
        ] {
            let series = series_for(&mut plot, &format!("{}/{role}", task.slug()));
            for s in ss {
                series.points.push(PlotPoint::at(s.example_id.clone(), 0.0, pick(s)));
            }
        }
        let pairs: Vec<(f64, f64)> = ss.iter().map(|s| (s.generator_score, s.verifier_score)).collect();
        diffs.push(pairs.iter().map(|(a, b)| a - b).collect::<Vec<f64>>());
        let mean_diff = pairs.iter().map(|(a, b)| a - b).sum::<f64>() / pairs.len() as f64;
        let mut entry = Map::new();
        entry.insert("n".into(), json!(pairs.len()));
        entry.insert("mean_difference".into(), json!(mean_diff));
        match wilcoxon_signed_rank(&pairs, Alternative::Greater) {
            Ok(w) => {
                entry.insert("wilcoxon_w".into(), json!(w.statistic));
                entry.insert("wilcoxon_p".into(), json!(w.p_value));
            }
            Err(e) => plot.footnotes.push(format!("{}: wilcoxon: {e}", task.slug())),
        }
        match paired_cohens_d(&pairs) {
            Ok(d) => {
                entry.insert("cohens_d".into(), json!(d));
            }
            Err(e) => plot.footnotes.push(format!("{}: cohens_d: {e}", task.slug())),
        }
        tests.insert(task.slug().into(), Value::Object(entry));
    }
    match kruskal_wallis(&diffs) {
        Ok(k) => {
            plot.metadata.insert(
                "kruskal_wallis".into(),
                json!({"h": k.statistic, "df": k.df, "p_value": k.p_value, "epsilon_squared": k.effect_size}),
            );
        }
        Err(e) => plot.footnotes.push(format!("kruskal_wallis: {e}")),
    }
    plot.metadata.insert("tests".into(), Value::Object(tests));
    plot
}

const CELL_COLUMNS: [&str; 21] = [
    "task", "generator", "verifier", "dataset", "n", "tp", "fp", "tn", "fn", "acc", "verifier_error", "fpr",
    "fnr", "bias", "dskew", "fpr_undefined", "fnr_undefined", "dskew_undefined", "p_g", "quadrant",
    "config_digest",
];

fn opt(s: &Option<String>) -> String {
    s.clone().unwrap_or_default()
}

/// Machine-readable cell table at full precision.
pub fn write_cells_csv(
    path: &Path,
    cells: &[Cell],
    axis: BiasAxis,
    t: &Thresholds,
    config_digest: &str,
) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(CELL_COLUMNS).map_err(csv_err)?;
    for c in cells {
        let m = &c.metrics;
        let row = [
            c.key.task.map(|t| t.slug().to_string()).unwrap_or_default(),
            opt(&c.key.generator),
            opt(&c.key.verifier),
            opt(&c.key.dataset),
            c.counts.n().to_string(),
            c.counts.tp.to_string(),
            c.counts.fp.to_string(),
            c.counts.tn.to_string(),
            c.counts.fn_.to_string(),
            m.acc.to_string(),
            m.verifier_error.to_string(),
            m.fpr.to_string(),
            m.fnr.to_string(),
            m.bias.to_string(),
            m.dskew.to_string(),
            m.fpr_undefined.to_string(),
            m.fnr_undefined.to_string(),
            m.dskew_undefined.to_string(),
            c.p_g.to_string(),
            quadrant(m, axis, t).to_string(),
            config_digest.to_string(),
        ];
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(io)
}

/// Presentation variant: rates as percentages with one decimal.
pub fn write_cells_display_csv(path: &Path, cells: &[Cell], config_digest: &str) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record([
        "task", "generator", "verifier", "dataset", "n", "acc", "verifier_error", "fpr", "fnr", "bias", "dskew",
        "p_g", "config_digest",
    ])
    .map_err(csv_err)?;
    for c in cells {
        let m = &c.metrics;
        w.write_record([
            c.key.task.map(|t| t.slug().to_string()).unwrap_or_default(),
            opt(&c.key.generator),
            opt(&c.key.verifier),
            opt(&c.key.dataset),
            c.counts.n().to_string(),
            percent_1dp(m.acc),
            percent_1dp(m.verifier_error),
            percent_1dp(m.fpr),
            percent_1dp(m.fnr),
            percent_1dp(m.bias),
            percent_1dp(m.dskew),
            percent_1dp(c.p_g),
            config_digest.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(io)
}

fn parse_field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize) -> Result<T, ReportError> {
    rec.get(i)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| ReportError::Csv(format!("bad value in column `{}`", CELL_COLUMNS[i])))
}

fn none_if_empty(s: &str) -> Option<String> {
    (!s.is_empty()).then(|| s.to_string())
}

pub fn read_cells_csv(path: &Path) -> Result<Vec<Cell>, ReportError> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let task = match rec.get(0).unwrap_or("") {
            "" => None,
            s => Some(s.parse::<TaskLabel>().map_err(csv_err)?),
        };
        out.push(Cell {
            key: CellKey {
                task,
                generator: none_if_empty(&rec[1]),
                verifier: none_if_empty(&rec[2]),
                dataset: none_if_empty(&rec[3]),
            },
            counts: ConfusionCounts {
                tp: parse_field(&rec, 5)?,
                fp: parse_field(&rec, 6)?,
                tn: parse_field(&rec, 7)?,
                fn_: parse_field(&rec, 8)?,
            },
            metrics: MetricSet {
                acc: parse_field(&rec, 9)?,
                verifier_error: parse_field(&rec, 10)?,
                fpr: parse_field(&rec, 11)?,
                fnr: parse_field(&rec, 12)?,
                bias: parse_field(&rec, 13)?,
                dskew: parse_field(&rec, 14)?,
                fpr_undefined: parse_field(&rec, 15)?,
                fnr_undefined: parse_field(&rec, 16)?,
                dskew_undefined: parse_field(&rec, 17)?,
            },
            p_g: parse_field(&rec, 18)?,
        });
    }
    Ok(out)
}

/// Turn-0 records with one entry per (example, generator), used for
/// generator accuracy.
fn generator_answers(records: &[VerificationRecord]) -> Vec<VerificationRecord> {
    let mut seen = BTreeSet::new();
    records
        .iter()
        .filter(|r| r.turn == 0 && seen.insert((r.example_id.clone(), r.generator_id.clone())))
        .cloned()
        .collect()
}

fn self_turn0(records: &[VerificationRecord]) -> Vec<VerificationRecord> {
    records.iter().filter(|r| r.turn == 0 && r.is_self()).cloned().collect()
}

const BY_TASK_MODEL_DATASET: GroupBy = GroupBy {
    task: true,
    generator: true,
    verifier: true,
    dataset: true,
};
const BY_MODEL_DATASET: GroupBy = GroupBy {
    task: false,
    generator: true,
    verifier: true,
    dataset: true,
};

/// One table per dataset: rows are tasks plus an overall row, columns are
/// generators plus the unweighted mean across them.
pub struct DatasetTable {
    pub dataset: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl DatasetTable {
    pub fn write(&self, path: &Path, config_digest: &str) -> Result<(), ReportError> {
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        let mut header = self.header.clone();
        header.push("config_digest".into());
        w.write_record(&header).map_err(csv_err)?;
        for r in &self.rows {
            let mut r = r.clone();
            r.push(config_digest.to_string());
            w.write_record(&r).map_err(csv_err)?;
        }
        w.flush().map_err(io)
    }
}

fn render_cell(cells: &[&Cell], fields: &[MetricField]) -> String {
    let owned: Vec<Cell> = cells.iter().map(|c| (*c).clone()).collect();
    fields
        .iter()
        .map(|f| mean_across(&owned, *f).map(percent_1dp).unwrap_or_default())
        .collect::<Vec<_>>()
        .join(" / ")
}

fn dataset_tables(
    task_cells: &[Cell],
    overall_cells: &[Cell],
    fields: &[MetricField],
) -> Vec<DatasetTable> {
    let datasets: BTreeSet<String> = task_cells.iter().filter_map(|c| c.key.dataset.clone()).collect();
    let mut out = Vec::new();
    for ds in datasets {
        let in_ds = |c: &&Cell| c.key.dataset.as_deref() == Some(ds.as_str());
        let cells: Vec<&Cell> = task_cells.iter().filter(in_ds).collect();
        let overall: Vec<&Cell> = overall_cells.iter().filter(in_ds).collect();
        let models: BTreeSet<String> = cells.iter().filter_map(|c| c.key.generator.clone()).collect();
        let mut header = vec!["Reasoning".to_string()];
        header.extend(models.iter().cloned());
        header.push("Mean".into());
        let mut rows = Vec::new();
        let row_for = |label: String, row_cells: Vec<&Cell>| {
            let mut row = vec![label];
            for m in &models {
                let c: Vec<&Cell> = row_cells.iter().copied().filter(|c| c.key.generator.as_ref() == Some(m)).collect();
                row.push(if c.is_empty() { String::new() } else { render_cell(&c, fields) });
            }
            row.push(render_cell(&row_cells, fields));
            row
        };
        for task in TaskLabel::DISPLAY_ORDER {
            let rc: Vec<&Cell> = cells.iter().copied().filter(|c| c.key.task == Some(task)).collect();
            if !rc.is_empty() {
                rows.push(row_for(task.short_name().to_string(), rc));
            }
        }
        rows.push(row_for("Overall".into(), overall));
        out.push(DatasetTable {
            dataset: ds,
            header,
            rows,
        });
    }
    out
}

/// Generator accuracy (%) per dataset.
pub fn generator_accuracy_tables(records: &[VerificationRecord]) -> Result<Vec<DatasetTable>, ReportError> {
    let answers = generator_answers(records);
    // verifier identity is irrelevant here; key cells by generator only
    let answers: Vec<VerificationRecord> = answers
        .into_iter()
        .map(|mut r| {
            r.verifier_id = r.generator_id.clone();
            r
        })
        .collect();
    let task_cells = aggregate(&answers, BY_TASK_MODEL_DATASET)?;
    let overall = aggregate(&answers, BY_MODEL_DATASET)?;
    Ok(dataset_tables(&task_cells, &overall, &[MetricField::GeneratorAcc]))
}

/// Self-verification accuracy / FPR / FNR (%) per dataset.
pub fn verifier_tables(records: &[VerificationRecord]) -> Result<Vec<DatasetTable>, ReportError> {
    let own = self_turn0(records);
    if own.is_empty() {
        return Ok(Vec::new());
    }
    let task_cells = aggregate(&own, BY_TASK_MODEL_DATASET)?;
    let overall = aggregate(&own, BY_MODEL_DATASET)?;
    Ok(dataset_tables(
        &task_cells,
        &overall,
        &[MetricField::Acc, MetricField::Fpr, MetricField::Fnr],
    ))
}

fn file_safe(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn write_rows(path: &Path, header: &[&str], rows: &[Vec<String>], config_digest: &str) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut h: Vec<&str> = header.to_vec();
    h.push("config_digest");
    w.write_record(&h).map_err(csv_err)?;
    for r in rows {
        let mut r = r.clone();
        r.push(config_digest.to_string());
        w.write_record(&r).map_err(csv_err)?;
    }
    w.flush().map_err(io)
}

fn num(x: f64) -> String {
    x.to_string()
}

fn opt_num(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn fit_tables(fits: &[FitFile], dir: &Path, digest: &str, written: &mut Vec<PathBuf>) -> Result<(), ReportError> {
    let mut fe = Vec::new();
    let mut re = Vec::new();
    let mut fitrows = Vec::new();
    let mut prev: Option<&FitFile> = None;
    for f in fits {
        let m = &f.fit;
        for b in &m.beta {
            fe.push(vec![
                f.name.clone(),
                b.name.clone(),
                num(b.estimate),
                num(b.se),
                num(b.z),
                num(b.p_value),
                num(b.ci_low),
                num(b.ci_high),
                opt_num(b.odds_ratio),
            ]);
        }
        for c in &m.theta {
            re.push(vec![
                f.name.clone(),
                c.factor.clone(),
                num(c.intercept_variance()),
                opt_num(c.slope_variance()),
                opt_num(c.correlation),
            ]);
        }
        // consecutive GLMM fits form the nested comparison chain
        let chain = prev.filter(|p| p.name.starts_with("glmm") && f.name.starts_with("glmm"));
        let cmp = chain.and_then(|p| {
            let df = m.n_params.checked_sub(p.fit.n_params).filter(|d| *d > 0)?;
            lrt(p.fit.loglik, m.loglik, df as u32).ok().map(|t| (t, df))
        });
        fitrows.push(vec![
            f.name.clone(),
            m.formula.clone(),
            m.n_params.to_string(),
            num(m.loglik),
            num(m.aic),
            num(m.bic),
            num(-2.0 * m.loglik),
            cmp.as_ref().map(|(t, _)| num(t.statistic)).unwrap_or_default(),
            cmp.as_ref().map(|(_, d)| d.to_string()).unwrap_or_default(),
            cmp.as_ref().map(|(t, _)| num(t.p_value)).unwrap_or_default(),
            opt_num(m.r2_marginal),
            opt_num(m.r2_conditional),
            m.converged.to_string(),
            m.singular.to_string(),
        ]);
        prev = Some(f);
    }
    let glmm: Vec<&FitFile> = fits.iter().filter(|f| f.name.starts_with("glmm")).collect();
    let mcf = match (glmm.first(), glmm.last()) {
        (Some(a), Some(b)) if glmm.len() > 1 => Some(mcfadden_r2(b.fit.loglik, a.fit.loglik)),
        _ => None,
    };
    let files: [(&str, &[&str], Vec<Vec<String>>); 3] = [
        (
            "fixed_effects.csv",
            &["model", "term", "estimate", "se", "z", "p_value", "ci_low", "ci_high", "odds_ratio"],
            fe,
        ),
        (
            "random_effects.csv",
            &["model", "factor", "var_intercept", "var_slope", "correlation"],
            re,
        ),
        (
            "model_fit.csv",
            &[
                "model", "formula", "df", "loglik", "aic", "bic", "deviance", "chisq", "chi_df", "p_value",
                "r2_marginal", "r2_conditional", "converged", "singular",
            ],
            fitrows,
        ),
    ];
    for (name, header, rows) in files {
        let p = dir.join(name);
        write_rows(&p, header, &rows, digest)?;
        written.push(p);
    }
    if let Some(r2) = mcf {
        let p = dir.join("mcfadden.csv");
        write_rows(
            &p,
            &["full", "null", "mcfadden_r2"],
            &[vec![glmm[glmm.len() - 1].name.clone(), glmm[0].name.clone(), num(r2)]],
            digest,
        )?;
        written.push(p);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportOptions {
    pub axis: BiasAxis,
    pub thresholds: Thresholds,
    pub grounding_scores: Option<PathBuf>,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            axis: BiasAxis::Fpr,
            thresholds: Thresholds::default(),
            grounding_scores: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReportSummary {
    pub config_digest: String,
    pub files: Vec<PathBuf>,
    pub notices: Vec<String>,
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<(), ReportError> {
    let mut s = serde_json::to_string_pretty(v).map_err(io)?;
    s.push('\n');
    fs::write(path, s).map_err(io)
}

fn stamp_plot(mut p: PlotData, digest: &str) -> PlotData {
    p.metadata.insert("config_digest".into(), json!(digest));
    p
}

pub fn load_records(run_dir: &Path) -> Result<(Vec<VerificationRecord>, String), ReportError> {
    let path = run_dir.join(RECORDS_FILE);
    if !path.exists() {
        return Err(ReportError::EmptyRun);
    }
    let stamped: Vec<Stamped<VerificationRecord>> = read_jsonl(&path)?;
    let digest = stamped.first().map(|s| s.config_digest.clone()).ok_or(ReportError::EmptyRun)?;
    Ok((stamped.into_iter().map(|s| s.item).collect(), digest))
}

pub fn load_traces(run_dir: &Path) -> Result<Vec<LoopTrace>, ReportError> {
    let path = run_dir.join(TRACES_FILE);
    if !path.exists() {
        return Ok(Vec::new());
    }
    Ok(read_jsonl::<LoopTrace>(&path)?.into_iter().map(|s| s.item).collect())
}

/// Fit files in `fits/`, in file-name order.
pub fn load_fits(run_dir: &Path) -> Result<Vec<FitFile>, ReportError> {
    let dir = run_dir.join(FITS_DIR);
    let Ok(entries) = fs::read_dir(&dir) else {
        return Ok(Vec::new());
    };
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p).map_err(io)?;
            let s: Stamped<FitFile> =
                serde_json::from_str(&text).map_err(|e| ReportError::Io(format!("{}: {e}", p.display())))?;
            Ok(s.item)
        })
        .collect()
}

/// Regenerates every table and plot file of a run directory.
pub fn emit_report(run_dir: &Path, opts: &ReportOptions) -> Result<ReportSummary, ReportError> {
    let (records, digest) = load_records(run_dir)?;
    let traces = load_traces(run_dir)?;
    let fits = load_fits(run_dir)?;
    let mut summary = ReportSummary {
        config_digest: digest.clone(),
        ..ReportSummary::default()
    };
    let tables = run_dir.join(TABLES_DIR);
    let plots = run_dir.join(PLOTS_DIR);
    for d in [&tables, &plots] {
        if d.exists() {
            fs::remove_dir_all(d).map_err(io)?;
        }
        fs::create_dir_all(d).map_err(io)?;
    }
    let written = &mut summary.files;

    let turn0: Vec<VerificationRecord> = records.iter().filter(|r| r.turn == 0).cloned().collect();
    let cells = aggregate(&turn0, GroupBy::FULL)?;
    let p = run_dir.join(CELLS_FILE);
    write_cells_csv(&p, &cells, opts.axis, &opts.thresholds, &digest)?;
    written.push(p);
    let p = run_dir.join(CELLS_DISPLAY_FILE);
    write_cells_display_csv(&p, &cells, &digest)?;
    written.push(p);

    for t in generator_accuracy_tables(&records)? {
        let p = tables.join(format!("generator_accuracy_{}.csv", file_safe(&t.dataset)));
        t.write(&p, &digest)?;
        written.push(p);
    }
    for t in verifier_tables(&records)? {
        let p = tables.join(format!("verifier_{}.csv", file_safe(&t.dataset)));
        t.write(&p, &digest)?;
        written.push(p);
    }

    let own = self_turn0(&records);
    if own.is_empty() {
        summary.notices.push("no self-verification records: plane and forest plots omitted".into());
    } else {
        let plane_cells = aggregate(&own, GroupBy::TASK_MODEL)?;
        for axis in BiasAxis::ALL {
            let p = plots.join(format!("plane_{}.json", axis.name()));
            write_json(&p, &stamp_plot(emit_plane(&plane_cells, axis, &opts.thresholds)?, &digest))?;
            written.push(p);
        }
        let full = aggregate(&own, GroupBy::FULL)?;
        for (field, name) in [
            (MetricField::Fnr, "fnr"),
            (MetricField::Fpr, "fpr"),
            (MetricField::Bias, "bias"),
            (MetricField::Dskew, "dskew"),
        ] {
            let p = plots.join(format!("forest_{name}.json"));
            write_json(&p, &stamp_plot(emit_forest(&full, field, name), &digest))?;
            written.push(p);
        }
    }

    if turn0.iter().any(|r| !r.is_self()) {
        let rows = cross_summary(&turn0)?;
        let p = plots.join("cross_arrows.json");
        write_json(&p, &stamp_plot(emit_cross_arrows(&rows), &digest))?;
        written.push(p);
        let fmt = |m: Option<MetricSet>, f: fn(&MetricSet) -> f64| m.map(|m| num(f(&m))).unwrap_or_default();
        let table: Vec<Vec<String>> = rows
            .iter()
            .map(|r| {
                let delta = match (r.self_metrics, r.cross_avg) {
                    (Some(s), Some(c)) => num(c.fpr - s.fpr),
                    _ => String::new(),
                };
                vec![
                    r.task.slug().to_string(),
                    r.generator.clone(),
                    r.cross_verifiers.join(";"),
                    fmt(r.self_metrics, |m| m.acc),
                    fmt(r.cross_avg, |m| m.acc),
                    fmt(r.self_metrics, |m| m.fpr),
                    fmt(r.cross_avg, |m| m.fpr),
                    delta,
                    fmt(r.self_metrics, |m| m.bias),
                    fmt(r.cross_avg, |m| m.bias),
                ]
            })
            .collect();
        let p = tables.join("cross.csv");
        write_rows(
            &p,
            &[
                "task", "generator", "cross_verifiers", "self_acc", "cross_acc", "self_fpr", "cross_fpr",
                "cross_minus_self_fpr", "self_bias", "cross_bias",
            ],
            &table,
            &digest,
        )?;
        written.push(p);
    }

    if traces.is_empty() {
        summary.notices.push("no loop traces: loop tables omitted".into());
    } else {
        let outcomes = loop_outcomes(&traces);
        let rows: Vec<Vec<String>> = outcomes
            .iter()
            .map(|(t, c)| {
                vec![
                    t.slug().to_string(),
                    c.wrong_at_start.to_string(),
                    c.corrected.to_string(),
                    c.still_wrong.to_string(),
                    c.locked.to_string(),
                    num(c.fraction(c.corrected)),
                    num(c.fraction(c.still_wrong)),
                    num(c.fraction(c.locked)),
                ]
            })
            .collect();
        let p = tables.join("loop_outcomes.csv");
        write_rows(
            &p,
            &[
                "task", "wrong_at_start", "corrected", "still_wrong", "locked", "corrected_fraction",
                "still_wrong_fraction", "locked_fraction",
            ],
            &rows,
            &digest,
        )?;
        written.push(p);
        let max_turn = traces.iter().map(|t| t.terminated_at).max().unwrap_or(0);
        let mut rows = Vec::new();
        for turn in 0..=max_turn {
            for (task, b) in cumulative_agreement_bias(&traces, turn) {
                rows.push(vec![
                    task.slug().to_string(),
                    turn.to_string(),
                    num(b.value),
                    b.false_accepts.to_string(),
                    b.negatives.to_string(),
                    b.undefined.to_string(),
                ]);
            }
        }
        let p = tables.join("loop_cumulative_bias.csv");
        write_rows(
            &p,
            &["task", "through_turn", "agreement_bias", "false_accepts", "negatives", "undefined"],
            &rows,
            &digest,
        )?;
        written.push(p);
        let p = plots.join("loop_stack.json");
        write_json(&p, &stamp_plot(emit_loop_stack(&outcomes), &digest))?;
        written.push(p);
    }

    if fits.is_empty() {
        summary.notices.push("no fits found: model tables omitted".into());
    } else {
        fit_tables(&fits, &tables, &digest, written)?;
    }

    match &opts.grounding_scores {
        Some(path) => {
            let scores = read_grounding_scores(path)?;
            let p = plots.join("violin.json");
            write_json(&p, &stamp_plot(emit_violin(&scores), &digest))?;
            written.push(p);
        }
        None => summary.notices.push("no grounding scores configured: violin plot omitted".into()),
    }

    written.sort();
    Ok(summary)
}

/// Quadrant of every cell, used by callers that only need the labels.
pub fn quadrants(cells: &[Cell], axis: BiasAxis, t: &Thresholds) -> Vec<(CellKey, Quadrant)> {
    cells.iter().map(|c| (c.key.clone(), quadrant(&c.metrics, axis, t))).collect()
}
