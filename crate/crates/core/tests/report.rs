mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use vaudit_core::agents::{Verdict, VerdictLabel};
use vaudit_core::corpus::TaskLabel;
use vaudit_core::metrics::{
    aggregate, mean_across, percent_1dp, BiasAxis, GroupBy, MetricField, Thresholds, VerificationRecord,
};
use vaudit_core::pipeline::{run, write_jsonl, RunConfig, RunMode, RECORDS_FILE};
use vaudit_core::report::{
    emit_plane, emit_report, generator_accuracy_tables, read_cells_csv, write_cells_csv, ReportError, ReportOptions,
    CELLS_FILE, TABLES_DIR,
};

fn rec(id: &str, task: TaskLabel, g: &str, v: &str, ds: &str, y_star: bool, accept: bool) -> VerificationRecord {
    let verdict = Verdict {
        label: if accept { VerdictLabel::Correct } else { VerdictLabel::Incorrect },
        confidence: Some(0.9),
        explanation: "x".into(),
        parse_clean: true,
    };
    VerificationRecord::new(id.into(), g.into(), v.into(), task, ds.into(), 0, "a".into(), y_star, verdict)
}

/// `correct` right answers out of `n` for one generator, verified by itself.
fn generator_rows(ds: &str, task: TaskLabel, g: &str, correct: usize, n: usize) -> Vec<VerificationRecord> {
    (0..n)
        .map(|i| rec(&format!("{ds}-{}-{i}", task.slug()), task, g, g, ds, i < correct, true))
        .collect()
}

// Columns G3, MG, HG, Q7, LS, P4 in that order; ids sort the same way.
const MODELS: [&str; 6] = ["m1", "m2", "m3", "m4", "m5", "m6"];

#[test]
fn appendix_mean_columns_reproduced() {
    let mut records = Vec::new();
    for (g, k) in MODELS.iter().zip([3, 3, 2, 2, 2, 3]) {
        records.extend(generator_rows("MedXpert-QA", TaskLabel::ModalityRecognition, g, k, 14));
    }
    for (g, k) in MODELS.iter().zip([10, 12, 15, 10, 12, 11]) {
        records.extend(generator_rows("PathVQA", TaskLabel::ModalityRecognition, g, k, 35));
    }
    let tables = generator_accuracy_tables(&records).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut lines = BTreeMap::new();
    for t in &tables {
        let p = dir.path().join(format!("{}.csv", t.dataset));
        t.write(&p, "d0").unwrap();
        lines.insert(t.dataset.clone(), fs::read_to_string(p).unwrap());
    }
    assert_eq!(
        lines["MedXpert-QA"].lines().nth(1).unwrap(),
        "Modality,21.4,21.4,14.3,14.3,14.3,21.4,17.9,d0"
    );
    assert_eq!(
        lines["PathVQA"].lines().nth(1).unwrap(),
        "Modality,28.6,34.3,42.9,28.6,34.3,31.4,33.3,d0"
    );
    assert_eq!(lines["PathVQA"].lines().next().unwrap(), "Reasoning,m1,m2,m3,m4,m5,m6,Mean,config_digest");

    let cells = aggregate(
        &records.iter().filter(|r| r.dataset_id == "MedXpert-QA").cloned().collect::<Vec<_>>(),
        GroupBy::FULL,
    )
    .unwrap();
    assert_eq!(percent_1dp(mean_across(&cells, MetricField::GeneratorAcc).unwrap()), "17.9");
    assert_eq!(percent_1dp(mean_across(&cells[..1], MetricField::GeneratorAcc).unwrap()), "21.4");
}

#[test]
fn cells_csv_round_trips_exactly() {
    let mut records = Vec::new();
    for (i, t) in TaskLabel::ALL.iter().enumerate() {
        for j in 0..(7 + 3 * i) {
            records.push(rec(&format!("e{i}-{j}"), *t, "g", "g", "d", j % 3 == 0, j % 2 == 0));
        }
    }
    // a cell with no negatives: fpr undefined
    records.push(rec("z", TaskLabel::CausalExplanation, "h", "h", "d", true, true));
    let cells = aggregate(&records, GroupBy::FULL).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("cells.csv");
    write_cells_csv(&p, &cells, BiasAxis::Fpr, &Thresholds::default(), "abc").unwrap();
    assert_eq!(read_cells_csv(&p).unwrap(), cells);
}

#[test]
fn plane_has_one_point_per_cell() {
    let mut records = Vec::new();
    for t in TaskLabel::ALL {
        for (k, g) in MODELS.iter().enumerate() {
            records.extend(generator_rows("d", t, g, k, 8));
        }
    }
    let cells = aggregate(&records, GroupBy::TASK_MODEL).unwrap();
    let plot = emit_plane(&cells, BiasAxis::Fpr, &Thresholds::default()).unwrap();
    assert_eq!(plot.n_points(), 42);
    assert_eq!(plot.series.len(), 7);

    let perfect = aggregate(&[rec("a", TaskLabel::SpatialLocalization, "g", "g", "d", true, true)], GroupBy::FULL).unwrap();
    let plot = emit_plane(&perfect, BiasAxis::Bias, &Thresholds::default()).unwrap();
    let p = &plot.series[0].points[0];
    assert_eq!((p.x, p.y), (0.0, 0.0));

    let dskew = emit_plane(&perfect, BiasAxis::Dskew, &Thresholds::default()).unwrap();
    assert_eq!(dskew.n_points(), 0);
    assert_eq!(dskew.footnotes.len(), 1);
    assert!(emit_plane(&[], BiasAxis::Fpr, &Thresholds::default()).is_err());
}

fn synthetic_run(dir: &Path, mode: RunMode) {
    let pool = common::pool(
        vec![
            common::agent("a", 1, |s| {
                s.accuracy = 0.5;
                s.false_accept = 0.6;
                s.false_reject = 0.1;
            }),
            common::agent("b", 2, |s| {
                s.accuracy = 0.7;
                s.false_accept = 0.2;
            }),
        ],
        9,
    );
    let mut c = RunConfig::new(vec!["a".into(), "b".into()], "judge", mode, dir);
    if mode == RunMode::Cross {
        c.verifiers = vec!["a".into(), "b".into()];
    }
    c.config_digest = "cfg".into();
    run(&common::corpus(&TaskLabel::ALL, 12), &pool, &c).unwrap();
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for sub in ["", TABLES_DIR, "plots"] {
        let d = dir.join(sub);
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_file() {
                out.insert(p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn report_regenerates_identically_from_records() {
    let dir = tempfile::tempdir().unwrap();
    synthetic_run(dir.path(), RunMode::Cross);
    let summary = emit_report(dir.path(), &ReportOptions::default()).unwrap();
    assert_eq!(summary.config_digest, "cfg");
    assert!(summary.notices.iter().any(|n| n.contains("loop")));
    let first = snapshot(dir.path());
    assert!(first.contains_key("tables/cross.csv"));
    assert!(first.contains_key("plots/plane_fpr.json"));
    assert!(!first.contains_key("tables/loop_outcomes.csv"));

    // wipe everything except the records and regenerate
    fs::remove_dir_all(dir.path().join(TABLES_DIR)).unwrap();
    fs::remove_file(dir.path().join(CELLS_FILE)).unwrap();
    emit_report(dir.path(), &ReportOptions::default()).unwrap();
    assert_eq!(first, snapshot(dir.path()));

    let cells = fs::read_to_string(dir.path().join(CELLS_FILE)).unwrap();
    assert!(cells.lines().skip(1).all(|l| l.ends_with(",cfg")));
}

#[test]
fn loop_runs_get_loop_tables() {
    let dir = tempfile::tempdir().unwrap();
    synthetic_run(dir.path(), RunMode::Loop);
    let summary = emit_report(dir.path(), &ReportOptions::default()).unwrap();
    assert!(!summary.notices.iter().any(|n| n.contains("loop")));
    let outcomes = fs::read_to_string(dir.path().join(TABLES_DIR).join("loop_outcomes.csv")).unwrap();
    for line in outcomes.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let n: u64 = f[1].parse().unwrap();
        let parts: u64 = f[2..5].iter().map(|x| x.parse::<u64>().unwrap()).sum();
        assert_eq!(n, parts);
    }
    assert!(dir.path().join("plots/loop_stack.json").exists());
}

#[test]
fn empty_run_directory_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(emit_report(dir.path(), &ReportOptions::default()).unwrap_err(), ReportError::EmptyRun);
    write_jsonl::<VerificationRecord>(&dir.path().join(RECORDS_FILE), &[], "x").unwrap();
    assert_eq!(emit_report(dir.path(), &ReportOptions::default()).unwrap_err(), ReportError::EmptyRun);
}

#[test]
fn violin_reports_paired_tests_per_task() {
    use vaudit_core::report::{emit_violin, GroundingScore};
    let mut scores = Vec::new();
    for (t, shift) in [(TaskLabel::ModalityRecognition, 0.1), (TaskLabel::CausalExplanation, 0.3)] {
        for i in 0..5 {
            scores.push(GroundingScore {
                example_id: format!("{}-{i}", t.slug()),
                task: t,
                model: None,
                generator_score: 0.5 + shift + 0.01 * i as f64,
                verifier_score: 0.5 - 0.02 * i as f64,
            });
        }
    }
    let plot = emit_violin(&scores);
    assert_eq!(plot.series.len(), 4);
    let tests = &plot.metadata["tests"];
    assert_eq!(tests["modality_recognition"]["wilcoxon_p"], 1.0 / 32.0);
    assert!(plot.metadata["kruskal_wallis"]["p_value"].as_f64().unwrap() < 0.05);
    assert!(plot.footnotes.is_empty());
}

#[test]
fn forest_slope_follows_generator_error() {
    use vaudit_core::report::emit_forest;
    // fpr = 1 for every cell while p_g varies: zero slope
    let mut records = Vec::new();
    for (k, g) in MODELS.iter().enumerate() {
        for i in 0..10 {
            records.push(rec(&format!("{g}-{i}"), TaskLabel::SpatialLocalization, g, g, "d", i < k + 1, true));
        }
    }
    let cells = aggregate(&records, GroupBy::FULL).unwrap();
    let plot = emit_forest(&cells, MetricField::Fpr, "fpr");
    let p = &plot.series[0].points[0];
    assert_eq!(p.key, "spatial_localization");
    assert!(p.x.abs() < 1e-12);
    let acc = emit_forest(&cells, MetricField::Acc, "acc");
    // acc = 1 − p_g here since every answer is accepted
    assert!((acc.series[0].points[0].x + 1.0).abs() < 1e-12);
}
