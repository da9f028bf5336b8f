mod common;

use std::collections::BTreeMap;

use vaudit_core::corpus::{majority_vote, parse_task_label, CorpusError, TaskLabel};
use vaudit_core::pipeline::label_corpus;

/// Counts votes per slug; a label with two or more votes wins, otherwise
/// the alphabetically first slug.
fn vote_oracle(votes: &[TaskLabel]) -> TaskLabel {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for v in votes {
        *counts.entry(v.slug()).or_default() += 1;
    }
    let winner = counts
        .iter()
        .find(|(_, n)| **n >= 2)
        .map(|(s, _)| *s)
        .unwrap_or_else(|| counts.keys().next().unwrap());
    winner.parse().unwrap()
}

#[test]
fn majority_vote_matches_oracle_on_every_triple() {
    for a in TaskLabel::ALL {
        for b in TaskLabel::ALL {
            for c in TaskLabel::ALL {
                assert_eq!(majority_vote(&[a, b, c]).unwrap(), vote_oracle(&[a, b, c]), "{a} {b} {c}");
            }
        }
    }
}

#[test]
fn majority_vote_needs_three_votes() {
    let v = [TaskLabel::CausalExplanation; 4];
    assert_eq!(majority_vote(&v[..2]), Err(CorpusError::ArityError(2)));
    assert_eq!(majority_vote(&v), Err(CorpusError::ArityError(4)));
}

#[test]
fn label_synonyms() {
    assert_eq!(parse_task_label(" Modality Recognition. ").unwrap(), TaskLabel::ModalityRecognition);
    assert_eq!(parse_task_label("quantitative_measurement").unwrap(), TaskLabel::QuantitativeMeasurement);
    assert!(matches!(parse_task_label("image quality"), Err(CorpusError::UnknownLabel(_))));
}

fn unlabeled(n: usize) -> Vec<vaudit_core::corpus::QueryExample> {
    let mut c = common::corpus(&[TaskLabel::ModalityRecognition], n);
    for (i, e) in c.iter_mut().enumerate() {
        e.task = None;
        e.question = format!("Question number {i} about this scan?");
    }
    c
}

fn labelers(offsets: [u8; 3]) -> Vec<vaudit_core::agents::BackendConfig> {
    offsets
        .iter()
        .enumerate()
        .map(|(i, o)| common::agent(&format!("l{i}"), i as u64, |s| s.label_offset = *o))
        .collect()
}

fn ids() -> Vec<String> {
    vec!["l0".into(), "l1".into(), "l2".into()]
}

#[test]
fn unanimous_labelers_agree_fully() {
    let pool = common::pool(labelers([0, 0, 0]), 1);
    let out = label_corpus(&unlabeled(30), &pool, &ids(), 4).unwrap();
    assert_eq!(out.labeled, 30);
    assert_eq!(out.agreement_rate, Some(1.0));
    assert!(out.adjudication.is_empty());
    assert_eq!(out.votes.len(), 90);
}

#[test]
fn three_way_splits_resolve_alphabetically() {
    let pool = common::pool(labelers([0, 1, 2]), 1);
    let out = label_corpus(&unlabeled(30), &pool, &ids(), 4).unwrap();
    assert_eq!(out.agreement_rate, Some(0.0));
    for ex in &out.examples {
        let votes: Vec<TaskLabel> = out
            .votes
            .iter()
            .filter(|v| v.example_id == ex.id)
            .map(|v| v.parsed.unwrap())
            .collect();
        let distinct: std::collections::BTreeSet<&str> = votes.iter().map(|v| v.slug()).collect();
        assert_eq!(distinct.len(), 3);
        assert_eq!(ex.task.unwrap().slug(), *distinct.iter().next().unwrap());
    }
}

#[test]
fn unknown_labels_go_to_adjudication() {
    let mut backends = labelers([0, 0, 0]);
    backends[2].synthetic.as_mut().unwrap().label_invalid_rate = 1.0;
    let pool = common::pool(backends, 1);
    let out = label_corpus(&unlabeled(5), &pool, &ids(), 2).unwrap();
    assert_eq!(out.labeled, 0);
    assert_eq!(out.agreement_rate, None);
    assert_eq!(out.adjudication.len(), 5);
    assert!(out.adjudication[0].reason.contains("image quality"));
    assert!(out.examples.iter().all(|e| e.task.is_none()));
}

#[test]
fn labeled_examples_are_left_alone() {
    let pool = common::pool(labelers([0, 1, 2]), 1);
    let c = common::corpus(&[TaskLabel::SpatialLocalization], 4);
    let out = label_corpus(&c, &pool, &ids(), 1).unwrap();
    assert_eq!(out.labeled, 0);
    assert_eq!(out.examples, c);
    assert_eq!(pool.cache_hits(), (0, 0));
}

#[test]
fn label_corpus_needs_three_labelers() {
    let pool = common::pool(labelers([0, 0, 0]), 1);
    assert!(label_corpus(&unlabeled(1), &pool, &ids()[..2], 1).is_err());
}
