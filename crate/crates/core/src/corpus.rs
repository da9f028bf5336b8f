//! Corpus schema, the seven-task taxonomy and majority-vote labeling.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CorpusError {
    #[error("unknown task label `{0}`")]
    UnknownLabel(String),
    #[error("majority vote needs exactly 3 labels, got {0}")]
    ArityError(usize),
    #[error("line {line}: {message}")]
    SchemaError { line: usize, message: String },
    #[error("duplicate example id `{0}`")]
    DuplicateId(String),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

/// Task categories. Variant order is the byte-wise order of the slugs, so
/// the derived `Ord` is the tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TaskLabel {
    AnatomicalIdentification,
    CausalExplanation,
    DifferentialDiagnosis,
    DiseaseClassification,
    ModalityRecognition,
    QuantitativeMeasurement,
    SpatialLocalization,
}

impl TaskLabel {
    pub const ALL: [TaskLabel; 7] = [
        TaskLabel::AnatomicalIdentification,
        TaskLabel::CausalExplanation,
        TaskLabel::DifferentialDiagnosis,
        TaskLabel::DiseaseClassification,
        TaskLabel::ModalityRecognition,
        TaskLabel::QuantitativeMeasurement,
        TaskLabel::SpatialLocalization,
    ];

    /// Row order used by the per-dataset tables, perceptual tasks first.
    pub const DISPLAY_ORDER: [TaskLabel; 7] = [
        TaskLabel::ModalityRecognition,
        TaskLabel::AnatomicalIdentification,
        TaskLabel::DiseaseClassification,
        TaskLabel::SpatialLocalization,
        TaskLabel::CausalExplanation,
        TaskLabel::DifferentialDiagnosis,
        TaskLabel::QuantitativeMeasurement,
    ];

    pub fn slug(self) -> &'static str {
        match self {
            TaskLabel::AnatomicalIdentification => "anatomical_identification",
            TaskLabel::CausalExplanation => "causal_explanation",
            TaskLabel::DifferentialDiagnosis => "differential_diagnosis",
            TaskLabel::DiseaseClassification => "disease_classification",
            TaskLabel::ModalityRecognition => "modality_recognition",
            TaskLabel::QuantitativeMeasurement => "quantitative_measurement",
            TaskLabel::SpatialLocalization => "spatial_localization",
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            TaskLabel::AnatomicalIdentification => "Anatomy",
            TaskLabel::CausalExplanation => "Causal",
            TaskLabel::DifferentialDiagnosis => "Diff. Dx.",
            TaskLabel::DiseaseClassification => "Disease Class.",
            TaskLabel::ModalityRecognition => "Modality",
            TaskLabel::QuantitativeMeasurement => "Quant.",
            TaskLabel::SpatialLocalization => "Spatial",
        }
    }
}

impl fmt::Display for TaskLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.slug())
    }
}

// Alternative names seen in annotator output, keyed by normalized form.
const SYNONYMS: [(&str, TaskLabel); 3] = [
    ("causal reasoning", TaskLabel::CausalExplanation),
    ("spatial reasoning", TaskLabel::SpatialLocalization),
    ("spatial cognition", TaskLabel::SpatialLocalization),
];

fn normalize(raw: &str) -> String {
    raw.trim()
        .trim_end_matches('.')
        .to_lowercase()
        .replace(['_', '-'], " ")
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

/// Case- and whitespace-insensitive match against the slugs and the fixed
/// synonym table. Underscores, hyphens and spaces are interchangeable and a
/// trailing period is ignored.
pub fn parse_task_label(raw: &str) -> Result<TaskLabel, CorpusError> {
    let norm = normalize(raw);
    TaskLabel::ALL
        .iter()
        .find(|t| t.slug().replace('_', " ") == norm)
        .copied()
        .or_else(|| SYNONYMS.iter().find(|(s, _)| *s == norm).map(|(_, t)| *t))
        .ok_or_else(|| CorpusError::UnknownLabel(raw.to_string()))
}

impl FromStr for TaskLabel {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_task_label(s)
    }
}

impl Serialize for TaskLabel {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.slug())
    }
}

impl<'de> Deserialize<'de> for TaskLabel {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        parse_task_label(&raw).map_err(serde::de::Error::custom)
    }
}

/// Majority label of three votes; a three-way split resolves to the
/// smallest slug.
pub fn majority_vote(votes: &[TaskLabel]) -> Result<TaskLabel, CorpusError> {
    let [a, b, c] = votes else {
        return Err(CorpusError::ArityError(votes.len()));
    };
    Ok(if a == b || a == c {
        *a
    } else if b == c {
        *b
    } else {
        *a.min(b).min(c)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelVote {
    pub example_id: String,
    pub annotator_id: String,
    pub raw_label: String,
    /// `None` when the raw label failed to parse.
    pub parsed: Option<TaskLabel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryExample {
    pub id: String,
    #[serde(rename = "image")]
    pub image_ref: PathBuf,
    pub question: String,
    pub reference_answer: String,
    pub task: Option<TaskLabel>,
    #[serde(rename = "dataset")]
    pub dataset_id: String,
    /// Hex SHA-256 of the image bytes, filled in by [`load_corpus`].
    #[serde(skip)]
    pub image_digest: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub examples: Vec<QueryExample>,
    /// Digest of the corpus file bytes.
    pub content_digest: String,
}

impl Corpus {
    pub fn is_labeled(&self) -> bool {
        self.examples.iter().all(|e| e.task.is_some())
    }
}

fn io_err(path: &Path, e: impl fmt::Display) -> CorpusError {
    CorpusError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Reads a JSONL corpus. Image paths are resolved relative to the corpus
/// file and hashed; blank lines are skipped.
pub fn load_corpus(path: &Path) -> Result<Corpus, CorpusError> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    let text = std::str::from_utf8(&bytes).map_err(|e| io_err(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut seen = HashSet::new();
    let mut examples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let schema = |message: String| CorpusError::SchemaError { line: line_no, message };
        let mut ex: QueryExample = serde_json::from_str(line).map_err(|e| schema(e.to_string()))?;
        if ex.question.trim().is_empty() {
            return Err(schema("field `question` is empty".into()));
        }
        if ex.reference_answer.trim().is_empty() {
            return Err(schema("field `reference_answer` is empty".into()));
        }
        if !seen.insert(ex.id.clone()) {
            return Err(CorpusError::DuplicateId(ex.id));
        }
        if ex.image_ref.is_relative() {
            ex.image_ref = base.join(&ex.image_ref);
        }
        let image = fs::read(&ex.image_ref)
            .map_err(|e| schema(format!("field `image` ({}): {e}", ex.image_ref.display())))?;
        ex.image_digest = sha256_hex(&image);
        examples.push(ex);
    }
    Ok(Corpus {
        examples,
        content_digest: sha256_hex(&bytes),
    })
}

/// Writes examples as JSONL with absolute image paths so the file can live
/// anywhere.
pub fn write_corpus(path: &Path, examples: &[QueryExample]) -> Result<(), CorpusError> {
    let mut out = String::new();
    for ex in examples {
        let mut ex = ex.clone();
        if let Ok(abs) = fs::canonicalize(&ex.image_ref) {
            ex.image_ref = abs;
        }
        out.push_str(&serde_json::to_string(&ex).map_err(|e| io_err(path, e))?);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slugs_round_trip_and_are_sorted() {
        for t in TaskLabel::ALL {
            assert_eq!(parse_task_label(t.slug()).unwrap(), t);
        }
        let slugs: Vec<_> = TaskLabel::ALL.iter().map(|t| t.slug()).collect();
        let mut sorted = slugs.clone();
        sorted.sort();
        assert_eq!(slugs, sorted);
    }

    #[test]
    fn parse_examples() {
        assert_eq!(
            parse_task_label("Modality Recognition").unwrap(),
            TaskLabel::ModalityRecognition
        );
        assert_eq!(
            parse_task_label("causal reasoning").unwrap(),
            TaskLabel::CausalExplanation
        );
        assert_eq!(
            parse_task_label("  Spatial   Reasoning ").unwrap(),
            TaskLabel::SpatialLocalization
        );
        assert_eq!(
            parse_task_label("spatial-cognition").unwrap(),
            TaskLabel::SpatialLocalization
        );
        assert_eq!(
            parse_task_label("image quality").unwrap_err(),
            CorpusError::UnknownLabel("image quality".into())
        );
    }

    #[test]
    fn vote_examples() {
        use TaskLabel::*;
        assert_eq!(
            majority_vote(&[AnatomicalIdentification, AnatomicalIdentification, SpatialLocalization])
                .unwrap(),
            AnatomicalIdentification
        );
        assert_eq!(
            majority_vote(&[ModalityRecognition; 3]).unwrap(),
            ModalityRecognition
        );
        assert_eq!(
            majority_vote(&[CausalExplanation, DiseaseClassification, SpatialLocalization]).unwrap(),
            CausalExplanation
        );
        assert_eq!(majority_vote(&[CausalExplanation]).unwrap_err(), CorpusError::ArityError(1));
    }
}
