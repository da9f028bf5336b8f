//! Parsing of verifier and judge responses.

use serde::{Deserialize, Serialize};

use super::AgentError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum VerdictLabel {
    Correct,
    Incorrect,
    Uncertain,
}

impl VerdictLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            VerdictLabel::Correct => "CORRECT",
            VerdictLabel::Incorrect => "INCORRECT",
            VerdictLabel::Uncertain => "UNCERTAIN",
        }
    }

    fn from_word(w: &str) -> Option<Self> {
        match w.to_ascii_uppercase().as_str() {
            "CORRECT" => Some(VerdictLabel::Correct),
            "INCORRECT" => Some(VerdictLabel::Incorrect),
            "UNCERTAIN" => Some(VerdictLabel::Uncertain),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub label: VerdictLabel,
    pub confidence: Option<f64>,
    pub explanation: String,
    /// False when any field had to be recovered from malformed output.
    pub parse_clean: bool,
}

// Value after a case-insensitive `key:` prefix, leading whitespace allowed.
fn field<'a>(line: &'a str, key: &str) -> Option<&'a str> {
    let t = line.trim_start();
    let head = t.get(..key.len())?;
    if !head.eq_ignore_ascii_case(key) {
        return None;
    }
    t[key.len()..].trim_start().strip_prefix(':').map(str::trim)
}

fn strip_brackets(s: &str) -> &str {
    let s = s.trim();
    s.strip_prefix('[')
        .and_then(|r| r.strip_suffix(']'))
        .unwrap_or(s)
        .trim()
}

/// Total parser for the `Verdict:` / `Confidence:` / `Explanation:` format.
/// The first line carrying each field wins.
pub fn parse_verdict(raw: &str) -> Verdict {
    let (mut verdict, mut confidence, mut explanation) = (None, None, None);
    for line in raw.lines() {
        if verdict.is_none() {
            if let Some(v) = field(line, "verdict") {
                verdict = Some(strip_brackets(v).to_string());
                continue;
            }
        }
        if confidence.is_none() {
            if let Some(v) = field(line, "confidence") {
                confidence = Some(strip_brackets(v).to_string());
                continue;
            }
        }
        if explanation.is_none() {
            if let Some(v) = field(line, "explanation") {
                explanation = Some(strip_brackets(v).to_string());
            }
        }
    }

    let mut clean = true;
    let recognized = verdict
        .as_deref()
        .and_then(|v| v.split(|c: char| !c.is_ascii_alphabetic()).find(|w| !w.is_empty()))
        .and_then(VerdictLabel::from_word);
    let label = recognized.unwrap_or_else(|| {
        clean = false;
        VerdictLabel::Uncertain
    });
    let confidence = confidence.and_then(|c| match c.parse::<f64>() {
        Ok(x) if (0.0..=1.0).contains(&x) => Some(x),
        Ok(x) if x.is_finite() => {
            clean = false;
            Some(x.clamp(0.0, 1.0))
        }
        _ => {
            clean = false;
            None
        }
    });
    let explanation = match explanation {
        Some(e) => e,
        None if recognized.is_none() => raw.trim().to_string(),
        None => String::new(),
    };
    Verdict {
        label,
        confidence,
        explanation,
        parse_clean: clean,
    }
}

/// 1 iff the first CORRECT/INCORRECT token is CORRECT.
pub fn parse_judge(raw: &str) -> Result<u8, AgentError> {
    raw.split(|c: char| !c.is_ascii_alphabetic())
        .find_map(|w| match w.to_ascii_uppercase().as_str() {
            "CORRECT" => Some(1),
            "INCORRECT" => Some(0),
            _ => None,
        })
        .ok_or_else(|| AgentError::JudgeParse(raw.to_string()))
}
