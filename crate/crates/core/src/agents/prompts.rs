//! Prompt templates and slot rendering.
//!
//! Templates are stored as literal text with `{slot}` markers. Rendering
//! replaces each marker with its slot value and touches nothing else.

use std::collections::BTreeMap;

use super::AgentError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TemplateId {
    Generator,
    /// Verifier prompt used in single-turn and loop runs.
    Verifier,
    /// Verifier prompt with the line layout of the single-turn listing.
    VerifierSingleTurn,
    Feedback,
    Judge,
    Labeler,
}

impl TemplateId {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "generator" => TemplateId::Generator,
            "verifier" => TemplateId::Verifier,
            "verifier_single_turn" => TemplateId::VerifierSingleTurn,
            "feedback" => TemplateId::Feedback,
            "judge" => TemplateId::Judge,
            "labeler" => TemplateId::Labeler,
            _ => return None,
        })
    }

    pub fn text(self) -> &'static str {
        match self {
            TemplateId::Generator => GENERATOR,
            TemplateId::Verifier => VERIFIER,
            TemplateId::VerifierSingleTurn => VERIFIER_SINGLE_TURN,
            TemplateId::Feedback => FEEDBACK,
            TemplateId::Judge => JUDGE,
            TemplateId::Labeler => LABELER,
        }
    }

    /// Slot names in order of first appearance.
    pub fn slots(self) -> Vec<&'static str> {
        let mut out = Vec::new();
        for seg in parse(self.text()) {
            if let Segment::Slot(s) = seg {
                if !out.contains(&s) {
                    out.push(s);
                }
            }
        }
        out
    }

    /// Whether the prompt is sent together with the image.
    pub fn uses_image(self) -> bool {
        matches!(
            self,
            TemplateId::Generator
                | TemplateId::Verifier
                | TemplateId::VerifierSingleTurn
                | TemplateId::Feedback
        )
    }
}

const GENERATOR: &str = "You are a medical imaging expert. Look at the image carefully and answer the following question concisely.\n\nQuestion: {question}\n\nAnswer:";

const VERIFIER: &str = "You are a medical imaging verification expert. Determine whether the proposed answer to the medical imaging question is CORRECT, INCORRECT, or UNCERTAIN.\n\nQuestion: {question}\nProposed Answer: {answer}\n\nRespond in the following format:\nVerdict: [CORRECT or INCORRECT or UNCERTAIN]\nConfidence: [0.0 to 1.0]\nExplanation: [brief justification]";

const VERIFIER_SINGLE_TURN: &str = "You are a medical imaging verification expert. Determine whether the proposed answer to the medical imaging question is CORRECT, INCORRECT, or UNCERTAIN.\nQuestion: {question}\nProposed Answer: {answer}\n\nRespond in the following format:\nVerdict: [CORRECT or INCORRECT or UNCERTAIN]\n Confidence: [0.0 to 1.0]\n Explanation: [brief justification]\n";

// `{verdict}` is upper-cased during rendering.
const FEEDBACK: &str = "You are a medical imaging expert. You previously answered a medical imaging question, but a verifier assessed your answer as {verdict}.\n\nQuestion: {question}\n\nYour previous answer: {prev_answer}\nVerifier's explanation: {explanation}\n\nPlease look at the image again carefully, reconsider, and provide a corrected answer.\n\nAnswer:";

const JUDGE: &str = "You are evaluating medical visual question answering outputs. Given the question, the reference answer, and the model answer, decide whether the model answer should be counted as correct.\n\nRules:\nReturn CORRECT only if the model answer semantically matches the reference answer.\nBe strict for yes/no questions.\nAccept clear synonyms or equivalent medical phrasing.\nNo partial credit.\nReturn only CORRECT or INCORRECT.\n\nQuestion: {question}\nReference Answer: {reference_answer}\nModel Answer: {model_answer}\n";

const LABELER: &str = "Assign the question below to one category.\n\nCategories:\nmodality_recognition: which imaging technique produced the image.\nanatomical_identification: which organ or body structure is shown.\ndisease_classification: whether a pathology or finding is present, or which one.\nspatial_localization: where something is, including side and relative position.\ncausal_explanation: why a finding arises or what it implies clinically.\ndifferential_diagnosis: choosing between competing diagnoses.\nquantitative_measurement: counts, sizes, or other numbers.\n\nQuestion: {question}\n\nReply with the category name only.";

enum Segment<'a> {
    Text(&'a str),
    Slot(&'a str),
}

// A slot is `{` followed by an identifier and `}`; any other brace is text.
fn parse(t: &str) -> Vec<Segment<'_>> {
    let mut out = Vec::new();
    let mut rest = t;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        let ident_len = after
            .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
            .unwrap_or(after.len());
        if ident_len > 0 && after[ident_len..].starts_with('}') {
            out.push(Segment::Text(&rest[..open]));
            out.push(Segment::Slot(&after[..ident_len]));
            rest = &after[ident_len + 1..];
        } else {
            out.push(Segment::Text(&rest[..=open]));
            rest = after;
        }
    }
    out.push(Segment::Text(rest));
    out
}

pub fn render_prompt(template: TemplateId, slots: &BTreeMap<&str, &str>) -> Result<String, AgentError> {
    let mut out = String::new();
    for seg in parse(template.text()) {
        match seg {
            Segment::Text(t) => out.push_str(t),
            Segment::Slot(name) => {
                let v = slots
                    .get(name)
                    .ok_or_else(|| AgentError::MissingSlot(name.to_string()))?;
                if template == TemplateId::Feedback && name == "verdict" {
                    out.push_str(&v.to_uppercase());
                } else {
                    out.push_str(v);
                }
            }
        }
    }
    Ok(out)
}

/// Convenience wrapper taking `(slot, value)` pairs.
pub fn render(template: TemplateId, slots: &[(&str, &str)]) -> Result<String, AgentError> {
    render_prompt(template, &slots.iter().copied().collect())
}
