//! Deterministic stand-in agents with configurable error rates.
//!
//! Every random choice is a hash of the run seed, the spec seed, the role,
//! the example id, the turn and the prompt, so responses never depend on
//! call order or thread scheduling.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{AgentError, AgentRole, CallContext, ImageInput};
use crate::corpus::TaskLabel;

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub seed: u64,
    /// Generator accuracy for tasks not listed in `task_accuracy`.
    #[serde(default = "one")]
    pub accuracy: f64,
    #[serde(default)]
    pub task_accuracy: BTreeMap<TaskLabel, f64>,
    /// When set the generator is wrong before this turn and right from it on.
    #[serde(default)]
    pub correct_from_turn: Option<u32>,
    /// P(verdict CORRECT | answer wrong).
    #[serde(default)]
    pub false_accept: f64,
    /// P(verdict not CORRECT | answer right).
    #[serde(default)]
    pub false_reject: f64,
    /// When set, P(accept | answer wrong) = logistic(logit(false_reject) + shift)
    /// and `false_accept` is ignored.
    #[serde(default)]
    pub coupling_shift: Option<f64>,
    /// Share of rejections reported as UNCERTAIN rather than INCORRECT.
    #[serde(default)]
    pub uncertain_share: f64,
    #[serde(default)]
    pub label_fixed: Option<TaskLabel>,
    /// Shift applied to the prompt-derived label index (mod 7).
    #[serde(default)]
    pub label_offset: u8,
    #[serde(default)]
    pub label_invalid_rate: f64,
}

impl SyntheticSpec {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            accuracy: 1.0,
            task_accuracy: BTreeMap::new(),
            correct_from_turn: None,
            false_accept: 0.0,
            false_reject: 0.0,
            coupling_shift: None,
            uncertain_share: 0.0,
            label_fixed: None,
            label_offset: 0,
            label_invalid_rate: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let probs = [
            ("accuracy", self.accuracy),
            ("false_accept", self.false_accept),
            ("false_reject", self.false_reject),
            ("uncertain_share", self.uncertain_share),
            ("label_invalid_rate", self.label_invalid_rate),
        ];
        let tasks = self.task_accuracy.values().map(|p| ("task_accuracy", *p));
        for (name, p) in probs.into_iter().chain(tasks) {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        if let Some(s) = self.coupling_shift {
            if !s.is_finite() {
                return Err("coupling_shift must be finite".into());
            }
        }
        Ok(())
    }

    pub fn accuracy_for(&self, task: Option<TaskLabel>) -> f64 {
        task.and_then(|t| self.task_accuracy.get(&t).copied())
            .unwrap_or(self.accuracy)
    }

    /// Probability that the verdict is wrong given the answer's correctness.
    pub fn verifier_error_rate(&self, answer_correct: bool) -> f64 {
        if answer_correct {
            return self.false_reject;
        }
        match self.coupling_shift {
            Some(shift) => {
                let logit = (self.false_reject / (1.0 - self.false_reject)).ln();
                1.0 / (1.0 + (-(logit + shift)).exp())
            }
            None => self.false_accept,
        }
    }
}

/// Lowercase, trim, drop a trailing period and collapse whitespace.
pub fn normalize_answer(s: &str) -> String {
    let t = s.trim().to_lowercase();
    let t = t.strip_suffix('.').unwrap_or(&t);
    t.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub struct SyntheticAgent {
    spec: SyntheticSpec,
    run_seed: u64,
}

impl SyntheticAgent {
    pub fn new(spec: SyntheticSpec, run_seed: u64) -> Self {
        Self { spec, run_seed }
    }

    fn hash(&self, role: AgentRole, purpose: &str, prompt: &str, image: Option<&ImageInput>, ctx: &CallContext) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.run_seed.to_le_bytes());
        h.update(self.spec.seed.to_le_bytes());
        for part in [
            role.name(),
            purpose,
            &ctx.example_id,
            &ctx.turn.to_string(),
            prompt,
            image.map(|i| i.digest.as_str()).unwrap_or(""),
        ] {
            h.update((part.len() as u64).to_le_bytes());
            h.update(part.as_bytes());
        }
        h.finalize().into()
    }

    /// Uniform draw in [0, 1) from the top 53 bits of the hash.
    fn uniform(&self, role: AgentRole, purpose: &str, prompt: &str, image: Option<&ImageInput>, ctx: &CallContext) -> f64 {
        let b = self.hash(role, purpose, prompt, image, ctx);
        let x = u64::from_le_bytes(b[..8].try_into().expect("8 bytes"));
        (x >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn respond(
        &self,
        role: AgentRole,
        prompt: &str,
        image: Option<&ImageInput>,
        ctx: &CallContext,
    ) -> Result<String, AgentError> {
        let s = &self.spec;
        Ok(match role {
            AgentRole::Generator => {
                let correct = match s.correct_from_turn {
                    Some(k) => ctx.turn >= k,
                    None => self.uniform(role, "correct", prompt, image, ctx) < s.accuracy_for(ctx.task),
                };
                if correct {
                    ctx.reference_answer.clone()
                } else {
                    let tag = hex::encode(&self.hash(role, "distractor", prompt, image, ctx)[..4]);
                    format!("finding {tag} (attempt {})", ctx.turn)
                }
            }
            AgentRole::Verifier => {
                let answer_correct = ctx.answer_correct.ok_or(AgentError::MissingContext {
                    role,
                    field: "answer_correct",
                })?;
                let wrong = self.uniform(role, "error", prompt, image, ctx) < s.verifier_error_rate(answer_correct);
                let accept = answer_correct != wrong;
                let conf = 0.5 + 0.5 * self.uniform(role, "confidence", prompt, image, ctx);
                let (label, why) = if accept {
                    ("CORRECT", "The answer is consistent with the image.")
                } else if self.uniform(role, "uncertain", prompt, image, ctx) < s.uncertain_share {
                    ("UNCERTAIN", "The image does not clearly support the answer.")
                } else {
                    ("INCORRECT", "The answer does not match the visible findings.")
                };
                format!("Verdict: {label}\nConfidence: {conf:.2}\nExplanation: {why}")
            }
            AgentRole::Judge => {
                let candidate = ctx.candidate.as_deref().ok_or(AgentError::MissingContext {
                    role,
                    field: "candidate",
                })?;
                if normalize_answer(candidate) == normalize_answer(&ctx.reference_answer) {
                    "CORRECT".to_string()
                } else {
                    "INCORRECT".to_string()
                }
            }
            AgentRole::Labeler => {
                if let Some(t) = s.label_fixed {
                    t.slug().to_string()
                } else if self.uniform(role, "invalid", prompt, image, ctx) < s.label_invalid_rate {
                    "image quality".to_string()
                } else {
                    // seed-free so labelers differing only in offset stay in lockstep
                    let h = Sha256::digest(prompt.as_bytes());
                    let base = (h[0] as usize) % TaskLabel::ALL.len();
                    let idx = (base + s.label_offset as usize) % TaskLabel::ALL.len();
                    TaskLabel::ALL[idx].slug().to_string()
                }
            }
        })
    }
}
