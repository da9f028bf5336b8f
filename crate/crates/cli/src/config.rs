//! Run configuration, read from JSON or TOML.
//!
//! Relative paths are resolved against the directory holding the config
//! file. API keys never appear here; a backend names the environment
//! variable that holds its key.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vaudit_core::agents::{AgentRole, BackendConfig, TemplateId};
use vaudit_core::corpus::sha256_hex;
use vaudit_core::metrics::{BiasAxis, Thresholds};
use vaudit_core::pipeline::RunMode;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Roles {
    pub generators: Vec<String>,
    /// Verifier backends for cross and loop runs; self runs ignore this.
    #[serde(default)]
    pub verifiers: Vec<String>,
    pub judge: String,
    #[serde(default)]
    pub labelers: Vec<String>,
}

fn default_mode() -> RunMode {
    RunMode::SelfCheck
}
fn default_max_turns() -> u32 {
    4
}
fn default_parallelism() -> usize {
    4
}
fn default_quarantine() -> f64 {
    0.05
}
fn default_template() -> String {
    "verifier".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default = "default_mode")]
    pub mode: RunMode,
    #[serde(default = "default_max_turns")]
    pub max_turns: u32,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default = "default_quarantine")]
    pub quarantine_fraction: f64,
    /// `verifier` or `verifier_single_turn`.
    #[serde(default = "default_template")]
    pub verifier_template: String,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            mode: default_mode(),
            max_turns: default_max_turns(),
            parallelism: default_parallelism(),
            quarantine_fraction: default_quarantine(),
            verifier_template: default_template(),
        }
    }
}

fn default_axis() -> BiasAxis {
    BiasAxis::Fpr
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsSection {
    #[serde(default)]
    pub thresholds: Thresholds,
    /// Bias axis used for the quadrant column of `cells.csv`.
    #[serde(default = "default_axis")]
    pub axis: BiasAxis,
}

impl Default for MetricsSection {
    fn default() -> Self {
        Self {
            thresholds: Thresholds::default(),
            axis: default_axis(),
        }
    }
}

/// How UNCERTAIN verdicts enter the mixed models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UncertainPolicy {
    /// Counted as not accepted (ŷ = 0).
    Reject,
    /// Left out of the model data.
    Drop,
}

fn default_max_evals() -> usize {
    200_000
}
fn default_rel_tol() -> f64 {
    1e-8
}
fn default_uncertain() -> UncertainPolicy {
    UncertainPolicy::Reject
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatsSection {
    #[serde(default = "default_max_evals")]
    pub max_evals: usize,
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
    #[serde(default = "default_uncertain")]
    pub uncertain: UncertainPolicy,
}

impl Default for StatsSection {
    fn default() -> Self {
        Self {
            max_evals: default_max_evals(),
            rel_tol: default_rel_tol(),
            uncertain: default_uncertain(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportSection {
    /// JSONL of paired generator/verifier grounding scores for the violin plot.
    #[serde(default)]
    pub grounding_scores: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub corpus: PathBuf,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    pub backends: Vec<BackendConfig>,
    pub roles: Roles,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub metrics: MetricsSection,
    #[serde(default)]
    pub stats: StatsSection,
    #[serde(default)]
    pub report: ReportSection,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl Config {
    /// Parses by extension: `.toml` as TOML, anything else as JSON.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: Config = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        } else {
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        };
        let base = path.parent().unwrap_or(Path::new("."));
        resolve(base, &mut cfg.corpus);
        for p in [&mut cfg.out_dir, &mut cfg.cache_dir, &mut cfg.report.grounding_scores]
            .into_iter()
            .flatten()
        {
            resolve(base, p);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        let ids: Vec<&str> = self.backends.iter().map(|b| b.id.as_str()).collect();
        for b in &self.backends {
            b.validate()?;
        }
        let r = &self.roles;
        let named = r
            .generators
            .iter()
            .chain(&r.verifiers)
            .chain(&r.labelers)
            .chain(std::iter::once(&r.judge));
        for id in named {
            if !ids.contains(&id.as_str()) {
                return bad(format!("role refers to unknown backend `{id}`"));
            }
        }
        if r.generators.is_empty() {
            return bad("roles.generators is empty".into());
        }
        if !r.labelers.is_empty() && r.labelers.len() != 3 {
            return bad(format!("roles.labelers needs exactly 3 backends, got {}", r.labelers.len()));
        }
        if TemplateId::parse(&self.run.verifier_template)
            .filter(|t| matches!(t, TemplateId::Verifier | TemplateId::VerifierSingleTurn))
            .is_none()
        {
            return bad(format!("unknown verifier template `{}`", self.run.verifier_template));
        }
        if !(0.0..=1.0).contains(&self.run.quarantine_fraction) {
            return bad("run.quarantine_fraction must lie in [0, 1]".into());
        }
        if self.run.parallelism == 0 {
            return bad("run.parallelism must be at least 1".into());
        }
        if self.run.mode == RunMode::Loop && self.run.max_turns < 1 {
            return bad("run.max_turns must be at least 1".into());
        }
        Ok(())
    }

    /// Roles each backend serves under the current role assignment.
    pub fn bindings(&self) -> BTreeMap<String, Vec<AgentRole>> {
        let mut m: BTreeMap<String, Vec<AgentRole>> = BTreeMap::new();
        let mut bind = |id: &String, role: AgentRole| {
            let v = m.entry(id.clone()).or_default();
            if !v.contains(&role) {
                v.push(role);
            }
        };
        for g in &self.roles.generators {
            bind(g, AgentRole::Generator);
            bind(g, AgentRole::Verifier);
        }
        for v in &self.roles.verifiers {
            bind(v, AgentRole::Verifier);
        }
        bind(&self.roles.judge, AgentRole::Judge);
        for l in &self.roles.labelers {
            bind(l, AgentRole::Labeler);
        }
        m
    }

    pub fn out_dir(&self) -> Result<&Path, CliError> {
        self.out_dir
            .as_deref()
            .ok_or_else(|| CliError::Config("no output directory: set `out_dir` or pass --out".into()))
    }
}

/// The part of a config that determines results. Output and cache
/// locations, endpoints, worker count and file paths are left out; the
/// corpus and grounding-score files enter by content digest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Snapshot {
    pub corpus_sha256: String,
    pub grounding_scores_sha256: Option<String>,
    pub seed: u64,
    pub backends: Vec<BackendConfig>,
    pub roles: Roles,
    pub mode: RunMode,
    pub max_turns: u32,
    pub quarantine_fraction: f64,
    pub verifier_template: String,
    pub metrics: MetricsSection,
    pub stats: StatsSection,
}

fn file_digest(path: &Path) -> Result<String, CliError> {
    fs::read(path)
        .map(|b| sha256_hex(&b))
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

impl Snapshot {
    pub fn of(cfg: &Config) -> Result<Self, CliError> {
        let backends = cfg
            .backends
            .iter()
            .map(|b| BackendConfig {
                endpoint: None,
                ..b.clone()
            })
            .collect();
        Ok(Self {
            corpus_sha256: file_digest(&cfg.corpus)?,
            grounding_scores_sha256: cfg.report.grounding_scores.as_deref().map(file_digest).transpose()?,
            seed: cfg.seed,
            backends,
            roles: cfg.roles.clone(),
            mode: cfg.run.mode,
            max_turns: cfg.run.max_turns,
            quarantine_fraction: cfg.run.quarantine_fraction,
            verifier_template: cfg.run.verifier_template.clone(),
            metrics: cfg.metrics.clone(),
            stats: cfg.stats.clone(),
        })
    }

    /// Pretty JSON with a trailing newline; the digest is taken over these bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut s = serde_json::to_string_pretty(self).expect("snapshot serializes");
        s.push('\n');
        s.into_bytes()
    }

    pub fn digest(&self) -> String {
        sha256_hex(&self.to_bytes())
    }
}
