//! Generator, verifier, judge and labeler backends.
//!
//! Every call goes through [`Agent::call`], which derives a cache key,
//! returns a cached response when one exists, and otherwise asks the
//! backend (HTTP or synthetic) and stores the result.

pub mod cache;
pub mod http;
pub mod prompts;
pub mod synthetic;
pub mod verdict;

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::TaskLabel;

pub use cache::{CacheKey, DiskCache, MemoryCache, ResponseCache};
pub use prompts::{render, render_prompt, TemplateId};
pub use synthetic::SyntheticSpec;
pub use verdict::{parse_judge, parse_verdict, Verdict, VerdictLabel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error("missing template slot `{0}`")]
    MissingSlot(String),
    #[error("judge output has neither CORRECT nor INCORRECT: {0:?}")]
    JudgeParse(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("rate limited after {0} attempts")]
    RateLimited(u32),
    #[error("backend `{0}` returned an empty response")]
    BackendRefusal(String),
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("cache entry {0} does not match its recorded digest")]
    CacheCorruption(String),
    #[error("backend `{backend}` is not bound to role {role}")]
    RoleNotBound { backend: String, role: AgentRole },
    #[error("backend config: {0}")]
    Config(String),
    #[error("synthetic {role} call needs `{field}` in its context")]
    MissingContext { role: AgentRole, field: &'static str },
    #[error("io: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentRole {
    Generator,
    Verifier,
    Judge,
    Labeler,
}

impl AgentRole {
    pub fn name(self) -> &'static str {
        match self {
            AgentRole::Generator => "generator",
            AgentRole::Verifier => "verifier",
            AgentRole::Judge => "judge",
            AgentRole::Labeler => "labeler",
        }
    }
}

impl fmt::Display for AgentRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    HttpChat,
    Synthetic,
}

fn default_timeout() -> f64 {
    60.0
}
fn default_retries() -> u32 {
    3
}
fn default_max_tokens() -> u32 {
    512
}
fn default_backoff_ms() -> u64 {
    500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub id: String,
    pub kind: BackendKind,
    /// Base URL; requests go to `{endpoint}/chat/completions`.
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub model: Option<String>,
    /// Name of the environment variable holding the API key.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default)]
    pub synthetic: Option<SyntheticSpec>,
}

impl BackendConfig {
    pub fn synthetic(id: &str, spec: SyntheticSpec) -> Self {
        Self {
            id: id.to_string(),
            kind: BackendKind::Synthetic,
            endpoint: None,
            model: None,
            api_key_env: None,
            timeout_secs: default_timeout(),
            max_retries: default_retries(),
            backoff_ms: default_backoff_ms(),
            temperature: 0.0,
            max_tokens: default_max_tokens(),
            synthetic: Some(spec),
        }
    }

    pub fn http(id: &str, endpoint: &str, model: &str) -> Self {
        Self {
            id: id.to_string(),
            kind: BackendKind::HttpChat,
            endpoint: Some(endpoint.to_string()),
            model: Some(model.to_string()),
            api_key_env: None,
            timeout_secs: default_timeout(),
            max_retries: default_retries(),
            backoff_ms: default_backoff_ms(),
            temperature: 0.0,
            max_tokens: default_max_tokens(),
            synthetic: None,
        }
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |m: String| Err(AgentError::Config(format!("backend `{}`: {m}", self.id)));
        if self.id.is_empty() {
            return Err(AgentError::Config("backend id is empty".into()));
        }
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return bad("timeout_secs must be positive".into());
        }
        match self.kind {
            BackendKind::HttpChat => {
                if self.endpoint.is_none() || self.model.is_none() {
                    return bad("http_chat needs `endpoint` and `model`".into());
                }
                if self.synthetic.is_some() {
                    return bad("`synthetic` is only valid for synthetic backends".into());
                }
            }
            BackendKind::Synthetic => match &self.synthetic {
                Some(s) => s.validate().or_else(bad)?,
                None => return bad("synthetic backend needs a `synthetic` table".into()),
            },
        }
        Ok(())
    }

    /// Identity of the responses this backend produces. Endpoint URLs are
    /// left out so a moved server keeps its cache.
    pub fn fingerprint(&self, run_seed: u64) -> String {
        match self.kind {
            BackendKind::HttpChat => format!(
                "http|{}|{}|t={}|max={}",
                self.id,
                self.model.as_deref().unwrap_or(""),
                self.temperature,
                self.max_tokens
            ),
            BackendKind::Synthetic => {
                let spec = serde_json::to_string(&self.synthetic).unwrap_or_default();
                format!("synthetic|{}|{}|seed={run_seed}", self.id, spec)
            }
        }
    }
}

/// An image as sent to a backend: where to read it and its content digest.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageInput {
    pub path: PathBuf,
    pub digest: String,
}

/// Ground truth the pipeline knows about a call. HTTP backends ignore it;
/// synthetic backends use it to decide what to say.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CallContext {
    pub example_id: String,
    pub task: Option<TaskLabel>,
    pub reference_answer: String,
    pub turn: u32,
    /// Oracle correctness of the answer under verification.
    pub answer_correct: Option<bool>,
    /// Answer under judgment.
    pub candidate: Option<String>,
}

#[derive(Debug, Default)]
pub struct CallStats {
    pub hits: AtomicU64,
    pub misses: AtomicU64,
}

enum Client {
    Synthetic(synthetic::SyntheticAgent),
    Http(http::HttpClient),
}

pub struct Agent {
    config: BackendConfig,
    roles: Vec<AgentRole>,
    fingerprint: String,
    client: Client,
    cache: Arc<dyn ResponseCache>,
    pub stats: CallStats,
}

impl Agent {
    pub fn new(
        config: BackendConfig,
        roles: Vec<AgentRole>,
        run_seed: u64,
        cache: Arc<dyn ResponseCache>,
    ) -> Result<Self, AgentError> {
        config.validate()?;
        let client = match config.kind {
            BackendKind::Synthetic => Client::Synthetic(synthetic::SyntheticAgent::new(
                config.synthetic.clone().expect("validated"),
                run_seed,
            )),
            BackendKind::HttpChat => Client::Http(http::HttpClient::new(&config)?),
        };
        Ok(Self {
            fingerprint: config.fingerprint(run_seed),
            config,
            roles,
            client,
            cache,
            stats: CallStats::default(),
        })
    }

    pub fn id(&self) -> &str {
        &self.config.id
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    pub fn cache_key(&self, role: AgentRole, prompt: &str, image: Option<&ImageInput>, ctx: &CallContext) -> CacheKey {
        let mut h = Sha256::new();
        let mut part = |b: &[u8]| {
            h.update((b.len() as u64).to_le_bytes());
            h.update(b);
        };
        part(self.fingerprint.as_bytes());
        part(role.name().as_bytes());
        part(prompt.as_bytes());
        part(image.map(|i| i.digest.as_str()).unwrap_or("").as_bytes());
        // synthetic output also depends on the context, so it joins the key
        if let Client::Synthetic(_) = self.client {
            part(serde_json::to_string(ctx).unwrap_or_default().as_bytes());
        }
        CacheKey(hex::encode(h.finalize()))
    }

    pub fn call(
        &self,
        role: AgentRole,
        prompt: &str,
        image: Option<&ImageInput>,
        ctx: &CallContext,
    ) -> Result<String, AgentError> {
        if !self.roles.contains(&role) {
            return Err(AgentError::RoleNotBound {
                backend: self.config.id.clone(),
                role,
            });
        }
        let key = self.cache_key(role, prompt, image, ctx);
        if let Some(bytes) = self.cache.lookup(&key)? {
            self.stats.hits.fetch_add(1, Ordering::Relaxed);
            return String::from_utf8(bytes).map_err(|_| AgentError::CacheCorruption(key.0.clone()));
        }
        self.stats.misses.fetch_add(1, Ordering::Relaxed);
        let text = match &self.client {
            Client::Synthetic(s) => s.respond(role, prompt, image, ctx)?,
            Client::Http(c) => c.complete(prompt, image)?,
        };
        if text.trim().is_empty() {
            return Err(AgentError::BackendRefusal(self.config.id.clone()));
        }
        self.cache.store(&key, text.as_bytes(), &self.config.id)?;
        Ok(text)
    }
}

/// All configured backends, each bound to the roles it serves.
pub struct AgentPool {
    agents: BTreeMap<String, Agent>,
}

impl AgentPool {
    pub fn new(
        backends: &[BackendConfig],
        bindings: &BTreeMap<String, Vec<AgentRole>>,
        run_seed: u64,
        cache: Arc<dyn ResponseCache>,
    ) -> Result<Self, AgentError> {
        let mut agents = BTreeMap::new();
        for b in backends {
            let roles = bindings.get(&b.id).cloned().unwrap_or_default();
            if agents.contains_key(&b.id) {
                return Err(AgentError::Config(format!("duplicate backend id `{}`", b.id)));
            }
            agents.insert(b.id.clone(), Agent::new(b.clone(), roles, run_seed, cache.clone())?);
        }
        for id in bindings.keys() {
            if !agents.contains_key(id) {
                return Err(AgentError::Config(format!("role bound to unknown backend `{id}`")));
            }
        }
        Ok(Self { agents })
    }

    pub fn get(&self, id: &str) -> Result<&Agent, AgentError> {
        self.agents
            .get(id)
            .ok_or_else(|| AgentError::Config(format!("unknown backend `{id}`")))
    }

    pub fn cache_hits(&self) -> (u64, u64) {
        self.agents.values().fold((0, 0), |(h, m), a| {
            (
                h + a.stats.hits.load(Ordering::Relaxed),
                m + a.stats.misses.load(Ordering::Relaxed),
            )
        })
    }
}
