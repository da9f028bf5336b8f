//! Blocking client for OpenAI-compatible chat-completion endpoints.

use std::fs;
use std::path::Path;
use std::thread;
use std::time::Duration;

use base64::Engine;
use log::warn;
use serde_json::{json, Value};

use super::{AgentError, BackendConfig, ImageInput};

pub struct HttpClient {
    agent: ureq::Agent,
    backend_id: String,
    url: String,
    model: String,
    api_key: Option<String>,
    max_retries: u32,
    backoff: Duration,
    temperature: f64,
    max_tokens: u32,
}

fn mime_for(path: &Path) -> &'static str {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .as_deref()
    {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("gif") => "image/gif",
        Some("webp") => "image/webp",
        _ => "application/octet-stream",
    }
}

enum Failure {
    Retry(AgentError),
    Fatal(AgentError),
}

impl HttpClient {
    /// Reads the API key from the environment variable named in the config.
    pub fn new(config: &BackendConfig) -> Result<Self, AgentError> {
        let endpoint = config
            .endpoint
            .as_deref()
            .ok_or_else(|| AgentError::Config(format!("backend `{}` has no endpoint", config.id)))?;
        let api_key = match &config.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                AgentError::Config(format!(
                    "backend `{}`: environment variable `{var}` is not set",
                    config.id
                ))
            })?),
            None => None,
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            agent,
            backend_id: config.id.clone(),
            url: format!("{}/chat/completions", endpoint.trim_end_matches('/')),
            model: config.model.clone().unwrap_or_default(),
            api_key,
            max_retries: config.max_retries,
            backoff: Duration::from_millis(config.backoff_ms),
            temperature: config.temperature,
            max_tokens: config.max_tokens,
        })
    }

    pub fn request_body(&self, prompt: &str, image: Option<&ImageInput>) -> Result<Value, AgentError> {
        let content = match image {
            None => json!(prompt),
            Some(img) => {
                let bytes = fs::read(&img.path)
                    .map_err(|e| AgentError::Io(format!("{}: {e}", img.path.display())))?;
                let data = base64::engine::general_purpose::STANDARD.encode(bytes);
                json!([
                    {"type": "text", "text": prompt},
                    {"type": "image_url", "image_url": {"url": format!("data:{};base64,{data}", mime_for(&img.path))}}
                ])
            }
        };
        Ok(json!({
            "model": self.model,
            "messages": [{"role": "user", "content": content}],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        }))
    }

    fn attempt(&self, body: &str) -> Result<String, Failure> {
        let mut req = self.agent.post(&self.url).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req
            .send(body)
            .map_err(|e| Failure::Retry(AgentError::Transport(e.to_string())))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Failure::Retry(AgentError::Transport(e.to_string())))?;
        match status {
            200..=299 => {}
            429 => return Err(Failure::Retry(AgentError::RateLimited(0))),
            500..=599 => return Err(Failure::Retry(AgentError::Http { status, body: text })),
            _ => return Err(Failure::Fatal(AgentError::Http { status, body: text })),
        }
        let v: Value = serde_json::from_str(&text)
            .map_err(|e| Failure::Fatal(AgentError::Transport(format!("malformed response JSON: {e}"))))?;
        let content = &v["choices"][0]["message"]["content"];
        let out = match content {
            Value::String(s) => s.clone(),
            // some servers return a list of typed parts
            Value::Array(parts) => parts
                .iter()
                .filter_map(|p| p["text"].as_str())
                .collect::<Vec<_>>()
                .join(""),
            _ => String::new(),
        };
        if out.trim().is_empty() {
            return Err(Failure::Fatal(AgentError::BackendRefusal(self.backend_id.clone())));
        }
        Ok(out)
    }

    /// One chat completion, retried with exponential backoff on transport
    /// errors, 429 and 5xx responses.
    pub fn complete(&self, prompt: &str, image: Option<&ImageInput>) -> Result<String, AgentError> {
        let body = self.request_body(prompt, image)?.to_string();
        let attempts = self.max_retries + 1;
        let mut last = AgentError::Transport("no attempt made".into());
        for i in 0..attempts {
            if i > 0 {
                thread::sleep(self.backoff * 2u32.saturating_pow(i - 1));
            }
            match self.attempt(&body) {
                Ok(s) => return Ok(s),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retry(e)) => {
                    warn!("{}: attempt {} of {attempts} failed: {e}", self.backend_id, i + 1);
                    last = e;
                }
            }
        }
        Err(match last {
            AgentError::RateLimited(_) => AgentError::RateLimited(attempts),
            e => e,
        })
    }
}
