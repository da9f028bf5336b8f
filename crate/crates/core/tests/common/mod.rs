#![allow(dead_code)]

pub mod stub;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use vaudit_core::agents::{AgentPool, AgentRole, BackendConfig, MemoryCache, ResponseCache, SyntheticSpec};
use vaudit_core::corpus::{sha256_hex, QueryExample, TaskLabel};

/// `per_task` examples for each listed task, all in one dataset.
pub fn corpus(tasks: &[TaskLabel], per_task: usize) -> Vec<QueryExample> {
    let mut out = Vec::new();
    for t in tasks {
        for i in 0..per_task {
            let id = format!("{}-{i:05}", t.slug());
            out.push(QueryExample {
                image_digest: sha256_hex(id.as_bytes()),
                id: id.clone(),
                image_ref: PathBuf::from(format!("/nonexistent/{id}.png")),
                question: format!("What is shown in study {id}?"),
                reference_answer: format!("answer {i}"),
                task: Some(*t),
                dataset_id: "synthetic".into(),
            });
        }
    }
    out
}

pub fn judge() -> BackendConfig {
    BackendConfig::synthetic("judge", SyntheticSpec::new(0))
}

/// A pool where every synthetic backend may act as generator and verifier,
/// plus an exact-match judge.
pub fn pool(backends: Vec<BackendConfig>, seed: u64) -> AgentPool {
    pool_with_cache(backends, seed, Arc::new(MemoryCache::new()))
}

pub fn pool_with_cache(mut backends: Vec<BackendConfig>, seed: u64, cache: Arc<dyn ResponseCache>) -> AgentPool {
    let mut bindings = BTreeMap::new();
    for b in &backends {
        bindings.insert(b.id.clone(), vec![AgentRole::Generator, AgentRole::Verifier, AgentRole::Labeler]);
    }
    backends.push(judge());
    bindings.insert("judge".into(), vec![AgentRole::Judge]);
    AgentPool::new(&backends, &bindings, seed, cache).unwrap()
}

pub fn agent(id: &str, seed: u64, f: impl FnOnce(&mut SyntheticSpec)) -> BackendConfig {
    let mut s = SyntheticSpec::new(seed);
    f(&mut s);
    BackendConfig::synthetic(id, s)
}
