//! Response caches keyed by a SHA-256 digest.
//!
//! [`DiskCache`] stores each payload in a file named by its key, next to a
//! `<key>.json` sidecar recording when and by whom it was written and the
//! payload digest. Both files are written to a temporary name and renamed
//! into place, so readers never see a torn write. A payload without its
//! sidecar is treated as absent.

use std::collections::HashMap;
use std::fs;
use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::AgentError;
use crate::corpus::sha256_hex;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheKey(pub String);

pub trait ResponseCache: Send + Sync {
    fn lookup(&self, key: &CacheKey) -> Result<Option<Vec<u8>>, AgentError>;
    fn store(&self, key: &CacheKey, payload: &[u8], backend_id: &str) -> Result<(), AgentError>;
}

#[derive(Debug, Default)]
pub struct MemoryCache {
    entries: Mutex<HashMap<String, Vec<u8>>>,
}

impl MemoryCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl ResponseCache for MemoryCache {
    fn lookup(&self, key: &CacheKey) -> Result<Option<Vec<u8>>, AgentError> {
        Ok(self.entries.lock().expect("cache lock").get(&key.0).cloned())
    }

    fn store(&self, key: &CacheKey, payload: &[u8], _backend_id: &str) -> Result<(), AgentError> {
        self.entries
            .lock()
            .expect("cache lock")
            .entry(key.0.clone())
            .or_insert_with(|| payload.to_vec());
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub timestamp: u64,
    pub backend_id: String,
    pub payload_sha256: String,
}

#[derive(Debug, Clone)]
pub struct DiskCache {
    dir: PathBuf,
}

fn io(e: impl std::fmt::Display) -> AgentError {
    AgentError::Io(e.to_string())
}

impl DiskCache {
    pub fn open(dir: &Path) -> Result<Self, AgentError> {
        fs::create_dir_all(dir).map_err(io)?;
        Ok(Self { dir: dir.to_path_buf() })
    }

    fn paths(&self, key: &CacheKey) -> Result<(PathBuf, PathBuf), AgentError> {
        if key.0.is_empty() || !key.0.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(AgentError::Io(format!("malformed cache key {:?}", key.0)));
        }
        Ok((self.dir.join(&key.0), self.dir.join(format!("{}.json", key.0))))
    }

    fn write_atomic(&self, path: &Path, bytes: &[u8]) -> Result<(), AgentError> {
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir).map_err(io)?;
        tmp.write_all(bytes).map_err(io)?;
        tmp.as_file().sync_all().map_err(io)?;
        tmp.persist(path).map_err(io)?;
        Ok(())
    }

    fn read_sidecar(&self, path: &Path) -> Result<Option<Sidecar>, AgentError> {
        match fs::read(path) {
            Ok(b) => Ok(serde_json::from_slice(&b).ok()),
            Err(e) if e.kind() == ErrorKind::NotFound => Ok(None),
            Err(e) => Err(io(e)),
        }
    }
}

impl ResponseCache for DiskCache {
    fn lookup(&self, key: &CacheKey) -> Result<Option<Vec<u8>>, AgentError> {
        let (payload_path, sidecar_path) = self.paths(key)?;
        let Some(sidecar) = self.read_sidecar(&sidecar_path)? else {
            return Ok(None);
        };
        let payload = match fs::read(&payload_path) {
            Ok(b) => b,
            Err(e) if e.kind() == ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(io(e)),
        };
        if sha256_hex(&payload) != sidecar.payload_sha256 {
            return Err(AgentError::CacheCorruption(key.0.clone()));
        }
        Ok(Some(payload))
    }

    fn store(&self, key: &CacheKey, payload: &[u8], backend_id: &str) -> Result<(), AgentError> {
        let (payload_path, sidecar_path) = self.paths(key)?;
        let digest = sha256_hex(payload);
        if let Some(existing) = self.read_sidecar(&sidecar_path)? {
            if existing.payload_sha256 == digest && payload_path.exists() {
                return Ok(());
            }
        }
        self.write_atomic(&payload_path, payload)?;
        let timestamp = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let sidecar = Sidecar {
            timestamp,
            backend_id: backend_id.to_string(),
            payload_sha256: digest,
        };
        self.write_atomic(&sidecar_path, &serde_json::to_vec(&sidecar).map_err(io)?)
    }
}
