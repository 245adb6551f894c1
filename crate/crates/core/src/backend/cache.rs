//! Content-addressed response cache.
//!
//! The key of a request is the lowercase hex SHA-256 of its canonical JSON
//! encoding, `{"model":..,"prompt":..,"max_tokens":..,"temperature":..,"stop":..}`
//! with fields in exactly that order and `stop` written as `null` when
//! unset. Each entry lives at `<root>/<first two hex chars>/<key>.json` and
//! holds the request next to the response so entries can be inspected and
//! verified by hand. Entries are never rewritten once created.

use std::fmt;
use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{BackendError, CompletionBackend, CompletionRequest, CompletionResponse};

#[derive(Debug, Clone, thiserror::Error)]
pub enum CacheError {
    #[error("corrupt cache entry {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },
    #[error("cache I/O error at {path}: {message}")]
    Io { path: PathBuf, message: String },
}

fn io_err(path: &Path, e: std::io::Error) -> CacheError {
    CacheError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CacheKey(String);

#[derive(Serialize)]
struct KeyMaterial<'a> {
    model: &'a str,
    prompt: &'a str,
    max_tokens: u32,
    temperature: f64,
    stop: Option<&'a [String]>,
}

impl CacheKey {
    pub fn for_request(req: &CompletionRequest) -> Self {
        // -0.0 and 0.0 are the same decoding setting.
        let temperature = if req.temperature == 0.0 { 0.0 } else { req.temperature };
        let material = KeyMaterial {
            model: &req.model,
            prompt: &req.prompt,
            max_tokens: req.max_tokens,
            temperature,
            stop: req.stop.as_deref(),
        };
        let bytes = serde_json::to_vec(&material).expect("key material serializes");
        CacheKey(hex::encode(Sha256::digest(&bytes)))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn shard(&self) -> &str {
        &self.0[..2]
    }
}

impl fmt::Display for CacheKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct StoredResponse {
    text: String,
    prompt_tokens: Option<u64>,
    completion_tokens: Option<u64>,
    latency_ms: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    key: String,
    request: CompletionRequest,
    response: StoredResponse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct CacheStats {
    pub entries: u64,
    pub shards: u64,
    pub bytes: u64,
}

#[derive(Debug, Clone)]
pub struct ResponseCache {
    root: PathBuf,
}

impl ResponseCache {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, CacheError> {
        let root = root.into();
        std::fs::create_dir_all(&root).map_err(|e| io_err(&root, e))?;
        Ok(ResponseCache { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn entry_path(&self, key: &CacheKey) -> PathBuf {
        self.root.join(key.shard()).join(format!("{key}.json"))
    }

    fn load(&self, path: &Path, key: &CacheKey, req: &CompletionRequest) -> Result<CompletionResponse, CacheError> {
        let corrupt = |reason: String| CacheError::Corrupt {
            path: path.to_path_buf(),
            reason,
        };
        let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
        let entry: Entry = serde_json::from_slice(&bytes).map_err(|e| corrupt(e.to_string()))?;
        if entry.key != key.as_str() {
            return Err(corrupt(format!("stored key {} does not match file name", entry.key)));
        }
        if CacheKey::for_request(&entry.request) != *key {
            return Err(corrupt("stored request does not hash to its key".into()));
        }
        if entry.request != *req {
            return Err(corrupt("stored request differs from the requested one".into()));
        }
        Ok(CompletionResponse {
            text: entry.response.text,
            prompt_tokens: entry.response.prompt_tokens,
            completion_tokens: entry.response.completion_tokens,
            latency_ms: 0,
            from_cache: true,
        })
    }

    /// Looks up `req`. A present but unreadable entry is an error, never a
    /// miss.
    pub fn get(&self, req: &CompletionRequest) -> Result<Option<CompletionResponse>, CacheError> {
        let key = CacheKey::for_request(req);
        let path = self.entry_path(&key);
        match std::fs::metadata(&path) {
            Ok(_) => self.load(&path, &key, req).map(Some),
            Err(e) if e.kind() == ErrorKind::NotFound => Ok(None),
            Err(e) => Err(io_err(&path, e)),
        }
    }

    /// Stores `response` for `req` and returns the response callers should
    /// use. When another writer already created the entry, the stored
    /// response wins and is returned instead.
    pub fn put(&self, req: &CompletionRequest, response: &CompletionResponse) -> Result<CompletionResponse, CacheError> {
        let key = CacheKey::for_request(req);
        let path = self.entry_path(&key);
        let dir = path.parent().expect("entry has a shard directory");
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;

        let entry = Entry {
            key: key.to_string(),
            request: req.clone(),
            response: StoredResponse {
                text: response.text.clone(),
                prompt_tokens: response.prompt_tokens,
                completion_tokens: response.completion_tokens,
                latency_ms: response.latency_ms,
            },
        };
        let json = serde_json::to_vec_pretty(&entry).expect("cache entry serializes");
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| io_err(dir, e))?;
        tmp.write_all(&json).map_err(|e| io_err(tmp.path(), e))?;
        tmp.as_file().sync_all().map_err(|e| io_err(tmp.path(), e))?;
        match tmp.persist_noclobber(&path) {
            Ok(_) => {
                let mut stored = response.clone();
                stored.from_cache = false;
                Ok(stored)
            }
            Err(e) if e.error.kind() == ErrorKind::AlreadyExists => {
                let mut existing = self.load(&path, &key, req)?;
                existing.from_cache = false;
                Ok(existing)
            }
            Err(e) => Err(io_err(&path, e.error)),
        }
    }

    pub fn stats(&self) -> Result<CacheStats, CacheError> {
        let mut stats = CacheStats::default();
        let shards = std::fs::read_dir(&self.root).map_err(|e| io_err(&self.root, e))?;
        for shard in shards {
            let shard = shard.map_err(|e| io_err(&self.root, e))?;
            if !shard.file_type().map(|t| t.is_dir()).unwrap_or(false) {
                continue;
            }
            stats.shards += 1;
            let shard_path = shard.path();
            for entry in std::fs::read_dir(&shard_path).map_err(|e| io_err(&shard_path, e))? {
                let entry = entry.map_err(|e| io_err(&shard_path, e))?;
                let p = entry.path();
                if p.extension().and_then(|e| e.to_str()) == Some("json") {
                    stats.entries += 1;
                    stats.bytes += entry.metadata().map(|m| m.len()).unwrap_or(0);
                }
            }
        }
        Ok(stats)
    }
}

/// Serves requests from a [`ResponseCache`], delegating misses to `inner`.
pub struct CachedBackend<B> {
    cache: ResponseCache,
    inner: B,
}

impl<B: CompletionBackend> CachedBackend<B> {
    pub fn new(cache: ResponseCache, inner: B) -> Self {
        CachedBackend { cache, inner }
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

impl<B: CompletionBackend> CompletionBackend for CachedBackend<B> {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        req.validate()?;
        if let Some(hit) = self.cache.get(req)? {
            return Ok(hit);
        }
        let response = self.inner.complete(req)?;
        Ok(self.cache.put(req, &response)?)
    }
}
