//! Content-addressed response cache.
//!
//! On disk each entry lives at `{root}/{key[..2]}/{key}.json`. Entries are
//! written to a temporary file and renamed into place; an existing entry is
//! never overwritten.

use std::collections::{BTreeMap, HashMap};
use std::io::{self, Write as _};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{canonical_messages, image_digest, BackendRequest, Completion, FinishReason, Usage};

/// Bumped whenever the entry layout changes.
pub const CACHE_VERSION: u32 = 1;

/// Request metadata kept alongside the response for auditing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestDigest {
    pub backend_id: String,
    pub model_id: String,
    pub request_tag: String,
    pub max_tokens: u32,
    pub temperature: f64,
    pub messages_sha256: String,
    pub image_sha256: Option<String>,
    pub params: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredResponse {
    pub text: String,
    pub finish_reason: FinishReason,
    pub usage: Option<Usage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub version: u32,
    pub key: String,
    pub request: RequestDigest,
    pub response: StoredResponse,
}

impl CacheEntry {
    pub fn new(request: &BackendRequest, key: &str, completion: &Completion) -> Self {
        CacheEntry {
            version: CACHE_VERSION,
            key: key.to_string(),
            request: RequestDigest {
                backend_id: request.backend_id.clone(),
                model_id: request.model_id.clone(),
                request_tag: request.request_tag.clone(),
                max_tokens: request.max_tokens,
                temperature: request.temperature,
                messages_sha256: hex::encode(Sha256::digest(canonical_messages(&request.messages).as_bytes())),
                image_sha256: request.image_attachment.as_deref().map(image_digest),
                params: request.params.clone(),
            },
            response: StoredResponse {
                text: completion.text.clone(),
                finish_reason: completion.finish_reason,
                usage: completion.usage,
            },
        }
    }
}

enum Store {
    Memory(Mutex<HashMap<String, CacheEntry>>),
    Disk(PathBuf),
}

pub struct ResponseCache {
    store: Store,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        ResponseCache {
            store: Store::Memory(Mutex::new(HashMap::new())),
        }
    }

    pub fn on_disk(root: impl Into<PathBuf>) -> io::Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(&root)?;
        Ok(ResponseCache {
            store: Store::Disk(root),
        })
    }

    pub fn root(&self) -> Option<&Path> {
        match &self.store {
            Store::Disk(root) => Some(root),
            Store::Memory(_) => None,
        }
    }

    fn entry_path(root: &Path, key: &str) -> PathBuf {
        let shard = key.get(..2).unwrap_or("xx");
        root.join(shard).join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> io::Result<Option<CacheEntry>> {
        match &self.store {
            Store::Memory(map) => Ok(map.lock().unwrap_or_else(|e| e.into_inner()).get(key).cloned()),
            Store::Disk(root) => {
                let path = Self::entry_path(root, key);
                let text = match std::fs::read_to_string(&path) {
                    Ok(t) => t,
                    Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
                    Err(e) => return Err(e),
                };
                let entry: CacheEntry = serde_json::from_str(&text)
                    .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("{}: {e}", path.display())))?;
                if entry.version != CACHE_VERSION || entry.key != key {
                    tracing::warn!(path = %path.display(), "ignoring stale cache entry");
                    return Ok(None);
                }
                Ok(Some(entry))
            }
        }
    }

    /// Stores `entry` unless its key is already present. Returns whether it
    /// was written.
    pub fn put(&self, entry: &CacheEntry) -> io::Result<bool> {
        match &self.store {
            Store::Memory(map) => {
                let mut map = map.lock().unwrap_or_else(|e| e.into_inner());
                if map.contains_key(&entry.key) {
                    return Ok(false);
                }
                map.insert(entry.key.clone(), entry.clone());
                Ok(true)
            }
            Store::Disk(root) => {
                let path = Self::entry_path(root, &entry.key);
                if path.exists() {
                    return Ok(false);
                }
                let dir = path.parent().expect("entry path has a shard directory");
                std::fs::create_dir_all(dir)?;
                let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
                let json = serde_json::to_vec_pretty(entry).map_err(io::Error::other)?;
                tmp.write_all(&json)?;
                tmp.as_file().sync_all()?;
                match tmp.persist_noclobber(&path) {
                    Ok(_) => Ok(true),
                    Err(e) if e.error.kind() == io::ErrorKind::AlreadyExists => Ok(false),
                    Err(e) => Err(e.error),
                }
            }
        }
    }

    pub fn len(&self) -> io::Result<usize> {
        match &self.store {
            Store::Memory(map) => Ok(map.lock().unwrap_or_else(|e| e.into_inner()).len()),
            Store::Disk(root) => {
                let mut n = 0;
                for shard in std::fs::read_dir(root)? {
                    let shard = shard?;
                    if shard.file_type()?.is_dir() {
                        n += std::fs::read_dir(shard.path())?
                            .filter_map(Result::ok)
                            .filter(|e| e.path().extension().is_some_and(|x| x == "json"))
                            .count();
                    }
                }
                Ok(n)
            }
        }
    }

    pub fn is_empty(&self) -> io::Result<bool> {
        self.len().map(|n| n == 0)
    }
}
