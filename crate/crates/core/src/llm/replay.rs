use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::LlmError;

/// One recorded request/response pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exchange {
    pub hash: String,
    pub name: String,
    pub system: String,
    pub prompt: String,
    pub response: String,
    /// Seconds since the Unix epoch at recording time.
    pub timestamp: u64,
}

/// Stable digest of a resolved request: SHA-256 over the prompt name, system
/// text and user text, NUL-separated, as lowercase hex.
pub fn request_hash(name: &str, system: &str, prompt: &str) -> String {
    let mut h = Sha256::new();
    h.update(name.as_bytes());
    h.update([0]);
    h.update(system.as_bytes());
    h.update([0]);
    h.update(prompt.as_bytes());
    hex::encode(h.finalize())
}

/// Directory of `<hash>.json` exchange records. Records are never overwritten.
#[derive(Debug)]
pub struct ReplayStore {
    dir: PathBuf,
    write_lock: Mutex<()>,
}

impl ReplayStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, LlmError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|source| LlmError::Store {
            path: dir.display().to_string(),
            source,
        })?;
        Ok(Self {
            dir,
            write_lock: Mutex::new(()),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path_for(&self, hash: &str) -> PathBuf {
        self.dir.join(format!("{hash}.json"))
    }

    pub fn get(&self, hash: &str) -> Result<Option<Exchange>, LlmError> {
        let path = self.path_for(hash);
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(source) => {
                return Err(LlmError::Store {
                    path: path.display().to_string(),
                    source,
                })
            }
        };
        let ex: Exchange = serde_json::from_str(&text).map_err(|e| LlmError::CorruptRecord {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        if ex.hash != hash {
            return Err(LlmError::CorruptRecord {
                path: path.display().to_string(),
                message: format!("record hash {} does not match file name", ex.hash),
            });
        }
        Ok(Some(ex))
    }

    /// Appends a record. If one already exists for the hash it is kept and
    /// returned instead.
    pub fn put(&self, exchange: Exchange) -> Result<Exchange, LlmError> {
        let _guard = self.write_lock.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(existing) = self.get(&exchange.hash)? {
            return Ok(existing);
        }
        let path = self.path_for(&exchange.hash);
        let tmp = self.dir.join(format!(".{}.tmp", exchange.hash));
        let io = |source| LlmError::Store {
            path: path.display().to_string(),
            source,
        };
        let body = serde_json::to_string_pretty(&exchange).expect("exchange serializes");
        std::fs::write(&tmp, body).map_err(io)?;
        std::fs::rename(&tmp, &path).map_err(io)?;
        Ok(exchange)
    }

    pub fn len(&self) -> usize {
        std::fs::read_dir(&self.dir)
            .map(|rd| {
                rd.filter_map(Result::ok)
                    .filter(|e| e.path().extension().is_some_and(|x| x == "json"))
                    .count()
            })
            .unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
