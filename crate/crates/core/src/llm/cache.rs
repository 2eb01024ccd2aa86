use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ChatRequest;

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("cache I/O on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {reason}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        reason: String,
    },
}

/// One line of a cache file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CacheRecord {
    pub digest: String,
    pub request: ChatRequest,
    pub response: String,
}

impl CacheRecord {
    pub fn new(request: &ChatRequest, response: &str) -> Self {
        CacheRecord {
            digest: request.digest(),
            request: request.clone(),
            response: response.to_string(),
        }
    }

    /// Decodes a cache line and checks that its digest matches its request.
    pub fn parse_line(line: &str) -> Result<Self, String> {
        let record: CacheRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
        let expected = record.request.digest();
        if record.digest != expected {
            return Err(format!("digest {} does not match request ({expected})", record.digest));
        }
        Ok(record)
    }
}

struct Inner {
    entries: HashMap<String, String>,
    writer: Option<File>,
}

/// Append-only request/response store. Reads are lock-protected lookups;
/// writes are serialized and never duplicate an existing digest.
pub struct ReplayCache {
    path: PathBuf,
    inner: Mutex<Inner>,
}

impl ReplayCache {
    /// Loads `path` if it exists. The file is only created on the first insert.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, CacheError> {
        let path = path.as_ref().to_path_buf();
        let mut entries = HashMap::new();
        match File::open(&path) {
            Ok(file) => {
                for (idx, line) in BufReader::new(file).lines().enumerate() {
                    let line = line.map_err(|source| CacheError::Io {
                        path: path.clone(),
                        source,
                    })?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    let record = CacheRecord::parse_line(&line).map_err(|reason| CacheError::Corrupt {
                        path: path.clone(),
                        line: idx + 1,
                        reason,
                    })?;
                    entries.entry(record.digest).or_insert(record.response);
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(source) => return Err(CacheError::Io { path, source }),
        }
        Ok(ReplayCache {
            path,
            inner: Mutex::new(Inner {
                entries,
                writer: None,
            }),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, digest: &str) -> Option<String> {
        self.inner.lock().unwrap().entries.get(digest).cloned()
    }

    /// Appends the pair unless its digest is already stored. Returns whether
    /// a line was written.
    pub fn insert(&self, request: &ChatRequest, response: &str) -> Result<bool, CacheError> {
        let record = CacheRecord::new(request, response);
        let mut inner = self.inner.lock().unwrap();
        if inner.entries.contains_key(&record.digest) {
            return Ok(false);
        }
        let io_err = |source| CacheError::Io {
            path: self.path.clone(),
            source,
        };
        if inner.writer.is_none() {
            if let Some(parent) = self.path.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent).map_err(io_err)?;
            }
            let file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&self.path)
                .map_err(io_err)?;
            inner.writer = Some(file);
        }
        let mut line = serde_json::to_string(&record).expect("cache record serializes");
        line.push('\n');
        let writer = inner.writer.as_mut().expect("opened above");
        writer.write_all(line.as_bytes()).map_err(io_err)?;
        writer.flush().map_err(io_err)?;
        inner.entries.insert(record.digest, record.response);
        Ok(true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{Message, Role, SamplingParams};

    fn req(text: &str) -> ChatRequest {
        ChatRequest {
            role: Role::Generator,
            model: "gen".into(),
            messages: vec![Message::user(text)],
            tools: None,
            params: SamplingParams::default(),
        }
    }

    #[test]
    fn missing_file_is_empty_and_not_created() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("none.jsonl");
        let cache = ReplayCache::open(&path).unwrap();
        assert!(cache.is_empty());
        assert!(!path.exists());
    }

    #[test]
    fn duplicate_inserts_write_once() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/c.jsonl");
        let cache = ReplayCache::open(&path).unwrap();
        assert!(cache.insert(&req("a"), "A").unwrap());
        assert!(!cache.insert(&req("a"), "A again").unwrap());
        assert!(cache.insert(&req("b"), "B").unwrap());
        assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 2);
        let reopened = ReplayCache::open(&path).unwrap();
        assert_eq!(reopened.get(&req("a").digest()).as_deref(), Some("A"));
    }

    #[test]
    fn tampered_line_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let mut record = serde_json::to_string(&CacheRecord::new(&req("a"), "A")).unwrap();
        record = record.replace("\"a\"", "\"z\"");
        std::fs::write(&path, format!("{record}\n")).unwrap();
        match ReplayCache::open(&path) {
            Err(CacheError::Corrupt { line: 1, .. }) => {}
            Err(e) => panic!("unexpected error {e}"),
            Ok(_) => panic!("tampered cache accepted"),
        }
    }
}
