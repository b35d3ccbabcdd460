//! One file per response under a two-level hex-prefix tree. Writes go to a
//! temp file followed by an atomic rename, so concurrent writers of the same
//! key are safe (identical content, last writer wins).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{CacheKey, ProviderError};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub entries: u64,
    pub bytes: u64,
    pub hits: u64,
    pub misses: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheEntry {
    model_id: String,
    response: String,
}

/// Content-addressed response store rooted at a directory.
#[derive(Debug, Clone)]
pub struct ResponseCache {
    root: PathBuf,
}

impl ResponseCache {
    pub fn new(root: impl Into<PathBuf>) -> ResponseCache {
        ResponseCache { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn entry_path(&self, key: &CacheKey) -> PathBuf {
        let digest = key.digest();
        self.root.join(&digest[0..2]).join(&digest[2..4]).join(format!("{digest}.json"))
    }

    fn io_err(path: &Path, e: impl std::fmt::Display) -> ProviderError {
        ProviderError::Cache {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }

    pub fn get(&self, key: &CacheKey) -> Result<Option<String>, ProviderError> {
        let path = self.entry_path(key);
        match fs::read_to_string(&path) {
            Ok(text) => {
                let entry: CacheEntry =
                    serde_json::from_str(&text).map_err(|e| Self::io_err(&path, e))?;
                Ok(Some(entry.response))
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(Self::io_err(&path, e)),
        }
    }

    pub fn put(&self, key: &CacheKey, model_id: &str, response: &str) -> Result<(), ProviderError> {
        let path = self.entry_path(key);
        let parent = path.parent().expect("entry path has a parent");
        fs::create_dir_all(parent).map_err(|e| Self::io_err(parent, e))?;
        let entry = CacheEntry {
            model_id: model_id.to_string(),
            response: response.to_string(),
        };
        let body = serde_json::to_string(&entry).map_err(|e| Self::io_err(&path, e))?;
        let tmp = tempfile::Builder::new()
            .prefix(".cache-")
            .tempfile_in(parent)
            .map_err(|e| Self::io_err(parent, e))?;
        fs::write(tmp.path(), body).map_err(|e| Self::io_err(tmp.path(), e))?;
        tmp.persist(&path).map_err(|e| Self::io_err(&path, e))?;
        Ok(())
    }

    fn walk(&self) -> Result<Vec<PathBuf>, ProviderError> {
        let mut files = Vec::new();
        if !self.root.exists() {
            return Ok(files);
        }
        let mut stack = vec![self.root.clone()];
        while let Some(dir) = stack.pop() {
            for entry in fs::read_dir(&dir).map_err(|e| Self::io_err(&dir, e))? {
                let entry = entry.map_err(|e| Self::io_err(&dir, e))?;
                let path = entry.path();
                if path.is_dir() {
                    stack.push(path);
                } else if path.extension().is_some_and(|e| e == "json") {
                    files.push(path);
                }
            }
        }
        Ok(files)
    }

    /// On-disk entry count and byte total. Hit/miss counters belong to the
    /// provider handle, not the store.
    pub fn stats(&self) -> Result<CacheStats, ProviderError> {
        let mut stats = CacheStats::default();
        for path in self.walk()? {
            let meta = fs::metadata(&path).map_err(|e| Self::io_err(&path, e))?;
            stats.entries += 1;
            stats.bytes += meta.len();
        }
        Ok(stats)
    }

    /// Remove entries, optionally only those belonging to one model id.
    /// Returns the number of entries removed.
    pub fn clear(&self, model_scope: Option<&str>) -> Result<u64, ProviderError> {
        let mut removed = 0;
        for path in self.walk()? {
            let matches = match model_scope {
                None => true,
                Some(model) => {
                    let text = fs::read_to_string(&path).map_err(|e| Self::io_err(&path, e))?;
                    serde_json::from_str::<CacheEntry>(&text)
                        .map(|e| e.model_id == model)
                        .unwrap_or(false)
                }
            };
            if matches {
                fs::remove_file(&path).map_err(|e| Self::io_err(&path, e))?;
                removed += 1;
            }
        }
        Ok(removed)
    }
}
