//! Deterministic scripted backend for tests and replayable runs.
//!
//! A script maps prompt digests (SHA-256 over the prompt bytes) to response
//! text. Entries in the script file may carry the plaintext prompt instead of
//! a digest, for hand-maintained fixtures; the digest is computed on load.
//! In strict mode an unknown prompt is an error that carries the full prompt
//! so the missing fixture can be authored; otherwise responses are drawn from
//! an ordered fallback queue.

use std::collections::{HashMap, VecDeque};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Backend, CompletionRequest, ProviderError};

/// SHA-256 of the prompt bytes, hex-encoded. The script's key space.
pub fn prompt_digest(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub digest: Option<String>,
    /// Plaintext prompt echo for human-maintained fixtures.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    pub response: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ScriptFile {
    #[serde(default)]
    pub strict: bool,
    #[serde(default)]
    pub entries: Vec<ScriptEntry>,
    #[serde(default)]
    pub fallback: Vec<String>,
}

/// In-memory script: digest-keyed entries plus a fallback queue.
#[derive(Debug, Default)]
pub struct MockScript {
    pub entries: HashMap<String, String>,
    pub fallback: VecDeque<String>,
    pub strict: bool,
}

impl MockScript {
    pub fn strict_empty() -> MockScript {
        MockScript {
            strict: true,
            ..MockScript::default()
        }
    }

    pub fn single_fallback(response: &str) -> MockScript {
        MockScript {
            fallback: VecDeque::from([response.to_string()]),
            ..MockScript::default()
        }
    }

    pub fn insert_prompt(&mut self, prompt: &str, response: &str) {
        self.entries.insert(prompt_digest(prompt), response.to_string());
    }

    pub fn insert_digest(&mut self, digest: &str, response: &str) {
        self.entries.insert(digest.to_string(), response.to_string());
    }

    pub fn load(path: impl AsRef<Path>) -> Result<MockScript, ProviderError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ProviderError::Cache {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let file: ScriptFile = serde_json::from_str(&text).map_err(|e| ProviderError::Cache {
            path: path.display().to_string(),
            message: format!("malformed mock script: {e}"),
        })?;
        MockScript::from_file(file, path)
    }

    fn from_file(file: ScriptFile, path: &Path) -> Result<MockScript, ProviderError> {
        let mut script = MockScript {
            strict: file.strict,
            fallback: file.fallback.into(),
            entries: HashMap::new(),
        };
        for (i, entry) in file.entries.into_iter().enumerate() {
            let digest = match (entry.digest, entry.prompt) {
                (Some(d), None) => d,
                (None, Some(p)) => prompt_digest(&p),
                (Some(d), Some(p)) => {
                    let computed = prompt_digest(&p);
                    if computed != d {
                        return Err(ProviderError::Cache {
                            path: path.display().to_string(),
                            message: format!(
                                "entry {i}: digest {d} does not match its prompt text ({computed})"
                            ),
                        });
                    }
                    d
                }
                (None, None) => {
                    return Err(ProviderError::Cache {
                        path: path.display().to_string(),
                        message: format!("entry {i}: needs a digest or a prompt"),
                    })
                }
            };
            script.entries.insert(digest, entry.response);
        }
        Ok(script)
    }
}

/// Backend serving responses from a [`MockScript`].
pub struct MockBackend {
    entries: HashMap<String, String>,
    fallback: Mutex<VecDeque<String>>,
    strict: bool,
}

impl MockBackend {
    pub fn new(script: MockScript) -> MockBackend {
        MockBackend {
            entries: script.entries,
            fallback: Mutex::new(script.fallback),
            strict: script.strict,
        }
    }
}

impl Backend for MockBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<String, ProviderError> {
        let digest = prompt_digest(&request.prompt);
        if let Some(response) = self.entries.get(&digest) {
            return Ok(response.clone());
        }
        if self.strict {
            return Err(ProviderError::ScriptMiss {
                digest,
                prompt: request.prompt.clone(),
            });
        }
        let mut queue = self.fallback.lock().expect("fallback queue poisoned");
        queue.pop_front().ok_or(ProviderError::ScriptMiss {
            digest,
            prompt: request.prompt.clone(),
        })
    }

    fn name(&self) -> &str {
        "mock"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::Decoding;

    fn request(prompt: &str) -> CompletionRequest {
        CompletionRequest {
            model_id: "m".to_string(),
            prompt: prompt.to_string(),
            decoding: Decoding::default(),
        }
    }

    #[test]
    fn strict_serves_by_digest() {
        let mut script = MockScript::strict_empty();
        script.insert_prompt("what domains?", "Domain(s): tv");
        let backend = MockBackend::new(script);
        assert_eq!(backend.complete(&request("what domains?")).unwrap(), "Domain(s): tv");
    }

    #[test]
    fn strict_miss_carries_the_prompt() {
        let backend = MockBackend::new(MockScript::strict_empty());
        let err = backend.complete(&request("never seen")).unwrap_err();
        match err {
            ProviderError::ScriptMiss { prompt, .. } => assert_eq!(prompt, "never seen"),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn fallback_queue_serves_in_order() {
        let script = MockScript {
            fallback: VecDeque::from(["one".to_string(), "two".to_string()]),
            ..MockScript::default()
        };
        let backend = MockBackend::new(script);
        assert_eq!(backend.complete(&request("a")).unwrap(), "one");
        assert_eq!(backend.complete(&request("b")).unwrap(), "two");
        assert!(backend.complete(&request("c")).is_err());
    }

    #[test]
    fn script_file_accepts_prompt_echo_and_checks_digests() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("script.json");
        let file = ScriptFile {
            strict: true,
            entries: vec![ScriptEntry {
                digest: None,
                prompt: Some("hello".to_string()),
                response: "world".to_string(),
            }],
            fallback: vec![],
        };
        std::fs::write(&path, serde_json::to_string(&file).unwrap()).unwrap();
        let script = MockScript::load(&path).unwrap();
        let backend = MockBackend::new(script);
        assert_eq!(backend.complete(&request("hello")).unwrap(), "world");

        // mismatched digest + prompt pair is rejected
        let bad = ScriptFile {
            strict: true,
            entries: vec![ScriptEntry {
                digest: Some("00".repeat(32)),
                prompt: Some("hello".to_string()),
                response: "x".to_string(),
            }],
            fallback: vec![],
        };
        std::fs::write(&path, serde_json::to_string(&bad).unwrap()).unwrap();
        assert!(MockScript::load(&path).is_err());
    }
}
