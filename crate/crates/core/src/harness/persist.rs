//! Results-file persistence: one JSON record per line, a header first.
//!
//! The header carries a fingerprint over everything that affects per-turn
//! results (dataset bytes, model, decoding, mode, subtasks, prompt format
//! version) — deliberately not the worker count or cache settings, which can
//! never change results. A rerun whose fingerprint matches reuses completed
//! turns.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{RunConfig, TurnResult};
use crate::data::TurnRecord;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultsHeader {
    pub kind: String,
    pub fingerprint: String,
}

/// Digest over the semantic run inputs. Worker count and cache layout are
/// excluded: they must not change results.
pub fn config_fingerprint(turns: &[TurnRecord], config: &RunConfig, format_version: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(serde_json::to_vec(turns).expect("turns serialize"));
    hasher.update(config.model_id.as_bytes());
    hasher.update(serde_json::to_vec(&config.decoding).expect("decoding serializes"));
    hasher.update(serde_json::to_vec(&config.mode).expect("mode serializes"));
    hasher.update(serde_json::to_vec(&config.subtasks).expect("subtasks serialize"));
    hasher.update(format_version.as_bytes());
    hex::encode(hasher.finalize())[..16].to_string()
}

/// Read a results file: header plus completed turn records. Returns `None`
/// when the file does not exist. Truncated trailing lines (killed run) are
/// ignored.
pub fn load_results(path: &Path) -> Result<Option<(ResultsHeader, Vec<TurnResult>)>, String> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(e.to_string()),
    };
    let mut lines = text.lines();
    let Some(first) = lines.next() else {
        return Ok(None);
    };
    let header: ResultsHeader = serde_json::from_str(first).map_err(|e| format!("bad header: {e}"))?;
    if header.kind != "header" {
        return Err("first record is not a header".to_string());
    }
    let mut results = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<TurnResult>(line) {
            Ok(r) => results.push(r),
            Err(_) => break,
        }
    }
    Ok(Some((header, results)))
}

/// Append-only writer. Opening without `resume` truncates and writes a fresh
/// header; with `resume` it appends to the existing file.
pub struct ResultsWriter {
    out: BufWriter<File>,
}

impl ResultsWriter {
    pub fn open(path: &Path, fingerprint: &str, resume: bool) -> Result<ResultsWriter, String> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| e.to_string())?;
        }
        let file = if resume {
            OpenOptions::new().append(true).open(path).map_err(|e| e.to_string())?
        } else {
            let file = File::create(path).map_err(|e| e.to_string())?;
            file
        };
        let mut writer = ResultsWriter {
            out: BufWriter::new(file),
        };
        if !resume {
            let header = ResultsHeader {
                kind: "header".to_string(),
                fingerprint: fingerprint.to_string(),
            };
            writer.write_line(&serde_json::to_string(&header).expect("header serializes"))?;
        }
        Ok(writer)
    }

    fn write_line(&mut self, line: &str) -> Result<(), String> {
        self.out
            .write_all(line.as_bytes())
            .and_then(|_| self.out.write_all(b"\n"))
            .and_then(|_| self.out.flush())
            .map_err(|e| e.to_string())
    }

    pub fn append(&mut self, result: &TurnResult) -> Result<(), String> {
        self.write_line(&serde_json::to_string(result).map_err(|e| e.to_string())?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::Language;

    fn result(id: &str, index: u32) -> TurnResult {
        TurnResult {
            dialogue_id: id.to_string(),
            turn_index: index,
            language: Language::En,
            dst: None,
            acd: None,
            dag: None,
            rg: None,
            trace: None,
        }
    }

    #[test]
    fn write_then_load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("results.ndrec");
        let mut writer = ResultsWriter::open(&path, "abc123", false).unwrap();
        writer.append(&result("d1", 0)).unwrap();
        writer.append(&result("d1", 1)).unwrap();
        drop(writer);

        let (header, results) = load_results(&path).unwrap().unwrap();
        assert_eq!(header.fingerprint, "abc123");
        assert_eq!(results.len(), 2);
        assert_eq!(results[1].turn_index, 1);

        // resume appends
        let mut writer = ResultsWriter::open(&path, "abc123", true).unwrap();
        writer.append(&result("d2", 0)).unwrap();
        drop(writer);
        let (_, results) = load_results(&path).unwrap().unwrap();
        assert_eq!(results.len(), 3);
    }

    #[test]
    fn truncated_tail_is_ignored() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("results.ndrec");
        let mut writer = ResultsWriter::open(&path, "f", false).unwrap();
        writer.append(&result("d1", 0)).unwrap();
        drop(writer);
        // simulate a kill mid-write
        let mut text = std::fs::read_to_string(&path).unwrap();
        text.push_str("{\"dialogue_id\":\"d1\",\"turn_i");
        std::fs::write(&path, text).unwrap();
        let (_, results) = load_results(&path).unwrap().unwrap();
        assert_eq!(results.len(), 1);
    }

    #[test]
    fn missing_file_is_none() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_results(&dir.path().join("nope.ndrec")).unwrap().is_none());
    }
}
