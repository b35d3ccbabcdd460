//! Canonical dataset format and few-shot prompt banks.
//!
//! Turn files are newline-delimited JSON, one turn per line, so splits are
//! streamable, diff-friendly and trivially shardable. Field names are part of
//! the format contract (see `docs/formats.md`). An adapter converts external
//! dumps into this format via a field-path mapping config.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::lang::Language;
use crate::ontology::Ontology;
use crate::state::{parse_acts_with, parse_state_with, ParserConfig};

/// One dialogue turn with gold context and gold labels for all subtasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub dialogue_id: String,
    pub turn_index: u32,
    pub language: Language,
    pub user_utterance: String,
    /// Up to two act strings, oldest first.
    #[serde(default)]
    pub prev_agent_acts: Vec<String>,
    pub prev_gold_state: String,
    pub gold_state: String,
    pub gold_api_call: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_api_result: Option<String>,
    pub gold_agent_acts: String,
    pub gold_response: String,
}

impl TurnRecord {
    pub fn turn_id(&self) -> String {
        format!("{}:{}", self.dialogue_id, self.turn_index)
    }
}

/// One collected validation problem, with its 1-based line number.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationIssue {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.issues.is_empty()
    }

    fn push(&mut self, line: usize, message: impl Into<String>) {
        self.issues.push(ValidationIssue {
            line,
            message: message.into(),
        });
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed file {path}: {message}")]
    Format { path: String, message: String },
    #[error("{path} failed validation:\n{}", report.issues.iter().map(|i| format!("line {}: {}", i.line, i.message)).collect::<Vec<_>>().join("\n"))]
    Validation {
        path: String,
        report: ValidationReport,
    },
    #[error("few-shot bank {path} does not cover domains: {}", missing.join(", "))]
    Coverage { path: String, missing: Vec<String> },
    #[error("mapping config is missing required fields: {}", missing.join(", "))]
    Mapping { missing: Vec<String> },
}

/// Loaded turns plus the per-line validation report. Records that fail
/// validation are excluded from `records` and listed in the report; strict
/// callers reject any non-clean report.
#[derive(Debug)]
pub struct LoadedTurns {
    pub records: Vec<TurnRecord>,
    pub report: ValidationReport,
}

fn validate_turn(turn: &TurnRecord, parser: &ParserConfig) -> Result<(), String> {
    if turn.prev_agent_acts.len() > 2 {
        return Err(format!(
            "prev_agent_acts has {} entries, at most 2 allowed",
            turn.prev_agent_acts.len()
        ));
    }
    if let Err(e) = parse_state_with(&turn.prev_gold_state, parser) {
        return Err(format!("prev_gold_state does not parse: {e}"));
    }
    if let Err(e) = parse_state_with(&turn.gold_state, parser) {
        return Err(format!("gold_state does not parse: {e}"));
    }
    if let Err(e) = parse_acts_with(&turn.gold_agent_acts, parser) {
        return Err(format!("gold_agent_acts does not parse: {e}"));
    }
    for (i, acts) in turn.prev_agent_acts.iter().enumerate() {
        if let Err(e) = parse_acts_with(acts, parser) {
            return Err(format!("prev_agent_acts[{i}] does not parse: {e}"));
        }
    }
    if turn.turn_index == 0 {
        if !turn.prev_agent_acts.is_empty() {
            return Err("turn 0 must have empty prev_agent_acts".to_string());
        }
        if !parse_state_with(&turn.prev_gold_state, parser)
            .map(|s| s.is_empty())
            .unwrap_or(false)
        {
            return Err("turn 0 must have prev_gold_state `null`".to_string());
        }
    }
    Ok(())
}

/// Load a turn file, optionally keeping only one language. Validation
/// failures are collected with line numbers, never fatal here.
pub fn load_turns(
    path: impl AsRef<Path>,
    language: Option<Language>,
    parser: &ParserConfig,
) -> Result<LoadedTurns, DataError> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: display.clone(),
        source,
    })?;

    let mut records = Vec::new();
    let mut report = ValidationReport::default();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let turn: TurnRecord = match serde_json::from_str(line) {
            Ok(t) => t,
            Err(e) => {
                // apply the language filter to unparseable lines too when the
                // raw language tag is readable, so foreign noise is skipped
                let raw_lang = serde_json::from_str::<Value>(line)
                    .ok()
                    .and_then(|v| v.get("language").and_then(|l| l.as_str().map(String::from)));
                match (&language, raw_lang) {
                    (Some(want), Some(have)) if want.code() != have => {}
                    _ => report.push(lineno, format!("invalid record: {e}")),
                }
                continue;
            }
        };
        if let Some(want) = language {
            if turn.language != want {
                continue;
            }
        }
        match validate_turn(&turn, parser) {
            Ok(()) => records.push(turn),
            Err(message) => report.push(lineno, message),
        }
    }
    Ok(LoadedTurns { records, report })
}

/// Strict variant: any validation issue is an error.
pub fn load_turns_strict(
    path: impl AsRef<Path>,
    language: Option<Language>,
    parser: &ParserConfig,
) -> Result<Vec<TurnRecord>, DataError> {
    let path = path.as_ref();
    let loaded = load_turns(path, language, parser)?;
    if loaded.report.is_clean() {
        Ok(loaded.records)
    } else {
        Err(DataError::Validation {
            path: path.display().to_string(),
            report: loaded.report,
        })
    }
}

// ---------------------------------------------------------------------------
// Few-shot banks
// ---------------------------------------------------------------------------

/// Context shared by worked examples: previous state, up to two act strings,
/// and the user utterance — the same shape as the prompt input block.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExampleContext {
    pub state: String,
    #[serde(default)]
    pub acts: Vec<String>,
    pub user: String,
    /// Optional per-example language tag; must match the bank when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub language: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSelectionExample {
    #[serde(flatten)]
    pub context: ExampleContext,
    pub domains: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateGenerationExample {
    #[serde(flatten)]
    pub context: ExampleContext,
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationExample {
    pub input: String,
    pub output: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub language: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiCallExample {
    #[serde(flatten)]
    pub context: ExampleContext,
    pub api_call: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActGenerationExample {
    #[serde(flatten)]
    pub context: ExampleContext,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_result: Option<String>,
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseExample {
    #[serde(flatten)]
    pub context: ExampleContext,
    pub acts_to_verbalize: String,
    pub response: String,
}

/// Language-matched worked examples for every prompt kind. Example order is
/// the file order and is preserved verbatim into prompts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotBank {
    pub language: Language,
    pub domain_selection: Vec<DomainSelectionExample>,
    pub state_generation: BTreeMap<String, Vec<StateGenerationExample>>,
    pub normalization: Vec<NormalizationExample>,
    pub acd: Vec<ApiCallExample>,
    pub dag: Vec<ActGenerationExample>,
    pub rg: Vec<ResponseExample>,
}

fn check_context(
    ctx: &ExampleContext,
    bank_lang: Language,
    parser: &ParserConfig,
    what: &str,
    report: &mut Vec<String>,
) {
    if let Some(lang) = &ctx.language {
        if lang != bank_lang.code() {
            report.push(format!("{what}: example language `{lang}` differs from bank language"));
        }
    }
    if let Err(e) = parse_state_with(&ctx.state, parser) {
        report.push(format!("{what}: context state does not parse: {e}"));
    }
    for acts in &ctx.acts {
        if let Err(e) = parse_acts_with(acts, parser) {
            report.push(format!("{what}: context acts do not parse: {e}"));
        }
    }
}

/// Load and validate a few-shot bank: every state/act must parse, example
/// languages must match, and the domain-selection examples must cover every
/// domain the ontology configures.
pub fn load_fewshot_bank(
    path: impl AsRef<Path>,
    language: Language,
    ontology: &Ontology,
    parser: &ParserConfig,
) -> Result<FewShotBank, DataError> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: display.clone(),
        source,
    })?;
    let bank: FewShotBank = serde_json::from_str(&text).map_err(|e| DataError::Format {
        path: display.clone(),
        message: e.to_string(),
    })?;

    let mut problems = Vec::new();
    if bank.language != language {
        problems.push(format!(
            "bank declares language `{}`, expected `{}`",
            bank.language, language
        ));
    }

    for (i, ex) in bank.domain_selection.iter().enumerate() {
        check_context(&ex.context, bank.language, parser, &format!("domain_selection[{i}]"), &mut problems);
        for d in &ex.domains {
            if !ontology.has_domain(d) {
                problems.push(format!("domain_selection[{i}]: unknown domain `{d}`"));
            }
        }
    }
    for (domain, examples) in &bank.state_generation {
        if !ontology.has_domain(domain) {
            problems.push(format!("state_generation: unknown domain `{domain}`"));
        }
        for (i, ex) in examples.iter().enumerate() {
            let what = format!("state_generation.{domain}[{i}]");
            check_context(&ex.context, bank.language, parser, &what, &mut problems);
            if let Err(e) = parse_state_with(&ex.output, parser) {
                problems.push(format!("{what}: output state does not parse: {e}"));
            }
        }
    }
    for (i, ex) in bank.normalization.iter().enumerate() {
        if let Some(lang) = &ex.language {
            if lang != bank.language.code() {
                problems.push(format!("normalization[{i}]: language `{lang}` differs from bank"));
            }
        }
        for (field, text) in [("input", &ex.input), ("output", &ex.output)] {
            if let Err(e) = parse_state_with(text, parser) {
                problems.push(format!("normalization[{i}].{field} does not parse: {e}"));
            }
        }
    }
    for (i, ex) in bank.acd.iter().enumerate() {
        check_context(&ex.context, bank.language, parser, &format!("acd[{i}]"), &mut problems);
    }
    for (i, ex) in bank.dag.iter().enumerate() {
        let what = format!("dag[{i}]");
        check_context(&ex.context, bank.language, parser, &what, &mut problems);
        if let Err(e) = parse_acts_with(&ex.output, parser) {
            problems.push(format!("{what}: output acts do not parse: {e}"));
        }
    }
    for (i, ex) in bank.rg.iter().enumerate() {
        let what = format!("rg[{i}]");
        check_context(&ex.context, bank.language, parser, &what, &mut problems);
        if let Err(e) = parse_acts_with(&ex.acts_to_verbalize, parser) {
            problems.push(format!("{what}: acts_to_verbalize do not parse: {e}"));
        }
    }

    if !problems.is_empty() {
        return Err(DataError::Validation {
            path: display,
            report: ValidationReport {
                issues: problems
                    .into_iter()
                    .map(|message| ValidationIssue { line: 0, message })
                    .collect(),
            },
        });
    }

    let covered: std::collections::HashSet<&str> = bank
        .domain_selection
        .iter()
        .flat_map(|ex| ex.domains.iter().map(|d| d.as_str()))
        .collect();
    let missing: Vec<String> = ontology
        .domain_names()
        .filter(|d| !covered.contains(d))
        .map(|d| d.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(DataError::Coverage {
            path: display,
            missing,
        });
    }

    Ok(bank)
}

// ---------------------------------------------------------------------------
// External dump adapter
// ---------------------------------------------------------------------------

/// Field-path mapping from an external dump to [`TurnRecord`] fields. Paths
/// are dot-separated; numeric components index into arrays.
#[derive(Debug, Clone, Deserialize)]
pub struct MappingConfig {
    pub fields: BTreeMap<String, String>,
}

const REQUIRED_FIELDS: [&str; 9] = [
    "dialogue_id",
    "turn_index",
    "language",
    "user_utterance",
    "prev_gold_state",
    "gold_state",
    "gold_api_call",
    "gold_agent_acts",
    "gold_response",
];

fn lookup_path<'v>(value: &'v Value, path: &str) -> Option<&'v Value> {
    let mut cursor = value;
    for part in path.split('.') {
        cursor = match part.parse::<usize>() {
            Ok(index) => cursor.get(index)?,
            Err(_) => cursor.get(part)?,
        };
    }
    Some(cursor)
}

/// Convert an external dump (a JSON array or one JSON object per line) into
/// canonical turn records. Unmapped optional fields default; missing
/// required mappings are collected into one error.
pub fn convert_external(dump_path: impl AsRef<Path>, mapping: &MappingConfig) -> Result<String, DataError> {
    let dump_path = dump_path.as_ref();
    let display = dump_path.display().to_string();
    let text = std::fs::read_to_string(dump_path).map_err(|source| DataError::Io {
        path: display.clone(),
        source,
    })?;

    let missing: Vec<String> = REQUIRED_FIELDS
        .iter()
        .filter(|f| !mapping.fields.contains_key(**f))
        .map(|f| f.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(DataError::Mapping { missing });
    }

    let records: Vec<Value> = if text.trim_start().starts_with('[') {
        serde_json::from_str(&text).map_err(|e| DataError::Format {
            path: display.clone(),
            message: e.to_string(),
        })?
    } else {
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<_, _>>()
            .map_err(|e| DataError::Format {
                path: display.clone(),
                message: e.to_string(),
            })?
    };

    let mut out = String::new();
    for (i, record) in records.iter().enumerate() {
        let mut mapped = serde_json::Map::new();
        let mut missing_in_record = Vec::new();
        for (field, path) in &mapping.fields {
            match lookup_path(record, path) {
                Some(v) => {
                    mapped.insert(field.clone(), v.clone());
                }
                None if REQUIRED_FIELDS.contains(&field.as_str()) => {
                    missing_in_record.push(format!("{field} (path `{path}`)"));
                }
                None => {}
            }
        }
        if !missing_in_record.is_empty() {
            return Err(DataError::Format {
                path: display.clone(),
                message: format!("record {i}: no value at {}", missing_in_record.join(", ")),
            });
        }
        let turn: TurnRecord =
            serde_json::from_value(Value::Object(mapped)).map_err(|e| DataError::Format {
                path: display.clone(),
                message: format!("record {i}: {e}"),
            })?;
        out.push_str(&serde_json::to_string(&turn).expect("turn serializes"));
        out.push('\n');
    }
    Ok(out)
}
