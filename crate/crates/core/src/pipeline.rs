//! Per-turn execution of the four subtasks: three-stage hierarchical DST
//! (domain selection, schema-constrained generation, entity normalization),
//! API-call detection, act generation and response generation.
//!
//! Every turn-level problem — empty domain selection, provider failure,
//! unparseable model output, canonicalization failure — is a value in the
//! outcome, never an exception: a run over thousands of turns must survive
//! any single bad turn. Turns only ever consume gold context, so results are
//! independent of execution order.

use serde::{Deserialize, Serialize};

use crate::data::{FewShotBank, TurnRecord};
use crate::lang::Language;
use crate::ontology::{CanonicalValue, Ontology};
use crate::prompts::{
    render_acd, render_dag, render_domain_selection, render_naive_dst, render_normalization,
    render_rg, render_state_generation, NormalizationPrompt, PromptContext, TemplateSet,
};
use crate::provider::{CompletionRequest, Decoding, Provider};
use crate::state::{
    parse_state_with, serialize_state, DialogueState, ParseError, ParserConfig, SlotAssignment,
};

/// How stage three of the hierarchical DST treats enumerated values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationMode {
    None,
    Dictionary,
    Llm,
}

/// Per-language yes/no answer surfaces for API-call detection.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct YesNoLexicon {
    pub yes: Vec<String>,
    pub no: Vec<String>,
}

impl YesNoLexicon {
    /// Repo-shipped defaults; override via run configuration if a dataset
    /// uses different answer surfaces.
    pub fn for_language(language: Language) -> YesNoLexicon {
        let (yes, no): (&[&str], &[&str]) = match language {
            Language::En => (&["yes", "y", "true"], &["no", "n", "false"]),
            Language::Zh => (&["是", "是的", "需要", "要"], &["否", "不", "不是", "不需要"]),
            Language::Fr => (&["oui"], &["non"]),
            Language::Hi => (&["हाँ", "हां"], &["नहीं"]),
            Language::Ko => (&["네", "예"], &["아니요", "아니오"]),
            Language::EnHi => (&["yes", "y", "haan"], &["no", "n", "nahi", "nahin"]),
        };
        YesNoLexicon {
            yes: yes.iter().map(|s| s.to_string()).collect(),
            no: no.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// The canonical answer pair rendered into few-shot examples.
    pub fn canonical(&self) -> (&str, &str) {
        (self.yes[0].as_str(), self.no[0].as_str())
    }

    /// Map a model response to a boolean, or `None` when unmappable.
    pub fn classify(&self, response: &str) -> Option<bool> {
        let folded = truncate_at_blank_line(response)
            .trim()
            .trim_matches(|c: char| matches!(c, '.' | '!' | '?' | ',' | '。' | '！' | '？' | '，' | '"' | '\''))
            .to_lowercase();
        if self.yes.iter().any(|t| t.to_lowercase() == folded) {
            Some(true)
        } else if self.no.iter().any(|t| t.to_lowercase() == folded) {
            Some(false)
        } else {
            None
        }
    }
}

/// One stage's prompt and response, kept for inspection.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageTrace {
    pub stage: String,
    pub prompt: String,
    pub response: String,
}

/// Why a turn's DST did not produce a canonical state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DstFailure {
    /// No known domain could be parsed from the selection response.
    EmptySelection { response: String },
    /// Provider error at some stage.
    Provider { stage: String, message: String },
    /// Prompt could not be rendered (unknown domain, empty bank).
    Prompt { stage: String, message: String },
    /// Model output failed to parse under the state grammar.
    UnparseableState { text: String, error: ParseError },
    /// Enumerated values that matched nothing in the ontology.
    Canonicalization { problems: Vec<SlotAssignment> },
    /// Mode misconfiguration surfaced at turn level.
    Config { message: String },
}

impl DstFailure {
    pub fn summary(&self) -> String {
        match self {
            DstFailure::EmptySelection { response } => {
                format!("no known domain in selection response `{response}`")
            }
            DstFailure::Provider { stage, message } => format!("provider error at {stage}: {message}"),
            DstFailure::Prompt { stage, message } => format!("prompt error at {stage}: {message}"),
            DstFailure::UnparseableState { error, .. } => format!("unparseable state: {error}"),
            DstFailure::Canonicalization { problems } => {
                let items: Vec<String> = problems
                    .iter()
                    .map(|p| format!("({}, {}, \"{}\")", p.domain, p.slot, p.value))
                    .collect();
                format!("canonicalization failed for {}", items.join(", "))
            }
            DstFailure::Config { message } => format!("configuration: {message}"),
        }
    }
}

/// Everything the DST stages produced for one turn.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DstOutcome {
    pub selected_domains: Vec<String>,
    pub raw_state_text: String,
    pub normalized_state_text: String,
    /// The canonical state, or the failure that prevented one.
    pub canonical: Result<DialogueState, DstFailure>,
    pub trace: Vec<StageTrace>,
}

impl DstOutcome {
    fn fail(failure: DstFailure, trace: Vec<StageTrace>) -> DstOutcome {
        DstOutcome {
            selected_domains: Vec::new(),
            raw_state_text: String::new(),
            normalized_state_text: String::new(),
            canonical: Err(failure),
            trace,
        }
    }
}

/// ACD / DAG / RG outcome: a value or a recorded per-turn error.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubtaskOutcome<T> {
    pub value: Option<T>,
    pub error: Option<String>,
    pub trace: Vec<StageTrace>,
}

impl<T> SubtaskOutcome<T> {
    fn ok(value: T, trace: Vec<StageTrace>) -> Self {
        SubtaskOutcome {
            value: Some(value),
            error: None,
            trace,
        }
    }

    fn err(message: String, trace: Vec<StageTrace>) -> Self {
        SubtaskOutcome {
            value: None,
            error: Some(message),
            trace,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("dictionary normalization requires a dictionary for language `{0}` and none is configured")]
    NoDictionary(Language),
}

/// Parse a `Domain(s): a, b` response: prefix optional, case-insensitive,
/// whitespace-tolerant; unknown domains filtered; duplicates removed in
/// response order.
pub fn parse_domain_response(response: &str, ontology: &Ontology) -> Result<Vec<String>, DstFailure> {
    let line = truncate_at_blank_line(response).trim();
    let lower = line.to_lowercase();
    let body = if let Some(pos) = lower.find("domain(s):") {
        &line[pos + "domain(s):".len()..]
    } else {
        line
    };
    let mut domains = Vec::new();
    for token in body.split(',') {
        let token = token.trim().trim_matches(|c: char| matches!(c, '.' | '。'));
        if token.is_empty() {
            continue;
        }
        if let Some(canonical) = ontology.resolve_domain(token) {
            if !domains.iter().any(|d| d == canonical) {
                domains.push(canonical.to_string());
            }
        }
    }
    if domains.is_empty() {
        return Err(DstFailure::EmptySelection {
            response: response.to_string(),
        });
    }
    Ok(domains)
}

/// Trim leading whitespace, then cut at the first blank line. Guards against
/// models generating further examples after their answer.
pub fn truncate_at_blank_line(text: &str) -> &str {
    let text = text.trim_start();
    let mut end = text.len();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        if line.trim().is_empty() {
            end = offset;
            break;
        }
        offset += line.len();
    }
    text[..end].trim_end()
}

/// Executes subtasks for turns of one language. All referenced resources are
/// immutable; one pipeline may be shared across worker threads.
pub struct Pipeline<'a> {
    pub ontology: &'a Ontology,
    pub bank: &'a FewShotBank,
    pub templates: &'a TemplateSet,
    pub provider: &'a Provider,
    pub lexicon: &'a YesNoLexicon,
    pub parser: &'a ParserConfig,
    pub model_id: &'a str,
    pub decoding: Decoding,
}

impl<'a> Pipeline<'a> {
    /// Reject mode/resource combinations up front, before any turn runs.
    pub fn validate_mode(&self, mode: NormalizationMode) -> Result<(), ConfigError> {
        if mode == NormalizationMode::Dictionary && !self.ontology.has_dictionary() {
            return Err(ConfigError::NoDictionary(self.bank.language));
        }
        Ok(())
    }

    fn complete(&self, stage: &str, prompt: String) -> Result<StageTrace, DstFailure> {
        let request = CompletionRequest {
            model_id: self.model_id.to_string(),
            prompt,
            decoding: self.decoding,
        };
        match self.provider.complete(&request) {
            Ok(response) => Ok(StageTrace {
                stage: stage.to_string(),
                prompt: request.prompt,
                response,
            }),
            Err(e) => Err(DstFailure::Provider {
                stage: stage.to_string(),
                message: e.to_string(),
            }),
        }
    }

    fn dst_context(&self, turn: &TurnRecord) -> PromptContext {
        PromptContext {
            language: turn.language,
            state: turn.prev_gold_state.clone(),
            prev_acts: turn.prev_agent_acts.clone(),
            user_utterance: turn.user_utterance.clone(),
            api_result: None,
        }
    }

    /// Stage 1: ask for the relevant domains.
    pub fn select_domains(&self, turn: &TurnRecord) -> Result<(Vec<String>, StageTrace), DstFailure> {
        let ctx = self.dst_context(turn);
        let prompt = render_domain_selection(&ctx, self.bank, self.ontology, self.templates)
            .map_err(|e| DstFailure::Prompt {
                stage: "domain_selection".to_string(),
                message: e.to_string(),
            })?;
        let trace = self.complete("domain_selection", prompt)?;
        let domains = parse_domain_response(&trace.response, self.ontology)?;
        Ok((domains, trace))
    }

    /// Stage 2: generate the raw state, truncated at the first blank line.
    pub fn generate_state(
        &self,
        turn: &TurnRecord,
        domains: &[String],
    ) -> Result<(String, StageTrace), DstFailure> {
        let ctx = self.dst_context(turn);
        let prompt = render_state_generation(&ctx, domains, self.ontology, self.bank, self.templates)
            .map_err(|e| DstFailure::Prompt {
                stage: "state_generation".to_string(),
                message: e.to_string(),
            })?;
        let trace = self.complete("state_generation", prompt)?;
        Ok((truncate_at_blank_line(&trace.response).to_string(), trace))
    }

    /// Stage 3: normalize enumerated values according to the mode. Returns
    /// the (possibly unchanged) state text and an LLM trace when one ran.
    pub fn normalize(
        &self,
        raw_state: &str,
        domains: &[String],
        mode: NormalizationMode,
    ) -> Result<(String, Option<StageTrace>), DstFailure> {
        match mode {
            NormalizationMode::None => Ok((raw_state.to_string(), None)),
            NormalizationMode::Dictionary => {
                if !self.ontology.has_dictionary() {
                    return Err(DstFailure::Config {
                        message: ConfigError::NoDictionary(self.bank.language).to_string(),
                    });
                }
                let state = parse_state_with(raw_state, self.parser).map_err(|error| {
                    DstFailure::UnparseableState {
                        text: raw_state.to_string(),
                        error,
                    }
                })?;
                let mut mapped = DialogueState::new();
                for a in state.assignments() {
                    let value = self
                        .ontology
                        .dictionary_normalize(&a.domain, &a.slot, &a.value)
                        .unwrap_or(a.value);
                    mapped.insert(&a.domain, &a.slot, &a.relation, &value);
                }
                Ok((serialize_state(&mapped), None))
            }
            NormalizationMode::Llm => {
                let rendered = render_normalization(
                    raw_state,
                    domains,
                    self.ontology,
                    self.bank,
                    self.templates,
                    self.parser,
                )
                .map_err(|e| match e {
                    crate::prompts::PromptError::UnparseableState(error) => {
                        DstFailure::UnparseableState {
                            text: raw_state.to_string(),
                            error,
                        }
                    }
                    other => DstFailure::Prompt {
                        stage: "normalization".to_string(),
                        message: other.to_string(),
                    },
                })?;
                match rendered {
                    NormalizationPrompt::Skip => Ok((raw_state.to_string(), None)),
                    NormalizationPrompt::Prompt(prompt) => {
                        let trace = self.complete("normalization", prompt)?;
                        Ok((
                            truncate_at_blank_line(&trace.response).to_string(),
                            Some(trace),
                        ))
                    }
                }
            }
        }
    }

    /// Full hierarchical DST for one turn. Stage failures yield a failure
    /// outcome carrying the partial trace; nothing escapes.
    pub fn run_dst(&self, turn: &TurnRecord, mode: NormalizationMode) -> DstOutcome {
        let mut trace = Vec::new();

        let (domains, stage1) = match self.select_domains(turn) {
            Ok(v) => v,
            Err(failure) => {
                // keep whatever prompt/response we have for inspection
                if let DstFailure::EmptySelection { response } = &failure {
                    trace.push(StageTrace {
                        stage: "domain_selection".to_string(),
                        prompt: String::new(),
                        response: response.clone(),
                    });
                }
                return DstOutcome::fail(failure, trace);
            }
        };
        trace.push(stage1);

        let (raw_state, stage2) = match self.generate_state(turn, &domains) {
            Ok(v) => v,
            Err(failure) => {
                let mut outcome = DstOutcome::fail(failure, trace);
                outcome.selected_domains = domains;
                return outcome;
            }
        };
        trace.push(stage2);

        let (normalized, stage3) = match self.normalize(&raw_state, &domains, mode) {
            Ok(v) => v,
            Err(failure) => {
                let mut outcome = DstOutcome::fail(failure, trace);
                outcome.selected_domains = domains;
                outcome.raw_state_text = raw_state;
                return outcome;
            }
        };
        if let Some(t) = stage3 {
            trace.push(t);
        }

        let canonical = postprocess(&normalized, self.ontology, self.parser);
        DstOutcome {
            selected_domains: domains,
            raw_state_text: raw_state,
            normalized_state_text: normalized,
            canonical,
            trace,
        }
    }

    /// Single-prompt DST baseline: no domain selection, no normalization;
    /// post-processing (ordering + ontology match) still applies.
    pub fn run_naive_dst(&self, turn: &TurnRecord) -> DstOutcome {
        let ctx = self.dst_context(turn);
        let prompt = match render_naive_dst(&ctx, self.bank, self.templates) {
            Ok(p) => p,
            Err(e) => {
                return DstOutcome::fail(
                    DstFailure::Prompt {
                        stage: "naive_dst".to_string(),
                        message: e.to_string(),
                    },
                    Vec::new(),
                )
            }
        };
        let stage = match self.complete("naive_dst", prompt) {
            Ok(t) => t,
            Err(failure) => return DstOutcome::fail(failure, Vec::new()),
        };
        let raw = truncate_at_blank_line(&stage.response).to_string();
        let canonical = postprocess(&raw, self.ontology, self.parser);
        DstOutcome {
            selected_domains: Vec::new(),
            raw_state_text: raw.clone(),
            normalized_state_text: raw,
            canonical,
            trace: vec![stage],
        }
    }

    /// API-call detection: the response is mapped to a boolean through the
    /// language's yes/no lexicon; anything unmappable is a recorded error.
    pub fn run_acd(&self, turn: &TurnRecord) -> SubtaskOutcome<bool> {
        let ctx = PromptContext {
            language: turn.language,
            state: turn.gold_state.clone(),
            prev_acts: turn.prev_agent_acts.clone(),
            user_utterance: turn.user_utterance.clone(),
            api_result: None,
        };
        let (yes, no) = self.lexicon.canonical();
        let prompt = match render_acd(&ctx, self.bank, self.templates, yes, no) {
            Ok(p) => p,
            Err(e) => return SubtaskOutcome::err(format!("prompt error: {e}"), Vec::new()),
        };
        let trace = match self.complete("acd", prompt) {
            Ok(t) => t,
            Err(f) => return SubtaskOutcome::err(f.summary(), Vec::new()),
        };
        match self.lexicon.classify(&trace.response) {
            Some(answer) => SubtaskOutcome::ok(answer, vec![trace]),
            None => {
                let message = format!("unmappable yes/no response `{}`", trace.response);
                SubtaskOutcome::err(message, vec![trace])
            }
        }
    }

    /// Act generation from gold state and gold API result, truncated at the
    /// first blank line.
    pub fn run_dag(&self, turn: &TurnRecord) -> SubtaskOutcome<String> {
        let ctx = PromptContext {
            language: turn.language,
            state: turn.gold_state.clone(),
            prev_acts: turn.prev_agent_acts.clone(),
            user_utterance: turn.user_utterance.clone(),
            api_result: turn.gold_api_result.clone(),
        };
        let prompt = match render_dag(&ctx, self.bank, self.templates) {
            Ok(p) => p,
            Err(e) => return SubtaskOutcome::err(format!("prompt error: {e}"), Vec::new()),
        };
        let trace = match self.complete("dag", prompt) {
            Ok(t) => t,
            Err(f) => return SubtaskOutcome::err(f.summary(), Vec::new()),
        };
        let text = truncate_at_blank_line(&trace.response).to_string();
        if text.is_empty() {
            return SubtaskOutcome::err("empty completion".to_string(), vec![trace]);
        }
        SubtaskOutcome::ok(text, vec![trace])
    }

    /// Response generation from gold acts; the completion is kept whole.
    pub fn run_rg(&self, turn: &TurnRecord) -> SubtaskOutcome<String> {
        let ctx = PromptContext {
            language: turn.language,
            state: turn.gold_state.clone(),
            prev_acts: turn.prev_agent_acts.clone(),
            user_utterance: turn.user_utterance.clone(),
            api_result: None,
        };
        let prompt = match render_rg(&turn.gold_agent_acts, &ctx, self.bank, self.templates) {
            Ok(p) => p,
            Err(e) => return SubtaskOutcome::err(format!("prompt error: {e}"), Vec::new()),
        };
        let trace = match self.complete("rg", prompt) {
            Ok(t) => t,
            Err(f) => return SubtaskOutcome::err(f.summary(), Vec::new()),
        };
        let text = trace.response.trim().to_string();
        if text.is_empty() {
            return SubtaskOutcome::err("empty completion".to_string(), vec![trace]);
        }
        SubtaskOutcome::ok(text, vec![trace])
    }
}

/// Deterministic post-processing: parse, match every enumerated value
/// against its slot's allowed list under NFC+casefold+trim (adopting the
/// canonical spelling), and re-serialize canonically. A non-member value is
/// a canonicalization failure naming (domain, slot, value); free slots pass
/// through untouched. Failure is a value, not an error.
pub fn postprocess(
    state_text: &str,
    ontology: &Ontology,
    parser: &ParserConfig,
) -> Result<DialogueState, DstFailure> {
    let state = parse_state_with(state_text, parser).map_err(|error| DstFailure::UnparseableState {
        text: state_text.to_string(),
        error,
    })?;
    let mut canonical = DialogueState::new();
    let mut problems = Vec::new();
    for a in state.assignments() {
        match ontology.canonicalize_value(&a.domain, &a.slot, &a.value) {
            CanonicalValue::Free => canonical.insert(&a.domain, &a.slot, &a.relation, &a.value),
            CanonicalValue::Canonical(spelling) => {
                canonical.insert(&a.domain, &a.slot, &a.relation, &spelling)
            }
            CanonicalValue::NotInOntology => problems.push(a),
        }
    }
    if problems.is_empty() {
        Ok(canonical)
    } else {
        Err(DstFailure::Canonicalization { problems })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truncation_cuts_trailing_commentary() {
        let text = "( tv ) type equal_to \" comedy \"\n\nHere is another example:\nfoo";
        assert_eq!(truncate_at_blank_line(text), "( tv ) type equal_to \" comedy \"");
        assert_eq!(truncate_at_blank_line("\n\n  hello\nworld"), "hello\nworld");
        assert_eq!(truncate_at_blank_line("single"), "single");
        assert_eq!(truncate_at_blank_line(""), "");
    }

    #[test]
    fn lexicon_maps_punctuated_answers() {
        let lex = YesNoLexicon::for_language(Language::En);
        assert_eq!(lex.classify("yes"), Some(true));
        assert_eq!(lex.classify("No."), Some(false));
        assert_eq!(lex.classify("Yes!\n\nBecause..."), Some(true));
        assert_eq!(lex.classify("maybe"), None);
        let zh = YesNoLexicon::for_language(Language::Zh);
        assert_eq!(zh.classify("是的。"), Some(true));
        assert_eq!(zh.classify("不需要"), Some(false));
    }

    fn fixture_ontology() -> (tempfile::TempDir, Ontology) {
        let dir = tempfile::tempdir().unwrap();
        let body = r#"
format_version = 1
language = "en"

[[domain]]
name = "tv"

  [[domain.slot]]
  name = "type"
  kind = "enumerated"
  values = ["comedy", "crime", "action", "sci-fi", "romantic"]

  [[domain.slot]]
  name = "title"
  kind = "free"
"#;
        let path = dir.path().join("en.toml");
        std::fs::write(&path, body).unwrap();
        (dir, Ontology::load(path, Language::En).unwrap())
    }

    #[test]
    fn postprocess_adopts_canonical_spelling_and_sorts() {
        let (_d, ont) = fixture_ontology();
        let parser = ParserConfig::default();
        let state = postprocess(
            "( tv ) type equal_to \" Sci-Fi \" , title equal_to \" Star Trek \"",
            &ont,
            &parser,
        )
        .unwrap();
        assert_eq!(state.get("tv", "type").unwrap().value, "sci-fi");
        assert_eq!(state.get("tv", "title").unwrap().value, "Star Trek");
        // re-serialized form is canonical (slots sorted)
        assert_eq!(
            serialize_state(&state),
            "( tv ) title equal_to \" Star Trek \" , type equal_to \" sci-fi \""
        );
    }

    #[test]
    fn postprocess_failure_names_the_value() {
        let (_d, ont) = fixture_ontology();
        let parser = ParserConfig::default();
        let failure = postprocess("( tv ) type equal_to \" space opera \"", &ont, &parser).unwrap_err();
        match failure {
            DstFailure::Canonicalization { problems } => {
                assert_eq!(problems.len(), 1);
                assert_eq!(problems[0].domain, "tv");
                assert_eq!(problems[0].slot, "type");
                assert_eq!(problems[0].value, "space opera");
            }
            other => panic!("unexpected failure {other:?}"),
        }
    }

    #[test]
    fn postprocess_is_idempotent() {
        let (_d, ont) = fixture_ontology();
        let parser = ParserConfig::default();
        let once = postprocess("( tv ) type equal_to \" SCI-FI \"", &ont, &parser).unwrap();
        let again = postprocess(&serialize_state(&once), &ont, &parser).unwrap();
        assert_eq!(once, again);
    }

    #[test]
    fn unknown_slots_pass_through_postprocessing() {
        // unknown domain/slot pairs are free from the canonicalizer's view;
        // the structural diff against gold surfaces them instead
        let (_d, ont) = fixture_ontology();
        let parser = ParserConfig::default();
        let state = postprocess("( hotel ) area equal_to \" downtown \"", &ont, &parser).unwrap();
        assert_eq!(state.get("hotel", "area").unwrap().value, "downtown");
    }
}
