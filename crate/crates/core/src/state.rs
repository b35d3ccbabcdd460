//! Textual grammar for dialogue states and agent acts.
//!
//! The surface form is the one used throughout prompts, dataset labels and
//! reports:
//!
//! ```text
//! ( tv ) decade equal_to " 2010s " , production_country_or_area equal_to " Japanese TV show "
//! ```
//!
//! A `( domain )` header opens a section; assignments are comma-separated and
//! an optional comma may precede the next header. The empty state is the
//! literal `null`. Agent acts use the same grammar with an act token between
//! the header and the slot, and an optional relation/value tail:
//!
//! ```text
//! ( tv ) inform Douban_score equal_to " 9.1 "
//! ( tv ) request title
//! ```
//!
//! All input is NFC-normalized before scanning, so visually identical strings
//! in any script compare equal. The full EBNF lives in `docs/grammar.md`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

/// Surface literal for the empty state.
pub const NULL_STATE: &str = "null";

/// Default relation vocabulary. The dataset only ever uses `equal_to`.
pub const DEFAULT_RELATION: &str = "equal_to";

/// Parser configuration: the accepted relation vocabulary.
#[derive(Debug, Clone)]
pub struct ParserConfig {
    pub relations: Vec<String>,
}

impl Default for ParserConfig {
    fn default() -> Self {
        ParserConfig {
            relations: vec![DEFAULT_RELATION.to_string()],
        }
    }
}

impl ParserConfig {
    fn is_relation(&self, tok: &str) -> bool {
        self.relations.iter().any(|r| r == tok)
    }
}

/// One `slot relation " value "` cell.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SlotValue {
    pub relation: String,
    pub value: String,
}

/// A fully-qualified assignment, used by diffs and canonicalization reports.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotAssignment {
    pub domain: String,
    pub slot: String,
    pub relation: String,
    pub value: String,
}

/// Structured dialogue state: domain -> slot -> (relation, value).
///
/// Stored in sorted maps so the canonical serialization (domains and slots in
/// lexicographic order) falls out of iteration order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueState {
    sections: BTreeMap<String, BTreeMap<String, SlotValue>>,
}

impl DialogueState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.sections.is_empty()
    }

    pub fn insert(&mut self, domain: &str, slot: &str, relation: &str, value: &str) {
        self.sections.entry(domain.to_string()).or_default().insert(
            slot.to_string(),
            SlotValue {
                relation: relation.to_string(),
                value: value.to_string(),
            },
        );
    }

    pub fn domains(&self) -> impl Iterator<Item = &str> {
        self.sections.keys().map(|d| d.as_str())
    }

    pub fn domain_set(&self) -> BTreeSet<String> {
        self.sections.keys().cloned().collect()
    }

    pub fn slots(&self, domain: &str) -> impl Iterator<Item = (&str, &SlotValue)> {
        self.sections
            .get(domain)
            .into_iter()
            .flat_map(|m| m.iter().map(|(k, v)| (k.as_str(), v)))
    }

    pub fn get(&self, domain: &str, slot: &str) -> Option<&SlotValue> {
        self.sections.get(domain).and_then(|m| m.get(slot))
    }

    pub fn assignments(&self) -> impl Iterator<Item = SlotAssignment> + '_ {
        self.sections.iter().flat_map(|(d, slots)| {
            slots.iter().map(move |(s, sv)| SlotAssignment {
                domain: d.clone(),
                slot: s.clone(),
                relation: sv.relation.clone(),
                value: sv.value.clone(),
            })
        })
    }
}

/// A single agent act. `value` is optional: acts like `request` carry none,
/// and the relation is omitted from the surface form together with it.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AgentAct {
    pub domain: String,
    pub act: String,
    pub slot: String,
    pub relation: String,
    pub value: Option<String>,
}

/// Parse failure with the byte offset into the (NFC-normalized) input.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error, Serialize, Deserialize)]
#[error("parse error at byte {offset}: {message}")]
pub struct ParseError {
    pub offset: usize,
    pub message: String,
}

/// Parse result plus non-fatal warnings (currently: duplicate slots).
#[derive(Debug, Clone)]
pub struct Parsed<T> {
    pub value: T,
    pub warnings: Vec<String>,
}

// ---------------------------------------------------------------------------
// Scanner
// ---------------------------------------------------------------------------

struct Scanner<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Scanner<'a> {
    fn new(src: &'a str) -> Self {
        Scanner { src, pos: 0 }
    }

    fn error(&self, message: impl Into<String>) -> ParseError {
        ParseError {
            offset: self.pos,
            message: message.into(),
        }
    }

    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn skip_ws(&mut self) {
        let trimmed = self.rest().trim_start();
        self.pos = self.src.len() - trimmed.len();
    }

    fn at_end(&mut self) -> bool {
        self.skip_ws();
        self.pos >= self.src.len()
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.rest().chars().next()
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(c) {
            self.pos += c.len_utf8();
            true
        } else {
            false
        }
    }

    /// A bare token: everything up to whitespace or a structural character.
    fn ident(&mut self, what: &str) -> Result<&'a str, ParseError> {
        self.skip_ws();
        let rest = self.rest();
        let end = rest
            .char_indices()
            .find(|(_, c)| c.is_whitespace() || matches!(c, '(' | ')' | ',' | '"'))
            .map(|(i, _)| i)
            .unwrap_or(rest.len());
        if end == 0 {
            return Err(self.error(format!("expected {what}")));
        }
        let tok = &rest[..end];
        self.pos += end;
        Ok(tok)
    }

    /// A `" value "` literal. Surface padding inside the quotes is trimmed.
    fn quoted(&mut self) -> Result<String, ParseError> {
        if !self.eat('"') {
            return Err(self.error("expected opening quote"));
        }
        let rest = self.rest();
        let Some(end) = rest.find('"') else {
            return Err(self.error("unterminated quote"));
        };
        let raw = &rest[..end];
        self.pos += end + 1;
        let value = raw.trim();
        if value.is_empty() {
            return Err(self.error("empty slot value"));
        }
        Ok(value.to_string())
    }

    /// `( domain )` header.
    fn header(&mut self) -> Result<&'a str, ParseError> {
        // caller has already eaten '('
        self.skip_ws();
        if self.peek() == Some(')') {
            return Err(self.error("empty domain header"));
        }
        let domain = self.ident("domain name")?;
        if !self.eat(')') {
            return Err(self.error("expected `)` to close domain header"));
        }
        Ok(domain)
    }
}

fn nfc(text: &str) -> String {
    text.nfc().collect()
}

// ---------------------------------------------------------------------------
// States
// ---------------------------------------------------------------------------

/// Parse a raw state string into a [`DialogueState`], collecting warnings.
///
/// Duplicate (domain, slot) assignments keep the last occurrence and attach a
/// warning rather than failing: model outputs sometimes self-correct in-line.
pub fn parse_state_with_warnings(
    text: &str,
    config: &ParserConfig,
) -> Result<Parsed<DialogueState>, ParseError> {
    let src = nfc(text);
    let mut scan = Scanner::new(&src);
    let mut warnings = Vec::new();
    let mut state = DialogueState::new();

    if scan.at_end() || scan.rest().trim() == NULL_STATE {
        return Ok(Parsed {
            value: state,
            warnings,
        });
    }

    let mut current_domain: Option<String> = None;
    loop {
        if scan.at_end() {
            break;
        }
        // optional separator before the next assignment or header
        scan.eat(',');
        if scan.at_end() {
            break;
        }
        if scan.eat('(') {
            current_domain = Some(scan.header()?.to_string());
            continue;
        }
        let Some(domain) = current_domain.clone() else {
            return Err(scan.error("expected `( domain )` header before assignments"));
        };
        let slot = scan.ident("slot name")?.to_string();
        let relation = scan.ident("relation token")?.to_string();
        if !config.is_relation(&relation) {
            return Err(ParseError {
                offset: scan.pos - relation.len(),
                message: format!("unknown relation token `{relation}`"),
            });
        }
        let value = scan.quoted()?;
        if state.get(&domain, &slot).is_some() {
            warnings.push(format!(
                "duplicate assignment for ({domain}, {slot}); keeping the last occurrence"
            ));
        }
        state.insert(&domain, &slot, &relation, &value);
    }

    Ok(Parsed {
        value: state,
        warnings,
    })
}

/// Parse a raw state string, discarding warnings.
pub fn parse_state(text: &str) -> Result<DialogueState, ParseError> {
    parse_state_with_warnings(text, &ParserConfig::default()).map(|p| p.value)
}

/// Like [`parse_state`] but with an explicit relation vocabulary.
pub fn parse_state_with(text: &str, config: &ParserConfig) -> Result<DialogueState, ParseError> {
    parse_state_with_warnings(text, config).map(|p| p.value)
}

/// Canonical serialization: domains and slots in lexicographic order, values
/// wrapped as `" value "`, assignments joined by `" , "`. The empty state is
/// the literal `null`.
pub fn serialize_state(state: &DialogueState) -> String {
    if state.is_empty() {
        return NULL_STATE.to_string();
    }
    let mut pieces = Vec::new();
    for (domain, slots) in &state.sections {
        let mut first = true;
        for (slot, sv) in slots {
            let prefix = if first {
                first = false;
                format!("( {domain} ) ")
            } else {
                String::new()
            };
            pieces.push(format!("{prefix}{slot} {} \" {} \"", sv.relation, sv.value));
        }
    }
    pieces.join(" , ")
}

impl fmt::Display for DialogueState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&serialize_state(self))
    }
}

// ---------------------------------------------------------------------------
// Agent acts
// ---------------------------------------------------------------------------

/// Parse zero or more agent acts. Entries are separated by commas or
/// newlines; a header carries over to subsequent entries until replaced.
/// Input order is preserved (acts are never re-sorted).
pub fn parse_acts_with(text: &str, config: &ParserConfig) -> Result<Vec<AgentAct>, ParseError> {
    let src = nfc(text);
    let mut scan = Scanner::new(&src);
    let mut acts = Vec::new();

    if scan.at_end() || scan.rest().trim() == NULL_STATE {
        return Ok(acts);
    }

    let mut current_domain: Option<String> = None;
    loop {
        if scan.at_end() {
            break;
        }
        scan.eat(',');
        if scan.at_end() {
            break;
        }
        if scan.eat('(') {
            current_domain = Some(scan.header()?.to_string());
        }
        let Some(domain) = current_domain.clone() else {
            return Err(scan.error("expected `( domain )` header before act"));
        };
        let act = scan.ident("act name")?.to_string();
        let slot = scan.ident("slot name")?.to_string();
        // optional relation + quoted value tail
        let (relation, value) = if matches!(scan.peek(), Some(',') | Some('(') | None) {
            (DEFAULT_RELATION.to_string(), None)
        } else {
            let relation = scan.ident("relation token")?.to_string();
            if !config.is_relation(&relation) {
                return Err(ParseError {
                    offset: scan.pos - relation.len(),
                    message: format!("unknown relation token `{relation}`"),
                });
            }
            (relation, Some(scan.quoted()?))
        };
        acts.push(AgentAct {
            domain,
            act,
            slot,
            relation,
            value,
        });
    }

    Ok(acts)
}

pub fn parse_acts(text: &str) -> Result<Vec<AgentAct>, ParseError> {
    parse_acts_with(text, &ParserConfig::default())
}

/// Serialize acts in input order, one `( domain ) act slot ...` entry each,
/// joined by `" , "`. The relation/value tail is omitted when value is absent.
pub fn serialize_acts(acts: &[AgentAct]) -> String {
    acts.iter()
        .map(|a| match &a.value {
            Some(v) => format!("( {} ) {} {} {} \" {} \"", a.domain, a.act, a.slot, a.relation, v),
            None => format!("( {} ) {} {}", a.domain, a.act, a.slot),
        })
        .collect::<Vec<_>>()
        .join(" , ")
}

// ---------------------------------------------------------------------------
// Structural diff
// ---------------------------------------------------------------------------

/// One value-level disagreement between prediction and gold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValueMismatch {
    pub domain: String,
    pub slot: String,
    pub predicted: String,
    pub gold: String,
}

/// Domain-, slot- and value-level differences between a predicted state and
/// the gold state. `normalization_failed` marks predictions that never became
/// a canonical state at all.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuralDiff {
    pub missing_domains: BTreeSet<String>,
    pub extra_domains: BTreeSet<String>,
    pub missing_slots: BTreeSet<(String, String)>,
    pub extra_slots: BTreeSet<(String, String)>,
    pub value_mismatches: Vec<ValueMismatch>,
    pub normalization_failed: bool,
}

impl StructuralDiff {
    pub fn is_empty(&self) -> bool {
        !self.normalization_failed
            && self.missing_domains.is_empty()
            && self.extra_domains.is_empty()
            && self.missing_slots.is_empty()
            && self.extra_slots.is_empty()
            && self.value_mismatches.is_empty()
    }
}

/// Diff a prediction against gold. `None` stands for a canonicalization
/// failure and is treated as maximally different: every gold domain counts
/// as missing and the failure flag is set.
///
/// Slot sets are compared only within shared domains and values only within
/// shared slots, so each layer of the diff reports one kind of disagreement.
pub fn diff_states(predicted: Option<&DialogueState>, gold: &DialogueState) -> StructuralDiff {
    let mut diff = StructuralDiff::default();
    let Some(pred) = predicted else {
        diff.normalization_failed = true;
        diff.missing_domains = gold.domain_set();
        return diff;
    };

    let pred_domains = pred.domain_set();
    let gold_domains = gold.domain_set();
    diff.missing_domains = gold_domains.difference(&pred_domains).cloned().collect();
    diff.extra_domains = pred_domains.difference(&gold_domains).cloned().collect();

    for domain in pred_domains.intersection(&gold_domains) {
        let pred_slots: BTreeMap<&str, &SlotValue> = pred.slots(domain).collect();
        let gold_slots: BTreeMap<&str, &SlotValue> = gold.slots(domain).collect();
        for slot in gold_slots.keys() {
            if !pred_slots.contains_key(slot) {
                diff.missing_slots.insert((domain.clone(), slot.to_string()));
            }
        }
        for slot in pred_slots.keys() {
            if !gold_slots.contains_key(slot) {
                diff.extra_slots.insert((domain.clone(), slot.to_string()));
            }
        }
        for (slot, gv) in &gold_slots {
            if let Some(pv) = pred_slots.get(slot) {
                if pv != gv {
                    diff.value_mismatches.push(ValueMismatch {
                        domain: domain.clone(),
                        slot: slot.to_string(),
                        predicted: format!("{} {}", pv.relation, pv.value),
                        gold: format!("{} {}", gv.relation, gv.value),
                    });
                }
            }
        }
    }
    diff
}
