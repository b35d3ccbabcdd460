//! Per-language schema store: domains, slot inventories, enumerated value
//! lists and the dictionary used by the dictionary-normalization baseline.
//!
//! Ontologies are loaded from a TOML file (see `docs/formats.md`). Domain and
//! slot declaration order is preserved: the domain-selection prompt lists
//! choices in file order, while state serialization sorts independently.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::Deserialize;
use unicode_normalization::UnicodeNormalization;

use crate::lang::Language;

/// Whether a slot takes free text or one of a fixed value list.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotKind {
    Free,
    Enumerated,
}

/// One slot of a domain schema.
#[derive(Debug, Clone)]
pub struct SlotSpec {
    pub name: String,
    pub kind: SlotKind,
    /// Canonical spellings, declaration order. Empty for free slots.
    pub allowed_values: Vec<String>,
}

/// Schema for one language: domain -> slots, plus the optional surface-form
/// dictionary for dictionary-based normalization.
#[derive(Debug, Clone)]
pub struct Ontology {
    pub language: Language,
    pub format_version: u32,
    domains: Vec<(String, Vec<SlotSpec>)>,
    domain_index: HashMap<String, usize>,
    /// (domain, slot, folded surface) -> canonical value.
    dictionary: HashMap<(String, String, String), String>,
    has_dictionary: bool,
}

/// Shared lookup normalization: NFC + casefold + whitespace trim. The
/// canonicalizer uses the same fold so the two can never disagree.
pub fn fold_for_lookup(value: &str) -> String {
    value.nfc().collect::<String>().trim().to_lowercase()
}

#[derive(Debug, thiserror::Error)]
pub enum OntologyError {
    #[error("cannot read ontology file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed ontology file {path}: {message}")]
    Format { path: String, message: String },
    #[error("invalid ontology in {path}:\n{}", violations.join("\n"))]
    Validation {
        path: String,
        violations: Vec<String>,
    },
}

#[derive(Debug, Deserialize)]
struct OntologyFile {
    format_version: u32,
    language: String,
    #[serde(default)]
    dictionary: Option<String>,
    #[serde(default, rename = "domain")]
    domains: Vec<DomainFile>,
}

#[derive(Debug, Deserialize)]
struct DomainFile {
    name: String,
    #[serde(default, rename = "slot")]
    slots: Vec<SlotFile>,
}

#[derive(Debug, Deserialize)]
struct SlotFile {
    name: String,
    kind: String,
    #[serde(default)]
    values: Vec<String>,
}

impl Ontology {
    /// Load and fully validate an ontology file for the given language.
    /// Validation collects every violation, not just the first.
    pub fn load(path: impl AsRef<Path>, language: Language) -> Result<Ontology, OntologyError> {
        let path = path.as_ref();
        let display = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| OntologyError::Io {
            path: display.clone(),
            source,
        })?;
        let file: OntologyFile = toml::from_str(&text).map_err(|e| OntologyError::Format {
            path: display.clone(),
            message: e.to_string(),
        })?;

        let mut violations = Vec::new();
        if file.language != language.code() {
            violations.push(format!(
                "language mismatch: file declares `{}`, expected `{}`",
                file.language,
                language.code()
            ));
        }

        let mut domains: Vec<(String, Vec<SlotSpec>)> = Vec::new();
        let mut domain_index = HashMap::new();
        for d in &file.domains {
            if domain_index.contains_key(&d.name) {
                violations.push(format!("duplicate domain `{}`", d.name));
                continue;
            }
            let mut slots: Vec<SlotSpec> = Vec::new();
            for s in &d.slots {
                if slots.iter().any(|existing| existing.name == s.name) {
                    violations.push(format!("duplicate slot ({}, {})", d.name, s.name));
                    continue;
                }
                let kind = match s.kind.as_str() {
                    "free" => SlotKind::Free,
                    "enumerated" => SlotKind::Enumerated,
                    other => {
                        violations.push(format!(
                            "slot ({}, {}): unknown kind `{other}`",
                            d.name, s.name
                        ));
                        continue;
                    }
                };
                match kind {
                    SlotKind::Free => {
                        if !s.values.is_empty() {
                            violations.push(format!(
                                "slot ({}, {}): free slots must not list values",
                                d.name, s.name
                            ));
                        }
                    }
                    SlotKind::Enumerated => {
                        if s.values.is_empty() {
                            violations.push(format!(
                                "slot ({}, {}): enumerated slot with empty value list",
                                d.name, s.name
                            ));
                        }
                        let mut seen = std::collections::HashSet::new();
                        for v in &s.values {
                            if !seen.insert(fold_for_lookup(v)) {
                                violations.push(format!(
                                    "slot ({}, {}): duplicate enumerated value `{v}`",
                                    d.name, s.name
                                ));
                            }
                        }
                    }
                }
                slots.push(SlotSpec {
                    name: s.name.clone(),
                    kind,
                    allowed_values: s.values.clone(),
                });
            }
            domain_index.insert(d.name.clone(), domains.len());
            domains.push((d.name.clone(), slots));
        }
        if domains.is_empty() {
            violations.push("ontology declares no domains".to_string());
        }

        let mut ontology = Ontology {
            language,
            format_version: file.format_version,
            domains,
            domain_index,
            dictionary: HashMap::new(),
            has_dictionary: false,
        };

        if let Some(dict_rel) = &file.dictionary {
            let dict_path = path.parent().unwrap_or(Path::new(".")).join(dict_rel);
            match std::fs::read_to_string(&dict_path) {
                Err(source) => {
                    return Err(OntologyError::Io {
                        path: dict_path.display().to_string(),
                        source,
                    })
                }
                Ok(tsv) => ontology.load_dictionary(&tsv, &mut violations),
            }
            ontology.has_dictionary = true;
        }

        if violations.is_empty() {
            Ok(ontology)
        } else {
            Err(OntologyError::Validation {
                path: display,
                violations,
            })
        }
    }

    /// Dictionary rows: `domain <TAB> slot <TAB> surface <TAB> canonical`.
    /// Every canonical target must be a member of its slot's allowed values.
    fn load_dictionary(&mut self, tsv: &str, violations: &mut Vec<String>) {
        for (i, line) in tsv.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 4 {
                violations.push(format!(
                    "dictionary line {}: expected 4 tab-separated columns, got {}",
                    i + 1,
                    cols.len()
                ));
                continue;
            }
            let (domain, slot, surface, canonical) = (cols[0], cols[1], cols[2], cols[3]);
            match self.allowed_values(domain, slot) {
                None => violations.push(format!(
                    "dictionary line {}: ({domain}, {slot}) is not an enumerated slot",
                    i + 1
                )),
                Some(values) => {
                    if !values.iter().any(|v| v == canonical) {
                        violations.push(format!(
                            "dictionary line {}: `{canonical}` is not an allowed value of ({domain}, {slot})",
                            i + 1
                        ));
                        continue;
                    }
                    self.dictionary.insert(
                        (domain.to_string(), slot.to_string(), fold_for_lookup(surface)),
                        canonical.to_string(),
                    );
                }
            }
        }
    }

    /// Domain names in declaration order.
    pub fn domain_names(&self) -> impl Iterator<Item = &str> {
        self.domains.iter().map(|(d, _)| d.as_str())
    }

    pub fn has_domain(&self, domain: &str) -> bool {
        self.domain_index.contains_key(domain)
    }

    /// Resolve a loosely-cased domain mention to its canonical name.
    pub fn resolve_domain(&self, mention: &str) -> Option<&str> {
        let folded = fold_for_lookup(mention);
        self.domains
            .iter()
            .map(|(d, _)| d.as_str())
            .find(|d| fold_for_lookup(d) == folded)
    }

    /// Slots of a domain in declaration order.
    pub fn slots(&self, domain: &str) -> Option<&[SlotSpec]> {
        self.domain_index
            .get(domain)
            .map(|&i| self.domains[i].1.as_slice())
    }

    pub fn slot_spec(&self, domain: &str, slot: &str) -> Option<&SlotSpec> {
        self.slots(domain)?.iter().find(|s| s.name == slot)
    }

    /// The enumerated value list of (domain, slot), or `None` for free or
    /// unknown slots.
    pub fn allowed_values(&self, domain: &str, slot: &str) -> Option<&[String]> {
        let spec = self.slot_spec(domain, slot)?;
        match spec.kind {
            SlotKind::Enumerated => Some(&spec.allowed_values),
            SlotKind::Free => None,
        }
    }

    pub fn has_dictionary(&self) -> bool {
        self.has_dictionary
    }

    /// Dictionary lookup under the shared fold. Free slots return the input
    /// unchanged; unmapped surfaces on enumerated slots return `None`.
    pub fn dictionary_normalize(&self, domain: &str, slot: &str, value: &str) -> Option<String> {
        if self.allowed_values(domain, slot).is_none() {
            return Some(value.to_string());
        }
        self.dictionary
            .get(&(domain.to_string(), slot.to_string(), fold_for_lookup(value)))
            .cloned()
    }

    /// Match a value against the allowed list of (domain, slot) under the
    /// shared fold, returning the canonical spelling. Free and unknown slots
    /// pass the value through.
    pub fn canonicalize_value(&self, domain: &str, slot: &str, value: &str) -> CanonicalValue {
        match self.allowed_values(domain, slot) {
            None => CanonicalValue::Free,
            Some(values) => {
                let folded = fold_for_lookup(value);
                match values.iter().find(|v| fold_for_lookup(v) == folded) {
                    Some(canonical) => CanonicalValue::Canonical(canonical.clone()),
                    None => CanonicalValue::NotInOntology,
                }
            }
        }
    }
}

/// Outcome of matching one value against an enumerated slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CanonicalValue {
    /// Slot is free (or unknown): value passes through untouched.
    Free,
    /// Matched: use this spelling.
    Canonical(String),
    /// Enumerated slot, but the value is not a member.
    NotInOntology,
}

impl fmt::Display for SlotKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SlotKind::Free => f.write_str("free"),
            SlotKind::Enumerated => f.write_str("enumerated"),
        }
    }
}
