//! Scoring: DST exact match, binary accuracy, act-set exact match, corpus
//! BLEU, average response length, mismatch classification, and cumulative
//! adjusted accuracy.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::lang::Language;
use crate::ontology::{CanonicalValue, Ontology};
use crate::state::{parse_acts_with, AgentAct, DialogueState, ParserConfig, StructuralDiff};

/// Smoothing constant: fraction assigned to an n-gram order whose clipped
/// match count is zero. Orders with no n-grams at all (candidates shorter
/// than n) are excluded from the geometric mean instead.
pub const BLEU_SMOOTHING_EPSILON: f64 = 1e-9;

/// Slack allowed on `base + sum(percentages)` in [`adjusted_accuracy`],
/// absorbing rounding in published percentages.
pub const ADJUSTED_ACCURACY_TOLERANCE: f64 = 0.5;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("length mismatch: {candidates} candidates vs {references} references")]
    LengthMismatch { candidates: usize, references: usize },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("cannot classify an empty diff")]
    EmptyDiff,
    #[error("accuracy out of range: base {base} + issue percentages {sum} exceeds 100")]
    Range { base: f64, sum: f64 },
    #[error("gold acts failed to parse: {0}")]
    GoldActs(crate::state::ParseError),
}

// ---------------------------------------------------------------------------
// Exact match
// ---------------------------------------------------------------------------

/// DST exact match: canonicalization failure is never a match; otherwise
/// structural equality of the canonical states.
pub fn em_dst(predicted: Option<&DialogueState>, gold: &DialogueState) -> bool {
    match predicted {
        None => false,
        Some(pred) => pred == gold,
    }
}

/// Percentage of positions where prediction equals gold.
pub fn acc_binary<T: PartialEq>(preds: &[T], golds: &[T]) -> Result<f64, MetricsError> {
    if preds.len() != golds.len() {
        return Err(MetricsError::LengthMismatch {
            candidates: preds.len(),
            references: golds.len(),
        });
    }
    if preds.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    let matches = preds.iter().zip(golds).filter(|(p, g)| p == g).count();
    Ok(100.0 * matches as f64 / preds.len() as f64)
}

/// Act exact match as set equality of parsed acts, after canonicalizing the
/// values of enumerated slots. An unparseable prediction never matches.
pub fn em_acts(
    predicted: &str,
    gold: &str,
    ontology: &Ontology,
    parser: &ParserConfig,
) -> Result<bool, MetricsError> {
    let gold_acts = parse_acts_with(gold, parser).map_err(MetricsError::GoldActs)?;
    let Ok(pred_acts) = parse_acts_with(predicted, parser) else {
        return Ok(false);
    };
    Ok(act_set(&pred_acts, ontology) == act_set(&gold_acts, ontology))
}

fn act_set(acts: &[AgentAct], ontology: &Ontology) -> std::collections::BTreeSet<AgentAct> {
    acts.iter()
        .map(|a| {
            let mut act = a.clone();
            if let Some(v) = &act.value {
                if let CanonicalValue::Canonical(c) = ontology.canonicalize_value(&act.domain, &act.slot, v)
                {
                    act.value = Some(c);
                }
            }
            act
        })
        .collect()
}

// ---------------------------------------------------------------------------
// BLEU
// ---------------------------------------------------------------------------

const MAX_NGRAM: usize = 4;

/// Corpus BLEU with per-order counts, for inspection and tests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleuBreakdown {
    pub score: f64,
    /// (clipped matches, candidate n-gram total) for n = 1..=4.
    pub precisions: [(u64, u64); MAX_NGRAM],
    pub candidate_len: u64,
    pub reference_len: u64,
    pub brevity_penalty: f64,
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], u64> {
    let mut counts: HashMap<&[String], u64> = HashMap::new();
    if tokens.len() >= n {
        for window in tokens.windows(n) {
            *counts.entry(window).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus-level BLEU-4 with clipped n-gram precisions, geometric mean and
/// brevity penalty `exp(1 - r/c)` for `c < r`. Tokenization follows the
/// language (whitespace, or per character for Chinese).
pub fn bleu_breakdown(
    candidates: &[String],
    references: &[String],
    language: Language,
) -> Result<BleuBreakdown, MetricsError> {
    if candidates.len() != references.len() {
        return Err(MetricsError::LengthMismatch {
            candidates: candidates.len(),
            references: references.len(),
        });
    }
    if candidates.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }

    let mut precisions = [(0u64, 0u64); MAX_NGRAM];
    let mut candidate_len = 0u64;
    let mut reference_len = 0u64;

    for (cand, reference) in candidates.iter().zip(references) {
        let cand_tokens = language.tokenize(cand);
        let ref_tokens = language.tokenize(reference);
        candidate_len += cand_tokens.len() as u64;
        reference_len += ref_tokens.len() as u64;

        for n in 1..=MAX_NGRAM {
            let cand_counts = ngram_counts(&cand_tokens, n);
            let ref_counts = ngram_counts(&ref_tokens, n);
            let (correct, total) = &mut precisions[n - 1];
            for (gram, &count) in &cand_counts {
                *total += count;
                *correct += count.min(ref_counts.get(gram).copied().unwrap_or(0));
            }
        }
    }

    let brevity_penalty = if candidate_len == 0 {
        0.0
    } else if candidate_len >= reference_len {
        1.0
    } else {
        (1.0 - reference_len as f64 / candidate_len as f64).exp()
    };

    let mut log_sum = 0.0;
    let mut orders = 0usize;
    for &(correct, total) in &precisions {
        if total == 0 {
            continue;
        }
        let p = if correct == 0 {
            BLEU_SMOOTHING_EPSILON / total as f64
        } else {
            correct as f64 / total as f64
        };
        log_sum += p.ln();
        orders += 1;
    }
    let score = if orders == 0 {
        0.0
    } else {
        100.0 * brevity_penalty * (log_sum / orders as f64).exp()
    };

    Ok(BleuBreakdown {
        score,
        precisions,
        candidate_len,
        reference_len,
        brevity_penalty,
    })
}

/// Corpus BLEU score in `[0, 100]`.
pub fn bleu(candidates: &[String], references: &[String], language: Language) -> Result<f64, MetricsError> {
    Ok(bleu_breakdown(candidates, references, language)?.score)
}

/// Mean token count under the same tokenizer as [`bleu`].
pub fn avg_length(responses: &[String], language: Language) -> Result<f64, MetricsError> {
    if responses.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    let total: usize = responses.iter().map(|r| language.tokenize(r).len()).sum();
    Ok(total as f64 / responses.len() as f64)
}

// ---------------------------------------------------------------------------
// Mismatch classification and adjusted accuracy
// ---------------------------------------------------------------------------

/// Structural error class of a DST mismatch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ErrorClass {
    Domain,
    Slot,
    SlotValue,
    PostProcessing,
}

impl ErrorClass {
    pub fn label(&self) -> &'static str {
        match self {
            ErrorClass::Domain => "Domain",
            ErrorClass::Slot => "Slot",
            ErrorClass::SlotValue => "SlotValue",
            ErrorClass::PostProcessing => "PostProcessing",
        }
    }
}

impl std::str::FromStr for ErrorClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "Domain" => Ok(ErrorClass::Domain),
            "Slot" => Ok(ErrorClass::Slot),
            "SlotValue" => Ok(ErrorClass::SlotValue),
            "PostProcessing" => Ok(ErrorClass::PostProcessing),
            other => Err(format!("unknown error class `{other}`")),
        }
    }
}

/// Classify a non-empty diff into a single error class with fixed
/// precedence: PostProcessing > Domain > Slot > SlotValue.
pub fn classify_mismatch(diff: &StructuralDiff) -> Result<ErrorClass, MetricsError> {
    if diff.is_empty() {
        return Err(MetricsError::EmptyDiff);
    }
    if diff.normalization_failed {
        Ok(ErrorClass::PostProcessing)
    } else if !diff.missing_domains.is_empty() || !diff.extra_domains.is_empty() {
        Ok(ErrorClass::Domain)
    } else if !diff.missing_slots.is_empty() || !diff.extra_slots.is_empty() {
        Ok(ErrorClass::Slot)
    } else {
        Ok(ErrorClass::SlotValue)
    }
}

/// Human annotation categories for DST mismatches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MismatchCategory {
    MultipleCorrectAnswers,
    PoorGoldLabel,
    PoorAnnotationSchema,
    Error,
}

impl MismatchCategory {
    /// Fixed row order of the cumulative-accuracy table.
    pub const ADJUSTABLE: [MismatchCategory; 3] = [
        MismatchCategory::MultipleCorrectAnswers,
        MismatchCategory::PoorGoldLabel,
        MismatchCategory::PoorAnnotationSchema,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            MismatchCategory::MultipleCorrectAnswers => "MultipleCorrectAnswers",
            MismatchCategory::PoorGoldLabel => "PoorGoldLabel",
            MismatchCategory::PoorAnnotationSchema => "PoorAnnotationSchema",
            MismatchCategory::Error => "Error",
        }
    }
}

/// One imported human judgment about a mismatch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub mismatch_id: String,
    pub category: MismatchCategory,
    /// Structural subclass, only meaningful when category is `Error`.
    pub error_sub: Option<ErrorClass>,
}

/// Cumulative exact-match accuracy if the dataset issue in each row were
/// fixed: `acc_k = acc_{k-1} + pct_k` over the fixed row order.
pub fn adjusted_accuracy(base_acc: f64, category_percentages: &[f64]) -> Result<Vec<f64>, MetricsError> {
    let sum: f64 = category_percentages.iter().sum();
    if base_acc + sum > 100.0 + ADJUSTED_ACCURACY_TOLERANCE {
        return Err(MetricsError::Range { base: base_acc, sum });
    }
    let mut acc = base_acc;
    Ok(category_percentages
        .iter()
        .map(|pct| {
            acc += pct;
            acc
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

/// Per-language scores for one evaluation run, mirroring the result table:
/// DST Acc., API Acc., DA Acc., RG BLEU, RG Avg. Length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub language: Language,
    pub n_turns: usize,
    pub dst_acc: Option<f64>,
    pub api_acc: Option<f64>,
    pub da_acc: Option<f64>,
    pub rg_bleu: Option<f64>,
    pub rg_avg_len: Option<f64>,
    /// DST mismatch counts by structural class. Sums to the DST error count.
    #[serde(default)]
    pub mismatch_classes: Vec<(ErrorClass, usize)>,
}
