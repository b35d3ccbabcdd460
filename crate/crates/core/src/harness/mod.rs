//! Turn-by-turn evaluation runs: parallel execution over a split, metric
//! aggregation, ablation sweeps, report rendering and mismatch export.
//!
//! Every turn receives gold inputs, so per-turn evaluation is pure given the
//! provider; turns run on a bounded worker pool and results are collected by
//! turn index, never completion order. Reports are therefore byte-identical
//! across runs and across worker counts. Without the `parallel` feature the
//! pool is replaced by a sequential loop.

mod persist;
mod report;

pub use persist::{config_fingerprint, load_results, ResultsHeader, ResultsWriter};
pub use report::{
    apply_annotations, export_worksheet, render_ablation, render_adjusted, render_report,
    AdjustedRow, AdjustedTable, ReportFormat,
};

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{FewShotBank, TurnRecord};
use crate::lang::Language;
use crate::metrics::{avg_length, bleu, classify_mismatch, em_acts, em_dst, ErrorClass, MetricsReport};
use crate::ontology::{CanonicalValue, Ontology};
use crate::pipeline::{NormalizationMode, Pipeline, StageTrace, YesNoLexicon};
use crate::prompts::TemplateSet;
use crate::provider::{Decoding, Provider};
use crate::state::{diff_states, parse_state_with, serialize_state, DialogueState, ParserConfig};

/// The four per-turn subtasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subtask {
    Dst,
    Acd,
    Dag,
    Rg,
}

impl Subtask {
    pub const ALL: [Subtask; 4] = [Subtask::Dst, Subtask::Acd, Subtask::Dag, Subtask::Rg];
}

impl FromStr for Subtask {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "dst" => Ok(Subtask::Dst),
            "acd" => Ok(Subtask::Acd),
            "dag" => Ok(Subtask::Dag),
            "rg" => Ok(Subtask::Rg),
            other => Err(format!("unknown subtask `{other}` (expected dst, acd, dag, rg)")),
        }
    }
}

/// Pipeline variant under evaluation: the full hierarchy, its two
/// normalization ablations, or the single-prompt naive baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    Full,
    NoNorm,
    DictNorm,
    Naive,
}

impl EvalMode {
    pub const ALL: [EvalMode; 4] = [EvalMode::Full, EvalMode::NoNorm, EvalMode::DictNorm, EvalMode::Naive];

    /// `None` means the naive single-prompt path.
    pub fn normalization(&self) -> Option<NormalizationMode> {
        match self {
            EvalMode::Full => Some(NormalizationMode::Llm),
            EvalMode::NoNorm => Some(NormalizationMode::None),
            EvalMode::DictNorm => Some(NormalizationMode::Dictionary),
            EvalMode::Naive => None,
        }
    }

    /// Row labels of the ablation table.
    pub fn label(&self) -> &'static str {
        match self {
            EvalMode::Full => "Full",
            EvalMode::NoNorm => "w/o any normalization",
            EvalMode::DictNorm => "w/ dictionary-based normalization",
            EvalMode::Naive => "Naive prompting",
        }
    }
}

impl FromStr for EvalMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "full" => Ok(EvalMode::Full),
            "no_norm" => Ok(EvalMode::NoNorm),
            "dict_norm" => Ok(EvalMode::DictNorm),
            "naive" => Ok(EvalMode::Naive),
            other => Err(format!(
                "unknown mode `{other}` (expected full, no_norm, dict_norm, naive)"
            )),
        }
    }
}

/// Immutable per-language resources for a run.
pub struct LanguageResources {
    pub ontology: Ontology,
    pub bank: FewShotBank,
    pub lexicon: YesNoLexicon,
}

/// Everything a run shares across turns and threads.
pub struct EvalResources {
    pub templates: TemplateSet,
    pub parser: ParserConfig,
    pub by_language: BTreeMap<Language, LanguageResources>,
}

impl EvalResources {
    /// Load the conventional resource layout: `<ontology_dir>/<lang>.toml`
    /// and `<banks_dir>/<lang>.json` for every requested language, with the
    /// shipped yes/no lexicons.
    pub fn load(
        ontology_dir: &Path,
        banks_dir: &Path,
        languages: &[Language],
        parser: ParserConfig,
        templates: TemplateSet,
    ) -> Result<EvalResources, HarnessError> {
        let mut by_language = BTreeMap::new();
        for &language in languages {
            let ontology_path = ontology_dir.join(format!("{language}.toml"));
            let ontology = Ontology::load(&ontology_path, language)
                .map_err(|e| HarnessError::Config(e.to_string()))?;
            let bank_path = banks_dir.join(format!("{language}.json"));
            let bank = crate::data::load_fewshot_bank(&bank_path, language, &ontology, &parser)
                .map_err(|e| HarnessError::Config(e.to_string()))?;
            by_language.insert(
                language,
                LanguageResources {
                    ontology,
                    bank,
                    lexicon: YesNoLexicon::for_language(language),
                },
            );
        }
        Ok(EvalResources {
            templates,
            parser,
            by_language,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub subtasks: BTreeSet<Subtask>,
    pub mode: EvalMode,
    /// 0 = one worker per core.
    pub workers: usize,
    pub model_id: String,
    pub decoding: Decoding,
    #[serde(default)]
    pub collect_traces: bool,
}

impl RunConfig {
    pub fn new(model_id: &str) -> RunConfig {
        RunConfig {
            subtasks: Subtask::ALL.into_iter().collect(),
            mode: EvalMode::Full,
            workers: 0,
            model_id: model_id.to_string(),
            decoding: Decoding::default(),
            collect_traces: false,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("results file error at {path}: {message}")]
    Results { path: String, message: String },
    #[error("worksheet line {line}: unknown category `{category}`")]
    UnknownCategory { line: usize, category: String },
    #[error("worksheet line {line}: {message}")]
    Worksheet { line: usize, message: String },
}

// ---------------------------------------------------------------------------
// Per-turn results
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DstResult {
    pub em: bool,
    /// Canonical predicted state text; empty on failure.
    pub predicted: String,
    pub gold: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mismatch_class: Option<ErrorClass>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AcdResult {
    pub predicted: Option<bool>,
    pub gold: bool,
    pub correct: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DagResult {
    pub predicted: String,
    pub gold: String,
    pub em: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RgResult {
    pub predicted: String,
    pub gold: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TurnResult {
    pub dialogue_id: String,
    pub turn_index: u32,
    pub language: Language,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dst: Option<DstResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acd: Option<AcdResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dag: Option<DagResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rg: Option<RgResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<StageTrace>>,
}

impl TurnResult {
    pub fn turn_id(&self) -> String {
        format!("{}:{}", self.dialogue_id, self.turn_index)
    }
}

/// A DST mismatch with everything the annotation worksheet needs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MismatchRecord {
    pub id: String,
    pub language: Language,
    pub predicted: String,
    pub gold: String,
    pub class: ErrorClass,
}

#[derive(Debug)]
pub struct RunOutcome {
    /// One report per language present, sorted by language.
    pub reports: Vec<MetricsReport>,
    /// Per-turn results in input order.
    pub results: Vec<TurnResult>,
    pub mismatches: Vec<MismatchRecord>,
}

// ---------------------------------------------------------------------------
// Execution
// ---------------------------------------------------------------------------

/// Gold states are the reference: adopt canonical spellings where values
/// match the ontology, pass anything else through unchanged.
fn canonicalize_gold(state: &DialogueState, ontology: &Ontology) -> DialogueState {
    let mut out = DialogueState::new();
    for a in state.assignments() {
        let value = match ontology.canonicalize_value(&a.domain, &a.slot, &a.value) {
            CanonicalValue::Canonical(v) => v,
            _ => a.value.clone(),
        };
        out.insert(&a.domain, &a.slot, &a.relation, &value);
    }
    out
}

fn eval_turn(turn: &TurnRecord, pipeline: &Pipeline<'_>, config: &RunConfig) -> TurnResult {
    let mut result = TurnResult {
        dialogue_id: turn.dialogue_id.clone(),
        turn_index: turn.turn_index,
        language: turn.language,
        dst: None,
        acd: None,
        dag: None,
        rg: None,
        trace: None,
    };
    let mut traces: Vec<StageTrace> = Vec::new();

    if config.subtasks.contains(&Subtask::Dst) {
        let outcome = match config.mode.normalization() {
            Some(mode) => pipeline.run_dst(turn, mode),
            None => pipeline.run_naive_dst(turn),
        };
        let gold = parse_state_with(&turn.gold_state, pipeline.parser)
            .map(|s| canonicalize_gold(&s, pipeline.ontology))
            .unwrap_or_default();
        let (em, predicted, failure) = match &outcome.canonical {
            Ok(state) => (em_dst(Some(state), &gold), serialize_state(state), None),
            Err(f) => (false, String::new(), Some(f.summary())),
        };
        let mismatch_class = if em {
            None
        } else {
            let diff = diff_states(outcome.canonical.as_ref().ok(), &gold);
            classify_mismatch(&diff).ok()
        };
        result.dst = Some(DstResult {
            em,
            predicted,
            gold: serialize_state(&gold),
            failure,
            mismatch_class,
        });
        traces.extend(outcome.trace);
    }

    if config.subtasks.contains(&Subtask::Acd) {
        let outcome = pipeline.run_acd(turn);
        result.acd = Some(AcdResult {
            predicted: outcome.value,
            gold: turn.gold_api_call,
            correct: outcome.value == Some(turn.gold_api_call),
            error: outcome.error,
        });
        traces.extend(outcome.trace);
    }

    if config.subtasks.contains(&Subtask::Dag) {
        let outcome = pipeline.run_dag(turn);
        let predicted = outcome.value.unwrap_or_default();
        let em = em_acts(&predicted, &turn.gold_agent_acts, pipeline.ontology, pipeline.parser)
            .unwrap_or(false);
        result.dag = Some(DagResult {
            predicted,
            gold: turn.gold_agent_acts.clone(),
            em,
            error: outcome.error,
        });
        traces.extend(outcome.trace);
    }

    if config.subtasks.contains(&Subtask::Rg) {
        let outcome = pipeline.run_rg(turn);
        result.rg = Some(RgResult {
            predicted: outcome.value.unwrap_or_default(),
            gold: turn.gold_response.clone(),
            error: outcome.error,
        });
        traces.extend(outcome.trace);
    }

    if config.collect_traces {
        result.trace = Some(traces);
    }
    result
}

#[cfg(feature = "parallel")]
fn execute_turns<F>(turns: &[TurnRecord], workers: usize, eval: F) -> Vec<TurnResult>
where
    F: Fn(&TurnRecord) -> TurnResult + Sync + Send,
{
    use rayon::prelude::*;
    if workers == 1 {
        return turns.iter().map(eval).collect();
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if workers > 0 {
        builder = builder.num_threads(workers);
    }
    let pool = builder.build().expect("worker pool");
    pool.install(|| turns.par_iter().map(eval).collect())
}

/// Sequential fallback, always compiled; the benchmark suite compares it
/// against the pool-backed path.
pub fn execute_turns_sequential<F>(turns: &[TurnRecord], eval: F) -> Vec<TurnResult>
where
    F: Fn(&TurnRecord) -> TurnResult,
{
    turns.iter().map(eval).collect()
}

#[cfg(not(feature = "parallel"))]
fn execute_turns<F>(turns: &[TurnRecord], _workers: usize, eval: F) -> Vec<TurnResult>
where
    F: Fn(&TurnRecord) -> TurnResult + Sync + Send,
{
    execute_turns_sequential(turns, eval)
}

fn build_pipelines<'a>(
    resources: &'a EvalResources,
    provider: &'a Provider,
    config: &'a RunConfig,
    languages: &BTreeSet<Language>,
) -> Result<BTreeMap<Language, Pipeline<'a>>, HarnessError> {
    let mut pipelines = BTreeMap::new();
    for &language in languages {
        let lang_res = resources.by_language.get(&language).ok_or_else(|| {
            HarnessError::Config(format!("no ontology/bank configured for language `{language}`"))
        })?;
        let pipeline = Pipeline {
            ontology: &lang_res.ontology,
            bank: &lang_res.bank,
            templates: &resources.templates,
            provider,
            lexicon: &lang_res.lexicon,
            parser: &resources.parser,
            model_id: &config.model_id,
            decoding: config.decoding,
        };
        if config.subtasks.contains(&Subtask::Dst) {
            if let Some(mode) = config.mode.normalization() {
                pipeline
                    .validate_mode(mode)
                    .map_err(|e| HarnessError::Config(e.to_string()))?;
            }
        }
        pipelines.insert(language, pipeline);
    }
    Ok(pipelines)
}

/// Evaluate a split. Per-turn model failures are counted, never fatal; only
/// configuration problems abort.
pub fn run_split(
    turns: &[TurnRecord],
    resources: &EvalResources,
    provider: &Provider,
    config: &RunConfig,
) -> Result<RunOutcome, HarnessError> {
    let languages: BTreeSet<Language> = turns.iter().map(|t| t.language).collect();
    let pipelines = build_pipelines(resources, provider, config, &languages)?;
    let results = execute_turns(turns, config.workers, |turn| {
        let pipeline = pipelines.get(&turn.language).expect("pipeline per language");
        eval_turn(turn, pipeline, config)
    });
    Ok(aggregate(results))
}

/// Like [`run_split`], but with checkpointing: results stream chunk by chunk
/// to an append-only file, and a rerun with the same fingerprint reuses
/// completed turns instead of recomputing them.
pub fn run_split_resumable(
    turns: &[TurnRecord],
    resources: &EvalResources,
    provider: &Provider,
    config: &RunConfig,
    results_path: &Path,
) -> Result<RunOutcome, HarnessError> {
    let languages: BTreeSet<Language> = turns.iter().map(|t| t.language).collect();
    let pipelines = build_pipelines(resources, provider, config, &languages)?;
    let fingerprint = config_fingerprint(turns, config, resources.templates.format_version());
    let results_err = |message: String| HarnessError::Results {
        path: results_path.display().to_string(),
        message,
    };

    let mut done: BTreeMap<(String, u32), TurnResult> = BTreeMap::new();
    if let Some((header, existing)) = load_results(results_path).map_err(results_err)? {
        if header.fingerprint == fingerprint {
            for r in existing {
                done.insert((r.dialogue_id.clone(), r.turn_index), r);
            }
        }
    }

    let resume = !done.is_empty();
    let mut writer = ResultsWriter::open(results_path, &fingerprint, resume).map_err(results_err)?;

    const CHUNK: usize = 32;
    let mut results: Vec<TurnResult> = Vec::with_capacity(turns.len());
    for chunk in turns.chunks(CHUNK) {
        let pending: Vec<TurnRecord> = chunk
            .iter()
            .filter(|t| !done.contains_key(&(t.dialogue_id.clone(), t.turn_index)))
            .cloned()
            .collect();
        let computed = if pending.is_empty() {
            Vec::new()
        } else {
            execute_turns(&pending, config.workers, |turn| {
                let pipeline = pipelines.get(&turn.language).expect("pipeline per language");
                eval_turn(turn, pipeline, config)
            })
        };
        for r in &computed {
            writer.append(r).map_err(results_err)?;
        }
        let mut fresh = computed.into_iter();
        for turn in chunk {
            match done.remove(&(turn.dialogue_id.clone(), turn.turn_index)) {
                Some(existing) => results.push(existing),
                None => results.push(fresh.next().expect("one computed result per pending turn")),
            }
        }
    }

    Ok(aggregate(results))
}

fn percentage(correct: usize, total: usize) -> Option<f64> {
    (total > 0).then(|| 100.0 * correct as f64 / total as f64)
}

fn aggregate(results: Vec<TurnResult>) -> RunOutcome {
    let mut by_language: BTreeMap<Language, Vec<&TurnResult>> = BTreeMap::new();
    for r in &results {
        by_language.entry(r.language).or_default().push(r);
    }

    let mut reports = Vec::new();
    let mut mismatches = Vec::new();
    for (language, lang_results) in &by_language {
        let n = lang_results.len();
        let mut dst_total = 0;
        let mut dst_correct = 0;
        let mut class_counts: BTreeMap<ErrorClass, usize> = BTreeMap::new();
        let mut acd_total = 0;
        let mut acd_correct = 0;
        let mut dag_total = 0;
        let mut dag_correct = 0;
        let mut rg_candidates = Vec::new();
        let mut rg_references = Vec::new();

        for r in lang_results {
            if let Some(dst) = &r.dst {
                dst_total += 1;
                if dst.em {
                    dst_correct += 1;
                } else {
                    let class = dst.mismatch_class.unwrap_or(ErrorClass::PostProcessing);
                    *class_counts.entry(class).or_insert(0) += 1;
                    mismatches.push(MismatchRecord {
                        id: r.turn_id(),
                        language: *language,
                        predicted: if dst.predicted.is_empty() {
                            dst.failure.clone().unwrap_or_default()
                        } else {
                            dst.predicted.clone()
                        },
                        gold: dst.gold.clone(),
                        class,
                    });
                }
            }
            if let Some(acd) = &r.acd {
                acd_total += 1;
                if acd.correct {
                    acd_correct += 1;
                }
            }
            if let Some(dag) = &r.dag {
                dag_total += 1;
                if dag.em {
                    dag_correct += 1;
                }
            }
            if let Some(rg) = &r.rg {
                rg_candidates.push(rg.predicted.clone());
                rg_references.push(rg.gold.clone());
            }
        }

        let (rg_bleu, rg_avg_len) = if rg_candidates.is_empty() {
            (None, None)
        } else {
            (
                bleu(&rg_candidates, &rg_references, *language).ok(),
                avg_length(&rg_candidates, *language).ok(),
            )
        };

        reports.push(MetricsReport {
            language: *language,
            n_turns: n,
            dst_acc: percentage(dst_correct, dst_total),
            api_acc: percentage(acd_correct, acd_total),
            da_acc: percentage(dag_correct, dag_total),
            rg_bleu,
            rg_avg_len,
            mismatch_classes: class_counts.into_iter().collect(),
        });
    }

    RunOutcome {
        reports,
        results,
        mismatches,
    }
}

// ---------------------------------------------------------------------------
// Ablation
// ---------------------------------------------------------------------------

/// DST accuracies per (mode, language); `None` cells mark inapplicable
/// combinations (dictionary mode without a dictionary).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationTable {
    pub languages: Vec<Language>,
    pub rows: Vec<(EvalMode, Vec<Option<f64>>)>,
}

/// One DST-only run per mode. Stage-1/2 prompts are identical across the
/// hierarchical modes, so a shared cache serves them from disk after the
/// first mode. Languages without a dictionary get an `n/a` cell in
/// dictionary mode instead of aborting the sweep.
pub fn run_ablation(
    turns: &[TurnRecord],
    resources: &EvalResources,
    provider: &Provider,
    config: &RunConfig,
    modes: &[EvalMode],
) -> Result<AblationTable, HarnessError> {
    let languages: Vec<Language> = turns
        .iter()
        .map(|t| t.language)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();

    let mut rows = Vec::new();
    for &mode in modes {
        let mut cells = Vec::new();
        for &language in &languages {
            let subset: Vec<TurnRecord> = turns.iter().filter(|t| t.language == language).cloned().collect();
            let run_config = RunConfig {
                subtasks: [Subtask::Dst].into_iter().collect(),
                mode,
                ..config.clone()
            };
            match run_split(&subset, resources, provider, &run_config) {
                Ok(outcome) => {
                    let acc = outcome
                        .reports
                        .iter()
                        .find(|r| r.language == language)
                        .and_then(|r| r.dst_acc);
                    cells.push(acc);
                }
                // dictionary mode on a language without a dictionary: n/a
                Err(HarnessError::Config(_)) if mode == EvalMode::DictNorm => cells.push(None),
                Err(e) => return Err(e),
            }
        }
        rows.push((mode, cells));
    }
    Ok(AblationTable { languages, rows })
}
