//! Command line for running turn-by-turn evaluations, ablation sweeps,
//! dataset validation, cache maintenance, annotation tooling and a small
//! interactive demo.
//!
//! Exit codes: 0 on success (per-turn model failures never change it),
//! 1 on configuration/data errors, 2 on usage errors.

mod chat;
mod config;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use todeval::data::{load_turns, load_turns_strict, TurnRecord};
use todeval::harness::{
    apply_annotations, export_worksheet, render_ablation, render_adjusted, render_report,
    run_ablation, run_split_resumable, EvalMode, EvalResources, ReportFormat, RunConfig, Subtask,
};
use todeval::lang::Language;
use todeval::metrics::MetricsReport;
use todeval::prompts::TemplateSet;
use todeval::provider::{
    Decoding, HttpBackend, MockBackend, MockScript, Provider, ResponseCache, RetryPolicy,
};
use todeval::state::ParserConfig;

use config::FileConfig;

#[derive(Parser)]
#[command(name = "todeval", version, about = "Turn-by-turn evaluation for multilingual task-oriented dialogue")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate a split and write report, results and mismatches.
    Run(RunArgs),
    /// DST ablation sweep over pipeline modes.
    Ablate(AblateArgs),
    /// Validate a turn file; exit 1 if any record is invalid.
    ValidateData(ValidateArgs),
    /// Re-run one turn and print every stage prompt and response.
    InspectTurn(InspectArgs),
    /// Response-cache maintenance.
    Cache(CacheArgs),
    /// Export and apply DST mismatch annotations.
    Annotate(AnnotateArgs),
    /// Interactive single-turn demo against a live provider.
    Chat(chat::ChatArgs),
}

#[derive(Args, Clone)]
pub(crate) struct CommonArgs {
    /// Config file supplying defaults for any flag (flags win).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Turn file (one JSON record per line).
    #[arg(long)]
    split: Option<PathBuf>,
    /// Restrict the run to one language (default: every language present).
    #[arg(long)]
    lang: Option<Language>,
    /// Directory with `<lang>.toml` ontologies.
    #[arg(long)]
    ontology_dir: Option<PathBuf>,
    /// Directory with `<lang>.json` few-shot banks.
    #[arg(long)]
    banks_dir: Option<PathBuf>,
    /// Directory with prompt template assets (default: bundled templates).
    #[arg(long)]
    templates_dir: Option<PathBuf>,
    /// `mock` or `http`.
    #[arg(long)]
    provider: Option<String>,
    /// Replay script for the mock provider.
    #[arg(long)]
    script: Option<PathBuf>,
    /// Model identifier sent to the backend and into cache keys.
    #[arg(long)]
    model: Option<String>,
    /// Response cache directory (omit to disable caching).
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Worker threads; 0 means one per core.
    #[arg(long)]
    workers: Option<usize>,
    /// Maximum completion tokens requested from the backend.
    #[arg(long)]
    max_output_tokens: Option<u32>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Pipeline mode: full, no_norm, dict_norm or naive.
    #[arg(long)]
    mode: Option<EvalMode>,
    /// Comma-separated subset of dst,acd,dag,rg.
    #[arg(long, value_delimiter = ',')]
    subtasks: Option<Vec<Subtask>>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Keep per-stage prompts and responses in the results file.
    #[arg(long)]
    trace: bool,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Comma-separated modes to sweep (default: all four).
    #[arg(long, value_delimiter = ',')]
    modes: Option<Vec<EvalMode>>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    /// Turn file to validate.
    path: PathBuf,
    #[arg(long)]
    lang: Option<Language>,
}

#[derive(Args)]
struct InspectArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Turn id as `dialogue_id:turn_index`.
    #[arg(long)]
    id: String,
    #[arg(long)]
    mode: Option<EvalMode>,
}

#[derive(Args)]
struct CacheArgs {
    #[command(subcommand)]
    action: CacheAction,
}

#[derive(Subcommand)]
enum CacheAction {
    /// Entry count and total bytes.
    Stats {
        #[arg(long)]
        cache_dir: PathBuf,
    },
    /// Remove entries, optionally only one model's.
    Clear {
        #[arg(long)]
        cache_dir: PathBuf,
        #[arg(long)]
        model: Option<String>,
    },
}

#[derive(Args)]
struct AnnotateArgs {
    #[command(subcommand)]
    action: AnnotateAction,
}

#[derive(Subcommand)]
enum AnnotateAction {
    /// Copy a run's mismatches into an annotation worksheet.
    Export {
        /// `mismatches.tsv` produced by `run` (already worksheet-shaped).
        #[arg(long)]
        mismatches: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fold an annotated worksheet into cumulative adjusted accuracy.
    Apply {
        /// `report.json` produced by `run`.
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        worksheet: PathBuf,
        /// Language row of the report to adjust.
        #[arg(long)]
        lang: Language,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Ablate(args) => cmd_ablate(args),
        Command::ValidateData(args) => cmd_validate(args),
        Command::InspectTurn(args) => cmd_inspect(args),
        Command::Cache(args) => cmd_cache(args),
        Command::Annotate(args) => cmd_annotate(args),
        Command::Chat(args) => chat::run(args),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

// ---------------------------------------------------------------------------
// Shared resolution
// ---------------------------------------------------------------------------

/// Fully resolved settings for a run-like command.
pub(crate) struct Resolved {
    pub split: PathBuf,
    pub lang: Option<Language>,
    pub ontology_dir: PathBuf,
    pub banks_dir: PathBuf,
    pub templates_dir: Option<PathBuf>,
    pub provider: String,
    pub script: Option<PathBuf>,
    pub model: String,
    pub cache_dir: Option<PathBuf>,
    pub workers: usize,
    pub max_output_tokens: u32,
}

impl Resolved {
    pub(crate) fn from(common: &CommonArgs) -> Result<Resolved> {
        let file = match &common.config {
            Some(path) => FileConfig::load(path)?,
            None => FileConfig::default(),
        };
        let pick_path =
            |flag: &Option<PathBuf>, file_value: &Option<PathBuf>| flag.clone().or_else(|| file_value.clone());
        let file_lang: Option<Language> = file
            .lang
            .as_deref()
            .map(|l| l.parse())
            .transpose()
            .map_err(|e| anyhow!("config `lang`: {e}"))?;
        let resolved = Resolved {
            split: pick_path(&common.split, &file.split)
                .ok_or_else(|| anyhow!("--split is required (flag or config)"))?,
            lang: common.lang.or(file_lang),
            ontology_dir: pick_path(&common.ontology_dir, &file.ontology_dir)
                .ok_or_else(|| anyhow!("--ontology-dir is required (flag or config)"))?,
            banks_dir: pick_path(&common.banks_dir, &file.banks_dir)
                .ok_or_else(|| anyhow!("--banks-dir is required (flag or config)"))?,
            templates_dir: pick_path(&common.templates_dir, &file.templates_dir),
            provider: common
                .provider
                .clone()
                .or(file.provider.clone())
                .unwrap_or_else(|| "mock".to_string()),
            script: pick_path(&common.script, &file.script),
            model: common
                .model
                .clone()
                .or(file.model.clone())
                .unwrap_or_else(|| "gpt-4".to_string()),
            cache_dir: pick_path(&common.cache_dir, &file.cache_dir),
            workers: common.workers.or(file.workers).unwrap_or(0),
            max_output_tokens: common.max_output_tokens.or(file.max_output_tokens).unwrap_or(512),
        };
        if !["mock", "http"].contains(&resolved.provider.as_str()) {
            bail!("--provider must be `mock` or `http`, got `{}`", resolved.provider);
        }
        if resolved.provider == "mock" && resolved.script.is_none() {
            bail!("the mock provider needs --script");
        }
        Ok(resolved)
    }

    fn templates(&self) -> Result<TemplateSet> {
        match &self.templates_dir {
            Some(dir) => TemplateSet::from_dir(dir).map_err(|e| anyhow!("{e}")),
            None => Ok(TemplateSet::bundled()),
        }
    }

    pub(crate) fn load_turns(&self) -> Result<Vec<TurnRecord>> {
        load_turns_strict(&self.split, self.lang, &ParserConfig::default()).map_err(|e| anyhow!("{e}"))
    }

    pub(crate) fn resources(&self, languages: &[Language]) -> Result<EvalResources> {
        EvalResources::load(
            &self.ontology_dir,
            &self.banks_dir,
            languages,
            ParserConfig::default(),
            self.templates()?,
        )
        .map_err(|e| anyhow!("{e}"))
    }

    pub(crate) fn resources_for_turns(&self, turns: &[TurnRecord]) -> Result<EvalResources> {
        let languages: Vec<Language> = turns
            .iter()
            .map(|t| t.language)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        self.resources(&languages)
    }

    pub(crate) fn provider(&self, format_version: &str) -> Result<Provider> {
        let cache = self.cache_dir.as_ref().map(ResponseCache::new);
        let backend: Arc<dyn todeval::provider::Backend> = match self.provider.as_str() {
            "mock" => {
                let script = MockScript::load(self.script.as_ref().expect("checked in resolve"))
                    .map_err(|e| anyhow!("{e}"))?;
                Arc::new(MockBackend::new(script))
            }
            _ => {
                let base = std::env::var("TODEVAL_API_BASE")
                    .unwrap_or_else(|_| "https://api.openai.com/v1".to_string());
                let key = std::env::var("TODEVAL_API_KEY").ok();
                Arc::new(HttpBackend::new(&base, key, RetryPolicy::default()).map_err(|e| anyhow!("{e}"))?)
            }
        };
        Ok(Provider::new(backend, cache, format_version))
    }

    pub(crate) fn run_config(&self, mode: EvalMode, subtasks: BTreeSet<Subtask>, trace: bool) -> RunConfig {
        RunConfig {
            subtasks,
            mode,
            workers: self.workers,
            model_id: self.model.clone(),
            decoding: Decoding {
                temperature_milli: 0,
                max_output_tokens: self.max_output_tokens,
            },
            collect_traces: trace,
        }
    }
}

fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

fn cmd_run(args: RunArgs) -> Result<ExitCode> {
    let resolved = Resolved::from(&args.common)?;
    let out_dir = args.out.unwrap_or_else(|| PathBuf::from("out"));
    let mode = args.mode.unwrap_or(EvalMode::Full);
    let subtasks: BTreeSet<Subtask> = match args.subtasks {
        Some(list) => list.into_iter().collect(),
        None => Subtask::ALL.into_iter().collect(),
    };

    let turns = resolved.load_turns()?;
    if turns.is_empty() {
        bail!("no turns to evaluate (check --split / --lang)");
    }
    let resources = resolved.resources_for_turns(&turns)?;
    let provider = resolved.provider(resources.templates.format_version())?;
    let config = resolved.run_config(mode, subtasks, args.trace);

    std::fs::create_dir_all(&out_dir)?;
    config::write_effective(&out_dir.join("effective-config.toml"), &resolved, &config)?;

    let outcome = run_split_resumable(
        &turns,
        &resources,
        &provider,
        &config,
        &out_dir.join("results.ndrec"),
    )
    .map_err(|e| anyhow!("{e}"))?;

    let markdown = render_report(&outcome.reports, ReportFormat::Markdown);
    write(&out_dir.join("report.md"), &markdown)?;
    write(&out_dir.join("report.csv"), &render_report(&outcome.reports, ReportFormat::Csv))?;
    write(&out_dir.join("report.json"), &render_report(&outcome.reports, ReportFormat::Json))?;
    write(&out_dir.join("mismatches.tsv"), &export_worksheet(&outcome.mismatches))?;

    print!("{markdown}");
    eprintln!(
        "evaluated {} turns ({} backend calls); outputs in {}",
        outcome.results.len(),
        provider.backend_calls(),
        out_dir.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_ablate(args: AblateArgs) -> Result<ExitCode> {
    let resolved = Resolved::from(&args.common)?;
    let out_dir = args.out.unwrap_or_else(|| PathBuf::from("out"));
    let modes = args.modes.unwrap_or_else(|| EvalMode::ALL.to_vec());

    let turns = resolved.load_turns()?;
    if turns.is_empty() {
        bail!("no turns to evaluate (check --split / --lang)");
    }
    let resources = resolved.resources_for_turns(&turns)?;
    let provider = resolved.provider(resources.templates.format_version())?;
    let config = resolved.run_config(EvalMode::Full, [Subtask::Dst].into_iter().collect(), false);

    let table = run_ablation(&turns, &resources, &provider, &config, &modes).map_err(|e| anyhow!("{e}"))?;
    let rendered = render_ablation(&table);
    std::fs::create_dir_all(&out_dir)?;
    write(&out_dir.join("ablation.md"), &rendered)?;
    write(&out_dir.join("ablation.json"), &(serde_json::to_string_pretty(&table)? + "\n"))?;
    print!("{rendered}");
    Ok(ExitCode::SUCCESS)
}

fn cmd_validate(args: ValidateArgs) -> Result<ExitCode> {
    let loaded = load_turns(&args.path, args.lang, &ParserConfig::default()).map_err(|e| anyhow!("{e}"))?;
    println!(
        "{}: {} valid records, {} problems",
        args.path.display(),
        loaded.records.len(),
        loaded.report.issues.len()
    );
    for issue in &loaded.report.issues {
        println!("line {}: {}", issue.line, issue.message);
    }
    if loaded.report.is_clean() {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(1))
    }
}

fn cmd_inspect(args: InspectArgs) -> Result<ExitCode> {
    let resolved = Resolved::from(&args.common)?;
    let mode = args.mode.unwrap_or(EvalMode::Full);
    let (dialogue_id, turn_index) = args
        .id
        .rsplit_once(':')
        .ok_or_else(|| anyhow!("--id must be `dialogue_id:turn_index`"))?;
    let turn_index: u32 = turn_index.parse().context("turn index must be a number")?;

    let turns = resolved.load_turns()?;
    let turn = turns
        .iter()
        .find(|t| t.dialogue_id == dialogue_id && t.turn_index == turn_index)
        .ok_or_else(|| anyhow!("turn `{}` not found in {}", args.id, resolved.split.display()))?
        .clone();

    let resources = resolved.resources_for_turns(std::slice::from_ref(&turn))?;
    let provider = resolved.provider(resources.templates.format_version())?;
    let config = resolved.run_config(mode, Subtask::ALL.into_iter().collect(), true);
    let outcome =
        todeval::harness::run_split(std::slice::from_ref(&turn), &resources, &provider, &config)
            .map_err(|e| anyhow!("{e}"))?;

    let result = &outcome.results[0];
    println!("turn {}:", result.turn_id());
    for trace in result.trace.iter().flatten() {
        println!("\n===== stage: {} =====", trace.stage);
        println!("--- prompt ---\n{}", trace.prompt);
        println!("--- response ---\n{}", trace.response);
    }
    if let Some(dst) = &result.dst {
        println!("\ndst em: {} (predicted `{}` vs gold `{}`)", dst.em, dst.predicted, dst.gold);
        if let Some(failure) = &dst.failure {
            println!("dst failure: {failure}");
        }
    }
    if let Some(acd) = &result.acd {
        println!("acd: predicted {:?}, gold {}, correct {}", acd.predicted, acd.gold, acd.correct);
    }
    if let Some(dag) = &result.dag {
        println!("dag em: {} (predicted `{}`)", dag.em, dag.predicted);
    }
    if let Some(rg) = &result.rg {
        println!("rg: `{}`", rg.predicted);
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_cache(args: CacheArgs) -> Result<ExitCode> {
    match args.action {
        CacheAction::Stats { cache_dir } => {
            let stats = ResponseCache::new(&cache_dir).stats().map_err(|e| anyhow!("{e}"))?;
            println!("entries: {}", stats.entries);
            println!("bytes: {}", stats.bytes);
            println!("hits: {}", stats.hits);
            println!("misses: {}", stats.misses);
        }
        CacheAction::Clear { cache_dir, model } => {
            let removed = ResponseCache::new(&cache_dir)
                .clear(model.as_deref())
                .map_err(|e| anyhow!("{e}"))?;
            println!("removed {removed} entries");
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_annotate(args: AnnotateArgs) -> Result<ExitCode> {
    match args.action {
        AnnotateAction::Export { mismatches, out } => {
            let text = std::fs::read_to_string(&mismatches)
                .with_context(|| format!("reading {}", mismatches.display()))?;
            let body = if text.starts_with('#') {
                text
            } else {
                format!("# id\tlanguage\tpredicted\tgold\tmachine_class\thuman_category\n{text}")
            };
            write(&out, &body)?;
            println!("worksheet written to {}", out.display());
        }
        AnnotateAction::Apply { report, worksheet, lang } => {
            let text = std::fs::read_to_string(&report)
                .with_context(|| format!("reading {}", report.display()))?;
            let reports: Vec<MetricsReport> = serde_json::from_str(&text)?;
            let report = reports
                .iter()
                .find(|r| r.language == lang)
                .ok_or_else(|| anyhow!("report has no `{lang}` row"))?;
            let sheet = std::fs::read_to_string(&worksheet)
                .with_context(|| format!("reading {}", worksheet.display()))?;
            let adjusted = apply_annotations(report, &sheet).map_err(|e| anyhow!("{e}"))?;
            print!("{}", render_adjusted(&adjusted));
        }
    }
    Ok(ExitCode::SUCCESS)
}
