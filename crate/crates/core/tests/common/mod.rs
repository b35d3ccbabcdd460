//! Shared helpers for integration tests over the bundled mini-corpus.
#![allow(dead_code)] // each test target uses a different subset

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use todeval::data::{load_turns_strict, TurnRecord};
use todeval::harness::EvalResources;
use todeval::lang::Language;
use todeval::pipeline::YesNoLexicon;
use todeval::prompts::TemplateSet;
use todeval::provider::{MockBackend, MockScript, Provider, ResponseCache, ScriptEntry, ScriptFile};
use todeval::replay::{ResponseTable, ScriptBuilder, StageResponses};
use todeval::state::ParserConfig;

pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/mini")
}

pub fn load_resources() -> EvalResources {
    EvalResources::load(
        &fixtures_dir().join("ontology"),
        &fixtures_dir().join("banks"),
        &[Language::En, Language::Zh],
        ParserConfig::default(),
        TemplateSet::bundled(),
    )
    .expect("bundled resources load")
}

pub fn load_corpus() -> Vec<TurnRecord> {
    load_turns_strict(fixtures_dir().join("turns.ndjson"), None, &ParserConfig::default())
        .expect("bundled corpus is valid")
}

/// Build the main replay script (designed model behaviour, both languages,
/// hierarchical + naive entries) from the committed response tables.
pub fn build_main_script(resources: &EvalResources, turns: &[TurnRecord]) -> ScriptFile {
    let mut merged: Vec<ScriptEntry> = Vec::new();
    for language in [Language::En, Language::Zh] {
        let table = ResponseTable::load(fixtures_dir().join(format!("responses/{language}.json")))
            .expect("response table loads");
        let lang_res = resources.by_language.get(&language).expect("language resources");
        let builder = ScriptBuilder {
            ontology: &lang_res.ontology,
            bank: &lang_res.bank,
            templates: &resources.templates,
            parser: &resources.parser,
            lexicon: &lang_res.lexicon,
        };
        let script = builder.build(turns, &table).expect("script builds");
        merged.extend(script.entries);
    }
    merged.sort_by(|a, b| a.digest.cmp(&b.digest));
    ScriptFile {
        strict: true,
        entries: merged,
        fallback: Vec::new(),
    }
}

/// Perfect-model script with exactly one unparseable state-generation
/// response (en-001 turn 0).
pub fn build_one_bad_turn_script(resources: &EvalResources, turns: &[TurnRecord]) -> ScriptFile {
    let topical: BTreeMap<String, String> = [
        ("en-001", "tv"),
        ("en-002", "movie"),
        ("en-003", "attraction"),
        ("zh-001", "attraction"),
        ("zh-002", "tv"),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect();

    let mut merged: Vec<ScriptEntry> = Vec::new();
    for language in [Language::En, Language::Zh] {
        let lang_turns: Vec<TurnRecord> =
            turns.iter().filter(|t| t.language == language).cloned().collect();
        let lang_res = resources.by_language.get(&language).expect("language resources");
        let builder = ScriptBuilder {
            ontology: &lang_res.ontology,
            bank: &lang_res.bank,
            templates: &resources.templates,
            parser: &resources.parser,
            lexicon: &lang_res.lexicon,
        };
        let mut table = builder.perfect_table(&lang_turns, &topical).expect("perfect table");
        if language == Language::En {
            let row: &mut StageResponses = table
                .turns
                .iter_mut()
                .find(|t| t.dialogue_id == "en-001" && t.turn_index == 0)
                .expect("en-001:0 present");
            row.state_generation = Some("I believe the state is ((( tv".to_string());
            row.normalization = None;
        }
        let script = builder.build(&lang_turns, &table).expect("script builds");
        merged.extend(script.entries);
    }
    merged.sort_by(|a, b| a.digest.cmp(&b.digest));
    ScriptFile {
        strict: true,
        entries: merged,
        fallback: Vec::new(),
    }
}

pub fn provider_for_script(path: &Path, cache: Option<ResponseCache>, format_version: &str) -> Provider {
    let script = MockScript::load(path).expect("script loads");
    Provider::new(Arc::new(MockBackend::new(script)), cache, format_version)
}

/// The lexicon used when replaying fixtures by hand in tests.
pub fn en_lexicon() -> YesNoLexicon {
    YesNoLexicon::for_language(Language::En)
}
