//! Prompt rendering for the six prompt kinds: domain selection, state
//! generation, entity normalization, API-call detection, act generation,
//! response generation — plus the single-prompt naive DST baseline.
//!
//! Templates are text assets with `{{ name }}` placeholders (bundled under
//! `templates/`, overridable from a directory). A line whose placeholder has
//! no value is omitted entirely, never rendered as literal placeholder text.
//! The prompt-format version is a digest over all template bytes, so editing
//! a template invalidates cached responses.
//!
//! Rendering is pure: same inputs, byte-identical prompt. Few-shot ordering
//! is the bank file order. Every prompt ends with its answer cue — the last
//! line of its template — so mock scripts can key on full prompt text.

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::data::{ExampleContext, FewShotBank};
use crate::lang::Language;
use crate::ontology::Ontology;
use crate::ontology::SlotKind;
use crate::state::{parse_state_with, ParseError, ParserConfig};

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("template `{template}` references unknown placeholder `{placeholder}`")]
    UnknownPlaceholder { template: String, placeholder: String },
    #[error("missing template asset `{0}`")]
    MissingTemplate(String),
    #[error("cannot read template dir {path}: {message}")]
    TemplateDir { path: String, message: String },
    #[error("bank language `{bank}` does not match context language `{context}`")]
    LanguageMismatch { bank: Language, context: Language },
    #[error("unknown domain `{0}`")]
    UnknownDomain(String),
    #[error("no domains selected")]
    NoDomains,
    #[error("few-shot bank has no `{0}` examples")]
    EmptyBank(&'static str),
    #[error("state to normalize does not parse: {0}")]
    UnparseableState(#[from] ParseError),
}

const ASSET_NAMES: [&str; 10] = [
    "acd",
    "context_block",
    "dag",
    "dag_block",
    "domain_selection",
    "naive_dst",
    "normalization",
    "rg",
    "rg_block",
    "state_generation",
];

/// The template assets plus their content digest (the prompt format version).
#[derive(Debug, Clone)]
pub struct TemplateSet {
    assets: BTreeMap<String, String>,
    format_version: String,
}

impl TemplateSet {
    /// The templates compiled into the binary.
    pub fn bundled() -> TemplateSet {
        let assets: BTreeMap<String, String> = [
            ("acd", include_str!("../templates/acd.txt")),
            ("context_block", include_str!("../templates/context_block.txt")),
            ("dag", include_str!("../templates/dag.txt")),
            ("dag_block", include_str!("../templates/dag_block.txt")),
            ("domain_selection", include_str!("../templates/domain_selection.txt")),
            ("naive_dst", include_str!("../templates/naive_dst.txt")),
            ("normalization", include_str!("../templates/normalization.txt")),
            ("rg", include_str!("../templates/rg.txt")),
            ("rg_block", include_str!("../templates/rg_block.txt")),
            ("state_generation", include_str!("../templates/state_generation.txt")),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
        TemplateSet::from_assets(assets)
    }

    /// Load `<name>.txt` assets from a directory, e.g. for prompt variants.
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<TemplateSet, PromptError> {
        let dir = dir.as_ref();
        let mut assets = BTreeMap::new();
        for name in ASSET_NAMES {
            let path = dir.join(format!("{name}.txt"));
            let text = std::fs::read_to_string(&path).map_err(|e| PromptError::TemplateDir {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
            assets.insert(name.to_string(), text);
        }
        Ok(TemplateSet::from_assets(assets))
    }

    fn from_assets(assets: BTreeMap<String, String>) -> TemplateSet {
        let mut hasher = Sha256::new();
        for (name, text) in &assets {
            hasher.update(name.as_bytes());
            hasher.update(b"\0");
            hasher.update(text.as_bytes());
            hasher.update(b"\0");
        }
        let format_version = hex::encode(hasher.finalize())[..12].to_string();
        TemplateSet { assets, format_version }
    }

    /// Digest over all template bytes; participates in the cache key.
    pub fn format_version(&self) -> &str {
        &self.format_version
    }

    fn asset(&self, name: &str) -> Result<&str, PromptError> {
        self.assets
            .get(name)
            .map(|s| s.as_str())
            .ok_or_else(|| PromptError::MissingTemplate(name.to_string()))
    }

    /// The answer cue a prompt ends with: the last non-empty template line.
    pub fn answer_cue(&self, name: &str) -> Result<&str, PromptError> {
        let asset = self.asset(name)?;
        asset
            .lines()
            .rev()
            .find(|l| !l.trim().is_empty())
            .ok_or_else(|| PromptError::MissingTemplate(name.to_string()))
    }

    fn render(&self, name: &str, vars: &Vars) -> Result<String, PromptError> {
        let asset = self.asset(name)?;
        let mut out = String::new();
        for line in asset.lines() {
            match substitute_line(line, vars) {
                Ok(Some(rendered)) => {
                    out.push_str(&rendered);
                    out.push('\n');
                }
                Ok(None) => {}
                Err(placeholder) => {
                    return Err(PromptError::UnknownPlaceholder {
                        template: name.to_string(),
                        placeholder,
                    })
                }
            }
        }
        // prompts end at the answer cue, without a trailing newline
        while out.ends_with('\n') {
            out.pop();
        }
        Ok(out)
    }
}

type Vars<'a> = BTreeMap<&'static str, Option<String>>;

/// Substitute one line; `Ok(None)` drops the line (an absent placeholder),
/// `Err` carries an unknown placeholder name.
fn substitute_line(line: &str, vars: &Vars) -> Result<Option<String>, String> {
    let mut out = String::new();
    let mut rest = line;
    while let Some(start) = rest.find("{{") {
        let Some(end_rel) = rest[start..].find("}}") else {
            out.push_str(rest);
            return Ok(Some(out));
        };
        let end = start + end_rel;
        let name = rest[start + 2..end].trim();
        match vars.get(name) {
            None => return Err(name.to_string()),
            Some(None) => return Ok(None),
            Some(Some(value)) => {
                out.push_str(&rest[..start]);
                out.push_str(value);
            }
        }
        rest = &rest[end + 2..];
    }
    out.push_str(rest);
    Ok(Some(out))
}

// ---------------------------------------------------------------------------
// Context blocks
// ---------------------------------------------------------------------------

/// Turn-side inputs of a prompt: the `<state>` content, up to two previous
/// act strings (oldest first), the user utterance, and the API result for
/// act generation.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptContext {
    pub language: Language,
    pub state: String,
    pub prev_acts: Vec<String>,
    pub user_utterance: String,
    pub api_result: Option<String>,
}

impl PromptContext {
    fn acts_pair(&self) -> (Option<String>, Option<String>) {
        let non_empty: Vec<&String> = self.prev_acts.iter().filter(|a| !a.trim().is_empty()).collect();
        match non_empty.as_slice() {
            [] => (None, None),
            [latest] => (None, Some((*latest).clone())),
            [older, latest, ..] => (Some((*older).clone()), Some((*latest).clone())),
        }
    }
}

fn block_vars(state: &str, acts_2: Option<String>, acts_1: Option<String>, user: &str) -> Vars<'static> {
    let mut vars = Vars::new();
    vars.insert("state", Some(state.to_string()));
    vars.insert("acts_2", acts_2);
    vars.insert("acts_1", acts_1);
    vars.insert("user", Some(user.to_string()));
    vars
}

fn context_block(templates: &TemplateSet, ctx: &PromptContext) -> Result<String, PromptError> {
    let (acts_2, acts_1) = ctx.acts_pair();
    templates.render("context_block", &block_vars(&ctx.state, acts_2, acts_1, &ctx.user_utterance))
}

fn example_block(templates: &TemplateSet, ex: &ExampleContext) -> Result<String, PromptError> {
    let acts: Vec<&String> = ex.acts.iter().filter(|a| !a.trim().is_empty()).collect();
    let (acts_2, acts_1) = match acts.as_slice() {
        [] => (None, None),
        [latest] => (None, Some((*latest).clone())),
        [older, latest, ..] => (Some((*older).clone()), Some((*latest).clone())),
    };
    templates.render("context_block", &block_vars(&ex.state, acts_2, acts_1, &ex.user))
}

fn check_language(bank: &FewShotBank, ctx: &PromptContext) -> Result<(), PromptError> {
    if bank.language != ctx.language {
        return Err(PromptError::LanguageMismatch {
            bank: bank.language,
            context: ctx.language,
        });
    }
    Ok(())
}

fn assemble(
    templates: &TemplateSet,
    name: &str,
    mut vars: Vars<'static>,
    examples: Vec<String>,
) -> Result<String, PromptError> {
    vars.insert("examples", Some(examples.join("\n\n")));
    templates.render(name, &vars)
}

// ---------------------------------------------------------------------------
// DST prompts
// ---------------------------------------------------------------------------

/// Domain-selection prompt: instruction, the domain choice list (ontology
/// declaration order), every bank example, then the input block.
pub fn render_domain_selection(
    ctx: &PromptContext,
    bank: &FewShotBank,
    ontology: &Ontology,
    templates: &TemplateSet,
) -> Result<String, PromptError> {
    check_language(bank, ctx)?;
    if bank.domain_selection.is_empty() {
        return Err(PromptError::EmptyBank("domain_selection"));
    }
    let cue = templates.answer_cue("domain_selection")?.to_string();
    let mut examples = Vec::new();
    for ex in &bank.domain_selection {
        let block = example_block(templates, &ex.context)?;
        examples.push(format!("{block}\n{cue} {}", ex.domains.join(", ")));
    }
    let mut vars = Vars::new();
    vars.insert(
        "choices",
        Some(ontology.domain_names().collect::<Vec<_>>().join(", ")),
    );
    vars.insert("input", Some(context_block(templates, ctx)?));
    assemble(templates, "domain_selection", vars, examples)
}

/// State-generation prompt: instruction, one `domain: slots` schema line per
/// selected domain, that domain's examples, then the input block. Domains
/// render in sorted order for determinism.
pub fn render_state_generation(
    ctx: &PromptContext,
    domains: &[String],
    ontology: &Ontology,
    bank: &FewShotBank,
    templates: &TemplateSet,
) -> Result<String, PromptError> {
    check_language(bank, ctx)?;
    if domains.is_empty() {
        return Err(PromptError::NoDomains);
    }
    let mut sorted: Vec<&String> = domains.iter().collect();
    sorted.sort();
    sorted.dedup();

    let cue = templates.answer_cue("state_generation")?.to_string();
    let mut schema_lines = Vec::new();
    let mut examples = Vec::new();
    for domain in sorted {
        let slots = ontology
            .slots(domain)
            .ok_or_else(|| PromptError::UnknownDomain(domain.clone()))?;
        let names: Vec<&str> = slots.iter().map(|s| s.name.as_str()).collect();
        schema_lines.push(format!("{domain}: {}", names.join(", ")));
        let domain_examples = bank
            .state_generation
            .get(domain)
            .filter(|v| !v.is_empty())
            .ok_or(PromptError::EmptyBank("state_generation"))?;
        for ex in domain_examples {
            let block = example_block(templates, &ex.context)?;
            examples.push(format!("{block}\n{cue} {}", ex.output));
        }
    }

    let mut vars = Vars::new();
    vars.insert("schemas", Some(schema_lines.join("\n")));
    vars.insert("input", Some(context_block(templates, ctx)?));
    assemble(templates, "state_generation", vars, examples)
}

/// Normalization prompt, or `Skip` when no enumerated slot of the selected
/// domains occurs in the raw state (the pipeline then bypasses the call).
#[derive(Debug, Clone, PartialEq)]
pub enum NormalizationPrompt {
    Prompt(String),
    Skip,
}

pub fn render_normalization(
    raw_state: &str,
    domains: &[String],
    ontology: &Ontology,
    bank: &FewShotBank,
    templates: &TemplateSet,
    parser: &ParserConfig,
) -> Result<NormalizationPrompt, PromptError> {
    let state = parse_state_with(raw_state, parser)?;
    let mut sorted: Vec<&String> = domains.iter().collect();
    sorted.sort();
    sorted.dedup();

    let needs_normalization = sorted.iter().any(|domain| {
        state
            .slots(domain)
            .any(|(slot, _)| ontology.allowed_values(domain, slot).is_some())
    });
    if !needs_normalization {
        return Ok(NormalizationPrompt::Skip);
    }
    if bank.normalization.is_empty() {
        return Err(PromptError::EmptyBank("normalization"));
    }

    let mut enum_lines = Vec::new();
    for domain in sorted {
        let Some(slots) = ontology.slots(domain) else {
            return Err(PromptError::UnknownDomain(domain.clone()));
        };
        let listed: Vec<String> = slots
            .iter()
            .filter(|s| s.kind == SlotKind::Enumerated)
            .map(|s| {
                let values: Vec<String> =
                    s.allowed_values.iter().map(|v| format!("\"{v}\"")).collect();
                format!("\"{}\" : [{}]", s.name, values.join(", "))
            })
            .collect();
        if !listed.is_empty() {
            enum_lines.push(format!("\"{domain}\" : {}", listed.join(", ")));
        }
    }

    let examples: Vec<String> = bank
        .normalization
        .iter()
        .map(|ex| format!("Input: {}\nNormalized: {}", ex.input, ex.output))
        .collect();

    let mut vars = Vars::new();
    vars.insert("enums", Some(enum_lines.join("\n")));
    vars.insert("raw_state", Some(raw_state.trim().to_string()));
    assemble(templates, "normalization", vars, examples).map(NormalizationPrompt::Prompt)
}

// ---------------------------------------------------------------------------
// Direct prompts: ACD, DAG, RG, naive DST
// ---------------------------------------------------------------------------

/// API-call detection prompt. `yes_token`/`no_token` are the language's
/// canonical answer surfaces used to render example answers.
pub fn render_acd(
    ctx: &PromptContext,
    bank: &FewShotBank,
    templates: &TemplateSet,
    yes_token: &str,
    no_token: &str,
) -> Result<String, PromptError> {
    check_language(bank, ctx)?;
    if bank.acd.is_empty() {
        return Err(PromptError::EmptyBank("acd"));
    }
    let cue = templates.answer_cue("acd")?.to_string();
    let mut examples = Vec::new();
    for ex in &bank.acd {
        let block = example_block(templates, &ex.context)?;
        let answer = if ex.api_call { yes_token } else { no_token };
        examples.push(format!("{block}\n{cue} {answer}"));
    }
    let mut vars = Vars::new();
    vars.insert("input", Some(context_block(templates, ctx)?));
    assemble(templates, "acd", vars, examples)
}

fn result_section(result: Option<&str>) -> Option<String> {
    result.map(|text| format!("<result>\n    {text}\n</result>"))
}

fn dag_block(
    templates: &TemplateSet,
    state: &str,
    acts_2: Option<String>,
    acts_1: Option<String>,
    user: &str,
    api_result: Option<&str>,
) -> Result<String, PromptError> {
    let mut vars = block_vars(state, acts_2, acts_1, user);
    vars.insert("result_section", result_section(api_result));
    templates.render("dag_block", &vars)
}

/// Act-generation prompt. The input carries the gold API result verbatim
/// when present.
pub fn render_dag(
    ctx: &PromptContext,
    bank: &FewShotBank,
    templates: &TemplateSet,
) -> Result<String, PromptError> {
    check_language(bank, ctx)?;
    if bank.dag.is_empty() {
        return Err(PromptError::EmptyBank("dag"));
    }
    let cue = templates.answer_cue("dag")?.to_string();
    let mut examples = Vec::new();
    for ex in &bank.dag {
        let acts: Vec<&String> = ex.context.acts.iter().filter(|a| !a.trim().is_empty()).collect();
        let (acts_2, acts_1) = match acts.as_slice() {
            [] => (None, None),
            [latest] => (None, Some((*latest).clone())),
            [older, latest, ..] => (Some((*older).clone()), Some((*latest).clone())),
        };
        let block = dag_block(
            templates,
            &ex.context.state,
            acts_2,
            acts_1,
            &ex.context.user,
            ex.api_result.as_deref(),
        )?;
        examples.push(format!("{block}\n{cue} {}", ex.output));
    }
    let (acts_2, acts_1) = ctx.acts_pair();
    let input = dag_block(
        templates,
        &ctx.state,
        acts_2,
        acts_1,
        &ctx.user_utterance,
        ctx.api_result.as_deref(),
    )?;
    let mut vars = Vars::new();
    vars.insert("input", Some(input));
    assemble(templates, "dag", vars, examples)
}

/// Response-generation prompt: the acts to verbalize plus the history.
pub fn render_rg(
    acts_to_verbalize: &str,
    ctx: &PromptContext,
    bank: &FewShotBank,
    templates: &TemplateSet,
) -> Result<String, PromptError> {
    check_language(bank, ctx)?;
    if bank.rg.is_empty() {
        return Err(PromptError::EmptyBank("rg"));
    }
    let cue = templates.answer_cue("rg")?.to_string();
    let render_block = |acts: &str, history: &ExampleContext| -> Result<String, PromptError> {
        let filtered: Vec<&String> = history.acts.iter().filter(|a| !a.trim().is_empty()).collect();
        let (acts_2, acts_1) = match filtered.as_slice() {
            [] => (None, None),
            [latest] => (None, Some((*latest).clone())),
            [older, latest, ..] => (Some((*older).clone()), Some((*latest).clone())),
        };
        let mut vars = Vars::new();
        vars.insert("acts", Some(acts.to_string()));
        vars.insert("acts_2", acts_2);
        vars.insert("acts_1", acts_1);
        vars.insert("user", Some(history.user.clone()));
        templates.render("rg_block", &vars)
    };

    let mut examples = Vec::new();
    for ex in &bank.rg {
        let block = render_block(&ex.acts_to_verbalize, &ex.context)?;
        examples.push(format!("{block}\n{cue} {}", ex.response));
    }
    let input_ctx = ExampleContext {
        state: ctx.state.clone(),
        acts: ctx.prev_acts.clone(),
        user: ctx.user_utterance.clone(),
        language: None,
    };
    let input = render_block(acts_to_verbalize, &input_ctx)?;
    let mut vars = Vars::new();
    vars.insert("input", Some(input));
    assemble(templates, "rg", vars, examples)
}

/// Naive single-prompt DST baseline: no schema section, no normalization
/// stage; the state-generation examples flattened across domains.
pub fn render_naive_dst(
    ctx: &PromptContext,
    bank: &FewShotBank,
    templates: &TemplateSet,
) -> Result<String, PromptError> {
    check_language(bank, ctx)?;
    let cue = templates.answer_cue("naive_dst")?.to_string();
    let mut examples = Vec::new();
    for domain_examples in bank.state_generation.values() {
        for ex in domain_examples {
            let block = example_block(templates, &ex.context)?;
            examples.push(format!("{block}\n{cue} {}", ex.output));
        }
    }
    if examples.is_empty() {
        return Err(PromptError::EmptyBank("state_generation"));
    }
    let mut vars = Vars::new();
    vars.insert("input", Some(context_block(templates, ctx)?));
    assemble(templates, "naive_dst", vars, examples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{DomainSelectionExample, NormalizationExample, StateGenerationExample};
    use crate::lang::Language;
    use crate::ontology::Ontology;

    fn ontology() -> (tempfile::TempDir, Ontology) {
        let dir = tempfile::tempdir().unwrap();
        let body = r#"
format_version = 1
language = "en"

[[domain]]
name = "movie"

  [[domain.slot]]
  name = "title"
  kind = "free"

  [[domain.slot]]
  name = "type"
  kind = "enumerated"
  values = ["comedy", "action"]

[[domain]]
name = "tv"

  [[domain.slot]]
  name = "title"
  kind = "free"

  [[domain.slot]]
  name = "type"
  kind = "enumerated"
  values = ["comedy", "crime", "action", "sci-fi", "romantic"]

  [[domain.slot]]
  name = "production_country_or_area"
  kind = "enumerated"
  values = ["Taiwan", "China", "America", "Japan", "Korea"]
"#;
        let path = dir.path().join("en.toml");
        std::fs::write(&path, body).unwrap();
        let ont = Ontology::load(&path, Language::En).unwrap();
        (dir, ont)
    }

    fn bank() -> FewShotBank {
        let ctx = |state: &str, user: &str| ExampleContext {
            state: state.to_string(),
            acts: vec![],
            user: user.to_string(),
            language: None,
        };
        FewShotBank {
            language: Language::En,
            domain_selection: vec![
                DomainSelectionExample {
                    context: ctx("null", "Hi, can you recommend some fascinating Japanese TV shows?"),
                    domains: vec!["tv".to_string()],
                },
                DomainSelectionExample {
                    context: ctx("null", "Any good comedy movies?"),
                    domains: vec!["movie".to_string()],
                },
            ],
            state_generation: [
                (
                    "tv".to_string(),
                    vec![StateGenerationExample {
                        context: ctx("null", "Hi, can you recommend some fascinating Japanese TV shows?"),
                        output: "( tv ) production_country_or_area equal_to \" Japanese TV show \"".to_string(),
                    }],
                ),
                (
                    "movie".to_string(),
                    vec![StateGenerationExample {
                        context: ctx("null", "Any good comedy movies?"),
                        output: "( movie ) type equal_to \" comedy \"".to_string(),
                    }],
                ),
            ]
            .into_iter()
            .collect(),
            normalization: vec![NormalizationExample {
                input: "( tv ) production_country_or_area equal_to \" United States \" , type equal_to \" science fiction TV show \"".to_string(),
                output: "( tv ) production_country_or_area equal_to \" America \" , type equal_to \" sci-fi \"".to_string(),
                language: None,
            }],
            acd: vec![crate::data::ApiCallExample {
                context: ctx("( tv ) type equal_to \" comedy \"", "Find me one."),
                api_call: true,
            }],
            dag: vec![crate::data::ActGenerationExample {
                context: ctx("( tv ) type equal_to \" comedy \"", "Find me one."),
                api_result: Some("title: Friends".to_string()),
                output: "( tv ) recommend title equal_to \" Friends \"".to_string(),
            }],
            rg: vec![crate::data::ResponseExample {
                context: ctx("null", "Find me one."),
                acts_to_verbalize: "( tv ) recommend title equal_to \" Friends \"".to_string(),
                response: "How about Friends?".to_string(),
            }],
        }
    }

    fn dst_ctx() -> PromptContext {
        PromptContext {
            language: Language::En,
            state: "null".to_string(),
            prev_acts: vec![],
            user_utterance: "Hi, can you recommend some fascinating Japanese TV shows?".to_string(),
            api_result: None,
        }
    }

    #[test]
    fn domain_selection_prompt_shape() {
        let (_d, ont) = ontology();
        let templates = TemplateSet::bundled();
        let prompt = render_domain_selection(&dst_ctx(), &bank(), &ont, &templates).unwrap();
        assert!(prompt.starts_with("Similar to the examples below, retrieve all the relevant domains"));
        assert!(prompt.contains("movie, tv."));
        assert!(prompt.contains("Domain(s): tv\n"));
        assert!(prompt.ends_with("Domain(s):"));
        // absent act lines are omitted, not rendered as placeholders
        assert!(!prompt.contains("{{"));
        assert!(!prompt.contains("Agent acts:"));
        // deterministic
        let again = render_domain_selection(&dst_ctx(), &bank(), &ont, &templates).unwrap();
        assert_eq!(prompt, again);
    }

    #[test]
    fn context_acts_render_when_present() {
        let (_d, ont) = ontology();
        let templates = TemplateSet::bundled();
        let mut ctx = dst_ctx();
        ctx.prev_acts = vec![
            "( tv ) inform Douban_score equal_to \" 9.1 \"".to_string(),
            "( tv ) inform director equal_to \" Nobuhiro Doi \"".to_string(),
        ];
        let prompt = render_domain_selection(&ctx, &bank(), &ont, &templates).unwrap();
        assert!(prompt.contains("    Agent acts: ( tv ) inform Douban_score equal_to \" 9.1 \"\n"));
        assert!(prompt.contains("    Agent acts: ( tv ) inform director equal_to \" Nobuhiro Doi \"\n"));
    }

    #[test]
    fn state_generation_includes_only_selected_schemas() {
        let (_d, ont) = ontology();
        let templates = TemplateSet::bundled();
        let prompt = render_state_generation(
            &dst_ctx(),
            &["tv".to_string()],
            &ont,
            &bank(),
            &templates,
        )
        .unwrap();
        assert!(prompt.contains("tv: title, type, production_country_or_area"));
        assert!(!prompt.contains("movie: "));
        assert!(prompt.contains("Output: ( tv ) production_country_or_area equal_to \" Japanese TV show \""));
        assert!(prompt.ends_with("Output:"));
    }

    #[test]
    fn state_generation_orders_domains_sorted() {
        let (_d, ont) = ontology();
        let templates = TemplateSet::bundled();
        let prompt = render_state_generation(
            &dst_ctx(),
            &["tv".to_string(), "movie".to_string()],
            &ont,
            &bank(),
            &templates,
        )
        .unwrap();
        let movie_at = prompt.find("movie: title, type").unwrap();
        let tv_at = prompt.find("tv: title, type").unwrap();
        assert!(movie_at < tv_at);
        // examples grouped per domain in the same order
        let movie_ex = prompt.find("( movie ) type equal_to").unwrap();
        let tv_ex = prompt.find("( tv ) production_country_or_area equal_to").unwrap();
        assert!(movie_ex < tv_ex);
    }

    #[test]
    fn state_generation_rejects_empty_or_unknown_domains() {
        let (_d, ont) = ontology();
        let templates = TemplateSet::bundled();
        assert!(matches!(
            render_state_generation(&dst_ctx(), &[], &ont, &bank(), &templates),
            Err(PromptError::NoDomains)
        ));
        assert!(matches!(
            render_state_generation(&dst_ctx(), &["banana".to_string()], &ont, &bank(), &templates),
            Err(PromptError::UnknownDomain(_))
        ));
    }

    #[test]
    fn normalization_renders_enum_blocks() {
        let (_d, ont) = ontology();
        let templates = TemplateSet::bundled();
        let raw = "( tv ) type equal_to \" science fiction TV show \"";
        let rendered = render_normalization(
            raw,
            &["tv".to_string()],
            &ont,
            &bank(),
            &templates,
            &ParserConfig::default(),
        )
        .unwrap();
        let NormalizationPrompt::Prompt(prompt) = rendered else {
            panic!("expected a prompt");
        };
        assert!(prompt.contains("\"tv\" : \"type\" : [\"comedy\", \"crime\", \"action\", \"sci-fi\", \"romantic\"]"));
        assert!(prompt.contains("Input: ( tv ) production_country_or_area equal_to \" United States \""));
        assert!(prompt.contains("Normalized: ( tv ) production_country_or_area equal_to \" America \""));
        assert!(prompt.contains(&format!("Input: {raw}")));
        assert!(prompt.ends_with("Output:"));
    }

    #[test]
    fn normalization_skips_when_no_enumerated_slot_present() {
        let (_d, ont) = ontology();
        let templates = TemplateSet::bundled();
        let raw = "( tv ) title equal_to \" Lucky Seven \"";
        let rendered = render_normalization(
            raw,
            &["tv".to_string()],
            &ont,
            &bank(),
            &templates,
            &ParserConfig::default(),
        )
        .unwrap();
        assert_eq!(rendered, NormalizationPrompt::Skip);
    }

    #[test]
    fn acd_ends_with_answer_cue() {
        let templates = TemplateSet::bundled();
        let mut ctx = dst_ctx();
        ctx.state = "( tv ) type equal_to \" comedy \"".to_string();
        let prompt = render_acd(&ctx, &bank(), &templates, "yes", "no").unwrap();
        assert!(prompt.contains("API call needed: yes"));
        assert!(prompt.ends_with("API call needed:"));
    }

    #[test]
    fn dag_includes_api_result_verbatim() {
        let templates = TemplateSet::bundled();
        let mut ctx = dst_ctx();
        ctx.state = "( tv ) type equal_to \" comedy \"".to_string();
        ctx.api_result = Some("title: Lucky Seven; Douban_score: 9.1".to_string());
        let prompt = render_dag(&ctx, &bank(), &templates).unwrap();
        assert!(prompt.contains("<result>\n    title: Lucky Seven; Douban_score: 9.1\n</result>"));
        assert!(prompt.ends_with("Agent acts:"));
        assert_eq!(prompt.matches("<result>").count(), 2);

        // absent result omits the input's section; the example keeps its own
        ctx.api_result = None;
        let prompt = render_dag(&ctx, &bank(), &templates).unwrap();
        assert_eq!(prompt.matches("<result>").count(), 1);
        assert!(!prompt.contains("Lucky Seven; Douban_score"));
    }

    #[test]
    fn rg_input_contains_acts_to_verbalize() {
        let templates = TemplateSet::bundled();
        let acts = "( tv ) recommend title equal_to \" Lucky Seven \"";
        let prompt = render_rg(acts, &dst_ctx(), &bank(), &templates).unwrap();
        assert!(prompt.contains(&format!("<acts>\n    {acts}\n</acts>")));
        assert!(prompt.ends_with("Response:"));
    }

    #[test]
    fn naive_prompt_has_no_schema_section() {
        let templates = TemplateSet::bundled();
        let prompt = render_naive_dst(&dst_ctx(), &bank(), &templates).unwrap();
        assert!(!prompt.contains("tv: title"));
        assert!(!prompt.contains("A list of possible slots"));
        // flattened examples from both domains are present
        assert!(prompt.contains("( movie ) type equal_to \" comedy \""));
        assert!(prompt.contains("( tv ) production_country_or_area equal_to \" Japanese TV show \""));
        assert!(prompt.ends_with("Output:"));
        let again = render_naive_dst(&dst_ctx(), &bank(), &templates).unwrap();
        assert_eq!(prompt, again);
    }

    #[test]
    fn language_mismatch_is_rejected() {
        let (_d, ont) = ontology();
        let templates = TemplateSet::bundled();
        let mut ctx = dst_ctx();
        ctx.language = Language::Zh;
        assert!(matches!(
            render_domain_selection(&ctx, &bank(), &ont, &templates),
            Err(PromptError::LanguageMismatch { .. })
        ));
    }

    #[test]
    fn format_version_tracks_template_bytes() {
        let bundled = TemplateSet::bundled();
        let dir = tempfile::tempdir().unwrap();
        for name in ASSET_NAMES {
            let body = bundled.asset(name).unwrap();
            std::fs::write(dir.path().join(format!("{name}.txt")), body).unwrap();
        }
        let loaded = TemplateSet::from_dir(dir.path()).unwrap();
        assert_eq!(loaded.format_version(), bundled.format_version());

        std::fs::write(dir.path().join("rg.txt"), "changed\n\n{{ examples }}\n\n{{ input }}\nResponse:").unwrap();
        let changed = TemplateSet::from_dir(dir.path()).unwrap();
        assert_ne!(changed.format_version(), bundled.format_version());
    }
}
