//! Build deterministic mock scripts for a corpus.
//!
//! A replay script maps every prompt the pipeline will render for a corpus
//! to a scripted response, keyed by prompt digest. The builder mirrors the
//! pipeline's staging — stage-2 prompts depend on the scripted stage-1
//! response, and the normalization prompt on the scripted stage-2 response —
//! so a compact per-turn response table is enough to drive full runs.
//!
//! This is how the bundled fixtures are produced and how users can freeze
//! regression corpora for their own datasets.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{FewShotBank, TurnRecord};
use crate::lang::Language;
use crate::ontology::Ontology;
use crate::pipeline::{parse_domain_response, truncate_at_blank_line, YesNoLexicon};
use crate::prompts::{
    render_acd, render_dag, render_domain_selection, render_naive_dst, render_normalization,
    render_rg, render_state_generation, NormalizationPrompt, PromptContext, PromptError,
    TemplateSet,
};
use crate::provider::{prompt_digest, ScriptEntry, ScriptFile};
use crate::state::{parse_state_with, serialize_state, ParserConfig};

/// Scripted responses for one turn, one per stage that should answer.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageResponses {
    pub dialogue_id: String,
    pub turn_index: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain_selection: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_generation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalization: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acd: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dag: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rg: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub naive: Option<String>,
}

/// Per-turn response table for one language.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseTable {
    pub language: Language,
    pub turns: Vec<StageResponses>,
}

impl ResponseTable {
    pub fn load(path: impl AsRef<Path>) -> Result<ResponseTable, BuildError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| BuildError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        serde_json::from_str(&text).map_err(|e| BuildError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn get(&self, dialogue_id: &str, turn_index: u32) -> Option<&StageResponses> {
        self.turns
            .iter()
            .find(|t| t.dialogue_id == dialogue_id && t.turn_index == turn_index)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BuildError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("turn {turn_id}: no scripted response for stage `{stage}`")]
    MissingResponse { turn_id: String, stage: &'static str },
    #[error("turn {turn_id}: prompt error: {source}")]
    Prompt {
        turn_id: String,
        #[source]
        source: PromptError,
    },
    #[error("turn {turn_id}: no response table entry")]
    MissingTurn { turn_id: String },
}

/// Resources the builder shares with the pipeline.
pub struct ScriptBuilder<'a> {
    pub ontology: &'a Ontology,
    pub bank: &'a FewShotBank,
    pub templates: &'a TemplateSet,
    pub parser: &'a ParserConfig,
    pub lexicon: &'a YesNoLexicon,
}

impl<'a> ScriptBuilder<'a> {
    /// Render every prompt the pipeline will issue for `turns` and pair it
    /// with the table's response. Stage-1/2 entries cover the hierarchical
    /// modes; `naive` entries are added when the table provides them.
    pub fn build(&self, turns: &[TurnRecord], table: &ResponseTable) -> Result<ScriptFile, BuildError> {
        let mut entries: BTreeMap<String, String> = BTreeMap::new();
        for turn in turns {
            if turn.language != table.language {
                continue;
            }
            let turn_id = turn.turn_id();
            let responses = table
                .get(&turn.dialogue_id, turn.turn_index)
                .ok_or_else(|| BuildError::MissingTurn {
                    turn_id: turn_id.clone(),
                })?;
            self.add_turn(turn, responses, &mut entries)?;
        }
        Ok(ScriptFile {
            strict: true,
            entries: entries
                .into_iter()
                .map(|(digest, response)| ScriptEntry {
                    digest: Some(digest),
                    prompt: None,
                    response,
                })
                .collect(),
            fallback: Vec::new(),
        })
    }

    fn add_turn(
        &self,
        turn: &TurnRecord,
        responses: &StageResponses,
        entries: &mut BTreeMap<String, String>,
    ) -> Result<(), BuildError> {
        let turn_id = turn.turn_id();
        let prompt_err = |source| BuildError::Prompt {
            turn_id: turn_id.clone(),
            source,
        };
        let need = |stage: &'static str| BuildError::MissingResponse {
            turn_id: turn_id.clone(),
            stage,
        };

        let dst_ctx = PromptContext {
            language: turn.language,
            state: turn.prev_gold_state.clone(),
            prev_acts: turn.prev_agent_acts.clone(),
            user_utterance: turn.user_utterance.clone(),
            api_result: None,
        };

        // hierarchical stages, in pipeline order
        if let Some(dsel) = &responses.domain_selection {
            let prompt = render_domain_selection(&dst_ctx, self.bank, self.ontology, self.templates)
                .map_err(prompt_err)?;
            entries.insert(prompt_digest(&prompt), dsel.clone());

            if let Ok(domains) = parse_domain_response(dsel, self.ontology) {
                let sgen = responses.state_generation.as_ref().ok_or_else(|| need("state_generation"))?;
                let prompt =
                    render_state_generation(&dst_ctx, &domains, self.ontology, self.bank, self.templates)
                        .map_err(prompt_err)?;
                entries.insert(prompt_digest(&prompt), sgen.clone());

                let raw = truncate_at_blank_line(sgen);
                if parse_state_with(raw, self.parser).is_ok() {
                    let rendered = render_normalization(
                        raw,
                        &domains,
                        self.ontology,
                        self.bank,
                        self.templates,
                        self.parser,
                    )
                    .map_err(prompt_err)?;
                    if let NormalizationPrompt::Prompt(prompt) = rendered {
                        let norm = responses.normalization.as_ref().ok_or_else(|| need("normalization"))?;
                        entries.insert(prompt_digest(&prompt), norm.clone());
                    }
                }
            }
        }

        if let Some(naive) = &responses.naive {
            let prompt = render_naive_dst(&dst_ctx, self.bank, self.templates).map_err(prompt_err)?;
            entries.insert(prompt_digest(&prompt), naive.clone());
        }

        if let Some(acd) = &responses.acd {
            let ctx = PromptContext {
                state: turn.gold_state.clone(),
                ..dst_ctx.clone()
            };
            let (yes, no) = self.lexicon.canonical();
            let prompt = render_acd(&ctx, self.bank, self.templates, yes, no).map_err(prompt_err)?;
            entries.insert(prompt_digest(&prompt), acd.clone());
        }

        if let Some(dag) = &responses.dag {
            let ctx = PromptContext {
                state: turn.gold_state.clone(),
                api_result: turn.gold_api_result.clone(),
                ..dst_ctx.clone()
            };
            let prompt = render_dag(&ctx, self.bank, self.templates).map_err(prompt_err)?;
            entries.insert(prompt_digest(&prompt), dag.clone());
        }

        if let Some(rg) = &responses.rg {
            let ctx = PromptContext {
                state: turn.gold_state.clone(),
                ..dst_ctx.clone()
            };
            let prompt =
                render_rg(&turn.gold_agent_acts, &ctx, self.bank, self.templates).map_err(prompt_err)?;
            entries.insert(prompt_digest(&prompt), rg.clone());
        }

        Ok(())
    }

    /// A table that simulates a perfect model: every stage answers with the
    /// gold label. Domain selection falls back from the current to the
    /// previous gold state, then to `topical` (dialogue id -> domain) for
    /// turns whose states are both empty.
    pub fn perfect_table(
        &self,
        turns: &[TurnRecord],
        topical: &BTreeMap<String, String>,
    ) -> Result<ResponseTable, BuildError> {
        let mut rows = Vec::new();
        for turn in turns {
            let turn_id = turn.turn_id();
            let gold = parse_state_with(&turn.gold_state, self.parser).map_err(|_| {
                BuildError::MissingTurn {
                    turn_id: turn_id.clone(),
                }
            })?;
            let prev = parse_state_with(&turn.prev_gold_state, self.parser).map_err(|_| {
                BuildError::MissingTurn {
                    turn_id: turn_id.clone(),
                }
            })?;
            let mut domains: Vec<String> = gold.domains().map(|d| d.to_string()).collect();
            if domains.is_empty() {
                domains = prev.domains().map(|d| d.to_string()).collect();
            }
            if domains.is_empty() {
                let fallback = topical.get(&turn.dialogue_id).ok_or_else(|| BuildError::MissingResponse {
                    turn_id: turn_id.clone(),
                    stage: "domain_selection (no topical fallback)",
                })?;
                domains = vec![fallback.clone()];
            }
            let canonical_gold = serialize_state(&gold);
            let (yes, no) = self.lexicon.canonical();
            rows.push(StageResponses {
                dialogue_id: turn.dialogue_id.clone(),
                turn_index: turn.turn_index,
                domain_selection: Some(format!("Domain(s): {}", domains.join(", "))),
                state_generation: Some(canonical_gold.clone()),
                normalization: Some(canonical_gold.clone()),
                acd: Some(if turn.gold_api_call { yes.to_string() } else { no.to_string() }),
                dag: Some(turn.gold_agent_acts.clone()),
                rg: Some(turn.gold_response.clone()),
                naive: Some(canonical_gold),
            });
        }
        Ok(ResponseTable {
            language: turns.first().map(|t| t.language).unwrap_or(Language::En),
            turns: rows,
        })
    }
}
