//! Terminal REPL demo: runs the single-turn pipeline against a live provider
//! and threads its own predicted state and acts across the session. A
//! convenience tool for poking at prompts and providers; its outputs never
//! feed the evaluation metrics.

use std::io::{BufRead, Write};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Result};
use clap::Args;

use todeval::data::TurnRecord;
use todeval::harness::{EvalMode, Subtask};
use todeval::lang::Language;
use todeval::pipeline::Pipeline;

use crate::{CommonArgs, Resolved};

#[derive(Args)]
pub struct ChatArgs {
    /// Shared resource/provider flags; `--lang` selects the session language.
    #[command(flatten)]
    common: CommonArgs,
    /// Pipeline mode for the DST stage.
    #[arg(long)]
    mode: Option<EvalMode>,
}

pub fn run(args: ChatArgs) -> Result<ExitCode> {
    // `--split` is unused here but shared flag plumbing requires it; point
    // it at any turn file (the bundled corpus works).
    let resolved = Resolved::from(&args.common)?;
    let Some(language) = resolved.lang else {
        bail!("--lang is required for chat");
    };
    let mode = args.mode.unwrap_or(EvalMode::Full);
    let resources = resolved.resources(&[language])?;
    let provider = resolved.provider(resources.templates.format_version())?;
    let lang_res = resources.by_language.get(&language).expect("loaded above");
    let config = resolved.run_config(mode, [Subtask::Dst].into_iter().collect(), false);

    let pipeline = Pipeline {
        ontology: &lang_res.ontology,
        bank: &lang_res.bank,
        templates: &resources.templates,
        provider: &provider,
        lexicon: &lang_res.lexicon,
        parser: &resources.parser,
        model_id: &config.model_id,
        decoding: config.decoding,
    };
    if let Some(normalization) = mode.normalization() {
        pipeline.validate_mode(normalization).map_err(|e| anyhow!("{e}"))?;
    }

    let stdin = std::io::stdin();
    let mut state = "null".to_string();
    let mut prev_acts: Vec<String> = Vec::new();
    let mut turn_index = 0u32;

    println!("chat demo ({language}); type a user message, or :q to quit");
    loop {
        print!("> ");
        std::io::stdout().flush().ok();
        let mut line = String::new();
        if stdin.lock().read_line(&mut line)? == 0 {
            break;
        }
        let user = line.trim();
        if user.is_empty() {
            continue;
        }
        if user == ":q" || user == ":quit" {
            break;
        }

        let mut turn = TurnRecord {
            dialogue_id: "chat".to_string(),
            turn_index,
            language,
            user_utterance: user.to_string(),
            prev_agent_acts: prev_acts.clone(),
            prev_gold_state: state.clone(),
            gold_state: state.clone(),
            gold_api_call: false,
            gold_api_result: None,
            gold_agent_acts: String::new(),
            gold_response: String::new(),
        };

        let dst = match mode.normalization() {
            Some(normalization) => pipeline.run_dst(&turn, normalization),
            None => pipeline.run_naive_dst(&turn),
        };
        match &dst.canonical {
            Ok(new_state) => {
                state = todeval::state::serialize_state(new_state);
                println!("state: {state}");
            }
            Err(failure) => {
                println!("state unchanged ({})", failure.summary());
            }
        }

        // downstream stages consume the predicted state in this live demo
        turn.gold_state = state.clone();
        let acd = pipeline.run_acd(&turn);
        let api_call = acd.value.unwrap_or(false);
        println!("api call: {}", if api_call { "yes" } else { "no" });
        if api_call {
            println!("(no live database in the demo; acts are generated without results)");
        }

        let dag = pipeline.run_dag(&turn);
        let acts = dag.value.unwrap_or_default();
        if !acts.is_empty() {
            println!("acts: {acts}");
        }

        turn.gold_agent_acts = acts.clone();
        if !acts.is_empty() {
            let rg = pipeline.run_rg(&turn);
            if let Some(response) = rg.value {
                println!("agent: {response}");
            } else if let Some(err) = rg.error {
                println!("agent response failed: {err}");
            }
        }

        prev_acts.push(acts);
        if prev_acts.len() > 2 {
            prev_acts.remove(0);
        }
        prev_acts.retain(|a| !a.is_empty());
        turn_index += 1;
    }
    println!("bye");
    Ok(ExitCode::SUCCESS)
}
