//! Hierarchical-prompting pipeline and turn-by-turn evaluation harness for
//! multilingual task-oriented dialogue.
//!
//! The library covers the full loop: a canonical textual grammar for dialogue
//! states and agent acts ([`state`]), per-language schemas ([`ontology`]),
//! dataset ingestion ([`data`]), prompt rendering ([`prompts`]), a cached
//! provider layer ([`provider`]), the four per-turn subtasks ([`pipeline`]),
//! scoring ([`metrics`]) and run orchestration ([`harness`]).

pub mod data;
pub mod harness;
pub mod lang;
pub mod metrics;
pub mod ontology;
pub mod pipeline;
pub mod prompts;
pub mod provider;
pub mod replay;
pub mod state;

pub use lang::Language;
