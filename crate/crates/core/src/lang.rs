//! Language codes and tokenization rules shared by metrics and resources.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// The six languages covered by the dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Language {
    #[serde(rename = "zh")]
    Zh,
    #[serde(rename = "en")]
    En,
    #[serde(rename = "fr")]
    Fr,
    #[serde(rename = "hi")]
    Hi,
    #[serde(rename = "ko")]
    Ko,
    #[serde(rename = "en-hi")]
    EnHi,
}

impl Language {
    pub const ALL: [Language; 6] = [
        Language::Zh,
        Language::En,
        Language::Fr,
        Language::Hi,
        Language::Ko,
        Language::EnHi,
    ];

    pub fn code(&self) -> &'static str {
        match self {
            Language::Zh => "zh",
            Language::En => "en",
            Language::Fr => "fr",
            Language::Hi => "hi",
            Language::Ko => "ko",
            Language::EnHi => "en-hi",
        }
    }

    /// Chinese is tokenized per character; everything else on whitespace.
    pub fn tokenize(&self, text: &str) -> Vec<String> {
        match self {
            Language::Zh => text
                .chars()
                .filter(|c| !c.is_whitespace())
                .map(|c| c.to_string())
                .collect(),
            _ => text.split_whitespace().map(|t| t.to_string()).collect(),
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, thiserror::Error)]
#[error("unknown language code `{0}` (expected one of zh, en, fr, hi, ko, en-hi)")]
pub struct UnknownLanguage(pub String);

impl FromStr for Language {
    type Err = UnknownLanguage;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "zh" => Ok(Language::Zh),
            "en" => Ok(Language::En),
            "fr" => Ok(Language::Fr),
            "hi" => Ok(Language::Hi),
            "ko" => Ok(Language::Ko),
            "en-hi" => Ok(Language::EnHi),
            other => Err(UnknownLanguage(other.to_string())),
        }
    }
}
