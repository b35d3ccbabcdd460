//! Report rendering and the human-annotation worksheet bridge.
//!
//! The result table mirrors the standard layout: DST Acc., API Acc., DA
//! Acc., RG BLEU, RG Avg. Length — one row per language, percentages with
//! one decimal place and average length with two.

use std::str::FromStr;

use super::{AblationTable, HarnessError, MismatchRecord};
use crate::metrics::{adjusted_accuracy, ErrorClass, MetricsReport, MismatchCategory};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(format!("unknown report format `{other}`")),
        }
    }
}

const COLUMNS: [&str; 5] = ["DST Acc.", "API Acc.", "DA Acc.", "RG BLEU", "RG Avg. Length"];

fn column_values(report: &MetricsReport) -> [Option<String>; 5] {
    [
        report.dst_acc.map(|v| format!("{v:.1}")),
        report.api_acc.map(|v| format!("{v:.1}")),
        report.da_acc.map(|v| format!("{v:.1}")),
        report.rg_bleu.map(|v| format!("{v:.1}")),
        report.rg_avg_len.map(|v| format!("{v:.2}")),
    ]
}

/// Which of the five columns any report populates.
fn active_columns(reports: &[MetricsReport]) -> Vec<usize> {
    (0..COLUMNS.len())
        .filter(|&i| reports.iter().any(|r| column_values(r)[i].is_some()))
        .collect()
}

/// Render the per-language result table. Markdown and CSV include only the
/// columns of subtasks that actually ran; JSON round-trips the full reports.
pub fn render_report(reports: &[MetricsReport], format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => {
            serde_json::to_string_pretty(reports).expect("reports serialize") + "\n"
        }
        ReportFormat::Markdown => {
            let active = active_columns(reports);
            let mut out = String::new();
            out.push_str("| Language | n |");
            for &i in &active {
                out.push_str(&format!(" {} |", COLUMNS[i]));
            }
            out.push('\n');
            out.push_str("|---|---|");
            for _ in &active {
                out.push_str("---|");
            }
            out.push('\n');
            for report in reports {
                let values = column_values(report);
                out.push_str(&format!("| {} | {} |", report.language, report.n_turns));
                for &i in &active {
                    out.push_str(&format!(" {} |", values[i].as_deref().unwrap_or("-")));
                }
                out.push('\n');
            }
            out
        }
        ReportFormat::Csv => {
            let active = active_columns(reports);
            let mut out = String::from("language,n_turns");
            for &i in &active {
                out.push(',');
                out.push_str(COLUMNS[i]);
            }
            out.push('\n');
            for report in reports {
                let values = column_values(report);
                out.push_str(&format!("{},{}", report.language, report.n_turns));
                for &i in &active {
                    out.push(',');
                    out.push_str(values[i].as_deref().unwrap_or(""));
                }
                out.push('\n');
            }
            out
        }
    }
}

/// Ablation table in the result-table style: one row per mode, one column
/// per language, DST exact match only; `n/a` for inapplicable cells.
pub fn render_ablation(table: &AblationTable) -> String {
    let mut out = String::from("| DST variant |");
    for lang in &table.languages {
        out.push_str(&format!(" {lang} |"));
    }
    out.push_str("\n|---|");
    for _ in &table.languages {
        out.push_str("---|");
    }
    out.push('\n');
    for (mode, cells) in &table.rows {
        out.push_str(&format!("| {} |", mode.label()));
        for cell in cells {
            match cell {
                Some(v) => out.push_str(&format!(" {v:.1} |")),
                None => out.push_str(" n/a |"),
            }
        }
        out.push('\n');
    }
    out
}

// ---------------------------------------------------------------------------
// Annotation worksheet
// ---------------------------------------------------------------------------

const WORKSHEET_HEADER: &str = "# id\tlanguage\tpredicted\tgold\tmachine_class\thuman_category";

fn sanitize(field: &str) -> String {
    field.replace(['\t', '\n', '\r'], " ")
}

/// One mismatch per line, tab-separated, with an empty human-category column
/// to fill in. Categories: MultipleCorrectAnswers, PoorGoldLabel,
/// PoorAnnotationSchema, Error (optionally Error:Domain / Error:Slot /
/// Error:SlotValue / Error:PostProcessing).
pub fn export_worksheet(mismatches: &[MismatchRecord]) -> String {
    let mut out = String::from(WORKSHEET_HEADER);
    out.push('\n');
    for m in mismatches {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t\n",
            sanitize(&m.id),
            m.language,
            sanitize(&m.predicted),
            sanitize(&m.gold),
            m.class.label()
        ));
    }
    out
}

fn parse_category(text: &str, line: usize) -> Result<(MismatchCategory, Option<ErrorClass>), HarnessError> {
    let (head, sub) = match text.split_once(':') {
        Some((h, s)) => (h.trim(), Some(s.trim())),
        None => (text.trim(), None),
    };
    let category = match head {
        "MultipleCorrectAnswers" => MismatchCategory::MultipleCorrectAnswers,
        "PoorGoldLabel" => MismatchCategory::PoorGoldLabel,
        "PoorAnnotationSchema" => MismatchCategory::PoorAnnotationSchema,
        "Error" => MismatchCategory::Error,
        other => {
            return Err(HarnessError::UnknownCategory {
                line,
                category: other.to_string(),
            })
        }
    };
    let error_sub = match (category, sub) {
        (MismatchCategory::Error, Some(s)) => Some(s.parse::<ErrorClass>().map_err(|_| {
            HarnessError::UnknownCategory {
                line,
                category: text.to_string(),
            }
        })?),
        (_, Some(_)) => {
            return Err(HarnessError::UnknownCategory {
                line,
                category: text.to_string(),
            })
        }
        _ => None,
    };
    Ok((category, error_sub))
}

/// Cumulative adjusted DST accuracy from an annotated worksheet.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjustedTable {
    pub base_acc: f64,
    pub n_turns: usize,
    pub rows: Vec<AdjustedRow>,
    pub error_pct: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdjustedRow {
    pub category: MismatchCategory,
    pub percentage: f64,
    pub cumulative_acc: f64,
}

/// Count annotated categories, convert to percentages over the report's turn
/// count, and fold them into cumulative accuracies in the fixed row order.
/// Unannotated lines contribute nothing.
pub fn apply_annotations(report: &MetricsReport, worksheet: &str) -> Result<AdjustedTable, HarnessError> {
    let base_acc = report.dst_acc.ok_or_else(|| HarnessError::Config(
        "report has no DST accuracy to adjust".to_string(),
    ))?;
    if report.n_turns == 0 {
        return Err(HarnessError::Config("report covers zero turns".to_string()));
    }

    let mut counts: [usize; 3] = [0; 3];
    let mut error_count = 0usize;
    for (i, line) in worksheet.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 6 {
            return Err(HarnessError::Worksheet {
                line: lineno,
                message: format!("expected 6 tab-separated columns, got {}", fields.len()),
            });
        }
        let category_text = fields[5].trim();
        if category_text.is_empty() {
            continue;
        }
        let (category, _sub) = parse_category(category_text, lineno)?;
        match category {
            MismatchCategory::MultipleCorrectAnswers => counts[0] += 1,
            MismatchCategory::PoorGoldLabel => counts[1] += 1,
            MismatchCategory::PoorAnnotationSchema => counts[2] += 1,
            MismatchCategory::Error => error_count += 1,
        }
    }

    let pct = |count: usize| 100.0 * count as f64 / report.n_turns as f64;
    let percentages: Vec<f64> = counts.iter().map(|&c| pct(c)).collect();
    let cumulative = adjusted_accuracy(base_acc, &percentages)
        .map_err(|e| HarnessError::Config(e.to_string()))?;

    Ok(AdjustedTable {
        base_acc,
        n_turns: report.n_turns,
        rows: MismatchCategory::ADJUSTABLE
            .iter()
            .zip(percentages.iter().zip(cumulative.iter()))
            .map(|(category, (&percentage, &cumulative_acc))| AdjustedRow {
                category: *category,
                percentage,
                cumulative_acc,
            })
            .collect(),
        error_pct: pct(error_count),
    })
}

/// Markdown rendering of the cumulative-accuracy table.
pub fn render_adjusted(table: &AdjustedTable) -> String {
    let mut out = String::from("| Cause of mismatch | % | Acc. |\n|---|---|---|\n");
    out.push_str(&format!("| (measured) | | {:.1} |\n", table.base_acc));
    for row in &table.rows {
        out.push_str(&format!(
            "| {} | {:.1} | {:.1} |\n",
            match row.category {
                MismatchCategory::MultipleCorrectAnswers => "Multiple Correct Answers",
                MismatchCategory::PoorGoldLabel => "Poor Gold Label",
                MismatchCategory::PoorAnnotationSchema => "Poor Annotation Schema",
                MismatchCategory::Error => "Error",
            },
            row.percentage,
            row.cumulative_acc
        ));
    }
    out.push_str(&format!("| Error | {:.1} | |\n", table.error_pct));
    out
}
