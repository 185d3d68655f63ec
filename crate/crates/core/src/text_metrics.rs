//! Target-language content in generated text.
//!
//! Each document gets a target-character ratio (whitespace excluded) and a
//! flag; the suppression rate of a corpus is the fraction of unflagged docs.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::unicode_ranges::UnicodeRangeSet;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlagRule {
    /// Flag any document with at least one target codepoint.
    #[default]
    AnyTargetChar,
    /// Flag documents whose ratio strictly exceeds the threshold.
    RatioAbove(f64),
}

impl FlagRule {
    fn flags(&self, target_count: usize, ratio: f64) -> bool {
        match *self {
            FlagRule::AnyTargetChar => target_count > 0,
            FlagRule::RatioAbove(threshold) => ratio > threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocMetric {
    pub id: String,
    pub ratio: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusReport {
    pub n_docs: usize,
    pub flagged_docs: usize,
    pub suppression_rate: f64,
    pub flag_rule: FlagRule,
    pub docs: Vec<DocMetric>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// A document to score.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
}

pub fn doc_metrics(text: &str, ranges: &UnicodeRangeSet, rule: FlagRule) -> (f64, bool) {
    let stats = ranges.target_char_stats(text);
    let ratio = if stats.considered_count == 0 {
        0.0
    } else {
        stats.target_count as f64 / stats.considered_count as f64
    };
    (ratio, rule.flags(stats.target_count, ratio))
}

pub fn corpus_report<'a, I>(docs: I, ranges: &UnicodeRangeSet, rule: FlagRule) -> CorpusReport
where
    I: IntoIterator<Item = &'a Document>,
{
    let docs: Vec<DocMetric> = docs
        .into_iter()
        .map(|d| {
            let (ratio, flagged) = doc_metrics(&d.text, ranges, rule);
            DocMetric {
                id: d.id.clone(),
                ratio,
                flagged,
            }
        })
        .collect();
    let n_docs = docs.len();
    let flagged_docs = docs.iter().filter(|d| d.flagged).count();
    let mut warnings = Vec::new();
    let suppression_rate = if n_docs == 0 {
        warnings.push("empty corpus: suppression rate reported as 1.0".to_string());
        1.0
    } else {
        (n_docs - flagged_docs) as f64 / n_docs as f64
    };
    CorpusReport {
        n_docs,
        flagged_docs,
        suppression_rate,
        flag_rule: rule,
        docs,
        warnings,
    }
}

#[derive(Deserialize)]
struct NdjsonDoc {
    #[serde(default)]
    id: Option<serde_json::Value>,
    text: String,
}

/// Reads one `{id, text}` object per line. Blank lines are skipped; a
/// missing id defaults to the line's document index.
pub fn read_ndjson<R: BufRead>(reader: R) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    for (line_no, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(format!("<input line {}>", line_no + 1), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let index = docs.len();
        let doc: NdjsonDoc = serde_json::from_str(&line).map_err(|e| {
            Error::Validation(format!("document {index} (line {}): {e}", line_no + 1))
        })?;
        let id = match doc.id {
            None | Some(serde_json::Value::Null) => index.to_string(),
            Some(serde_json::Value::String(s)) => s,
            Some(other) => other.to_string(),
        };
        docs.push(Document { id, text: doc.text });
    }
    Ok(docs)
}

/// One document per line; ids are line indices.
pub fn read_plain<R: BufRead>(reader: R) -> Result<Vec<Document>> {
    reader
        .lines()
        .enumerate()
        .map(|(i, line)| {
            let text = line.map_err(|e| Error::io(format!("<input line {}>", i + 1), e))?;
            Ok(Document {
                id: i.to_string(),
                text,
            })
        })
        .collect()
}

/// CSV with header `id,ratio,flagged`.
pub fn write_docs_csv<W: Write>(mut out: W, report: &CorpusReport) -> std::io::Result<()> {
    writeln!(out, "id,ratio,flagged")?;
    for d in &report.docs {
        let id = if d.id.contains([',', '"', '\n']) {
            format!("\"{}\"", d.id.replace('"', "\"\""))
        } else {
            d.id.clone()
        };
        writeln!(out, "{id},{},{}", d.ratio, d.flagged)?;
    }
    Ok(())
}
