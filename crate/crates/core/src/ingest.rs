//! Bug-report datasets: loading, deduplication and quality features.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use chrono::NaiveDate;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::BugReport;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: missing field `{field}`")]
    Schema { line: usize, field: &'static str },
    #[error("line {line}: duplicate report id `{id}`")]
    DuplicateId { line: usize, id: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Jsonl,
    Csv,
}

impl Format {
    pub fn from_path(path: &Path) -> Option<Format> {
        match path.extension()?.to_str()? {
            "jsonl" | "json" => Some(Format::Jsonl),
            "csv" => Some(Format::Csv),
            _ => None,
        }
    }
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "jsonl" => Ok(Format::Jsonl),
            "csv" => Ok(Format::Csv),
            other => Err(format!("unknown format `{other}` (expected jsonl or csv)")),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub reports: Vec<BugReport>,
    pub provenance: String,
}

impl Dataset {
    pub fn get(&self, id: &str) -> Option<&BugReport> {
        self.reports.iter().find(|r| r.id == id)
    }

    pub fn index(&self) -> HashMap<&str, &BugReport> {
        self.reports.iter().map(|r| (r.id.as_str(), r)).collect()
    }

    /// Report counts per project, sorted by project name.
    pub fn project_counts(&self) -> BTreeMap<&str, usize> {
        let mut counts = BTreeMap::new();
        for r in &self.reports {
            *counts.entry(r.project.as_str()).or_insert(0) += 1;
        }
        counts
    }
}

/// A record removed by deduplication.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DuplicateNote {
    pub removed_id: String,
    pub kept_id: String,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Loaded {
    pub dataset: Dataset,
    pub duplicates: Vec<DuplicateNote>,
}

#[derive(Debug, Deserialize)]
struct RawRecord {
    id: Option<String>,
    project: Option<String>,
    title: Option<String>,
    body: Option<String>,
    created_at: Option<String>,
    #[serde(default)]
    source_url: Option<String>,
}

impl RawRecord {
    fn into_report(self, line: usize) -> Result<BugReport, IngestError> {
        let id = require(self.id, line, "id")?;
        let project = require(self.project, line, "project")?;
        let title = require(self.title, line, "title")?;
        let body = require(self.body, line, "body")?;
        let created = require(self.created_at, line, "created_at")?;
        let created_at =
            NaiveDate::parse_from_str(created.trim(), "%Y-%m-%d").map_err(|e| IngestError::Parse {
                line,
                message: format!("created_at `{created}`: {e}"),
            })?;
        let source_url = self.source_url.filter(|u| !u.trim().is_empty());
        Ok(BugReport::new(id, project, title, body, created_at, source_url))
    }
}

fn require(value: Option<String>, line: usize, field: &'static str) -> Result<String, IngestError> {
    value.ok_or(IngestError::Schema { line, field })
}

/// Loads a dataset file and deduplicates it.
pub fn load_dataset(path: &Path, format: Format) -> Result<Loaded, IngestError> {
    let text = fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let records = match format {
        Format::Jsonl => parse_jsonl(&text)?,
        Format::Csv => parse_csv(&text)?,
    };
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let provenance = format!(
        "{} ({})",
        path.display(),
        match format {
            Format::Jsonl => "jsonl",
            Format::Csv => "csv",
        }
    );
    let (reports, duplicates) = deduplicate(records)?;
    Ok(Loaded {
        dataset: Dataset {
            name,
            reports,
            provenance,
        },
        duplicates,
    })
}

fn parse_jsonl(text: &str) -> Result<Vec<(usize, BugReport)>, IngestError> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(line).map_err(|e| IngestError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        out.push((line_no, raw.into_report(line_no)?));
    }
    Ok(out)
}

fn parse_csv(text: &str) -> Result<Vec<(usize, BugReport)>, IngestError> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| IngestError::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    for field in ["id", "project", "title", "body", "created_at"] {
        if !headers.iter().any(|h| h == field) {
            return Err(IngestError::Schema { line: 1, field });
        }
    }
    let mut out = Vec::new();
    for result in reader.records() {
        let record = result.map_err(|e| IngestError::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line_no = record.position().map_or(0, |p| p.line() as usize);
        let raw: RawRecord = record
            .deserialize(Some(&headers))
            .map_err(|e| IngestError::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
        out.push((line_no, raw.into_report(line_no)?));
    }
    Ok(out)
}

fn dedup_key(report: &BugReport) -> (String, String, String) {
    match &report.source_url {
        Some(url) => ("url".into(), report.project.clone(), url.clone()),
        None => ("text".into(), report.title.clone(), report.body.clone()),
    }
}

/// Keeps the earliest-created report per key; ties keep the first in file order.
fn deduplicate(
    records: Vec<(usize, BugReport)>,
) -> Result<(Vec<BugReport>, Vec<DuplicateNote>), IngestError> {
    let mut slot_of: HashMap<(String, String, String), usize> = HashMap::new();
    let mut kept: Vec<(usize, BugReport)> = Vec::new();
    let mut duplicates = Vec::new();
    for (line, report) in records {
        let key = dedup_key(&report);
        match slot_of.get(&key) {
            Some(&slot) => {
                let existing = &mut kept[slot];
                if report.created_at < existing.1.created_at {
                    duplicates.push(DuplicateNote {
                        removed_id: existing.1.id.clone(),
                        kept_id: report.id.clone(),
                        line: existing.0,
                    });
                    *existing = (line, report);
                } else {
                    duplicates.push(DuplicateNote {
                        removed_id: report.id.clone(),
                        kept_id: existing.1.id.clone(),
                        line,
                    });
                }
            }
            None => {
                slot_of.insert(key, kept.len());
                kept.push((line, report));
            }
        }
    }
    let mut seen: HashMap<&str, ()> = HashMap::new();
    for (line, report) in &kept {
        if seen.insert(report.id.as_str(), ()).is_some() {
            return Err(IngestError::DuplicateId {
                line: *line,
                id: report.id.clone(),
            });
        }
    }
    Ok((kept.into_iter().map(|(_, r)| r).collect(), duplicates))
}

/// Size in Unicode scalar values and code presence of a report.
pub fn quality_features(report: &BugReport) -> (usize, bool) {
    let text = report.full_text();
    (text.chars().count(), detect_code_presence(&report.body))
}

fn import_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^(import|package)\s+(static\s+)?[A-Za-z_$][\w$]*(\.[A-Za-z_$][\w$]*)*(\.\*)?\s*;$")
            .unwrap()
    })
}

fn call_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[A-Za-z_$][\w$]*\s*\(").unwrap())
}

fn assign_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    // `=` that is not part of ==, !=, <=, >=, =>
    RE.get_or_init(|| Regex::new(r"(^|[^=!<>])=([^=>]|$)").unwrap())
}

fn is_fence(line: &str) -> bool {
    line.trim_start().starts_with("```")
}

fn balanced_parens(line: &str) -> bool {
    let mut depth = 0i32;
    let mut any = false;
    for c in line.chars() {
        match c {
            '(' => {
                depth += 1;
                any = true;
            }
            ')' => {
                depth -= 1;
                if depth < 0 {
                    return false;
                }
            }
            _ => {}
        }
    }
    any && depth == 0
}

fn is_statement_line(line: &str) -> bool {
    let t = line.trim();
    if !t.ends_with(';') {
        return false;
    }
    (balanced_parens(t) && call_re().is_match(t)) || assign_re().is_match(t)
}

/// True when the text holds at least one parsable code statement.
///
/// Accepted evidence: a fenced block with a line ending in `;`, `{` or `}`;
/// an unfenced line ending in `;` that is a call or an assignment; or an
/// `import`/`package` declaration. A bare identifier in prose is not code.
pub fn detect_code_presence(body: &str) -> bool {
    let mut in_fence = false;
    for line in body.lines() {
        if is_fence(line) {
            in_fence = !in_fence;
            continue;
        }
        let t = line.trim();
        if import_re().is_match(t) {
            return true;
        }
        if in_fence {
            if t.ends_with(';') || t.ends_with('{') || t.ends_with('}') {
                return true;
            }
        } else if is_statement_line(t) {
            return true;
        }
    }
    false
}
