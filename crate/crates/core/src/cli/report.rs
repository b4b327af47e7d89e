//! Report rows, their CSV/JSON/plain-text renderings, and merging.

use std::cmp::Ordering;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::CliError;

pub const REPORT_SCHEMA: &str = "cmbench.report.v1";
/// Rendering of a metric with no defined value (e.g. a median without successes).
pub const MISSING: &str = "—";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub name: String,
    pub value: Option<f64>,
}

impl Metric {
    pub fn new(name: impl Into<String>, value: Option<f64>) -> Self {
        Self {
            name: name.into(),
            value,
        }
    }
}

/// One matcher's line in a results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub matcher_id: String,
    /// `sparse`, `semi-dense`, `dense`, or `unknown`.
    pub category: String,
    pub task: String,
    pub pairs: usize,
    pub success_rate: f64,
    pub metrics: Vec<Metric>,
    pub fingerprint: String,
}

impl ReportRow {
    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.iter().find(|m| m.name == name).and_then(|m| m.value)
    }

    fn metric_names(&self) -> Vec<&str> {
        self.metrics.iter().map(|m| m.name.as_str()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub schema: String,
    pub rows: Vec<ReportRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

pub fn category_rank(category: &str) -> usize {
    match category {
        "sparse" => 0,
        "semi-dense" => 1,
        "dense" => 2,
        _ => 3,
    }
}

/// Metric a table is ranked by (larger is better): the first column, or the
/// first success rate when the table leads with a median error.
fn ranking_metric(row: &ReportRow) -> Option<&str> {
    let first = row.metrics.first()?;
    if first.name.starts_with("mederr") {
        row.metrics.get(1).map(|m| m.name.as_str())
    } else {
        Some(first.name.as_str())
    }
}

/// Category order (sparse, semi-dense, dense), then the ranking metric
/// descending, then matcher id.
pub fn sort_rows(rows: &mut [ReportRow]) {
    rows.sort_by(|a, b| {
        category_rank(&a.category)
            .cmp(&category_rank(&b.category))
            .then_with(|| a.category.cmp(&b.category))
            .then_with(|| {
                let key = |r: &ReportRow| {
                    ranking_metric(r)
                        .and_then(|name| r.metric(name))
                        .unwrap_or(f64::NEG_INFINITY)
                };
                key(b).partial_cmp(&key(a)).unwrap_or(Ordering::Equal)
            })
            .then_with(|| a.matcher_id.cmp(&b.matcher_id))
    });
}

pub fn format_value(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.6}"),
        None => MISSING.to_string(),
    }
}

fn parse_value(s: &str) -> Result<Option<f64>, CliError> {
    if s == MISSING {
        return Ok(None);
    }
    s.parse::<f64>()
        .map(Some)
        .map_err(|e| CliError::Config(format!("bad metric value `{s}`: {e}")))
}

fn header(rows: &[ReportRow]) -> Vec<String> {
    let mut h: Vec<String> = ["matcher_id", "category", "task", "pairs", "success_rate"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    if let Some(r) = rows.first() {
        h.extend(r.metrics.iter().map(|m| m.name.clone()));
    }
    h.push("fingerprint".into());
    h
}

fn cells(r: &ReportRow) -> Vec<String> {
    let mut c = vec![
        r.matcher_id.clone(),
        r.category.clone(),
        r.task.clone(),
        r.pairs.to_string(),
        format_value(Some(r.success_rate)),
    ];
    c.extend(r.metrics.iter().map(|m| format_value(m.value)));
    c.push(r.fingerprint.clone());
    c
}

pub fn to_csv(rows: &[ReportRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header(rows)).expect("in-memory write");
    for r in rows {
        w.write_record(cells(r)).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
}

pub fn from_csv(text: &str) -> Result<Vec<ReportRow>, CliError> {
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    let head: Vec<String> = rd
        .headers()
        .map_err(|e| CliError::Config(format!("report csv: {e}")))?
        .iter()
        .map(str::to_string)
        .collect();
    if head.len() < 6 || head[..5] != ["matcher_id", "category", "task", "pairs", "success_rate"] || head.last().map(String::as_str) != Some("fingerprint") {
        return Err(CliError::Config("report csv: unexpected header".into()));
    }
    let names = &head[5..head.len() - 1];
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| CliError::Config(format!("report csv: {e}")))?;
        if rec.len() != head.len() {
            return Err(CliError::Config("report csv: ragged row".into()));
        }
        let mut metrics = Vec::new();
        for (i, name) in names.iter().enumerate() {
            metrics.push(Metric::new(name.clone(), parse_value(&rec[5 + i])?));
        }
        rows.push(ReportRow {
            matcher_id: rec[0].to_string(),
            category: rec[1].to_string(),
            task: rec[2].to_string(),
            pairs: rec[3]
                .parse()
                .map_err(|e| CliError::Config(format!("report csv: pairs: {e}")))?,
            success_rate: parse_value(&rec[4])?.unwrap_or(0.0),
            metrics,
            fingerprint: rec[head.len() - 1].to_string(),
        });
    }
    Ok(rows)
}

pub fn to_json(rows: &[ReportRow]) -> String {
    let file = ReportFile {
        schema: REPORT_SCHEMA.into(),
        rows: rows.to_vec(),
    };
    let mut s = serde_json::to_string_pretty(&file).expect("report serializes");
    s.push('\n');
    s
}

pub fn from_json(text: &str) -> Result<Vec<ReportRow>, CliError> {
    let file: ReportFile = serde_json::from_str(text).map_err(|e| CliError::Config(format!("report json: {e}")))?;
    if file.schema != REPORT_SCHEMA {
        return Err(CliError::Config(format!("unexpected report schema `{}`", file.schema)));
    }
    Ok(file.rows)
}

pub fn render(rows: &[ReportRow], format: OutputFormat) -> String {
    match format {
        OutputFormat::Csv => to_csv(rows),
        OutputFormat::Json => to_json(rows),
    }
}

/// Aligned plain-text table without the fingerprint column.
pub fn to_table(rows: &[ReportRow]) -> String {
    let mut head = header(rows);
    head.pop();
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut c = cells(r);
            c.pop();
            c
        })
        .collect();
    let mut widths: Vec<usize> = head.iter().map(|h| h.chars().count()).collect();
    for row in &body {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cells: &[String]| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
            .collect();
        parts.join("  ").trim_end().to_string()
    };
    let mut out = line(&head);
    out.push('\n');
    out.push_str(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  "));
    out.push('\n');
    for row in &body {
        out.push_str(&line(row));
        out.push('\n');
    }
    if let Some(fp) = rows.first().map(|r| &r.fingerprint) {
        out.push_str(&format!("config: {fp}\n"));
    }
    out
}

pub fn read_report(path: &Path) -> Result<Vec<ReportRow>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    if path.extension().is_some_and(|e| e == "json") {
        from_json(&text)
    } else {
        from_csv(&text)
    }
}

/// Concatenates row sets that share a task, metric columns and fingerprint.
/// `force` accepts differing fingerprints and keeps the first duplicate row.
pub fn merge(sets: Vec<Vec<ReportRow>>, force: bool) -> Result<Vec<ReportRow>, CliError> {
    let mut out: Vec<ReportRow> = Vec::new();
    for row in sets.into_iter().flatten() {
        if let Some(first) = out.first() {
            if first.task != row.task || first.metric_names() != row.metric_names() {
                return Err(CliError::Config(format!(
                    "cannot merge task `{}` rows with task `{}` rows",
                    first.task, row.task
                )));
            }
            if first.fingerprint != row.fingerprint && !force {
                return Err(CliError::FingerprintMismatch {
                    expected: first.fingerprint.clone(),
                    got: row.fingerprint.clone(),
                });
            }
        }
        if out.iter().any(|r| r.matcher_id == row.matcher_id) {
            if force {
                continue;
            }
            return Err(CliError::Config(format!("matcher `{}` appears twice", row.matcher_id)));
        }
        out.push(row);
    }
    sort_rows(&mut out);
    Ok(out)
}
