//! Report rendering as JSON or markdown tables, numbers at three decimals.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::corpus::CorpusStats;
use crate::error::{Error, Result};
use crate::kbalign::CorrectionStats;
use crate::pipeline::DiagnoseReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    #[default]
    Json,
    Markdown,
}

impl FromStr for ReportFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            other => Err(Error::Config(format!("unknown report format {other:?}"))),
        }
    }
}

impl fmt::Display for ReportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReportFormat::Json => "json",
            ReportFormat::Markdown => "markdown",
        })
    }
}

/// A titled table of named numeric rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub title: String,
    pub columns: Vec<String>,
    pub rows: Vec<(String, Vec<f64>)>,
}

impl Table {
    pub fn new(title: impl Into<String>, columns: &[&str]) -> Self {
        Table {
            title: title.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn row(mut self, name: impl Into<String>, values: Vec<f64>) -> Self {
        self.rows.push((name.into(), values));
        self
    }
}

pub fn round3(v: f64) -> f64 {
    (v * 1000.0).round() / 1000.0
}

fn fmt3(v: f64) -> String {
    format!("{:.3}", round3(v))
}

/// Renders tables. JSON keys are the table titles, row names and column
/// names as given.
pub fn emit_report(tables: &[Table], format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => {
            let mut out = Map::new();
            for t in tables {
                let rows: Vec<Value> = t
                    .rows
                    .iter()
                    .map(|(name, vals)| {
                        let mut m = Map::new();
                        m.insert("name".into(), json!(name));
                        for (c, v) in t.columns.iter().zip(vals) {
                            m.insert(c.clone(), json!(round3(*v)));
                        }
                        Value::Object(m)
                    })
                    .collect();
                out.insert(t.title.clone(), Value::Array(rows));
            }
            serde_json::to_string_pretty(&Value::Object(out)).expect("json values serialize") + "\n"
        }
        ReportFormat::Markdown => {
            let mut s = String::new();
            for t in tables {
                s += &format!("### {}\n\n", t.title);
                s += &format!("| |{}\n", t.columns.iter().map(|c| format!(" {c} |")).collect::<String>());
                s += &format!("|---|{}\n", "---|".repeat(t.columns.len()));
                for (name, vals) in &t.rows {
                    s += &format!("| {name} |{}\n", vals.iter().map(|v| format!(" {} |", fmt3(*v))).collect::<String>());
                }
                s += "\n";
            }
            s
        }
    }
}

/// Renders with a format name; unknown names are an error.
pub fn emit_report_as(tables: &[Table], format: &str) -> Result<String> {
    Ok(emit_report(tables, format.parse()?))
}

impl From<&DiagnoseReport> for Table {
    fn from(r: &DiagnoseReport) -> Table {
        r.rows.iter().fold(Table::new(r.mode.to_string(), &["P", "R", "F1"]), |t, row| {
            t.row(row.name.clone(), vec![row.precision, row.recall, row.f1])
        })
    }
}

impl From<&CorpusStats> for Table {
    fn from(s: &CorpusStats) -> Table {
        Table::new("corpus", &["value"])
            .row("documents", vec![s.documents as f64])
            .row("words", vec![s.words])
            .row("sections", vec![s.sections])
            .row("mentions", vec![s.mentions])
            .row("salient_entities", vec![s.salient_entities])
            .row("binary_relations", vec![s.binary_relations])
            .row("nary_relations", vec![s.nary_relations])
            .row("binary_cross_sentence", vec![s.binary_cross_sentence])
            .row("binary_cross_section", vec![s.binary_cross_section])
            .row("nary_cross_sentence", vec![s.nary_cross_sentence])
            .row("nary_cross_section", vec![s.nary_cross_section])
    }
}

impl From<&CorrectionStats> for Vec<Table> {
    fn from(s: &CorrectionStats) -> Vec<Table> {
        let cols: Vec<&str> = s.columns.iter().map(String::as_str).collect();
        let matrix = s
            .rows
            .iter()
            .zip(&s.cells)
            .fold(Table::new("corrections", &cols), |t, (name, vals)| t.row(name.clone(), vals.clone()));
        let sums = Table::new("correction_sums", &["percent"])
            .row("diagonal_sum", vec![s.diagonal_sum])
            .row("type_change_sum", vec![s.type_change_sum])
            .row("deleted_sum", vec![s.deleted_sum])
            .row("added_sum", vec![s.added_sum]);
        vec![matrix, sums]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{DiagnoseMode, MetricRow};

    fn component_gold() -> DiagnoseReport {
        let names = ["Mention", "Coref", "Salient", "Clusters", "Binary", "4-ary"];
        DiagnoseReport {
            mode: DiagnoseMode::ComponentGold,
            rows: names
                .iter()
                .enumerate()
                .map(|(i, n)| MetricRow {
                    name: n.to_string(),
                    precision: 1.0 / (i + 3) as f64,
                    recall: 0.61049,
                    f1: 0.2675,
                })
                .collect(),
        }
    }

    #[test]
    fn markdown_rows_follow_report() {
        let md = emit_report(&[Table::from(&component_gold())], ReportFormat::Markdown);
        for n in ["| Mention |", "| Coref |", "| Salient |", "| Clusters |", "| Binary |", "| 4-ary |"] {
            assert!(md.contains(n), "{md}");
        }
        assert!(md.contains("0.610"));
        assert!(md.contains("0.333"));
    }

    #[test]
    fn json_and_markdown_agree_after_rounding() {
        let t = Table::from(&component_gold());
        let js: Value = serde_json::from_str(&emit_report(std::slice::from_ref(&t), ReportFormat::Json)).unwrap();
        let md = emit_report(std::slice::from_ref(&t), ReportFormat::Markdown);
        for row in js["component-gold"].as_array().unwrap() {
            let name = row["name"].as_str().unwrap();
            let line = md.lines().find(|l| l.starts_with(&format!("| {name} |"))).unwrap();
            let cells: Vec<f64> = line.split('|').skip(2).filter_map(|c| c.trim().parse().ok()).collect();
            let vals: Vec<f64> = ["P", "R", "F1"].iter().map(|c| row[*c].as_f64().unwrap()).collect();
            assert_eq!(cells, vals);
        }
    }

    #[test]
    fn empty_and_unknown_format() {
        assert_eq!(emit_report(&[], ReportFormat::Json).trim(), "{}");
        assert_eq!(emit_report(&[], ReportFormat::Markdown), "");
        assert!(emit_report_as(&[], "xml").is_err());
        assert!(emit_report_as(&[], "markdown").is_ok());
    }
}
