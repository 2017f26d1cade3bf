use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::EvalError;

/// Automatic metrics of one policy on one corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub corpus_id: String,
    pub policy_id: String,
    pub ppl: f64,
    pub b4: f64,
    pub d3: f64,
    pub bsf1: f64,
    pub rlen: f64,
    /// `None` when no record carried a reference emotion.
    pub ea: Option<f64>,
    /// `None` when no generated turn declared a strategy (insufficient data).
    pub ensc: Option<f64>,
    pub samples: usize,
    pub seed: u64,
    /// Generated turns that never parsed and were scored as empty responses.
    #[serde(default)]
    pub unparseable: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Column {
    pub key: &'static str,
    pub header: &'static str,
    pub lower_is_better: bool,
    pub get: fn(&MetricReport) -> Option<f64>,
}

pub(crate) const COLUMNS: [Column; 7] = [
    Column { key: "ppl", header: "PPL", lower_is_better: true, get: |r| Some(r.ppl) },
    Column { key: "b4", header: "B-4", lower_is_better: false, get: |r| Some(r.b4) },
    Column { key: "d3", header: "D-3", lower_is_better: false, get: |r| Some(r.d3) },
    Column { key: "bsf1", header: "BS-F1", lower_is_better: false, get: |r| Some(r.bsf1) },
    Column { key: "rlen", header: "R-LEN", lower_is_better: false, get: |r| Some(r.rlen) },
    Column { key: "ea", header: "EA", lower_is_better: false, get: |r| r.ea },
    Column { key: "ensc", header: "ENSC", lower_is_better: false, get: |r| r.ensc },
];

impl MetricReport {
    /// Range and finiteness checks on every value.
    pub fn check(&self) -> Result<(), EvalError> {
        let unit = [("b4", Some(self.b4)), ("d3", Some(self.d3)), ("bsf1", Some(self.bsf1)), ("ea", self.ea), ("ensc", self.ensc)];
        for (name, v) in unit {
            if let Some(v) = v {
                if !(0.0..=1.0).contains(&v) {
                    return Err(EvalError::OutOfRange(format!("{name} = {v}")));
                }
            }
        }
        if !(self.ppl.is_finite() && self.ppl >= 1.0) {
            return Err(EvalError::OutOfRange(format!("ppl = {}", self.ppl)));
        }
        if !(self.rlen.is_finite() && self.rlen >= 0.0) {
            return Err(EvalError::OutOfRange(format!("rlen = {}", self.rlen)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Markdown,
    Json,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "md" | "markdown" => Ok(Self::Markdown),
            "json" => Ok(Self::Json),
            "csv" => Ok(Self::Csv),
            other => Err(EvalError::Format(format!("unknown report format '{other}'"))),
        }
    }
}

/// Row indices holding the best value of each column (ties all marked).
pub fn best_rows(reports: &[MetricReport]) -> BTreeMap<&'static str, Vec<usize>> {
    let mut out = BTreeMap::new();
    for col in COLUMNS {
        let values: Vec<(usize, f64)> = reports
            .iter()
            .enumerate()
            .filter_map(|(i, r)| (col.get)(r).map(|v| (i, v)))
            .collect();
        let best = values.iter().map(|(_, v)| *v).reduce(|a, b| {
            if col.lower_is_better {
                a.min(b)
            } else {
                a.max(b)
            }
        });
        if let Some(best) = best {
            out.insert(col.key, values.iter().filter(|(_, v)| *v == best).map(|(i, _)| *i).collect());
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub columns: Vec<String>,
    pub rows: Vec<MetricReport>,
    /// Column key to indices of best rows.
    pub best: BTreeMap<String, Vec<usize>>,
}

fn cell(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{v:.4}"),
        None => "n/a".to_string(),
    }
}

/// Renders reports with a fixed column order, best values marked.
pub fn emit_report(reports: &[MetricReport], format: ReportFormat) -> Result<String, EvalError> {
    if reports.is_empty() {
        return Err(EvalError::EmptyBatch);
    }
    let best = best_rows(reports);
    let is_best = |key: &str, i: usize| best.get(key).is_some_and(|rows| rows.contains(&i));
    match format {
        ReportFormat::Markdown => {
            let mut s = String::from("| corpus | policy |");
            for c in COLUMNS {
                let arrow = if c.lower_is_better { "↓" } else { "↑" };
                let _ = write!(s, " {} {arrow} |", c.header);
            }
            s.push_str(" n |\n|---|---|");
            s.push_str(&"---:|".repeat(COLUMNS.len() + 1));
            s.push('\n');
            for (i, r) in reports.iter().enumerate() {
                let _ = write!(s, "| {} | {} |", r.corpus_id, r.policy_id);
                for c in COLUMNS {
                    let v = cell((c.get)(r));
                    if is_best(c.key, i) {
                        let _ = write!(s, " **{v}** |");
                    } else {
                        let _ = write!(s, " {v} |");
                    }
                }
                let _ = writeln!(s, " {} |", r.samples);
            }
            Ok(s)
        }
        ReportFormat::Json => {
            let doc = ReportDocument {
                columns: COLUMNS.iter().map(|c| c.key.to_string()).collect(),
                rows: reports.to_vec(),
                best: best.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
            };
            serde_json::to_string_pretty(&doc).map_err(|e| EvalError::Format(e.to_string()))
        }
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            let mut header = vec!["corpus".to_string(), "policy".to_string()];
            header.extend(COLUMNS.iter().map(|c| c.key.to_string()));
            header.extend(["samples".to_string(), "best".to_string()]);
            w.write_record(&header).map_err(|e| EvalError::Format(e.to_string()))?;
            for (i, r) in reports.iter().enumerate() {
                let mut row = vec![r.corpus_id.clone(), r.policy_id.clone()];
                row.extend(COLUMNS.iter().map(|c| (c.get)(r).map(|v| v.to_string()).unwrap_or_default()));
                row.push(r.samples.to_string());
                let marks: Vec<&str> = COLUMNS.iter().filter(|c| is_best(c.key, i)).map(|c| c.key).collect();
                row.push(marks.join(" "));
                w.write_record(&row).map_err(|e| EvalError::Format(e.to_string()))?;
            }
            let bytes = w.into_inner().map_err(|e| EvalError::Format(e.to_string()))?;
            String::from_utf8(bytes).map_err(|e| EvalError::Format(e.to_string()))
        }
    }
}

/// Reads back the JSON form of [`emit_report`].
pub fn ingest_report_json(text: &str) -> Result<ReportDocument, EvalError> {
    serde_json::from_str(text).map_err(|e| EvalError::Format(e.to_string()))
}
