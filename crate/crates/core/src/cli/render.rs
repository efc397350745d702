//! Report files, per-method aggregation and the methods x levels table.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{CliError, RunProvenance};
use crate::metrics::{MetricReport, MetricRow};

/// Column order of every rendered table.
pub const SETS: [&str; 5] = ["L1", "L2", "L3", "All", "ST"];

/// A metric report as written to disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    pub rows: Vec<MetricRow>,
    pub id_accuracy: Option<f64>,
    pub detector: String,
    pub provenance: RunProvenance,
}

impl ReportFile {
    pub fn new(method: Option<String>, report: MetricReport, detector: String, provenance: RunProvenance) -> Self {
        ReportFile {
            method,
            rows: report.rows,
            id_accuracy: report.id_accuracy,
            detector,
            provenance,
        }
    }

    pub fn row(&self, set: &str) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.set == set)
    }

    pub fn to_json(&self) -> String {
        super::io::to_pretty_json(self)
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Data(format!("report: {e}")))
    }

    fn label(&self) -> String {
        self.method.clone().unwrap_or_else(|| self.detector.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single run.
    pub sd: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Stat> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Stat { mean, sd, n })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellStats {
    pub auroc: Stat,
    pub fpr95: Stat,
}

/// Mean and spread of one method over its runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: String,
    pub runs: usize,
    pub cells: BTreeMap<String, CellStats>,
    pub id_accuracy: Option<Stat>,
}

/// Group reports by method (first-seen order) and summarise each set.
pub fn aggregate(reports: &[ReportFile]) -> Vec<AggregateRow> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<String, Vec<&ReportFile>> = BTreeMap::new();
    for r in reports {
        let label = r.label();
        if !groups.contains_key(&label) {
            order.push(label.clone());
        }
        groups.entry(label).or_default().push(r);
    }
    order
        .into_iter()
        .map(|method| {
            let group = &groups[&method];
            let mut cells = BTreeMap::new();
            for set in SETS {
                let rows: Vec<&MetricRow> = group.iter().filter_map(|r| r.row(set)).collect();
                let auroc: Vec<f64> = rows.iter().map(|r| r.auroc).collect();
                let fpr: Vec<f64> = rows.iter().map(|r| r.fpr95).collect();
                if let (Some(auroc), Some(fpr95)) = (Stat::of(&auroc), Stat::of(&fpr)) {
                    cells.insert(set.to_string(), CellStats { auroc, fpr95 });
                }
            }
            let acc: Vec<f64> = group.iter().filter_map(|r| r.id_accuracy).collect();
            AggregateRow {
                runs: group.len(),
                id_accuracy: Stat::of(&acc),
                cells,
                method,
            }
        })
        .collect()
}

fn pct(s: &Stat) -> String {
    if s.n > 1 {
        format!("{:.2} ± {:.2}", 100.0 * s.mean, 100.0 * s.sd)
    } else {
        format!("{:.2}", 100.0 * s.mean)
    }
}

/// Rendered table: `AUROC / FPR` percentage cells, blank where a level is
/// missing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

pub fn render_table(rows: &[AggregateRow]) -> Table {
    let mut header = vec!["Method".to_string()];
    header.extend(SETS.iter().map(|s| format!("{s} AUROC / FPR")));
    header.push("ID Acc".to_string());
    let body = rows
        .iter()
        .map(|row| {
            let mut cells = vec![row.method.clone()];
            for set in SETS {
                cells.push(
                    row.cells
                        .get(set)
                        .map(|c| format!("{} / {}", pct(&c.auroc), pct(&c.fpr95)))
                        .unwrap_or_default(),
                );
            }
            cells.push(row.id_accuracy.as_ref().map(pct).unwrap_or_default());
            cells
        })
        .collect();
    Table { header, rows: body }
}

impl Table {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("cells are UTF-8")
    }

    pub fn from_csv(text: &str) -> Result<Self, CliError> {
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
        let header: Vec<String> = r
            .headers()
            .map_err(|e| CliError::Data(format!("table header: {e}")))?
            .iter()
            .map(str::to_string)
            .collect();
        let rows = r
            .records()
            .map(|rec| {
                rec.map(|rec| rec.iter().map(str::to_string).collect())
                    .map_err(|e| CliError::Data(format!("table row: {e}")))
            })
            .collect::<Result<_, _>>()?;
        Ok(Table { header, rows })
    }

    /// Space-padded columns: the first left-aligned, the rest right-aligned.
    pub fn to_text(&self) -> String {
        let cols = self.header.len();
        let mut widths = vec![0usize; cols];
        for r in std::iter::once(&self.header).chain(&self.rows) {
            for (w, c) in widths.iter_mut().zip(r) {
                *w = (*w).max(c.chars().count());
            }
        }
        let mut out = String::new();
        for r in std::iter::once(&self.header).chain(&self.rows) {
            let line: Vec<String> = r
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (c, &w))| {
                    let pad = " ".repeat(w - c.chars().count());
                    if i == 0 {
                        format!("{c}{pad}")
                    } else {
                        format!("{pad}{c}")
                    }
                })
                .collect();
            out.push_str(line.join("  ").trim_end());
            out.push('\n');
        }
        out
    }
}
