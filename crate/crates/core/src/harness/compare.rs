use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::error::{Error, IoContext, Result};
use crate::metrics::EvalReport;
use crate::scoring::Scorer;

/// Quantity shown in each cell of a comparison table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CompareMetric {
    AverageOscr,
    AverageAuroc,
    /// OSCR of attribute `m` (0-based).
    Oscr(usize),
    /// AUROC of attribute `m` (0-based).
    Auroc(usize),
}

impl CompareMetric {
    /// Built-in presets list the harder attribute (digit, object, material)
    /// first.
    pub const OSCR_COMPLEX: CompareMetric = CompareMetric::Oscr(0);
    pub const OSCR_SIMPLE: CompareMetric = CompareMetric::Oscr(1);

    pub fn value(self, report: &EvalReport) -> Result<f64> {
        let attribute = |m: usize| {
            report.attributes.get(m).ok_or_else(|| {
                Error::Aggregation(format!("report has {} attributes, metric {self} needs {}", report.attributes.len(), m + 1))
            })
        };
        Ok(match self {
            CompareMetric::AverageOscr => report.average_oscr,
            CompareMetric::AverageAuroc => report.average_auroc,
            CompareMetric::Oscr(m) => attribute(m)?.oscr,
            CompareMetric::Auroc(m) => attribute(m)?.auroc,
        })
    }
}

impl fmt::Display for CompareMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CompareMetric::AverageOscr => f.write_str("avg_oscr"),
            CompareMetric::AverageAuroc => f.write_str("avg_auroc"),
            CompareMetric::Oscr(0) => f.write_str("oscr_complex"),
            CompareMetric::Oscr(1) => f.write_str("oscr_simple"),
            CompareMetric::Oscr(m) => write!(f, "oscr_{}", m + 1),
            CompareMetric::Auroc(m) => write!(f, "auroc_{}", m + 1),
        }
    }
}

impl FromStr for CompareMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let indexed = |rest: &str| rest.parse::<usize>().ok().filter(|m| *m >= 1).map(|m| m - 1);
        match s {
            "avg_oscr" => Ok(CompareMetric::AverageOscr),
            "avg_auroc" => Ok(CompareMetric::AverageAuroc),
            "oscr_complex" => Ok(CompareMetric::OSCR_COMPLEX),
            "oscr_simple" => Ok(CompareMetric::OSCR_SIMPLE),
            _ => {
                if let Some(m) = s.strip_prefix("oscr_").and_then(indexed) {
                    Ok(CompareMetric::Oscr(m))
                } else if let Some(m) = s.strip_prefix("auroc_").and_then(indexed) {
                    Ok(CompareMetric::Auroc(m))
                } else {
                    Err(Error::Config(format!(
                        "unknown metric `{s}` (avg_oscr, avg_auroc, oscr_complex, oscr_simple, oscr_<m>, auroc_<m>)"
                    )))
                }
            }
        }
    }
}

/// Baselines by configurations grid of one metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub metric: String,
    pub row_labels: Vec<String>,
    pub column_labels: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl ComparisonTable {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec![self.metric.clone()];
        header.extend(self.column_labels.iter().cloned());
        w.write_record(&header)?;
        for (label, row) in self.row_labels.iter().zip(&self.values) {
            let mut rec = vec![label.clone()];
            rec.extend(row.iter().map(|v| format!("{v:.6}")));
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Aggregation(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Aggregation(e.to_string()))
    }

    /// Aligned plain-text grid with values in percent.
    pub fn to_text(&self) -> String {
        let cells: Vec<Vec<String>> = self
            .values
            .iter()
            .map(|row| row.iter().map(|v| format!("{:.1}", 100.0 * v)).collect())
            .collect();
        let first = self
            .row_labels
            .iter()
            .map(String::len)
            .chain([self.metric.len()])
            .max()
            .unwrap_or(0);
        let widths: Vec<usize> = self
            .column_labels
            .iter()
            .enumerate()
            .map(|(c, l)| cells.iter().map(|r| r[c].len()).chain([l.len()]).max().unwrap_or(0))
            .collect();
        let mut out = format!("{:<first$}", self.metric);
        for (l, w) in self.column_labels.iter().zip(&widths) {
            out += &format!("  {l:>w$}");
        }
        out.push('\n');
        for (label, row) in self.row_labels.iter().zip(&cells) {
            out += &format!("{label:<first$}");
            for (v, w) in row.iter().zip(&widths) {
                out += &format!("  {v:>w$}");
            }
            out.push('\n');
        }
        out
    }
}

fn read_label(dir: &Path) -> Result<String> {
    let path = dir.join("config.json");
    ExperimentConfig::load(&path)?.label()
}

/// Builds a table from evaluated experiment directories (one column each).
/// Rows are every baseline found in any of them; a directory or report that
/// is missing makes the call fail with the full list of gaps.
pub fn compare_runs(experiments: &[PathBuf], metric: CompareMetric) -> Result<ComparisonTable> {
    if experiments.is_empty() {
        return Err(Error::Config("no experiments to compare".into()));
    }
    let mut missing: Vec<String> = experiments
        .iter()
        .filter(|d| !d.join("config.json").is_file())
        .map(|d| d.display().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Aggregation(format!("missing runs: {}", missing.join(", "))));
    }
    let mut baselines: Vec<Scorer> = Vec::new();
    for d in experiments {
        for s in Scorer::ALL {
            if d.join(format!("report-{}.json", s.as_str())).is_file() && !baselines.contains(&s) {
                baselines.push(s);
            }
        }
    }
    baselines.sort();
    if baselines.is_empty() {
        return Err(Error::Aggregation("no evaluated reports in the given experiments".into()));
    }
    let mut values = vec![vec![f64::NAN; experiments.len()]; baselines.len()];
    for (c, d) in experiments.iter().enumerate() {
        for (r, s) in baselines.iter().enumerate() {
            let path = d.join(format!("report-{}.json", s.as_str()));
            if !path.is_file() {
                missing.push(path.display().to_string());
                continue;
            }
            values[r][c] = metric.value(&EvalReport::load(&path)?)?;
        }
    }
    if !missing.is_empty() {
        return Err(Error::Aggregation(format!("missing runs: {}", missing.join(", "))));
    }
    Ok(ComparisonTable {
        metric: metric.to_string(),
        row_labels: baselines.iter().map(|s| s.as_str().to_string()).collect(),
        column_labels: experiments.iter().map(|d| read_label(d)).collect::<Result<_>>()?,
        values,
    })
}

/// Writes `<stem>.csv` and `<stem>.txt` for `table`.
pub fn write_comparison(table: &ComparisonTable, stem: &Path) -> Result<()> {
    let csv = stem.with_extension("csv");
    std::fs::write(&csv, table.to_csv()?).at(&csv)?;
    let txt = stem.with_extension("txt");
    std::fs::write(&txt, table.to_text()).at(&txt)
}
