//! Per-column mean and standard deviation over subjects, and the
//! percent summary CSV.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Value columns of a summary table, after the leading `subject` column.
pub const TABLE_COLUMNS: [&str; 12] = [
    "dependent",
    "independent",
    "adaptive_10",
    "adaptive_20",
    "adaptive_30",
    "adaptive_40",
    "adaptive_50",
    "adaptive_60",
    "adaptive_70",
    "adaptive_80",
    "adaptive_90",
    "adaptive_100",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StdKind {
    /// Divides by `n - 1`.
    #[default]
    Sample,
    /// Divides by `n`.
    Population,
}

impl StdKind {
    fn label(self) -> &'static str {
        match self {
            StdKind::Sample => "std_sample",
            StdKind::Population => "std_population",
        }
    }
}

/// Per-subject cells of one report. `None` marks a cell the run did not
/// produce.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub columns: Vec<String>,
    pub rows: Vec<(String, Vec<Option<f64>>)>,
}

impl ResultTable {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push_row(&mut self, subject: impl Into<String>, values: Vec<Option<f64>>) -> Result<()> {
        if values.len() != self.columns.len() {
            return Err(Error::invalid(format!(
                "row has {} values for {} columns",
                values.len(),
                self.columns.len()
            )));
        }
        self.rows.push((subject.into(), values));
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub table: ResultTable,
    pub mean: Vec<Option<f64>>,
    pub std: Vec<Option<f64>>,
    pub std_kind: StdKind,
}

/// Stacks the rows of every report and summarises each column over the
/// cells present. A column with a single cell has standard deviation 0.
pub fn aggregate(reports: &[ResultTable], std_kind: StdKind) -> Result<SummaryTable> {
    let first = reports.first().ok_or_else(|| Error::invalid("nothing to aggregate"))?;
    let mut table = ResultTable {
        columns: first.columns.clone(),
        rows: Vec::new(),
    };
    for (i, r) in reports.iter().enumerate() {
        if r.columns != first.columns {
            return Err(Error::invalid(format!("report {i} has columns {:?}, expected {:?}", r.columns, first.columns)));
        }
        if let Some((s, v)) = r.rows.iter().find(|(_, v)| v.len() != first.columns.len()) {
            return Err(Error::invalid(format!("report {i}, subject {s}: {} values", v.len())));
        }
        table.rows.extend(r.rows.iter().cloned());
    }
    let mut mean = Vec::with_capacity(table.columns.len());
    let mut std = Vec::with_capacity(table.columns.len());
    for c in 0..table.columns.len() {
        let cells: Vec<f64> = table.rows.iter().filter_map(|(_, v)| v[c]).collect();
        if cells.is_empty() {
            mean.push(None);
            std.push(None);
            continue;
        }
        let n = cells.len() as f64;
        let m = cells.iter().sum::<f64>() / n;
        let ss: f64 = cells.iter().map(|x| (x - m) * (x - m)).sum();
        let s = match (std_kind, cells.len()) {
            (_, 1) => 0.0,
            (StdKind::Sample, _) => (ss / (n - 1.0)).sqrt(),
            (StdKind::Population, _) => (ss / n).sqrt(),
        };
        mean.push(Some(m));
        std.push(Some(s));
    }
    Ok(SummaryTable {
        table,
        mean,
        std,
        std_kind,
    })
}

/// `table_<experiment>_<as|noas>.csv`
pub fn summary_file_name(experiment: &str, active_sampling: bool) -> String {
    format!("table_{experiment}_{}.csv", if active_sampling { "as" } else { "noas" })
}

/// Subject rows followed by a `mean` row and a `std_sample` or
/// `std_population` row; missing cells are empty.
pub fn write_summary_csv<W: Write>(w: W, summary: &SummaryTable) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["subject".to_string()];
    header.extend(summary.table.columns.iter().cloned());
    out.write_record(&header)?;
    let fmt = |v: &Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut write_row = |label: &str, values: &[Option<f64>]| -> Result<()> {
        let mut row = vec![label.to_string()];
        row.extend(values.iter().map(fmt));
        out.write_record(&row)?;
        Ok(())
    };
    for (subject, values) in &summary.table.rows {
        write_row(subject, values)?;
    }
    write_row("mean", &summary.mean)?;
    write_row(summary.std_kind.label(), &summary.std)?;
    out.flush()?;
    Ok(())
}
