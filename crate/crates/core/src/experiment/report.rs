use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::config::Scheme;
use super::splits::LeakageAudit;
use crate::error::{Error, Result};
use crate::model::TrainReport;
use crate::stats::{ResultTable, TABLE_COLUMNS};

/// One accuracy cell: a subject under one scheme (and adaptation rate).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub subject: String,
    pub scheme: Scheme,
    pub adapt_rate: Option<u32>,
    pub active_sampling: bool,
    pub train_count: usize,
    pub val_count: usize,
    pub test_count: usize,
    pub accuracy: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub selected_epoch: usize,
}

/// One training run with its timing. `phase` is `train` for the dependent
/// and independent schemes, `base` and `fine_tune` for the adaptive one,
/// and `sampling` for a reduction that is shared between runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub subject: String,
    pub phase: String,
    pub adapt_rate: Option<u32>,
    pub sampling_seconds: f64,
    pub report: Option<TrainReport>,
}

impl TrainingRecord {
    pub fn train_seconds(&self) -> f64 {
        self.report.as_ref().map_or(0.0, |r| r.wall_clock_seconds)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub scheme: Scheme,
    pub active_sampling: bool,
    pub rows: Vec<ReportRow>,
    pub trainings: Vec<TrainingRecord>,
    /// Per target subject, over every epoch that trained or validated any
    /// model used for it.
    pub audits: Vec<(String, LeakageAudit)>,
}

impl ExperimentReport {
    pub fn mean_accuracy(&self) -> f64 {
        self.rows.iter().map(|r| r.accuracy).sum::<f64>() / self.rows.len() as f64
    }

    pub fn total_train_seconds(&self) -> f64 {
        self.trainings.iter().map(TrainingRecord::train_seconds).sum()
    }

    pub fn total_sampling_seconds(&self) -> f64 {
        self.trainings.iter().map(|t| t.sampling_seconds).sum()
    }

    /// Rows laid out on the standard summary columns, accuracies in percent.
    pub fn to_result_table(&self) -> Result<ResultTable> {
        merge_rows(&self.rows)
    }
}

fn column_of(row: &ReportRow) -> Result<usize> {
    let name = match (row.scheme, row.adapt_rate) {
        (Scheme::Adaptive, Some(r)) => format!("adaptive_{r}"),
        (Scheme::Adaptive, None) => return Err(Error::invalid("adaptive row without a rate")),
        (s, _) => s.as_str().to_string(),
    };
    TABLE_COLUMNS
        .iter()
        .position(|c| *c == name)
        .ok_or_else(|| Error::invalid(format!("no summary column for {name}")))
}

/// Combines report rows (e.g. of one run per scheme) into one table with a
/// row per subject, in order of first appearance, accuracies in percent.
pub fn merge_rows<'a>(rows: impl IntoIterator<Item = &'a ReportRow>) -> Result<ResultTable> {
    let mut table = ResultTable::new(&TABLE_COLUMNS);
    for row in rows {
        let c = column_of(row)?;
        let pos = match table.rows.iter().position(|(s, _)| *s == row.subject) {
            Some(p) => p,
            None => {
                table.push_row(row.subject.clone(), vec![None; TABLE_COLUMNS.len()])?;
                table.rows.len() - 1
            }
        };
        let cell = &mut table.rows[pos].1[c];
        if cell.is_some() {
            return Err(Error::invalid(format!("subject {} has two {} cells", row.subject, TABLE_COLUMNS[c])));
        }
        *cell = Some(100.0 * row.accuracy);
    }
    Ok(table)
}

const REPORT_HEADER: [&str; 10] = [
    "subject",
    "scheme",
    "adapt_rate",
    "active_sampling",
    "train_count",
    "val_count",
    "test_count",
    "accuracy",
    "confusion",
    "selected_epoch",
];

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Accuracy rows. Contains no timings, so equal runs give equal bytes.
/// The confusion matrix is written row-major, space separated.
pub fn write_report_csv<W: Write>(w: W, report: &ExperimentReport) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(REPORT_HEADER)?;
    for r in &report.rows {
        let confusion: Vec<String> = r.confusion.iter().flatten().map(usize::to_string).collect();
        out.write_record([
            r.subject.clone(),
            r.scheme.as_str().to_string(),
            opt(r.adapt_rate),
            u8::from(r.active_sampling).to_string(),
            r.train_count.to_string(),
            r.val_count.to_string(),
            r.test_count.to_string(),
            r.accuracy.to_string(),
            confusion.join(" "),
            r.selected_epoch.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_report_csv<R: Read>(r: R) -> Result<Vec<ReportRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != REPORT_HEADER {
        return Err(Error::format("report csv", format!("unexpected header {header:?}")));
    }
    let bad = |line: usize, what: &str| Error::format("report csv", format!("record {line}: bad {what}"));
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let scheme: Scheme =
            serde_json::from_value(serde_json::Value::String(rec[1].to_string())).map_err(|_| bad(i, "scheme"))?;
        let num = |j: usize, what: &str| rec[j].parse::<usize>().map_err(|_| bad(i, what));
        let flat: Vec<usize> = rec[8]
            .split_whitespace()
            .map(|v| v.parse().map_err(|_| bad(i, "confusion")))
            .collect::<Result<_>>()?;
        let side = (flat.len() as f64).sqrt() as usize;
        if side * side != flat.len() {
            return Err(bad(i, "confusion"));
        }
        rows.push(ReportRow {
            subject: rec[0].to_string(),
            scheme,
            adapt_rate: if rec[2].is_empty() {
                None
            } else {
                Some(rec[2].parse().map_err(|_| bad(i, "adapt_rate"))?)
            },
            active_sampling: &rec[3] == "1",
            train_count: num(4, "train_count")?,
            val_count: num(5, "val_count")?,
            test_count: num(6, "test_count")?,
            accuracy: rec[7].parse().map_err(|_| bad(i, "accuracy"))?,
            confusion: flat.chunks(side.max(1)).map(<[usize]>::to_vec).collect(),
            selected_epoch: num(9, "selected_epoch")?,
        });
    }
    Ok(rows)
}

/// `subject,phase,adapt_rate,sample_count,epochs_run,sampling_seconds,train_seconds`
pub fn write_timings_csv<W: Write>(w: W, report: &ExperimentReport) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "subject",
        "phase",
        "adapt_rate",
        "sample_count",
        "epochs_run",
        "sampling_seconds",
        "train_seconds",
    ])?;
    for t in &report.trainings {
        out.write_record([
            t.subject.clone(),
            t.phase.clone(),
            opt(t.adapt_rate),
            opt(t.report.as_ref().map(|r| r.sample_count_used)),
            opt(t.report.as_ref().map(|r| r.loss_curve.len())),
            t.sampling_seconds.to_string(),
            t.train_seconds().to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Run metadata. Carries no timestamp so it is reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub scheme: Scheme,
    pub config_sha256: String,
    pub seed: u64,
    pub seed_from_env: bool,
    pub crate_name: String,
    pub crate_version: String,
    pub subjects: Vec<String>,
    pub files: Vec<String>,
}

pub fn write_manifest<W: Write>(mut w: W, manifest: &Manifest) -> Result<()> {
    serde_json::to_writer_pretty(&mut w, manifest)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}
