use std::io::Write;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Scheme};
use super::run::Runner;
use super::SubjectDataset;
use crate::error::{Error, Result, ResultExt};

/// 500, 600, ..., 1200.
pub const DEFAULT_FACTORS: [usize; 8] = [500, 600, 700, 800, 900, 1000, 1100, 1200];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedCell {
    pub subject: String,
    pub factor: usize,
    pub reason: String,
}

/// Test accuracy per subject and sampling factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub factors: Vec<usize>,
    pub subjects: Vec<String>,
    /// `accuracy[subject][factor]`; `None` for a skipped cell.
    pub accuracy: Vec<Vec<Option<f64>>>,
    pub skipped: Vec<SkippedCell>,
}

impl SweepTable {
    /// Per subject, the factor with the highest accuracy (the smallest such
    /// factor on ties); `None` when every cell was skipped.
    pub fn best_factors(&self) -> Vec<Option<usize>> {
        self.accuracy
            .iter()
            .map(|row| {
                let mut best: Option<(f64, usize)> = None;
                for (acc, &f) in row.iter().zip(&self.factors) {
                    if let Some(a) = *acc {
                        if best.map_or(true, |(b, _)| a > b) {
                            best = Some((a, f));
                        }
                    }
                }
                best.map(|(_, f)| f)
            })
            .collect()
    }

    /// The factor that is best for the most subjects (the smallest on ties).
    pub fn modal_best(&self) -> Option<usize> {
        let best = self.best_factors();
        let mut top: Option<(usize, usize)> = None;
        for &f in &self.factors {
            let count = best.iter().filter(|b| **b == Some(f)).count();
            if count > 0 && top.map_or(true, |(c, _)| count > c) {
                top = Some((count, f));
            }
        }
        top.map(|(_, f)| f)
    }
}

/// Leave-one-subject-out with active sampling at every factor. A factor
/// that cannot be drawn from a pool is recorded as skipped; other errors
/// abort the sweep.
pub fn sampling_factor_sweep(
    cfg: &ExperimentConfig,
    data: &[SubjectDataset],
    factors: &[usize],
) -> Result<SweepTable> {
    if cfg.scheme != Scheme::Independent {
        return Err(Error::invalid("the sampling-factor sweep runs on the independent scheme"));
    }
    if factors.is_empty() {
        return Err(Error::invalid("no sampling factors given"));
    }
    let mut cell_cfg = cfg.clone();
    cell_cfg.use_active_sampling = true;
    cell_cfg.sample_factor = *factors.iter().min().expect("non-empty");
    cell_cfg.validate()?;
    let mut runner = Runner::new(&cell_cfg, data)?;
    let targets = runner.targets()?;
    let mut table = SweepTable {
        factors: factors.to_vec(),
        subjects: targets.iter().map(|&i| data[i].subject.clone()).collect(),
        accuracy: vec![vec![None; factors.len()]; targets.len()],
        skipped: Vec::new(),
    };
    for (r, &i) in targets.iter().enumerate() {
        for (c, &f) in factors.iter().enumerate() {
            match runner.independent(i, Some(f)) {
                Ok(cell) => table.accuracy[r][c] = Some(cell.row.accuracy),
                Err(e) if e.is_infeasible() => table.skipped.push(SkippedCell {
                    subject: data[i].subject.clone(),
                    factor: f,
                    reason: e.to_string(),
                }),
                Err(e) => {
                    return Err(e).with_context(|| format!("subject {}, factor {f}", data[i].subject));
                }
            }
        }
    }
    Ok(table)
}

/// `subject,<factor>...,best_factor` rows, then a `modal_best` row. Skipped
/// cells are empty.
pub fn write_sweep_csv<W: Write>(w: W, table: &SweepTable) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["subject".to_string()];
    header.extend(table.factors.iter().map(usize::to_string));
    header.push("best_factor".into());
    out.write_record(&header)?;
    let best = table.best_factors();
    for ((s, row), b) in table.subjects.iter().zip(&table.accuracy).zip(&best) {
        let mut rec = vec![s.clone()];
        rec.extend(row.iter().map(|a| a.map(|x| x.to_string()).unwrap_or_default()));
        rec.push(b.map(|f| f.to_string()).unwrap_or_default());
        out.write_record(&rec)?;
    }
    let mut modal = vec!["modal_best".to_string()];
    modal.extend(vec![String::new(); table.factors.len()]);
    modal.push(table.modal_best().map(|f| f.to_string()).unwrap_or_default());
    out.write_record(&modal)?;
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::{generate_synthetic, DatasetSource, SynthP300Params};

    fn table(rows: Vec<Vec<Option<f64>>>) -> SweepTable {
        SweepTable {
            factors: vec![500, 600, 700],
            subjects: (0..rows.len()).map(|i| format!("S{i}")).collect(),
            accuracy: rows,
            skipped: Vec::new(),
        }
    }

    #[test]
    fn argmax_and_mode_break_ties_low() {
        let t = table(vec![
            vec![Some(0.7), Some(0.8), Some(0.8)],
            vec![Some(0.9), None, Some(0.6)],
            vec![None, None, None],
            vec![Some(0.1), Some(0.2), Some(0.3)],
        ]);
        assert_eq!(t.best_factors(), vec![Some(600), Some(500), None, Some(700)]);
        assert_eq!(t.modal_best(), Some(500));
        let flat = table(vec![vec![Some(0.5); 3]]);
        assert_eq!(flat.best_factors(), vec![Some(500)]);
    }

    #[test]
    fn infeasible_factor_is_skipped() {
        let params = SynthP300Params {
            subjects: 3,
            channels: 2,
            rate_hz: 8.0,
            epochs_per_session: 60,
            ..Default::default()
        };
        let data = generate_synthetic(&params).unwrap();
        let mut cfg = ExperimentConfig::new(Scheme::Independent, vec![DatasetSource::Synthetic(params)]);
        cfg.optimizer.epochs = 1;
        cfg.subjects = Some(vec!["S01".into()]);
        // Every subject has 240 epochs; 250 cannot be drawn.
        let t = sampling_factor_sweep(&cfg, &data, &[100, 250]).unwrap();
        assert!(t.accuracy[0][0].is_some());
        assert_eq!(t.accuracy[0][1], None);
        assert_eq!(t.skipped.len(), 1);
        assert_eq!(t.modal_best(), Some(100));
        let mut buf = Vec::new();
        write_sweep_csv(&mut buf, &t).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("subject,100,250,best_factor\n"));
        assert!(text.ends_with("modal_best,,,100\n"));

        cfg.scheme = Scheme::Dependent;
        assert!(sampling_factor_sweep(&cfg, &data, &[100]).is_err());
    }
}
