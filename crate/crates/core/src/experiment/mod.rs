//! Datasets, splits, active-sampling reduction and the three
//! classification schemes (subject-dependent, leave-one-subject-out
//! subject-independent, and subject-adaptive fine-tuning).

mod active;
mod config;
mod embed;
mod report;
mod run;
mod splits;
mod sweep;
mod synth;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocessing::Epoch;

pub use active::{reduce_pool, ActiveReduction};
pub use config::{
    load_config, ActiveSamplingConfig, AsMode, DatasetSource, ExperimentConfig, SamplerKind, Scheme, SEED_ENV,
};
pub use embed::{pca_embed, write_embedding_csv, Embedding};
pub use report::{
    merge_rows, read_report_csv, write_manifest, write_report_csv, write_timings_csv, ExperimentReport,
    Manifest, ReportRow, TrainingRecord,
};
pub use run::{load_datasets, run_experiment, run_experiment_on, run_experiment_with, write_report_files};
pub use splits::{
    audit_leakage, source_pool, split_adaptive, split_dependent, split_independent, split_train_val, AdaptiveSplit,
    DependentSplit, IndependentSplit, LeakageAudit,
};
pub use sweep::{sampling_factor_sweep, write_sweep_csv, SkippedCell, SweepTable, DEFAULT_FACTORS};
pub use synth::{generate_raw_session, generate_synthetic, subject_id, SynthP300Params};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    /// European recordings (50 Hz mains).
    OeStyle,
    /// South American recordings (60 Hz mains).
    MeStyle,
    Synthetic,
}

/// All epochs of one subject, keyed by session number (1 to 4).
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectDataset {
    pub subject: String,
    pub sessions: BTreeMap<u8, Vec<Epoch>>,
    pub provenance: Provenance,
}

impl SubjectDataset {
    pub fn validate(&self) -> Result<()> {
        for (&s, epochs) in &self.sessions {
            if !(1..=4).contains(&s) {
                return Err(Error::invalid(format!("subject {}: session {s} outside 1..4", self.subject)));
            }
            if let Some(e) = epochs.iter().find(|e| e.subject != self.subject || e.session != s) {
                return Err(Error::invalid(format!(
                    "subject {} session {s} holds an epoch labelled {}/{}",
                    self.subject, e.subject, e.session
                )));
            }
        }
        Ok(())
    }

    pub fn session(&self, s: u8) -> Result<&[Epoch]> {
        self.sessions
            .get(&s)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::invalid(format!("subject {} has no session {s}", self.subject)))
    }

    pub fn epoch_count(&self) -> usize {
        self.sessions.values().map(Vec::len).sum()
    }

    pub fn epochs(&self) -> impl Iterator<Item = &Epoch> {
        self.sessions.values().flatten()
    }

    /// Groups epochs by subject, in order of first appearance.
    pub fn group(epochs: Vec<Epoch>, provenance: Provenance) -> Result<Vec<SubjectDataset>> {
        let mut out: Vec<SubjectDataset> = Vec::new();
        for e in epochs {
            let pos = match out.iter().position(|d| d.subject == e.subject) {
                Some(p) => p,
                None => {
                    out.push(SubjectDataset {
                        subject: e.subject.clone(),
                        sessions: BTreeMap::new(),
                        provenance,
                    });
                    out.len() - 1
                }
            };
            out[pos].sessions.entry(e.session).or_default().push(e);
        }
        for d in &out {
            d.validate()?;
        }
        Ok(out)
    }
}

/// Subjects of one source dataset together with the number of subjects the
/// dataset was recruited with (excluded subjects keep their slot).
#[derive(Debug, Clone)]
pub struct DatasetGroup {
    pub declared_subjects: usize,
    pub subjects: Vec<SubjectDataset>,
}

/// Renumbers subjects consecutively across datasets as `S01`, `S02`, ...
/// A subject keeps its ordinal within its dataset (taken from the digits
/// of its id, or its position when it has none), offset by the declared
/// sizes of the datasets before it. A dataset recruited with nine subjects
/// whose fifth was excluded therefore yields S01-S04, S06-S09 and the next
/// dataset starts at S10.
pub fn relabel_subjects(groups: Vec<DatasetGroup>) -> Result<Vec<SubjectDataset>> {
    let mut offset = 0;
    let mut out = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for g in groups {
        for (pos, mut sd) in g.subjects.into_iter().enumerate() {
            let digits: String = sd.subject.chars().filter(char::is_ascii_digit).collect();
            let ordinal = digits.parse::<usize>().unwrap_or(pos + 1);
            if ordinal == 0 || ordinal > g.declared_subjects {
                return Err(Error::invalid(format!(
                    "subject {} does not fit a dataset of {} subjects",
                    sd.subject, g.declared_subjects
                )));
            }
            let id = format!("S{:02}", offset + ordinal);
            if !seen.insert(id.clone()) {
                return Err(Error::invalid(format!("subject id {id} assigned twice")));
            }
            for e in sd.sessions.values_mut().flatten() {
                e.subject = id.clone();
            }
            sd.subject = id;
            out.push(sd);
        }
        offset += g.declared_subjects;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn subject(id: &str) -> SubjectDataset {
        let e = Epoch {
            subject: id.into(),
            session: 1,
            index: 0,
            label: 0,
            rate_hz: 32.0,
            channels: 1,
            data: vec![0.0],
        };
        SubjectDataset::group(vec![e], Provenance::OeStyle).unwrap().remove(0)
    }

    #[test]
    fn relabel_keeps_gaps_and_offsets() {
        let oe: Vec<_> = ["S1", "S2", "S3", "S4", "S6", "S7", "S8", "S9"].iter().map(|s| subject(s)).collect();
        let me: Vec<_> = (1..=9).map(|i| subject(&format!("P{i}"))).collect();
        let all = relabel_subjects(vec![
            DatasetGroup { declared_subjects: 9, subjects: oe },
            DatasetGroup { declared_subjects: 9, subjects: me },
        ])
        .unwrap();
        let ids: Vec<&str> = all.iter().map(|s| s.subject.as_str()).collect();
        assert_eq!(ids.len(), 17);
        assert!(!ids.contains(&"S05"));
        assert_eq!(ids[4], "S06");
        assert_eq!(ids[8], "S10");
        assert_eq!(ids[16], "S18");
        assert_eq!(all[8].sessions[&1][0].subject, "S10");
    }

    #[test]
    fn grouping_validates_sessions() {
        let mut e = subject("S1").sessions[&1][0].clone();
        e.session = 5;
        assert!(SubjectDataset::group(vec![e], Provenance::Synthetic).is_err());
    }
}
