use std::collections::HashSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::SubjectDataset;
use crate::error::{Error, Result};
use crate::preprocessing::{Epoch, EpochKey};
use crate::rng;

#[derive(Debug, Clone)]
pub struct DependentSplit<'a> {
    /// Sessions 1 to 3.
    pub train_val: Vec<&'a Epoch>,
    /// Session 4.
    pub test: Vec<&'a Epoch>,
}

#[derive(Debug, Clone)]
pub struct IndependentSplit<'a> {
    pub train: Vec<&'a Epoch>,
    pub val: Vec<&'a Epoch>,
    pub test: Vec<&'a Epoch>,
}

#[derive(Debug, Clone)]
pub struct AdaptiveSplit<'a> {
    /// Sessions 1 and 2.
    pub target_train: Vec<&'a Epoch>,
    /// Session 3.
    pub target_val: Vec<&'a Epoch>,
    /// Session 4.
    pub test: Vec<&'a Epoch>,
}

fn require_sessions(sd: &SubjectDataset) -> Result<()> {
    for s in 1..=4u8 {
        if !sd.sessions.contains_key(&s) {
            return Err(Error::invalid(format!("subject {} is missing session {s}", sd.subject)));
        }
    }
    Ok(())
}

fn sessions<'a>(sd: &'a SubjectDataset, which: &[u8]) -> Vec<&'a Epoch> {
    which.iter().filter_map(|s| sd.sessions.get(s)).flatten().collect()
}

pub fn split_dependent(sd: &SubjectDataset) -> Result<DependentSplit<'_>> {
    require_sessions(sd)?;
    Ok(DependentSplit {
        train_val: sessions(sd, &[1, 2, 3]),
        test: sessions(sd, &[4]),
    })
}

/// Seeded shuffle of `pool`, then the first `round((1 - val_fraction) n)`
/// epochs train and the rest validate.
pub fn split_train_val<'a>(
    pool: &[&'a Epoch],
    val_fraction: f64,
    seed: u64,
) -> Result<(Vec<&'a Epoch>, Vec<&'a Epoch>)> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::invalid(format!("validation fraction must lie in (0, 1), got {val_fraction}")));
    }
    let mut order = pool.to_vec();
    order.shuffle(&mut rng::seeded(seed));
    let n_train = ((1.0 - val_fraction) * pool.len() as f64).round() as usize;
    let val = order.split_off(n_train.min(order.len()));
    Ok((order, val))
}

/// Every session of every subject except the target.
pub fn source_pool<'a>(all: &'a [SubjectDataset], target: &str) -> Result<Vec<&'a Epoch>> {
    if all.len() < 2 {
        return Err(Error::invalid("leave-one-subject-out needs at least two subjects"));
    }
    if !all.iter().any(|s| s.subject == target) {
        return Err(Error::invalid(format!("target subject {target} not found")));
    }
    Ok(all.iter().filter(|s| s.subject != target).flat_map(|s| s.epochs()).collect())
}

/// Sources are pooled and split into train and validation; the test set is
/// session 4 of the target.
pub fn split_independent<'a>(
    all: &'a [SubjectDataset],
    target: &str,
    val_fraction: f64,
    seed: u64,
) -> Result<IndependentSplit<'a>> {
    let pool = source_pool(all, target)?;
    let sd = all.iter().find(|s| s.subject == target).expect("checked by source_pool");
    require_sessions(sd)?;
    let (train, val) = split_train_val(&pool, val_fraction, seed)?;
    Ok(IndependentSplit {
        train,
        val,
        test: sessions(sd, &[4]),
    })
}

pub fn split_adaptive(sd: &SubjectDataset) -> Result<AdaptiveSplit<'_>> {
    require_sessions(sd)?;
    Ok(AdaptiveSplit {
        target_train: sessions(sd, &[1, 2]),
        target_val: sessions(sd, &[3]),
        test: sessions(sd, &[4]),
    })
}

/// Overlap counts between the epoch-key sets of one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct LeakageAudit {
    pub train_test: usize,
    pub val_test: usize,
    pub train_val: usize,
}

impl LeakageAudit {
    pub fn is_clean(&self) -> bool {
        self.train_test == 0 && self.val_test == 0 && self.train_val == 0
    }
}

pub fn audit_leakage(train: &[&Epoch], val: &[&Epoch], test: &[&Epoch]) -> LeakageAudit {
    let keys = |set: &[&Epoch]| -> HashSet<EpochKey> { set.iter().map(|e| e.key()).collect() };
    let (tr, va, te) = (keys(train), keys(val), keys(test));
    LeakageAudit {
        train_test: tr.intersection(&te).count(),
        val_test: va.intersection(&te).count(),
        train_val: tr.intersection(&va).count(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::{generate_synthetic, SynthP300Params};

    fn data(subjects: usize, per_session: usize) -> Vec<SubjectDataset> {
        generate_synthetic(&SynthP300Params {
            subjects,
            epochs_per_session: per_session,
            channels: 2,
            rate_hz: 8.0,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn dependent_counts() {
        let d = data(1, 100);
        let s = split_dependent(&d[0]).unwrap();
        assert_eq!((s.train_val.len(), s.test.len()), (300, 100));
        assert!(audit_leakage(&s.train_val, &[], &s.test).is_clean());
        assert!(s.test.iter().all(|e| e.session == 4));
    }

    #[test]
    fn missing_session_rejected() {
        let mut d = data(1, 10);
        d[0].sessions.remove(&2);
        assert!(split_dependent(&d[0]).unwrap_err().is_invalid_input());
        assert!(split_adaptive(&d[0]).is_err());
    }

    #[test]
    fn independent_counts_and_leakage() {
        let d = data(3, 100);
        let s = split_independent(&d, "S01", 0.15, 3).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (680, 120, 100));
        assert!(s.train.iter().chain(&s.val).all(|e| e.subject != "S01"));
        assert!(s.test.iter().all(|e| e.subject == "S01" && e.session == 4));
        assert!(audit_leakage(&s.train, &s.val, &s.test).is_clean());
        assert!(split_independent(&d[..1], "S01", 0.15, 3).is_err());
        assert!(split_independent(&d, "S09", 0.15, 3).is_err());
    }

    #[test]
    fn adaptive_follows_sessions() {
        let d = data(1, 100);
        let s = split_adaptive(&d[0]).unwrap();
        assert_eq!((s.target_train.len(), s.target_val.len(), s.test.len()), (200, 100, 100));

        let mut d = data(1, 120);
        d[0].sessions.get_mut(&2).unwrap().truncate(80);
        let s = split_adaptive(&d[0]).unwrap();
        assert_eq!((s.target_train.len(), s.target_val.len(), s.test.len()), (200, 120, 120));
    }

    #[test]
    fn audit_counts_overlap() {
        let d = data(1, 10);
        let s = split_dependent(&d[0]).unwrap();
        let a = audit_leakage(&s.train_val[..5], &s.train_val[3..8], &[s.train_val[0], s.test[0]]);
        assert_eq!(a, LeakageAudit { train_test: 1, val_test: 0, train_val: 2 });
        assert!(!a.is_clean());
    }
}
