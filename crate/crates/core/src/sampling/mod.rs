//! Poisson-disk active sampling over labeled feature points.
//!
//! A dataset is a slice of [`LabeledPoint`]s sharing one feature dimension.
//! [`dense_pds`] and [`vanilla_pds`] throw darts at it, accepting a candidate
//! only when it lies farther than `r0` from every point accepted so far.
//! Dense PDS additionally picks the candidate's mingling level (the fraction
//! of its nearest neighbours carrying another label) from a categorical
//! distribution, concentrating samples near class boundaries.

mod batch;
mod estimators;
mod mingling;
mod pds;

pub use batch::{BatchSource, PdsBatches, ShuffledEpochs, UniformSubsets};
pub use estimators::{gradient_variance, pair_correlation, GradientStats, PairCorrelation};
pub use mingling::{mingling_index, stratify_by_mingling, MinglingStrata};
pub use pds::{
    dense_pds, vanilla_pds, write_samples_csv, ActiveSample, DensePds, PdsParams, PdsVariant,
    RadiusPolicy,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A flattened feature vector with its class label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledPoint {
    pub id: usize,
    pub features: Vec<f64>,
    pub label: usize,
}

impl LabeledPoint {
    pub fn new(id: usize, features: Vec<f64>, label: usize) -> Self {
        Self {
            id,
            features,
            label,
        }
    }
}

/// Euclidean distance between the feature vectors of two points.
pub fn distance(a: &LabeledPoint, b: &LabeledPoint) -> Result<f64> {
    if a.features.len() != b.features.len() {
        return Err(Error::invalid(format!(
            "feature dimension mismatch: {} vs {}",
            a.features.len(),
            b.features.len()
        )));
    }
    Ok(euclidean(&a.features, &b.features))
}

/// Four independent accumulators let the compiler vectorise the loop.
#[inline]
pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    let mut lanes = [0.0f64; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            let d = x[l] - y[l];
            lanes[l] += d * d;
        }
    }
    let mut s = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += (x - y) * (x - y);
    }
    s.sqrt()
}

/// Checks the dataset invariants: one shared feature dimension and unique ids.
/// Returns the feature dimension.
pub fn validate_dataset(points: &[LabeledPoint]) -> Result<usize> {
    let Some(first) = points.first() else {
        return Err(Error::invalid("dataset is empty"));
    };
    let dim = first.features.len();
    let mut ids = std::collections::HashSet::with_capacity(points.len());
    for p in points {
        if p.features.len() != dim {
            return Err(Error::invalid(format!(
                "point {} has dimension {}, expected {}",
                p.id,
                p.features.len(),
                dim
            )));
        }
        if !ids.insert(p.id) {
            return Err(Error::invalid(format!("duplicate point id {}", p.id)));
        }
    }
    Ok(dim)
}

/// Z-scores every feature dimension over the dataset. Constant dimensions
/// are centred but left unscaled.
pub fn standardize(points: &[LabeledPoint]) -> Vec<LabeledPoint> {
    if points.is_empty() {
        return Vec::new();
    }
    let dim = points[0].features.len();
    let n = points.len() as f64;
    let mut mean = vec![0.0; dim];
    for p in points {
        for (m, x) in mean.iter_mut().zip(&p.features) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dim];
    for p in points {
        for ((v, x), m) in var.iter_mut().zip(&p.features).zip(&mean) {
            *v += (x - m) * (x - m);
        }
    }
    let scale: Vec<f64> = var
        .iter()
        .map(|v| {
            let sd = (v / n).sqrt();
            if sd > 1e-12 {
                1.0 / sd
            } else {
                1.0
            }
        })
        .collect();
    points
        .iter()
        .map(|p| LabeledPoint {
            id: p.id,
            label: p.label,
            features: p
                .features
                .iter()
                .zip(&mean)
                .zip(&scale)
                .map(|((x, m), s)| (x - m) * s)
                .collect(),
        })
        .collect()
}

/// Distance from every point to its nearest other point.
pub fn nearest_neighbor_distances(points: &[LabeledPoint]) -> Vec<f64> {
    let n = points.len();
    let mut nn = vec![f64::INFINITY; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = euclidean(&points[i].features, &points[j].features);
            if d < nn[i] {
                nn[i] = d;
            }
            if d < nn[j] {
                nn[j] = d;
            }
        }
    }
    nn
}

/// Linear-interpolation quantile (`q` in `[0, 1]`) of an unsorted sample.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut sorted: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if sorted.is_empty() {
        return f64::NAN;
    }
    sorted.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}
