//! Wolpaw information transfer rate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bits per decision for an `n`-class selection made with accuracy `p`:
/// `log2 N + P log2 P + (1 - P) log2((1 - P) / (N - 1))`, with `0 log 0 = 0`.
pub fn bitrate(p: f64, n: usize) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(format!("accuracy must lie in [0, 1], got {p}")));
    }
    if n < 2 {
        return Err(Error::invalid(format!("class count must be at least 2, got {n}")));
    }
    let n = n as f64;
    let hit = if p > 0.0 { p * p.log2() } else { 0.0 };
    let miss = if p < 1.0 {
        (1.0 - p) * ((1.0 - p) / (n - 1.0)).log2()
    } else {
        0.0
    };
    // The exact value is a KL divergence and never negative; clamp rounding.
    Ok((n.log2() + hit + miss).max(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BitrateCurve {
    /// Number of stimulation blocks averaged per decision.
    pub blocks: Vec<u32>,
    pub accuracy: Vec<f64>,
    pub seconds_per_block: f64,
    pub class_count: usize,
}

/// Bits per minute at every point of an accuracy-vs-blocks curve.
pub fn bitrate_curve(curve: &BitrateCurve) -> Result<Vec<f64>> {
    if curve.blocks.len() != curve.accuracy.len() {
        return Err(Error::invalid("blocks and accuracy differ in length"));
    }
    if !(curve.seconds_per_block > 0.0) {
        return Err(Error::invalid("seconds per block must be positive"));
    }
    curve
        .blocks
        .iter()
        .zip(&curve.accuracy)
        .map(|(&blocks, &acc)| {
            if blocks == 0 {
                return Err(Error::invalid("block counts must be positive"));
            }
            Ok(bitrate(acc, curve.class_count)? * 60.0 / (blocks as f64 * curve.seconds_per_block))
        })
        .collect()
}
