//! Monte-Carlo estimators for the second-order behaviour of a sampler and
//! for the variance of the mini-batch gradient it induces.

use serde::{Deserialize, Serialize};

use super::batch::BatchSource;
use super::pds::ActiveSample;
use super::{euclidean, LabeledPoint};
use crate::error::{Error, Result};

/// Binned pair-correlation estimate. `density[b]` covers
/// `[radius_bins[b], radius_bins[b + 1])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairCorrelation {
    pub radius_bins: Vec<f64>,
    pub density: Vec<f64>,
    pub sample_count: usize,
}

/// Estimates the second-order product density of a sampler from repeated
/// draws, divided by the product of first-order intensities.
///
/// The first-order intensity of every point is its empirical inclusion
/// frequency across `samples`. The expected pair count of a bin under an
/// independent process with those intensities is scaled by
/// `(k - 1) n / (k (n - 1))`, so uniform sampling without replacement of `k`
/// out of `n` points has expected density exactly 1 in every bin.
pub fn pair_correlation(
    samples: &[ActiveSample],
    dataset: &[LabeledPoint],
    bins: &[f64],
) -> Result<PairCorrelation> {
    if samples.is_empty() {
        return Err(Error::invalid("pair correlation needs at least one sample"));
    }
    if bins.len() < 2 || bins.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::invalid("bin edges must be strictly increasing (at least two edges)"));
    }
    let k = samples[0].indices.len();
    if samples.iter().any(|s| s.indices.len() != k) {
        return Err(Error::invalid("all samples must have the same size"));
    }
    let n = dataset.len();
    if k < 2 || n < 2 {
        return Err(Error::invalid("samples need at least two points"));
    }
    let position: std::collections::HashMap<usize, usize> =
        dataset.iter().enumerate().map(|(pos, p)| (p.id, pos)).collect();

    let nbins = bins.len() - 1;
    let bin_of = |d: f64| -> Option<usize> {
        if d < bins[0] || d >= bins[nbins] {
            return None;
        }
        Some(bins.partition_point(|&e| e <= d) - 1)
    };

    let mut inclusion = vec![0.0f64; n];
    let mut observed = vec![0.0f64; nbins];
    for s in samples {
        let pos: Vec<usize> = s
            .indices
            .iter()
            .map(|id| {
                position
                    .get(id)
                    .copied()
                    .ok_or_else(|| Error::invalid(format!("sample references unknown id {id}")))
            })
            .collect::<Result<_>>()?;
        for (i, &a) in pos.iter().enumerate() {
            inclusion[a] += 1.0;
            for &b in &pos[i + 1..] {
                if let Some(bin) = bin_of(euclidean(&dataset[a].features, &dataset[b].features)) {
                    observed[bin] += 1.0;
                }
            }
        }
    }
    let draws = samples.len() as f64;
    inclusion.iter_mut().for_each(|c| *c /= draws);

    let correction = (k as f64 - 1.0) * n as f64 / (k as f64 * (n as f64 - 1.0));
    let mut expected = vec![0.0f64; nbins];
    for a in 0..n {
        if inclusion[a] == 0.0 {
            continue;
        }
        for b in (a + 1)..n {
            if inclusion[b] == 0.0 {
                continue;
            }
            if let Some(bin) = bin_of(euclidean(&dataset[a].features, &dataset[b].features)) {
                expected[bin] += inclusion[a] * inclusion[b];
            }
        }
    }
    let density = observed
        .iter()
        .zip(&expected)
        .map(|(&o, &e)| {
            let e = e * correction * draws;
            if e > 0.0 {
                o / e
            } else {
                0.0
            }
        })
        .collect();
    Ok(PairCorrelation {
        radius_bins: bins.to_vec(),
        density,
        sample_count: samples.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientStats {
    pub mean_gradient: Vec<f64>,
    /// Unbiased (n - 1) variance of each coordinate of the batch gradient.
    pub per_coordinate_variance: Vec<f64>,
    pub trace_variance: f64,
    pub batch_count: usize,
}

/// Draws `repeats` batches of size `k`, evaluates the batch gradient on each
/// and returns the empirical per-coordinate variance of that estimator.
///
/// Batch ids are sorted before `loss_gradient` sees them, so the estimator
/// depends only on the batch as a set.
pub fn gradient_variance<F>(
    mut loss_gradient: F,
    dataset_size: usize,
    sampler: &mut dyn BatchSource,
    k: usize,
    repeats: usize,
) -> Result<GradientStats>
where
    F: FnMut(&[usize]) -> Vec<f64>,
{
    if repeats < 2 {
        return Err(Error::invalid("gradient variance needs at least two repeats"));
    }
    if k == 0 || k > dataset_size {
        return Err(Error::invalid(format!(
            "batch size {k} must lie in 1..={dataset_size}"
        )));
    }
    let mut grads: Vec<Vec<f64>> = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let mut batch = sampler.next_batch(k)?;
        if batch.len() != k {
            return Err(Error::invalid(format!(
                "{} sampler returned {} ids, expected {k}",
                sampler.name(),
                batch.len()
            )));
        }
        batch.sort_unstable();
        let g = loss_gradient(&batch);
        if let Some(first) = grads.first() {
            if first.len() != g.len() {
                return Err(Error::invalid("gradient dimension changed between batches"));
            }
        }
        grads.push(g);
    }
    // Welford keeps a constant sequence at exactly zero variance.
    let p = grads[0].len();
    let mut mean = vec![0.0; p];
    let mut m2 = vec![0.0; p];
    for (i, g) in grads.iter().enumerate() {
        let count = (i + 1) as f64;
        for ((m, s), &x) in mean.iter_mut().zip(m2.iter_mut()).zip(g) {
            let delta = x - *m;
            *m += delta / count;
            *s += delta * (x - *m);
        }
    }
    let var: Vec<f64> = m2.iter().map(|s| s / (repeats as f64 - 1.0)).collect();
    let trace = var.iter().sum();
    Ok(GradientStats {
        mean_gradient: mean,
        per_coordinate_variance: var,
        trace_variance: trace,
        batch_count: repeats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{vanilla_pds, PdsParams, UniformSubsets};

    fn grid(side: usize) -> Vec<LabeledPoint> {
        (0..side * side)
            .map(|i| LabeledPoint::new(i, vec![(i % side) as f64, (i / side) as f64], 0))
            .collect()
    }

    #[test]
    fn input_validation() {
        let pts = grid(3);
        assert!(pair_correlation(&[], &pts, &[0.0, 1.0]).is_err());
        let s = vanilla_pds(&pts, &PdsParams::with_neighbors(3, 0.0, 2, 0)).unwrap();
        assert!(pair_correlation(&[s.clone()], &pts, &[1.0, 1.0]).is_err());
        assert!(pair_correlation(&[s], &pts, &[0.0, 1.0, 2.0]).is_ok());
    }

    #[test]
    fn bins_below_radius_are_empty() {
        let pts: Vec<_> = {
            use rand::Rng;
            let mut rng = crate::rng::seeded(4);
            (0..150)
                .map(|i| LabeledPoint::new(i, vec![rng.random_range(0.0..6.0), rng.random_range(0.0..6.0)], 0))
                .collect()
        };
        let samples: Vec<_> = (0..40)
            .map(|s| vanilla_pds(&pts, &PdsParams::with_neighbors(12, 0.5, 2, s)).unwrap())
            .collect();
        let pc = pair_correlation(&samples, &pts, &[0.0, 0.25, 0.5, 1.0, 3.0]).unwrap();
        assert_eq!(pc.density[0], 0.0);
        assert_eq!(pc.density[1], 0.0);
        assert!(pc.density[3] > 0.5);
    }

    #[test]
    fn constant_gradient_has_zero_variance() {
        let mut src = UniformSubsets::new((0..50).collect(), 2);
        let stats = gradient_variance(|_| vec![1.5, -2.0], 50, &mut src, 8, 30).unwrap();
        assert_eq!(stats.trace_variance, 0.0);
        assert_eq!(stats.mean_gradient, vec![1.5, -2.0]);
    }

    #[test]
    fn full_batch_has_zero_variance() {
        let values: Vec<f64> = (0..20).map(|i| (i as f64).sin()).collect();
        let mut src = UniformSubsets::new((0..20).collect(), 2);
        let stats = gradient_variance(
            |ids| vec![ids.iter().map(|&i| values[i]).sum::<f64>() / ids.len() as f64],
            20,
            &mut src,
            20,
            10,
        )
        .unwrap();
        assert_eq!(stats.trace_variance, 0.0);
    }

    #[test]
    fn trace_is_sum_of_coordinates() {
        let mut src = UniformSubsets::new((0..30).collect(), 5);
        let stats = gradient_variance(
            |ids| vec![ids[0] as f64, ids.iter().sum::<usize>() as f64 * 0.1],
            30,
            &mut src,
            4,
            50,
        )
        .unwrap();
        let sum: f64 = stats.per_coordinate_variance.iter().sum();
        assert!((sum - stats.trace_variance).abs() <= 1e-9 * sum.abs());
        assert!(stats.per_coordinate_variance.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn rejects_bad_arguments() {
        let mut src = UniformSubsets::new((0..10).collect(), 0);
        assert!(gradient_variance(|_| vec![0.0], 10, &mut src, 4, 1).is_err());
        assert!(gradient_variance(|_| vec![0.0], 10, &mut src, 11, 5).is_err());
    }
}
