use rand::seq::SliceRandom;
use rand::Rng as _;

use super::pds::{vanilla_pds, DensePds, PdsParams, PdsVariant};
use super::LabeledPoint;
use crate::error::{Error, Result};
use crate::rng;

/// Anything that can hand out mini-batches of dataset ids.
pub trait BatchSource {
    /// Ids for the next optimisation step. Implementations return `k` ids,
    /// except that epoch-based sources may return a shorter final batch.
    fn next_batch(&mut self, k: usize) -> Result<Vec<usize>>;

    fn name(&self) -> &'static str;
}

/// Independent uniform `k`-subsets without replacement, one per call.
#[derive(Debug, Clone)]
pub struct UniformSubsets {
    ids: Vec<usize>,
    rng: rng::Rng,
}

impl UniformSubsets {
    pub fn new(ids: Vec<usize>, seed: u64) -> Self {
        Self {
            ids,
            rng: rng::seeded(seed),
        }
    }
}

impl BatchSource for UniformSubsets {
    fn next_batch(&mut self, k: usize) -> Result<Vec<usize>> {
        if k > self.ids.len() {
            return Err(Error::Infeasible {
                requested: k,
                accepted: 0,
                attempts_used: 0,
            });
        }
        // Partial Fisher-Yates on the id buffer.
        let n = self.ids.len();
        for i in 0..k {
            let j = self.rng.random_range(i..n);
            self.ids.swap(i, j);
        }
        Ok(self.ids[..k].to_vec())
    }

    fn name(&self) -> &'static str {
        "uniform"
    }
}

/// Classic epoch-wise shuffling: every id is visited once per pass, the
/// final batch of a pass may be short.
#[derive(Debug, Clone)]
pub struct ShuffledEpochs {
    order: Vec<usize>,
    cursor: usize,
    rng: rng::Rng,
}

impl ShuffledEpochs {
    pub fn new(ids: Vec<usize>, seed: u64) -> Self {
        let mut rng = rng::seeded(seed);
        let mut order = ids;
        order.shuffle(&mut rng);
        Self {
            order,
            cursor: 0,
            rng,
        }
    }
}

impl BatchSource for ShuffledEpochs {
    fn next_batch(&mut self, k: usize) -> Result<Vec<usize>> {
        if self.order.is_empty() || k == 0 {
            return Err(Error::invalid("cannot draw batches from an empty set"));
        }
        if self.cursor >= self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let end = (self.cursor + k).min(self.order.len());
        let batch = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        Ok(batch)
    }

    fn name(&self) -> &'static str {
        "uniform"
    }
}

/// One Poisson-disk draw per batch. Each draw uses a sub-seed derived from
/// the base seed and the draw number.
#[derive(Debug, Clone)]
pub struct PdsBatches<'a> {
    points: &'a [LabeledPoint],
    dense: Option<DensePds<'a>>,
    params: PdsParams,
    draws: u64,
    restarts: usize,
}

impl<'a> PdsBatches<'a> {
    pub fn new(points: &'a [LabeledPoint], variant: PdsVariant, params: PdsParams) -> Result<Self> {
        let dense = match variant {
            PdsVariant::Dense => Some(DensePds::new(points, params.k_neighbors)?),
            PdsVariant::Vanilla => None,
        };
        Ok(Self {
            points,
            dense,
            params,
            draws: 0,
            restarts: 0,
        })
    }

    /// Lets a batch that got stuck short of `k` points be thrown again from
    /// scratch with a fresh sub-seed, up to `restarts` times. Large radii can
    /// leave a random packing one point short even when `k` points fit.
    pub fn with_restarts(mut self, restarts: usize) -> Self {
        self.restarts = restarts;
        self
    }
}

impl BatchSource for PdsBatches<'_> {
    fn next_batch(&mut self, k: usize) -> Result<Vec<usize>> {
        let mut params = self.params.clone();
        params.k = k;
        params.max_attempts = params.max_attempts.max(k);
        let mut restart = 0;
        loop {
            params.seed = rng::derive_seed(self.params.seed, &[self.draws]);
            self.draws += 1;
            let result = match &self.dense {
                Some(d) => d.sample(&params),
                None => vanilla_pds(self.points, &params),
            };
            match result {
                Err(e) if e.is_infeasible() && restart < self.restarts => restart += 1,
                other => return other.map(|s| s.indices),
            }
        }
    }

    fn name(&self) -> &'static str {
        if self.dense.is_some() {
            "dense_pds"
        } else {
            "vanilla_pds"
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_subsets_are_distinct_and_in_range() {
        let mut src = UniformSubsets::new((100..150).collect(), 3);
        for _ in 0..20 {
            let mut b = src.next_batch(16).unwrap();
            b.sort_unstable();
            b.dedup();
            assert_eq!(b.len(), 16);
            assert!(b.iter().all(|&i| (100..150).contains(&i)));
        }
        assert!(src.next_batch(51).unwrap_err().is_infeasible());
    }

    #[test]
    fn shuffled_epochs_cover_every_id_once_per_pass() {
        let mut src = ShuffledEpochs::new((0..37).collect(), 1);
        for _ in 0..3 {
            let mut seen = Vec::new();
            for _ in 0..3 {
                seen.extend(src.next_batch(16).unwrap());
            }
            seen.sort_unstable();
            assert_eq!(seen, (0..37).collect::<Vec<_>>());
        }
    }

    #[test]
    fn pds_batches_respect_radius() {
        let pts: Vec<_> = (0..64)
            .map(|i| LabeledPoint::new(i, vec![(i % 8) as f64, (i / 8) as f64], (i % 8 + i / 8) % 2))
            .collect();
        let params = PdsParams::with_neighbors(1, 1.2, 4, 9);
        let mut src = PdsBatches::new(&pts, PdsVariant::Vanilla, params).unwrap();
        let a = src.next_batch(8).unwrap();
        let b = src.next_batch(8).unwrap();
        assert_eq!(a.len(), 8);
        assert_ne!(a, b);
        for (i, x) in a.iter().enumerate() {
            for y in &a[i + 1..] {
                let d = super::super::distance(&pts[*x], &pts[*y]).unwrap();
                assert!(d > 1.2);
            }
        }
    }

    #[test]
    fn restarts_rescue_tight_packings() {
        // Five points on a line at unit spacing: r0 = 1.5 admits exactly
        // {0, 2, 4}, so most random starts get stuck at two points.
        let pts: Vec<_> = (0..5).map(|i| LabeledPoint::new(i, vec![i as f64], 0)).collect();
        let mut params = PdsParams::with_neighbors(1, 1.5, 2, 4);
        params.max_attempts = 50;
        let mut plain = PdsBatches::new(&pts, PdsVariant::Vanilla, params.clone()).unwrap();
        let stuck = (0..50).filter(|_| plain.next_batch(3).is_err()).count();
        assert!(stuck > 0);
        let mut patient = PdsBatches::new(&pts, PdsVariant::Vanilla, params).unwrap().with_restarts(200);
        for _ in 0..50 {
            let mut b = patient.next_batch(3).unwrap();
            b.sort_unstable();
            assert_eq!(b, vec![0, 2, 4]);
        }
    }
}
