use std::io::Write;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::mingling::{strata_and_nearest, MinglingStrata};
use super::{euclidean, nearest_neighbor_distances, quantile, validate_dataset, LabeledPoint};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PdsVariant {
    /// Candidates drawn through a categorical distribution over mingling levels.
    Dense,
    /// Candidates drawn uniformly from all not-yet-accepted points.
    Vanilla,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdsParams {
    /// Target sample count.
    pub k: usize,
    /// Rejection radius in feature-space units.
    pub r0: f64,
    /// Categorical distribution over the `k_neighbors + 1` mingling levels.
    pub pi: Vec<f64>,
    pub k_neighbors: usize,
    pub max_attempts: usize,
    pub seed: u64,
}

impl PdsParams {
    pub const DEFAULT_K_NEIGHBORS: usize = 5;

    /// Uniform `pi`, five mingling neighbours and a generous attempt budget.
    pub fn new(k: usize, r0: f64, seed: u64) -> Self {
        Self::with_neighbors(k, r0, Self::DEFAULT_K_NEIGHBORS, seed)
    }

    pub fn with_neighbors(k: usize, r0: f64, k_neighbors: usize, seed: u64) -> Self {
        let levels = k_neighbors + 1;
        Self {
            k,
            r0,
            pi: vec![1.0 / levels as f64; levels],
            k_neighbors,
            max_attempts: Self::default_max_attempts(k),
            seed,
        }
    }

    pub fn default_max_attempts(k: usize) -> usize {
        (1000 * k).max(10_000)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        if self.k_neighbors == 0 {
            return Err(Error::invalid("kNeighbors must be at least 1"));
        }
        if self.max_attempts < self.k {
            return Err(Error::invalid(format!(
                "maxAttempts ({}) must be at least k ({})",
                self.max_attempts, self.k
            )));
        }
        if !(self.r0 >= 0.0) || !self.r0.is_finite() {
            return Err(Error::invalid(format!("r0 must be finite and >= 0, got {}", self.r0)));
        }
        if self.pi.len() != self.k_neighbors + 1 {
            return Err(Error::invalid(format!(
                "pi has {} entries, expected kNeighbors + 1 = {}",
                self.pi.len(),
                self.k_neighbors + 1
            )));
        }
        if self.pi.iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::invalid("pi entries must be non-negative"));
        }
        let total: f64 = self.pi.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("pi must sum to 1, sums to {total}")));
        }
        Ok(())
    }
}

/// An index subset produced by one dart-throwing run.
#[derive(Debug, Clone, PartialEq)]
pub struct ActiveSample {
    /// Dataset ids in acceptance order.
    pub indices: Vec<usize>,
    pub params: PdsParams,
    pub variant: PdsVariant,
    pub attempts_used: usize,
    /// Smallest pairwise distance inside the sample; `+inf` below two points.
    pub min_pair_distance: f64,
    /// All candidate-to-accepted distance evaluations, rejections included.
    pub distance_evaluations: u64,
    /// Distance evaluations spent on candidates that were accepted.
    pub accepted_distance_evaluations: u64,
}

/// Dense PDS with its mingling strata precomputed, for repeated draws over
/// one dataset.
#[derive(Debug, Clone)]
pub struct DensePds<'a> {
    points: &'a [LabeledPoint],
    strata: MinglingStrata,
    nearest: Vec<f64>,
}

impl<'a> DensePds<'a> {
    pub fn new(points: &'a [LabeledPoint], k_neighbors: usize) -> Result<Self> {
        let (strata, nearest) = strata_and_nearest(points, k_neighbors, k_neighbors + 1)?;
        Ok(Self { points, strata, nearest })
    }

    pub fn strata(&self) -> &MinglingStrata {
        &self.strata
    }

    pub fn sample(&self, params: &PdsParams) -> Result<ActiveSample> {
        params.validate()?;
        if params.k_neighbors != self.strata.k_neighbors {
            return Err(Error::invalid(format!(
                "params use kNeighbors = {} but strata were built with {}",
                params.k_neighbors, self.strata.k_neighbors
            )));
        }
        let mut pools = vec![Vec::new(); self.strata.levels.len()];
        for (pos, &level) in self.strata.level_of.iter().enumerate() {
            pools[level].push(pos);
        }
        throw_darts(self.points, pools, params.pi.clone(), params, PdsVariant::Dense)
    }
}

/// Dense Poisson-disk sampling: each dart first draws a mingling level from
/// `params.pi`, then a uniformly random not-yet-accepted point of that level,
/// and keeps it only if it is farther than `r0` from every accepted point.
pub fn dense_pds(dataset: &[LabeledPoint], params: &PdsParams) -> Result<ActiveSample> {
    params.validate()?;
    DensePds::new(dataset, params.k_neighbors)?.sample(params)
}

/// Standard dart throwing: candidates are uniform over all not-yet-accepted
/// points; `pi` and the mingling levels are ignored.
pub fn vanilla_pds(dataset: &[LabeledPoint], params: &PdsParams) -> Result<ActiveSample> {
    params.validate()?;
    validate_dataset(dataset)?;
    let pools = vec![(0..dataset.len()).collect()];
    throw_darts(dataset, pools, vec![1.0], params, PdsVariant::Vanilla)
}

/// Consecutive draws of an empty level after which its mass is dropped.
const EMPTY_DRAWS_BEFORE_RENORMALIZING: usize = 3;

fn throw_darts(
    points: &[LabeledPoint],
    mut pools: Vec<Vec<usize>>,
    mut weights: Vec<f64>,
    params: &PdsParams,
    variant: PdsVariant,
) -> Result<ActiveSample> {
    let infeasible = |accepted: usize, attempts_used: usize| Error::Infeasible {
        requested: params.k,
        accepted,
        attempts_used,
    };
    if params.k > points.len() {
        return Err(infeasible(0, 0));
    }
    let mut rng = rng::seeded(params.seed);
    let mut accepted: Vec<usize> = Vec::with_capacity(params.k);
    // A rejected point stays a candidate but can never be accepted later:
    // the accepted set only grows, so its minimum distance only shrinks.
    let mut dead = vec![false; points.len()];
    let mut attempts = 0usize;
    let mut empty_streak = 0usize;
    let mut min_pair = f64::INFINITY;
    let mut evals = 0u64;
    let mut accepted_evals = 0u64;

    while accepted.len() < params.k {
        if attempts >= params.max_attempts {
            return Err(infeasible(accepted.len(), attempts));
        }
        attempts += 1;
        let Some(level) = draw_level(&weights, &mut rng) else {
            return Err(infeasible(accepted.len(), attempts));
        };
        let pool = &mut pools[level];
        if pool.is_empty() {
            empty_streak += 1;
            if empty_streak >= EMPTY_DRAWS_BEFORE_RENORMALIZING {
                for (w, p) in weights.iter_mut().zip(&pools) {
                    if p.is_empty() {
                        *w = 0.0;
                    }
                }
                empty_streak = 0;
            }
            continue;
        }
        empty_streak = 0;
        let slot = rng.random_range(0..pool.len());
        let candidate = pool[slot];
        if dead[candidate] {
            continue;
        }
        let x = &points[candidate].features;
        let mut nearest = f64::INFINITY;
        let mut rejected = false;
        for &a in &accepted {
            evals += 1;
            let d = euclidean(x, &points[a].features);
            if d <= params.r0 {
                rejected = true;
                break;
            }
            nearest = nearest.min(d);
        }
        if rejected {
            dead[candidate] = true;
            continue;
        }
        accepted_evals += accepted.len() as u64;
        min_pair = min_pair.min(nearest);
        accepted.push(candidate);
        pool.swap_remove(slot);
    }

    Ok(ActiveSample {
        indices: accepted.iter().map(|&p| points[p].id).collect(),
        params: params.clone(),
        variant,
        attempts_used: attempts,
        min_pair_distance: min_pair,
        distance_evaluations: evals,
        accepted_distance_evaluations: accepted_evals,
    })
}

/// Categorical draw from unnormalised weights; `None` when all are zero.
fn draw_level(weights: &[f64], rng: &mut rng::Rng) -> Option<usize> {
    if weights.len() == 1 {
        return (weights[0] > 0.0).then_some(0);
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return None;
    }
    let mut u = rng.random::<f64>() * total;
    let mut last_positive = None;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            if u < w {
                return Some(i);
            }
            u -= w;
            last_positive = Some(i);
        }
    }
    last_positive
}

/// How the rejection radius is chosen for a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RadiusPolicy {
    Fixed { r0: f64 },
    /// The `q`-quantile of nearest-neighbour distances.
    NearestNeighborQuantile { q: f64 },
    /// The `q`-quantile of all pairwise distances, i.e. the radius that
    /// forbids the closest fraction `q` of pairs.
    PairwiseQuantile { q: f64 },
}

impl Default for RadiusPolicy {
    fn default() -> Self {
        RadiusPolicy::NearestNeighborQuantile { q: 0.10 }
    }
}

impl RadiusPolicy {
    pub fn resolve(&self, points: &[LabeledPoint]) -> f64 {
        self.resolve_with(points, None)
    }

    fn resolve_with(&self, points: &[LabeledPoint], nearest: Option<&[f64]>) -> f64 {
        match *self {
            RadiusPolicy::Fixed { r0 } => r0,
            RadiusPolicy::NearestNeighborQuantile { q } => match nearest {
                Some(nn) => quantile(nn, q),
                None => quantile(&nearest_neighbor_distances(points), q),
            },
            RadiusPolicy::PairwiseQuantile { q } => {
                let mut d = Vec::with_capacity(points.len() * points.len().saturating_sub(1) / 2);
                for i in 0..points.len() {
                    for j in (i + 1)..points.len() {
                        d.push(euclidean(&points[i].features, &points[j].features));
                    }
                }
                quantile(&d, q)
            }
        }
    }

    /// Draws a sample, halving `r0` after each infeasible attempt, up to
    /// `retries` times, before surfacing the infeasibility error.
    pub fn sample(
        &self,
        variant: PdsVariant,
        points: &[LabeledPoint],
        params: &PdsParams,
        retries: usize,
    ) -> Result<ActiveSample> {
        let mut params = params.clone();
        let dense = match variant {
            PdsVariant::Dense => Some(DensePds::new(points, params.k_neighbors)?),
            PdsVariant::Vanilla => None,
        };
        params.r0 = self.resolve_with(points, dense.as_ref().map(|d| d.nearest.as_slice()));
        let mut attempt = 0;
        loop {
            let result = match &dense {
                Some(d) => d.sample(&params),
                None => vanilla_pds(points, &params),
            };
            match result {
                Err(e) if e.is_infeasible() && attempt < retries && params.k <= points.len() => {
                    attempt += 1;
                    params.r0 /= 2.0;
                }
                other => return other,
            }
        }
    }
}

/// Writes `dataset_id,sample_index,point_id` rows (with a header), where
/// `sample_index` numbers the samples in `samples`.
pub fn write_samples_csv<W: Write>(
    mut out: W,
    dataset_id: &str,
    samples: &[ActiveSample],
) -> std::io::Result<()> {
    writeln!(out, "dataset_id,sample_index,point_id")?;
    for (s, sample) in samples.iter().enumerate() {
        for id in &sample.indices {
            writeln!(out, "{dataset_id},{s},{id}")?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn checkerboard(side: usize) -> Vec<LabeledPoint> {
        let mut pts = Vec::new();
        for r in 0..side {
            for c in 0..side {
                pts.push(LabeledPoint::new(r * side + c, vec![c as f64, r as f64], (r + c) % 2));
            }
        }
        pts
    }

    fn brute_min_pair(points: &[LabeledPoint], ids: &[usize]) -> f64 {
        let mut best = f64::INFINITY;
        for (i, a) in ids.iter().enumerate() {
            for b in &ids[i + 1..] {
                let pa = &points.iter().find(|p| p.id == *a).unwrap().features;
                let pb = &points.iter().find(|p| p.id == *b).unwrap().features;
                let d = ((pa[0] - pb[0]).powi(2) + (pa[1] - pb[1]).powi(2)).sqrt();
                best = best.min(d);
            }
        }
        best
    }

    #[test]
    fn params_validation() {
        assert!(PdsParams::new(4, 0.5, 1).validate().is_ok());
        let mut p = PdsParams::new(4, 0.5, 1);
        p.pi[0] += 0.1;
        assert!(p.validate().is_err());
        let mut p = PdsParams::new(4, 0.5, 1);
        p.max_attempts = 3;
        assert!(p.validate().is_err());
        assert!(PdsParams::new(0, 0.5, 1).validate().is_err());
        let mut p = PdsParams::new(4, 0.5, 1);
        p.pi = vec![1.0];
        assert!(p.validate().is_err());
    }

    #[test]
    fn single_point_sample_has_infinite_min_distance() {
        let pts = checkerboard(4);
        for s in [
            dense_pds(&pts, &PdsParams::new(1, 0.5, 3)).unwrap(),
            vanilla_pds(&pts, &PdsParams::new(1, 0.5, 3)).unwrap(),
        ] {
            assert_eq!(s.indices.len(), 1);
            assert_eq!(s.min_pair_distance, f64::INFINITY);
        }
    }

    #[test]
    fn crowded_points_are_infeasible() {
        let pts = vec![
            LabeledPoint::new(0, vec![0.0, 0.0], 0),
            LabeledPoint::new(1, vec![0.05, 0.0], 1),
            LabeledPoint::new(2, vec![0.0, 0.05], 0),
        ];
        let mut params = PdsParams::with_neighbors(2, 0.2, 1, 9);
        params.max_attempts = 100;
        for err in [dense_pds(&pts, &params).unwrap_err(), vanilla_pds(&pts, &params).unwrap_err()] {
            match err {
                Error::Infeasible {
                    requested,
                    accepted,
                    attempts_used,
                } => {
                    assert_eq!((requested, accepted, attempts_used), (2, 1, 100));
                }
                other => panic!("unexpected error {other}"),
            }
        }
    }

    #[test]
    fn checkerboard_draws_respect_radius() {
        let pts = checkerboard(10);
        for seed in 0..20 {
            let params = PdsParams::with_neighbors(30, 0.5, 4, seed);
            for s in [dense_pds(&pts, &params).unwrap(), vanilla_pds(&pts, &params).unwrap()] {
                assert_eq!(s.indices.len(), 30);
                let brute = brute_min_pair(&pts, &s.indices);
                assert!(brute > 0.5);
                assert_eq!(brute, s.min_pair_distance);
                let mut ids = s.indices.clone();
                ids.sort_unstable();
                ids.dedup();
                assert_eq!(ids.len(), 30);
            }
        }
    }

    #[test]
    fn same_seed_same_sample() {
        let pts = checkerboard(8);
        let params = PdsParams::with_neighbors(12, 1.2, 4, 42);
        assert_eq!(dense_pds(&pts, &params).unwrap(), dense_pds(&pts, &params).unwrap());
        let other = PdsParams { seed: 43, ..params.clone() };
        assert_ne!(
            dense_pds(&pts, &params).unwrap().indices,
            dense_pds(&pts, &other).unwrap().indices
        );
    }

    #[test]
    fn dense_pds_follows_pi() {
        // Point mass on one non-empty level: every accepted id comes from it.
        let pts = checkerboard(6);
        let dp = DensePds::new(&pts, 4).unwrap();
        let occ = dp.strata().occupancy();
        let mut params = PdsParams::with_neighbors(5, 0.5, 4, 1);
        let target = (0..occ.len()).max_by_key(|&l| occ[l]).unwrap();
        params.pi = vec![0.0; 5];
        params.pi[target] = 1.0;
        let s = dp.sample(&params).unwrap();
        for id in &s.indices {
            assert_eq!(dp.strata().level_of[*id], target);
        }
    }

    #[test]
    fn empty_levels_are_renormalised_away() {
        let pts = checkerboard(6);
        let dp = DensePds::new(&pts, 4).unwrap();
        let occ = dp.strata().occupancy();
        assert!(occ.iter().any(|&c| c == 0), "{occ:?}");
        let params = PdsParams::with_neighbors(10, 0.5, 4, 5);
        let s = dp.sample(&params).unwrap();
        assert_eq!(s.indices.len(), 10);
    }

    #[test]
    fn all_mass_on_empty_levels_is_infeasible() {
        let pts = checkerboard(6);
        let dp = DensePds::new(&pts, 4).unwrap();
        let empty = dp.strata().occupancy().iter().position(|&c| c == 0).unwrap();
        let mut params = PdsParams::with_neighbors(3, 0.5, 4, 5);
        params.pi = vec![0.0; 5];
        params.pi[empty] = 1.0;
        assert!(dp.sample(&params).unwrap_err().is_infeasible());
    }

    #[test]
    fn too_many_points_requested() {
        let pts = checkerboard(3);
        let params = PdsParams::with_neighbors(10, 0.1, 2, 0);
        assert!(vanilla_pds(&pts, &params).unwrap_err().is_infeasible());
    }

    #[test]
    fn accepted_distance_work_is_quadratic() {
        let pts = checkerboard(10);
        let params = PdsParams::with_neighbors(20, 0.0, 4, 2);
        let s = vanilla_pds(&pts, &params).unwrap();
        assert_eq!(s.accepted_distance_evaluations, 20 * 19 / 2);
    }

    #[test]
    fn radius_policy_halves_until_feasible() {
        let pts = checkerboard(5);
        // r0 = 3 admits at most a handful of points among 25; 10 needs r0 < 1.5.
        let policy = RadiusPolicy::Fixed { r0: 3.0 };
        let mut params = PdsParams::with_neighbors(10, 0.0, 4, 8);
        params.max_attempts = 2000;
        let s = policy.sample(PdsVariant::Vanilla, &pts, &params, 6).unwrap();
        assert!(s.params.r0 < 1.0);
        assert!(s.min_pair_distance > s.params.r0);
        assert!(policy
            .sample(PdsVariant::Vanilla, &pts, &params, 0)
            .unwrap_err()
            .is_infeasible());
    }

    #[test]
    fn radius_quantiles() {
        let pts = checkerboard(4);
        assert_eq!(RadiusPolicy::NearestNeighborQuantile { q: 0.5 }.resolve(&pts), 1.0);
        assert_eq!(RadiusPolicy::Fixed { r0: 0.3 }.resolve(&pts), 0.3);
        assert_eq!(RadiusPolicy::PairwiseQuantile { q: 0.0 }.resolve(&pts), 1.0);
    }

    #[test]
    fn csv_rows() {
        let pts = checkerboard(4);
        let s = vanilla_pds(&pts, &PdsParams::with_neighbors(2, 0.5, 2, 1)).unwrap();
        let mut buf = Vec::new();
        write_samples_csv(&mut buf, "S01", &[s.clone(), s.clone()]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[0], "dataset_id,sample_index,point_id");
        assert_eq!(lines[3], format!("S01,1,{}", s.indices[0]));
    }
}
