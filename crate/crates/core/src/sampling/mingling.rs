use serde::{Deserialize, Serialize};

use super::{euclidean, validate_dataset, LabeledPoint};
use crate::error::{Error, Result};

/// Fraction of `p`'s `k_neighbors` nearest points (excluding `p` itself)
/// whose label differs from `p.label`. Distance ties are broken by
/// ascending id.
pub fn mingling_index(p: &LabeledPoint, dataset: &[LabeledPoint], k_neighbors: usize) -> Result<f64> {
    let different = differing_neighbors(p, dataset, k_neighbors)?;
    Ok(different as f64 / k_neighbors as f64)
}

fn differing_neighbors(p: &LabeledPoint, dataset: &[LabeledPoint], k: usize) -> Result<usize> {
    if k == 0 {
        return Err(Error::invalid("kNeighbors must be at least 1"));
    }
    let mut cand: Vec<(f64, usize, usize)> = Vec::with_capacity(dataset.len());
    for q in dataset {
        if q.id == p.id {
            continue;
        }
        if q.features.len() != p.features.len() {
            return Err(Error::invalid(format!(
                "point {} has dimension {}, expected {}",
                q.id,
                q.features.len(),
                p.features.len()
            )));
        }
        cand.push((euclidean(&p.features, &q.features), q.id, q.label));
    }
    if cand.len() < k {
        return Err(Error::invalid(format!(
            "mingling index needs {k} neighbours but only {} other points exist",
            cand.len()
        )));
    }
    let order = |a: &(f64, usize, usize), b: &(f64, usize, usize)| {
        a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
    };
    if k < cand.len() {
        cand.select_nth_unstable_by(k - 1, order);
    }
    Ok(cand[..k].iter().filter(|c| c.2 != p.label).count())
}

/// Dataset partition by mingling level: level `j` holds the ids whose
/// mingling index equals `j / k_neighbors`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinglingStrata {
    pub k_neighbors: usize,
    /// `levels[j]` lists dataset ids, in dataset order.
    pub levels: Vec<Vec<usize>>,
    /// Level of each point, indexed by dataset position.
    pub level_of: Vec<usize>,
}

impl MinglingStrata {
    pub fn occupancy(&self) -> Vec<usize> {
        self.levels.iter().map(Vec::len).collect()
    }
}

/// Computes every point's mingling level. `levels` must equal
/// `k_neighbors + 1`.
pub fn stratify_by_mingling(
    dataset: &[LabeledPoint],
    k_neighbors: usize,
    levels: usize,
) -> Result<MinglingStrata> {
    strata_and_nearest(dataset, k_neighbors, levels).map(|(s, _)| s)
}

/// The strata together with every point's nearest-neighbour distance,
/// which falls out of the same neighbour search.
pub(crate) fn strata_and_nearest(
    dataset: &[LabeledPoint],
    k_neighbors: usize,
    levels: usize,
) -> Result<(MinglingStrata, Vec<f64>)> {
    if levels != k_neighbors + 1 {
        return Err(Error::invalid(format!(
            "levels must be kNeighbors + 1 = {}, got {levels}",
            k_neighbors + 1
        )));
    }
    validate_dataset(dataset)?;
    if k_neighbors == 0 {
        return Err(Error::invalid("kNeighbors must be at least 1"));
    }
    if dataset.len() <= k_neighbors {
        return Err(Error::invalid(format!(
            "mingling index needs {k_neighbors} neighbours but only {} other points exist",
            dataset.len() - 1
        )));
    }
    let mut strata = MinglingStrata {
        k_neighbors,
        levels: vec![Vec::new(); levels],
        level_of: Vec::with_capacity(dataset.len()),
    };
    let mut nearest = Vec::with_capacity(dataset.len());
    for (p, neighbours) in dataset.iter().zip(k_nearest(dataset, k_neighbors)) {
        let level = neighbours.iter().filter(|&&(_, pos)| dataset[pos].label != p.label).count();
        strata.levels[level].push(p.id);
        strata.level_of.push(level);
        nearest.push(neighbours[0].0);
    }
    Ok((strata, nearest))
}

/// The `k` nearest other points of every point as `(distance, position)`,
/// ordered by distance and then id. Each pair distance is computed once.
pub(crate) fn k_nearest(dataset: &[LabeledPoint], k: usize) -> Vec<Vec<(f64, usize)>> {
    let n = dataset.len();
    let mut lists: Vec<Vec<(f64, usize)>> = vec![Vec::with_capacity(k + 1); n];
    let before = |a: (f64, usize), b: (f64, usize)| {
        a.0.total_cmp(&b.0).then(dataset[a.1].id.cmp(&dataset[b.1].id)).is_lt()
    };
    let offer = |list: &mut Vec<(f64, usize)>, cand: (f64, usize)| {
        if list.len() == k && !before(cand, list[k - 1]) {
            return;
        }
        let at = list.partition_point(|&x| before(x, cand));
        list.insert(at, cand);
        list.truncate(k);
    };
    for i in 0..n {
        for j in (i + 1)..n {
            let d = euclidean(&dataset[i].features, &dataset[j].features);
            offer(&mut lists[i], (d, j));
            offer(&mut lists[j], (d, i));
        }
    }
    lists
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(id: usize, x: f64, y: f64, label: usize) -> LabeledPoint {
        LabeledPoint::new(id, vec![x, y], label)
    }

    /// Brute force: full sort of all (distance, id) pairs.
    fn oracle(q: &LabeledPoint, data: &[LabeledPoint], k: usize) -> f64 {
        let mut all: Vec<(f64, usize, usize)> = data
            .iter()
            .filter(|o| o.id != q.id)
            .map(|o| {
                let dx = o.features[0] - q.features[0];
                let dy = o.features[1] - q.features[1];
                ((dx * dx + dy * dy).sqrt(), o.id, o.label)
            })
            .collect();
        all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        all[..k].iter().filter(|o| o.2 != q.label).count() as f64 / k as f64
    }

    #[test]
    fn homogeneous_and_fully_mixed_neighbourhoods() {
        let mut data = vec![p(0, 0.0, 0.0, 0)];
        for i in 1..=5 {
            data.push(p(i, i as f64 * 0.1, 0.0, 0));
        }
        data.push(p(6, 10.0, 10.0, 1));
        assert_eq!(mingling_index(&data[0], &data, 5).unwrap(), 0.0);
        for q in data.iter_mut().skip(1).take(5) {
            q.label = 1;
        }
        assert_eq!(mingling_index(&data[0], &data, 5).unwrap(), 1.0);
    }

    #[test]
    fn twelve_point_set_matches_enumeration() {
        // Four nearest of point 0 are ids 1..=4 at distances 1, 1.1, 1.2, 1.3;
        // two of them (2 and 4) carry the other label.
        let data = vec![
            p(0, 0.0, 0.0, 0),
            p(1, 1.0, 0.0, 0),
            p(2, 0.0, 1.1, 1),
            p(3, -1.2, 0.0, 0),
            p(4, 0.0, -1.3, 1),
            p(5, 3.0, 3.0, 1),
            p(6, -3.0, 3.0, 1),
            p(7, 3.0, -3.0, 1),
            p(8, -3.0, -3.0, 0),
            p(9, 5.0, 0.0, 1),
            p(10, 0.0, 5.0, 1),
            p(11, -5.0, 0.0, 1),
        ];
        let m = mingling_index(&data[0], &data, 4).unwrap();
        assert_eq!(m, 0.5);
        assert_eq!(m, oracle(&data[0], &data, 4));
        for q in &data {
            assert_eq!(mingling_index(q, &data, 4).unwrap(), oracle(q, &data, 4));
        }
    }

    #[test]
    fn ties_break_by_ascending_id() {
        // Ids 1 and 2 both at distance 1; only id 1 (label 1) enters with k = 1.
        let data = vec![p(0, 0.0, 0.0, 0), p(2, -1.0, 0.0, 0), p(1, 1.0, 0.0, 1)];
        assert_eq!(mingling_index(&data[0], &data, 1).unwrap(), 1.0);
    }

    #[test]
    fn too_small_dataset_is_rejected() {
        let data = vec![p(0, 0.0, 0.0, 0), p(1, 1.0, 0.0, 0)];
        assert!(mingling_index(&data[0], &data, 2).unwrap_err().is_invalid_input());
    }

    #[test]
    fn separated_clusters_land_in_level_zero() {
        let mut data = Vec::new();
        for i in 0..10 {
            data.push(p(i, i as f64 * 0.01, 0.0, 0));
            data.push(p(100 + i, 50.0 + i as f64 * 0.01, 0.0, 1));
        }
        let s = stratify_by_mingling(&data, 3, 4).unwrap();
        assert_eq!(s.occupancy(), vec![20, 0, 0, 0]);
    }

    #[test]
    fn partition_law_and_level_count_check() {
        let data: Vec<_> = (0..10)
            .map(|i| p(i, (i * 7 % 10) as f64, (i * 3 % 10) as f64, i % 2))
            .collect();
        assert!(stratify_by_mingling(&data, 2, 4).is_err());
        let s = stratify_by_mingling(&data, 2, 3).unwrap();
        let mut all: Vec<usize> = s.levels.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn checkerboard_occupancy_matches_brute_force() {
        let mut data = Vec::new();
        for r in 0..6 {
            for c in 0..6 {
                data.push(p(r * 6 + c, c as f64, r as f64, (r + c) % 2));
            }
        }
        let s = stratify_by_mingling(&data, 4, 5).unwrap();
        let mut expected = vec![0usize; 5];
        for q in &data {
            expected[(oracle(q, &data, 4) * 4.0).round() as usize] += 1;
        }
        assert_eq!(s.occupancy(), expected);
    }
}
