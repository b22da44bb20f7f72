use std::time::Instant;

use super::config::{ActiveSamplingConfig, SamplerKind};
use crate::error::{Error, Result};
use crate::preprocessing::Epoch;
use crate::sampling::LabeledPoint;

/// Outcome of reducing a pool with the sampler.
#[derive(Debug, Clone, PartialEq)]
pub struct ActiveReduction {
    /// Kept positions into the pool, ascending.
    pub kept: Vec<usize>,
    /// Radius of the successful draw.
    pub r0: f64,
    pub seconds: f64,
}

impl ActiveReduction {
    pub fn apply<'a>(&self, pool: &[&'a Epoch]) -> Vec<&'a Epoch> {
        self.kept.iter().map(|&i| pool[i]).collect()
    }
}

pub(crate) fn points(pool: &[&Epoch]) -> Vec<LabeledPoint> {
    pool.iter()
        .enumerate()
        .map(|(i, e)| LabeledPoint::new(i, e.data.clone(), e.label))
        .collect()
}

/// Draws `factor` epochs of `pool` with Poisson-disk sampling over the raw
/// epoch vectors. A factor larger than the pool is infeasible.
pub fn reduce_pool(
    pool: &[&Epoch],
    factor: usize,
    kind: SamplerKind,
    cfg: &ActiveSamplingConfig,
    seed: u64,
) -> Result<ActiveReduction> {
    if factor > pool.len() {
        return Err(Error::Infeasible {
            requested: factor,
            accepted: pool.len(),
            attempts_used: 0,
        });
    }
    let started = Instant::now();
    let pts = points(pool);
    let params = cfg.params(factor, seed);
    let sample = cfg.radius.sample(kind, &pts, &params, cfg.radius_retries)?;
    let mut kept = sample.indices;
    kept.sort_unstable();
    Ok(ActiveReduction {
        kept,
        r0: sample.params.r0,
        seconds: started.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::{generate_synthetic, split_dependent, SynthP300Params};
    use crate::sampling::PdsVariant;

    #[test]
    fn reduces_to_factor_within_pool() {
        let d = generate_synthetic(&SynthP300Params {
            subjects: 1,
            epochs_per_session: 100,
            channels: 3,
            rate_hz: 16.0,
            ..Default::default()
        })
        .unwrap();
        let s = split_dependent(&d[0]).unwrap();
        let cfg = ActiveSamplingConfig::default();
        for kind in [PdsVariant::Dense, PdsVariant::Vanilla] {
            let r = reduce_pool(&s.train_val, 120, kind, &cfg, 1).unwrap();
            assert_eq!(r.kept.len(), 120);
            assert!(r.kept.windows(2).all(|w| w[0] < w[1]));
            let kept = r.apply(&s.train_val);
            assert!(kept.iter().all(|e| e.session != 4));
            assert_eq!(s.test.len(), 100);
            assert_eq!(r, ActiveReduction { seconds: r.seconds, ..reduce_pool(&s.train_val, 120, kind, &cfg, 1).unwrap() });
        }
        assert!(reduce_pool(&s.train_val, 301, PdsVariant::Dense, &cfg, 1).unwrap_err().is_infeasible());
    }
}
