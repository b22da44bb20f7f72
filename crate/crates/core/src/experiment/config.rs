use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::synth::SynthP300Params;
use super::Provenance;
use crate::error::{Error, Result, ResultExt};
use crate::model::{BlockSpec, OptimizerConfig};
use crate::sampling::{PdsParams, PdsVariant, RadiusPolicy};

/// Environment variable that overrides [`ExperimentConfig::seed`].
pub const SEED_ENV: &str = "AS_SEED";

pub type SamplerKind = PdsVariant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Dependent,
    Independent,
    Adaptive,
}

impl Scheme {
    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Dependent => "dependent",
            Scheme::Independent => "independent",
            Scheme::Adaptive => "adaptive",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AsMode {
    /// Reduce each training pool to `sample_factor` epochs once, then train
    /// with ordinary shuffled mini-batches.
    #[default]
    Reduction,
    /// Keep the full pool and draw every mini-batch with the sampler.
    MiniBatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ActiveSamplingConfig {
    pub radius: RadiusPolicy,
    pub k_neighbors: usize,
    /// Distribution over mingling levels; uniform when absent.
    pub pi: Option<Vec<f64>>,
    pub max_attempts: Option<usize>,
    /// How often the radius is halved before a reduction is declared
    /// infeasible.
    pub radius_retries: usize,
    pub mode: AsMode,
    /// Reduce the concatenated source subjects to `sample_factor` in total
    /// instead of reducing every subject to `sample_factor`.
    pub pooled: bool,
}

impl Default for ActiveSamplingConfig {
    fn default() -> Self {
        Self {
            radius: RadiusPolicy::default(),
            k_neighbors: PdsParams::DEFAULT_K_NEIGHBORS,
            pi: None,
            max_attempts: None,
            radius_retries: 6,
            mode: AsMode::Reduction,
            pooled: false,
        }
    }
}

impl ActiveSamplingConfig {
    pub fn params(&self, k: usize, seed: u64) -> PdsParams {
        let mut p = PdsParams::with_neighbors(k, 0.0, self.k_neighbors, seed);
        if let Some(pi) = &self.pi {
            p.pi = pi.clone();
        }
        if let Some(m) = self.max_attempts {
            p.max_attempts = m;
        }
        p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    Synthetic(SynthP300Params),
    /// An epoch CSV as written by `write_epochs_csv`.
    EpochsCsv {
        path: PathBuf,
        rate_hz: f64,
        provenance: Provenance,
        /// Subjects the dataset was recruited with, for numbering across
        /// datasets; defaults to the number of subjects in the file.
        #[serde(default)]
        declared_subjects: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub scheme: Scheme,
    #[serde(default)]
    pub use_active_sampling: bool,
    #[serde(default = "default_sampler")]
    pub sampler_kind: SamplerKind,
    #[serde(default = "default_factor")]
    pub sample_factor: usize,
    #[serde(default)]
    pub adapt_rates: Vec<u32>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub active_sampling: ActiveSamplingConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    /// Optimiser for fine-tuning; the main one when absent.
    #[serde(default)]
    pub fine_tune_optimizer: Option<OptimizerConfig>,
    /// Network blocks; the default four-block network when absent.
    #[serde(default)]
    pub network: Option<Vec<BlockSpec>>,
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
    /// Restrict the run to these target subjects.
    #[serde(default)]
    pub subjects: Option<Vec<String>>,
    pub datasets: Vec<DatasetSource>,
}

fn default_name() -> String {
    "experiment".into()
}
fn default_sampler() -> SamplerKind {
    PdsVariant::Dense
}
fn default_factor() -> usize {
    1200
}
fn default_val_fraction() -> f64 {
    0.15
}

impl ExperimentConfig {
    /// A config with defaults everywhere except the scheme and datasets.
    pub fn new(scheme: Scheme, datasets: Vec<DatasetSource>) -> Self {
        Self {
            name: default_name(),
            scheme,
            use_active_sampling: false,
            sampler_kind: default_sampler(),
            sample_factor: default_factor(),
            adapt_rates: if scheme == Scheme::Adaptive { (1..=10).map(|r| r * 10).collect() } else { Vec::new() },
            seed: 0,
            active_sampling: ActiveSamplingConfig::default(),
            optimizer: OptimizerConfig::default(),
            fine_tune_optimizer: None,
            network: None,
            val_fraction: default_val_fraction(),
            subjects: None,
            datasets,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::invalid(format!("experiment name {:?} is not a plain file stem", self.name)));
        }
        if self.scheme == Scheme::Adaptive && self.adapt_rates.is_empty() {
            return Err(Error::invalid("the adaptive scheme needs at least one adaptation rate"));
        }
        if let Some(r) = self.adapt_rates.iter().find(|r| !(10..=100).contains(*r) || **r % 10 != 0) {
            return Err(Error::invalid(format!("adaptation rate {r} is not one of 10, 20, ..., 100")));
        }
        if self.use_active_sampling && self.sample_factor < self.optimizer.batch_size {
            return Err(Error::invalid(format!(
                "sample factor {} is below the batch size {}",
                self.sample_factor, self.optimizer.batch_size
            )));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::invalid(format!("validation fraction must lie in (0, 1), got {}", self.val_fraction)));
        }
        if self.datasets.is_empty() {
            return Err(Error::invalid("no datasets configured"));
        }
        self.optimizer.validate()?;
        if let Some(o) = &self.fine_tune_optimizer {
            o.validate()?;
        }
        self.active_sampling.params(self.sample_factor.max(1), 0).validate()?;
        for d in &self.datasets {
            if let DatasetSource::Synthetic(p) = d {
                p.validate()?;
            }
        }
        Ok(())
    }

    pub fn fine_tune_optimizer(&self) -> &OptimizerConfig {
        self.fine_tune_optimizer.as_ref().unwrap_or(&self.optimizer)
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Replaces the seed with `value` when it is set. Returns whether it
    /// was applied.
    pub fn apply_seed_override(&mut self, value: Option<&str>) -> Result<bool> {
        match value.map(str::trim) {
            None | Some("") => Ok(false),
            Some(v) => {
                self.seed = v
                    .parse()
                    .map_err(|_| Error::invalid(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?;
                Ok(true)
            }
        }
    }

    /// Resolves relative dataset paths against `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        for d in &mut self.datasets {
            if let DatasetSource::EpochsCsv { path, .. } = d {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        }
    }
}

/// Reads a JSON config, resolves dataset paths relative to the file and
/// applies the `AS_SEED` override. Returns the config and whether the seed
/// came from the environment.
pub fn load_config(path: &Path) -> Result<(ExperimentConfig, bool)> {
    let text = std::fs::read_to_string(path)
        .map_err(Error::from)
        .with_context(|| format!("reading config {}", path.display()))?;
    let mut cfg: ExperimentConfig = serde_json::from_str(&text)
        .map_err(Error::from)
        .with_context(|| format!("parsing config {}", path.display()))?;
    if let Some(dir) = path.parent() {
        cfg.resolve_paths(dir);
    }
    let overridden = cfg.apply_seed_override(std::env::var(SEED_ENV).ok().as_deref())?;
    cfg.validate()?;
    Ok((cfg, overridden))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"scheme": "adaptive", "adapt_rates": [10, 50], "datasets": [{"synthetic": {"subjects": 2}}]}"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg: ExperimentConfig = serde_json::from_str(MINIMAL).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.sample_factor, 1200);
        assert_eq!(cfg.val_fraction, 0.15);
        assert_eq!(cfg.optimizer.batch_size, 16);
        assert_eq!(cfg.sampler_kind, PdsVariant::Dense);
        match &cfg.datasets[0] {
            DatasetSource::Synthetic(p) => assert_eq!((p.subjects, p.channels), (2, 8)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_keys_are_errors() {
        for bad in [
            r#"{"scheme": "dependent", "datasets": [], "colour": 1}"#,
            r#"{"scheme": "dependent", "datasets": [{"synthetic": {"subject": 2}}]}"#,
            r#"{"scheme": "dependent", "datasets": [], "optimizer": {"lr": 1}}"#,
            r#"{"scheme": "dependent", "datasets": [], "active_sampling": {"radius": {"kind": "fixed", "r": 1}}}"#,
        ] {
            assert!(serde_json::from_str::<ExperimentConfig>(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn invariants() {
        let mut cfg: ExperimentConfig = serde_json::from_str(MINIMAL).unwrap();
        cfg.adapt_rates.clear();
        assert!(cfg.validate().unwrap_err().is_invalid_input());
        cfg.adapt_rates = vec![15];
        assert!(cfg.validate().is_err());
        cfg.adapt_rates = vec![10];
        cfg.use_active_sampling = true;
        cfg.sample_factor = 8;
        assert!(cfg.validate().is_err());
        cfg.sample_factor = 16;
        cfg.validate().unwrap();
    }

    #[test]
    fn seed_override_and_hash() {
        let mut cfg: ExperimentConfig = serde_json::from_str(MINIMAL).unwrap();
        let h0 = cfg.hash();
        assert_eq!(h0.len(), 64);
        assert!(!cfg.apply_seed_override(None).unwrap());
        assert!(cfg.apply_seed_override(Some("42")).unwrap());
        assert_eq!(cfg.seed, 42);
        assert_ne!(cfg.hash(), h0);
        assert!(cfg.apply_seed_override(Some("-1")).is_err());
    }

    #[test]
    fn round_trips_through_json() {
        let cfg = ExperimentConfig::new(Scheme::Adaptive, vec![DatasetSource::Synthetic(SynthP300Params::default())]);
        let back: ExperimentConfig = serde_json::from_str(&serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.adapt_rates.len(), 10);
    }
}
