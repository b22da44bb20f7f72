use std::collections::HashMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use super::active::{points, reduce_pool};
use super::config::{AsMode, DatasetSource, ExperimentConfig, Scheme};
use super::report::{
    write_manifest, write_report_csv, write_timings_csv, ExperimentReport, Manifest, ReportRow, TrainingRecord,
};
use super::splits::{audit_leakage, source_pool, split_adaptive, split_dependent, split_train_val, LeakageAudit};
use super::synth::generate_synthetic;
use super::{relabel_subjects, DatasetGroup, SubjectDataset};
use crate::error::{Error, Result, ResultExt};
use crate::model::{
    evaluate_refs, fine_tune_refs, init_model, train_refs_with, write_model, ModelState, NetworkSpec, OptimizerConfig,
    TrainReport,
};
use crate::preprocessing::io::read_epochs_csv;
use crate::preprocessing::Epoch;
use crate::rng;
use crate::sampling::{BatchSource, PdsBatches, ShuffledEpochs};
use crate::stats::{aggregate, summary_file_name, write_summary_csv, StdKind};

const SPLIT_TAG: u64 = 0x5711;
const INIT_TAG: u64 = 0x1417;
const OPT_TAG: u64 = 0x0971;
const BATCH_TAG: u64 = 0xba7c;
const AS_TAG: u64 = 0xa5a5;
const FINE_TUNE_TAG: u64 = 0xf1e7;

const ROLE_MAIN: u64 = 0;
const ROLE_BASE: u64 = 1;
const ROLE_TARGET: u64 = 2;
const ROLE_POOLED: u64 = 3;
const ROLE_SUBJECT: u64 = 4;

/// Builds every configured dataset. Several datasets are renumbered
/// consecutively (`S01`, `S02`, ...) in configuration order.
pub fn load_datasets(cfg: &ExperimentConfig) -> Result<Vec<SubjectDataset>> {
    let mut groups = Vec::with_capacity(cfg.datasets.len());
    for (i, source) in cfg.datasets.iter().enumerate() {
        let group = match source {
            DatasetSource::Synthetic(p) => DatasetGroup {
                declared_subjects: p.subjects,
                subjects: generate_synthetic(p)?,
            },
            DatasetSource::EpochsCsv {
                path,
                rate_hz,
                provenance,
                declared_subjects,
            } => {
                let file = File::open(path)
                    .map_err(Error::from)
                    .with_context(|| format!("opening dataset {}", path.display()))?;
                let epochs = read_epochs_csv(std::io::BufReader::new(file), *rate_hz)
                    .with_context(|| format!("reading dataset {}", path.display()))?;
                let subjects = SubjectDataset::group(epochs, *provenance)?;
                DatasetGroup {
                    declared_subjects: declared_subjects.unwrap_or(subjects.len()),
                    subjects,
                }
            }
        };
        if group.subjects.is_empty() {
            return Err(Error::invalid(format!("dataset {i} has no subjects")));
        }
        groups.push(group);
    }
    if groups.len() == 1 {
        return Ok(groups.remove(0).subjects);
    }
    relabel_subjects(groups)
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let data = load_datasets(cfg)?;
    run_experiment_on(cfg, &data)
}

/// Runs the configured scheme for every target subject, in dataset order.
pub fn run_experiment_on(cfg: &ExperimentConfig, data: &[SubjectDataset]) -> Result<ExperimentReport> {
    run_experiment_with(cfg, data, None)
}

/// As [`run_experiment_on`], additionally saving every trained model to
/// `model_dir` as `<subject>_<scheme>[_<rate>].asmt` (`<subject>_base.asmt`
/// for the adaptive base model).
pub fn run_experiment_with(
    cfg: &ExperimentConfig,
    data: &[SubjectDataset],
    model_dir: Option<&Path>,
) -> Result<ExperimentReport> {
    cfg.validate()?;
    let mut runner = Runner::new(cfg, data)?;
    if let Some(dir) = model_dir {
        std::fs::create_dir_all(dir)
            .map_err(Error::from)
            .with_context(|| format!("creating {}", dir.display()))?;
        runner.model_dir = Some(dir.to_path_buf());
    }
    let targets = runner.targets()?;
    let mut rows = Vec::new();
    let mut audits = Vec::new();
    for i in targets {
        let subject = &data[i].subject;
        let cells = match cfg.scheme {
            Scheme::Dependent => runner.dependent(i).map(|c| vec![c]),
            Scheme::Independent => {
                let factor = cfg.use_active_sampling.then_some(cfg.sample_factor);
                runner.independent(i, factor).map(|c| vec![c])
            }
            Scheme::Adaptive => runner.adaptive(i),
        }
        .with_context(|| format!("subject {subject}, {} scheme", cfg.scheme.as_str()))?;
        let mut audit = LeakageAudit::default();
        for c in cells {
            audit.train_test = audit.train_test.max(c.audit.train_test);
            audit.val_test = audit.val_test.max(c.audit.val_test);
            audit.train_val = audit.train_val.max(c.audit.train_val);
            rows.push(c.row);
        }
        audits.push((subject.clone(), audit));
    }
    Ok(ExperimentReport {
        name: cfg.name.clone(),
        scheme: cfg.scheme,
        active_sampling: cfg.use_active_sampling,
        rows,
        trainings: runner.trainings,
        audits,
    })
}

pub(crate) struct Cell {
    pub row: ReportRow,
    pub audit: LeakageAudit,
}

pub(crate) struct Runner<'a> {
    cfg: &'a ExperimentConfig,
    data: &'a [SubjectDataset],
    spec: NetworkSpec,
    /// Per-subject reductions of all sessions, keyed by (subject, factor).
    reduced: HashMap<(usize, usize), Vec<&'a Epoch>>,
    model_dir: Option<PathBuf>,
    pub trainings: Vec<TrainingRecord>,
}

impl<'a> Runner<'a> {
    pub fn new(cfg: &'a ExperimentConfig, data: &'a [SubjectDataset]) -> Result<Self> {
        let first = data
            .iter()
            .flat_map(|s| s.epochs())
            .next()
            .ok_or_else(|| Error::invalid("datasets contain no epochs"))?;
        let (channels, samples) = (first.channels, first.samples());
        for e in data.iter().flat_map(|s| s.epochs()) {
            if e.channels != channels || e.samples() != samples {
                return Err(Error::invalid(format!(
                    "epoch {}/{}/{} is {}x{}, expected {channels}x{samples}",
                    e.subject,
                    e.session,
                    e.index,
                    e.channels,
                    e.samples()
                )));
            }
        }
        let spec = match &cfg.network {
            Some(blocks) => NetworkSpec {
                channels,
                samples,
                class_count: 2,
                blocks: blocks.clone(),
            },
            None => NetworkSpec::four_block(channels, samples, 2),
        };
        spec.validate()?;
        Ok(Self {
            cfg,
            data,
            spec,
            reduced: HashMap::new(),
            model_dir: None,
            trainings: Vec::new(),
        })
    }

    pub fn targets(&self) -> Result<Vec<usize>> {
        match &self.cfg.subjects {
            None => Ok((0..self.data.len()).collect()),
            Some(ids) => ids
                .iter()
                .map(|id| {
                    self.data
                        .iter()
                        .position(|s| &s.subject == id)
                        .ok_or_else(|| Error::invalid(format!("subject {id} not in the datasets")))
                })
                .collect(),
        }
    }

    fn seed(&self, tags: &[u64]) -> u64 {
        rng::derive_seed(self.cfg.seed, tags)
    }

    fn reduction_enabled(&self) -> bool {
        self.cfg.use_active_sampling && self.cfg.active_sampling.mode == AsMode::Reduction
    }

    fn train_model(
        &self,
        train: &[&Epoch],
        val: &[&Epoch],
        subject: usize,
        role: u64,
    ) -> Result<(ModelState, TrainReport)> {
        let state = init_model(&self.spec, self.seed(&[INIT_TAG, subject as u64, role]))?;
        let opt = OptimizerConfig {
            seed: self.seed(&[OPT_TAG, subject as u64, role, self.cfg.optimizer.seed]),
            ..self.cfg.optimizer.clone()
        };
        let batch_seed = self.seed(&[BATCH_TAG, subject as u64, role]);
        if self.cfg.use_active_sampling && self.cfg.active_sampling.mode == AsMode::MiniBatch {
            let pts = points(train);
            let mut params = self.cfg.active_sampling.params(opt.batch_size, batch_seed);
            params.r0 = self.cfg.active_sampling.radius.resolve(&pts);
            let mut batches = PdsBatches::new(&pts, self.cfg.sampler_kind, params)?;
            train_refs_with(&state, train, val, &opt, &mut batches as &mut dyn BatchSource)
        } else {
            let mut batches = ShuffledEpochs::new((0..train.len()).collect(), batch_seed);
            train_refs_with(&state, train, val, &opt, &mut batches)
        }
    }

    fn reduce(&self, pool: &[&'a Epoch], factor: usize, tags: &[u64]) -> Result<(Vec<&'a Epoch>, f64)> {
        let r = reduce_pool(pool, factor, self.cfg.sampler_kind, &self.cfg.active_sampling, self.seed(tags))
            .with_context(|| format!("reducing {} epochs to {factor}", pool.len()))?;
        Ok((r.apply(pool), r.seconds))
    }

    /// Training pool for leave-one-out on `target`, reduced when `factor` is
    /// set. Returns the pool and the sampling time spent on it alone.
    fn source_pool(&mut self, target: usize, factor: Option<usize>) -> Result<(Vec<&'a Epoch>, f64)> {
        let target_id = &self.data[target].subject;
        let full = source_pool(self.data, target_id)?;
        let Some(factor) = factor else {
            return Ok((full, 0.0));
        };
        if self.cfg.active_sampling.pooled {
            return self.reduce(&full, factor, &[AS_TAG, ROLE_POOLED, target as u64, factor as u64]);
        }
        let mut pool = Vec::new();
        for j in (0..self.data.len()).filter(|&j| j != target) {
            if !self.reduced.contains_key(&(j, factor)) {
                let all: Vec<&'a Epoch> = self.data[j].epochs().collect();
                let (kept, seconds) = self
                    .reduce(&all, factor, &[AS_TAG, ROLE_SUBJECT, j as u64, factor as u64])
                    .with_context(|| format!("source subject {}", self.data[j].subject))?;
                self.trainings.push(TrainingRecord {
                    subject: self.data[j].subject.clone(),
                    phase: "sampling".into(),
                    adapt_rate: None,
                    sampling_seconds: seconds,
                    report: None,
                });
                self.reduced.insert((j, factor), kept);
            }
            pool.extend(self.reduced[&(j, factor)].iter().copied());
        }
        Ok((pool, 0.0))
    }

    fn row(&self, target: usize, adapt_rate: Option<u32>, counts: (usize, usize), test: &[&Epoch], state: &ModelState, rep: &TrainReport) -> Result<ReportRow> {
        let eval = evaluate_refs(state, test)?;
        Ok(ReportRow {
            subject: self.data[target].subject.clone(),
            scheme: self.cfg.scheme,
            adapt_rate,
            active_sampling: self.cfg.use_active_sampling,
            train_count: counts.0,
            val_count: counts.1,
            test_count: test.len(),
            accuracy: eval.accuracy,
            confusion: eval.confusion,
            selected_epoch: rep.selected_epoch,
        })
    }

    fn save(&self, target: usize, suffix: &str, state: &ModelState) -> Result<()> {
        let Some(dir) = &self.model_dir else {
            return Ok(());
        };
        let path = dir.join(format!("{}_{suffix}.asmt", self.data[target].subject));
        let f = File::create(&path)
            .map_err(Error::from)
            .with_context(|| format!("creating {}", path.display()))?;
        write_model(BufWriter::new(f), state)
    }

    fn record(&mut self, target: usize, phase: &str, adapt_rate: Option<u32>, sampling_seconds: f64, rep: TrainReport) {
        self.trainings.push(TrainingRecord {
            subject: self.data[target].subject.clone(),
            phase: phase.into(),
            adapt_rate,
            sampling_seconds,
            report: Some(rep),
        });
    }

    pub fn dependent(&mut self, i: usize) -> Result<Cell> {
        let split = split_dependent(&self.data[i])?;
        let (pool, sampling) = if self.reduction_enabled() {
            let f = self.cfg.sample_factor;
            self.reduce(&split.train_val, f, &[AS_TAG, ROLE_MAIN, i as u64, f as u64])?
        } else {
            (split.train_val.clone(), 0.0)
        };
        let (train, val) = split_train_val(&pool, self.cfg.val_fraction, self.seed(&[SPLIT_TAG, i as u64, ROLE_MAIN]))?;
        let audit = checked_audit(&train, &val, &split.test)?;
        let (state, rep) = self.train_model(&train, &val, i, ROLE_MAIN)?;
        let row = self.row(i, None, (train.len(), val.len()), &split.test, &state, &rep)?;
        self.save(i, "dependent", &state)?;
        self.record(i, "train", None, sampling, rep);
        Ok(Cell { row, audit })
    }

    /// Leave-one-subject-out training for target `i`. `factor` enables the
    /// reduction of the source pool.
    pub fn independent(&mut self, i: usize, factor: Option<usize>) -> Result<Cell> {
        let (state, rep, train, val, sampling) = self.base_model(i, factor)?;
        let test = split_dependent(&self.data[i])?.test;
        let audit = checked_audit(&train, &val, &test)?;
        let row = self.row(i, None, (train.len(), val.len()), &test, &state, &rep)?;
        self.save(i, "independent", &state)?;
        self.record(i, "train", None, sampling, rep);
        Ok(Cell { row, audit })
    }

    #[allow(clippy::type_complexity)]
    fn base_model(
        &mut self,
        i: usize,
        factor: Option<usize>,
    ) -> Result<(ModelState, TrainReport, Vec<&'a Epoch>, Vec<&'a Epoch>, f64)> {
        let factor = factor.filter(|_| self.cfg.active_sampling.mode == AsMode::Reduction);
        let (pool, sampling) = self.source_pool(i, factor)?;
        let (train, val) = split_train_val(&pool, self.cfg.val_fraction, self.seed(&[SPLIT_TAG, i as u64, ROLE_BASE]))?;
        let (state, rep) = self.train_model(&train, &val, i, ROLE_BASE)?;
        Ok((state, rep, train, val, sampling))
    }

    /// Base model on the sources, then one fine-tuning per adaptation rate.
    /// With reduction on, the target's sessions 1-3 are reduced together
    /// and then split by session.
    pub fn adaptive(&mut self, i: usize) -> Result<Vec<Cell>> {
        let factor = self.cfg.use_active_sampling.then_some(self.cfg.sample_factor);
        let (base, base_rep, base_train, base_val, sampling) = self.base_model(i, factor)?;
        self.save(i, "base", &base)?;
        self.record(i, "base", None, sampling, base_rep);

        let split = split_adaptive(&self.data[i])?;
        let (target_train, target_val, sampling) = if self.reduction_enabled() {
            let pool: Vec<&'a Epoch> = split.target_train.iter().chain(&split.target_val).copied().collect();
            let f = self.cfg.sample_factor;
            let (kept, seconds) = self
                .reduce(&pool, f, &[AS_TAG, ROLE_TARGET, i as u64, f as u64])
                .context("target sessions")?;
            let (val, train): (Vec<&Epoch>, Vec<&Epoch>) = kept.into_iter().partition(|e| e.session == 3);
            (train, val, seconds)
        } else {
            (split.target_train.clone(), split.target_val.clone(), 0.0)
        };
        if target_train.is_empty() || target_val.is_empty() {
            return Err(Error::invalid("target training or validation set is empty"));
        }

        let train_all: Vec<&Epoch> = base_train.iter().chain(&target_train).copied().collect();
        let val_all: Vec<&Epoch> = base_val.iter().chain(&target_val).copied().collect();
        let audit = checked_audit(&train_all, &val_all, &split.test)?;

        let opt = OptimizerConfig {
            seed: self.seed(&[OPT_TAG, i as u64, ROLE_TARGET, self.cfg.fine_tune_optimizer().seed]),
            ..self.cfg.fine_tune_optimizer().clone()
        };
        let ft_seed = self.seed(&[FINE_TUNE_TAG, i as u64]);
        let mut cells = Vec::with_capacity(self.cfg.adapt_rates.len());
        for (k, &rate) in self.cfg.adapt_rates.iter().enumerate() {
            let (state, rep) = fine_tune_refs(&base, &target_train, &target_val, rate, &opt, ft_seed)?;
            let row = self.row(i, Some(rate), (rep.sample_count_used, target_val.len()), &split.test, &state, &rep)?;
            self.save(i, &format!("adaptive_{rate}"), &state)?;
            // The target reduction is shared by all rates; book it once.
            self.record(i, "fine_tune", Some(rate), if k == 0 { sampling } else { 0.0 }, rep);
            cells.push(Cell { row, audit });
        }
        Ok(cells)
    }
}

fn checked_audit(train: &[&Epoch], val: &[&Epoch], test: &[&Epoch]) -> Result<LeakageAudit> {
    let audit = audit_leakage(train, val, test);
    if !audit.is_clean() {
        return Err(Error::invalid(format!("data leakage between splits: {audit:?}")));
    }
    Ok(audit)
}

/// Writes `report.csv`, `timings.csv`, the summary table and
/// `manifest.json` into `dir`. Returns the written paths.
pub fn write_report_files(
    dir: &Path,
    cfg: &ExperimentConfig,
    report: &ExperimentReport,
    seed_from_env: bool,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)
        .map_err(Error::from)
        .with_context(|| format!("creating {}", dir.display()))?;
    let create = |name: &str| -> Result<(PathBuf, BufWriter<File>)> {
        let path = dir.join(name);
        let f = File::create(&path)
            .map_err(Error::from)
            .with_context(|| format!("creating {}", path.display()))?;
        Ok((path, BufWriter::new(f)))
    };
    let mut written = Vec::new();

    let (path, w) = create("report.csv")?;
    write_report_csv(w, report)?;
    written.push(path);

    let (path, w) = create("timings.csv")?;
    write_timings_csv(w, report)?;
    written.push(path);

    let summary = aggregate(&[report.to_result_table()?], StdKind::Sample)?;
    let (path, w) = create(&summary_file_name(&cfg.name, cfg.use_active_sampling))?;
    write_summary_csv(w, &summary)?;
    written.push(path);

    let manifest = Manifest {
        name: cfg.name.clone(),
        scheme: cfg.scheme,
        config_sha256: cfg.hash(),
        seed: cfg.seed,
        seed_from_env,
        crate_name: env!("CARGO_PKG_NAME").into(),
        crate_version: env!("CARGO_PKG_VERSION").into(),
        subjects: report.audits.iter().map(|(s, _)| s.clone()).collect(),
        files: written
            .iter()
            .filter_map(|p| p.file_name().map(|f| f.to_string_lossy().into_owned()))
            .collect(),
    };
    let (path, w) = create("manifest.json")?;
    write_manifest(w, &manifest)?;
    written.push(path);
    Ok(written)
}
