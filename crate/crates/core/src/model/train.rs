use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::network::{apply_bn_stats, backward, check_labels, gather_inputs, run_forward, BlockGradient, ModelState};
use crate::error::{Error, Result, ResultExt};
use crate::preprocessing::Epoch;
use crate::rng;
use crate::sampling::{BatchSource, ShuffledEpochs};

const DROPOUT_TAG: u64 = 0xd209;
const ADAPT_TAG: u64 = 0xada9;
const FINE_TUNE_TAG: u64 = 0xf17e;
const EVAL_CHUNK: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stop after this many epochs without a validation improvement.
    pub early_stop_patience: Option<usize>,
    /// Return the parameters of the epoch with the best validation
    /// accuracy instead of the last ones.
    pub checkpoint_best_val: bool,
    /// Seeds the dropout masks.
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            weight_decay: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 16,
            epochs: 200,
            early_stop_patience: None,
            checkpoint_best_val: true,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::invalid("batch size and epoch count must be at least 1"));
        }
        if !(self.learning_rate >= 0.0) || !(self.weight_decay >= 0.0) || !(self.epsilon > 0.0) {
            return Err(Error::invalid("learning rate and weight decay must be non-negative, epsilon positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::invalid("betas must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean mini-batch loss of every completed epoch.
    pub loss_curve: Vec<f64>,
    pub val_accuracy_curve: Vec<f64>,
    pub wall_clock_seconds: f64,
    pub final_test_accuracy: Option<f64>,
    pub sample_count_used: usize,
    /// Epoch (0-based) whose parameters were returned.
    pub selected_epoch: usize,
}

struct AdamW {
    step: i32,
    m: Vec<BlockGradient>,
    v: Vec<BlockGradient>,
}

impl AdamW {
    fn new(state: &ModelState) -> Self {
        let zeros: Vec<BlockGradient> = state
            .blocks
            .iter()
            .map(|b| BlockGradient {
                weight: vec![0.0; b.weight.len()],
                bias: vec![0.0; b.bias.len()],
                gamma: b.batch_norm.as_ref().map_or(Vec::new(), |bn| vec![0.0; bn.gamma.len()]),
                beta: b.batch_norm.as_ref().map_or(Vec::new(), |bn| vec![0.0; bn.beta.len()]),
            })
            .collect();
        Self {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    fn update(&mut self, state: &mut ModelState, grads: &[BlockGradient], cfg: &OptimizerConfig) {
        self.step += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.step);
        let bc2 = 1.0 - cfg.beta2.powi(self.step);
        let apply = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
            if g.is_empty() {
                return;
            }
            for i in 0..p.len() {
                p[i] *= 1.0 - cfg.learning_rate * cfg.weight_decay;
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                p[i] -= cfg.learning_rate * (m[i] / bc1) / ((v[i] / bc2).sqrt() + cfg.epsilon);
            }
        };
        for (i, g) in grads.iter().enumerate() {
            if state.frozen[i] {
                continue;
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let block = &mut state.blocks[i];
            apply(&mut block.weight, &g.weight, &mut m.weight, &mut v.weight);
            apply(&mut block.bias, &g.bias, &mut m.bias, &mut v.bias);
            if let Some(bn) = block.batch_norm.as_mut() {
                apply(&mut bn.gamma, &g.gamma, &mut m.gamma, &mut v.gamma);
                apply(&mut bn.beta, &g.beta, &mut m.beta, &mut v.beta);
            }
        }
    }
}

/// Mini-batch AdamW training of the unfrozen blocks. `batches` must hand
/// out positions into `train_set`.
pub fn train(
    state: &ModelState,
    train_set: &[Epoch],
    val_set: &[Epoch],
    opt: &OptimizerConfig,
    batches: &mut dyn BatchSource,
) -> Result<(ModelState, TrainReport)> {
    let train_refs: Vec<&Epoch> = train_set.iter().collect();
    let val_refs: Vec<&Epoch> = val_set.iter().collect();
    train_refs_with(state, &train_refs, &val_refs, opt, batches)
}

pub(crate) fn train_refs_with(
    state: &ModelState,
    train_set: &[&Epoch],
    val_set: &[&Epoch],
    opt: &OptimizerConfig,
    batches: &mut dyn BatchSource,
) -> Result<(ModelState, TrainReport)> {
    opt.validate()?;
    if train_set.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    check_labels(state, train_set)?;
    gather_inputs(&state.spec, train_set)?;
    check_labels(state, val_set)?;
    gather_inputs(&state.spec, val_set)?;

    let started = Instant::now();
    let n = train_set.len();
    let steps_per_epoch = n.div_ceil(opt.batch_size);
    let mut state = state.clone();
    let mut adam = AdamW::new(&state);
    let mut dropout_rng = rng::seeded(rng::derive_seed(opt.seed, &[state.seed, DROPOUT_TAG]));
    let mut loss_curve = Vec::new();
    let mut val_curve = Vec::new();
    let mut best: Option<(f64, usize, ModelState)> = None;
    let mut stale = 0usize;

    for epoch in 0..opt.epochs {
        let mut loss_sum = 0.0;
        for _ in 0..steps_per_epoch {
            let ids = batches
                .next_batch(opt.batch_size)
                .with_context(|| format!("drawing a {} batch in epoch {epoch}", batches.name()))?;
            if ids.is_empty() {
                return Err(Error::invalid(format!("{} sampler returned an empty batch", batches.name())));
            }
            let batch: Vec<&Epoch> = ids
                .iter()
                .map(|&i| {
                    train_set
                        .get(i)
                        .copied()
                        .ok_or_else(|| Error::invalid(format!("batch id {i} outside training set of {n}")))
                })
                .collect::<Result<_>>()?;
            let labels: Vec<usize> = batch.iter().map(|e| e.label).collect();
            let x = gather_inputs(&state.spec, &batch)?;
            let pass = run_forward(&state, x, batch.len(), true, Some(&mut dropout_rng))?;
            let (loss, grads, stats) = backward(&state, &pass, &labels);
            apply_bn_stats(&mut state, &stats);
            adam.update(&mut state, &grads, opt);
            loss_sum += loss;
        }
        loss_curve.push(loss_sum / steps_per_epoch as f64);

        if !val_set.is_empty() {
            let acc = accuracy_of(&state, val_set)?;
            val_curve.push(acc);
            if best.as_ref().map_or(true, |(b, _, _)| acc > *b) {
                best = Some((acc, epoch, state.clone()));
                stale = 0;
            } else {
                stale += 1;
                if opt.early_stop_patience.is_some_and(|p| stale >= p) {
                    break;
                }
            }
        }
    }

    let last_epoch = loss_curve.len() - 1;
    let (state, selected_epoch) = match best {
        Some((_, epoch, s)) if opt.checkpoint_best_val => (s, epoch),
        _ => (state, last_epoch),
    };
    let report = TrainReport {
        loss_curve,
        val_accuracy_curve: val_curve,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        final_test_accuracy: None,
        sample_count_used: n,
        selected_epoch,
    };
    Ok((state, report))
}

/// Positions of the first `ceil(rate% * n)` epochs of a seeded shuffle of
/// `0..n`. The shuffle depends only on `(n, seed)`, so lower rates yield
/// prefixes of higher ones.
pub fn adaptation_subset(n: usize, adapt_rate: u32, seed: u64) -> Result<Vec<usize>> {
    if !(10..=100).contains(&adapt_rate) || adapt_rate % 10 != 0 {
        return Err(Error::invalid(format!(
            "adaptation rate must be one of 10, 20, ..., 100, got {adapt_rate}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::seeded(rng::derive_seed(seed, &[ADAPT_TAG])));
    order.truncate((adapt_rate as usize * n).div_ceil(100));
    Ok(order)
}

/// Freezes the first block, unfreezes the rest and trains on the
/// adaptation subset of `target_train`.
pub fn fine_tune(
    base: &ModelState,
    target_train: &[Epoch],
    target_val: &[Epoch],
    adapt_rate: u32,
    opt: &OptimizerConfig,
    seed: u64,
) -> Result<(ModelState, TrainReport)> {
    let train_refs: Vec<&Epoch> = target_train.iter().collect();
    let val_refs: Vec<&Epoch> = target_val.iter().collect();
    fine_tune_refs(base, &train_refs, &val_refs, adapt_rate, opt, seed)
}

pub(crate) fn fine_tune_refs(
    base: &ModelState,
    target_train: &[&Epoch],
    target_val: &[&Epoch],
    adapt_rate: u32,
    opt: &OptimizerConfig,
    seed: u64,
) -> Result<(ModelState, TrainReport)> {
    let subset = adaptation_subset(target_train.len(), adapt_rate, seed)?;
    let train_refs: Vec<&Epoch> = subset.iter().map(|&i| target_train[i]).collect();
    let mut state = base.clone();
    state.freeze_only(&[0]);
    let mut batches = ShuffledEpochs::new((0..train_refs.len()).collect(), rng::derive_seed(seed, &[FINE_TUNE_TAG]));
    let (state, mut report) = train_refs_with(&state, &train_refs, target_val, opt, &mut batches)
        .with_context(|| format!("fine-tuning at {adapt_rate}%"))?;
    report.sample_count_used = train_refs.len();
    Ok((state, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    /// `confusion[true_class][predicted_class]`.
    pub confusion: Vec<Vec<usize>>,
}

/// Arg-max class per epoch; ties go to the lowest class index.
pub fn predict(state: &ModelState, batch: &[Epoch]) -> Result<Vec<usize>> {
    let refs: Vec<&Epoch> = batch.iter().collect();
    predict_refs(state, &refs)
}

fn predict_refs(state: &ModelState, batch: &[&Epoch]) -> Result<Vec<usize>> {
    let classes = state.spec.class_count;
    let mut out = Vec::with_capacity(batch.len());
    for chunk in batch.chunks(EVAL_CHUNK) {
        let x = gather_inputs(&state.spec, chunk)?;
        let pass = run_forward(state, x, chunk.len(), false, None)?;
        for row in pass.probabilities().chunks(classes) {
            let mut best = 0;
            for (c, &p) in row.iter().enumerate() {
                if p > row[best] {
                    best = c;
                }
            }
            out.push(best);
        }
    }
    Ok(out)
}

fn accuracy_of(state: &ModelState, set: &[&Epoch]) -> Result<f64> {
    let pred = predict_refs(state, set)?;
    let correct = pred.iter().zip(set).filter(|(p, e)| **p == e.label).count();
    Ok(correct as f64 / set.len() as f64)
}

pub fn evaluate(state: &ModelState, test_set: &[Epoch]) -> Result<Evaluation> {
    let refs: Vec<&Epoch> = test_set.iter().collect();
    evaluate_refs(state, &refs)
}

pub(crate) fn evaluate_refs(state: &ModelState, test_set: &[&Epoch]) -> Result<Evaluation> {
    if test_set.is_empty() {
        return Err(Error::invalid("test set is empty"));
    }
    let classes = state.spec.class_count;
    check_labels(state, test_set)?;
    let pred = predict_refs(state, test_set)?;
    let mut confusion = vec![vec![0usize; classes]; classes];
    let mut correct = 0;
    for (p, e) in pred.iter().zip(test_set) {
        confusion[e.label][*p] += 1;
        correct += usize::from(*p == e.label);
    }
    Ok(Evaluation {
        accuracy: correct as f64 / test_set.len() as f64,
        confusion,
    })
}
