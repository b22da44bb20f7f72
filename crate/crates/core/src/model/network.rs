use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::spec::{parameter_dims, Activation, BlockKind, BlockSpec, NetworkSpec, Shape};
use crate::error::{Error, Result};
use crate::preprocessing::Epoch;
use crate::rng;

pub(crate) const BN_EPS: f64 = 1e-5;
pub(crate) const BN_MOMENTUM: f64 = 0.1;
const INIT_TAG: u64 = 0x1417;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNormParams {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub weight: Vec<f64>,
    pub weight_dims: Vec<usize>,
    pub bias: Vec<f64>,
    pub batch_norm: Option<BatchNormParams>,
}

impl BlockParams {
    pub fn trainable_len(&self) -> usize {
        self.weight.len()
            + self.bias.len()
            + self.batch_norm.as_ref().map_or(0, |bn| bn.gamma.len() + bn.beta.len())
    }
}

/// Network parameters and per-block freeze flags.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub spec: NetworkSpec,
    pub blocks: Vec<BlockParams>,
    pub frozen: Vec<bool>,
    pub seed: u64,
}

impl ModelState {
    /// Number of trainable scalars (weights, biases, batch-norm scale and
    /// shift).
    pub fn parameter_count(&self) -> usize {
        self.blocks.iter().map(BlockParams::trainable_len).sum()
    }

    pub fn freeze_only(&mut self, blocks: &[usize]) {
        for (i, f) in self.frozen.iter_mut().enumerate() {
            *f = blocks.contains(&i);
        }
    }
}

/// Deterministic He-uniform weights (bound `sqrt(6 / fan_in)`), zero
/// biases, identity batch norm.
pub fn init_model(spec: &NetworkSpec, seed: u64) -> Result<ModelState> {
    let shapes = spec.shapes()?;
    let mut rng = rng::seeded(rng::derive_seed(seed, &[INIT_TAG]));
    let blocks = spec
        .blocks
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let (dims, bias_len) = parameter_dims(b, shapes[i]);
            let count: usize = if dims.is_empty() { 0 } else { dims.iter().product() };
            let fan_in: usize = dims.iter().skip(1).product::<usize>().max(1);
            let bound = (6.0 / fan_in as f64).sqrt();
            let weight = (0..count).map(|_| rng.random_range(-bound..bound)).collect();
            let batch_norm = b.batch_norm.then(|| {
                let m = shapes[i + 1].maps;
                BatchNormParams {
                    gamma: vec![1.0; m],
                    beta: vec![0.0; m],
                    running_mean: vec![0.0; m],
                    running_var: vec![1.0; m],
                }
            });
            BlockParams {
                weight,
                weight_dims: dims,
                bias: vec![0.0; bias_len],
                batch_norm,
            }
        })
        .collect();
    Ok(ModelState {
        spec: spec.clone(),
        blocks,
        frozen: vec![false; spec.blocks.len()],
        seed,
    })
}

/// Gradients of the trainable tensors of one block. Empty for frozen or
/// parameter-free blocks.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BlockGradient {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

/// Batch statistics observed by a training-mode batch-norm layer.
#[derive(Debug, Clone)]
pub(crate) struct BnBatchStats {
    pub block: usize,
    pub mean: Vec<f64>,
    pub var_unbiased: Vec<f64>,
}

struct BlockCache {
    input: Vec<f64>,
    mask: Option<Vec<f64>>,
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    batch_mean: Vec<f64>,
    batch_var: Vec<f64>,
    bn_train: bool,
    pre_act: Vec<f64>,
    output: Vec<f64>,
    argmax: Vec<usize>,
}

pub(crate) fn gather_inputs(spec: &NetworkSpec, batch: &[&Epoch]) -> Result<Vec<f64>> {
    let mut x = Vec::with_capacity(batch.len() * spec.input_len());
    for e in batch {
        if e.channels != spec.channels || e.data.len() != spec.input_len() {
            return Err(Error::invalid(format!(
                "epoch {}/{}/{} has shape {}x{}, network expects {}x{}",
                e.subject,
                e.session,
                e.index,
                e.channels,
                e.samples(),
                spec.channels,
                spec.samples
            )));
        }
        x.extend_from_slice(&e.data);
    }
    Ok(x)
}

fn linear_forward(b: &BlockSpec, p: &BlockParams, ins: Shape, outs: Shape, x: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * outs.len()];
    match b.kind {
        BlockKind::TemporalConv => {
            let (mi, r, ti, k) = (ins.maps, ins.rows, ins.time, b.kernel);
            let (mo, to) = (outs.maps, outs.time);
            for bi in 0..n {
                for o in 0..mo {
                    for row in 0..r {
                        let ob = ((bi * mo + o) * r + row) * to;
                        let out_row = &mut out[ob..ob + to];
                        out_row.fill(p.bias[o]);
                        for i in 0..mi {
                            let ib = ((bi * mi + i) * r + row) * ti;
                            let in_row = &x[ib..ib + ti];
                            for j in 0..k {
                                let w = p.weight[(o * mi + i) * k + j];
                                for (y, v) in out_row.iter_mut().zip(&in_row[j..j + to]) {
                                    *y += w * v;
                                }
                            }
                        }
                    }
                }
            }
        }
        BlockKind::SpatialConv => {
            let (mi, r, t) = (ins.maps, ins.rows, ins.time);
            let mo = outs.maps;
            for bi in 0..n {
                for o in 0..mo {
                    let ob = (bi * mo + o) * t;
                    let out_row = &mut out[ob..ob + t];
                    out_row.fill(p.bias[o]);
                    for i in 0..mi {
                        for row in 0..r {
                            let w = p.weight[(o * mi + i) * r + row];
                            let ib = ((bi * mi + i) * r + row) * t;
                            for (y, v) in out_row.iter_mut().zip(&x[ib..ib + t]) {
                                *y += w * v;
                            }
                        }
                    }
                }
            }
        }
        BlockKind::Dense => {
            let d = ins.len();
            let u = outs.maps;
            for bi in 0..n {
                let xin = &x[bi * d..(bi + 1) * d];
                for o in 0..u {
                    let w = &p.weight[o * d..(o + 1) * d];
                    out[bi * u + o] = p.bias[o] + w.iter().zip(xin).map(|(a, b)| a * b).sum::<f64>();
                }
            }
        }
        BlockKind::MaxPool => unreachable!("pooling has no linear stage"),
    }
    out
}

/// Returns the input gradient (when `need_dx`) and accumulates parameter
/// gradients into `g` (when `g` is given).
fn linear_backward(
    b: &BlockSpec,
    p: &BlockParams,
    ins: Shape,
    outs: Shape,
    x: &[f64],
    dz: &[f64],
    n: usize,
    mut g: Option<&mut BlockGradient>,
    need_dx: bool,
) -> Option<Vec<f64>> {
    let mut dx = need_dx.then(|| vec![0.0; n * ins.len()]);
    match b.kind {
        BlockKind::TemporalConv => {
            let (mi, r, ti, k) = (ins.maps, ins.rows, ins.time, b.kernel);
            let (mo, to) = (outs.maps, outs.time);
            for bi in 0..n {
                for o in 0..mo {
                    for row in 0..r {
                        let ob = ((bi * mo + o) * r + row) * to;
                        let d_row = &dz[ob..ob + to];
                        if let Some(g) = g.as_deref_mut() {
                            g.bias[o] += d_row.iter().sum::<f64>();
                        }
                        for i in 0..mi {
                            let ib = ((bi * mi + i) * r + row) * ti;
                            for j in 0..k {
                                let widx = (o * mi + i) * k + j;
                                if let Some(g) = g.as_deref_mut() {
                                    let in_row = &x[ib + j..ib + j + to];
                                    g.weight[widx] += d_row.iter().zip(in_row).map(|(a, b)| a * b).sum::<f64>();
                                }
                                if let Some(dx) = dx.as_mut() {
                                    let w = p.weight[widx];
                                    for (v, d) in dx[ib + j..ib + j + to].iter_mut().zip(d_row) {
                                        *v += w * d;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        BlockKind::SpatialConv => {
            let (mi, r, t) = (ins.maps, ins.rows, ins.time);
            let mo = outs.maps;
            for bi in 0..n {
                for o in 0..mo {
                    let ob = (bi * mo + o) * t;
                    let d_row = &dz[ob..ob + t];
                    if let Some(g) = g.as_deref_mut() {
                        g.bias[o] += d_row.iter().sum::<f64>();
                    }
                    for i in 0..mi {
                        for row in 0..r {
                            let widx = (o * mi + i) * r + row;
                            let ib = ((bi * mi + i) * r + row) * t;
                            if let Some(g) = g.as_deref_mut() {
                                g.weight[widx] += d_row.iter().zip(&x[ib..ib + t]).map(|(a, b)| a * b).sum::<f64>();
                            }
                            if let Some(dx) = dx.as_mut() {
                                let w = p.weight[widx];
                                for (v, d) in dx[ib..ib + t].iter_mut().zip(d_row) {
                                    *v += w * d;
                                }
                            }
                        }
                    }
                }
            }
        }
        BlockKind::Dense => {
            let d = ins.len();
            let u = outs.maps;
            for bi in 0..n {
                let xin = &x[bi * d..(bi + 1) * d];
                for o in 0..u {
                    let dv = dz[bi * u + o];
                    if let Some(g) = g.as_deref_mut() {
                        g.bias[o] += dv;
                        for (gw, xv) in g.weight[o * d..(o + 1) * d].iter_mut().zip(xin) {
                            *gw += dv * xv;
                        }
                    }
                    if let Some(dx) = dx.as_mut() {
                        for (v, w) in dx[bi * d..(bi + 1) * d].iter_mut().zip(&p.weight[o * d..(o + 1) * d]) {
                            *v += dv * w;
                        }
                    }
                }
            }
        }
        BlockKind::MaxPool => unreachable!("pooling has no linear stage"),
    }
    dx
}

fn softmax_rows(z: &[f64], classes: usize) -> Vec<f64> {
    let mut out = vec![0.0; z.len()];
    for (row, o) in z.chunks(classes).zip(out.chunks_mut(classes)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (v, e) in row.iter().zip(o.iter_mut()) {
            *e = (v - max).exp();
            sum += *e;
        }
        o.iter_mut().for_each(|e| *e /= sum);
    }
    out
}

pub(crate) struct Pass {
    caches: Vec<BlockCache>,
    shapes: Vec<Shape>,
    n: usize,
}

impl Pass {
    pub fn probabilities(&self) -> &[f64] {
        &self.caches.last().unwrap().output
    }
}

/// Runs the network. In training mode unfrozen blocks use batch
/// statistics and, when `dropout_rng` is given, dropout; frozen blocks
/// always behave as at inference.
pub(crate) fn run_forward(
    state: &ModelState,
    x: Vec<f64>,
    n: usize,
    training: bool,
    mut dropout_rng: Option<&mut rng::Rng>,
) -> Result<Pass> {
    let shapes = state.spec.shapes()?;
    let mut caches: Vec<BlockCache> = Vec::with_capacity(state.spec.blocks.len());
    let mut current = x;
    for (i, (b, p)) in state.spec.blocks.iter().zip(&state.blocks).enumerate() {
        let (ins, outs) = (shapes[i], shapes[i + 1]);
        let train_block = training && !state.frozen[i];
        let mut input = current;
        let mut mask = None;
        if train_block && b.dropout > 0.0 {
            if let Some(rng) = dropout_rng.as_deref_mut() {
                let keep = 1.0 - b.dropout;
                let m: Vec<f64> = (0..input.len())
                    .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                    .collect();
                input.iter_mut().zip(&m).for_each(|(v, s)| *v *= s);
                mask = Some(m);
            }
        }
        let mut cache = BlockCache {
            input: Vec::new(),
            mask,
            xhat: Vec::new(),
            inv_std: Vec::new(),
            batch_mean: Vec::new(),
            batch_var: Vec::new(),
            bn_train: false,
            pre_act: Vec::new(),
            output: Vec::new(),
            argmax: Vec::new(),
        };
        let z = if b.kind == BlockKind::MaxPool {
            let (m, r, ti, k) = (ins.maps, ins.rows, ins.time, b.kernel);
            let to = outs.time;
            let mut out = vec![0.0; n * outs.len()];
            let mut arg = vec![0usize; n * outs.len()];
            for line in 0..n * m * r {
                for t in 0..to {
                    let start = line * ti + t * k;
                    let (mut best, mut best_v) = (start, input[start]);
                    for s in start + 1..start + k {
                        if input[s] > best_v {
                            best = s;
                            best_v = input[s];
                        }
                    }
                    out[line * to + t] = best_v;
                    arg[line * to + t] = best;
                }
            }
            cache.argmax = arg;
            out
        } else {
            linear_forward(b, p, ins, outs, &input, n)
        };
        cache.input = input;

        let y = match &p.batch_norm {
            Some(bn) => {
                let maps = outs.maps;
                let per = outs.rows * outs.time;
                let count = (n * per) as f64;
                let mut y = vec![0.0; z.len()];
                if train_block {
                    let mut xhat = vec![0.0; z.len()];
                    let mut inv_std = vec![0.0; maps];
                    let mut means = vec![0.0; maps];
                    let mut vars = vec![0.0; maps];
                    for m in 0..maps {
                        let lanes = (0..n).map(|bi| (bi * maps + m) * per);
                        let mean = lanes.clone().map(|s| z[s..s + per].iter().sum::<f64>()).sum::<f64>() / count;
                        let var = lanes
                            .clone()
                            .map(|s| z[s..s + per].iter().map(|v| (v - mean) * (v - mean)).sum::<f64>())
                            .sum::<f64>()
                            / count;
                        let is = 1.0 / (var + BN_EPS).sqrt();
                        inv_std[m] = is;
                        means[m] = mean;
                        vars[m] = var;
                        for s in lanes {
                            for idx in s..s + per {
                                xhat[idx] = (z[idx] - mean) * is;
                                y[idx] = bn.gamma[m] * xhat[idx] + bn.beta[m];
                            }
                        }
                    }
                    cache.xhat = xhat;
                    cache.inv_std = inv_std;
                    cache.batch_mean = means;
                    cache.batch_var = vars;
                    cache.bn_train = true;
                } else {
                    for m in 0..maps {
                        let is = 1.0 / (bn.running_var[m] + BN_EPS).sqrt();
                        for bi in 0..n {
                            let s = (bi * maps + m) * per;
                            for idx in s..s + per {
                                y[idx] = bn.gamma[m] * (z[idx] - bn.running_mean[m]) * is + bn.beta[m];
                            }
                        }
                    }
                    cache.inv_std = (0..maps).map(|m| 1.0 / (bn.running_var[m] + BN_EPS).sqrt()).collect();
                }
                y
            }
            None => z,
        };
        let output = match b.activation {
            Activation::Linear => y.clone(),
            Activation::Elu => y.iter().map(|&v| if v > 0.0 { v } else { v.exp_m1() }).collect(),
            Activation::Softmax => softmax_rows(&y, outs.len()),
        };
        cache.pre_act = y;
        current = output.clone();
        cache.output = output;
        caches.push(cache);
    }
    Ok(Pass { caches, shapes, n })
}

/// Mean cross-entropy of the pass and gradients of every unfrozen block.
pub(crate) fn backward(
    state: &ModelState,
    pass: &Pass,
    labels: &[usize],
) -> (f64, Vec<BlockGradient>, Vec<BnBatchStats>) {
    let n = pass.n;
    let classes = state.spec.class_count;
    let probs = pass.probabilities();
    let mut loss = 0.0;
    let mut d = probs.to_vec();
    for (bi, &y) in labels.iter().enumerate() {
        loss -= probs[bi * classes + y].max(f64::MIN_POSITIVE).ln();
        d[bi * classes + y] -= 1.0;
    }
    d.iter_mut().for_each(|v| *v /= n as f64);
    loss /= n as f64;

    let first_trainable = state
        .frozen
        .iter()
        .zip(&state.spec.blocks)
        .position(|(f, b)| !f && b.has_parameters());
    let mut grads: Vec<BlockGradient> = vec![BlockGradient::default(); state.blocks.len()];
    let mut stats = Vec::new();
    let Some(first_trainable) = first_trainable else {
        return (loss, grads, stats);
    };

    // `d` holds the gradient w.r.t. the current block's pre-activation for
    // the softmax head, and w.r.t. its output otherwise.
    let last = state.blocks.len() - 1;
    for i in (first_trainable..=last).rev() {
        let b = &state.spec.blocks[i];
        let p = &state.blocks[i];
        let c = &pass.caches[i];
        let (ins, outs) = (pass.shapes[i], pass.shapes[i + 1]);
        let trainable = !state.frozen[i] && b.has_parameters();
        let need_dx = i > first_trainable;

        let mut dpre = d;
        match b.activation {
            Activation::Elu => dpre
                .iter_mut()
                .zip(&c.pre_act)
                .zip(&c.output)
                .for_each(|((g, &z), &a)| {
                    if z <= 0.0 {
                        *g *= a + 1.0;
                    }
                }),
            Activation::Linear | Activation::Softmax => {}
        }

        let mut g = BlockGradient::default();
        let dz = match &p.batch_norm {
            Some(bn) => {
                let maps = outs.maps;
                let per = outs.rows * outs.time;
                let mut dz = vec![0.0; dpre.len()];
                if trainable {
                    g.gamma = vec![0.0; maps];
                    g.beta = vec![0.0; maps];
                }
                for m in 0..maps {
                    let lanes: Vec<usize> = (0..n).map(|bi| (bi * maps + m) * per).collect();
                    if c.bn_train {
                        let count = (n * per) as f64;
                        let (mut sum_d, mut sum_dx) = (0.0, 0.0);
                        for &s in &lanes {
                            for idx in s..s + per {
                                sum_d += dpre[idx];
                                sum_dx += dpre[idx] * c.xhat[idx];
                            }
                        }
                        if trainable {
                            g.gamma[m] = sum_dx;
                            g.beta[m] = sum_d;
                        }
                        let scale = bn.gamma[m] * c.inv_std[m] / count;
                        for &s in &lanes {
                            for idx in s..s + per {
                                dz[idx] = scale * (count * dpre[idx] - sum_d - c.xhat[idx] * sum_dx);
                            }
                        }
                    } else {
                        let scale = bn.gamma[m] * c.inv_std[m];
                        for &s in &lanes {
                            for idx in s..s + per {
                                dz[idx] = scale * dpre[idx];
                            }
                        }
                    }
                }
                dz
            }
            None => dpre,
        };

        let dx = match b.kind {
            BlockKind::MaxPool => need_dx.then(|| {
                let mut dx = vec![0.0; n * ins.len()];
                for (o, &src) in c.argmax.iter().enumerate() {
                    dx[src] += dz[o];
                }
                dx
            }),
            _ => {
                if trainable {
                    g.weight = vec![0.0; p.weight.len()];
                    g.bias = vec![0.0; p.bias.len()];
                }
                linear_backward(b, p, ins, outs, &c.input, &dz, n, trainable.then_some(&mut g), need_dx)
            }
        };
        if trainable && c.bn_train {
            let count = (n * outs.rows * outs.time) as f64;
            let correction = if count > 1.0 { count / (count - 1.0) } else { 0.0 };
            stats.push(BnBatchStats {
                block: i,
                mean: c.batch_mean.clone(),
                var_unbiased: c.batch_var.iter().map(|v| v * correction).collect(),
            });
        }
        grads[i] = g;
        d = match dx {
            Some(mut dx) => {
                if let Some(mask) = &c.mask {
                    dx.iter_mut().zip(mask).for_each(|(v, s)| *v *= s);
                }
                dx
            }
            None => break,
        };
    }
    (loss, grads, stats)
}

pub(crate) fn apply_bn_stats(state: &mut ModelState, stats: &[BnBatchStats]) {
    for s in stats {
        if let Some(bn) = state.blocks[s.block].batch_norm.as_mut() {
            for m in 0..bn.running_mean.len() {
                bn.running_mean[m] = (1.0 - BN_MOMENTUM) * bn.running_mean[m] + BN_MOMENTUM * s.mean[m];
                bn.running_var[m] = (1.0 - BN_MOMENTUM) * bn.running_var[m] + BN_MOMENTUM * s.var_unbiased[m];
            }
        }
    }
}

/// Class probabilities, one row per epoch. Dropout is off and batch norm
/// uses its running statistics.
pub fn forward(state: &ModelState, batch: &[Epoch]) -> Result<Vec<Vec<f64>>> {
    if batch.is_empty() {
        return Ok(Vec::new());
    }
    let refs: Vec<&Epoch> = batch.iter().collect();
    let x = gather_inputs(&state.spec, &refs)?;
    let pass = run_forward(state, x, batch.len(), false, None)?;
    Ok(pass
        .probabilities()
        .chunks(state.spec.class_count)
        .map(<[f64]>::to_vec)
        .collect())
}

/// Mean cross-entropy and its gradient for a batch, with batch norm in
/// training mode and dropout disabled. Frozen blocks get empty gradients.
pub fn loss_and_gradient(state: &ModelState, batch: &[Epoch]) -> Result<(f64, Vec<BlockGradient>)> {
    if batch.is_empty() {
        return Err(Error::invalid("gradient needs a non-empty batch"));
    }
    let refs: Vec<&Epoch> = batch.iter().collect();
    let labels = check_labels(state, &refs)?;
    let x = gather_inputs(&state.spec, &refs)?;
    let pass = run_forward(state, x, batch.len(), true, None)?;
    let (loss, grads, _) = backward(state, &pass, &labels);
    Ok((loss, grads))
}

/// Mean cross-entropy under the same conditions as [`loss_and_gradient`].
pub fn training_loss(state: &ModelState, batch: &[Epoch]) -> Result<f64> {
    let refs: Vec<&Epoch> = batch.iter().collect();
    let labels = check_labels(state, &refs)?;
    let x = gather_inputs(&state.spec, &refs)?;
    let pass = run_forward(state, x, batch.len(), true, None)?;
    let classes = state.spec.class_count;
    let p = pass.probabilities();
    Ok(labels
        .iter()
        .enumerate()
        .map(|(i, &y)| -p[i * classes + y].max(f64::MIN_POSITIVE).ln())
        .sum::<f64>()
        / labels.len() as f64)
}

pub(crate) fn check_labels(state: &ModelState, batch: &[&Epoch]) -> Result<Vec<usize>> {
    batch
        .iter()
        .map(|e| {
            if e.label < state.spec.class_count {
                Ok(e.label)
            } else {
                Err(Error::invalid(format!(
                    "label {} out of range for {} classes",
                    e.label, state.spec.class_count
                )))
            }
        })
        .collect()
}
