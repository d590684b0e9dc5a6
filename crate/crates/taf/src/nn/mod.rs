//! The small convolutional classifier: blocks of stride-2/stride-1 3x3
//! convolutions with batch normalization, ReLU and dropout, global average
//! pooling, a dense softmax head, exact backpropagation and Adam updates.
//!
//! Training arithmetic is deterministic for a fixed seed: sample-level
//! parallelism only ever writes disjoint outputs, and weight-gradient
//! accumulation reduces fixed-size sample chunks in a fixed order.

pub mod checkpoint;
pub mod conv;
pub mod gradcheck;
pub mod scalar;

use crate::error::{Result, TafError};
use conv::{same_padding, ConvScratch, KERNEL};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use scalar::Scalar;

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;
/// Fixed chunk size for deterministic weight-gradient reduction.
const GRAD_CHUNK: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub blocks: usize,
    pub convs_per_block: usize,
    pub initial_filters: usize,
    pub dropout_p: f64,
    pub num_classes: usize,
    pub input_channels: usize,
    pub input_height: usize,
    pub input_width: usize,
    pub seed: u64,
}

impl ModelConfig {
    /// Defaults from the best-performing architecture row: two blocks of
    /// three convolutions, 128 initial filters, dropout 0.5.
    pub fn with_input(num_classes: usize, input_channels: usize, h: usize, w: usize) -> Self {
        ModelConfig {
            blocks: 2,
            convs_per_block: 3,
            initial_filters: 128,
            dropout_p: 0.5,
            num_classes,
            input_channels,
            input_height: h,
            input_width: w,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks < 1
            || self.convs_per_block < 1
            || self.initial_filters < 1
            || self.num_classes < 1
            || self.input_channels < 1
            || self.input_height < 1
            || self.input_width < 1
        {
            return Err(TafError::Parameter(
                "model config counts must all be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(TafError::Parameter(format!(
                "dropout probability must be in [0, 1), got {}",
                self.dropout_p
            )));
        }
        Ok(())
    }

    /// (in_c, out_c, stride) per convolution unit: the first convolution of
    /// each block has stride 2, filters double per block.
    pub fn conv_specs(&self) -> Vec<(usize, usize, usize)> {
        let mut specs = Vec::new();
        let mut in_c = self.input_channels;
        for b in 0..self.blocks {
            let filters = self.initial_filters << b;
            for i in 0..self.convs_per_block {
                let stride = if i == 0 { 2 } else { 1 };
                specs.push((in_c, filters, stride));
                in_c = filters;
            }
        }
        specs
    }

    /// Feature width entering the dense head.
    pub fn feature_dim(&self) -> usize {
        self.initial_filters << (self.blocks - 1)
    }

    /// Spatial dims after all blocks: ceil(H / 2^blocks) x ceil(W / 2^blocks).
    pub fn final_spatial(&self) -> (usize, usize) {
        let mut h = self.input_height;
        let mut w = self.input_width;
        for _ in 0..self.blocks {
            h = h.div_ceil(2);
            w = w.div_ceil(2);
        }
        (h, w)
    }

    /// Trainable parameter count:
    /// sum over conv units of (9 * in_c * out_c + 2 * out_c)
    /// + feature_dim * classes + classes.
    pub fn param_count(&self) -> usize {
        let convs: usize = self
            .conv_specs()
            .iter()
            .map(|&(i, o, _)| 9 * i * o + 2 * o)
            .sum();
        convs + self.feature_dim() * self.num_classes + self.num_classes
    }
}

/// One conv -> batch-norm -> ReLU -> dropout unit.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvUnit<S> {
    pub in_c: usize,
    pub out_c: usize,
    pub stride: usize,
    /// [out_c, in_c * 9] row-major.
    pub weight: Vec<S>,
    pub bn_gamma: Vec<S>,
    pub bn_beta: Vec<S>,
    pub run_mean: Vec<S>,
    pub run_var: Vec<S>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<S> {
    pub units: Vec<ConvUnit<S>>,
    /// [feature_dim, num_classes] row-major.
    pub dense_w: Vec<S>,
    pub dense_b: Vec<S>,
}

impl<S: Scalar> ModelParams<S> {
    /// Trainable tensors in serialization order.
    pub fn trainable(&self) -> Vec<&Vec<S>> {
        let mut out = Vec::new();
        for u in &self.units {
            out.push(&u.weight);
            out.push(&u.bn_gamma);
            out.push(&u.bn_beta);
        }
        out.push(&self.dense_w);
        out.push(&self.dense_b);
        out
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut Vec<S>> {
        let mut out = Vec::new();
        for u in &mut self.units {
            out.push(&mut u.weight);
            out.push(&mut u.bn_gamma);
            out.push(&mut u.bn_beta);
        }
        out.push(&mut self.dense_w);
        out.push(&mut self.dense_b);
        out
    }

    pub fn trainable_names(config: &ModelConfig) -> Vec<String> {
        let mut names = Vec::new();
        for i in 0..config.blocks * config.convs_per_block {
            names.push(format!("conv{i}/w"));
            names.push(format!("conv{i}/bn_gamma"));
            names.push(format!("conv{i}/bn_beta"));
        }
        names.push("dense/w".into());
        names.push("dense/b".into());
        names
    }
}

/// Gradients aligned with [`ModelParams::trainable`] order.
pub struct Gradients<S> {
    pub tensors: Vec<Vec<S>>,
}

/// Xavier-uniform initialization: weights drawn from
/// +-sqrt(6 / (fan_in + fan_out)), batch-norm scale 1 and shift 0,
/// deterministic for a given seed.
pub fn xavier_init<S: Scalar>(config: &ModelConfig) -> Result<ModelParams<S>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut units = Vec::new();
    for (in_c, out_c, stride) in config.conv_specs() {
        let fan_in = in_c * KERNEL * KERNEL;
        let fan_out = out_c * KERNEL * KERNEL;
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let weight = (0..out_c * in_c * KERNEL * KERNEL)
            .map(|_| S::from_f64(rng.random_range(-bound..bound)))
            .collect();
        units.push(ConvUnit {
            in_c,
            out_c,
            stride,
            weight,
            bn_gamma: vec![S::ONE; out_c],
            bn_beta: vec![S::ZERO; out_c],
            run_mean: vec![S::ZERO; out_c],
            run_var: vec![S::ONE; out_c],
        });
    }
    let feat = config.feature_dim();
    let bound = (6.0 / (feat + config.num_classes) as f64).sqrt();
    let dense_w = (0..feat * config.num_classes)
        .map(|_| S::from_f64(rng.random_range(-bound..bound)))
        .collect();
    Ok(ModelParams {
        units,
        dense_w,
        dense_b: vec![S::ZERO; config.num_classes],
    })
}

/// Per-batch activations cached for the backward pass.
pub struct ForwardCache<S> {
    /// Spatial dims at each unit's input.
    input_dims: Vec<(usize, usize)>,
    /// Pre-batch-norm convolution outputs per unit, [n, out_c, h, w].
    conv_out: Vec<Vec<S>>,
    /// Batch statistics per unit (train mode).
    mean: Vec<Vec<S>>,
    var: Vec<Vec<S>>,
    /// Combined ReLU x dropout keep gate per activation.
    mask: Vec<Vec<u8>>,
    /// Unit outputs, [n, out_c, h, w]; the last feeds the pooling head.
    out: Vec<Vec<S>>,
    /// Pooled features [n, feature_dim].
    gap: Vec<S>,
    pub logits: Vec<S>,
    n: usize,
}

fn batch_conv_forward<S: Scalar>(
    unit: &ConvUnit<S>,
    input: &[S],
    n: usize,
    h: usize,
    w: usize,
    output: &mut [S],
) {
    let (oh, _) = same_padding(h, unit.stride);
    let (ow, _) = same_padding(w, unit.stride);
    let in_sz = unit.in_c * h * w;
    let out_sz = unit.out_c * oh * ow;
    output[..n * out_sz]
        .par_chunks_mut(out_sz)
        .enumerate()
        .for_each_init(ConvScratch::default, |scratch, (b, out_s)| {
            conv::conv_forward_sample(
                &input[b * in_sz..(b + 1) * in_sz],
                &unit.weight,
                unit.in_c,
                unit.out_c,
                h,
                w,
                unit.stride,
                scratch,
                out_s,
            );
        });
}

/// Training-mode forward pass. Batch-norm uses batch statistics; dropout
/// masks are drawn from `rng` in a fixed order. Running statistics are NOT
/// updated here; see [`update_running_stats`].
pub fn forward_train<S: Scalar>(
    params: &ModelParams<S>,
    config: &ModelConfig,
    x: &[S],
    n: usize,
    rng: &mut ChaCha8Rng,
) -> ForwardCache<S> {
    let mut cache = ForwardCache {
        input_dims: Vec::new(),
        conv_out: Vec::new(),
        mean: Vec::new(),
        var: Vec::new(),
        mask: Vec::new(),
        out: Vec::new(),
        gap: Vec::new(),
        logits: Vec::new(),
        n,
    };
    let keep = 1.0 - config.dropout_p;
    let inv_keep = S::from_f64(1.0 / keep);
    let (mut h, mut w) = (config.input_height, config.input_width);
    let mut current: &[S] = x;
    for unit in &params.units {
        let (oh, _) = same_padding(h, unit.stride);
        let (ow, _) = same_padding(w, unit.stride);
        let out_sz = unit.out_c * oh * ow;
        let mut conv_out = vec![S::ZERO; n * out_sz];
        batch_conv_forward(unit, current, n, h, w, &mut conv_out);

        // batch statistics per channel over n * oh * ow values
        let spatial = oh * ow;
        let m = (n * spatial) as f64;
        let mut mean = vec![S::ZERO; unit.out_c];
        let mut var = vec![S::ZERO; unit.out_c];
        for c in 0..unit.out_c {
            let mut sum = S::ZERO;
            for b in 0..n {
                let base = b * out_sz + c * spatial;
                for v in &conv_out[base..base + spatial] {
                    sum += *v;
                }
            }
            mean[c] = sum / S::from_f64(m);
            let mut sq = S::ZERO;
            for b in 0..n {
                let base = b * out_sz + c * spatial;
                for v in &conv_out[base..base + spatial] {
                    let d = *v - mean[c];
                    sq += d * d;
                }
            }
            var[c] = sq / S::from_f64(m);
        }

        // normalize, scale/shift, ReLU, dropout
        let mut out = vec![S::ZERO; n * out_sz];
        let mut mask = vec![0u8; n * out_sz];
        let draw_dropout = config.dropout_p > 0.0;
        for b in 0..n {
            for c in 0..unit.out_c {
                let inv_std = S::ONE / (var[c] + S::from_f64(BN_EPSILON)).sqrt();
                let g = unit.bn_gamma[c];
                let beta = unit.bn_beta[c];
                let base = b * out_sz + c * spatial;
                for i in base..base + spatial {
                    let y = (conv_out[i] - mean[c]) * inv_std * g + beta;
                    let relu_on = y > S::ZERO;
                    let keep_on = if draw_dropout {
                        rng.random_bool(keep)
                    } else {
                        true
                    };
                    if relu_on && keep_on {
                        mask[i] = 1;
                        out[i] = if draw_dropout { y * inv_keep } else { y };
                    }
                }
            }
        }
        cache.input_dims.push((h, w));
        cache.conv_out.push(conv_out);
        cache.mean.push(mean);
        cache.var.push(var);
        cache.mask.push(mask);
        cache.out.push(out);
        current = cache.out.last().unwrap();
        h = oh;
        w = ow;
    }

    let feat = config.feature_dim();
    let spatial = h * w;
    let inv_spatial = S::from_f64(1.0 / spatial as f64);
    let mut gap = vec![S::ZERO; n * feat];
    let last = cache.out.last().unwrap();
    for b in 0..n {
        for c in 0..feat {
            let base = (b * feat + c) * spatial;
            let mut sum = S::ZERO;
            for v in &last[base..base + spatial] {
                sum += *v;
            }
            gap[b * feat + c] = sum * inv_spatial;
        }
    }
    let mut logits = vec![S::ZERO; n * config.num_classes];
    S::gemm(n, feat, config.num_classes, &gap, &params.dense_w, S::ZERO, &mut logits);
    for b in 0..n {
        for c in 0..config.num_classes {
            logits[b * config.num_classes + c] += params.dense_b[c];
        }
    }
    cache.gap = gap;
    cache.logits = logits;
    cache
}

/// Evaluation-mode forward: running batch-norm statistics, no dropout.
/// Samples are processed independently (and in parallel); repeated calls are
/// bit-identical.
pub fn forward_eval<S: Scalar>(
    params: &ModelParams<S>,
    config: &ModelConfig,
    x: &[S],
    n: usize,
) -> Vec<S> {
    let classes = config.num_classes;
    let feat = config.feature_dim();
    let in_sz = config.input_channels * config.input_height * config.input_width;
    let mut logits = vec![S::ZERO; n * classes];
    logits
        .par_chunks_mut(classes)
        .enumerate()
        .for_each_init(ConvScratch::default, |scratch, (b, out_row)| {
            let mut h = config.input_height;
            let mut w = config.input_width;
            let mut current = x[b * in_sz..(b + 1) * in_sz].to_vec();
            for unit in &params.units {
                let (oh, _) = same_padding(h, unit.stride);
                let (ow, _) = same_padding(w, unit.stride);
                let spatial = oh * ow;
                let mut out = vec![S::ZERO; unit.out_c * spatial];
                conv::conv_forward_sample(
                    &current,
                    &unit.weight,
                    unit.in_c,
                    unit.out_c,
                    h,
                    w,
                    unit.stride,
                    scratch,
                    &mut out,
                );
                for c in 0..unit.out_c {
                    let inv_std =
                        S::ONE / (unit.run_var[c] + S::from_f64(BN_EPSILON)).sqrt();
                    let g = unit.bn_gamma[c];
                    let beta = unit.bn_beta[c];
                    let mean = unit.run_mean[c];
                    for v in &mut out[c * spatial..(c + 1) * spatial] {
                        let y = (*v - mean) * inv_std * g + beta;
                        *v = if y > S::ZERO { y } else { S::ZERO };
                    }
                }
                current = out;
                h = oh;
                w = ow;
            }
            let spatial = h * w;
            let inv_spatial = S::from_f64(1.0 / spatial as f64);
            let mut gap = vec![S::ZERO; feat];
            for (c, g) in gap.iter_mut().enumerate() {
                let mut sum = S::ZERO;
                for v in &current[c * spatial..(c + 1) * spatial] {
                    sum += *v;
                }
                *g = sum * inv_spatial;
            }
            S::gemm(1, feat, classes, &gap, &params.dense_w, S::ZERO, out_row);
            for (c, v) in out_row.iter_mut().enumerate() {
                *v += params.dense_b[c];
            }
        });
    logits
}

/// Fold the cached batch statistics into the running estimates.
pub fn update_running_stats<S: Scalar>(params: &mut ModelParams<S>, cache: &ForwardCache<S>) {
    let momentum = S::from_f64(BN_MOMENTUM);
    let rest = S::from_f64(1.0 - BN_MOMENTUM);
    for (unit, (mean, var)) in params
        .units
        .iter_mut()
        .zip(cache.mean.iter().zip(cache.var.iter()))
    {
        for c in 0..unit.out_c {
            unit.run_mean[c] = unit.run_mean[c] * momentum + mean[c] * rest;
            unit.run_var[c] = unit.run_var[c] * momentum + var[c] * rest;
        }
    }
}

/// Mean softmax cross-entropy over the batch, from raw logits.
pub fn softmax_cross_entropy<S: Scalar>(logits: &[S], labels: &[usize], classes: usize) -> S {
    let n = labels.len();
    let mut loss = S::ZERO;
    for (b, &label) in labels.iter().enumerate() {
        let row = &logits[b * classes..(b + 1) * classes];
        let max = row.iter().fold(row[0], |a, &v| a.maximum(v));
        let mut denom = S::ZERO;
        for &v in row {
            denom += (v - max).exp();
        }
        loss += denom.ln() - (row[label] - max);
    }
    loss / S::from_f64(n as f64)
}

/// Forward (train mode), loss, and exact gradients for every trainable
/// tensor. Dropout masks come from `rng`; pass a freshly seeded generator to
/// reproduce a specific draw.
pub fn loss_and_backward<S: Scalar>(
    params: &ModelParams<S>,
    config: &ModelConfig,
    x: &[S],
    n: usize,
    labels: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<(S, ForwardCache<S>, Gradients<S>)> {
    assert_eq!(labels.len(), n);
    let classes = config.num_classes;
    let cache = forward_train(params, config, x, n, rng);
    let loss = softmax_cross_entropy(&cache.logits, labels, classes);
    if !loss.is_finite_scalar() {
        return Err(numeric_error(&cache, config));
    }

    // d loss / d logits = (softmax - onehot) / n
    let mut dlogits = vec![S::ZERO; n * classes];
    let inv_n = S::from_f64(1.0 / n as f64);
    for (b, &label) in labels.iter().enumerate() {
        let row = &cache.logits[b * classes..(b + 1) * classes];
        let max = row.iter().fold(row[0], |a, &v| a.maximum(v));
        let mut denom = S::ZERO;
        for &v in row {
            denom += (v - max).exp();
        }
        for c in 0..classes {
            let p = (row[c] - max).exp() / denom;
            let y = if c == label { S::ONE } else { S::ZERO };
            dlogits[b * classes + c] = (p - y) * inv_n;
        }
    }

    let feat = config.feature_dim();
    // dense gradients
    let gap_t = conv::transpose(&cache.gap, n, feat); // [feat, n]
    let mut d_dense_w = vec![S::ZERO; feat * classes];
    S::gemm(feat, n, classes, &gap_t, &dlogits, S::ZERO, &mut d_dense_w);
    let mut d_dense_b = vec![S::ZERO; classes];
    for b in 0..n {
        for c in 0..classes {
            d_dense_b[c] += dlogits[b * classes + c];
        }
    }
    // gradient w.r.t. pooled features
    let dense_w_t = conv::transpose(&params.dense_w, feat, classes); // [classes, feat]
    let mut dgap = vec![S::ZERO; n * feat];
    S::gemm(n, classes, feat, &dlogits, &dense_w_t, S::ZERO, &mut dgap);

    // broadcast through global average pooling
    let (last_h, last_w) = {
        let (h0, w0) = *cache.input_dims.last().unwrap();
        let stride = params.units.last().unwrap().stride;
        (same_padding(h0, stride).0, same_padding(w0, stride).0)
    };
    let last_spatial = last_h * last_w;
    let inv_spatial = S::from_f64(1.0 / last_spatial as f64);
    let mut grad = vec![S::ZERO; n * feat * last_spatial];
    for b in 0..n {
        for c in 0..feat {
            let g = dgap[b * feat + c] * inv_spatial;
            let base = (b * feat + c) * last_spatial;
            for v in &mut grad[base..base + last_spatial] {
                *v = g;
            }
        }
    }

    // backward through the conv units
    let keep = 1.0 - config.dropout_p;
    let inv_keep = S::from_f64(1.0 / keep);
    let apply_inv_keep = config.dropout_p > 0.0;
    let mut unit_grads: Vec<(Vec<S>, Vec<S>, Vec<S>)> = Vec::with_capacity(params.units.len());
    for (u, unit) in params.units.iter().enumerate().rev() {
        let (h, w) = cache.input_dims[u];
        let (oh, _) = same_padding(h, unit.stride);
        let (ow, _) = same_padding(w, unit.stride);
        let spatial = oh * ow;
        let out_sz = unit.out_c * spatial;
        let m = (n * spatial) as f64;

        // ReLU and dropout gate
        let mask = &cache.mask[u];
        if apply_inv_keep {
            for (g, &keep_bit) in grad.iter_mut().zip(mask.iter()) {
                *g = if keep_bit == 1 { *g * inv_keep } else { S::ZERO };
            }
        } else {
            for (g, &keep_bit) in grad.iter_mut().zip(mask.iter()) {
                if keep_bit == 0 {
                    *g = S::ZERO;
                }
            }
        }

        // batch-norm backward (batch statistics)
        let conv_out = &cache.conv_out[u];
        let mean = &cache.mean[u];
        let var = &cache.var[u];
        let mut d_gamma = vec![S::ZERO; unit.out_c];
        let mut d_beta = vec![S::ZERO; unit.out_c];
        for c in 0..unit.out_c {
            let inv_std = S::ONE / (var[c] + S::from_f64(BN_EPSILON)).sqrt();
            let mut sum_g = S::ZERO;
            let mut sum_gx = S::ZERO;
            for b in 0..n {
                let base = b * out_sz + c * spatial;
                for i in base..base + spatial {
                    let xhat = (conv_out[i] - mean[c]) * inv_std;
                    sum_g += grad[i];
                    sum_gx += grad[i] * xhat;
                }
            }
            d_gamma[c] = sum_gx;
            d_beta[c] = sum_g;
            let scale = unit.bn_gamma[c] * inv_std;
            let mean_g = sum_g / S::from_f64(m);
            let mean_gx = sum_gx / S::from_f64(m);
            for b in 0..n {
                let base = b * out_sz + c * spatial;
                for i in base..base + spatial {
                    let xhat = (conv_out[i] - mean[c]) * inv_std;
                    grad[i] = scale * (grad[i] - mean_g - xhat * mean_gx);
                }
            }
        }

        // convolution backward
        let input: &[S] = if u == 0 { x } else { &cache.out[u - 1] };
        let in_sz = unit.in_c * h * w;
        // weight gradient: fixed-size sample chunks reduced in order
        let n_chunks = n.div_ceil(GRAD_CHUNK);
        let chunk_grads: Vec<Vec<S>> = (0..n_chunks)
            .into_par_iter()
            .map(|chunk| {
                let mut dw = vec![S::ZERO; unit.weight.len()];
                let mut scratch = ConvScratch::default();
                let mut cols_t = Vec::new();
                let lo = chunk * GRAD_CHUNK;
                let hi = (lo + GRAD_CHUNK).min(n);
                for b in lo..hi {
                    conv::conv_backward_weight_sample(
                        &input[b * in_sz..(b + 1) * in_sz],
                        &grad[b * out_sz..(b + 1) * out_sz],
                        unit.in_c,
                        unit.out_c,
                        h,
                        w,
                        unit.stride,
                        &mut scratch,
                        &mut cols_t,
                        &mut dw,
                    );
                }
                dw
            })
            .collect();
        let mut d_weight = vec![S::ZERO; unit.weight.len()];
        for dw in chunk_grads {
            for (a, b) in d_weight.iter_mut().zip(dw.iter()) {
                *a += *b;
            }
        }

        // input gradient (skip for the first unit)
        if u > 0 {
            let weight_t = conv::transpose(&unit.weight, unit.out_c, unit.in_c * 9);
            let mut dx = vec![S::ZERO; n * in_sz];
            dx.par_chunks_mut(in_sz)
                .enumerate()
                .for_each_init(ConvScratch::default, |scratch, (b, dx_s)| {
                    conv::conv_backward_input_sample(
                        &grad[b * out_sz..(b + 1) * out_sz],
                        &weight_t,
                        unit.in_c,
                        unit.out_c,
                        h,
                        w,
                        unit.stride,
                        scratch,
                        dx_s,
                    );
                });
            grad = dx;
        }
        unit_grads.push((d_weight, d_gamma, d_beta));
    }
    unit_grads.reverse();

    let mut tensors = Vec::new();
    for (dw, dg, db) in unit_grads {
        tensors.push(dw);
        tensors.push(dg);
        tensors.push(db);
    }
    tensors.push(d_dense_w);
    tensors.push(d_dense_b);
    Ok((loss, cache, Gradients { tensors }))
}

fn numeric_error<S: Scalar>(cache: &ForwardCache<S>, config: &ModelConfig) -> TafError {
    for (u, conv_out) in cache.conv_out.iter().enumerate() {
        if conv_out.iter().any(|v| !v.is_finite_scalar()) {
            let block = u / config.convs_per_block;
            let idx = u % config.convs_per_block;
            return TafError::Numeric {
                layer: format!("block{block}/conv{idx}"),
                msg: "non-finite activation".into(),
            };
        }
    }
    TafError::Numeric {
        layer: "dense".into(),
        msg: "non-finite loss".into(),
    }
}

/// Adam hyperparameters; the optimizer itself is standard bias-corrected
/// Adam.
#[derive(Debug, Clone, Copy)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

pub struct AdamState<S> {
    pub m: Vec<Vec<S>>,
    pub v: Vec<Vec<S>>,
    pub step: u64,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(params: &ModelParams<S>) -> Self {
        let shapes: Vec<usize> = params.trainable().iter().map(|t| t.len()).collect();
        AdamState {
            m: shapes.iter().map(|&l| vec![S::ZERO; l]).collect(),
            v: shapes.iter().map(|&l| vec![S::ZERO; l]).collect(),
            step: 0,
        }
    }
}

/// Bias-corrected Adam update for one tensor at step `t` (1-based).
pub fn adam_update_tensor<S: Scalar>(
    theta: &mut [S],
    g: &[S],
    m: &mut [S],
    v: &mut [S],
    t: u64,
    hp: &AdamHyper,
) {
    assert_eq!(theta.len(), g.len());
    let b1 = S::from_f64(hp.beta1);
    let b2 = S::from_f64(hp.beta2);
    let one_m_b1 = S::from_f64(1.0 - hp.beta1);
    let one_m_b2 = S::from_f64(1.0 - hp.beta2);
    let corr1 = S::from_f64(1.0 - hp.beta1.powi(t as i32));
    let corr2 = S::from_f64(1.0 - hp.beta2.powi(t as i32));
    let lr = S::from_f64(hp.lr);
    let eps = S::from_f64(hp.epsilon);
    for i in 0..theta.len() {
        m[i] = b1 * m[i] + one_m_b1 * g[i];
        v[i] = b2 * v[i] + one_m_b2 * g[i] * g[i];
        let m_hat = m[i] / corr1;
        let v_hat = v[i] / corr2;
        theta[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// One Adam update over every trainable tensor.
pub fn adam_step<S: Scalar>(
    params: &mut ModelParams<S>,
    grads: &Gradients<S>,
    state: &mut AdamState<S>,
    hp: &AdamHyper,
) {
    state.step += 1;
    let t = state.step;
    for ((theta, g), (m, v)) in params
        .trainable_mut()
        .into_iter()
        .zip(grads.tensors.iter())
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        adam_update_tensor(theta.as_mut_slice(), g, m, v, t, hp);
    }
}

/// Rank of the true label among the logits: the number of classes with a
/// strictly larger logit plus equal-logit classes at a lower index. Top-1 is
/// rank 0; top-5 is rank < 5.
pub fn label_rank<S: Scalar>(logits: &[S], label: usize) -> usize {
    let target = logits[label];
    let mut rank = 0;
    for (c, &v) in logits.iter().enumerate() {
        if v > target || (v == target && c < label) {
            rank += 1;
        }
    }
    rank
}

/// One labelled feature tensor, flattened channel-major.
#[derive(Debug, Clone)]
pub struct Sample {
    pub data: Vec<f32>,
    pub label: usize,
}

/// Top-1 and top-5 accuracy over a dataset, eval mode.
pub fn evaluate(
    params: &ModelParams<f32>,
    config: &ModelConfig,
    samples: &[Sample],
    batch_size: usize,
) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(TafError::Data("evaluation split is empty".into()));
    }
    let in_sz = config.input_channels * config.input_height * config.input_width;
    let mut top1 = 0usize;
    let mut top5 = 0usize;
    for batch in samples.chunks(batch_size.max(1)) {
        let mut x = Vec::with_capacity(batch.len() * in_sz);
        for s in batch {
            assert_eq!(s.data.len(), in_sz, "sample shape mismatch");
            x.extend_from_slice(&s.data);
        }
        let logits = forward_eval(params, config, &x, batch.len());
        for (b, s) in batch.iter().enumerate() {
            let rank = label_rank(
                &logits[b * config.num_classes..(b + 1) * config.num_classes],
                s.label,
            );
            if rank == 0 {
                top1 += 1;
            }
            if rank < 5 {
                top5 += 1;
            }
        }
    }
    Ok((
        top1 as f64 / samples.len() as f64,
        top5 as f64 / samples.len() as f64,
    ))
}

#[derive(Debug, Clone)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub val_top5: f64,
}

impl EpochStats {
    pub fn report_line(&self) -> String {
        format!(
            "{} {:.6} {:.6} {:.6} {:.6}",
            self.epoch, self.loss, self.train_acc, self.val_acc, self.val_top5
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub wall_secs: f64,
    pub params_checksum: u32,
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub epochs: usize,
    pub adam: AdamHyper,
    pub batch_size: usize,
    pub seed: u64,
    pub flip_augment: bool,
    /// Stop once validation accuracy and top-5 both reach these levels.
    pub early_stop: Option<(f64, f64)>,
    pub verbose: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            epochs: 30,
            adam: AdamHyper::default(),
            batch_size: 32,
            seed: 1,
            flip_augment: true,
            early_stop: None,
            verbose: false,
        }
    }
}

/// CRC32 of every parameter tensor (trainable plus running statistics) in
/// serialization order, as little-endian f32 bytes.
pub fn params_checksum(params: &ModelParams<f32>) -> u32 {
    let mut hasher = crc32fast::Hasher::new();
    let mut feed = |t: &Vec<f32>| {
        for &v in t {
            hasher.update(&v.to_le_bytes());
        }
    };
    for u in &params.units {
        feed(&u.weight);
        feed(&u.bn_gamma);
        feed(&u.bn_beta);
        feed(&u.run_mean);
        feed(&u.run_var);
    }
    feed(&params.dense_w);
    feed(&params.dense_b);
    hasher.finalize()
}

/// Train from scratch: seeded shuffling into batches of `batch_size`,
/// random horizontal flips, batch-norm running-stat updates, Adam steps,
/// per-epoch validation. Deterministic for fixed seeds.
pub fn train(
    train_set: &[Sample],
    val_set: &[Sample],
    config: &ModelConfig,
    opts: &TrainOptions,
) -> Result<(ModelParams<f32>, TrainReport)> {
    config.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(TafError::Data(
            "training and validation splits must be non-empty".into(),
        ));
    }
    let in_sz = config.input_channels * config.input_height * config.input_width;
    for s in train_set.iter().chain(val_set.iter()) {
        if s.data.len() != in_sz {
            return Err(TafError::Shape(format!(
                "sample has {} values, model expects {in_sz}",
                s.data.len()
            )));
        }
        if s.label >= config.num_classes {
            return Err(TafError::Data(format!(
                "label {} out of range for {} classes",
                s.label, config.num_classes
            )));
        }
    }

    let started = std::time::Instant::now();
    let mut params: ModelParams<f32> = xavier_init(config)?;
    let mut adam = AdamState::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut report = TrainReport {
        epochs: Vec::new(),
        wall_secs: 0.0,
        params_checksum: 0,
    };

    let mut x = vec![0.0f32; opts.batch_size * in_sz];
    let mut flipped = vec![0.0f32; in_sz];
    for epoch in 0..opts.epochs {
        // Fisher-Yates with the run's generator
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        let mut loss_sum = 0.0f64;
        let mut batches = 0usize;
        let mut train_hits = 0usize;
        for chunk in order.chunks(opts.batch_size) {
            let n = chunk.len();
            let mut labels = Vec::with_capacity(n);
            for (b, &idx) in chunk.iter().enumerate() {
                let s = &train_set[idx];
                let dst = &mut x[b * in_sz..(b + 1) * in_sz];
                if opts.flip_augment && rng.random_bool(0.5) {
                    crate::tensor::flip_horizontal_into(
                        &s.data,
                        &mut flipped,
                        config.input_channels,
                        config.input_height,
                        config.input_width,
                    );
                    dst.copy_from_slice(&flipped);
                } else {
                    dst.copy_from_slice(&s.data);
                }
                labels.push(s.label);
            }
            let (loss, cache, grads) =
                loss_and_backward(&params, config, &x[..n * in_sz], n, &labels, &mut rng)?;
            update_running_stats(&mut params, &cache);
            adam_step(&mut params, &grads, &mut adam, &opts.adam);
            loss_sum += loss as f64;
            batches += 1;
            for (b, &label) in labels.iter().enumerate() {
                let row = &cache.logits[b * config.num_classes..(b + 1) * config.num_classes];
                if label_rank(row, label) == 0 {
                    train_hits += 1;
                }
            }
        }
        let (val_acc, val_top5) = evaluate(&params, config, val_set, opts.batch_size)?;
        let stats = EpochStats {
            epoch,
            loss: loss_sum / batches as f64,
            train_acc: train_hits as f64 / train_set.len() as f64,
            val_acc,
            val_top5,
        };
        if opts.verbose {
            eprintln!("{}", stats.report_line());
        }
        report.epochs.push(stats);
        if let Some((acc, top5)) = opts.early_stop {
            if val_acc >= acc && val_top5 >= top5 {
                break;
            }
        }
    }
    report.wall_secs = started.elapsed().as_secs_f64();
    report.params_checksum = params_checksum(&params);
    Ok((params, report))
}

#[cfg(test)]
mod tests;
