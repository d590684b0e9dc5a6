//! Central-finite-difference verification of the backward pass, run in f64.
//! This gate must pass before any training run is trusted.

use super::scalar::Scalar;
use super::{forward_train, loss_and_backward, softmax_cross_entropy, xavier_init, ModelConfig,
            ModelParams};
use crate::error::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_tensor: String,
    pub worst_index: usize,
    pub params_checked: usize,
}

/// Error measure: |analytic - numeric| / max(|analytic|, |numeric|, 1),
/// i.e. relative above unit magnitude and absolute below it, so vanishing
/// gradients do not blow up the ratio.
fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0)
}

fn loss_at(
    params: &ModelParams<f64>,
    config: &ModelConfig,
    x: &[f64],
    n: usize,
    labels: &[usize],
    mask_seed: u64,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(mask_seed);
    let cache = forward_train(params, config, x, n, &mut rng);
    softmax_cross_entropy(&cache.logits, labels, config.num_classes).to_f64()
}

/// Compare every parameter's backprop gradient against central finite
/// differences on a random batch. The dropout mask is frozen by reseeding
/// the mask generator identically for every loss evaluation.
pub fn gradient_check(
    config: &ModelConfig,
    batch: usize,
    epsilon: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    config.validate()?;
    let mut params: ModelParams<f64> = xavier_init(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let in_sz = config.input_channels * config.input_height * config.input_width;
    let x: Vec<f64> = (0..batch * in_sz)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let labels: Vec<usize> = (0..batch)
        .map(|_| rng.random_range(0..config.num_classes))
        .collect();
    let mask_seed = seed ^ 0x6d61_736b;

    let mut mask_rng = ChaCha8Rng::seed_from_u64(mask_seed);
    let (_, _, grads) = loss_and_backward(&params, config, &x, batch, &labels, &mut mask_rng)?;
    let names = ModelParams::<f64>::trainable_names(config);

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_tensor: String::new(),
        worst_index: 0,
        params_checked: 0,
    };
    let n_tensors = grads.tensors.len();
    for ti in 0..n_tensors {
        let len = grads.tensors[ti].len();
        for i in 0..len {
            let original = params.trainable_mut()[ti][i];
            params.trainable_mut()[ti][i] = original + epsilon;
            let plus = loss_at(&params, config, &x, batch, &labels, mask_seed);
            params.trainable_mut()[ti][i] = original - epsilon;
            let minus = loss_at(&params, config, &x, batch, &labels, mask_seed);
            params.trainable_mut()[ti][i] = original;
            let numeric = (plus - minus) / (2.0 * epsilon);
            let analytic = grads.tensors[ti][i];
            let err = rel_error(analytic, numeric);
            report.params_checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_tensor = names[ti].clone();
                report.worst_index = i;
            }
        }
    }
    Ok(report)
}
