use super::checkpoint::{read_checkpoint, write_checkpoint};
use super::gradcheck::gradient_check;
use super::*;

fn tiny_config() -> ModelConfig {
    ModelConfig {
        blocks: 1,
        convs_per_block: 1,
        initial_filters: 2,
        dropout_p: 0.0,
        num_classes: 2,
        input_channels: 1,
        input_height: 4,
        input_width: 4,
        seed: 7,
    }
}

#[test]
fn spatial_dims_after_two_blocks() {
    let cfg = ModelConfig::with_input(174, 77, 64, 116);
    assert_eq!(cfg.final_spatial(), (16, 29));
    assert_eq!(cfg.feature_dim(), 256);
    assert_eq!(cfg.conv_specs().len(), 6);
    assert_eq!(
        cfg.conv_specs()[0..4],
        [(77, 128, 2), (128, 128, 1), (128, 128, 1), (128, 256, 2)]
    );
}

#[test]
fn param_count_formula_matches_tensors() {
    for cfg in [
        ModelConfig::with_input(10, 77, 64, 116),
        ModelConfig {
            blocks: 3,
            convs_per_block: 2,
            initial_filters: 16,
            ..ModelConfig::with_input(5, 11, 32, 48)
        },
    ] {
        let params: ModelParams<f32> = xavier_init(&cfg).unwrap();
        let total: usize = params.trainable().iter().map(|t| t.len()).sum();
        assert_eq!(total, cfg.param_count());
    }
}

#[test]
fn xavier_is_seed_deterministic_with_unit_bn_scale() {
    let cfg = ModelConfig {
        initial_filters: 8,
        ..ModelConfig::with_input(3, 4, 8, 8)
    };
    let a: ModelParams<f32> = xavier_init(&cfg).unwrap();
    let b: ModelParams<f32> = xavier_init(&cfg).unwrap();
    assert_eq!(a, b);
    for u in &a.units {
        assert!(u.bn_gamma.iter().all(|&g| g == 1.0));
        assert!(u.bn_beta.iter().all(|&g| g == 0.0));
    }
}

#[test]
fn xavier_variance_matches_fan_formula() {
    // second conv of block 1 in the default net: 3x3x128x128
    let cfg = ModelConfig::with_input(10, 77, 64, 116);
    let params: ModelParams<f64> = xavier_init(&cfg).unwrap();
    let w = &params.units[1].weight;
    assert_eq!(w.len(), 128 * 128 * 9);
    let mean: f64 = w.iter().sum::<f64>() / w.len() as f64;
    let var: f64 = w.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / w.len() as f64;
    let fan = (128 * 9 + 128 * 9) as f64;
    let expected = 2.0 / fan;
    assert!(
        (var - expected).abs() / expected < 0.10,
        "var {var:.3e} vs {expected:.3e}"
    );
}

#[test]
fn zero_input_gives_uniform_softmax() {
    let cfg = ModelConfig {
        initial_filters: 4,
        num_classes: 5,
        ..ModelConfig::with_input(5, 2, 6, 6)
    };
    let params: ModelParams<f32> = xavier_init(&cfg).unwrap();
    let x = vec![0.0f32; 2 * 2 * 6 * 6];
    let logits = forward_eval(&params, &cfg, &x, 2);
    for row in logits.chunks(5) {
        for &v in row {
            assert!((v - row[0]).abs() < 1e-6, "logits not uniform: {row:?}");
        }
    }
    let loss = softmax_cross_entropy(&logits, &[0, 3], 5);
    assert!((loss - (5.0f32).ln()).abs() < 1e-5);
}

#[test]
fn eval_logits_independent_of_batch_company() {
    let cfg = ModelConfig {
        initial_filters: 4,
        dropout_p: 0.25,
        ..ModelConfig::with_input(3, 2, 6, 8)
    };
    let params: ModelParams<f32> = xavier_init(&cfg).unwrap();
    let in_sz = 2 * 6 * 8;
    let sample: Vec<f32> = (0..in_sz).map(|i| (i as f32 * 0.37).sin()).collect();
    let mut batch = sample.clone();
    batch.extend((0..in_sz).map(|i| (i as f32 * 0.11).cos()));
    batch.extend((0..in_sz).map(|i| (i as f32 * 0.71).sin()));
    let solo = forward_eval(&params, &cfg, &sample, 1);
    let grouped = forward_eval(&params, &cfg, &batch, 3);
    assert_eq!(&grouped[..3], &solo[..]);
    // repeated calls bit-identical
    assert_eq!(forward_eval(&params, &cfg, &batch, 3), grouped);
}

/// Hand-rolled scalar computation of the tiny net, independent of the
/// im2col/GEMM path: conv (stride 2, same padding) -> batch norm over the
/// batch -> ReLU -> global average pool -> dense.
#[test]
fn tiny_net_matches_hand_rolled_forward() {
    let cfg = tiny_config();
    let mut params: ModelParams<f64> = xavier_init(&cfg).unwrap();
    // make batch norm do nontrivial work
    params.units[0].bn_gamma = vec![1.3, 0.8];
    params.units[0].bn_beta = vec![0.1, -0.2];
    let n = 2;
    let x: Vec<f64> = (0..n * 16).map(|i| ((i * 7 % 13) as f64 - 6.0) * 0.21).collect();
    let labels = [0usize, 1];

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let cache = forward_train(&params, &cfg, &x, n, &mut rng);

    // reference: 4x4 stride-2 same padding -> out 2x2, leading pad 0
    let w = &params.units[0].weight;
    let mut conv = vec![0.0f64; n * 2 * 4];
    for b in 0..n {
        for o in 0..2 {
            for oy in 0..2 {
                for ox in 0..2 {
                    let mut acc = 0.0;
                    for kr in 0..3 {
                        for kc in 0..3 {
                            let iy = oy * 2 + kr;
                            let ix = ox * 2 + kc;
                            if iy < 4 && ix < 4 {
                                acc += x[b * 16 + iy * 4 + ix] * w[o * 9 + kr * 3 + kc];
                            }
                        }
                    }
                    conv[b * 8 + o * 4 + oy * 2 + ox] = acc;
                }
            }
        }
    }
    let mut logits_ref = vec![0.0f64; n * 2];
    let mut pooled = vec![0.0f64; n * 2];
    for o in 0..2 {
        let vals: Vec<f64> = (0..n)
            .flat_map(|b| conv[b * 8 + o * 4..b * 8 + o * 4 + 4].to_vec())
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        for b in 0..n {
            let mut sum = 0.0;
            for i in 0..4 {
                let xhat = (conv[b * 8 + o * 4 + i] - mean) / (var + BN_EPSILON).sqrt();
                let y = params.units[0].bn_gamma[o] * xhat + params.units[0].bn_beta[o];
                sum += y.max(0.0);
            }
            pooled[b * 2 + o] = sum / 4.0;
        }
    }
    for b in 0..n {
        for c in 0..2 {
            logits_ref[b * 2 + c] = params.dense_b[c]
                + pooled[b * 2] * params.dense_w[c]
                + pooled[b * 2 + 1] * params.dense_w[2 + c];
        }
    }
    for (a, r) in cache.logits.iter().zip(logits_ref.iter()) {
        assert!((a - r).abs() < 1e-12, "{a} vs {r}");
    }
    let _ = labels;
}

#[test]
fn dense_bias_gradient_is_mean_softmax_minus_onehot() {
    let cfg = ModelConfig {
        initial_filters: 4,
        dropout_p: 0.0,
        ..ModelConfig::with_input(3, 2, 6, 8)
    };
    let params: ModelParams<f64> = xavier_init(&cfg).unwrap();
    let n = 4;
    let in_sz = 2 * 6 * 8;
    let x: Vec<f64> = (0..n * in_sz).map(|i| ((i % 17) as f64 - 8.0) * 0.1).collect();
    let labels = [0usize, 2, 1, 2];
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let (_, cache, grads) =
        loss_and_backward(&params, &cfg, &x, n, &labels, &mut rng).unwrap();
    let db = grads.tensors.last().unwrap();
    let mut expected = vec![0.0f64; 3];
    for (b, &label) in labels.iter().enumerate() {
        let row = &cache.logits[b * 3..(b + 1) * 3];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = row.iter().map(|&v| (v - max).exp()).sum();
        for c in 0..3 {
            let p = (row[c] - max).exp() / denom;
            expected[c] += (p - if c == label { 1.0 } else { 0.0 }) / n as f64;
        }
    }
    for (a, e) in db.iter().zip(expected.iter()) {
        assert!((a - e).abs() < 1e-12);
    }
}

#[test]
fn adam_zero_gradient_keeps_parameters() {
    let mut theta = vec![0.5f64, -1.5];
    let g = vec![0.0f64; 2];
    let mut m = vec![0.0f64; 2];
    let mut v = vec![0.0f64; 2];
    adam_update_tensor(&mut theta, &g, &mut m, &mut v, 1, &AdamHyper::default());
    assert_eq!(theta, vec![0.5, -1.5]);
}

#[test]
fn adam_first_step_is_signed_learning_rate() {
    let hp = AdamHyper::default();
    let mut theta = vec![1.0f64, 1.0];
    let g = vec![0.3f64, -7.0];
    let mut m = vec![0.0f64; 2];
    let mut v = vec![0.0f64; 2];
    adam_update_tensor(&mut theta, &g, &mut m, &mut v, 1, &hp);
    // bias-corrected first step: lr * g / (|g| + eps') ~= lr * sign(g)
    assert!((theta[0] - (1.0 - hp.lr)).abs() < 1e-6);
    assert!((theta[1] - (1.0 + hp.lr)).abs() < 1e-6);
}

#[test]
fn adam_converges_on_quadratic() {
    // f(x, y) = 2 (x - 3)^2 + (y + 1)^2, minimizer (3, -1)
    let hp = AdamHyper {
        lr: 0.1,
        ..AdamHyper::default()
    };
    let mut theta = vec![0.0f64, 0.0];
    let mut m = vec![0.0f64; 2];
    let mut v = vec![0.0f64; 2];
    for t in 1..=200 {
        let g = vec![4.0 * (theta[0] - 3.0), 2.0 * (theta[1] + 1.0)];
        adam_update_tensor(&mut theta, &g, &mut m, &mut v, t, &hp);
    }
    assert!((theta[0] - 3.0).abs() < 1e-3, "x = {}", theta[0]);
    assert!((theta[1] + 1.0).abs() < 1e-3, "y = {}", theta[1]);
}

#[test]
fn label_rank_matches_sorting_oracle() {
    use rand::Rng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let k = rng.random_range(2..20);
        let logits: Vec<f32> = (0..k).map(|_| rng.random_range(-3.0..3.0)).collect();
        let label = rng.random_range(0..k);
        // oracle: stable sort of (logit desc, index asc)
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| logits[b].partial_cmp(&logits[a]).unwrap().then(a.cmp(&b)));
        let expected = order.iter().position(|&i| i == label).unwrap();
        assert_eq!(label_rank(&logits, label), expected);
    }
}

#[test]
fn uniform_logits_top5_counts_first_five_labels() {
    let logits = vec![0.0f32; 174];
    let mut hits = 0;
    for label in 0..174 {
        if label_rank(&logits, label) < 5 {
            hits += 1;
        }
    }
    assert_eq!(hits, 5); // ties broken by lower class index
}

#[test]
fn perfect_logits_score_one() {
    let cfg = ModelConfig {
        initial_filters: 4,
        ..ModelConfig::with_input(3, 1, 4, 4)
    };
    let _ = cfg;
    let samples = [
        (vec![5.0f32, 0.0, 0.0], 0usize),
        (vec![0.0, 5.0, 0.0], 1),
        (vec![0.0, 0.0, 5.0], 2),
    ];
    for (logits, label) in samples {
        assert_eq!(label_rank(&logits, label), 0);
    }
}

fn toy_dataset() -> (Vec<Sample>, ModelConfig) {
    // 2 classes x 12 samples; class k has channel k active in a
    // class-specific corner pattern
    let (c, h, w) = (2usize, 6usize, 8usize);
    let mut samples = Vec::new();
    for k in 0..2usize {
        for r in 0..12usize {
            let mut data = vec![0.0f32; c * h * w];
            for i in 0..h * w / 2 {
                let wobble = ((r * 31 + i * 7) % 10) as f32 * 0.02;
                data[k * h * w + i + (r % 3)] = 0.8 + wobble;
            }
            samples.push(Sample { data, label: k });
        }
    }
    let cfg = ModelConfig {
        blocks: 1,
        convs_per_block: 1,
        initial_filters: 8,
        dropout_p: 0.1,
        num_classes: 2,
        input_channels: c,
        input_height: h,
        input_width: w,
        seed: 5,
    };
    (samples, cfg)
}

#[test]
fn training_fits_linearly_separable_toy_set() {
    let (samples, cfg) = toy_dataset();
    let opts = TrainOptions {
        epochs: 40,
        adam: AdamHyper {
            lr: 5e-3,
            ..AdamHyper::default()
        },
        batch_size: 8,
        seed: 2,
        flip_augment: false,
        early_stop: Some((1.0, 1.0)),
        verbose: false,
    };
    let (params, report) = train(&samples, &samples, &cfg, &opts).unwrap();
    let last = report.epochs.last().unwrap();
    assert_eq!(last.val_acc, 1.0, "report: {:?}", last);
    assert!(last.val_top5 >= last.val_acc); // top-5 dominates top-1
    let (train_acc, _) = evaluate(&params, &cfg, &samples, 8).unwrap();
    assert_eq!(train_acc, 1.0);
}

#[test]
fn training_is_bit_deterministic_per_seed() {
    let (samples, cfg) = toy_dataset();
    let opts = TrainOptions {
        epochs: 3,
        batch_size: 8,
        seed: 9,
        flip_augment: true,
        early_stop: None,
        ..TrainOptions::default()
    };
    let (_, a) = train(&samples, &samples, &cfg, &opts).unwrap();
    let (_, b) = train(&samples, &samples, &cfg, &opts).unwrap();
    assert_eq!(a.params_checksum, b.params_checksum);
    for (ea, eb) in a.epochs.iter().zip(b.epochs.iter()) {
        assert_eq!(ea.report_line(), eb.report_line());
    }
}

#[test]
fn empty_split_is_a_data_error() {
    let (samples, cfg) = toy_dataset();
    let err = train(&[], &samples, &cfg, &TrainOptions::default()).unwrap_err();
    assert!(matches!(err, crate::TafError::Data(_)));
}

#[test]
fn gradient_check_micro_config_passes() {
    let cfg = ModelConfig {
        blocks: 1,
        convs_per_block: 1,
        initial_filters: 4,
        dropout_p: 0.25,
        num_classes: 3,
        input_channels: 2,
        input_height: 6,
        input_width: 8,
        seed: 13,
    };
    let report = gradient_check(&cfg, 2, 1e-3, 17).unwrap();
    assert_eq!(report.params_checked, cfg.param_count());
    assert!(
        report.max_rel_error < 1e-4,
        "max rel error {:.3e} at {}[{}]",
        report.max_rel_error,
        report.worst_tensor,
        report.worst_index
    );
}

#[test]
fn checkpoint_round_trips_and_detects_corruption() {
    let (samples, cfg) = toy_dataset();
    let opts = TrainOptions {
        epochs: 1,
        batch_size: 8,
        ..TrainOptions::default()
    };
    let (params, _) = train(&samples, &samples, &cfg, &opts).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.tafm");
    write_checkpoint(&params, &cfg, &path).unwrap();
    let (back, cfg_back) = read_checkpoint(&path).unwrap();
    assert_eq!(cfg_back, cfg);
    assert_eq!(back, params);
    assert_eq!(params_checksum(&back), params_checksum(&params));

    // flip one payload byte: CRC must catch it
    let mut bytes = std::fs::read(&path).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    std::fs::write(&path, &bytes).unwrap();
    assert!(read_checkpoint(&path).is_err());
}
