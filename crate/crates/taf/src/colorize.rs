//! Temporal accumulation of heatmap stacks into feature tensors.
//!
//! Two colorization schemes are implemented. The baseline spreads each frame
//! over `C` channels with piecewise-linear hat weights. The hue scheme
//! renders each frame as an HSV color (hue = temporal segment, saturation =
//! position inside the segment, value = heatmap strength), converts to RGB
//! per frame and accumulates the three channels. Both emit, per joint, the
//! raw accumulations U, their intensity sum I, and per-pixel-normalized
//! channels N.

use crate::error::{Result, TafError};
use crate::grid::Grid;
use crate::heatmap::HeatmapStack;
use crate::hsv::hsv_to_rgb;
use crate::skeleton::NUM_CHANNELS;
use crate::tensor::TafTensor;

/// Short per-channel-group names, in fixed joint order, background last.
pub const JOINT_TAGS: [&str; NUM_CHANNELS] = [
    "lua", "lel", "lwr", "lht", "lth", "rua", "rel", "rwr", "rht", "rth", "bg",
];

/// Guard for the per-pixel normalization denominator.
pub const NORM_EPSILON: f32 = 1e-6;

/// Lowest saturation assigned to the first frame of a temporal segment, so
/// segment starts keep their hue instead of collapsing to gray.
pub const SATURATION_MIN: f64 = 0.25;

/// How a video is carved into temporal units for colorization.
#[derive(Debug, Clone, PartialEq)]
pub enum TemporalScheme {
    /// `C` equal-length consecutive frame groups.
    Linear(usize),
    /// Segments bounded by detected keyframes (empty list = one segment).
    Subunit(Vec<usize>),
}

/// Hat-function weights spreading frame `t` of `T` over `C` channels.
/// Weights are non-negative and sum to one for every `t`.
pub fn potion_weights(t: usize, t_len: usize, channels: usize) -> Result<Vec<f64>> {
    if t_len < 2 {
        return Err(TafError::DegenerateInput(format!(
            "need at least 2 frames, got {t_len}"
        )));
    }
    if channels < 2 {
        return Err(TafError::Parameter(format!(
            "channel count must be >= 2, got {channels}"
        )));
    }
    if t >= t_len {
        return Err(TafError::Parameter(format!(
            "frame {t} out of range 0..{t_len}"
        )));
    }
    let x = t as f64 / (t_len - 1) as f64 * (channels - 1) as f64;
    Ok((0..channels)
        .map(|c| (1.0 - (x - c as f64).abs()).max(0.0))
        .collect())
}

/// Hue (in [0, 180)) for temporal unit `n` of a scheme with `k` keyframes:
/// `n * 180 / (k + 1)`, wrapped. The linear scheme passes its group count as
/// `k`, giving `n * 180 / (C + 1)` by the same construction. Valid
/// `n` is 1..=k+1 (one unit per segment between keyframes).
pub fn hue_for(n: usize, k: usize) -> Result<f64> {
    if n == 0 || n > k + 1 {
        return Err(TafError::Parameter(format!(
            "segment index {n} out of range 1..={}",
            k + 1
        )));
    }
    Ok((n as f64 * 180.0 / (k + 1) as f64).rem_euclid(180.0))
}

/// Half-open frame intervals for a scheme over a `t_len`-frame video,
/// paired with the hue assigned to each.
fn scheme_segments(scheme: &TemporalScheme, t_len: usize) -> Result<Vec<(usize, usize, f64)>> {
    match scheme {
        TemporalScheme::Linear(c) => {
            let c = *c;
            if c < 2 {
                return Err(TafError::Parameter(format!(
                    "linear scheme needs C >= 2, got {c}"
                )));
            }
            if t_len < c {
                return Err(TafError::Segmentation(format!(
                    "cannot split {t_len} frames into {c} non-empty groups"
                )));
            }
            (0..c)
                .map(|n| {
                    let a = n * t_len / c;
                    let b = (n + 1) * t_len / c;
                    Ok((a, b, hue_for(n + 1, c)?))
                })
                .collect()
        }
        TemporalScheme::Subunit(keyframes) => {
            validate_keyframes(keyframes, t_len)?;
            let k = keyframes.len();
            let mut bounds = Vec::with_capacity(k + 2);
            bounds.push(0);
            bounds.extend_from_slice(keyframes);
            bounds.push(t_len);
            bounds
                .windows(2)
                .enumerate()
                .map(|(n, w)| {
                    if w[1] - w[0] < 2 {
                        return Err(TafError::Segmentation(format!(
                            "empty segment [{}, {}) between adjacent keyframes",
                            w[0], w[1]
                        )));
                    }
                    Ok((w[0], w[1], hue_for(n + 1, k)?))
                })
                .collect()
        }
    }
}

fn validate_keyframes(keyframes: &[usize], t_len: usize) -> Result<()> {
    for w in keyframes.windows(2) {
        if w[1] <= w[0] {
            return Err(TafError::Segmentation(format!(
                "keyframes not strictly increasing: {} after {}",
                w[1], w[0]
            )));
        }
    }
    if let (Some(&first), Some(&last)) = (keyframes.first(), keyframes.last()) {
        if first == 0 || last >= t_len {
            return Err(TafError::Segmentation(format!(
                "keyframes must lie strictly inside (0, {t_len})"
            )));
        }
    }
    Ok(())
}

fn check_stack(stack: &HeatmapStack) -> Result<(usize, usize)> {
    if stack.len() < 2 {
        return Err(TafError::DegenerateInput(format!(
            "need at least 2 frames, got {}",
            stack.len()
        )));
    }
    let g = &stack.frames[0].channels[0];
    Ok((g.height, g.width))
}

fn push_f64_channel(tensor: &mut TafTensor, tag: String, values: &[f64]) {
    debug_assert_eq!(values.len(), tensor.height * tensor.width);
    tensor.tags.push(tag);
    tensor.data.extend(values.iter().map(|&v| v as f32));
}

/// Baseline accumulation: per joint, `C` hat-weighted sums U, intensity
/// I = sum of U, and N = U / per-pixel max over the joint's U channels.
/// Channel order per joint is [U_1..U_C, I, N_1..N_C]. Accumulation runs in
/// f64 and rounds once into the f32 tensor.
pub fn accumulate_baseline(stack: &HeatmapStack, channels: usize) -> Result<TafTensor> {
    let (h, w) = check_stack(stack)?;
    let t_len = stack.len();
    let weights: Vec<Vec<f64>> = (0..t_len)
        .map(|t| potion_weights(t, t_len, channels))
        .collect::<Result<_>>()?;
    let npix = h * w;
    let mut tensor = TafTensor::new(h, w);
    for (j, joint_tag) in JOINT_TAGS.iter().enumerate() {
        let mut u = vec![vec![0.0f64; npix]; channels];
        for (t, frame) in stack.frames.iter().enumerate() {
            let src = &frame.channels[j];
            for (c, acc) in u.iter_mut().enumerate() {
                let wc = weights[t][c];
                if wc == 0.0 {
                    continue;
                }
                for (dst, &s) in acc.iter_mut().zip(src.data.iter()) {
                    *dst += wc * s as f64;
                }
            }
        }
        let mut intensity = vec![0.0f64; npix];
        for acc in &u {
            for (i, &v) in acc.iter().enumerate() {
                intensity[i] += v;
            }
        }
        let mut n = vec![vec![0.0f64; npix]; channels];
        for p in 0..npix {
            let mut m = 0.0f64;
            for acc in &u {
                m = m.max(acc[p]);
            }
            let denom = m.max(NORM_EPSILON as f64);
            for (c, acc) in u.iter().enumerate() {
                n[c][p] = acc[p] / denom;
            }
        }
        for (c, acc) in u.iter().enumerate() {
            push_f64_channel(&mut tensor, format!("{joint_tag}/U{}", c + 1), acc);
        }
        push_f64_channel(&mut tensor, format!("{joint_tag}/I"), &intensity);
        for (c, acc) in n.iter().enumerate() {
            push_f64_channel(&mut tensor, format!("{joint_tag}/N{}", c + 1), acc);
        }
    }
    Ok(tensor)
}

/// Core of the hue scheme: accumulate RGB over the given segments, then emit
/// per-joint [U_r, U_g, U_b, I, N_r, N_g, N_b] with the given tag prefix.
fn accumulate_hue_over(
    stack: &HeatmapStack,
    segments: &[(usize, usize, f64)],
    tag_prefix: &str,
) -> TafTensor {
    let g0 = &stack.frames[0].channels[0];
    let (h, w) = (g0.height, g0.width);
    let npix = h * w;
    let mut tensor = TafTensor::new(h, w);
    // Per-frame unit RGB; value scales linearly, so unit color * heatmap
    // equals the per-pixel HSV conversion.
    let mut frame_rgb = vec![None; stack.len()];
    for &(a, b, hue) in segments {
        let len = b - a;
        for t in a..b {
            let pos = if len == 1 {
                1.0
            } else {
                (t - a) as f64 / (len - 1) as f64
            };
            let sat = SATURATION_MIN + (1.0 - SATURATION_MIN) * pos;
            frame_rgb[t] = Some(hsv_to_rgb(2.0 * hue, sat, 1.0));
        }
    }
    for (j, joint_tag) in JOINT_TAGS.iter().enumerate() {
        let mut u = [vec![0.0f64; npix], vec![0.0f64; npix], vec![0.0f64; npix]];
        for (t, frame) in stack.frames.iter().enumerate() {
            let Some((r, g, b)) = frame_rgb[t] else {
                continue;
            };
            let unit = [r, g, b];
            let src = &frame.channels[j];
            for (acc, &uv) in u.iter_mut().zip(unit.iter()) {
                if uv == 0.0 {
                    continue;
                }
                for (dst, &s) in acc.iter_mut().zip(src.data.iter()) {
                    *dst += uv * s as f64;
                }
            }
        }
        let mut intensity = vec![0.0f64; npix];
        for acc in &u {
            for (i, &v) in acc.iter().enumerate() {
                intensity[i] += v;
            }
        }
        let mut n = [vec![0.0f64; npix], vec![0.0f64; npix], vec![0.0f64; npix]];
        for p in 0..npix {
            let m = u[0][p].max(u[1][p]).max(u[2][p]);
            let denom = m.max(NORM_EPSILON as f64);
            for c in 0..3 {
                n[c][p] = u[c][p] / denom;
            }
        }
        for (acc, name) in u.iter().zip(["Ur", "Ug", "Ub"]) {
            push_f64_channel(&mut tensor, format!("{tag_prefix}{joint_tag}/{name}"), acc);
        }
        push_f64_channel(&mut tensor, format!("{tag_prefix}{joint_tag}/I"), &intensity);
        for (acc, name) in n.iter().zip(["Nr", "Ng", "Nb"]) {
            push_f64_channel(&mut tensor, format!("{tag_prefix}{joint_tag}/{name}"), acc);
        }
    }
    tensor
}

/// Hue-based accumulation over the whole video. Produces 7 channels per
/// joint regardless of the number of temporal units.
pub fn accumulate_hue(stack: &HeatmapStack, scheme: &TemporalScheme) -> Result<TafTensor> {
    let _ = check_stack(stack)?;
    let segments = scheme_segments(scheme, stack.len())?;
    Ok(accumulate_hue_over(stack, &segments, ""))
}

/// Sequential subunit variant: every segment is accumulated independently as
/// a single-unit gesture and the per-segment tensors are concatenated along
/// channels in segment order.
pub fn accumulate_sequential(stack: &HeatmapStack, keyframes: &[usize]) -> Result<TafTensor> {
    let (h, w) = check_stack(stack)?;
    if keyframes.is_empty() {
        return Err(TafError::Segmentation(
            "sequential accumulation needs at least one keyframe (two segments)".into(),
        ));
    }
    let segments = scheme_segments(&TemporalScheme::Subunit(keyframes.to_vec()), stack.len())?;
    let mut out = TafTensor::new(h, w);
    for (i, &(a, b, _)) in segments.iter().enumerate() {
        let single = [(a, b, hue_for(1, 0)?)];
        let block = accumulate_hue_over(stack, &single, &format!("s{i}/"));
        out.tags.extend(block.tags);
        out.data.extend(block.data);
    }
    Ok(out)
}
