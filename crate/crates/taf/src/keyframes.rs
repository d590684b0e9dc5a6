//! Dynamic-subunit boundary detection: hand-speed minima, image entropy,
//! and density-peak clustering of candidate extrema.

use crate::error::{Result, TafError};
use crate::skeleton::{JointId, Side, SkeletonSequence};
use image::GrayImage;
use std::cmp::Ordering;
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetectionMethod {
    HsHeuristic,
    EntropyDc,
    HsDc,
}

impl DetectionMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            DetectionMethod::HsHeuristic => "hs_heu",
            DetectionMethod::EntropyDc => "ent_dc",
            DetectionMethod::HsDc => "hs_dc",
        }
    }
}

impl std::str::FromStr for DetectionMethod {
    type Err = TafError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hs_heu" => Ok(DetectionMethod::HsHeuristic),
            "ent_dc" => Ok(DetectionMethod::EntropyDc),
            "hs_dc" => Ok(DetectionMethod::HsDc),
            other => Err(TafError::Parameter(format!(
                "unknown keyframe method {other:?} (expected hs_heu, ent_dc or hs_dc)"
            ))),
        }
    }
}

/// Fixed keyframe count, or every candidate under a speed threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SelectionMode {
    FixedLength(usize),
    VariableLength(f64),
}

impl fmt::Display for SelectionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SelectionMode::FixedLength(k) => write!(f, "fl-{k}"),
            SelectionMode::VariableLength(tau) => write!(f, "vl-{tau}"),
        }
    }
}

/// Default speed threshold for variable-length selection, as a fraction of
/// the per-video maximum speed.
pub const DEFAULT_SPEED_THRESHOLD: f64 = 0.15;

/// Ordered subunit boundaries for one video.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyframeSet {
    /// Strictly increasing frame ordinals inside (0, T).
    pub indices: Vec<usize>,
    pub method: DetectionMethod,
    pub mode: SelectionMode,
}

impl KeyframeSet {
    /// Report line: `video_id method mode k1 k2 ... kK`.
    pub fn report_line(&self, video_id: &str) -> String {
        let mut line = format!("{video_id} {} {}", self.method.as_str(), self.mode);
        for &k in &self.indices {
            line.push_str(&format!(" {k}"));
        }
        line
    }
}

/// Per-frame hand speed in meters/frame, normalized to [0, 1] by the
/// per-video maximum. `stationary` flags an all-zero signal (max speed 0).
#[derive(Debug, Clone)]
pub struct SpeedSignal {
    pub values: Vec<f64>,
    pub stationary: bool,
}

fn wrist_positions(seq: &SkeletonSequence, side: Side) -> Result<Vec<[f64; 3]>> {
    let joint = JointId::hand_position(side);
    seq.frames
        .iter()
        .map(|f| {
            f.world[joint.index()].ok_or_else(|| {
                TafError::DegenerateInput(format!(
                    "missing {joint:?} at frame {}; interpolate first",
                    f.frame_index
                ))
            })
        })
        .collect()
}

fn step_lengths(positions: &[[f64; 3]]) -> Vec<f64> {
    let mut s = Vec::with_capacity(positions.len());
    s.push(0.0);
    for w in positions.windows(2) {
        let d = [w[1][0] - w[0][0], w[1][1] - w[0][1], w[1][2] - w[0][2]];
        s.push((d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt());
    }
    s
}

/// Frame-difference speed of the given hand's wrist. s(0) = 0.
pub fn hand_speed(seq: &SkeletonSequence, side: Side) -> Result<SpeedSignal> {
    if seq.len() < 2 {
        return Err(TafError::DegenerateInput(format!(
            "need at least 2 frames, got {}",
            seq.len()
        )));
    }
    let mut values = step_lengths(&wrist_positions(seq, side)?);
    let max = values.iter().cloned().fold(0.0f64, f64::max);
    if max == 0.0 {
        return Ok(SpeedSignal {
            values,
            stationary: true,
        });
    }
    for v in &mut values {
        *v /= max;
    }
    Ok(SpeedSignal {
        values,
        stationary: false,
    })
}

/// Total unnormalized path length of the hand's wrist, used to pick the
/// dominant hand.
pub fn hand_path_length(seq: &SkeletonSequence, side: Side) -> Result<f64> {
    Ok(step_lengths(&wrist_positions(seq, side)?).iter().sum())
}

/// The hand with the greater total path length; ties go to the right hand.
pub fn dominant_hand(seq: &SkeletonSequence) -> Result<Side> {
    let left = hand_path_length(seq, Side::Left)?;
    let right = hand_path_length(seq, Side::Right)?;
    Ok(if left > right { Side::Left } else { Side::Right })
}

fn local_extrema(signal: &[f64], minima: bool) -> Vec<usize> {
    let n = signal.len();
    if n < 3 {
        return Vec::new();
    }
    let better = |a: f64, b: f64| if minima { a < b } else { a > b };
    let mut out = Vec::new();
    let mut run_start = 0usize;
    for i in 1..=n {
        if i < n && signal[i] == signal[run_start] {
            continue;
        }
        let run_end = i - 1; // maximal equal run [run_start, run_end]
        let interior = run_start > 0 && run_end < n - 1;
        if interior
            && better(signal[run_start], signal[run_start - 1])
            && better(signal[run_end], signal[run_end + 1])
        {
            // plateau tie-break: midpoint, lower index on even plateaus
            out.push((run_start + run_end) / 2);
        }
        run_start = i;
    }
    out
}

/// Interior local minima; plateaus collapse to their midpoint index
/// (the lower of the two centers for even-length plateaus).
pub fn local_minima(signal: &[f64]) -> Vec<usize> {
    local_extrema(signal, true)
}

/// Interior local maxima with the same plateau rule.
pub fn local_maxima(signal: &[f64]) -> Vec<usize> {
    local_extrema(signal, false)
}

/// Candidate keyframe: frame index plus the (normalized) speed there.
#[derive(Debug, Clone, Copy)]
struct Candidate {
    frame: usize,
    speed: f64,
}

/// Heuristic hand-speed detector: minima of both hands' speed signals,
/// either the K slowest or everything under a threshold.
pub fn detect_hs_heuristic(seq: &SkeletonSequence, mode: SelectionMode) -> Result<KeyframeSet> {
    let mut by_frame: Vec<Candidate> = Vec::new();
    for side in [Side::Left, Side::Right] {
        let sig = hand_speed(seq, side)?;
        if sig.stationary {
            continue; // flat signal has no interior minima
        }
        for t in local_minima(&sig.values) {
            match by_frame.iter_mut().find(|c| c.frame == t) {
                Some(c) => c.speed = c.speed.min(sig.values[t]),
                None => by_frame.push(Candidate {
                    frame: t,
                    speed: sig.values[t],
                }),
            }
        }
    }
    let indices = match mode {
        SelectionMode::FixedLength(k) => {
            if by_frame.len() < k {
                return Err(TafError::InsufficientKeyframes(format!(
                    "{} speed minima available, {k} requested",
                    by_frame.len()
                )));
            }
            by_frame.sort_by(|a, b| {
                a.speed
                    .partial_cmp(&b.speed)
                    .unwrap_or(Ordering::Equal)
                    .then(a.frame.cmp(&b.frame))
            });
            let mut sel: Vec<usize> = by_frame[..k].iter().map(|c| c.frame).collect();
            sel.sort_unstable();
            sel
        }
        SelectionMode::VariableLength(tau) => {
            let mut sel: Vec<usize> = by_frame
                .iter()
                .filter(|c| c.speed < tau)
                .map(|c| c.frame)
                .collect();
            sel.sort_unstable();
            sel
        }
    };
    Ok(KeyframeSet {
        indices,
        method: DetectionMethod::HsHeuristic,
        mode,
    })
}

/// Shannon entropy in bits of the 256-bin intensity histogram.
pub fn frame_entropy(image: &GrayImage) -> f64 {
    let mut hist = [0u64; 256];
    for px in image.pixels() {
        hist[px.0[0] as usize] += 1;
    }
    let total = image.width() as f64 * image.height() as f64;
    let mut e = 0.0;
    for &count in &hist {
        if count > 0 {
            let p = count as f64 / total;
            e -= p * p.log2();
        }
    }
    e
}

/// Grayscale by per-pixel mean of the three channels, rounded to nearest.
pub fn rgb_to_gray(image: &image::RgbImage) -> GrayImage {
    let mut out = GrayImage::new(image.width(), image.height());
    for (x, y, px) in image.enumerate_pixels() {
        let mean = (px.0[0] as u32 + px.0[1] as u32 + px.0[2] as u32) as f64 / 3.0;
        out.put_pixel(x, y, image::Luma([mean.round() as u8]));
    }
    out
}

/// Density-peaks selection: Gaussian-kernel local density rho, distance to
/// the nearest denser point delta (the densest point takes the maximum
/// pairwise distance), ranking by gamma = rho * delta with ties broken by
/// lower index. Returns the selected indices in ascending order.
pub fn density_peak_cluster(points: &[[f64; 2]], k: usize, d_c: f64) -> Result<Vec<usize>> {
    let n = points.len();
    if k == 0 || k > n {
        return Err(TafError::Parameter(format!(
            "cannot select {k} representatives from {n} points"
        )));
    }
    if !(d_c > 0.0) {
        return Err(TafError::Parameter(format!(
            "cutoff distance must be positive, got {d_c}"
        )));
    }
    let dist = |i: usize, j: usize| {
        let dx = points[i][0] - points[j][0];
        let dy = points[i][1] - points[j][1];
        (dx * dx + dy * dy).sqrt()
    };
    let mut rho = vec![0.0f64; n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let r = dist(i, j) / d_c;
                rho[i] += (-r * r).exp();
            }
        }
    }
    let mut gamma: Vec<(f64, usize)> = (0..n)
        .map(|i| {
            let mut delta = f64::INFINITY;
            let mut has_denser = false;
            let mut max_d = 0.0f64;
            for j in 0..n {
                if j == i {
                    continue;
                }
                let d = dist(i, j);
                max_d = max_d.max(d);
                if rho[j] > rho[i] {
                    has_denser = true;
                    delta = delta.min(d);
                }
            }
            let delta = if has_denser { delta } else { max_d };
            (rho[i] * delta, i)
        })
        .collect();
    gamma.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap_or(Ordering::Equal)
            .then(a.1.cmp(&b.1))
    });
    let mut selected: Vec<usize> = gamma[..k].iter().map(|&(_, i)| i).collect();
    selected.sort_unstable();
    Ok(selected)
}

/// Cutoff heuristic following the density-peaks guidance that each point
/// should see on average about 2% of the others as neighbors. Candidate
/// sets here are small, so the average neighbor count is floored at one:
/// the cutoff is the distance at which the mean neighborhood size reaches
/// max(1, 0.02 n), i.e. the k-th smallest directed pairwise distance with
/// k = ceil(n * max(1, 0.02 n)). Floored at 1e-6.
pub fn suggest_cutoff(points: &[[f64; 2]]) -> f64 {
    let n = points.len();
    let mut dists = Vec::with_capacity(n.saturating_sub(1) * n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let dx = points[i][0] - points[j][0];
                let dy = points[i][1] - points[j][1];
                dists.push((dx * dx + dy * dy).sqrt());
            }
        }
    }
    if dists.is_empty() {
        return 1e-6;
    }
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    let target = (0.02 * n as f64).max(1.0);
    let idx = ((n as f64 * target).ceil() as usize).clamp(1, dists.len()) - 1;
    dists[idx].max(1e-6)
}

/// Entropy-based detector: per-frame entropy mapped to 2D points
/// (normalized time, normalized entropy), local minima and maxima as
/// candidates, density peaks to pick `k` of them.
pub fn detect_entropy_dc(frames: &[GrayImage], k: usize) -> Result<KeyframeSet> {
    let t_len = frames.len();
    if t_len < 3 {
        return Err(TafError::DegenerateInput(format!(
            "need at least 3 frames, got {t_len}"
        )));
    }
    let entropy: Vec<f64> = frames.iter().map(frame_entropy).collect();
    let mut extrema = local_minima(&entropy);
    extrema.extend(local_maxima(&entropy));
    extrema.sort_unstable();
    extrema.dedup();
    if extrema.len() < k {
        return Err(TafError::InsufficientKeyframes(format!(
            "{} entropy extrema available, {k} requested",
            extrema.len()
        )));
    }
    let e_min = entropy.iter().cloned().fold(f64::INFINITY, f64::min);
    let e_max = entropy.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = (e_max - e_min).max(1e-12);
    let points: Vec<[f64; 2]> = extrema
        .iter()
        .map(|&t| {
            [
                t as f64 / (t_len - 1) as f64,
                (entropy[t] - e_min) / span,
            ]
        })
        .collect();
    let selected = density_peak_cluster(&points, k, suggest_cutoff(&points))?;
    let mut indices: Vec<usize> = selected.iter().map(|&i| extrema[i]).collect();
    indices.sort_unstable();
    Ok(KeyframeSet {
        indices,
        method: DetectionMethod::EntropyDc,
        mode: SelectionMode::FixedLength(k),
    })
}

/// Hand-speed + density-peaks detector on the dominant hand. Fixed-length
/// mode clusters K+2 representatives and discards the first and last (they
/// sit in the lead-in and lead-out of the gesture); variable-length mode
/// keeps every representative below the speed threshold.
pub fn detect_hs_dc(seq: &SkeletonSequence, mode: SelectionMode) -> Result<KeyframeSet> {
    let side = dominant_hand(seq)?;
    let sig = hand_speed(seq, side)?;
    let minima = local_minima(&sig.values);
    let t_len = seq.len();
    let points: Vec<[f64; 2]> = minima
        .iter()
        .map(|&t| [t as f64 / (t_len - 1) as f64, sig.values[t]])
        .collect();
    let indices = match mode {
        SelectionMode::FixedLength(k) => {
            if minima.len() < k + 2 {
                return Err(TafError::InsufficientKeyframes(format!(
                    "{} speed minima available, need {} (K+2) for K={k}",
                    minima.len(),
                    k + 2
                )));
            }
            let selected = density_peak_cluster(&points, k + 2, suggest_cutoff(&points))?;
            let mut frames: Vec<usize> = selected.iter().map(|&i| minima[i]).collect();
            frames.sort_unstable();
            frames[1..frames.len() - 1].to_vec()
        }
        SelectionMode::VariableLength(tau) => {
            // every candidate is its own representative; keep slow ones
            minima
                .iter()
                .copied()
                .filter(|&t| sig.values[t] < tau)
                .collect()
        }
    };
    Ok(KeyframeSet {
        indices,
        method: DetectionMethod::HsDc,
        mode,
    })
}

/// Split [0, T) at the keyframes into K+1 half-open intervals.
pub fn segment(t_len: usize, keyframes: &[usize]) -> Result<Vec<(usize, usize)>> {
    let mut prev = 0usize;
    let mut out = Vec::with_capacity(keyframes.len() + 1);
    for &k in keyframes {
        if k == prev && prev != 0 {
            return Err(TafError::Segmentation(format!("duplicate keyframe {k}")));
        }
        if k <= prev || k >= t_len {
            return Err(TafError::Segmentation(format!(
                "keyframe {k} outside (max({prev}), {t_len})"
            )));
        }
        out.push((prev, k));
        prev = k;
    }
    out.push((prev, t_len));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::{SkeletonFrame, NUM_JOINTS};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn seq_with_right_wrist(track: &[[f64; 3]]) -> SkeletonSequence {
        let frames = track
            .iter()
            .enumerate()
            .map(|(t, &p)| {
                let mut world = [Some([0.1, 0.2, 2.0]); NUM_JOINTS];
                // spread other joints so projection elsewhere stays valid
                for (j, w) in world.iter_mut().enumerate() {
                    *w = Some([0.05 * j as f64, 0.02 * j as f64, 2.0]);
                }
                world[JointId::RightWrist.index()] = Some(p);
                SkeletonFrame {
                    frame_index: t,
                    world,
                    image: None,
                }
            })
            .collect();
        SkeletonSequence {
            frames,
            sign_label: 0,
            signer_id: 0,
            fps: 30.0,
        }
    }

    /// Positions along x from explicit per-frame step lengths, so plateau
    /// structure in the speed signal is exact by construction.
    fn track_from_steps(steps: &[f64]) -> Vec<[f64; 3]> {
        let mut track = vec![[0.0, 0.0, 2.0]];
        for &s in steps {
            let mut p = *track.last().unwrap();
            p[0] += s;
            track.push(p);
        }
        track
    }

    /// Strictly accelerating approach and departure around one exact hold.
    fn move_hold_move() -> (SkeletonSequence, usize) {
        let mut steps: Vec<f64> = (1..=9).map(|t| 0.004 * t as f64).collect();
        steps.extend([0.0; 5]); // speed zero at signal indices 10..=14
        steps.extend((1..=9).map(|t| 0.004 * t as f64));
        (seq_with_right_wrist(&track_from_steps(&steps)), 12)
    }

    #[test]
    fn stationary_hand_flags_zero_signal() {
        let track = vec![[0.5, 0.5, 2.0]; 8];
        let seq = seq_with_right_wrist(&track);
        let sig = hand_speed(&seq, Side::Right).unwrap();
        assert!(sig.stationary);
        assert!(sig.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_velocity_normalizes_to_one() {
        let track: Vec<[f64; 3]> = (0..10).map(|t| [0.02 * t as f64, 0.0, 2.0]).collect();
        let seq = seq_with_right_wrist(&track);
        let sig = hand_speed(&seq, Side::Right).unwrap();
        assert_eq!(sig.values[0], 0.0);
        for &v in &sig.values[1..] {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn hold_center_is_a_speed_minimum() {
        let (seq, center) = move_hold_move();
        let sig = hand_speed(&seq, Side::Right).unwrap();
        let minima = local_minima(&sig.values);
        assert!(minima.contains(&center), "minima {minima:?}");
    }

    #[test]
    fn minima_on_monotone_signal_is_empty() {
        let sig: Vec<f64> = (0..10).map(|t| t as f64).collect();
        assert!(local_minima(&sig).is_empty());
    }

    #[test]
    fn v_shape_gives_single_vertex() {
        let sig = vec![3.0, 2.0, 1.0, 2.0, 3.0];
        assert_eq!(local_minima(&sig), vec![2]);
    }

    #[test]
    fn plateau_midpoint_takes_lower_center() {
        // bottom plateau of length 4 at indices 2..=5: midpoint (2+5)/2 = 3
        let sig = vec![5.0, 4.0, 1.0, 1.0, 1.0, 1.0, 4.0, 5.0];
        assert_eq!(local_minima(&sig), vec![3]);
        // enumerate odd plateau too
        let sig3 = vec![5.0, 1.0, 1.0, 1.0, 5.0];
        assert_eq!(local_minima(&sig3), vec![2]);
        // shoulders (descends into plateau, keeps descending) are not minima
        let shoulder = vec![5.0, 3.0, 3.0, 1.0, 2.0];
        assert_eq!(local_minima(&shoulder), vec![3]);
    }

    #[test]
    fn maxima_mirror_minima() {
        let sig = vec![0.0, 2.0, 0.0, 3.0, 3.0, 0.5];
        assert_eq!(local_maxima(&sig), vec![1, 3]);
    }

    #[test]
    fn heuristic_selects_planted_holds() {
        // one hold per hand at different times, strictly varying speed
        // elsewhere so the only plateaus are the exact holds
        let mut right_steps: Vec<f64> = (1..=8).map(|t| 0.01 * t as f64).collect();
        right_steps.extend([0.0; 3]); // zero speed at indices 9..=11
        right_steps.extend((1..=8).map(|t| 0.01 * t as f64));
        let mut seq = seq_with_right_wrist(&track_from_steps(&right_steps));

        let mut left_steps: Vec<f64> = (1..=5).map(|t| 0.01 * t as f64).collect();
        left_steps.extend([0.0; 3]); // zero speed at indices 6..=8
        left_steps.extend((1..=11).map(|t| 0.01 * t as f64));
        let left_track = track_from_steps(&left_steps);
        let lw = JointId::LeftWrist.index();
        for (t, f) in seq.frames.iter_mut().enumerate() {
            let mut p = left_track[t];
            p[1] += 0.5; // keep the hands apart
            f.world[lw] = Some(p);
        }
        let ks = detect_hs_heuristic(&seq, SelectionMode::FixedLength(2)).unwrap();
        // left zero-run midpoint 7, right zero-run midpoint 10
        assert_eq!(ks.indices, vec![7, 10]);
    }

    #[test]
    fn zero_threshold_selects_nothing() {
        let (seq, _) = move_hold_move();
        let ks = detect_hs_heuristic(&seq, SelectionMode::VariableLength(0.0)).unwrap();
        assert!(ks.indices.is_empty());
    }

    #[test]
    fn heuristic_errors_when_too_few_minima() {
        let (seq, _) = move_hold_move();
        let err = detect_hs_heuristic(&seq, SelectionMode::FixedLength(10)).unwrap_err();
        assert!(matches!(err, TafError::InsufficientKeyframes(_)));
    }

    #[test]
    fn entropy_of_flat_and_binary_and_uniform_images() {
        let flat = GrayImage::from_pixel(16, 16, image::Luma([80]));
        assert_eq!(frame_entropy(&flat), 0.0);

        let mut two = GrayImage::new(16, 16);
        for (x, _y, px) in two.enumerate_pixels_mut() {
            px.0[0] = if x < 8 { 10 } else { 200 };
        }
        assert!((frame_entropy(&two) - 1.0).abs() < 1e-12);

        let mut uniform = GrayImage::new(16, 16);
        for (i, px) in uniform.pixels_mut().enumerate() {
            px.0[0] = (i % 256) as u8;
        }
        assert!((frame_entropy(&uniform) - 8.0).abs() < 1e-12);
    }

    #[test]
    fn density_peaks_exhaustive_when_k_equals_n() {
        let pts = vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let sel = density_peak_cluster(&pts, 3, 0.5).unwrap();
        assert_eq!(sel, vec![0, 1, 2]);
    }

    #[test]
    fn density_peaks_pick_one_per_cluster() {
        let mut pts = Vec::new();
        for i in 0..5 {
            pts.push([0.01 * i as f64, 0.0]);
        }
        for i in 0..5 {
            pts.push([10.0 + 0.01 * i as f64, 0.0]);
        }
        let sel = density_peak_cluster(&pts, 2, 0.05).unwrap();
        assert_eq!(sel.len(), 2);
        assert!(sel[0] < 5 && sel[1] >= 5, "one per cluster: {sel:?}");
    }

    #[test]
    fn density_peaks_rejects_bad_parameters() {
        let pts = vec![[0.0, 0.0], [1.0, 0.0]];
        assert!(density_peak_cluster(&pts, 3, 0.5).is_err());
        assert!(density_peak_cluster(&pts, 1, 0.0).is_err());
    }

    /// Brute-force reference: recompute rho, delta, gamma independently and
    /// apply the same ranking rule.
    pub(crate) fn density_reference(points: &[[f64; 2]], k: usize, d_c: f64) -> Vec<usize> {
        let n = points.len();
        let d = |i: usize, j: usize| -> f64 {
            ((points[i][0] - points[j][0]).powi(2) + (points[i][1] - points[j][1]).powi(2)).sqrt()
        };
        let rho: Vec<f64> = (0..n)
            .map(|i| {
                (0..n)
                    .filter(|&j| j != i)
                    .map(|j| (-(d(i, j) / d_c).powi(2)).exp())
                    .sum()
            })
            .collect();
        let delta: Vec<f64> = (0..n)
            .map(|i| {
                let denser: Vec<usize> = (0..n).filter(|&j| j != i && rho[j] > rho[i]).collect();
                if denser.is_empty() {
                    (0..n).filter(|&j| j != i).map(|j| d(i, j)).fold(0.0, f64::max)
                } else {
                    denser.iter().map(|&j| d(i, j)).fold(f64::INFINITY, f64::min)
                }
            })
            .collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            let ga = rho[a] * delta[a];
            let gb = rho[b] * delta[b];
            gb.partial_cmp(&ga).unwrap().then(a.cmp(&b))
        });
        let mut sel = order[..k].to_vec();
        sel.sort_unstable();
        sel
    }

    #[test]
    fn density_peaks_match_brute_force_on_random_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        for _ in 0..20 {
            let n = rng.random_range(5..20);
            let pts: Vec<[f64; 2]> = (0..n)
                .map(|_| [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)])
                .collect();
            let k = rng.random_range(1..=3.min(n));
            let d_c = suggest_cutoff(&pts);
            assert_eq!(
                density_peak_cluster(&pts, k, d_c).unwrap(),
                density_reference(&pts, k, d_c)
            );
        }
    }

    #[test]
    fn dominant_hand_prefers_the_moving_one() {
        let track: Vec<[f64; 3]> = (0..10).map(|t| [0.02 * t as f64, 0.0, 2.0]).collect();
        let mut seq = seq_with_right_wrist(&track);
        let lw = JointId::LeftWrist.index();
        for f in &mut seq.frames {
            f.world[lw] = Some([0.0, 0.5, 2.0]);
        }
        assert_eq!(dominant_hand(&seq).unwrap(), Side::Right);
    }

    #[test]
    fn hs_dc_discards_first_and_last_cluster() {
        // five holds; fixed-length K=3 should return the middle three
        let mut track = Vec::new();
        let mut pos = [0.0f64, 0.0, 2.0];
        for hold in 0..5 {
            for _ in 0..4 {
                track.push(pos);
            }
            if hold < 4 {
                for t in 1..=6 {
                    let mut p = pos;
                    p[0] += 0.04 * t as f64;
                    track.push(p);
                }
                pos[0] += 0.04 * 6.0;
            }
        }
        let seq = seq_with_right_wrist(&track);
        let ks = detect_hs_dc(&seq, SelectionMode::FixedLength(3)).unwrap();
        assert_eq!(ks.indices.len(), 3);
        let sig = hand_speed(&seq, Side::Right).unwrap();
        let all = local_minima(&sig.values);
        let reference = density_reference(
            &all.iter()
                .map(|&t| [t as f64 / (track.len() - 1) as f64, sig.values[t]])
                .collect::<Vec<_>>(),
            5,
            suggest_cutoff(
                &all.iter()
                    .map(|&t| [t as f64 / (track.len() - 1) as f64, sig.values[t]])
                    .collect::<Vec<_>>(),
            ),
        );
        let mut frames: Vec<usize> = reference.iter().map(|&i| all[i]).collect();
        frames.sort_unstable();
        assert_eq!(ks.indices, frames[1..4].to_vec());
    }

    #[test]
    fn hs_dc_errors_without_enough_minima() {
        let (seq, _) = move_hold_move();
        let err = detect_hs_dc(&seq, SelectionMode::FixedLength(4)).unwrap_err();
        assert!(matches!(err, TafError::InsufficientKeyframes(_)));
    }

    #[test]
    fn hs_dc_is_scale_invariant() {
        // three holds so K=1 has its K+2 candidates
        let mut steps = Vec::new();
        for _ in 0..3 {
            steps.extend((1..=5).map(|t| 0.005 * t as f64));
            steps.extend([0.0; 3]);
        }
        steps.extend((1..=5).map(|t| 0.005 * t as f64));
        let seq = seq_with_right_wrist(&track_from_steps(&steps));
        let mut scaled = seq.clone();
        for f in &mut scaled.frames {
            for p in f.world.iter_mut().flatten() {
                for c in p.iter_mut() {
                    *c *= 3.5;
                }
            }
        }
        let a = detect_hs_dc(&seq, SelectionMode::FixedLength(1)).unwrap();
        let b = detect_hs_dc(&scaled, SelectionMode::FixedLength(1)).unwrap();
        assert_eq!(a.indices.len(), 1);
        assert_eq!(a.indices, b.indices);
    }

    #[test]
    fn segment_examples() {
        assert_eq!(segment(10, &[]).unwrap(), vec![(0, 10)]);
        assert_eq!(segment(10, &[3]).unwrap(), vec![(0, 3), (3, 10)]);
        assert!(matches!(
            segment(10, &[3, 3]),
            Err(TafError::Segmentation(_))
        ));
        assert!(segment(10, &[0]).is_err());
        assert!(segment(10, &[10]).is_err());
    }

    #[test]
    fn report_line_format() {
        let ks = KeyframeSet {
            indices: vec![4, 9, 17],
            method: DetectionMethod::HsDc,
            mode: SelectionMode::FixedLength(3),
        };
        assert_eq!(ks.report_line("vid007"), "vid007 hs_dc fl-3 4 9 17");
        let ks2 = KeyframeSet {
            indices: vec![5],
            method: DetectionMethod::HsHeuristic,
            mode: SelectionMode::VariableLength(0.15),
        };
        assert_eq!(ks2.report_line("a"), "a hs_heu vl-0.15 5");
    }

    proptest! {
        #[test]
        fn segments_partition_the_video(
            t_len in 4usize..200,
            raw in proptest::collection::btree_set(1usize..199, 0..6),
        ) {
            let kfs: Vec<usize> = raw.into_iter().filter(|&k| k < t_len).collect();
            let segs = segment(t_len, &kfs).unwrap();
            prop_assert_eq!(segs.len(), kfs.len() + 1);
            prop_assert_eq!(segs[0].0, 0);
            prop_assert_eq!(segs.last().unwrap().1, t_len);
            for w in segs.windows(2) {
                prop_assert_eq!(w[0].1, w[1].0);
            }
            for &(a, b) in &segs {
                prop_assert!(a < b);
            }
        }

        #[test]
        fn density_selection_invariant_under_permutation(seed in 0u64..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(4..15);
            let pts: Vec<[f64; 2]> = (0..n)
                .map(|_| [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)])
                .collect();
            let k = rng.random_range(1..=n.min(4));
            let d_c = suggest_cutoff(&pts);
            let base = density_peak_cluster(&pts, k, d_c).unwrap();
            let base_pts: Vec<[f64;2]> = base.iter().map(|&i| pts[i]).collect();

            let mut perm: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                let j = rng.random_range(0..=i);
                perm.swap(i, j);
            }
            let shuffled: Vec<[f64; 2]> = perm.iter().map(|&i| pts[i]).collect();
            let sel = density_peak_cluster(&shuffled, k, d_c).unwrap();
            let mut sel_pts: Vec<[f64;2]> = sel.iter().map(|&i| shuffled[i]).collect();
            let mut base_sorted = base_pts.clone();
            base_sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            sel_pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
            prop_assert_eq!(base_sorted, sel_pts);
        }

        #[test]
        fn density_selection_invariant_under_distance_scaling(seed in 0u64..200, factor in 0.1f64..10.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(4..15);
            let pts: Vec<[f64; 2]> = (0..n)
                .map(|_| [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)])
                .collect();
            let k = rng.random_range(1..=n.min(4));
            let d_c = suggest_cutoff(&pts);
            let scaled: Vec<[f64; 2]> = pts.iter().map(|p| [p[0] * factor, p[1] * factor]).collect();
            let a = density_peak_cluster(&pts, k, d_c).unwrap();
            let b = density_peak_cluster(&scaled, k, d_c * factor).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
