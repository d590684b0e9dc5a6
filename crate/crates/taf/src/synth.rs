//! Synthetic corpus generator: labeled skeleton sequences with planted
//! movement-hold structure, matching grayscale frames with planted entropy
//! extrema, and rendered hand masks, so every pipeline stage is testable
//! without a capture rig.
//!
//! Trajectories interleave eased strokes (strictly varying speed, so the
//! only exact speed plateaus are the holds) with exact positional freezes
//! at the planted hold frames. All emitted coordinates are quantized to six
//! decimals, making write/parse round-trips and reruns bit-identical.

use crate::colorize::{accumulate_hue, TemporalScheme};
use crate::error::{Result, TafError};
use crate::grid::{GRID_H, GRID_W};
use crate::heatmap::render_stack;
use crate::masks::{HandMaskFrame, LABEL_LEFT, LABEL_RIGHT};
use crate::skeleton::{
    format_sequence, project_to_grid, JointId, SkeletonFrame, SkeletonSequence, NUM_JOINTS,
};
use image::GrayImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::fmt::Write as _;
use std::path::Path;

/// Mask canvas size (source-video resolution stand-in).
pub const MASK_H: usize = 96;
pub const MASK_W: usize = 160;
/// Grayscale frame size for the entropy detector.
pub const FRAME_H: usize = 48;
pub const FRAME_W: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StrokeKind {
    Line,
    Circle,
    Zigzag,
    FigureEight,
    Arc,
    Push,
    Wave,
    Spiral,
    Vee,
    Hook,
}

pub const STROKES: [StrokeKind; 10] = [
    StrokeKind::Line,
    StrokeKind::Circle,
    StrokeKind::Zigzag,
    StrokeKind::FigureEight,
    StrokeKind::Arc,
    StrokeKind::Push,
    StrokeKind::Wave,
    StrokeKind::Spiral,
    StrokeKind::Vee,
    StrokeKind::Hook,
];

impl StrokeKind {
    pub fn name(self) -> &'static str {
        match self {
            StrokeKind::Line => "line",
            StrokeKind::Circle => "circle",
            StrokeKind::Zigzag => "zigzag",
            StrokeKind::FigureEight => "figure8",
            StrokeKind::Arc => "arc",
            StrokeKind::Push => "push",
            StrokeKind::Wave => "wave",
            StrokeKind::Spiral => "spiral",
            StrokeKind::Vee => "vee",
            StrokeKind::Hook => "hook",
        }
    }

    /// Point on the unit-amplitude stroke at parameter u in [0, 1]:
    /// (x right, y up, z depth offset). Strokes are traversed at uniform
    /// arc speed, so they must keep curvature moderate: features sharper
    /// than a frame step would alias into spurious speed minima.
    fn point(self, u: f64) -> [f64; 3] {
        use std::f64::consts::PI;
        match self {
            StrokeKind::Line => [2.0 * u - 1.0, 0.3 * (PI * u).sin(), 0.0],
            StrokeKind::Circle => [(2.0 * PI * u).cos(), (2.0 * PI * u).sin(), 0.0],
            StrokeKind::Zigzag => {
                // three straight legs with two gentle corners
                let y = 0.22;
                let pts = [[-1.0, y], [-0.33, -y], [0.33, y], [1.0, -y]];
                let s = (3.0 * u).min(2.999);
                let i = s as usize;
                let a = s - i as f64;
                [
                    pts[i][0] + (pts[i + 1][0] - pts[i][0]) * a,
                    pts[i][1] + (pts[i + 1][1] - pts[i][1]) * a,
                    0.0,
                ]
            }
            StrokeKind::FigureEight => [(2.0 * PI * u).sin(), 0.5 * (4.0 * PI * u).sin(), 0.0],
            StrokeKind::Arc => [(PI * (1.0 - u)).cos(), 0.8 * (PI * (1.0 - u)).sin(), 0.0],
            StrokeKind::Push => [
                0.5 * (2.0 * u - 1.0),
                0.1 * (PI * u).sin(),
                -0.9 * (PI * u).sin(),
            ],
            StrokeKind::Wave => [2.0 * u - 1.0, 0.35 * (2.0 * PI * u).sin(), 0.0],
            StrokeKind::Spiral => {
                let r = 0.3 + 0.7 * u;
                [r * (3.0 * PI * u).cos(), r * (3.0 * PI * u).sin(), 0.0]
            }
            StrokeKind::Vee => {
                let s = 2.0 * u - 1.0;
                [s, 1.6 * s * s - 0.8, 0.0]
            }
            StrokeKind::Hook => {
                let ang = 1.5 * PI * u + 0.5 * PI;
                [ang.cos() * (1.0 - 0.3 * u), ang.sin(), 0.0]
            }
        }
    }
}

/// How classes are constructed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusKind {
    /// Each class traverses one distinct stroke primitive, split into
    /// `holds_per_class + 1` movements by the planted holds.
    DistinctPrimitives,
    /// Classes come in pairs performing the same two strokes in opposite
    /// order, with one hold between them; class identity is the order.
    StrokePermutations,
}

#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub num_classes: usize,
    pub signers: usize,
    pub repetitions: usize,
    /// Inclusive frame-count range videos are drawn from.
    pub t_range: (usize, usize),
    pub holds_per_class: usize,
    /// Marginal std of the smooth positional jitter, meters.
    pub noise_sigma: f64,
    pub seed: u64,
    pub corpus: CorpusKind,
    pub fps: f64,
}

impl SynthSpec {
    pub fn new(num_classes: usize, signers: usize, repetitions: usize, seed: u64) -> Self {
        SynthSpec {
            num_classes,
            signers,
            repetitions,
            t_range: (48, 72),
            holds_per_class: 3,
            noise_sigma: 0.003,
            seed,
            corpus: CorpusKind::DistinctPrimitives,
            fps: 30.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.signers == 0 || self.repetitions == 0 {
            return Err(TafError::Parameter("corpus counts must be positive".into()));
        }
        if self.noise_sigma < 0.0 {
            return Err(TafError::Parameter("noise sigma must be >= 0".into()));
        }
        if self.t_range.0 < 24 || self.t_range.1 < self.t_range.0 {
            return Err(TafError::Parameter(
                "frame-count range must be ordered with at least 24 frames".into(),
            ));
        }
        Ok(())
    }

    /// Stroke sequence performed by a class.
    pub fn class_strokes(&self, class: usize) -> Vec<StrokeKind> {
        match self.corpus {
            CorpusKind::DistinctPrimitives => vec![STROKES[class % STROKES.len()]],
            CorpusKind::StrokePermutations => {
                let pair = class / 2;
                let a = STROKES[(2 * pair) % STROKES.len()];
                let b = STROKES[(2 * pair + 1) % STROKES.len()];
                if class % 2 == 0 {
                    vec![a, b]
                } else {
                    vec![b, a]
                }
            }
        }
    }

    /// Planted hold count for a class (movement-hold alternation).
    pub fn holds_for_class(&self, _class: usize) -> usize {
        match self.corpus {
            CorpusKind::DistinctPrimitives => self.holds_per_class,
            CorpusKind::StrokePermutations => 1,
        }
    }

    pub fn path_name(&self, class: usize) -> String {
        self.class_strokes(class)
            .iter()
            .map(|s| s.name())
            .collect::<Vec<_>>()
            .join("+")
    }
}

/// Planted ground truth emitted with every generated sequence.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    /// Frame index at the center of each planted hold.
    pub hold_centers: Vec<usize>,
    pub path: String,
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn mix_seed(parts: &[u64]) -> u64 {
    let mut acc = 0x243F_6A88_85A3_08D3;
    for &p in parts {
        acc = splitmix(acc ^ p);
    }
    acc
}

/// Per-signer amplitude in [0.85, 1.15] and a small spatial offset.
fn signer_variation(spec: &SynthSpec, signer: usize) -> (f64, [f64; 2]) {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[spec.seed, 0x5169, signer as u64]));
    let amp = rng.random_range(0.85..1.15);
    let off = [rng.random_range(-0.04..0.04), rng.random_range(-0.04..0.04)];
    (amp, off)
}

/// Ease with a linear floor: strokes keep a healthy minimum speed, so
/// jitter cannot carve believable minima inside a movement, and no step
/// ever quantizes to zero. Exact zeros exist only at planted holds.
fn ease(x: f64) -> f64 {
    0.25 * x + 0.75 * x * x * (3.0 - 2.0 * x)
}

/// Monotone 0 -> 1 drift for the weak hand. A monotone profile never
/// reverses direction, so it cannot put a quantized-zero speed minimum in
/// the interior of the signal.
fn smooth_ramp(x: f64) -> f64 {
    x * x * (3.0 - 2.0 * x)
}

/// Zero-mean smooth noise with per-frame marginal std sigma (moving average
/// of white Gaussian over a 5-frame window).
fn smooth_noise(len: usize, sigma: f64, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    if sigma == 0.0 {
        return vec![[0.0; 3]; len];
    }
    const WIN: usize = 5;
    let normal = Normal::new(0.0, sigma * (WIN as f64).sqrt()).unwrap();
    let white: Vec<[f64; 3]> = (0..len + WIN)
        .map(|_| {
            [
                normal.sample(rng),
                normal.sample(rng),
                normal.sample(rng) * 0.5,
            ]
        })
        .collect();
    (0..len)
        .map(|t| {
            let mut acc = [0.0; 3];
            for w in &white[t..t + WIN] {
                for (a, v) in acc.iter_mut().zip(w.iter()) {
                    *a += v / WIN as f64;
                }
            }
            acc
        })
        .collect()
}

fn quantize(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

/// Frame spans of one gesture, in order: raise, onset stutter, strokes
/// alternating with hold patterns, offset stutter, lower.
struct Layout {
    raise: (usize, usize),
    onset: (usize, usize),
    /// (start, len) of each stroke movement.
    strokes: Vec<(usize, usize)>,
    /// (start, len) of each hold micro-pattern.
    holds: Vec<(usize, usize)>,
    offset: (usize, usize),
    lower: (usize, usize),
}

/// Frames in a junction stutter (two engineered slow minima).
const STUTTER_LEN: usize = 3;
/// Frames in a hold pattern: one exact freeze plus a near-zero companion.
const HOLD_LEN: usize = 3;

impl Layout {
    /// Spans where jitter is suppressed (engineered micro-structure).
    fn quiet_spans(&self) -> Vec<(usize, usize)> {
        let mut spans = vec![self.onset, self.offset];
        spans.extend_from_slice(&self.holds);
        spans
    }
}

fn plan_layout(t_len: usize, hold_count: usize, salt: u64) -> Layout {
    let raise = (t_len / 10).max(4);
    let lower = raise;
    let strokes = hold_count + 1;
    let stroke_total =
        t_len - 2 * raise - 2 * STUTTER_LEN - hold_count * HOLD_LEN;
    let base = stroke_total / strokes;
    let mut extra = stroke_total % strokes;
    let mut cursor = 0usize;
    let raise_span = (cursor, raise);
    cursor += raise;
    let onset = (cursor, STUTTER_LEN);
    cursor += STUTTER_LEN;
    let mut stroke_spans = Vec::new();
    let mut holds = Vec::new();
    for s in 0..strokes {
        let mut len = base;
        // rotate the remainder so stroke lengths are not all equal, which
        // would make hold spacings (and so candidate densities) exactly tie
        if extra > 0 && (s + salt as usize) % strokes < extra + s {
            len += 1;
            extra -= 1;
        }
        stroke_spans.push((cursor, len));
        cursor += len;
        if s < hold_count {
            holds.push((cursor, HOLD_LEN));
            cursor += HOLD_LEN;
        }
    }
    let offset = (cursor, STUTTER_LEN);
    cursor += STUTTER_LEN;
    let lower_span = (cursor, lower);
    cursor += lower;
    debug_assert_eq!(cursor, t_len);
    Layout {
        raise: raise_span,
        onset,
        strokes: stroke_spans,
        holds,
        offset,
        lower: lower_span,
    }
}

/// Dominant-hand wrist track with planted holds; returns positions and the
/// hold-center frame indices.
fn wrist_track(
    spec: &SynthSpec,
    class: usize,
    amp: f64,
    offset: [f64; 2],
    t_len: usize,
    noise: &[[f64; 3]],
) -> (Vec<[f64; 3]>, Vec<usize>) {
    let strokes = spec.class_strokes(class);
    let hold_count = spec.holds_for_class(class);
    let layout = plan_layout(t_len, hold_count);
    let scale = 0.22 * amp;
    let center = [0.16 + offset[0], 0.05 + offset[1], 2.0];
    let rest = [0.12 + offset[0], -0.38 + offset[1], 2.05];

    // Dense polyline over the chained strokes (each stroke anchored where
    // the previous one ended), then an arc-length table. Traversing the
    // path by arc fraction keeps the in-stroke speed profile a strict bell:
    // the only local speed minima left are the eased junctions and the
    // exact holds.
    const SAMPLES_PER_STROKE: usize = 256;
    let m_samples = SAMPLES_PER_STROKE * strokes.len();
    let mut poly = Vec::with_capacity(m_samples + 1);
    for i in 0..=m_samples {
        let v = strokes.len() as f64 * i as f64 / m_samples as f64;
        let idx = (v.floor() as usize).min(strokes.len() - 1);
        let u = v - idx as f64;
        let p = strokes[idx].point(u);
        let mut base = [0.0, 0.0, 0.0];
        for s in 0..idx {
            let end = strokes[s].point(1.0);
            let start = strokes[s + 1].point(0.0);
            base[0] += end[0] - start[0];
            base[1] += end[1] - start[1];
            base[2] += end[2] - start[2];
        }
        poly.push([
            center[0] + scale * (p[0] + base[0]),
            center[1] + scale * (p[1] + base[1]),
            center[2] + 0.3 * scale * (p[2] + base[2]),
        ]);
    }
    let mut cumlen = Vec::with_capacity(poly.len());
    cumlen.push(0.0f64);
    for w in poly.windows(2) {
        let d = [w[1][0] - w[0][0], w[1][1] - w[0][1], w[1][2] - w[0][2]];
        let step = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        cumlen.push(cumlen.last().unwrap() + step);
    }
    let total_len = *cumlen.last().unwrap();
    let path_at_fraction = |s: f64| -> [f64; 3] {
        let target = s.clamp(0.0, 1.0) * total_len;
        let hi = cumlen.partition_point(|&l| l < target).min(cumlen.len() - 1);
        if hi == 0 {
            return poly[0];
        }
        let lo = hi - 1;
        let seg = cumlen[hi] - cumlen[lo];
        let a = if seg > 0.0 { (target - cumlen[lo]) / seg } else { 0.0 };
        [
            poly[lo][0] + (poly[hi][0] - poly[lo][0]) * a,
            poly[lo][1] + (poly[hi][1] - poly[lo][1]) * a,
            poly[lo][2] + (poly[hi][2] - poly[lo][2]) * a,
        ]
    };
    // stroke boundaries as arc fractions
    let inner = layout.strokes.len();
    let mut cuts = Vec::with_capacity(inner + 1);
    for i in 0..=inner {
        let sample = (i as f64 / inner as f64 * m_samples as f64).round() as usize;
        cuts.push(cumlen[sample.min(m_samples)] / total_len);
    }

    // Arc-length step sizes (meters) of the engineered micro-structure.
    // Stutters carve two slow minima at each gesture boundary; a hold is an
    // exact freeze followed by a near-zero companion two frames later, so
    // every linguistic boundary is a tight cluster of slow candidates while
    // the exact zero stays unique per hold.
    let stutter_steps = [0.0025 * amp, 0.0060 * amp, 0.0012 * amp];
    let hold_steps = [0.0, 0.0030 * amp, 0.0010 * amp];

    let mut positions = vec![[0.0f64; 3]; t_len];
    let mut fraction = 0.0f64; // arc progress in [0, 1]

    // raise: rest -> path start
    let (r0, rlen) = layout.raise;
    let start = path_at_fraction(0.0);
    for i in 0..rlen {
        let a = ease((i + 1) as f64 / rlen as f64);
        positions[r0 + i] = [
            rest[0] + (start[0] - rest[0]) * a,
            rest[1] + (start[1] - rest[1]) * a,
            rest[2] + (start[2] - rest[2]) * a,
        ];
    }

    let mut emit_steps = |positions: &mut Vec<[f64; 3]>,
                          fraction: &mut f64,
                          span: (usize, usize),
                          steps: &[f64]| {
        for (i, &step) in steps.iter().enumerate().take(span.1) {
            if step == 0.0 {
                // bit-exact freeze
                positions[span.0 + i] = positions[span.0 + i - 1];
            } else {
                *fraction += step / total_len;
                positions[span.0 + i] = path_at_fraction(*fraction);
            }
        }
    };

    emit_steps(&mut positions, &mut fraction, layout.onset, &stutter_steps);

    let mut hold_centers = Vec::new();
    for (m, &(s0, slen)) in layout.strokes.iter().enumerate() {
        let (sa, sb) = (fraction, cuts[m + 1]);
        for i in 0..slen {
            let a = ease((i + 1) as f64 / slen as f64);
            positions[s0 + i] = path_at_fraction(sa + (sb - sa) * a);
        }
        fraction = sb;
        if m < layout.holds.len() {
            let span = layout.holds[m];
            emit_steps(&mut positions, &mut fraction, span, &hold_steps);
            // the exact-zero speed sample is the first hold frame
            hold_centers.push(span.0);
        }
    }

    // offset stutter: the path is exhausted, so step toward the rest pose
    {
        let (o0, olen) = layout.offset;
        let from = positions[o0 - 1];
        let d = [rest[0] - from[0], rest[1] - from[1], rest[2] - from[2]];
        let norm = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt().max(1e-9);
        let dir = [d[0] / norm, d[1] / norm, d[2] / norm];
        let mut dist = 0.0;
        for (i, &step) in stutter_steps.iter().enumerate().take(olen) {
            dist += step;
            positions[o0 + i] = [
                from[0] + dir[0] * dist,
                from[1] + dir[1] * dist,
                from[2] + dir[2] * dist,
            ];
        }
    }

    // lower: current point -> rest
    let (l0, llen) = layout.lower;
    let end = positions[l0 - 1];
    for i in 0..llen {
        let a = ease((i + 1) as f64 / llen as f64);
        positions[l0 + i] = [
            end[0] + (rest[0] - end[0]) * a,
            end[1] + (rest[1] - end[1]) * a,
            end[2] + (rest[2] - end[2]) * a,
        ];
    }

    // jitter with an envelope that fades out around the engineered
    // micro-structure (the hand stabilizes into holds and boundaries)
    const TAPER: usize = 4;
    let quiet = layout.quiet_spans();
    let envelope = |t: usize| -> f64 {
        let mut env = 1.0f64;
        for &(q0, qlen) in &quiet {
            let dist = if t + 1 < q0 {
                q0 - 1 - t
            } else if t >= q0 + qlen + 1 {
                t - (q0 + qlen)
            } else {
                0
            };
            if dist < TAPER {
                env = env.min(dist as f64 / TAPER as f64);
            }
        }
        env
    };
    for (t, p) in positions.iter_mut().enumerate() {
        let env = envelope(t);
        if env == 0.0 {
            continue;
        }
        for (c, n) in p.iter_mut().zip(noise[t].iter()) {
            *c += env * n;
        }
    }
    (positions, hold_centers)
}

/// Generate one labeled sequence plus its planted ground truth.
/// Deterministic in (class, signer, rep, spec.seed).
pub fn generate_sequence(
    class: usize,
    signer: usize,
    rep: usize,
    spec: &SynthSpec,
) -> Result<(SkeletonSequence, GroundTruth)> {
    spec.validate()?;
    if class >= spec.num_classes {
        return Err(TafError::Parameter(format!(
            "class {class} out of range 0..{}",
            spec.num_classes
        )));
    }
    let (amp, offset) = signer_variation(spec, signer);
    generate_core(class, signer, rep, spec, amp, offset)
}

fn generate_core(
    class: usize,
    signer: usize,
    rep: usize,
    spec: &SynthSpec,
    amp: f64,
    offset: [f64; 2],
) -> Result<(SkeletonSequence, GroundTruth)> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[
        spec.seed,
        class as u64,
        signer as u64,
        rep as u64,
    ]));
    let t_len = rng.random_range(spec.t_range.0..=spec.t_range.1);

    let wrist_noise = smooth_noise(t_len, spec.noise_sigma, &mut rng);
    let (right_wrist, hold_centers) =
        wrist_track(spec, class, amp, offset, t_len, &wrist_noise);

    // follower joints: rigid offsets from the wrist plus gentle jitter
    let follow = |n: &[[f64; 3]], f: f64, t: usize| {
        [n[t][0] * f, n[t][1] * f, n[t][2] * f]
    };
    let joint_noise: Vec<Vec<[f64; 3]>> = (0..NUM_JOINTS)
        .map(|_| smooth_noise(t_len, spec.noise_sigma * 0.5, &mut rng))
        .collect();

    let shoulder_r = [0.19 + offset[0], 0.24 + offset[1], 2.0];
    let shoulder_l = [-0.19 + offset[0], 0.24 + offset[1], 2.0];
    // two-handed classes drift the left hand slowly; every third class is
    // one-handed
    let left_active = class % 3 != 0;
    let left_base = [-0.14 + offset[0], -0.34 + offset[1], 2.05];

    let mut frames = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let rw = right_wrist[t];
        let lw = if left_active {
            let b = smooth_ramp(t as f64 / (t_len - 1) as f64);
            let n = follow(&joint_noise[JointId::LeftWrist.index()], 0.3, t);
            [
                left_base[0] - 0.05 * amp * b + n[0],
                left_base[1] + 0.07 * amp * b + n[1],
                left_base[2] + n[2],
            ]
        } else {
            left_base
        };
        let mut world = [None; NUM_JOINTS];
        let mut set = |j: JointId, p: [f64; 3], nf: f64| {
            let n = follow(&joint_noise[j.index()], nf, t);
            world[j.index()] = Some([
                quantize(p[0] + n[0]),
                quantize(p[1] + n[1]),
                quantize(p[2] + n[2]),
            ]);
        };
        set(JointId::RightWrist, rw, 0.0);
        set(JointId::RightUpperArm, [shoulder_r[0], shoulder_r[1] - 0.04, 2.0], 0.4);
        set(
            JointId::RightElbow,
            [
                0.5 * (shoulder_r[0] + rw[0]) + 0.04,
                0.5 * (shoulder_r[1] + rw[1]) - 0.02,
                0.5 * (shoulder_r[2] + rw[2]),
            ],
            0.6,
        );
        set(JointId::RightHandTip, [rw[0] + 0.025, rw[1] + 0.075, rw[2]], 0.3);
        set(JointId::RightThumb, [rw[0] + 0.05, rw[1] + 0.02, rw[2]], 0.3);
        let lw_set = lw;
        set(JointId::LeftWrist, lw_set, 0.0);
        set(JointId::LeftUpperArm, [shoulder_l[0], shoulder_l[1] - 0.04, 2.0], 0.4);
        set(
            JointId::LeftElbow,
            [
                0.5 * (shoulder_l[0] + lw_set[0]) - 0.04,
                0.5 * (shoulder_l[1] + lw_set[1]) - 0.02,
                0.5 * (shoulder_l[2] + lw_set[2]),
            ],
            0.6,
        );
        set(JointId::LeftHandTip, [lw_set[0] - 0.025, lw_set[1] + 0.075, lw_set[2]], 0.3);
        set(JointId::LeftThumb, [lw_set[0] - 0.05, lw_set[1] + 0.02, lw_set[2]], 0.3);
        frames.push(SkeletonFrame {
            frame_index: t,
            world,
            image: None,
        });
    }
    let seq = SkeletonSequence {
        frames,
        sign_label: class as u32,
        signer_id: signer as u32,
        fps: spec.fps,
    };
    Ok((
        seq,
        GroundTruth {
            hold_centers,
            path: spec.path_name(class),
        },
    ))
}

/// Noise-free reference sequence for a class: neutral signer (amplitude 1,
/// no offset), the middle of the frame-count range.
pub fn generate_canonical(class: usize, spec: &SynthSpec) -> Result<SkeletonSequence> {
    let mut clean = spec.clone();
    clean.noise_sigma = 0.0;
    let mid_t = (spec.t_range.0 + spec.t_range.1) / 2;
    clean.t_range = (mid_t, mid_t);
    let (seq, _) = generate_core(class, 0, 0, &clean, 1.0, [0.0, 0.0])?;
    Ok(seq)
}

/// Render class-dependent binary hand blobs at the projected wrist
/// positions: one label PNG worth of data per frame.
pub fn generate_masks(seq: &SkeletonSequence, class: usize) -> Result<Vec<HandMaskFrame>> {
    let projected = project_to_grid(seq, MASK_H, MASK_W)?;
    let mut out = Vec::with_capacity(seq.len());
    for (t, joints) in projected.iter().enumerate() {
        let mut left = crate::grid::Grid::zeros(MASK_H, MASK_W);
        let mut right = crate::grid::Grid::zeros(MASK_H, MASK_W);
        draw_blob(&mut right, joints[JointId::RightWrist.index()], class);
        draw_blob(&mut left, joints[JointId::LeftWrist.index()], class);
        out.push(HandMaskFrame {
            frame_index: t,
            left,
            right,
        });
    }
    Ok(out)
}

/// Blob shape per class: disc, axis-aligned ellipse, or bar.
fn draw_blob(grid: &mut crate::grid::Grid, center: (f64, f64), class: usize) {
    let (cy, cx) = center;
    match class % 3 {
        0 => {
            let r = 9.0;
            stamp(grid, cy, cx, r, r);
        }
        1 => stamp(grid, cy, cx, 7.0, 12.0),
        _ => stamp(grid, cy, cx, 4.0, 13.0),
    }
}

fn stamp(grid: &mut crate::grid::Grid, cy: f64, cx: f64, ry: f64, rx: f64) {
    let r0 = ((cy - ry).floor().max(0.0)) as usize;
    let r1 = ((cy + ry).ceil().min(grid.height as f64 - 1.0)) as usize;
    let c0 = ((cx - rx).floor().max(0.0)) as usize;
    let c1 = ((cx + rx).ceil().min(grid.width as f64 - 1.0)) as usize;
    for r in r0..=r1 {
        for c in c0..=c1 {
            let dy = (r as f64 - cy) / ry;
            let dx = (c as f64 - cx) / rx;
            if dy * dy + dx * dx <= 1.0 {
                grid.set(r, c, 1.0);
            }
        }
    }
}

pub fn masks_to_label_image(frame: &HandMaskFrame) -> GrayImage {
    let (h, w) = (frame.left.height, frame.left.width);
    let mut img = GrayImage::new(w as u32, h as u32);
    for r in 0..h {
        for c in 0..w {
            // left hand wins overlaps
            let v = if frame.left.get(r, c) > 0.0 {
                LABEL_LEFT
            } else if frame.right.get(r, c) > 0.0 {
                LABEL_RIGHT
            } else {
                0
            };
            img.put_pixel(c as u32, r as u32, image::Luma([v]));
        }
    }
    img
}

/// Grayscale frames whose histogram entropy has extrema exactly at the
/// planted hold centers: a fixed texture pattern fills the first k(t)
/// pixels, where k(t) follows a piecewise-cosine density through
/// alternating high/low control values at the plants.
pub fn generate_frames(t_len: usize, hold_centers: &[usize]) -> Vec<GrayImage> {
    let n_pix = FRAME_H * FRAME_W;
    let mut controls = vec![(0usize, 0.40f64)];
    for (i, &h) in hold_centers.iter().enumerate() {
        let v = if i % 2 == 0 { 0.65 } else { 0.15 };
        controls.push((h, v));
    }
    controls.push((t_len - 1, 0.40));
    let density_at = |t: usize| -> f64 {
        let mut seg = 0;
        while seg + 1 < controls.len() - 1 && controls[seg + 1].0 <= t {
            seg += 1;
        }
        let (t0, v0) = controls[seg];
        let (t1, v1) = controls[seg + 1];
        if t1 == t0 {
            return v1;
        }
        let a = (t - t0) as f64 / (t1 - t0) as f64;
        v0 + (v1 - v0) * (1.0 - (std::f64::consts::PI * a).cos()) / 2.0
    };
    (0..t_len)
        .map(|t| {
            let k = (density_at(t) * n_pix as f64).round() as usize;
            let mut img = GrayImage::new(FRAME_W as u32, FRAME_H as u32);
            for i in 0..k.min(n_pix) {
                let v = ((i * 97 + 13) % 251 + 1) as u8;
                img.put_pixel((i % FRAME_W) as u32, (i / FRAME_W) as u32, image::Luma([v]));
            }
            img
        })
        .collect()
}

/// One corpus entry as recorded in the manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub video_id: String,
    pub class: usize,
    pub signer: usize,
    pub rep: usize,
    pub t_len: usize,
    pub holds: Vec<usize>,
    pub path: String,
}

#[derive(Debug, Clone)]
pub struct Manifest {
    /// Smallest pairwise L1 distance between noise-free class tensors.
    pub margin_l1: f64,
    pub held_out_signer: usize,
    pub entries: Vec<ManifestEntry>,
}

pub fn video_id(class: usize, signer: usize, rep: usize) -> String {
    format!("c{class:02}_s{signer}_r{rep:02}")
}

impl Manifest {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# margin_l1={:.6}", self.margin_l1);
        let _ = writeln!(out, "# held_out_signer={}", self.held_out_signer);
        for e in &self.entries {
            let holds = e
                .holds
                .iter()
                .map(|h| h.to_string())
                .collect::<Vec<_>>()
                .join(",");
            let _ = writeln!(
                out,
                "{} {} {} {} {} holds={} path={}",
                e.video_id, e.class, e.signer, e.rep, e.t_len, holds, e.path
            );
        }
        out
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Manifest> {
        let mut margin_l1 = 0.0;
        let mut held_out_signer = 0;
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let err = |msg: String| TafError::Parse {
                path: origin.to_path_buf(),
                line: i + 1,
                msg,
            };
            if let Some(rest) = line.strip_prefix("# margin_l1=") {
                margin_l1 = rest.parse().map_err(|_| err("bad margin".into()))?;
                continue;
            }
            if let Some(rest) = line.strip_prefix("# held_out_signer=") {
                held_out_signer = rest.parse().map_err(|_| err("bad signer".into()))?;
                continue;
            }
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let tok: Vec<&str> = line.split(' ').collect();
            if tok.len() != 7 {
                return Err(err(format!("expected 7 fields, got {}", tok.len())));
            }
            let holds_str = tok[5]
                .strip_prefix("holds=")
                .ok_or_else(|| err("missing holds=".into()))?;
            let holds = if holds_str.is_empty() {
                Vec::new()
            } else {
                holds_str
                    .split(',')
                    .map(|s| s.parse().map_err(|_| err(format!("bad hold index {s}"))))
                    .collect::<Result<Vec<usize>>>()?
            };
            entries.push(ManifestEntry {
                video_id: tok[0].to_string(),
                class: tok[1].parse().map_err(|_| err("bad class".into()))?,
                signer: tok[2].parse().map_err(|_| err("bad signer".into()))?,
                rep: tok[3].parse().map_err(|_| err("bad rep".into()))?,
                t_len: tok[4].parse().map_err(|_| err("bad frame count".into()))?,
                holds,
                path: tok[6].strip_prefix("path=").unwrap_or(tok[6]).to_string(),
            });
        }
        Ok(Manifest {
            margin_l1,
            held_out_signer,
            entries,
        })
    }
}

/// Smallest pairwise L1 distance between noise-free per-class hue tensors.
pub fn class_margin_l1(spec: &SynthSpec) -> Result<f64> {
    let mut tensors = Vec::new();
    for class in 0..spec.num_classes {
        let mut seq = generate_canonical(class, spec)?;
        seq.interpolate_missing()?;
        let projected = project_to_grid(&seq, GRID_H, GRID_W)?;
        let stack = render_stack(&projected, crate::heatmap::DEFAULT_SIGMA, GRID_H, GRID_W)?;
        tensors.push(accumulate_hue(&stack, &TemporalScheme::Linear(3))?);
    }
    let mut margin = f64::INFINITY;
    for i in 0..tensors.len() {
        for j in i + 1..tensors.len() {
            let l1: f64 = tensors[i]
                .data
                .iter()
                .zip(tensors[j].data.iter())
                .map(|(&a, &b)| (a as f64 - b as f64).abs())
                .sum();
            margin = margin.min(l1);
        }
    }
    Ok(if margin.is_finite() { margin } else { 0.0 })
}

/// Which side products to write next to the skeleton files.
#[derive(Debug, Clone, Copy, Default)]
pub struct DatasetFiles {
    pub frames: bool,
    pub masks: bool,
}

/// Write a full corpus: `<id>.skel` skeletons, optional per-video frame and
/// mask PNG directories, and `manifest.txt`. The last signer id is
/// designated as held out for signer-independent evaluation.
pub fn generate_dataset(spec: &SynthSpec, out_dir: &Path, files: DatasetFiles) -> Result<Manifest> {
    spec.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| TafError::io(out_dir, e))?;
    let mut entries = Vec::new();
    for class in 0..spec.num_classes {
        for signer in 0..spec.signers {
            for rep in 0..spec.repetitions {
                let (seq, truth) = generate_sequence(class, signer, rep, spec)?;
                let id = video_id(class, signer, rep);
                let skel_path = out_dir.join(format!("{id}.skel"));
                std::fs::write(&skel_path, format_sequence(&seq))
                    .map_err(|e| TafError::io(&skel_path, e))?;
                if files.masks {
                    let mask_dir = out_dir.join(&id).join("masks");
                    std::fs::create_dir_all(&mask_dir).map_err(|e| TafError::io(&mask_dir, e))?;
                    for frame in generate_masks(&seq, class)? {
                        let img = masks_to_label_image(&frame);
                        let p = mask_dir.join(format!("{:06}.png", frame.frame_index));
                        img.save(&p).map_err(|e| TafError::Image {
                            path: p.clone(),
                            source: e,
                        })?;
                    }
                }
                if files.frames {
                    let frame_dir = out_dir.join(&id).join("frames");
                    std::fs::create_dir_all(&frame_dir)
                        .map_err(|e| TafError::io(&frame_dir, e))?;
                    for (t, img) in generate_frames(seq.len(), &truth.hold_centers)
                        .into_iter()
                        .enumerate()
                    {
                        let p = frame_dir.join(format!("{t:06}.png"));
                        img.save(&p).map_err(|e| TafError::Image {
                            path: p.clone(),
                            source: e,
                        })?;
                    }
                }
                entries.push(ManifestEntry {
                    video_id: id,
                    class,
                    signer,
                    rep,
                    t_len: seq.len(),
                    holds: truth.hold_centers,
                    path: truth.path,
                });
            }
        }
    }
    let manifest = Manifest {
        margin_l1: class_margin_l1(spec)?,
        held_out_signer: spec.signers - 1,
        entries,
    };
    let mpath = out_dir.join("manifest.txt");
    std::fs::write(&mpath, manifest.to_text()).map_err(|e| TafError::io(&mpath, e))?;
    Ok(manifest)
}


#[cfg(test)]
mod debug_tests {
    use super::*;
    use crate::keyframes::{hand_speed, local_minima};
    use crate::skeleton::Side;

    #[test]
    #[ignore]
    fn dump_speed_signal() {
        let mut spec = SynthSpec::new(4, 2, 2, 42);
        spec.noise_sigma = 0.0;
        for class in 0..4 {
            let (seq, truth) = generate_sequence(class, 1, 0, &spec).unwrap();
            let sig = hand_speed(&seq, Side::Right).unwrap();
            let minima = local_minima(&sig.values);
            eprintln!("class {class} T={} holds={:?}", seq.len(), truth.hold_centers);
            eprintln!("  minima: {:?}", minima.iter().map(|&t| (t, (sig.values[t]*1000.0).round()/1000.0)).collect::<Vec<_>>());
        }
    }
}
