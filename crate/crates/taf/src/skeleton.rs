//! Skeleton sequence parsing, validation and projection onto the heatmap grid.
//!
//! The on-disk format is line-oriented UTF-8 text with LF endings:
//! a header `TAFSKEL v1 T=<int> fps=<float> sign=<id> signer=<id>`, then one
//! line per frame holding the frame index, ten world-coordinate triplets
//! `x y z` in meters (fixed joint order, six decimals), optionally followed
//! by ten image-coordinate pairs `u v` in source-video pixels. Missing joints
//! are written as `nan` triplets and flagged on parse, never zeroed.

use crate::error::{Result, TafError};
use std::fmt::Write as _;
use std::path::Path;

/// The ten tracked upper-body joints, in fixed channel order, plus the
/// virtual background channel aggregating all of them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum JointId {
    LeftUpperArm,
    LeftElbow,
    LeftWrist,
    LeftHandTip,
    LeftThumb,
    RightUpperArm,
    RightElbow,
    RightWrist,
    RightHandTip,
    RightThumb,
    Background,
}

/// Number of physical joints carried per frame.
pub const NUM_JOINTS: usize = 10;
/// Physical joints plus the background channel.
pub const NUM_CHANNELS: usize = 11;

pub const JOINT_ORDER: [JointId; NUM_JOINTS] = [
    JointId::LeftUpperArm,
    JointId::LeftElbow,
    JointId::LeftWrist,
    JointId::LeftHandTip,
    JointId::LeftThumb,
    JointId::RightUpperArm,
    JointId::RightElbow,
    JointId::RightWrist,
    JointId::RightHandTip,
    JointId::RightThumb,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

impl JointId {
    /// Channel index in the fixed joint order; background is last.
    pub fn index(self) -> usize {
        match self {
            JointId::LeftUpperArm => 0,
            JointId::LeftElbow => 1,
            JointId::LeftWrist => 2,
            JointId::LeftHandTip => 3,
            JointId::LeftThumb => 4,
            JointId::RightUpperArm => 5,
            JointId::RightElbow => 6,
            JointId::RightWrist => 7,
            JointId::RightHandTip => 8,
            JointId::RightThumb => 9,
            JointId::Background => 10,
        }
    }

    pub fn side(self) -> Option<Side> {
        match self {
            JointId::Background => None,
            j if j.index() < 5 => Some(Side::Left),
            _ => Some(Side::Right),
        }
    }

    /// Same joint on the opposite side; background mirrors to itself.
    pub fn mirror_partner(self) -> JointId {
        match self {
            JointId::LeftUpperArm => JointId::RightUpperArm,
            JointId::LeftElbow => JointId::RightElbow,
            JointId::LeftWrist => JointId::RightWrist,
            JointId::LeftHandTip => JointId::RightHandTip,
            JointId::LeftThumb => JointId::RightThumb,
            JointId::RightUpperArm => JointId::LeftUpperArm,
            JointId::RightElbow => JointId::LeftElbow,
            JointId::RightWrist => JointId::LeftWrist,
            JointId::RightHandTip => JointId::LeftHandTip,
            JointId::RightThumb => JointId::LeftThumb,
            JointId::Background => JointId::Background,
        }
    }

    /// The wrist is the designated hand-position joint for speed signals.
    pub fn hand_position(side: Side) -> JointId {
        match side {
            Side::Left => JointId::LeftWrist,
            Side::Right => JointId::RightWrist,
        }
    }
}

/// One skeleton sample: camera-space world coordinates (meters) per joint,
/// optional source-video image coordinates (pixels). `None` marks a missing
/// joint.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonFrame {
    pub frame_index: usize,
    pub world: [Option<[f64; 3]>; NUM_JOINTS],
    pub image: Option<[Option<[f64; 2]>; NUM_JOINTS]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonSequence {
    pub frames: Vec<SkeletonFrame>,
    pub sign_label: u32,
    pub signer_id: u32,
    pub fps: f64,
}

impl SkeletonSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// World position of `joint` at frame `t`, if tracked there.
    pub fn world(&self, t: usize, joint: JointId) -> Option<[f64; 3]> {
        self.frames[t].world[joint.index()]
    }

    fn validate(&self, path: &Path) -> Result<()> {
        if self.frames.len() < 2 {
            return Err(TafError::Schema {
                path: path.to_path_buf(),
                line: 1,
                msg: format!("sequence length {} < 2", self.frames.len()),
            });
        }
        let has_image = self.frames[0].image.is_some();
        for (i, w) in self.frames.windows(2).enumerate() {
            if w[1].frame_index <= w[0].frame_index {
                return Err(TafError::Schema {
                    path: path.to_path_buf(),
                    line: i + 3,
                    msg: format!(
                        "frame indices not strictly increasing ({} after {})",
                        w[1].frame_index, w[0].frame_index
                    ),
                });
            }
        }
        for (i, f) in self.frames.iter().enumerate() {
            if f.image.is_some() != has_image {
                return Err(TafError::Schema {
                    path: path.to_path_buf(),
                    line: i + 2,
                    msg: "image coordinates present in some frames but not all".into(),
                });
            }
        }
        Ok(())
    }

    /// Fill missing joints by linear interpolation between the nearest valid
    /// neighbors (nearest-value extension at the ends). A joint missing in
    /// every frame rejects the sequence: accumulation needs dense
    /// trajectories.
    pub fn interpolate_missing(&mut self) -> Result<()> {
        let t_len = self.frames.len();
        for j in 0..NUM_JOINTS {
            let valid: Vec<usize> = (0..t_len)
                .filter(|&t| self.frames[t].world[j].is_some())
                .collect();
            if valid.is_empty() {
                return Err(TafError::DegenerateInput(format!(
                    "joint {:?} missing in every frame",
                    JOINT_ORDER[j]
                )));
            }
            if valid.len() == t_len {
                continue;
            }
            for t in 0..t_len {
                if self.frames[t].world[j].is_some() {
                    continue;
                }
                let next = valid.partition_point(|&v| v < t);
                let filled = match (next.checked_sub(1).map(|i| valid[i]), valid.get(next)) {
                    (Some(a), Some(&b)) => {
                        let alpha = (t - a) as f64 / (b - a) as f64;
                        let pa = self.frames[a].world[j].unwrap();
                        let pb = self.frames[b].world[j].unwrap();
                        [
                            pa[0] + alpha * (pb[0] - pa[0]),
                            pa[1] + alpha * (pb[1] - pa[1]),
                            pa[2] + alpha * (pb[2] - pa[2]),
                        ]
                    }
                    (Some(a), None) => self.frames[a].world[j].unwrap(),
                    (None, Some(&b)) => self.frames[b].world[j].unwrap(),
                    (None, None) => unreachable!(),
                };
                self.frames[t].world[j] = Some(filled);
            }
        }
        Ok(())
    }
}

fn parse_header_field<'a>(
    token: Option<&'a str>,
    key: &str,
    path: &Path,
) -> Result<&'a str> {
    let tok = token.ok_or_else(|| TafError::Parse {
        path: path.to_path_buf(),
        line: 1,
        msg: format!("missing header field {key}"),
    })?;
    tok.strip_prefix(key)
        .and_then(|rest| rest.strip_prefix('='))
        .ok_or_else(|| TafError::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: format!("expected {key}=<value>, got {tok:?}"),
        })
}

fn parse_num<T: std::str::FromStr>(tok: &str, path: &Path, line: usize, what: &str) -> Result<T> {
    tok.parse().map_err(|_| TafError::Parse {
        path: path.to_path_buf(),
        line,
        msg: format!("invalid {what}: {tok:?}"),
    })
}

/// Parse a skeleton file, validating the header, per-line token counts,
/// frame-index monotonicity and coordinate finiteness.
pub fn parse_sequence(path: &Path) -> Result<SkeletonSequence> {
    let text = std::fs::read_to_string(path).map_err(|e| TafError::io(path, e))?;
    parse_sequence_str(&text, path)
}

pub fn parse_sequence_str(text: &str, path: &Path) -> Result<SkeletonSequence> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| TafError::Parse {
        path: path.to_path_buf(),
        line: 1,
        msg: "empty file".into(),
    })?;
    let mut toks = header.split(' ');
    if toks.next() != Some("TAFSKEL") || toks.next() != Some("v1") {
        return Err(TafError::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: "expected header magic `TAFSKEL v1`".into(),
        });
    }
    let t_len: usize = parse_num(parse_header_field(toks.next(), "T", path)?, path, 1, "T")?;
    let fps: f64 = parse_num(parse_header_field(toks.next(), "fps", path)?, path, 1, "fps")?;
    let sign: u32 = parse_num(parse_header_field(toks.next(), "sign", path)?, path, 1, "sign")?;
    let signer: u32 = parse_num(
        parse_header_field(toks.next(), "signer", path)?,
        path,
        1,
        "signer",
    )?;
    if !(fps.is_finite() && fps > 0.0) {
        return Err(TafError::Schema {
            path: path.to_path_buf(),
            line: 1,
            msg: format!("fps must be finite and positive, got {fps}"),
        });
    }

    let mut frames = Vec::with_capacity(t_len);
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split(' ').collect();
        let with_image = match toks.len() {
            n if n == 1 + 3 * NUM_JOINTS => false,
            n if n == 1 + 3 * NUM_JOINTS + 2 * NUM_JOINTS => true,
            n => {
                return Err(TafError::Schema {
                    path: path.to_path_buf(),
                    line: lineno,
                    msg: format!(
                        "expected {} or {} fields, got {n}",
                        1 + 3 * NUM_JOINTS,
                        1 + 5 * NUM_JOINTS
                    ),
                })
            }
        };
        let frame_index: usize = parse_num(toks[0], path, lineno, "frame index")?;
        let mut world = [None; NUM_JOINTS];
        for j in 0..NUM_JOINTS {
            let x: f64 = parse_num(toks[1 + 3 * j], path, lineno, "x")?;
            let y: f64 = parse_num(toks[2 + 3 * j], path, lineno, "y")?;
            let z: f64 = parse_num(toks[3 + 3 * j], path, lineno, "z")?;
            if x.is_nan() && y.is_nan() && z.is_nan() {
                continue; // explicitly missing
            }
            if !(x.is_finite() && y.is_finite() && z.is_finite()) {
                return Err(TafError::Schema {
                    path: path.to_path_buf(),
                    line: lineno,
                    msg: format!("non-finite world coordinates for joint {j}"),
                });
            }
            world[j] = Some([x, y, z]);
        }
        let image = if with_image {
            let base = 1 + 3 * NUM_JOINTS;
            let mut img = [None; NUM_JOINTS];
            for j in 0..NUM_JOINTS {
                let u: f64 = parse_num(toks[base + 2 * j], path, lineno, "u")?;
                let v: f64 = parse_num(toks[base + 2 * j + 1], path, lineno, "v")?;
                if u.is_nan() && v.is_nan() {
                    continue;
                }
                if !(u.is_finite() && v.is_finite()) {
                    return Err(TafError::Schema {
                        path: path.to_path_buf(),
                        line: lineno,
                        msg: format!("non-finite image coordinates for joint {j}"),
                    });
                }
                img[j] = Some([u, v]);
            }
            Some(img)
        } else {
            None
        };
        frames.push(SkeletonFrame {
            frame_index,
            world,
            image,
        });
    }

    if frames.len() != t_len {
        return Err(TafError::Schema {
            path: path.to_path_buf(),
            line: 1,
            msg: format!("header says T={t_len} but file has {} frames", frames.len()),
        });
    }
    let seq = SkeletonSequence {
        frames,
        sign_label: sign,
        signer_id: signer,
        fps,
    };
    seq.validate(path)?;
    Ok(seq)
}

fn push_coord(out: &mut String, v: f64) {
    if v.is_nan() {
        out.push_str(" nan");
    } else {
        let _ = write!(out, " {v:.6}");
    }
}

/// Serialize to the text format. Coordinates print with six decimals, so
/// callers that need exact round-trips must quantize to that precision
/// first (the synthetic generator does).
pub fn format_sequence(seq: &SkeletonSequence) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "TAFSKEL v1 T={} fps={} sign={} signer={}",
        seq.frames.len(),
        seq.fps,
        seq.sign_label,
        seq.signer_id
    );
    for f in &seq.frames {
        let _ = write!(out, "{}", f.frame_index);
        for j in 0..NUM_JOINTS {
            match f.world[j] {
                Some([x, y, z]) => {
                    push_coord(&mut out, x);
                    push_coord(&mut out, y);
                    push_coord(&mut out, z);
                }
                None => out.push_str(" nan nan nan"),
            }
        }
        if let Some(img) = &f.image {
            for j in 0..NUM_JOINTS {
                match img[j] {
                    Some([u, v]) => {
                        push_coord(&mut out, u);
                        push_coord(&mut out, v);
                    }
                    None => out.push_str(" nan nan"),
                }
            }
        }
        out.push('\n');
    }
    out
}

pub fn write_sequence(seq: &SkeletonSequence, path: &Path) -> Result<()> {
    std::fs::write(path, format_sequence(seq)).map_err(|e| TafError::io(path, e))
}

/// Per-video affine map from source coordinates onto the heatmap grid.
///
/// The mapping is fit to the axis-aligned bounding box of all tracked joints
/// across all frames, expanded by 10% of its own extent on each side, then
/// scaled uniformly to fit `[0,H-1] x [0,W-1]` with the slack axis centered.
/// World input flips the vertical axis (camera y points up, rows point
/// down); image input keeps it.
#[derive(Debug, Clone, Copy)]
pub struct GridProjection {
    pub scale: f64,
    row_offset: f64,
    col_offset: f64,
    x_min: f64,
    y_min: f64,
    y_max: f64,
    flip_y: bool,
}

/// Bounding-box expansion per side, as a fraction of the box extent.
pub const BBOX_MARGIN: f64 = 0.10;

impl GridProjection {
    fn fit(
        points: impl Iterator<Item = [f64; 2]>,
        grid_h: usize,
        grid_w: usize,
        flip_y: bool,
    ) -> Result<GridProjection> {
        let (mut x_min, mut x_max) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut y_min, mut y_max) = (f64::INFINITY, f64::NEG_INFINITY);
        let mut any = false;
        for [x, y] in points {
            any = true;
            x_min = x_min.min(x);
            x_max = x_max.max(x);
            y_min = y_min.min(y);
            y_max = y_max.max(y);
        }
        if !any {
            return Err(TafError::DegenerateInput("no tracked joints".into()));
        }
        let (w, h) = (x_max - x_min, y_max - y_min);
        if w <= 0.0 && h <= 0.0 {
            return Err(TafError::DegenerateInput(
                "all joints at a single point; bounding box is degenerate".into(),
            ));
        }
        // Expand by the margin, in source units.
        let ex_min = x_min - BBOX_MARGIN * w;
        let ey_min = y_min - BBOX_MARGIN * h;
        let ew = w * (1.0 + 2.0 * BBOX_MARGIN);
        let eh = h * (1.0 + 2.0 * BBOX_MARGIN);
        let span_c = (grid_w - 1) as f64;
        let span_r = (grid_h - 1) as f64;
        let scale = if ew <= 0.0 {
            span_r / eh
        } else if eh <= 0.0 {
            span_c / ew
        } else {
            (span_c / ew).min(span_r / eh)
        };
        let col_offset = (span_c - ew * scale) / 2.0;
        let row_offset = (span_r - eh * scale) / 2.0;
        Ok(GridProjection {
            scale,
            row_offset,
            col_offset,
            x_min: ex_min,
            y_min: ey_min,
            y_max: ey_min + eh,
            flip_y,
        })
    }

    /// Map a source point to continuous (row, col) grid coordinates.
    #[inline]
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let col = self.col_offset + (x - self.x_min) * self.scale;
        let row = if self.flip_y {
            self.row_offset + (self.y_max - y) * self.scale
        } else {
            self.row_offset + (y - self.y_min) * self.scale
        };
        (row, col)
    }
}

/// Continuous per-frame per-joint grid coordinates.
pub type ProjectedFrames = Vec<[(f64, f64); NUM_JOINTS]>;

/// Compute the per-video projection for `seq`. Image coordinates take
/// precedence when present; otherwise world x/y are used with the vertical
/// axis flipped. The sequence must already be dense (no missing joints).
pub fn compute_projection(
    seq: &SkeletonSequence,
    grid_h: usize,
    grid_w: usize,
) -> Result<GridProjection> {
    let use_image = seq.frames.iter().all(|f| f.image.is_some());
    if use_image {
        let pts = seq
            .frames
            .iter()
            .flat_map(|f| f.image.as_ref().unwrap().iter().flatten().copied());
        GridProjection::fit(pts, grid_h, grid_w, false)
    } else {
        let pts = seq
            .frames
            .iter()
            .flat_map(|f| f.world.iter().flatten().map(|p| [p[0], p[1]]));
        GridProjection::fit(pts, grid_h, grid_w, true)
    }
}

/// Project every joint of every frame. Fails on missing joints; run
/// [`SkeletonSequence::interpolate_missing`] first.
pub fn project_to_grid(
    seq: &SkeletonSequence,
    grid_h: usize,
    grid_w: usize,
) -> Result<ProjectedFrames> {
    let proj = compute_projection(seq, grid_h, grid_w)?;
    let use_image = seq.frames.iter().all(|f| f.image.is_some());
    let mut out = Vec::with_capacity(seq.frames.len());
    for f in &seq.frames {
        let mut row = [(0.0, 0.0); NUM_JOINTS];
        for j in 0..NUM_JOINTS {
            let (x, y) = if use_image {
                let p = f.image.as_ref().unwrap()[j].ok_or_else(|| {
                    TafError::DegenerateInput(format!(
                        "missing image coordinates for joint {j} at frame {}",
                        f.frame_index
                    ))
                })?;
                (p[0], p[1])
            } else {
                let p = f.world[j].ok_or_else(|| {
                    TafError::DegenerateInput(format!(
                        "missing joint {j} at frame {}; interpolate first",
                        f.frame_index
                    ))
                })?;
                (p[0], p[1])
            };
            row[j] = proj.apply(x, y);
        }
        out.push(row);
    }
    Ok(out)
}
