//! Ingestion of externally produced hand segmentation masks and the static
//! subunit channels appended to a feature tensor.
//!
//! Mask input is one 8-bit single-channel PNG per frame, named `%06d.png`,
//! with label values 0 = background, 1 = right hand, 2 = left hand.

use crate::error::{Result, TafError};
use crate::grid::Grid;
use crate::keyframes::KeyframeSet;
use crate::tensor::TafTensor;
use std::path::Path;

pub const LABEL_BACKGROUND: u8 = 0;
pub const LABEL_RIGHT: u8 = 1;
pub const LABEL_LEFT: u8 = 2;

/// Binary left/right hand masks for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct HandMaskFrame {
    pub frame_index: usize,
    pub left: Grid,
    pub right: Grid,
}

/// Which static representation is built from the masks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StaticVariant {
    /// One channel per keyframe.
    Keyframe,
    /// Five channels per keyframe: frames k-2..k+2, clamped to the video.
    Keyshot,
}

impl StaticVariant {
    pub fn channels_for(self, k: usize) -> usize {
        match self {
            StaticVariant::Keyframe => k,
            StaticVariant::Keyshot => 5 * k,
        }
    }
}

/// Binary 64x116 channels ready to append to a tensor.
#[derive(Debug, Clone)]
pub struct StaticChannels {
    pub variant: StaticVariant,
    pub tags: Vec<String>,
    pub channels: Vec<Grid>,
}

/// Decode one label image into left/right binary masks.
pub fn split_label_image(img: &image::GrayImage, frame_index: usize) -> Result<HandMaskFrame> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut left = Grid::zeros(h, w);
    let mut right = Grid::zeros(h, w);
    for (x, y, px) in img.enumerate_pixels() {
        let i = y as usize * w + x as usize;
        match px.0[0] {
            LABEL_BACKGROUND => {}
            LABEL_RIGHT => right.data[i] = 1.0,
            LABEL_LEFT => left.data[i] = 1.0,
            other => {
                return Err(TafError::Format(format!(
                    "unknown label value {other} at ({x}, {y}) in frame {frame_index}"
                )))
            }
        }
    }
    Ok(HandMaskFrame {
        frame_index,
        left,
        right,
    })
}

/// Load `000000.png`, `000001.png`, ... from a directory. Frame indices must
/// be contiguous from zero; a missing index is a gap error.
pub fn load_masks(dir: &Path) -> Result<Vec<HandMaskFrame>> {
    let mut count = 0usize;
    while dir.join(format!("{count:06}.png")).exists() {
        count += 1;
    }
    if count == 0 {
        return Err(TafError::Gap(format!(
            "no mask frames found in {} (expected 000000.png, ...)",
            dir.display()
        )));
    }
    // anything beyond the contiguous prefix means a hole in the numbering
    if let Some(stray) = find_stray_index(dir, count)? {
        return Err(TafError::Gap(format!(
            "mask frame {stray:06}.png exists but {:06}.png is missing in {}",
            count,
            dir.display()
        )));
    }
    let mut frames = Vec::with_capacity(count);
    for i in 0..count {
        let path = dir.join(format!("{i:06}.png"));
        let img = image::open(&path)
            .map_err(|e| TafError::Image {
                path: path.clone(),
                source: e,
            })?
            .into_luma8();
        frames.push(split_label_image(&img, i)?);
    }
    Ok(frames)
}

fn find_stray_index(dir: &Path, count: usize) -> Result<Option<usize>> {
    for entry in std::fs::read_dir(dir).map_err(|e| TafError::io(dir, e))? {
        let entry = entry.map_err(|e| TafError::io(dir, e))?;
        let name = entry.file_name();
        let Some(name) = name.to_str() else { continue };
        if let Some(stem) = name.strip_suffix(".png") {
            if let Ok(idx) = stem.parse::<usize>() {
                if idx >= count {
                    return Ok(Some(idx));
                }
            }
        }
    }
    Ok(None)
}

/// Area-weighted downscale to the target size, thresholded at 0.5.
///
/// Each output cell integrates the source mask over the exactly
/// corresponding rectangle, so the contract is resolution-independent and
/// free of nearest-neighbor aliasing.
pub fn resize_binarize(mask: &Grid, target_h: usize, target_w: usize) -> Grid {
    assert!(mask.height > 0 && mask.width > 0, "nonempty mask required");
    let mut out = Grid::zeros(target_h, target_w);
    let sy = mask.height as f64 / target_h as f64;
    let sx = mask.width as f64 / target_w as f64;
    for tr in 0..target_h {
        let y0 = tr as f64 * sy;
        let y1 = (tr + 1) as f64 * sy;
        for tc in 0..target_w {
            let x0 = tc as f64 * sx;
            let x1 = (tc + 1) as f64 * sx;
            let mut covered = 0.0f64;
            let r0 = y0.floor() as usize;
            let r1 = (y1.ceil() as usize).min(mask.height);
            let c0 = x0.floor() as usize;
            let c1 = (x1.ceil() as usize).min(mask.width);
            for r in r0..r1 {
                let ry0 = (r as f64).max(y0);
                let ry1 = ((r + 1) as f64).min(y1);
                if ry1 <= ry0 {
                    continue;
                }
                for c in c0..c1 {
                    let rx0 = (c as f64).max(x0);
                    let rx1 = ((c + 1) as f64).min(x1);
                    if rx1 <= rx0 {
                        continue;
                    }
                    covered += (ry1 - ry0) * (rx1 - rx0) * mask.get(r, c) as f64;
                }
            }
            let mean = covered / ((y1 - y0) * (x1 - x0));
            out.set(tr, tc, if mean >= 0.5 { 1.0 } else { 0.0 });
        }
    }
    out
}

/// Build static channels for the detected keyframes. Left and right masks
/// are unioned into one channel per frame slot so channel counts stay K and
/// 5K. Keyshot offsets clamp to the valid frame range.
pub fn build_static_channels(
    masks: &[HandMaskFrame],
    keyframes: &KeyframeSet,
    variant: StaticVariant,
    target_h: usize,
    target_w: usize,
) -> Result<StaticChannels> {
    let t_len = masks.len();
    let mut channels = Vec::new();
    let mut tags = Vec::new();
    for (i, &kf) in keyframes.indices.iter().enumerate() {
        if kf >= t_len {
            return Err(TafError::Coverage(format!(
                "keyframe {kf} beyond mask sequence of {t_len} frames"
            )));
        }
        match variant {
            StaticVariant::Keyframe => {
                channels.push(union_resized(&masks[kf], target_h, target_w));
                tags.push(format!("static/kf{i}"));
            }
            StaticVariant::Keyshot => {
                for off in -2i64..=2 {
                    let f = (kf as i64 + off).clamp(0, t_len as i64 - 1) as usize;
                    channels.push(union_resized(&masks[f], target_h, target_w));
                    tags.push(format!("static/kf{i}/o{off:+}"));
                }
            }
        }
    }
    Ok(StaticChannels {
        variant,
        tags,
        channels,
    })
}

fn union_resized(frame: &HandMaskFrame, target_h: usize, target_w: usize) -> Grid {
    let mut union = frame.left.clone();
    union.max_with(&frame.right);
    resize_binarize(&union, target_h, target_w)
}

/// Append the static channels after all joint channels. Pre-existing
/// channels are not touched or reordered.
pub fn append_static(taf: &TafTensor, sc: &StaticChannels) -> Result<TafTensor> {
    let mut out = taf.clone();
    for (tag, grid) in sc.tags.iter().zip(sc.channels.iter()) {
        if grid.height != taf.height || grid.width != taf.width {
            return Err(TafError::Shape(format!(
                "static channel is {}x{}, tensor is {}x{}",
                grid.height, grid.width, taf.height, taf.width
            )));
        }
        out.push_channel(tag.clone(), grid);
    }
    Ok(out)
}
