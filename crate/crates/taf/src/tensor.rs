//! The accumulated multi-channel feature tensor and its binary file format.
//!
//! On disk: magic `TAF1`, little-endian u32 height, width and channel count,
//! a per-channel tag table (u32 byte length + UTF-8 tag), then
//! `channels * height * width` little-endian f32 values in channel-major
//! order.

use crate::error::{Result, TafError};
use crate::grid::Grid;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"TAF1";

/// Multi-channel feature image with per-channel semantic tags.
#[derive(Debug, Clone, PartialEq)]
pub struct TafTensor {
    pub height: usize,
    pub width: usize,
    /// One semantic tag per channel, e.g. `lwr/Ur` or `static/kf2/o+1`.
    pub tags: Vec<String>,
    /// Channel-major values, length `tags.len() * height * width`.
    pub data: Vec<f32>,
}

impl TafTensor {
    pub fn new(height: usize, width: usize) -> Self {
        TafTensor {
            height,
            width,
            tags: Vec::new(),
            data: Vec::new(),
        }
    }

    pub fn channels(&self) -> usize {
        self.tags.len()
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn push_channel(&mut self, tag: String, grid: &Grid) {
        assert_eq!(grid.height, self.height);
        assert_eq!(grid.width, self.width);
        self.tags.push(tag);
        self.data.extend_from_slice(&grid.data);
    }

    pub fn channel_by_tag(&self, tag: &str) -> Option<usize> {
        self.tags.iter().position(|t| t == tag)
    }

    /// Mirror every channel along the width axis. Channel order and tags are
    /// unchanged; left/right joint channels are deliberately not swapped.
    pub fn flip_horizontal(&self) -> TafTensor {
        let mut out = self.clone();
        flip_horizontal_into(
            &self.data,
            &mut out.data,
            self.channels(),
            self.height,
            self.width,
        );
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| TafError::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| TafError::io(path, e))
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.height as u32).to_le_bytes())?;
        w.write_all(&(self.width as u32).to_le_bytes())?;
        w.write_all(&(self.channels() as u32).to_le_bytes())?;
        for tag in &self.tags {
            w.write_all(&(tag.len() as u32).to_le_bytes())?;
            w.write_all(tag.as_bytes())?;
        }
        for &v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()
    }

    pub fn read(path: &Path) -> Result<TafTensor> {
        let file = std::fs::File::open(path).map_err(|e| TafError::io(path, e))?;
        let mut r = std::io::BufReader::new(file);
        Self::read_from(&mut r).map_err(|msg| TafError::Format(format!("{}: {msg}", path.display())))
    }

    pub fn read_from(r: &mut impl Read) -> std::result::Result<TafTensor, String> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|e| e.to_string())?;
        if &magic != MAGIC {
            return Err(format!("bad magic {magic:?}, expected TAF1"));
        }
        let height = read_u32(r)? as usize;
        let width = read_u32(r)? as usize;
        let channels = read_u32(r)? as usize;
        let mut tags = Vec::with_capacity(channels);
        for _ in 0..channels {
            let len = read_u32(r)? as usize;
            let mut buf = vec![0u8; len];
            r.read_exact(&mut buf).map_err(|e| e.to_string())?;
            tags.push(String::from_utf8(buf).map_err(|e| e.to_string())?);
        }
        let n = channels * height * width;
        let mut data = Vec::with_capacity(n);
        let mut buf = [0u8; 4];
        for _ in 0..n {
            r.read_exact(&mut buf).map_err(|e| e.to_string())?;
            data.push(f32::from_le_bytes(buf));
        }
        // must be at EOF
        if r.read(&mut buf).map_err(|e| e.to_string())? != 0 {
            return Err("trailing bytes after tensor payload".into());
        }
        Ok(TafTensor {
            height,
            width,
            tags,
            data,
        })
    }

    /// Render one channel as 8-bit grayscale: round(255 * clamp(v, 0, 1)).
    pub fn export_gray_png(&self, channel: usize, path: &Path) -> Result<()> {
        if channel >= self.channels() {
            return Err(TafError::Parameter(format!(
                "channel {channel} out of range (have {})",
                self.channels()
            )));
        }
        let ch = self.channel(channel);
        let mut img = image::GrayImage::new(self.width as u32, self.height as u32);
        for r in 0..self.height {
            for c in 0..self.width {
                let v = quantize(ch[r * self.width + c]);
                img.put_pixel(c as u32, r as u32, image::Luma([v]));
            }
        }
        img.save(path).map_err(|e| TafError::Image {
            path: path.to_path_buf(),
            source: e,
        })
    }

    /// Render a channel triple as 8-bit RGB. When `normalize` is set, all
    /// three channels are divided by their joint maximum first (for
    /// unbounded U triples); N triples are exported raw.
    pub fn export_rgb_png(
        &self,
        triple: [usize; 3],
        normalize: bool,
        path: &Path,
    ) -> Result<()> {
        for &c in &triple {
            if c >= self.channels() {
                return Err(TafError::Parameter(format!(
                    "channel {c} out of range (have {})",
                    self.channels()
                )));
            }
        }
        let chans = [
            self.channel(triple[0]),
            self.channel(triple[1]),
            self.channel(triple[2]),
        ];
        let scale = if normalize {
            let m = chans
                .iter()
                .flat_map(|ch| ch.iter().copied())
                .fold(0.0f32, f32::max);
            if m > 0.0 {
                1.0 / m
            } else {
                1.0
            }
        } else {
            1.0
        };
        let mut img = image::RgbImage::new(self.width as u32, self.height as u32);
        for r in 0..self.height {
            for c in 0..self.width {
                let px = [
                    quantize(chans[0][r * self.width + c] * scale),
                    quantize(chans[1][r * self.width + c] * scale),
                    quantize(chans[2][r * self.width + c] * scale),
                ];
                img.put_pixel(c as u32, r as u32, image::Rgb(px));
            }
        }
        img.save(path).map_err(|e| TafError::Image {
            path: path.to_path_buf(),
            source: e,
        })
    }
}

#[inline]
fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn read_u32(r: &mut impl Read) -> std::result::Result<u32, String> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf).map_err(|e| e.to_string())?;
    Ok(u32::from_le_bytes(buf))
}

pub(crate) fn flip_horizontal_into(
    src: &[f32],
    dst: &mut [f32],
    channels: usize,
    height: usize,
    width: usize,
) {
    assert_eq!(src.len(), channels * height * width);
    assert_eq!(dst.len(), src.len());
    for c in 0..channels {
        for r in 0..height {
            let base = (c * height + r) * width;
            for col in 0..width {
                dst[base + width - 1 - col] = src[base + col];
            }
        }
    }
}
