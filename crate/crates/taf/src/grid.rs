//! Row-major 2D raster shared by heatmaps, accumulated channels and masks.

use crate::error::{Result, TafError};
use std::path::Path;

/// Heatmap grid height fixed by the feature layout (rows).
pub const GRID_H: usize = 64;
/// Heatmap grid width fixed by the feature layout (columns).
pub const GRID_W: usize = 116;

/// Dense row-major `f32` raster.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Grid {
    pub fn zeros(height: usize, width: usize) -> Self {
        Grid {
            height,
            width,
            data: vec![0.0; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), height * width, "grid data length mismatch");
        Grid {
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f32) {
        self.data[row * self.width + col] = value;
    }

    pub fn max_value(&self) -> f32 {
        self.data.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }

    /// Mirror along the width axis (col -> width-1-col).
    pub fn flipped_horizontal(&self) -> Grid {
        let mut out = Grid::zeros(self.height, self.width);
        for r in 0..self.height {
            let src = &self.data[r * self.width..(r + 1) * self.width];
            let dst = &mut out.data[r * self.width..(r + 1) * self.width];
            for (c, &v) in src.iter().enumerate() {
                dst[self.width - 1 - c] = v;
            }
        }
        out
    }

    /// Pointwise maximum with another grid of the same shape.
    pub fn max_with(&mut self, other: &Grid) {
        assert_eq!(self.data.len(), other.data.len());
        for (a, &b) in self.data.iter_mut().zip(other.data.iter()) {
            if b > *a {
                *a = b;
            }
        }
    }

    /// 8-bit grayscale PNG export: value * 255 rounded to nearest, clamped.
    pub fn save_gray_png(&self, path: &Path) -> Result<()> {
        let mut img = image::GrayImage::new(self.width as u32, self.height as u32);
        for r in 0..self.height {
            for c in 0..self.width {
                let v = (self.get(r, c).clamp(0.0, 1.0) * 255.0).round() as u8;
                img.put_pixel(c as u32, r as u32, image::Luma([v]));
            }
        }
        img.save(path).map_err(|e| TafError::Image {
            path: path.to_path_buf(),
            source: e,
        })
    }
}
