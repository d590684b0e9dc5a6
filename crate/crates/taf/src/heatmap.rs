//! Per-frame Gaussian joint heatmaps and the aggregated background channel.

use crate::error::{Result, TafError};
use crate::grid::Grid;
use crate::skeleton::{ProjectedFrames, NUM_CHANNELS, NUM_JOINTS};

/// Default Gaussian std in grid pixels (about 3% of the grid width).
pub const DEFAULT_SIGMA: f64 = 2.0;

/// Support radius in sigmas beyond which the Gaussian is truncated to zero.
const TRUNCATION_SIGMAS: f64 = 4.0;

/// One frame of joint heatmaps: channels 0..9 are the individual joints,
/// channel 10 is their pointwise maximum.
#[derive(Debug, Clone)]
pub struct HeatmapFrame {
    pub channels: Vec<Grid>,
}

/// All frames of a video plus the sigma they were rendered with.
#[derive(Debug, Clone)]
pub struct HeatmapStack {
    pub frames: Vec<HeatmapFrame>,
    pub sigma: f64,
}

impl HeatmapStack {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Render a unit-peak Gaussian centered at continuous (row, col).
///
/// Values are exp(-d^2 / (2 sigma^2)) truncated to zero beyond 4 sigma and
/// then normalized so the cell nearest the center holds exactly 1.0.
pub fn render_gaussian(
    center: (f64, f64),
    sigma: f64,
    grid_h: usize,
    grid_w: usize,
) -> Result<Grid> {
    if !(sigma > 0.0) {
        return Err(TafError::Parameter(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    let (cr, cc) = center;
    if !(cr >= 0.0 && cr < grid_h as f64 && cc >= 0.0 && cc < grid_w as f64) {
        return Err(TafError::Parameter(format!(
            "center ({cr}, {cc}) outside {grid_h}x{grid_w} grid"
        )));
    }
    let mut grid = Grid::zeros(grid_h, grid_w);
    let radius = TRUNCATION_SIGMAS * sigma;
    let r0 = ((cr - radius).ceil().max(0.0)) as usize;
    let r1 = ((cr + radius).floor().min((grid_h - 1) as f64)) as usize;
    let c0 = ((cc - radius).ceil().max(0.0)) as usize;
    let c1 = ((cc + radius).floor().min((grid_w - 1) as f64)) as usize;
    let inv = 1.0 / (2.0 * sigma * sigma);
    let r2max = radius * radius;
    let mut peak = 0.0f64;
    for r in r0..=r1 {
        let dr = r as f64 - cr;
        for c in c0..=c1 {
            let dc = c as f64 - cc;
            let d2 = dr * dr + dc * dc;
            if d2 <= r2max {
                let v = (-d2 * inv).exp();
                if v > peak {
                    peak = v;
                }
                grid.set(r, c, v as f32);
            }
        }
    }
    // The nearest cell to an in-bounds center is always inside the window,
    // so peak > 0 here.
    let norm = (1.0 / peak) as f32;
    for v in &mut grid.data {
        *v *= norm;
    }
    Ok(grid)
}

/// Render the 11-channel heatmap frame for one set of projected joints.
pub fn render_frame(
    joints: &[(f64, f64); NUM_JOINTS],
    sigma: f64,
    grid_h: usize,
    grid_w: usize,
) -> Result<HeatmapFrame> {
    let mut channels = Vec::with_capacity(NUM_CHANNELS);
    let mut background = Grid::zeros(grid_h, grid_w);
    for &center in joints.iter() {
        let g = render_gaussian(center, sigma, grid_h, grid_w)?;
        background.max_with(&g);
        channels.push(g);
    }
    channels.push(background);
    Ok(HeatmapFrame { channels })
}

/// Render the whole stack for a projected sequence.
pub fn render_stack(
    projected: &ProjectedFrames,
    sigma: f64,
    grid_h: usize,
    grid_w: usize,
) -> Result<HeatmapStack> {
    let frames = projected
        .iter()
        .map(|joints| render_frame(joints, sigma, grid_h, grid_w))
        .collect::<Result<Vec<_>>>()?;
    Ok(HeatmapStack { frames, sigma })
}
