//! Temporal accumulative features for isolated sign-gesture recognition.
//!
//! The pipeline turns skeleton sequences into per-frame joint heatmaps,
//! accumulates them over time under a baseline multi-channel scheme or a
//! hue-based HSV colorization, optionally segments videos into dynamic
//! subunits at detected keyframes and appends static hand-mask channels,
//! and classifies the resulting tensors with a small from-scratch CNN.

pub mod colorize;
pub mod error;
pub mod grid;
pub mod heatmap;
pub mod hsv;
pub mod keyframes;
pub mod masks;
pub mod skeleton;
pub mod tensor;

pub mod nn;
pub mod synth;

pub use error::{Result, TafError};
