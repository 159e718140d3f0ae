//! JSON reports written next to every output file.

use std::fs;
use std::path::Path;

use serde::Serialize;
use zacn_core::harness::percentile;
use zacn_core::{KernelSpec, OffsetField};

use crate::commands::CliError;

#[derive(Debug, Serialize)]
pub struct Dims {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

/// Nearest-rank percentiles of per-tap displacement lengths in pixels.
#[derive(Debug, Serialize)]
pub struct Magnitudes {
    pub p50: f64,
    pub p90: f64,
    pub p99: f64,
    pub max: f64,
}

impl Magnitudes {
    pub fn of(field: &OffsetField) -> Self {
        let (h, w) = (field.height(), field.width());
        let mut lengths = Vec::with_capacity(field.taps() * h * w);
        for t in 0..field.taps() {
            for y in 0..h {
                for x in 0..w {
                    let (dy, dx) = field.get(t, y, x);
                    lengths.push((dy as f64).hypot(dx as f64));
                }
            }
        }
        lengths.sort_by(f64::total_cmp);
        Self {
            p50: percentile(&lengths, 0.5),
            p90: percentile(&lengths, 0.9),
            p99: percentile(&lengths, 0.99),
            max: *lengths.last().unwrap_or(&0.0),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct OffsetsReport {
    pub depth_height: usize,
    pub depth_width: usize,
    pub kernel: KernelSpec,
    pub output: Dims,
    pub degenerate_pixels: usize,
    pub total_pixels: usize,
    pub max_abs_offset: f32,
    pub magnitude: Magnitudes,
}

#[derive(Debug, Serialize)]
pub struct OperatorReport {
    pub operator: &'static str,
    pub kernel: KernelSpec,
    pub input: Dims,
    pub output: Dims,
    /// Absent for the regular grid, which never leaves the padded input.
    pub degenerate_pixels: Option<usize>,
    pub out_of_bounds_fraction: Option<f64>,
    pub parameters: Option<usize>,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::io(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}
