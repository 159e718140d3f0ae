//! Depth-adapted convolution and average pooling, with their regular-grid
//! counterparts.
//!
//! Every output element is accumulated in 64-bit in a fixed order (input
//! channel, then tap) and cast to 32-bit once, so results do not depend on
//! how rows are split across workers. With an all-zero offset field the
//! adapted operators reproduce the regular ones exactly.

use std::time::{Duration, Instant};

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::KernelSpec;
use crate::tensor::{BilinearGrad, FeatureTensor, OffsetField};

/// Convolution weights laid out `out x in x size x size`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvWeights {
    out_channels: usize,
    in_channels: usize,
    size: usize,
    data: Vec<f32>,
}

impl ConvWeights {
    pub fn new(out_channels: usize, in_channels: usize, size: usize, data: Vec<f32>) -> Result<Self> {
        if out_channels == 0 || in_channels == 0 || size == 0 {
            return Err(Error::shape("weight dimensions must be positive"));
        }
        let n = out_channels * in_channels * size * size;
        if data.len() != n {
            return Err(Error::shape(format!(
                "weights {out_channels}x{in_channels}x{size}x{size} need {n} values, got {}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("non-finite weight".into()));
        }
        Ok(Self {
            out_channels,
            in_channels,
            size,
            data,
        })
    }

    pub fn zeros(out_channels: usize, in_channels: usize, size: usize) -> Self {
        Self {
            out_channels,
            in_channels,
            size,
            data: vec![0.0; out_channels * in_channels * size * size],
        }
    }

    /// Uniform in `±1/sqrt(fan_in)`.
    pub fn random(out_channels: usize, in_channels: usize, size: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / ((in_channels * size * size) as f32).sqrt();
        let n = out_channels * in_channels * size * size;
        Self {
            out_channels,
            in_channels,
            size,
            data: (0..n).map(|_| rng.random_range(-bound..bound)).collect(),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn taps(&self) -> usize {
        self.size * self.size
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn parameter_count(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn get(&self, o: usize, i: usize, tap: usize) -> f32 {
        self.data[(o * self.in_channels + i) * self.taps() + tap]
    }
}

/// Learnable parameter count of a convolution layer. The offsets carry no
/// parameters, so the figure is the same for the regular and adapted forms.
pub fn conv_parameter_count(in_channels: usize, out_channels: usize, size: usize, bias: bool) -> usize {
    out_channels * in_channels * size * size + if bias { out_channels } else { 0 }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct OpSummary {
    /// Output pixels whose every tap landed entirely in the zero padding.
    pub degenerate_pixels: usize,
    /// Fraction of taps whose bilinear support touches the zero padding.
    pub out_of_bounds_fraction: f64,
    #[serde(skip)]
    pub elapsed: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    pub grad_x: FeatureTensor,
    pub grad_w: ConvWeights,
}

fn check_conv(x: &FeatureTensor, w: &ConvWeights, spec: &KernelSpec) -> Result<(usize, usize)> {
    if w.in_channels != x.channels() {
        return Err(Error::shape(format!(
            "weights expect {} input channels, tensor has {}",
            w.in_channels,
            x.channels()
        )));
    }
    if w.size != spec.size {
        return Err(Error::shape(format!(
            "weights are {0}x{0} but the kernel spec has size {1}",
            w.size, spec.size
        )));
    }
    spec.output_dims(x.height(), x.width())
}

fn check_offsets(offsets: &OffsetField, spec: &KernelSpec, dims: (usize, usize)) -> Result<()> {
    if offsets.taps() != spec.taps() {
        return Err(Error::shape(format!(
            "offset field has {} taps, kernel size {} needs {}",
            offsets.taps(),
            spec.size,
            spec.taps()
        )));
    }
    if (offsets.height(), offsets.width()) != dims {
        return Err(Error::shape(format!(
            "offset field is {}x{}, operator output is {}x{}",
            offsets.height(),
            offsets.width(),
            dims.0,
            dims.1
        )));
    }
    Ok(())
}

/// Bilinear weights of every tap for output pixel `(oy, ox)`.
fn tap_weights(
    x: &FeatureTensor,
    offsets: &OffsetField,
    spec: &KernelSpec,
    oy: usize,
    ox: usize,
    out: &mut Vec<BilinearGrad>,
) {
    out.clear();
    let (cy, cx) = spec.center_of(oy, ox);
    for t in 0..spec.taps() {
        let (dy, dx) = offsets.get(t, oy, ox);
        let (ty, tx) = spec.tap_offset(t);
        let v = (cy + ty) as f64 + dy as f64;
        let u = (cx + tx) as f64 + dx as f64;
        out.push(BilinearGrad::at(x.height(), x.width(), u, v));
    }
}

#[derive(Default)]
struct Coverage {
    outside_taps: usize,
    dead_pixels: usize,
}

impl Coverage {
    fn record(&mut self, taps: &[BilinearGrad]) {
        let mut dead = 0;
        for g in taps {
            let s = g.weight_sum();
            if s < 1.0 - 1e-12 {
                self.outside_taps += 1;
            }
            if s == 0.0 {
                dead += 1;
            }
        }
        if dead == taps.len() {
            self.dead_pixels += 1;
        }
    }

    fn merge(&mut self, o: Coverage) {
        self.outside_taps += o.outside_taps;
        self.dead_pixels += o.dead_pixels;
    }

    fn summary(self, total_taps: usize, start: Instant) -> OpSummary {
        OpSummary {
            degenerate_pixels: self.dead_pixels,
            out_of_bounds_fraction: if total_taps == 0 {
                0.0
            } else {
                self.outside_taps as f64 / total_taps as f64
            },
            elapsed: start.elapsed(),
        }
    }
}

/// Scatters per-row `[x][c]` results into a channel-major tensor.
fn assemble(rows: Vec<Vec<f64>>, channels: usize, h: usize, w: usize) -> FeatureTensor {
    let mut out = FeatureTensor::zeros(channels, h, w);
    let data = out.data_mut();
    for (y, row) in rows.into_iter().enumerate() {
        for x in 0..w {
            for c in 0..channels {
                data[(c * h + y) * w + x] = row[x * channels + c] as f32;
            }
        }
    }
    out
}

/// Direct convolution over the regular dilated grid with zero padding.
pub fn standard_conv(x: &FeatureTensor, w: &ConvWeights, spec: &KernelSpec) -> Result<FeatureTensor> {
    let (oh, ow) = check_conv(x, w, spec)?;
    let co = w.out_channels;
    let taps = spec.taps();
    let rows: Vec<Vec<f64>> = (0..oh)
        .into_par_iter()
        .map(|oy| {
            let mut acc = vec![0.0f64; ow * co];
            for ox in 0..ow {
                let (cy, cx) = spec.center_of(oy, ox);
                let a = &mut acc[ox * co..(ox + 1) * co];
                for ci in 0..w.in_channels {
                    for t in 0..taps {
                        let (ty, tx) = spec.tap_offset(t);
                        let s = x.get_padded(ci, cy + ty, cx + tx) as f64;
                        for (o, slot) in a.iter_mut().enumerate() {
                            *slot += w.get(o, ci, t) as f64 * s;
                        }
                    }
                }
            }
            acc
        })
        .collect();
    Ok(assemble(rows, co, oh, ow))
}

/// Convolution whose taps are displaced by `offsets` and read with
/// bilinear interpolation.
pub fn za_conv_forward(
    x: &FeatureTensor,
    w: &ConvWeights,
    offsets: &OffsetField,
    spec: &KernelSpec,
) -> Result<(FeatureTensor, OpSummary)> {
    let start = Instant::now();
    let (oh, ow) = check_conv(x, w, spec)?;
    check_offsets(offsets, spec, (oh, ow))?;
    let co = w.out_channels;
    let taps = spec.taps();
    let rows: Vec<(Vec<f64>, Coverage)> = (0..oh)
        .into_par_iter()
        .map(|oy| {
            let mut acc = vec![0.0f64; ow * co];
            let mut coverage = Coverage::default();
            let mut weights = Vec::with_capacity(taps);
            for ox in 0..ow {
                tap_weights(x, offsets, spec, oy, ox, &mut weights);
                coverage.record(&weights);
                let a = &mut acc[ox * co..(ox + 1) * co];
                for ci in 0..w.in_channels {
                    for (t, g) in weights.iter().enumerate() {
                        let s = g.sample(x, ci);
                        for (o, slot) in a.iter_mut().enumerate() {
                            *slot += w.get(o, ci, t) as f64 * s;
                        }
                    }
                }
            }
            (acc, coverage)
        })
        .collect();
    let mut coverage = Coverage::default();
    let mut data = Vec::with_capacity(oh);
    for (row, c) in rows {
        coverage.merge(c);
        data.push(row);
    }
    Ok((
        assemble(data, co, oh, ow),
        coverage.summary(oh * ow * taps, start),
    ))
}

/// Sampled input columns `[in_channel * taps + tap][pixel]`.
fn gather_columns(
    x: &FeatureTensor,
    offsets: &OffsetField,
    spec: &KernelSpec,
    oh: usize,
    ow: usize,
) -> (Vec<Vec<f64>>, Vec<BilinearGrad>, Coverage) {
    let taps = spec.taps();
    let per_row: Vec<(Vec<BilinearGrad>, Coverage)> = (0..oh)
        .into_par_iter()
        .map(|oy| {
            let mut all = Vec::with_capacity(ow * taps);
            let mut coverage = Coverage::default();
            let mut weights = Vec::with_capacity(taps);
            for ox in 0..ow {
                tap_weights(x, offsets, spec, oy, ox, &mut weights);
                coverage.record(&weights);
                all.extend_from_slice(&weights);
            }
            (all, coverage)
        })
        .collect();
    let mut coverage = Coverage::default();
    let mut grads = Vec::with_capacity(oh * ow * taps);
    for (g, c) in per_row {
        coverage.merge(c);
        grads.extend(g);
    }
    let pixels = oh * ow;
    let columns: Vec<Vec<f64>> = (0..x.channels() * taps)
        .into_par_iter()
        .map(|row| {
            let (ci, t) = (row / taps, row % taps);
            (0..pixels).map(|p| grads[p * taps + t].sample(x, ci)).collect()
        })
        .collect();
    (columns, grads, coverage)
}

/// Same result as [`za_conv_forward`], computed by first gathering all
/// deformed samples into a column matrix and then reducing against the
/// weights.
pub fn za_conv_forward_gathered(
    x: &FeatureTensor,
    w: &ConvWeights,
    offsets: &OffsetField,
    spec: &KernelSpec,
) -> Result<(FeatureTensor, OpSummary)> {
    let start = Instant::now();
    let (oh, ow) = check_conv(x, w, spec)?;
    check_offsets(offsets, spec, (oh, ow))?;
    let taps = spec.taps();
    let (columns, _, coverage) = gather_columns(x, offsets, spec, oh, ow);
    let pixels = oh * ow;
    let planes: Vec<Vec<f32>> = (0..w.out_channels)
        .into_par_iter()
        .map(|o| {
            let mut acc = vec![0.0f64; pixels];
            for (row, col) in columns.iter().enumerate() {
                let wv = w.get(o, row / taps, row % taps) as f64;
                for (a, s) in acc.iter_mut().zip(col) {
                    *a += wv * s;
                }
            }
            acc.into_iter().map(|v| v as f32).collect()
        })
        .collect();
    let out = FeatureTensor::new(w.out_channels, oh, ow, planes.concat())?;
    Ok((out, coverage.summary(pixels * taps, start)))
}

/// Gradients of the adapted convolution with respect to its input and
/// weights. The offsets are treated as constants.
pub fn za_conv_backward(
    x: &FeatureTensor,
    w: &ConvWeights,
    offsets: &OffsetField,
    spec: &KernelSpec,
    grad_out: &FeatureTensor,
) -> Result<ConvGrads> {
    let (oh, ow) = check_conv(x, w, spec)?;
    check_offsets(offsets, spec, (oh, ow))?;
    if (grad_out.channels(), grad_out.height(), grad_out.width()) != (w.out_channels, oh, ow) {
        return Err(Error::shape(format!(
            "output gradient is {}x{}x{}, forward output is {}x{oh}x{ow}",
            grad_out.channels(),
            grad_out.height(),
            grad_out.width(),
            w.out_channels
        )));
    }
    let taps = spec.taps();
    let pixels = oh * ow;
    let (columns, grads, _) = gather_columns(x, offsets, spec, oh, ow);

    let grad_w: Vec<Vec<f32>> = (0..w.out_channels)
        .into_par_iter()
        .map(|o| {
            let go = grad_out.plane(o);
            columns
                .iter()
                .map(|col| {
                    col.iter()
                        .zip(go)
                        .map(|(s, g)| s * *g as f64)
                        .sum::<f64>() as f32
                })
                .collect()
        })
        .collect();

    let (h, wd) = (x.height(), x.width());
    let grad_x: Vec<Vec<f32>> = (0..x.channels())
        .into_par_iter()
        .map(|ci| {
            let mut acc = vec![0.0f64; h * wd];
            for p in 0..pixels {
                for t in 0..taps {
                    let mut g = 0.0f64;
                    for o in 0..w.out_channels {
                        g += grad_out.plane(o)[p] as f64 * w.get(o, ci, t) as f64;
                    }
                    if g == 0.0 {
                        continue;
                    }
                    for c in &grads[p * taps + t].corners {
                        if c.weight != 0.0 {
                            acc[c.row as usize * wd + c.col as usize] += g * c.weight;
                        }
                    }
                }
            }
            acc.into_iter().map(|v| v as f32).collect()
        })
        .collect();

    Ok(ConvGrads {
        grad_x: FeatureTensor::new(x.channels(), h, wd, grad_x.concat())?,
        grad_w: ConvWeights::new(w.out_channels, w.in_channels, w.size, grad_w.concat())?,
    })
}

/// Average over the regular grid; the divisor is always the full tap count.
pub fn standard_avg_pool(x: &FeatureTensor, spec: &KernelSpec) -> Result<FeatureTensor> {
    let (oh, ow) = spec.output_dims(x.height(), x.width())?;
    let (c, taps) = (x.channels(), spec.taps());
    let rows: Vec<Vec<f64>> = (0..oh)
        .into_par_iter()
        .map(|oy| {
            let mut acc = vec![0.0f64; ow * c];
            for ox in 0..ow {
                let (cy, cx) = spec.center_of(oy, ox);
                for ch in 0..c {
                    let mut s = 0.0f64;
                    for t in 0..taps {
                        let (ty, tx) = spec.tap_offset(t);
                        s += x.get_padded(ch, cy + ty, cx + tx) as f64;
                    }
                    acc[ox * c + ch] = s / taps as f64;
                }
            }
            acc
        })
        .collect();
    Ok(assemble(rows, c, oh, ow))
}

/// Average over the deformed grid. Taps that fall into the padding
/// contribute zero but still count toward the divisor.
pub fn za_avg_pool(
    x: &FeatureTensor,
    offsets: &OffsetField,
    spec: &KernelSpec,
) -> Result<(FeatureTensor, OpSummary)> {
    let start = Instant::now();
    let (oh, ow) = spec.output_dims(x.height(), x.width())?;
    check_offsets(offsets, spec, (oh, ow))?;
    let (c, taps) = (x.channels(), spec.taps());
    let rows: Vec<(Vec<f64>, Coverage)> = (0..oh)
        .into_par_iter()
        .map(|oy| {
            let mut acc = vec![0.0f64; ow * c];
            let mut coverage = Coverage::default();
            let mut weights = Vec::with_capacity(taps);
            for ox in 0..ow {
                tap_weights(x, offsets, spec, oy, ox, &mut weights);
                coverage.record(&weights);
                for ch in 0..c {
                    let s: f64 = weights.iter().map(|g| g.sample(x, ch)).sum();
                    acc[ox * c + ch] = s / taps as f64;
                }
            }
            (acc, coverage)
        })
        .collect();
    let mut coverage = Coverage::default();
    let mut data = Vec::with_capacity(oh);
    for (row, cov) in rows {
        coverage.merge(cov);
        data.push(row);
    }
    Ok((assemble(data, c, oh, ow), coverage.summary(oh * ow * taps, start)))
}
