//! Dense containers and the bilinear sampling kernel shared by the operators.
//!
//! All spatial grids are stored channel-major then row-major: element
//! `(c, y, x)` lives at `(c * height + y) * width + x`.

use crate::error::{Error, Result};

/// A `channels x height x width` grid of 32-bit values.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl FeatureTensor {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::shape(format!(
                "feature tensor dimensions must be positive, got {channels}x{height}x{width}"
            )));
        }
        if data.len() != channels * height * width {
            return Err(Error::shape(format!(
                "feature tensor {channels}x{height}x{width} needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Format(format!("non-finite feature value at index {i}")));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    /// Value at an integer location, zero outside the grid.
    #[inline]
    pub fn get_padded(&self, c: usize, y: isize, x: isize) -> f32 {
        if y < 0 || x < 0 || y as usize >= self.height || x as usize >= self.width {
            0.0
        } else {
            self.get(c, y as usize, x as usize)
        }
    }
}

/// Single-channel metric depth. Values `<= 0` or non-finite mark missing
/// measurements and are kept as-is.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl DepthMap {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::shape(format!(
                "depth map dimensions must be positive, got {height}x{width}"
            )));
        }
        if data.len() != height * width {
            return Err(Error::shape(format!(
                "depth map {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn constant(height: usize, width: usize, z: f32) -> Self {
        Self::from_fn(height, width, |_, _| z)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.width + x]
    }

    /// Depth at `(y, x)` if the measurement is usable.
    #[inline]
    pub fn valid(&self, y: usize, x: usize) -> Option<f64> {
        let z = self.get(y, x);
        is_valid_depth(z).then_some(z as f64)
    }

    /// Every value multiplied by `s`.
    pub fn scaled(&self, s: f32) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|z| z * s).collect(),
        }
    }
}

#[inline]
pub fn is_valid_depth(z: f32) -> bool {
    z.is_finite() && z > 0.0
}

/// Per-pixel sampling displacements, `2 * taps` channels laid out as
/// `(dy, dx)` pairs for each tap in row-major kernel order.
#[derive(Debug, Clone, PartialEq)]
pub struct OffsetField {
    taps: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl OffsetField {
    pub fn new(taps: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if taps == 0 || height == 0 || width == 0 {
            return Err(Error::shape(format!(
                "offset field dimensions must be positive, got {taps} taps over {height}x{width}"
            )));
        }
        if data.len() != 2 * taps * height * width {
            return Err(Error::shape(format!(
                "offset field with {taps} taps over {height}x{width} needs {} values, got {}",
                2 * taps * height * width,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Format(format!("non-finite offset at index {i}")));
        }
        Ok(Self {
            taps,
            height,
            width,
            data,
        })
    }

    pub fn zeros(taps: usize, height: usize, width: usize) -> Self {
        Self {
            taps,
            height,
            width,
            data: vec![0.0; 2 * taps * height * width],
        }
    }

    pub fn taps(&self) -> usize {
        self.taps
    }

    pub fn channels(&self) -> usize {
        2 * self.taps
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// `(dy, dx)` of `tap` at output pixel `(y, x)`.
    #[inline]
    pub fn get(&self, tap: usize, y: usize, x: usize) -> (f32, f32) {
        let plane = self.height * self.width;
        let at = y * self.width + x;
        (
            self.data[2 * tap * plane + at],
            self.data[(2 * tap + 1) * plane + at],
        )
    }

    #[inline]
    pub fn set(&mut self, tap: usize, y: usize, x: usize, dy: f32, dx: f32) {
        let plane = self.height * self.width;
        let at = y * self.width + x;
        self.data[2 * tap * plane + at] = dy;
        self.data[(2 * tap + 1) * plane + at] = dx;
    }

    pub fn max_abs(&self) -> f32 {
        self.data.iter().fold(0.0f32, |m, v| m.max(v.abs()))
    }
}

/// One of the four integer neighbors of a fractional sampling position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Corner {
    pub row: isize,
    pub col: isize,
    /// Interpolation weight; zero when the neighbor is outside the grid.
    pub weight: f64,
}

/// Bilinear weights and partials for one sampling position.
///
/// Corner order is `(y0, x0), (y0, x1), (y1, x0), (y1, x1)` with
/// `y0 = floor(v)`, `x0 = floor(u)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BilinearGrad {
    pub corners: [Corner; 4],
    /// Partial of the corner weights with respect to the column coordinate.
    pub dweight_du: [f64; 4],
    /// Partial of the corner weights with respect to the row coordinate.
    pub dweight_dv: [f64; 4],
}

const OUTSIDE: Corner = Corner {
    row: 0,
    col: 0,
    weight: 0.0,
};

impl BilinearGrad {
    /// Weights for sampling an `height x width` grid at column `u`, row `v`.
    pub fn at(height: usize, width: usize, u: f64, v: f64) -> Self {
        let (h, w) = (height as f64, width as f64);
        if !(v > -1.0 && u > -1.0 && v < h && u < w) {
            return Self {
                corners: [OUTSIDE; 4],
                dweight_du: [0.0; 4],
                dweight_dv: [0.0; 4],
            };
        }
        let y0 = v.floor();
        let x0 = u.floor();
        let ly = v - y0;
        let lx = u - x0;
        let (hy, hx) = (1.0 - ly, 1.0 - lx);
        let (y0, x0) = (y0 as isize, x0 as isize);
        let inside = |r: isize, c: isize| r >= 0 && c >= 0 && r < height as isize && c < width as isize;

        let rows = [y0, y0, y0 + 1, y0 + 1];
        let cols = [x0, x0 + 1, x0, x0 + 1];
        let weights = [hy * hx, hy * lx, ly * hx, ly * lx];
        let du = [-hy, hy, -ly, ly];
        let dv = [-hx, -lx, hx, lx];

        let mut out = Self {
            corners: [OUTSIDE; 4],
            dweight_du: [0.0; 4],
            dweight_dv: [0.0; 4],
        };
        for k in 0..4 {
            if inside(rows[k], cols[k]) {
                out.corners[k] = Corner {
                    row: rows[k],
                    col: cols[k],
                    weight: weights[k],
                };
                out.dweight_du[k] = du[k];
                out.dweight_dv[k] = dv[k];
            }
        }
        out
    }

    /// Interpolated value of channel `c`, accumulated in 64-bit.
    #[inline]
    pub fn sample(&self, x: &FeatureTensor, c: usize) -> f64 {
        let plane = x.plane(c);
        let w = x.width();
        let mut acc = 0.0f64;
        for k in &self.corners {
            if k.weight != 0.0 {
                acc += k.weight * plane[k.row as usize * w + k.col as usize] as f64;
            }
        }
        acc
    }

    /// `(d value / du, d value / dv)` for channel `c`.
    pub fn partials(&self, x: &FeatureTensor, c: usize) -> (f64, f64) {
        let plane = x.plane(c);
        let w = x.width();
        let (mut du, mut dv) = (0.0, 0.0);
        for k in 0..4 {
            if self.dweight_du[k] != 0.0 || self.dweight_dv[k] != 0.0 {
                let corner = self.corners[k];
                let val = plane[corner.row as usize * w + corner.col as usize] as f64;
                du += self.dweight_du[k] * val;
                dv += self.dweight_dv[k] * val;
            }
        }
        (du, dv)
    }

    pub fn weight_sum(&self) -> f64 {
        self.corners.iter().map(|c| c.weight).sum()
    }

    /// True when no corner lands inside the grid.
    pub fn is_outside(&self) -> bool {
        self.corners.iter().all(|c| c.weight == 0.0)
            && self.dweight_du.iter().all(|d| *d == 0.0)
            && self.dweight_dv.iter().all(|d| *d == 0.0)
    }
}

/// Samples channel `c` of `x` at fractional column `u` and row `v` with
/// zero padding outside the grid.
pub fn bilinear_sample(x: &FeatureTensor, c: usize, u: f64, v: f64) -> f32 {
    BilinearGrad::at(x.height(), x.width(), u, v).sample(x, c) as f32
}

/// Analytic partials of [`bilinear_sample`] plus the neighbor weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleGrad {
    pub d_du: f64,
    pub d_dv: f64,
    pub weights: BilinearGrad,
}

pub fn bilinear_sample_grad(x: &FeatureTensor, c: usize, u: f64, v: f64) -> SampleGrad {
    let weights = BilinearGrad::at(x.height(), x.width(), u, v);
    let (d_du, d_dv) = weights.partials(x, c);
    SampleGrad {
        d_du,
        d_dv,
        weights,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> FeatureTensor {
        FeatureTensor::from_fn(c, h, w, |_, _, _| rng.random_range(-1.0f32..1.0))
    }

    // Straight four-neighbor formula, written independently of BilinearGrad.
    fn naive(x: &FeatureTensor, c: usize, u: f64, v: f64) -> f64 {
        let (h, w) = (x.height() as f64, x.width() as f64);
        if v <= -1.0 || u <= -1.0 || v >= h || u >= w {
            return 0.0;
        }
        let mut acc = 0.0;
        let (fy, fx) = (v.floor(), u.floor());
        for dy in 0..2 {
            for dx in 0..2 {
                let (yy, xx) = (fy + dy as f64, fx + dx as f64);
                let wy = (1.0 - (v - yy).abs()).max(0.0);
                let wx = (1.0 - (u - xx).abs()).max(0.0);
                acc += wy * wx * x.get_padded(c, yy as isize, xx as isize) as f64;
            }
        }
        acc
    }

    #[test]
    fn grid_node_returns_stored_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_tensor(&mut rng, 2, 5, 6);
        for y in 0..5 {
            for c in 0..6 {
                assert_eq!(bilinear_sample(&x, 1, c as f64, y as f64), x.get(1, y, c));
            }
        }
    }

    #[test]
    fn midpoint_is_equal_weight_average() {
        let x = FeatureTensor::new(1, 2, 2, vec![0.0, 2.0, 4.0, 6.0]).unwrap();
        assert_eq!(bilinear_sample(&x, 0, 0.5, 0.5), 3.0);
    }

    #[test]
    fn matches_naive_four_neighbor_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_tensor(&mut rng, 3, 7, 9);
        for _ in 0..1000 {
            let u = rng.random_range(-2.0..11.0);
            let v = rng.random_range(-2.0..9.0);
            let c = rng.random_range(0..3);
            let got = bilinear_sample(&x, c, u, v) as f64;
            assert!((got - naive(&x, c, u, v)).abs() <= 1e-6, "u={u} v={v}");
        }
    }

    #[test]
    fn node_weights_are_unit_on_first_corner() {
        let g = BilinearGrad::at(4, 4, 2.0, 1.0);
        let w: Vec<f64> = g.corners.iter().map(|c| c.weight).collect();
        assert_eq!(w, vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn fully_outside_has_no_weights_or_partials() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_tensor(&mut rng, 1, 4, 4);
        for (u, v) in [(-1.0, 2.0), (4.0, 1.0), (1.5, -3.0), (2.0, 4.5)] {
            let g = bilinear_sample_grad(&x, 0, u, v);
            assert!(g.weights.is_outside());
            assert_eq!((g.d_du, g.d_dv), (0.0, 0.0));
        }
    }

    #[test]
    fn partials_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_tensor(&mut rng, 1, 6, 6);
        let h = 1e-3;
        let mut checked = 0;
        while checked < 1000 {
            let u: f64 = rng.random_range(-0.9..5.9);
            let v: f64 = rng.random_range(-0.9..5.9);
            // the kernel has kinks on lattice lines
            let near = |t: f64| (t - t.round()).abs() < 1e-2;
            if near(u) || near(v) {
                continue;
            }
            let g = bilinear_sample_grad(&x, 0, u, v);
            let fd_u = (naive(&x, 0, u + h, v) - naive(&x, 0, u - h, v)) / (2.0 * h);
            let fd_v = (naive(&x, 0, u, v + h) - naive(&x, 0, u, v - h)) / (2.0 * h);
            assert!((g.d_du - fd_u).abs() <= 1e-4, "du at ({u}, {v})");
            assert!((g.d_dv - fd_v).abs() <= 1e-4, "dv at ({u}, {v})");
            checked += 1;
        }
    }

    #[test]
    fn offset_field_layout_is_dy_then_dx_per_tap() {
        let mut f = OffsetField::zeros(9, 2, 3);
        f.set(4, 1, 2, 0.25, -0.5);
        let plane = 6;
        assert_eq!(f.data()[8 * plane + 5], 0.25);
        assert_eq!(f.data()[9 * plane + 5], -0.5);
        assert_eq!(f.get(4, 1, 2), (0.25, -0.5));
    }

    #[test]
    fn constructors_reject_bad_lengths() {
        assert!(FeatureTensor::new(1, 2, 2, vec![0.0; 3]).is_err());
        assert!(DepthMap::new(2, 2, vec![1.0; 5]).is_err());
        assert!(OffsetField::new(9, 1, 1, vec![0.0; 9]).is_err());
        assert!(FeatureTensor::new(1, 1, 1, vec![f32::NAN]).is_err());
    }

    proptest! {
        #[test]
        fn weights_nonnegative_and_sum_at_most_one(u in -3.0f64..12.0, v in -3.0f64..12.0) {
            let g = BilinearGrad::at(8, 9, u, v);
            let s = g.weight_sum();
            prop_assert!(g.corners.iter().all(|c| c.weight >= 0.0));
            prop_assert!(s <= 1.0 + 1e-12);
            if u >= 0.0 && v >= 0.0 && u <= 8.0 && v <= 7.0 {
                prop_assert!((s - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn sampling_is_lipschitz(seed in 0u64..500, u in -1.5f64..6.5, v in -1.5f64..6.5,
                                 du in 0.0f64..1.0, dv in 0.0f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random_tensor(&mut rng, 1, 6, 6);
            let bound = 2.0 * x.data().iter().fold(0.0f32, |m, v| m.max(v.abs())) as f64;
            let a = bilinear_sample(&x, 0, u, v) as f64;
            let b = bilinear_sample(&x, 0, u + du, v) as f64;
            let c = bilinear_sample(&x, 0, u, v + dv) as f64;
            prop_assert!((b - a).abs() <= bound * du + 1e-6);
            prop_assert!((c - a).abs() <= bound * dv + 1e-6);
        }
    }
}
