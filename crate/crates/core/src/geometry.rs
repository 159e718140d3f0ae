//! Pinhole geometry and the depth-driven offset generator.
//!
//! For every output pixel the conventional receptive field is lifted into
//! camera space, a plane is fitted through the lifted center, a regular
//! grid is laid out on that plane and projected back into the image. The
//! offset of each tap is the difference between its projected position and
//! its position on the regular dilated grid.

pub mod sym3;

use std::ops::{Add, Sub};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::tensor::{DepthMap, OffsetField};
use sym3::{smallest_eigen, Sym3};

/// `n2² >= 1 - BASIS_EPS` is treated as a normal parallel to the camera Y axis.
pub const BASIS_EPS: f64 = 1e-6;

/// Relative size of the second eigenvalue product below which a neighborhood
/// is considered collinear.
const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

/// Camera-frame position in meters.
pub type Point3 = Vec3;

impl Vec3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, o: Self) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Self) -> Self {
        Self::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn scale(self, s: f64) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }

    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CameraIntrinsics {
    pub fu: f64,
    pub fv: f64,
    pub cu: f64,
    pub cv: f64,
}

impl CameraIntrinsics {
    pub fn new(fu: f64, fv: f64, cu: f64, cv: f64) -> Result<Self> {
        if !(fu.is_finite() && fu > 0.0 && fv.is_finite() && fv > 0.0) {
            return Err(Error::config(format!(
                "focal lengths must be positive and finite, got fu={fu} fv={fv}"
            )));
        }
        if !(cu.is_finite() && cv.is_finite()) {
            return Err(Error::config(format!(
                "principal point must be finite, got cu={cu} cv={cv}"
            )));
        }
        Ok(Self { fu, fv, cu, cv })
    }

    /// Principal point at the center of a `width x height` image.
    pub fn centered(fu: f64, fv: f64, width: usize, height: usize) -> Result<Self> {
        Self::new(
            fu,
            fv,
            (width as f64 - 1.0) / 2.0,
            (height as f64 - 1.0) / 2.0,
        )
    }
}

/// Orthonormal frame on a fitted plane, anchored at the lifted kernel center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneFrame {
    pub normal: Vec3,
    pub x_axis: Vec3,
    pub y_axis: Vec3,
    pub origin: Point3,
}

impl PlaneFrame {
    /// Builds the frame for `normal`, substituting the fixed fallback axes
    /// when the normal is parallel to the camera Y axis.
    pub fn from_normal(normal: Vec3, origin: Point3) -> Self {
        let (x_axis, y_axis) = match basis_from_normal(normal) {
            Ok(axes) => axes,
            Err(_) => fallback_basis(normal),
        };
        Self {
            normal,
            x_axis,
            y_axis,
            origin,
        }
    }
}

fn fallback_basis(normal: Vec3) -> (Vec3, Vec3) {
    let sign = if normal.y < 0.0 { -1.0 } else { 1.0 };
    (Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 0.0, -sign))
}

/// Metric spacing of the planar grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleFactors {
    pub ku: f64,
    pub kv: f64,
}

/// Square kernel geometry: `size x size` taps spaced `dilation` pixels apart.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct KernelSpec {
    pub size: usize,
    pub dilation: usize,
    pub stride: usize,
    pub padding: usize,
}

impl KernelSpec {
    pub fn new(size: usize, dilation: usize, stride: usize, padding: usize) -> Result<Self> {
        if size == 0 || size.is_multiple_of(2) {
            return Err(Error::config(format!("kernel size must be odd and >= 1, got {size}")));
        }
        if dilation == 0 {
            return Err(Error::config("dilation must be >= 1"));
        }
        if stride == 0 {
            return Err(Error::config("stride must be >= 1"));
        }
        Ok(Self {
            size,
            dilation,
            stride,
            padding,
        })
    }

    /// Stride 1 with the padding that keeps spatial size unchanged.
    pub fn same(size: usize, dilation: usize) -> Result<Self> {
        Self::new(size, dilation, 1, dilation * (size.saturating_sub(1) / 2))
    }

    pub fn taps(&self) -> usize {
        self.size * self.size
    }

    pub fn offset_channels(&self) -> usize {
        2 * self.taps()
    }

    pub fn half(&self) -> usize {
        (self.size - 1) / 2
    }

    /// Extent covered by the dilated kernel, in pixels.
    pub fn extent(&self) -> usize {
        self.dilation * (self.size - 1) + 1
    }

    pub fn output_len(&self, input: usize) -> Result<usize> {
        let padded = input + 2 * self.padding;
        if padded < self.extent() {
            return Err(Error::shape(format!(
                "input length {input} with padding {} is smaller than the kernel extent {}",
                self.padding,
                self.extent()
            )));
        }
        Ok((padded - self.extent()) / self.stride + 1)
    }

    pub fn output_dims(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        Ok((self.output_len(height)?, self.output_len(width)?))
    }

    /// Regular-grid displacement `(dy, dx)` of tap `t` from the kernel center.
    #[inline]
    pub fn tap_offset(&self, t: usize) -> (isize, isize) {
        let h = self.half() as isize;
        let d = self.dilation as isize;
        let (i, j) = ((t / self.size) as isize, (t % self.size) as isize);
        (d * (i - h), d * (j - h))
    }

    /// Input-space center `(row, col)` of the receptive field for an output
    /// pixel. Equals `stride * p_out` under same-padding.
    #[inline]
    pub fn center_of(&self, out_y: usize, out_x: usize) -> (isize, isize) {
        let shift = (self.dilation * self.half()) as isize - self.padding as isize;
        (
            (out_y * self.stride) as isize + shift,
            (out_x * self.stride) as isize + shift,
        )
    }
}

pub fn back_project(u: f64, v: f64, z: f64, k: &CameraIntrinsics) -> Result<Point3> {
    if !(z.is_finite() && z > 0.0) {
        return Err(Error::InvalidDepth(z));
    }
    Ok(Point3::new(
        (u - k.cu) * z / k.fu,
        (v - k.cv) * z / k.fv,
        z,
    ))
}

/// Pinhole projection to fractional `(u, v)`.
pub fn project(p: Point3, k: &CameraIntrinsics) -> Result<(f64, f64)> {
    if p.z.is_nan() || p.z <= 0.0 {
        return Err(Error::BehindCamera(p.z));
    }
    Ok((k.fu * p.x / p.z + k.cu, k.fv * p.y / p.z + k.cv))
}

/// Sum of squared distances of `points` from the plane through `center`
/// with unit normal `n`.
pub fn plane_residual(points: &[Point3], center: Point3, n: Vec3) -> f64 {
    points
        .iter()
        .map(|p| {
            let d = n.dot(*p - center);
            d * d
        })
        .sum()
}

/// Least-squares unit normal of the plane through `center` that best fits
/// `points`: the smallest eigenvector of their scatter about `center`.
///
/// The sign is fixed so that `n.z >= 0`, then `n.x >= 0`, then `n.y >= 0`.
pub fn fit_plane(points: &[Point3], center: Point3) -> Result<Vec3> {
    if points.len() < 3 {
        return Err(Error::DegenerateNeighborhood {
            valid: points.len(),
        });
    }
    let mut scatter = Sym3::default();
    for p in points {
        scatter.add_outer(*p - center);
    }
    let eig = smallest_eigen(&scatter, RANK_TOL).ok_or(Error::DegenerateNeighborhood {
        valid: points.len(),
    })?;
    Ok(canonical_sign(eig.vector))
}

fn canonical_sign(n: Vec3) -> Vec3 {
    let flip = if n.z != 0.0 {
        n.z < 0.0
    } else if n.x != 0.0 {
        n.x < 0.0
    } else {
        n.y < 0.0
    };
    if flip {
        n.scale(-1.0)
    } else {
        n
    }
}

/// In-plane axes `(x', y')` for a unit normal: `x'` horizontal and
/// `y' = n × x'`.
pub fn basis_from_normal(n: Vec3) -> Result<(Vec3, Vec3)> {
    let horiz = 1.0 - n.y * n.y;
    if horiz <= BASIS_EPS {
        return Err(Error::DegenerateBasis { n2: n.y });
    }
    let r = horiz.sqrt();
    let x_axis = Vec3::new(n.z / r, 0.0, -n.x / r);
    let y_axis = Vec3::new(-n.x * n.y / r, horiz / r, -n.y * n.z / r);
    Ok((x_axis, y_axis))
}

/// Grid spacing that reproduces the dilated pixel grid on a fronto-parallel
/// plane at depth `z0`.
pub fn scale_factors(z0: f64, spec: &KernelSpec, k: &CameraIntrinsics) -> Result<ScaleFactors> {
    if !(z0.is_finite() && z0 > 0.0) {
        return Err(Error::InvalidDepth(z0));
    }
    let d = spec.dilation as f64;
    Ok(ScaleFactors {
        ku: d * z0 / k.fu,
        kv: d * z0 / k.fv,
    })
}

/// `size x size` taps on the plane, row-major with rows along `y'`.
pub fn grid_3d(frame: &PlaneFrame, s: ScaleFactors, size: usize) -> Vec<Point3> {
    let h = (size as f64 - 1.0) / 2.0;
    let mut taps = Vec::with_capacity(size * size);
    for i in 0..size {
        let b = s.kv * (i as f64 - h);
        for j in 0..size {
            let a = s.ku * (j as f64 - h);
            taps.push(frame.origin + frame.x_axis.scale(a) + frame.y_axis.scale(b));
        }
    }
    taps
}

/// Counters describing one offset computation.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct OffsetSummary {
    /// Output pixels that fell back to zero offsets.
    pub degenerate_pixels: usize,
    pub total_pixels: usize,
    #[serde(skip)]
    pub elapsed: Duration,
}

/// Why a pixel fell back to the regular grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fallback {
    InvalidCenter,
    Degenerate,
}

fn clamp_index(i: isize, len: usize) -> usize {
    i.clamp(0, len as isize - 1) as usize
}

/// Offsets `(dy, dx)` of every tap for the receptive field centered at
/// input pixel `(row, col)`. Receptive-field coordinates are clamped to the
/// depth image when gathering.
pub fn offsets_at(
    depth: &DepthMap,
    k: &CameraIntrinsics,
    spec: &KernelSpec,
    row: isize,
    col: isize,
) -> Result<Vec<(f64, f64)>, Fallback> {
    let (h, w) = (depth.height(), depth.width());
    let z0 = depth
        .valid(clamp_index(row, h), clamp_index(col, w))
        .ok_or(Fallback::InvalidCenter)?;
    let taps = spec.taps();
    if spec.size == 1 {
        return Ok(vec![(0.0, 0.0)]);
    }
    let center_tap = taps / 2;
    let origin = back_project(col as f64, row as f64, z0, k).map_err(|_| Fallback::InvalidCenter)?;

    let mut points = Vec::with_capacity(taps - 1);
    for t in (0..taps).filter(|&t| t != center_tap) {
        let (dy, dx) = spec.tap_offset(t);
        let (r, c) = (clamp_index(row + dy, h), clamp_index(col + dx, w));
        if let Some(z) = depth.valid(r, c) {
            if let Ok(p) = back_project(c as f64, r as f64, z, k) {
                points.push(p);
            }
        }
    }
    let mut normal = fit_plane(&points, origin).map_err(|_| Fallback::Degenerate)?;
    // Point the normal away from the camera. The n3 >= 0 convention is
    // decided by rounding noise on surfaces parallel to the optical axis
    // (walls, floors), and a flipped normal mirrors the grid.
    if normal.dot(origin) < 0.0 {
        normal = normal.scale(-1.0);
    }
    let frame = PlaneFrame::from_normal(normal, origin);
    let s = scale_factors(z0, spec, k).map_err(|_| Fallback::Degenerate)?;

    let mut out = Vec::with_capacity(taps);
    for (t, tap) in grid_3d(&frame, s, spec.size).into_iter().enumerate() {
        let (u, v) = project(tap, k).map_err(|_| Fallback::Degenerate)?;
        let (dy, dx) = spec.tap_offset(t);
        let off = (v - (row + dy) as f64, u - (col + dx) as f64);
        if !(off.0.is_finite() && off.1.is_finite()) {
            return Err(Fallback::Degenerate);
        }
        out.push(off);
    }
    Ok(out)
}

/// Depth-adapted offsets for an `out_h x out_w` output grid.
///
/// Pixels whose center depth is missing, or whose neighborhood does not
/// determine a plane, get zero offsets and are counted in the summary.
pub fn compute_offsets(
    depth: &DepthMap,
    k: &CameraIntrinsics,
    spec: &KernelSpec,
    out_h: usize,
    out_w: usize,
) -> Result<(OffsetField, OffsetSummary)> {
    let expected = spec.output_dims(depth.height(), depth.width())?;
    if expected != (out_h, out_w) {
        return Err(Error::shape(format!(
            "depth {}x{} with kernel {} dilation {} stride {} padding {} gives output {}x{}, requested {out_h}x{out_w}",
            depth.height(),
            depth.width(),
            spec.size,
            spec.dilation,
            spec.stride,
            spec.padding,
            expected.0,
            expected.1
        )));
    }
    let start = Instant::now();
    let taps = spec.taps();

    let rows: Vec<(Vec<f32>, usize)> = (0..out_h)
        .into_par_iter()
        .map(|oy| {
            // [tap][2][out_w]
            let mut row = vec![0.0f32; 2 * taps * out_w];
            let mut degenerate = 0;
            for ox in 0..out_w {
                let (cy, cx) = spec.center_of(oy, ox);
                match offsets_at(depth, k, spec, cy, cx) {
                    Ok(offs) => {
                        for (t, (dy, dx)) in offs.into_iter().enumerate() {
                            row[2 * t * out_w + ox] = dy as f32;
                            row[(2 * t + 1) * out_w + ox] = dx as f32;
                        }
                    }
                    Err(_) => degenerate += 1,
                }
            }
            (row, degenerate)
        })
        .collect();

    let plane = out_h * out_w;
    let mut data = vec![0.0f32; 2 * taps * plane];
    let mut degenerate_pixels = 0;
    for (oy, (row, degenerate)) in rows.into_iter().enumerate() {
        degenerate_pixels += degenerate;
        for ch in 0..2 * taps {
            data[ch * plane + oy * out_w..ch * plane + (oy + 1) * out_w]
                .copy_from_slice(&row[ch * out_w..(ch + 1) * out_w]);
        }
    }
    let field = OffsetField::new(taps, out_h, out_w, data)?;
    Ok((
        field,
        OffsetSummary {
            degenerate_pixels,
            total_pixels: plane,
            elapsed: start.elapsed(),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn k519() -> CameraIntrinsics {
        CameraIntrinsics::new(519.0, 519.0, 320.0, 240.0).unwrap()
    }

    fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
        loop {
            let v = Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let n = v.norm();
            if n > 1e-3 && n <= 1.0 {
                return v.scale(1.0 / n);
            }
        }
    }

    fn assert_orthonormal(f: &PlaneFrame) {
        for v in [f.normal, f.x_axis, f.y_axis] {
            assert!((v.norm() - 1.0).abs() < 1e-6);
        }
        assert!(f.x_axis.dot(f.normal).abs() < 1e-6);
        assert!(f.y_axis.dot(f.normal).abs() < 1e-6);
        assert!(f.x_axis.dot(f.y_axis).abs() < 1e-6);
        assert_eq!(f.x_axis.y, 0.0);
        assert!((f.normal.cross(f.x_axis) - f.y_axis).norm() < 1e-6);
    }

    #[test]
    fn principal_ray_is_optical_axis() {
        let k = k519();
        assert_eq!(back_project(k.cu, k.cv, 2.0, &k).unwrap(), Point3::new(0.0, 0.0, 2.0));
        assert_eq!(project(Point3::new(0.0, 0.0, 5.0), &k).unwrap(), (k.cu, k.cv));
    }

    #[test]
    fn one_focal_length_off_axis_is_unit_lateral_offset() {
        let k = k519();
        let p = back_project(k.cu + 519.0, k.cv, 1.0, &k).unwrap();
        assert_eq!(p, Point3::new(1.0, 0.0, 1.0));
    }

    #[test]
    fn projection_with_focal_100() {
        let k = CameraIntrinsics::new(100.0, 100.0, 0.0, 0.0).unwrap();
        assert_eq!(project(Point3::new(1.0, 0.0, 1.0), &k).unwrap(), (100.0, 0.0));
    }

    #[test]
    fn invalid_depth_and_behind_camera() {
        let k = k519();
        for z in [0.0, -1.0, f64::NAN, f64::INFINITY] {
            assert!(matches!(back_project(1.0, 1.0, z, &k), Err(Error::InvalidDepth(_))));
        }
        assert!(matches!(
            project(Point3::new(0.0, 0.0, 0.0), &k),
            Err(Error::BehindCamera(_))
        ));
        assert!(scale_factors(0.0, &KernelSpec::same(3, 1).unwrap(), &k).is_err());
    }

    #[test]
    fn round_trip_back_project_project() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let k = CameraIntrinsics::new(
                rng.random_range(50.0..1000.0),
                rng.random_range(50.0..1000.0),
                rng.random_range(0.0..640.0),
                rng.random_range(0.0..480.0),
            )
            .unwrap();
            let (u, v) = (rng.random_range(-100.0..740.0), rng.random_range(-100.0..580.0));
            let z = rng.random_range(0.01..100.0);
            let (pu, pv) = project(back_project(u, v, z, &k).unwrap(), &k).unwrap();
            assert!((pu - u).abs() < 1e-6 && (pv - v).abs() < 1e-6);
        }
    }

    #[test]
    fn fronto_parallel_points_give_optical_axis_normal() {
        let k = k519();
        let center = back_project(10.0, 10.0, 3.0, &k).unwrap();
        let pts: Vec<_> = (0..9)
            .map(|t| back_project(9.0 + (t % 3) as f64, 9.0 + (t / 3) as f64, 3.0, &k).unwrap())
            .collect();
        assert_eq!(fit_plane(&pts, center).unwrap(), Vec3::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn exact_slanted_plane() {
        // Z = 2 + 0.5 X
        let center = Point3::new(0.0, 0.0, 2.0);
        let pts: Vec<_> = [(-1.0, -1.0), (1.0, -1.0), (0.5, 2.0), (-0.3, 0.7), (2.0, 1.0)]
            .iter()
            .map(|&(x, y)| Point3::new(x, y, 2.0 + 0.5 * x))
            .collect();
        let n = fit_plane(&pts, center).unwrap();
        let expected = Vec3::new(-0.5, 0.0, 1.0).scale(1.0 / 1.25f64.sqrt());
        assert!((n - expected).norm() < 1e-12, "{n:?}");
        assert!(plane_residual(&pts, center, n) < 1e-20);
    }

    #[test]
    fn fit_beats_random_directions() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let center = Point3::new(0.1, -0.2, 2.0);
            let pts: Vec<_> = (0..8)
                .map(|_| {
                    center
                        + Vec3::new(
                            rng.random_range(-0.1..0.1),
                            rng.random_range(-0.1..0.1),
                            rng.random_range(-0.02..0.02),
                        )
                })
                .collect();
            let n = fit_plane(&pts, center).unwrap();
            let best = plane_residual(&pts, center, n);
            for _ in 0..10_000 {
                let r = random_unit(&mut rng);
                assert!(best <= plane_residual(&pts, center, r) + 1e-15);
            }
        }
    }

    #[test]
    fn too_few_or_collinear_points_are_degenerate() {
        let c = Point3::new(0.0, 0.0, 1.0);
        let two = [Point3::new(1.0, 0.0, 1.0), Point3::new(0.0, 1.0, 1.0)];
        assert!(matches!(
            fit_plane(&two, c),
            Err(Error::DegenerateNeighborhood { valid: 2 })
        ));
        let line: Vec<_> = (1..5).map(|i| Point3::new(i as f64, 0.0, 1.0)).collect();
        assert!(fit_plane(&line, c).is_err());
    }

    #[test]
    fn normal_sign_convention() {
        assert_eq!(canonical_sign(Vec3::new(0.1, 0.2, -0.9)).z, 0.9);
        assert_eq!(canonical_sign(Vec3::new(-1.0, 0.0, 0.0)), Vec3::new(1.0, 0.0, 0.0));
        assert_eq!(canonical_sign(Vec3::new(0.0, -1.0, 0.0)), Vec3::new(0.0, 1.0, 0.0));
    }

    #[test]
    fn basis_for_fronto_parallel_and_slanted_normals() {
        let (x, y) = basis_from_normal(Vec3::new(0.0, 0.0, 1.0)).unwrap();
        assert_eq!((x, y), (Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)));

        let n = Vec3::new(-0.5, 0.0, 1.0).scale(1.0 / 1.25f64.sqrt());
        let (x, y) = basis_from_normal(n).unwrap();
        assert!((x - Vec3::new(0.8944, 0.0, 0.4472)).norm() < 1e-4);
        assert!((y - Vec3::new(0.0, 1.0, 0.0)).norm() < 1e-12);
        assert_orthonormal(&PlaneFrame::from_normal(n, Point3::default()));
    }

    #[test]
    fn vertical_normal_uses_fallback_frame() {
        for s in [1.0, -1.0] {
            let n = Vec3::new(0.0, s, 0.0);
            assert!(matches!(basis_from_normal(n), Err(Error::DegenerateBasis { .. })));
            let f = PlaneFrame::from_normal(n, Point3::default());
            assert_eq!(f.x_axis, Vec3::new(1.0, 0.0, 0.0));
            assert_eq!(f.y_axis, Vec3::new(0.0, 0.0, -s));
            assert_orthonormal(&f);
        }
    }

    #[test]
    fn scale_factor_values() {
        let k = CameraIntrinsics::new(100.0, 100.0, 0.0, 0.0).unwrap();
        let s = scale_factors(1.0, &KernelSpec::same(3, 1).unwrap(), &k).unwrap();
        assert_eq!((s.ku, s.kv), (0.01, 0.01));
        let s = scale_factors(2.0, &KernelSpec::same(3, 2).unwrap(), &k519()).unwrap();
        assert_eq!((s.ku, s.kv), (4.0 / 519.0, 4.0 / 519.0));
        let s2 = scale_factors(4.0, &KernelSpec::same(3, 2).unwrap(), &k519()).unwrap();
        assert_eq!((s2.ku, s2.kv), (2.0 * s.ku, 2.0 * s.kv));
    }

    #[test]
    fn single_tap_grid_is_origin() {
        let f = PlaneFrame::from_normal(Vec3::new(0.0, 0.0, 1.0), Point3::new(1.0, 2.0, 3.0));
        let taps = grid_3d(&f, ScaleFactors { ku: 0.1, kv: 0.2 }, 1);
        assert_eq!(taps, vec![f.origin]);
    }

    #[test]
    fn fronto_parallel_grid_projects_to_dilated_pixel_grid() {
        let k = k519();
        let (u0, v0, z0) = (100.0, 80.0, 2.5);
        for d in [1usize, 2] {
            let spec = KernelSpec::same(3, d).unwrap();
            let origin = back_project(u0, v0, z0, &k).unwrap();
            let f = PlaneFrame::from_normal(Vec3::new(0.0, 0.0, 1.0), origin);
            let taps = grid_3d(&f, scale_factors(z0, &spec, &k).unwrap(), 3);
            for (t, tap) in taps.into_iter().enumerate() {
                let (u, v) = project(tap, &k).unwrap();
                let (dy, dx) = spec.tap_offset(t);
                assert!((u - (u0 + dx as f64)).abs() < 1e-9);
                assert!((v - (v0 + dy as f64)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn grid_taps_lie_on_plane() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let n = canonical_sign(random_unit(&mut rng));
            let origin = Point3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 3.0);
            let f = PlaneFrame::from_normal(n, origin);
            assert_orthonormal(&f);
            for size in [3, 5] {
                let taps = grid_3d(&f, ScaleFactors { ku: 0.05, kv: 0.07 }, size);
                assert_eq!(taps[size * size / 2], origin);
                for tap in taps {
                    assert!(n.dot(tap - origin).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn kernel_spec_validation_and_output_dims() {
        assert!(KernelSpec::new(2, 1, 1, 0).is_err());
        assert!(KernelSpec::new(3, 0, 1, 0).is_err());
        assert!(KernelSpec::new(3, 1, 0, 0).is_err());
        let s = KernelSpec::new(3, 2, 2, 2).unwrap();
        assert_eq!(s.offset_channels(), 18);
        assert_eq!(s.output_dims(9, 10).unwrap(), (5, 5));
        assert_eq!(s.center_of(1, 2), (2, 4));
        assert!(KernelSpec::new(5, 1, 1, 0).unwrap().output_len(3).is_err());
    }

    #[test]
    fn constant_depth_gives_zero_offsets() {
        let k = CameraIntrinsics::new(321.0, 287.0, 7.3, 12.1).unwrap();
        for (n, d) in [(1, 1), (3, 1), (3, 2), (5, 1), (5, 2)] {
            let spec = KernelSpec::same(n, d).unwrap();
            let depth = DepthMap::constant(17, 19, 2.75);
            let (f, s) = compute_offsets(&depth, &k, &spec, 17, 19).unwrap();
            assert!(f.max_abs() < 1e-5, "N={n} d={d}: {}", f.max_abs());
            assert_eq!(s.degenerate_pixels, 0);
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let spec = KernelSpec::same(3, 1).unwrap();
        let depth = DepthMap::constant(8, 8, 1.0);
        assert!(matches!(
            compute_offsets(&depth, &k519(), &spec, 8, 7),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn invalid_depth_falls_back_to_zero() {
        let spec = KernelSpec::same(3, 1).unwrap();
        let depth = DepthMap::from_fn(6, 6, |y, x| 1.0 + 0.1 * x as f32 + 0.05 * y as f32);
        let mut data = depth.data().to_vec();
        data[2 * 6 + 3] = f32::NAN;
        let depth = DepthMap::new(6, 6, data).unwrap();
        let (f, s) = compute_offsets(&depth, &k519(), &spec, 6, 6).unwrap();
        assert_eq!(s.degenerate_pixels, 1);
        for t in 0..9 {
            assert_eq!(f.get(t, 2, 3), (0.0, 0.0));
        }

        let all_bad = DepthMap::constant(5, 5, 0.0);
        let (f, s) = compute_offsets(&all_bad, &k519(), &spec, 5, 5).unwrap();
        assert_eq!(f.max_abs(), 0.0);
        assert_eq!(s.degenerate_pixels, 25);
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let depth = DepthMap::from_fn(33, 29, |_, _| rng.random_range(0.5f32..3.0));
        let spec = KernelSpec::same(3, 1).unwrap();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| compute_offsets(&depth, &k519(), &spec, 33, 29).unwrap().0)
        };
        let one = run(1);
        assert_eq!(one.data(), run(4).data());
    }

    proptest! {
        #[test]
        fn back_project_round_trips(u in -500.0f64..1500.0, v in -500.0f64..1500.0, z in 1e-3f64..1e3) {
            let k = k519();
            let (pu, pv) = project(back_project(u, v, z, &k).unwrap(), &k).unwrap();
            prop_assert!((pu - u).abs() < 1e-6 && (pv - v).abs() < 1e-6);
        }

        #[test]
        fn projection_ignores_uniform_scaling(x in -5.0f64..5.0, y in -5.0f64..5.0, z in 0.1f64..10.0, s in 0.01f64..100.0) {
            let k = k519();
            let a = project(Point3::new(x, y, z), &k).unwrap();
            let b = project(Point3::new(x, y, z).scale(s), &k).unwrap();
            prop_assert!((a.0 - b.0).abs() < 1e-9 && (a.1 - b.1).abs() < 1e-9);
        }
    }
}
