//! Depth-adapted convolution and pooling.
//!
//! The sampling grid of a convolution or average pooling is deformed per
//! output pixel so that it covers a regular patch on the 3D plane the pixel
//! belongs to. Offsets are computed analytically from a depth map and the
//! camera intrinsics ([`geometry::compute_offsets`]) and consumed by the
//! operators in [`ops`]; nothing about the deformation is learned.

pub mod error;
pub mod geometry;
pub mod harness;
pub mod io;
pub mod ops;
pub mod tensor;

pub use error::{Error, Result};
pub use geometry::{
    back_project, basis_from_normal, compute_offsets, fit_plane, grid_3d, project, scale_factors,
    CameraIntrinsics, KernelSpec, OffsetSummary, PlaneFrame, Point3, ScaleFactors, Vec3,
};
pub use ops::{
    standard_avg_pool, standard_conv, za_avg_pool, za_conv_backward, za_conv_forward,
    ConvGrads, ConvWeights, OpSummary,
};
pub use tensor::{bilinear_sample, bilinear_sample_grad, DepthMap, FeatureTensor, OffsetField};
