//! Shared inputs for the criterion benchmarks.

use zacn_core::harness::{generate_scene, SceneKind, BENCH_CHANNELS};
use zacn_core::{compute_offsets, CameraIntrinsics, ConvWeights, DepthMap, FeatureTensor, KernelSpec, OffsetField};

/// A corridor scene with features, weights and precomputed offsets.
pub struct Workload {
    pub depth: DepthMap,
    pub k: CameraIntrinsics,
    pub spec: KernelSpec,
    pub x: FeatureTensor,
    pub w: ConvWeights,
    pub offsets: OffsetField,
}

impl Workload {
    pub fn new(size: usize, kernel: usize) -> Self {
        let scene = generate_scene(SceneKind::Corridor, size, size, 1).expect("scene");
        let spec = KernelSpec::same(kernel, 1).expect("kernel");
        let c = BENCH_CHANNELS;
        // cheap deterministic pseudo-random values
        let hash = |i: usize| ((i as f32 * 12.9898).sin() * 43758.547).fract();
        let x = FeatureTensor::from_fn(c, size, size, |ch, y, xx| hash((ch * size + y) * size + xx));
        let taps = kernel * kernel;
        let w = ConvWeights::new(c, c, kernel, (0..c * c * taps).map(|i| 0.1 * hash(i + 7)).collect())
            .expect("weights");
        let (offsets, _) = compute_offsets(&scene.depth, &scene.intrinsics, &spec, size, size).expect("offsets");
        Self {
            depth: scene.depth,
            k: scene.intrinsics,
            spec,
            x,
            w,
            offsets,
        }
    }
}
