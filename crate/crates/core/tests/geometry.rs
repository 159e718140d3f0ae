use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use zacn_core::{compute_offsets, CameraIntrinsics, DepthMap, KernelSpec, OffsetField};

/// A random plane in front of the camera. Inverse depth of a plane is affine
/// in normalized image coordinates, so this is exact up to f32 rounding.
fn plane_depth(rng: &mut ChaCha8Rng, k: &CameraIntrinsics, h: usize, w: usize) -> DepthMap {
    let a = rng.random_range(0.2..1.0);
    let b = rng.random_range(-0.3..0.3);
    let c = rng.random_range(-0.3..0.3);
    DepthMap::from_fn(h, w, |y, x| {
        let xn = (x as f64 - k.cu) / k.fu;
        let yn = (y as f64 - k.cv) / k.fv;
        let inv = a + b * xn + c * yn;
        if inv > 0.05 {
            (1.0 / inv) as f32
        } else {
            0.0
        }
    })
}

fn intrinsics(rng: &mut ChaCha8Rng, h: usize, w: usize) -> CameraIntrinsics {
    CameraIntrinsics::new(
        rng.random_range(80.0..900.0),
        rng.random_range(80.0..900.0),
        rng.random_range(0.0..1.0) * w as f64,
        rng.random_range(0.0..1.0) * h as f64,
    )
    .unwrap()
}

fn offsets(depth: &DepthMap, k: &CameraIntrinsics, spec: &KernelSpec) -> OffsetField {
    let (h, w) = spec.output_dims(depth.height(), depth.width()).unwrap();
    compute_offsets(depth, k, spec, h, w).unwrap().0
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn power_of_two_depth_scaling_is_exact(seed in any::<u64>(), e in -6i32..7, n in prop::sample::select(vec![3usize, 5])) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, w) = (14, 17);
        let k = intrinsics(&mut rng, h, w);
        let depth = plane_depth(&mut rng, &k, h, w);
        let spec = KernelSpec::same(n, rng.random_range(1..3)).unwrap();
        let a = offsets(&depth, &k, &spec);
        let b = offsets(&depth.scaled(2f32.powi(e)), &k, &spec);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn horizontal_mirror_mirrors_the_offsets(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, w) = (12, 15);
        let k = intrinsics(&mut rng, h, w);
        let depth = plane_depth(&mut rng, &k, h, w);
        let mirrored_k = CameraIntrinsics::new(k.fu, k.fv, (w - 1) as f64 - k.cu, k.cv).unwrap();
        let mirrored = DepthMap::from_fn(h, w, |y, x| depth.get(y, w - 1 - x));
        let spec = KernelSpec::same(3, 1).unwrap();
        let a = offsets(&depth, &k, &spec);
        let b = offsets(&mirrored, &mirrored_k, &spec);
        for t in 0..9 {
            // tap (row, col) maps to (row, 2 - col)
            let tm = t / 3 * 3 + (2 - t % 3);
            for y in 0..h {
                for x in 0..w {
                    let (dy, dx) = a.get(t, y, x);
                    let (my, mx) = b.get(tm, y, w - 1 - x);
                    prop_assert!((dy - my).abs() < 1e-4 && (dx + mx).abs() < 1e-4,
                        "tap {} at ({}, {}): ({}, {}) vs ({}, {})", t, y, x, dy, dx, my, mx);
                }
            }
        }
    }

    #[test]
    fn center_tap_stays_on_its_pixel(seed in any::<u64>(), d in 1usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, w) = (10, 13);
        let k = intrinsics(&mut rng, h, w);
        let depth = plane_depth(&mut rng, &k, h, w);
        let spec = KernelSpec::same(5, d).unwrap();
        let f = offsets(&depth, &k, &spec);
        for y in 0..h {
            for x in 0..w {
                let (dy, dx) = f.get(12, y, x);
                prop_assert!(dy.abs() < 1e-5 && dx.abs() < 1e-5);
            }
        }
    }

    #[test]
    fn fronto_parallel_planes_give_zero_offsets(seed in any::<u64>(), z in 0.05f32..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, w) = (9, 11);
        let k = intrinsics(&mut rng, h, w);
        let spec = KernelSpec::new(3, rng.random_range(1..3), rng.random_range(1..3), 1).unwrap();
        let f = offsets(&DepthMap::constant(h, w, z), &k, &spec);
        prop_assert!(f.max_abs() < 1e-5, "max {}", f.max_abs());
    }
}

#[test]
fn receding_plane_foreshortens_the_grid() {
    // depth grows with x, so the plane is seen at a grazing angle along u:
    // the horizontal taps pull in, and the near (left) one less than the far one
    let k = CameraIntrinsics::centered(400.0, 400.0, 31, 21).unwrap();
    let depth = DepthMap::from_fn(21, 31, |_, x| 2.0 + 0.05 * x as f32);
    let spec = KernelSpec::same(3, 1).unwrap();
    let f = offsets(&depth, &k, &spec);
    let (ly, left) = f.get(3, 10, 15);
    let (ry, right) = f.get(5, 10, 15);
    assert!(left > 0.0 && right < 0.0, "taps move inward: {left}, {right}");
    assert!(1.0 - left > 1.0 + right, "near tap stays further out: {left}, {right}");
    assert!(ly.abs() < 1e-3 && ry.abs() < 1e-3);
    let (top, _) = f.get(1, 10, 15);
    assert!(top.abs() < 0.2, "vertical spacing barely changes: {top}");
}
