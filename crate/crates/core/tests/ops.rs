use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use zacn_core::ops::za_conv_forward_gathered;
use zacn_core::{
    standard_avg_pool, standard_conv, za_avg_pool, za_conv_backward, za_conv_forward, ConvWeights,
    FeatureTensor, KernelSpec, OffsetField,
};

fn tensor(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> FeatureTensor {
    FeatureTensor::from_fn(c, h, w, |_, _, _| rng.random_range(-1.0..1.0))
}

fn offsets(rng: &mut ChaCha8Rng, spec: &KernelSpec, h: usize, w: usize, r: f32) -> OffsetField {
    let mut f = OffsetField::zeros(spec.taps(), h, w);
    for t in 0..spec.taps() {
        for y in 0..h {
            for x in 0..w {
                f.set(t, y, x, rng.random_range(-r..r), rng.random_range(-r..r));
            }
        }
    }
    f
}

/// Largest difference over outputs at least `margin` pixels from the border.
fn interior_diff(a: &FeatureTensor, b: &FeatureTensor, margin: usize) -> f32 {
    let mut worst = 0.0f32;
    for c in 0..a.channels() {
        for y in margin..a.height() - margin {
            for x in margin..a.width() - margin {
                worst = worst.max((a.get(c, y, x) - b.get(c, y, x)).abs());
            }
        }
    }
    worst
}

fn max_diff(a: &FeatureTensor, b: &FeatureTensor) -> f32 {
    assert_eq!(
        (a.channels(), a.height(), a.width()),
        (b.channels(), b.height(), b.width())
    );
    a.data()
        .iter()
        .zip(b.data())
        .map(|(p, q)| (p - q).abs())
        .fold(0.0, f32::max)
}

/// `x` moved so that output (y, x) reads input (y + dy, x + dx), zero outside.
fn shifted(x: &FeatureTensor, dy: isize, dx: isize) -> FeatureTensor {
    FeatureTensor::from_fn(x.channels(), x.height(), x.width(), |c, y, xx| {
        x.get_padded(c, y as isize + dy, xx as isize + dx)
    })
}

// Away from the border the shifted copy and the offset taps read the same
// pixels; near it the copy has already lost the shifted-out rows.
#[test]
fn integer_offsets_shift_the_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (n, d) in [(3, 1), (3, 2), (5, 1)] {
        let spec = KernelSpec::same(n, d).unwrap();
        let x = tensor(&mut rng, 2, 9, 12);
        let w = ConvWeights::random(3, 2, n, &mut rng);
        for (dy, dx) in [(1, 0), (0, -2), (-1, 3)] {
            let mut f = OffsetField::zeros(spec.taps(), 9, 12);
            for t in 0..spec.taps() {
                for y in 0..9 {
                    for xx in 0..12 {
                        f.set(t, y, xx, dy as f32, dx as f32);
                    }
                }
            }
            let (za, _) = za_conv_forward(&x, &w, &f, &spec).unwrap();
            let reference = standard_conv(&shifted(&x, dy, dx), &w, &spec).unwrap();
            assert!(interior_diff(&za, &reference, n / 2 * d) < 1e-5, "N={n} d={d} shift ({dy},{dx})");

            let (pool, _) = za_avg_pool(&x, &f, &spec).unwrap();
            let pref = standard_avg_pool(&shifted(&x, dy, dx), &spec).unwrap();
            assert!(interior_diff(&pool, &pref, n / 2 * d) < 1e-6);
        }
    }
}

#[test]
fn pooling_is_convolution_with_a_box_filter() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let spec = KernelSpec::new(3, 2, 2, 1).unwrap();
    let x = tensor(&mut rng, 3, 11, 10);
    let (oh, ow) = spec.output_dims(11, 10).unwrap();
    let f = offsets(&mut rng, &spec, oh, ow, 2.5);
    let mut w = ConvWeights::zeros(3, 3, 3);
    for c in 0..3 {
        for t in 0..9 {
            w.data_mut()[(c * 3 + c) * 9 + t] = 1.0 / 9.0;
        }
    }
    let (pool, _) = za_avg_pool(&x, &f, &spec).unwrap();
    let (conv, _) = za_conv_forward(&x, &w, &f, &spec).unwrap();
    assert!(max_diff(&pool, &conv) < 1e-6);
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let spec = KernelSpec::same(3, 1).unwrap();
    let x = tensor(&mut rng, 4, 23, 17);
    let w = ConvWeights::random(5, 4, 3, &mut rng);
    let f = offsets(&mut rng, &spec, 23, 17, 1.7);
    let g = tensor(&mut rng, 5, 23, 17);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let (y, _) = za_conv_forward(&x, &w, &f, &spec).unwrap();
            let (p, _) = za_avg_pool(&x, &f, &spec).unwrap();
            let grads = za_conv_backward(&x, &w, &f, &spec, &g).unwrap();
            (y, p, grads.grad_x, grads.grad_w)
        })
    };
    assert_eq!(run(1), run(4));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn adapted_conv_is_linear_in_input(seed in any::<u64>(), a in -2.0f32..2.0, b in -2.0f32..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = KernelSpec::same(3, 1).unwrap();
        let (x1, x2) = (tensor(&mut rng, 2, 7, 8), tensor(&mut rng, 2, 7, 8));
        let w = ConvWeights::random(2, 2, 3, &mut rng);
        let f = offsets(&mut rng, &spec, 7, 8, 3.0);
        let mix = FeatureTensor::from_fn(2, 7, 8, |c, y, x| a * x1.get(c, y, x) + b * x2.get(c, y, x));
        let (y1, _) = za_conv_forward(&x1, &w, &f, &spec).unwrap();
        let (y2, _) = za_conv_forward(&x2, &w, &f, &spec).unwrap();
        let (ym, _) = za_conv_forward(&mix, &w, &f, &spec).unwrap();
        let expect = FeatureTensor::from_fn(2, 7, 8, |c, y, x| a * y1.get(c, y, x) + b * y2.get(c, y, x));
        prop_assert!(max_diff(&ym, &expect) < 1e-4);
    }

    #[test]
    fn gathered_and_direct_conv_agree(seed in any::<u64>(), stride in 1usize..3, dilation in 1usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = KernelSpec::new(3, dilation, stride, dilation).unwrap();
        let x = tensor(&mut rng, 3, 9, 10);
        let w = ConvWeights::random(4, 3, 3, &mut rng);
        let (oh, ow) = spec.output_dims(9, 10).unwrap();
        let f = offsets(&mut rng, &spec, oh, ow, 4.0);
        let (direct, s1) = za_conv_forward(&x, &w, &f, &spec).unwrap();
        let (gathered, s2) = za_conv_forward_gathered(&x, &w, &f, &spec).unwrap();
        prop_assert!(max_diff(&direct, &gathered) < 1e-5);
        prop_assert_eq!(s1.degenerate_pixels, s2.degenerate_pixels);
    }

    #[test]
    fn pooled_values_stay_within_input_range(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = KernelSpec::same(3, 1).unwrap();
        let x = FeatureTensor::from_fn(1, 8, 8, |_, _, _| rng.random_range(0.0..1.0));
        let f = offsets(&mut rng, &spec, 8, 8, 5.0);
        let (p, _) = za_avg_pool(&x, &f, &spec).unwrap();
        // zero padding can only pull values toward 0
        prop_assert!(p.data().iter().all(|v| (0.0..=1.0 + 1e-6).contains(v)));
    }
}
