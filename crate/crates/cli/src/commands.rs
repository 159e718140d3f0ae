use std::fmt::Display;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use zacn_core::geometry::offsets_at;
use zacn_core::harness::{self, BenchOp, ExperimentConfig, Operator, OperatorSummary, RunRecord};
use zacn_core::io;
use zacn_core::{
    compute_offsets, standard_avg_pool, standard_conv, za_avg_pool, za_conv_forward, ConvWeights,
    Error, FeatureTensor, KernelSpec,
};

use crate::summary::{write_json, Dims, Magnitudes, OffsetsReport, OperatorReport};
use crate::svg::{self, Query};
use crate::{
    summary_path, BenchArgs, ConvArgs, KernelArgs, OffsetsArgs, PoolArgs, SceneArgs, ToyArgs,
    VizArgs, WeightsArgs,
};

/// Failure with its process exit code: 1 for IO and parsing, 2 for
/// configuration and shape problems.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    pub fn io(path: &Path, e: impl Display) -> Self {
        Self {
            code: 1,
            message: format!("{}: {e}", path.display()),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        Self {
            code: if e.is_config() { 2 } else { 1 },
            message: e.to_string(),
        }
    }
}

type Result<T, E = CliError> = std::result::Result<T, E>;

fn kernel_spec(k: &KernelArgs) -> Result<KernelSpec> {
    let padding = k
        .padding
        .unwrap_or(k.dilation * k.kernel.saturating_sub(1) / 2);
    Ok(KernelSpec::new(k.kernel, k.dilation, k.stride, padding)?)
}

fn dims(x: &FeatureTensor) -> Dims {
    Dims {
        channels: x.channels(),
        height: x.height(),
        width: x.width(),
    }
}

pub fn offsets(a: &OffsetsArgs) -> Result<()> {
    let mut depth = io::read_depth(&a.depth)?;
    let k = io::read_intrinsics(&a.intrinsics)?;
    let spec = kernel_spec(&a.kernel)?;
    if let Some((h, w)) = a.resample {
        depth = io::resample_depth(&depth, h, w)?;
    }
    let (oh, ow) = spec.output_dims(depth.height(), depth.width())?;
    let (field, summary) = compute_offsets(&depth, &k, &spec, oh, ow)?;
    io::write_offsets(&field, &a.out)?;
    let report = OffsetsReport {
        depth_height: depth.height(),
        depth_width: depth.width(),
        kernel: spec,
        output: Dims {
            channels: field.channels(),
            height: oh,
            width: ow,
        },
        degenerate_pixels: summary.degenerate_pixels,
        total_pixels: summary.total_pixels,
        max_abs_offset: field.max_abs(),
        magnitude: Magnitudes::of(&field),
    };
    write_json(&summary_path(&a.out), &report)
}

pub fn conv(a: &ConvArgs) -> Result<()> {
    let x = io::read_tensor(&a.input)?;
    let w = io::read_weights(&a.weights)?;
    let spec = kernel_spec(&a.kernel)?;
    let (y, op, degenerate, oob) = match &a.offsets {
        Some(path) => {
            let offsets = io::read_offsets(path)?;
            let (y, s) = za_conv_forward(&x, &w, &offsets, &spec)?;
            (y, "adapted", Some(s.degenerate_pixels), Some(s.out_of_bounds_fraction))
        }
        None => (standard_conv(&x, &w, &spec)?, "standard", None, None),
    };
    io::write_tensor(&y, &a.out)?;
    let report = OperatorReport {
        operator: op,
        kernel: spec,
        input: dims(&x),
        output: dims(&y),
        degenerate_pixels: degenerate,
        out_of_bounds_fraction: oob,
        parameters: Some(w.parameter_count()),
    };
    write_json(&summary_path(&a.out), &report)
}

pub fn pool(a: &PoolArgs) -> Result<()> {
    let x = io::read_tensor(&a.input)?;
    let spec = kernel_spec(&a.kernel)?;
    let (y, op, degenerate, oob) = match &a.offsets {
        Some(path) => {
            let offsets = io::read_offsets(path)?;
            let (y, s) = za_avg_pool(&x, &offsets, &spec)?;
            (y, "adapted", Some(s.degenerate_pixels), Some(s.out_of_bounds_fraction))
        }
        None => (standard_avg_pool(&x, &spec)?, "standard", None, None),
    };
    io::write_tensor(&y, &a.out)?;
    let report = OperatorReport {
        operator: op,
        kernel: spec,
        input: dims(&x),
        output: dims(&y),
        degenerate_pixels: degenerate,
        out_of_bounds_fraction: oob,
        parameters: None,
    };
    write_json(&summary_path(&a.out), &report)
}

pub fn viz(a: &VizArgs) -> Result<()> {
    let depth = io::read_depth(&a.depth)?;
    let k = io::read_intrinsics(&a.intrinsics)?;
    let spec = KernelSpec::same(a.kernel, a.dilation)?;
    let (h, w) = (depth.height(), depth.width());
    let outside: Vec<String> = a
        .at
        .0
        .iter()
        .filter(|(u, v)| *u >= w || *v >= h)
        .map(|(u, v)| format!("{u},{v}"))
        .collect();
    if !outside.is_empty() {
        return Err(CliError::config(format!(
            "query points outside the {w}x{h} depth map: {}",
            outside.join("; ")
        )));
    }
    let queries: Vec<Query> = a
        .at
        .0
        .iter()
        .map(|&(u, v)| {
            let found = offsets_at(&depth, &k, &spec, v as isize, u as isize);
            let fallback = found.is_err();
            let offs = found.unwrap_or_else(|_| vec![(0.0, 0.0); spec.taps()]);
            let mut standard = Vec::with_capacity(spec.taps());
            let mut adapted = Vec::with_capacity(spec.taps());
            for (t, (dy, dx)) in offs.into_iter().enumerate() {
                // the stored field holds 32-bit offsets; draw exactly those
                let (dy, dx) = (dy as f32, dx as f32);
                let (ty, tx) = spec.tap_offset(t);
                let (su, sv) = ((u as isize + tx) as f64, (v as isize + ty) as f64);
                standard.push((su, sv));
                adapted.push(((su + dx as f64, sv + dy as f64), (dy, dx)));
            }
            Query {
                u,
                v,
                standard,
                adapted,
                fallback,
            }
        })
        .collect();
    let text = svg::render(&depth, a.kernel, a.dilation, &queries);
    fs::write(&a.out, text).map_err(|e| CliError::io(&a.out, e))
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(fs::File::create(p).map_err(|e| CliError::io(p, e))?),
        None => Box::new(std::io::stdout().lock()),
    })
}

#[derive(Serialize)]
struct BenchReport {
    rows: Vec<harness::BenchRow>,
    /// Median of offsets plus adapted conv over median of standard conv.
    slowdown: Vec<(usize, f64)>,
}

pub fn bench(a: &BenchArgs) -> Result<()> {
    let ops: Vec<BenchOp> = if a.ops.is_empty() {
        BenchOp::ALL.to_vec()
    } else {
        a.ops.clone()
    };
    let rows = harness::bench(&ops, &a.sizes, a.repeats)?;
    harness::write_bench_csv(&rows, open_output(a.out.as_deref())?)?;
    if let Some(out) = &a.out {
        let slowdown = a
            .sizes
            .iter()
            .filter_map(|&s| {
                harness::slowdown(&rows, BenchOp::OffsetsAndAdaptedConv, BenchOp::StandardConv, s)
                    .map(|r| (s, r))
            })
            .collect();
        write_json(&summary_path(out), &BenchReport { rows, slowdown })?;
    }
    Ok(())
}

#[derive(Serialize)]
struct ToyReport<'a> {
    config: &'a ExperimentConfig,
    operators: Vec<OperatorSummary>,
    runs: &'a [RunRecord],
}

pub fn toytrain(a: &ToyArgs) -> Result<()> {
    let defaults = ExperimentConfig::default();
    let cfg = ExperimentConfig {
        kind: a.kind,
        size: a.size,
        train_scenes: a.train_scenes,
        eval_scenes: a.eval_scenes,
        seeds: if a.seeds.is_empty() { vec![0] } else { a.seeds.clone() },
        operators: if a.operators.is_empty() {
            vec![Operator::Adapted, Operator::Standard]
        } else {
            a.operators.clone()
        },
        epochs: a.epochs.unwrap_or(defaults.epochs),
        learning_rate: a.lr.unwrap_or(defaults.learning_rate),
        hidden: a.hidden.unwrap_or(defaults.hidden),
        focal: a.focal.or(defaults.focal),
    };
    let records = harness::run_experiment(&cfg)?;
    harness::write_runs_csv(&records, open_output(a.out.as_deref())?)?;
    if let Some(out) = &a.out {
        let report = ToyReport {
            config: &cfg,
            operators: harness::summarize(&records),
            runs: &records,
        };
        write_json(&summary_path(out), &report)?;
    }
    Ok(())
}

pub fn scene(a: &SceneArgs) -> Result<()> {
    let scene = harness::generate_scene(a.kind, a.height, a.width, a.seed)?;
    let dir = &a.out_dir;
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    io::write_depth(&scene.depth, dir.join("depth.pfm"))?;
    io::write_tensor(&scene.features, dir.join("features.zacn"))?;
    let classes: Vec<f32> = scene.classes().iter().map(|&c| c as f32).collect();
    let labels = dir.join("labels.zacn");
    fs::write(&labels, io::encode_container(&[a.height, a.width], &classes))
        .map_err(|e| CliError::io(&labels, e))?;
    let intrinsics = dir.join("intrinsics.txt");
    fs::write(&intrinsics, io::format_intrinsics(&scene.intrinsics))
        .map_err(|e| CliError::io(&intrinsics, e))?;
    write_json(&dir.join("scene.json"), &scene.description)
}

pub fn weights(a: &WeightsArgs) -> Result<()> {
    if a.in_channels == 0 || a.out_channels == 0 || a.kernel == 0 {
        return Err(CliError::config("channel counts and kernel size must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let w = ConvWeights::random(a.out_channels, a.in_channels, a.kernel, &mut rng);
    io::write_weights(&w, &a.out)?;
    Ok(())
}
