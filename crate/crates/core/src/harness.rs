//! Synthetic RGB-D scenes, a two-layer segmentation toy and timing tables
//! comparing regular and depth-adapted operators.

use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{compute_offsets, CameraIntrinsics, KernelSpec, Vec3};
use crate::ops::{
    conv_parameter_count, standard_avg_pool, standard_conv, za_avg_pool, za_conv_backward,
    za_conv_forward, za_conv_forward_gathered, ConvWeights,
};
use crate::tensor::{DepthMap, FeatureTensor, OffsetField};

/// Focal length (pixels) used when generating scenes.
pub const SCENE_FOCAL: f64 = 519.0;
pub const FEATURE_CHANNELS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SceneKind {
    Ramp,
    Corridor,
    FrontoParallel,
}

impl std::str::FromStr for SceneKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ramp" => Ok(Self::Ramp),
            "corridor" => Ok(Self::Corridor),
            "frontoparallel" => Ok(Self::FrontoParallel),
            _ => Err(Error::config(format!("unknown scene kind {s:?}"))),
        }
    }
}

/// Plane `normal · P = offset` in camera coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Plane {
    pub normal: [f64; 3],
    pub offset: f64,
}

impl Plane {
    fn new(n: Vec3, offset: f64) -> Self {
        Self {
            normal: [n.x, n.y, n.z],
            offset,
        }
    }

    fn n(&self) -> Vec3 {
        Vec3::new(self.normal[0], self.normal[1], self.normal[2])
    }

    /// Signed distance of `p` from the plane (normal is unit length).
    pub fn residual(&self, p: Vec3) -> f64 {
        self.n().dot(p) - self.offset
    }
}

/// Surface roles, used to derive training classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SurfaceRole {
    Floor,
    Ceiling,
    LeftWall,
    RightWall,
    Frontal,
    Slanted,
}

impl SurfaceRole {
    /// Orientation class: horizontal, vertical side surface, facing the camera.
    pub fn class(self) -> u8 {
        match self {
            SurfaceRole::Floor | SurfaceRole::Ceiling => 0,
            SurfaceRole::LeftWall | SurfaceRole::RightWall | SurfaceRole::Slanted => 1,
            SurfaceRole::Frontal => 2,
        }
    }
}

pub const CLASS_COUNT: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SceneDescription {
    pub kind: SceneKind,
    pub seed: u64,
    pub planes: Vec<Plane>,
    pub roles: Vec<SurfaceRole>,
    pub texture_seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub depth: DepthMap,
    pub features: FeatureTensor,
    /// Surface index per pixel, row-major.
    pub labels: Vec<u8>,
    pub intrinsics: CameraIntrinsics,
    pub description: SceneDescription,
}

impl SyntheticScene {
    pub fn height(&self) -> usize {
        self.depth.height()
    }

    pub fn width(&self) -> usize {
        self.depth.width()
    }

    /// Orientation class per pixel.
    pub fn classes(&self) -> Vec<u8> {
        self.labels
            .iter()
            .map(|&s| self.description.roles[s as usize].class())
            .collect()
    }
}

fn unit(v: Vec3) -> Vec3 {
    v.scale(1.0 / v.norm())
}

/// Scene whose depth is exact ray/plane intersection for every pixel.
///
/// Per-surface textures are independent draws from one distribution, so
/// appearance carries no information about which surface a pixel is on.
pub fn generate_scene(kind: SceneKind, h: usize, w: usize, seed: u64) -> Result<SyntheticScene> {
    if h < 16 || w < 16 {
        return Err(Error::config(format!("scene must be at least 16x16, got {h}x{w}")));
    }
    let k = CameraIntrinsics::centered(SCENE_FOCAL, SCENE_FOCAL, w, h)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let (planes, roles) = match kind {
        SceneKind::FrontoParallel => {
            let z = rng.random_range(1.0..5.0);
            (vec![Plane::new(Vec3::new(0.0, 0.0, 1.0), z)], vec![SurfaceRole::Frontal])
        }
        SceneKind::Ramp => {
            // plane through (0, 0, z0) tilted about the vertical and horizontal axes
            let z0 = rng.random_range(1.0..4.0);
            let yaw: f64 = rng.random_range(0.4..1.2) * if rng.random::<bool>() { 1.0 } else { -1.0 };
            let pitch: f64 = rng.random_range(-0.3..0.3);
            let n = unit(Vec3::new(-yaw.sin(), pitch.sin(), yaw.cos()));
            (vec![Plane::new(n, n.z * z0)], vec![SurfaceRole::Slanted])
        }
        SceneKind::Corridor => {
            let half_w = rng.random_range(0.8..1.2);
            let half_h = rng.random_range(0.8..1.2);
            // end wall spans roughly a fifth to a third of the image
            let frac = rng.random_range(0.1..0.17);
            let length = k.fu * half_w / (frac * w as f64);
            (
                vec![
                    Plane::new(Vec3::new(0.0, 1.0, 0.0), half_h),
                    Plane::new(Vec3::new(0.0, -1.0, 0.0), half_h),
                    Plane::new(Vec3::new(-1.0, 0.0, 0.0), half_w),
                    Plane::new(Vec3::new(1.0, 0.0, 0.0), half_w),
                    Plane::new(Vec3::new(0.0, 0.0, 1.0), length),
                ],
                vec![
                    SurfaceRole::Floor,
                    SurfaceRole::Ceiling,
                    SurfaceRole::LeftWall,
                    SurfaceRole::RightWall,
                    SurfaceRole::Frontal,
                ],
            )
        }
    };

    let mut depth = Vec::with_capacity(h * w);
    let mut labels = Vec::with_capacity(h * w);
    for v in 0..h {
        for u in 0..w {
            let ray = Vec3::new((u as f64 - k.cu) / k.fu, (v as f64 - k.cv) / k.fv, 1.0);
            // nearest plane in front of the camera; the camera sits inside
            // the corridor so this is the first surface the ray meets
            let (z, s) = planes
                .iter()
                .enumerate()
                .filter_map(|(i, p)| {
                    let denom = p.n().dot(ray);
                    let t = p.offset / denom;
                    (denom.abs() > 1e-12 && t > 0.0).then_some((t, i))
                })
                .min_by(|a, b| a.0.total_cmp(&b.0))
                .ok_or_else(|| Error::config("scene ray misses every surface"))?;
            depth.push(z as f32);
            labels.push(s as u8);
        }
    }

    let texture_seeds: Vec<u64> = (0..planes.len()).map(|_| rng.random()).collect();
    let features = paint(&labels, &texture_seeds, h, w);
    Ok(SyntheticScene {
        depth: DepthMap::new(h, w, depth)?,
        features,
        labels,
        intrinsics: k,
        description: SceneDescription {
            kind,
            seed,
            planes,
            roles,
            texture_seeds,
        },
    })
}

fn paint(labels: &[u8], seeds: &[u64], h: usize, w: usize) -> FeatureTensor {
    let noise = Normal::new(0.0f32, 0.25).unwrap();
    let mut rngs: Vec<ChaCha8Rng> = seeds.iter().map(|s| ChaCha8Rng::seed_from_u64(*s)).collect();
    let base: Vec<[f32; FEATURE_CHANNELS]> = rngs
        .iter_mut()
        .map(|r| std::array::from_fn(|_| r.random_range(0.3..0.7)))
        .collect();
    let mut x = FeatureTensor::zeros(FEATURE_CHANNELS, h, w);
    for y in 0..h {
        for c in 0..w {
            let s = labels[y * w + c] as usize;
            for (ch, b) in base[s].iter().enumerate() {
                let v = b + noise.sample(&mut rngs[s]);
                x.set(ch, y, c, v);
            }
        }
    }
    x
}

// ---- toy segmentation model ----

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Operator {
    Standard,
    Adapted,
}

impl Operator {
    pub fn as_str(self) -> &'static str {
        match self {
            Operator::Standard => "standard",
            Operator::Adapted => "adapted",
        }
    }
}

impl std::str::FromStr for Operator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(Self::Standard),
            "adapted" => Ok(Self::Adapted),
            _ => Err(Error::config(format!("unknown operator {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub operator: Operator,
    pub hidden: usize,
    /// Focal length assumed when computing offsets; `None` uses the scene's.
    pub focal: Option<f64>,
}

impl TrainConfig {
    pub fn new(operator: Operator, seed: u64) -> Self {
        Self {
            learning_rate: 0.5,
            epochs: 600,
            seed,
            operator,
            hidden: 8,
            focal: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning rate must be finite and non-negative"));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs must be >= 1"));
        }
        if self.hidden == 0 {
            return Err(Error::config("hidden width must be >= 1"));
        }
        if let Some(f) = self.focal {
            if !(f > 0.0 && f.is_finite()) {
                return Err(Error::config("focal override must be positive"));
            }
        }
        Ok(())
    }
}

/// Two-layer pixel classifier: 3x3 conv + bias, ReLU, 1x1 conv + bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    pub conv1: ConvWeights,
    pub bias1: Vec<f32>,
    pub conv2: ConvWeights,
    pub bias2: Vec<f32>,
}

impl ToyModel {
    pub fn init(in_channels: usize, hidden: usize, classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x005e_ed0f_70a7);
        Self {
            conv1: ConvWeights::random(hidden, in_channels, 3, &mut rng),
            bias1: vec![0.0; hidden],
            conv2: ConvWeights::random(classes, hidden, 1, &mut rng),
            bias2: vec![0.0; classes],
        }
    }

    pub fn parameter_count(&self) -> usize {
        conv_parameter_count(self.conv1.in_channels(), self.conv1.out_channels(), 3, true)
            + conv_parameter_count(self.conv2.in_channels(), self.conv2.out_channels(), 1, true)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyResult {
    pub model: ToyModel,
    /// Loss before each update.
    pub losses: Vec<f64>,
    /// Loss after the last update.
    pub final_loss: f64,
    pub miou: f64,
    pub pixel_acc: f64,
}

struct Prepared {
    x: FeatureTensor,
    offsets: OffsetField,
    classes: Vec<u8>,
}

fn prepare(scenes: &[SyntheticScene], cfg: &TrainConfig, spec: &KernelSpec) -> Result<Vec<Prepared>> {
    scenes
        .iter()
        .map(|s| {
            let (h, w) = (s.height(), s.width());
            let offsets = match cfg.operator {
                Operator::Standard => OffsetField::zeros(spec.taps(), h, w),
                Operator::Adapted => {
                    let k = match cfg.focal {
                        Some(f) => CameraIntrinsics::centered(f, f, w, h)?,
                        None => s.intrinsics,
                    };
                    compute_offsets(&s.depth, &k, spec, h, w)?.0
                }
            };
            Ok(Prepared {
                x: s.features.clone(),
                offsets,
                classes: s.classes(),
            })
        })
        .collect()
}

struct Forward {
    hidden_pre: FeatureTensor,
    hidden: FeatureTensor,
    logits: FeatureTensor,
}

fn forward(model: &ToyModel, p: &Prepared, spec: &KernelSpec, op: Operator) -> Result<Forward> {
    let mut pre = match op {
        Operator::Standard => standard_conv(&p.x, &model.conv1, spec)?,
        Operator::Adapted => za_conv_forward(&p.x, &model.conv1, &p.offsets, spec)?.0,
    };
    add_bias(&mut pre, &model.bias1);
    let mut hidden = pre.clone();
    hidden.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    let mut logits = standard_conv(&hidden, &model.conv2, &KernelSpec::new(1, 1, 1, 0)?)?;
    add_bias(&mut logits, &model.bias2);
    Ok(Forward {
        hidden_pre: pre,
        hidden,
        logits,
    })
}

fn add_bias(x: &mut FeatureTensor, bias: &[f32]) {
    let plane = x.height() * x.width();
    for (c, b) in bias.iter().enumerate() {
        x.data_mut()[c * plane..(c + 1) * plane]
            .iter_mut()
            .for_each(|v| *v += b);
    }
}

/// Summed cross-entropy and its gradient with respect to the logits.
fn softmax_xent(logits: &FeatureTensor, classes: &[u8]) -> (f64, FeatureTensor) {
    let (c, plane) = (logits.channels(), logits.height() * logits.width());
    let mut grad = FeatureTensor::zeros(c, logits.height(), logits.width());
    let mut loss = 0.0;
    let mut probs = vec![0.0f64; c];
    for (p, &class) in classes.iter().enumerate().take(plane) {
        let m = (0..c)
            .map(|k| logits.data()[k * plane + p] as f64)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for (k, pk) in probs.iter_mut().enumerate() {
            *pk = (logits.data()[k * plane + p] as f64 - m).exp();
            z += *pk;
        }
        let target = class as usize;
        loss -= (probs[target] / z).ln();
        for (k, pk) in probs.iter().enumerate() {
            let g = pk / z - if k == target { 1.0 } else { 0.0 };
            grad.data_mut()[k * plane + p] = g as f32;
        }
    }
    (loss, grad)
}

fn predict(logits: &FeatureTensor) -> Vec<u8> {
    let (c, plane) = (logits.channels(), logits.height() * logits.width());
    (0..plane)
        .map(|p| {
            (0..c)
                .max_by(|&a, &b| {
                    logits.data()[a * plane + p].total_cmp(&logits.data()[b * plane + p])
                })
                .unwrap() as u8
        })
        .collect()
}

/// Pixel accuracy and mean IoU over classes present in either the
/// prediction or the ground truth.
pub fn segmentation_metrics(pred: &[u8], truth: &[u8], classes: usize) -> (f64, f64) {
    let mut inter = vec![0usize; classes];
    let mut union = vec![0usize; classes];
    let mut correct = 0;
    for (&p, &t) in pred.iter().zip(truth) {
        if p == t {
            correct += 1;
            inter[p as usize] += 1;
            union[p as usize] += 1;
        } else {
            union[p as usize] += 1;
            union[t as usize] += 1;
        }
    }
    let ious: Vec<f64> = inter
        .iter()
        .zip(&union)
        .filter(|(_, &u)| u > 0)
        .map(|(&i, &u)| i as f64 / u as f64)
        .collect();
    let miou = if ious.is_empty() {
        0.0
    } else {
        ious.iter().sum::<f64>() / ious.len() as f64
    };
    (correct as f64 / pred.len().max(1) as f64, miou)
}

fn total_loss(model: &ToyModel, data: &[Prepared], spec: &KernelSpec, op: Operator) -> Result<f64> {
    let mut loss = 0.0;
    let mut count = 0;
    for p in data {
        let f = forward(model, p, spec, op)?;
        loss += softmax_xent(&f.logits, &p.classes).0;
        count += p.classes.len();
    }
    Ok(loss / count as f64)
}

/// Full-batch gradient descent on `train`, metrics measured on `eval`.
pub fn train_toy(train: &[SyntheticScene], eval: &[SyntheticScene], cfg: &TrainConfig) -> Result<ToyResult> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::config("training needs at least one scene"));
    }
    let spec = KernelSpec::same(3, 1)?;
    let one = KernelSpec::new(1, 1, 1, 0)?;
    let train_data = prepare(train, cfg, &spec)?;
    let eval_data = prepare(eval, cfg, &spec)?;
    let pixels: usize = train_data.iter().map(|p| p.classes.len()).sum();
    let norm = 1.0 / pixels as f64;

    let mut model = ToyModel::init(FEATURE_CHANNELS, cfg.hidden, CLASS_COUNT, cfg.seed);
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut loss = 0.0;
        let mut g1 = vec![0.0f64; model.conv1.data().len()];
        let mut gb1 = vec![0.0f64; model.bias1.len()];
        let mut g2 = vec![0.0f64; model.conv2.data().len()];
        let mut gb2 = vec![0.0f64; model.bias2.len()];
        for p in &train_data {
            let f = forward(&model, p, &spec, cfg.operator)?;
            let (l, glogits) = softmax_xent(&f.logits, &p.classes);
            loss += l;
            let zero1 = OffsetField::zeros(1, p.x.height(), p.x.width());
            let back2 = za_conv_backward(&f.hidden, &model.conv2, &zero1, &one, &glogits)?;
            accumulate(&mut g2, back2.grad_w.data());
            accumulate_planes(&mut gb2, &glogits);
            let mut ghidden = back2.grad_x;
            for (g, pre) in ghidden.data_mut().iter_mut().zip(f.hidden_pre.data()) {
                if *pre <= 0.0 {
                    *g = 0.0;
                }
            }
            let back1 = za_conv_backward(&p.x, &model.conv1, &p.offsets, &spec, &ghidden)?;
            accumulate(&mut g1, back1.grad_w.data());
            accumulate_planes(&mut gb1, &ghidden);
        }
        let loss = loss * norm;
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch, loss });
        }
        losses.push(loss);
        let step = cfg.learning_rate * norm;
        descend(model.conv1.data_mut(), &g1, step);
        descend(&mut model.bias1, &gb1, step);
        descend(model.conv2.data_mut(), &g2, step);
        descend(&mut model.bias2, &gb2, step);
        let params = [model.conv1.data(), &model.bias1, model.conv2.data(), &model.bias2];
        if params.iter().any(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(Error::Diverged {
                epoch,
                loss: f64::INFINITY,
            });
        }
    }
    let final_loss = total_loss(&model, &train_data, &spec, cfg.operator)?;
    if !final_loss.is_finite() {
        return Err(Error::Diverged {
            epoch: cfg.epochs,
            loss: final_loss,
        });
    }

    let mut preds = Vec::new();
    let mut truth = Vec::new();
    for p in &eval_data {
        let f = forward(&model, p, &spec, cfg.operator)?;
        preds.extend(predict(&f.logits));
        truth.extend_from_slice(&p.classes);
    }
    let (pixel_acc, miou) = segmentation_metrics(&preds, &truth, CLASS_COUNT);
    Ok(ToyResult {
        model,
        losses,
        final_loss,
        miou,
        pixel_acc,
    })
}

fn accumulate(acc: &mut [f64], g: &[f32]) {
    acc.iter_mut().zip(g).for_each(|(a, g)| *a += *g as f64);
}

fn accumulate_planes(acc: &mut [f64], g: &FeatureTensor) {
    let plane = g.height() * g.width();
    for (c, a) in acc.iter_mut().enumerate() {
        *a += g.data()[c * plane..(c + 1) * plane]
            .iter()
            .map(|v| *v as f64)
            .sum::<f64>();
    }
}

fn descend(w: &mut [f32], g: &[f64], step: f64) {
    w.iter_mut()
        .zip(g)
        .for_each(|(w, g)| *w = (*w as f64 - step * g) as f32);
}

// ---- paired experiments ----

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub kind: SceneKind,
    pub size: usize,
    pub train_scenes: usize,
    pub eval_scenes: usize,
    pub seeds: Vec<u64>,
    pub operators: Vec<Operator>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub hidden: usize,
    pub focal: Option<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            kind: SceneKind::Corridor,
            size: 32,
            train_scenes: 4,
            eval_scenes: 4,
            seeds: (0..5).collect(),
            operators: vec![Operator::Adapted, Operator::Standard],
            epochs: 600,
            learning_rate: 0.5,
            hidden: 8,
            focal: None,
        }
    }
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub seed: u64,
    pub operator: Operator,
    pub epochs: usize,
    pub final_loss: f64,
    pub miou: f64,
    pub pixel_acc: f64,
    pub initial_loss: f64,
    pub params: usize,
    pub focal: f64,
}

fn scene_set(kind: SceneKind, size: usize, base: u64, n: usize) -> Result<Vec<SyntheticScene>> {
    (0..n as u64)
        .map(|i| generate_scene(kind, size, size, base + i))
        .collect()
}

/// Trains every operator on the same scenes and initialization per seed.
/// Seeds run in parallel; records come back in seed order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RunRecord>> {
    let per_seed: Vec<Vec<RunRecord>> = cfg
        .seeds
        .par_iter()
        .map(|&seed| run_seed(cfg, seed))
        .collect::<Result<_>>()?;
    Ok(per_seed.into_iter().flatten().collect())
}

fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<RunRecord>> {
    let base = seed.wrapping_mul(10_000);
    let train = scene_set(cfg.kind, cfg.size, base, cfg.train_scenes)?;
    let eval = scene_set(cfg.kind, cfg.size, base + 5_000, cfg.eval_scenes)?;
    let mut records = Vec::with_capacity(cfg.operators.len());
    for &operator in &cfg.operators {
        let tc = TrainConfig {
            learning_rate: cfg.learning_rate,
            epochs: cfg.epochs,
            seed,
            operator,
            hidden: cfg.hidden,
            focal: cfg.focal,
        };
        let r = train_toy(&train, &eval, &tc)?;
        records.push(RunRecord {
            seed,
            operator,
            epochs: cfg.epochs,
            final_loss: r.final_loss,
            miou: r.miou,
            pixel_acc: r.pixel_acc,
            initial_loss: r.losses[0],
            params: r.model.parameter_count(),
            focal: cfg.focal.unwrap_or(SCENE_FOCAL),
        });
    }
    Ok(records)
}

pub fn write_runs_csv<W: Write>(records: &[RunRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::Format(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OperatorSummary {
    pub operator: Operator,
    pub runs: usize,
    pub mean_miou: f64,
    pub mean_pixel_acc: f64,
    pub mean_final_loss: f64,
    pub params: usize,
}

pub fn summarize(records: &[RunRecord]) -> Vec<OperatorSummary> {
    let mut ops: Vec<Operator> = Vec::new();
    for r in records {
        if !ops.contains(&r.operator) {
            ops.push(r.operator);
        }
    }
    ops.into_iter()
        .map(|op| {
            let rs: Vec<&RunRecord> = records.iter().filter(|r| r.operator == op).collect();
            let n = rs.len() as f64;
            OperatorSummary {
                operator: op,
                runs: rs.len(),
                mean_miou: rs.iter().map(|r| r.miou).sum::<f64>() / n,
                mean_pixel_acc: rs.iter().map(|r| r.pixel_acc).sum::<f64>() / n,
                mean_final_loss: rs.iter().map(|r| r.final_loss).sum::<f64>() / n,
                params: rs[0].params,
            }
        })
        .collect()
}

pub fn mean_miou(records: &[RunRecord], op: Operator) -> Option<f64> {
    summarize(records)
        .into_iter()
        .find(|s| s.operator == op)
        .map(|s| s.mean_miou)
}

// ---- timing ----

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchOp {
    Offsets,
    StandardConv,
    AdaptedConv,
    AdaptedConvGathered,
    OffsetsAndAdaptedConv,
    StandardPool,
    AdaptedPool,
}

impl BenchOp {
    pub const ALL: [BenchOp; 7] = [
        BenchOp::Offsets,
        BenchOp::StandardConv,
        BenchOp::AdaptedConv,
        BenchOp::AdaptedConvGathered,
        BenchOp::OffsetsAndAdaptedConv,
        BenchOp::StandardPool,
        BenchOp::AdaptedPool,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BenchOp::Offsets => "offsets",
            BenchOp::StandardConv => "standard_conv",
            BenchOp::AdaptedConv => "adapted_conv",
            BenchOp::AdaptedConvGathered => "adapted_conv_gathered",
            BenchOp::OffsetsAndAdaptedConv => "offsets_and_adapted_conv",
            BenchOp::StandardPool => "standard_pool",
            BenchOp::AdaptedPool => "adapted_pool",
        }
    }
}

impl std::str::FromStr for BenchOp {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        BenchOp::ALL
            .into_iter()
            .find(|op| op.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown benchmark operator {s:?}")))
    }
}

pub const BENCH_CHANNELS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub op: BenchOp,
    pub size: usize,
    pub repeats: usize,
    pub median_ms: f64,
    /// Absent for a single measurement.
    pub p95_ms: Option<f64>,
    pub params: usize,
}

/// Wall-clock timings of `ops` on `size x size` corridor scenes with
/// `BENCH_CHANNELS` channels in and out and a 3x3 kernel.
pub fn bench(ops: &[BenchOp], sizes: &[usize], repeats: usize) -> Result<Vec<BenchRow>> {
    if repeats == 0 {
        return Err(Error::config("repeats must be >= 1"));
    }
    let spec = KernelSpec::same(3, 1)?;
    let mut rows = Vec::new();
    for &size in sizes {
        let scene = generate_scene(SceneKind::Corridor, size, size, 1)?;
        let mut rng = ChaCha8Rng::seed_from_u64(size as u64);
        let x = FeatureTensor::from_fn(BENCH_CHANNELS, size, size, |_, _, _| rng.random_range(-1.0..1.0));
        let w = ConvWeights::random(BENCH_CHANNELS, BENCH_CHANNELS, 3, &mut rng);
        let k = scene.intrinsics;
        let (offsets, _) = compute_offsets(&scene.depth, &k, &spec, size, size)?;
        for &op in ops {
            let mut times = Vec::with_capacity(repeats);
            for _ in 0..repeats {
                let t = Instant::now();
                match op {
                    BenchOp::Offsets => {
                        compute_offsets(&scene.depth, &k, &spec, size, size)?;
                    }
                    BenchOp::StandardConv => {
                        standard_conv(&x, &w, &spec)?;
                    }
                    BenchOp::AdaptedConv => {
                        za_conv_forward(&x, &w, &offsets, &spec)?;
                    }
                    BenchOp::AdaptedConvGathered => {
                        za_conv_forward_gathered(&x, &w, &offsets, &spec)?;
                    }
                    BenchOp::OffsetsAndAdaptedConv => {
                        let (o, _) = compute_offsets(&scene.depth, &k, &spec, size, size)?;
                        za_conv_forward(&x, &w, &o, &spec)?;
                    }
                    BenchOp::StandardPool => {
                        standard_avg_pool(&x, &spec)?;
                    }
                    BenchOp::AdaptedPool => {
                        za_avg_pool(&x, &offsets, &spec)?;
                    }
                }
                times.push(t.elapsed().as_secs_f64() * 1e3);
            }
            times.sort_by(f64::total_cmp);
            let params = match op {
                BenchOp::StandardConv
                | BenchOp::AdaptedConv
                | BenchOp::AdaptedConvGathered
                | BenchOp::OffsetsAndAdaptedConv => w.parameter_count(),
                _ => 0,
            };
            rows.push(BenchRow {
                op,
                size,
                repeats,
                median_ms: percentile(&times, 0.5),
                p95_ms: (repeats > 1).then(|| percentile(&times, 0.95)),
                params,
            });
        }
    }
    Ok(rows)
}

/// Nearest-rank percentile of sorted samples.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

/// Median time of `a` divided by that of `b` at `size`.
pub fn slowdown(rows: &[BenchRow], a: BenchOp, b: BenchOp, size: usize) -> Option<f64> {
    let find = |op| rows.iter().find(|r| r.op == op && r.size == size).map(|r| r.median_ms);
    Some(find(a)? / find(b)?)
}

pub fn write_bench_csv<W: Write>(rows: &[BenchRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::Format(e.to_string()))
}
