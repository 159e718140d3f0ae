use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand};

mod commands;
mod summary;
mod svg;

use commands::CliError;

#[derive(Debug, Parser)]
#[command(name = "zacn", version, about = "Depth-adapted convolution offsets, operators and plots")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compute the depth-adapted offset field of a depth map.
    Offsets(OffsetsArgs),
    /// Run a convolution, depth-adapted unless --standard is given.
    Conv(ConvArgs),
    /// Run an average pooling, depth-adapted unless --standard is given.
    Pool(PoolArgs),
    /// Draw regular and adapted sampling grids over a depth map as SVG.
    Viz(VizArgs),
    /// Time the operators on synthetic corridor scenes.
    Bench(BenchArgs),
    /// Train the two-layer toy segmentation model on synthetic scenes.
    Toytrain(ToyArgs),
    /// Write a synthetic scene (depth, features, intrinsics, labels).
    Scene(SceneArgs),
    /// Write seeded random convolution weights.
    Weights(WeightsArgs),
}

#[derive(Debug, Clone, Args)]
struct KernelArgs {
    /// Kernel size N (odd).
    #[arg(long, default_value_t = 3)]
    kernel: usize,
    #[arg(long, default_value_t = 1)]
    dilation: usize,
    #[arg(long, default_value_t = 1)]
    stride: usize,
    /// Zero padding; defaults to dilation * (N - 1) / 2.
    #[arg(long)]
    padding: Option<usize>,
}

#[derive(Debug, Args)]
struct OffsetsArgs {
    /// Depth map (PFM or 2-D ZACN container).
    #[arg(long)]
    depth: PathBuf,
    /// Intrinsics file of key=value lines.
    #[arg(long)]
    intrinsics: PathBuf,
    #[command(flatten)]
    kernel: KernelArgs,
    /// Resample the depth map to HxW before fitting.
    #[arg(long, value_parser = parse_dims)]
    resample: Option<(usize, usize)>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ConvArgs {
    /// Input feature tensor (ZACN).
    #[arg(long)]
    input: PathBuf,
    /// Weights container with dims [out, in, N, N].
    #[arg(long)]
    weights: PathBuf,
    #[arg(long, required_unless_present = "standard", conflicts_with = "standard")]
    offsets: Option<PathBuf>,
    /// Use the regular sampling grid.
    #[arg(long)]
    standard: bool,
    #[command(flatten)]
    kernel: KernelArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PoolArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, required_unless_present = "standard", conflicts_with = "standard")]
    offsets: Option<PathBuf>,
    #[arg(long)]
    standard: bool,
    #[command(flatten)]
    kernel: KernelArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct VizArgs {
    #[arg(long)]
    depth: PathBuf,
    #[arg(long)]
    intrinsics: PathBuf,
    /// Query pixels as "u,v;u,v;...".
    #[arg(long, value_parser = parse_points)]
    at: Points,
    #[arg(long, default_value_t = 3)]
    kernel: usize,
    #[arg(long, default_value_t = 1)]
    dilation: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Operators to time (repeatable); all when omitted.
    #[arg(long = "op")]
    ops: Vec<zacn_core::harness::BenchOp>,
    #[arg(long, value_delimiter = ',', default_value = "32,64")]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    /// CSV output; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ToyArgs {
    #[arg(long, default_value = "corridor")]
    kind: zacn_core::harness::SceneKind,
    #[arg(long, default_value_t = 32)]
    size: usize,
    #[arg(long, default_value_t = 4)]
    train_scenes: usize,
    #[arg(long, default_value_t = 4)]
    eval_scenes: usize,
    /// Repeatable; defaults to 0.
    #[arg(long = "seed")]
    seeds: Vec<u64>,
    /// Repeatable; defaults to adapted and standard.
    #[arg(long = "operator")]
    operators: Vec<zacn_core::harness::Operator>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    hidden: Option<usize>,
    /// Focal length assumed when computing offsets (scenes use 519).
    #[arg(long)]
    focal: Option<f64>,
    /// CSV output; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SceneArgs {
    #[arg(long, default_value = "corridor")]
    kind: zacn_core::harness::SceneKind,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory receiving depth.pfm, features.zacn, labels.zacn and intrinsics.txt.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct WeightsArgs {
    #[arg(long = "in")]
    in_channels: usize,
    #[arg(long = "out-channels")]
    out_channels: usize,
    #[arg(long, default_value_t = 3)]
    kernel: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn parse_dims(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected HxW, got {s:?}"))?;
    let parse = |t: &str| t.trim().parse::<usize>().ok().filter(|v| *v > 0);
    match (parse(h), parse(w)) {
        (Some(h), Some(w)) => Ok((h, w)),
        _ => Err(format!("expected two positive integers HxW, got {s:?}")),
    }
}

/// Query pixels as `(u, v)` = (column, row).
#[derive(Debug, Clone)]
struct Points(Vec<(usize, usize)>);

fn parse_points(s: &str) -> Result<Points, String> {
    let points: Result<Vec<_>, String> = s
        .split(';')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            let (u, v) = p
                .split_once(',')
                .ok_or_else(|| format!("expected u,v but got {p:?}"))?;
            let u = u.trim().parse().map_err(|_| format!("bad column {u:?} in {p:?}"))?;
            let v = v.trim().parse().map_err(|_| format!("bad row {v:?} in {p:?}"))?;
            Ok((u, v))
        })
        .collect();
    let points = points?;
    if points.is_empty() {
        return Err("no points given".into());
    }
    Ok(Points(points))
}

/// `out.ext` -> `out.ext.json`
fn summary_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("ZACN_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::config(format!("ZACN_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::config(format!("cannot start {n} worker threads: {e}")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::Offsets(a) => commands::offsets(&a),
        Command::Conv(a) => commands::conv(&a),
        Command::Pool(a) => commands::pool(&a),
        Command::Viz(a) => commands::viz(&a),
        Command::Bench(a) => commands::bench(&a),
        Command::Toytrain(a) => commands::toytrain(&a),
        Command::Scene(a) => commands::scene(&a),
        Command::Weights(a) => commands::weights(&a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::ValueValidation | ErrorKind::InvalidValue) => {
            // clap leaves the usage line out of value errors
            let _ = e.print();
            let mut cmd = Cli::command();
            let name = std::env::args().nth(1).unwrap_or_default();
            let usage = match cmd.find_subcommand(&name) {
                Some(sub) => sub.clone().bin_name(format!("zacn {name}")).render_usage(),
                None => cmd.render_usage(),
            };
            eprintln!("\n{usage}");
            return ExitCode::from(2);
        }
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("zacn: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
