use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use defgrid_core::energy::{LossWeights, MeanMode};
use defgrid_core::grid::{Point, TopologyVariant};
use defgrid_core::optimizer::{FlipGuard, OptimizerConfig};
use defgrid_core::partition::{MergeRule, DEFAULT_SIGMA};
use defgrid_core::pooling::PoolMode;
use defgrid_core::tracer::{DEFAULT_SEED_COUNT, DEFAULT_SNAP_K};
use defgrid_workbench::commands::{
    boundary_overlay, run_partition, run_pool, run_trace, EnergySource, GridSettings, PartitionRequest, Quads,
    TraceRequest, DEFAULT_EDGE_THRESHOLD,
};
use defgrid_workbench::io::{read_image, read_labels};
use defgrid_workbench::error::core_exit_code;
use defgrid_workbench::{service, WorkbenchError};
use serde::de::DeserializeOwned;

/// Deformable triangular grids: image partitioning, pooling and boundary tracing.
#[derive(Debug, Parser)]
#[command(name = "defgrid", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Deform a grid on an image and agglomerate its cells into superpixels.
    Partition(PartitionArgs),
    /// Trace an object boundary along grid edges through snapped seed points.
    Trace(TraceArgs),
    /// Pool image features over the grid cells and paste them back.
    Pool(PoolArgs),
    /// Run the local HTTP service.
    Serve(ServeArgs),
}

fn kebab<T: DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

#[derive(Debug, Args)]
struct GridArgs {
    /// Input image (PNG, PPM or PGM).
    #[arg(long)]
    image: PathBuf,
    /// Quad lattice as ROWSxCOLS.
    #[arg(long, default_value = "20x20")]
    quads: Quads,
    /// Triangulation of each quad: alternating, diagonal or quad-center.
    #[arg(long, default_value = "alternating", value_parser = kebab::<TopologyVariant>)]
    topology: TopologyVariant,
    /// Optimizer iterations (0 keeps the uniform grid).
    #[arg(long, default_value_t = 500)]
    iters: usize,
    /// Seed of the random initial jitter.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Random initial offsets as a fraction of the grid pitch.
    #[arg(long, default_value_t = 0.0)]
    init_jitter: f64,
    /// First step in px (default: a tenth of the grid pitch).
    #[arg(long)]
    step_size: Option<f64>,
    #[arg(long, default_value_t = 0.997)]
    step_decay: f64,
    /// Offset bound as a fraction of the grid pitch.
    #[arg(long, default_value_t = 0.45)]
    max_offset: f64,
    /// What to do when a step would flip a cell: backtrack or reject.
    #[arg(long, default_value = "backtrack", value_parser = kebab::<FlipGuard>)]
    flip_guard: FlipGuard,
    #[arg(long, default_value_t = 0.5)]
    lambda_recons: f64,
    #[arg(long, default_value_t = 0.02)]
    lambda_area: f64,
    #[arg(long, default_value_t = 0.1)]
    lambda_lap: f64,
    /// Soft-assignment temperature, px.
    #[arg(long, default_value_t = 1.0)]
    delta: f64,
    /// Gradient through the soft cell means (soft-grad) or not (stop-grad).
    #[arg(long, default_value = "soft-grad", value_parser = kebab::<MeanMode>)]
    mean_mode: MeanMode,
    /// Write the per-iteration energy log (JSON lines) here.
    #[arg(long)]
    trace_energy: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

impl GridArgs {
    fn settings(&self) -> GridSettings {
        GridSettings {
            quads: self.quads,
            topology: self.topology,
            optimizer: OptimizerConfig {
                iterations: self.iters,
                step_size: self.step_size,
                step_decay: self.step_decay,
                max_offset: self.max_offset,
                flip_guard: self.flip_guard,
                seed: self.seed,
                init_jitter: self.init_jitter,
                weights: LossWeights {
                    lambda_recons: self.lambda_recons,
                    lambda_area: self.lambda_area,
                    lambda_lap: self.lambda_lap,
                    delta: self.delta,
                    mean_mode: self.mean_mode,
                    ..LossWeights::default()
                },
                ..OptimizerConfig::default()
            },
        }
    }
}

#[derive(Debug, Args)]
struct PartitionArgs {
    #[command(flatten)]
    grid: GridArgs,
    /// Number of superpixels to agglomerate down to.
    #[arg(long, default_value_t = 36)]
    superpixels: usize,
    /// Colour scale of the cell affinity.
    #[arg(long, default_value_t = DEFAULT_SIGMA)]
    sigma: f64,
    /// Affinity of a merged cluster: mean or pixel-weighted.
    #[arg(long, default_value = "mean", value_parser = kebab::<MergeRule>)]
    merge_rule: MergeRule,
    /// Ground-truth label map; adds metrics.csv.
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Boundary tolerance of BP/BR, px.
    #[arg(long, default_value_t = 3)]
    tolerance: usize,
    /// Also write overlay.png with segment boundaries.
    #[arg(long)]
    overlay: bool,
}

#[derive(Debug, Args)]
struct TraceArgs {
    #[command(flatten)]
    grid: GridArgs,
    /// Initial object mask: energy from its boundary and, without --seeds,
    /// the seed points too.
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Seed points as a JSON list of [x, y].
    #[arg(long)]
    seeds: Option<PathBuf>,
    /// Boundary strokes (JSON list of polylines) as the energy source.
    #[arg(long, conflicts_with = "mask")]
    scribbles: Option<PathBuf>,
    /// Colour-difference threshold when the energy comes from image edges.
    #[arg(long, default_value_t = DEFAULT_EDGE_THRESHOLD)]
    edge_threshold: f64,
    /// Candidate vertices per seed.
    #[arg(long, default_value_t = DEFAULT_SNAP_K)]
    snap_k: usize,
    /// Seeds sampled from the mask when --seeds is absent.
    #[arg(long, default_value_t = DEFAULT_SEED_COUNT)]
    seed_count: usize,
    /// Ground-truth mask; prints mIoU and boundary F.
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Boundary tolerance of the F-score, px.
    #[arg(long, default_value_t = 1)]
    tolerance: usize,
}

#[derive(Debug, Args)]
struct PoolArgs {
    #[command(flatten)]
    grid: GridArgs,
    /// Pooling operator: mean or max.
    #[arg(long, default_value = "mean")]
    mode: PoolMode,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: std::net::IpAddr,
}

fn write(dir: &Path, name: &str, bytes: impl AsRef<[u8]>) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, bytes).with_context(|| format!("cannot write {}", path.display()))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| WorkbenchError::Usage(format!("cannot read {}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text).map_err(|e| WorkbenchError::Usage(format!("{}: {e}", path.display())))?)
}

fn prepare(args: &GridArgs) -> Result<defgrid_core::features::FeatureMap> {
    let features = read_image(&args.image)?;
    fs::create_dir_all(&args.out).with_context(|| format!("cannot create {}", args.out.display()))?;
    Ok(features)
}

fn image_name(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

fn partition(args: PartitionArgs) -> Result<()> {
    let features = prepare(&args.grid)?;
    let request = PartitionRequest {
        grid: args.grid.settings(),
        superpixels: args.superpixels,
        sigma: args.sigma,
        merge_rule: args.merge_rule,
        tolerance: args.tolerance,
    };
    let gt = args.gt.as_deref().map(read_labels).transpose()?;
    let name = image_name(&args.grid.image);
    let out = run_partition(&features, &request, gt.as_ref().map(|g| (name.as_str(), g)))?;
    let dir = &args.grid.out;
    write(dir, "grid.json", &out.grid_json)?;
    write(dir, "labels.pgm", &out.labels_pgm)?;
    if let Some(csv) = &out.metrics_csv {
        write(dir, "metrics.csv", csv)?;
    }
    if args.overlay {
        write(dir, "overlay.png", boundary_overlay(&features, &out.clustering.segmentation.ids))?;
    }
    if let Some(path) = &args.grid.trace_energy {
        fs::write(path, out.trace.to_json_lines()).with_context(|| format!("cannot write {}", path.display()))?;
    }
    if let Some(m) = &out.metrics {
        println!("asa={} bp={} br={} f={}", m.asa, m.bp, m.br, m.f);
    }
    Ok(())
}

fn trace(args: TraceArgs) -> Result<()> {
    let features = prepare(&args.grid)?;
    let mask = args.mask.as_deref().map(|p| read_labels(p)?.to_mask()).transpose()?;
    let seeds = args.seeds.as_deref().map(read_json::<Vec<Point>>).transpose()?;
    if mask.is_none() && seeds.is_none() {
        return Err(WorkbenchError::Usage("give --mask or --seeds".into()).into());
    }
    let energy = match (mask, &args.scribbles) {
        (Some(mask), _) => EnergySource::Mask(mask),
        (None, Some(path)) => EnergySource::Strokes(read_json(path)?),
        (None, None) => EnergySource::FeatureEdges { threshold: args.edge_threshold },
    };
    let mut request = TraceRequest::new(args.grid.settings(), energy);
    request.seeds = seeds;
    request.snap_k = args.snap_k;
    request.seed_count = args.seed_count;
    request.tolerance = args.tolerance;
    let gt = args.gt.as_deref().map(|p| read_labels(p)?.to_mask()).transpose()?;
    let out = run_trace(&features, &request, gt.as_ref())?;
    let dir = &args.grid.out;
    write(dir, "polygon.json", &out.polygon_json)?;
    write(dir, "mask.png", &out.mask_png)?;
    write(dir, "grid.json", out.grid.to_file().to_json())?;
    if let Some(s) = out.scores {
        println!("miou={} f={}", s.miou, s.boundary_f);
    }
    Ok(())
}

fn pool(args: PoolArgs) -> Result<()> {
    let features = prepare(&args.grid)?;
    let out = run_pool(&features, &args.grid.settings(), args.mode)?;
    let dir = &args.grid.out;
    write(dir, "cells.bin", &out.cells_bin)?;
    write(dir, "reconstruction.png", &out.reconstruction_png)?;
    write(dir, "grid.json", out.grid.to_file().to_json())?;
    Ok(())
}

fn serve(args: ServeArgs) -> Result<()> {
    let runtime = tokio::runtime::Runtime::new().context("cannot start the async runtime")?;
    runtime.block_on(service::serve(SocketAddr::new(args.host, args.port)))?;
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let code = if let Some(e) = err.downcast_ref::<WorkbenchError>() {
        e.exit_code()
    } else if let Some(e) = err.downcast_ref::<defgrid_core::Error>() {
        core_exit_code(e)
    } else if err.downcast_ref::<std::io::Error>().is_some() {
        1
    } else {
        2
    };
    code as u8
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DEFGRID_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Partition(a) => partition(a),
        Command::Trace(a) => trace(a),
        Command::Pool(a) => pool(a),
        Command::Serve(a) => serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
