//! The pipelines behind the CLI subcommands and the service endpoints. Both
//! surfaces call these functions, so equal inputs give equal artifacts.

use std::str::FromStr;

use defgrid_core::features::FeatureMap;
use defgrid_core::grid::{DeformedGrid, Point, TopologyVariant};
use defgrid_core::mask::Mask;
use defgrid_core::metrics::{asa, boundary_pixels, boundary_score, mask_boundary_f, mask_iou, metrics_csv, MetricsRow};
use defgrid_core::optimizer::{deform, OptimizationTrace, OptimizerConfig};
use defgrid_core::partition::{Clustering, MergeRule, DEFAULT_SIGMA};
use defgrid_core::pipeline::{partition_grid, trace_seeds};
use defgrid_core::pooling::{grid_pool, paste_back, CellFeatureGrid, PoolMode};
use defgrid_core::tracer::{
    distance_to_sources, distance_transform, feature_edges, sample_seed_points, stroke_pixels, EnergyMap, TracedPolygon,
    DEFAULT_SEED_COUNT, DEFAULT_SNAP_K,
};
use serde::{Deserialize, Serialize};

use crate::error::{Result, WorkbenchError};
use crate::io::{encode_mask_png, encode_png_rgb, encode_segmentation, LabelMap};

/// Lattice resolution, written `RxC` (rows × columns of quads).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Quads {
    pub rows: usize,
    pub cols: usize,
}

impl FromStr for Quads {
    type Err = WorkbenchError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || WorkbenchError::Usage(format!("quads must look like 20x20, got {s:?}"));
        let (r, c) = s.split_once(['x', 'X']).ok_or_else(bad)?;
        let rows: usize = r.trim().parse().map_err(|_| bad())?;
        let cols: usize = c.trim().parse().map_err(|_| bad())?;
        if rows == 0 || cols == 0 {
            return Err(bad());
        }
        Ok(Quads { rows, cols })
    }
}

impl std::fmt::Display for Quads {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.rows, self.cols)
    }
}

/// Grid construction plus optimization, shared by every pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSettings {
    pub quads: Quads,
    pub topology: TopologyVariant,
    pub optimizer: OptimizerConfig,
}

impl Default for GridSettings {
    fn default() -> Self {
        GridSettings {
            quads: Quads { rows: 20, cols: 20 },
            topology: TopologyVariant::default(),
            optimizer: OptimizerConfig::default(),
        }
    }
}

pub fn uniform_grid(features: &FeatureMap, quads: Quads, topology: TopologyVariant) -> Result<DeformedGrid> {
    Ok(DeformedGrid::uniform(quads.rows, quads.cols, features.width(), features.height(), topology)?)
}

/// Uniform grid deformed by the optimizer (zero iterations keeps it uniform).
pub fn optimized_grid(features: &FeatureMap, settings: &GridSettings) -> Result<OptimizationTrace> {
    let grid = uniform_grid(features, settings.quads, settings.topology)?;
    log::info!(
        "optimizing {} grid on {}x{} for {} iterations",
        settings.quads,
        features.width(),
        features.height(),
        settings.optimizer.iterations
    );
    let trace = deform(&grid, features, &settings.optimizer)?;
    log::debug!("l_total {} -> {}", trace.initial().values.l_total, trace.last().values.l_total);
    Ok(trace)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PartitionRequest {
    pub grid: GridSettings,
    pub superpixels: usize,
    pub sigma: f64,
    pub merge_rule: MergeRule,
    /// Boundary tolerance for BP/BR, px.
    pub tolerance: usize,
}

impl Default for PartitionRequest {
    fn default() -> Self {
        PartitionRequest {
            grid: GridSettings::default(),
            superpixels: 36,
            sigma: DEFAULT_SIGMA,
            merge_rule: MergeRule::default(),
            tolerance: 3,
        }
    }
}

pub struct PartitionArtifacts {
    pub grid: DeformedGrid,
    pub trace: OptimizationTrace,
    pub clustering: Clustering,
    pub grid_json: String,
    pub labels_pgm: Vec<u8>,
    pub metrics: Option<MetricsRow>,
    pub metrics_csv: Option<String>,
}

/// Build → deform → agglomerate → (optionally) score against ground truth.
pub fn run_partition(
    features: &FeatureMap,
    request: &PartitionRequest,
    ground_truth: Option<(&str, &LabelMap)>,
) -> Result<PartitionArtifacts> {
    let trace = optimized_grid(features, &request.grid)?;
    let grid = trace.grid.clone();
    let delta = request.grid.optimizer.weights.delta;
    let clustering = partition_grid(&grid, features, request.superpixels, request.sigma, delta, request.merge_rule)?;
    if clustering.target_unreachable {
        log::warn!("grid has fewer cells than the requested {} superpixels", request.superpixels);
    }
    let seg = &clustering.segmentation;
    let labels_pgm = encode_segmentation(seg.width, seg.height, &seg.ids)?;
    let metrics = match ground_truth {
        Some((name, gt)) => {
            if (gt.width, gt.height) != (seg.width, seg.height) {
                return Err(WorkbenchError::Usage(format!(
                    "ground truth is {}x{} but the image is {}x{}",
                    gt.width, gt.height, seg.width, seg.height
                )));
            }
            let score = boundary_score(&seg.ids, &gt.labels, seg.width, seg.height, request.tolerance)?;
            Some(MetricsRow {
                image: name.to_string(),
                n: seg.segment_count(),
                asa: asa(&seg.ids, &gt.labels)?,
                bp: score.precision,
                br: score.recall,
                f: score.f,
            })
        }
        None => None,
    };
    let metrics_csv = metrics.as_ref().map(|row| metrics_csv(std::slice::from_ref(row)));
    Ok(PartitionArtifacts {
        grid_json: grid.to_file().to_json(),
        grid,
        trace,
        clustering,
        labels_pgm,
        metrics,
        metrics_csv,
    })
}

/// The image with segment boundaries painted red, as PNG.
pub fn boundary_overlay(features: &FeatureMap, ids: &[u32]) -> Vec<u8> {
    let (w, h) = (features.width(), features.height());
    let mut rgb = features.to_rgb8();
    for (i, edge) in boundary_pixels(ids, w, h).into_iter().enumerate() {
        if edge {
            rgb[3 * i..3 * i + 3].copy_from_slice(&[255, 0, 0]);
        }
    }
    encode_png_rgb(w, h, &rgb)
}

/// Where the tracing energy comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum EnergySource {
    /// Distance to the boundary of an initial object mask.
    Mask(Mask),
    /// Distance to user strokes drawn along the object boundary.
    Strokes(Vec<Vec<Point>>),
    /// Distance to colour discontinuities of the image itself.
    FeatureEdges { threshold: f64 },
}

pub const DEFAULT_EDGE_THRESHOLD: f64 = 0.1;

pub fn energy_map(features: &FeatureMap, source: &EnergySource) -> Result<EnergyMap> {
    let (w, h) = (features.width(), features.height());
    Ok(match source {
        EnergySource::Mask(mask) => {
            mask.check_extent(w, h)?;
            distance_transform(mask)?
        }
        EnergySource::Strokes(strokes) => distance_to_sources(w, h, &stroke_pixels(w, h, strokes))?,
        EnergySource::FeatureEdges { threshold } => distance_to_sources(w, h, &feature_edges(features, *threshold))?,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRequest {
    pub grid: GridSettings,
    pub energy: EnergySource,
    /// Explicit seeds; when absent they are sampled from the mask.
    pub seeds: Option<Vec<Point>>,
    pub snap_k: usize,
    pub seed_count: usize,
    /// Boundary tolerance of the reported F-score, px.
    pub tolerance: usize,
}

impl TraceRequest {
    pub fn new(grid: GridSettings, energy: EnergySource) -> Self {
        TraceRequest { grid, energy, seeds: None, snap_k: DEFAULT_SNAP_K, seed_count: DEFAULT_SEED_COUNT, tolerance: 1 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceScores {
    pub miou: f64,
    pub boundary_f: f64,
}

pub struct TraceArtifacts {
    pub grid: DeformedGrid,
    pub seeds: Vec<Point>,
    pub polygon: TracedPolygon,
    pub polygon_json: String,
    pub mask_png: Vec<u8>,
    pub scores: Option<TraceScores>,
}

pub fn resolve_seeds(request: &TraceRequest) -> Result<Vec<Point>> {
    match (&request.seeds, &request.energy) {
        (Some(seeds), _) => Ok(seeds.clone()),
        (None, EnergySource::Mask(mask)) => Ok(sample_seed_points(mask, request.seed_count)?),
        (None, _) => Err(WorkbenchError::Usage("seeds are required unless an initial mask is given".into())),
    }
}

/// Score a traced mask against a ground-truth mask.
pub fn score_mask(pred: &Mask, gt: &Mask, tolerance: usize) -> Result<TraceScores> {
    Ok(TraceScores { miou: mask_iou(pred, gt)?, boundary_f: mask_boundary_f(pred, gt, tolerance)? })
}

/// Deform the grid on the image, then trace a closed minimal-energy path
/// through the snapped seeds.
pub fn run_trace(features: &FeatureMap, request: &TraceRequest, ground_truth: Option<&Mask>) -> Result<TraceArtifacts> {
    let seeds = resolve_seeds(request)?;
    let energy = energy_map(features, &request.energy)?;
    let grid = optimized_grid(features, &request.grid)?.grid;
    let polygon = trace_seeds(&grid, &energy, &seeds, request.snap_k)?;
    let scores = ground_truth.map(|gt| score_mask(&polygon.mask, gt, request.tolerance)).transpose()?;
    Ok(TraceArtifacts {
        polygon_json: polygon.export().to_json(),
        mask_png: encode_mask_png(&polygon.mask),
        grid,
        seeds,
        polygon,
        scores,
    })
}

pub struct PoolArtifacts {
    pub grid: DeformedGrid,
    pub cells: CellFeatureGrid,
    pub cells_bin: Vec<u8>,
    pub reconstruction: FeatureMap,
    pub reconstruction_png: Vec<u8>,
}

/// Pool the image over the (optimized) grid cells and paste the cell values back.
pub fn run_pool(features: &FeatureMap, grid: &GridSettings, mode: PoolMode) -> Result<PoolArtifacts> {
    let grid = optimized_grid(features, grid)?.grid;
    let cells = grid_pool(&grid, features, mode)?;
    let reconstruction = paste_back(&grid, &cells)?;
    Ok(PoolArtifacts {
        cells_bin: cells.to_bytes(),
        reconstruction_png: encode_png_rgb(reconstruction.width(), reconstruction.height(), &reconstruction.to_rgb8()),
        grid,
        cells,
        reconstruction,
    })
}

/// Peak signal-to-noise ratio of `b` against `a`, in dB, for values in `[0, 1]`.
pub fn psnr(a: &FeatureMap, b: &FeatureMap) -> Result<f64> {
    b.check_extent(a.width(), a.height())?;
    let mse = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.data().len() as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { -10.0 * mse.log10() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quads_parse() {
        assert_eq!("20x12".parse::<Quads>().unwrap(), Quads { rows: 20, cols: 12 });
        assert!("20".parse::<Quads>().is_err());
        assert!("0x4".parse::<Quads>().is_err());
        assert_eq!(Quads { rows: 3, cols: 4 }.to_string(), "3x4");
    }

    #[test]
    fn seeds_need_a_source() {
        let settings = GridSettings::default();
        let request = TraceRequest::new(settings, EnergySource::FeatureEdges { threshold: 0.1 });
        assert!(matches!(resolve_seeds(&request), Err(WorkbenchError::Usage(_))));
    }

    #[test]
    fn constant_image_pools_and_pastes_exactly() {
        let f = FeatureMap::constant(24, 24, &[0.2, 0.4, 0.6]).unwrap();
        let settings = GridSettings {
            quads: Quads { rows: 3, cols: 3 },
            optimizer: OptimizerConfig { iterations: 5, ..Default::default() },
            ..Default::default()
        };
        let out = run_pool(&f, &settings, PoolMode::Max).unwrap();
        assert_eq!(out.reconstruction, f);
        assert_eq!(psnr(&f, &out.reconstruction).unwrap(), f64::INFINITY);
        assert_eq!(CellFeatureGrid::from_bytes(&out.cells_bin).unwrap().mode(), PoolMode::Max);
    }
}
