//! End-to-end compositions of the building blocks: grid partitioning and
//! boundary tracing.

use crate::assignment::{cell_stats, soft_assign, CandidateWindow};
use crate::error::Result;
use crate::features::FeatureMap;
use crate::grid::{DeformedGrid, Point};
use crate::partition::{agglomerate, build_affinity, Clustering, MergeRule, StopRule};
use crate::tracer::{edge_energy, snap_seeds, trace_path, vertex_energy, EnergyMap, TracedPolygon};

/// Cell statistics → affinity graph → agglomeration down to `superpixels`
/// clusters.
pub fn partition_grid(
    grid: &DeformedGrid,
    features: &FeatureMap,
    superpixels: usize,
    sigma: f64,
    delta: f64,
    rule: MergeRule,
) -> Result<Clustering> {
    let assign = soft_assign(grid, delta, CandidateWindow::default())?;
    let stats = cell_stats(&assign, features)?;
    let graph = build_affinity(grid, features, &stats, sigma)?;
    agglomerate(&graph, grid, StopRule { target: Some(superpixels), threshold: None }, rule)
}

/// Snap seeds to low-energy vertices and connect them by minimal-energy paths.
pub fn trace_seeds(grid: &DeformedGrid, energy: &EnergyMap, seeds: &[Point], snap_k: usize) -> Result<TracedPolygon> {
    let vertex = vertex_energy(grid, energy)?;
    let edges = edge_energy(grid, energy)?;
    let snapped = snap_seeds(grid, &vertex, seeds, snap_k)?;
    trace_path(grid, &edges, &snapped)
}
