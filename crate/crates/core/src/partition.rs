//! Cell affinity graph and greedy agglomerative clustering into polygonal
//! superpixels.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet};

use ordered_float::OrderedFloat;
use serde::{Deserialize, Serialize};

use crate::assignment::CellStats;
use crate::error::{dims_mismatch, Error, Result};
use crate::features::FeatureMap;
use crate::grid::DeformedGrid;

pub const DEFAULT_SIGMA: f64 = 0.1;

/// How the affinity of a merged node to a common neighbour is formed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MergeRule {
    /// Arithmetic mean of the two prior affinities.
    #[default]
    Mean,
    /// Mean weighted by the pixel counts of the two merged nodes.
    PixelWeighted,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterNode {
    /// Member cells, ascending.
    pub cells: Vec<usize>,
    pub mean_rgb: Vec<f64>,
    pub pixels: usize,
}

/// Clusters with affinity-weighted edges between clusters that share a grid edge.
#[derive(Clone, Debug)]
pub struct AffinityGraph {
    nodes: Vec<Option<ClusterNode>>,
    /// `neighbors[u][v]` = affinity; symmetric.
    neighbors: Vec<BTreeMap<usize, f64>>,
    width: usize,
    height: usize,
    /// Containing cell of every pixel.
    pixel_cells: Vec<usize>,
}

impl AffinityGraph {
    pub fn node_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_some()).count()
    }

    pub fn node(&self, id: usize) -> Option<&ClusterNode> {
        self.nodes.get(id).and_then(|n| n.as_ref())
    }

    pub fn affinity(&self, u: usize, v: usize) -> Option<f64> {
        self.neighbors.get(u).and_then(|m| m.get(&v).copied())
    }

    /// All edges as `(u, v, affinity)` with `u < v`, ascending.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for (u, m) in self.neighbors.iter().enumerate() {
            for (&v, &a) in m.range(u + 1..) {
                out.push((u, v, a));
            }
        }
        out
    }
}

/// `exp(−‖a − b‖² / σ²)`.
pub fn rgb_affinity(a: &[f64], b: &[f64], sigma: f64) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-d / (sigma * sigma)).exp()
}

/// One node per cell (hard mean colour; soft mean for pixel-free cells) and
/// an edge between every pair of cells sharing a grid edge.
pub fn build_affinity(grid: &DeformedGrid, features: &FeatureMap, stats: &CellStats, sigma: f64) -> Result<AffinityGraph> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
    }
    features.check_extent(grid.width(), grid.height())?;
    if stats.cell_count() != grid.cell_count() || stats.channels != features.channels() {
        return Err(dims_mismatch(
            format!("{} cells x {} channels", grid.cell_count(), features.channels()),
            format!("{} cells x {} channels", stats.cell_count(), stats.channels),
        ));
    }
    let rgb = features.channels().min(3);
    let nodes: Vec<Option<ClusterNode>> = (0..grid.cell_count())
        .map(|k| {
            let mean = if stats.hard_count[k] > 0 { stats.hard_mean(k) } else { stats.soft_mean(k) };
            Some(ClusterNode { cells: vec![k], mean_rgb: mean[..rgb].to_vec(), pixels: stats.hard_count[k] })
        })
        .collect();
    let mut neighbors = vec![BTreeMap::new(); grid.cell_count()];
    for &(a, b) in grid.topology().cell_adjacency() {
        let w = rgb_affinity(
            &nodes[a].as_ref().expect("fresh node").mean_rgb,
            &nodes[b].as_ref().expect("fresh node").mean_rgb,
            sigma,
        );
        neighbors[a].insert(b, w);
        neighbors[b].insert(a, w);
    }
    Ok(AffinityGraph { nodes, neighbors, width: grid.width(), height: grid.height(), pixel_cells: grid.hard_labels() })
}

/// When agglomeration stops.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StopRule {
    /// Stop once this many clusters remain.
    pub target: Option<usize>,
    /// Stop once the best affinity falls below this value.
    pub threshold: Option<f64>,
}

/// Per-pixel segment ids, dense in `[0, n_segments)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegmentationMap {
    pub width: usize,
    pub height: usize,
    pub ids: Vec<u32>,
}

impl SegmentationMap {
    pub fn new(width: usize, height: usize, ids: Vec<u32>) -> Result<Self> {
        if ids.len() != width * height {
            return Err(dims_mismatch(width * height, ids.len()));
        }
        Ok(SegmentationMap { width, height, ids })
    }

    pub fn segment_count(&self) -> usize {
        let distinct: BTreeSet<u32> = self.ids.iter().copied().collect();
        distinct.len()
    }
}

#[derive(Clone, Debug)]
pub struct Clustering {
    pub segmentation: SegmentationMap,
    /// Segment id of every cell (cells without pixels keep their cluster's id
    /// when the cluster has pixels elsewhere, else `u32::MAX`).
    pub cell_segments: Vec<u32>,
    /// Boundary loops (vertex indices) of every segment.
    pub boundaries: Vec<Vec<Vec<usize>>>,
    pub merges: usize,
    /// Set when the target exceeds the initial node count.
    pub target_unreachable: bool,
}

/// Greedy agglomeration: repeatedly merge the highest-affinity pair (ties to
/// the lexicographically smallest id pair) until the stop rule holds.
pub fn agglomerate(graph: &AffinityGraph, grid: &DeformedGrid, stop: StopRule, rule: MergeRule) -> Result<Clustering> {
    if let Some(t) = stop.target {
        if t == 0 {
            return Err(Error::InvalidArgument("target cluster count must be at least 1".into()));
        }
    }
    if let Some(th) = stop.threshold {
        if !(0.0..=1.0).contains(&th) {
            return Err(Error::InvalidArgument(format!("affinity threshold must lie in [0, 1], got {th}")));
        }
    }
    if stop.target.is_none() && stop.threshold.is_none() {
        return Err(Error::InvalidArgument("agglomeration needs a target count or a threshold".into()));
    }
    if graph.nodes.len() != grid.cell_count() {
        return Err(dims_mismatch(format!("{} cells", grid.cell_count()), graph.nodes.len()));
    }
    let mut g = graph.clone();
    let mut queue: BTreeSet<(Reverse<OrderedFloat<f64>>, usize, usize)> =
        g.edges().into_iter().map(|(u, v, a)| (Reverse(OrderedFloat(a)), u, v)).collect();
    let target_unreachable = stop.target.is_some_and(|t| t > g.node_count());
    let mut count = g.node_count();
    let mut merges = 0;
    while let Some(&(Reverse(OrderedFloat(best)), u, v)) = queue.first() {
        if stop.target.is_some_and(|t| count <= t) || stop.threshold.is_some_and(|th| best < th) {
            break;
        }
        merge(&mut g, &mut queue, u, v, rule);
        count -= 1;
        merges += 1;
    }
    finish(&g, grid, merges, target_unreachable)
}

fn merge(
    g: &mut AffinityGraph,
    queue: &mut BTreeSet<(Reverse<OrderedFloat<f64>>, usize, usize)>,
    u: usize,
    v: usize,
    rule: MergeRule,
) {
    let nu = g.nodes[u].take().expect("live node");
    let nv = g.nodes[v].take().expect("live node");
    let (pu, pv) = (nu.pixels as f64, nv.pixels as f64);
    let au = std::mem::take(&mut g.neighbors[u]);
    let av = std::mem::take(&mut g.neighbors[v]);
    for (x, adj) in [(u, &au), (v, &av)] {
        for (&w, &a) in adj {
            queue.remove(&(Reverse(OrderedFloat(a)), x.min(w), x.max(w)));
        }
    }
    for w in au.keys().chain(av.keys()) {
        g.neighbors[*w].remove(&u);
        g.neighbors[*w].remove(&v);
    }
    let mut merged: BTreeMap<usize, f64> = BTreeMap::new();
    for (&w, &a) in au.iter().chain(av.iter()) {
        if w == u || w == v {
            continue;
        }
        let value = match (au.get(&w), av.get(&w)) {
            (Some(&x), Some(&y)) => match rule {
                MergeRule::Mean => 0.5 * (x + y),
                MergeRule::PixelWeighted if pu + pv > 0.0 => (pu * x + pv * y) / (pu + pv),
                MergeRule::PixelWeighted => 0.5 * (x + y),
            },
            _ => a,
        };
        merged.insert(w, value);
    }
    let pixels = nu.pixels + nv.pixels;
    let mean_rgb = if pixels == 0 {
        nu.mean_rgb.iter().zip(&nv.mean_rgb).map(|(a, b)| 0.5 * (a + b)).collect()
    } else {
        nu.mean_rgb.iter().zip(&nv.mean_rgb).map(|(a, b)| (a * pu + b * pv) / pixels as f64).collect()
    };
    let mut cells = nu.cells;
    cells.extend(nv.cells);
    cells.sort_unstable();
    // The survivor keeps the smaller id.
    let keep = u.min(v);
    for (&w, &a) in &merged {
        g.neighbors[w].insert(keep, a);
        queue.insert((Reverse(OrderedFloat(a)), keep.min(w), keep.max(w)));
    }
    g.neighbors[keep] = merged;
    g.nodes[keep] = Some(ClusterNode { cells, mean_rgb, pixels });
}

fn finish(g: &AffinityGraph, grid: &DeformedGrid, merges: usize, target_unreachable: bool) -> Result<Clustering> {
    // Dense ids in survivor order, skipping clusters that hold no pixel.
    let mut cell_segments = vec![u32::MAX; grid.cell_count()];
    let mut members: Vec<&[usize]> = Vec::new();
    for node in g.nodes.iter().flatten() {
        if node.pixels == 0 {
            continue;
        }
        for &k in &node.cells {
            cell_segments[k] = members.len() as u32;
        }
        members.push(&node.cells);
    }
    let ids = g.pixel_cells.iter().map(|&k| cell_segments[k]).collect();
    let boundaries = members.iter().map(|cells| boundary_loops(grid, cells)).collect();
    Ok(Clustering {
        segmentation: SegmentationMap::new(g.width, g.height, ids)?,
        cell_segments,
        boundaries,
        merges,
        target_unreachable,
    })
}

/// Closed vertex loops bounding a set of cells, each following the cells'
/// winding. Loops start at their smallest directed edge.
pub fn boundary_loops(grid: &DeformedGrid, cells: &[usize]) -> Vec<Vec<usize>> {
    let member: BTreeSet<usize> = cells.iter().copied().collect();
    let t = grid.topology();
    // Directed boundary edges: edges of member cells whose other side is not a member.
    let mut next: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &k in cells {
        let c = t.cells()[k];
        for i in 0..3 {
            let (a, b) = (c[i], c[(i + 1) % 3]);
            let e = t.edge_index(a, b).expect("cell edge exists");
            let interior = t.edge_cells(e).iter().any(|&o| o != k && member.contains(&o));
            if !interior {
                next.entry(a).or_default().push(b);
            }
        }
    }
    for list in next.values_mut() {
        list.sort_unstable();
    }
    let mut loops = Vec::new();
    while let Some((&start, _)) = next.iter().find(|(_, l)| !l.is_empty()) {
        let mut path = vec![start];
        let mut at = start;
        loop {
            let list = next.get_mut(&at).expect("boundary continues");
            let to = list.remove(0);
            if to == start {
                break;
            }
            path.push(to);
            at = to;
            if next.get(&at).is_none_or(|l| l.is_empty()) {
                break;
            }
        }
        loops.push(path);
        next.retain(|_, l| !l.is_empty());
    }
    loops
}
