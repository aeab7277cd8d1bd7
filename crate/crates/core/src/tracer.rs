//! Boundary tracing on the grid: distance-transform energy, vertex and edge
//! energies, seed snapping, minimal-energy closed paths and rasterization.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use ordered_float::OrderedFloat;
use serde::{Deserialize, Serialize};

use crate::error::{dims_mismatch, Error, Result};
use crate::features::FeatureMap;
use crate::grid::{bilinear_sample, DeformedGrid, Point};
use crate::mask::Mask;

/// Default number of closest vertices considered when snapping a seed.
pub const DEFAULT_SNAP_K: usize = 6;

/// Default number of seeds sampled from a mask contour.
pub const DEFAULT_SEED_COUNT: usize = 40;

/// Per-pixel Euclidean distance to the nearest source pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct EnergyMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl EnergyMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(dims_mismatch(width * height, values.len()));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidArgument("energy values must be finite and non-negative".into()));
        }
        Ok(EnergyMap { width, height, values })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    /// Bilinear sample with pixel values at pixel centers.
    pub fn sample(&self, p: Point) -> f64 {
        bilinear_sample(&self.values, self.width, self.height, p)
    }
}

/// Squared 1-D distance transform of `f` (lower envelope of parabolas).
/// Entries of `f` that are infinite are not sources.
fn edt_1d(f: &[f64], out: &mut [f64]) {
    let n = f.len();
    let mut v = Vec::with_capacity(n);
    let mut z: Vec<f64> = Vec::with_capacity(n + 1);
    for q in 0..n {
        if !f[q].is_finite() {
            continue;
        }
        let fq = f[q] + (q * q) as f64;
        loop {
            match v.last() {
                None => {
                    v.push(q);
                    z.clear();
                    z.push(f64::NEG_INFINITY);
                    break;
                }
                Some(&p) => {
                    let s = (fq - (f[p] + (p * p) as f64)) / (2.0 * (q - p) as f64);
                    if s <= *z.last().expect("one boundary per parabola") {
                        v.pop();
                        z.pop();
                    } else {
                        v.push(q);
                        z.push(s);
                        break;
                    }
                }
            }
        }
    }
    if v.is_empty() {
        out.fill(f64::INFINITY);
        return;
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while k + 1 < v.len() && z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Exact Euclidean distance from every pixel to the nearest `source` pixel.
pub fn distance_to_sources(width: usize, height: usize, sources: &[bool]) -> Result<EnergyMap> {
    if sources.len() != width * height {
        return Err(dims_mismatch(width * height, sources.len()));
    }
    if !sources.iter().any(|&s| s) {
        return Err(Error::NoBoundary);
    }
    let mut sq: Vec<f64> = sources.iter().map(|&s| if s { 0.0 } else { f64::INFINITY }).collect();
    let mut col = vec![0.0; height];
    let mut col_out = vec![0.0; height];
    for x in 0..width {
        for y in 0..height {
            col[y] = sq[y * width + x];
        }
        edt_1d(&col, &mut col_out);
        for y in 0..height {
            sq[y * width + x] = col_out[y];
        }
    }
    let mut row_out = vec![0.0; width];
    for y in 0..height {
        edt_1d(&sq[y * width..(y + 1) * width], &mut row_out);
        sq[y * width..(y + 1) * width].copy_from_slice(&row_out);
    }
    EnergyMap::new(width, height, sq.into_iter().map(f64::sqrt).collect())
}

/// Distance to the nearest boundary pixel of `mask` (a foreground pixel
/// 4-adjacent to an in-image background pixel).
pub fn distance_transform(mask: &Mask) -> Result<EnergyMap> {
    distance_to_sources(mask.width(), mask.height(), &mask.boundary())
}

/// Pixels whose right or lower neighbour differs by more than `threshold` in
/// some channel: an energy source when no mask or strokes are available.
pub fn feature_edges(features: &FeatureMap, threshold: f64) -> Vec<bool> {
    let (w, h) = (features.width(), features.height());
    let differs = |a: usize, b: usize| {
        features.pixel(a).iter().zip(features.pixel(b)).any(|(x, y)| (x - y).abs() > threshold)
    };
    let mut out = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            out[i] = (x + 1 < w && differs(i, i + 1)) || (y + 1 < h && differs(i, i + w));
        }
    }
    out
}

/// Pixels covered by polyline strokes, sampled at ≤ 0.5 px spacing.
pub fn stroke_pixels(width: usize, height: usize, strokes: &[Vec<Point>]) -> Vec<bool> {
    let mut out = vec![false; width * height];
    let mut mark = |p: Point| {
        if p.x >= 0.0 && p.y >= 0.0 && p.x < width as f64 && p.y < height as f64 {
            out[p.y as usize * width + p.x as usize] = true;
        }
    };
    for stroke in strokes {
        if let [only] = stroke.as_slice() {
            mark(*only);
        }
        for pair in stroke.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            let n = ((b - a).norm() * 2.0).ceil().max(1.0) as usize;
            for s in 0..=n {
                mark(a + (b - a) * (s as f64 / n as f64));
            }
        }
    }
    out
}

/// Bilinear energy at every vertex.
pub fn vertex_energy(grid: &DeformedGrid, energy: &EnergyMap) -> Result<Vec<f64>> {
    energy_extent(grid, energy)?;
    Ok(grid.positions().iter().map(|&p| energy.sample(p)).collect())
}

fn energy_extent(grid: &DeformedGrid, energy: &EnergyMap) -> Result<()> {
    if energy.width() != grid.width() || energy.height() != grid.height() {
        return Err(dims_mismatch(
            format!("{}x{}", grid.width(), grid.height()),
            format!("{}x{}", energy.width(), energy.height()),
        ));
    }
    Ok(())
}

/// Mean of `max(2, ceil(len) + 1)` evenly spaced samples along a segment,
/// endpoints included.
pub fn segment_energy(energy: &EnergyMap, a: Point, b: Point) -> f64 {
    let n = ((b - a).norm().ceil() as usize + 1).max(2);
    let sum: f64 = (0..n).map(|s| energy.sample(a + (b - a) * (s as f64 / (n - 1) as f64))).sum();
    sum / n as f64
}

/// Energy of every grid edge, in `GridTopology::edges` order.
pub fn edge_energy(grid: &DeformedGrid, energy: &EnergyMap) -> Result<Vec<f64>> {
    energy_extent(grid, energy)?;
    Ok(grid
        .topology()
        .edges()
        .iter()
        .map(|&[a, b]| segment_energy(energy, grid.position(a), grid.position(b)))
        .collect())
}

/// Snap each seed to the minimum-energy vertex among its `k` closest
/// (ties: closer, then lower index); repeated vertices collapse keeping the
/// first occurrence.
pub fn snap_seeds(grid: &DeformedGrid, vertex_energies: &[f64], seeds: &[Point], k: usize) -> Result<Vec<usize>> {
    if vertex_energies.len() != grid.vertex_count() {
        return Err(dims_mismatch(grid.vertex_count(), vertex_energies.len()));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("snap k must be at least 1".into()));
    }
    if seeds.is_empty() {
        return Err(Error::DegenerateSeeds { found: 0, required: 1 });
    }
    let mut out: Vec<usize> = Vec::new();
    let mut order: Vec<(f64, usize)> = Vec::with_capacity(grid.vertex_count());
    for &seed in seeds {
        if !seed.is_finite() {
            return Err(Error::InvalidArgument("seed coordinates must be finite".into()));
        }
        order.clear();
        order.extend(grid.positions().iter().enumerate().map(|(v, &p)| ((p - seed).norm_sq(), v)));
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let best = order[..k.min(order.len())]
            .iter()
            .min_by(|a, b| {
                vertex_energies[a.1]
                    .total_cmp(&vertex_energies[b.1])
                    .then(a.0.total_cmp(&b.0))
                    .then(a.1.cmp(&b.1))
            })
            .expect("at least one candidate")
            .1;
        if !out.contains(&best) {
            out.push(best);
        }
    }
    Ok(out)
}

/// A closed path along grid edges.
#[derive(Clone, Debug, PartialEq)]
pub struct TracedPolygon {
    /// Vertex indices in path order; the path closes from the last back to
    /// the first.
    pub vertex_indices: Vec<usize>,
    pub vertices: Vec<Point>,
    pub energy: f64,
    /// Energy of the path from snapped vertex `i` to snapped vertex `i + 1`.
    pub segment_energies: Vec<f64>,
    pub mask: Mask,
}

/// Interchange form of a traced polygon.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolygonExport {
    pub vertices: Vec<Point>,
    pub vertex_indices: Vec<usize>,
    pub energy: f64,
}

impl PolygonExport {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("polygon serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

impl TracedPolygon {
    pub fn export(&self) -> PolygonExport {
        PolygonExport { vertices: self.vertices.clone(), vertex_indices: self.vertex_indices.clone(), energy: self.energy }
    }
}

/// Edge-weighted adjacency of the grid graph: `(neighbor, edge index)`.
fn adjacency(grid: &DeformedGrid) -> Vec<Vec<(usize, usize)>> {
    let mut adj = vec![Vec::new(); grid.vertex_count()];
    for (e, &[a, b]) in grid.topology().edges().iter().enumerate() {
        adj[a].push((b, e));
        adj[b].push((a, e));
    }
    for list in &mut adj {
        list.sort_unstable();
    }
    adj
}

/// Dijkstra from `from` to `to`; returns the vertex path (both ends
/// included) and its cost. Equal-cost settles prefer the lower vertex index.
fn shortest_path(adj: &[Vec<(usize, usize)>], weights: &[f64], from: usize, to: usize) -> Option<(Vec<usize>, f64)> {
    let n = adj.len();
    let mut dist = vec![f64::INFINITY; n];
    let mut prev = vec![usize::MAX; n];
    let mut done = vec![false; n];
    let mut heap = BinaryHeap::new();
    dist[from] = 0.0;
    heap.push(Reverse((OrderedFloat(0.0), from)));
    while let Some(Reverse((OrderedFloat(d), u))) = heap.pop() {
        if done[u] {
            continue;
        }
        done[u] = true;
        if u == to {
            break;
        }
        for &(v, e) in &adj[u] {
            let nd = d + weights[e];
            if nd < dist[v] {
                dist[v] = nd;
                prev[v] = u;
                heap.push(Reverse((OrderedFloat(nd), v)));
            }
        }
    }
    if !dist[to].is_finite() {
        return None;
    }
    let mut path = vec![to];
    while *path.last().expect("non-empty") != from {
        path.push(prev[*path.last().expect("non-empty")]);
    }
    path.reverse();
    Some((path, dist[to]))
}

/// Minimal-energy cost between two vertices (exposed for oracles and tools).
pub fn path_cost(grid: &DeformedGrid, edge_energies: &[f64], from: usize, to: usize) -> Result<f64> {
    if edge_energies.len() != grid.topology().edges().len() {
        return Err(dims_mismatch(grid.topology().edges().len(), edge_energies.len()));
    }
    shortest_path(&adjacency(grid), edge_energies, from, to)
        .map(|(_, c)| c)
        .ok_or_else(|| Error::Internal(format!("vertices {from} and {to} are disconnected")))
}

/// Closed minimal-energy path visiting the snapped vertices in order.
pub fn trace_path(grid: &DeformedGrid, edge_energies: &[f64], snapped: &[usize]) -> Result<TracedPolygon> {
    let edges = grid.topology().edges();
    if edge_energies.len() != edges.len() {
        return Err(dims_mismatch(edges.len(), edge_energies.len()));
    }
    if edge_energies.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::InvalidArgument("edge energies must be finite and non-negative".into()));
    }
    let mut distinct: Vec<usize> = Vec::with_capacity(snapped.len());
    for &v in snapped {
        if v >= grid.vertex_count() {
            return Err(Error::InvalidArgument(format!("vertex {v} out of range")));
        }
        if !distinct.contains(&v) {
            distinct.push(v);
        }
    }
    if distinct.len() < 3 {
        return Err(Error::DegenerateSeeds { found: distinct.len(), required: 3 });
    }
    let adj = adjacency(grid);
    let mut indices: Vec<usize> = Vec::new();
    let mut segment_energies = Vec::with_capacity(distinct.len());
    for i in 0..distinct.len() {
        let (a, b) = (distinct[i], distinct[(i + 1) % distinct.len()]);
        let (path, cost) = shortest_path(&adj, edge_energies, a, b)
            .ok_or_else(|| Error::Internal(format!("vertices {a} and {b} are disconnected")))?;
        segment_energies.push(cost);
        // Each segment contributes its vertices except the shared endpoint.
        for &v in &path[..path.len() - 1] {
            if indices.last() != Some(&v) {
                indices.push(v);
            }
        }
    }
    while indices.len() > 1 && indices.first() == indices.last() {
        indices.pop();
    }
    let vertices: Vec<Point> = indices.iter().map(|&v| grid.position(v)).collect();
    let mask = rasterize_polygon(&vertices, grid.width(), grid.height())?;
    Ok(TracedPolygon { vertex_indices: indices, vertices, energy: segment_energies.iter().sum(), segment_energies, mask })
}

/// Even-odd fill of a closed polygon, sampled at pixel centers.
pub fn rasterize_polygon(polygon: &[Point], width: usize, height: usize) -> Result<Mask> {
    let mut mask = Mask::empty(width, height)?;
    if polygon.len() < 3 {
        return Ok(mask);
    }
    let mut xs: Vec<f64> = Vec::new();
    for y in 0..height {
        let cy = y as f64 + 0.5;
        xs.clear();
        for i in 0..polygon.len() {
            let (a, b) = (polygon[i], polygon[(i + 1) % polygon.len()]);
            if (a.y > cy) != (b.y > cy) {
                xs.push(a.x + (cy - a.y) * (b.x - a.x) / (b.y - a.y));
            }
        }
        for x in 0..width {
            let cx = x as f64 + 0.5;
            let crossings = xs.iter().filter(|&&xi| cx < xi).count();
            if crossings % 2 == 1 {
                mask.set(x, y, true);
            }
        }
    }
    Ok(mask)
}

/// Largest 4-connected foreground component (ties: the one reached first in
/// raster order), as a mask.
pub fn largest_component(mask: &Mask) -> Mask {
    let (w, h) = (mask.width(), mask.height());
    let mut comp = vec![usize::MAX; w * h];
    let mut best: (usize, usize) = (0, usize::MAX);
    let mut stack = Vec::new();
    let mut id = 0;
    for start in 0..w * h {
        if !mask.data()[start] || comp[start] != usize::MAX {
            continue;
        }
        let mut size = 0;
        comp[start] = id;
        stack.push(start);
        while let Some(i) = stack.pop() {
            size += 1;
            let (x, y) = (i % w, i / w);
            let mut visit = |j: usize| {
                if mask.data()[j] && comp[j] == usize::MAX {
                    comp[j] = id;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        if best.1 == usize::MAX || size > best.0 {
            best = (size, id);
        }
        id += 1;
    }
    let data = comp.iter().map(|&c| c == best.1 && c != usize::MAX).collect();
    Mask::new(w, h, data).expect("same extent")
}

/// Outer crack contour (pixel-corner polygon) of a 4-connected region,
/// starting at the top-left corner of its first pixel in raster order and
/// running clockwise on screen (foreground on the right).
pub fn outer_contour(region: &Mask) -> Vec<Point> {
    let (w, h) = (region.width() as i64, region.height() as i64);
    let Some(first) = region.data().iter().position(|&b| b) else { return Vec::new() };
    let fg = |x: i64, y: i64| x >= 0 && y >= 0 && x < w && y < h && region.get(x as usize, y as usize);
    let start = ((first as i64) % w, (first as i64) / w);
    // Directions: right, down, left, up (y grows downwards).
    const DIRS: [(i64, i64); 4] = [(1, 0), (0, 1), (-1, 0), (0, -1)];
    let (mut cx, mut cy) = start;
    let mut dir = 0usize;
    let mut out = vec![Point::new(cx as f64, cy as f64)];
    loop {
        cx += DIRS[dir].0;
        cy += DIRS[dir].1;
        if (cx, cy) == start && dir == 3 {
            break;
        }
        // Pixels ahead of corner (cx, cy) on the right and left of `dir`.
        let (ahead_right, ahead_left) = match dir {
            0 => ((cx, cy), (cx, cy - 1)),
            1 => ((cx - 1, cy), (cx, cy)),
            2 => ((cx - 1, cy - 1), (cx - 1, cy)),
            _ => ((cx, cy - 1), (cx - 1, cy - 1)),
        };
        let next = if !fg(ahead_right.0, ahead_right.1) {
            (dir + 1) % 4
        } else if fg(ahead_left.0, ahead_left.1) {
            (dir + 3) % 4
        } else {
            dir
        };
        if next != dir {
            out.push(Point::new(cx as f64, cy as f64));
        }
        dir = next;
    }
    out
}

/// `count` points spaced uniformly by arc length along the outer contour of
/// the largest foreground component, starting at the contour start.
pub fn sample_seed_points(mask: &Mask, count: usize) -> Result<Vec<Point>> {
    if count == 0 {
        return Err(Error::InvalidArgument("seed count must be at least 1".into()));
    }
    if !mask.boundary().iter().any(|&b| b) {
        return Err(Error::NoBoundary);
    }
    let contour = outer_contour(&largest_component(mask));
    let n = contour.len();
    let lengths: Vec<f64> = (0..n).map(|i| (contour[(i + 1) % n] - contour[i]).norm()).collect();
    let total: f64 = lengths.iter().sum();
    let mut out = Vec::with_capacity(count);
    let (mut seg, mut walked) = (0usize, 0.0);
    for j in 0..count {
        let target = total * j as f64 / count as f64;
        while walked + lengths[seg] < target {
            walked += lengths[seg];
            seg += 1;
        }
        let t = if lengths[seg] > 0.0 { (target - walked) / lengths[seg] } else { 0.0 };
        out.push(contour[seg] + (contour[(seg + 1) % n] - contour[seg]) * t);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TopologyVariant;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_force_dt(sources: &[bool], w: usize, h: usize) -> Vec<f64> {
        (0..w * h)
            .map(|i| {
                let (x, y) = ((i % w) as f64, (i / w) as f64);
                (0..w * h)
                    .filter(|&j| sources[j])
                    .map(|j| {
                        let (sx, sy) = ((j % w) as f64, (j / w) as f64);
                        ((x - sx).powi(2) + (y - sy).powi(2)).sqrt()
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    }

    #[test]
    fn feature_edges_mark_the_low_side_of_a_step() {
        let data: Vec<f64> = (0..16).flat_map(|i| if i % 4 < 2 { [0.0; 3] } else { [1.0; 3] }).collect();
        let f = FeatureMap::from_rgb(4, 4, data).unwrap();
        let e = feature_edges(&f, 0.1);
        for i in 0..16 {
            assert_eq!(e[i], i % 4 == 1);
        }
        assert!(!feature_edges(&f, 1.0).iter().any(|&b| b));
    }

    #[test]
    fn strokes_cover_their_pixels() {
        let s = stroke_pixels(8, 8, &[vec![Point::new(0.5, 2.5), Point::new(7.5, 2.5)], vec![Point::new(3.2, 6.9)]]);
        let set: Vec<usize> = (0..64).filter(|&i| s[i]).collect();
        assert_eq!(set, vec![16, 17, 18, 19, 20, 21, 22, 23, 51]);
        assert!(!stroke_pixels(8, 8, &[vec![Point::new(-1.0, 9.0)]]).iter().any(|&b| b));
    }

    #[test]
    fn single_pixel_distance() {
        let mut m = Mask::empty(11, 11).unwrap();
        m.set(5, 5, true);
        let dt = distance_transform(&m).unwrap();
        assert_eq!(dt.at(5, 5), 0.0);
        assert_eq!(dt.at(5, 8), 3.0);
        assert_eq!(dt.at(8, 9), 5.0);
    }

    #[test]
    fn boundary_pixels_are_zero_and_uniform_masks_fail() {
        let mut m = Mask::empty(6, 6).unwrap();
        for y in 1..5 {
            for x in 1..5 {
                m.set(x, y, true);
            }
        }
        let dt = distance_transform(&m).unwrap();
        for (i, &b) in m.boundary().iter().enumerate() {
            assert_eq!(b, dt.values()[i] == 0.0);
        }
        assert!(matches!(distance_transform(&Mask::empty(4, 4).unwrap()), Err(Error::NoBoundary)));
        assert!(matches!(distance_transform(&Mask::new(2, 2, vec![true; 4]).unwrap()), Err(Error::NoBoundary)));
    }

    #[test]
    fn random_masks_match_brute_force_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let (w, h) = (16, 16);
            let density = rng.gen_range(0.05..0.7);
            let m = Mask::new(w, h, (0..w * h).map(|_| rng.gen_bool(density)).collect()).unwrap();
            let b = m.boundary();
            if !b.iter().any(|&v| v) {
                continue;
            }
            assert_eq!(distance_transform(&m).unwrap().values(), brute_force_dt(&b, w, h).as_slice());
        }
    }

    fn direct_bilinear(values: &[f64], w: usize, h: usize, p: Point) -> f64 {
        // Weighted sum over all pixels with tent weights.
        let u = (p.x - 0.5).clamp(0.0, (w - 1) as f64);
        let v = (p.y - 0.5).clamp(0.0, (h - 1) as f64);
        let mut s = 0.0;
        for y in 0..h {
            for x in 0..w {
                let wx = (1.0 - (u - x as f64).abs()).max(0.0);
                let wy = (1.0 - (v - y as f64).abs()).max(0.0);
                s += wx * wy * values[y * w + x];
            }
        }
        s
    }

    #[test]
    fn vertex_energy_is_bilinear() {
        let map = EnergyMap::new(2, 1, vec![2.0, 4.0]).unwrap();
        assert_eq!(map.sample(Point::new(1.0, 0.5)), 3.0);
        assert_eq!(map.sample(Point::new(0.5, 0.5)), 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let values: Vec<f64> = (0..24 * 24).map(|_| rng.gen_range(0.0..10.0)).collect();
        let map = EnergyMap::new(24, 24, values.clone()).unwrap();
        let grid = DeformedGrid::uniform(3, 3, 24, 24, TopologyVariant::Alternating).unwrap();
        let e = vertex_energy(&grid, &map).unwrap();
        for (v, &p) in grid.positions().iter().enumerate() {
            assert!((e[v] - direct_bilinear(&values, 24, 24, p)).abs() < 1e-9);
        }
        for _ in 0..50 {
            let p = Point::new(rng.gen_range(0.0..24.0), rng.gen_range(0.0..24.0));
            assert!((map.sample(p) - direct_bilinear(&values, 24, 24, p)).abs() < 1e-9);
        }
    }

    #[test]
    fn edge_energy_examples() {
        let grid = DeformedGrid::uniform(2, 2, 10, 10, TopologyVariant::Alternating).unwrap();
        let flat = EnergyMap::new(10, 10, vec![1.5; 100]).unwrap();
        assert!(edge_energy(&grid, &flat).unwrap().iter().all(|&e| (e - 1.5).abs() < 1e-12));
        let ramp = EnergyMap::new(10, 10, (0..100).map(|i| (i % 10) as f64 + 0.5).collect()).unwrap();
        // Inside the sample rectangle the ramp is f(x) = x.
        let (a, b) = (Point::new(1.0, 2.0), Point::new(8.0, 6.0));
        assert!((segment_energy(&ramp, a, b) - 4.5).abs() < 1e-3);
        assert_eq!(segment_energy(&ramp, a, a), ramp.sample(a));
    }

    #[test]
    fn snapping_rules() {
        let grid = DeformedGrid::uniform(2, 2, 8, 8, TopologyVariant::Alternating).unwrap();
        let mut energy = vec![5.0; 9];
        // Seed near vertex 4 (4,4); vertex 5 (8,4) is among its 4 closest with lower energy.
        energy[5] = 1.0;
        let seed = Point::new(4.4, 4.1);
        assert_eq!(snap_seeds(&grid, &energy, &[seed], 1).unwrap(), vec![4]);
        // Oracle: enumerate the 4 closest vertices.
        let mut by_dist: Vec<usize> = (0..9).collect();
        by_dist.sort_by(|&a, &b| (grid.position(a) - seed).norm().total_cmp(&(grid.position(b) - seed).norm()));
        let candidates = &by_dist[..4];
        assert!(candidates.contains(&5) && by_dist[0] == 4);
        assert_eq!(snap_seeds(&grid, &energy, &[seed], 4).unwrap(), vec![5]);
        // Duplicates collapse in order.
        let out = snap_seeds(&grid, &energy, &[Point::new(0.1, 0.1), seed, Point::new(0.2, 0.0)], 1).unwrap();
        assert_eq!(out, vec![0, 4]);
    }

    fn brute_force_cost(adj: &[Vec<(usize, usize)>], w: &[f64], from: usize, to: usize) -> f64 {
        fn dfs(adj: &[Vec<(usize, usize)>], w: &[f64], u: usize, to: usize, cost: f64, seen: &mut Vec<bool>, best: &mut f64) {
            if cost >= *best {
                return;
            }
            if u == to {
                *best = cost;
                return;
            }
            for &(v, e) in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    dfs(adj, w, v, to, cost + w[e], seen, best);
                    seen[v] = false;
                }
            }
        }
        let mut seen = vec![false; adj.len()];
        seen[from] = true;
        let mut best = f64::INFINITY;
        dfs(adj, w, from, to, 0.0, &mut seen, &mut best);
        best
    }

    #[test]
    fn dijkstra_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for variant in [TopologyVariant::Alternating, TopologyVariant::Diagonal] {
            let grid = DeformedGrid::uniform(4, 4, 16, 16, variant).unwrap();
            let adj = adjacency(&grid);
            for _ in 0..5 {
                let w: Vec<f64> = (0..grid.topology().edges().len()).map(|_| rng.gen_range(0.1..5.0)).collect();
                for _ in 0..10 {
                    let (a, b) = (rng.gen_range(0..25), rng.gen_range(0..25));
                    assert_eq!(path_cost(&grid, &w, a, b).unwrap(), brute_force_cost(&adj, &w, a, b));
                }
            }
        }
    }

    #[test]
    fn adjacent_triangle_is_traced_directly() {
        let grid = DeformedGrid::uniform(2, 2, 8, 8, TopologyVariant::Alternating).unwrap();
        let [a, b, c] = grid.topology().cells()[0];
        let w = vec![1.0; grid.topology().edges().len()];
        let poly = trace_path(&grid, &w, &[a, b, c]).unwrap();
        assert_eq!(poly.vertex_indices, vec![a, b, c]);
        assert_eq!(poly.energy, 3.0);
    }

    #[test]
    fn traced_paths_are_valid_closed_walks() {
        let grid = DeformedGrid::uniform(4, 4, 32, 32, TopologyVariant::Alternating).unwrap();
        let w = vec![1.0; grid.topology().edges().len()];
        let poly = trace_path(&grid, &w, &[0, 4, 24, 20]).unwrap();
        // Constant energies: each segment is a minimal-hop path (4 hops along a side).
        assert_eq!(poly.segment_energies, vec![4.0, 4.0, 4.0, 4.0]);
        let n = poly.vertex_indices.len();
        for i in 0..n {
            let (a, b) = (poly.vertex_indices[i], poly.vertex_indices[(i + 1) % n]);
            assert!(grid.topology().edge_index(a, b).is_some());
        }
        assert_eq!(poly.mask, rasterize_polygon(&poly.vertices, 32, 32).unwrap());
        assert!(matches!(trace_path(&grid, &w, &[0, 4, 0]), Err(Error::DegenerateSeeds { found: 2, .. })));
    }

    #[test]
    fn rasterize_examples() {
        let rect = [Point::new(1.5, 1.5), Point::new(5.5, 1.5), Point::new(5.5, 5.5), Point::new(1.5, 5.5)];
        assert_eq!(rasterize_polygon(&rect, 8, 8).unwrap().count(), 16);
        let flat = [Point::new(1.0, 1.0), Point::new(5.0, 5.0), Point::new(3.0, 3.0)];
        assert_eq!(rasterize_polygon(&flat, 8, 8).unwrap().count(), 0);
    }

    fn point_in_convex(poly: &[Point], p: Point) -> bool {
        let n = poly.len();
        let signs: Vec<f64> = (0..n).map(|i| (poly[(i + 1) % n] - poly[i]).cross(p - poly[i])).collect();
        signs.iter().all(|&s| s > 0.0) || signs.iter().all(|&s| s < 0.0)
    }

    #[test]
    fn random_convex_polygons_match_point_tests() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..30 {
            let c = Point::new(rng.gen_range(6.0..14.0), rng.gen_range(6.0..14.0));
            let mut angles: Vec<f64> = (0..rng.gen_range(3..8)).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect();
            angles.sort_by(f64::total_cmp);
            // Points on a circle in angular order form a convex polygon.
            let r = rng.gen_range(2.0..6.0);
            let poly: Vec<Point> = angles.iter().map(|&a| c + Point::new(a.cos(), a.sin()) * r).collect();
            let m = rasterize_polygon(&poly, 20, 20).unwrap();
            for y in 0..20 {
                for x in 0..20 {
                    let p = Point::new(x as f64 + 0.5, y as f64 + 0.5);
                    assert_eq!(m.get(x, y), point_in_convex(&poly, p), "{x},{y}");
                }
            }
        }
    }

    #[test]
    fn square_contour_quartiles() {
        let mut m = Mask::empty(10, 10).unwrap();
        for y in 2..6 {
            for x in 3..7 {
                m.set(x, y, true);
            }
        }
        let pts = sample_seed_points(&m, 4).unwrap();
        let expect = [Point::new(3.0, 2.0), Point::new(7.0, 2.0), Point::new(7.0, 6.0), Point::new(3.0, 6.0)];
        assert_eq!(pts, expect);
        assert_eq!(sample_seed_points(&m, 1).unwrap(), vec![Point::new(3.0, 2.0)]);
    }

    #[test]
    fn disk_seed_gaps_are_even() {
        let mut m = Mask::empty(32, 32).unwrap();
        for y in 0..32 {
            for x in 0..32 {
                let p = Point::new(x as f64 + 0.5, y as f64 + 0.5) - Point::new(16.0, 16.0);
                m.set(x, y, p.norm() <= 10.0);
            }
        }
        let pts = sample_seed_points(&m, 40).unwrap();
        assert_eq!(pts.len(), 40);
        let gaps: Vec<f64> = (0..40).map(|i| (pts[(i + 1) % 40] - pts[i]).norm()).collect();
        let (lo, hi) = gaps.iter().fold((f64::INFINITY, 0.0f64), |(l, h), &g| (l.min(g), h.max(g)));
        assert!(hi - lo <= 1.0, "{lo}..{hi}");
    }

    #[test]
    fn contour_follows_largest_component_outer_edge() {
        // A ring (with hole) plus a lone pixel: the contour is the ring's outside.
        let mut m = Mask::empty(12, 12).unwrap();
        for y in 2..9 {
            for x in 2..9 {
                m.set(x, y, !(4..7).contains(&x) || !(4..7).contains(&y));
            }
        }
        m.set(11, 11, true);
        let contour = outer_contour(&largest_component(&m));
        assert_eq!(contour, vec![Point::new(2.0, 2.0), Point::new(9.0, 2.0), Point::new(9.0, 9.0), Point::new(2.0, 9.0)]);
    }
}
