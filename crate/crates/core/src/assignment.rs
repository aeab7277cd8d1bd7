//! Signed pixel-to-cell distance, soft (softmax) pixel-to-cell assignment,
//! hard point location and per-cell statistics.

use rayon::prelude::*;

use crate::error::{dims_mismatch, Error, Result};
use crate::features::FeatureMap;
use crate::grid::{barycentric, pixel_center, project_onto_segment, segment_l1_distance, DeformedGrid, Point, INSIDE_EPS};

/// Default softmax temperature, px.
pub const DEFAULT_DELTA: f64 = 1.0;
/// Default candidate window radius, in base-lattice quads.
pub const DEFAULT_WINDOW_RADIUS: usize = 2;
/// Probabilities below this are dropped before renormalizing a row.
pub const PRUNE_BELOW: f64 = 1e-14;
/// Soft mass at or below this marks a cell as empty.
const EMPTY_MASS: f64 = 1e-12;

/// Which cells compete in a pixel's softmax.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CandidateWindow {
    /// Every cell of the grid.
    Full,
    /// Cells of quads within this many quads of the pixel's base-lattice quad.
    Radius(usize),
}

impl Default for CandidateWindow {
    fn default() -> Self {
        CandidateWindow::Radius(DEFAULT_WINDOW_RADIUS)
    }
}

/// SignDis of a point with respect to one triangle, plus what the gradient
/// pass needs: `ds[j]` is `∂SignDis/∂(vertex j of the cell)`.
#[derive(Clone, Copy, Debug)]
pub struct SignedDistance {
    pub value: f64,
    pub inside: bool,
    /// Edge (0 = ab, 1 = bc, 2 = ca) realizing the minimum; lowest index on ties.
    pub edge: usize,
    pub ds: [Point; 3],
}

/// Signed L1 distance to the nearest edge: positive inside, negative outside.
/// `None` for a degenerate triangle.
pub fn signed_distance(p: Point, tri: &[Point; 3]) -> Option<SignedDistance> {
    let inside = barycentric(p, tri)?.is_inside();
    let mut edge = 0;
    let mut best = f64::INFINITY;
    for e in 0..3 {
        let d = segment_l1_distance(p, tri[e], tri[(e + 1) % 3]);
        if d < best {
            best = d;
            edge = e;
        }
    }
    let proj = project_onto_segment(p, tri[edge], tri[(edge + 1) % 3]);
    let sign = if inside { 1.0 } else { -1.0 };
    let mut ds = [Point::ZERO; 3];
    ds[edge] = proj.grad_start * sign;
    ds[(edge + 1) % 3] = proj.grad_end * sign;
    Some(SignedDistance { value: sign * proj.distance, inside, edge, ds })
}

/// SignDis of `p` with respect to cell `k` of `grid`.
pub fn sign_dis(grid: &DeformedGrid, p: Point, cell: usize) -> Result<f64> {
    signed_distance(p, &grid.cell_points(cell))
        .map(|s| s.value)
        .ok_or(Error::DegenerateCell { cell })
}

/// Sparse soft assignment of every pixel to nearby cells plus hard labels.
#[derive(Clone, Debug)]
pub struct AssignmentField {
    width: usize,
    height: usize,
    cell_count: usize,
    delta: f64,
    window: CandidateWindow,
    row_ptr: Vec<usize>,
    cells: Vec<usize>,
    probs: Vec<f64>,
    hard_label: Vec<usize>,
}

impl AssignmentField {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn cell_count(&self) -> usize {
        self.cell_count
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn window(&self) -> CandidateWindow {
        self.window
    }

    /// `(cell indices ascending, probabilities)` of pixel `i`.
    #[inline]
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.cells[r.clone()], &self.probs[r])
    }

    /// `P_{i→k}`, zero when `k` is not stored for pixel `i`.
    pub fn prob(&self, i: usize, k: usize) -> f64 {
        let (cells, probs) = self.row(i);
        cells.binary_search(&k).map(|j| probs[j]).unwrap_or(0.0)
    }

    pub fn hard_labels(&self) -> &[usize] {
        &self.hard_label
    }
}

/// One stored row entry with its SignDis subgradient.
#[derive(Clone, Copy, Debug)]
pub(crate) struct GradEntry {
    pub cell: usize,
    pub ds: [Point; 3],
}

/// Per-row output buffers, reused across the pixels of one image row.
#[derive(Default)]
struct RowOut {
    lens: Vec<usize>,
    cells: Vec<usize>,
    probs: Vec<f64>,
    grads: Vec<GradEntry>,
    hard: Vec<usize>,
}

#[allow(clippy::too_many_arguments)]
fn pixel_row(
    grid: &DeformedGrid,
    tris: &[[Point; 3]],
    p: Point,
    candidates: &[usize],
    delta: f64,
    with_grad: bool,
    scan_hard: bool,
    scored: &mut Vec<(usize, SignedDistance, f64)>,
    out: &mut RowOut,
) {
    scored.clear();
    let mut hard = None;
    for &k in candidates {
        let tri = &tris[k];
        let sd = signed_distance(p, tri).expect("grid validated");
        if scan_hard && hard.is_none() && barycentric(p, tri).is_some_and(|w| w.min_weight() >= -INSIDE_EPS) {
            hard = Some(k);
        }
        scored.push((k, sd, 0.0));
    }
    let max = scored.iter().map(|(_, s, _)| s.value).fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (_, s, w) in scored.iter_mut() {
        *w = ((s.value - max) / delta).exp();
        total += *w;
    }
    let kept_total: f64 = scored.iter().map(|(_, _, w)| *w / total).filter(|&w| w >= PRUNE_BELOW).sum();
    let before = out.cells.len();
    for (k, sd, w) in scored.iter() {
        let w = *w / total;
        if w >= PRUNE_BELOW {
            out.cells.push(*k);
            out.probs.push(w / kept_total);
            if with_grad {
                out.grads.push(GradEntry { cell: *k, ds: sd.ds });
            }
        }
    }
    out.lens.push(out.cells.len() - before);
    out.hard.push(hard.unwrap_or_else(|| grid.locate(p)));
}

pub(crate) struct AssignmentWithGrad {
    pub field: AssignmentField,
    /// Parallel to the field's stored entries.
    pub grads: Vec<GradEntry>,
}

pub(crate) fn assign(
    grid: &DeformedGrid,
    delta: f64,
    window: CandidateWindow,
    with_grad: bool,
) -> Result<AssignmentWithGrad> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::InvalidArgument(format!("delta must be positive, got {delta}")));
    }
    grid.validate()?;
    let t = grid.topology();
    let (w, h) = (grid.width(), grid.height());
    let tris: Vec<[Point; 3]> = (0..grid.cell_count()).map(|k| grid.cell_points(k)).collect();
    let all: Vec<usize> = (0..grid.cell_count()).collect();
    let per_quad: Vec<Vec<usize>> = match window {
        CandidateWindow::Full => Vec::new(),
        CandidateWindow::Radius(r) => (0..t.rows() * t.cols())
            .map(|q| grid.window_cells((q / t.cols(), q % t.cols()), r))
            .collect(),
    };
    // Every cell containing a pixel center lies within one quad of it, so a
    // window of radius ≥ 1 also yields the hard label.
    let scan_hard = window != CandidateWindow::Radius(0);
    let rows: Vec<RowOut> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut out = RowOut::default();
            let mut scored = Vec::new();
            for x in 0..w {
                let p = pixel_center(x, y);
                let candidates = match window {
                    CandidateWindow::Full => &all,
                    CandidateWindow::Radius(_) => {
                        let (r, c) = grid.quad_at(p);
                        &per_quad[r * t.cols() + c]
                    }
                };
                pixel_row(grid, &tris, p, candidates, delta, with_grad, scan_hard, &mut scored, &mut out);
            }
            out
        })
        .collect();

    let mut field = AssignmentField {
        width: w,
        height: h,
        cell_count: grid.cell_count(),
        delta,
        window,
        row_ptr: Vec::with_capacity(w * h + 1),
        cells: Vec::new(),
        probs: Vec::new(),
        hard_label: Vec::with_capacity(w * h),
    };
    let mut grads = Vec::new();
    field.row_ptr.push(0);
    for row in rows {
        field.cells.extend(row.cells);
        field.probs.extend(row.probs);
        grads.extend(row.grads);
        field.hard_label.extend(row.hard);
        for len in row.lens {
            field.row_ptr.push(field.row_ptr.last().unwrap() + len);
        }
    }
    Ok(AssignmentWithGrad { field, grads })
}

/// Soft assignment `P_{i→k} ∝ exp(SignDis(p_i, C_k)/δ)` over each pixel's
/// candidate cells, plus the hard containing cell of every pixel center.
pub fn soft_assign(grid: &DeformedGrid, delta: f64, window: CandidateWindow) -> Result<AssignmentField> {
    Ok(assign(grid, delta, window, false)?.field)
}

/// Soft and hard per-cell statistics of a feature map.
#[derive(Clone, Debug)]
pub struct CellStats {
    pub channels: usize,
    /// `m_k = Σ_i P_{i→k}`.
    pub mass: Vec<f64>,
    /// `Σ_i P_{i→k} f_i / m_k`, `K × d` row-major; zero for empty cells.
    pub soft_mean: Vec<f64>,
    /// Soft mass at or below 1e-12.
    pub empty: Vec<bool>,
    /// `|S_k|`.
    pub hard_count: Vec<usize>,
    /// Mean over `S_k`, zero when `S_k` is empty.
    pub hard_mean: Vec<f64>,
}

impl CellStats {
    pub fn cell_count(&self) -> usize {
        self.mass.len()
    }

    pub fn soft_mean(&self, k: usize) -> &[f64] {
        &self.soft_mean[k * self.channels..(k + 1) * self.channels]
    }

    pub fn hard_mean(&self, k: usize) -> &[f64] {
        &self.hard_mean[k * self.channels..(k + 1) * self.channels]
    }
}

pub fn cell_stats(assign: &AssignmentField, features: &FeatureMap) -> Result<CellStats> {
    features.check_extent(assign.width(), assign.height())?;
    let d = features.channels();
    let k_count = assign.cell_count();
    let mut mass = vec![0.0; k_count];
    let mut soft_sum = vec![0.0; k_count * d];
    let mut hard_count = vec![0usize; k_count];
    let mut hard_sum = vec![0.0; k_count * d];
    for i in 0..assign.pixel_count() {
        let f = features.pixel(i);
        let (cells, probs) = assign.row(i);
        for (&k, &p) in cells.iter().zip(probs) {
            mass[k] += p;
            for (acc, &v) in soft_sum[k * d..(k + 1) * d].iter_mut().zip(f) {
                *acc += p * v;
            }
        }
        let k = assign.hard_labels()[i];
        hard_count[k] += 1;
        for (acc, &v) in hard_sum[k * d..(k + 1) * d].iter_mut().zip(f) {
            *acc += v;
        }
    }
    let empty: Vec<bool> = mass.iter().map(|&m| m <= EMPTY_MASS).collect();
    for k in 0..k_count {
        let soft = &mut soft_sum[k * d..(k + 1) * d];
        if empty[k] {
            soft.fill(0.0);
        } else {
            soft.iter_mut().for_each(|v| *v /= mass[k]);
        }
        let hard = &mut hard_sum[k * d..(k + 1) * d];
        if hard_count[k] > 0 {
            let n = hard_count[k] as f64;
            hard.iter_mut().for_each(|v| *v /= n);
        }
    }
    Ok(CellStats { channels: d, mass, soft_mean: soft_sum, empty, hard_count, hard_mean: hard_sum })
}

pub(crate) fn check_features(grid: &DeformedGrid, features: &FeatureMap) -> Result<()> {
    features.check_extent(grid.width(), grid.height())
}

pub(crate) fn check_stats(stats: &CellStats, features: &FeatureMap, cells: usize) -> Result<()> {
    if stats.channels != features.channels() || stats.cell_count() != cells {
        return Err(dims_mismatch(
            format!("{cells} cells x {} channels", features.channels()),
            format!("{} cells x {} channels", stats.cell_count(), stats.channels),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TopologyVariant;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn jitter(grid: &DeformedGrid, amount: f64, seed: u64) -> DeformedGrid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let max = amount * grid.pitch();
        let offsets = (0..grid.vertex_count())
            .map(|v| {
                let o = Point::new(rng.gen_range(-max..max), rng.gen_range(-max..max));
                grid.constrain_offset(v, o, max)
            })
            .collect();
        grid.with_offsets(offsets).unwrap()
    }

    /// Oracle: walk the triangle boundary densely, keep the L1 displacement to
    /// the Euclidean-closest boundary sample; sign from a half-plane test.
    fn sign_dis_oracle(p: Point, tri: &[Point; 3]) -> f64 {
        let n = 60_000;
        let mut best = f64::INFINITY;
        for e in 0..3 {
            let (a, b) = (tri[e], tri[(e + 1) % 3]);
            let mut edge_best = (f64::INFINITY, 0.0);
            for s in 0..=n {
                let q = a + (b - a) * (s as f64 / n as f64);
                let euclid = (p - q).norm();
                if euclid < edge_best.0 {
                    edge_best = (euclid, (p - q).l1());
                }
            }
            best = best.min(edge_best.1);
        }
        let inside = (0..3).all(|e| (tri[(e + 1) % 3] - tri[e]).cross(p - tri[e]) >= 0.0);
        if inside {
            best
        } else {
            -best
        }
    }

    #[test]
    fn sign_dis_examples() {
        let tri = [Point::new(0.0, 0.0), Point::new(4.0, 0.0), Point::new(0.0, 4.0)];
        let on_edge = signed_distance(Point::new(2.0, 0.0), &tri).unwrap();
        assert_eq!(on_edge.value, 0.0);
        let centroid = Point::new(4.0 / 3.0, 4.0 / 3.0);
        let s = signed_distance(centroid, &tri).unwrap().value;
        assert_abs_diff_eq!(s, 4.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sign_dis_oracle(centroid, &tri), 4.0 / 3.0, epsilon = 1e-3);
        let outside = Point::new(-1.0, -1.0);
        assert_abs_diff_eq!(signed_distance(outside, &tri).unwrap().value, -2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sign_dis_oracle(outside, &tri), -2.0, epsilon = 1e-3);
    }

    #[test]
    fn sign_dis_matches_oracle_on_random_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let tri = [
                Point::new(rng.gen_range(0.0..4.0), rng.gen_range(0.0..4.0)),
                Point::new(rng.gen_range(6.0..10.0), rng.gen_range(0.0..4.0)),
                Point::new(rng.gen_range(2.0..8.0), rng.gen_range(6.0..10.0)),
            ];
            let p = Point::new(rng.gen_range(-2.0..12.0), rng.gen_range(-2.0..12.0));
            let got = signed_distance(p, &tri).unwrap().value;
            assert_abs_diff_eq!(got, sign_dis_oracle(p, &tri), epsilon = 1e-3);
        }
    }

    #[test]
    fn degenerate_cell_is_reported() {
        let g = DeformedGrid::uniform(1, 1, 10, 10, TopologyVariant::Alternating).unwrap();
        let mut pos = g.positions().to_vec();
        pos[1] = pos[3]; // cell 0 = (0, 1, 3) collapses
        let g = g.with_positions(&pos).unwrap();
        assert!(matches!(sign_dis(&g, Point::new(1.0, 1.0), 0), Err(Error::DegenerateCell { cell: 0 })));
        assert!(matches!(soft_assign(&g, 1.0, CandidateWindow::Full), Err(Error::InvalidGrid { .. })));
    }

    #[test]
    fn sharp_delta_is_near_one_hot() {
        let g = DeformedGrid::uniform(2, 2, 8, 8, TopologyVariant::Alternating).unwrap();
        let a = soft_assign(&g, 0.001, CandidateWindow::Full).unwrap();
        // pixel (2, 0): center (2.5, 0.5), strictly inside cell 0 = (0, 1, 4)
        let i = 2;
        assert_eq!(a.hard_labels()[i], 0);
        assert!(a.prob(i, 0) >= 1.0 - 1e-6);
    }

    #[test]
    fn equidistant_pair_splits_evenly() {
        // 1x1 grid on 2x2 pixels: the diagonal passes through pixel (0,0)'s center,
        // which is on the shared edge of both (and only) cells.
        let g = DeformedGrid::uniform(1, 1, 2, 2, TopologyVariant::Alternating).unwrap();
        let a = soft_assign(&g, 1.0, CandidateWindow::Full).unwrap();
        assert_abs_diff_eq!(a.prob(0, 0), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(a.prob(0, 1), 0.5, epsilon = 1e-12);
    }

    /// Oracle: softmax over every cell computed directly from SignDis.
    fn brute_force_probs(grid: &DeformedGrid, delta: f64) -> Vec<Vec<f64>> {
        let w = grid.width();
        (0..grid.pixel_count())
            .map(|i| {
                let p = pixel_center(i % w, i / w);
                let s: Vec<f64> = (0..grid.cell_count()).map(|k| sign_dis(grid, p, k).unwrap()).collect();
                let e: Vec<f64> = s.iter().map(|v| (v / delta).exp()).collect();
                let z: f64 = e.iter().sum();
                e.iter().map(|v| v / z).collect()
            })
            .collect()
    }

    #[test]
    fn windowed_matches_brute_force_on_small_grid() {
        let g = DeformedGrid::uniform(2, 2, 8, 8, TopologyVariant::Alternating).unwrap();
        let oracle = brute_force_probs(&g, 1.0);
        let a = soft_assign(&g, 1.0, CandidateWindow::Radius(2)).unwrap();
        for (i, row) in oracle.iter().enumerate() {
            for (k, &p) in row.iter().enumerate() {
                assert_abs_diff_eq!(a.prob(i, k), p, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn rows_are_probability_simplices() {
        let g = jitter(&DeformedGrid::uniform(4, 5, 40, 32, TopologyVariant::Alternating).unwrap(), 0.3, 5);
        let a = soft_assign(&g, 0.7, CandidateWindow::default()).unwrap();
        for i in 0..a.pixel_count() {
            let (_, probs) = a.row(i);
            assert!(probs.iter().all(|&p| p >= 0.0));
            assert_abs_diff_eq!(probs.iter().sum::<f64>(), 1.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn sharpening_with_smaller_delta() {
        let g = jitter(&DeformedGrid::uniform(3, 3, 24, 24, TopologyVariant::Alternating).unwrap(), 0.3, 9);
        let mut prev: Option<Vec<f64>> = None;
        for delta in [4.0, 2.0, 1.0, 0.5, 0.25] {
            let a = soft_assign(&g, delta, CandidateWindow::Full).unwrap();
            let max: Vec<f64> = (0..a.pixel_count())
                .map(|i| a.row(i).1.iter().copied().fold(0.0, f64::max))
                .collect();
            if let Some(prev) = &prev {
                for (now, before) in max.iter().zip(prev) {
                    assert!(*now >= before - 1e-12);
                }
            }
            prev = Some(max);
        }
    }

    #[test]
    fn stats_constant_image_and_mass() {
        let g = jitter(&DeformedGrid::uniform(3, 3, 24, 24, TopologyVariant::Alternating).unwrap(), 0.3, 2);
        let f = FeatureMap::constant(24, 24, &[0.2, 0.4, 0.6]).unwrap();
        let a = soft_assign(&g, 1.0, CandidateWindow::default()).unwrap();
        let s = cell_stats(&a, &f).unwrap();
        assert_abs_diff_eq!(s.mass.iter().sum::<f64>(), 576.0, epsilon = 1e-4);
        for k in 0..s.cell_count() {
            if !s.empty[k] {
                for (v, c) in s.soft_mean(k).iter().zip([0.2, 0.4, 0.6]) {
                    assert_abs_diff_eq!(*v, c, epsilon = 1e-12);
                }
            }
        }
        assert!(cell_stats(&a, &FeatureMap::constant(8, 8, &[1.0]).unwrap()).is_err());
    }

    #[test]
    fn sharp_soft_mass_equals_hard_count() {
        // 4x3 quads: no pixel center lies on any edge, so the limit is clean.
        let g = DeformedGrid::uniform(2, 2, 8, 6, TopologyVariant::Alternating).unwrap();
        let f = FeatureMap::constant(8, 6, &[1.0]).unwrap();
        let a = soft_assign(&g, 1e-4, CandidateWindow::default()).unwrap();
        let s = cell_stats(&a, &f).unwrap();
        for k in 0..s.cell_count() {
            assert_abs_diff_eq!(s.mass[k], s.hard_count[k] as f64, epsilon = 1e-3);
        }
        assert_eq!(s.hard_count.iter().sum::<usize>(), 48);
    }

    #[test]
    fn two_tone_means_are_exact() {
        // Tones split at x = 4, which is a vertex column of a 2x2 grid on 8x8.
        let g = DeformedGrid::uniform(2, 2, 8, 8, TopologyVariant::Alternating).unwrap();
        let data: Vec<f64> = (0..64).map(|i| if i % 8 < 4 { 0.1 } else { 0.9 }).collect();
        let f = FeatureMap::new(8, 8, 1, data.clone()).unwrap();
        let a = soft_assign(&g, 1e-3, CandidateWindow::default()).unwrap();
        let s = cell_stats(&a, &f).unwrap();
        // Direct oracle: average of the pixel values whose center lies in each cell.
        for k in 0..s.cell_count() {
            let members: Vec<f64> = (0..64).filter(|&i| a.hard_labels()[i] == k).map(|i| data[i]).collect();
            let mean = members.iter().sum::<f64>() / members.len() as f64;
            assert_abs_diff_eq!(s.hard_mean(k)[0], mean, epsilon = 1e-12);
            let tone = if g.topology().quad_of_cell(k).1 == 0 { 0.1 } else { 0.9 };
            assert_abs_diff_eq!(s.hard_mean(k)[0], tone, epsilon = 1e-12);
            assert_abs_diff_eq!(s.soft_mean(k)[0], tone, epsilon = 1e-9);
        }
    }
}
