//! Triangular grid topology, deformed vertex state and geometric predicates.

mod geom;
mod topology;

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use geom::{
    barycentric, bilinear_sample, project_onto_segment, segment_l1_distance, triangle_signed_area,
    BarycentricCoords, Point, SegmentProjection, DEGENERATE_AREA,
};
pub use topology::{GridTopology, Pinned, TopologyVariant};

use crate::error::{Error, Result};

/// Slack on barycentric weights when deciding containment of a pixel center.
pub(crate) const INSIDE_EPS: f64 = 1e-12;

/// Center of pixel `(x, y)`.
#[inline]
pub fn pixel_center(x: usize, y: usize) -> Point {
    Point::new(x as f64 + 0.5, y as f64 + 0.5)
}

/// A fixed topology with movable vertices: `position(i) = base(i) + offset(i)`.
///
/// Positions are the stored state; offsets are derived so that interchange
/// files round-trip exactly.
#[derive(Clone, Debug)]
pub struct DeformedGrid {
    topology: Arc<GridTopology>,
    base: Arc<Vec<Point>>,
    positions: Vec<Point>,
    width: usize,
    height: usize,
}

impl DeformedGrid {
    /// Uniform lattice: vertex `(i, j)` at `(j·width/cols, i·height/rows)`, zero offsets.
    pub fn uniform(
        rows: usize,
        cols: usize,
        width: usize,
        height: usize,
        variant: TopologyVariant,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "image extent must be positive, got {width}x{height}"
            )));
        }
        let topology = GridTopology::new(rows, cols, variant)?;
        let sx = width as f64 / cols as f64;
        let sy = height as f64 / rows as f64;
        let mut base = Vec::with_capacity(topology.vertex_count());
        for i in 0..=rows {
            for j in 0..=cols {
                base.push(Point::new(j as f64 * sx, i as f64 * sy));
            }
        }
        if variant == TopologyVariant::QuadCenter {
            for r in 0..rows {
                for c in 0..cols {
                    base.push(Point::new((c as f64 + 0.5) * sx, (r as f64 + 0.5) * sy));
                }
            }
        }
        let positions = base.clone();
        Ok(DeformedGrid { topology: Arc::new(topology), base: Arc::new(base), positions, width, height })
    }

    pub fn topology(&self) -> &GridTopology {
        &self.topology
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn vertex_count(&self) -> usize {
        self.base.len()
    }

    pub fn cell_count(&self) -> usize {
        self.topology.cell_count()
    }

    pub fn base_positions(&self) -> &[Point] {
        &self.base
    }

    #[inline]
    pub fn offset(&self, v: usize) -> Point {
        self.positions[v] - self.base[v]
    }

    pub fn offsets(&self) -> Vec<Point> {
        (0..self.vertex_count()).map(|v| self.offset(v)).collect()
    }

    #[inline]
    pub fn position(&self, v: usize) -> Point {
        self.positions[v]
    }

    pub fn positions(&self) -> &[Point] {
        &self.positions
    }

    #[inline]
    pub fn cell_points(&self, k: usize) -> [Point; 3] {
        let [a, b, c] = self.topology.cells()[k];
        [self.position(a), self.position(b), self.position(c)]
    }

    /// Horizontal and vertical quad size of the base lattice.
    pub fn quad_size(&self) -> (f64, f64) {
        (
            self.width as f64 / self.topology.cols() as f64,
            self.height as f64 / self.topology.rows() as f64,
        )
    }

    /// `min(width/cols, height/rows)`.
    pub fn pitch(&self) -> f64 {
        let (sx, sy) = self.quad_size();
        sx.min(sy)
    }

    /// Mean cell area of a grid covering the whole image.
    pub fn mean_cell_area(&self) -> f64 {
        (self.width * self.height) as f64 / self.cell_count() as f64
    }

    /// Same topology and base, new offsets; no constraint is applied.
    pub fn with_offsets(&self, offsets: Vec<Point>) -> Result<Self> {
        if offsets.len() != self.vertex_count() {
            return Err(crate::error::dims_mismatch(
                format!("{} offsets", self.vertex_count()),
                offsets.len(),
            ));
        }
        let positions = offsets.iter().zip(self.base.iter()).map(|(&o, &b)| b + o).collect();
        Ok(self.with_position_vec(positions))
    }

    /// Same topology and base, vertices at `positions`; no constraint is applied.
    pub fn with_positions(&self, positions: &[Point]) -> Result<Self> {
        if positions.len() != self.vertex_count() {
            return Err(crate::error::dims_mismatch(
                format!("{} vertices", self.vertex_count()),
                positions.len(),
            ));
        }
        Ok(self.with_position_vec(positions.to_vec()))
    }

    fn with_position_vec(&self, positions: Vec<Point>) -> Self {
        DeformedGrid {
            topology: Arc::clone(&self.topology),
            base: Arc::clone(&self.base),
            positions,
            width: self.width,
            height: self.height,
        }
    }

    /// Shoelace signed area of every cell under the construction winding.
    pub fn signed_areas(&self) -> Vec<f64> {
        (0..self.cell_count()).map(|k| triangle_signed_area(&self.cell_points(k))).collect()
    }

    /// Cells whose signed area is `<= floor`, ascending.
    pub fn cells_at_or_below(&self, floor: f64) -> Vec<usize> {
        (0..self.cell_count())
            .filter(|&k| triangle_signed_area(&self.cell_points(k)) <= floor)
            .collect()
    }

    /// Every cell has area above the degenerate threshold.
    pub fn validate(&self) -> Result<()> {
        let bad = self.cells_at_or_below(DEGENERATE_AREA);
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidGrid { cells: bad })
        }
    }

    pub fn is_valid(&self) -> bool {
        self.validate().is_ok()
    }

    pub fn barycentric(&self, p: Point, cell: usize) -> Result<BarycentricCoords> {
        barycentric(p, &self.cell_points(cell)).ok_or(Error::DegenerateCell { cell })
    }

    /// Base-lattice quad `(row, col)` holding `p`, clamped to the grid.
    pub fn quad_at(&self, p: Point) -> (usize, usize) {
        let (sx, sy) = self.quad_size();
        let t = &self.topology;
        let c = ((p.x / sx).floor().max(0.0) as usize).min(t.cols() - 1);
        let r = ((p.y / sy).floor().max(0.0) as usize).min(t.rows() - 1);
        (r, c)
    }

    /// Cells of all quads within `radius` quads of `(r, c)`, ascending.
    pub fn window_cells(&self, (r, c): (usize, usize), radius: usize) -> Vec<usize> {
        let t = &self.topology;
        let r0 = r.saturating_sub(radius);
        let r1 = (r + radius).min(t.rows() - 1);
        let c0 = c.saturating_sub(radius);
        let c1 = (c + radius).min(t.cols() - 1);
        let mut out = Vec::with_capacity((r1 - r0 + 1) * (c1 - c0 + 1) * t.triangles_per_quad());
        for rr in r0..=r1 {
            for cc in c0..=c1 {
                out.extend(t.quad_cells(rr, cc));
            }
        }
        out
    }

    /// The cell containing `p`; points on shared edges go to the lowest index.
    pub fn locate(&self, p: Point) -> usize {
        let candidates = self.window_cells(self.quad_at(p), 1);
        self.locate_among(p, &candidates)
            .or_else(|| {
                let all: Vec<usize> = (0..self.cell_count()).collect();
                self.locate_among(p, &all)
            })
            .unwrap_or_else(|| {
                // Outside every cell (only possible for grids violating the
                // border constraint): fall back to the least-negative weight.
                let mut best = (f64::NEG_INFINITY, 0);
                for k in 0..self.cell_count() {
                    if let Some(w) = barycentric(p, &self.cell_points(k)) {
                        if w.min_weight() > best.0 {
                            best = (w.min_weight(), k);
                        }
                    }
                }
                best.1
            })
    }

    fn locate_among(&self, p: Point, candidates: &[usize]) -> Option<usize> {
        candidates.iter().copied().find(|&k| {
            barycentric(p, &self.cell_points(k)).is_some_and(|w| w.min_weight() >= -INSIDE_EPS)
        })
    }

    /// Containing cell of every pixel center, row-major.
    pub fn hard_labels(&self) -> Vec<usize> {
        let w = self.width;
        (0..self.pixel_count())
            .into_par_iter()
            .map(|i| self.locate(pixel_center(i % w, i / w)))
            .collect()
    }

    /// Project an offset for vertex `v` onto the feasible set: border
    /// coordinates frozen, position kept inside the image, and
    /// `|offset| <= max_norm` (Euclidean).
    pub fn constrain_offset(&self, v: usize, offset: Point, max_norm: f64) -> Point {
        let pin = self.topology.pinned(v);
        let mut o = offset;
        if pin.x {
            o.x = 0.0;
        }
        if pin.y {
            o.y = 0.0;
        }
        let n = o.norm();
        if n > max_norm {
            o = o * (max_norm / n);
        }
        let b = self.base[v];
        o.x = (b.x + o.x).clamp(0.0, self.width as f64) - b.x;
        o.y = (b.y + o.y).clamp(0.0, self.height as f64) - b.y;
        o
    }

    pub fn to_file(&self) -> GridFile {
        GridFile {
            rows: self.topology.rows(),
            cols: self.topology.cols(),
            width: self.width,
            height: self.height,
            variant: self.topology.variant(),
            vertices: self.positions.clone(),
            cells: self.topology.cells().to_vec(),
        }
    }

    pub fn from_file(file: &GridFile) -> Result<Self> {
        let grid = DeformedGrid::uniform(file.rows, file.cols, file.width, file.height, file.variant)?;
        if file.cells != grid.topology.cells() {
            return Err(Error::Format(format!(
                "cell list does not match a {}x{} {} grid",
                file.rows,
                file.cols,
                file.variant.name()
            )));
        }
        grid.with_positions(&file.vertices)
    }
}

/// Interchange form of a grid: final vertex positions plus connectivity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridFile {
    pub rows: usize,
    pub cols: usize,
    pub width: usize,
    pub height: usize,
    pub variant: TopologyVariant,
    pub vertices: Vec<Point>,
    pub cells: Vec<[usize; 3]>,
}

impl GridFile {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("grid file serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}
