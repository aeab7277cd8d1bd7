use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How each lattice quad is split into triangles.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TopologyVariant {
    /// Two triangles per quad, diagonal direction alternating in a checkerboard.
    #[default]
    Alternating,
    /// Two triangles per quad, every diagonal from top-left to bottom-right.
    Diagonal,
    /// Four triangles per quad fanned around an extra center vertex.
    QuadCenter,
}

impl TopologyVariant {
    pub fn triangles_per_quad(self) -> usize {
        match self {
            TopologyVariant::Alternating | TopologyVariant::Diagonal => 2,
            TopologyVariant::QuadCenter => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TopologyVariant::Alternating => "alternating",
            TopologyVariant::Diagonal => "diagonal",
            TopologyVariant::QuadCenter => "quad-center",
        }
    }
}

impl std::str::FromStr for TopologyVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alternating" => Ok(TopologyVariant::Alternating),
            "diagonal" => Ok(TopologyVariant::Diagonal),
            "quad-center" => Ok(TopologyVariant::QuadCenter),
            other => Err(Error::InvalidArgument(format!("unknown topology variant `{other}`"))),
        }
    }
}

/// Which coordinates of a vertex are frozen by the image-border constraint.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Pinned {
    pub x: bool,
    pub y: bool,
}

/// Fixed triangle connectivity over a `rows × cols` lattice of quads.
///
/// Lattice vertices are numbered row-major, `i * (cols + 1) + j`. The
/// quad-center variant appends one vertex per quad after the lattice
/// vertices, again row-major. Cells are ordered row-major by quad and then by
/// triangle within the quad; every cell is wound so its shoelace area is
/// positive in image coordinates (y downward).
#[derive(Clone, Debug)]
pub struct GridTopology {
    rows: usize,
    cols: usize,
    variant: TopologyVariant,
    cells: Vec<[usize; 3]>,
    vertex_count: usize,
    adjacency: Vec<Vec<usize>>,
    edges: Vec<[usize; 2]>,
    edge_cells: Vec<Vec<usize>>,
    cell_adjacency: Vec<(usize, usize)>,
    pinned: Vec<Pinned>,
}

impl GridTopology {
    pub fn new(rows: usize, cols: usize, variant: TopologyVariant) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidArgument(format!(
                "grid needs at least one quad row and column, got {rows}x{cols}"
            )));
        }
        let lattice = (rows + 1) * (cols + 1);
        let vertex_count = match variant {
            TopologyVariant::QuadCenter => lattice + rows * cols,
            _ => lattice,
        };
        let vid = |i: usize, j: usize| i * (cols + 1) + j;

        let mut cells = Vec::with_capacity(rows * cols * variant.triangles_per_quad());
        for r in 0..rows {
            for c in 0..cols {
                let v00 = vid(r, c);
                let v01 = vid(r, c + 1);
                let v10 = vid(r + 1, c);
                let v11 = vid(r + 1, c + 1);
                match variant {
                    TopologyVariant::Alternating if (r + c) % 2 == 1 => {
                        cells.push([v00, v01, v10]);
                        cells.push([v01, v11, v10]);
                    }
                    TopologyVariant::Alternating | TopologyVariant::Diagonal => {
                        cells.push([v00, v01, v11]);
                        cells.push([v00, v11, v10]);
                    }
                    TopologyVariant::QuadCenter => {
                        let ctr = lattice + r * cols + c;
                        cells.push([v00, v01, ctr]);
                        cells.push([v01, v11, ctr]);
                        cells.push([v11, v10, ctr]);
                        cells.push([v10, v00, ctr]);
                    }
                }
            }
        }

        let mut edge_map: BTreeMap<[usize; 2], Vec<usize>> = BTreeMap::new();
        for (k, cell) in cells.iter().enumerate() {
            for e in 0..3 {
                let (a, b) = (cell[e], cell[(e + 1) % 3]);
                edge_map.entry([a.min(b), a.max(b)]).or_default().push(k);
            }
        }
        let mut adjacency = vec![Vec::new(); vertex_count];
        let mut edges = Vec::with_capacity(edge_map.len());
        let mut edge_cells = Vec::with_capacity(edge_map.len());
        let mut cell_adjacency = Vec::new();
        for (edge, owners) in edge_map {
            adjacency[edge[0]].push(edge[1]);
            adjacency[edge[1]].push(edge[0]);
            if let [p, q] = owners[..] {
                cell_adjacency.push((p.min(q), p.max(q)));
            }
            edges.push(edge);
            edge_cells.push(owners);
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        cell_adjacency.sort_unstable();

        let pinned = (0..vertex_count)
            .map(|v| {
                if v >= lattice {
                    return Pinned::default();
                }
                let (i, j) = (v / (cols + 1), v % (cols + 1));
                Pinned { x: j == 0 || j == cols, y: i == 0 || i == rows }
            })
            .collect();

        Ok(GridTopology {
            rows,
            cols,
            variant,
            cells,
            vertex_count,
            adjacency,
            edges,
            edge_cells,
            cell_adjacency,
            pinned,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn variant(&self) -> TopologyVariant {
        self.variant
    }

    pub fn cells(&self) -> &[[usize; 3]] {
        &self.cells
    }

    pub fn cell_count(&self) -> usize {
        self.cells.len()
    }

    pub fn vertex_count(&self) -> usize {
        self.vertex_count
    }

    pub fn lattice_vertex_count(&self) -> usize {
        (self.rows + 1) * (self.cols + 1)
    }

    pub fn triangles_per_quad(&self) -> usize {
        self.variant.triangles_per_quad()
    }

    /// Neighbors `N(i)`: vertices sharing a cell edge with `i`, ascending.
    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adjacency[v]
    }

    /// Unique undirected edges `[lo, hi]`, sorted.
    pub fn edges(&self) -> &[[usize; 2]] {
        &self.edges
    }

    /// Cells incident to each edge (one on the image border, two inside).
    pub fn edge_cells(&self, edge: usize) -> &[usize] {
        &self.edge_cells[edge]
    }

    /// Index of edge `{a, b}` in [`GridTopology::edges`].
    pub fn edge_index(&self, a: usize, b: usize) -> Option<usize> {
        self.edges.binary_search(&[a.min(b), a.max(b)]).ok()
    }

    /// Pairs of cells sharing an edge, `(lo, hi)`, sorted.
    pub fn cell_adjacency(&self) -> &[(usize, usize)] {
        &self.cell_adjacency
    }

    pub fn pinned(&self, v: usize) -> Pinned {
        self.pinned[v]
    }

    /// Range of cell indices belonging to quad `(r, c)`.
    pub fn quad_cells(&self, r: usize, c: usize) -> std::ops::Range<usize> {
        let tpq = self.triangles_per_quad();
        let start = (r * self.cols + c) * tpq;
        start..start + tpq
    }

    pub fn quad_of_cell(&self, k: usize) -> (usize, usize) {
        let q = k / self.triangles_per_quad();
        (q / self.cols, q % self.cols)
    }
}
