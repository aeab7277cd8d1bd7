//! Hard per-cell pooling, paste-back to the pixel plane and per-cell labels.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{dims_mismatch, Error, Result};
use crate::features::FeatureMap;
use crate::grid::{DeformedGrid, Point};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PoolMode {
    #[default]
    Mean,
    Max,
}

impl PoolMode {
    /// Tag stored in the binary header.
    pub fn tag(self) -> u32 {
        match self {
            PoolMode::Mean => 0,
            PoolMode::Max => 1,
        }
    }

    pub fn from_tag(tag: u32) -> Result<Self> {
        match tag {
            0 => Ok(PoolMode::Mean),
            1 => Ok(PoolMode::Max),
            _ => Err(Error::Format(format!("unknown pooling mode tag {tag}"))),
        }
    }
}

impl std::str::FromStr for PoolMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(PoolMode::Mean),
            "max" => Ok(PoolMode::Max),
            _ => Err(Error::InvalidArgument(format!("unknown pooling mode {s:?} (mean|max)"))),
        }
    }
}

/// Per-cell feature vectors in topology cell order (row-major by quad, then
/// by triangle within the quad).
#[derive(Clone, Debug, PartialEq)]
pub struct CellFeatureGrid {
    cells: usize,
    channels: usize,
    mode: PoolMode,
    values: Vec<f64>,
    /// Cells that contained no pixel center; their value was copied from the
    /// nearest non-empty cell.
    empty: Vec<bool>,
}

impl CellFeatureGrid {
    pub fn new(cells: usize, channels: usize, mode: PoolMode, values: Vec<f64>) -> Result<Self> {
        if values.len() != cells * channels {
            return Err(dims_mismatch(cells * channels, values.len()));
        }
        Ok(CellFeatureGrid { cells, channels, mode, values, empty: vec![false; cells] })
    }

    pub fn cell_count(&self) -> usize {
        self.cells
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn mode(&self) -> PoolMode {
        self.mode
    }

    pub fn value(&self, k: usize) -> &[f64] {
        &self.values[k * self.channels..(k + 1) * self.channels]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn empty(&self) -> &[bool] {
        &self.empty
    }

    /// Little-endian `K, d, mode tag` as u32, then `K·d` f32 values.
    pub fn write_to(&self, mut out: impl Write) -> Result<()> {
        let mut buf = Vec::with_capacity(12 + 4 * self.values.len());
        for v in [self.cells as u32, self.channels as u32, self.mode.tag()] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for &v in &self.values {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out.write_all(&buf)?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to memory");
        out
    }

    pub fn read_from(mut input: impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 {
            return Err(Error::Format("cell feature file shorter than its header".into()));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().expect("4 bytes"));
        let (cells, channels, mode) = (word(0) as usize, word(1) as usize, PoolMode::from_tag(word(2))?);
        let body = &bytes[12..];
        if body.len() != 4 * cells * channels {
            return Err(Error::Format(format!(
                "cell feature body has {} bytes, header promises {}",
                body.len(),
                4 * cells * channels
            )));
        }
        let values = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        CellFeatureGrid::new(cells, channels, mode, values)
    }
}

fn centroid(grid: &DeformedGrid, k: usize) -> Point {
    let [a, b, c] = grid.cell_points(k);
    (a + b + c) * (1.0 / 3.0)
}

/// For every empty cell, the non-empty cell with the nearest centroid (ties
/// to the lower index). `None` when every cell is empty.
fn nearest_filled(grid: &DeformedGrid, empty: &[bool]) -> Vec<Option<usize>> {
    let filled: Vec<(usize, Point)> =
        (0..empty.len()).filter(|&k| !empty[k]).map(|k| (k, centroid(grid, k))).collect();
    (0..empty.len())
        .map(|k| {
            if !empty[k] {
                return Some(k);
            }
            let c = centroid(grid, k);
            let mut best: Option<(f64, usize)> = None;
            for &(j, cj) in &filled {
                let d = (cj - c).norm_sq();
                if best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, j));
                }
            }
            best.map(|(_, j)| j)
        })
        .collect()
}

/// Pool `features` into the cells of `grid` using the hard (pixel-center)
/// assignment.
pub fn grid_pool(grid: &DeformedGrid, features: &FeatureMap, mode: PoolMode) -> Result<CellFeatureGrid> {
    features.check_extent(grid.width(), grid.height())?;
    grid.validate()?;
    let labels = grid.hard_labels();
    pool_with_labels(grid, &labels, features, mode)
}

pub(crate) fn pool_with_labels(
    grid: &DeformedGrid,
    labels: &[usize],
    features: &FeatureMap,
    mode: PoolMode,
) -> Result<CellFeatureGrid> {
    let (k_count, d) = (grid.cell_count(), features.channels());
    let mut sum = vec![0.0; k_count * d];
    let mut lo = vec![f64::INFINITY; k_count * d];
    let mut hi = vec![f64::NEG_INFINITY; k_count * d];
    let mut count = vec![0usize; k_count];
    for (i, &k) in labels.iter().enumerate() {
        count[k] += 1;
        for (c, &f) in features.pixel(i).iter().enumerate() {
            let j = k * d + c;
            sum[j] += f;
            lo[j] = lo[j].min(f);
            hi[j] = hi[j].max(f);
        }
    }
    let mut values = vec![0.0; k_count * d];
    for (k, &n) in count.iter().enumerate() {
        if n == 0 {
            continue;
        }
        for j in k * d..(k + 1) * d {
            values[j] = match mode {
                PoolMode::Max => hi[j],
                // A constant cell pools to its value exactly, not to a rounded sum/n.
                PoolMode::Mean if lo[j] == hi[j] => lo[j],
                PoolMode::Mean => (sum[j] / count[k] as f64).clamp(lo[j], hi[j]),
            };
        }
    }
    let empty: Vec<bool> = count.iter().map(|&c| c == 0).collect();
    let source = nearest_filled(grid, &empty);
    for k in 0..k_count {
        if empty[k] {
            let j = source[k].ok_or_else(|| Error::Internal("no cell holds a pixel".into()))?;
            values.copy_within(j * d..(j + 1) * d, k * d);
        }
    }
    Ok(CellFeatureGrid { cells: k_count, channels: d, mode, values, empty })
}

/// Give every pixel the value of the cell containing its center.
pub fn paste_back(grid: &DeformedGrid, cells: &CellFeatureGrid) -> Result<FeatureMap> {
    if cells.cell_count() != grid.cell_count() {
        return Err(dims_mismatch(format!("{} cells", grid.cell_count()), cells.cell_count()));
    }
    let d = cells.channels();
    let mut data = Vec::with_capacity(grid.pixel_count() * d);
    for k in grid.hard_labels() {
        data.extend_from_slice(cells.value(k));
    }
    FeatureMap::new(grid.width(), grid.height(), d, data)
}

/// Majority class of every cell under the hard assignment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellLabels {
    pub labels: Vec<u32>,
    /// Fraction of the cell's pixels with a non-zero label.
    pub foreground_fraction: Vec<f64>,
    pub pixel_count: Vec<usize>,
    /// Cells without pixels; labelled background.
    pub empty: Vec<bool>,
}

/// Majority label per cell; ties (and empty cells) go to background `0`.
pub fn label_cells(grid: &DeformedGrid, mask: &[u32]) -> Result<CellLabels> {
    if mask.len() != grid.pixel_count() {
        return Err(dims_mismatch(grid.pixel_count(), mask.len()));
    }
    grid.validate()?;
    label_with_assignment(&grid.hard_labels(), grid.cell_count(), mask)
}

pub(crate) fn label_with_assignment(assign: &[usize], k_count: usize, mask: &[u32]) -> Result<CellLabels> {
    let mut counts: Vec<std::collections::BTreeMap<u32, usize>> = vec![Default::default(); k_count];
    for (&k, &l) in assign.iter().zip(mask) {
        *counts[k].entry(l).or_insert(0) += 1;
    }
    let mut out = CellLabels {
        labels: Vec::with_capacity(k_count),
        foreground_fraction: Vec::with_capacity(k_count),
        pixel_count: Vec::with_capacity(k_count),
        empty: Vec::with_capacity(k_count),
    };
    for c in &counts {
        let total: usize = c.values().sum();
        let best = c.values().copied().max().unwrap_or(0);
        let winners: Vec<u32> = c.iter().filter(|(_, &n)| n == best).map(|(&l, _)| l).collect();
        out.labels.push(if winners.len() == 1 { winners[0] } else { 0 });
        let fg = total - c.get(&0).copied().unwrap_or(0);
        out.foreground_fraction.push(if total == 0 { 0.0 } else { fg as f64 / total as f64 });
        out.pixel_count.push(total);
        out.empty.push(total == 0);
    }
    Ok(out)
}

/// Per-pixel labels obtained by painting each cell with its label.
pub fn rasterize_labels(grid: &DeformedGrid, labels: &[u32]) -> Result<Vec<u32>> {
    if labels.len() != grid.cell_count() {
        return Err(dims_mismatch(format!("{} cell labels", grid.cell_count()), labels.len()));
    }
    Ok(grid.hard_labels().into_iter().map(|k| labels[k]).collect())
}
