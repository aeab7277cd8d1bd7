//! Segmentation metrics: achievable segmentation accuracy, boundary
//! precision/recall/F with a pixel tolerance, and mask IoU.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{dims_mismatch, Result};
use crate::mask::Mask;

fn same_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(dims_mismatch(a, b));
    }
    Ok(())
}

/// `Σ_s max_g |s ∩ g| / N` over predicted segments `s` and ground-truth segments `g`.
pub fn asa(pred: &[u32], gt: &[u32]) -> Result<f64> {
    same_len(gt.len(), pred.len())?;
    if pred.is_empty() {
        return Ok(1.0);
    }
    let mut overlap: HashMap<(u32, u32), usize> = HashMap::new();
    for (&p, &g) in pred.iter().zip(gt) {
        *overlap.entry((p, g)).or_insert(0) += 1;
    }
    let mut best: HashMap<u32, usize> = HashMap::new();
    for (&(p, _), &n) in &overlap {
        let b = best.entry(p).or_insert(0);
        *b = (*b).max(n);
    }
    Ok(best.values().sum::<usize>() as f64 / pred.len() as f64)
}

/// Pixels whose 4-neighbourhood contains a different id.
pub fn boundary_pixels(ids: &[u32], width: usize, height: usize) -> Vec<bool> {
    let mut out = vec![false; width * height];
    for y in 0..height {
        for x in 0..width {
            let id = ids[y * width + x];
            out[y * width + x] = (x > 0 && ids[y * width + x - 1] != id)
                || (x + 1 < width && ids[y * width + x + 1] != id)
                || (y > 0 && ids[(y - 1) * width + x] != id)
                || (y + 1 < height && ids[(y + 1) * width + x] != id);
        }
    }
    out
}

/// Summed-area table with a zero first row and column.
struct Integral {
    width: usize,
    height: usize,
    sums: Vec<u32>,
}

impl Integral {
    fn new(bits: &[bool], width: usize, height: usize) -> Self {
        let mut sums = vec![0u32; (width + 1) * (height + 1)];
        for y in 0..height {
            let mut row = 0;
            for x in 0..width {
                row += u32::from(bits[y * width + x]);
                sums[(y + 1) * (width + 1) + x + 1] = sums[y * (width + 1) + x + 1] + row;
            }
        }
        Integral { width, height, sums }
    }

    /// Any set pixel within Chebyshev distance `r` of `(x, y)`.
    fn any_within(&self, x: usize, y: usize, r: usize) -> bool {
        let (x0, y0) = (x.saturating_sub(r), y.saturating_sub(r));
        let (x1, y1) = ((x + r + 1).min(self.width), (y + r + 1).min(self.height));
        let w = self.width + 1;
        self.sums[y1 * w + x1] + self.sums[y0 * w + x0] > self.sums[y0 * w + x1] + self.sums[y1 * w + x0]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryScore {
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

fn matched_fraction(from: &[bool], to: &Integral, width: usize, tolerance: usize) -> Option<f64> {
    let total = from.iter().filter(|&&b| b).count();
    if total == 0 {
        return None;
    }
    let hit = from.iter().enumerate().filter(|&(i, &b)| b && to.any_within(i % width, i / width, tolerance)).count();
    Some(hit as f64 / total as f64)
}

/// Boundary precision and recall: the fraction of predicted (resp.
/// ground-truth) boundary pixels within Chebyshev distance `tolerance` of a
/// ground-truth (resp. predicted) boundary pixel. A side without boundary
/// pixels scores 0, unless neither side has any, which scores 1.
pub fn boundary_score(pred: &[u32], gt: &[u32], width: usize, height: usize, tolerance: usize) -> Result<BoundaryScore> {
    same_len(width * height, pred.len())?;
    same_len(width * height, gt.len())?;
    let (pb, gb) = (boundary_pixels(pred, width, height), boundary_pixels(gt, width, height));
    let (pi, gi) = (Integral::new(&pb, width, height), Integral::new(&gb, width, height));
    let (precision, recall) = match (matched_fraction(&pb, &gi, width, tolerance), matched_fraction(&gb, &pi, width, tolerance)) {
        (None, None) => (1.0, 1.0),
        (p, r) => (p.unwrap_or(0.0), r.unwrap_or(0.0)),
    };
    let f = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
    Ok(BoundaryScore { precision, recall, f })
}

/// `|pred ∩ gt| / |pred ∪ gt|`; 1 when both are empty.
pub fn mask_iou(pred: &Mask, gt: &Mask) -> Result<f64> {
    pred.check_extent(gt.width(), gt.height())?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        inter += usize::from(p && g);
        union += usize::from(p || g);
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Boundary F-score between two binary masks.
pub fn mask_boundary_f(pred: &Mask, gt: &Mask, tolerance: usize) -> Result<f64> {
    pred.check_extent(gt.width(), gt.height())?;
    let ids = |m: &Mask| m.data().iter().map(|&b| u32::from(b)).collect::<Vec<_>>();
    Ok(boundary_score(&ids(pred), &ids(gt), pred.width(), pred.height(), tolerance)?.f)
}

/// One row of the metrics CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub image: String,
    pub n: usize,
    pub asa: f64,
    pub bp: f64,
    pub br: f64,
    pub f: f64,
}

pub const METRICS_HEADER: &str = "image,n,asa,bp,br,f";

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        format!("{},{},{},{},{},{}", self.image, self.n, self.asa, self.bp, self.br, self.f)
    }
}

/// Header plus rows, newline-terminated.
pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_csv());
        out.push('\n');
    }
    out
}
