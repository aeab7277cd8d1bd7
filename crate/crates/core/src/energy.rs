//! Deformation energy: cell variance, soft reconstruction, area balancing and
//! Laplacian smoothness, with the analytic gradient of their weighted sum
//! with respect to every vertex position.

use serde::{Deserialize, Serialize};

use crate::assignment::{self, cell_stats, AssignmentField, CandidateWindow, CellStats};
use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::grid::{DeformedGrid, Point};

/// Whether the gradient flows through the soft cell means.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeanMode {
    #[default]
    SoftGrad,
    StopGrad,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_recons: f64,
    pub lambda_area: f64,
    pub lambda_lap: f64,
    /// Softmax temperature of the soft assignment, px.
    pub delta: f64,
    pub mean_mode: MeanMode,
    #[serde(skip, default)]
    pub window: CandidateWindow,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_recons: 0.5,
            lambda_area: 0.02,
            lambda_lap: 0.1,
            delta: assignment::DEFAULT_DELTA,
            mean_mode: MeanMode::SoftGrad,
            window: CandidateWindow::default(),
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let lambdas = [self.lambda_recons, self.lambda_area, self.lambda_lap];
        if lambdas.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(Error::InvalidArgument(format!("loss weights must be >= 0, got {lambdas:?}")));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::InvalidArgument(format!("delta must be positive, got {}", self.delta)));
        }
        Ok(())
    }
}

/// Loss values without the gradient.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossValues {
    pub l_var: f64,
    pub l_recons: f64,
    /// Area-balancing term on areas divided by the mean cell area.
    pub l_area: f64,
    pub l_lap: f64,
    pub l_total: f64,
}

impl LossValues {
    fn combine(l_var: f64, l_recons: f64, l_area: f64, l_lap: f64, w: &LossWeights) -> Self {
        let l_total = l_var + w.lambda_recons * l_recons + w.lambda_area * l_area + w.lambda_lap * l_lap;
        LossValues { l_var, l_recons, l_area, l_lap, l_total }
    }
}

/// All four losses, their weighted total and `∂L_total/∂v_i` for every vertex.
/// Gradient components of frozen (border) coordinates are zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub l_var: f64,
    pub l_recons: f64,
    pub l_area: f64,
    pub l_lap: f64,
    pub l_total: f64,
    pub grad: Vec<Point>,
}

impl EnergyReport {
    pub fn values(&self) -> LossValues {
        LossValues {
            l_var: self.l_var,
            l_recons: self.l_recons,
            l_area: self.l_area,
            l_lap: self.l_lap,
            l_total: self.l_total,
        }
    }

    pub fn grad_inf_norm(&self) -> f64 {
        self.grad.iter().map(|g| g.x.abs().max(g.y.abs())).fold(0.0, f64::max)
    }
}

fn check_inputs(
    grid: &DeformedGrid,
    features: &FeatureMap,
    assign: &AssignmentField,
    stats: &CellStats,
) -> Result<()> {
    assignment::check_features(grid, features)?;
    features.check_extent(assign.width(), assign.height())?;
    assignment::check_stats(stats, features, grid.cell_count())
}

/// `Σ_k Σ_i P_{i→k} ‖f_i − f̄_k‖²` with `f̄_k` the soft cell means.
pub fn loss_variance(
    grid: &DeformedGrid,
    features: &FeatureMap,
    assign: &AssignmentField,
    stats: &CellStats,
) -> Result<f64> {
    check_inputs(grid, features, assign, stats)?;
    Ok(variance_with_means(features, assign, &stats.soft_mean))
}

/// `Σ_i ‖Σ_k P_{i→k} f̄_k − f_i‖₁`.
pub fn loss_reconstruction(
    grid: &DeformedGrid,
    features: &FeatureMap,
    assign: &AssignmentField,
    stats: &CellStats,
) -> Result<f64> {
    check_inputs(grid, features, assign, stats)?;
    Ok(reconstruction_with_means(features, assign, &stats.soft_mean))
}

fn variance_with_means(features: &FeatureMap, assign: &AssignmentField, means: &[f64]) -> f64 {
    let d = features.channels();
    let mut total = 0.0;
    for i in 0..assign.pixel_count() {
        let f = features.pixel(i);
        let (cells, probs) = assign.row(i);
        for (&k, &p) in cells.iter().zip(probs) {
            total += p * sq_dist(f, &means[k * d..(k + 1) * d]);
        }
    }
    total
}

fn reconstruction_with_means(features: &FeatureMap, assign: &AssignmentField, means: &[f64]) -> f64 {
    let d = features.channels();
    let mut recon = vec![0.0; d];
    let mut total = 0.0;
    for i in 0..assign.pixel_count() {
        reconstruct(assign, means, d, i, &mut recon);
        total += recon.iter().zip(features.pixel(i)).map(|(r, f)| (r - f).abs()).sum::<f64>();
    }
    total
}

fn reconstruct(assign: &AssignmentField, means: &[f64], d: usize, i: usize, out: &mut [f64]) {
    out.fill(0.0);
    let (cells, probs) = assign.row(i);
    for (&k, &p) in cells.iter().zip(probs) {
        for (o, m) in out.iter_mut().zip(&means[k * d..(k + 1) * d]) {
            *o += p * m;
        }
    }
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
fn sign0(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `Σ_k (a_k − ā)²` on raw signed areas, px⁴.
pub fn loss_area(grid: &DeformedGrid) -> f64 {
    area_variance(&grid.signed_areas())
}

pub fn area_variance(areas: &[f64]) -> f64 {
    let mean = areas.iter().sum::<f64>() / areas.len() as f64;
    areas.iter().map(|a| (a - mean) * (a - mean)).sum()
}

/// [`loss_area`] on areas divided by the mean cell area `width·height/K`,
/// which makes its weight independent of resolution.
pub fn loss_area_normalized(grid: &DeformedGrid) -> f64 {
    let scale = grid.mean_cell_area();
    loss_area(grid) / (scale * scale)
}

/// `Σ_i ‖Δ_i − mean_{j∈N(i)} Δ_j‖²` over vertex offsets.
pub fn loss_laplacian(grid: &DeformedGrid) -> f64 {
    laplacian_residuals(grid).iter().map(|e| e.norm_sq()).sum()
}

fn laplacian_residuals(grid: &DeformedGrid) -> Vec<Point> {
    let t = grid.topology();
    (0..grid.vertex_count())
        .map(|i| {
            let nbrs = t.neighbors(i);
            let mut mean = Point::ZERO;
            for &j in nbrs {
                mean += grid.offset(j);
            }
            grid.offset(i) - mean * (1.0 / nbrs.len() as f64)
        })
        .collect()
}

/// Loss values only (no gradient).
pub fn evaluate(grid: &DeformedGrid, features: &FeatureMap, weights: &LossWeights) -> Result<LossValues> {
    weights.validate()?;
    assignment::check_features(grid, features)?;
    let assign = assignment::soft_assign(grid, weights.delta, weights.window)?;
    let stats = cell_stats(&assign, features)?;
    Ok(values_with_means(grid, features, weights, &assign, &stats.soft_mean))
}

/// Loss values with the cell means held at `means` (`K × d`) instead of being
/// recomputed from the current assignment. This is the function whose
/// derivative the stop-grad gradient is.
pub fn evaluate_with_means(
    grid: &DeformedGrid,
    features: &FeatureMap,
    weights: &LossWeights,
    means: &[f64],
) -> Result<LossValues> {
    weights.validate()?;
    assignment::check_features(grid, features)?;
    if means.len() != grid.cell_count() * features.channels() {
        return Err(crate::error::dims_mismatch(grid.cell_count() * features.channels(), means.len()));
    }
    let assign = assignment::soft_assign(grid, weights.delta, weights.window)?;
    Ok(values_with_means(grid, features, weights, &assign, means))
}

fn values_with_means(
    grid: &DeformedGrid,
    features: &FeatureMap,
    weights: &LossWeights,
    assign: &AssignmentField,
    means: &[f64],
) -> LossValues {
    LossValues::combine(
        variance_with_means(features, assign, means),
        reconstruction_with_means(features, assign, means),
        loss_area_normalized(grid),
        loss_laplacian(grid),
        weights,
    )
}

/// Soft cell means of the current grid, `K × d` (what stop-grad mode freezes).
pub fn soft_means(grid: &DeformedGrid, features: &FeatureMap, weights: &LossWeights) -> Result<Vec<f64>> {
    let assign = assignment::soft_assign(grid, weights.delta, weights.window)?;
    Ok(cell_stats(&assign, features)?.soft_mean)
}

/// Unweighted gradients of the four loss terms, one entry per vertex, with
/// frozen (border) components zeroed.
#[derive(Clone, Debug, PartialEq)]
pub struct TermGradients {
    pub values: LossValues,
    pub var: Vec<Point>,
    pub recons: Vec<Point>,
    pub area: Vec<Point>,
    pub lap: Vec<Point>,
}

impl TermGradients {
    /// `∇L_total` for the weights the terms were computed with.
    pub fn total(&self, weights: &LossWeights) -> Vec<Point> {
        (0..self.var.len())
            .map(|v| {
                self.var[v]
                    + self.recons[v] * weights.lambda_recons
                    + self.area[v] * weights.lambda_area
                    + self.lap[v] * weights.lambda_lap
            })
            .collect()
    }
}

/// All losses, the weighted total and its analytic gradient.
pub fn total_energy(grid: &DeformedGrid, features: &FeatureMap, weights: &LossWeights) -> Result<EnergyReport> {
    let terms = term_gradients(grid, features, weights)?;
    let v = terms.values;
    Ok(EnergyReport {
        l_var: v.l_var,
        l_recons: v.l_recons,
        l_area: v.l_area,
        l_lap: v.l_lap,
        l_total: v.l_total,
        grad: terms.total(weights),
    })
}

/// Loss values and the gradient of each term separately. `weights` supplies
/// δ, the mean mode and the weights of the reported total.
pub fn term_gradients(grid: &DeformedGrid, features: &FeatureMap, weights: &LossWeights) -> Result<TermGradients> {
    weights.validate()?;
    assignment::check_features(grid, features)?;
    let assignment::AssignmentWithGrad { field: assign, grads: entry_grads } =
        assignment::assign(grid, weights.delta, weights.window, true)?;
    let stats = cell_stats(&assign, features)?;
    let d = features.channels();
    let k_count = grid.cell_count();
    let means = &stats.soft_mean;
    let soft_grad = weights.mean_mode == MeanMode::SoftGrad;

    // Forward: losses, residual signs and (soft-grad) dL_recons/dmean.
    let mut l_var = 0.0;
    let mut l_recons = 0.0;
    let mut signs = vec![0.0; assign.pixel_count() * d];
    let mut dmean = vec![0.0; k_count * d];
    let mut recon = vec![0.0; d];
    for i in 0..assign.pixel_count() {
        let f = features.pixel(i);
        let (cells, probs) = assign.row(i);
        for (&k, &p) in cells.iter().zip(probs) {
            l_var += p * sq_dist(f, &means[k * d..(k + 1) * d]);
        }
        reconstruct(&assign, means, d, i, &mut recon);
        let s = &mut signs[i * d..(i + 1) * d];
        for c in 0..d {
            let r = recon[c] - f[c];
            l_recons += r.abs();
            s[c] = sign0(r);
        }
        if soft_grad {
            for (&k, &p) in cells.iter().zip(probs) {
                for c in 0..d {
                    dmean[k * d + c] += s[c] * p;
                }
            }
        }
    }
    // dL/dmean_k scaled by 1/m_k, so that dL/dP_jk picks up Σ_c dmean_kc (f_jc − mean_kc).
    if soft_grad {
        for k in 0..k_count {
            let scale = if stats.empty[k] { 0.0 } else { 1.0 / stats.mass[k] };
            dmean[k * d..(k + 1) * d].iter_mut().for_each(|v| *v *= scale);
        }
    }

    // Backward through the softmax into SignDis and the vertices. The
    // variance term needs no mean correction: its derivative through the
    // soft means vanishes.
    let mut g_var = vec![Point::ZERO; grid.vertex_count()];
    let mut g_rec = vec![Point::ZERO; grid.vertex_count()];
    let cells_of = grid.topology().cells();
    let mut row_var: Vec<f64> = Vec::new();
    let mut row_rec: Vec<f64> = Vec::new();
    let mut entry = 0;
    for i in 0..assign.pixel_count() {
        let f = features.pixel(i);
        let s = &signs[i * d..(i + 1) * d];
        let (cells, probs) = assign.row(i);
        row_var.clear();
        row_rec.clear();
        for &k in cells {
            let mean = &means[k * d..(k + 1) * d];
            let mut gr: f64 = s.iter().zip(mean).map(|(a, b)| a * b).sum();
            if soft_grad {
                let dm = &dmean[k * d..(k + 1) * d];
                gr += (0..d).map(|c| dm[c] * (f[c] - mean[c])).sum::<f64>();
            }
            row_var.push(sq_dist(f, mean));
            row_rec.push(gr);
        }
        let bar_var: f64 = row_var.iter().zip(probs).map(|(g, p)| g * p).sum();
        let bar_rec: f64 = row_rec.iter().zip(probs).map(|(g, p)| g * p).sum();
        for (j, (&k, &p)) in cells.iter().zip(probs).enumerate() {
            let dvar = p * (row_var[j] - bar_var) / weights.delta;
            let drec = p * (row_rec[j] - bar_rec) / weights.delta;
            let e = &entry_grads[entry + j];
            debug_assert_eq!(e.cell, k);
            for (slot, &v) in cells_of[k].iter().enumerate() {
                g_var[v] += e.ds[slot] * dvar;
                g_rec[v] += e.ds[slot] * drec;
            }
        }
        entry += cells.len();
    }

    // Area balancing on normalized areas.
    let mut g_area = vec![Point::ZERO; grid.vertex_count()];
    let areas = grid.signed_areas();
    let mean_area = areas.iter().sum::<f64>() / areas.len() as f64;
    let scale = grid.mean_cell_area();
    let l_area = area_variance(&areas) / (scale * scale);
    for (k, &a) in areas.iter().enumerate() {
        let coef = 2.0 * (a - mean_area) / (scale * scale);
        let [ia, ib, ic] = cells_of[k];
        let [pa, pb, pc] = grid.cell_points(k);
        let u = pb - pa;
        let w = pc - pa;
        let db = Point::new(0.5 * w.y, -0.5 * w.x);
        let dc = Point::new(-0.5 * u.y, 0.5 * u.x);
        g_area[ib] += db * coef;
        g_area[ic] += dc * coef;
        g_area[ia] -= (db + dc) * coef;
    }

    // Laplacian.
    let residuals = laplacian_residuals(grid);
    let l_lap: f64 = residuals.iter().map(|e| e.norm_sq()).sum();
    let t = grid.topology();
    let mut g_lap: Vec<Point> = (0..grid.vertex_count())
        .map(|m| {
            let mut acc = residuals[m] * 2.0;
            for &i in t.neighbors(m) {
                acc -= residuals[i] * (2.0 / t.neighbors(i).len() as f64);
            }
            acc
        })
        .collect();

    for grad in [&mut g_var, &mut g_rec, &mut g_area, &mut g_lap] {
        for (v, g) in grad.iter_mut().enumerate() {
            let pin = t.pinned(v);
            if pin.x {
                g.x = 0.0;
            }
            if pin.y {
                g.y = 0.0;
            }
        }
    }

    Ok(TermGradients {
        values: LossValues::combine(l_var, l_recons, l_area, l_lap, weights),
        var: g_var,
        recons: g_rec,
        area: g_area,
        lap: g_lap,
    })
}
