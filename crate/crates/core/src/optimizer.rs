//! Per-image gradient descent on vertex offsets with a hard no-flip guard.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::energy::{total_energy, LossValues, LossWeights};
use crate::error::{dims_mismatch, Error, Result};
use crate::features::FeatureMap;
use crate::grid::{DeformedGrid, Point};

/// Smallest signed cell area (px²) any exposed grid may have.
pub const AREA_FLOOR: f64 = 1e-3;

/// Maximum number of step halvings before a step is skipped.
pub const MAX_HALVINGS: usize = 10;

/// What to do with a tentative step that pushes a cell to or below the floor.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlipGuard {
    /// Halve the step (up to [`MAX_HALVINGS`] times), then skip it.
    #[default]
    Backtrack,
    /// Skip the step outright.
    Reject,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub iterations: usize,
    /// Largest per-coordinate move of the first step, px. `None` means a
    /// tenth of the grid pitch.
    pub step_size: Option<f64>,
    pub step_decay: f64,
    /// Offset bound as a fraction of the grid pitch.
    pub max_offset: f64,
    pub flip_guard: FlipGuard,
    pub seed: u64,
    /// Random initial offsets as a fraction of the pitch (0 = start uniform).
    pub init_jitter: f64,
    pub area_floor: f64,
    pub weights: LossWeights,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            iterations: 500,
            step_size: None,
            step_decay: 0.997,
            max_offset: 0.45,
            flip_guard: FlipGuard::Backtrack,
            seed: 0,
            init_jitter: 0.0,
            area_floor: AREA_FLOOR,
            weights: LossWeights::default(),
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_offset > 0.0 && self.max_offset < 0.5) {
            return Err(Error::InvalidArgument(format!("max_offset must lie in (0, 0.5), got {}", self.max_offset)));
        }
        if let Some(s) = self.step_size {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::InvalidArgument(format!("step_size must be positive, got {s}")));
            }
        }
        if !(self.step_decay > 0.0 && self.step_decay <= 1.0) {
            return Err(Error::InvalidArgument(format!("step_decay must lie in (0, 1], got {}", self.step_decay)));
        }
        if !(0.0..self.max_offset).contains(&self.init_jitter) {
            return Err(Error::InvalidArgument(format!(
                "init_jitter must lie in [0, max_offset), got {}",
                self.init_jitter
            )));
        }
        if !(self.area_floor > 0.0 && self.area_floor.is_finite()) {
            return Err(Error::InvalidArgument(format!("area_floor must be positive, got {}", self.area_floor)));
        }
        self.weights.validate()
    }

    /// Step size in pixels for `grid`.
    pub fn step_px(&self, grid: &DeformedGrid) -> f64 {
        self.step_size.unwrap_or(0.1 * grid.pitch())
    }
}

/// One line of the optimization log. Entry 0 describes the initial grid;
/// entry `t` the grid after step `t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    #[serde(flatten)]
    pub values: LossValues,
    /// Largest vertex move of this step, px (0 for skipped steps).
    pub max_displacement: f64,
    pub min_area: f64,
    /// Step length actually taken after halvings, px.
    pub step: f64,
    pub accepted: bool,
}

impl TraceEntry {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("trace entry serializes")
    }
}

#[derive(Clone, Debug)]
pub struct OptimizationTrace {
    pub entries: Vec<TraceEntry>,
    pub grid: DeformedGrid,
}

impl OptimizationTrace {
    pub fn initial(&self) -> &TraceEntry {
        &self.entries[0]
    }

    pub fn last(&self) -> &TraceEntry {
        self.entries.last().expect("trace has an initial entry")
    }

    /// The log as JSON lines.
    pub fn to_json_lines(&self) -> String {
        self.entries.iter().map(|e| e.to_json() + "\n").collect()
    }
}

fn min_area(grid: &DeformedGrid) -> f64 {
    grid.signed_areas().into_iter().fold(f64::INFINITY, f64::min)
}

/// Clamp `offsets` to the constraints of `grid` (border pins, image bounds,
/// `max_offset·pitch`) and apply them to its base lattice.
pub fn apply_external_offsets(grid: &DeformedGrid, offsets: &[Point], max_offset: f64) -> Result<DeformedGrid> {
    if offsets.len() != grid.vertex_count() {
        return Err(dims_mismatch(format!("{} offsets", grid.vertex_count()), offsets.len()));
    }
    if !(max_offset > 0.0 && max_offset < 0.5) {
        return Err(Error::InvalidArgument(format!("max_offset must lie in (0, 0.5), got {max_offset}")));
    }
    if offsets.iter().any(|o| !o.is_finite()) {
        return Err(Error::InvalidArgument("offsets must be finite".into()));
    }
    let bound = max_offset * grid.pitch();
    let clamped = offsets.iter().enumerate().map(|(v, &o)| grid.constrain_offset(v, o, bound)).collect();
    let out = grid.with_offsets(clamped)?;
    let flipped = out.cells_at_or_below(AREA_FLOOR);
    if flipped.is_empty() {
        Ok(out)
    } else {
        Err(Error::FlippedCells { cells: flipped })
    }
}

fn initial_grid(grid: &DeformedGrid, config: &OptimizerConfig) -> DeformedGrid {
    if config.init_jitter == 0.0 {
        return grid.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let bound = config.max_offset * grid.pitch();
    let mut amount = config.init_jitter * grid.pitch();
    let noise: Vec<Point> =
        (0..grid.vertex_count()).map(|_| Point::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
    // Shrink the perturbation until no cell drops to the floor.
    for _ in 0..=MAX_HALVINGS {
        let offsets: Vec<Point> = (0..grid.vertex_count())
            .map(|v| grid.constrain_offset(v, grid.offset(v) + noise[v] * amount, bound))
            .collect();
        if let Ok(g) = grid.with_offsets(offsets) {
            if min_area(&g) > config.area_floor {
                return g;
            }
        }
        amount *= 0.5;
    }
    grid.clone()
}

/// Minimize the weighted energy over vertex offsets.
pub fn deform(grid: &DeformedGrid, features: &FeatureMap, config: &OptimizerConfig) -> Result<OptimizationTrace> {
    deform_observed(grid, features, config, |_, _| {})
}

/// [`deform`], calling `observer` with every trace entry and the grid it
/// describes (including skipped steps, whose grid is unchanged).
pub fn deform_observed(
    grid: &DeformedGrid,
    features: &FeatureMap,
    config: &OptimizerConfig,
    mut observer: impl FnMut(&TraceEntry, &DeformedGrid),
) -> Result<OptimizationTrace> {
    config.validate()?;
    features.check_extent(grid.width(), grid.height())?;
    let low = grid.cells_at_or_below(config.area_floor);
    if !low.is_empty() {
        return Err(Error::InvalidGrid { cells: low });
    }
    let weights = &config.weights;
    let bound = config.max_offset * grid.pitch();
    let mut current = initial_grid(grid, config);
    let mut report = total_energy(&current, features, weights)?;
    let first = TraceEntry {
        iteration: 0,
        values: report.values(),
        max_displacement: 0.0,
        min_area: min_area(&current),
        step: 0.0,
        accepted: true,
    };
    observer(&first, &current);
    let mut entries = vec![first];
    let mut base_step = config.step_px(grid);
    // Trial steps start at no more than twice the last accepted one, so rough
    // landscapes do not re-run the same halvings every iteration.
    let mut last_accepted = f64::INFINITY;

    for iteration in 1..=config.iterations {
        if report.grad.iter().any(|g| !g.is_finite()) || !report.l_total.is_finite() {
            return Err(Error::NumericFailure { iteration: iteration - 1 });
        }
        let norm = report.grad_inf_norm();
        let mut step = (base_step * config.step_decay.powi(iteration as i32 - 1)).min(2.0 * last_accepted);
        let mut accepted = None;
        if norm > 0.0 {
            for _ in 0..=MAX_HALVINGS {
                let offsets: Vec<Point> = (0..current.vertex_count())
                    .map(|v| current.constrain_offset(v, current.offset(v) - report.grad[v] * (step / norm), bound))
                    .collect();
                let candidate = current.with_offsets(offsets)?;
                if !candidate.cells_at_or_below(config.area_floor).is_empty() {
                    if config.flip_guard == FlipGuard::Reject {
                        break;
                    }
                    step *= 0.5;
                    continue;
                }
                // Most trial steps are accepted, so evaluate them with the
                // gradient pass and keep the report.
                let trial = total_energy(&candidate, features, weights)?;
                if trial.l_total.is_finite() && trial.l_total <= report.l_total + 1e-9 * report.l_total.abs() {
                    accepted = Some((candidate, trial));
                    break;
                }
                step *= 0.5;
            }
        }
        let entry = match accepted {
            Some((next, next_report)) => {
                let moved = current
                    .positions()
                    .iter()
                    .zip(next.positions())
                    .map(|(a, b)| (*b - *a).norm())
                    .fold(0.0, f64::max);
                current = next;
                report = next_report;
                last_accepted = step;
                TraceEntry {
                    iteration,
                    values: report.values(),
                    max_displacement: moved,
                    min_area: min_area(&current),
                    step,
                    accepted: true,
                }
            }
            None => {
                // No admissible step at this scale: continue from half of it.
                if norm > 0.0 {
                    base_step *= 0.5;
                    last_accepted = f64::INFINITY;
                }
                TraceEntry {
                    iteration,
                    values: report.values(),
                    max_displacement: 0.0,
                    min_area: min_area(&current),
                    step: 0.0,
                    accepted: false,
                }
            }
        };
        observer(&entry, &current);
        entries.push(entry);
    }
    Ok(OptimizationTrace { entries, grid: current })
}
