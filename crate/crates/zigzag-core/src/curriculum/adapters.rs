//! Reference detector adapters.
//!
//! [`SyntheticAdapter`] is a per-class logistic scorer over pooled
//! appearance-grid features plus box geometry, trained by weighted gradient
//! steps. It runs in milliseconds per fold yet reacts to feature masking
//! (masks zero the grid cells it pools from) and to label noise, which is
//! what the curriculum experiments need.
//!
//! [`FileBackedAdapter`] replays externally produced score dumps, one dump
//! per training iteration, so real CNN outputs can drive the loop.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::curriculum::{AdapterError, DetectorAdapter, TrainExample, TrainStats};
use crate::masking::{apply_masks, FeatureGrid, MaskPlan};
use crate::model::{BBox, ImageRecord, ProposalRole, ScoreKind, ScoreMatrix};
use crate::scoring::LOG_EPSILON;

/// Feature layout of the synthetic scorer: bias, pooled signal mean,
/// context-ring mean (paint just outside the box), relative box size,
/// center offset.
pub const FEATURE_COUNT: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticAdapterConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// L2 penalty on the non-bias weights, applied per step.
    pub weight_decay: f64,
}

impl Default for SyntheticAdapterConfig {
    fn default() -> Self {
        Self { learning_rate: 2.0, epochs: 250, weight_decay: 1e-3 }
    }
}

/// Logistic per-class scorer over hand-crafted box features pooled from a
/// per-image appearance grid (one channel per class).
pub struct SyntheticAdapter {
    grids: Arc<BTreeMap<String, FeatureGrid>>,
    class_count: usize,
    weights: Vec<f64>, // class-major, FEATURE_COUNT per class
    cfg: SyntheticAdapterConfig,
}

impl SyntheticAdapter {
    pub fn new(
        grids: Arc<BTreeMap<String, FeatureGrid>>,
        class_count: usize,
        cfg: SyntheticAdapterConfig,
    ) -> Self {
        Self { grids, class_count, weights: alloc::vec![0.0; class_count * FEATURE_COUNT], cfg }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn grid_for(&self, rec: &ImageRecord) -> Result<&FeatureGrid, AdapterError> {
        let grid = self
            .grids
            .get(&rec.image_id)
            .ok_or_else(|| AdapterError::UnknownImage(rec.image_id.clone()))?;
        if grid.channels != self.class_count {
            return Err(AdapterError::Other(alloc::format!(
                "grid for {} has {} channels, expected {}",
                rec.image_id,
                grid.channels,
                self.class_count
            )));
        }
        Ok(grid)
    }

    fn score_value(&self, features: &[f64; FEATURE_COUNT], class_index: usize) -> f64 {
        let w = &self.weights[class_index * FEATURE_COUNT..(class_index + 1) * FEATURE_COUNT];
        let z: f64 = w.iter().zip(features).map(|(w, f)| w * f).sum();
        sigmoid(z)
    }
}

fn sigmoid(z: f64) -> f64 {
    let z = z.clamp(-30.0, 30.0);
    1.0 / (1.0 + libm::exp(-z))
}

/// Pooled and geometric features of one proposal for one class.
pub fn box_features(
    rec: &ImageRecord,
    grid: &FeatureGrid,
    proposal: &BBox,
    class_index: usize,
) -> [f64; FEATURE_COUNT] {
    let (x0, y0, x1, y1) = overlap_rect(proposal, grid);
    let stride = grid.stride as f64;
    // Overlap-weighted pooling, so a tight box reads almost exactly the
    // paint inside it.
    let mut sum = 0.0;
    let mut weight = 0.0;
    for y in y0..=y1 {
        for x in x0..=x1 {
            let cell_x0 = x as f64 * stride;
            let cell_y0 = y as f64 * stride;
            let ow = (proposal.x_max.min(cell_x0 + stride) - proposal.x_min.max(cell_x0)).max(0.0);
            let oh = (proposal.y_max.min(cell_y0 + stride) - proposal.y_min.max(cell_y0)).max(0.0);
            let overlap = ow * oh;
            sum += grid.get(class_index, x, y) * overlap;
            weight += overlap;
        }
    }
    let mean = if weight > 0.0 { sum / weight } else { 0.0 };

    // Context ring: the one-cell border around the box. A tight box on an
    // object has an empty ring; a box inside an object sits in painted
    // context.
    let rx0 = x0.saturating_sub(1);
    let ry0 = y0.saturating_sub(1);
    let rx1 = (x1 + 1).min(grid.width - 1);
    let ry1 = (y1 + 1).min(grid.height - 1);
    let mut ring_sum = 0.0;
    let mut ring_cells = 0usize;
    for y in ry0..=ry1 {
        for x in rx0..=rx1 {
            if x >= x0 && x <= x1 && y >= y0 && y <= y1 {
                continue;
            }
            ring_sum += grid.get(class_index, x, y);
            ring_cells += 1;
        }
    }
    let ring = if ring_cells == 0 { 0.0 } else { ring_sum / ring_cells as f64 };

    let image_area = (rec.width * rec.height).max(1.0);
    let size = libm::sqrt(proposal.area().max(0.0) / image_area);
    let (cx, cy) = proposal.center();
    let (ix, iy) = (rec.width / 2.0, rec.height / 2.0);
    let half_diag = libm::sqrt(ix * ix + iy * iy).max(1.0);
    let center_offset =
        libm::sqrt((cx - ix) * (cx - ix) + (cy - iy) * (cy - iy)) / half_diag;
    [1.0, mean, ring, size, center_offset]
}

// Inclusive 0-based rectangle of cells the box geometrically overlaps.
fn overlap_rect(proposal: &BBox, grid: &FeatureGrid) -> (usize, usize, usize, usize) {
    let stride = grid.stride as f64;
    let x0 = (libm::floor(proposal.x_min / stride).max(0.0) as usize).min(grid.width - 1);
    let y0 = (libm::floor(proposal.y_min / stride).max(0.0) as usize).min(grid.height - 1);
    let x1 = ((libm::ceil(proposal.x_max / stride) - 1.0).max(0.0) as usize)
        .clamp(x0, grid.width - 1);
    let y1 = ((libm::ceil(proposal.y_max / stride) - 1.0).max(0.0) as usize)
        .clamp(y0, grid.height - 1);
    (x0, y0, x1, y1)
}

impl DetectorAdapter for SyntheticAdapter {
    fn kind(&self) -> &'static str {
        "synthetic"
    }

    fn score(&self, rec: &ImageRecord, masks: &[MaskPlan]) -> Result<ScoreMatrix, AdapterError> {
        let grid = self.grid_for(rec)?;
        let grid = if masks.is_empty() { grid.clone() } else { apply_masks(grid, masks) };
        let regions = rec.proposals.len();
        let mut values = Vec::with_capacity(self.class_count * regions);
        for class_index in 0..self.class_count {
            for proposal in &rec.proposals {
                let f = box_features(rec, &grid, proposal, class_index);
                values.push(self.score_value(&f, class_index));
            }
        }
        ScoreMatrix::new(ScoreKind::Detection, self.class_count, regions, values)
            .map_err(|e| AdapterError::Other(e.to_string()))
    }

    fn train(&mut self, examples: &[TrainExample<'_>]) -> Result<TrainStats, AdapterError> {
        // Precompute features once: masks are fixed for the phase, so the
        // masked grid does not change between epochs.
        let mut dataset: Vec<(usize, [f64; FEATURE_COUNT], bool, f64)> = Vec::new();
        for example in examples {
            let grid = self.grid_for(example.record)?;
            let grid = if example.masks.is_empty() {
                grid.clone()
            } else {
                apply_masks(grid, &example.masks)
            };
            for sample in &example.samples {
                let f = box_features(example.record, &grid, &sample.proposal, sample.class_index);
                let positive = sample.role == ProposalRole::Positive;
                dataset.push((sample.class_index, f, positive, sample.weight));
            }
        }
        if dataset.is_empty() {
            return Ok(TrainStats { loss: 0.0, sample_count: 0 });
        }

        let lr = self.cfg.learning_rate;
        let mut class_counts = alloc::vec![0usize; self.class_count];
        for &(class_index, ..) in &dataset {
            class_counts[class_index] += 1;
        }
        // Full-batch gradient descent; per-class normalization keeps the
        // step size independent of how many samples a class collected.
        let mut loss = 0.0;
        let mut grad = alloc::vec![0.0; self.class_count * FEATURE_COUNT];
        for _ in 0..self.cfg.epochs {
            loss = 0.0;
            grad.iter_mut().for_each(|g| *g = 0.0);
            for &(class_index, features, positive, weight) in &dataset {
                let p = self.score_value(&features, class_index);
                let (dz, term) = if positive {
                    (-weight * (1.0 - p), -weight * libm::log(p.max(LOG_EPSILON)))
                } else {
                    (p, -libm::log((1.0 - p).max(LOG_EPSILON)))
                };
                loss += term;
                let g = &mut grad[class_index * FEATURE_COUNT..(class_index + 1) * FEATURE_COUNT];
                for (gi, fi) in g.iter_mut().zip(&features) {
                    *gi += dz * fi;
                }
            }
            for (class_index, &count) in class_counts.iter().enumerate() {
                if count == 0 {
                    continue;
                }
                let n = count as f64;
                let base = class_index * FEATURE_COUNT;
                for f in 0..FEATURE_COUNT {
                    let decay = if f == 0 { 0.0 } else { self.cfg.weight_decay };
                    let w = &mut self.weights[base + f];
                    *w -= lr * (grad[base + f] / n + decay * *w);
                }
            }
        }
        Ok(TrainStats { loss: loss / dataset.len() as f64, sample_count: dataset.len() })
    }
}

/// Replays one pre-computed score matrix set per iteration. `train` only
/// reports the loss of the provided samples under the replayed scores; the
/// dump itself is the trained state.
pub struct FileBackedAdapter {
    iterations: Arc<Vec<BTreeMap<String, ScoreMatrix>>>,
    /// Which dump this snapshot serves (clamped to the last one).
    iteration: usize,
}

impl FileBackedAdapter {
    pub fn for_iteration(
        iterations: Arc<Vec<BTreeMap<String, ScoreMatrix>>>,
        iteration: usize,
    ) -> Result<Self, AdapterError> {
        if iterations.is_empty() {
            return Err(AdapterError::Other("no score dumps provided".to_string()));
        }
        let iteration = iteration.min(iterations.len() - 1);
        Ok(Self { iterations, iteration })
    }

    fn current(&self) -> &BTreeMap<String, ScoreMatrix> {
        &self.iterations[self.iteration]
    }
}

impl DetectorAdapter for FileBackedAdapter {
    fn kind(&self) -> &'static str {
        "file"
    }

    fn score(&self, rec: &ImageRecord, _masks: &[MaskPlan]) -> Result<ScoreMatrix, AdapterError> {
        self.current()
            .get(&rec.image_id)
            .cloned()
            .ok_or_else(|| AdapterError::UnknownImage(rec.image_id.clone()))
    }

    fn train(&mut self, examples: &[TrainExample<'_>]) -> Result<TrainStats, AdapterError> {
        let mut loss = 0.0;
        let mut count = 0usize;
        for example in examples {
            let Some(scores) = self.current().get(&example.record.image_id) else {
                continue;
            };
            for sample in &example.samples {
                if sample.proposal_index >= scores.region_count()
                    || sample.class_index >= scores.class_count()
                {
                    continue;
                }
                let s = scores.get(sample.class_index, sample.proposal_index).clamp(0.0, 1.0);
                loss += match sample.role {
                    ProposalRole::Positive => crate::curriculum::weighted_loss(sample.weight, s),
                    _ => -libm::log((1.0 - s).max(LOG_EPSILON)),
                };
                count += 1;
            }
        }
        let loss = if count == 0 { 0.0 } else { loss / count as f64 };
        Ok(TrainStats { loss, sample_count: count })
    }
}
