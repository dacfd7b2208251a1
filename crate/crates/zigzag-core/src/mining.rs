//! Object instance mining from region scores.
//!
//! Instead of trusting the single top-scored proposal (which tends to lock
//! onto discriminative parts), every proposal votes its score into a pixel
//! heat map. The map is max-normalized, binarized, and the tight box around
//! the largest 8-connected foreground component becomes the mined instance.

use alloc::collections::VecDeque;
use alloc::vec::Vec;

use thiserror::Error;

use crate::model::{BBox, ImageRecord, MinedInstance, ModelError, ScoreKind, ScoreMatrix};
use crate::scoring::{image_probability, ScoringError};

/// Heat-map binarization threshold used throughout.
pub const BINARIZE_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum MiningError {
    #[error("class {0} is not labeled present in the image")]
    ClassNotPresent(usize),
    #[error("class {0} has an all-zero score row, nothing to mine")]
    NoEvidence(usize),
    #[error("grid step must be at least 1")]
    InvalidGridStep,
    #[error("score matrix is {actual} regions wide but the image has {expected} proposals")]
    RegionCountMismatch { expected: usize, actual: usize },
    #[error("binarization threshold {0} outside (0, 1)")]
    InvalidThreshold(f64),
    #[error("no foreground cells at threshold {0}")]
    EmptyForeground(f64),
    #[error("heat map has no covered cells (all proposals degenerate)")]
    EmptyHeatMap,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
}

/// Max-normalized per-pixel evidence for one class, sampled on a square grid.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatMap {
    pub class_index: usize,
    /// Cells along x.
    pub grid_width: usize,
    /// Cells along y.
    pub grid_height: usize,
    /// Pixels per cell; 1 samples every pixel.
    pub grid_step: usize,
    /// Image extent, for clipping mined boxes back to image coordinates.
    pub image_width: f64,
    pub image_height: f64,
    /// Row-major cell values in [0, 1] with max exactly 1.
    pub values: Vec<f64>,
}

impl HeatMap {
    pub fn value(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.grid_width + x]
    }
}

fn grid_cells(extent: f64, step: usize) -> usize {
    libm::ceil(extent / step as f64).max(1.0) as usize
}

/// Build the class heat map: each cell accumulates the scores of every
/// proposal containing the cell center, then the map is divided by its max.
pub fn heat_map(
    rec: &ImageRecord,
    scores: &ScoreMatrix,
    class_index: usize,
    grid_step: usize,
) -> Result<HeatMap, MiningError> {
    if grid_step == 0 {
        return Err(MiningError::InvalidGridStep);
    }
    if rec.labels.get(class_index) != Some(&1) {
        return Err(MiningError::ClassNotPresent(class_index));
    }
    if scores.region_count() != rec.proposals.len() {
        return Err(MiningError::RegionCountMismatch {
            expected: rec.proposals.len(),
            actual: scores.region_count(),
        });
    }
    let row = scores.row(class_index);
    if !row.iter().any(|&v| v > 0.0) {
        return Err(MiningError::NoEvidence(class_index));
    }

    let grid_width = grid_cells(rec.width, grid_step);
    let grid_height = grid_cells(rec.height, grid_step);
    let mut values = alloc::vec![0.0; grid_width * grid_height];
    let step = grid_step as f64;

    for (proposal, &score) in rec.proposals.iter().zip(row) {
        if score <= 0.0 {
            continue;
        }
        // Cells whose center falls inside the (closed) proposal box.
        let x_first = cell_range_start(proposal.x_min, step);
        let x_last = cell_range_end(proposal.x_max, step, grid_width);
        let y_first = cell_range_start(proposal.y_min, step);
        let y_last = cell_range_end(proposal.y_max, step, grid_height);
        for y in y_first..exclusive_end(y_last) {
            for x in x_first..exclusive_end(x_last) {
                values[y * grid_width + x] += score;
            }
        }
    }

    let max = values.iter().cloned().fold(0.0, f64::max);
    if max <= 0.0 {
        return Err(MiningError::EmptyHeatMap);
    }
    for v in &mut values {
        *v /= max;
    }
    Ok(HeatMap {
        class_index,
        grid_width,
        grid_height,
        grid_step,
        image_width: rec.width,
        image_height: rec.height,
        values,
    })
}

// First cell index whose center (i + 0.5) * step is >= coordinate.
fn cell_range_start(coord: f64, step: f64) -> usize {
    let i = libm::ceil(coord / step - 0.5);
    if i <= 0.0 {
        0
    } else {
        i as usize
    }
}

// Last cell index (inclusive) whose center is <= coordinate, clamped to the
// grid; returns None when the box ends before the first center.
fn cell_range_end(coord: f64, step: f64, cells: usize) -> Option<usize> {
    let i = libm::floor(coord / step - 0.5);
    if i < 0.0 {
        None
    } else {
        Some((i as usize).min(cells - 1))
    }
}

fn exclusive_end(last: Option<usize>) -> usize {
    match last {
        Some(v) => v + 1,
        None => 0,
    }
}

/// Binarize at `threshold`, label 8-connected components, and return the
/// tight box (in image coordinates) around the component with the most
/// cells. Equal-sized components resolve to the one whose first cell comes
/// first in row-major order.
pub fn mine_instance(hm: &HeatMap, threshold: f64) -> Result<BBox, MiningError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(MiningError::InvalidThreshold(threshold));
    }
    let (w, h) = (hm.grid_width, hm.grid_height);
    let foreground: Vec<bool> = hm.values.iter().map(|&v| v >= threshold).collect();
    if !foreground.iter().any(|&f| f) {
        return Err(MiningError::EmptyForeground(threshold));
    }

    let mut visited = alloc::vec![false; w * h];
    let mut best: Option<(usize, usize, usize, usize, usize)> = None; // (count, x0, y0, x1, y1)
    let mut queue = VecDeque::new();

    for start in 0..w * h {
        if !foreground[start] || visited[start] {
            continue;
        }
        visited[start] = true;
        queue.push_back(start);
        let (mut count, mut x0, mut y0, mut x1, mut y1) =
            (0usize, start % w, start / w, start % w, start / w);
        while let Some(idx) = queue.pop_front() {
            let (x, y) = (idx % w, idx / w);
            count += 1;
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let nidx = ny as usize * w + nx as usize;
                    if foreground[nidx] && !visited[nidx] {
                        visited[nidx] = true;
                        queue.push_back(nidx);
                    }
                }
            }
        }
        // Strictly-greater keeps the earlier component on ties: components are
        // discovered in row-major order of their first cell.
        if best.is_none_or(|(c, ..)| count > c) {
            best = Some((count, x0, y0, x1, y1));
        }
    }

    let (_, x0, y0, x1, y1) = best.expect("foreground is non-empty");
    let step = hm.grid_step as f64;
    Ok(BBox::new(
        x0 as f64 * step,
        y0 as f64 * step,
        ((x1 + 1) as f64 * step).min(hm.image_width),
        ((y1 + 1) as f64 * step).min(hm.image_height),
    )?)
}

/// Outcome of mining every positive class of one image. Failures do not
/// abort the image; callers log them and move on with the classes that
/// produced a box.
#[derive(Debug, Clone, PartialEq)]
pub struct MiningOutcome {
    pub instances: Vec<MinedInstance>,
    pub failures: Vec<(usize, MiningError)>,
}

/// Mine one instance per positive class. Confidence is the image-level
/// probability of the class, clamped to [0, 1].
pub fn mine_all(
    rec: &ImageRecord,
    scores: &ScoreMatrix,
    grid_step: usize,
) -> Result<MiningOutcome, MiningError> {
    if scores.kind() != ScoreKind::Normalized {
        return Err(MiningError::Scoring(ScoringError::NotNormalized(scores.kind())));
    }
    let probs = image_probability(scores)?;
    let mut outcome = MiningOutcome { instances: Vec::new(), failures: Vec::new() };
    for class_index in rec.positive_classes() {
        match heat_map(rec, scores, class_index, grid_step)
            .and_then(|hm| mine_instance(&hm, BINARIZE_THRESHOLD))
        {
            Ok(bbox) => {
                let confidence = probs.get(class_index).clamp(0.0, 1.0);
                outcome.instances.push(MinedInstance::new(
                    rec.image_id.clone(),
                    class_index,
                    bbox,
                    confidence,
                )?);
            }
            Err(e) => outcome.failures.push((class_index, e)),
        }
    }
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    fn record(
        width: f64,
        height: f64,
        proposals: Vec<BBox>,
        labels: Vec<i8>,
    ) -> ImageRecord {
        ImageRecord::new("img".to_string(), width, height, proposals, labels).unwrap()
    }

    fn bx(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
        BBox::new(x0, y0, x1, y1).unwrap()
    }

    fn normalized(c: usize, r: usize, values: Vec<f64>) -> ScoreMatrix {
        ScoreMatrix::new(ScoreKind::Normalized, c, r, values).unwrap()
    }

    #[test]
    fn single_proposal_heat_map() {
        let rec = record(20.0, 20.0, vec![bx(0.0, 0.0, 10.0, 10.0)], vec![1]);
        let scores = normalized(1, 1, vec![1.0]);
        let hm = heat_map(&rec, &scores, 0, 1).unwrap();
        assert_eq!(hm.grid_width, 20);
        assert_eq!(hm.grid_height, 20);
        for y in 0..20 {
            for x in 0..20 {
                let expected = if x < 10 && y < 10 { 1.0 } else { 0.0 };
                assert_eq!(hm.value(x, y), expected, "cell ({x},{y})");
            }
        }
        let mined = mine_instance(&hm, 0.5).unwrap();
        assert_eq!(mined, bx(0.0, 0.0, 10.0, 10.0));
    }

    #[test]
    fn disjoint_proposals_normalize_against_max() {
        let rec = record(
            40.0,
            20.0,
            vec![bx(0.0, 0.0, 10.0, 10.0), bx(20.0, 0.0, 30.0, 10.0)],
            vec![1],
        );
        let scores = normalized(1, 2, vec![0.9, 0.1]);
        let hm = heat_map(&rec, &scores, 0, 1).unwrap();
        assert_eq!(hm.value(5, 5), 1.0);
        assert!((hm.value(25, 5) - 0.1 / 0.9).abs() < 1e-12);
        // second blob sits below the 0.5 threshold
        let mined = mine_instance(&hm, 0.5).unwrap();
        assert_eq!(mined, bx(0.0, 0.0, 10.0, 10.0));
    }

    #[test]
    fn identical_proposals_cancel_normalization() {
        let rec = record(
            20.0,
            20.0,
            vec![bx(2.0, 2.0, 12.0, 12.0), bx(2.0, 2.0, 12.0, 12.0)],
            vec![1],
        );
        let scores = normalized(1, 2, vec![0.3, 0.3]);
        let hm = heat_map(&rec, &scores, 0, 1).unwrap();
        assert_eq!(hm.value(5, 5), 1.0);
    }

    #[test]
    fn larger_component_wins() {
        // Two separate blobs with equal value 1.0 after normalization:
        // craft via two disjoint proposals with equal scores, one 10x10 and
        // one ~5x10.
        let rec = record(
            40.0,
            20.0,
            vec![bx(0.0, 0.0, 10.0, 10.0), bx(20.0, 0.0, 25.0, 10.0)],
            vec![1],
        );
        let scores = normalized(1, 2, vec![0.4, 0.4]);
        let hm = heat_map(&rec, &scores, 0, 1).unwrap();
        let mined = mine_instance(&hm, 0.5).unwrap();
        assert_eq!(mined, bx(0.0, 0.0, 10.0, 10.0));
    }

    #[test]
    fn equal_components_tie_break_row_major() {
        let rec = record(
            40.0,
            20.0,
            vec![bx(20.0, 0.0, 30.0, 10.0), bx(0.0, 0.0, 10.0, 10.0)],
            vec![1],
        );
        let scores = normalized(1, 2, vec![0.5, 0.5]);
        let hm = heat_map(&rec, &scores, 0, 1).unwrap();
        // both components have 100 cells; the left one starts earlier
        let mined = mine_instance(&hm, 0.5).unwrap();
        assert_eq!(mined, bx(0.0, 0.0, 10.0, 10.0));
    }

    #[test]
    fn scale_invariance_of_heat_map() {
        let rec = record(
            30.0,
            30.0,
            vec![bx(0.0, 0.0, 15.0, 15.0), bx(10.0, 10.0, 28.0, 28.0)],
            vec![1],
        );
        let a = heat_map(&rec, &normalized(1, 2, vec![0.2, 0.05]), 0, 1).unwrap();
        let b = heat_map(&rec, &normalized(1, 2, vec![0.8, 0.2]), 0, 1).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn all_zero_row_errors() {
        let rec = record(20.0, 20.0, vec![bx(0.0, 0.0, 10.0, 10.0)], vec![1]);
        let scores = normalized(1, 1, vec![0.0]);
        assert_eq!(heat_map(&rec, &scores, 0, 1).unwrap_err(), MiningError::NoEvidence(0));
    }

    #[test]
    fn absent_class_errors() {
        let rec = record(20.0, 20.0, vec![bx(0.0, 0.0, 10.0, 10.0)], vec![-1]);
        let scores = normalized(1, 1, vec![1.0]);
        assert_eq!(heat_map(&rec, &scores, 0, 1).unwrap_err(), MiningError::ClassNotPresent(0));
    }

    #[test]
    fn threshold_validation() {
        let rec = record(20.0, 20.0, vec![bx(0.0, 0.0, 10.0, 10.0)], vec![1]);
        let hm = heat_map(&rec, &normalized(1, 1, vec![1.0]), 0, 1).unwrap();
        assert!(mine_instance(&hm, 0.0).is_err());
        assert!(mine_instance(&hm, 1.0).is_err());
    }

    #[test]
    fn coarse_grid_step() {
        let rec = record(20.0, 20.0, vec![bx(0.0, 0.0, 10.0, 10.0)], vec![1]);
        let hm = heat_map(&rec, &normalized(1, 1, vec![1.0]), 0, 4).unwrap();
        assert_eq!(hm.grid_width, 5);
        // centers at 2, 6, 10, 14, 18: the box [0,10] covers cells 0..2
        let mined = mine_instance(&hm, 0.5).unwrap();
        assert_eq!(mined, bx(0.0, 0.0, 12.0, 12.0));
    }

    #[test]
    fn mine_all_single_positive_class() {
        let rec = record(20.0, 20.0, vec![bx(0.0, 0.0, 10.0, 10.0)], vec![1, -1]);
        let scores = normalized(2, 1, vec![0.8, 0.0]);
        let outcome = mine_all(&rec, &scores, 1).unwrap();
        assert_eq!(outcome.instances.len(), 1);
        assert!(outcome.failures.is_empty());
        let m = &outcome.instances[0];
        assert_eq!(m.class_index, 0);
        assert_eq!(m.bbox, bx(0.0, 0.0, 10.0, 10.0));
        assert!((m.confidence - 0.8).abs() < 1e-12);
    }

    #[test]
    fn mine_all_two_disjoint_classes() {
        let rec = record(
            40.0,
            20.0,
            vec![bx(0.0, 0.0, 10.0, 10.0), bx(20.0, 0.0, 32.0, 12.0)],
            vec![1, 1],
        );
        let scores = normalized(2, 2, vec![0.9, 0.0, 0.0, 0.9]);
        let outcome = mine_all(&rec, &scores, 1).unwrap();
        assert_eq!(outcome.instances.len(), 2);
        assert_eq!(outcome.instances[0].bbox, bx(0.0, 0.0, 10.0, 10.0));
        assert_eq!(outcome.instances[1].bbox, bx(20.0, 0.0, 32.0, 12.0));
        assert_eq!(crate::model::iou(&outcome.instances[0].bbox, &outcome.instances[1].bbox), 0.0);
    }

    #[test]
    fn mine_all_records_failures() {
        let rec = record(20.0, 20.0, vec![bx(0.0, 0.0, 10.0, 10.0)], vec![1, 1]);
        let scores = normalized(2, 1, vec![0.9, 0.0]);
        let outcome = mine_all(&rec, &scores, 1).unwrap();
        assert_eq!(outcome.instances.len(), 1);
        assert_eq!(outcome.failures.len(), 1);
        assert_eq!(outcome.failures[0].0, 1);
        assert_eq!(outcome.failures[0].1, MiningError::NoEvidence(1));
    }

    #[test]
    fn mine_all_rejects_raw_matrix() {
        let rec = record(20.0, 20.0, vec![bx(0.0, 0.0, 10.0, 10.0)], vec![1]);
        let raw = ScoreMatrix::new(ScoreKind::RawClsStream, 1, 1, vec![1.0]).unwrap();
        assert!(mine_all(&rec, &raw, 1).is_err());
    }
}
