//! Image difficulty from accumulated region-score energy.
//!
//! Sorting a class's region scores in descending order and prefix-summing
//! them (normalized by the total) gives a monotone energy curve. Images
//! whose curve reaches a given energy level with few regions are easy to
//! localize; the mEAS score averages that efficiency over eleven energy
//! levels, so 1.0 means all mass on a single region and 1/N means mass
//! spread uniformly over N regions.

use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum DifficultyError {
    #[error("no evidence for class: score row is empty or all zero")]
    NoEvidence,
    #[error("score row contains a negative or non-finite value: {0}")]
    InvalidScore(f64),
    #[error("class {0} absent from every report")]
    ClassAbsent(usize),
}

/// Descending-sorted region scores and their normalized prefix sums.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyCurve {
    sorted_scores: Vec<f64>,
    accumulated: Vec<f64>,
}

impl EnergyCurve {
    pub fn sorted_scores(&self) -> &[f64] {
        &self.sorted_scores
    }

    /// Monotone non-decreasing, ending at 1.
    pub fn accumulated(&self) -> &[f64] {
        &self.accumulated
    }

    pub fn region_count(&self) -> usize {
        self.accumulated.len()
    }
}

/// Sort a score row descending (ties keep original region order), prefix-sum
/// and normalize by the total. Errors if nothing is strictly positive.
pub fn accumulate(scores_row: &[f64]) -> Result<EnergyCurve, DifficultyError> {
    for &v in scores_row {
        if !v.is_finite() || v < 0.0 {
            return Err(DifficultyError::InvalidScore(v));
        }
    }
    let total: f64 = scores_row.iter().sum();
    if total <= 0.0 {
        return Err(DifficultyError::NoEvidence);
    }
    let mut sorted_scores = scores_row.to_vec();
    // Stable sort: equal scores stay in ascending region-index order.
    sorted_scores.sort_by(|a, b| b.partial_cmp(a).expect("scores are finite"));

    let mut accumulated = Vec::with_capacity(sorted_scores.len());
    let mut prefix = 0.0;
    for &s in &sorted_scores {
        prefix += s;
        accumulated.push(prefix / total);
    }
    Ok(EnergyCurve { sorted_scores, accumulated })
}

/// Energy accumulated score at level `t`: the curve value at the first index
/// reaching `t`, divided by that (1-based) index. High values mean few
/// regions carry the energy.
pub fn eas(curve: &EnergyCurve, t: f64) -> f64 {
    let j = first_index_reaching(curve, t);
    curve.accumulated[j - 1] / j as f64
}

/// Smallest 1-based index j with accumulated[j] >= t. Always defined for
/// t <= 1 because the curve ends at 1; t = 0 yields 1.
pub fn first_index_reaching(curve: &EnergyCurve, t: f64) -> usize {
    for (i, &x) in curve.accumulated.iter().enumerate() {
        if x >= t {
            return i + 1;
        }
    }
    curve.accumulated.len()
}

/// The eleven energy levels {0, 0.1, ..., 1.0} of the mean score.
pub const ENERGY_LEVEL_COUNT: usize = 11;

/// Mean EAS over the eleven equally spaced energy levels.
pub fn meas(curve: &EnergyCurve) -> f64 {
    let mut sum = 0.0;
    for tenths in 0..ENERGY_LEVEL_COUNT {
        sum += eas(curve, tenths as f64 / 10.0);
    }
    sum / ENERGY_LEVEL_COUNT as f64
}

/// Per-image difficulty: mEAS for each present class.
#[derive(Debug, Clone, PartialEq)]
pub struct DifficultyReport {
    pub image_id: String,
    /// (class_index, mEAS) for classes labeled present, ascending class order.
    pub per_class: Vec<(usize, f64)>,
}

impl DifficultyReport {
    /// Whole-image difficulty score: mean mEAS over the present classes.
    /// Higher means easier to localize.
    pub fn overall(&self) -> f64 {
        if self.per_class.is_empty() {
            return 0.0;
        }
        self.per_class.iter().map(|(_, m)| m).sum::<f64>() / self.per_class.len() as f64
    }

    pub fn class_meas(&self, class_index: usize) -> Option<f64> {
        self.per_class.iter().find(|(c, _)| *c == class_index).map(|(_, m)| *m)
    }
}

/// Build the difficulty report of one image from its score matrix: one mEAS
/// per positive class. Classes whose score row carries no evidence are
/// returned as failures instead of aborting the image.
pub fn difficulty_report(
    rec: &crate::model::ImageRecord,
    scores: &crate::model::ScoreMatrix,
) -> (DifficultyReport, Vec<(usize, DifficultyError)>) {
    let mut per_class = Vec::new();
    let mut failures = Vec::new();
    for class_index in rec.positive_classes() {
        if class_index >= scores.class_count() {
            failures.push((class_index, DifficultyError::NoEvidence));
            continue;
        }
        match accumulate(scores.row(class_index)) {
            Ok(curve) => per_class.push((class_index, meas(&curve))),
            Err(e) => failures.push((class_index, e)),
        }
    }
    (DifficultyReport { image_id: rec.image_id.clone(), per_class }, failures)
}

/// Average mEAS over the images that contain `class_index`.
pub fn class_mean_meas(
    reports: &[DifficultyReport],
    class_index: usize,
) -> Result<f64, DifficultyError> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for report in reports {
        if let Some(m) = report.class_meas(class_index) {
            sum += m;
            count += 1;
        }
    }
    if count == 0 {
        return Err(DifficultyError::ClassAbsent(class_index));
    }
    Ok(sum / count as f64)
}
