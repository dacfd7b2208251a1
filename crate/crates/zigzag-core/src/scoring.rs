//! Two-stream score normalization and the image-level classification loss.
//!
//! A region's score is the product of a softmax over classes (from the
//! classification stream) and a softmax over regions (from the detection
//! stream). Summing the products over regions gives a per-class image
//! probability in [0, 1], which feeds a binary log loss against the
//! image-level labels.

use alloc::vec::Vec;

use thiserror::Error;

use crate::model::{ModelError, ScoreKind, ScoreMatrix};

/// Clamp applied to probabilities before taking logs.
pub const LOG_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ScoringError {
    #[error("stream kinds must be (RawClsStream, RawDetStream), got ({0:?}, {1:?})")]
    WrongStreamKinds(ScoreKind, ScoreKind),
    #[error("stream shapes differ: {0}x{1} vs {2}x{3}")]
    StreamShapeMismatch(usize, usize, usize, usize),
    #[error("expected a normalized score matrix, got {0:?}")]
    NotNormalized(ScoreKind),
    #[error("probability vector has {probs} entries but label vector has {labels}")]
    LengthMismatch { probs: usize, labels: usize },
    #[error("label entries must be +1 or -1, got {value} at class {class_index}")]
    InvalidLabel { class_index: usize, value: i8 },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Per-class image probabilities, one entry per class.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageClassProb {
    values: Vec<f64>,
}

impl ImageClassProb {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, class_index: usize) -> f64 {
        self.values[class_index]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn softmax_in_place(values: &mut [f64]) {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in values.iter_mut() {
        *v = libm::exp(*v - max);
        total += *v;
    }
    for v in values.iter_mut() {
        *v /= total;
    }
}

/// Combine the two raw streams into normalized region scores: softmax over
/// classes (within each region) times softmax over regions (within each
/// class). Both softmaxes subtract their max before exponentiating.
pub fn normalize_two_stream(
    cls_stream: &ScoreMatrix,
    det_stream: &ScoreMatrix,
) -> Result<ScoreMatrix, ScoringError> {
    if cls_stream.kind() != ScoreKind::RawClsStream || det_stream.kind() != ScoreKind::RawDetStream
    {
        return Err(ScoringError::WrongStreamKinds(cls_stream.kind(), det_stream.kind()));
    }
    let (c, r) = (cls_stream.class_count(), cls_stream.region_count());
    if det_stream.class_count() != c || det_stream.region_count() != r {
        return Err(ScoringError::StreamShapeMismatch(
            c,
            r,
            det_stream.class_count(),
            det_stream.region_count(),
        ));
    }

    // Softmax over classes, one column of the cls stream at a time.
    let mut class_factors = alloc::vec![0.0; c * r];
    let mut column = alloc::vec![0.0; c];
    for region in 0..r {
        for (class, slot) in column.iter_mut().enumerate() {
            *slot = cls_stream.get(class, region);
        }
        softmax_in_place(&mut column);
        for (class, &factor) in column.iter().enumerate() {
            class_factors[class * r + region] = factor;
        }
    }

    // Softmax over regions, one row of the det stream at a time.
    let mut values = alloc::vec![0.0; c * r];
    let mut row = alloc::vec![0.0; r];
    for class in 0..c {
        row.copy_from_slice(det_stream.row(class));
        softmax_in_place(&mut row);
        for region in 0..r {
            values[class * r + region] = class_factors[class * r + region] * row[region];
        }
    }

    Ok(ScoreMatrix::new(ScoreKind::Normalized, c, r, values)?)
}

/// Per-class image probability: the sum of the normalized region scores.
pub fn image_probability(scores: &ScoreMatrix) -> Result<ImageClassProb, ScoringError> {
    if scores.kind() != ScoreKind::Normalized {
        return Err(ScoringError::NotNormalized(scores.kind()));
    }
    let values = (0..scores.class_count())
        .map(|class| scores.row(class).iter().sum())
        .collect();
    Ok(ImageClassProb { values })
}

/// Binary log image-level loss, summed over classes: `-log(phi)` for present
/// classes, `-log(1 - phi)` for absent ones, with `phi` clamped away from
/// the endpoints so the result stays finite.
pub fn image_level_loss(probs: &ImageClassProb, labels: &[i8]) -> Result<f64, ScoringError> {
    if probs.len() != labels.len() {
        return Err(ScoringError::LengthMismatch { probs: probs.len(), labels: labels.len() });
    }
    let mut loss = 0.0;
    for (class_index, (&phi, &y)) in probs.values().iter().zip(labels).enumerate() {
        if y != 1 && y != -1 {
            return Err(ScoringError::InvalidLabel { class_index, value: y });
        }
        let phi = phi.clamp(LOG_EPSILON, 1.0 - LOG_EPSILON);
        loss -= libm::log(f64::from(y) * (phi - 0.5) + 0.5);
    }
    Ok(loss)
}
