//! Shared domain types: boxes, image records, score matrices, and the
//! IoU-based proposal labeling rule.
//!
//! Coordinates are continuous, origin at the top-left of the image, with
//! closed boxes and `area = (x_max - x_min) * (y_max - y_min)`. No legacy
//! "+1" pixel convention anywhere; evaluation applies the same convention
//! to ground truth.

use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ModelError {
    #[error("invalid box: ({x_min}, {y_min}, {x_max}, {y_max})")]
    InvalidBox { x_min: f64, y_min: f64, x_max: f64, y_max: f64 },
    #[error("proposal {index} of image {image_id} lies outside the {width}x{height} image")]
    ProposalOutOfBounds { image_id: String, index: usize, width: f64, height: f64 },
    #[error("label vector entries must be +1 or -1, got {value} at class {class_index}")]
    InvalidLabel { class_index: usize, value: i8 },
    #[error("score matrix expects {expected} values for {classes}x{regions}, got {actual}")]
    ShapeMismatch { classes: usize, regions: usize, expected: usize, actual: usize },
    #[error("score matrix contains a non-finite value at class {class_index}, region {region_index}")]
    NonFiniteScore { class_index: usize, region_index: usize },
    #[error("{kind:?} score matrix requires values in {range}, got {value} at class {class_index}, region {region_index}")]
    ScoreOutOfRange {
        kind: ScoreKind,
        range: &'static str,
        value: f64,
        class_index: usize,
        region_index: usize,
    },
    #[error("mined instance confidence {0} outside [0, 1]")]
    InvalidConfidence(f64),
    #[error("mined instance for image {expected} applied to image {actual}")]
    ImageMismatch { expected: String, actual: String },
}

/// Axis-aligned box in image coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, ModelError> {
        let b = Self { x_min, y_min, x_max, y_max };
        if !(x_min.is_finite() && y_min.is_finite() && x_max.is_finite() && y_max.is_finite())
            || x_min > x_max
            || y_min > y_max
        {
            return Err(ModelError::InvalidBox { x_min, y_min, x_max, y_max });
        }
        Ok(b)
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0)
    }

    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        self.x_min <= x && x <= self.x_max && self.y_min <= y && y <= self.y_max
    }

    /// Intersection area with `other` (0 when disjoint).
    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = self.x_max.min(other.x_max) - self.x_min.max(other.x_min);
        let h = self.y_max.min(other.y_max) - self.y_min.max(other.y_min);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }
}

/// Intersection over union of two boxes.
///
/// Zero-area boxes have IoU 0 against everything, including an identical
/// zero-area box: the union is empty so there is no meaningful overlap ratio.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// One training or evaluation image: geometry and image-level labels only,
/// never pixel data.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub image_id: String,
    pub width: f64,
    pub height: f64,
    /// The region set R; order is significant (score matrices index into it).
    pub proposals: Vec<BBox>,
    /// One entry per class, +1 present / -1 absent.
    pub labels: Vec<i8>,
}

impl ImageRecord {
    pub fn new(
        image_id: String,
        width: f64,
        height: f64,
        proposals: Vec<BBox>,
        labels: Vec<i8>,
    ) -> Result<Self, ModelError> {
        for (index, p) in proposals.iter().enumerate() {
            if p.x_min < 0.0 || p.y_min < 0.0 || p.x_max > width || p.y_max > height {
                return Err(ModelError::ProposalOutOfBounds { image_id, index, width, height });
            }
        }
        for (class_index, &value) in labels.iter().enumerate() {
            if value != 1 && value != -1 {
                return Err(ModelError::InvalidLabel { class_index, value });
            }
        }
        Ok(Self { image_id, width, height, proposals, labels })
    }

    pub fn class_count(&self) -> usize {
        self.labels.len()
    }

    /// Indices of classes marked present.
    pub fn positive_classes(&self) -> impl Iterator<Item = usize> + '_ {
        self.labels.iter().enumerate().filter(|(_, &y)| y == 1).map(|(c, _)| c)
    }
}

/// What a score matrix holds, which fixes its validation rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreKind {
    /// Classification-stream outputs before normalization (any finite reals).
    RawClsStream,
    /// Detection-stream outputs before normalization (any finite reals).
    RawDetStream,
    /// Two-stream product scores: non-negative, per-class region factors and
    /// per-region class factors each sum to one before multiplication.
    Normalized,
    /// Per-region detection confidences from a trained model, each in [0, 1].
    Detection,
}

/// Dense C x |R| score matrix, row-major by class.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    classes: usize,
    regions: usize,
    kind: ScoreKind,
    values: Vec<f64>,
}

impl ScoreMatrix {
    pub fn new(
        kind: ScoreKind,
        classes: usize,
        regions: usize,
        values: Vec<f64>,
    ) -> Result<Self, ModelError> {
        let expected = classes * regions;
        if values.len() != expected {
            return Err(ModelError::ShapeMismatch { classes, regions, expected, actual: values.len() });
        }
        for (i, &v) in values.iter().enumerate() {
            let (class_index, region_index) = (i / regions.max(1), i % regions.max(1));
            if !v.is_finite() {
                return Err(ModelError::NonFiniteScore { class_index, region_index });
            }
            match kind {
                ScoreKind::Normalized if v < 0.0 => {
                    return Err(ModelError::ScoreOutOfRange {
                        kind,
                        range: "[0, inf)",
                        value: v,
                        class_index,
                        region_index,
                    });
                }
                ScoreKind::Detection if !(0.0..=1.0).contains(&v) => {
                    return Err(ModelError::ScoreOutOfRange {
                        kind,
                        range: "[0, 1]",
                        value: v,
                        class_index,
                        region_index,
                    });
                }
                _ => {}
            }
        }
        Ok(Self { classes, regions, kind, values })
    }

    pub fn kind(&self) -> ScoreKind {
        self.kind
    }

    pub fn class_count(&self) -> usize {
        self.classes
    }

    pub fn region_count(&self) -> usize {
        self.regions
    }

    pub fn get(&self, class_index: usize, region_index: usize) -> f64 {
        self.values[class_index * self.regions + region_index]
    }

    pub fn row(&self, class_index: usize) -> &[f64] {
        &self.values[class_index * self.regions..(class_index + 1) * self.regions]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Role a proposal plays once instances have been mined for its image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProposalRole {
    Positive,
    HardNegative,
    Ignored,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProposalLabel {
    pub proposal_index: usize,
    pub role: ProposalRole,
    /// Class of the max-IoU mined instance; meaningless for `Ignored`.
    pub class_index: usize,
    /// Confidence of that instance, used as the positive-sample weight.
    pub instance_confidence: f64,
    /// The max IoU itself, kept for diagnostics.
    pub max_iou: f64,
}

/// A mined (or relocalized) object instance.
#[derive(Debug, Clone, PartialEq)]
pub struct MinedInstance {
    pub image_id: String,
    pub class_index: usize,
    pub bbox: BBox,
    /// Detection confidence in [0, 1]; weights the relocalization loss.
    pub confidence: f64,
}

impl MinedInstance {
    pub fn new(
        image_id: String,
        class_index: usize,
        bbox: BBox,
        confidence: f64,
    ) -> Result<Self, ModelError> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(ModelError::InvalidConfidence(confidence));
        }
        Ok(Self { image_id, class_index, bbox, confidence })
    }
}

pub const POSITIVE_IOU_THRESHOLD: f64 = 0.5;
pub const HARD_NEGATIVE_IOU_THRESHOLD: f64 = 0.1;

/// Assign every proposal a role from its max IoU against the mined instances:
/// `>= 0.5` positive, `[0.1, 0.5)` hard negative, below that ignored.
/// An empty instance list leaves every proposal ignored.
pub fn label_proposals(
    rec: &ImageRecord,
    mined: &[MinedInstance],
) -> Result<Vec<ProposalLabel>, ModelError> {
    for m in mined {
        if m.image_id != rec.image_id {
            return Err(ModelError::ImageMismatch {
                expected: rec.image_id.clone(),
                actual: m.image_id.clone(),
            });
        }
    }
    let labels = rec
        .proposals
        .iter()
        .enumerate()
        .map(|(proposal_index, p)| {
            let mut max_iou = 0.0;
            let mut class_index = 0;
            let mut instance_confidence = 0.0;
            for m in mined {
                let v = iou(p, &m.bbox);
                if v > max_iou {
                    max_iou = v;
                    class_index = m.class_index;
                    instance_confidence = m.confidence;
                }
            }
            let role = if max_iou >= POSITIVE_IOU_THRESHOLD {
                ProposalRole::Positive
            } else if max_iou >= HARD_NEGATIVE_IOU_THRESHOLD {
                ProposalRole::HardNegative
            } else {
                ProposalRole::Ignored
            };
            ProposalLabel { proposal_index, role, class_index, instance_confidence, max_iou }
        })
        .collect();
    Ok(labels)
}
