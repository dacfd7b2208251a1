//! Localization and detection metrics.
//!
//! CorLoc counts, per class, the fraction of images containing the class
//! whose single predicted box reaches IoU 0.5 with some ground-truth box.
//! Average precision follows the VOC protocol: greedy matching by
//! descending score at IoU 0.5, one match per ground truth, duplicates as
//! false positives, with both the eleven-point and exact-area summaries.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use crate::model::{iou, BBox, MinedInstance};

pub const MATCH_IOU_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum EvalError {
    #[error("image {image_id} has {count} predictions for class {class_index}, expected one")]
    DuplicatePrediction { image_id: String, class_index: usize, count: usize },
    #[error("prediction for image {image_id}, class {class_index}, but the image does not contain that class")]
    PredictionForAbsentClass { image_id: String, class_index: usize },
    #[error("no ground truth contains class {0}")]
    EmptyClass(usize),
    #[error("similarity groups overlap on class {0}")]
    OverlappingGroups(usize),
    #[error("detection score is not finite")]
    NonFiniteScore,
}

/// One annotated object.
#[derive(Debug, Clone, PartialEq)]
pub struct GtObject {
    pub class_index: usize,
    pub bbox: BBox,
    /// Difficult objects are excluded from AP matching per the VOC protocol.
    pub difficult: bool,
}

/// All annotations of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub image_id: String,
    pub objects: Vec<GtObject>,
}

/// One scored detection.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub image_id: String,
    pub class_index: usize,
    pub bbox: BBox,
    pub score: f64,
}

/// Per-class correct-localization fractions and their mean.
#[derive(Debug, Clone, PartialEq)]
pub struct CorLocReport {
    /// (class_index, fraction, image_count) for classes present in the
    /// ground truth, ascending class order.
    pub per_class: Vec<(usize, f64, usize)>,
    pub mean: f64,
}

impl CorLocReport {
    pub fn class_fraction(&self, class_index: usize) -> Option<f64> {
        self.per_class.iter().find(|(c, ..)| *c == class_index).map(|(_, f, _)| *f)
    }
}

/// CorLoc over a prediction set with at most one box per (image, class).
///
/// Every image containing a class counts in that class's denominator; a
/// missing prediction counts as a localization failure. A prediction for a
/// class the image does not contain is an error, as is more than one
/// prediction per (image, class).
pub fn corloc(predictions: &[MinedInstance], gts: &[GroundTruth]) -> Result<CorLocReport, EvalError> {
    let mut gt_index: BTreeMap<(&str, usize), Vec<&BBox>> = BTreeMap::new();
    let mut class_images: BTreeMap<usize, BTreeSet<&str>> = BTreeMap::new();
    for gt in gts {
        for obj in &gt.objects {
            gt_index.entry((gt.image_id.as_str(), obj.class_index)).or_default().push(&obj.bbox);
            class_images.entry(obj.class_index).or_default().insert(gt.image_id.as_str());
        }
    }

    let mut seen: BTreeMap<(&str, usize), usize> = BTreeMap::new();
    for p in predictions {
        *seen.entry((p.image_id.as_str(), p.class_index)).or_insert(0) += 1;
    }
    for (&(image_id, class_index), &count) in &seen {
        if count > 1 {
            return Err(EvalError::DuplicatePrediction {
                image_id: String::from(image_id),
                class_index,
                count,
            });
        }
        if !gt_index.contains_key(&(image_id, class_index)) {
            return Err(EvalError::PredictionForAbsentClass {
                image_id: String::from(image_id),
                class_index,
            });
        }
    }

    let mut correct: BTreeMap<usize, usize> = BTreeMap::new();
    for p in predictions {
        let boxes = &gt_index[&(p.image_id.as_str(), p.class_index)];
        if boxes.iter().any(|b| iou(&p.bbox, b) >= MATCH_IOU_THRESHOLD) {
            *correct.entry(p.class_index).or_insert(0) += 1;
        }
    }

    let mut per_class = Vec::new();
    let mut sum = 0.0;
    for (&class_index, images) in &class_images {
        let hits = correct.get(&class_index).copied().unwrap_or(0);
        let fraction = hits as f64 / images.len() as f64;
        per_class.push((class_index, fraction, images.len()));
        sum += fraction;
    }
    let mean = if per_class.is_empty() { 0.0 } else { sum / per_class.len() as f64 };
    Ok(CorLocReport { per_class, mean })
}

/// How the precision/recall curve is summarized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApMode {
    /// Mean of the max precision at recall {0, 0.1, ..., 1.0} (VOC 2007).
    ElevenPoint,
    /// Exact area under the monotone precision envelope (VOC 2010+).
    Area,
}

/// Outcome of greedy matching, exposed so oracles can diff it directly.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchOutcome {
    /// Per ranked detection: true positive flag (false = false positive);
    /// detections matched to difficult ground truths are absent entirely.
    pub ranked_tp: Vec<bool>,
    /// Ranked detection indices into the original detection list.
    pub ranked_indices: Vec<usize>,
    /// Number of non-difficult ground-truth objects for the class.
    pub positives: usize,
}

/// Greedy VOC matching for one class: detections by descending score (input
/// order breaks ties), each matched to the highest-IoU ground truth of its
/// image; a match below threshold or to an already-claimed ground truth is a
/// false positive, and a match to a difficult ground truth drops the
/// detection from scoring.
pub fn match_detections(
    dets: &[Detection],
    gts: &[GroundTruth],
    class_index: usize,
) -> Result<MatchOutcome, EvalError> {
    let mut gt_boxes: BTreeMap<&str, Vec<(&GtObject, bool)>> = BTreeMap::new();
    let mut positives = 0usize;
    for gt in gts {
        let entry = gt_boxes.entry(gt.image_id.as_str()).or_default();
        for obj in &gt.objects {
            if obj.class_index == class_index {
                entry.push((obj, false));
                if !obj.difficult {
                    positives += 1;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..dets.len())
        .filter(|&i| dets[i].class_index == class_index)
        .collect();
    for &i in &order {
        if !dets[i].score.is_finite() {
            return Err(EvalError::NonFiniteScore);
        }
    }
    // Stable sort keeps input order for equal scores.
    order.sort_by(|&a, &b| dets[b].score.partial_cmp(&dets[a].score).expect("finite scores"));

    let mut ranked_tp = Vec::new();
    let mut ranked_indices = Vec::new();
    for &i in &order {
        let det = &dets[i];
        let mut best_iou = 0.0;
        let mut best: Option<usize> = None;
        if let Some(candidates) = gt_boxes.get(det.image_id.as_str()) {
            for (j, (obj, _)) in candidates.iter().enumerate() {
                let v = iou(&det.bbox, &obj.bbox);
                if v > best_iou {
                    best_iou = v;
                    best = Some(j);
                }
            }
        }
        if best_iou >= MATCH_IOU_THRESHOLD {
            let j = best.expect("best index set with best_iou > 0");
            let candidates = gt_boxes.get_mut(det.image_id.as_str()).expect("image present");
            if candidates[j].0.difficult {
                continue; // neither true nor false positive
            }
            if candidates[j].1 {
                ranked_tp.push(false); // duplicate on a claimed ground truth
            } else {
                candidates[j].1 = true;
                ranked_tp.push(true);
            }
        } else {
            ranked_tp.push(false);
        }
        ranked_indices.push(i);
    }
    Ok(MatchOutcome { ranked_tp, ranked_indices, positives })
}

/// VOC average precision for one class. Empty detections with existing
/// positives give 0; a class with no positives gives 0 as well.
pub fn average_precision(
    dets: &[Detection],
    gts: &[GroundTruth],
    class_index: usize,
    mode: ApMode,
) -> Result<f64, EvalError> {
    let outcome = match_detections(dets, gts, class_index)?;
    if outcome.positives == 0 {
        return Ok(0.0);
    }
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut precision = Vec::with_capacity(outcome.ranked_tp.len());
    let mut recall = Vec::with_capacity(outcome.ranked_tp.len());
    for &is_tp in &outcome.ranked_tp {
        if is_tp {
            tp += 1;
        } else {
            fp += 1;
        }
        precision.push(tp as f64 / (tp + fp) as f64);
        recall.push(tp as f64 / outcome.positives as f64);
    }
    Ok(match mode {
        ApMode::ElevenPoint => eleven_point_ap(&precision, &recall),
        ApMode::Area => area_ap(&precision, &recall),
    })
}

fn eleven_point_ap(precision: &[f64], recall: &[f64]) -> f64 {
    let mut sum = 0.0;
    for tenths in 0..=10 {
        let level = tenths as f64 / 10.0;
        let mut best = 0.0;
        for (p, r) in precision.iter().zip(recall) {
            if *r >= level && *p > best {
                best = *p;
            }
        }
        sum += best;
    }
    sum / 11.0
}

fn area_ap(precision: &[f64], recall: &[f64]) -> f64 {
    // Monotone envelope over recall, integrated exactly.
    let n = precision.len();
    if n == 0 {
        return 0.0;
    }
    let mut envelope = precision.to_vec();
    for i in (0..n - 1).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let mut area = 0.0;
    let mut prev_recall = 0.0;
    for i in 0..n {
        area += (recall[i] - prev_recall) * envelope[i];
        prev_recall = recall[i];
    }
    area
}

/// Detection error categories in the usual diagnosis breakdown.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ErrorCategory {
    /// IoU >= 0.5 with a same-class ground truth.
    Correct,
    /// IoU in [0.1, 0.5) with a same-class ground truth.
    Localization,
    /// IoU >= 0.1 with a ground truth of another class in the same group.
    SimilarClass,
    /// IoU >= 0.1 with a ground truth of any other class.
    OtherClass,
    /// No meaningful overlap with anything annotated.
    Background,
}

pub const ERROR_CATEGORY_IOU: f64 = 0.1;

/// Counts per category, in enum order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ErrorHistogram {
    pub correct: usize,
    pub localization: usize,
    pub similar: usize,
    pub other: usize,
    pub background: usize,
}

impl ErrorHistogram {
    pub fn total(&self) -> usize {
        self.correct + self.localization + self.similar + self.other + self.background
    }
}

/// Categorize each detection against the ground truth. `similarity_groups`
/// must not list any class twice; classes not listed form singleton groups.
pub fn categorize_errors(
    dets: &[Detection],
    gts: &[GroundTruth],
    similarity_groups: &[Vec<usize>],
) -> Result<ErrorHistogram, EvalError> {
    let mut group_of: BTreeMap<usize, usize> = BTreeMap::new();
    for (g, members) in similarity_groups.iter().enumerate() {
        for &class_index in members {
            if group_of.insert(class_index, g).is_some() {
                return Err(EvalError::OverlappingGroups(class_index));
            }
        }
    }

    let mut by_image: BTreeMap<&str, &GroundTruth> = BTreeMap::new();
    for gt in gts {
        by_image.insert(gt.image_id.as_str(), gt);
    }

    let mut hist = ErrorHistogram::default();
    for det in dets {
        let mut same_class_iou: f64 = 0.0;
        let mut similar_iou: f64 = 0.0;
        let mut other_iou: f64 = 0.0;
        if let Some(gt) = by_image.get(det.image_id.as_str()) {
            for obj in &gt.objects {
                let v = iou(&det.bbox, &obj.bbox);
                if obj.class_index == det.class_index {
                    same_class_iou = same_class_iou.max(v);
                } else {
                    let same_group = match (group_of.get(&det.class_index), group_of.get(&obj.class_index)) {
                        (Some(a), Some(b)) => a == b,
                        _ => false,
                    };
                    if same_group {
                        similar_iou = similar_iou.max(v);
                    } else {
                        other_iou = other_iou.max(v);
                    }
                }
            }
        }
        if same_class_iou >= MATCH_IOU_THRESHOLD {
            hist.correct += 1;
        } else if same_class_iou >= ERROR_CATEGORY_IOU {
            hist.localization += 1;
        } else if similar_iou >= ERROR_CATEGORY_IOU {
            hist.similar += 1;
        } else if other_iou >= ERROR_CATEGORY_IOU {
            hist.other += 1;
        } else {
            hist.background += 1;
        }
    }
    Ok(hist)
}
