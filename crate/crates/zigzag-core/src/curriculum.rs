//! Easy-to-difficult training loop with relocalization and masking.
//!
//! Images are split into K folds by descending difficulty score (easiest
//! first). Each iteration trains a fresh detector on every fold seen so far,
//! then relocalizes instances one fold ahead, so the next iteration starts
//! from model-refined boxes instead of the initial heat-map seeds. Feature
//! masking is applied to each mined object during training; positive samples
//! carry the previous model's confidence as their loss weight.

pub mod adapters;

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use thiserror::Error;

use crate::difficulty::DifficultyReport;
use crate::eval::{corloc, EvalError, GroundTruth};
use crate::masking::{plan_mask, MaskError, MaskPlan};
use crate::model::{
    label_proposals, BBox, ImageRecord, MinedInstance, ModelError, ProposalRole, ScoreMatrix,
};
use crate::rng::SplitMix64;
use crate::scoring::LOG_EPSILON;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum AdapterError {
    #[error("image {0} unknown to the adapter")]
    UnknownImage(String),
    #[error("adapter scores must lie in [0, 1], got {0}")]
    ScoreOutOfRange(f64),
    #[error("{0}")]
    Other(String),
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum CurriculumError {
    #[error("fold count {fold_count} invalid for {images} images")]
    InvalidFoldCount { fold_count: usize, images: usize },
    #[error("masking ratio {0} outside [0, 1)")]
    InvalidMaskRatio(f64),
    #[error("image {0} has no difficulty report")]
    MissingReport(String),
    #[error("difficulty report references unknown image {0}")]
    UnknownReportImage(String),
    #[error("training diverged at fold {fold}: loss {loss}")]
    TrainingDiverged { fold: usize, loss: f64 },
    #[error("ensemble requires at least one snapshot")]
    EmptyEnsemble,
    #[error("snapshot score shapes differ: {0}x{1} vs {2}x{3}")]
    EnsembleShapeMismatch(usize, usize, usize, usize),
    #[error(transparent)]
    Adapter(#[from] AdapterError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// One labeled, weighted training sample.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedSample {
    pub proposal_index: usize,
    pub proposal: BBox,
    pub class_index: usize,
    pub role: ProposalRole,
    /// Mined-instance confidence for positives, fixed 1 for hard negatives.
    pub weight: f64,
}

/// Everything an adapter needs to learn from one image.
#[derive(Debug, Clone)]
pub struct TrainExample<'a> {
    pub record: &'a ImageRecord,
    pub samples: Vec<WeightedSample>,
    pub masks: Vec<MaskPlan>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainStats {
    pub loss: f64,
    pub sample_count: usize,
}

/// A trainable, per-region scorer. Scoring must be deterministic given the
/// adapter state and inputs; `train` is the only mutation.
pub trait DetectorAdapter {
    /// Short identifier for run manifests.
    fn kind(&self) -> &'static str;

    /// Per-class, per-region detection scores in [0, 1], computed after
    /// applying the given feature masks.
    fn score(&self, rec: &ImageRecord, masks: &[MaskPlan]) -> Result<ScoreMatrix, AdapterError>;

    /// One training phase over the given examples; returns the final loss.
    fn train(&mut self, examples: &[TrainExample<'_>]) -> Result<TrainStats, AdapterError>;
}

/// Relocalization loss for one instance: the previous model's confidence
/// times the negative log of the current model's score, clamped away from
/// zero so the result stays finite.
pub fn weighted_loss(confidence: f64, new_score: f64) -> f64 {
    let s = new_score.clamp(LOG_EPSILON, 1.0);
    -confidence * libm::log(s)
}

/// Fold assignments plus the evolving mined-instance table and run logs.
#[derive(Debug, Clone, PartialEq)]
pub struct CurriculumState {
    /// Image ids, easiest fold first; folds are disjoint and cover the set.
    pub folds: Vec<Vec<String>>,
    /// 1-based fold index of the last completed iteration (0 = none).
    pub completed_iterations: usize,
    /// Current instance per image, keyed by image id.
    pub mined: BTreeMap<String, Vec<MinedInstance>>,
    pub logs: Vec<IterationLog>,
}

impl CurriculumState {
    pub fn fold_count(&self) -> usize {
        self.folds.len()
    }

    /// All ids in folds `0..upto` (exclusive), in fold order.
    pub fn ids_through(&self, upto: usize) -> Vec<String> {
        self.folds[..upto.min(self.folds.len())].iter().flatten().cloned().collect()
    }
}

/// Per-iteration log entry; everything needed to audit one train/relocalize
/// phase.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationLog {
    /// 1-based fold index k.
    pub fold: usize,
    pub trained_images: usize,
    pub train_samples: usize,
    pub train_loss: f64,
    /// Every mask applied during this phase, for audit and replay.
    pub mask_plans: Vec<MaskPlan>,
    pub relocalized_images: usize,
    /// Snapshot of the instance table after this phase's relocalization.
    pub instances: Vec<MinedInstance>,
    /// Images whose relocalization failed, with the reason.
    pub skipped: Vec<(String, String)>,
    /// CorLoc of the current instances within each fold (needs ground truth).
    pub corloc_per_fold: Vec<f64>,
    pub mean_corloc: Option<f64>,
}

/// Sort images easiest-first (higher mEAS first, ids break ties) and split
/// into `fold_count` nearly equal folds, earlier folds taking the extra.
pub fn partition_folds(
    reports: &[DifficultyReport],
    fold_count: usize,
) -> Result<CurriculumState, CurriculumError> {
    if fold_count == 0 || fold_count > reports.len() {
        return Err(CurriculumError::InvalidFoldCount { fold_count, images: reports.len() });
    }
    let mut order: Vec<(&str, f64)> =
        reports.iter().map(|r| (r.image_id.as_str(), r.overall())).collect();
    order.sort_by(|a, b| {
        b.1.partial_cmp(&a.1).expect("difficulty scores are finite").then_with(|| a.0.cmp(b.0))
    });

    let base = order.len() / fold_count;
    let extra = order.len() % fold_count;
    let mut folds = Vec::with_capacity(fold_count);
    let mut cursor = 0;
    for fold_index in 0..fold_count {
        let size = base + usize::from(fold_index < extra);
        let fold = order[cursor..cursor + size].iter().map(|(id, _)| id.to_string()).collect();
        folds.push(fold);
        cursor += size;
    }
    Ok(CurriculumState {
        folds,
        completed_iterations: 0,
        mined: BTreeMap::new(),
        logs: Vec::new(),
    })
}

/// Pick, for every positive class of the image, the proposal the adapter
/// scores highest (earlier proposal wins ties). The score becomes the
/// instance confidence.
pub fn relocalize(
    adapter: &dyn DetectorAdapter,
    rec: &ImageRecord,
) -> Result<Vec<MinedInstance>, AdapterError> {
    if rec.proposals.is_empty() {
        return Ok(Vec::new());
    }
    let scores = adapter.score(rec, &[])?;
    let mut instances = Vec::new();
    for class_index in rec.positive_classes() {
        let row = scores.row(class_index);
        let mut best = 0usize;
        for (i, &v) in row.iter().enumerate() {
            if !(0.0..=1.0).contains(&v) {
                return Err(AdapterError::ScoreOutOfRange(v));
            }
            if v > row[best] {
                best = i;
            }
        }
        let instance = MinedInstance::new(
            rec.image_id.clone(),
            class_index,
            rec.proposals[best],
            row[best].clamp(0.0, 1.0),
        )
        .map_err(|e| AdapterError::Other(e.to_string()))?;
        instances.push(instance);
    }
    Ok(instances)
}

/// Elementwise mean of the snapshots' score matrices for one image.
pub fn ensemble_scores(
    snapshots: &[&dyn DetectorAdapter],
    rec: &ImageRecord,
) -> Result<ScoreMatrix, CurriculumError> {
    let mut iter = snapshots.iter();
    let first = iter.next().ok_or(CurriculumError::EmptyEnsemble)?;
    let base = first.score(rec, &[])?;
    let (classes, regions) = (base.class_count(), base.region_count());
    let mut sums: Vec<f64> = base.values().to_vec();
    for snapshot in iter {
        let next = snapshot.score(rec, &[])?;
        if next.class_count() != classes || next.region_count() != regions {
            return Err(CurriculumError::EnsembleShapeMismatch(
                classes,
                regions,
                next.class_count(),
                next.region_count(),
            ));
        }
        for (s, v) in sums.iter_mut().zip(next.values()) {
            *s += v;
        }
    }
    let n = snapshots.len() as f64;
    for s in &mut sums {
        *s /= n;
    }
    Ok(ScoreMatrix::new(base.kind(), classes, regions, sums)?)
}

/// Configuration of one full run.
#[derive(Debug, Clone, PartialEq)]
pub struct ZigzagConfig {
    /// Number of folds K.
    pub fold_count: usize,
    /// Masking ratio tau in [0, 1).
    pub mask_ratio: f64,
    pub seed: u64,
    /// Feature stride for mask projection.
    pub stride: u32,
}

/// Final state plus the K model snapshots, whose mean output is the test
/// scorer.
pub struct ZigzagRun {
    pub state: CurriculumState,
    pub snapshots: Vec<Box<dyn DetectorAdapter>>,
}

impl ZigzagRun {
    pub fn snapshot_refs(&self) -> Vec<&dyn DetectorAdapter> {
        self.snapshots.iter().map(AsRef::as_ref).collect()
    }
}

/// Run the full loop: for k = 1..K, train a fresh adapter on the mined
/// instances of folds 1..k (with masking and weighted samples), then
/// relocalize folds 1..k+1 (clamped to K) with it. Relocalization overwrites
/// the mined instances for every visited image; failed images keep their
/// previous boxes and are logged.
pub fn run_zigzag(
    records: &[ImageRecord],
    reports: &[DifficultyReport],
    initial_mined: &BTreeMap<String, Vec<MinedInstance>>,
    ground_truth: Option<&[GroundTruth]>,
    adapter_factory: &mut dyn FnMut(usize) -> Box<dyn DetectorAdapter>,
    cfg: &ZigzagConfig,
) -> Result<ZigzagRun, CurriculumError> {
    if !(0.0..1.0).contains(&cfg.mask_ratio) {
        return Err(CurriculumError::InvalidMaskRatio(cfg.mask_ratio));
    }
    let by_id: BTreeMap<&str, &ImageRecord> =
        records.iter().map(|r| (r.image_id.as_str(), r)).collect();
    for report in reports {
        if !by_id.contains_key(report.image_id.as_str()) {
            return Err(CurriculumError::UnknownReportImage(report.image_id.clone()));
        }
    }
    for record in records {
        if !reports.iter().any(|r| r.image_id == record.image_id) {
            return Err(CurriculumError::MissingReport(record.image_id.clone()));
        }
    }

    let mut state = partition_folds(reports, cfg.fold_count)?;
    state.mined = initial_mined.clone();
    let mut rng = SplitMix64::new(cfg.seed);
    let mut snapshots: Vec<Box<dyn DetectorAdapter>> = Vec::with_capacity(cfg.fold_count);
    let fold_count = cfg.fold_count;

    for k in 1..=fold_count {
        let train_ids = state.ids_through(k);
        if train_ids.is_empty() {
            continue; // guarded by partitioning, kept as a defensive skip
        }

        // Assemble training examples for every image with instances.
        let mut examples = Vec::new();
        let mut all_plans: Vec<MaskPlan> = Vec::new();
        let mut sample_total = 0usize;
        for id in &train_ids {
            let rec = by_id[id.as_str()];
            let Some(instances) = state.mined.get(id) else { continue };
            if instances.is_empty() {
                continue;
            }
            let labels = label_proposals(rec, instances)?;
            let samples: Vec<WeightedSample> = labels
                .iter()
                .filter(|l| l.role != ProposalRole::Ignored)
                .map(|l| WeightedSample {
                    proposal_index: l.proposal_index,
                    proposal: rec.proposals[l.proposal_index],
                    class_index: l.class_index,
                    role: l.role,
                    weight: match l.role {
                        ProposalRole::Positive => l.instance_confidence,
                        _ => 1.0,
                    },
                })
                .collect();
            if samples.is_empty() {
                continue;
            }
            let mut masks = Vec::new();
            if cfg.mask_ratio > 0.0 {
                for instance in instances {
                    // Degenerate boxes cannot host a mask; skip them.
                    if instance.bbox.area() <= 0.0 {
                        continue;
                    }
                    masks.push(plan_mask(
                        id,
                        instance.class_index,
                        &instance.bbox,
                        cfg.mask_ratio,
                        cfg.stride,
                        &mut rng,
                    )?);
                }
            }
            all_plans.extend(masks.iter().cloned());
            sample_total += samples.len();
            examples.push(TrainExample { record: rec, samples, masks });
        }

        let mut adapter = adapter_factory(k);
        let stats = adapter.train(&examples)?;
        if !stats.loss.is_finite() {
            return Err(CurriculumError::TrainingDiverged { fold: k, loss: stats.loss });
        }

        // Relocalize one fold ahead, clamped to the full set.
        let reloc_ids = state.ids_through((k + 1).min(fold_count));
        let mut relocalized = 0usize;
        let mut skipped = Vec::new();
        for id in &reloc_ids {
            let rec = by_id[id.as_str()];
            match relocalize(adapter.as_ref(), rec) {
                Ok(instances) if !instances.is_empty() => {
                    state.mined.insert(id.clone(), instances);
                    relocalized += 1;
                }
                Ok(_) => {} // nothing to relocalize, keep previous boxes
                Err(e) => skipped.push((id.clone(), e.to_string())),
            }
        }

        let (corloc_per_fold, mean_corloc) = match ground_truth {
            Some(gts) => fold_corloc(&state, gts)?,
            None => (Vec::new(), None),
        };

        state.logs.push(IterationLog {
            fold: k,
            trained_images: examples.len(),
            train_samples: sample_total,
            train_loss: stats.loss,
            mask_plans: all_plans,
            relocalized_images: relocalized,
            instances: state.mined.values().flatten().cloned().collect(),
            skipped,
            corloc_per_fold,
            mean_corloc,
        });
        state.completed_iterations = k;
        snapshots.push(adapter);
    }

    Ok(ZigzagRun { state, snapshots })
}

/// Mean CorLoc of the current instances inside each fold, plus the overall
/// mean across all images.
pub fn fold_corloc(
    state: &CurriculumState,
    gts: &[GroundTruth],
) -> Result<(Vec<f64>, Option<f64>), EvalError> {
    let by_id: BTreeMap<&str, &GroundTruth> =
        gts.iter().map(|g| (g.image_id.as_str(), g)).collect();
    let mut per_fold = Vec::with_capacity(state.folds.len());
    let mut all_preds = Vec::new();
    let mut all_gts = Vec::new();
    for fold in &state.folds {
        let mut preds = Vec::new();
        let mut fold_gts = Vec::new();
        for id in fold {
            if let Some(instances) = state.mined.get(id) {
                preds.extend(instances.iter().cloned());
            }
            if let Some(gt) = by_id.get(id.as_str()) {
                fold_gts.push((*gt).clone());
            }
        }
        all_preds.extend(preds.iter().cloned());
        all_gts.extend(fold_gts.iter().cloned());
        per_fold.push(corloc(&preds, &fold_gts)?.mean);
    }
    let overall = corloc(&all_preds, &all_gts)?.mean;
    Ok((per_fold, Some(overall)))
}
