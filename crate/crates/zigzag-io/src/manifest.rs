//! Dataset manifest: the single JSON file a dataset hangs off.
//!
//! The manifest fixes the class order and points at one VOC XML annotation
//! per image plus dataset-level JSONL files for proposals, initial scores,
//! and (optionally) appearance grids for the synthetic detector. Paths are
//! relative to the manifest's directory and are checked at load time.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use zigzag_core::eval::GroundTruth;
use zigzag_core::masking::FeatureGrid;
use zigzag_core::model::{BBox, ImageRecord, ScoreMatrix};

use crate::formats::{read_jsonl, GridRecord, ProposalsRecord, ScoreDumpRecord};
use crate::voc::load_annotation;
use crate::{HarnessError, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    /// Class names; index order is the class index everywhere.
    pub classes: Vec<String>,
    /// Relative path to the proposals JSONL (one record per image).
    pub proposals: PathBuf,
    /// Relative path to the initial score dump JSONL.
    pub scores: PathBuf,
    /// Relative path to the appearance-grid JSONL, when the dataset ships one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grids: Option<PathBuf>,
    pub images: Vec<ManifestImage>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestImage {
    pub id: String,
    /// Relative path to the VOC XML annotation.
    pub annotation: PathBuf,
    pub split: String,
}

/// A fully loaded dataset.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub root: PathBuf,
    pub records: Vec<ImageRecord>,
    pub ground_truth: Vec<GroundTruth>,
    /// Initial (mining-stage) scores per image.
    pub scores: BTreeMap<String, ScoreMatrix>,
    pub grids: Option<BTreeMap<String, FeatureGrid>>,
}

impl Dataset {
    pub fn class_count(&self) -> usize {
        self.manifest.classes.len()
    }

    pub fn record(&self, image_id: &str) -> Option<&ImageRecord> {
        self.records.iter().find(|r| r.image_id == image_id)
    }
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let manifest: DatasetManifest = crate::formats::read_json(path)?;
    if manifest.classes.is_empty() {
        return Err(HarnessError::invalid(path, "class list is empty"));
    }
    Ok(manifest)
}

/// Load manifest, annotations, proposals, scores, and grids, validating that
/// every referenced path resolves and every score matrix matches its image's
/// proposal count.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let manifest = load_manifest(manifest_path)?;
    let root = manifest_path.parent().unwrap_or(Path::new(".")).to_path_buf();

    let mut proposals: BTreeMap<String, Vec<BBox>> = BTreeMap::new();
    let proposals_path = root.join(&manifest.proposals);
    read_jsonl::<ProposalsRecord, _>(&proposals_path, |record, line| {
        let mut boxes = Vec::with_capacity(record.boxes.len());
        for b in &record.boxes {
            boxes.push(BBox::new(b[0], b[1], b[2], b[3]).map_err(|e| {
                HarnessError::MalformedRecord {
                    path: proposals_path.clone(),
                    line,
                    message: e.to_string(),
                }
            })?);
        }
        proposals.insert(record.image_id, boxes);
        Ok(())
    })?;

    let mut scores: BTreeMap<String, ScoreMatrix> = BTreeMap::new();
    let scores_path = root.join(&manifest.scores);
    read_jsonl::<ScoreDumpRecord, _>(&scores_path, |record, line| {
        let (id, matrix) = record.into_matrix(&scores_path, line)?;
        scores.insert(id, matrix);
        Ok(())
    })?;

    let grids = match &manifest.grids {
        Some(rel) => {
            let grids_path = root.join(rel);
            let mut grids: BTreeMap<String, FeatureGrid> = BTreeMap::new();
            read_jsonl::<GridRecord, _>(&grids_path, |record, line| {
                let (id, grid) = record.into_grid(&grids_path, line)?;
                grids.insert(id, grid);
                Ok(())
            })?;
            Some(grids)
        }
        None => None,
    };

    let mut records = Vec::with_capacity(manifest.images.len());
    let mut ground_truth = Vec::with_capacity(manifest.images.len());
    for image in &manifest.images {
        let ann_path = root.join(&image.annotation);
        let ann = load_annotation(&ann_path)?;
        let (gt, labels) = ann.to_ground_truth(&manifest.classes, &ann_path)?;
        if gt.image_id != image.id {
            return Err(HarnessError::invalid(
                &ann_path,
                format!("annotation filename {:?} does not match image id {:?}", gt.image_id, image.id),
            ));
        }
        let boxes = proposals.remove(&image.id).ok_or_else(|| {
            HarnessError::invalid(&proposals_path, format!("no proposals for image {:?}", image.id))
        })?;
        if let Some(matrix) = scores.get(&image.id) {
            if matrix.region_count() != boxes.len() {
                return Err(HarnessError::invalid(
                    &scores_path,
                    format!(
                        "score dump for {:?} has {} regions but the image has {} proposals",
                        image.id,
                        matrix.region_count(),
                        boxes.len()
                    ),
                ));
            }
        }
        let record = ImageRecord::new(image.id.clone(), ann.width, ann.height, boxes, labels)
            .map_err(|e| HarnessError::invalid(&ann_path, e))?;
        records.push(record);
        ground_truth.push(gt);
    }

    Ok(Dataset { manifest, root, records, ground_truth, scores, grids })
}
