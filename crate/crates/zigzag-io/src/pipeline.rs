//! Orchestration that composes the core stages over on-disk datasets, plus
//! deterministic writers for every run artifact.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use zigzag_core::curriculum::adapters::{
    FileBackedAdapter, SyntheticAdapter, SyntheticAdapterConfig,
};
use zigzag_core::curriculum::{ensemble_scores, run_zigzag, DetectorAdapter, ZigzagConfig, ZigzagRun};
use zigzag_core::difficulty::{difficulty_report, DifficultyReport};
use zigzag_core::eval::{average_precision, corloc, ApMode, Detection};
use zigzag_core::mining::mine_all;
use zigzag_core::model::{MinedInstance, ScoreMatrix};

use crate::formats::{
    round_sig, write_json_pretty, write_jsonl, DifficultyRecord, ClassMeas, FoldFile, GridRecord,
    InstanceRecord, MaskPlanRecord, ProposalsRecord, ScoreDumpRecord,
};
use crate::manifest::{Dataset, DatasetManifest, ManifestImage};
use crate::synth::{generate_benchmark, BenchmarkSpec, FEATURE_STRIDE};
use crate::voc::{save_annotation, VocAnnotation, VocObject};
use crate::{HarnessError, Result};

/// Heat maps are sampled at full pixel resolution unless a command says
/// otherwise.
pub const DEFAULT_GRID_STEP: usize = 1;

// ---------------------------------------------------------------------------
// Dataset materialization (synth)
// ---------------------------------------------------------------------------

/// Generate the benchmark and write it as a loadable dataset: manifest,
/// VOC XML annotations, proposals/scores/grids JSONL, and the generator spec.
pub fn write_benchmark_dataset(out_dir: &Path, spec: &BenchmarkSpec) -> Result<PathBuf> {
    let scenes = generate_benchmark(spec)?;
    let ann_dir = out_dir.join("annotations");
    std::fs::create_dir_all(&ann_dir).map_err(|source| HarnessError::Write {
        path: ann_dir.clone(),
        source,
    })?;

    let classes: Vec<String> = (0..spec.class_count).map(|c| format!("class_{c}")).collect();
    let mut images = Vec::new();
    let mut proposals = Vec::new();
    let mut scores = Vec::new();
    let mut grids = Vec::new();
    for (image_id, scene) in &scenes {
        let ann_rel = PathBuf::from("annotations").join(format!("{image_id}.xml"));
        let annotation = VocAnnotation {
            filename: image_id.clone(),
            width: scene.record.width,
            height: scene.record.height,
            objects: scene
                .ground_truth
                .objects
                .iter()
                .map(|o| VocObject {
                    name: classes[o.class_index].clone(),
                    difficult: o.difficult,
                    x_min: o.bbox.x_min,
                    y_min: o.bbox.y_min,
                    x_max: o.bbox.x_max,
                    y_max: o.bbox.y_max,
                })
                .collect(),
        };
        save_annotation(&out_dir.join(&ann_rel), &annotation)?;
        images.push(ManifestImage { id: image_id.clone(), annotation: ann_rel, split: "trainval".into() });
        proposals.push(ProposalsRecord {
            image_id: image_id.clone(),
            boxes: scene
                .record
                .proposals
                .iter()
                .map(|b| [b.x_min, b.y_min, b.x_max, b.y_max])
                .collect(),
        });
        scores.push(ScoreDumpRecord::from_matrix(image_id, &scene.scores));
        grids.push(GridRecord::from_grid(image_id, &scene.grid));
    }

    write_jsonl(&out_dir.join("proposals.jsonl"), &proposals)?;
    write_jsonl(&out_dir.join("scores.jsonl"), &scores)?;
    write_jsonl(&out_dir.join("grids.jsonl"), &grids)?;
    write_json_pretty(&out_dir.join("benchmark_spec.json"), spec)?;

    let manifest = DatasetManifest {
        name: format!("synthetic-{}", spec.scene_count),
        classes,
        proposals: "proposals.jsonl".into(),
        scores: "scores.jsonl".into(),
        grids: Some("grids.jsonl".into()),
        images,
    };
    let manifest_path = out_dir.join("manifest.json");
    write_json_pretty(&manifest_path, &manifest)?;
    Ok(manifest_path)
}

// ---------------------------------------------------------------------------
// Difficulty and mining stages
// ---------------------------------------------------------------------------

pub struct DifficultyStage {
    pub reports: Vec<DifficultyReport>,
    pub failures: Vec<(String, usize, String)>,
}

/// Per-image difficulty reports from the dataset's initial scores.
pub fn compute_difficulty(dataset: &Dataset) -> Result<DifficultyStage> {
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for record in &dataset.records {
        let Some(scores) = dataset.scores.get(&record.image_id) else {
            return Err(HarnessError::Runtime(format!(
                "no score dump for image {:?}",
                record.image_id
            )));
        };
        let (report, class_failures) = difficulty_report(record, scores);
        for (class_index, e) in class_failures {
            failures.push((record.image_id.clone(), class_index, e.to_string()));
        }
        reports.push(report);
    }
    Ok(DifficultyStage { reports, failures })
}

pub fn difficulty_records(stage: &DifficultyStage) -> Vec<DifficultyRecord> {
    stage
        .reports
        .iter()
        .map(|r| DifficultyRecord {
            image_id: r.image_id.clone(),
            per_class: r
                .per_class
                .iter()
                .map(|&(class, meas)| ClassMeas { class, meas: round_sig(meas) })
                .collect(),
            overall: round_sig(r.overall()),
        })
        .collect()
}

pub struct MiningStage {
    pub instances: BTreeMap<String, Vec<MinedInstance>>,
    pub failures: Vec<(String, usize, String)>,
}

/// Heat-map mining over every image's initial scores.
pub fn compute_initial_mining(dataset: &Dataset, grid_step: usize) -> Result<MiningStage> {
    let mut instances = BTreeMap::new();
    let mut failures = Vec::new();
    for record in &dataset.records {
        let Some(scores) = dataset.scores.get(&record.image_id) else {
            return Err(HarnessError::Runtime(format!(
                "no score dump for image {:?}",
                record.image_id
            )));
        };
        let outcome = mine_all(record, scores, grid_step)
            .map_err(|e| HarnessError::Runtime(format!("{}: {e}", record.image_id)))?;
        for (class_index, e) in &outcome.failures {
            failures.push((record.image_id.clone(), *class_index, e.to_string()));
        }
        if !outcome.instances.is_empty() {
            instances.insert(record.image_id.clone(), outcome.instances);
        }
    }
    Ok(MiningStage { instances, failures })
}

pub fn instance_records(instances: &BTreeMap<String, Vec<MinedInstance>>) -> Vec<InstanceRecord> {
    instances
        .values()
        .flat_map(|list| list.iter().map(InstanceRecord::from_instance))
        .collect()
}

// ---------------------------------------------------------------------------
// Full zigzag run
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdapterKind {
    Synthetic,
    File,
}

impl std::str::FromStr for AdapterKind {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "synthetic" => Ok(AdapterKind::Synthetic),
            "file" => Ok(AdapterKind::File),
            other => Err(HarnessError::InvalidArgument(format!(
                "unknown adapter {other:?}, expected synthetic or file"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub fold_count: usize,
    pub mask_ratio: f64,
    pub seed: u64,
    pub adapter: AdapterKind,
    /// Per-iteration score dumps for the file adapter, in iteration order.
    pub score_dumps: Vec<PathBuf>,
    pub grid_step: usize,
    pub stride: u32,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            fold_count: 3,
            mask_ratio: 0.1,
            seed: 17,
            adapter: AdapterKind::Synthetic,
            score_dumps: Vec::new(),
            grid_step: DEFAULT_GRID_STEP,
            stride: FEATURE_STRIDE,
        }
    }
}

/// Replayable description of a run, written next to its logs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub dataset: String,
    pub class_count: usize,
    pub image_count: usize,
    pub k: usize,
    pub tau: f64,
    pub seed: u64,
    pub adapter: AdapterKind,
    pub grid_step: usize,
    pub stride: u32,
    pub curriculum: bool,
    pub masking: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub score_dumps: Vec<PathBuf>,
    pub folds: Vec<Vec<String>>,
    pub mining_failures: Vec<MiningFailureRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MiningFailureRecord {
    pub image_id: String,
    pub class: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationRecord {
    pub fold: usize,
    pub trained_images: usize,
    pub train_samples: usize,
    pub train_loss: f64,
    pub masks: Vec<MaskPlanRecord>,
    pub relocalized_images: usize,
    /// The full instance table after this iteration's relocalization.
    pub instances: Vec<InstanceRecord>,
    pub skipped: Vec<SkipRecord>,
    pub corloc_per_fold: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_corloc: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SkipRecord {
    pub image_id: String,
    pub reason: String,
}

pub struct RunArtifacts {
    pub manifest: RunManifest,
    pub iterations: Vec<IterationRecord>,
    pub final_instances: BTreeMap<String, Vec<MinedInstance>>,
    pub run: ZigzagRun,
}

impl RunArtifacts {
    /// Final mean CorLoc across all images (None without ground truth).
    pub fn final_corloc(&self) -> Option<f64> {
        self.iterations.last().and_then(|log| log.mean_corloc)
    }

    pub fn final_fold_corloc(&self) -> Option<&[f64]> {
        self.iterations.last().map(|log| log.corloc_per_fold.as_slice())
    }
}

/// Run the full loop on a loaded dataset: difficulty, initial mining, then
/// K train/relocalize iterations with the selected adapter.
pub fn execute_run(dataset: &Dataset, options: &RunOptions) -> Result<RunArtifacts> {
    let difficulty = compute_difficulty(dataset)?;
    let mining = compute_initial_mining(dataset, options.grid_step)?;

    let mut factory: Box<dyn FnMut(usize) -> Box<dyn DetectorAdapter>> = match options.adapter {
        AdapterKind::Synthetic => {
            let grids = dataset.grids.clone().ok_or_else(|| {
                HarnessError::InvalidArgument(
                    "the synthetic adapter needs a dataset with appearance grids".into(),
                )
            })?;
            let grids = Arc::new(grids);
            let class_count = dataset.class_count();
            Box::new(move |_k| {
                Box::new(SyntheticAdapter::new(
                    grids.clone(),
                    class_count,
                    SyntheticAdapterConfig::default(),
                )) as Box<dyn DetectorAdapter>
            })
        }
        AdapterKind::File => {
            if options.score_dumps.is_empty() {
                return Err(HarnessError::InvalidArgument(
                    "the file adapter needs at least one score dump (--score-dump)".into(),
                ));
            }
            let mut iterations = Vec::new();
            for path in &options.score_dumps {
                let mut per_image: BTreeMap<String, ScoreMatrix> = BTreeMap::new();
                crate::formats::read_jsonl::<ScoreDumpRecord, _>(path, |record, line| {
                    let (id, matrix) = record.into_matrix(path, line)?;
                    per_image.insert(id, matrix);
                    Ok(())
                })?;
                iterations.push(per_image);
            }
            let store = Arc::new(iterations);
            Box::new(move |k| {
                Box::new(
                    FileBackedAdapter::for_iteration(store.clone(), k - 1)
                        .expect("store is non-empty"),
                ) as Box<dyn DetectorAdapter>
            })
        }
    };

    let cfg = ZigzagConfig {
        fold_count: options.fold_count,
        mask_ratio: options.mask_ratio,
        seed: options.seed,
        stride: options.stride,
    };
    let run = run_zigzag(
        &dataset.records,
        &difficulty.reports,
        &mining.instances,
        Some(&dataset.ground_truth),
        &mut *factory,
        &cfg,
    )
    .map_err(|e| HarnessError::Runtime(e.to_string()))?;

    let manifest = RunManifest {
        dataset: dataset.manifest.name.clone(),
        class_count: dataset.class_count(),
        image_count: dataset.records.len(),
        k: options.fold_count,
        tau: options.mask_ratio,
        seed: options.seed,
        adapter: options.adapter,
        grid_step: options.grid_step,
        stride: options.stride,
        curriculum: options.fold_count > 1,
        masking: options.mask_ratio > 0.0,
        score_dumps: options.score_dumps.clone(),
        folds: run.state.folds.clone(),
        mining_failures: mining
            .failures
            .iter()
            .map(|(image_id, class, reason)| MiningFailureRecord {
                image_id: image_id.clone(),
                class: *class,
                reason: reason.clone(),
            })
            .collect(),
    };
    let iterations = run
        .state
        .logs
        .iter()
        .map(|log| IterationRecord {
            fold: log.fold,
            trained_images: log.trained_images,
            train_samples: log.train_samples,
            train_loss: round_sig(log.train_loss),
            masks: log.mask_plans.iter().map(MaskPlanRecord::from_plan).collect(),
            relocalized_images: log.relocalized_images,
            instances: log.instances.iter().map(InstanceRecord::from_instance).collect(),
            skipped: log
                .skipped
                .iter()
                .map(|(image_id, reason)| SkipRecord {
                    image_id: image_id.clone(),
                    reason: reason.clone(),
                })
                .collect(),
            corloc_per_fold: log.corloc_per_fold.iter().map(|&v| round_sig(v)).collect(),
            mean_corloc: log.mean_corloc.map(round_sig),
        })
        .collect();
    let final_instances = run.state.mined.clone();
    Ok(RunArtifacts { manifest, iterations, final_instances, run })
}

/// Write the run artifacts into `out_dir`: manifest, iteration log, final
/// instances, the snapshot-ensemble detections, and (when ground truth
/// exists) a per-class CorLoc table.
pub fn write_run(out_dir: &Path, dataset: &Dataset, artifacts: &RunArtifacts) -> Result<()> {
    std::fs::create_dir_all(out_dir).map_err(|source| HarnessError::Write {
        path: out_dir.to_path_buf(),
        source,
    })?;
    write_json_pretty(&out_dir.join("run_manifest.json"), &artifacts.manifest)?;
    write_jsonl(&out_dir.join("iterations.jsonl"), &artifacts.iterations)?;
    write_jsonl(
        &out_dir.join("instances.jsonl"),
        &instance_records(&artifacts.final_instances),
    )?;
    write_jsonl(&out_dir.join("detections.jsonl"), &ensemble_detections(dataset, artifacts)?)?;
    let predictions: Vec<MinedInstance> =
        artifacts.final_instances.values().flatten().cloned().collect();
    let report = corloc(&predictions, &dataset.ground_truth)
        .map_err(|e| HarnessError::Runtime(e.to_string()))?;
    let csv = corloc_csv(&dataset.manifest.classes, &report);
    std::fs::write(out_dir.join("corloc.csv"), csv).map_err(|source| HarnessError::Write {
        path: out_dir.join("corloc.csv"),
        source,
    })?;
    Ok(())
}

/// Test-time detections: the mean of the K snapshots scores every proposal,
/// and the best proposal per (image, positive class) becomes one detection.
pub fn ensemble_detections(
    dataset: &Dataset,
    artifacts: &RunArtifacts,
) -> Result<Vec<InstanceRecord>> {
    let snapshots = artifacts.run.snapshot_refs();
    let mut records = Vec::new();
    for rec in &dataset.records {
        let scores = ensemble_scores(&snapshots, rec)
            .map_err(|e| HarnessError::Runtime(e.to_string()))?;
        for class_index in rec.positive_classes() {
            let row = scores.row(class_index);
            let Some((best, &score)) = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(&a.0)))
            else {
                continue;
            };
            let instance = MinedInstance::new(
                rec.image_id.clone(),
                class_index,
                rec.proposals[best],
                score.clamp(0.0, 1.0),
            )
            .map_err(|e| HarnessError::Runtime(e.to_string()))?;
            records.push(InstanceRecord::from_instance(&instance));
        }
    }
    Ok(records)
}

// ---------------------------------------------------------------------------
// Evaluation tables
// ---------------------------------------------------------------------------

pub fn corloc_csv(classes: &[String], report: &zigzag_core::eval::CorLocReport) -> String {
    let mut out = String::from("class,images,corloc\n");
    for &(class_index, fraction, images) in &report.per_class {
        let name = classes.get(class_index).map(String::as_str).unwrap_or("unknown");
        out.push_str(&format!("{name},{images},{}\n", round_sig(fraction)));
    }
    out.push_str(&format!("mean,,{}\n", round_sig(report.mean)));
    out
}

pub fn ap_csv(
    classes: &[String],
    dets: &[Detection],
    gts: &[zigzag_core::eval::GroundTruth],
    mode: ApMode,
) -> Result<String> {
    let mut out = String::from("class,ap\n");
    let mut sum = 0.0;
    for (class_index, name) in classes.iter().enumerate() {
        let ap = average_precision(dets, gts, class_index, mode)
            .map_err(|e| HarnessError::Runtime(e.to_string()))?;
        sum += ap;
        out.push_str(&format!("{name},{}\n", round_sig(ap)));
    }
    out.push_str(&format!("mAP,{}\n", round_sig(sum / classes.len().max(1) as f64)));
    Ok(out)
}

pub fn fold_file(artifacts_folds: &[Vec<String>]) -> FoldFile {
    FoldFile { k: artifacts_folds.len(), folds: artifacts_folds.to_vec() }
}
