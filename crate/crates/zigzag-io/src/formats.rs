//! JSON-lines wire formats and deterministic writers.
//!
//! One record per line, one line per image (or per iteration in run logs).
//! Floats are rounded to nine significant digits before serialization so
//! repeated runs produce byte-identical files.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use zigzag_core::masking::{FeatureGrid, MaskPlan};
use zigzag_core::model::{BBox, MinedInstance, ScoreKind, ScoreMatrix};

use crate::{HarnessError, Result};

/// Round to nine significant digits; the shortest round-trip representation
/// of the result is then at most nine digits, keeping emitted files stable.
pub fn round_sig(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.8e}").parse().expect("formatted float parses")
}

pub fn rounded_vec(values: &[f64]) -> Vec<f64> {
    values.iter().map(|&v| round_sig(v)).collect()
}

/// Score dump record: `{"image_id", "kind", "shape": [C, R], "values": [...]}`,
/// row-major values.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreDumpRecord {
    pub image_id: String,
    pub kind: String,
    pub shape: [usize; 2],
    pub values: Vec<f64>,
}

pub fn score_kind_from_str(s: &str) -> Option<ScoreKind> {
    match s {
        "raw_cls_stream" => Some(ScoreKind::RawClsStream),
        "raw_det_stream" => Some(ScoreKind::RawDetStream),
        "normalized" => Some(ScoreKind::Normalized),
        "detection" => Some(ScoreKind::Detection),
        _ => None,
    }
}

pub fn score_kind_to_str(kind: ScoreKind) -> &'static str {
    match kind {
        ScoreKind::RawClsStream => "raw_cls_stream",
        ScoreKind::RawDetStream => "raw_det_stream",
        ScoreKind::Normalized => "normalized",
        ScoreKind::Detection => "detection",
    }
}

impl ScoreDumpRecord {
    pub fn from_matrix(image_id: &str, matrix: &ScoreMatrix) -> Self {
        Self {
            image_id: image_id.to_string(),
            kind: score_kind_to_str(matrix.kind()).to_string(),
            shape: [matrix.class_count(), matrix.region_count()],
            values: rounded_vec(matrix.values()),
        }
    }

    pub fn into_matrix(self, path: &Path, line: usize) -> Result<(String, ScoreMatrix)> {
        let kind = score_kind_from_str(&self.kind).ok_or_else(|| HarnessError::MalformedRecord {
            path: path.to_path_buf(),
            line,
            message: format!("unknown score kind {:?}", self.kind),
        })?;
        let matrix = ScoreMatrix::new(kind, self.shape[0], self.shape[1], self.values).map_err(
            |e| HarnessError::MalformedRecord {
                path: path.to_path_buf(),
                line,
                message: e.to_string(),
            },
        )?;
        Ok((self.image_id, matrix))
    }
}

/// Instance record: `{"image_id", "class", "box": [x0,y0,x1,y1], "confidence"}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub image_id: String,
    pub class: usize,
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    pub confidence: f64,
}

impl InstanceRecord {
    pub fn from_instance(m: &MinedInstance) -> Self {
        Self {
            image_id: m.image_id.clone(),
            class: m.class_index,
            bbox: [
                round_sig(m.bbox.x_min),
                round_sig(m.bbox.y_min),
                round_sig(m.bbox.x_max),
                round_sig(m.bbox.y_max),
            ],
            confidence: round_sig(m.confidence),
        }
    }

    pub fn into_instance(self, path: &Path, line: usize) -> Result<MinedInstance> {
        let bbox = BBox::new(self.bbox[0], self.bbox[1], self.bbox[2], self.bbox[3])
            .and_then(|b| MinedInstance::new(self.image_id, self.class, b, self.confidence))
            .map_err(|e| HarnessError::MalformedRecord {
                path: path.to_path_buf(),
                line,
                message: e.to_string(),
            })?;
        Ok(bbox)
    }
}

/// Fold-assignment file: `{"k": K, "folds": [[image_id, ...], ...]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldFile {
    pub k: usize,
    pub folds: Vec<Vec<String>>,
}

/// Per-image difficulty record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DifficultyRecord {
    pub image_id: String,
    pub per_class: Vec<ClassMeas>,
    pub overall: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassMeas {
    pub class: usize,
    pub meas: f64,
}

/// Per-image appearance grid for the synthetic detector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridRecord {
    pub image_id: String,
    pub channels: usize,
    pub width: usize,
    pub height: usize,
    pub stride: u32,
    pub values: Vec<f64>,
}

impl GridRecord {
    pub fn from_grid(image_id: &str, grid: &FeatureGrid) -> Self {
        Self {
            image_id: image_id.to_string(),
            channels: grid.channels,
            width: grid.width,
            height: grid.height,
            stride: grid.stride,
            values: rounded_vec(grid.values()),
        }
    }

    pub fn into_grid(self, path: &Path, line: usize) -> Result<(String, FeatureGrid)> {
        let grid = FeatureGrid::new(self.width, self.height, self.channels, self.stride, self.values)
            .map_err(|e| HarnessError::MalformedRecord {
                path: path.to_path_buf(),
                line,
                message: e.to_string(),
            })?;
        Ok((self.image_id, grid))
    }
}

/// Per-image proposal set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProposalsRecord {
    pub image_id: String,
    pub boxes: Vec<[f64; 4]>,
}

/// Serialized mask plan inside run logs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MaskPlanRecord {
    pub image_id: String,
    pub class: usize,
    pub omega: [f64; 4],
    pub cells: Vec<[u32; 2]>,
}

impl MaskPlanRecord {
    pub fn from_plan(plan: &MaskPlan) -> Self {
        Self {
            image_id: plan.image_id.clone(),
            class: plan.class_index,
            omega: [
                round_sig(plan.omega.x_min),
                round_sig(plan.omega.y_min),
                round_sig(plan.omega.x_max),
                round_sig(plan.omega.y_max),
            ],
            cells: plan.mapped_cells.iter().map(|&(u, v)| [u, v]).collect(),
        }
    }
}

/// Stream a JSONL file, invoking `each` per parsed record without holding
/// the file in memory.
pub fn read_jsonl<T, F>(path: &Path, mut each: F) -> Result<()>
where
    T: DeserializeOwned,
    F: FnMut(T, usize) -> Result<()>,
{
    let file = File::open(path).map_err(|source| HarnessError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    let reader = BufReader::new(file);
    for (index, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| HarnessError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: T = serde_json::from_str(&line).map_err(|e| HarnessError::MalformedRecord {
            path: path.to_path_buf(),
            line: index + 1,
            message: e.to_string(),
        })?;
        each(record, index + 1)?;
    }
    Ok(())
}

/// Write records as JSONL with a buffered writer.
pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|source| HarnessError::Write {
        path: path.to_path_buf(),
        source,
    })?;
    let mut writer = BufWriter::new(file);
    for record in records {
        let line = serde_json::to_string(record).map_err(|e| HarnessError::Runtime(e.to_string()))?;
        writeln!(writer, "{line}").map_err(|source| HarnessError::Write {
            path: path.to_path_buf(),
            source,
        })?;
    }
    writer.flush().map_err(|source| HarnessError::Write { path: path.to_path_buf(), source })
}

pub fn write_json_pretty<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text =
        serde_json::to_string_pretty(value).map_err(|e| HarnessError::Runtime(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|source| HarnessError::Write {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| HarnessError::MalformedRecord {
        path: path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_sig_is_stable() {
        assert_eq!(round_sig(1.0 / 3.0), 0.333333333);
        assert_eq!(round_sig(0.1), 0.1);
        assert_eq!(round_sig(0.0), 0.0);
        assert_eq!(format!("{}", round_sig(2.0 / 3.0)), "0.666666667");
    }

    #[test]
    fn score_kind_round_trip() {
        for kind in [
            ScoreKind::RawClsStream,
            ScoreKind::RawDetStream,
            ScoreKind::Normalized,
            ScoreKind::Detection,
        ] {
            assert_eq!(score_kind_from_str(score_kind_to_str(kind)), Some(kind));
        }
        assert_eq!(score_kind_from_str("bogus"), None);
    }
}
