//! Synthetic scene generation.
//!
//! Each scene plants one or more objects, surrounds them with jittered
//! copies, part boxes, and clutter proposals, and fabricates the per-region
//! score matrix a classification-trained scorer would emit: a controllable
//! fraction of the class mass sits on object-overlapping proposals
//! (`signal_strength`), optionally diverted onto part boxes (`part_bias`) or
//! split across duplicated instances (`co_instance`). The same knobs drive
//! an appearance grid with per-cell noise, which is what the synthetic
//! detector adapter scores from.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use zigzag_core::eval::{GroundTruth, GtObject};
use zigzag_core::masking::FeatureGrid;
use zigzag_core::model::{BBox, ImageRecord, ScoreKind, ScoreMatrix};
use zigzag_core::SplitMix64;

use crate::{HarnessError, Result};

pub const FEATURE_STRIDE: u32 = 16;

/// Everything needed to generate one deterministic scene.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticSceneSpec {
    pub image_id: String,
    pub width: f64,
    pub height: f64,
    pub class_count: usize,
    /// Planted objects as (class_index, box).
    pub planted: Vec<(usize, [f64; 4])>,
    /// Number of distractor proposals.
    pub clutter: usize,
    /// Fraction of class score mass on object-overlapping proposals.
    pub signal_strength: f64,
    /// Instances per planted object (>= 1); extras are placed mirrored.
    pub co_instance: usize,
    /// Fraction of the object mass diverted to part boxes.
    pub part_bias: f64,
    /// Gaussian noise sigma on the appearance grid.
    pub appearance_noise: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub record: ImageRecord,
    pub scores: ScoreMatrix,
    pub ground_truth: GroundTruth,
    pub grid: FeatureGrid,
}

fn clamp_box(x0: f64, y0: f64, x1: f64, y1: f64, w: f64, h: f64) -> BBox {
    let x0 = x0.clamp(0.0, w - 1.0);
    let y0 = y0.clamp(0.0, h - 1.0);
    let x1 = x1.clamp(x0 + 1.0, w);
    let y1 = y1.clamp(y0 + 1.0, h);
    BBox::new(x0.round(), y0.round(), x1.round(), y1.round()).expect("clamped box is valid")
}

fn jitter_box(b: &BBox, w: f64, h: f64, rng: &mut SplitMix64) -> BBox {
    let dx = (rng.next_f64() - 0.5) * 0.7 * b.width();
    let dy = (rng.next_f64() - 0.5) * 0.7 * b.height();
    let sx = 0.7 + 0.7 * rng.next_f64();
    let sy = 0.7 + 0.7 * rng.next_f64();
    let (cx, cy) = b.center();
    let half_w = b.width() * sx / 2.0;
    let half_h = b.height() * sy / 2.0;
    clamp_box(cx + dx - half_w, cy + dy - half_h, cx + dx + half_w, cy + dy + half_h, w, h)
}

fn part_box(b: &BBox, w: f64, h: f64, rng: &mut SplitMix64) -> BBox {
    // Sides at 0.55-0.75 of the object: area 0.3-0.56, so the best part box
    // still misses the 0.5 IoU bar while spanning several feature cells.
    let frac_w = 0.55 + 0.2 * rng.next_f64();
    let frac_h = 0.55 + 0.2 * rng.next_f64();
    let pw = (b.width() * frac_w).max(2.0);
    let ph = (b.height() * frac_h).max(2.0);
    let x0 = b.x_min + rng.next_f64() * (b.width() - pw).max(0.0);
    let y0 = b.y_min + rng.next_f64() * (b.height() - ph).max(0.0);
    clamp_box(x0, y0, x0 + pw, y0 + ph, w, h)
}

fn loose_box(b: &BBox, w: f64, h: f64, rng: &mut SplitMix64) -> BBox {
    let scale = 1.7 + 0.6 * rng.next_f64();
    let (cx, cy) = b.center();
    let dx = (rng.next_f64() - 0.5) * 0.3 * b.width();
    let dy = (rng.next_f64() - 0.5) * 0.3 * b.height();
    let half_w = b.width() * scale / 2.0;
    let half_h = b.height() * scale / 2.0;
    clamp_box(cx + dx - half_w, cy + dy - half_h, cx + dx + half_w, cy + dy + half_h, w, h)
}

fn clutter_box(w: f64, h: f64, rng: &mut SplitMix64) -> BBox {
    let bw = (0.08 + 0.3 * rng.next_f64()) * w;
    let bh = (0.08 + 0.3 * rng.next_f64()) * h;
    let x0 = rng.next_f64() * (w - bw);
    let y0 = rng.next_f64() * (h - bh);
    clamp_box(x0, y0, x0 + bw, y0 + bh, w, h)
}

const JITTERS_PER_INSTANCE: usize = 4;
const PARTS_PER_INSTANCE: usize = 3;
const LOOSE_PER_INSTANCE: usize = 2;

/// Generate one scene, deterministically for a given scene spec.
pub fn generate_synthetic(spec: &SyntheticSceneSpec) -> Result<SyntheticScene> {
    if spec.planted.is_empty() {
        return Err(HarnessError::InvalidArgument("scene needs at least one planted object".into()));
    }
    if !(0.0..=1.0).contains(&spec.signal_strength) || !(0.0..=1.0).contains(&spec.part_bias) {
        return Err(HarnessError::InvalidArgument(
            "signal_strength and part_bias must lie in [0, 1]".into(),
        ));
    }
    if spec.co_instance == 0 {
        return Err(HarnessError::InvalidArgument("co_instance must be at least 1".into()));
    }
    let (w, h) = (spec.width, spec.height);
    let mut rng = SplitMix64::new(spec.seed);

    // Expand planted objects to co_instance copies each.
    let mut instances: Vec<(usize, BBox)> = Vec::new();
    for &(class_index, raw) in &spec.planted {
        if class_index >= spec.class_count {
            return Err(HarnessError::InvalidArgument(format!(
                "planted class {class_index} outside the {}-class dataset",
                spec.class_count
            )));
        }
        let b = BBox::new(raw[0], raw[1], raw[2], raw[3])
            .map_err(|e| HarnessError::InvalidArgument(e.to_string()))?;
        if b.x_min < 0.0 || b.y_min < 0.0 || b.x_max > w || b.y_max > h {
            return Err(HarnessError::InvalidArgument(format!(
                "planted box {:?} outside the {w}x{h} image",
                raw
            )));
        }
        instances.push((class_index, b));
        for extra in 1..spec.co_instance {
            // neighbors sit beside the first instance, the configuration that
            // tempts a detector into grouping them as one box
            let gap = 1.35 + 0.45 * rng.next_f64();
            let dx = if b.center().0 < w / 2.0 { b.width() * gap } else { -b.width() * gap };
            let dy = (rng.next_f64() - 0.5) * 0.4 * b.height() * extra as f64;
            let mut candidate =
                clamp_box(b.x_min + dx, b.y_min + dy, b.x_max + dx, b.y_max + dy, w, h);
            for _ in 0..20 {
                let clear = instances
                    .iter()
                    .all(|(_, other)| zigzag_core::model::iou(&candidate, other) < 0.25);
                if clear {
                    break;
                }
                let x0 = rng.next_f64() * (w - b.width());
                let y0 = rng.next_f64() * (h - b.height());
                candidate = clamp_box(x0, y0, x0 + b.width(), y0 + b.height(), w, h);
            }
            instances.push((class_index, candidate));
        }
    }

    // Proposals: per instance the exact box, jitters, then parts; union
    // boxes over same-class instance pairs (the grouping trap); clutter last.
    let mut proposals: Vec<BBox> = Vec::new();
    let mut exact_of: Vec<usize> = Vec::new(); // proposal index of each instance's exact box
    let mut jitters_of: Vec<Vec<usize>> = Vec::new();
    let mut parts_of: Vec<Vec<usize>> = Vec::new();
    let mut loose_of: Vec<Vec<usize>> = Vec::new();
    for (_, b) in &instances {
        exact_of.push(proposals.len());
        proposals.push(*b);
        let mut jitters = Vec::new();
        for _ in 0..JITTERS_PER_INSTANCE {
            jitters.push(proposals.len());
            proposals.push(jitter_box(b, w, h, &mut rng));
        }
        jitters_of.push(jitters);
        let mut parts = Vec::new();
        for _ in 0..PARTS_PER_INSTANCE {
            parts.push(proposals.len());
            proposals.push(part_box(b, w, h, &mut rng));
        }
        parts_of.push(parts);
        let mut loose = Vec::new();
        for _ in 0..LOOSE_PER_INSTANCE {
            loose.push(proposals.len());
            proposals.push(loose_box(b, w, h, &mut rng));
        }
        loose_of.push(loose);
    }
    let mut unions_of: BTreeMap<usize, Vec<usize>> = BTreeMap::new(); // class -> union proposals
    for i in 0..instances.len() {
        for j in i + 1..instances.len() {
            let (ci, bi) = &instances[i];
            let (cj, bj) = &instances[j];
            if ci == cj {
                unions_of.entry(*ci).or_default().push(proposals.len());
                proposals.push(clamp_box(
                    bi.x_min.min(bj.x_min),
                    bi.y_min.min(bj.y_min),
                    bi.x_max.max(bj.x_max),
                    bi.y_max.max(bj.y_max),
                    w,
                    h,
                ));
            }
        }
    }
    let clutter_start = proposals.len();
    for _ in 0..spec.clutter {
        proposals.push(clutter_box(w, h, &mut rng));
    }

    // Labels and ground truth.
    let mut labels = vec![-1i8; spec.class_count];
    for (class_index, _) in &instances {
        labels[*class_index] = 1;
    }
    let ground_truth = GroundTruth {
        image_id: spec.image_id.clone(),
        objects: instances
            .iter()
            .map(|(class_index, bbox)| GtObject {
                class_index: *class_index,
                bbox: *bbox,
                difficult: false,
            })
            .collect(),
    };

    // Score matrix: per present class, split the image mass between exact
    // boxes, jitters, parts, and clutter according to the knobs.
    let region_count = proposals.len();
    let mut values = vec![0.0f64; spec.class_count * region_count];
    for class_index in 0..spec.class_count {
        if labels[class_index] != 1 {
            continue;
        }
        let class_instances: Vec<usize> = instances
            .iter()
            .enumerate()
            .filter(|(_, (c, _))| *c == class_index)
            .map(|(i, _)| i)
            .collect();
        let phi = (0.35 + 0.6 * spec.signal_strength).min(0.98);
        let mut object_mass = spec.signal_strength * (1.0 - spec.part_bias);
        let mut part_mass = spec.signal_strength * spec.part_bias;
        let clutter_mass = if spec.clutter > 0 {
            1.0 - spec.signal_strength
        } else {
            // no clutter to carry the residual mass: fold it into parts
            part_mass += (1.0 - spec.signal_strength) * 0.5;
            object_mass += (1.0 - spec.signal_strength) * 0.5;
            0.0
        };
        let part_total: usize = class_instances.iter().map(|&i| parts_of[i].len()).sum();
        if part_total == 0 {
            object_mass += part_mass;
            part_mass = 0.0;
        }

        let row = &mut values[class_index * region_count..(class_index + 1) * region_count];
        // union boxes soak up a share of the object mass when the class has
        // several instances: both objects feed the grouped box's score
        let unions = unions_of.get(&class_index).map(Vec::as_slice).unwrap_or(&[]);
        let union_mass = if unions.is_empty() { 0.0 } else { object_mass * 0.35 };
        let per_instance = (object_mass - union_mass) / class_instances.len() as f64;
        for &i in &class_instances {
            row[exact_of[i]] += per_instance * 0.62;
            let jitter_share = per_instance * 0.28;
            let weights: Vec<f64> =
                jitters_of[i].iter().map(|_| 0.4 + rng.next_f64()).collect();
            let total: f64 = weights.iter().sum();
            for (&j, &wgt) in jitters_of[i].iter().zip(&weights) {
                row[j] += jitter_share * wgt / total;
            }
            let loose_share = per_instance * 0.10;
            for &l in &loose_of[i] {
                row[l] += loose_share / loose_of[i].len() as f64;
            }
        }
        for &u in unions {
            row[u] += union_mass / unions.len() as f64;
        }
        if part_mass > 0.0 {
            let weights: Vec<f64> = (0..part_total).map(|_| 0.7 + rng.next_f64() * 0.6).collect();
            let total: f64 = weights.iter().sum();
            let mut wi = 0;
            for &i in &class_instances {
                for &p in &parts_of[i] {
                    row[p] += part_mass * weights[wi] / total;
                    wi += 1;
                }
            }
        }
        if clutter_mass > 0.0 && spec.clutter > 0 {
            let weights: Vec<f64> = (0..spec.clutter).map(|_| rng.next_f64().powi(2) + 0.05).collect();
            let total: f64 = weights.iter().sum();
            for (k, &wgt) in weights.iter().enumerate() {
                row[clutter_start + k] += clutter_mass * wgt / total;
            }
        }
        // scale the unit mass to the image-level probability
        for v in row.iter_mut() {
            *v *= phi;
        }
    }

    let record = ImageRecord::new(spec.image_id.clone(), w, h, proposals, labels)
        .map_err(|e| HarnessError::Runtime(e.to_string()))?;
    let scores = ScoreMatrix::new(ScoreKind::Normalized, spec.class_count, region_count, values)
        .map_err(|e| HarnessError::Runtime(e.to_string()))?;

    // Appearance grid: per class channel, cell value = overlap fraction with
    // the class's instances, plus seeded noise.
    let mut grid = FeatureGrid::for_image(w, h, spec.class_count, FEATURE_STRIDE)
        .map_err(|e| HarnessError::Runtime(e.to_string()))?;
    let step = FEATURE_STRIDE as f64;
    for channel in 0..spec.class_count {
        for cy in 0..grid.height {
            for cx in 0..grid.width {
                let cell = BBox::new(
                    cx as f64 * step,
                    cy as f64 * step,
                    ((cx + 1) as f64 * step).min(w),
                    ((cy + 1) as f64 * step).min(h),
                )
                .expect("cell box is valid");
                let mut coverage: f64 = 0.0;
                for (class_index, b) in &instances {
                    if *class_index == channel {
                        let inter = cell.intersection_area(b);
                        if cell.area() > 0.0 {
                            coverage = coverage.max(inter / cell.area());
                        }
                    }
                }
                let noise = rng.next_gaussian() * spec.appearance_noise;
                grid.set(channel, cx, cy, coverage + noise);
            }
        }
    }

    Ok(SyntheticScene { record, scores, ground_truth, grid })
}

/// The fixed 200-scene benchmark: a 4-knob grid (signal strength, clutter,
/// co-instances, part bias) cycled with per-scene seeds derived from the
/// master seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    pub master_seed: u64,
    pub scene_count: usize,
    pub class_count: usize,
    pub image_size: f64,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        Self { master_seed: 20_240_831, scene_count: 200, class_count: 3, image_size: 192.0 }
    }
}

pub const SIGNAL_LEVELS: [f64; 4] = [0.9, 0.7, 0.5, 0.3];
pub const CLUTTER_LEVELS: [usize; 4] = [2, 6, 12, 20];
pub const CO_INSTANCE_LEVELS: [usize; 2] = [1, 2];
pub const PART_BIAS_LEVELS: [f64; 2] = [0.0, 0.85];

pub fn benchmark_scenes(spec: &BenchmarkSpec) -> Vec<SyntheticSceneSpec> {
    let mut master = SplitMix64::new(spec.master_seed);
    let size = spec.image_size;
    (0..spec.scene_count)
        .map(|i| {
            let combo = i % (SIGNAL_LEVELS.len()
                * CLUTTER_LEVELS.len()
                * CO_INSTANCE_LEVELS.len()
                * PART_BIAS_LEVELS.len());
            let signal = SIGNAL_LEVELS[combo % SIGNAL_LEVELS.len()];
            let clutter = CLUTTER_LEVELS[(combo / SIGNAL_LEVELS.len()) % CLUTTER_LEVELS.len()];
            let co = CO_INSTANCE_LEVELS
                [(combo / (SIGNAL_LEVELS.len() * CLUTTER_LEVELS.len())) % CO_INSTANCE_LEVELS.len()];
            let part = PART_BIAS_LEVELS[(combo
                / (SIGNAL_LEVELS.len() * CLUTTER_LEVELS.len() * CO_INSTANCE_LEVELS.len()))
                % PART_BIAS_LEVELS.len()];
            let mut rng = master.fork(i as u64);
            let side = size * (0.3 + 0.25 * rng.next_f64());
            let aspect = 0.75 + rng.next_f64() * 0.5;
            let bw = (side * aspect).min(size * 0.6);
            let bh = (side / aspect).min(size * 0.6);
            let x0 = (rng.next_f64() * (size - bw)).round();
            let y0 = (rng.next_f64() * (size - bh)).round();
            let class = i % spec.class_count;
            SyntheticSceneSpec {
                image_id: format!("scene_{i:03}"),
                width: size,
                height: size,
                class_count: spec.class_count,
                planted: vec![(class, [x0, y0, (x0 + bw).round(), (y0 + bh).round()])],
                clutter,
                signal_strength: signal,
                co_instance: co,
                part_bias: part,
                appearance_noise: 0.05
                    + 0.4 * (1.0 - signal)
                    + 0.004 * clutter as f64
                    + 0.08 * (co - 1) as f64
                    + 0.1 * part,
                seed: rng.next_u64(),
            }
        })
        .collect()
}

/// Generate every scene of a benchmark, keyed by image id.
pub fn generate_benchmark(spec: &BenchmarkSpec) -> Result<BTreeMap<String, SyntheticScene>> {
    let mut scenes = BTreeMap::new();
    for scene_spec in benchmark_scenes(spec) {
        let scene = generate_synthetic(&scene_spec)?;
        scenes.insert(scene_spec.image_id.clone(), scene);
    }
    Ok(scenes)
}
