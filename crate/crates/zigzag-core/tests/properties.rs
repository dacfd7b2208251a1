//! Randomized invariants, each checked against an oracle that recomputes the
//! quantity by an independent route (pixel counting, per-pixel rasterization,
//! explicit re-derivation).

use std::collections::BTreeMap;

use proptest::prelude::*;

use zigzag_core::curriculum::{partition_folds, weighted_loss};
use zigzag_core::difficulty::{accumulate, meas, DifficultyReport};
use zigzag_core::eval::{
    average_precision, match_detections, ApMode, Detection, GroundTruth, GtObject,
};
use zigzag_core::masking::{apply_mask, map_pixel_to_feature, plan_mask, FeatureGrid};
use zigzag_core::mining::{heat_map, mine_instance, BINARIZE_THRESHOLD};
use zigzag_core::scoring::{image_probability, normalize_two_stream};
use zigzag_core::{BBox, ImageRecord, ScoreKind, ScoreMatrix, SplitMix64};

// ---------------------------------------------------------------------------
// IoU vs pixel-counting oracle
// ---------------------------------------------------------------------------

fn int_box() -> impl Strategy<Value = BBox> {
    (0u32..60, 0u32..60, 1u32..32, 1u32..32).prop_map(|(x, y, w, h)| {
        BBox::new(
            x as f64,
            y as f64,
            (x + w).min(64) as f64,
            (y + h).min(64) as f64,
        )
        .unwrap()
    })
}

/// Count unit cells [i, i+1) x [j, j+1) inside a closed integer box.
fn cell_count(b: &BBox) -> u64 {
    ((b.x_max - b.x_min) as u64) * ((b.y_max - b.y_min) as u64)
}

fn cell_intersection(a: &BBox, b: &BBox) -> u64 {
    let x0 = a.x_min.max(b.x_min) as i64;
    let y0 = a.y_min.max(b.y_min) as i64;
    let x1 = a.x_max.min(b.x_max) as i64;
    let y1 = a.y_max.min(b.y_max) as i64;
    if x1 <= x0 || y1 <= y0 {
        0
    } else {
        // per-cell scan, deliberately naive
        let mut count = 0;
        for _y in y0..y1 {
            for _x in x0..x1 {
                count += 1;
            }
        }
        count
    }
}

proptest! {
    #[test]
    fn iou_matches_pixel_oracle(a in int_box(), b in int_box()) {
        let inter = cell_intersection(&a, &b);
        let union = cell_count(&a) + cell_count(&b) - inter;
        let expected = inter as f64 / union as f64;
        let got = zigzag_core::model::iou(&a, &b);
        prop_assert!((got - expected).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&got));
        prop_assert!((got - zigzag_core::model::iou(&b, &a)).abs() == 0.0);
        if got == 1.0 {
            prop_assert_eq!(a, b);
        }
    }
}

// ---------------------------------------------------------------------------
// Two-stream normalization invariants
// ---------------------------------------------------------------------------

fn stream_pair() -> impl Strategy<Value = (usize, usize, Vec<f64>, Vec<f64>)> {
    (1usize..6, 1usize..8).prop_flat_map(|(c, r)| {
        let n = c * r;
        (
            Just(c),
            Just(r),
            proptest::collection::vec(-8.0f64..8.0, n),
            proptest::collection::vec(-8.0f64..8.0, n),
        )
    })
}

proptest! {
    #[test]
    fn image_level_loss_is_nonnegative(
        phis in proptest::collection::vec(0.0f64..=1.0, 1..6),
        flips in proptest::collection::vec(any::<bool>(), 6),
    ) {
        use zigzag_core::scoring::image_level_loss;
        let labels: Vec<i8> = flips.iter().take(phis.len()).map(|&b| if b { 1 } else { -1 }).collect();
        let norm = ScoreMatrix::new(ScoreKind::Normalized, phis.len(), 1, phis.clone()).unwrap();
        let probs = image_probability(&norm).unwrap();
        let loss = image_level_loss(&probs, &labels).unwrap();
        prop_assert!(loss >= 0.0);
        // perfect predictions (and only those) drive the loss to ~0
        let perfect = phis
            .iter()
            .zip(&labels)
            .all(|(&p, &y)| if y == 1 { p > 0.999_999 } else { p < 1e-6 });
        if perfect {
            prop_assert!(loss < 1e-5);
        }
    }

    #[test]
    fn normalization_factor_sums((c, r, cls, det) in stream_pair(), shift in -5.0f64..5.0) {
        let cls_m = ScoreMatrix::new(ScoreKind::RawClsStream, c, r, cls.clone()).unwrap();
        let det_m = ScoreMatrix::new(ScoreKind::RawDetStream, c, r, det.clone()).unwrap();
        let norm = normalize_two_stream(&cls_m, &det_m).unwrap();

        // per-class region mass <= 1 and phi in [0, 1]
        let probs = image_probability(&norm).unwrap();
        for class in 0..c {
            let phi = probs.get(class);
            prop_assert!((0.0..=1.0 + 1e-9).contains(&phi));
        }

        // shift invariance along each softmax axis
        let cls_shifted: Vec<f64> = cls.iter().map(|v| v + shift).collect();
        let det_shifted: Vec<f64> = det.iter().map(|v| v + shift).collect();
        let norm2 = normalize_two_stream(
            &ScoreMatrix::new(ScoreKind::RawClsStream, c, r, cls_shifted).unwrap(),
            &ScoreMatrix::new(ScoreKind::RawDetStream, c, r, det_shifted).unwrap(),
        ).unwrap();
        for (x, y) in norm.values().iter().zip(norm2.values()) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }
}

// ---------------------------------------------------------------------------
// Difficulty invariants
// ---------------------------------------------------------------------------

fn integer_scores() -> impl Strategy<Value = Vec<u64>> {
    proptest::collection::vec(0u64..1_000_000, 1..50).prop_filter("needs evidence", |v| {
        v.iter().any(|&x| x > 0)
    })
}

proptest! {
    #[test]
    fn meas_bounds_and_uniform(scores in integer_scores()) {
        let row: Vec<f64> = scores.iter().map(|&v| v as f64).collect();
        let curve = accumulate(&row).unwrap();
        let m = meas(&curve);
        prop_assert!(m > 0.0 && m <= 1.0);
    }

    #[test]
    fn concentration_transfer_never_decreases_meas(scores in integer_scores()) {
        let row: Vec<f64> = scores.iter().map(|&v| v as f64).collect();
        let before = meas(&accumulate(&row).unwrap());

        // move the whole smallest nonzero entry onto the largest entry
        let (mut max_i, mut min_i) = (0usize, usize::MAX);
        for (i, &v) in scores.iter().enumerate() {
            if v > scores[max_i] {
                max_i = i;
            }
            if v > 0 && (min_i == usize::MAX || v < scores[min_i]) {
                min_i = i;
            }
        }
        let transfer = scores[min_i];
        let mut moved = scores.clone();
        if min_i != max_i {
            moved[min_i] -= transfer;
            moved[max_i] += transfer;
        }
        let row2: Vec<f64> = moved.iter().map(|&v| v as f64).collect();
        let after = meas(&accumulate(&row2).unwrap());
        prop_assert!(after >= before, "after {after} < before {before}");
    }
}

// ---------------------------------------------------------------------------
// Mining vs rasterization oracle
// ---------------------------------------------------------------------------

/// Independent path: per-pixel membership sums (ascending proposal index),
/// max-normalize, threshold, stack-based flood fill, largest component.
fn oracle_mine(rec: &ImageRecord, row: &[f64]) -> Option<BBox> {
    let w = rec.width as usize;
    let h = rec.height as usize;
    let mut heat = vec![0.0f64; w * h];
    for y in 0..h {
        for x in 0..w {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            for (p, &s) in rec.proposals.iter().zip(row) {
                if s > 0.0 && p.contains_point(px, py) {
                    heat[y * w + x] += s;
                }
            }
        }
    }
    let max = heat.iter().cloned().fold(0.0f64, f64::max);
    if max <= 0.0 {
        return None;
    }
    let fg: Vec<bool> = heat.iter().map(|&v| v / max >= BINARIZE_THRESHOLD).collect();
    let mut seen = vec![false; w * h];
    let mut best: Option<(usize, usize, (usize, usize, usize, usize))> = None; // (count, first, bbox)
    for start in 0..w * h {
        if !fg[start] || seen[start] {
            continue;
        }
        let mut stack = vec![start];
        seen[start] = true;
        let mut count = 0;
        let (mut x0, mut y0, mut x1, mut y1) = (w, h, 0, 0);
        while let Some(idx) = stack.pop() {
            count += 1;
            let (x, y) = (idx % w, idx / w);
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let n = ny as usize * w + nx as usize;
                    if fg[n] && !seen[n] {
                        seen[n] = true;
                        stack.push(n);
                    }
                }
            }
        }
        let better = match &best {
            None => true,
            Some((c, first, _)) => count > *c || (count == *c && start < *first),
        };
        if better {
            best = Some((count, start, (x0, y0, x1, y1)));
        }
    }
    let (_, _, (x0, y0, x1, y1)) = best?;
    Some(BBox::new(x0 as f64, y0 as f64, (x1 + 1) as f64, (y1 + 1) as f64).unwrap())
}

fn mining_fixture() -> impl Strategy<Value = (ImageRecord, Vec<f64>)> {
    (8usize..=64, 8usize..=64, 1usize..=12).prop_flat_map(|(w, h, n)| {
        let boxes = proptest::collection::vec(
            (0usize..8, 0usize..8, 1usize..8, 1usize..8).prop_map(move |(bx, by, bw, bh)| {
                let x0 = (bx * w / 8).min(w - 1);
                let y0 = (by * h / 8).min(h - 1);
                let x1 = (x0 + bw * w / 8).clamp(x0 + 1, w);
                let y1 = (y0 + bh * h / 8).clamp(y0 + 1, h);
                BBox::new(x0 as f64, y0 as f64, x1 as f64, y1 as f64).unwrap()
            }),
            n,
        );
        let scores = proptest::collection::vec(0.0f64..1.0, n);
        (Just(w), Just(h), boxes, scores).prop_map(|(w, h, boxes, mut scores)| {
            scores[0] = scores[0].max(0.25); // guarantee evidence
            let rec = ImageRecord::new(
                "fixture".to_string(),
                w as f64,
                h as f64,
                boxes,
                vec![1],
            )
            .unwrap();
            (rec, scores)
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn mined_box_matches_rasterization_oracle((rec, row) in mining_fixture()) {
        let scores = ScoreMatrix::new(ScoreKind::Normalized, 1, row.len(), row.clone()).unwrap();
        let hm = heat_map(&rec, &scores, 0, 1).unwrap();
        let mined = mine_instance(&hm, BINARIZE_THRESHOLD).unwrap();
        let expected = oracle_mine(&rec, &row).expect("oracle found foreground");
        prop_assert_eq!(mined, expected);

        // containment in the tight bbox of the union of positive proposals
        let mut ux0 = f64::INFINITY;
        let mut uy0 = f64::INFINITY;
        let mut ux1 = f64::NEG_INFINITY;
        let mut uy1 = f64::NEG_INFINITY;
        for (p, &s) in rec.proposals.iter().zip(&row) {
            if s > 0.0 {
                ux0 = ux0.min(p.x_min);
                uy0 = uy0.min(p.y_min);
                ux1 = ux1.max(p.x_max);
                uy1 = uy1.max(p.y_max);
            }
        }
        prop_assert!(mined.x_min >= ux0 && mined.y_min >= uy0);
        prop_assert!(mined.x_max <= ux1 && mined.y_max <= uy1);
    }
}

// ---------------------------------------------------------------------------
// Masking invariants
// ---------------------------------------------------------------------------

proptest! {
    #[test]
    fn mapping_matches_direct_formula(u in 1u32..=320, stride in prop_oneof![Just(8u32), Just(16), Just(32)]) {
        // independent route: integer arithmetic round-half-away for positives
        let num = (u - 1) as u64 * 2 + stride as u64 * 2; // 2*((u-1) + T)
        let expected = ((num + stride as u64) / (2 * stride as u64)) as u32;
        let (got, _) = map_pixel_to_feature(u, 1, stride);
        prop_assert_eq!(got, expected, "u={} T={}", u, stride);
    }

    #[test]
    fn mask_locality_and_idempotence(
        seed in 0u64..1000,
        tau in 0.05f64..0.9,
        w in 2usize..6,
        h in 2usize..6,
        ch in 1usize..3,
    ) {
        let mut rng = SplitMix64::new(seed);
        let values: Vec<f64> = (0..w * h * ch).map(|i| i as f64 + 1.0).collect();
        let grid = FeatureGrid::new(w, h, ch, 16, values).unwrap();
        let obj = BBox::new(0.0, 0.0, (w * 16) as f64, (h * 16) as f64).unwrap();
        let plan = plan_mask("img", 0, &obj, tau, 16, &mut rng).unwrap();
        let once = apply_mask(&grid, &plan);
        let twice = apply_mask(&once, &plan);
        prop_assert_eq!(&once, &twice);
        for y in 0..h {
            for x in 0..w {
                let planned = plan.mapped_cells.contains(&((x + 1) as u32, (y + 1) as u32));
                for c in 0..ch {
                    let expected = if planned { 0.0 } else { grid.get(c, x, y) };
                    prop_assert_eq!(once.get(c, x, y), expected);
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Evaluation invariants
// ---------------------------------------------------------------------------

/// Independent matcher: explicit (index, score) sort and per-image claimed
/// sets, following the VOC rules step by step.
fn oracle_match(dets: &[Detection], gts: &[GroundTruth], class: usize) -> (Vec<bool>, usize) {
    let mut order: Vec<usize> = (0..dets.len()).filter(|&i| dets[i].class_index == class).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .score
            .partial_cmp(&dets[a].score)
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut claimed: BTreeMap<(usize, usize), bool> = BTreeMap::new();
    let mut tp = Vec::new();
    let mut positives = 0;
    for (gi, gt) in gts.iter().enumerate() {
        for (oi, obj) in gt.objects.iter().enumerate() {
            if obj.class_index == class {
                claimed.insert((gi, oi), false);
                if !obj.difficult {
                    positives += 1;
                }
            }
        }
    }
    for &i in &order {
        let det = &dets[i];
        let mut best: Option<(usize, usize)> = None;
        let mut best_iou = 0.0f64;
        for (gi, gt) in gts.iter().enumerate() {
            if gt.image_id != det.image_id {
                continue;
            }
            for (oi, obj) in gt.objects.iter().enumerate() {
                if obj.class_index != class {
                    continue;
                }
                let v = zigzag_core::model::iou(&det.bbox, &obj.bbox);
                if v > best_iou {
                    best_iou = v;
                    best = Some((gi, oi));
                }
            }
        }
        if best_iou >= 0.5 {
            let key = best.unwrap();
            let obj = &gts[key.0].objects[key.1];
            if obj.difficult {
                continue;
            }
            let slot = claimed.get_mut(&key).unwrap();
            if *slot {
                tp.push(false);
            } else {
                *slot = true;
                tp.push(true);
            }
        } else {
            tp.push(false);
        }
    }
    (tp, positives)
}

fn eval_fixture() -> impl Strategy<Value = (Vec<Detection>, Vec<GroundTruth>)> {
    let gt_boxes = proptest::collection::vec(
        ((0u32..40, 0u32..40, 5u32..25, 5u32..25), any::<bool>()),
        1..5,
    );
    let det_boxes = proptest::collection::vec(
        ((0u32..40, 0u32..40, 5u32..25, 5u32..25), 0.0f64..1.0),
        0..8,
    );
    (gt_boxes, det_boxes, 1usize..3).prop_map(|(gt_boxes, det_boxes, images)| {
        let gts: Vec<GroundTruth> = (0..images)
            .map(|img| GroundTruth {
                image_id: format!("img{img}"),
                objects: gt_boxes
                    .iter()
                    .map(|((x, y, w, h), difficult)| GtObject {
                        class_index: 0,
                        bbox: BBox::new(
                            *x as f64,
                            *y as f64,
                            (x + w) as f64,
                            (y + h) as f64,
                        )
                        .unwrap(),
                        difficult: *difficult,
                    })
                    .collect(),
            })
            .collect();
        let dets: Vec<Detection> = det_boxes
            .iter()
            .enumerate()
            .map(|(i, ((x, y, w, h), score))| Detection {
                image_id: format!("img{}", i % images),
                class_index: 0,
                bbox: BBox::new(*x as f64, *y as f64, (x + w) as f64, (y + h) as f64).unwrap(),
                score: *score,
            })
            .collect();
        (dets, gts)
    })
}

proptest! {
    #[test]
    fn greedy_matching_matches_oracle((dets, gts) in eval_fixture()) {
        let outcome = match_detections(&dets, &gts, 0).unwrap();
        let (tp, positives) = oracle_match(&dets, &gts, 0);
        prop_assert_eq!(&outcome.ranked_tp, &tp);
        prop_assert_eq!(outcome.positives, positives);
        // no ground truth matched twice
        let matched = outcome.ranked_tp.iter().filter(|&&t| t).count();
        prop_assert!(matched <= positives);
    }

    #[test]
    fn ap_invariant_under_monotone_score_transform((dets, gts) in eval_fixture()) {
        let transformed: Vec<Detection> = dets
            .iter()
            .map(|d| Detection { score: 3.0 * d.score + 1.0, ..d.clone() })
            .collect();
        for mode in [ApMode::ElevenPoint, ApMode::Area] {
            let a = average_precision(&dets, &gts, 0, mode).unwrap();
            let b = average_precision(&transformed, &gts, 0, mode).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&a));
        }
    }
}

// ---------------------------------------------------------------------------
// Curriculum invariants
// ---------------------------------------------------------------------------

proptest! {
    #[test]
    fn folds_are_a_balanced_disjoint_cover(
        n in 1usize..40,
        k in 1usize..6,
        seed in 0u64..500,
    ) {
        prop_assume!(k <= n);
        let mut rng = SplitMix64::new(seed);
        let reports: Vec<DifficultyReport> = (0..n)
            .map(|i| DifficultyReport {
                image_id: format!("img{i:03}"),
                per_class: vec![(0, rng.next_f64())],
            })
            .collect();
        let state = partition_folds(&reports, k).unwrap();
        let mut all: Vec<&String> = state.folds.iter().flatten().collect();
        let total: usize = state.folds.iter().map(Vec::len).sum();
        prop_assert_eq!(total, n);
        all.sort();
        all.dedup();
        prop_assert_eq!(all.len(), n);
        let sizes: Vec<usize> = state.folds.iter().map(Vec::len).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        // easy-to-difficult ordering between adjacent folds
        let score_of = |id: &String| {
            reports.iter().find(|r| &r.image_id == id).unwrap().overall()
        };
        for pair in state.folds.windows(2) {
            let min_prev = pair[0].iter().map(score_of).fold(f64::INFINITY, f64::min);
            let max_next = pair[1].iter().map(score_of).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(min_prev >= max_next);
        }
    }

    #[test]
    fn weighted_loss_monotonicity(c in 0.0f64..1.0, s1 in 0.01f64..1.0, s2 in 0.01f64..1.0) {
        let (lo, hi) = if s1 <= s2 { (s1, s2) } else { (s2, s1) };
        prop_assert!(weighted_loss(c, lo) >= weighted_loss(c, hi));
        prop_assert!(weighted_loss(c, lo) >= 0.0);
    }
}
