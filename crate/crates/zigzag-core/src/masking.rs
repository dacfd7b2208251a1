//! Feature-grid masking regularization.
//!
//! A random sub-region of a mined object (same aspect ratio, area ratio
//! `tau`) is projected onto the convolutional feature grid and its cells are
//! zeroed across all channels. Pixel-to-cell projection follows
//! `u' = round((u - 1) / stride + 1)` on 1-based pixel coordinates, with
//! round-half-away-from-zero breaking the .5 ties.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use crate::model::BBox;
use crate::rng::SplitMix64;

/// Default pixels-per-cell stride of the feature grid.
pub const DEFAULT_STRIDE: u32 = 16;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum MaskError {
    #[error("masking ratio {0} outside [0, 1)")]
    InvalidRatio(f64),
    #[error("object box has zero area")]
    ZeroAreaObject,
    #[error("stride must be at least 1")]
    InvalidStride,
    #[error("feature grid expects {expected} values, got {actual}")]
    GridShapeMismatch { expected: usize, actual: usize },
}

/// Dense feature tensor on a strided grid: `channels` planes of
/// `height x width` cells, row-major within each plane.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    /// Pixels per cell.
    pub stride: u32,
    values: Vec<f64>,
}

impl FeatureGrid {
    pub fn new(
        width: usize,
        height: usize,
        channels: usize,
        stride: u32,
        values: Vec<f64>,
    ) -> Result<Self, MaskError> {
        if stride == 0 {
            return Err(MaskError::InvalidStride);
        }
        let expected = width * height * channels;
        if values.len() != expected {
            return Err(MaskError::GridShapeMismatch { expected, actual: values.len() });
        }
        Ok(Self { width, height, channels, stride, values })
    }

    /// Grid sized to cover a `width x height` pixel image: ceil(dim / stride)
    /// cells so every pixel maps inside the grid.
    pub fn for_image(
        image_width: f64,
        image_height: f64,
        channels: usize,
        stride: u32,
    ) -> Result<Self, MaskError> {
        if stride == 0 {
            return Err(MaskError::InvalidStride);
        }
        let w = libm::ceil(image_width / stride as f64).max(1.0) as usize;
        let h = libm::ceil(image_height / stride as f64).max(1.0) as usize;
        Ok(Self { width: w, height: h, channels, stride, values: alloc::vec![0.0; w * h * channels] })
    }

    pub fn get(&self, channel: usize, x: usize, y: usize) -> f64 {
        self.values[(channel * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, channel: usize, x: usize, y: usize, value: f64) {
        self.values[(channel * self.height + y) * self.width + x] = value;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Project a 1-based pixel coordinate onto 1-based feature coordinates.
pub fn map_pixel_to_feature(u: u32, v: u32, stride: u32) -> (u32, u32) {
    (map_axis(u, stride), map_axis(v, stride))
}

fn map_axis(p: u32, stride: u32) -> u32 {
    // round((p - 1) / stride + 1), rounding halves away from zero; the
    // argument is always >= 1 so libm::round's half-away behavior applies
    // on the positive side only.
    libm::round((p - 1) as f64 / stride as f64 + 1.0) as u32
}

/// A planned mask: the selected sub-region in image coordinates and the
/// feature cells (1-based) it touches.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskPlan {
    pub image_id: String,
    pub class_index: usize,
    pub omega: BBox,
    pub mapped_cells: BTreeSet<(u32, u32)>,
}

impl MaskPlan {
    /// Plan with no cells; applying it is the identity.
    pub fn empty(image_id: String, class_index: usize, anchor: &BBox) -> Self {
        Self {
            image_id,
            class_index,
            omega: BBox {
                x_min: anchor.x_min,
                y_min: anchor.y_min,
                x_max: anchor.x_min,
                y_max: anchor.y_min,
            },
            mapped_cells: BTreeSet::new(),
        }
    }

    /// How many planned cells fall outside `grid`; they are skipped when the
    /// plan is applied, and callers log the count.
    pub fn cells_outside(&self, grid: &FeatureGrid) -> usize {
        self.mapped_cells
            .iter()
            .filter(|&&(u, v)| u as usize > grid.width || v as usize > grid.height)
            .count()
    }
}

/// Pick a sub-region of `obj` with area ratio `tau` and the same aspect
/// ratio (both up to one-pixel rounding), positioned uniformly inside the
/// object's pixel footprint, and project it onto the feature grid.
///
/// `tau = 0` yields an empty plan. Side lengths floor at one pixel.
pub fn plan_mask(
    image_id: &str,
    class_index: usize,
    obj: &BBox,
    tau: f64,
    stride: u32,
    rng: &mut SplitMix64,
) -> Result<MaskPlan, MaskError> {
    if !(0.0..1.0).contains(&tau) {
        return Err(MaskError::InvalidRatio(tau));
    }
    if stride == 0 {
        return Err(MaskError::InvalidStride);
    }
    if obj.area() <= 0.0 {
        return Err(MaskError::ZeroAreaObject);
    }
    if tau == 0.0 {
        return Ok(MaskPlan::empty(String::from(image_id), class_index, obj));
    }

    // Pixel footprint of the object: 1-based columns floor(x_min)+1 ..= ceil(x_max).
    let col_first = libm::floor(obj.x_min) as i64 + 1;
    let col_last = libm::ceil(obj.x_max) as i64;
    let row_first = libm::floor(obj.y_min) as i64 + 1;
    let row_last = libm::ceil(obj.y_max) as i64;
    let obj_cols = (col_last - col_first + 1).max(1) as u64;
    let obj_rows = (row_last - row_first + 1).max(1) as u64;

    let scale = libm::sqrt(tau);
    let omega_cols = (libm::round(obj_cols as f64 * scale) as u64).clamp(1, obj_cols);
    let omega_rows = (libm::round(obj_rows as f64 * scale) as u64).clamp(1, obj_rows);

    let offset_x = rng.next_below(obj_cols - omega_cols + 1);
    let offset_y = rng.next_below(obj_rows - omega_rows + 1);
    let u_first = (col_first as u64 + offset_x) as u32;
    let v_first = (row_first as u64 + offset_y) as u32;
    let u_last = u_first + omega_cols as u32 - 1;
    let v_last = v_first + omega_rows as u32 - 1;

    let mut mapped_cells = BTreeSet::new();
    for v in v_first..=v_last {
        for u in u_first..=u_last {
            mapped_cells.insert(map_pixel_to_feature(u, v, stride));
        }
    }

    let omega = BBox {
        x_min: (u_first - 1) as f64,
        y_min: (v_first - 1) as f64,
        x_max: u_last as f64,
        y_max: v_last as f64,
    };
    Ok(MaskPlan { image_id: String::from(image_id), class_index, omega, mapped_cells })
}

/// Zero the planned cells across every channel; everything else is copied
/// bit-for-bit. Cells outside the grid are skipped.
pub fn apply_mask(grid: &FeatureGrid, plan: &MaskPlan) -> FeatureGrid {
    let mut out = grid.clone();
    for &(u, v) in &plan.mapped_cells {
        let (x, y) = (u as usize - 1, v as usize - 1);
        if x >= grid.width || y >= grid.height {
            continue;
        }
        for channel in 0..grid.channels {
            out.set(channel, x, y, 0.0);
        }
    }
    out
}

/// Apply several plans in sequence.
pub fn apply_masks(grid: &FeatureGrid, plans: &[MaskPlan]) -> FeatureGrid {
    let mut out = grid.clone();
    for plan in plans {
        out = apply_mask(&out, plan);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn bx(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
        BBox::new(x0, y0, x1, y1).unwrap()
    }

    #[test]
    fn mapping_fixtures() {
        assert_eq!(map_pixel_to_feature(1, 1, 16), (1, 1));
        assert_eq!(map_pixel_to_feature(17, 17, 16), (2, 2));
        // (9 - 1)/16 + 1 = 1.5 rounds away from zero to 2
        assert_eq!(map_pixel_to_feature(9, 1, 16), (2, 1));
        assert_eq!(map_pixel_to_feature(8, 1, 16), (1, 1));
    }

    #[test]
    fn tau_zero_is_empty() {
        let mut rng = SplitMix64::new(1);
        let plan = plan_mask("img", 0, &bx(1.0, 1.0, 33.0, 33.0), 0.0, 16, &mut rng).unwrap();
        assert!(plan.mapped_cells.is_empty());
        let grid = FeatureGrid::new(4, 4, 2, 16, vec![1.0; 32]).unwrap();
        assert_eq!(apply_mask(&grid, &plan), grid);
    }

    #[test]
    fn tau_quarter_on_32px_object() {
        // 32x32 object footprint, tau 0.25 -> 16x16 region; through a
        // stride-16 map it covers 1, 2, or 4 cells depending on placement.
        let obj = bx(1.0, 1.0, 33.0, 33.0);
        let mut seen = BTreeSet::new();
        for seed in 0..200 {
            let mut rng = SplitMix64::new(seed);
            let plan = plan_mask("img", 0, &obj, 0.25, 16, &mut rng).unwrap();
            // aspect preserved: square object, square omega
            assert!((plan.omega.width() - 16.0).abs() < 1e-9);
            assert!((plan.omega.height() - 16.0).abs() < 1e-9);
            // verify against the per-pixel oracle
            let mut oracle = BTreeSet::new();
            let (u0, v0) = (plan.omega.x_min as u32 + 1, plan.omega.y_min as u32 + 1);
            for v in v0..v0 + 16 {
                for u in u0..u0 + 16 {
                    oracle.insert(map_pixel_to_feature(u, v, 16));
                }
            }
            assert_eq!(plan.mapped_cells, oracle);
            seen.insert(plan.mapped_cells.len());
        }
        for count in &seen {
            assert!([1, 2, 4].contains(count), "unexpected cell count {count}");
        }
        assert!(seen.contains(&4));
    }

    #[test]
    fn aspect_ratio_preserved() {
        let mut rng = SplitMix64::new(9);
        let plan = plan_mask("img", 0, &bx(0.0, 0.0, 64.0, 32.0), 0.25, 16, &mut rng).unwrap();
        assert!((plan.omega.width() - 32.0).abs() < 1e-9);
        assert!((plan.omega.height() - 16.0).abs() < 1e-9);
    }

    #[test]
    fn omega_stays_inside_object_footprint() {
        let obj = bx(5.0, 3.0, 47.0, 29.0);
        for seed in 0..100 {
            let mut rng = SplitMix64::new(seed);
            let plan = plan_mask("img", 0, &obj, 0.4, 16, &mut rng).unwrap();
            assert!(plan.omega.x_min >= libm::floor(obj.x_min));
            assert!(plan.omega.y_min >= libm::floor(obj.y_min));
            assert!(plan.omega.x_max <= libm::ceil(obj.x_max));
            assert!(plan.omega.y_max <= libm::ceil(obj.y_max));
            let ratio = plan.omega.area() / (libm::ceil(obj.x_max) - libm::floor(obj.x_min))
                / (libm::ceil(obj.y_max) - libm::floor(obj.y_min));
            assert!((ratio - 0.4).abs() < 0.1, "pixel-rounded ratio {ratio}");
        }
    }

    #[test]
    fn seed_determinism() {
        let obj = bx(0.0, 0.0, 50.0, 40.0);
        let a = plan_mask("img", 1, &obj, 0.3, 16, &mut SplitMix64::new(77)).unwrap();
        let b = plan_mask("img", 1, &obj, 0.3, 16, &mut SplitMix64::new(77)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_inputs() {
        let mut rng = SplitMix64::new(0);
        assert_eq!(
            plan_mask("img", 0, &bx(0.0, 0.0, 10.0, 10.0), 1.0, 16, &mut rng).unwrap_err(),
            MaskError::InvalidRatio(1.0)
        );
        assert_eq!(
            plan_mask("img", 0, &bx(5.0, 5.0, 5.0, 5.0), 0.5, 16, &mut rng).unwrap_err(),
            MaskError::ZeroAreaObject
        );
    }

    #[test]
    fn apply_zeroes_exactly_planned_cells() {
        let grid = FeatureGrid::new(4, 3, 2, 16, (0..24).map(|i| i as f64 + 1.0).collect()).unwrap();
        let mut plan = MaskPlan::empty(String::from("img"), 0, &bx(0.0, 0.0, 1.0, 1.0));
        plan.mapped_cells.insert((1, 1));
        plan.mapped_cells.insert((3, 2));
        let masked = apply_mask(&grid, &plan);
        for channel in 0..2 {
            for y in 0..3 {
                for x in 0..4 {
                    let expected = if (x, y) == (0, 0) || (x, y) == (2, 1) {
                        0.0
                    } else {
                        grid.get(channel, x, y)
                    };
                    assert_eq!(masked.get(channel, x, y), expected);
                }
            }
        }
    }

    #[test]
    fn apply_is_idempotent_and_clips() {
        let grid = FeatureGrid::new(2, 2, 1, 16, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut plan = MaskPlan::empty(String::from("img"), 0, &bx(0.0, 0.0, 1.0, 1.0));
        plan.mapped_cells.insert((2, 2));
        plan.mapped_cells.insert((9, 9)); // outside, clipped
        assert_eq!(plan.cells_outside(&grid), 1);
        let once = apply_mask(&grid, &plan);
        let twice = apply_mask(&once, &plan);
        assert_eq!(once, twice);
        assert_eq!(once.values(), &[1.0, 2.0, 3.0, 0.0]);
    }

    #[test]
    fn coverage_for_large_objects() {
        // any object at least stride^2 in area must hit at least one cell
        for seed in 0..50 {
            let mut rng = SplitMix64::new(seed);
            let plan = plan_mask("img", 0, &bx(4.0, 8.0, 24.0, 28.0), 0.2, 16, &mut rng).unwrap();
            assert!(!plan.mapped_cells.is_empty());
        }
    }
}
