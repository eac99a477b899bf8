//! Shared domain types.
//!
//! Images are row-major with pixel `(u, v) = (column, row)` stored at
//! `v * width + u`. Pixel centres sit at integer coordinates; there is no
//! half-pixel offset anywhere in the crate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point or vector in camera (or world) coordinates.
pub type Point3 = [f64; 3];

/// Smallest depth the synthetic renderer emits.
pub const MIN_DEPTH: f64 = 0.01;
/// Largest depth the synthetic renderer emits; rays that miss the wall are
/// clamped here.
pub const MAX_DEPTH: f64 = 100.0;

/// Default cap on `rx * ry * rz` for SDF sample grids.
pub const DEFAULT_MAX_GRID_SAMPLES: usize = 1 << 20;

/// Unconstrained H x W grid of scalars: image gradients, loss gradients,
/// anything that may be negative.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarGrid {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl ScalarGrid {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} grid needs {} values, got {}",
                width,
                height,
                width * height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub(crate) fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), width * height);
        Self {
            width,
            height,
            data,
        }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }
}

/// H x W depth map in simulation units with an optional validity mask.
///
/// Construction validates: length matches the shape, and every valid value is
/// finite and strictly positive. Masked pixels may hold anything.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    values: ScalarGrid,
    mask: Option<Vec<bool>>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        validate_parts(width, height, &data, None)?;
        Ok(Self {
            values: ScalarGrid {
                width,
                height,
                data,
            },
            mask: None,
        })
    }

    /// `mask[i] == true` marks pixel `i` as valid.
    pub fn with_mask(width: usize, height: usize, data: Vec<f64>, mask: Vec<bool>) -> Result<Self> {
        validate_parts(width, height, &data, Some(&mask))?;
        let mask = if mask.iter().all(|&m| m) {
            None
        } else {
            Some(mask)
        };
        Ok(Self {
            values: ScalarGrid {
                width,
                height,
                data,
            },
            mask,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.values.width
    }

    pub fn height(&self) -> usize {
        self.values.height
    }

    pub fn len(&self) -> usize {
        self.values.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.values.data
    }

    pub fn values(&self) -> &ScalarGrid {
        &self.values
    }

    pub fn mask(&self) -> Option<&[bool]> {
        self.mask.as_deref()
    }

    #[inline]
    pub fn is_valid(&self, index: usize) -> bool {
        self.mask.as_ref().is_none_or(|m| m[index])
    }

    /// Per-pixel validity, materialised.
    pub fn validity(&self) -> Vec<bool> {
        match &self.mask {
            Some(m) => m.clone(),
            None => vec![true; self.len()],
        }
    }

    pub fn valid_count(&self) -> usize {
        match &self.mask {
            Some(m) => m.iter().filter(|&&v| v).count(),
            None => self.len(),
        }
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.values.at(row, col)
    }

    pub fn same_shape(&self, other: &DepthMap) -> bool {
        self.width() == other.width() && self.height() == other.height()
    }

    pub(crate) fn ensure_same_shape(&self, other: &DepthMap) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "{}x{} vs {}x{}",
                self.width(),
                self.height(),
                other.width(),
                other.height()
            )))
        }
    }

    /// Replace the mask (keeping values). Fails if a newly valid pixel is not
    /// a positive finite depth.
    pub fn remasked(&self, mask: Vec<bool>) -> Result<Self> {
        Self::with_mask(self.width(), self.height(), self.values.data.clone(), mask)
    }

    /// Apply `f` to every pixel value, keeping the mask.
    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        let data = self.values.data.iter().map(|&d| f(d)).collect();
        Self::with_mask(self.width(), self.height(), data, self.validity())
    }

    pub fn into_parts(self) -> (ScalarGrid, Option<Vec<bool>>) {
        (self.values, self.mask)
    }
}

fn validate_parts(width: usize, height: usize, data: &[f64], mask: Option<&[bool]>) -> Result<()> {
    if data.len() != width * height {
        return Err(Error::ShapeMismatch(format!(
            "{}x{} depth map needs {} values, got {}",
            width,
            height,
            width * height,
            data.len()
        )));
    }
    if let Some(mask) = mask {
        if mask.len() != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "mask has {} entries for {} pixels",
                mask.len(),
                data.len()
            )));
        }
    }
    for (index, &value) in data.iter().enumerate() {
        if mask.is_some_and(|m| !m[index]) {
            continue;
        }
        if !value.is_finite() {
            return Err(Error::NonFiniteValue { index });
        }
        if value <= 0.0 {
            return Err(Error::NonPositiveDepth { index, value });
        }
    }
    Ok(())
}

/// Re-check every depth-map invariant. Idempotent.
pub fn validate_depth_map(map: DepthMap) -> Result<DepthMap> {
    validate_parts(map.width(), map.height(), map.data(), map.mask())?;
    Ok(map)
}

/// Three-channel image with interleaved values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} rgb image needs {} values, got {}",
                width,
                height,
                width * height * 3,
                data.len()
            )));
        }
        if let Some(index) = data.iter().position(|v| !(0.0..=1.0).contains(v)) {
            if !data[index].is_finite() {
                return Err(Error::NonFiniteValue { index });
            }
            return Err(Error::ValueOutOfRange {
                index,
                value: data[index],
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height * 3])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> [f64; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Rec. 601 luma averaged over all pixels.
    pub fn mean_luminance(&self) -> f64 {
        let lum: Vec<f64> = self
            .data
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
            .collect();
        pairwise_sum(&lum) / lum.len().max(1) as f64
    }
}

/// Ideal pinhole camera. `u = fx * X / Z + cx`, `v = fy * Y / Z + cy`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(Error::InvalidIntrinsics(format!(
                "focal lengths must be positive and finite, got fx={fx} fy={fy}"
            )));
        }
        if !(cx.is_finite() && cy.is_finite()) {
            return Err(Error::InvalidIntrinsics(
                "principal point must be finite".into(),
            ));
        }
        Ok(Self { fx, fy, cx, cy })
    }

    /// 90 degree field of view with the principal point at pixel
    /// `(width / 2, height / 2)`.
    pub fn default_for(width: usize, height: usize) -> Self {
        Self {
            fx: width as f64 / 2.0,
            fy: height as f64 / 2.0,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
        }
    }
}

/// Points in the camera frame.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        for (i, p) in points.iter().enumerate() {
            if !p.iter().all(|c| c.is_finite()) {
                return Err(Error::NonFiniteValue { index: i });
            }
        }
        Ok(Self { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Axis-aligned bounding box, `None` for an empty cloud.
    pub fn bounds(&self) -> Option<(Point3, Point3)> {
        let first = *self.points.first()?;
        let mut lo = first;
        let mut hi = first;
        for p in &self.points[1..] {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        Some((lo, hi))
    }
}

/// The three weights of the total loss: `lambda1` scales depth + smoothness,
/// `lambda2` gradient + normal, `lambda3` the SDF term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl LossWeights {
    pub fn new(lambda1: f64, lambda2: f64, lambda3: f64) -> Result<Self> {
        let w = [lambda1, lambda2, lambda3];
        if w.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(Error::InvalidWeights(format!(
                "weights must be finite and non-negative, got {w:?}"
            )));
        }
        if w.iter().all(|&l| l == 0.0) {
            return Err(Error::InvalidWeights("all weights are zero".into()));
        }
        Ok(Self {
            lambda1,
            lambda2,
            lambda3,
        })
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 0.5,
            lambda3: 0.1,
        }
    }
}

/// Regular 3D sample grid between `lower` and `upper` with `resolution`
/// samples per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SdfGridSpec {
    pub lower: Point3,
    pub upper: Point3,
    pub resolution: [usize; 3],
}

impl SdfGridSpec {
    pub fn new(lower: Point3, upper: Point3, resolution: [usize; 3]) -> Result<Self> {
        Self::with_max_samples(lower, upper, resolution, DEFAULT_MAX_GRID_SAMPLES)
    }

    pub fn with_max_samples(
        lower: Point3,
        upper: Point3,
        resolution: [usize; 3],
        max_samples: usize,
    ) -> Result<Self> {
        if resolution.iter().any(|&r| r < 2) {
            return Err(Error::ResolutionTooSmall(resolution));
        }
        let finite = lower.iter().chain(upper.iter()).all(|c| c.is_finite());
        if !finite || (0..3).any(|a| upper[a] <= lower[a]) {
            return Err(Error::InvalidBounds { lower, upper });
        }
        let count = resolution
            .iter()
            .try_fold(1usize, |acc, &r| acc.checked_mul(r))
            .unwrap_or(usize::MAX);
        if count > max_samples {
            return Err(Error::GridTooLarge {
                count,
                max: max_samples,
            });
        }
        Ok(Self {
            lower,
            upper,
            resolution,
        })
    }

    pub fn sample_count(&self) -> usize {
        self.resolution.iter().product()
    }
}

/// The five loss terms, their weighted total and (optionally) the gradient
/// of the total with respect to every predicted-depth pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub depth: f64,
    pub smooth: f64,
    pub grad: f64,
    pub normal: f64,
    pub sdf: f64,
    pub weights: LossWeights,
    pub total: f64,
    pub gradient: Option<ScalarGrid>,
}

impl LossBreakdown {
    /// `lambda1 (depth + smooth) + lambda2 (grad + normal) + lambda3 sdf`.
    pub fn weighted_total(&self) -> f64 {
        let w = &self.weights;
        w.lambda1 * (self.depth + self.smooth)
            + w.lambda2 * (self.grad + self.normal)
            + w.lambda3 * self.sdf
    }

    /// Key/value pairs in the fixed order used by the CLI.
    pub fn entries(&self) -> [(&'static str, f64); 9] {
        [
            ("depth", self.depth),
            ("smooth", self.smooth),
            ("grad", self.grad),
            ("normal", self.normal),
            ("sdf", self.sdf),
            ("lambda1", self.weights.lambda1),
            ("lambda2", self.weights.lambda2),
            ("lambda3", self.weights.lambda3),
            ("total", self.total),
        ]
    }
}

/// Pairwise (cascade) summation with a fixed split, so the result depends
/// only on the order of `values`, never on thread count.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 8;
    if values.len() <= LEAF {
        return values.iter().fold(0.0, |acc, &v| acc + v);
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accepts_positive_map() {
        let m = DepthMap::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(m.valid_count(), 4);
    }

    #[test]
    fn rejects_negative_pixel_with_index() {
        match DepthMap::new(2, 2, vec![1.0, -2.0, 3.0, 4.0]) {
            Err(Error::NonPositiveDepth { index, .. }) => assert_eq!(index, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_short_data() {
        assert!(matches!(
            DepthMap::new(2, 2, vec![1.0, 2.0, 3.0]),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn rejects_nan() {
        assert!(matches!(
            DepthMap::new(2, 1, vec![1.0, f64::NAN]),
            Err(Error::NonFiniteValue { index: 1 })
        ));
    }

    #[test]
    fn masked_pixels_skip_validation() {
        let m = DepthMap::with_mask(2, 1, vec![-1.0, 2.0], vec![false, true]).unwrap();
        assert!(!m.is_valid(0));
        assert_eq!(m.valid_count(), 1);
    }

    #[test]
    fn all_true_mask_is_dropped() {
        let m = DepthMap::with_mask(2, 1, vec![1.0, 2.0], vec![true, true]).unwrap();
        assert!(m.mask().is_none());
    }

    #[test]
    fn validate_is_idempotent() {
        let m = DepthMap::with_mask(2, 2, vec![1.0, 0.0, 3.0, 4.0], vec![true, false, true, true])
            .unwrap();
        let once = validate_depth_map(m.clone()).unwrap();
        let twice = validate_depth_map(once.clone()).unwrap();
        assert_eq!(once, twice);
        assert_eq!(once, m);
    }

    #[test]
    fn weights_reject_all_zero_and_negative() {
        assert!(LossWeights::new(0.0, 0.0, 0.0).is_err());
        assert!(LossWeights::new(-1.0, 1.0, 0.0).is_err());
        assert!(LossWeights::new(1.0, 0.0, 0.0).is_ok());
    }

    #[test]
    fn grid_spec_checks() {
        assert!(matches!(
            SdfGridSpec::new([0.0; 3], [1.0; 3], [1, 2, 2]),
            Err(Error::ResolutionTooSmall(_))
        ));
        assert!(matches!(
            SdfGridSpec::new([0.0; 3], [2.0, 0.0, 0.0], [2, 2, 2]),
            Err(Error::InvalidBounds { .. })
        ));
        assert!(matches!(
            SdfGridSpec::new([0.0; 3], [1.0; 3], [1024, 1024, 2]),
            Err(Error::GridTooLarge { .. })
        ));
    }

    #[test]
    fn pairwise_sum_matches_naive_on_integers() {
        let v: Vec<f64> = (1..=1000).map(f64::from).collect();
        assert_eq!(pairwise_sum(&v), 500_500.0);
        assert_eq!(pairwise_sum(&[]), 0.0);
    }

    #[test]
    fn breakdown_total_matches_parts() {
        let b = LossBreakdown {
            depth: 0.3,
            smooth: 0.1,
            grad: 0.2,
            normal: 0.05,
            sdf: 0.7,
            weights: LossWeights::default(),
            total: 1.0 * 0.4 + 0.5 * 0.25 + 0.1 * 0.7,
            gradient: None,
        };
        assert!((b.weighted_total() - b.total).abs() <= 1e-12 * b.total);
    }
}
