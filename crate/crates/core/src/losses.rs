//! Depth, smoothness, gradient, normal and SDF losses with analytic
//! gradients with respect to every predicted-depth pixel.
//!
//! Every term is reduced as a mean over valid pixels (or included grid
//! samples for the SDF term). A pixel is valid when it is valid in every map
//! the term compares. Sums use [`pairwise_sum`] over row-major order.

use crate::error::{Error, Result};
use crate::geometry::{depth_to_cloud_indexed, image_gradients_masked, ray_slope, GradientPair};
use crate::rng::SeededRng;
use crate::sdf::{auto_grid_spec, sample_grid, sdf_field_with_index, SdfField, SpatialIndex, DEFAULT_GRID_RESOLUTION};
use crate::types::{
    pairwise_sum, CameraIntrinsics, Point3, DepthMap, LossBreakdown, LossWeights, RgbImage, ScalarGrid,
    SdfGridSpec,
};

/// How per-pixel terms are reduced to a scalar. Only one mode exists; the
/// constant documents the contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    MeanOverValid,
}

pub const REDUCTION: Reduction = Reduction::MeanOverValid;

/// Where the SDF term samples space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GridChoice {
    /// Bounding box of the ground-truth cloud, padded, at this resolution.
    Auto([usize; 3]),
    Explicit(SdfGridSpec),
}

impl Default for GridChoice {
    fn default() -> Self {
        GridChoice::Auto(DEFAULT_GRID_RESOLUTION)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub weights: LossWeights,
    pub sdf_grid: GridChoice,
    pub reduction: Reduction,
}

impl LossConfig {
    pub fn new(weights: LossWeights, sdf_grid: GridChoice) -> Self {
        Self {
            weights,
            sdf_grid,
            reduction: REDUCTION,
        }
    }
}

impl Default for LossConfig {
    fn default() -> Self {
        Self::new(LossWeights::default(), GridChoice::default())
    }
}

/// A loss value and its gradient with respect to the predicted depth.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub gradient: ScalarGrid,
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn joint_validity(pred: &DepthMap, gt: &DepthMap) -> Result<(Vec<bool>, usize)> {
    pred.ensure_same_shape(gt)?;
    let valid: Vec<bool> = (0..pred.len())
        .map(|i| pred.is_valid(i) && gt.is_valid(i))
        .collect();
    let n = valid.iter().filter(|&&v| v).count();
    if n == 0 {
        return Err(Error::EmptyOverlap);
    }
    Ok((valid, n))
}

/// Mean absolute depth error.
pub fn loss_depth(pred: &DepthMap, gt: &DepthMap) -> Result<LossValue> {
    let (valid, n) = joint_validity(pred, gt)?;
    let inv_n = 1.0 / n as f64;
    let (p, g) = (pred.data(), gt.data());
    let mut terms = Vec::with_capacity(n);
    let mut grad = ScalarGrid::zeros(pred.width(), pred.height());
    for i in 0..p.len() {
        if valid[i] {
            let d = p[i] - g[i];
            terms.push(d.abs());
            grad.data_mut()[i] = sign(d) * inv_n;
        }
    }
    Ok(LossValue {
        value: pairwise_sum(&terms) * inv_n,
        gradient: grad,
    })
}

/// Edge weights `exp(-|grad I|)` per axis, with the image gradient magnitude
/// averaged over the three channels.
pub fn edge_weights(image: &RgbImage) -> (ScalarGrid, ScalarGrid) {
    let (w, h) = (image.width(), image.height());
    let mut wx = vec![0.0; w * h];
    let mut wy = vec![0.0; w * h];
    for r in 0..h {
        for c in 0..w {
            let here = image.pixel(r, c);
            let mean_abs = |other: [f64; 3]| {
                ((other[0] - here[0]).abs() + (other[1] - here[1]).abs() + (other[2] - here[2]).abs())
                    / 3.0
            };
            if c + 1 < w {
                wx[r * w + c] = (-mean_abs(image.pixel(r, c + 1))).exp();
            }
            if r + 1 < h {
                wy[r * w + c] = (-mean_abs(image.pixel(r + 1, c))).exp();
            }
        }
    }
    (ScalarGrid::from_vec(w, h, wx), ScalarGrid::from_vec(w, h, wy))
}

/// Scatter `coef * d(forward difference)/d(pred)` into `grad`.
#[inline]
fn scatter_diff(grad: &mut [f64], from: usize, to: usize, coef: f64) {
    grad[to] += coef;
    grad[from] -= coef;
}

/// Edge-aware smoothness: mean of `(wx gx)^2 + (wy gy)^2` over valid pixels.
pub fn loss_smooth(pred: &DepthMap, image: &RgbImage) -> Result<LossValue> {
    let (w, h) = (pred.width(), pred.height());
    if image.width() != w || image.height() != h {
        return Err(Error::ShapeMismatch(format!(
            "depth {}x{} vs image {}x{}",
            w,
            h,
            image.width(),
            image.height()
        )));
    }
    let n = pred.valid_count();
    if n == 0 {
        return Err(Error::EmptyOverlap);
    }
    let inv_n = 1.0 / n as f64;
    let g = image_gradients_masked(pred.values(), pred.mask())?;
    let (wx, wy) = edge_weights(image);
    let mut terms = Vec::with_capacity(n);
    let mut grad = ScalarGrid::zeros(w, h);
    let gd = grad.data_mut();
    for i in 0..w * h {
        if !pred.is_valid(i) {
            continue;
        }
        let ax = wx.data()[i] * g.gx.data()[i];
        let ay = wy.data()[i] * g.gy.data()[i];
        terms.push(ax * ax + ay * ay);
        if g.gx.data()[i] != 0.0 {
            scatter_diff(gd, i, i + 1, 2.0 * ax * wx.data()[i] * inv_n);
        }
        if g.gy.data()[i] != 0.0 {
            scatter_diff(gd, i, i + w, 2.0 * ay * wy.data()[i] * inv_n);
        }
    }
    Ok(LossValue {
        value: pairwise_sum(&terms) * inv_n,
        gradient: grad,
    })
}

fn pair_gradients(pred: &DepthMap, gt: &DepthMap, valid: &[bool]) -> Result<(GradientPair, GradientPair)> {
    Ok((
        image_gradients_masked(pred.values(), Some(valid))?,
        image_gradients_masked(gt.values(), Some(valid))?,
    ))
}

/// `a + b` as an unevaluated pair `(s, e)` with `s + e == a + b` exactly.
#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

/// Double-double number `hi + lo`, enough to keep the gradient loss exactly
/// piecewise linear after rounding.
#[derive(Debug, Clone, Copy, Default)]
struct Dd {
    hi: f64,
    lo: f64,
}

impl Dd {
    #[inline]
    fn diff(a: f64, b: f64) -> Self {
        let (hi, lo) = two_sum(a, -b);
        Self { hi, lo }
    }

    #[inline]
    fn add(self, o: Dd) -> Self {
        let (s, e) = two_sum(self.hi, o.hi);
        let e = e + self.lo + o.lo;
        let hi = s + e;
        Self {
            hi,
            lo: e - (hi - s),
        }
    }

    #[inline]
    fn neg(self) -> Self {
        Self {
            hi: -self.hi,
            lo: -self.lo,
        }
    }

    #[inline]
    fn abs(self) -> Self {
        if self.hi < 0.0 {
            self.neg()
        } else {
            self
        }
    }
}

/// `(pred[j] - pred[i]) - (gt[j] - gt[i])` in double-double.
#[inline]
fn diff_of_diffs(p: &[f64], g: &[f64], i: usize, j: usize) -> Dd {
    Dd::diff(p[j], p[i]).add(Dd::diff(g[j], g[i]).neg())
}

/// `mean |gx_pred - gx_gt| + mean |gy_pred - gy_gt|`.
///
/// Differences and sums are carried in double-double, so perturbing a pixel
/// whose sign terms cancel leaves the rounded value unchanged.
pub fn loss_grad(pred: &DepthMap, gt: &DepthMap) -> Result<LossValue> {
    let (valid, n) = joint_validity(pred, gt)?;
    let (w, h) = (pred.width(), pred.height());
    if w < 2 || h < 2 {
        return Err(Error::ShapeTooSmall {
            width: w,
            height: h,
            min: 2,
        });
    }
    let inv_n = 1.0 / n as f64;
    let (p, g) = (pred.data(), gt.data());
    let mut acc = Dd::default();
    let mut grad = ScalarGrid::zeros(w, h);
    let gd = grad.data_mut();
    for i in 0..w * h {
        if !valid[i] {
            continue;
        }
        let (c, r) = (i % w, i / w);
        if c + 1 < w && valid[i + 1] {
            let dx = diff_of_diffs(p, g, i, i + 1);
            acc = acc.add(dx.abs());
            scatter_diff(gd, i, i + 1, sign(dx.hi) * inv_n);
        }
        if r + 1 < h && valid[i + w] {
            let dy = diff_of_diffs(p, g, i, i + w);
            acc = acc.add(dy.abs());
            scatter_diff(gd, i, i + w, sign(dy.hi) * inv_n);
        }
    }
    Ok(LossValue {
        value: (acc.hi + acc.lo) * inv_n,
        gradient: grad,
    })
}

/// Per-pixel `1 - cos` between raw normals `(-a, -b, 1)` and `(-c, -d, 1)`,
/// plus its partial derivatives with respect to `a` and `b`.
#[inline]
pub(crate) fn normal_term(a: f64, b: f64, c: f64, d: f64) -> (f64, f64, f64) {
    let np2 = a * a + b * b + 1.0;
    let ng = (c * c + d * d + 1.0).sqrt();
    let np = np2.sqrt();
    let dot = a * c + b * d + 1.0;
    let denom = np * ng;
    let dcos_da = c / denom - dot * a / (np2 * denom);
    let dcos_db = d / denom - dot * b / (np2 * denom);
    // 1 - cos as half the squared distance between unit normals: no cancellation
    let u = [-a / np, -b / np, 1.0 / np];
    let v = [-c / ng, -d / ng, 1.0 / ng];
    let dist2 = (u[0] - v[0]).powi(2) + (u[1] - v[1]).powi(2) + (u[2] - v[2]).powi(2);
    (0.5 * dist2, -dcos_da, -dcos_db)
}

/// Mean cosine distance between predicted and ground-truth raw normals.
pub fn loss_normal(pred: &DepthMap, gt: &DepthMap) -> Result<LossValue> {
    let (valid, n) = joint_validity(pred, gt)?;
    let (w, h) = (pred.width(), pred.height());
    let inv_n = 1.0 / n as f64;
    let (gp, gg) = pair_gradients(pred, gt, &valid)?;
    let mut terms = Vec::with_capacity(n);
    let mut grad = ScalarGrid::zeros(w, h);
    let gd = grad.data_mut();
    for i in 0..w * h {
        if !valid[i] {
            continue;
        }
        let (t, da, db) = normal_term(gp.gx.data()[i], gp.gy.data()[i], gg.gx.data()[i], gg.gy.data()[i]);
        terms.push(t);
        let (c, r) = (i % w, i / w);
        if c + 1 < w && valid[i + 1] {
            scatter_diff(gd, i, i + 1, da * inv_n);
        }
        if r + 1 < h && valid[i + w] {
            scatter_diff(gd, i, i + w, db * inv_n);
        }
    }
    Ok(LossValue {
        value: pairwise_sum(&terms) * inv_n,
        gradient: grad,
    })
}

/// Ground-truth half of the SDF term: the sample grid and the ground-truth
/// field on it. Reusable for every prediction whose validity matches.
#[derive(Debug, Clone)]
pub struct SdfReference {
    validity: Vec<bool>,
    samples: Vec<Point3>,
    field: SdfField,
    cam: CameraIntrinsics,
    grid: GridChoice,
}

impl SdfReference {
    pub fn build(gt: &DepthMap, cam: &CameraIntrinsics, grid: &GridChoice) -> Result<Self> {
        let (cloud_g, _) = depth_to_cloud_indexed(gt, cam)?;
        let spec = match grid {
            GridChoice::Explicit(spec) => *spec,
            GridChoice::Auto(res) => auto_grid_spec(&cloud_g, *res)?,
        };
        let samples = sample_grid(&spec)?;
        let index_g = SpatialIndex::build(&cloud_g)?;
        let field = sdf_field_with_index(&samples, gt, cam, &index_g)?;
        Ok(Self {
            validity: gt.validity(),
            samples,
            field,
            cam: *cam,
            grid: *grid,
        })
    }

    /// The SDF loss of `pred` against this reference. `pred` must share the
    /// reference's validity mask.
    fn loss(&self, pred: &DepthMap) -> Result<LossValue> {
        let cam = &self.cam;
        let (cloud_p, pixels_p) = depth_to_cloud_indexed(pred, cam)?;
        let index_p = SpatialIndex::build(&cloud_p)?;
        let field_p = sdf_field_with_index(&self.samples, pred, cam, &index_p)?;
        let pairs: Vec<_> = field_p
            .samples
            .iter()
            .zip(&self.field.samples)
            .filter_map(|(p, g)| Some(((*p)?, (*g)?)))
            .collect();
        if pairs.is_empty() {
            return Err(Error::AllPointsOutOfFrustum {
                count: self.samples.len(),
            });
        }
        let inv_m = 1.0 / pairs.len() as f64;
        let w = pred.width();
        let mut terms = Vec::with_capacity(pairs.len());
        let mut grad = ScalarGrid::zeros(pred.width(), pred.height());
        let gd = grad.data_mut();
        for (sp, sg) in &pairs {
            let diff = sp.signed() - sg.signed();
            terms.push(diff.abs());
            if diff == 0.0 || sp.distance == 0.0 {
                continue;
            }
            let n = sp.nearest_index;
            let x = cloud_p.points[n];
            let pixel = pixels_p[n];
            let [sx, sy] = ray_slope([(pixel % w) as f64, (pixel / w) as f64], cam);
            let q = sp.position;
            let dphi_dd = ((x[0] - q[0]) * sx + (x[1] - q[1]) * sy + (x[2] - q[2])) / sp.distance;
            gd[pixel] += sign(diff) * sp.sign * dphi_dd * inv_m;
        }
        Ok(LossValue {
            value: pairwise_sum(&terms) * inv_m,
            gradient: grad,
        })
    }
}

/// Mean `|sdf_pred(X) - sdf_gt(X)|` over grid samples that project inside the
/// image. The gradient holds every sample's nearest-neighbour assignment
/// fixed and flows through the distance to the assigned predicted point,
/// then through back-projection to that point's pixel.
pub fn loss_sdf(
    pred: &DepthMap,
    gt: &DepthMap,
    cam: &CameraIntrinsics,
    grid: &GridChoice,
) -> Result<LossValue> {
    let (valid, _) = joint_validity(pred, gt)?;
    let pred = pred.remasked(valid.clone())?;
    let gt = gt.remasked(valid)?;
    SdfReference::build(&gt, cam, grid)?.loss(&pred)
}

/// [`loss_sdf`] reusing a prebuilt ground-truth half. Falls back to a full
/// evaluation when the joint validity differs from the reference's, or the
/// camera or grid choice does not match.
pub fn loss_sdf_with_reference(
    pred: &DepthMap,
    gt: &DepthMap,
    cam: &CameraIntrinsics,
    grid: &GridChoice,
    reference: &SdfReference,
) -> Result<LossValue> {
    let (valid, _) = joint_validity(pred, gt)?;
    if valid != reference.validity || *cam != reference.cam || *grid != reference.grid {
        return loss_sdf(pred, gt, cam, grid);
    }
    reference.loss(&pred.remasked(valid)?)
}

/// All five terms, the weighted total and its gradient.
pub fn loss_total(
    pred: &DepthMap,
    gt: &DepthMap,
    image: &RgbImage,
    cam: &CameraIntrinsics,
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    loss_total_with_reference(pred, gt, image, cam, cfg, None)
}

/// [`loss_total`] with an optional prebuilt SDF reference for `gt`.
pub fn loss_total_with_reference(
    pred: &DepthMap,
    gt: &DepthMap,
    image: &RgbImage,
    cam: &CameraIntrinsics,
    cfg: &LossConfig,
    sdf_reference: Option<&SdfReference>,
) -> Result<LossBreakdown> {
    let depth = loss_depth(pred, gt)?;
    let smooth = loss_smooth(pred, image)?;
    let grad = loss_grad(pred, gt)?;
    let normal = loss_normal(pred, gt)?;
    let sdf = match sdf_reference {
        Some(r) => loss_sdf_with_reference(pred, gt, cam, &cfg.sdf_grid, r)?,
        None => loss_sdf(pred, gt, cam, &cfg.sdf_grid)?,
    };
    let w = cfg.weights;
    let total = w.lambda1 * (depth.value + smooth.value)
        + w.lambda2 * (grad.value + normal.value)
        + w.lambda3 * sdf.value;
    let mut gradient = ScalarGrid::zeros(pred.width(), pred.height());
    for (i, o) in gradient.data_mut().iter_mut().enumerate() {
        *o = w.lambda1 * (depth.gradient.data()[i] + smooth.gradient.data()[i])
            + w.lambda2 * (grad.gradient.data()[i] + normal.gradient.data()[i])
            + w.lambda3 * sdf.gradient.data()[i];
    }
    Ok(LossBreakdown {
        depth: depth.value,
        smooth: smooth.value,
        grad: grad.value,
        normal: normal.value,
        sdf: sdf.value,
        weights: w,
        total,
        gradient: Some(gradient),
    })
}

/// Selects a loss for [`grad_check`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Depth,
    Smooth,
    Grad,
    Normal,
    Sdf,
    Total,
}

impl LossKind {
    pub const ALL: [LossKind; 6] = [
        LossKind::Depth,
        LossKind::Smooth,
        LossKind::Grad,
        LossKind::Normal,
        LossKind::Sdf,
        LossKind::Total,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Depth => "depth",
            LossKind::Smooth => "smooth",
            LossKind::Grad => "grad",
            LossKind::Normal => "normal",
            LossKind::Sdf => "sdf",
            LossKind::Total => "total",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

/// Everything besides the prediction that a loss may read.
#[derive(Debug, Clone)]
pub struct LossInputs {
    pub gt: DepthMap,
    pub image: RgbImage,
    pub cam: CameraIntrinsics,
    pub config: LossConfig,
}

impl LossInputs {
    pub fn evaluate(&self, kind: LossKind, pred: &DepthMap) -> Result<LossValue> {
        match kind {
            LossKind::Depth => loss_depth(pred, &self.gt),
            LossKind::Smooth => loss_smooth(pred, &self.image),
            LossKind::Grad => loss_grad(pred, &self.gt),
            LossKind::Normal => loss_normal(pred, &self.gt),
            LossKind::Sdf => loss_sdf(pred, &self.gt, &self.cam, &self.config.sdf_grid),
            LossKind::Total => {
                let b = loss_total(pred, &self.gt, &self.image, &self.cam, &self.config)?;
                Ok(LossValue {
                    value: b.total,
                    gradient: b.gradient.expect("loss_total fills the gradient"),
                })
            }
        }
    }
}

/// Finite-difference step used by [`grad_check`].
pub const GRAD_CHECK_STEP: f64 = 1e-5;

/// Largest per-pixel relative error between the analytic gradient and central
/// finite differences, `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn grad_check(kind: LossKind, pred: &DepthMap, inputs: &LossInputs) -> Result<f64> {
    let analytic = inputs.evaluate(kind, pred)?.gradient;
    let h = GRAD_CHECK_STEP;
    let mut worst: f64 = 0.0;
    let mask = pred.validity();
    let mut data = pred.data().to_vec();
    for i in 0..data.len() {
        if !mask[i] {
            continue;
        }
        let centre = data[i];
        data[i] = centre + h;
        let plus = DepthMap::with_mask(pred.width(), pred.height(), data.clone(), mask.clone())?;
        data[i] = centre - h;
        let minus = DepthMap::with_mask(pred.width(), pred.height(), data.clone(), mask.clone())?;
        data[i] = centre;
        let numeric =
            (inputs.evaluate(kind, &plus)?.value - inputs.evaluate(kind, &minus)?.value) / (2.0 * h);
        let a = analytic.data()[i];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Add uniform noise in `[-amount, amount]` to every valid pixel, keeping
/// depths positive. Moves a map off the kinks of piecewise-linear losses
/// before a gradient check.
pub fn jitter(map: &DepthMap, amount: f64, rng: &mut SeededRng) -> Result<DepthMap> {
    let data = map
        .data()
        .iter()
        .enumerate()
        .map(|(i, &d)| {
            if map.is_valid(i) {
                (d + rng.uniform(-amount, amount)).max(amount)
            } else {
                d
            }
        })
        .collect();
    DepthMap::with_mask(map.width(), map.height(), data, map.validity())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;

    fn map(w: usize, h: usize, v: &[f64]) -> DepthMap {
        DepthMap::new(w, h, v.to_vec()).unwrap()
    }

    fn random_map(w: usize, h: usize, rng: &mut SeededRng) -> DepthMap {
        DepthMap::new(w, h, (0..w * h).map(|_| rng.uniform(1.0, 2.0)).collect()).unwrap()
    }

    fn random_image(w: usize, h: usize, rng: &mut SeededRng) -> RgbImage {
        RgbImage::new(w, h, (0..w * h * 3).map(|_| rng.next_f64()).collect()).unwrap()
    }

    #[test]
    fn depth_examples() {
        let p = map(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(loss_depth(&p, &p).unwrap().value, 0.0);
        let g = map(2, 2, &[1.0, 1.0, 3.0, 3.0]);
        let l = loss_depth(&p, &g).unwrap();
        assert_eq!(l.value, 0.5);
        assert_eq!(l.gradient.data(), &[0.0, 0.25, 0.0, 0.25]);
        let shifted = p.map_values(|d| d + 0.75).unwrap();
        assert!((loss_depth(&shifted, &p).unwrap().value - 0.75).abs() < 1e-12);
    }

    #[test]
    fn depth_shape_mismatch() {
        let a = DepthMap::filled(2, 2, 1.0).unwrap();
        let b = DepthMap::filled(3, 2, 1.0).unwrap();
        assert!(matches!(loss_depth(&a, &b), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn masked_pixels_are_ignored() {
        let p = DepthMap::with_mask(2, 1, vec![1.0, 50.0], vec![true, false]).unwrap();
        let g = map(2, 1, &[2.0, 1.0]);
        let l = loss_depth(&p, &g).unwrap();
        assert_eq!(l.value, 1.0);
        assert_eq!(l.gradient.data(), &[-1.0, 0.0]);
    }

    #[test]
    fn smooth_examples() {
        let mut rng = seeded_rng(3);
        let img = random_image(3, 3, &mut rng);
        let flat = DepthMap::filled(3, 3, 2.0).unwrap();
        assert_eq!(loss_smooth(&flat, &img).unwrap().value, 0.0);

        let ramp = map(2, 2, &[1.0, 2.0, 1.0, 2.0]);
        let uniform = RgbImage::filled(2, 2, 0.3).unwrap();
        // gx = 1 at column 0, 0 elsewhere: per-pixel terms 1, 0, 1, 0.
        assert_eq!(loss_smooth(&ramp, &uniform).unwrap().value, 0.5);

        let mut edge = vec![0.0; 12];
        for px in [1, 3] {
            edge[px * 3..px * 3 + 3].copy_from_slice(&[1.0, 1.0, 1.0]);
        }
        let edged = RgbImage::new(2, 2, edge).unwrap();
        assert!(loss_smooth(&ramp, &edged).unwrap().value < 0.5);
    }

    #[test]
    fn grad_examples() {
        let p = map(2, 2, &[1.0, 2.0, 1.0, 2.0]);
        let g = DepthMap::filled(2, 2, 1.0).unwrap();
        assert_eq!(loss_grad(&p, &g).unwrap().value, 0.5);
        let shifted = p.map_values(|d| d + 3.0).unwrap();
        assert_eq!(loss_grad(&shifted, &p).unwrap().value, 0.0);
        assert_eq!(loss_grad(&p, &p).unwrap().value, 0.0);
    }

    #[test]
    fn normal_term_examples() {
        let (t, _, _) = normal_term(1.0, 0.0, 0.0, 0.0);
        assert!((t - (1.0 - 1.0 / 2f64.sqrt())).abs() < 1e-15);
        assert!((t - 0.29289).abs() < 1e-5);
        let (t, _, _) = normal_term(1e8, 0.0, -1e8, 0.0);
        assert!((t - 2.0).abs() < 1e-12);
    }

    #[test]
    fn normal_loss_offset_invariant() {
        let mut rng = seeded_rng(5);
        let p = random_map(5, 4, &mut rng);
        let shifted = p.map_values(|d| d + 0.5).unwrap();
        assert!(loss_normal(&shifted, &p).unwrap().value < 1e-12);
        assert_eq!(loss_normal(&p, &p).unwrap().value, 0.0);
        let tiny = DepthMap::filled(1, 2, 1.0).unwrap();
        assert!(matches!(loss_normal(&tiny, &tiny), Err(Error::ShapeTooSmall { .. })));
    }

    #[test]
    fn sdf_reference_matches_full_evaluation() {
        let mut rng = seeded_rng(21);
        let gt = random_map(7, 6, &mut rng);
        let pred = random_map(7, 6, &mut rng);
        let cam = CameraIntrinsics::default_for(7, 6);
        let grid = GridChoice::Auto([6, 6, 6]);
        let reference = SdfReference::build(&gt, &cam, &grid).unwrap();
        let a = loss_sdf(&pred, &gt, &cam, &grid).unwrap();
        let b = loss_sdf_with_reference(&pred, &gt, &cam, &grid, &reference).unwrap();
        assert_eq!(a, b);
        let masked = DepthMap::with_mask(7, 6, pred.data().to_vec(), (0..42).map(|i| i != 3).collect()).unwrap();
        let a = loss_sdf(&masked, &gt, &cam, &grid).unwrap();
        let b = loss_sdf_with_reference(&masked, &gt, &cam, &grid, &reference).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sdf_zero_when_equal() {
        let mut rng = seeded_rng(9);
        let p = random_map(6, 6, &mut rng);
        let cam = CameraIntrinsics::default_for(6, 6);
        let l = loss_sdf(&p, &p, &cam, &GridChoice::Auto([6, 6, 6])).unwrap();
        assert_eq!(l.value, 0.0);
        assert!(l.gradient.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn total_is_weighted_sum() {
        let mut rng = seeded_rng(12);
        let p = random_map(6, 6, &mut rng);
        let g = random_map(6, 6, &mut rng);
        let img = random_image(6, 6, &mut rng);
        let cam = CameraIntrinsics::default_for(6, 6);
        let cfg = LossConfig::new(LossWeights::new(1.0, 0.5, 0.1).unwrap(), GridChoice::Auto([6, 6, 6]));
        let b = loss_total(&p, &g, &img, &cam, &cfg).unwrap();
        assert!((b.weighted_total() - b.total).abs() <= 1e-12 * b.total.abs());

        let only_first = LossConfig::new(LossWeights::new(1.0, 0.0, 0.0).unwrap(), cfg.sdf_grid);
        let b1 = loss_total(&p, &g, &img, &cam, &only_first).unwrap();
        assert_eq!(b1.total, b1.depth + b1.smooth);

        let same = loss_total(&g, &g, &img, &cam, &cfg).unwrap();
        assert_eq!(same.total, cfg.weights.lambda1 * loss_smooth(&g, &img).unwrap().value);
    }

    #[test]
    fn grad_check_small_maps() {
        let mut rng = seeded_rng(21);
        let gt = random_map(5, 5, &mut rng);
        let pred = jitter(&random_map(5, 5, &mut rng), 1e-3, &mut rng).unwrap();
        let inputs = LossInputs {
            gt,
            image: random_image(5, 5, &mut rng),
            cam: CameraIntrinsics::default_for(5, 5),
            config: LossConfig::new(LossWeights::default(), GridChoice::Auto([5, 5, 5])),
        };
        for kind in [LossKind::Depth, LossKind::Smooth, LossKind::Normal] {
            let err = grad_check(kind, &pred, &inputs).unwrap();
            assert!(err < 1e-4, "{kind:?}: {err}");
        }
    }

    #[test]
    fn loss_kind_names_round_trip() {
        for k in LossKind::ALL {
            assert_eq!(LossKind::parse(k.name()), Some(k));
        }
        assert_eq!(LossKind::parse("nope"), None);
    }
}
