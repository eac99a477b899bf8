//! Pinhole projection, finite-difference gradients, normals and shape index.
//!
//! Gradients use forward differences, `gx[r][c] = m[r][c + 1] - m[r][c]`,
//! with the last column (for `gx`) and last row (for `gy`) set to zero.

use std::f64::consts::FRAC_2_PI;

use crate::error::{Error, Result};
use crate::types::{CameraIntrinsics, DepthMap, Point3, PointCloud, ScalarGrid};

/// Forward-difference gradients of a 2D grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientPair {
    pub gx: ScalarGrid,
    pub gy: ScalarGrid,
}

/// Raw (unnormalised) per-pixel normals `(-gx, -gy, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalMap {
    width: usize,
    height: usize,
    data: Vec<Point3>,
}

impl NormalMap {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[Point3] {
        &self.data
    }

    pub fn at(&self, row: usize, col: usize) -> Point3 {
        self.data[row * self.width + col]
    }
}

/// Koenderink-style shape index in `[-1, 1]`; +1 is a cap facing the camera,
/// -1 a cup, +-0.5 ridge / rut, 0 a saddle.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeIndexMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
    valid: Vec<bool>,
}

impl ShapeIndexMap {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    /// `None` for border, masked and (non-cap/cup) umbilical pixels.
    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        let i = row * self.width + col;
        self.valid[i].then_some(self.values[i])
    }
}

fn ensure_min_size(width: usize, height: usize, min: usize) -> Result<()> {
    if width < min || height < min {
        Err(Error::ShapeTooSmall { width, height, min })
    } else {
        Ok(())
    }
}

pub fn image_gradients(map: &ScalarGrid) -> Result<GradientPair> {
    image_gradients_masked(map, None)
}

/// Like [`image_gradients`], but a difference is zero unless both of its
/// pixels are valid.
pub fn image_gradients_masked(map: &ScalarGrid, validity: Option<&[bool]>) -> Result<GradientPair> {
    let (w, h) = (map.width(), map.height());
    ensure_min_size(w, h, 2)?;
    let m = map.data();
    let ok = |i: usize| validity.is_none_or(|v| v[i]);
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            if c + 1 < w && ok(i) && ok(i + 1) {
                gx[i] = m[i + 1] - m[i];
            }
            if r + 1 < h && ok(i) && ok(i + w) {
                gy[i] = m[i + w] - m[i];
            }
        }
    }
    Ok(GradientPair {
        gx: ScalarGrid::new(w, h, gx)?,
        gy: ScalarGrid::new(w, h, gy)?,
    })
}

/// Pinhole projection of a camera-frame point to pixel `(u, v)`.
pub fn project(point: Point3, cam: &CameraIntrinsics) -> Result<[f64; 2]> {
    let [x, y, z] = point;
    if !(z > 0.0) {
        return Err(Error::BehindCamera { z });
    }
    Ok([cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy])
}

/// Lift pixel `(u, v)` with depth `depth` (distance along Z) to the camera frame.
pub fn back_project(pixel: [f64; 2], depth: f64, cam: &CameraIntrinsics) -> Result<Point3> {
    if !(depth > 0.0) {
        return Err(Error::NonPositiveDepth { index: 0, value: depth });
    }
    let [dx, dy] = ray_slope(pixel, cam);
    Ok([dx * depth, dy * depth, depth])
}

/// `d X / d depth` for a back-projected pixel: `((u - cx) / fx, (v - cy) / fy, 1)`.
#[inline]
pub(crate) fn ray_slope(pixel: [f64; 2], cam: &CameraIntrinsics) -> [f64; 2] {
    [(pixel[0] - cam.cx) / cam.fx, (pixel[1] - cam.cy) / cam.fy]
}

/// One point per valid pixel, in row-major order.
pub fn depth_to_cloud(map: &DepthMap, cam: &CameraIntrinsics) -> Result<PointCloud> {
    Ok(depth_to_cloud_indexed(map, cam)?.0)
}

/// [`depth_to_cloud`] plus the pixel index each point came from.
pub fn depth_to_cloud_indexed(
    map: &DepthMap,
    cam: &CameraIntrinsics,
) -> Result<(PointCloud, Vec<usize>)> {
    let w = map.width();
    let mut points = Vec::with_capacity(map.valid_count());
    let mut pixels = Vec::with_capacity(map.valid_count());
    for (i, &d) in map.data().iter().enumerate() {
        if !map.is_valid(i) {
            continue;
        }
        let pixel = [(i % w) as f64, (i / w) as f64];
        let p = back_project(pixel, d, cam).map_err(|_| Error::NonPositiveDepth { index: i, value: d })?;
        points.push(p);
        pixels.push(i);
    }
    Ok((PointCloud { points }, pixels))
}

pub fn normals_from_depth(map: &DepthMap) -> Result<NormalMap> {
    let g = image_gradients_masked(map.values(), map.mask())?;
    Ok(normals_from_gradients(&g))
}

pub(crate) fn normals_from_gradients(g: &GradientPair) -> NormalMap {
    let data = g
        .gx
        .data()
        .iter()
        .zip(g.gy.data())
        .map(|(&gx, &gy)| [-gx, -gy, 1.0])
        .collect();
    NormalMap {
        width: g.gx.width(),
        height: g.gx.height(),
        data,
    }
}

const UMBILIC_TOL: f64 = 1e-12;
const CURVATURE_FLOOR: f64 = 1e-9;

/// Shape index from the depth Hessian (central second differences).
///
/// Principal curvatures are the eigenvalues of `-H`, so a bump rising toward
/// the camera (depth decreasing toward its centre) has positive curvature.
/// With `k1 >= k2`, `s = (2 / pi) * atan((k1 + k2) / (k1 - k2))`. Umbilical
/// pixels (`|k1 - k2| < 1e-12`) are invalid unless both curvatures exceed
/// `1e-9` in magnitude with the same sign, in which case `s = sign(k1)`.
pub fn shape_index(map: &DepthMap) -> Result<ShapeIndexMap> {
    let (w, h) = (map.width(), map.height());
    ensure_min_size(w, h, 3)?;
    let m = map.data();
    let mut values = vec![0.0; w * h];
    let mut valid = vec![false; w * h];
    for r in 1..h - 1 {
        for c in 1..w - 1 {
            let i = r * w + c;
            let neighbourhood_ok = (r - 1..=r + 1)
                .all(|rr| (c - 1..=c + 1).all(|cc| map.is_valid(rr * w + cc)));
            if !neighbourhood_ok {
                continue;
            }
            let dxx = m[i + 1] - 2.0 * m[i] + m[i - 1];
            let dyy = m[i + w] - 2.0 * m[i] + m[i - w];
            let dxy = (m[i + w + 1] - m[i + w - 1] - m[i - w + 1] + m[i - w - 1]) / 4.0;
            let (a, b, d) = (-dxx, -dxy, -dyy);
            let mean = 0.5 * (a + d);
            let disc = (0.25 * (a - d) * (a - d) + b * b).sqrt();
            let (k1, k2) = (mean + disc, mean - disc);
            if let Some(s) = shape_index_from_curvatures(k1, k2) {
                values[i] = s;
                valid[i] = true;
            }
        }
    }
    Ok(ShapeIndexMap {
        width: w,
        height: h,
        values,
        valid,
    })
}

/// Shape index for `k1 >= k2`, `None` for undecidable umbilical points.
pub fn shape_index_from_curvatures(k1: f64, k2: f64) -> Option<f64> {
    debug_assert!(k1 >= k2);
    if (k1 - k2).abs() < UMBILIC_TOL {
        let same_sign = k1.signum() == k2.signum();
        if k1.abs() > CURVATURE_FLOOR && k2.abs() > CURVATURE_FLOOR && same_sign {
            return Some(k1.signum());
        }
        return None;
    }
    Some((FRAC_2_PI * ((k1 + k2) / (k1 - k2)).atan()).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(w: usize, h: usize, v: &[f64]) -> ScalarGrid {
        ScalarGrid::new(w, h, v.to_vec()).unwrap()
    }

    #[test]
    fn gradients_of_column_ramp() {
        let g = image_gradients(&grid(2, 2, &[0.0, 1.0, 0.0, 1.0])).unwrap();
        assert_eq!(g.gx.data(), &[1.0, 0.0, 1.0, 0.0]);
        assert_eq!(g.gy.data(), &[0.0; 4]);
    }

    #[test]
    fn gradients_of_row_step() {
        let g = image_gradients(&grid(2, 2, &[0.0, 0.0, 2.0, 2.0])).unwrap();
        assert_eq!(g.gx.data(), &[0.0; 4]);
        assert_eq!(g.gy.data(), &[2.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn gradients_of_constant_are_zero() {
        let g = image_gradients(&grid(3, 3, &[4.5; 9])).unwrap();
        assert!(g.gx.data().iter().chain(g.gy.data()).all(|&v| v == 0.0));
    }

    #[test]
    fn gradients_need_two_by_two() {
        assert!(matches!(
            image_gradients(&grid(1, 3, &[1.0; 3])),
            Err(Error::ShapeTooSmall { .. })
        ));
    }

    #[test]
    fn masked_gradient_is_zero() {
        let g = image_gradients_masked(
            &grid(3, 1 + 1, &[0.0, 1.0, 5.0, 0.0, 0.0, 0.0]),
            Some(&[true, true, false, true, true, true]),
        )
        .unwrap();
        assert_eq!(g.gx.data()[0], 1.0);
        assert_eq!(g.gx.data()[1], 0.0);
        assert_eq!(g.gy.data()[2], 0.0);
    }

    fn cam(fx: f64, cx: f64) -> CameraIntrinsics {
        CameraIntrinsics::new(fx, fx, cx, cx).unwrap()
    }

    #[test]
    fn projection_examples() {
        assert_eq!(project([0.0, 0.0, 5.0], &cam(100.0, 160.0)).unwrap(), [160.0, 160.0]);
        assert_eq!(project([1.0, 0.0, 1.0], &cam(100.0, 160.0)).unwrap()[0], 260.0);
        assert!(matches!(
            project([0.0, 0.0, -1.0], &cam(100.0, 160.0)),
            Err(Error::BehindCamera { .. })
        ));
    }

    #[test]
    fn back_projection_examples() {
        assert_eq!(
            back_project([160.0, 160.0], 3.0, &cam(100.0, 160.0)).unwrap(),
            [0.0, 0.0, 3.0]
        );
        assert_eq!(
            back_project([260.0, 160.0], 1.0, &cam(100.0, 160.0)).unwrap(),
            [1.0, 0.0, 1.0]
        );
        assert!(matches!(
            back_project([3.0, 4.0], 0.0, &cam(100.0, 160.0)),
            Err(Error::NonPositiveDepth { .. })
        ));
    }

    #[test]
    fn cloud_from_unit_map() {
        let c = CameraIntrinsics::new(1.0, 1.0, 0.5, 0.5).unwrap();
        let m = DepthMap::filled(2, 2, 1.0).unwrap();
        let cloud = depth_to_cloud(&m, &c).unwrap();
        assert_eq!(
            cloud.points,
            vec![
                [-0.5, -0.5, 1.0],
                [0.5, -0.5, 1.0],
                [-0.5, 0.5, 1.0],
                [0.5, 0.5, 1.0]
            ]
        );
    }

    #[test]
    fn cloud_respects_mask() {
        let c = CameraIntrinsics::new(1.0, 1.0, 0.5, 0.5).unwrap();
        let m = DepthMap::with_mask(2, 2, vec![1.0; 4], vec![true, false, true, true]).unwrap();
        assert_eq!(depth_to_cloud(&m, &c).unwrap().len(), 3);
        let none = DepthMap::with_mask(2, 2, vec![1.0; 4], vec![false; 4]).unwrap();
        assert!(depth_to_cloud(&none, &c).unwrap().is_empty());
    }

    #[test]
    fn normals_examples() {
        let flat = DepthMap::filled(3, 3, 2.0).unwrap();
        assert!(normals_from_depth(&flat)
            .unwrap()
            .data()
            .iter()
            .all(|n| *n == [0.0, 0.0, 1.0]));
        let ramp = DepthMap::new(2, 2, vec![1.0, 2.0, 1.0, 2.0]).unwrap();
        let n = normals_from_depth(&ramp).unwrap();
        assert_eq!(n.at(0, 0), [-1.0, 0.0, 1.0]);
        assert_eq!(n.at(1, 0), [-1.0, 0.0, 1.0]);
        let tiny = DepthMap::filled(1, 1, 1.0).unwrap();
        assert!(matches!(normals_from_depth(&tiny), Err(Error::ShapeTooSmall { .. })));
    }

    fn analytic_map(w: usize, h: usize, f: impl Fn(f64, f64) -> f64) -> DepthMap {
        let cx = (w / 2) as f64;
        let cy = (h / 2) as f64;
        let data = (0..w * h)
            .map(|i| f((i % w) as f64 - cx, (i / w) as f64 - cy))
            .collect();
        DepthMap::new(w, h, data).unwrap()
    }

    #[test]
    fn paraboloid_cap_has_shape_index_one() {
        // d = d0 - a r^2: -H = 2a I, so k1 = k2 = 2a > 0
        let m = analytic_map(9, 9, |x, y| 10.0 - 0.01 * (x * x + y * y));
        let s = shape_index(&m).unwrap();
        for r in 1..8 {
            for c in 1..8 {
                let v = s.get(r, c).expect("cap pixel should be valid");
                assert!((v - 1.0).abs() < 1e-6, "s = {v}");
            }
        }
    }

    #[test]
    fn cylinder_ridge_has_half_shape_index() {
        // d = d0 - a x^2: k1 = 2a, k2 = 0, s = (2/pi) atan(1) = 0.5
        let m = analytic_map(9, 9, |x, _| 10.0 - 0.01 * x * x);
        let s = shape_index(&m).unwrap();
        for r in 1..8 {
            for c in 1..8 {
                let v = s.get(r, c).unwrap();
                assert!((v.abs() - 0.5).abs() < 1e-9, "s = {v}");
            }
        }
    }

    #[test]
    fn plane_is_umbilical_and_invalid() {
        let m = analytic_map(5, 5, |x, y| 3.0 + 0.1 * x - 0.05 * y);
        let s = shape_index(&m).unwrap();
        assert!(s.valid().iter().all(|&v| !v));
    }

    #[test]
    fn shape_index_needs_three_by_three() {
        let m = DepthMap::filled(2, 5, 1.0).unwrap();
        assert!(matches!(shape_index(&m), Err(Error::ShapeTooSmall { .. })));
    }

    #[test]
    fn cup_and_saddle() {
        assert_eq!(shape_index_from_curvatures(-2.0, -2.0), Some(-1.0));
        assert_eq!(shape_index_from_curvatures(1.0, -1.0), Some(0.0));
    }
}
