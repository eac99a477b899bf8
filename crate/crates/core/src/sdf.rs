//! Exact nearest-neighbour search and signed distance fields of back-projected
//! depth maps.
//!
//! Sign convention: a query is `+1` when it lies behind the surface as seen
//! from the camera (its Z exceeds the surface depth at the pixel it projects
//! to) and `-1` otherwise.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{depth_to_cloud, project};
use crate::types::{CameraIntrinsics, DepthMap, Point3, PointCloud, SdfGridSpec};

/// Default samples per axis for an automatically derived grid.
pub const DEFAULT_GRID_RESOLUTION: [usize; 3] = [16, 16, 16];
/// Fractional padding added on each side of the ground-truth bounding box.
pub const AUTO_GRID_PADDING: f64 = 0.05;

#[inline]
fn dist2(a: &Point3, b: &Point3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// `(d2, index)` ordering with ties broken by the lower index.
#[inline]
fn closer(d2: f64, idx: usize, best_d2: f64, best_idx: usize) -> bool {
    d2 < best_d2 || (d2 == best_d2 && idx < best_idx)
}

/// Uniform grid over a point cloud. Points are bucketed in CSR form: the
/// points of cell `c` are `order[start[c]..start[c + 1]]`.
#[derive(Debug, Clone)]
pub struct SpatialIndex<'a> {
    cloud: &'a PointCloud,
    origin: Point3,
    cell_size: f64,
    dims: [usize; 3],
    start: Vec<usize>,
    order: Vec<usize>,
}

impl<'a> SpatialIndex<'a> {
    /// Cell size defaults to `bbox_diagonal / cbrt(N)`.
    pub fn build(cloud: &'a PointCloud) -> Result<Self> {
        let (lo, hi) = cloud.bounds().ok_or(Error::EmptyCloud)?;
        let diag = dist2(&lo, &hi).sqrt();
        let n = cloud.len() as f64;
        let cell = if diag > 0.0 { diag / n.cbrt() } else { 1.0 };
        Self::with_cell_size(cloud, cell)
    }

    pub fn with_cell_size(cloud: &'a PointCloud, cell_size: f64) -> Result<Self> {
        let (lo, hi) = cloud.bounds().ok_or(Error::EmptyCloud)?;
        if !(cell_size > 0.0 && cell_size.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "cell size must be positive, got {cell_size}"
            )));
        }
        // Keep the cell table proportional to the cloud.
        let max_cells = (cloud.len() * 8).max(64) as f64;
        let mut cell = cell_size;
        let cells_for = |c: f64| -> f64 {
            (0..3)
                .map(|a| ((hi[a] - lo[a]) / c).floor() + 1.0)
                .product()
        };
        while cells_for(cell) > max_cells {
            cell *= 1.5;
        }
        let dims = [0, 1, 2].map(|a| ((hi[a] - lo[a]) / cell).floor() as usize + 1);
        let n_cells = dims[0] * dims[1] * dims[2];
        let mut this = Self {
            cloud,
            origin: lo,
            cell_size: cell,
            dims,
            start: vec![0; n_cells + 1],
            order: vec![0; cloud.len()],
        };
        let cell_of: Vec<usize> = cloud.points.iter().map(|p| this.cell_of(p)).collect();
        for &c in &cell_of {
            this.start[c + 1] += 1;
        }
        for c in 0..n_cells {
            this.start[c + 1] += this.start[c];
        }
        let mut fill = this.start.clone();
        for (i, &c) in cell_of.iter().enumerate() {
            this.order[fill[c]] = i;
            fill[c] += 1;
        }
        Ok(this)
    }

    pub fn cloud(&self) -> &'a PointCloud {
        self.cloud
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    /// Points stored in cell `(x, y, z)`.
    pub fn cell_points(&self, cell: [usize; 3]) -> &[usize] {
        let c = self.flat(cell);
        &self.order[self.start[c]..self.start[c + 1]]
    }

    #[inline]
    fn flat(&self, [x, y, z]: [usize; 3]) -> usize {
        (z * self.dims[1] + y) * self.dims[0] + x
    }

    fn cell_of(&self, p: &Point3) -> usize {
        let c = [0, 1, 2].map(|a| {
            let k = ((p[a] - self.origin[a]) / self.cell_size).floor();
            (k.max(0.0) as usize).min(self.dims[a] - 1)
        });
        self.flat(c)
    }

    /// Unclamped integer cell coordinates of `q`.
    fn query_cell(&self, q: &Point3) -> [i64; 3] {
        [0, 1, 2].map(|a| ((q[a] - self.origin[a]) / self.cell_size).floor() as i64)
    }

    /// Squared distance from `q[axis]` to the slab of cells with index `k`.
    #[inline]
    fn axis_gap2(&self, q: &Point3, axis: usize, k: i64) -> f64 {
        let lo = self.origin[axis] + k as f64 * self.cell_size;
        let hi = lo + self.cell_size;
        let d = if q[axis] < lo {
            lo - q[axis]
        } else if q[axis] > hi {
            q[axis] - hi
        } else {
            0.0
        };
        d * d
    }

    /// Squared distance from `q` to the box of cell `c`.
    fn cell_box_dist2(&self, q: &Point3, c: [usize; 3]) -> f64 {
        let mut d2 = 0.0;
        for a in 0..3 {
            let lo = self.origin[a] + c[a] as f64 * self.cell_size;
            let hi = lo + self.cell_size;
            let d = if q[a] < lo {
                lo - q[a]
            } else if q[a] > hi {
                q[a] - hi
            } else {
                0.0
            };
            d2 += d * d;
        }
        d2
    }

    /// Visit cells ring by ring (Chebyshev shells around the query cell),
    /// calling `visit` with each cell whose box is within `bound()`.
    fn search(&self, q: &Point3, mut bound: impl FnMut() -> f64, mut visit: impl FnMut(&[usize])) {
        let qc = self.query_cell(q);
        let dims = self.dims.map(|d| d as i64);
        let first_ring = (0..3)
            .map(|a| (-qc[a]).max(qc[a] - (dims[a] - 1)).max(0))
            .max()
            .unwrap_or(0);
        let mut s = first_ring;
        loop {
            if s >= 1 {
                let gap = (s - 1) as f64 * self.cell_size;
                if gap * gap > bound() {
                    break;
                }
            }
            let lo = [0, 1, 2].map(|a| (qc[a] - s).max(0));
            let hi = [0, 1, 2].map(|a| (qc[a] + s).min(dims[a] - 1));
            if lo.iter().zip(&hi).all(|(l, h)| l <= h) {
                for x in lo[0]..=hi[0] {
                    let dx2 = self.axis_gap2(q, 0, x);
                    if dx2 > bound() * (1.0 + 1e-9) + 1e-300 {
                        continue;
                    }
                    for y in lo[1]..=hi[1] {
                        if dx2 + self.axis_gap2(q, 1, y) > bound() * (1.0 + 1e-9) + 1e-300 {
                            continue;
                        }
                        let on_xy_shell = (x - qc[0]).abs() == s || (y - qc[1]).abs() == s;
                        let mut visit_z = |z: i64| {
                            let cell = [x as usize, y as usize, z as usize];
                            let c = self.flat(cell);
                            if self.start[c] == self.start[c + 1] {
                                return;
                            }
                            let slack = bound() * (1.0 + 1e-9) + 1e-300;
                            if self.cell_box_dist2(q, cell) <= slack {
                                visit(self.cell_points(cell));
                            }
                        };
                        if on_xy_shell {
                            for z in lo[2]..=hi[2] {
                                visit_z(z);
                            }
                        } else {
                            if qc[2] - s >= lo[2] {
                                visit_z(qc[2] - s);
                            }
                            if s > 0 && qc[2] + s <= hi[2] {
                                visit_z(qc[2] + s);
                            }
                        }
                    }
                }
            }
            let covers_all = (0..3).all(|a| qc[a] - s <= 0 && qc[a] + s >= dims[a] - 1);
            if covers_all {
                break;
            }
            s += 1;
        }
    }

    /// Exact nearest neighbour: `(index, distance)`, ties to the lowest index.
    pub fn nearest(&self, q: &Point3) -> (usize, f64) {
        let pts = &self.cloud.points;
        let best = std::cell::Cell::new((f64::INFINITY, usize::MAX));
        self.search(
            q,
            || best.get().0,
            |cell| {
                let (mut bd, mut bi) = best.get();
                for &i in cell {
                    let d2 = dist2(&pts[i], q);
                    if closer(d2, i, bd, bi) {
                        bd = d2;
                        bi = i;
                    }
                }
                best.set((bd, bi));
            },
        );
        let (d2, i) = best.get();
        (i, d2.sqrt())
    }

    /// The `k` nearest neighbours sorted by `(distance, index)`.
    pub fn k_nearest(&self, q: &Point3, k: usize) -> Vec<(usize, f64)> {
        let pts = &self.cloud.points;
        let k = k.min(pts.len());
        if k == 0 {
            return Vec::new();
        }
        let heap = std::cell::RefCell::new(Vec::<(f64, usize)>::with_capacity(k + 1));
        let kth = || {
            let h = heap.borrow();
            if h.len() < k {
                f64::INFINITY
            } else {
                h[k - 1].0
            }
        };
        self.search(q, kth, |cell| {
            let mut h = heap.borrow_mut();
            for &i in cell {
                let d2 = dist2(&pts[i], q);
                if h.len() == k && !closer(d2, i, h[k - 1].0, h[k - 1].1) {
                    continue;
                }
                let pos = h.partition_point(|&(bd, bi)| closer(bd, bi, d2, i));
                h.insert(pos, (d2, i));
                h.truncate(k);
            }
        });
        heap.into_inner()
            .into_iter()
            .map(|(d2, i)| (i, d2.sqrt()))
            .collect()
    }
}

/// Exact nearest neighbour of `query`; uses `index` when given, otherwise an
/// exhaustive scan.
pub fn nearest_neighbor(
    query: &Point3,
    cloud: &PointCloud,
    index: Option<&SpatialIndex<'_>>,
) -> Result<(usize, f64)> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if let Some(index) = index {
        debug_assert!(std::ptr::eq(index.cloud(), cloud));
        return Ok(index.nearest(query));
    }
    let (mut bd, mut bi) = (f64::INFINITY, usize::MAX);
    for (i, p) in cloud.points.iter().enumerate() {
        let d2 = dist2(p, query);
        if closer(d2, i, bd, bi) {
            bd = d2;
            bi = i;
        }
    }
    Ok((bi, bd.sqrt()))
}

/// `k >= 1` nearest neighbours, for diagnostics.
pub fn k_nearest_neighbors(
    query: &Point3,
    cloud: &PointCloud,
    k: usize,
    index: Option<&SpatialIndex<'_>>,
) -> Result<Vec<(usize, f64)>> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    match index {
        Some(index) => Ok(index.k_nearest(query, k)),
        None => {
            let mut all: Vec<(f64, usize)> = cloud
                .points
                .iter()
                .enumerate()
                .map(|(i, p)| (dist2(p, query), i))
                .collect();
            all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            all.truncate(k);
            Ok(all.into_iter().map(|(d2, i)| (i, d2.sqrt())).collect())
        }
    }
}

/// Regular samples `lower + t * (upper - lower)` with `t = i / (r - 1)` per
/// axis, ordered k-major, then j, then i (x varies fastest).
pub fn sample_grid(spec: &SdfGridSpec) -> Result<Vec<Point3>> {
    let spec = SdfGridSpec::new(spec.lower, spec.upper, spec.resolution)?;
    let [rx, ry, rz] = spec.resolution;
    let axis = |a: usize, n: usize| -> Vec<f64> {
        (0..n)
            .map(|i| {
                let t = i as f64 / (n - 1) as f64;
                // Exact at both ends: t = 0 gives lower, t = 1 gives upper.
                spec.lower[a] * (1.0 - t) + spec.upper[a] * t
            })
            .collect()
    };
    let (xs, ys, zs) = (axis(0, rx), axis(1, ry), axis(2, rz));
    let mut out = Vec::with_capacity(rx * ry * rz);
    for &z in &zs {
        for &y in &ys {
            for &x in &xs {
                out.push([x, y, z]);
            }
        }
    }
    Ok(out)
}

/// Grid over the bounding box of `cloud`, padded by [`AUTO_GRID_PADDING`] of
/// each axis' extent on both sides. Axes thinner than 5% of the largest extent
/// are padded as if they had that extent.
pub fn auto_grid_spec(cloud: &PointCloud, resolution: [usize; 3]) -> Result<SdfGridSpec> {
    let (lo, hi) = cloud.bounds().ok_or(Error::EmptyCloud)?;
    let extent = [0, 1, 2].map(|a| hi[a] - lo[a]);
    let largest = extent.iter().cloned().fold(0.0, f64::max);
    let floor = (0.05 * largest).max(1e-3);
    let pad = extent.map(|e| AUTO_GRID_PADDING * e.max(floor));
    let lower = [0, 1, 2].map(|a| lo[a] - pad[a]);
    let upper = [0, 1, 2].map(|a| hi[a] + pad[a]);
    SdfGridSpec::new(lower, upper, resolution)
}

/// One signed-distance evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdfSample {
    pub position: Point3,
    pub distance: f64,
    /// `+1.0` behind the surface, `-1.0` in front of it.
    pub sign: f64,
    pub nearest_index: usize,
}

impl SdfSample {
    pub fn signed(&self) -> f64 {
        self.sign * self.distance
    }
}

/// Pixel `(row, col)` that `query` projects to (nearest integer centre), or
/// the reason it has none.
pub(crate) fn frustum_pixel(
    query: &Point3,
    width: usize,
    height: usize,
    cam: &CameraIntrinsics,
) -> Result<usize> {
    let [u, v] = project(*query, cam).map_err(|_| Error::OutOfFrustum {
        u: f64::NAN,
        v: f64::NAN,
    })?;
    let (col, row) = (u.round(), v.round());
    if !(col >= 0.0 && row >= 0.0 && col < width as f64 && row < height as f64) {
        return Err(Error::OutOfFrustum { u, v });
    }
    Ok(row as usize * width + col as usize)
}

/// Signed distance from `query` to the surface back-projected from
/// `surface_depth`; `index` must be built over that surface's cloud.
pub fn signed_distance(
    query: &Point3,
    surface_depth: &DepthMap,
    cam: &CameraIntrinsics,
    index: &SpatialIndex<'_>,
) -> Result<SdfSample> {
    let pixel = frustum_pixel(query, surface_depth.width(), surface_depth.height(), cam)?;
    if !surface_depth.is_valid(pixel) {
        return Err(Error::MaskedSurfacePixel { index: pixel });
    }
    let (nearest_index, distance) = index.nearest(query);
    let sign = if query[2] > surface_depth.data()[pixel] {
        1.0
    } else {
        -1.0
    };
    Ok(SdfSample {
        position: *query,
        distance,
        sign,
        nearest_index,
    })
}

/// Signed distances for a batch of samples. Samples outside the image (or on
/// masked pixels) are `None` and counted in `excluded`.
#[derive(Debug, Clone, PartialEq)]
pub struct SdfField {
    pub samples: Vec<Option<SdfSample>>,
    pub excluded: usize,
}

impl SdfField {
    pub fn included(&self) -> usize {
        self.samples.len() - self.excluded
    }

    /// Signed values, `None` where excluded.
    pub fn values(&self) -> Vec<Option<f64>> {
        self.samples.iter().map(|s| s.map(|s| s.signed())).collect()
    }
}

pub fn sdf_field(
    grid_points: &[Point3],
    surface_depth: &DepthMap,
    cam: &CameraIntrinsics,
) -> Result<SdfField> {
    let cloud = depth_to_cloud(surface_depth, cam)?;
    let index = SpatialIndex::build(&cloud)?;
    sdf_field_with_index(grid_points, surface_depth, cam, &index)
}

pub fn sdf_field_with_index(
    grid_points: &[Point3],
    surface_depth: &DepthMap,
    cam: &CameraIntrinsics,
    index: &SpatialIndex<'_>,
) -> Result<SdfField> {
    let samples: Vec<Option<SdfSample>> = grid_points
        .par_iter()
        .with_min_len(64)
        .map(|q| match signed_distance(q, surface_depth, cam, index) {
            Ok(s) => Ok(Some(s)),
            Err(Error::OutOfFrustum { .. } | Error::MaskedSurfacePixel { .. }) => Ok(None),
            Err(e) => Err(e),
        })
        .collect::<Result<_>>()?;
    let excluded = samples.iter().filter(|s| s.is_none()).count();
    if excluded == samples.len() {
        return Err(Error::AllPointsOutOfFrustum {
            count: samples.len(),
        });
    }
    Ok(SdfField { samples, excluded })
}
