//! Procedural lumen scenes and a sphere-tracing RGB-D renderer.
//!
//! The wall is an implicit surface around a centreline `c(z) = (a(z), b(z), z)`
//! whose offsets `a`, `b` are piecewise cubic Hermite segments. For a point
//! `p`, with `rho` its distance to `c(p.z)` in the z-slice and `theta` its
//! angle there, the wall field is
//!
//! ```text
//! f(p) = R(z, theta) - rho
//! R(z, theta) = r0 * (1 - A * fold(z, theta)) - sum_i bump_i(z, theta)
//! fold        = ((1 + cos(w z + phase + 0.3 sin theta)) / 2)^2      ridge-shaped rings
//! bump_i      = h_i * exp(-((z - z_i)^2 + (r0 * dtheta_i)^2) / (2 s_i^2))  caps
//! ```
//!
//! `f > 0` inside the lumen, `f = 0` on the wall. Rays are marched with steps
//! of `0.6 f` and refined by bisection once they cross the wall, so every hit
//! satisfies `|f| < 1e-5`.
//!
//! Camera frame: X right, Y down, Z forward. Depth is the hit's Z. Hits
//! outside `[0.01, 100]`, rays that leave the depth range, and rays that do
//! not converge in 256 steps store the clamped value but are masked invalid.

use std::f64::consts::{PI, TAU};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::io::{write_depth_pfm, write_rgb_ppm};
use crate::rng::{seeded_rng, SeededRng};
use crate::types::{CameraIntrinsics, DepthMap, Point3, RgbImage, MAX_DEPTH, MIN_DEPTH};

pub const MAX_MARCH_STEPS: usize = 256;
pub const HIT_TOLERANCE: f64 = 1e-5;
/// Fraction of the field value taken per march step.
pub const STEP_FACTOR: f64 = 0.6;
/// Specular light is only added where `n . v` is at least this.
pub const SPECULAR_CUTOFF: f64 = 0.9;
/// Octaves of value noise in the wall texture.
pub const TEXTURE_OCTAVES: usize = 3;
pub const DEFAULT_FRAME_SIZE: usize = 320;
pub const MANIFEST_VERSION: &str = "endogeo-manifest v1";

const SEGMENT_LENGTH: f64 = 10.0;
const CENTERLINE_START: f64 = -20.0;
const SEGMENT_COUNT: usize = 16;
const FOLD_TILT: f64 = 0.3;

fn add(a: Point3, b: Point3) -> Point3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn sub(a: Point3, b: Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn scale(a: Point3, s: f64) -> Point3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

fn dot(a: Point3, b: Point3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: Point3, b: Point3) -> Point3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn normalize(a: Point3) -> Point3 {
    scale(a, 1.0 / dot(a, a).sqrt())
}

/// Anatomy presets. Each fixes the tube radius, the fold (ridge) profile and
/// the number and size of cap-shaped bumps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Preset {
    Stomach,
    Colon,
    Duodenum,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PresetParams {
    pub base_radius: f64,
    pub fold_amplitude: f64,
    /// Radians per unit length along the centreline.
    pub fold_frequency: f64,
    pub bump_count: usize,
    /// Bump height range, as a fraction of `base_radius`.
    pub bump_amplitude: (f64, f64),
    /// Bump width range, as a fraction of `base_radius`.
    pub bump_width: (f64, f64),
    /// Maximum centreline offset at each knot.
    pub centerline_wander: f64,
    pub base_color: [f64; 3],
}

/// Wide lumen, low-frequency shallow rugae.
pub const STOMACH: PresetParams = PresetParams {
    base_radius: 3.0,
    fold_amplitude: 0.10,
    fold_frequency: 0.6,
    bump_count: 2,
    bump_amplitude: (0.05, 0.15),
    bump_width: (0.2, 0.4),
    centerline_wander: 1.2,
    base_color: [0.85, 0.45, 0.40],
};

/// Narrow lumen with deep, regularly spaced haustral folds.
pub const COLON: PresetParams = PresetParams {
    base_radius: 1.0,
    fold_amplitude: 0.25,
    fold_frequency: 2.5,
    bump_count: 3,
    bump_amplitude: (0.05, 0.15),
    bump_width: (0.15, 0.3),
    centerline_wander: 0.4,
    base_color: [0.80, 0.50, 0.42],
};

/// Narrowest lumen, dense folds and several caps (papilla, diverticula).
pub const DUODENUM: PresetParams = PresetParams {
    base_radius: 0.8,
    fold_amplitude: 0.18,
    fold_frequency: 4.0,
    bump_count: 5,
    bump_amplitude: (0.05, 0.12),
    bump_width: (0.12, 0.25),
    centerline_wander: 0.3,
    base_color: [0.88, 0.62, 0.45],
};

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::Stomach, Preset::Colon, Preset::Duodenum];

    pub fn params(self) -> &'static PresetParams {
        match self {
            Preset::Stomach => &STOMACH,
            Preset::Colon => &COLON,
            Preset::Duodenum => &DUODENUM,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Preset::Stomach => "stomach",
            Preset::Colon => "colon",
            Preset::Duodenum => "duodenum",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        let s = s.strip_suffix("-like").unwrap_or(s);
        Self::ALL.into_iter().find(|p| p.name() == s)
    }
}

/// Piecewise cubic Hermite offsets `(a(z), b(z))` with Catmull-Rom tangents.
/// Clamped to the end knots outside the covered range.
#[derive(Debug, Clone, PartialEq)]
pub struct Centerline {
    pub start: f64,
    pub segment_length: f64,
    pub knots: Vec<[f64; 2]>,
}

impl Centerline {
    fn tangent(&self, k: usize) -> [f64; 2] {
        let n = self.knots.len();
        let (lo, hi) = (k.saturating_sub(1), (k + 1).min(n - 1));
        let span = (hi - lo) as f64 * self.segment_length;
        [0, 1].map(|a| (self.knots[hi][a] - self.knots[lo][a]) / span)
    }

    /// Offset of the centreline from the z axis at height `z`.
    pub fn offset(&self, z: f64) -> [f64; 2] {
        let n = self.knots.len();
        let s = ((z - self.start) / self.segment_length).clamp(0.0, (n - 1) as f64);
        let k = (s.floor() as usize).min(n - 2);
        let t = s - k as f64;
        let (t2, t3) = (t * t, t * t * t);
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        let (m0, m1) = (self.tangent(k), self.tangent(k + 1));
        let l = self.segment_length;
        [0, 1].map(|a| {
            h00 * self.knots[k][a] + h10 * l * m0[a] + h01 * self.knots[k + 1][a] + h11 * l * m1[a]
        })
    }

    /// Unit tangent of the 3D centreline at `z` (central difference).
    pub fn direction(&self, z: f64) -> Point3 {
        let e = 1e-4;
        let (a, b) = (self.offset(z - e), self.offset(z + e));
        normalize([(b[0] - a[0]) / (2.0 * e), (b[1] - a[1]) / (2.0 * e), 1.0])
    }

    pub fn point(&self, z: f64) -> Point3 {
        let [x, y] = self.offset(z);
        [x, y, z]
    }
}

/// Cap-shaped Gaussian bump pushing the wall toward the lumen axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bump {
    pub z: f64,
    pub theta: f64,
    pub amplitude: f64,
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneModel {
    pub preset: Preset,
    pub centerline: Centerline,
    pub base_radius: f64,
    pub fold_amplitude: f64,
    pub fold_frequency: f64,
    pub fold_phase: f64,
    pub bumps: Vec<Bump>,
    pub texture_seed: u64,
    pub base_color: [f64; 3],
}

/// Wrap an angle difference to `(-pi, pi]`.
fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(TAU);
    if w > PI {
        w - TAU
    } else {
        w
    }
}

impl SceneModel {
    /// Fails unless the wall radius is provably positive everywhere.
    pub fn validate(&self) -> Result<()> {
        let finite = self.base_radius.is_finite()
            && self.fold_amplitude.is_finite()
            && self.fold_frequency.is_finite()
            && self.fold_phase.is_finite()
            && self.centerline.knots.iter().flatten().all(|v| v.is_finite())
            && self
                .bumps
                .iter()
                .all(|b| [b.z, b.theta, b.amplitude, b.width].iter().all(|v| v.is_finite()));
        if !finite {
            return Err(Error::InvalidScene("non-finite parameter".into()));
        }
        if self.centerline.knots.len() < 2 || !(self.centerline.segment_length > 0.0) {
            return Err(Error::InvalidScene("centreline needs two knots".into()));
        }
        if self.bumps.iter().any(|b| b.amplitude < 0.0 || !(b.width > 0.0)) {
            return Err(Error::InvalidScene("bumps need amplitude >= 0 and width > 0".into()));
        }
        if !(0.0..1.0).contains(&self.fold_amplitude) {
            return Err(Error::InvalidScene("fold amplitude must lie in [0, 1)".into()));
        }
        let bump_total: f64 = self.bumps.iter().map(|b| b.amplitude).sum();
        let min_radius = self.base_radius * (1.0 - self.fold_amplitude) - bump_total;
        if !(min_radius > 0.0) {
            return Err(Error::InvalidScene(format!(
                "wall radius can reach {min_radius}, must stay positive"
            )));
        }
        Ok(())
    }

    /// Wall radius at height `z` and angle `theta` around the centreline.
    pub fn radius(&self, z: f64, theta: f64) -> f64 {
        let c = 0.5 * (1.0 + (self.fold_frequency * z + self.fold_phase + FOLD_TILT * theta.sin()).cos());
        let mut r = self.base_radius * (1.0 - self.fold_amplitude * c * c);
        for b in &self.bumps {
            let dz = z - b.z;
            if dz.abs() > 5.0 * b.width {
                continue;
            }
            let arc = self.base_radius * wrap_angle(theta - b.theta);
            r -= b.amplitude * (-(dz * dz + arc * arc) / (2.0 * b.width * b.width)).exp();
        }
        r
    }

    /// Implicit wall function: positive inside the lumen, zero on the wall.
    pub fn wall_field(&self, p: &Point3) -> f64 {
        let [ox, oy] = self.centerline.offset(p[2]);
        let (dx, dy) = (p[0] - ox, p[1] - oy);
        let rho = (dx * dx + dy * dy).sqrt();
        let theta = dy.atan2(dx);
        self.radius(p[2], theta) - rho
    }

    /// Unit normal pointing into the lumen (the normalised field gradient).
    pub fn wall_normal(&self, p: &Point3) -> Point3 {
        let e = 1e-6;
        let g = [0, 1, 2].map(|a| {
            let mut hi = *p;
            let mut lo = *p;
            hi[a] += e;
            lo[a] -= e;
            (self.wall_field(&hi) - self.wall_field(&lo)) / (2.0 * e)
        });
        normalize(g)
    }
}

/// Deterministic scene for `(seed, preset)`.
pub fn generate_scene(seed: u64, preset: Preset) -> SceneModel {
    let p = preset.params();
    let mut rng = seeded_rng(seed);
    let fold_phase = rng.uniform(0.0, TAU);
    let knots = (0..=SEGMENT_COUNT)
        .map(|_| {
            [
                rng.uniform(-p.centerline_wander, p.centerline_wander),
                rng.uniform(-p.centerline_wander, p.centerline_wander),
            ]
        })
        .collect();
    let bumps = (0..p.bump_count)
        .map(|_| Bump {
            z: rng.uniform(2.0, 40.0),
            theta: rng.uniform(-PI, PI),
            amplitude: p.base_radius * rng.uniform(p.bump_amplitude.0, p.bump_amplitude.1),
            width: p.base_radius * rng.uniform(p.bump_width.0, p.bump_width.1),
        })
        .collect();
    let texture_seed = rng.next_u64();
    SceneModel {
        preset,
        centerline: Centerline {
            start: CENTERLINE_START,
            segment_length: SEGMENT_LENGTH,
            knots,
        },
        base_radius: p.base_radius,
        fold_amplitude: p.fold_amplitude,
        fold_frequency: p.fold_frequency,
        fold_phase,
        bumps,
        texture_seed,
        base_color: p.base_color,
    }
}

/// Camera placement relative to the centreline, in the form stored in
/// manifests.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseParams {
    /// Height along the centreline.
    pub z: f64,
    /// Rotation about the camera Y axis, radians; positive turns toward +X.
    pub yaw: f64,
    /// Rotation about the camera X axis, radians.
    pub pitch: f64,
    /// Displacement from the centreline in the world x/y plane.
    pub offset: [f64; 2],
}

impl PoseParams {
    pub fn on_axis(z: f64) -> Self {
        Self {
            z,
            yaw: 0.0,
            pitch: 0.0,
            offset: [0.0, 0.0],
        }
    }
}

/// Camera position and orientation. `axes` holds the camera X, Y and Z axes
/// expressed in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    pub position: Point3,
    pub axes: [Point3; 3],
}

impl CameraPose {
    pub fn from_params(scene: &SceneModel, params: &PoseParams) -> Self {
        let c = scene.centerline.point(params.z);
        let position = [c[0] + params.offset[0], c[1] + params.offset[1], c[2]];
        let forward = scene.centerline.direction(params.z);
        let right = normalize(cross([0.0, 1.0, 0.0], forward));
        let down = cross(forward, right);
        let (sy, cy) = params.yaw.sin_cos();
        let forward_y = add(scale(forward, cy), scale(right, sy));
        let right_y = sub(scale(right, cy), scale(forward, sy));
        let (sp, cp) = params.pitch.sin_cos();
        let forward_p = add(scale(forward_y, cp), scale(down, sp));
        let down_p = sub(scale(down, cp), scale(forward_y, sp));
        Self {
            position,
            axes: [right_y, down_p, forward_p],
        }
    }

    /// Camera-frame point to world.
    pub fn to_world(&self, p: &Point3) -> Point3 {
        let [x, y, z] = self.axes;
        add(self.position, add(add(scale(x, p[0]), scale(y, p[1])), scale(z, p[2])))
    }
}

/// Point light at the camera ("eye-in-hand") plus ambient term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LightingModel {
    pub intensity: f64,
    pub color: [f64; 3],
    pub ambient: f64,
    pub specular_strength: f64,
    pub specular_exponent: f64,
    /// Distance at which the light has dropped to half its intensity.
    pub falloff: f64,
}

impl Default for LightingModel {
    fn default() -> Self {
        Self {
            intensity: 1.0,
            color: [1.0, 1.0, 1.0],
            ambient: 0.05,
            specular_strength: 0.4,
            specular_exponent: 32.0,
            falloff: 2.0,
        }
    }
}

impl LightingModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.intensity >= 0.0) || !(self.ambient >= 0.0) || !(self.specular_strength >= 0.0) {
            return Err(Error::InvalidConfig(
                "intensity, ambient and specular strength must be >= 0".into(),
            ));
        }
        if !(self.specular_exponent >= 1.0) {
            return Err(Error::InvalidConfig("specular exponent must be >= 1".into()));
        }
        if !(self.falloff > 0.0) || self.color.iter().any(|c| !(*c >= 0.0)) {
            return Err(Error::InvalidConfig("falloff must be > 0 and colour >= 0".into()));
        }
        Ok(())
    }
}

#[inline]
fn lattice_hash(x: i64, y: i64, z: i64, seed: u64) -> f64 {
    let mut h = seed
        ^ (x as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (y as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
        ^ (z as u64).wrapping_mul(0x1656_67B1_9E37_79F9);
    h = (h ^ (h >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    h ^= h >> 31;
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Trilinear value noise in `[0, 1)` on the integer lattice, smoothstep
/// interpolated. Lattice values come from a splitmix64 finaliser over
/// `seed ^ x*K1 ^ y*K2 ^ z*K3`.
pub fn value_noise(p: &Point3, seed: u64) -> f64 {
    let cell = p.map(f64::floor);
    let f = [p[0] - cell[0], p[1] - cell[1], p[2] - cell[2]];
    let s = f.map(|t| t * t * (3.0 - 2.0 * t));
    let [x0, y0, z0] = cell.map(|c| c as i64);
    let mut acc = 0.0;
    for dz in 0..2 {
        for dy in 0..2 {
            for dx in 0..2 {
                let wx = if dx == 1 { s[0] } else { 1.0 - s[0] };
                let wy = if dy == 1 { s[1] } else { 1.0 - s[1] };
                let wz = if dz == 1 { s[2] } else { 1.0 - s[2] };
                acc += wx * wy * wz * lattice_hash(x0 + dx, y0 + dy, z0 + dz, seed);
            }
        }
    }
    acc
}

/// Multi-octave noise (frequencies x1, x2, x4; weights 1, 1/2, 1/4), in `[0, 1)`.
pub fn texture(scene: &SceneModel, p: &Point3) -> f64 {
    let base = 3.0 / scene.base_radius;
    let mut sum = 0.0;
    let mut norm = 0.0;
    let mut amp = 1.0;
    let mut freq = base;
    for octave in 0..TEXTURE_OCTAVES {
        sum += amp * value_noise(&scale(*p, freq), scene.texture_seed.wrapping_add(octave as u64));
        norm += amp;
        amp *= 0.5;
        freq *= 2.0;
    }
    sum / norm
}

/// Diffuse and specular contributions at a surface point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShadeTerms {
    pub diffuse: [f64; 3],
    pub specular: [f64; 3],
}

impl ShadeTerms {
    pub fn rgb(&self) -> [f64; 3] {
        [0, 1, 2].map(|c| (self.diffuse[c] + self.specular[c]).clamp(0.0, 1.0))
    }
}

/// Ambient + Lambert + view-aligned specular for a light at `eye`.
pub fn shade(scene: &SceneModel, lighting: &LightingModel, p: &Point3, normal: &Point3, eye: &Point3) -> ShadeTerms {
    let to_eye = sub(*eye, *p);
    let dist = dot(to_eye, to_eye).sqrt();
    let l = scale(to_eye, 1.0 / dist);
    let cos = dot(*normal, l).max(0.0);
    let atten = 1.0 / (1.0 + (dist / lighting.falloff).powi(2));
    let t = 0.55 + 0.45 * texture(scene, p);
    let albedo = scene.base_color.map(|c| c * t);
    let diffuse = [0, 1, 2].map(|c| {
        albedo[c] * (lighting.ambient + lighting.intensity * lighting.color[c] * cos * atten)
    });
    let spec = if cos >= SPECULAR_CUTOFF {
        lighting.specular_strength * lighting.intensity * atten * cos.powf(lighting.specular_exponent)
    } else {
        0.0
    };
    ShadeTerms {
        diffuse,
        specular: lighting.color.map(|c| c * spec),
    }
}

/// Rendered RGB-D pair.
#[derive(Debug, Clone, PartialEq)]
pub struct FramePair {
    pub rgb: RgbImage,
    pub depth: DepthMap,
    pub pose: CameraPose,
}

enum RayResult {
    Hit(f64),
    Miss,
}

/// March from `origin` along `dir` (scaled so that one unit of the ray
/// parameter is one unit of camera Z).
fn march(scene: &SceneModel, origin: &Point3, dir: &Point3) -> RayResult {
    let speed = dot(*dir, *dir).sqrt();
    let mut t = 0.0;
    let mut f = scene.wall_field(origin);
    for _ in 0..MAX_MARCH_STEPS {
        let t_next = t + STEP_FACTOR * f / speed;
        let f_next = scene.wall_field(&add(*origin, scale(*dir, t_next)));
        if f_next < 0.0 {
            // bracketed: f(t) > 0 > f(t_next)
            let (mut lo, mut hi) = (t, t_next);
            let mut mid = 0.5 * (lo + hi);
            for _ in 0..80 {
                mid = 0.5 * (lo + hi);
                let fm = scene.wall_field(&add(*origin, scale(*dir, mid)));
                if fm.abs() < HIT_TOLERANCE * 0.1 {
                    break;
                }
                if fm > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            return RayResult::Hit(mid);
        }
        t = t_next;
        f = f_next;
        if f < HIT_TOLERANCE {
            return RayResult::Hit(t);
        }
        if t > MAX_DEPTH {
            return RayResult::Miss;
        }
    }
    RayResult::Miss
}

/// Render a `width x height` frame.
pub fn render_frame(
    scene: &SceneModel,
    pose: &CameraPose,
    lighting: &LightingModel,
    cam: &CameraIntrinsics,
    width: usize,
    height: usize,
) -> Result<FramePair> {
    scene.validate()?;
    lighting.validate()?;
    let clearance = scene.wall_field(&pose.position);
    if !(clearance > MIN_DEPTH) {
        return Err(Error::CameraOutsideLumen { clearance });
    }
    let rows: Vec<(Vec<f64>, Vec<bool>, Vec<f64>)> = (0..height)
        .into_par_iter()
        .map(|v| {
            let mut depth = Vec::with_capacity(width);
            let mut valid = Vec::with_capacity(width);
            let mut rgb = Vec::with_capacity(width * 3);
            for u in 0..width {
                let d_cam = [
                    (u as f64 - cam.cx) / cam.fx,
                    (v as f64 - cam.cy) / cam.fy,
                    1.0,
                ];
                let dir = sub(pose.to_world(&d_cam), pose.position);
                match march(scene, &pose.position, &dir) {
                    RayResult::Hit(z) if (MIN_DEPTH..=MAX_DEPTH).contains(&z) => {
                        let p = add(pose.position, scale(dir, z));
                        let n = scene.wall_normal(&p);
                        depth.push(z);
                        valid.push(true);
                        rgb.extend(shade(scene, lighting, &p, &n, &pose.position).rgb());
                    }
                    RayResult::Hit(z) => {
                        depth.push(z.clamp(MIN_DEPTH, MAX_DEPTH));
                        valid.push(false);
                        rgb.extend([0.0; 3]);
                    }
                    RayResult::Miss => {
                        depth.push(MAX_DEPTH);
                        valid.push(false);
                        rgb.extend([0.0; 3]);
                    }
                }
            }
            (depth, valid, rgb)
        })
        .collect();
    let mut depth = Vec::with_capacity(width * height);
    let mut valid = Vec::with_capacity(width * height);
    let mut rgb = Vec::with_capacity(width * height * 3);
    for (d, m, c) in rows {
        depth.extend(d);
        valid.extend(m);
        rgb.extend(c);
    }
    Ok(FramePair {
        rgb: RgbImage::new(width, height, rgb)?,
        depth: DepthMap::with_mask(width, height, depth, valid)?,
        pose: *pose,
    })
}

/// A frame of the wall seen from the side, with every pixel on the wall.
/// Used as the fixture for refinement and ablation runs.
pub fn wall_view_frame(seed: u64, preset: Preset, size: usize) -> Result<(FramePair, CameraIntrinsics)> {
    let scene = generate_scene(seed, preset);
    let mut rng = seeded_rng(seed ^ 0x5EED);
    let params = PoseParams {
        z: rng.uniform(8.0, 20.0),
        yaw: rng.uniform(1.0, 1.3),
        pitch: rng.uniform(-0.2, 0.2),
        offset: [0.0, 0.0],
    };
    let pose = CameraPose::from_params(&scene, &params);
    let cam = CameraIntrinsics::default_for(size, size);
    let frame = render_frame(&scene, &pose, &LightingModel::default(), &cam, size, size)?;
    Ok((frame, cam))
}

/// One manifest line: everything needed to re-render a frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub index: usize,
    pub scene_seed: u64,
    pub preset: Preset,
    pub pose: PoseParams,
    pub lighting: LightingModel,
    pub cam: CameraIntrinsics,
    pub width: usize,
    pub height: usize,
    pub rgb_file: String,
    pub depth_file: String,
}

impl FrameRecord {
    pub fn render(&self) -> Result<FramePair> {
        let scene = generate_scene(self.scene_seed, self.preset);
        let pose = CameraPose::from_params(&scene, &self.pose);
        render_frame(&scene, &pose, &self.lighting, &self.cam, self.width, self.height)
    }

    fn to_line(&self) -> String {
        let l = &self.lighting;
        let mut s = String::from("frame");
        let mut kv = |k: &str, v: &dyn std::fmt::Display| {
            let _ = write!(s, " {k}={v}");
        };
        kv("index", &self.index);
        kv("seed", &self.scene_seed);
        kv("preset", &self.preset.name());
        kv("z", &self.pose.z);
        kv("yaw", &self.pose.yaw);
        kv("pitch", &self.pose.pitch);
        kv("offset_x", &self.pose.offset[0]);
        kv("offset_y", &self.pose.offset[1]);
        kv("intensity", &l.intensity);
        kv("color_r", &l.color[0]);
        kv("color_g", &l.color[1]);
        kv("color_b", &l.color[2]);
        kv("ambient", &l.ambient);
        kv("specular_strength", &l.specular_strength);
        kv("specular_exponent", &l.specular_exponent);
        kv("falloff", &l.falloff);
        kv("width", &self.width);
        kv("height", &self.height);
        kv("fx", &self.cam.fx);
        kv("fy", &self.cam.fy);
        kv("cx", &self.cam.cx);
        kv("cy", &self.cam.cy);
        kv("rgb", &self.rgb_file);
        kv("depth", &self.depth_file);
        s
    }

    fn from_line(line: &str, lineno: usize) -> Result<Self> {
        let bad = |reason: String| Error::MalformedManifest { line: lineno, reason };
        let mut fields = std::collections::HashMap::new();
        let mut tokens = line.split_whitespace();
        if tokens.next() != Some("frame") {
            return Err(bad("expected a 'frame' record".into()));
        }
        for tok in tokens {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| bad(format!("token {tok:?} is not key=value")))?;
            fields.insert(k, v);
        }
        let get = |k: &str| fields.get(k).copied().ok_or_else(|| bad(format!("missing {k}")));
        let num = |k: &str| -> Result<f64> {
            get(k)?
                .parse::<f64>()
                .map_err(|_| bad(format!("{k} is not a number")))
        };
        let int = |k: &str| -> Result<u64> {
            get(k)?
                .parse::<u64>()
                .map_err(|_| bad(format!("{k} is not an integer")))
        };
        let preset = Preset::parse(get("preset")?).ok_or_else(|| bad("unknown preset".into()))?;
        Ok(Self {
            index: int("index")? as usize,
            scene_seed: int("seed")?,
            preset,
            pose: PoseParams {
                z: num("z")?,
                yaw: num("yaw")?,
                pitch: num("pitch")?,
                offset: [num("offset_x")?, num("offset_y")?],
            },
            lighting: LightingModel {
                intensity: num("intensity")?,
                color: [num("color_r")?, num("color_g")?, num("color_b")?],
                ambient: num("ambient")?,
                specular_strength: num("specular_strength")?,
                specular_exponent: num("specular_exponent")?,
                falloff: num("falloff")?,
            },
            cam: CameraIntrinsics::new(num("fx")?, num("fy")?, num("cx")?, num("cy")?)?,
            width: int("width")? as usize,
            height: int("height")? as usize,
            rgb_file: get("rgb")?.to_string(),
            depth_file: get("depth")?.to_string(),
        })
    }
}

/// Plain-text dataset manifest.
///
/// The first line is `# endogeo-manifest v1`; every following non-comment
/// line is `frame` followed by space-separated `key=value` pairs: `index`,
/// `seed`, `preset`, `z`, `yaw`, `pitch`, `offset_x`, `offset_y`,
/// `intensity`, `color_r`, `color_g`, `color_b`, `ambient`,
/// `specular_strength`, `specular_exponent`, `falloff`, `width`, `height`,
/// `fx`, `fy`, `cx`, `cy`, `rgb`, `depth`. Floats use the shortest decimal
/// form that round-trips exactly.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub frames: Vec<FrameRecord>,
}

pub const MANIFEST_FILE: &str = "manifest.txt";

impl Manifest {
    pub fn to_text(&self) -> String {
        let mut s = format!("# {MANIFEST_VERSION}\n");
        for f in &self.frames {
            s.push_str(&f.to_line());
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, first)) if first.trim() == format!("# {MANIFEST_VERSION}") => {}
            _ => {
                return Err(Error::MalformedManifest {
                    line: 1,
                    reason: format!("expected header '# {MANIFEST_VERSION}'"),
                })
            }
        }
        let frames = lines
            .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
            .map(|(i, l)| FrameRecord::from_line(l, i + 1))
            .collect::<Result<_>>()?;
        Ok(Self { frames })
    }

    pub fn read(dir: impl AsRef<Path>) -> Result<Self> {
        let path = dir.as_ref().join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Self::parse(&text)
    }
}

/// Inputs for [`generate_dataset`].
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub count: usize,
    pub presets: Vec<Preset>,
    pub seed: u64,
    pub intensity_range: (f64, f64),
    pub ambient_range: (f64, f64),
    pub width: usize,
    pub height: usize,
    pub out_dir: PathBuf,
}

impl DatasetConfig {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        Self {
            count: 10,
            presets: Preset::ALL.to_vec(),
            seed: 0,
            intensity_range: (0.6, 1.6),
            ambient_range: (0.02, 0.1),
            width: DEFAULT_FRAME_SIZE,
            height: DEFAULT_FRAME_SIZE,
            out_dir: out_dir.into(),
        }
    }
}

fn sample_record(rng: &mut SeededRng, index: usize, cfg: &DatasetConfig) -> Result<FrameRecord> {
    let preset = cfg.presets[index % cfg.presets.len()];
    let cam = CameraIntrinsics::default_for(cfg.width, cfg.height);
    loop {
        let scene_seed = rng.fork_seed();
        let scene = generate_scene(scene_seed, preset);
        let r = scene.base_radius * 0.3;
        let pose = PoseParams {
            z: rng.uniform(0.0, 30.0),
            yaw: rng.uniform(-0.7, 0.7),
            pitch: rng.uniform(-0.7, 0.7),
            offset: [rng.uniform(-r, r), rng.uniform(-r, r)],
        };
        let lighting = LightingModel {
            intensity: rng.uniform(cfg.intensity_range.0, cfg.intensity_range.1),
            color: [rng.uniform(0.85, 1.0), rng.uniform(0.8, 1.0), rng.uniform(0.75, 1.0)],
            ambient: rng.uniform(cfg.ambient_range.0, cfg.ambient_range.1),
            specular_strength: rng.uniform(0.2, 0.6),
            specular_exponent: rng.uniform(16.0, 64.0),
            falloff: scene.base_radius * rng.uniform(1.5, 3.0),
        };
        let position = CameraPose::from_params(&scene, &pose).position;
        if scene.wall_field(&position) > MIN_DEPTH {
            return Ok(FrameRecord {
                index,
                scene_seed,
                preset,
                pose,
                lighting,
                cam,
                width: cfg.width,
                height: cfg.height,
                rgb_file: format!("frame_{index:04}.ppm"),
                depth_file: format!("frame_{index:04}.pfm"),
            });
        }
    }
}

fn write_frames(manifest: &Manifest, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for rec in &manifest.frames {
        let frame = rec.render()?;
        write_rgb_ppm(&frame.rgb, dir.join(&rec.rgb_file))?;
        write_depth_pfm(&frame.depth, dir.join(&rec.depth_file))?;
    }
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, manifest.to_text()).map_err(|e| Error::io(&path, e))
}

/// Render `cfg.count` frames into `cfg.out_dir` and write the manifest.
pub fn generate_dataset(cfg: &DatasetConfig) -> Result<Manifest> {
    if cfg.presets.is_empty() {
        return Err(Error::InvalidConfig("at least one preset is required".into()));
    }
    if cfg.width == 0 || cfg.height == 0 {
        return Err(Error::InvalidConfig("frame size must be positive".into()));
    }
    let mut rng = seeded_rng(cfg.seed);
    let frames = (0..cfg.count)
        .map(|i| sample_record(&mut rng, i, cfg))
        .collect::<Result<_>>()?;
    let manifest = Manifest { frames };
    write_frames(&manifest, &cfg.out_dir)?;
    Ok(manifest)
}

/// Re-render every frame listed in `manifest` into `out_dir`.
pub fn regenerate_from_manifest(manifest: &Manifest, out_dir: impl AsRef<Path>) -> Result<()> {
    write_frames(manifest, out_dir.as_ref())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn straight_tube(radius: f64) -> SceneModel {
        SceneModel {
            preset: Preset::Colon,
            centerline: Centerline {
                start: CENTERLINE_START,
                segment_length: SEGMENT_LENGTH,
                knots: vec![[0.0, 0.0]; SEGMENT_COUNT + 1],
            },
            base_radius: radius,
            fold_amplitude: 0.0,
            fold_frequency: 1.0,
            fold_phase: 0.0,
            bumps: vec![],
            texture_seed: 1,
            base_color: [0.8, 0.5, 0.4],
        }
    }

    #[test]
    fn scenes_are_deterministic() {
        assert_eq!(generate_scene(0, Preset::Colon), generate_scene(0, Preset::Colon));
        let a = generate_scene(0, Preset::Colon);
        let b = generate_scene(1, Preset::Colon);
        assert_ne!(a.fold_phase, b.fold_phase);
    }

    #[test]
    fn preset_fold_frequencies_are_ordered() {
        let f = [STOMACH, COLON, DUODENUM].map(|p| p.fold_frequency);
        assert!(f[0] < f[1] && f[1] < f[2]);
        assert!(generate_scene(0, Preset::Stomach).fold_frequency < generate_scene(0, Preset::Colon).fold_frequency);
    }

    #[test]
    fn generated_scenes_are_valid() {
        for seed in 0..20 {
            for preset in Preset::ALL {
                generate_scene(seed, preset).validate().unwrap();
            }
        }
    }

    #[test]
    fn preset_names_parse() {
        assert_eq!(Preset::parse("colon-like"), Some(Preset::Colon));
        assert_eq!(Preset::parse("stomach"), Some(Preset::Stomach));
        assert_eq!(Preset::parse("liver"), None);
    }

    #[test]
    fn centerline_interpolates_knots() {
        let scene = generate_scene(3, Preset::Colon);
        let c = &scene.centerline;
        for (k, knot) in c.knots.iter().enumerate() {
            let z = c.start + k as f64 * c.segment_length;
            let o = c.offset(z);
            assert!((o[0] - knot[0]).abs() < 1e-12 && (o[1] - knot[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn axial_ray_misses_and_is_far_clamped() {
        let scene = straight_tube(1.0);
        let pose = CameraPose::from_params(&scene, &PoseParams::on_axis(0.0));
        let cam = CameraIntrinsics::new(8.0, 8.0, 8.0, 8.0).unwrap();
        let f = render_frame(&scene, &pose, &LightingModel::default(), &cam, 17, 17).unwrap();
        let centre = 8 * 17 + 8;
        assert_eq!(f.depth.data()[centre], MAX_DEPTH);
        assert!(!f.depth.is_valid(centre));
    }

    #[test]
    fn perpendicular_ray_hits_at_radius() {
        let scene = straight_tube(1.0);
        // yaw of 90 degrees: the optical axis points at the wall
        let pose = CameraPose::from_params(
            &scene,
            &PoseParams {
                z: 5.0,
                yaw: PI / 2.0,
                pitch: 0.0,
                offset: [0.0, 0.0],
            },
        );
        let cam = CameraIntrinsics::new(8.0, 8.0, 8.0, 8.0).unwrap();
        let f = render_frame(&scene, &pose, &LightingModel::default(), &cam, 17, 17).unwrap();
        let centre = 8 * 17 + 8;
        assert!(f.depth.is_valid(centre));
        assert!((f.depth.data()[centre] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn no_light_gives_black_image_same_depth() {
        let scene = generate_scene(2, Preset::Colon);
        let pose = CameraPose::from_params(&scene, &PoseParams::on_axis(10.0));
        let cam = CameraIntrinsics::default_for(24, 24);
        let lit = render_frame(&scene, &pose, &LightingModel::default(), &cam, 24, 24).unwrap();
        let dark = LightingModel {
            intensity: 0.0,
            ambient: 0.0,
            ..LightingModel::default()
        };
        let f = render_frame(&scene, &pose, &dark, &cam, 24, 24).unwrap();
        assert!(f.rgb.data().iter().all(|&v| v == 0.0));
        assert_eq!(f.depth, lit.depth);
    }

    #[test]
    fn camera_outside_is_rejected() {
        let scene = straight_tube(1.0);
        let pose = CameraPose::from_params(
            &scene,
            &PoseParams {
                z: 0.0,
                yaw: 0.0,
                pitch: 0.0,
                offset: [2.0, 0.0],
            },
        );
        let cam = CameraIntrinsics::default_for(4, 4);
        assert!(matches!(
            render_frame(&scene, &pose, &LightingModel::default(), &cam, 4, 4),
            Err(Error::CameraOutsideLumen { .. })
        ));
    }

    #[test]
    fn specular_only_near_view_direction() {
        let scene = straight_tube(1.0);
        let lighting = LightingModel::default();
        let p = [1.0, 0.0, 0.0];
        let eye = [0.0, 0.0, 0.0];
        for k in 0..50 {
            let a = k as f64 * 0.03;
            let n = [-a.cos(), 0.0, a.sin()];
            let s = shade(&scene, &lighting, &p, &n, &eye);
            let cos = a.cos();
            if cos < SPECULAR_CUTOFF {
                assert_eq!(s.specular, [0.0; 3]);
            } else {
                assert!(s.specular[0] > 0.0);
            }
        }
    }

    #[test]
    fn noise_is_deterministic_and_bounded() {
        for i in 0..100 {
            let p = [i as f64 * 0.37, -(i as f64) * 0.11, 3.3];
            let v = value_noise(&p, 9);
            assert!((0.0..1.0).contains(&v));
            assert_eq!(v, value_noise(&p, 9));
        }
    }

    #[test]
    fn manifest_text_round_trip() {
        let rec = FrameRecord {
            index: 3,
            scene_seed: u64::MAX,
            preset: Preset::Duodenum,
            pose: PoseParams {
                z: 0.1 + 0.2,
                yaw: -1e-17,
                pitch: 0.5,
                offset: [1.0 / 3.0, 0.0],
            },
            lighting: LightingModel::default(),
            cam: CameraIntrinsics::default_for(32, 32),
            width: 32,
            height: 32,
            rgb_file: "frame_0003.ppm".into(),
            depth_file: "frame_0003.pfm".into(),
        };
        let m = Manifest { frames: vec![rec] };
        assert_eq!(Manifest::parse(&m.to_text()).unwrap(), m);
        assert!(Manifest::parse("frame index=1").is_err());
    }
}
