//! `endogeo` command line. Every command prints `key=value` lines on stdout.
//!
//! Exit codes: 0 success, 1 domain error (message on stderr, starting with
//! the error name), 2 usage error. `ENDOGEO_THREADS` caps the worker pool
//! (0 or unset = one worker per core).

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::geometry::depth_to_cloud;
use crate::io::{read_depth_pfm, read_rgb_ppm, write_cloud_ply, write_depth_pfm, write_report_json, write_scalar_cloud_ply};
use crate::losses::{grad_check, jitter, loss_total, GridChoice, LossConfig, LossInputs, LossKind};
use crate::metrics::{compute_metrics, MetricsReport};
use crate::refine::{fixture, refine_depth, run_ablation, AblationCase, Fixture, RefineConfig, FIXTURE_SIZE};
use crate::rng::seeded_rng;
use crate::sdf::{auto_grid_spec, sample_grid, sdf_field, DEFAULT_GRID_RESOLUTION};
use crate::synth::{generate_dataset, DatasetConfig, Manifest, Preset};
use crate::types::{CameraIntrinsics, DepthMap, LossWeights, PointCloud, RgbImage, SdfGridSpec};

pub const THREADS_ENV: &str = "ENDOGEO_THREADS";

#[derive(Debug, Parser)]
#[command(name = "endogeo", version, about = "Geometry-aware depth losses, metrics and synthetic lumen data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct CamArgs {
    /// Focal length in x, pixels (default: width / 2)
    #[arg(long)]
    fx: Option<f64>,
    #[arg(long)]
    fy: Option<f64>,
    /// Principal point (default: image centre width / 2, height / 2)
    #[arg(long)]
    cx: Option<f64>,
    #[arg(long)]
    cy: Option<f64>,
}

impl CamArgs {
    fn resolve(&self, width: usize, height: usize) -> Result<CameraIntrinsics> {
        let d = CameraIntrinsics::default_for(width, height);
        CameraIntrinsics::new(
            self.fx.unwrap_or(d.fx),
            self.fy.unwrap_or(d.fy),
            self.cx.unwrap_or(d.cx),
            self.cy.unwrap_or(d.cy),
        )
    }
}

fn parse_triple(s: &str) -> std::result::Result<[usize; 3], String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err("expected RX,RY,RZ".into());
    }
    let mut out = [0; 3];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.trim().parse().map_err(|_| format!("{p:?} is not a count"))?;
    }
    Ok(out)
}

fn parse_pair(s: &str) -> std::result::Result<[usize; 2], String> {
    match s.split_once(',') {
        Some((a, b)) => Ok([
            a.trim().parse().map_err(|_| format!("{a:?} is not a count"))?,
            b.trim().parse().map_err(|_| format!("{b:?} is not a count"))?,
        ]),
        None => Err("expected H,W".into()),
    }
}

fn parse_range(s: &str) -> std::result::Result<(f64, f64), String> {
    match s.split_once(',') {
        Some((a, b)) => Ok((
            a.trim().parse().map_err(|_| format!("{a:?} is not a number"))?,
            b.trim().parse().map_err(|_| format!("{b:?} is not a number"))?,
        )),
        None => s
            .trim()
            .parse()
            .map(|v| (v, v))
            .map_err(|_| format!("{s:?} is not a number or LO,HI range")),
    }
}

#[derive(Debug, Clone)]
struct PresetList(Vec<Preset>);

fn parse_preset(s: &str) -> std::result::Result<PresetList, String> {
    if s == "all" {
        return Ok(PresetList(Preset::ALL.to_vec()));
    }
    s.split(',')
        .map(|p| Preset::parse(p.trim()).ok_or_else(|| format!("unknown preset {p:?}")))
        .collect::<std::result::Result<_, _>>()
        .map(PresetList)
}

fn parse_case(s: &str) -> std::result::Result<AblationCase, String> {
    let n = s.strip_prefix("case").unwrap_or(s);
    n.parse::<u8>()
        .ok()
        .and_then(AblationCase::from_number)
        .ok_or_else(|| format!("case must be 1, 2, 3 or 4, got {s:?}"))
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a synthetic RGB-D dataset and its manifest
    Synth {
        /// stomach, colon, duodenum, a comma list, or all
        #[arg(long, default_value = "all", value_parser = parse_preset)]
        preset: PresetList,
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Frame size as H,W
        #[arg(long, value_parser = parse_pair)]
        size: Option<[usize; 2]>,
        /// Light intensity: a value or LO,HI range
        #[arg(long, value_parser = parse_range)]
        intensity: Option<(f64, f64)>,
        /// Re-render the frames listed in an existing manifest instead
        #[arg(long, conflicts_with_all = ["count", "seed", "size", "intensity"])]
        from_manifest: Option<PathBuf>,
    },
    /// Evaluate all loss terms for a prediction
    Loss {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        lambda1: f64,
        #[arg(long, default_value_t = 0.5)]
        lambda2: f64,
        #[arg(long, default_value_t = 0.1)]
        lambda3: f64,
        /// SDF grid resolution RX,RY,RZ over the padded ground-truth bounds
        #[arg(long, value_parser = parse_triple)]
        grid: Option<[usize; 3]>,
        #[command(flatten)]
        cam: CamArgs,
    },
    /// Standard depth metrics
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        median_scale: bool,
        /// Also write the report as JSON
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Refine a noisy copy of a ground-truth depth map
    Refine {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long, default_value = "4", value_parser = parse_case)]
        case: AblationCase,
        #[arg(long, default_value_t = crate::refine::DEFAULT_ITERATIONS)]
        iters: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.05)]
        noise: f64,
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Write the refined depth map
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        cam: CamArgs,
    },
    /// Run the four-case ablation
    Ablate {
        /// A synth output directory; without it, side-view colon frames are rendered
        #[arg(long)]
        fixtures: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long, default_value_t = crate::refine::DEFAULT_ITERATIONS)]
        iters: usize,
        /// Write the per-case table as CSV
        #[arg(long)]
        table: Option<PathBuf>,
    },
    /// Compare analytic and finite-difference gradients on a random map
    Gradcheck {
        #[arg(long)]
        loss: String,
        /// Map size as H,W
        #[arg(long, default_value = "8,8", value_parser = parse_pair)]
        size: [usize; 2],
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Signed distance field of a depth map's surface on a grid
    Sdf {
        #[arg(long)]
        depth: PathBuf,
        #[arg(long, value_parser = parse_triple)]
        grid: Option<[usize; 3]>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cam: CamArgs,
    },
    /// Back-project a depth map to a point cloud
    Cloud {
        #[arg(long)]
        depth: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cam: CamArgs,
    },
}

fn kv(out: &mut dyn Write, key: &str, value: impl std::fmt::Display) -> Result<()> {
    writeln!(out, "{key}={value}").map_err(|e| Error::io("<stdout>", e))
}

fn print_metrics(out: &mut dyn Write, prefix: &str, r: &MetricsReport) -> Result<()> {
    for (k, v) in MetricsReport::KEYS.iter().zip(r.values()) {
        kv(out, &format!("{prefix}{k}"), v)?;
    }
    Ok(())
}

fn grid_choice(grid: Option<[usize; 3]>) -> GridChoice {
    GridChoice::Auto(grid.unwrap_or(DEFAULT_GRID_RESOLUTION))
}

/// Random ground truth, prediction and image for a gradient check. The
/// prediction is jittered away from the ground truth so no L1 kink sits at a
/// sampled point.
fn gradcheck_inputs(kind: LossKind, [h, w]: [usize; 2], seed: u64) -> Result<(DepthMap, LossInputs)> {
    let mut rng = seeded_rng(seed);
    let gt = DepthMap::new(w, h, (0..w * h).map(|_| rng.uniform(1.0, 2.0)).collect())?;
    let pred = jitter(&gt, 0.2, &mut rng)?;
    let image = RgbImage::new(w, h, (0..w * h * 3).map(|_| rng.next_f64()).collect())?;
    let grid = if kind == LossKind::Sdf { [8, 8, 8] } else { DEFAULT_GRID_RESOLUTION };
    let inputs = LossInputs {
        gt,
        image,
        cam: CameraIntrinsics::default_for(w, h),
        config: LossConfig::new(LossWeights::default(), GridChoice::Auto(grid)),
    };
    Ok((pred, inputs))
}

fn load_fixtures(dir: Option<&PathBuf>, seeds: u64) -> Result<Vec<(u64, Fixture)>> {
    let Some(dir) = dir else {
        return (0..seeds).map(|s| Ok((s, fixture(s, FIXTURE_SIZE)?))).collect();
    };
    let manifest = Manifest::read(dir)?;
    if manifest.frames.is_empty() {
        return Err(Error::InvalidConfig("manifest lists no frames".into()));
    }
    (0..seeds)
        .map(|s| {
            let rec = &manifest.frames[s as usize % manifest.frames.len()];
            let fx = Fixture {
                gt: read_depth_pfm(dir.join(&rec.depth_file))?,
                image: read_rgb_ppm(dir.join(&rec.rgb_file))?,
                cam: rec.cam,
            };
            Ok((s, fx))
        })
        .collect()
}

fn execute(cmd: Command, out: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::Synth {
            preset,
            count,
            seed,
            out: dir,
            size,
            intensity,
            from_manifest,
        } => {
            if let Some(src) = from_manifest {
                let manifest = Manifest::read(&src)?;
                crate::synth::regenerate_from_manifest(&manifest, &dir)?;
                kv(out, "frames", manifest.frames.len())?;
            } else {
                let mut cfg = DatasetConfig::new(&dir);
                cfg.presets = preset.0;
                cfg.count = count;
                cfg.seed = seed;
                if let Some([h, w]) = size {
                    cfg.height = h;
                    cfg.width = w;
                }
                if let Some(r) = intensity {
                    cfg.intensity_range = r;
                }
                let manifest = generate_dataset(&cfg)?;
                kv(out, "frames", manifest.frames.len())?;
            }
            kv(out, "manifest", dir.join(crate::synth::MANIFEST_FILE).display())?;
        }
        Command::Loss {
            pred,
            gt,
            image,
            lambda1,
            lambda2,
            lambda3,
            grid,
            cam,
        } => {
            let pred = read_depth_pfm(pred)?;
            let gt = read_depth_pfm(gt)?;
            let image = read_rgb_ppm(image)?;
            let cam = cam.resolve(gt.width(), gt.height())?;
            let weights = LossWeights::new(lambda1, lambda2, lambda3)?;
            let cfg = LossConfig::new(weights, grid_choice(grid));
            let b = loss_total(&pred, &gt, &image, &cam, &cfg)?;
            for (k, v) in b.entries() {
                kv(out, k, v)?;
            }
        }
        Command::Eval {
            pred,
            gt,
            median_scale,
            json,
        } => {
            let r = compute_metrics(&read_depth_pfm(pred)?, &read_depth_pfm(gt)?, median_scale)?;
            print_metrics(out, "", &r)?;
            kv(out, "n_valid", r.n_valid)?;
            kv(out, "n_excluded", r.n_excluded)?;
            if let Some(path) = json {
                write_report_json(&r, path)?;
            }
        }
        Command::Refine {
            gt,
            image,
            case,
            iters,
            seed,
            noise,
            trace,
            out: out_path,
            cam,
        } => {
            let gt = read_depth_pfm(gt)?;
            let image = read_rgb_ppm(image)?;
            let cam = cam.resolve(gt.width(), gt.height())?;
            let cfg = RefineConfig {
                iterations: iters,
                seed,
                noise_sigma: noise,
                ablation_case: case,
                ..RefineConfig::default()
            };
            let (pred, tr) = refine_depth(&gt, &image, &cam, &cfg)?;
            kv(out, "case", case.name())?;
            kv(out, "iterations", iters)?;
            kv(out, "initial_rmse", tr.initial_rmse())?;
            kv(out, "final_rmse", tr.final_rmse())?;
            kv(out, "final_total", tr.totals.last().copied().unwrap_or(f64::NAN))?;
            if let Some(path) = trace {
                tr.write_csv(path)?;
            }
            if let Some(path) = out_path {
                write_depth_pfm(&pred, path)?;
            }
        }
        Command::Ablate {
            fixtures,
            seeds,
            iters,
            table,
        } => {
            if seeds == 0 {
                return Err(Error::InvalidConfig("seeds must be >= 1".into()));
            }
            let fx = load_fixtures(fixtures.as_ref(), seeds)?;
            let template = RefineConfig {
                iterations: iters,
                ..RefineConfig::default()
            };
            let t = run_ablation(&fx, &template)?;
            for (case, r) in &t.rows {
                print_metrics(out, &format!("{}.", case.name()), r)?;
            }
            kv(out, "case4_beats_case1", format!("{}/{}", t.wins(AblationCase::Case4, AblationCase::Case1), seeds))?;
            if let Some(path) = table {
                std::fs::write(&path, t.to_csv()).map_err(|e| Error::io(&path, e))?;
            }
        }
        Command::Gradcheck { loss, size, seed } => {
            let kind = LossKind::parse(&loss).ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "unknown loss {loss:?}; expected depth, smooth, grad, normal, sdf or total"
                ))
            })?;
            let (pred, inputs) = gradcheck_inputs(kind, size, seed)?;
            let err = grad_check(kind, &pred, &inputs)?;
            kv(out, "loss", kind.name())?;
            kv(out, "max_rel_error", err)?;
        }
        Command::Sdf { depth, grid, out: path, cam } => {
            let depth = read_depth_pfm(depth)?;
            let cam = cam.resolve(depth.width(), depth.height())?;
            let cloud = depth_to_cloud(&depth, &cam)?;
            let spec: SdfGridSpec = auto_grid_spec(&cloud, grid.unwrap_or(DEFAULT_GRID_RESOLUTION))?;
            let samples = sample_grid(&spec)?;
            let field = sdf_field(&samples, &depth, &cam)?;
            let (points, values): (Vec<_>, Vec<_>) = field
                .samples
                .iter()
                .flatten()
                .map(|s| (s.position, s.signed()))
                .unzip();
            write_scalar_cloud_ply(&PointCloud::new(points)?, "sdf", &values, path)?;
            kv(out, "samples", samples.len())?;
            kv(out, "included", field.included())?;
            kv(out, "excluded", field.excluded)?;
        }
        Command::Cloud { depth, out: path, cam } => {
            let depth = read_depth_pfm(depth)?;
            let cam = cam.resolve(depth.width(), depth.height())?;
            let cloud = depth_to_cloud(&depth, &cam)?;
            write_cloud_ply(&cloud, path)?;
            kv(out, "points", cloud.len())?;
        }
    }
    Ok(())
}

fn thread_count() -> std::result::Result<usize, String> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(0),
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| format!("{THREADS_ENV} must be a non-negative integer, got {v:?}")),
    }
}

/// Parse `args` (including the program name), run the command and return
/// the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{e}");
                    0
                }
                _ => {
                    let _ = write!(err, "{e}");
                    2
                }
            };
        }
    };
    let threads = match thread_count() {
        Ok(n) => n,
        Err(msg) => {
            let _ = writeln!(err, "{msg}");
            return 2;
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(p) => p,
        Err(e) => {
            let _ = writeln!(err, "cannot start worker pool: {e}");
            return 1;
        }
    };
    let mut buf = Vec::new();
    let result = pool.install(|| execute(cli.command, &mut buf));
    let _ = out.write_all(&buf);
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "{e}");
            1
        }
    }
}
