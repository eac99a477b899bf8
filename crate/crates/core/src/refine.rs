//! Direct per-pixel depth refinement by Adam on the total loss, and the
//! four-case ablation built on it.

use std::fmt::Write as _;
use std::path::Path;

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::losses::{loss_total_with_reference, GridChoice, LossConfig, SdfReference};
use crate::metrics::{compute_metrics, MetricsReport};
use crate::rng::seeded_rng;
use crate::synth::{wall_view_frame, Preset};
use crate::types::{CameraIntrinsics, DepthMap, LossBreakdown, LossWeights, RgbImage, MIN_DEPTH};

/// Learning rate for per-pixel updates: the network rate of 1e-4 scaled by 100.
pub const DEFAULT_LEARNING_RATE: f64 = 1e-4 * 100.0;
pub const DEFAULT_ITERATIONS: usize = 500;
/// Side length of the refinement fixture frames.
pub const FIXTURE_SIZE: usize = 64;

/// Which loss groups are switched on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AblationCase {
    /// depth + smoothness
    Case1,
    /// + gradient and normal
    Case2,
    /// + SDF, without gradient and normal
    Case3,
    /// everything
    Case4,
}

impl AblationCase {
    pub const ALL: [AblationCase; 4] = [
        AblationCase::Case1,
        AblationCase::Case2,
        AblationCase::Case3,
        AblationCase::Case4,
    ];

    pub fn number(self) -> u8 {
        match self {
            AblationCase::Case1 => 1,
            AblationCase::Case2 => 2,
            AblationCase::Case3 => 3,
            AblationCase::Case4 => 4,
        }
    }

    pub fn from_number(n: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.number() == n)
    }

    pub fn name(self) -> &'static str {
        match self {
            AblationCase::Case1 => "case1",
            AblationCase::Case2 => "case2",
            AblationCase::Case3 => "case3",
            AblationCase::Case4 => "case4",
        }
    }

    /// `base` with the switched-off groups zeroed.
    pub fn mask_weights(self, base: LossWeights) -> LossWeights {
        let (l2, l3) = match self {
            AblationCase::Case1 => (0.0, 0.0),
            AblationCase::Case2 => (base.lambda2, 0.0),
            AblationCase::Case3 => (0.0, base.lambda3),
            AblationCase::Case4 => (base.lambda2, base.lambda3),
        };
        LossWeights {
            lambda1: base.lambda1,
            lambda2: l2,
            lambda3: l3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Unmasked weights; [`Self::ablation_case`] decides which are used.
    pub weights: LossWeights,
    /// Standard deviation of the multiplicative initialisation noise.
    pub noise_sigma: f64,
    pub ablation_case: AblationCase,
    pub seed: u64,
    /// Snapshot the losses and metrics every this many iterations.
    pub trace_every: usize,
    pub sdf_grid: GridChoice,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            iterations: DEFAULT_ITERATIONS,
            learning_rate: DEFAULT_LEARNING_RATE,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weights: LossWeights::default(),
            noise_sigma: 0.05,
            ablation_case: AblationCase::Case4,
            seed: 0,
            trace_every: 10,
            sdf_grid: GridChoice::default(),
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.iterations == 0 {
            return bad("iterations must be >= 1");
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad("learning rate must be > 0");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1 and beta2 must lie in [0, 1)");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be > 0");
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return bad("noise sigma must be >= 0");
        }
        if self.trace_every == 0 {
            return bad("trace interval must be >= 1");
        }
        LossWeights::new(self.weights.lambda1, self.weights.lambda2, self.weights.lambda3)?;
        Ok(())
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig::new(self.ablation_case.mask_weights(self.weights), self.sdf_grid)
    }
}

/// Snapshot of one iteration. The breakdown carries no gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub iteration: usize,
    pub losses: LossBreakdown,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RefineTrace {
    /// Strictly increasing in `iteration`; the first entry is the
    /// initialisation and the last the returned map.
    pub entries: Vec<TraceEntry>,
    /// Total loss before each update, then once more after the last.
    pub totals: Vec<f64>,
}

pub const TRACE_HEADER: &str = "iteration,depth,smooth,grad,normal,sdf,total,rmse";

impl RefineTrace {
    pub fn initial_rmse(&self) -> f64 {
        self.entries.first().map_or(f64::NAN, |e| e.metrics.rmse)
    }

    pub fn final_rmse(&self) -> f64 {
        self.entries.last().map_or(f64::NAN, |e| e.metrics.rmse)
    }

    /// Fraction of updates after which the total loss did not increase.
    pub fn non_increasing_fraction(&self) -> f64 {
        let steps = self.totals.windows(2).count();
        if steps == 0 {
            return 1.0;
        }
        let ok = self.totals.windows(2).filter(|w| w[1] <= w[0]).count();
        ok as f64 / steps as f64
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(TRACE_HEADER);
        s.push('\n');
        for e in &self.entries {
            let l = &e.losses;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                e.iteration, l.depth, l.smooth, l.grad, l.normal, l.sdf, l.total, e.metrics.rmse
            );
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// `gt * (1 + n)` with `n ~ N(0, sigma)` clipped to `[-3 sigma, 3 sigma]`
/// and the result kept at or above the minimum depth.
pub fn noisy_init(gt: &DepthMap, sigma: f64, seed: u64) -> Result<DepthMap> {
    if sigma == 0.0 {
        return Ok(gt.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut rng = seeded_rng(seed);
    let clip = 3.0 * sigma;
    let data = gt
        .data()
        .iter()
        .map(|&d| {
            let n: f64 = normal.sample(&mut rng);
            (d * (1.0 + n.clamp(-clip, clip))).max(MIN_DEPTH)
        })
        .collect();
    DepthMap::with_mask(gt.width(), gt.height(), data, gt.validity())
}

fn snapshot(iteration: usize, losses: &LossBreakdown, pred: &DepthMap, gt: &DepthMap) -> Result<TraceEntry> {
    Ok(TraceEntry {
        iteration,
        losses: LossBreakdown {
            gradient: None,
            ..losses.clone()
        },
        metrics: compute_metrics(pred, gt, false)?,
    })
}

/// Optimise a noisy copy of `gt` against `gt` and return it with its trace.
pub fn refine_depth(
    gt: &DepthMap,
    image: &RgbImage,
    cam: &CameraIntrinsics,
    cfg: &RefineConfig,
) -> Result<(DepthMap, RefineTrace)> {
    cfg.validate()?;
    let loss_cfg = cfg.loss_config();
    let mask = gt.validity();
    let (w, h) = (gt.width(), gt.height());
    let mut pred = noisy_init(gt, cfg.noise_sigma, cfg.seed)?;
    let mut x = pred.data().to_vec();
    let mut m = vec![0.0; x.len()];
    let mut v = vec![0.0; x.len()];
    let mut trace = RefineTrace::default();
    let sdf_reference = SdfReference::build(gt, cam, &loss_cfg.sdf_grid)?;

    for t in 0..=cfg.iterations {
        let losses = loss_total_with_reference(&pred, gt, image, cam, &loss_cfg, Some(&sdf_reference))?;
        if !losses.total.is_finite() {
            return Err(Error::DivergedLoss {
                iteration: t,
                value: losses.total,
            });
        }
        trace.totals.push(losses.total);
        if t % cfg.trace_every == 0 || t == cfg.iterations {
            trace.entries.push(snapshot(t, &losses, &pred, gt)?);
        }
        if t == cfg.iterations {
            break;
        }
        let g = losses.gradient.as_ref().expect("loss_total fills the gradient").data();
        let step = (t + 1) as i32;
        let c1 = 1.0 - cfg.beta1.powi(step);
        let c2 = 1.0 - cfg.beta2.powi(step);
        for i in 0..x.len() {
            if !mask[i] {
                continue;
            }
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let update = cfg.learning_rate * (m[i] / c1) / ((v[i] / c2).sqrt() + cfg.epsilon);
            x[i] = (x[i] - update).max(MIN_DEPTH);
        }
        pred = DepthMap::with_mask(w, h, x.clone(), mask.clone())?;
    }
    Ok((pred, trace))
}

/// A ground-truth frame to refine against.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub gt: DepthMap,
    pub image: RgbImage,
    pub cam: CameraIntrinsics,
}

/// Side-looking colon frame of `size x size` pixels, all on the wall.
pub fn fixture(seed: u64, size: usize) -> Result<Fixture> {
    let (frame, cam) = wall_view_frame(seed, Preset::Colon, size)?;
    Ok(Fixture {
        gt: frame.depth,
        image: frame.rgb,
        cam,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRun {
    pub case: AblationCase,
    pub seed: u64,
    pub initial: MetricsReport,
    pub final_metrics: MetricsReport,
}

/// Per-case mean of the final metrics over all fixtures, plus every run.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    pub rows: Vec<(AblationCase, MetricsReport)>,
    pub runs: Vec<AblationRun>,
}

impl AblationTable {
    pub fn final_rmse(&self, case: AblationCase, seed: u64) -> Option<f64> {
        self.runs
            .iter()
            .find(|r| r.case == case && r.seed == seed)
            .map(|r| r.final_metrics.rmse)
    }

    /// Seeds on which `better` ended with RMSE no larger than `worse`.
    pub fn wins(&self, better: AblationCase, worse: AblationCase) -> usize {
        let mut seeds: Vec<u64> = self.runs.iter().map(|r| r.seed).collect();
        seeds.sort_unstable();
        seeds.dedup();
        seeds
            .into_iter()
            .filter(|&s| match (self.final_rmse(better, s), self.final_rmse(worse, s)) {
                (Some(a), Some(b)) => a <= b,
                _ => false,
            })
            .count()
    }

    /// `case,rmse,rmse_log,abs_rel,sq_rel,a1,a2,a3` lines with a header.
    pub fn to_csv(&self) -> String {
        let mut s = format!("case,{}\n", MetricsReport::KEYS.join(","));
        for (case, r) in &self.rows {
            let vals: Vec<String> = r.values().iter().map(|v| v.to_string()).collect();
            let _ = writeln!(s, "{},{}", case.name(), vals.join(","));
        }
        s
    }
}

fn mean_report(reports: &[MetricsReport]) -> MetricsReport {
    let n = reports.len() as f64;
    let mean = |f: fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    MetricsReport {
        rmse: mean(|r| r.rmse),
        rmse_log: mean(|r| r.rmse_log),
        abs_rel: mean(|r| r.abs_rel),
        sq_rel: mean(|r| r.sq_rel),
        a1: mean(|r| r.a1),
        a2: mean(|r| r.a2),
        a3: mean(|r| r.a3),
        n_valid: reports.iter().map(|r| r.n_valid).sum(),
        n_excluded: reports.iter().map(|r| r.n_excluded).sum(),
    }
}

/// Run all four cases on every `(seed, fixture)` pair. The seed drives the
/// initial noise, so each case starts from the same corrupted map.
pub fn run_ablation(fixtures: &[(u64, Fixture)], template: &RefineConfig) -> Result<AblationTable> {
    if fixtures.is_empty() {
        return Err(Error::InvalidConfig("ablation needs at least one fixture".into()));
    }
    let jobs: Vec<(AblationCase, &(u64, Fixture))> = AblationCase::ALL
        .into_iter()
        .flat_map(|case| fixtures.iter().map(move |f| (case, f)))
        .collect();
    let runs = jobs
        .into_par_iter()
        .map(|(case, (seed, fx))| {
            let cfg = RefineConfig {
                ablation_case: case,
                seed: *seed,
                ..*template
            };
            let (_, trace) = refine_depth(&fx.gt, &fx.image, &fx.cam, &cfg)?;
            Ok(AblationRun {
                case,
                seed: *seed,
                initial: trace.entries.first().expect("trace has an initial entry").metrics,
                final_metrics: trace.entries.last().expect("trace has a final entry").metrics,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let rows = AblationCase::ALL
        .into_iter()
        .map(|case| {
            let finals: Vec<MetricsReport> = runs
                .iter()
                .filter(|r| r.case == case)
                .map(|r| r.final_metrics)
                .collect();
            (case, mean_report(&finals))
        })
        .collect();
    Ok(AblationTable { rows, runs })
}
