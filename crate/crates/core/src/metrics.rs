//! Median scaling and the seven standard monocular-depth metrics.
//!
//! With `p` the prediction and `g` the ground truth over valid pixels:
//!
//! | key        | definition                                   |
//! |------------|----------------------------------------------|
//! | `rmse`     | `sqrt(mean((p - g)^2))`                      |
//! | `rmse_log` | `sqrt(mean((ln p - ln g)^2))`                |
//! | `abs_rel`  | `mean(|p - g| / g)`                          |
//! | `sq_rel`   | `mean((p - g)^2 / g)`                        |
//! | `a1..a3`   | fraction with `max(p/g, g/p) < 1.25^k`       |
//!
//! A pixel is used when it is valid in both maps and both depths are
//! positive; everything else is counted in `n_excluded`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{pairwise_sum, DepthMap};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rmse: f64,
    pub rmse_log: f64,
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub n_valid: usize,
    pub n_excluded: usize,
}

impl MetricsReport {
    pub const KEYS: [&'static str; 7] = ["rmse", "rmse_log", "abs_rel", "sq_rel", "a1", "a2", "a3"];

    /// The seven metric values in [`Self::KEYS`] order.
    pub fn values(&self) -> [f64; 7] {
        [
            self.rmse,
            self.rmse_log,
            self.abs_rel,
            self.sq_rel,
            self.a1,
            self.a2,
            self.a3,
        ]
    }
}

/// Median with the even-count convention: mean of the two central order
/// statistics. `None` for an empty slice.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

fn overlap(pred: &DepthMap, gt: &DepthMap) -> Result<Vec<usize>> {
    pred.ensure_same_shape(gt)?;
    let idx: Vec<usize> = (0..pred.len())
        .filter(|&i| pred.is_valid(i) && gt.is_valid(i))
        .filter(|&i| pred.data()[i] > 0.0 && gt.data()[i] > 0.0)
        .collect();
    if idx.is_empty() {
        return Err(Error::EmptyOverlap);
    }
    Ok(idx)
}

/// `median(gt) / median(pred)` over the jointly valid pixels.
pub fn median_scale_factor(pred: &DepthMap, gt: &DepthMap) -> Result<f64> {
    let idx = overlap(pred, gt)?;
    let pm = median(&idx.iter().map(|&i| pred.data()[i]).collect::<Vec<_>>()).unwrap();
    let gm = median(&idx.iter().map(|&i| gt.data()[i]).collect::<Vec<_>>()).unwrap();
    if pm == 0.0 {
        return Err(Error::ZeroMedian { which: "predicted" });
    }
    if gm == 0.0 {
        return Err(Error::ZeroMedian {
            which: "ground-truth",
        });
    }
    Ok(gm / pm)
}

/// `pred * median(gt) / median(pred)`; the mask of `pred` is kept.
pub fn median_scale(pred: &DepthMap, gt: &DepthMap) -> Result<DepthMap> {
    let s = median_scale_factor(pred, gt)?;
    pred.map_values(|d| d * s)
}

pub fn compute_metrics(pred: &DepthMap, gt: &DepthMap, apply_median_scaling: bool) -> Result<MetricsReport> {
    let scaled;
    let pred = if apply_median_scaling {
        scaled = median_scale(pred, gt)?;
        &scaled
    } else {
        pred
    };
    let idx = overlap(pred, gt)?;
    let n = idx.len();
    let mut sq = Vec::with_capacity(n);
    let mut sq_log = Vec::with_capacity(n);
    let mut abs_rel = Vec::with_capacity(n);
    let mut sq_rel = Vec::with_capacity(n);
    let mut within = [0usize; 3];
    for &i in &idx {
        let (p, g) = (pred.data()[i], gt.data()[i]);
        let d = p - g;
        sq.push(d * d);
        let dl = p.ln() - g.ln();
        sq_log.push(dl * dl);
        abs_rel.push(d.abs() / g);
        sq_rel.push(d * d / g);
        let ratio = (p / g).max(g / p);
        for (k, t) in [1.25, 1.25f64.powi(2), 1.25f64.powi(3)].iter().enumerate() {
            if ratio < *t {
                within[k] += 1;
            }
        }
    }
    let inv = 1.0 / n as f64;
    Ok(MetricsReport {
        rmse: (pairwise_sum(&sq) * inv).sqrt(),
        rmse_log: (pairwise_sum(&sq_log) * inv).sqrt(),
        abs_rel: pairwise_sum(&abs_rel) * inv,
        sq_rel: pairwise_sum(&sq_rel) * inv,
        a1: within[0] as f64 * inv,
        a2: within[1] as f64 * inv,
        a3: within[2] as f64 * inv,
        n_valid: n,
        n_excluded: pred.len() - n,
    })
}
