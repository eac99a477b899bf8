//! Geometry-aware depth toolkit: depth, smoothness, gradient, normal and
//! signed-distance losses with analytic gradients, standard depth metrics
//! with median scaling, a procedural lumen RGB-D renderer, and a direct
//! depth-refinement harness.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod geometry;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod refine;
pub mod rng;
pub mod sdf;
pub mod synth;
pub mod types;

pub use error::{Error, Result};
pub use losses::{loss_depth, loss_grad, loss_normal, loss_sdf, loss_smooth, loss_total, LossConfig};
pub use metrics::{compute_metrics, median_scale, MetricsReport};
pub use types::{
    CameraIntrinsics, DepthMap, LossBreakdown, LossWeights, PointCloud, RgbImage, ScalarGrid,
    SdfGridSpec,
};
