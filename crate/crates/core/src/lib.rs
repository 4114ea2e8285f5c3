//! Dynamic scene reconstruction as a sequence of independently optimized
//! Gaussian splat clouds, one per video frame, plus the orbit-rendering
//! evaluation harness used to score them.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases at the bottom of this file fix the common choices.

pub mod camera;
pub mod evaluate;
pub mod gaussian;
pub mod image;
pub mod linalg;
pub mod loss;
pub mod optim;
pub mod pipeline;
pub mod projection;
pub mod raster;
pub mod reconstruct;
mod scalar;

pub use camera::{orbit_cameras, Camera, CameraError, CameraManifest, CameraRecord, Intrinsics, OrbitSpec};
pub use gaussian::{covariance3d, Gaussian3D, GaussianCloud, GaussianError};
pub use image::{Image, ImageError};
pub use projection::{project, Covariance2D, CullReason, Projected, Projection};
pub use raster::{
    render, render_backward, render_with, tile_bin, CloudGradients, RasterError, RasterSettings, RenderOutput,
    RenderState, TileBins,
};
pub use optim::{Adam, AdamHyper, LearningRates};
pub use reconstruct::{
    init_cloud, optimize_frame, optimize_frame_with, psnr, FrameFit, PSNR_CAP_DB, FrameViewSet, LossTrace, OptimConfig,
    ReconstructError, StepEvent, TraceEntry, TrainingView, ViewOrder,
};
pub use scalar::Scalar;

pub type Gaussian3DF32 = Gaussian3D<f32>;
pub type Gaussian3DF64 = Gaussian3D<f64>;
pub type GaussianCloudF32 = GaussianCloud<f32>;
pub type GaussianCloudF64 = GaussianCloud<f64>;
pub type CameraF32 = Camera<f32>;
pub type CameraF64 = Camera<f64>;
pub type ImageF32 = Image<f32>;
pub type ImageF64 = Image<f64>;
