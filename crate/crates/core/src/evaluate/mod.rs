//! Orbit rendering of reconstructed videos, CLIP-I style similarity scoring,
//! PSNR against ground truth and report tables.

pub mod ablate;
pub mod embed;
pub mod remote;

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{Camera, CameraError, Intrinsics, OrbitSpec, DEFAULT_ORBIT_RADIUS};
use crate::gaussian::{Gaussian3D, GaussianCloud, PARAMS_PER_GAUSSIAN};
use crate::image::Image;
use crate::pipeline::Video3D;
use crate::raster::render;
use crate::reconstruct::psnr;

pub use ablate::{ablate, decimate_views, AblationConfig, AblationGrid, AblationOutcome, CellOutcome, GridCell};
pub use embed::{cosine, EmbedError, Embedder, SurrogateEmbedder, SURROGATE_DIM};
pub use remote::{HealthInfo, RemoteConfig, RemoteEmbedder, REMOTE_DIM};

/// Number of orbit videos rendered per evaluation.
pub const DEFAULT_EVAL_CAMERAS: usize = 10;

/// Azimuth of the first held-out camera, degrees.
pub const HELD_OUT_AZIMUTH_DEG: f64 = 9.0;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("embedding the reference image: {0}")]
    Reference(#[source] EmbedError),
    #[error("embedding view {view}, frame {frame}: {source}")]
    Frame { view: usize, frame: usize, source: EmbedError },
    #[error("embedder returned {got} values, it declares {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("no rendered frames to score")]
    Empty,
    #[error("evaluation cameras: {0}")]
    Camera(#[from] CameraError),
    #[error("{0}")]
    Mismatch(String),
}

impl EvalError {
    pub fn embed_error(&self) -> Option<&EmbedError> {
        match self {
            Self::Reference(e) | Self::Frame { source: e, .. } => Some(e),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub cameras: usize,
    pub resolution: u32,
    /// Radians above the horizontal plane.
    pub elevation: f64,
    pub radius: f64,
    pub look_at: [f64; 3],
    /// Azimuth of the first camera, degrees.
    pub azimuth_offset_deg: f64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            cameras: DEFAULT_EVAL_CAMERAS,
            resolution: 128,
            elevation: 0.0,
            radius: DEFAULT_ORBIT_RADIUS,
            look_at: [0.0; 3],
            azimuth_offset_deg: 0.0,
        }
    }
}

impl EvalSettings {
    /// Ten cameras offset by 9° so that none coincides with a 3-, 9- or
    /// 18-view training orbit; used for PSNR against ground truth.
    pub fn held_out(resolution: u32) -> Self {
        Self { resolution, azimuth_offset_deg: HELD_OUT_AZIMUTH_DEG, ..Self::default() }
    }

    pub fn orbit(&self) -> OrbitSpec {
        OrbitSpec {
            count: self.cameras,
            radius: self.radius,
            elevation: self.elevation,
            look_at: self.look_at,
            azimuth_offset: self.azimuth_offset_deg.to_radians(),
        }
    }

    pub fn cameras(&self) -> Result<Vec<Camera<f32>>, CameraError> {
        self.orbit().cameras(&Intrinsics::square(self.resolution))
    }
}

/// Rendered frames indexed `[camera][frame]`.
pub type EvalVideos = Vec<Vec<Image<f32>>>;

pub fn render_with_cameras(video: &Video3D, cameras: &[Camera<f32>]) -> EvalVideos {
    cameras.par_iter().map(|cam| video.clouds.iter().map(|c| render(c, cam).image).collect()).collect()
}

/// One sequence per orbit camera, each with one image per cloud.
pub fn render_eval_videos(video: &Video3D, settings: &EvalSettings) -> Result<EvalVideos, EvalError> {
    Ok(render_with_cameras(video, &settings.cameras()?))
}

/// What an evaluation was run on.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_views: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub motion_amplitude: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub eval_cameras: usize,
    pub resolution: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub embedder: String,
    /// Mean of `similarity`.
    pub clip_i: f64,
    /// Cosine similarity to the reference, `[camera][frame]`.
    pub similarity: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psnr: Option<f64>,
    pub config: ReportConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn table(&self) -> String {
        let mut t = Table::new(["Metric", "Value"]);
        t.row(["embedder".to_string(), self.embedder.clone()]);
        t.row(["CLIP-I".to_string(), format!("{:.4}", self.clip_i)]);
        if let Some(p) = self.psnr {
            t.row(["PSNR (dB)".to_string(), format!("{p:.2}")]);
        }
        t.row(["cameras x frames".to_string(), format!("{} x {}", self.similarity.len(), self.frames())]);
        t.render()
    }

    pub fn frames(&self) -> usize {
        self.similarity.first().map_or(0, Vec::len)
    }
}

/// Mean over the matrix, in row-major order.
pub fn matrix_mean(m: &[Vec<f64>]) -> f64 {
    let n: usize = m.iter().map(Vec::len).sum();
    m.iter().flatten().sum::<f64>() / n as f64
}

fn checked_embed(embedder: &dyn Embedder, img: &Image<f32>) -> Result<Vec<f32>, EmbedError> {
    let mut v = embedder.embed(img)?;
    embed::normalize(&mut v);
    Ok(v)
}

/// Mean cosine similarity between the reference embedding and the
/// embedding of every frame of every video.
pub fn clip_i(reference: &Image<f32>, videos: &EvalVideos, embedder: &dyn Embedder) -> Result<EvalReport, EvalError> {
    if videos.iter().all(Vec::is_empty) {
        return Err(EvalError::Empty);
    }
    let r = checked_embed(embedder, reference).map_err(EvalError::Reference)?;
    if r.len() != embedder.dim() {
        return Err(EvalError::Dimension { expected: embedder.dim(), got: r.len() });
    }
    let jobs: Vec<(usize, usize)> =
        videos.iter().enumerate().flat_map(|(v, seq)| (0..seq.len()).map(move |f| (v, f))).collect();
    let sims: Vec<Result<f64, EvalError>> = jobs
        .par_iter()
        .map(|&(view, frame)| {
            let e = checked_embed(embedder, &videos[view][frame])
                .map_err(|source| EvalError::Frame { view, frame, source })?;
            if e.len() != r.len() {
                return Err(EvalError::Dimension { expected: r.len(), got: e.len() });
            }
            Ok(cosine(&r, &e).clamp(-1.0, 1.0))
        })
        .collect();
    let mut similarity: Vec<Vec<f64>> = videos.iter().map(|s| Vec::with_capacity(s.len())).collect();
    for ((view, _), s) in jobs.iter().zip(sims) {
        similarity[*view].push(s?);
    }
    Ok(EvalReport {
        embedder: embedder.id().to_string(),
        clip_i: matrix_mean(&similarity),
        similarity,
        psnr: None,
        config: ReportConfig {
            eval_cameras: videos.len(),
            resolution: videos.iter().flatten().next().map_or(0, |i| i.width),
            ..Default::default()
        },
        config_hash: None,
    })
}

/// Mean PSNR between renders of `video` and `truth` from `cameras`, over
/// all cameras and frames. Frames are paired by position.
pub fn video_psnr(video: &Video3D, truth: &Video3D, cameras: &[Camera<f32>]) -> Result<f64, EvalError> {
    if video.clouds.len() != truth.clouds.len() {
        return Err(EvalError::Mismatch(format!(
            "{} frames reconstructed, ground truth has {}",
            video.clouds.len(),
            truth.clouds.len()
        )));
    }
    if video.clouds.is_empty() || cameras.is_empty() {
        return Err(EvalError::Empty);
    }
    let pairs: Vec<(usize, usize)> =
        (0..cameras.len()).flat_map(|c| (0..video.clouds.len()).map(move |f| (c, f))).collect();
    let values: Vec<f64> = pairs
        .par_iter()
        .map(|&(c, f)| {
            let a = render(&video.clouds[f], &cameras[c]).image;
            let b = render(&truth.clouds[f], &cameras[c]).image;
            psnr(&a, &b).expect("same camera, same shape")
        })
        .collect();
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Adds independent `N(0, sigma²)` noise to every parameter of every
/// Gaussian, then renormalizes rotations and clamps colors to [0, 1].
pub fn perturb_cloud(cloud: &GaussianCloud<f32>, sigma: f64, seed: u64) -> GaussianCloud<f32> {
    if sigma == 0.0 {
        return cloud.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sigma).expect("finite sigma");
    let gaussians = cloud
        .gaussians
        .iter()
        .map(|g| {
            let mut p = g.to_params();
            for v in p.iter_mut().take(PARAMS_PER_GAUSSIAN) {
                *v += noise.sample(&mut rng) as f32;
            }
            let mut g = Gaussian3D::from_params(&p);
            g.normalize_rotation();
            g.color = g.color.map(|c| c.clamp(0.0, 1.0));
            g
        })
        .collect();
    GaussianCloud::new(gaussians, cloud.background)
}

pub fn perturb_video(video: &Video3D, sigma: f64, seed: u64) -> Video3D {
    Video3D {
        clouds: video
            .clouds
            .iter()
            .enumerate()
            .map(|(i, c)| perturb_cloud(c, sigma, crate::pipeline::frame_seed(seed, i)))
            .collect(),
        ..video.clone()
    }
}

/// Left-aligned first column, right-aligned others, two-space gutters.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    headers: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(headers: impl IntoIterator<Item = S>) -> Self {
        Self { headers: headers.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }

    pub fn row<S: Into<String>>(&mut self, cells: impl IntoIterator<Item = S>) -> &mut Self {
        let mut cells: Vec<String> = cells.into_iter().map(Into::into).collect();
        cells.resize(self.headers.len(), String::new());
        self.rows.push(cells);
        self
    }

    /// A two-column table of labelled scores with four decimals.
    pub fn scores<'a>(key: &str, value: &str, rows: impl IntoIterator<Item = (&'a str, f64)>) -> Self {
        let mut t = Self::new([key, value]);
        for (k, v) in rows {
            t.row([k.to_string(), format!("{v:.4}")]);
        }
        t
    }

    pub fn render(&self) -> String {
        let widths: Vec<usize> = (0..self.headers.len())
            .map(|c| {
                self.rows.iter().map(|r| r[c].chars().count()).chain([self.headers[c].chars().count()]).max().unwrap_or(0)
            })
            .collect();
        let line = |cells: &[String]| {
            let mut s = String::new();
            for (c, cell) in cells.iter().enumerate() {
                if c > 0 {
                    s.push_str("  ");
                }
                if c == 0 {
                    let _ = write!(s, "{cell:<w$}", w = widths[c]);
                } else {
                    let _ = write!(s, "{cell:>w$}", w = widths[c]);
                }
            }
            s.trim_end().to_string()
        };
        let mut out = line(&self.headers);
        out.push('\n');
        out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * widths.len().saturating_sub(1)));
        out.push('\n');
        for r in &self.rows {
            out.push_str(&line(r));
            out.push('\n');
        }
        out
    }
}
