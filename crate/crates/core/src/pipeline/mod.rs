//! Datasets, synthetic ground truth, per-frame reconstruction of a whole
//! video and the on-disk formats.

pub mod dataset;
pub mod format;
pub mod ply;
pub mod synthetic;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::camera::CameraManifest;
use crate::gaussian::GaussianCloud;
use crate::reconstruct::{optimize_frame_with, FrameFit, FrameViewSet, OptimConfig, ReconstructError, StepEvent};

pub use dataset::{
    export_dataset, ingest_dataset, synth_dataset, synthesize, Dataset, DatasetError, DatasetMeta, SeedVideo,
    SynthConfig, GROUND_TRUTH_FILE,
};
pub use format::{decode_video3d, encode_video3d, load_video3d, save_video3d, FormatError};
pub use ply::{read_ply_ascii, write_ply_ascii, PlyError};
pub use synthetic::{SceneKind, SceneSpec, SyntheticScene};

/// Where a [`Video3D`] came from.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    /// SHA-256 of the serialized run configuration, hex encoded.
    pub config_hash: String,
    pub global_seed: u64,
    /// Source frame of each stored cloud.
    pub frame_indices: Vec<usize>,
    pub frame_seeds: Vec<u64>,
}

/// One cloud per reconstructed frame, in frame order.
#[derive(Debug, Clone, PartialEq)]
pub struct Video3D {
    pub clouds: Vec<GaussianCloud<f32>>,
    pub cameras: CameraManifest,
    pub provenance: Provenance,
}

impl Video3D {
    pub fn frame_count(&self) -> usize {
        self.clouds.len()
    }

    pub fn validate(&self) -> Result<(), String> {
        let p = &self.provenance;
        if p.frame_indices.len() != self.clouds.len() || p.frame_seeds.len() != self.clouds.len() {
            return Err(format!(
                "{} clouds but provenance lists {} frames and {} seeds",
                self.clouds.len(),
                p.frame_indices.len(),
                p.frame_seeds.len()
            ));
        }
        if let Some(i) = self.clouds.iter().position(|c| !c.satisfies_invariants()) {
            return Err(format!("cloud {i} violates the gaussian invariants"));
        }
        Ok(())
    }
}

/// Seed of frame `frame` in a run seeded with `global`. Depends on nothing
/// else, so any subset of frames can be reconstructed on its own.
pub fn frame_seed(global: u64, frame: usize) -> u64 {
    fn splitmix64(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    splitmix64(splitmix64(global) ^ frame as u64)
}

/// Hex SHA-256 of the JSON serialization of `value`.
pub fn config_hash<S: Serialize + ?Sized>(value: &S) -> String {
    let bytes = serde_json::to_vec(value).expect("configuration serializes to JSON");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("seed video has {seed} frames but {sets} view sets were given")]
    FrameCount { seed: usize, sets: usize },
    #[error("worker pool: {0}")]
    Pool(String),
    #[error("worker count must be at least 1")]
    Workers,
}

#[derive(Debug)]
pub struct FrameOutcome {
    pub frame_index: usize,
    pub seed: u64,
    pub result: Result<FrameFit<f32>, ReconstructError>,
}

/// Per-frame results of a reconstruction run, in input order.
#[derive(Debug)]
pub struct VideoRun {
    pub global_seed: u64,
    pub outcomes: Vec<FrameOutcome>,
}

impl VideoRun {
    pub fn failures(&self) -> impl Iterator<Item = (usize, &ReconstructError)> {
        self.outcomes.iter().filter_map(|o| o.result.as_ref().err().map(|e| (o.frame_index, e)))
    }

    pub fn is_complete(&self) -> bool {
        self.failures().next().is_none()
    }

    /// The successfully reconstructed frames as a video.
    pub fn to_video(&self, cameras: CameraManifest, config_hash: String) -> Video3D {
        let ok: Vec<(&FrameOutcome, &FrameFit<f32>)> =
            self.outcomes.iter().filter_map(|o| o.result.as_ref().ok().map(|f| (o, f))).collect();
        Video3D {
            clouds: ok.iter().map(|(_, f)| f.cloud.clone()).collect(),
            cameras,
            provenance: Provenance {
                config_hash,
                global_seed: self.global_seed,
                frame_indices: ok.iter().map(|(o, _)| o.frame_index).collect(),
                frame_seeds: ok.iter().map(|(o, _)| o.seed).collect(),
            },
        }
    }
}

/// Reconstructs every view set independently, each with
/// `config.seed = frame_seed(global_seed, frame_index)`, on a pool of
/// `workers` threads. A failing frame does not stop the others.
pub fn reconstruct_frames(
    view_sets: &[FrameViewSet<f32>],
    config: &OptimConfig,
    global_seed: u64,
    workers: usize,
) -> Result<VideoRun, PipelineError> {
    reconstruct_frames_with(view_sets, config, global_seed, workers, |_, _| {})
}

/// Like [`reconstruct_frames`], calling `observer(frame_index, event)`
/// after every optimizer step of every frame.
pub fn reconstruct_frames_with<F>(
    view_sets: &[FrameViewSet<f32>],
    config: &OptimConfig,
    global_seed: u64,
    workers: usize,
    observer: F,
) -> Result<VideoRun, PipelineError>
where
    F: Fn(usize, StepEvent<'_, f32>) + Sync,
{
    if workers == 0 {
        return Err(PipelineError::Workers);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| PipelineError::Pool(e.to_string()))?;
    let outcomes = pool.install(|| {
        view_sets
            .par_iter()
            .map(|set| {
                let seed = frame_seed(global_seed, set.frame_index);
                let cfg = OptimConfig { seed, ..config.clone() };
                let result = optimize_frame_with(set, &cfg, |e| observer(set.frame_index, e));
                FrameOutcome { frame_index: set.frame_index, seed, result }
            })
            .collect()
    });
    Ok(VideoRun { global_seed, outcomes })
}

/// [`reconstruct_frames`] with the one-view-set-per-seed-frame check.
pub fn reconstruct_video(
    seed: &SeedVideo<f32>,
    view_sets: &[FrameViewSet<f32>],
    config: &OptimConfig,
    global_seed: u64,
    workers: usize,
) -> Result<VideoRun, PipelineError> {
    if seed.frames.len() != view_sets.len() {
        return Err(PipelineError::FrameCount { seed: seed.frames.len(), sets: view_sets.len() });
    }
    reconstruct_frames(view_sets, config, global_seed, workers)
}
