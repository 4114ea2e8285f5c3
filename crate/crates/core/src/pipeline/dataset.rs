//! On-disk multi-view dataset: a seed video plus posed views per frame.
//!
//! ```text
//! root/meta.json
//! root/reference.png
//! root/seed/frame_0000.png ...
//! root/frames/0000/cameras.json
//! root/frames/0000/view_00.png ...
//! root/ground_truth.v3dz            (synthetic datasets only)
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::format::{save_video3d, FormatError};
use super::synthetic::{SceneSpec, SyntheticScene};
use super::{Provenance, Video3D};
use crate::camera::{CameraManifest, Intrinsics, OrbitSpec};
use crate::image::{Image, ImageError};
use crate::raster::render;
use crate::reconstruct::{FrameViewSet, TrainingView};
use crate::Scalar;

/// Frame count of a default seed video.
pub const DEFAULT_SEED_FRAMES: usize = 25;
pub const DEFAULT_VIEWS: usize = 18;
pub const GROUND_TRUTH_FILE: &str = "ground_truth.v3dz";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("frame {frame}: missing directory {path}")]
    MissingFrameDir { frame: usize, path: PathBuf },
    #[error("frame {frame}: manifest lists {cameras} cameras but the directory has {images} images")]
    CountMismatch { frame: usize, cameras: usize, images: usize },
    #[error("unreadable image: {0}")]
    UnreadableImage(#[source] ImageError),
    #[error("{path}: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("{path}: expected {expected:?} pixels, found {found:?}")]
    Resolution { path: PathBuf, expected: (u32, u32), found: (u32, u32) },
    #[error("dataset has no seed frames")]
    Empty,
    #[error("frame {frame}: {message}")]
    Frame { frame: usize, message: String },
    #[error(transparent)]
    Format(#[from] FormatError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io { path: path.to_path_buf(), source }
}

/// The 2D video fixing the scene dynamics, plus its conditioning image.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedVideo<T> {
    pub frames: Vec<Image<T>>,
    pub fps: f64,
    pub reference: Image<T>,
    /// Carried through untouched.
    pub motion_score: Option<f64>,
}

impl<T: Scalar> SeedVideo<T> {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let first = self.frames.first().ok_or(DatasetError::Empty)?;
        for (i, f) in self.frames.iter().enumerate() {
            if (f.width, f.height) != (first.width, first.height) {
                return Err(DatasetError::Frame {
                    frame: i,
                    message: format!("seed frame is {}x{}, frame 0 is {}x{}", f.width, f.height, first.width, first.height),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub fps: f64,
    #[serde(default)]
    pub motion_score: Option<f64>,
    /// `[width, height]` of every image.
    pub resolution: [u32; 2],
    pub frame_count: usize,
    pub view_count: usize,
    /// Generator settings, for synthetic datasets.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene: Option<SceneSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub meta: DatasetMeta,
    pub seed: SeedVideo<T>,
    pub frames: Vec<FrameViewSet<T>>,
}

fn frame_dir(root: &Path, frame: usize) -> PathBuf {
    root.join("frames").join(format!("{frame:04}"))
}

fn view_path(dir: &Path, view: usize) -> PathBuf {
    dir.join(format!("view_{view:02}.png"))
}

fn seed_path(root: &Path, frame: usize) -> PathBuf {
    root.join("seed").join(format!("frame_{frame:04}.png"))
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<(), DatasetError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| DatasetError::Manifest { path: path.to_path_buf(), message: e.to_string() })?;
    text.push('\n');
    std::fs::write(path, text).map_err(io_err(path))
}

fn read_json<D: serde::de::DeserializeOwned>(path: &Path) -> Result<D, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| DatasetError::Manifest { path: path.to_path_buf(), message: e.to_string() })
}

fn write_image<T: Scalar>(path: &Path, img: &Image<T>) -> Result<(), DatasetError> {
    img.write_png(path).map_err(DatasetError::UnreadableImage)
}

pub fn export_dataset<T: Scalar>(root: &Path, data: &Dataset<T>) -> Result<(), DatasetError> {
    data.seed.validate()?;
    std::fs::create_dir_all(root.join("seed")).map_err(io_err(root))?;
    write_json(&root.join("meta.json"), &data.meta)?;
    write_image(&root.join("reference.png"), &data.seed.reference)?;
    for (i, f) in data.seed.frames.iter().enumerate() {
        write_image(&seed_path(root, i), f)?;
    }
    for set in &data.frames {
        let dir = frame_dir(root, set.frame_index);
        std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let cams: Vec<_> = set.views.iter().map(|v| v.camera.clone()).collect();
        write_json(&dir.join("cameras.json"), &CameraManifest::from_cameras(Some(set.frame_index), &cams))?;
        for (k, v) in set.views.iter().enumerate() {
            write_image(&view_path(&dir, k), &v.target)?;
        }
    }
    Ok(())
}

fn read_image<T: Scalar>(path: &Path, expected: (u32, u32)) -> Result<Image<T>, DatasetError> {
    let img = Image::<T>::read_png(path).map_err(DatasetError::UnreadableImage)?;
    if (img.width, img.height) != expected {
        return Err(DatasetError::Resolution {
            path: path.to_path_buf(),
            expected,
            found: (img.width, img.height),
        });
    }
    Ok(img)
}

fn count_views(dir: &Path) -> Result<usize, DatasetError> {
    let entries = std::fs::read_dir(dir).map_err(io_err(dir))?;
    let mut n = 0;
    for e in entries {
        let name = e.map_err(io_err(dir))?.file_name();
        let name = name.to_string_lossy();
        if name.starts_with("view_") && name.ends_with(".png") {
            n += 1;
        }
    }
    Ok(n)
}

/// Reads a dataset, checking that every seed frame has a view directory
/// whose image count matches its camera manifest.
pub fn ingest_dataset<T: Scalar>(root: &Path) -> Result<Dataset<T>, DatasetError> {
    let meta: DatasetMeta = read_json(&root.join("meta.json"))?;
    let res = (meta.resolution[0], meta.resolution[1]);
    let reference = read_image(&root.join("reference.png"), res)?;

    let mut seed_frames = Vec::new();
    while seed_path(root, seed_frames.len()).exists() {
        seed_frames.push(read_image(&seed_path(root, seed_frames.len()), res)?);
    }
    if seed_frames.is_empty() {
        return Err(DatasetError::Empty);
    }
    if seed_frames.len() != meta.frame_count {
        return Err(DatasetError::Manifest {
            path: root.join("meta.json"),
            message: format!("frame_count is {} but seed/ has {} frames", meta.frame_count, seed_frames.len()),
        });
    }

    let mut frames = Vec::with_capacity(seed_frames.len());
    for i in 0..seed_frames.len() {
        let dir = frame_dir(root, i);
        if !dir.is_dir() {
            return Err(DatasetError::MissingFrameDir { frame: i, path: dir });
        }
        let manifest_path = dir.join("cameras.json");
        let manifest: CameraManifest = read_json(&manifest_path)?;
        if let Some(fi) = manifest.frame_index {
            if fi != i {
                return Err(DatasetError::Manifest {
                    path: manifest_path,
                    message: format!("manifest is for frame {fi}"),
                });
            }
        }
        let images = count_views(&dir)?;
        if images != manifest.len() {
            return Err(DatasetError::CountMismatch { frame: i, cameras: manifest.len(), images });
        }
        let cameras = manifest
            .to_cameras::<T>()
            .map_err(|e| DatasetError::Manifest { path: manifest_path.clone(), message: e.to_string() })?;
        let mut views = Vec::with_capacity(cameras.len());
        for (k, camera) in cameras.into_iter().enumerate() {
            let target = read_image(&view_path(&dir, k), res)?;
            views.push(TrainingView { camera, target });
        }
        let set = FrameViewSet::new(i, views).map_err(|e| DatasetError::Frame { frame: i, message: e.to_string() })?;
        frames.push(set);
    }
    let seed = SeedVideo { frames: seed_frames, fps: meta.fps, reference, motion_score: meta.motion_score };
    Ok(Dataset { meta, seed, frames })
}

/// Settings of a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub scene: SceneSpec,
    pub frames: usize,
    pub views: usize,
    pub resolution: u32,
    pub fps: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { scene: SceneSpec::default(), frames: DEFAULT_SEED_FRAMES, views: DEFAULT_VIEWS, resolution: 128, fps: 8.0 }
    }
}

/// Renders a synthetic scene from an elevation-0 orbit for every frame.
/// View 0 doubles as the seed camera, and frame 0's view 0 is the reference.
/// Images are quantized to 8 bits so they match what ingestion reads back.
/// Returns the dataset and the ground-truth clouds it was rendered from.
pub fn synthesize(config: &SynthConfig) -> Result<(Dataset<f32>, Video3D), DatasetError> {
    if config.frames == 0 || config.views == 0 || config.resolution == 0 {
        return Err(DatasetError::Empty);
    }
    let scene = SyntheticScene::new(config.scene.clone());
    let intr = Intrinsics::square(config.resolution);
    let cameras = OrbitSpec::new(config.views)
        .cameras::<f32>(&intr)
        .map_err(|e| DatasetError::Frame { frame: 0, message: e.to_string() })?;
    let mut clouds = Vec::with_capacity(config.frames);
    let mut frames = Vec::with_capacity(config.frames);
    let mut seed_frames = Vec::with_capacity(config.frames);
    for t in 0..config.frames {
        let cloud = scene.frame(t).cast::<f32>();
        let views: Vec<TrainingView<f32>> = cameras
            .iter()
            .map(|c| TrainingView { camera: c.clone(), target: render(&cloud, c).image.quantized() })
            .collect();
        seed_frames.push(views[0].target.clone());
        frames.push(FrameViewSet { frame_index: t, views });
        clouds.push(cloud);
    }
    let meta = DatasetMeta {
        fps: config.fps,
        motion_score: None,
        resolution: [config.resolution; 2],
        frame_count: config.frames,
        view_count: config.views,
        scene: Some(config.scene.clone()),
    };
    let seed = SeedVideo { reference: seed_frames[0].clone(), frames: seed_frames, fps: config.fps, motion_score: None };
    let truth = Video3D {
        clouds,
        cameras: CameraManifest::from_cameras(None, &cameras),
        provenance: Provenance {
            config_hash: super::config_hash(config),
            global_seed: config.scene.seed,
            frame_indices: (0..config.frames).collect(),
            frame_seeds: vec![config.scene.seed; config.frames],
        },
    };
    Ok((Dataset { meta, seed, frames }, truth))
}

/// [`synthesize`] and write the result, ground truth included, under `root`.
pub fn synth_dataset(root: &Path, config: &SynthConfig) -> Result<(Dataset<f32>, Video3D), DatasetError> {
    let (data, truth) = synthesize(config)?;
    export_dataset(root, &data)?;
    save_video3d(&truth, &root.join(GROUND_TRUTH_FILE))?;
    Ok((data, truth))
}
