//! View-count and motion-amplitude ablation grids.
//!
//! Grid file schema (JSON):
//!
//! ```json
//! { "views": [3, 9, 18], "motion_amplitudes": [0.5, 1.0], "seeds": [0, 1, 2] }
//! ```
//!
//! `views` is required and non-empty. `motion_amplitudes` may be omitted, in
//! which case the dataset is used as is; otherwise the dataset must carry the
//! synthetic scene that produced it so it can be regenerated at each
//! amplitude. `seeds` defaults to `[0]`.

use serde::{Deserialize, Serialize};

use super::{
    clip_i, render_eval_videos, video_psnr, EvalReport, EvalSettings, Embedder, Table,
};
use crate::camera::CameraManifest;
use crate::pipeline::{config_hash, reconstruct_frames, synthesize, Dataset, SynthConfig, Video3D};
use crate::reconstruct::{FrameViewSet, OptimConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationGrid {
    pub views: Vec<usize>,
    #[serde(default)]
    pub motion_amplitudes: Vec<f64>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub n_views: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub motion_amplitude: Option<f64>,
    pub seed: u64,
}

impl GridCell {
    pub fn label(&self) -> String {
        match self.motion_amplitude {
            Some(m) => format!("views{}_motion{}_seed{}", self.n_views, m, self.seed),
            None => format!("views{}_seed{}", self.n_views, self.seed),
        }
    }
}

impl AblationGrid {
    pub fn validate(&self) -> Result<(), String> {
        if self.views.is_empty() {
            return Err("grid has no view counts".into());
        }
        if self.views.contains(&0) {
            return Err("view counts must be positive".into());
        }
        if self.seeds.is_empty() {
            return Err("grid has no seeds".into());
        }
        if let Some(m) = self.motion_amplitudes.iter().find(|m| !(m.is_finite() && **m >= 0.0)) {
            return Err(format!("motion amplitude {m} is not a finite non-negative number"));
        }
        Ok(())
    }

    /// Every cell, ordered by view count, then motion amplitude, then seed.
    pub fn cells(&self) -> Vec<GridCell> {
        let mut views = self.views.clone();
        views.sort_unstable();
        views.dedup();
        let motions: Vec<Option<f64>> = if self.motion_amplitudes.is_empty() {
            vec![None]
        } else {
            self.motion_amplitudes.iter().copied().map(Some).collect()
        };
        let mut out = Vec::new();
        for &n_views in &views {
            for &motion_amplitude in &motions {
                for &seed in &self.seeds {
                    out.push(GridCell { n_views, motion_amplitude, seed });
                }
            }
        }
        out
    }
}

/// Fixed settings shared by all cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    pub optim: OptimConfig,
    pub eval: EvalSettings,
    /// Cameras for PSNR against ground truth.
    pub held_out: EvalSettings,
    pub workers: usize,
}

#[derive(Debug)]
pub struct CellOutcome {
    pub cell: GridCell,
    pub result: Result<EvalReport, String>,
}

#[derive(Debug)]
pub struct AblationOutcome {
    pub cells: Vec<CellOutcome>,
}

/// Every `step`-th view, where `step = available / n`.
pub fn decimate_views(sets: &[FrameViewSet<f32>], n: usize) -> Result<Vec<FrameViewSet<f32>>, String> {
    let available = sets.first().map_or(0, FrameViewSet::len);
    if n == 0 || n > available || available % n != 0 {
        return Err(format!("cannot take {n} evenly spaced views out of {available}"));
    }
    if let Some(s) = sets.iter().find(|s| s.len() != available) {
        return Err(format!("frame {} has {} views, frame 0 has {available}", s.frame_index, s.len()));
    }
    Ok(sets.iter().map(|s| s.decimate(available / n)).collect())
}

fn regenerate(dataset: &Dataset<f32>, amplitude: f64) -> Result<(Dataset<f32>, Video3D), String> {
    let scene = dataset
        .meta
        .scene
        .clone()
        .ok_or("motion ablation needs a synthetic dataset whose meta.json records its scene")?;
    let cfg = SynthConfig {
        scene: crate::pipeline::SceneSpec { motion_amplitude: amplitude, ..scene },
        frames: dataset.meta.frame_count,
        views: dataset.meta.view_count,
        resolution: dataset.meta.resolution[0],
        fps: dataset.meta.fps,
    };
    synthesize(&cfg).map_err(|e| e.to_string())
}

fn run_cell(
    dataset: &Dataset<f32>,
    truth: Option<&Video3D>,
    cell: GridCell,
    config: &AblationConfig,
    embedder: &dyn Embedder,
) -> Result<EvalReport, String> {
    let regenerated;
    let (data, truth) = match cell.motion_amplitude {
        Some(m) => {
            regenerated = regenerate(dataset, m)?;
            (&regenerated.0, Some(&regenerated.1))
        }
        None => (dataset, truth),
    };
    let sets = decimate_views(&data.frames, cell.n_views)?;
    let run = reconstruct_frames(&sets, &config.optim, cell.seed, config.workers).map_err(|e| e.to_string())?;
    if let Some((frame, e)) = run.failures().next() {
        return Err(format!("frame {frame}: {e}"));
    }
    let hash = config_hash(&(cell, config));
    let cameras: Vec<_> = sets[0].views.iter().map(|v| v.camera.clone()).collect();
    let video = run.to_video(CameraManifest::from_cameras(None, &cameras), hash.clone());
    let videos = render_eval_videos(&video, &config.eval).map_err(|e| e.to_string())?;
    let mut report = clip_i(&data.seed.reference, &videos, embedder).map_err(|e| e.to_string())?;
    if let Some(t) = truth {
        let cams = config.held_out.cameras().map_err(|e| e.to_string())?;
        report.psnr = Some(video_psnr(&video, t, &cams).map_err(|e| e.to_string())?);
    }
    report.config.label = Some(cell.label());
    report.config.n_views = Some(cell.n_views);
    report.config.motion_amplitude = cell.motion_amplitude;
    report.config.seed = Some(cell.seed);
    report.config_hash = Some(hash);
    Ok(report)
}

/// Reconstructs and evaluates every cell of `grid`. A failing cell is
/// recorded and the rest still run.
pub fn ablate(
    dataset: &Dataset<f32>,
    truth: Option<&Video3D>,
    grid: &AblationGrid,
    config: &AblationConfig,
    embedder: &dyn Embedder,
) -> Result<AblationOutcome, String> {
    grid.validate()?;
    let cells = grid
        .cells()
        .into_iter()
        .map(|cell| CellOutcome { cell, result: run_cell(dataset, truth, cell, config, embedder) })
        .collect();
    Ok(AblationOutcome { cells })
}

impl AblationOutcome {
    pub fn failures(&self) -> impl Iterator<Item = &CellOutcome> {
        self.cells.iter().filter(|c| c.result.is_err())
    }

    /// One row per (views, motion) group, averaging over seeds, ordered by
    /// view count. Groups with failed cells show the number of gaps.
    pub fn summary(&self) -> Table {
        let motion = self.cells.iter().any(|c| c.cell.motion_amplitude.is_some());
        let mut headers = vec!["Views"];
        if motion {
            headers.push("Motion");
        }
        headers.extend(["Seeds", "CLIP-I", "PSNR (dB)", "Failed"]);
        let mut table = Table::new(headers);
        let mut groups: Vec<(usize, Option<f64>)> = Vec::new();
        for c in &self.cells {
            let key = (c.cell.n_views, c.cell.motion_amplitude);
            if !groups.contains(&key) {
                groups.push(key);
            }
        }
        for key in groups {
            let members: Vec<&CellOutcome> =
                self.cells.iter().filter(|c| (c.cell.n_views, c.cell.motion_amplitude) == key).collect();
            let ok: Vec<&EvalReport> = members.iter().filter_map(|c| c.result.as_ref().ok()).collect();
            let mean = |xs: Vec<f64>| {
                if xs.is_empty() {
                    "-".to_string()
                } else {
                    format!("{:.4}", xs.iter().sum::<f64>() / xs.len() as f64)
                }
            };
            let clip = mean(ok.iter().map(|r| r.clip_i).collect());
            let psnrs: Vec<f64> = ok.iter().filter_map(|r| r.psnr).collect();
            let psnr = if psnrs.is_empty() {
                "-".to_string()
            } else {
                format!("{:.2}", psnrs.iter().sum::<f64>() / psnrs.len() as f64)
            };
            let mut row = vec![key.0.to_string()];
            if motion {
                row.push(key.1.map_or("-".into(), |m| m.to_string()));
            }
            row.extend([ok.len().to_string(), clip, psnr, (members.len() - ok.len()).to_string()]);
            table.row(row);
        }
        table
    }
}
