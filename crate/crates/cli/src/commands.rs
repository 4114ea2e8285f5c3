use std::fmt;
use std::path::Path;
use std::sync::Mutex;

use anyhow::{anyhow, Context};
use vidsplat_core::evaluate::{
    ablate as run_ablation, clip_i, decimate_views, render_eval_videos, render_with_cameras, video_psnr,
    AblationConfig, AblationGrid, EvalError, EvalReport, Embedder, RemoteEmbedder, SurrogateEmbedder,
};
use vidsplat_core::pipeline::{
    ingest_dataset, load_video3d, reconstruct_frames_with, save_video3d, synth_dataset, write_ply_ascii,
    GROUND_TRUTH_FILE,
};
use vidsplat_core::{CameraManifest, Image};

use crate::config::{read_sidecar, write_sidecar, RunConfig, SURROGATE};
use crate::{AblateArgs, EvaluateArgs, ReconstructArgs, RenderArgs, SynthArgs, VerifyArgs};

#[derive(Debug)]
pub enum CmdError {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
    External(anyhow::Error),
}

impl CmdError {
    pub fn code(&self) -> u8 {
        match self {
            Self::Runtime(_) => 1,
            Self::Usage(_) => 2,
            Self::External(_) => 3,
        }
    }
}

impl fmt::Display for CmdError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Usage(e) | Self::Runtime(e) | Self::External(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<anyhow::Error> for CmdError {
    fn from(e: anyhow::Error) -> Self {
        Self::Runtime(e)
    }
}

type CmdResult = Result<(), CmdError>;

fn usage(msg: impl fmt::Display) -> CmdError {
    CmdError::Usage(anyhow!("{msg}"))
}

fn runtime<E: Into<anyhow::Error>>(context: String) -> impl FnOnce(E) -> CmdError {
    move |e| CmdError::Runtime(e.into().context(context))
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, CmdError> {
    RunConfig::load(path).map_err(CmdError::Usage)
}

fn positive(name: &str, v: Option<usize>) -> Result<Option<usize>, CmdError> {
    match v {
        Some(0) => Err(usage(format!("--{name} must be at least 1"))),
        v => Ok(v),
    }
}

fn make_embedder(spec: &str) -> Result<Box<dyn Embedder>, CmdError> {
    if spec == SURROGATE {
        Ok(Box::new(SurrogateEmbedder::new()))
    } else if spec.starts_with("http://") || spec.starts_with("https://") {
        Ok(Box::new(RemoteEmbedder::new(spec)))
    } else {
        Err(usage(format!("embedder must be '{SURROGATE}' or an http(s) URL, got '{spec}'")))
    }
}

fn eval_failure(e: EvalError) -> CmdError {
    if e.embed_error().is_some() {
        CmdError::External(anyhow!(e).context("embedding service"))
    } else {
        CmdError::Runtime(anyhow!(e))
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), CmdError> {
    std::fs::write(path, text).map_err(runtime(format!("writing {}", path.display())))
}

fn create_dir(path: &Path) -> Result<(), CmdError> {
    std::fs::create_dir_all(path).map_err(runtime(format!("creating {}", path.display())))
}

pub fn synth_data(a: SynthArgs) -> CmdResult {
    let mut cfg = load_config(a.common.config.as_deref())?;
    let s = &mut cfg.synth;
    if let Some(kind) = a.scene {
        s.scene.kind = kind.parse().map_err(usage)?;
    }
    s.frames = positive("frames", a.frames)?.unwrap_or(s.frames);
    s.views = positive("views", a.views)?.unwrap_or(s.views);
    s.scene.n_gaussians = positive("gaussians", a.gaussians)?.unwrap_or(s.scene.n_gaussians);
    s.resolution = positive("resolution", a.resolution.map(|r| r as usize))?.map_or(s.resolution, |r| r as u32);
    if let Some(m) = a.motion_amplitude {
        if !(m.is_finite() && m >= 0.0) {
            return Err(usage("--motion-amplitude must be a finite non-negative number"));
        }
        s.scene.motion_amplitude = m;
    }
    if let Some(seed) = a.seed {
        s.scene.seed = seed;
    }
    if s.frames == 0 || s.views == 0 || s.resolution == 0 || s.scene.n_gaussians == 0 {
        return Err(usage("frames, views, resolution and gaussians must all be positive"));
    }
    create_dir(&a.out)?;
    synth_dataset(&a.out, &cfg.synth).map_err(runtime(format!("writing dataset to {}", a.out.display())))?;
    write_sidecar(&a.out, &cfg)?;
    let s = &cfg.synth;
    println!(
        "wrote {} frames x {} views at {}x{} to {} (config {})",
        s.frames,
        s.views,
        s.resolution,
        s.resolution,
        a.out.display(),
        &cfg.hash()[..12]
    );
    Ok(())
}

pub fn reconstruct(a: ReconstructArgs) -> CmdResult {
    let mut cfg = load_config(a.common.config.as_deref())?;
    cfg.optim.n_splats = positive("splats", a.splats)?.unwrap_or(cfg.optim.n_splats);
    cfg.optim.n_steps = a.steps.unwrap_or(cfg.optim.n_steps);
    cfg.workers = positive("workers", a.workers)?.unwrap_or(cfg.workers);
    cfg.global_seed = a.seed.unwrap_or(cfg.global_seed);
    cfg.optim.validate().map_err(usage)?;
    cfg.train_views = positive("views", a.views)?.or(cfg.train_views);
    let every = positive("checkpoint-every", a.checkpoint_every)?;

    let data = ingest_dataset::<f32>(&a.dataset).map_err(runtime(format!("reading {}", a.dataset.display())))?;
    let sets = match cfg.train_views {
        Some(n) => decimate_views(&data.frames, n).map_err(usage)?,
        None => data.frames.clone(),
    };
    if data.seed.frames.len() != sets.len() {
        return Err(CmdError::Runtime(anyhow!(
            "seed video has {} frames but the dataset has {} view sets",
            data.seed.frames.len(),
            sets.len()
        )));
    }
    for dir in [&a.trace_dir, &a.checkpoint_dir].into_iter().flatten() {
        create_dir(dir)?;
    }

    let checkpoint_error = Mutex::new(None);
    let observer = |frame: usize, e: vidsplat_core::StepEvent<'_, f32>| {
        let (Some(k), Some(dir)) = (every, &a.checkpoint_dir) else { return };
        if (e.step + 1) % k == 0 {
            let path = dir.join(format!("frame_{frame:04}_step_{:06}.ply", e.step + 1));
            if let Err(err) = std::fs::write(&path, write_ply_ascii(e.cloud)) {
                checkpoint_error.lock().unwrap().get_or_insert(format!("{}: {err}", path.display()));
            }
        }
    };
    let run = reconstruct_frames_with(&sets, &cfg.optim, cfg.global_seed, cfg.workers, observer)
        .map_err(|e| CmdError::Runtime(anyhow!(e)))?;
    if let Some(msg) = checkpoint_error.into_inner().unwrap() {
        return Err(CmdError::Runtime(anyhow!("writing checkpoint {msg}")));
    }

    for o in &run.outcomes {
        match &o.result {
            Ok(fit) => {
                println!(
                    "frame {:04}  loss {:.4e} -> {:.4e}  train psnr {:.2} dB  splats {} (pruned {})",
                    o.frame_index,
                    fit.trace.first_loss().unwrap_or(f64::NAN),
                    fit.trace.last_loss().unwrap_or(f64::NAN),
                    fit.trace.entries.last().map_or(f64::NAN, |e| e.psnr_train),
                    fit.cloud.len(),
                    fit.pruned
                );
                if let Some(dir) = &a.trace_dir {
                    write_text(&dir.join(format!("frame_{:04}.csv", o.frame_index)), &fit.trace.to_csv())?;
                }
            }
            Err(e) => eprintln!("frame {:04} failed: {e}", o.frame_index),
        }
    }
    let cameras: Vec<_> = sets[0].views.iter().map(|v| v.camera.clone()).collect();
    let video = run.to_video(CameraManifest::from_cameras(None, &cameras), cfg.hash());
    save_video3d(&video, &a.out).map_err(runtime(format!("writing {}", a.out.display())))?;
    write_sidecar(&a.out, &cfg)?;
    let failed = run.failures().count();
    if failed > 0 {
        return Err(CmdError::Runtime(anyhow!(
            "{failed} of {} frames failed; the other frames were written to {}",
            run.outcomes.len(),
            a.out.display()
        )));
    }
    println!("wrote {} frames to {}", video.frame_count(), a.out.display());
    Ok(())
}

pub fn render(a: RenderArgs) -> CmdResult {
    let mut cfg = load_config(a.common.config.as_deref())?;
    cfg.eval.cameras = positive("cameras", a.cameras)?.unwrap_or(cfg.eval.cameras);
    cfg.eval.resolution = a.resolution.unwrap_or(cfg.eval.resolution);
    let video = load_video3d(&a.video).map_err(runtime(format!("reading {}", a.video.display())))?;
    let cameras = match &a.camera_file {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(runtime(format!("reading {}", path.display())))?;
            let manifest: CameraManifest =
                serde_json::from_str(&text).map_err(runtime(format!("parsing {}", path.display())))?;
            manifest.to_cameras::<f32>().map_err(runtime(format!("cameras in {}", path.display())))?
        }
        None => cfg.eval.cameras().map_err(usage)?,
    };
    let videos = render_with_cameras(&video, &cameras);
    for (k, seq) in videos.iter().enumerate() {
        let dir = a.out.join(format!("cam_{k:02}"));
        create_dir(&dir)?;
        for (f, img) in seq.iter().enumerate() {
            let path = dir.join(format!("frame_{f:04}.png"));
            img.write_png(&path).map_err(runtime(format!("writing {}", path.display())))?;
        }
    }
    create_dir(&a.out)?;
    write_sidecar(&a.out, &cfg)?;
    println!("rendered {} cameras x {} frames to {}", cameras.len(), video.frame_count(), a.out.display());
    Ok(())
}

pub fn evaluate(a: EvaluateArgs) -> CmdResult {
    let mut cfg = load_config(a.common.config.as_deref())?;
    if let Some(e) = a.embedder {
        cfg.embedder = e;
    }
    cfg.eval.cameras = positive("cameras", a.cameras)?.unwrap_or(cfg.eval.cameras);
    if let Some(r) = a.resolution {
        cfg.eval.resolution = r;
        cfg.held_out.resolution = r;
    }
    let embedder = make_embedder(&cfg.embedder)?;
    let video = load_video3d(&a.video).map_err(runtime(format!("reading {}", a.video.display())))?;
    let reference =
        Image::<f32>::read_png(&a.reference).map_err(runtime(format!("reading {}", a.reference.display())))?;
    let videos = render_eval_videos(&video, &cfg.eval).map_err(|e| usage(e))?;
    let mut report = clip_i(&reference, &videos, embedder.as_ref()).map_err(eval_failure)?;
    if let Some(gt) = &a.ground_truth {
        let truth = load_video3d(gt).map_err(runtime(format!("reading {}", gt.display())))?;
        let cams = cfg.held_out.cameras().map_err(usage)?;
        report.psnr = Some(video_psnr(&video, &truth, &cams).map_err(eval_failure)?);
    }
    report.config.n_views = Some(video.cameras.len());
    report.config.seed = Some(video.provenance.global_seed);
    report.config_hash = Some(cfg.hash());
    if let Some(dir) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_text(&a.out, &report.to_json())?;
    let table = report.table();
    write_text(&a.out.with_extension("txt"), &table)?;
    write_sidecar(&a.out, &cfg)?;
    print!("{table}");
    Ok(())
}

pub fn ablate(a: AblateArgs) -> CmdResult {
    let mut cfg = load_config(a.common.config.as_deref())?;
    if let Some(e) = a.embedder {
        cfg.embedder = e;
    }
    cfg.optim.n_splats = positive("splats", a.splats)?.unwrap_or(cfg.optim.n_splats);
    cfg.optim.n_steps = a.steps.unwrap_or(cfg.optim.n_steps);
    cfg.workers = positive("workers", a.workers)?.unwrap_or(cfg.workers);
    cfg.optim.validate().map_err(usage)?;
    let text = std::fs::read_to_string(&a.grid).map_err(|e| usage(format!("reading {}: {e}", a.grid.display())))?;
    let grid: AblationGrid =
        serde_json::from_str(&text).map_err(|e| usage(format!("parsing {}: {e}", a.grid.display())))?;
    grid.validate().map_err(|e| usage(format!("{}: {e}", a.grid.display())))?;
    let embedder = make_embedder(&cfg.embedder)?;

    let data = ingest_dataset::<f32>(&a.dataset).map_err(runtime(format!("reading {}", a.dataset.display())))?;
    let gt_path = a.dataset.join(GROUND_TRUTH_FILE);
    let truth = if gt_path.exists() {
        Some(load_video3d(&gt_path).map_err(runtime(format!("reading {}", gt_path.display())))?)
    } else {
        None
    };
    let settings =
        AblationConfig { optim: cfg.optim.clone(), eval: cfg.eval.clone(), held_out: cfg.held_out.clone(), workers: cfg.workers };
    let outcome = run_ablation(&data, truth.as_ref(), &grid, &settings, embedder.as_ref()).map_err(usage)?;

    create_dir(&a.out)?;
    for c in &outcome.cells {
        let label = c.cell.label();
        match &c.result {
            Ok(r) => write_text(&a.out.join(format!("{label}.json")), &r.to_json())?,
            Err(e) => {
                eprintln!("cell {label} failed: {e}");
                write_text(&a.out.join(format!("{label}.error.txt")), &format!("{e}\n"))?;
            }
        }
    }
    let summary = outcome.summary().render();
    write_text(&a.out.join("summary.txt"), &summary)?;
    write_sidecar(&a.out, &cfg)?;
    print!("{summary}");
    let failed = outcome.failures().count();
    if failed > 0 {
        return Err(CmdError::Runtime(anyhow!("{failed} of {} cells failed", outcome.cells.len())));
    }
    Ok(())
}

pub fn verify(a: VerifyArgs) -> CmdResult {
    let path = &a.path;
    if !path.exists() {
        return Err(usage(format!("{} does not exist", path.display())));
    }
    let side = read_sidecar(path)?;
    let recomputed = side.config.hash();
    if recomputed != side.config_hash {
        return Err(CmdError::Runtime(anyhow!(
            "configuration hash mismatch: recorded {}, recomputed {recomputed}",
            side.config_hash
        )));
    }
    let embedded = if path.is_dir() {
        if path.join("meta.json").exists() {
            ingest_dataset::<f32>(path).map_err(runtime(format!("reading dataset {}", path.display())))?;
        }
        None
    } else if path.extension().is_some_and(|e| e == "v3dz") {
        let video = load_video3d(path).map_err(runtime(format!("reading {}", path.display())))?;
        Some(video.provenance.config_hash)
    } else {
        let text = std::fs::read_to_string(path).map_err(runtime(format!("reading {}", path.display())))?;
        let report: EvalReport = serde_json::from_str(&text).map_err(runtime(format!("parsing {}", path.display())))?;
        Some(report.config_hash.context("report carries no configuration hash")?)
    };
    if let Some(h) = embedded {
        if h != recomputed {
            return Err(CmdError::Runtime(anyhow!("{} records configuration {h}, its sidecar hashes to {recomputed}", path.display())));
        }
    }
    println!("ok {recomputed} {}", path.display());
    Ok(())
}
