use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vidsplat_core::evaluate::*;
use vidsplat_core::pipeline::*;
use vidsplat_core::{psnr, Image, OptimConfig, PSNR_CAP_DB};

fn scene(frames: usize, views: usize, res: u32, seed: u64) -> SynthConfig {
    SynthConfig {
        frames,
        views,
        resolution: res,
        scene: SceneSpec { n_gaussians: 60, seed, ..Default::default() },
        fps: 8.0,
    }
}

fn settings(res: u32) -> EvalSettings {
    EvalSettings { resolution: res, ..Default::default() }
}

/// Picks one of two orthogonal axes by the red channel of the first pixel.
struct AxisEmbedder;

impl Embedder for AxisEmbedder {
    fn id(&self) -> &str {
        "axis"
    }
    fn dim(&self) -> usize {
        2
    }
    fn embed(&self, image: &Image<f32>) -> Result<Vec<f32>, EmbedError> {
        Ok(if image.data[0] > 0.5 { vec![1.0, 0.0] } else { vec![0.0, 1.0] })
    }
}

/// Fails on images whose green channel starts at exactly 0.25.
struct FailOnMarker;

impl Embedder for FailOnMarker {
    fn id(&self) -> &str {
        "marker"
    }
    fn dim(&self) -> usize {
        2
    }
    fn embed(&self, image: &Image<f32>) -> Result<Vec<f32>, EmbedError> {
        if image.data[1] == 0.25 {
            return Err(EmbedError::Malformed("marker".into()));
        }
        Ok(vec![0.6, 0.8])
    }
}

fn flat(r: f32, g: f32) -> Image<f32> {
    Image::filled(4, 4, [r, g, 0.0])
}

#[test]
fn twenty_five_frames_give_ten_sequences_of_twenty_five() {
    let (_, truth) = synthesize(&scene(25, 1, 8, 0)).unwrap();
    let videos = render_eval_videos(&truth, &settings(16)).unwrap();
    assert_eq!(videos.len(), 10);
    assert!(videos.iter().all(|v| v.len() == 25 && v[0].width == 16));
    assert_eq!(videos, render_eval_videos(&truth, &settings(16)).unwrap());

    let single = Video3D { clouds: truth.clouds[..1].to_vec(), ..truth };
    let videos = render_eval_videos(&single, &settings(16)).unwrap();
    assert_eq!(videos.iter().map(Vec::len).collect::<Vec<_>>(), vec![1; 10]);
}

#[test]
fn identical_frames_score_one_and_orthogonal_frames_zero() {
    let e = SurrogateEmbedder::new();
    let img = flat(0.7, 0.1);
    let videos = vec![vec![img.clone(); 3]; 2];
    let r = clip_i(&img, &videos, &e).unwrap();
    assert!((r.clip_i - 1.0).abs() < 1e-6);

    let r = clip_i(&flat(0.9, 0.0), &vec![vec![flat(0.1, 0.0); 3]; 2], &AxisEmbedder).unwrap();
    assert_eq!(r.clip_i, 0.0);
    assert_eq!(r.embedder, "axis");
}

#[test]
fn clip_i_is_the_matrix_mean_and_permutation_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let reference = flat(0.9, 0.0);
    let videos: EvalVideos =
        (0..4).map(|_| (0..5).map(|_| flat(if rng.random::<bool>() { 0.9 } else { 0.1 }, 0.0)).collect()).collect();
    let r = clip_i(&reference, &videos, &AxisEmbedder).unwrap();
    assert_eq!((r.similarity.len(), r.frames()), (4, 5));
    let hits = videos.iter().flatten().filter(|i| i.data[0] > 0.5).count();
    assert_eq!(r.clip_i, hits as f64 / 20.0);
    assert_eq!(r.clip_i, matrix_mean(&r.similarity));

    let mut shuffled = videos.clone();
    shuffled.reverse();
    shuffled.iter_mut().for_each(|v| v.rotate_left(2));
    assert_eq!(clip_i(&reference, &shuffled, &AxisEmbedder).unwrap().clip_i, r.clip_i);
}

#[test]
fn embedder_failure_reports_view_and_frame() {
    let mut videos = vec![vec![flat(0.5, 0.5); 4]; 3];
    videos[2][1] = flat(0.5, 0.25);
    match clip_i(&flat(0.5, 0.5), &videos, &FailOnMarker) {
        Err(EvalError::Frame { view: 2, frame: 1, .. }) => {}
        other => panic!("expected failure at view 2 frame 1, got {other:?}"),
    }
    assert!(matches!(clip_i(&flat(0.5, 0.25), &videos, &FailOnMarker), Err(EvalError::Reference(_))));
    assert!(matches!(clip_i(&flat(0.5, 0.5), &vec![], &FailOnMarker), Err(EvalError::Empty)));
}

#[test]
fn report_json_round_trips() {
    let e = SurrogateEmbedder::new();
    let (data, truth) = synthesize(&scene(2, 1, 16, 0)).unwrap();
    let mut r = clip_i(&data.seed.reference, &render_eval_videos(&truth, &settings(16)).unwrap(), &e).unwrap();
    r.psnr = Some(31.5);
    let back: EvalReport = serde_json::from_str(&r.to_json()).unwrap();
    assert_eq!(back, r);
    assert!(r.similarity.iter().flatten().all(|s| (0.0..=1.0).contains(s)));
    assert!(r.table().contains("CLIP-I"));
}

#[test]
fn comparison_table_fixture() {
    let t = Table::scores(
        "Model",
        "CLIP-I",
        [("sds-animated", 0.8544), ("sds-deformed", 0.9227), ("per-frame splats", 0.8946)],
    );
    let expected = "\
Model             CLIP-I
------------------------
sds-animated      0.8544
sds-deformed      0.9227
per-frame splats  0.8946
";
    assert_eq!(t.render(), expected);
}

#[test]
fn view_count_table_fixture() {
    let t = Table::scores("Number of views", "CLIP-I", [("3", 0.8532), ("9", 0.8879), ("18 (Baseline)", 0.8946)]);
    let expected = "\
Number of views  CLIP-I
-----------------------
3                0.8532
9                0.8879
18 (Baseline)    0.8946
";
    assert_eq!(t.render(), expected);
}

#[test]
fn motion_table_fixture() {
    let t = Table::scores("Motion Score", "CLIP-I", [("120 (Baseline)", 0.8946), ("160", 0.8893), ("200", 0.8897)]);
    let expected = "\
Motion Score    CLIP-I
----------------------
120 (Baseline)  0.8946
160             0.8893
200             0.8897
";
    assert_eq!(t.render(), expected);
}

#[test]
fn psnr_reference_values() {
    let zeros = Image::<f32>::zeros(8, 8);
    let ones = Image::filled(8, 8, [1.0f32; 3]);
    assert_eq!(psnr(&zeros, &ones).unwrap(), 0.0);
    assert_eq!(psnr(&ones, &ones).unwrap(), PSNR_CAP_DB);
    assert!(psnr(&zeros, &Image::zeros(8, 9)).is_err());

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a: Vec<f64> = (0..300).map(|_| rng.random()).collect();
    let b: Vec<f64> = (0..300).map(|_| rng.random()).collect();
    let mse = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / 300.0;
    let ia = Image::from_vec(10, 10, a).unwrap();
    let ib = Image::from_vec(10, 10, b).unwrap();
    assert!((psnr(&ia, &ib).unwrap() - (-10.0 * mse.log10())).abs() < 1e-9);
}

#[test]
fn ground_truth_beats_degraded_renders() {
    let e = SurrogateEmbedder::new();
    let sigmas = [0.0, 0.05, 0.1, 0.2, 0.4];
    let mut means = [0.0; 5];
    for seed in 0..3 {
        let (data, truth) = synthesize(&scene(3, 1, 48, seed)).unwrap();
        for (m, &s) in means.iter_mut().zip(&sigmas) {
            let v = perturb_video(&truth, s, seed);
            *m += clip_i(&data.seed.reference, &render_eval_videos(&v, &settings(48)).unwrap(), &e).unwrap().clip_i / 3.0;
        }
    }
    for w in means.windows(2) {
        assert!(w[1] <= w[0], "{means:?}");
    }
    assert!(means[4] < means[0]);
}

#[test]
fn perturbation_keeps_clouds_valid() {
    let (_, truth) = synthesize(&scene(2, 1, 8, 1)).unwrap();
    assert_eq!(perturb_video(&truth, 0.0, 4), truth);
    let noisy = perturb_video(&truth, 0.5, 4);
    assert!(noisy.validate().is_ok());
    assert_ne!(noisy.clouds, truth.clouds);
    assert_eq!(noisy, perturb_video(&truth, 0.5, 4));
}

#[test]
fn video_psnr_is_capped_for_ground_truth_and_checks_frames() {
    let (_, truth) = synthesize(&scene(2, 1, 8, 0)).unwrap();
    let cams = EvalSettings::held_out(16).cameras().unwrap();
    assert_eq!(video_psnr(&truth, &truth, &cams).unwrap(), PSNR_CAP_DB);
    let short = Video3D { clouds: truth.clouds[..1].to_vec(), ..truth.clone() };
    assert!(matches!(video_psnr(&short, &truth, &cams), Err(EvalError::Mismatch(_))));
}

#[test]
fn held_out_cameras_avoid_training_azimuths() {
    let held: Vec<f64> = (0..10).map(|k| EvalSettings::held_out(16).orbit().azimuth(k).to_degrees()).collect();
    for n in [3usize, 9, 18] {
        for k in 0..n {
            let train = 360.0 * k as f64 / n as f64;
            assert!(held.iter().all(|h| (h - train).abs() > 0.5), "{n} views");
        }
    }
}

#[test]
fn decimated_view_sets_are_nested() {
    let (data, _) = synthesize(&scene(1, 18, 8, 0)).unwrap();
    let centers = |n| -> Vec<[f32; 3]> {
        decimate_views(&data.frames, n).unwrap()[0].views.iter().map(|v| v.camera.center()).collect()
    };
    let (c3, c9, c18) = (centers(3), centers(9), centers(18));
    assert_eq!((c3.len(), c9.len(), c18.len()), (3, 9, 18));
    assert!(c3.iter().all(|c| c9.contains(c)));
    assert!(c9.iter().all(|c| c18.contains(c)));
    assert_eq!(c3, vec![c18[0], c18[6], c18[12]]);
    assert!(decimate_views(&data.frames, 4).is_err());
    assert!(decimate_views(&data.frames, 36).is_err());
}

#[test]
fn grid_parsing_validation_and_order() {
    let g: AblationGrid = serde_json::from_str(r#"{"views": [18, 3, 9]}"#).unwrap();
    assert_eq!(g.seeds, vec![0]);
    assert_eq!(g.cells().iter().map(|c| c.n_views).collect::<Vec<_>>(), vec![3, 9, 18]);
    let empty: AblationGrid = serde_json::from_str(r#"{"views": []}"#).unwrap();
    assert!(empty.validate().is_err());
    assert!(serde_json::from_str::<AblationGrid>(r#"{"views": [3], "typo": 1}"#).is_err());
    let g: AblationGrid = serde_json::from_str(r#"{"views": [3], "motion_amplitudes": [0.5, 1.0], "seeds": [1, 2]}"#).unwrap();
    assert_eq!(g.cells().len(), 4);
}

fn tiny_ablation() -> AblationConfig {
    AblationConfig {
        optim: OptimConfig { n_splats: 40, n_steps: 10, prune_interval: 5, ..Default::default() },
        eval: EvalSettings { cameras: 2, resolution: 16, ..Default::default() },
        held_out: EvalSettings { cameras: 2, ..EvalSettings::held_out(16) },
        workers: 1,
    }
}

#[test]
fn failing_cells_are_recorded_and_the_rest_run() {
    let (data, truth) = synthesize(&scene(2, 6, 16, 0)).unwrap();
    let grid = AblationGrid { views: vec![6, 4, 2], motion_amplitudes: vec![], seeds: vec![0] };
    let out = ablate(&data, Some(&truth), &grid, &tiny_ablation(), &SurrogateEmbedder::new()).unwrap();
    let views: Vec<usize> = out.cells.iter().map(|c| c.cell.n_views).collect();
    assert_eq!(views, vec![2, 4, 6]);
    assert_eq!(out.failures().map(|c| c.cell.n_views).collect::<Vec<_>>(), vec![4]);
    let ok = out.cells[0].result.as_ref().unwrap();
    assert_eq!(ok.config.n_views, Some(2));
    assert!(ok.psnr.is_some() && ok.config_hash.is_some());
    let summary = out.summary().render();
    let rows: Vec<&str> = summary.lines().skip(2).collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[1].starts_with('4') && rows[1].ends_with('1'));
}

#[test]
fn motion_cells_regenerate_the_scene() {
    let (data, _) = synthesize(&scene(2, 2, 16, 0)).unwrap();
    let grid = AblationGrid { views: vec![2], motion_amplitudes: vec![0.0, 2.0], seeds: vec![0] };
    let out = ablate(&data, None, &grid, &tiny_ablation(), &SurrogateEmbedder::new()).unwrap();
    assert_eq!(out.failures().count(), 0);
    let amps: Vec<Option<f64>> = out.cells.iter().map(|c| c.result.as_ref().unwrap().config.motion_amplitude).collect();
    assert_eq!(amps, vec![Some(0.0), Some(2.0)]);
    assert!(out.cells.iter().all(|c| c.result.as_ref().unwrap().psnr.is_some()));
    assert!(out.summary().render().starts_with("Views  Motion"));

    let mut bare = data.clone();
    bare.meta.scene = None;
    let out = ablate(&bare, None, &grid, &tiny_ablation(), &SurrogateEmbedder::new()).unwrap();
    assert_eq!(out.failures().count(), 2);
}
