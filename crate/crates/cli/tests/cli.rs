use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn vidsplat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vidsplat"))
        .args(args)
        .env_remove("VIDSPLAT_EMBEDDER_URL")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = vidsplat(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    vidsplat(args).status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Sorted (relative path, bytes) of every file under `root`.
fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    fn walk(dir: &Path, root: &Path, out: &mut Vec<(PathBuf, Vec<u8>)>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(&p, root, out);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(root, root, &mut out);
    out.sort();
    out
}

fn synth(dir: &Path, frames: &str, views: &str, res: &str) {
    ok(&["synth-data", "--frames", frames, "--views", views, "--resolution", res, "--gaussians", "40", "--out", s(dir)]);
}

#[test]
fn synth_data_layout_and_determinism() {
    let t = tempfile::tempdir().unwrap();
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    synth(&a, "25", "18", "8");
    let frames: Vec<_> = std::fs::read_dir(a.join("frames")).unwrap().collect();
    assert_eq!(frames.len(), 25);
    let views = std::fs::read_dir(a.join("frames/0024")).unwrap().filter(|e| {
        e.as_ref().unwrap().path().extension().is_some_and(|x| x == "png")
    });
    assert_eq!(views.count(), 18);
    synth(&b, "25", "18", "8");
    assert_eq!(tree(&a), tree(&b));
    ok(&["verify", s(&a)]);
}

#[test]
fn bad_flags_are_usage_errors() {
    let t = tempfile::tempdir().unwrap();
    let out = t.path().join("x");
    assert_eq!(code(&["synth-data", "--views", "0", "--out", s(&out)]), 2);
    assert_eq!(code(&["synth-data", "--scene", "teapot", "--out", s(&out)]), 2);
    assert_eq!(code(&["synth-data", "--no-such-flag"]), 2);
    assert_eq!(code(&["reconstruct", "--dataset", s(&out), "--out", "v.v3dz", "--workers", "0"]), 2);
}

#[test]
fn reconstruct_is_independent_of_worker_count() {
    let t = tempfile::tempdir().unwrap();
    let data = t.path().join("data");
    synth(&data, "3", "6", "16");
    let run = |workers: &str, name: &str| {
        let out = t.path().join(name);
        let stdout = ok(&[
            "reconstruct", "--dataset", s(&data), "--out", s(&out), "--splats", "50", "--steps", "12", "--workers",
            workers,
        ]);
        assert_eq!(stdout.lines().filter(|l| l.starts_with("frame ")).count(), 3);
        std::fs::read(out).unwrap()
    };
    let serial = run("1", "serial.v3dz");
    let parallel = run("8", "parallel.v3dz");
    assert_eq!(serial, parallel);
    ok(&["verify", s(&t.path().join("serial.v3dz"))]);
}

#[test]
fn zero_steps_traces_and_checkpoints() {
    let t = tempfile::tempdir().unwrap();
    let data = t.path().join("data");
    synth(&data, "2", "6", "16");
    let init = t.path().join("init.v3dz");
    ok(&["reconstruct", "--dataset", s(&data), "--out", s(&init), "--splats", "30", "--steps", "0"]);
    ok(&["verify", s(&init)]);

    let out = t.path().join("v.v3dz");
    let traces = t.path().join("traces");
    let ckpt = t.path().join("ckpt");
    ok(&[
        "reconstruct", "--dataset", s(&data), "--out", s(&out), "--splats", "30", "--steps", "10", "--views", "3",
        "--trace-dir", s(&traces), "--checkpoint-every", "5", "--checkpoint-dir", s(&ckpt),
    ]);
    let csv = std::fs::read_to_string(traces.join("frame_0001.csv")).unwrap();
    assert!(csv.starts_with("step,loss,psnr_train\n"));
    assert_eq!(csv.lines().count(), 11);
    let mut names: Vec<String> =
        std::fs::read_dir(&ckpt).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(
        names,
        ["frame_0000_step_000005.ply", "frame_0000_step_000010.ply", "frame_0001_step_000005.ply", "frame_0001_step_000010.ply"]
    );
    let side: Value = serde_json::from_str(&std::fs::read_to_string(t.path().join("v.v3dz.run.json")).unwrap()).unwrap();
    assert_eq!(side["config"]["train_views"], 3);
}

#[test]
fn render_writes_one_directory_per_camera() {
    let t = tempfile::tempdir().unwrap();
    let data = t.path().join("data");
    synth(&data, "1", "2", "8");
    let gt = data.join("ground_truth.v3dz");
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    ok(&["render", "--video", s(&gt), "--resolution", "16", "--out", s(&a)]);
    ok(&["render", "--video", s(&gt), "--resolution", "16", "--out", s(&b)]);
    let dirs = std::fs::read_dir(&a).unwrap().filter(|e| e.as_ref().unwrap().path().is_dir()).count();
    assert_eq!(dirs, 10);
    assert_eq!(std::fs::read_dir(a.join("cam_09")).unwrap().count(), 1);
    assert_eq!(tree(&a), tree(&b));

    let c = t.path().join("c");
    ok(&["render", "--video", s(&gt), "--camera-file", s(&data.join("frames/0000/cameras.json")), "--out", s(&c)]);
    assert_eq!(std::fs::read(c.join("cam_01/frame_0000.png")).unwrap(), std::fs::read(data.join("frames/0000/view_01.png")).unwrap());
    assert_ne!(code(&["render", "--video", s(&t.path().join("missing.v3dz")), "--out", s(&c)]), 0);
}

#[test]
fn evaluate_ground_truth_and_embedder_failures() {
    let t = tempfile::tempdir().unwrap();
    let data = t.path().join("data");
    ok(&["synth-data", "--frames", "3", "--views", "2", "--out", s(&data)]);
    let gt = data.join("ground_truth.v3dz");
    let reference = data.join("reference.png");
    let report = t.path().join("out/report.json");
    let stdout = ok(&[
        "evaluate", "--video", s(&gt), "--reference", s(&reference), "--ground-truth", s(&gt), "--resolution", "128",
        "--out", s(&report),
    ]);
    assert!(stdout.contains("CLIP-I"));
    let r: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let clip = r["clip_i"].as_f64().unwrap();
    assert!(clip >= 0.95, "{clip}");
    assert_eq!(r["similarity"].as_array().unwrap().len(), 10);
    assert_eq!(r["similarity"][0].as_array().unwrap().len(), 3);
    assert_eq!(r["psnr"].as_f64().unwrap(), 99.0);
    assert!(t.path().join("out/report.txt").exists());
    ok(&["verify", s(&report)]);

    let args = ["evaluate", "--video", s(&gt), "--reference", s(&reference), "--resolution", "16"];
    let bad = t.path().join("bad.json");
    let mut with_flag = args.to_vec();
    with_flag.extend(["--embedder", "http://127.0.0.1:1", "--out", s(&bad)]);
    assert_eq!(code(&with_flag), 3);
    let mut from_env = args.to_vec();
    from_env.extend(["--out", s(&bad)]);
    let status = Command::new(env!("CARGO_BIN_EXE_vidsplat"))
        .args(&from_env)
        .env("VIDSPLAT_EMBEDDER_URL", "http://127.0.0.1:1")
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(3));
    let mut nonsense = args.to_vec();
    nonsense.extend(["--embedder", "clip", "--out", s(&bad)]);
    assert_eq!(code(&nonsense), 2);
}

#[test]
fn verify_detects_tampering() {
    let t = tempfile::tempdir().unwrap();
    let data = t.path().join("data");
    synth(&data, "1", "3", "8");
    let out = t.path().join("v.v3dz");
    ok(&["reconstruct", "--dataset", s(&data), "--out", s(&out), "--splats", "10", "--steps", "2"]);
    let side = t.path().join("v.v3dz.run.json");
    let text = std::fs::read_to_string(&side).unwrap();
    std::fs::write(&side, text.replace("\"global_seed\": 0", "\"global_seed\": 1")).unwrap();
    assert_eq!(code(&["verify", s(&out)]), 1);
}

#[test]
fn ablate_writes_reports_and_ordered_summary() {
    let t = tempfile::tempdir().unwrap();
    let data = t.path().join("data");
    synth(&data, "2", "18", "16");
    let grid = t.path().join("grid.json");
    std::fs::write(&grid, r#"{"views": [18, 3, 9]}"#).unwrap();
    let config = t.path().join("run.json");
    std::fs::write(&config, r#"{"eval": {"cameras": 2, "resolution": 16}, "held_out": {"cameras": 2, "resolution": 16}}"#)
        .unwrap();
    let out = t.path().join("ablation");
    let stdout = ok(&[
        "ablate", "--config", s(&config), "--dataset", s(&data), "--grid", s(&grid), "--splats", "30", "--steps", "6",
        "--out", s(&out),
    ]);
    for label in ["views3_seed0", "views9_seed0", "views18_seed0"] {
        assert!(out.join(format!("{label}.json")).exists(), "{label}");
    }
    let firsts: Vec<&str> = stdout.lines().skip(2).map(|l| l.split_whitespace().next().unwrap()).collect();
    assert_eq!(firsts, ["3", "9", "18"]);
    assert_eq!(std::fs::read_to_string(out.join("summary.txt")).unwrap(), stdout);

    std::fs::write(&grid, r#"{"views": []}"#).unwrap();
    assert_eq!(code(&["ablate", "--dataset", s(&data), "--grid", s(&grid), "--out", s(&out)]), 2);
}
