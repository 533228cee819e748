//! End-to-end runs of the installed binary via std::process.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn sphericam(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sphericam"))
        .args(args)
        .output()
        .expect("binary spawns")
}

fn run_ok(args: &[&str]) -> Output {
    let out = sphericam(args);
    assert!(
        out.status.success(),
        "command {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn write_scene(dir: &Path, body: &str) -> String {
    let path = dir.join("scene.txt");
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

fn report_field(report: &str, key: &str) -> String {
    report
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{key}: ")))
        .unwrap_or_else(|| panic!("missing {key} in report:\n{report}"))
        .to_string()
}

#[test]
fn simulate_localize_evaluate_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let scene = write_scene(
        dir.path(),
        "duration = 1.0\n\
         seed = 7\n\
         source.0.signal = white\n\
         source.0.trajectory = 0 40 10\n",
    );
    let sim = dir.path().join("sim");
    let sim2 = dir.path().join("sim2");
    let loc = dir.path().join("loc");
    let loc2 = dir.path().join("loc2");
    let eval = dir.path().join("eval");
    let s = |p: &Path| p.to_str().unwrap().to_string();

    run_ok(&["simulate", "--scene", &scene, "--out", &s(&sim)]);
    run_ok(&["simulate", "--scene", &scene, "--out", &s(&sim2)]);
    let audio = sim.join("audio.wav");
    let gt = sim.join("annotations.csv");
    assert!(audio.exists() && gt.exists());
    // Repeated runs are byte-identical.
    assert_eq!(fs::read(&audio).unwrap(), fs::read(sim2.join("audio.wav")).unwrap());
    assert_eq!(
        fs::read(&gt).unwrap(),
        fs::read(sim2.join("annotations.csv")).unwrap()
    );

    run_ok(&["localize", &s(&audio), "--out", &s(&loc)]);
    run_ok(&["localize", &s(&audio), "--out", &s(&loc2), "--threads", "1"]);
    let pred = loc.join("predictions.csv");
    assert_eq!(
        fs::read(&pred).unwrap(),
        fs::read(loc2.join("predictions.csv")).unwrap()
    );

    run_ok(&[
        "evaluate",
        "--pred",
        &s(&pred),
        "--gt",
        &s(&gt),
        "--out",
        &s(&eval),
    ]);
    let report = fs::read_to_string(eval.join("report.txt")).unwrap();
    assert_eq!(report_field(&report, "threshold_deg"), "20");
    assert_eq!(report_field(&report, "gt_instances"), "10");
    assert_eq!(report_field(&report, "localization_recall_pct"), "100.0000");
    let le: f64 = report_field(&report, "localization_error_deg").parse().unwrap();
    assert!(le <= 15.0, "localization error {le}");
    assert!(fs::read_to_string(eval.join("report.json"))
        .unwrap()
        .contains("\"true_positives\""));
}

#[test]
fn sub_frame_input_yields_empty_dump() {
    let dir = tempfile::tempdir().unwrap();
    let scene = write_scene(
        dir.path(),
        "duration = 0.05\n\
         source.0.signal = white\n\
         source.0.trajectory = 0 0 0\n",
    );
    let sim = dir.path().join("sim");
    let img = dir.path().join("img");
    let s = |p: &Path| p.to_str().unwrap().to_string();

    run_ok(&["simulate", "--scene", &scene, "--out", &s(&sim)]);
    run_ok(&[
        "image",
        &s(&sim.join("audio.wav")),
        "--out",
        &s(&img),
    ]);
    let bytes = fs::read(img.join("intensity.sim")).unwrap();
    assert_eq!(bytes.len(), 20, "header only for a sub-frame input");
    assert_eq!(&bytes[0..4], b"SIMD");
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
    assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 0);
}

#[test]
fn evaluate_against_itself_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let scene = write_scene(
        dir.path(),
        "duration = 0.3\n\
         source.0.signal = tone 2000\n\
         source.0.trajectory = 0 -120 35\n",
    );
    let sim = dir.path().join("sim");
    let eval = dir.path().join("eval");
    let s = |p: &Path| p.to_str().unwrap().to_string();

    run_ok(&["simulate", "--scene", &scene, "--out", &s(&sim)]);
    let gt = s(&sim.join("annotations.csv"));
    run_ok(&["evaluate", "--pred", &gt, "--gt", &gt, "--out", &s(&eval)]);
    let report = fs::read_to_string(eval.join("report.txt")).unwrap();
    assert_eq!(report_field(&report, "localization_error_deg"), "0.0000");
    assert_eq!(report_field(&report, "localization_recall_pct"), "100.0000");
    assert_eq!(report_field(&report, "gt_instances"), "3");
    assert_eq!(report_field(&report, "true_positives"), "3");
}

#[test]
fn render_emits_pgm_frames_with_dots() {
    let dir = tempfile::tempdir().unwrap();
    let scene = write_scene(
        dir.path(),
        "duration = 0.3\n\
         seed = 3\n\
         source.0.signal = white\n\
         source.0.trajectory = 0 60 -20\n",
    );
    let sim = dir.path().join("sim");
    let img = dir.path().join("img");
    let s = |p: &Path| p.to_str().unwrap().to_string();

    run_ok(&["simulate", "--scene", &scene, "--out", &s(&sim)]);
    run_ok(&[
        "image",
        &s(&sim.join("audio.wav")),
        "--out",
        &s(&img),
        "--render",
        "--annotations",
        &s(&sim.join("annotations.csv")),
    ]);

    let bytes = fs::read(img.join("intensity.sim")).unwrap();
    assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 3);
    assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 9);
    assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 242);
    assert_eq!(bytes.len(), 20 + 3 * 9 * 242 * 4);

    for i in 0..3 {
        let frame = img.join(format!("frame_{i:06}.pgm"));
        let pgm = fs::read(&frame).unwrap();
        let header = b"P5\n360 180\n255\n";
        assert_eq!(&pgm[..header.len()], header, "{}", frame.display());
        assert_eq!(pgm.len(), header.len() + 360 * 180);
        assert!(pgm[header.len()..].contains(&255u8));
    }
    assert!(!img.join("frame_000003.pgm").exists());
}

#[test]
fn failures_exit_nonzero_with_stage_and_write_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "frobnicate = 1\n").unwrap();
    let out_dir = dir.path().join("out");
    let s = |p: &Path| p.to_str().unwrap().to_string();

    let out = sphericam(&[
        "localize",
        "missing.wav",
        "--config",
        &s(&cfg),
        "--out",
        &s(&out_dir),
    ]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("config"), "stderr: {stderr}");
    assert!(!out_dir.exists(), "failed run must not leave outputs");

    let out = sphericam(&["evaluate", "--pred", "nope.csv", "--gt", "nope.csv", "--out", &s(&out_dir)]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("predictions"), "stderr: {stderr}");
    assert!(!out_dir.join("report.txt").exists());

    // A 32-channel pipeline rejects a 4-channel recording up front.
    let scene = write_scene(
        dir.path(),
        "duration = 0.3\nsource.0.signal = white\nsource.0.trajectory = 0 0 0\n",
    );
    let tetra_cfg = dir.path().join("tetra.cfg");
    fs::write(&tetra_cfg, "array = tetra\n").unwrap();
    let sim = dir.path().join("sim");
    run_ok(&[
        "simulate",
        "--scene",
        &scene,
        "--config",
        &s(&tetra_cfg),
        "--out",
        &s(&sim),
    ]);
    let out = sphericam(&[
        "localize",
        &s(&sim.join("audio.wav")),
        "--out",
        &s(&out_dir),
    ]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("4 channels"), "stderr: {stderr}");
    assert!(!out_dir.join("predictions.csv").exists());
}
