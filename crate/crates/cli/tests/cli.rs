use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lodtherm::geometry::{Point3, PointCloud, RigidTransform, SemanticClass};
use lodtherm_pipeline::io;

fn lodtherm(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lodtherm"))
        .args(args)
        .current_dir(cwd)
        .env_remove("LODTHERM_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

const UNIT_WALL: &str = r#"{"surfaces": [{"label": "wall", "id": "w1",
  "outer": [[0,0,0],[1,0,0],[1,0,1],[0,0,1]]}]}"#;

#[test]
fn sample_writes_a_labeled_grid() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("m.json"), UNIT_WALL).unwrap();
    ok(&lodtherm(
        &["sample", "m.json", "--rate", "0.1", "-o", "m.ply"],
        dir.path(),
    ));
    let bytes = std::fs::read(dir.path().join("m.ply")).unwrap();
    let header = String::from_utf8_lossy(&bytes[..io::ply_payload_offset(&bytes).unwrap()]).to_string();
    assert!(header.contains("element vertex 121\n"), "{header}");
    assert!(header.contains("property uchar label"));
    assert!(header.contains("property uint id"));
    let cloud = io::read_ply(&dir.path().join("m.ply")).unwrap();
    assert_eq!(cloud.len(), 121);
    assert!(cloud.labels().iter().all(|&l| l == SemanticClass::Wall));
    assert!(cloud.ids().iter().all(|id| id == "w1"));
}

#[test]
fn sampling_to_nothing_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let sliver = r#"{"surfaces": [{"label": "window", "id": "tiny",
      "outer": [[0.05,0,0],[0.1,0,0.05],[0.05,0,0.1],[0,0,0.05]]}]}"#;
    std::fs::write(dir.path().join("m.json"), sliver).unwrap();
    let out = lodtherm(&["sample", "m.json", "--rate", "0.1", "-o", "m.ply"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("no points"), "{}", stderr(&out));
    assert!(!dir.path().join("m.ply").exists());
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(lodtherm(&["sample"], dir.path()).status.code(), Some(1));
    assert_eq!(lodtherm(&["frobnicate"], dir.path()).status.code(), Some(1));
    std::fs::write(dir.path().join("m.json"), UNIT_WALL).unwrap();
    let out = lodtherm(&["sample", "m.json", "--rate", "-1", "-o", "m.ply"], dir.path());
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
    let out = Command::new(env!("CARGO_BIN_EXE_lodtherm"))
        .args(["sample", "m.json", "-o", "m.ply"])
        .current_dir(dir.path())
        .env("LODTHERM_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(lodtherm(&["--help"], dir.path()).status.success());
}

#[test]
fn missing_input_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = lodtherm(&["sample", "nope.json", "-o", "m.ply"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("nope.json"));
}

fn building(dir: &Path) -> PathBuf {
    let spec = r#"{"facade_width": 12.0, "facade_height": 7.0, "window_columns": 2,
      "window_height": 1.5, "noise_sigma": 0.0, "crop_fraction": 0.0, "clutter_points": 0,
      "frames": 1, "camera": {"f": 250.0, "s": 1.0, "cx": 159.5, "cy": 119.5, "width": 320, "height": 240},
      "gt_transform": {"rotation": [0,-1,0, 1,0,0, 0,0,1], "translation": [3.0, -2.0, 0.5]}}"#;
    std::fs::write(dir.join("spec.json"), spec).unwrap();
    ok(&lodtherm(&["synth", "spec.json", "--out-prefix", "scene"], dir));
    dir.join("scene")
}

#[test]
fn synth_echoes_the_requested_ground_truth() {
    let dir = tempfile::tempdir().unwrap();
    let scene = building(dir.path());
    let gt = io::read_transform(&scene.join("gt_transform.json")).unwrap();
    let expected = RigidTransform::new(
        nalgebra::Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0),
        nalgebra::Vector3::new(3.0, -2.0, 0.5),
    )
    .unwrap();
    assert_eq!(gt, expected);
    assert!(scene.join("images/frame_000.pgm").is_file());
}

#[test]
fn synth_rejects_an_infeasible_layout() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("spec.json"), r#"{"window_width": 8.0}"#).unwrap();
    let out = lodtherm(&["synth", "spec.json", "--out-prefix", "s"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("spec"), "{}", stderr(&out));
}

#[test]
fn register_identical_clouds_reports_a_perfect_fit() {
    let dir = tempfile::tempdir().unwrap();
    let scene = building(dir.path());
    ok(&lodtherm(
        &["sample", "scene/model.json", "--rate", "0.1", "-o", "m.ply"],
        dir.path(),
    ));
    let out = lodtherm(
        &[
            "register",
            "m.ply",
            "m.ply",
            "-o",
            "report.json",
            "--transform-out",
            "t.json",
        ],
        dir.path(),
    );
    ok(&out);
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["fitness"], 1.0);
    assert_eq!(report["rmse"], 0.0);
    for key in ["coarse", "fine", "iterations", "converged", "params", "seed"] {
        assert!(report.get(key).is_some(), "report lacks {key}");
    }
    assert!(report["coarse"].get("transform").is_some());
    assert_eq!(report["seed"], 42);
    let t = io::read_transform(&dir.path().join("t.json")).unwrap();
    let (deg, m) = t.difference(&RigidTransform::identity());
    assert!(deg < 1e-6 && m < 1e-6);
    drop(scene);
}

#[test]
fn register_recovers_a_synthetic_ground_truth() {
    let dir = tempfile::tempdir().unwrap();
    let scene = building(dir.path());
    ok(&lodtherm(
        &["sample", "scene/model.json", "--rate", "0.1", "-o", "m.ply"],
        dir.path(),
    ));
    std::fs::write(dir.path().join("params.json"), r#"{"icp": {"d_max": 0.5}}"#).unwrap();
    ok(&lodtherm(
        &[
            "register",
            "scene/scan.ply",
            "m.ply",
            "--params",
            "params.json",
            "--seed",
            "7",
            "-o",
            "r.json",
            "--transform-out",
            "t.json",
        ],
        dir.path(),
    ));
    let gt = io::read_transform(&scene.join("gt_transform.json")).unwrap();
    let (deg, m) = io::read_transform(&dir.path().join("t.json")).unwrap().difference(&gt);
    assert!(deg < 1.0 && m < 0.1, "{deg}° {m} m");
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("r.json")).unwrap()).unwrap();
    assert_eq!(report["seed"], 7);
    assert_eq!(report["params"]["icp"]["d_max"], 0.5);
}

#[test]
fn enrich_labels_every_point_of_a_matched_scene() {
    let dir = tempfile::tempdir().unwrap();
    let _ = building(dir.path());
    ok(&lodtherm(
        &["sample", "scene/model.json", "--rate", "0.1", "-o", "m.ply"],
        dir.path(),
    ));
    ok(&lodtherm(
        &[
            "colorize",
            "scene/scan.ply",
            "--camera",
            "scene/camera.json",
            "--poses",
            "scene/poses.json",
            "-o",
            "c.ply",
        ],
        dir.path(),
    ));
    ok(&lodtherm(
        &[
            "enrich",
            "c.ply",
            "m.ply",
            "scene/gt_transform.json",
            "-o",
            "e.ply",
            "--stats",
            "s.csv",
        ],
        dir.path(),
    ));
    let rows = io::read_stats_csv(&dir.path().join("s.csv")).unwrap();
    let unlabeled = rows.iter().find(|r| r.0 == SemanticClass::Unlabeled).unwrap();
    assert_eq!(unlabeled.1, 0);
    let enriched = io::read_ply(&dir.path().join("e.ply")).unwrap();
    assert_eq!(rows.iter().map(|r| r.1).sum::<usize>(), enriched.len());
    let truth = io::read_ply(&dir.path().join("scene/scan_truth.ply")).unwrap();
    let same = enriched
        .labels()
        .iter()
        .zip(truth.labels())
        .filter(|(a, b)| a == b)
        .count();
    assert!(same as f64 >= 0.99 * truth.len() as f64);
}

fn write_thermal(path: &Path, pts: Vec<Point3>, values: Vec<Option<f64>>) {
    let cloud = PointCloud::new(pts).unwrap().with_intensity(values).unwrap();
    io::write_ply(path, &cloud).unwrap();
}

#[test]
fn enrich_leaves_clutter_unlabeled() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("m.json"), UNIT_WALL).unwrap();
    ok(&lodtherm(&["sample", "m.json", "-o", "m.ply"], dir.path()));
    io::write_json(&dir.path().join("t.json"), &RigidTransform::identity()).unwrap();
    let pts = (0..30).map(|i| Point3::new(i as f64, 5.0, 3.0)).collect();
    write_thermal(
        &dir.path().join("th.ply"),
        pts,
        (0..30).map(|i| Some(i as f64 / 30.0)).collect(),
    );
    ok(&lodtherm(
        &["enrich", "th.ply", "m.ply", "t.json", "-o", "e.ply", "--stats", "s.csv"],
        dir.path(),
    ));
    for (class, count, mean, std) in io::read_stats_csv(&dir.path().join("s.csv")).unwrap() {
        if class == SemanticClass::Unlabeled {
            assert_eq!(count, 30);
            assert!(mean.is_some() && std.is_some());
        } else {
            assert_eq!((count, mean, std), (0, None, None), "{class:?}");
        }
    }
}

#[test]
fn statistics_csv_matches_a_hand_recomputation() {
    let dir = tempfile::tempdir().unwrap();
    // wall at y = 0 and a window panel at y = 0.5, both 1 m²
    let model = r#"{"surfaces": [
      {"label": "wall", "id": "w", "outer": [[0,0,0],[1,0,0],[1,0,1],[0,0,1]]},
      {"label": "window", "id": "g", "outer": [[0,0.5,0],[1,0.5,0],[1,0.5,1],[0,0.5,1]]}]}"#;
    std::fs::write(dir.path().join("m.json"), model).unwrap();
    ok(&lodtherm(&["sample", "m.json", "-o", "m.ply"], dir.path()));
    io::write_json(&dir.path().join("t.json"), &RigidTransform::identity()).unwrap();

    let mut pts = Vec::new();
    let mut vals = Vec::new();
    // 8 wall points, one without intensity
    for (k, v) in [0.125, 0.25, 0.375, 0.5, 0.625, 0.75, 0.875].iter().enumerate() {
        pts.push(Point3::new(0.1 * k as f64, 0.01, 0.5));
        vals.push(Some(*v));
    }
    pts.push(Point3::new(0.9, -0.01, 0.2));
    vals.push(None);
    // 7 window points
    for (k, v) in [0.5, 0.5, 0.75, 0.25, 1.0, 0.0, 0.5].iter().enumerate() {
        pts.push(Point3::new(0.1 * k as f64, 0.49, 0.3));
        vals.push(Some(*v));
    }
    // 5 far points
    for (k, v) in [0.75, 0.875, 0.75, 0.875, 0.8125].iter().enumerate() {
        pts.push(Point3::new(5.0 + k as f64, 3.0, 0.0));
        vals.push(Some(*v));
    }
    assert_eq!(pts.len(), 20);
    write_thermal(&dir.path().join("th.ply"), pts, vals);
    ok(&lodtherm(
        &["enrich", "th.ply", "m.ply", "t.json", "-o", "e.ply", "--stats", "s.csv"],
        dir.path(),
    ));

    let text = std::fs::read_to_string(dir.path().join("s.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "class,count,mean_intensity,std_intensity");
    let field = |class: &str| {
        let line = lines.iter().find(|l| l.starts_with(&format!("{class},"))).unwrap();
        let f: Vec<&str> = line.split(',').collect();
        (
            f[1].parse::<usize>().unwrap(),
            f[2].parse::<f64>().ok(),
            f[3].parse::<f64>().ok(),
        )
    };
    // intensities are stored as f32, so the inputs are dyadic
    // wall: mean 0.5, squared deviations 2 × (9 + 4 + 1) / 64 = 0.4375, variance 0.0625
    let (n, mean, std) = field("wall");
    assert_eq!(n, 8);
    assert!((mean.unwrap() - 0.5).abs() < 1e-12);
    assert!((std.unwrap() - 0.25).abs() < 1e-12);
    // window: mean 3.5/7 = 0.5, squared deviations 0,0,1/16,1/16,1/4,1/4,0 sum 0.625
    let (n, mean, std) = field("window");
    assert_eq!(n, 7);
    assert!((mean.unwrap() - 0.5).abs() < 1e-12);
    assert!((std.unwrap() - (0.625f64 / 7.0).sqrt()).abs() < 1e-12);
    // far points: mean 0.8125, squared deviations 4 / 256, variance 0.003125
    let (n, mean, std) = field("unlabeled");
    assert_eq!(n, 5);
    assert!((mean.unwrap() - 0.8125).abs() < 1e-12);
    assert!((std.unwrap() - 0.003125f64.sqrt()).abs() < 1e-12);
    for class in ["roof", "ground", "door"] {
        assert_eq!(field(class), (0, None, None));
    }
}

#[test]
fn backproject_writes_a_label_image() {
    let dir = tempfile::tempdir().unwrap();
    let _ = building(dir.path());
    ok(&lodtherm(
        &["sample", "scene/model.json", "--rate", "0.05", "-o", "m.ply"],
        dir.path(),
    ));
    // the frame poses map scan coordinates; express the model cloud there
    let gt = io::read_transform(&dir.path().join("scene/gt_transform.json")).unwrap();
    let model = io::read_ply(&dir.path().join("m.ply")).unwrap();
    io::write_ply(&dir.path().join("ms.ply"), &model.transformed(&gt.inverse())).unwrap();
    ok(&lodtherm(
        &[
            "backproject",
            "ms.ply",
            "--camera",
            "scene/camera.json",
            "--poses",
            "scene/poses.json",
            "-o",
            "l.pgm",
        ],
        dir.path(),
    ));
    let img = io::read_pgm(&dir.path().join("l.pgm")).unwrap();
    let codes: std::collections::BTreeSet<u32> = img.data().iter().map(|v| (v * 255.0).round() as u32).collect();
    assert!(codes.contains(&0));
    assert!(codes.contains(&(SemanticClass::Wall.code() as u32 + 1)));
    assert!(codes.contains(&(SemanticClass::Window.code() as u32 + 1)));
    let out = lodtherm(
        &[
            "backproject",
            "ms.ply",
            "--camera",
            "scene/camera.json",
            "--poses",
            "scene/poses.json",
            "--frame",
            "4",
            "-o",
            "x.pgm",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn pipeline_without_images_names_the_projection_stage() {
    let dir = tempfile::tempdir().unwrap();
    let scene = building(dir.path());
    std::fs::remove_dir_all(scene.join("images")).unwrap();
    let out = lodtherm(&["pipeline", "scene/pipeline.json"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("projection"), "{}", stderr(&out));
}

#[test]
fn pipeline_runs_end_to_end_and_converges() {
    let dir = tempfile::tempdir().unwrap();
    let scene = building(dir.path());
    let out = lodtherm(&["pipeline", "scene/pipeline.json"], dir.path());
    ok(&out);
    let manifest_path = dir.path().join(String::from_utf8(out.stdout).unwrap().trim());
    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(&manifest_path).unwrap()).unwrap();
    assert_eq!(manifest["metrics"]["converged"], true);
    assert!(manifest["timings"]["registration"].as_f64().unwrap() >= 0.0);
    assert!(scene.join("out/enriched.ply").is_file());
}
