use std::path::Path;
use std::process::{Command, Output};

use ntd_core::neural::{save_model, Activation, MlpModel, Normalization};
use ntd_core::raster::{save_image, GrayImage};
use serde_json::Value;

fn ntd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ntd")).args(args).output().unwrap()
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(ntd(&["--help"]).status.code(), Some(0));
    assert_eq!(ntd(&["gen", "--bogus"]).status.code(), Some(1));
    assert_eq!(ntd(&["--threads", "0", "masks", "--out", p(dir.path())]).status.code(), Some(1));

    let missing = dir.path().join("missing.json");
    let out = ntd(&["split", "--manifest", p(&missing), "--seed", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());

    let corpus = dir.path().join("c");
    json(&ntd(&["gen", "--category", "accel0", "--count", "2", "--seed", "1", "--out", p(&corpus)]));
    let manifest = corpus.join("manifest.json");
    let out = ntd(&["split", "--manifest", p(&manifest), "--fraction", "1.5", "--seed", "1"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn masks_and_enhance_write_images() {
    let dir = tempfile::tempdir().unwrap();
    let v = json(&ntd(&["masks", "--out", p(dir.path())]));
    assert!((v["gaussian"]["sum"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    assert!(dir.path().join("gaussian.png").is_file());
    assert!(dir.path().join("disk.png").is_file());

    let frame = dir.path().join("blank.pgm");
    save_image(&GrayImage::filled(96, 96, 0.8), &frame).unwrap();
    let v = json(&ntd(&["enhance", "--frame", p(&frame), "--out", p(dir.path())]));
    assert_eq!(v["width"], 96);
    assert!(dir.path().join("response.png").is_file());
}

#[test]
fn blank_frame_counts_zero() {
    let dir = tempfile::tempdir().unwrap();
    let frame = dir.path().join("blank.pgm");
    save_image(&GrayImage::filled(128, 128, 0.8), &frame).unwrap();
    let model = MlpModel {
        category: "accel0".into(),
        input_dim: 1,
        hidden_dim: 1,
        w1: vec![0.0],
        b1: vec![0.0],
        w2: vec![0.0],
        b2: 0.5,
        activation: Activation::Sigmoid,
        norm: Normalization { x_min: vec![0.0], x_max: vec![200.0], t_min: 100.0, t_max: 400.0 },
    };
    let model_path = dir.path().join("accel0.json");
    save_model(&model, &model_path).unwrap();
    let overlay = dir.path().join("overlay.png");
    let v = json(&ntd(&["count", "--frame", p(&frame), "--model", p(&model_path), "--overlay", p(&overlay)]));
    assert_eq!(v["count"], 0);
    assert_eq!(v["centroids"].as_array().unwrap().len(), 0);
    assert!(overlay.is_file());
}

#[test]
fn gen_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        json(&ntd(&["gen", "--category", "accel30", "--count", "3", "--seed", "9", "--out", p(out)]));
    }
    for sub in ["frames", "truth"] {
        let mut names: Vec<_> = std::fs::read_dir(a.join(sub)).unwrap().map(|e| e.unwrap().file_name()).collect();
        names.sort();
        assert_eq!(names.len(), 3);
        for n in names {
            assert_eq!(std::fs::read(a.join(sub).join(&n)).unwrap(), std::fs::read(b.join(sub).join(&n)).unwrap());
        }
    }
}

#[test]
fn evaluate_reports_every_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let annotations = dir.path().join("annotations.jsonl");
    let mut manifests = Vec::new();
    for (i, cat) in ["accel0", "accel30", "field"].iter().enumerate() {
        let spec = dir.path().join(format!("{cat}.spec.json"));
        let mut s = serde_json::to_value(ntd_core::synth::SceneSpec::preset(cat.parse().unwrap())).unwrap();
        s["frame_size"] = 128.into();
        s["track_count_mean"] = 3.into();
        std::fs::write(&spec, s.to_string()).unwrap();
        let out = dir.path().join(cat);
        let seed = (100 * (i + 1)).to_string();
        json(&ntd(&["gen", "--category", cat, "--count", "8", "--seed", &seed, "--out", p(&out), "--spec", p(&spec)]));
        let manifest = out.join("manifest.json");
        let v = json(&ntd(&["split", "--manifest", p(&manifest), "--seed", "1"]));
        assert_eq!(v["train"], 6);
        json(&ntd(&["oracle-annotate", "--manifest", p(&manifest), "--annotations", p(&annotations)]));
        manifests.push(manifest);
    }
    let mut args = vec!["evaluate", "--annotations", p(&annotations), "--epochs", "300"];
    for m in &manifests {
        args.extend(["--manifest", p(m)]);
    }
    let v = json(&ntd(&args));
    let cats: Vec<&str> = v["categories"].as_array().unwrap().iter().map(|c| c["category"].as_str().unwrap()).collect();
    assert_eq!(cats, ["accel0", "accel30", "field"]);

    args.extend(["--format", "csv"]);
    let csv = ntd(&args);
    assert!(csv.status.success());
    let text = String::from_utf8(csv.stdout).unwrap();
    assert!(text.starts_with("frame_id,true,predicted"));
    assert_eq!(text.lines().count(), 1 + 3 * 2);
}
