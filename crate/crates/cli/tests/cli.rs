use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use clothsft::objective::LossWeights;
use clothsft::optimizer::{ParamSpec, Schedule};
use clothsft::scene::{read_ground_truth, write_result, ResultDir, ResultMeta, SCHEMA_VERSION};
use tempfile::TempDir;

fn clothsft(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_clothsft")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A tiny synthetic scene written by `gen-scene`.
fn small_scene(dir: &Path) {
    let out = clothsft(&[
        "gen-scene", "--out", path(dir), "--mesh", "3x3", "--frames", "4", "--resolution", "32x32", "--focal", "48",
        "--points-per-frame", "50", "--seed", "2", "--quiet",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

const FAST: [&str; 5] = ["--texture-epochs", "5", "--epochs-after-last-frame", "10", "--quiet"];

fn reconstruct(scene: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["reconstruct", "--scene", path(scene), "--out", path(out)];
    args.extend(FAST);
    args.extend(extra);
    clothsft(&args)
}

fn summary_values(dir: &Path) -> Vec<f64> {
    let text = fs::read_to_string(dir.join("summary.csv")).unwrap();
    text.lines().nth(1).unwrap().split(',').map(|v| v.parse().unwrap()).collect()
}

fn stderr_record(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(text.lines().last().unwrap()).unwrap()
}

#[test]
fn ground_truth_scores_zero() {
    let tmp = TempDir::new().unwrap();
    let scene = tmp.path().join("scene");
    small_scene(&scene);
    let truth = read_ground_truth(&scene).unwrap();
    let mut params = truth.params.clone();
    let dynamic_forces = std::mem::take(&mut params.dynamic_forces);
    let result = tmp.path().join("truth_result");
    let dir = ResultDir {
        meta: ResultMeta {
            schema_version: SCHEMA_VERSION,
            kind: "result".into(),
            ablation: "ground-truth".into(),
            seed: 0,
            epochs: 0,
            final_loss: 0.0,
            params,
            weights: LossWeights::default(),
            spec: ParamSpec::default(),
            schedule: Schedule::default(),
        },
        dynamic_forces,
        trajectory: truth.trajectory.clone(),
        texture: truth.texture.clone(),
        log: Vec::new(),
        texture_log: Vec::new(),
    };
    write_result(&result, &dir).unwrap();
    let out = clothsft(&["evaluate", "--scene", path(&scene), "--result", path(&result), "--quiet"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let [cd1, cd2, p2s1, p2s2, depth] = summary_values(&result)[..] else { panic!("five metrics") };
    assert_eq!([cd1, cd2, depth], [0.0; 3]);
    // projecting a surface sample back onto its triangle rounds
    assert!(p2s1 <= 1e-12 && p2s2 <= 1e-24);
}

#[test]
fn reconstruction_needs_no_ground_truth() {
    let tmp = TempDir::new().unwrap();
    let scene = tmp.path().join("scene");
    small_scene(&scene);
    fs::remove_dir_all(scene.join("ground_truth")).unwrap();
    let result = tmp.path().join("result");
    let out = reconstruct(&scene, &result, &[]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for file in ["params.toml", "forces.arr", "trajectory.arr", "texture.arr", "texture.png", "log.csv"] {
        assert!(result.join(file).is_file(), "{file}");
    }
    let eval = clothsft(&["evaluate", "--scene", path(&scene), "--result", path(&result), "--quiet"]);
    assert_eq!(code(&eval), 3);
}

#[test]
fn no_both_ablation_records_weights_and_evaluates() {
    let tmp = TempDir::new().unwrap();
    let scene = tmp.path().join("scene");
    small_scene(&scene);
    let result = tmp.path().join("result");
    assert_eq!(code(&reconstruct(&scene, &result, &["--no-reg-energy", "--no-reg-force"])), 0);
    let meta: toml::Value = toml::from_str(&fs::read_to_string(result.join("params.toml")).unwrap()).unwrap();
    assert_eq!(meta["ablation"].as_str(), Some("no-both"));
    assert_eq!(meta["weights"]["energy"].as_float(), Some(0.0));
    let out = clothsft(&["evaluate", "--scene", path(&scene), "--result", path(&result), "--quiet"]);
    assert_eq!(code(&out), 0);
    let m = summary_values(&result);
    assert!(m.iter().all(|v| v.is_finite() && *v >= 0.0));
    let frames = fs::read_to_string(result.join("metrics.csv")).unwrap();
    assert_eq!(frames.lines().count(), 1 + 4);
}

#[test]
fn exit_codes_follow_error_families() {
    let tmp = TempDir::new().unwrap();

    let usage = clothsft(&["reconstruct", "--bogus"]);
    assert_eq!(code(&usage), 2);
    assert_eq!(stderr_record(&usage)["exit_code"], 2);

    let missing = reconstruct(&tmp.path().join("nowhere"), &tmp.path().join("r"), &[]);
    assert_eq!(code(&missing), 3);
    assert_eq!(stderr_record(&missing)["exit_code"], 3);

    let scene = tmp.path().join("scene");
    small_scene(&scene);
    let bad = clothsft(&["reconstruct", "--scene", path(&scene), "--out", path(&tmp.path().join("r")), "--damping", "1.5", "--quiet"]);
    assert_eq!(code(&bad), 5);
    let short = reconstruct(&scene, &tmp.path().join("r"), &["--max-frames", "1"]);
    assert_eq!(code(&short), 5);

    let manifest = scene.join("scene.toml");
    let text = fs::read_to_string(&manifest).unwrap();
    fs::write(&manifest, text.replace("schema_version = 1", "schema_version = 99")).unwrap();
    let schema = reconstruct(&scene, &tmp.path().join("r"), &[]);
    assert_eq!(code(&schema), 4);
}

#[test]
fn resuming_from_a_checkpoint_reproduces_the_run() {
    let tmp = TempDir::new().unwrap();
    let scene = tmp.path().join("scene");
    small_scene(&scene);
    let full = tmp.path().join("full");
    assert_eq!(code(&reconstruct(&scene, &full, &["--checkpoint-every", "5"])), 0);
    let checkpoint = full.join("checkpoints").join("epoch_00005.json");
    assert!(checkpoint.is_file());
    let resumed = tmp.path().join("resumed");
    let out = reconstruct(&scene, &resumed, &["--resume", path(&checkpoint)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for file in ["forces.arr", "trajectory.arr", "texture.arr"] {
        assert_eq!(fs::read(full.join(file)).unwrap(), fs::read(resumed.join(file)).unwrap(), "{file}");
    }
}

#[test]
fn relative_outputs_land_under_the_output_root() {
    let tmp = TempDir::new().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_clothsft"))
        .args(["gen-scene", "--out", "rel", "--mesh", "3x3", "--frames", "2", "--resolution", "16x16", "--quiet"])
        .env("CLOTHSFT_OUTPUT_ROOT", tmp.path())
        .current_dir(tmp.path().parent().unwrap())
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(tmp.path().join("rel").join("scene.toml").is_file());
}
