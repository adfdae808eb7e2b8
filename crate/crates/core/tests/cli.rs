mod common;

use std::fs;
use std::path::Path;

use common::{cli, path_str};
use raydistill::cli::LossReport;
use raydistill::geometry::rasterize_objects;
use raydistill::losses::{rwd_loss, RwdConfig};
use raydistill::simulator::SceneSpec;
use raydistill::tensor::load_tensor;

fn gen(out: &Path, extra: &[&str]) -> i32 {
    let mut args = vec!["gen-scene", "--seed", "3", "--h", "24", "--w", "24", "--d", "4", "--n-ray", "16", "--out", path_str(out)];
    args.extend_from_slice(extra);
    cli(&args)
}

fn files(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    names
}

fn config_json(dir: &Path) -> serde_json::Value {
    serde_json::from_slice(&fs::read(dir.join("config.json")).unwrap()).unwrap()
}

#[test]
fn gen_scene_writes_the_scene_bundle_deterministically() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(gen(&a, &["--corrupt", "ray_dropout:0.3"]), 0);
    assert_eq!(gen(&b, &["--corrupt", "ray_dropout:0.3"]), 0);
    let names = files(&a);
    for want in [
        "camera_clean.rtf",
        "camera_corrupt.rtf",
        "config.json",
        "scene.json",
        "teacher.rtf",
        "truth.csv",
    ] {
        assert!(names.iter().any(|n| n == want), "missing {want} in {names:?}");
    }
    // config.json echoes the output directory, so it differs between the runs
    for name in names.iter().filter(|n| *n != "config.json") {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    let teacher = load_tensor(&a.join("teacher.rtf")).unwrap();
    assert_eq!((teacher.channels(), teacher.height(), teacher.width()), (4, 24, 24));
    let truth = fs::read_to_string(a.join("truth.csv")).unwrap();
    assert!(truth.starts_with("ray,depth\n"));
    assert_eq!(truth.lines().count(), 17);
}

#[test]
fn gen_scene_without_objects_has_empty_truth() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(gen(tmp.path(), &["--objects", "0"]), 0);
    let truth = fs::read_to_string(tmp.path().join("truth.csv")).unwrap();
    assert!(truth.lines().skip(1).all(|l| l.ends_with(',')));
}

#[test]
fn argument_errors_exit_with_one() {
    assert_eq!(cli(&["gen-scene", "--seed", "1"]), 1);
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(cli(&["gen-scene", "--out", path_str(tmp.path())]), 1);
    assert_eq!(cli(&["grad-check", "--loss", "rwd"]), 1);
    assert_eq!(cli(&["gen-scene", "--seed", "1", "--tau=-1", "--out", path_str(tmp.path())]), 1);
    assert_eq!(cli(&["no-such-command"]), 1);
    assert_eq!(cli(&["grad-check", "--seed", "1", "--loss", "nope"]), 1);
}

#[test]
fn losses_of_teacher_against_itself_have_zero_rwd() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = tmp.path().join("scene");
    assert_eq!(gen(&scene, &[]), 0);
    let out = tmp.path().join("out");
    let teacher = scene.join("teacher.rtf");
    let code = cli(&[
        "losses", "--seed", "3", "--scene", path_str(&scene.join("scene.json")), "--teacher", path_str(&teacher),
        "--student", path_str(&teacher), "--dump", "--out", path_str(&out),
    ]);
    assert_eq!(code, 0);
    let report: LossReport = serde_json::from_slice(&fs::read(out.join("losses.json")).unwrap()).unwrap();
    assert_eq!(report.rwd, 0.0);
    assert!(report.rcd.is_finite() && report.total.is_finite());
    for name in ["grad_rcd.rtf", "grad_rwd.rtf", "attention_student.rtf", "weights.rtf"] {
        assert!(out.join(name).exists(), "{name}");
    }
}

#[test]
fn losses_agree_with_library_on_loaded_tensors() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = tmp.path().join("scene");
    assert_eq!(gen(&scene, &[]), 0);
    let out = tmp.path().join("out");
    let code = cli(&[
        "losses", "--seed", "3", "--s-bg", "0.5", "--scene", path_str(&scene.join("scene.json")),
        "--teacher", path_str(&scene.join("teacher.rtf")), "--student", path_str(&scene.join("camera_clean.rtf")),
        "--out", path_str(&out),
    ]);
    assert_eq!(code, 0);
    let report: LossReport = serde_json::from_slice(&fs::read(out.join("losses.json")).unwrap()).unwrap();
    let spec: SceneSpec = serde_json::from_slice(&fs::read(scene.join("scene.json")).unwrap()).unwrap();
    let teacher = load_tensor(&scene.join("teacher.rtf")).unwrap();
    let student = load_tensor(&scene.join("camera_clean.rtf")).unwrap();
    let fg = rasterize_objects(&spec.objects, spec.h, spec.w).unwrap();
    let cfg = RwdConfig { s_bg: 0.5, ..RwdConfig::default() };
    let want = rwd_loss(&student, &teacher, &spec.partition().unwrap(), &fg, &cfg).unwrap().value;
    assert_eq!(report.rwd, want);
}

#[test]
fn losses_reject_malformed_inputs_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = tmp.path().join("scene");
    assert_eq!(gen(&scene, &[]), 0);
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, "{ not json").unwrap();
    let teacher = path_str(&scene.join("teacher.rtf")).to_string();
    let code = cli(&["losses", "--seed", "3", "--scene", path_str(&bad), "--teacher", &teacher, "--student", &teacher]);
    assert_eq!(code, 2);
    let missing = tmp.path().join("missing.rtf");
    let code = cli(&[
        "losses", "--seed", "3", "--scene", path_str(&scene.join("scene.json")), "--teacher", &teacher,
        "--student", path_str(&missing),
    ]);
    assert_eq!(code, 2);
}

#[test]
fn grad_check_passes_for_rwd_and_fails_when_perturbed() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("gc");
    assert_eq!(cli(&["grad-check", "--seed", "0", "--loss", "rwd", "--loss", "src", "--trials", "2", "--out", path_str(&out)]), 0);
    let reports: serde_json::Value = serde_json::from_slice(&fs::read(out.join("gradcheck.json")).unwrap()).unwrap();
    assert_eq!(reports.as_array().unwrap().len(), 2);
    assert_eq!(cli(&["grad-check", "--seed", "0", "--loss", "rwd", "--trials", "2", "--perturb-gradient", "1.01"]), 3);
}

#[test]
fn grad_check_rcd_passes_at_moderate_temperature() {
    assert_eq!(cli(&["grad-check", "--seed", "1", "--loss", "rcd", "--trials", "3", "--tau", "0.5"]), 0);
}

#[test]
fn train_ablation_and_eval_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("train");
    let common = ["--seed", "2", "--h", "24", "--w", "24", "--d", "4", "--n-ray", "16", "--objects", "3"];
    let mut args = vec!["train", "--scenes", "2", "--epochs", "3", "--ablation", "--out", path_str(&out)];
    args.extend_from_slice(&common);
    assert_eq!(cli(&args), 0);
    for name in [
        "baseline_metrics.csv",
        "distilled_metrics.csv",
        "comparison.csv",
        "baseline_resilience.csv",
        "distilled_resilience.csv",
        "distilled_model.json",
    ] {
        assert!(out.join(name).exists(), "{name}");
    }
    let metrics = fs::read_to_string(out.join("distilled_metrics.csv")).unwrap();
    assert_eq!(metrics.lines().next().unwrap(), "epoch,total,rcd,rwd,src,res,depth_mae");
    assert_eq!(metrics.lines().count(), 4);
    let comparison = fs::read_to_string(out.join("comparison.csv")).unwrap();
    assert!(comparison.starts_with("metric,baseline,distilled,relative_change\n"));

    let eval = tmp.path().join("eval");
    let model = out.join("distilled_model.json");
    let mut args = vec!["eval", "--model", path_str(&model), "--scenes", "2", "--severity", "0", "--out", path_str(&eval)];
    args.extend_from_slice(&common);
    assert_eq!(cli(&args), 0);
    let csv = fs::read_to_string(eval.join("resilience.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 4);
    for row in rows {
        let resilience: f64 = row.rsplit(',').next().unwrap().parse().unwrap();
        assert_eq!(resilience, 1.0, "{row}");
    }
}

#[test]
fn flags_override_config_file_and_unknown_keys_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("run.json");
    fs::write(&config, r#"{"scene": {"h": 20, "w": 18}, "rcd": {"tau": 0.2}}"#).unwrap();
    let out = tmp.path().join("a");
    assert_eq!(cli(&["gen-scene", "--seed", "1", "--config", path_str(&config), "--h", "12", "--out", path_str(&out)]), 0);
    let echoed = config_json(&out);
    assert_eq!(echoed["scene"]["h"], 12);
    assert_eq!(echoed["scene"]["w"], 18);
    assert_eq!(echoed["rcd"]["tau"], 0.2);
    assert_eq!(echoed["scene"]["d"], 8);

    let bad = tmp.path().join("bad.json");
    fs::write(&bad, r#"{"scene": {"height": 20}}"#).unwrap();
    assert_eq!(cli(&["gen-scene", "--seed", "1", "--config", path_str(&bad), "--out", path_str(&out)]), 2);
}
