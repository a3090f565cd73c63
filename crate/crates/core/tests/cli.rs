mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use common::tiny_scenario;
use sof_lab::cli::RunManifest;
use sof_lab::fitlab::Scenario;
use sof_lab::scene::{synth_scene, SceneDocument};

fn soflab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_soflab")).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_tiny_scenario(dir: &Path) -> PathBuf {
    let p = dir.join("tiny.json");
    fs::write(&p, serde_json::to_string_pretty(&tiny_scenario()).unwrap()).unwrap();
    p
}

fn write_scene(dir: &Path) -> PathBuf {
    let recipe = tiny_scenario().recipe;
    let (scene, _) = synth_scene(&recipe, 3).unwrap();
    let p = dir.join("scene.json");
    fs::write(&p, serde_json::to_string(&SceneDocument::new(recipe, 3, scene)).unwrap()).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn missing_scene_file_is_a_config_error_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere/scene.json");
    let out = dir.path().join("out");
    let o = soflab(&["diagnose", "--scene", s(&missing), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains(s(&missing)), "{}", stderr(&o));
}

#[test]
fn unknown_arm_lists_the_valid_ones() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write_tiny_scenario(dir.path());
    let o = soflab(&["fit", "--scenario", s(&sc), "--arm", "turbo", "--out", s(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("turbo") && err.contains("opg+tv"), "{err}");
}

#[test]
fn unknown_scenario_and_single_lambda_sweep_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = soflab(&["fit", "--scenario", "no-such-scenario", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    let o = soflab(&["suite", "--lambda-sweep", "--lambda", "0.5", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("λ"), "{}", stderr(&o));
    let o = soflab(&["scenario", "motorway"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn degenerate_camera_is_a_numeric_error() {
    let dir = tempfile::tempdir().unwrap();
    let scene = write_scene(dir.path());
    let o = soflab(&[
        "render",
        "--scene",
        s(&scene),
        "--pose",
        "1,2,3,1,2,3",
        "--time",
        "0.5",
        "--out",
        s(&dir.path().join("o")),
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn unwritable_output_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let scene = write_scene(dir.path());
    let blocker = dir.path().join("file");
    fs::write(&blocker, b"x").unwrap();
    let o = soflab(&[
        "render",
        "--scene",
        s(&scene),
        "--pose",
        "-0.5,-4,1,0,0,0.3",
        "--time",
        "0.5",
        "--out",
        s(&blocker.join("sub")),
    ]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn scenario_command_prints_a_loadable_config() {
    let o = soflab(&["scenario", "taillight-sof"]);
    assert!(o.status.success());
    let sc: Scenario = serde_json::from_slice(&o.stdout).unwrap();
    sc.validate().unwrap();
    assert_eq!(sc.name, "taillight-sof");
}

#[test]
fn shipped_reference_config_matches_the_catalog() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/taillight-sof.json");
    let shipped: Scenario = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    assert_eq!(shipped, sof_lab::fitlab::catalog("taillight-sof").unwrap());
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    fs::read(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn repeated_fit_and_render_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write_tiny_scenario(dir.path());
    let runs: Vec<PathBuf> = (0..2).map(|i| dir.path().join(format!("run{i}"))).collect();
    for r in &runs {
        let o = soflab(&["fit", "--scenario", s(&sc), "--seed", "5", "--out", s(r)]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let names = ["metrics.csv", "scene.json", "novel_truth.ppm", "novel_opg_tv.ppm", "novel_naive.ppm", "fit_opg.json"];
    for name in names {
        assert_eq!(read(&runs[0], name), read(&runs[1], name), "{name} differs");
    }
    let manifest: RunManifest = serde_json::from_slice(&read(&runs[0], "manifest.json")).unwrap();
    assert_eq!(manifest.status, "ok");
    assert_eq!(manifest.seed, 5);
    let listed: Vec<&str> = manifest.outputs.iter().map(|a| a.path.as_str()).collect();
    assert!(listed.contains(&"metrics.csv"));
    for a in &manifest.outputs {
        assert_eq!(a.sha256, sof_lab::io::sha256_hex(&read(&runs[0], &a.path)));
    }

    let other = dir.path().join("seed6");
    assert!(soflab(&["fit", "--scenario", s(&sc), "--seed", "6", "--out", s(&other)]).status.success());
    assert_ne!(read(&runs[0], "metrics.csv"), read(&other, "metrics.csv"));

    let scene = runs[0].join("scene.json");
    let fit = runs[0].join("fit_opg_tv.json");
    let renders: Vec<PathBuf> = (0..2).map(|i| dir.path().join(format!("render{i}"))).collect();
    for r in &renders {
        let o = soflab(&[
            "render",
            "--scene",
            s(&scene),
            "--fit",
            s(&fit),
            "--pose",
            "0.5,-4,1.2,0,0,0.3",
            "--time",
            "0.3",
            "--out",
            s(r),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(String::from_utf8_lossy(&o.stdout).contains("PSNR"));
    }
    for name in ["truth.ppm", "render.ppm"] {
        assert_eq!(read(&renders[0], name), read(&renders[1], name));
    }
    assert!(read(&renders[0], "truth.ppm").starts_with(b"P6\n20 16\n255\n"));
}

#[test]
fn diagnose_writes_report_and_spectra() {
    let dir = tempfile::tempdir().unwrap();
    let scene = write_scene(dir.path());
    let out = dir.path().join("diag");
    let o = soflab(&["diagnose", "--scene", s(&scene), "--timesteps", "16", "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let info: serde_json::Value = serde_json::from_slice(&read(&out, "info.json")).unwrap();
    assert_eq!(info["divergent"], serde_json::Value::Bool(true));
    assert!(String::from_utf8(read(&out, "spectra.csv")).unwrap().starts_with("spectrum,index,value\n"));
}
