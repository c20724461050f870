//! The `adrn` binary end to end: outputs, sidecars, exit codes.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use adrn_core::checkpoint::Checkpoint;
use adrn_core::hsi::HsiCube;
use adrn_core::io::{load_cube, save_cube, Interleave};
use adrn_core::model::{AdrnModel, ModelConfig};
use adrn_core::noise::NoiseSpec;

fn adrn(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adrn"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("run adrn")
}

fn ok(out: &Output) {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

const MANIFEST: &str = r#"cube = "scene.raw"
output_dir = "out"
render_bands = [5, 3, 1]

[split]
train = { rows = [16, 32], cols = [0, 32] }
test = { rows = [0, 16], cols = [0, 32] }

[[noise]]
kind = "constant"
sigma = 25.0
seed = 3

[train]
spectral_bands = 4
channels = 8
path_channels = 2
depth = 1
batch_size = 4
patch = 10
stride = 5
total_steps = 6
lr_decay_every = 3
"#;

fn setup(manifest: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    ok(&adrn(
        dir.path(),
        &["synthesize", "--output", "scene.raw", "--rows", "32", "--cols", "32", "--bands", "8"],
    ));
    fs::write(dir.path().join("manifest.toml"), manifest).unwrap();
    dir
}

#[test]
fn simulate_writes_cube_sidecar_and_previews() {
    let dir = setup(MANIFEST);
    let p = dir.path();
    ok(&adrn(p, &["simulate", "--manifest", "manifest.toml"]));
    let sidecar = fs::read_to_string(p.join("out/noisy_0.noise.toml")).unwrap();
    assert_eq!(NoiseSpec::from_toml(&sidecar).unwrap(), NoiseSpec::constant(25.0, 3));
    let first = fs::read(p.join("out/noisy_0.raw")).unwrap();
    for f in ["clean.raw", "clean.hdr", "clean.png", "noisy_0.hdr", "noisy_0.png"] {
        assert!(p.join("out").join(f).is_file(), "{f}");
    }
    ok(&adrn(p, &["simulate", "--manifest", "manifest.toml"]));
    assert_eq!(fs::read(p.join("out/noisy_0.raw")).unwrap(), first);
}

#[test]
fn invalid_inputs_exit_with_validation_code() {
    let dir = setup(&MANIFEST.replace("sigma = 25.0", "sigma = 0.0"));
    let out = adrn(dir.path(), &["simulate", "--manifest", "manifest.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sigma"));

    fs::write(dir.path().join("manifest.toml"), MANIFEST.replace("scene.raw", "nope.raw")).unwrap();
    let out = adrn(dir.path(), &["train", "--manifest", "manifest.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.raw"));

    let out = adrn(dir.path(), &["render", "--input", "scene.raw", "--output", "x.png", "--bands", "1,2,8"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_checkpoints_and_resumes() {
    let dir = setup(MANIFEST);
    let p = dir.path();
    ok(&adrn(p, &["train", "--manifest", "manifest.toml"]));
    let csv = fs::read_to_string(p.join("out/loss.csv")).unwrap();
    assert_eq!(csv.lines().count(), 7);
    assert!(p.join("out/checkpoints/step_0000003.ckpt").is_file());
    assert!(!p.join("out/checkpoints/step_0000006.ckpt").exists());

    let ckpt = Checkpoint::<f32>::load(&p.join("out/model.ckpt")).unwrap();
    assert_eq!(ckpt.train.unwrap().step, 6);

    ok(&adrn(
        p,
        &["train", "--manifest", "manifest.toml", "--resume", "out/checkpoints/step_0000003.ckpt"],
    ));
    assert_eq!(fs::read_to_string(p.join("out/loss.csv")).unwrap(), csv);
}

#[test]
fn denoise_with_zero_model_and_evaluate() {
    let dir = setup(MANIFEST);
    let p = dir.path();
    let config = ModelConfig {
        channels: 8,
        path_channels: 2,
        depth: 1,
        spectral_bands: 4,
        reduction: 10,
        attention: true,
    };
    Checkpoint::from_model(AdrnModel::<f32>::zeros(config).unwrap())
        .save(&p.join("zero.ckpt"))
        .unwrap();
    ok(&adrn(p, &["denoise", "--checkpoint", "zero.ckpt", "--input", "scene.raw", "--output", "d.raw"]));
    let input = load_cube::<f32>(&p.join("scene.raw")).unwrap();
    assert_eq!(load_cube::<f32>(&p.join("d.raw")).unwrap(), input);

    let out = adrn(
        p,
        &["evaluate", "--clean", "scene.raw", "--denoised", "d.raw", "d.raw", "--region", "0:16,0:32", "--csv", "r.csv"],
    );
    ok(&out);
    let table = String::from_utf8_lossy(&out.stdout);
    assert!(table.contains("100.000±0.0000"), "{table}");
    assert!(table.contains("1.0000±0.0000"), "{table}");
    assert_eq!(fs::read_to_string(p.join("r.csv")).unwrap().lines().count(), 1 + 8 + 3);

    let small = HsiCube::<f32>::zeros(16, 16, 4).unwrap();
    save_cube(&small, &p.join("small.raw"), Interleave::Bil).unwrap();
    let out = adrn(p, &["evaluate", "--clean", "scene.raw", "--denoised", "small.raw"]);
    assert_eq!(out.status.code(), Some(2));
    let out = adrn(p, &["denoise", "--checkpoint", "zero.ckpt", "--input", "small.raw", "--output", "e.raw"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn render_selects_bands() {
    let dir = setup(MANIFEST);
    let p = dir.path();
    ok(&adrn(p, &["render", "--input", "scene.raw", "--output", "a.png", "--bands", "0,1,2"]));
    ok(&adrn(p, &["render", "--input", "scene.raw", "--output", "b.png", "--bands", "2,0,1"]));
    let a = fs::read(p.join("a.png")).unwrap();
    let b = fs::read(p.join("b.png")).unwrap();
    assert_eq!(&a[..8], b"\x89PNG\r\n\x1a\n");
    assert_ne!(a, b);
    let out = adrn(p, &["render", "--input", "scene.raw", "--output", "c.png"]);
    assert_eq!(out.status.code(), Some(2), "default bands exceed 8-band cube");
}
