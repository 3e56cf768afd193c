//! End-to-end tests of the `sfml` binary: exit codes, artifact layout,
//! determinism of produced files.

use std::path::Path;
use std::process::{Command, Output};

fn sfml() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sfml"))
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, body).unwrap();
    path
}

const SMOKE: &str = r#"
[sde]
name = "ou1d"
n_traj = 10
len = 5
dt = 0.01
seed = 11

[train]
epochs = 1
n_batches = 2
batch_size = 8
latent_dim = 1
hidden = [6]

[eval]
n_samples = 50
n_steps = 10
n_mc = 64
grid_points = 4
held_out = 100

[output]
csv = true
"#;

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn manifest_hashes(path: &Path) -> Vec<(String, String)> {
    let text = std::fs::read_to_string(path).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["files"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| {
            (
                f["path"].as_str().unwrap().to_string(),
                f["sha256"].as_str().unwrap().to_string(),
            )
        })
        .collect()
}

#[test]
fn generate_writes_pairs_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMOKE);
    let out = run(sfml().args([
        "generate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        tmp.path().join("run").to_str().unwrap(),
    ]));
    assert!(out.status.success(), "{}", stderr_of(&out));
    let dataset = tmp.path().join("run").join("dataset");
    let store = sfml_core::io::load_pairs(dataset.join("pairs.bin")).unwrap();
    assert_eq!(store.len(), 10 * 5);
    assert!(dataset.join("trajectories.bin").exists());
    assert!(dataset.join("trajectories.csv").exists());
    assert!(dataset.join("config.resolved.toml").exists());
    let hashes = manifest_hashes(&dataset.join("manifest.json"));
    assert!(hashes.iter().any(|(p, _)| p == "pairs.bin"));
}

#[test]
fn generate_is_deterministic_byte_for_byte() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMOKE);
    for sub in ["a", "b"] {
        let out = run(sfml().args([
            "generate",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            tmp.path().join(sub).to_str().unwrap(),
            "--deterministic",
        ]));
        assert!(out.status.success(), "{}", stderr_of(&out));
    }
    let a = manifest_hashes(&tmp.path().join("a/dataset/manifest.json"));
    let b = manifest_hashes(&tmp.path().join("b/dataset/manifest.json"));
    assert_eq!(a, b);
    assert!(!a.is_empty());
}

#[test]
fn unknown_config_key_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "[sde]\nname = \"ou1d\"\nbogus_knob = 3\n",
    );
    let out = run(sfml().args(["generate", "--config", cfg.to_str().unwrap()]));
    assert_eq!(out.status.code(), Some(2), "{}", stderr_of(&out));
    assert!(stderr_of(&out).contains("bogus_knob"));
}

#[test]
fn unknown_sde_name_exits_2_and_names_it() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[sde]\nname = \"warp_drive\"\n");
    let out = run(sfml().args(["generate", "--config", cfg.to_str().unwrap()]));
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_of(&out).contains("warp_drive"));
}

#[test]
fn inapplicable_family_parameter_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[sde]\nname = \"gbm\"\ntheta = 0.5\n");
    let out = run(sfml().args(["generate", "--config", cfg.to_str().unwrap()]));
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_of(&out).contains("theta"));
}

#[test]
fn train_smoke_checkpoint_loads_back() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMOKE);
    let root = tmp.path().join("run");
    let gen = run(sfml().args([
        "generate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        root.to_str().unwrap(),
    ]));
    assert!(gen.status.success(), "{}", stderr_of(&gen));
    let tr = run(sfml().args([
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        root.to_str().unwrap(),
        "--deterministic",
    ]));
    assert!(tr.status.success(), "{}", stderr_of(&tr));
    let (model, header) =
        sfml_core::io::load_checkpoint(root.join("train/checkpoint.bin")).unwrap();
    assert_eq!(model.dim, 1);
    assert_eq!(model.latent_dim, 1);
    assert!(!header.config_hash.is_empty());
    let history = std::fs::read_to_string(root.join("train/history.csv")).unwrap();
    assert!(history.starts_with("epoch,mse,kde,moment,total,seconds"));
    assert_eq!(history.lines().count(), 2);
}

#[test]
fn train_dry_run_touches_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMOKE);
    let root = tmp.path().join("run");
    let out = run(sfml().args([
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        root.to_str().unwrap(),
        "--dry-run",
    ]));
    assert!(out.status.success(), "{}", stderr_of(&out));
    assert!(!root.exists());
}

#[test]
fn train_without_dataset_exits_4() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMOKE);
    let out = run(sfml().args([
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        tmp.path().join("empty").to_str().unwrap(),
    ]));
    assert_eq!(out.status.code(), Some(4), "{}", stderr_of(&out));
}

#[test]
fn evaluate_without_checkpoint_exits_4() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMOKE);
    let out = run(sfml().args([
        "evaluate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        tmp.path().join("empty").to_str().unwrap(),
    ]));
    assert_eq!(out.status.code(), Some(4), "{}", stderr_of(&out));
}

#[test]
fn evaluate_zero_parameter_checkpoint_gives_all_zero_recovery() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMOKE);
    let root = tmp.path().join("run");
    std::fs::create_dir_all(&root).unwrap();
    let model = sfml_core::neural::FmlModel::zeros(1, 1, &[6], 0.01).unwrap();
    let ckpt = root.join("zero.bin");
    sfml_core::io::save_checkpoint(&ckpt, &model, "zero").unwrap();
    let out = run(sfml().args([
        "evaluate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        root.to_str().unwrap(),
        "--model",
        ckpt.to_str().unwrap(),
    ]));
    assert!(out.status.success(), "{}", stderr_of(&out));
    let csv = std::fs::read_to_string(root.join("eval/drift_diffusion.csv")).unwrap();
    let mut rows = 0;
    for line in csv.lines().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells[1], "0");
        assert_eq!(cells[2], "0");
        rows += 1;
    }
    assert_eq!(rows, 4);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(root.join("eval/report.json")).unwrap())
            .unwrap();
    assert!(report["latent_ks"].as_array().unwrap().len() == 1);
    // The zero model's conditional distribution is a point mass.
    assert_eq!(report["deterministic_coordinates"][0], true);
}

#[test]
fn evaluate_dimension_mismatch_exits_6() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMOKE);
    let root = tmp.path().join("run");
    std::fs::create_dir_all(&root).unwrap();
    let model = sfml_core::neural::FmlModel::zeros(2, 1, &[6], 0.01).unwrap();
    let ckpt = root.join("two_dim.bin");
    sfml_core::io::save_checkpoint(&ckpt, &model, "x").unwrap();
    let out = run(sfml().args([
        "evaluate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        root.to_str().unwrap(),
        "--model",
        ckpt.to_str().unwrap(),
    ]));
    assert_eq!(out.status.code(), Some(6), "{}", stderr_of(&out));
}

#[test]
fn sweep_single_dimension_reports_detected_1() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMOKE);
    let root = tmp.path().join("run");
    let gen = run(sfml().args([
        "generate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        root.to_str().unwrap(),
    ]));
    assert!(gen.status.success());
    let sw = run(sfml().args([
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        root.to_str().unwrap(),
        "--max-nz",
        "1",
        "--deterministic",
    ]));
    assert!(sw.status.success(), "{}", stderr_of(&sw));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(root.join("sweep/sweep.json")).unwrap())
            .unwrap();
    assert_eq!(report["detected_dim"], 1);
    assert_eq!(report["rows"].as_array().unwrap().len(), 1);
    assert!(root.join("sweep/checkpoint_nz1.bin").exists());
}

#[test]
fn train_is_deterministic_across_reruns() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMOKE);
    let mut checkpoints = Vec::new();
    for sub in ["a", "b"] {
        let root = tmp.path().join(sub);
        let gen = run(sfml().args([
            "generate",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            root.to_str().unwrap(),
        ]));
        assert!(gen.status.success());
        let tr = run(sfml().args([
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            root.to_str().unwrap(),
            "--deterministic",
        ]));
        assert!(tr.status.success(), "{}", stderr_of(&tr));
        checkpoints.push(std::fs::read(root.join("train/checkpoint.bin")).unwrap());
    }
    assert_eq!(checkpoints[0], checkpoints[1]);
}

#[test]
fn seed_flag_changes_the_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMOKE);
    let mut digests = Vec::new();
    for (sub, seed) in [("a", "11"), ("b", "12")] {
        let root = tmp.path().join(sub);
        let out = run(sfml().args([
            "generate",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            root.to_str().unwrap(),
            "--seed",
            seed,
        ]));
        assert!(out.status.success());
        digests.push(
            sfml_core::io::file_sha256(root.join("dataset/pairs.bin")).unwrap(),
        );
    }
    assert_ne!(digests[0], digests[1]);
}

#[test]
fn sfml_out_env_is_the_fallback_root() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMOKE);
    let root = tmp.path().join("env_root");
    let out = run(sfml()
        .args(["generate", "--config", cfg.to_str().unwrap()])
        .env("SFML_OUT", root.to_str().unwrap())
        .current_dir(tmp.path()));
    assert!(out.status.success(), "{}", stderr_of(&out));
    assert!(root.join("dataset/pairs.bin").exists());
}
