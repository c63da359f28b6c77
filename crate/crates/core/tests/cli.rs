//! End-to-end checks of the command-line contract: exit codes, output
//! files, determinism across runs, and the fingerprint guard.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn lwau() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lwau"))
}

fn write_config(dir: &Path, iterations: u64, mode: &str) -> PathBuf {
    let path = dir.join(format!("cfg_{mode}_{iterations}.toml"));
    let alpha_trainable = mode == "lwau";
    std::fs::write(
        &path,
        format!(
            r#"
seed = 9
precision = "f32"

[net]
arch = "mlp"
hidden = 12

[data]
kind = "blobs"
dim = 12
separation = 4.0
train_classes = 10
val_classes = 5
test_classes = 5
per_class = 10

[train]
ways = 3
shots = 1
queries = 3
inner_steps_train = 2
inner_steps_test = 3
iterations = {iterations}
meta_batch = 2
val_episodes = 20
mode = "{mode}"
alpha_trainable = {alpha_trainable}

[output]
checkpoint_interval = 0
"#
        ),
    )
    .unwrap();
    path
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn missing_config_exits_2_and_names_the_path() {
    let out = run(lwau()
        .args(["train", "--config", "/nonexistent/nope.toml", "--output", "/tmp/x"]));
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("/nonexistent/nope.toml"));
}

#[test]
fn zero_iterations_checkpoints_the_initialized_state() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), 5, "lwau");
    let out_dir = tmp.path().join("run");
    let out = run(lwau().args([
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--output",
        out_dir.to_str().unwrap(),
        "--iterations",
        "0",
    ]));
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let ckpt = out_dir.join("checkpoints/final.ckpt");
    assert!(ckpt.is_file());
    let state = lwau::meta::load_state::<f32>(&ckpt).unwrap();
    assert_eq!(state.iteration, 0);
    assert!(out_dir.join("config.canonical.txt").is_file());
    assert!(out_dir.join("fingerprint.txt").is_file());
}

#[test]
fn identical_config_and_seed_write_identical_checkpoint_bytes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), 8, "lwau");
    let (dir_a, dir_b) = (tmp.path().join("a"), tmp.path().join("b"));
    for (dir, workers) in [(&dir_a, "1"), (&dir_b, "2")] {
        let out = run(lwau().args([
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--output",
            dir.to_str().unwrap(),
            "--workers",
            workers,
        ]));
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    }
    let a = std::fs::read(dir_a.join("checkpoints/final.ckpt")).unwrap();
    let b = std::fs::read(dir_b.join("checkpoints/final.ckpt")).unwrap();
    assert_eq!(a, b, "checkpoint bytes differ across runs/worker counts");
}

#[test]
fn eval_is_deterministic_and_guards_the_fingerprint() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), 6, "lwau");
    let out_dir = tmp.path().join("run");
    let out = run(lwau().args([
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--output",
        out_dir.to_str().unwrap(),
    ]));
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let ckpt = out_dir.join("checkpoints/final.ckpt");

    let eval = |episodes: &str| {
        let out = run(lwau().args([
            "eval",
            "--config",
            cfg.to_str().unwrap(),
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--episodes",
            episodes,
        ]));
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
        // First field is `accuracy ± half-width`; later fields carry wall
        // time, a measurement rather than a computed number.
        stdout(&out).split('|').next().unwrap().trim().to_string()
    };
    assert_eq!(eval("50"), eval("50"), "same checkpoint+seed printed different numbers");

    // A semantically different config must be refused, exit 2.
    let other = write_config(tmp.path(), 6, "maml");
    let out = run(lwau().args([
        "eval",
        "--config",
        other.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
    ]));
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("fingerprint"));
}

#[test]
fn corrupted_checkpoint_exits_2_with_the_offset() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), 3, "lwau");
    let out_dir = tmp.path().join("run");
    let out = run(lwau().args([
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--output",
        out_dir.to_str().unwrap(),
    ]));
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let ckpt = out_dir.join("checkpoints/final.ckpt");
    let bytes = std::fs::read(&ckpt).unwrap();
    std::fs::write(&ckpt, &bytes[..bytes.len() - 40]).unwrap();

    let out = run(lwau().args([
        "eval",
        "--config",
        cfg.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
    ]));
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(
        stderr(&out).contains("truncated") && stderr(&out).contains("offset"),
        "message should name the truncation offset: {}",
        stderr(&out)
    );
}

#[test]
fn seed_precedence_is_flag_then_env_then_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), 0, "lwau");
    let fingerprint_of = |dir: &Path| {
        std::fs::read_to_string(dir.join("fingerprint.txt")).unwrap()
    };

    let d_file = tmp.path().join("file");
    let out = run(lwau().args(["train", "--config", cfg.to_str().unwrap(), "--output", d_file.to_str().unwrap()]));
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));

    let d_env = tmp.path().join("env");
    let out = run(lwau()
        .env("LWAU_SEED", "101")
        .args(["train", "--config", cfg.to_str().unwrap(), "--output", d_env.to_str().unwrap()]));
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert_ne!(fingerprint_of(&d_file), fingerprint_of(&d_env));

    let d_flag = tmp.path().join("flag");
    let out = run(lwau()
        .env("LWAU_SEED", "101")
        .args([
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--output",
            d_flag.to_str().unwrap(),
            "--seed",
            "9",
        ]));
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    // Flag 9 overrides env 101 and equals the file seed 9.
    assert_eq!(fingerprint_of(&d_file), fingerprint_of(&d_flag));
}

#[test]
fn gendata_is_deterministic_and_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let (p1, p2) = (tmp.path().join("a.pool"), tmp.path().join("b.pool"));
    for p in [&p1, &p2] {
        let out = run(lwau().args([
            "gendata",
            "blobs",
            "--classes",
            "5",
            "--per-class",
            "6",
            "--dim",
            "10",
            "--split",
            "test",
            "--seed",
            "3",
            "--out",
            p.to_str().unwrap(),
        ]));
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    }
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    let pool = lwau::data::poolfile::load_pool::<f32>(&p1).unwrap();
    assert_eq!(pool.class_count(), 5);

    // Undersized pools warn when the episode shape is stated.
    let out = run(lwau().args([
        "gendata",
        "blobs",
        "--classes",
        "3",
        "--per-class",
        "4",
        "--dim",
        "6",
        "--out",
        tmp.path().join("warn.pool").to_str().unwrap(),
        "--shots",
        "2",
        "--queries",
        "5",
    ]));
    assert_eq!(out.status.code(), Some(0));
    assert!(stderr(&out).contains("warning"));
}

#[test]
fn unknown_probe_kind_exits_2_listing_valid_kinds() {
    let out = run(lwau().args(["probe", "entropy"]));
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    let msg = stderr(&out);
    for kind in ["gradcheck", "proportions", "sparsity", "freeze"] {
        assert!(msg.contains(kind), "help should list {kind}: {msg}");
    }
}

#[test]
fn freeze_probe_emits_rows_for_every_depth_and_mode() {
    let tmp = tempfile::tempdir().unwrap();
    let lwau_cfg = write_config(tmp.path(), 4, "lwau");
    let maml_cfg = write_config(tmp.path(), 4, "maml");
    let (dir_l, dir_m) = (tmp.path().join("l"), tmp.path().join("m"));
    for (cfg, dir) in [(&lwau_cfg, &dir_l), (&maml_cfg, &dir_m)] {
        let out = run(lwau().args([
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--output",
            dir.to_str().unwrap(),
        ]));
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    }
    let report = tmp.path().join("sweep.csv");
    let out = run(lwau().args([
        "probe",
        "freeze",
        "--config",
        lwau_cfg.to_str().unwrap(),
        "--lwau-checkpoint",
        dir_l.join("checkpoints/final.ckpt").to_str().unwrap(),
        "--maml-checkpoint",
        dir_m.join("checkpoints/final.ckpt").to_str().unwrap(),
        "--episodes",
        "10",
        "--timing-reps",
        "2",
        "--output",
        report.to_str().unwrap(),
    ]));
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = std::fs::read_to_string(&report).unwrap();
    // 2 layers x 2 modes = 4 rows after the comment and header lines.
    assert_eq!(text.lines().count(), 2 + 4, "{text}");
    for needle in ["LWAU,0", "LWAU,1", "MAML,0", "MAML,1"] {
        assert!(text.contains(needle), "missing {needle} in {text}");
    }
}
