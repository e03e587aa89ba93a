//! End-to-end tests of the `ndev` binary: exit codes, error wording, and
//! byte determinism of everything the commands write.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ndev::io::read_ndev;
use ndev::metrics::SHARED_ADAM;
use ndev::optim::Adam;
use ndev::temporal::{Family, TemporalSpec};
use ndev::videogan::{save_checkpoint, CheckpointMeta, GanConfig, GanModel, GanSeeds, Phi};

fn ndev() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ndev"))
}

fn run(args: &[&str]) -> Output {
    ndev().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// Writes an untrained checkpoint for the given family; sampling commands
/// only need a loadable model, not a trained one.
fn write_checkpoint(dir: &Path, family: Family, seq_len: usize) -> PathBuf {
    let spec = TemporalSpec::new(family, 6, seq_len, 77);
    let model = GanModel::build(&spec, 10).unwrap();
    let meta = CheckpointMeta {
        temporal: spec,
        gan: GanConfig {
            phi: Phi::Bce,
            batch_size: 2,
            total_steps: 2,
            metric_interval: 2,
            seeds: GanSeeds { params: 10, data: 11, noise: 12 },
        },
        eval_splits: 2,
        eval_videos_per_split: 2,
        step: 0,
        best_step: 0,
        best_is: f64::NEG_INFINITY,
    };
    let path = dir.join(format!("{}.ndck", family.as_str()));
    save_checkpoint(
        &path,
        &model,
        (
            &Adam::new(SHARED_ADAM, model.temporal().store()).unwrap(),
            &Adam::new(SHARED_ADAM, model.image_store()).unwrap(),
            &Adam::new(SHARED_ADAM, model.disc_store()).unwrap(),
        ),
        &meta,
    )
    .unwrap();
    path
}

fn train_config(out_dir: &Path, total_steps: usize, interval: usize) -> String {
    format!(
        r#"{{
  "temporal": {{ "family": "ode", "latent_dim": 4, "num_frames": 4, "seed": 7 }},
  "gan": {{
    "phi": "bce", "batch_size": 2, "total_steps": {total_steps},
    "metric_interval": {interval},
    "seeds": {{ "params": 1, "data": 2, "noise": 3 }}
  }},
  "dataset": {{
    "kind": "moving_bar", "num_classes": 2, "num_frames": 4,
    "height": 16, "width": 16, "samples_per_class": 50, "seed": 4
  }},
  "output_dir": "{}"
}}"#,
        out_dir.display()
    )
}

// ---------------------------------------------------------------------------
// Exit codes
// ---------------------------------------------------------------------------

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&run(&["no-such-command"])), 2);
    assert_eq!(code(&run(&["sample"])), 2); // missing required args
    assert_eq!(code(&run(&["train", "--config"])), 2); // flag without value
}

#[test]
fn config_with_missing_key_exits_2_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    // gan.seeds.noise is required and absent.
    fs::write(
        &path,
        r#"{
  "temporal": { "family": "ode", "latent_dim": 4, "num_frames": 4, "seed": 7 },
  "gan": {
    "phi": "bce", "batch_size": 2, "total_steps": 2, "metric_interval": 2,
    "seeds": { "params": 1, "data": 2 }
  },
  "dataset": {
    "kind": "moving_bar", "num_classes": 2, "num_frames": 4,
    "height": 16, "width": 16, "samples_per_class": 50, "seed": 4
  },
  "output_dir": "out"
}"#,
    )
    .unwrap();
    let out = run(&["train", "--config", path.to_str().unwrap()]);
    assert_eq!(code(&out), 2, "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("noise"), "stderr: {}", stderr(&out));
}

#[test]
fn config_with_unknown_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("extra.json");
    let cfg = train_config(&dir.path().join("out"), 2, 2)
        .replace("\"seed\": 7", "\"seed\": 7, \"warp_speed\": true");
    fs::write(&path, cfg).unwrap();
    let out = run(&["train", "--config", path.to_str().unwrap()]);
    assert_eq!(code(&out), 2, "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("warp_speed"), "stderr: {}", stderr(&out));
}

#[test]
fn corrupt_checkpoint_magic_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = write_checkpoint(dir.path(), Family::Ode, 4);
    let mut bytes = fs::read(&ckpt).unwrap();
    bytes[0] = b'!';
    fs::write(&ckpt, bytes).unwrap();
    let out = run(&[
        "sample",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--seed",
        "1",
        "--out",
        dir.path().join("x").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 3, "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("magic"), "stderr: {}", stderr(&out));
}

#[test]
fn capability_refusals_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("v");

    // Frame-rate interpolation needs a continuous-time family.
    let conv = write_checkpoint(dir.path(), Family::Conv1d, 4);
    let out = run(&[
        "interpolate",
        "--checkpoint",
        conv.to_str().unwrap(),
        "--factor",
        "2",
        "--seed",
        "1",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 4, "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("conv1d"), "stderr: {}", stderr(&out));

    // Backward extrapolation additionally rules out stochastic dynamics.
    for family in [Family::Sde, Family::Lstm] {
        let ckpt = write_checkpoint(dir.path(), family, 4);
        let out = run(&[
            "backtrack",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--pre-frames",
            "2",
            "--seed",
            "1",
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 4, "family {family:?}, stderr: {}", stderr(&out));
    }

    // Interpolation does work for sde; backtrack works only for ode.
    let sde = write_checkpoint(dir.path(), Family::Sde, 4);
    let out = run(&[
        "interpolate",
        "--checkpoint",
        sde.to_str().unwrap(),
        "--factor",
        "2",
        "--seed",
        "1",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
}

#[test]
fn interpolate_factor_must_divide_solver_steps() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = write_checkpoint(dir.path(), Family::Ode, 4); // rk4, 4 steps/unit
    let out = run(&[
        "interpolate",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--factor",
        "3",
        "--seed",
        "1",
        "--out",
        dir.path().join("v").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2, "stderr: {}", stderr(&out));
}

#[test]
fn invalid_thread_env_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cfg.json");
    fs::write(&path, train_config(&dir.path().join("out"), 2, 2)).unwrap();
    let out = ndev()
        .args(["train", "--config", path.to_str().unwrap()])
        .env("NDEV_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(code(&out), 2, "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("NDEV_THREADS"), "stderr: {}", stderr(&out));
}

// ---------------------------------------------------------------------------
// Gradcheck fault injection
// ---------------------------------------------------------------------------

#[test]
fn gradcheck_fault_env_flips_the_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("gc.json");
    fs::write(&path, train_config(&dir.path().join("gc"), 2, 2)).unwrap();

    // A fault naming a block that no checked composite owns is a config
    // error, rejected before any sweep runs.
    let out = ndev()
        .args(["gradcheck", "--config", path.to_str().unwrap()])
        .env("NDEV_GRADCHECK_FAULT", "nope.w:0:1.0")
        .output()
        .unwrap();
    assert_eq!(code(&out), 2, "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("nope.w"), "stderr: {}", stderr(&out));

    // A malformed fault spec is also a config error.
    let out = ndev()
        .args(["gradcheck", "--config", path.to_str().unwrap()])
        .env("NDEV_GRADCHECK_FAULT", "not-a-fault")
        .output()
        .unwrap();
    assert_eq!(code(&out), 2, "stderr: {}", stderr(&out));

    // A real fault makes exactly the owning stage fail and the run exit 1.
    let out = ndev()
        .args(["gradcheck", "--config", path.to_str().unwrap()])
        .env("NDEV_GRADCHECK_FAULT", "lstm.w:0:0.5")
        .output()
        .unwrap();
    assert_eq!(code(&out), 1, "stdout: {}", stdout(&out));
    let text = stdout(&out);
    assert!(text.contains("g_t[lstm]") && text.contains("FAIL"), "{text}");
    assert!(text.contains("worst offender: block lstm.w entry 0"), "{text}");
    assert!(text.contains("gradient check FAILED"), "{text}");
}

// ---------------------------------------------------------------------------
// Sampling determinism and frame identities
// ---------------------------------------------------------------------------

#[test]
fn sample_is_byte_deterministic_and_seed_sensitive() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = write_checkpoint(dir.path(), Family::Sde, 4);
    let args = |out: &Path, seed: &str| {
        vec![
            "sample".to_string(),
            "--checkpoint".into(),
            ckpt.to_str().unwrap().into(),
            "--count".into(),
            "2".into(),
            "--seed".into(),
            seed.into(),
            "--out".into(),
            out.to_str().unwrap().into(),
        ]
    };
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    assert_eq!(code(&run(&args(&a, "9").iter().map(String::as_str).collect::<Vec<_>>())), 0);
    assert_eq!(code(&run(&args(&b, "9").iter().map(String::as_str).collect::<Vec<_>>())), 0);
    assert_eq!(code(&run(&args(&c, "10").iter().map(String::as_str).collect::<Vec<_>>())), 0);

    for j in 0..2 {
        let name = format!("video_{j:03}.ndev");
        let bytes_a = fs::read(a.join(&name)).unwrap();
        assert_eq!(bytes_a, fs::read(b.join(&name)).unwrap(), "rerun differs for {name}");
        assert_ne!(bytes_a, fs::read(c.join(&name)).unwrap(), "seed ignored for {name}");
    }
    // The two videos of one run use distinct per-video streams.
    assert_ne!(
        fs::read(a.join("video_000.ndev")).unwrap(),
        fs::read(a.join("video_001.ndev")).unwrap()
    );
}

#[test]
fn interpolate_embeds_the_plain_sample_at_integer_times() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = write_checkpoint(dir.path(), Family::Ode, 4);
    let ckpt = ckpt.to_str().unwrap();
    let base = dir.path().join("base");
    let k1 = dir.path().join("k1");
    let k2 = dir.path().join("k2");

    for (cmd, out, extra) in [
        ("sample", &base, vec![]),
        ("interpolate", &k1, vec!["--factor", "1"]),
        ("interpolate", &k2, vec!["--factor", "2"]),
    ] {
        let mut args = vec![cmd, "--checkpoint", ckpt, "--seed", "5", "--out", out.to_str().unwrap()];
        args.extend(extra);
        let res = run(&args);
        assert_eq!(code(&res), 0, "{cmd}: {}", stderr(&res));
    }

    // Factor 1 is exactly the plain sample.
    assert_eq!(
        fs::read(base.join("video_000.ndev")).unwrap(),
        fs::read(k1.join("video_000.ndev")).unwrap()
    );

    // Factor 2 doubles the frame rate and reproduces every integer frame.
    let plain = read_ndev(&base.join("video_000.ndev")).unwrap();
    let fine = read_ndev(&k2.join("video_000.ndev")).unwrap();
    assert_eq!(plain.frames(), 4);
    assert_eq!(fine.frames(), 7); // (T-1)*2 + 1
    for t in 0..plain.frames() {
        assert_eq!(plain.frame(t), fine.frame(2 * t), "integer frame {t}");
    }
}

#[test]
fn backtrack_prepends_frames_and_keeps_the_forward_ones() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = write_checkpoint(dir.path(), Family::Ode, 4);
    let ckpt = ckpt.to_str().unwrap();
    let base = dir.path().join("base");
    let n0 = dir.path().join("n0");
    let n4 = dir.path().join("n4");

    for (cmd, out, extra) in [
        ("sample", &base, vec![]),
        ("backtrack", &n0, vec!["--pre-frames", "0"]),
        ("backtrack", &n4, vec!["--pre-frames", "4"]),
    ] {
        let mut args = vec![cmd, "--checkpoint", ckpt, "--seed", "5", "--out", out.to_str().unwrap()];
        args.extend(extra);
        let res = run(&args);
        assert_eq!(code(&res), 0, "{cmd}: {}", stderr(&res));
    }

    assert_eq!(
        fs::read(base.join("video_000.ndev")).unwrap(),
        fs::read(n0.join("video_000.ndev")).unwrap()
    );
    let plain = read_ndev(&base.join("video_000.ndev")).unwrap();
    let extended = read_ndev(&n4.join("video_000.ndev")).unwrap();
    assert_eq!(extended.frames(), plain.frames() + 4);
    for t in 0..plain.frames() {
        assert_eq!(plain.frame(t), extended.frame(t + 4), "forward frame {t}");
    }
}

#[test]
fn pgm_export_writes_one_directory_per_video() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = write_checkpoint(dir.path(), Family::Conv1d, 4);
    let out_dir = dir.path().join("frames");
    let out = run(&[
        "sample",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--count",
        "2",
        "--seed",
        "3",
        "--format",
        "pgm",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    for j in 0..2 {
        for t in 0..4 {
            let frame = out_dir.join(format!("video_{j:03}")).join(format!("frame_{t:03}.pgm"));
            let bytes = fs::read(&frame).unwrap_or_else(|e| panic!("{}: {e}", frame.display()));
            assert!(bytes.starts_with(b"P5\n16 16\n255\n"));
            assert_eq!(bytes.len(), b"P5\n16 16\n255\n".len() + 16 * 16);
        }
    }
}

// ---------------------------------------------------------------------------
// Training determinism
// ---------------------------------------------------------------------------

#[test]
fn train_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (run_a, run_b) = (dir.path().join("a"), dir.path().join("b"));
    for out_dir in [&run_a, &run_b] {
        let cfg_path = dir.path().join("cfg.json");
        fs::write(&cfg_path, train_config(out_dir, 4, 2)).unwrap();
        let out = run(&["train", "--config", cfg_path.to_str().unwrap()]);
        assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
        let text = stdout(&out);
        assert!(text.contains("(untrained)"), "{text}");
        assert!(text.contains("step 4:"), "{text}");
    }
    for artifact in ["metrics.csv", "latest.ndck", "best.ndck"] {
        assert_eq!(
            fs::read(run_a.join(artifact)).unwrap(),
            fs::read(run_b.join(artifact)).unwrap(),
            "{artifact} differs between identical runs"
        );
    }
    // timing.csv is wall-clock and so exempt from byte determinism, but it
    // must exist and carry the documented header.
    let timing = fs::read_to_string(run_a.join("timing.csv")).unwrap();
    assert!(timing.starts_with("step,seconds_per_step\n"), "{timing}");
    let metrics = fs::read_to_string(run_a.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("step,loss_d,loss_g,is_mean,is_std,fid\n"), "{metrics}");
    assert_eq!(metrics.lines().count(), 3); // header + steps 2 and 4
}
