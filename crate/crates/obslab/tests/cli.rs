//! Black-box tests of the `obslab` binary: exit codes, artifact layout, and
//! byte-exact reproducibility across reruns.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn obslab(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_obslab"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn assert_success(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

const TINY_BKE: &str = "task.type = ske_bke\n\
    grid.width = 16\n\
    data.train_per_class = 30\n\
    data.validation_per_class = 20\n\
    data.test_per_class = 30\n\
    train.max_batches = 50\n\
    train.batch_per_class = 10\n\
    train.validation_every = 25\n\
    rng.seed = 11\n";

#[test]
fn config_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.txt"), "task.bogus = 1\n").unwrap();
    let out = obslab(&["generate", "--config", "bad.txt"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown config key"));

    // A missing --config is also a configuration error.
    let out = obslab(&["generate"], dir.path());
    assert_eq!(out.status.code(), Some(2));

    // Unreadable config path.
    let out = obslab(&["generate", "--config", "absent.txt"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_artifacts_exit_with_code_three() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("cfg.txt"), TINY_BKE).unwrap();
    // train-ho before generate: the dataset artifact is missing.
    let out = obslab(&["train-ho", "--config", "cfg.txt"], dir.path());
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("run `generate` first"));
}

#[test]
fn generate_is_reproducible_and_seed_flag_forks_the_run() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("cfg.txt"), TINY_BKE).unwrap();
    assert_success(&obslab(&["generate", "--config", "cfg.txt"], dir.path()));

    let runs: Vec<_> = fs::read_dir(dir.path().join("out"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    assert_eq!(runs.len(), 1);
    let run = &runs[0];
    for name in ["config.txt", "train.bin", "train.bin.json", "validation.bin", "test.bin"] {
        assert!(run.join(name).exists(), "{name} missing");
    }

    let before = fs::read(run.join("train.bin")).unwrap();
    assert_success(&obslab(&["generate", "--config", "cfg.txt"], dir.path()));
    assert_eq!(before, fs::read(run.join("train.bin")).unwrap(), "rerun changed bytes");

    // A seed override changes the digest, so the run lands elsewhere.
    assert_success(&obslab(&["generate", "--config", "cfg.txt", "--seed", "99"], dir.path()));
    assert_eq!(fs::read_dir(dir.path().join("out")).unwrap().count(), 2);
}

#[test]
fn full_chain_produces_an_evaluation_and_report() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("cfg.txt"), TINY_BKE).unwrap();
    for sub in ["generate", "train-ho", "evaluate"] {
        assert_success(&obslab(&[sub, "--config", "cfg.txt"], dir.path()));
    }
    let out = obslab(&["report"], dir.path());
    assert_success(&out);
    let table = String::from_utf8_lossy(&out.stdout);
    assert!(table.contains("slnn_covdecomp"));
    assert!(table.contains("analytic_io"));
    assert!(dir.path().join("out/report.txt").exists());
}

#[test]
fn self_test_subcommand_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = obslab(&["self-test"], dir.path());
    assert_success(&out);
    assert!(String::from_utf8_lossy(&out.stdout).contains("all checks passed"));
}

#[test]
fn bad_thread_counts_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("cfg.txt"), TINY_BKE).unwrap();
    let out = obslab(&["generate", "--config", "cfg.txt", "--threads", "0"], dir.path());
    assert_eq!(out.status.code(), Some(2));

    let out = Command::new(env!("CARGO_BIN_EXE_obslab"))
        .args(["generate", "--config", "cfg.txt"])
        .env("OBSLAB_THREADS", "not-a-number")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
