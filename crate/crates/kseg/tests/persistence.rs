//! Resuming from an on-disk checkpoint must be indistinguishable from never
//! stopping: same log rows (modulo wall-clock), same checkpoint bytes.

use std::path::Path;

use kseg::config::{load_config, PhantomGridConfig, RunConfig};
use kseg::dataset::write_dataset;
use kseg::driver::run_train;

fn tiny_cfg(steps: usize) -> RunConfig {
    let mut cfg = load_config(
        None,
        &[
            String::from("model.layers=1"),
            String::from("model.latents=8"),
            String::from("model.width=16"),
            String::from("model.ff_width=16"),
            String::from("model.heads=2"),
            String::from("encoding.num_frequencies=3"),
            format!("train.steps={steps}"),
            String::from("train.checkpoint_every=3"),
            String::from("train.queries_per_step=32"),
            String::from("train.seed=11"),
        ],
    )
    .unwrap();
    cfg.data.num_train = 2;
    cfg.data.num_val = 1;
    cfg.data.num_test = 1;
    cfg.data.base_seed = 5;
    cfg.data.phantom = PhantomGridConfig { t: 2, h: 32, w: 32 };
    cfg
}

/// The log without its wall-clock column, which is the only field allowed to
/// differ between byte-faithful reruns.
fn log_without_wall(dir: &Path) -> Vec<String> {
    std::fs::read_to_string(dir.join("train_log.csv"))
        .unwrap()
        .lines()
        .map(|line| {
            let mut fields: Vec<&str> = line.split(',').collect();
            fields.pop();
            fields.join(",")
        })
        .collect()
}

#[test]
fn a_resumed_run_matches_the_uninterrupted_one_through_files() {
    let data = tempfile::tempdir().unwrap();
    let out_full = tempfile::tempdir().unwrap();
    let out_split = tempfile::tempdir().unwrap();
    write_dataset(data.path(), &tiny_cfg(0).data, false).unwrap();

    run_train(data.path(), out_full.path(), None, &tiny_cfg(6)).unwrap();

    run_train(data.path(), out_split.path(), None, &tiny_cfg(3)).unwrap();
    let midpoint = out_split.path().join("ckpt_000003.zip");
    assert!(midpoint.exists());
    run_train(data.path(), out_split.path(), Some(&midpoint), &tiny_cfg(6)).unwrap();

    for name in ["ckpt_000006.zip", "best.zip"] {
        let full = std::fs::read(out_full.path().join(name)).unwrap();
        let split = std::fs::read(out_split.path().join(name)).unwrap();
        assert_eq!(full, split, "{name} differs after resume");
    }
    assert_eq!(
        log_without_wall(out_full.path()),
        log_without_wall(out_split.path())
    );
}

#[test]
fn a_completed_run_refuses_to_continue_past_its_step_budget() {
    let data = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    write_dataset(data.path(), &tiny_cfg(0).data, false).unwrap();
    run_train(data.path(), out.path(), None, &tiny_cfg(3)).unwrap();

    // Resuming with the same budget is a no-op: no new rows, no new files.
    let before = log_without_wall(out.path());
    run_train(
        data.path(),
        out.path(),
        Some(&out.path().join("ckpt_000003.zip")),
        &tiny_cfg(3),
    )
    .unwrap();
    assert_eq!(log_without_wall(out.path()), before);
}
