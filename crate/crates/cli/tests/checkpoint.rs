use std::fs;
use std::path::Path;

use codial_cli::checkpoint::*;
use codial_cli::dataset::Dataset;
use codial_cli::runs::{pretrain_on, CHECKPOINT_FILE, METRICS_FILE};
use codial_cli::synthetic::{generate, SyntheticShapesSpec};
use codial_cli::CliError;
use codial_core::models::{CriticConfig, EncoderConfig, ModelConfig};
use codial_core::training::{TrainConfig, Trainer};
use codial_core::transforms::AuxConfig;

fn tiny_config(out: &Path, epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 4,
        seed: 11,
        model: ModelConfig {
            encoder: EncoderConfig::with_widths(&[4, 6], 8),
            repr_dim: 3,
            critic: CriticConfig { hidden: vec![5, 4] },
        },
        aux: AuxConfig {
            out_size: 8,
            ..AuxConfig::default()
        },
        pair_subset_k: 4,
        output_dir: out.to_string_lossy().into_owned(),
        ..TrainConfig::default()
    }
}

fn data() -> (Dataset, Dataset) {
    let spec = SyntheticShapesSpec {
        image_size: 24,
        per_class: 3,
        ..SyntheticShapesSpec::default()
    };
    generate(&spec).unwrap()
}

#[test]
fn save_load_save_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut t = Trainer::new(tiny_config(dir.path(), 1)).unwrap();
    let (train, test) = data();
    t.run_epoch(&train.images, &test.images).unwrap();
    let ckpt = Checkpoint::from_trainer(&t);
    let path = dir.path().join("a.cdl1");
    save_checkpoint(&ckpt, &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded.to_bytes(), ckpt.to_bytes());
    let restored = loaded.into_trainer(t.config().clone()).unwrap();
    let values = |t: &Trainer| -> Vec<Vec<f32>> {
        t.model().store.iter().map(|(_, p)| p.value.data().to_vec()).collect()
    };
    assert_eq!(values(&restored), values(&t));
    assert_eq!(restored.optimizer(), t.optimizer());
    assert_eq!(restored.epoch(), 1);
}

#[test]
fn truncated_and_corrupt_files_are_format_errors() {
    let dir = tempfile::tempdir().unwrap();
    let t = Trainer::new(tiny_config(dir.path(), 1)).unwrap();
    let bytes = Checkpoint::from_trainer(&t).to_bytes();
    let path = dir.path().join("x.cdl1");
    for cut in [2, 10, bytes.len() / 2, bytes.len() - 1] {
        fs::write(&path, &bytes[..cut]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(CliError::Format { .. })), "cut {cut}");
    }
    let mut bad = bytes.clone();
    bad[0] = b'X';
    fs::write(&path, &bad).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(CliError::Format { .. })));
    let mut long = bytes;
    long.push(0);
    fs::write(&path, &long).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(CliError::Format { .. })));
    let missing = dir.path().join("missing.cdl1");
    assert!(matches!(load_checkpoint(&missing), Err(CliError::Io { .. })));
}

fn run_files(dir: &Path) -> Vec<Vec<u8>> {
    let out = [CHECKPOINT_FILE, METRICS_FILE].map(|f| fs::read(dir.join(f)).unwrap()).to_vec();
    fs::remove_dir_all(dir).unwrap();
    out
}

#[test]
fn resume_from_disk_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let (train, test) = data();
    let out = dir.path().join("run");
    pretrain_on(&tiny_config(&out, 3), &train, &test, false).unwrap();
    let full = run_files(&out);
    pretrain_on(&tiny_config(&out, 1), &train, &test, false).unwrap();
    pretrain_on(&tiny_config(&out, 3), &train, &test, true).unwrap();
    let lines = fs::read_to_string(out.join(METRICS_FILE)).unwrap();
    assert_eq!(lines.lines().count(), 3);
    assert!(full == run_files(&out));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (train, test) = data();
    let out = dir.path().join("run");
    pretrain_on(&tiny_config(&out, 2), &train, &test, false).unwrap();
    let first = run_files(&out);
    pretrain_on(&tiny_config(&out, 2), &train, &test, false).unwrap();
    assert!(first == run_files(&out));
}
