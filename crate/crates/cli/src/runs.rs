//! Pretraining, probing and ablation runs over files on disk.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use codial_core::evaluation::{extract_features, linear_probe, ProbeConfig, ProbeReport};
use codial_core::models::Codial;
use codial_core::training::{EpochMetrics, TrainConfig, Trainer};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::dataset::{load_dataset, Dataset};
use crate::error::{io_err, CliError, Result};

pub const CHECKPOINT_FILE: &str = "checkpoint.cdl1";
pub const METRICS_FILE: &str = "metrics.jsonl";

/// Parses a JSON file, rejecting keys the target type does not define.
pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| CliError::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| CliError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

/// Appends one JSON object per line.
pub struct MetricsWriter {
    path: PathBuf,
    file: File,
}

impl MetricsWriter {
    /// Opens `path`, keeping only lines for epochs before `keep_before`.
    pub fn open(path: &Path, keep_before: usize) -> Result<Self> {
        let mut kept = Vec::new();
        if keep_before > 0 {
            let f = File::open(path).map_err(io_err(path))?;
            for line in BufReader::new(f).lines() {
                let line = line.map_err(io_err(path))?;
                let m: EpochMetrics = serde_json::from_str(&line).map_err(|source| CliError::Json {
                    path: path.to_path_buf(),
                    source,
                })?;
                if m.epoch < keep_before {
                    kept.push(line);
                }
            }
        }
        let mut file = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(path)
            .map_err(io_err(path))?;
        for line in kept {
            writeln!(file, "{line}").map_err(io_err(path))?;
        }
        Ok(Self {
            path: path.to_path_buf(),
            file,
        })
    }

    pub fn append(&mut self, m: &EpochMetrics) -> Result<()> {
        let line = serde_json::to_string(m).map_err(|source| CliError::Json {
            path: self.path.clone(),
            source,
        })?;
        writeln!(self.file, "{line}").map_err(io_err(&self.path))?;
        self.file.flush().map_err(io_err(&self.path))
    }
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub checkpoint: PathBuf,
    pub metrics_path: PathBuf,
    pub metrics: Vec<EpochMetrics>,
    pub trainer: Trainer,
}

/// Trains on in-memory splits, writing metrics and a checkpoint after
/// every epoch into `cfg.output_dir`. With `resume`, continues from the
/// checkpoint already in that directory.
pub fn pretrain_on(cfg: &TrainConfig, train: &Dataset, held_out: &Dataset, resume: bool) -> Result<PretrainOutcome> {
    cfg.validate()?;
    let out = Path::new(&cfg.output_dir);
    fs::create_dir_all(out).map_err(io_err(out))?;
    let ckpt_path = out.join(CHECKPOINT_FILE);
    let metrics_path = out.join(METRICS_FILE);
    let mut trainer = if resume {
        load_checkpoint(&ckpt_path)?.into_trainer(cfg.clone())?
    } else {
        Trainer::new(cfg.clone())?
    };
    let mut writer = MetricsWriter::open(&metrics_path, trainer.epoch())?;
    let mut metrics = Vec::new();
    while !trainer.is_done() {
        let m = trainer.run_epoch(&train.images, &held_out.images)?;
        writer.append(&m)?;
        save_checkpoint(&Checkpoint::from_trainer(&trainer), &ckpt_path)?;
        metrics.push(m);
    }
    if !ckpt_path.exists() {
        save_checkpoint(&Checkpoint::from_trainer(&trainer), &ckpt_path)?;
    }
    Ok(PretrainOutcome {
        checkpoint: ckpt_path,
        metrics_path,
        metrics,
        trainer,
    })
}

/// Loads the configured datasets and runs [`pretrain_on`].
pub fn pretrain(cfg: &TrainConfig, resume: bool) -> Result<PretrainOutcome> {
    cfg.validate()?;
    let train = load_dataset(Path::new(&cfg.dataset))?;
    let test = load_dataset(Path::new(&cfg.test_dataset))?;
    pretrain_on(cfg, &train, &test, resume)
}

/// Probes frozen features of `model` on the given splits.
pub fn probe_model(model: &Codial<f32>, train: &Dataset, test: &Dataset, cfg: &ProbeConfig) -> Result<ProbeReport> {
    let a = extract_features(model, &train.images, cfg.stage, cfg.pooled_dim)?;
    let b = extract_features(model, &test.images, cfg.stage, cfg.pooled_dim)?;
    Ok(linear_probe(&a, &train.labels, &b, &test.labels, cfg)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub lambda_cls: f64,
    pub lambda_mi: f64,
    pub pair_subset_k: usize,
    /// Held-out probe accuracy per seed.
    pub accuracies: Vec<f64>,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub lambda_rows: Vec<AblationRow>,
    pub pair_rows: Vec<AblationRow>,
    /// Probe accuracy of the untrained encoder per seed.
    pub random_init: Vec<f64>,
    pub random_init_mean: f64,
}

pub const LAMBDA_GRID: [(f64, f64); 3] = [(1.0, 0.0), (0.0, 1.0), (1.0, 1.0)];
pub const PAIR_GRID: [usize; 4] = [1, 3, 6, 10];

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// Pretrains and probes every λ setting and pair count for each seed,
/// reusing runs whose settings coincide. Runs live under `out`.
pub fn ablate(
    base: &TrainConfig,
    train: &Dataset,
    test: &Dataset,
    probe: &ProbeConfig,
    seeds: &[u64],
    out: &Path,
    mut progress: impl FnMut(&str),
) -> Result<AblationReport> {
    let mut cache: Vec<((u64, u64, usize, u64), f64)> = Vec::new();
    let mut run = |lc: f64, lm: f64, k: usize, seed: u64| -> Result<f64> {
        let key = (lc.to_bits(), lm.to_bits(), k, seed);
        if let Some((_, acc)) = cache.iter().find(|(k2, _)| *k2 == key) {
            return Ok(*acc);
        }
        let mut cfg = base.clone();
        cfg.weights.lambda_cls = lc;
        cfg.weights.lambda_mi = lm;
        cfg.pair_subset_k = k;
        cfg.seed = seed;
        cfg.output_dir = out
            .join(format!("lc{lc}_lm{lm}_k{k}_seed{seed}"))
            .to_string_lossy()
            .into_owned();
        let outcome = pretrain_on(&cfg, train, test, false)?;
        let report = probe_model(outcome.trainer.model(), train, test, &ProbeConfig { seed, ..*probe })?;
        progress(&format!(
            "lambda=({lc},{lm}) k={k} seed={seed}: probe accuracy {:.4}",
            report.test_acc
        ));
        cache.push((key, report.test_acc));
        Ok(report.test_acc)
    };
    let mut row = |lc: f64, lm: f64, k: usize| -> Result<AblationRow> {
        let accuracies = seeds.iter().map(|&s| run(lc, lm, k, s)).collect::<Result<Vec<_>>>()?;
        Ok(AblationRow {
            lambda_cls: lc,
            lambda_mi: lm,
            pair_subset_k: k,
            mean: mean(&accuracies),
            accuracies,
        })
    };
    let lambda_rows = LAMBDA_GRID
        .iter()
        .map(|&(lc, lm)| row(lc, lm, base.pair_subset_k))
        .collect::<Result<Vec<_>>>()?;
    let pair_rows = PAIR_GRID.iter().map(|&k| row(1.0, 1.0, k)).collect::<Result<Vec<_>>>()?;
    let random_init = seeds
        .iter()
        .map(|&seed| {
            let model = Codial::new(base.model.clone(), seed)?;
            Ok(probe_model(&model, train, test, &ProbeConfig { seed, ..*probe })?.test_acc)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AblationReport {
        lambda_rows,
        pair_rows,
        random_init_mean: mean(&random_init),
        random_init,
    })
}

impl AblationReport {
    /// Plain-text comparison table: three λ rows, then four pair-count rows.
    pub fn table(&self) -> String {
        let mut s = String::from("setting              lambda_cls  lambda_mi  k   mean_acc  per_seed\n");
        let line = |s: &mut String, tag: &str, r: &AblationRow| {
            let per: Vec<String> = r.accuracies.iter().map(|a| format!("{a:.4}")).collect();
            s.push_str(&format!(
                "{tag:<20} {:<11} {:<10} {:<3} {:<9.4} {}\n",
                r.lambda_cls,
                r.lambda_mi,
                r.pair_subset_k,
                r.mean,
                per.join(",")
            ));
        };
        for r in &self.lambda_rows {
            line(&mut s, "lambda", r);
        }
        for r in &self.pair_rows {
            line(&mut s, "pairs", r);
        }
        s.push_str(&format!("random-init encoder mean accuracy {:.4}\n", self.random_init_mean));
        s
    }
}
