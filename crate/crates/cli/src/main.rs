use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use codial_cli::checkpoint::load_checkpoint;
use codial_cli::dataset::load_dataset;
use codial_cli::runs::{ablate, load_json, pretrain, probe_model, write_json};
use codial_cli::synthetic::{gen_synthetic, SyntheticShapesSpec};
use codial_cli::{CliError, Result};
use codial_core::evaluation::{extract_features, knn_retrieve, ProbeConfig};
use codial_core::gaussian_mi::{run_gaussian_mi, GaussianMiConfig};
use codial_core::training::TrainConfig;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "codial", version, about = "Self-supervised pretraining by transformation prediction and view alignment")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic shapes dataset (train and test files).
    GenData {
        #[arg(long, default_value = "data")]
        out: PathBuf,
        /// JSON dataset spec; flags below override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        size: Option<usize>,
        #[arg(long)]
        per_class: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Pretrain an encoder from a JSON training config.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue from the checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Linear probe on frozen features of one encoder stage.
    Probe {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        train_data: PathBuf,
        #[arg(long)]
        test_data: PathBuf,
        #[arg(long)]
        stage: Option<usize>,
        #[arg(long)]
        pooled_dim: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        l2: Option<f64>,
        #[arg(long, default_value = "probe")]
        out: PathBuf,
    },
    /// Cosine nearest neighbours of one dataset image among the others.
    Retrieve {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        query: usize,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long)]
        stage: Option<usize>,
        #[arg(long, default_value_t = 1024)]
        pooled_dim: usize,
        #[arg(long, default_value = "retrieve")]
        out: PathBuf,
    },
    /// Loss-weight and pair-count sweeps, each pretrained and probed.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "ablate")]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        /// JSON probe config.
        #[arg(long)]
        probe_config: Option<PathBuf>,
    },
    /// Estimate the MI of correlated Gaussians and compare with the truth.
    MiOracle {
        #[arg(long)]
        rho: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, default_value_t = 1)]
        dim: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn show<T: Serialize>(label: &str, value: &T) {
    println!(
        "{label}: {}",
        serde_json::to_string_pretty(value).expect("configs serialize")
    );
}

fn mkdir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn last_stage(ckpt: &codial_cli::checkpoint::Checkpoint) -> usize {
    ckpt.config.model.encoder.stages.len() - 1
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData {
            out,
            config,
            size,
            per_class,
            seed,
        } => {
            let mut spec: SyntheticShapesSpec = match config {
                Some(p) => load_json(&p)?,
                None => SyntheticShapesSpec::default(),
            };
            spec.image_size = size.unwrap_or(spec.image_size);
            spec.per_class = per_class.unwrap_or(spec.per_class);
            spec.seed = seed.unwrap_or(spec.seed);
            show("dataset spec", &spec);
            let (train, test) = gen_synthetic(&spec, &out)?;
            println!("wrote {} and {}", train.display(), test.display());
        }
        Command::Pretrain { config, out, resume } => {
            let mut cfg: TrainConfig = load_json(&config)?;
            if let Some(o) = out {
                cfg.output_dir = o.to_string_lossy().into_owned();
            }
            show("train config", &cfg);
            cfg.validate()?;
            let outcome = pretrain(&cfg, resume)?;
            for m in &outcome.metrics {
                println!("{}", serde_json::to_string(m).expect("metrics serialize"));
            }
            println!(
                "wrote {} and {}",
                outcome.checkpoint.display(),
                outcome.metrics_path.display()
            );
        }
        Command::Probe {
            checkpoint,
            train_data,
            test_data,
            stage,
            pooled_dim,
            epochs,
            l2,
            out,
        } => {
            let ckpt = load_checkpoint(&checkpoint)?;
            let d = ProbeConfig::default();
            let cfg = ProbeConfig {
                stage: stage.unwrap_or(last_stage(&ckpt)),
                pooled_dim: pooled_dim.unwrap_or(d.pooled_dim),
                epochs: epochs.unwrap_or(d.epochs),
                l2: l2.unwrap_or(d.l2),
                seed: ckpt.config.seed,
                ..d
            };
            show("probe config", &cfg);
            let model = ckpt.model()?;
            let train = load_dataset(&train_data)?;
            let test = load_dataset(&test_data)?;
            let report = probe_model(&model, &train, &test, &cfg)?;
            mkdir(&out)?;
            let path = out.join("probe.json");
            write_json(&path, &report)?;
            show("probe report", &report);
            println!("wrote {}", path.display());
        }
        Command::Retrieve {
            checkpoint,
            data,
            query,
            k,
            stage,
            pooled_dim,
            out,
        } => {
            let ckpt = load_checkpoint(&checkpoint)?;
            let stage = stage.unwrap_or(last_stage(&ckpt));
            #[derive(Serialize)]
            struct Request<'a> {
                checkpoint: &'a Path,
                data: &'a Path,
                query: usize,
                k: usize,
                stage: usize,
                pooled_dim: usize,
            }
            show(
                "retrieve config",
                &Request {
                    checkpoint: &checkpoint,
                    data: &data,
                    query,
                    k,
                    stage,
                    pooled_dim,
                },
            );
            let ds = load_dataset(&data)?;
            if query >= ds.images.len() {
                return Err(CliError::Invalid(format!(
                    "query {query} outside a dataset of {} images",
                    ds.images.len()
                )));
            }
            let feats = extract_features(&ckpt.model()?, &ds.images, stage, pooled_dim)?;
            let hits = knn_retrieve(feats.row(query), &feats, k)?;
            #[derive(Serialize)]
            struct Hit {
                index: usize,
                label: usize,
            }
            let hits: Vec<Hit> = hits
                .into_iter()
                .map(|index| Hit {
                    index,
                    label: ds.labels[index],
                })
                .collect();
            mkdir(&out)?;
            let path = out.join("retrieve.json");
            write_json(&path, &hits)?;
            for h in &hits {
                println!("{} (label {})", h.index, h.label);
            }
            println!("wrote {}", path.display());
        }
        Command::Ablate {
            config,
            out,
            seeds,
            probe_config,
        } => {
            let base: TrainConfig = load_json(&config)?;
            let probe: ProbeConfig = match probe_config {
                Some(p) => load_json(&p)?,
                None => ProbeConfig {
                    stage: base.model.encoder.stages.len() - 1,
                    ..ProbeConfig::default()
                },
            };
            show("train config", &base);
            show("probe config", &probe);
            base.validate()?;
            let train = load_dataset(Path::new(&base.dataset))?;
            let test = load_dataset(Path::new(&base.test_dataset))?;
            let seeds: Vec<u64> = (0..seeds.max(1)).map(|s| base.seed + s).collect();
            mkdir(&out)?;
            let report = ablate(&base, &train, &test, &probe, &seeds, &out, |line| println!("{line}"))?;
            let path = out.join("ablation.json");
            write_json(&path, &report)?;
            print!("{}", report.table());
            println!("wrote {}", path.display());
        }
        Command::MiOracle {
            rho,
            seed,
            steps,
            dim,
            out,
        } => {
            let d = GaussianMiConfig::default();
            let cfg = GaussianMiConfig {
                rho,
                seed,
                dim,
                steps: steps.unwrap_or(d.steps),
                ..d
            };
            show("mi oracle config", &cfg);
            let r = run_gaussian_mi(&cfg)?;
            println!(
                "rho {:.4}: estimate {:.4} nats, analytic -0.5*ln(1-rho^2)*dim = {:.4} nats",
                r.rho, r.estimate, r.true_mi
            );
            if let Some(dir) = out {
                mkdir(&dir)?;
                write_json(&dir.join("mi_oracle.json"), &r)?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
