use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use lunarhop::estimator::{encode_checkpoint, DualHorizonEstimator, EstimatorData, Normalizer, Trainer};
use lunarhop::harness::{split_dataset, verify_manifest, DatasetManifest, LogRecord};
use lunarhop_cli::{format_mse, load_checkpoint, load_config};

/// Train and evaluate the dual-horizon state estimator.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train on a dataset directory; the test split is held out and scored.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Shared TOML config; `[estimator]` and `[train]` are used.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides `train.steps`.
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long, default_value_t = 200)]
        log_every: u64,
    },
    /// Print the four MSEs on a dataset.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Shared TOML config; `[train]` gives the split seed and test fraction.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Score only the held-out split that `train` used.
        #[arg(long)]
        test_split: bool,
    },
}

fn load_dataset(dir: &Path) -> Result<(DatasetManifest, Vec<Vec<LogRecord>>)> {
    let manifest = DatasetManifest::load(dir).with_context(|| format!("reading manifest in {}", dir.display()))?;
    let bad = verify_manifest(&manifest, dir)?;
    anyhow::ensure!(bad.is_empty(), "checksum mismatch: {}", bad.join(", "));
    let logs = manifest.read_episodes(dir)?;
    Ok((manifest, logs))
}

fn pick(logs: &[Vec<LogRecord>], idx: &[usize]) -> Vec<Vec<LogRecord>> {
    idx.iter().map(|&i| logs[i].clone()).collect()
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Train {
            data,
            config,
            out,
            steps,
            log_every,
        } => {
            let cfg = load_config(config.as_deref())?;
            let mut tc = cfg.train.clone();
            if let Some(s) = steps {
                tc.steps = s;
            }
            let (manifest, logs) = load_dataset(&data)?;
            let split = split_dataset(&manifest, tc.split_seed, tc.test_fraction);
            let train = EstimatorData::from_logs(&pick(&logs, &split.train), tc.max_delta());
            let test = EstimatorData::from_logs(&pick(&logs, &split.test), tc.max_delta());
            anyhow::ensure!(!train.is_empty(), "training split is empty");
            println!("{} train anchors from {} episodes, {} test anchors", train.len(), split.train.len(), test.len());
            let model = DualHorizonEstimator::new(cfg.estimator.clone(), Normalizer::fit(&train))?;
            let mut trainer = Trainer::new(model, tc.clone())?;
            for step in 1..=tc.steps {
                let l = trainer.step(&train)?;
                if log_every > 0 && (step % log_every == 0 || step == tc.steps) {
                    println!("step {step:>6}  total {:.5}  reg {:.5}  short {:.4}  long {:.4}", l.total, l.reg, l.short, l.long);
                }
            }
            fs::write(&out, encode_checkpoint(&trainer.model)).with_context(|| format!("writing {}", out.display()))?;
            if !test.is_empty() {
                println!("test mse  {}", format_mse(&trainer.model.evaluate(&test)?));
                println!("zero mse  {}", format_mse(&DualHorizonEstimator::zero_baseline(&test)));
            }
            println!("checkpoint -> {}", out.display());
        }
        Cmd::Eval {
            ckpt,
            data,
            config,
            test_split,
        } => {
            let model = load_checkpoint(&ckpt)?;
            let tc = load_config(config.as_deref())?.train;
            let (manifest, logs) = load_dataset(&data)?;
            let logs = if test_split { pick(&logs, &split_dataset(&manifest, tc.split_seed, tc.test_fraction).test) } else { logs };
            let set = EstimatorData::from_logs(&logs, tc.max_delta());
            anyhow::ensure!(!set.is_empty(), "no samples to evaluate");
            let mse = model.evaluate(&set)?;
            println!("mode {:?}, step {}, {} samples", model.config.mode, model.step, set.len());
            println!("{}", format_mse(&mse));
        }
    }
    Ok(())
}
