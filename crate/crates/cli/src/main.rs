use caen_core::data::{
    bayes_auc_oracle, write_samples, Dataset, Horizon, SyntheticWorld, SECONDS_PER_DAY,
};
use caen_core::model::{load_checkpoint, save_checkpoint, Ablation, Vocab};
use caen_core::tensor::DEFAULT_FD_STEP;
use caen_core::train::{evaluate, gradient_check, train, ExperimentConfig};
use caen_core::{Error, Result};
use clap::{Parser, Subcommand};
use serde_json::{json, Value};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "caen",
    version,
    about = "Attribute-change-aware CTR prediction"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic world into a data directory.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also export assembled samples to samples.jsonl.
        #[arg(long)]
        samples: bool,
    },
    /// Train the variant named in the config and write a checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Metrics file; defaults to <out>/metrics.json.
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Score the held-out split with a checkpoint.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Add per-state-count buckets to the report.
        #[arg(long)]
        stratify: bool,
        /// Metrics file; defaults to <ckpt>/eval.json.
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Compare backward gradients with finite differences on a micro-batch.
    GradCheck {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 4)]
        batch: usize,
        /// Coordinates checked per parameter tensor.
        #[arg(long, default_value_t = 48)]
        coords: usize,
    },
    /// Train one ablation variant, overriding the config's choice.
    Ablate {
        #[arg(long)]
        variant: Ablation,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
}

fn emit(report: &Value, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(report).expect("json");
    println!("{text}");
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn gen_data(config: &Path, out: &Path, samples: bool) -> Result<()> {
    let cfg = ExperimentConfig::load(config)?;
    let world = SyntheticWorld::generate(&cfg.world)?;
    let end = cfg.world.end();
    let mean_states = world.mean_states_per_item(Horizon {
        start: end - cfg.world.horizon_days * SECONDS_PER_DAY,
        end,
    });
    let test: Vec<_> = world
        .exposures
        .iter()
        .filter(|e| e.timestamp >= cfg.world.test_start())
        .cloned()
        .collect();
    let bayes = bayes_auc_oracle(&test)?;
    let dataset: Dataset = world.into();
    dataset.write(out)?;
    if samples {
        let split = dataset.samples(&cfg.truncation)?;
        let all: Vec<_> = split.train.into_iter().chain(split.test).collect();
        write_samples(&out.join("samples.jsonl"), &all)?;
    }
    let report = json!({
        "users": dataset.users.len(),
        "items": dataset.items.len(),
        "interactions": dataset.interactions.len(),
        "changes": dataset.changes.len(),
        "exposures": dataset.exposures.len(),
        "positives": dataset.exposures.iter().filter(|e| e.clicked).count(),
        "mean_states_per_item": mean_states,
        "bayes_test_auc": bayes,
    });
    emit(&report, &out.join("summary.json"))
}

fn run_train(
    cfg: ExperimentConfig,
    data: &Path,
    out: &Path,
    metrics: Option<PathBuf>,
) -> Result<()> {
    let dataset = Dataset::read(data)?;
    let split = dataset.samples(&cfg.truncation)?;
    let vocab = Vocab::from_catalog(&dataset.users, &dataset.items);
    cfg.validate()?;
    let outcome = train(&cfg, &split, vocab, |r| {
        eprintln!(
            "epoch {} step {} train_loss {:.5} test_auc {:.5} test_logloss {:.5}",
            r.epoch, r.step, r.train_loss, r.test.auc, r.test.logloss
        )
    })?;
    let snapshot = serde_json::to_value(&cfg).expect("config json");
    let manifest = save_checkpoint(out, &outcome.model, outcome.steps, snapshot)?;
    let report = json!({
        "variant": cfg.train.ablation,
        "steps": outcome.steps,
        "checksum": manifest.checksum,
        "train_samples": split.train.len(),
        "test_samples": split.test.len(),
        "initial": outcome.initial,
        "final": outcome.final_report(),
        "history": outcome.history,
    });
    emit(
        &report,
        &metrics.unwrap_or_else(|| out.join("metrics.json")),
    )
}

fn eval(ckpt: &Path, data: &Path, stratify: bool, metrics: Option<PathBuf>) -> Result<()> {
    let (model, manifest) = load_checkpoint(ckpt)?;
    let cfg: ExperimentConfig = serde_json::from_value(manifest.config.clone()).unwrap_or_default();
    let dataset = Dataset::read(data)?;
    let split = dataset.samples(&cfg.truncation)?;
    let mut report = evaluate(&model, &split.test, cfg.train.eval_batch_size)?;
    if !stratify {
        report.buckets.clear();
    }
    let report = json!({
        "variant": manifest.ablation,
        "checksum": manifest.checksum,
        "report": report,
    });
    emit(&report, &metrics.unwrap_or_else(|| ckpt.join("eval.json")))
}

fn grad_check(config: &Path, batch: usize, coords: usize) -> Result<()> {
    let cfg = ExperimentConfig::load(config)?;
    let dataset: Dataset = SyntheticWorld::generate(&cfg.world)?.into();
    let split = dataset.samples(&cfg.truncation)?;
    let vocab = Vocab::from_catalog(&dataset.users, &dataset.items);
    let model = caen_core::model::CaenModel::new(
        cfg.model.clone(),
        vocab,
        cfg.train.ablation,
        cfg.train.seed,
    )?;
    // Prefer samples that exercise every branch.
    let mut picked: Vec<_> = split
        .train
        .iter()
        .filter(|s| {
            s.item.num_real_states() > 1
                && !s.behaviors.is_empty()
                && !s.item.change_timestamps.is_empty()
        })
        .take(batch)
        .collect();
    if picked.len() < batch {
        picked.extend(split.train.iter().take(batch - picked.len()));
    }
    let report = gradient_check(
        &model,
        &picked,
        coords,
        DEFAULT_FD_STEP,
        1e-4,
        cfg.train.seed,
    )?;
    let passed = report.passed();
    println!(
        "{}",
        serde_json::to_string_pretty(&json!({"passed": passed, "report": report})).expect("json")
    );
    if passed {
        Ok(())
    } else {
        let w = report.worst().expect("groups");
        Err(Error::Numeric(format!(
            "{} relative error {:.3e}",
            w.name, w.max_rel_error
        )))
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData {
            config,
            out,
            samples,
        } => gen_data(&config, &out, samples),
        Command::Train {
            config,
            data,
            out,
            metrics,
        } => run_train(ExperimentConfig::load(&config)?, &data, &out, metrics),
        Command::Eval {
            ckpt,
            data,
            stratify,
            metrics,
        } => eval(&ckpt, &data, stratify, metrics),
        Command::GradCheck {
            config,
            batch,
            coords,
        } => grad_check(&config, batch, coords),
        Command::Ablate {
            variant,
            config,
            data,
            out,
            metrics,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            cfg.train.ablation = variant;
            run_train(cfg, &data, &out, metrics)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
