//! Experiment configuration, the training loop and held-out evaluation.

mod gradcheck;
mod optim;

pub use crate::metrics::{
    auc as evaluate_auc, logloss as evaluate_logloss, stratified_report, MetricsReport,
};
pub use gradcheck::{gradient_check, GradCheckReport, GroupCheck};
pub use optim::{cosine_lr, Adam};

use crate::data::{SplitSamples, SyntheticWorldConfig, TrainingSample, TruncationConfig};
use crate::error::{Error, Result};
use crate::model::{ctr_loss, Ablation, CaenModel, ModelConfig, Vocab};
use crate::nn::Graph;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::time::Instant;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub min_lr: f64,
    pub epochs: usize,
    pub seed: u64,
    pub ablation: Ablation,
    pub eval_batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 1024,
            lr: 1e-4,
            min_lr: 5e-5,
            epochs: 2,
            seed: 17,
            ablation: Ablation::Full,
            eval_batch_size: 2048,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.eval_batch_size == 0 {
            return Err(Error::Config("batch sizes must be at least 1".into()));
        }
        // lr = 0 is allowed to freeze a run; otherwise 0 < min_lr <= lr.
        if !(self.lr >= 0.0 && self.min_lr >= 0.0 && self.min_lr <= self.lr && self.lr.is_finite())
        {
            return Err(Error::Config(
                "learning rates need 0 <= min_lr <= lr".into(),
            ));
        }
        if self.lr > 0.0 && self.min_lr == 0.0 {
            return Err(Error::Config("min_lr must be positive".into()));
        }
        Ok(())
    }
}

/// Everything one run needs; the TOML file has one table per field.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub world: SyntheticWorldConfig,
    pub truncation: TruncationConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.truncation.validate()?;
        self.model.validate()?;
        self.train.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub step: u64,
    pub lr: f64,
    pub train_loss: f64,
    pub test: MetricsReport,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: CaenModel,
    pub steps: u64,
    /// Held-out metrics of the untrained model.
    pub initial: MetricsReport,
    pub history: Vec<EpochRecord>,
}

impl TrainOutcome {
    pub fn final_report(&self) -> &MetricsReport {
        self.history.last().map_or(&self.initial, |r| &r.test)
    }
}

/// Scores `samples` and reports metrics stratified by attribute-state count.
pub fn evaluate(
    model: &CaenModel,
    samples: &[TrainingSample],
    batch_size: usize,
) -> Result<MetricsReport> {
    let start = Instant::now();
    let scores = model.predict(samples, batch_size)?;
    let labels: Vec<u8> = samples.iter().map(|s| s.label).collect();
    let states: Vec<usize> = samples.iter().map(|s| s.total_states).collect();
    let mut report = stratified_report(&scores, &labels, &states)?;
    report.runtime_secs = start.elapsed().as_secs_f64();
    Ok(report)
}

/// One optimizer step on `batch`; returns the batch loss.
pub fn train_step(
    model: &mut CaenModel,
    adam: &mut Adam,
    batch: &[&TrainingSample],
    lr: f64,
) -> Result<f64> {
    let labels: Vec<u8> = batch.iter().map(|s| s.label).collect();
    let mut g = Graph::new(&model.params, true);
    let out = model.forward(&mut g, batch)?;
    let loss = ctr_loss(&mut g, out.probs, &labels)?;
    let value = g.value(loss).item()?;
    if !value.is_finite() {
        return Err(Error::Numeric(format!("loss is {value}")));
    }
    let grads = g.param_grads(loss)?;
    adam.step(&mut model.params, &grads, lr)?;
    Ok(value)
}

/// Trains from a fresh initialization. `on_epoch` sees each epoch's record
/// as soon as it is available.
pub fn train(
    cfg: &ExperimentConfig,
    data: &SplitSamples,
    vocab: Vocab,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let tc = &cfg.train;
    let mut model = CaenModel::new(cfg.model.clone(), vocab, tc.ablation, tc.seed)?;
    let mut adam = Adam::new(&model.params);
    let initial = evaluate(&model, &data.test, tc.eval_batch_size)?;

    let n = data.train.len();
    let per_epoch = n.div_ceil(tc.batch_size) as u64;
    let total = per_epoch * tc.epochs as u64;
    let mut order: Vec<usize> = (0..n).collect();
    let mut step = 0u64;
    let mut history = Vec::with_capacity(tc.epochs);
    for epoch in 0..tc.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
        rng.set_stream(1 + epoch as u64);
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut lr = tc.lr;
        for chunk in order.chunks(tc.batch_size) {
            let batch: Vec<&TrainingSample> = chunk.iter().map(|i| &data.train[*i]).collect();
            lr = cosine_lr(step, total, tc.lr, tc.min_lr);
            let loss = train_step(&mut model, &mut adam, &batch, lr).map_err(|e| match e {
                Error::Numeric(m) => Error::Numeric(format!("epoch {epoch} step {step}: {m}")),
                Error::Tensor(t) => Error::Numeric(format!("epoch {epoch} step {step}: {t}")),
                other => other,
            })?;
            loss_sum += loss * batch.len() as f64;
            step += 1;
        }
        let record = EpochRecord {
            epoch,
            step,
            lr,
            train_loss: loss_sum / n as f64,
            test: evaluate(&model, &data.test, tc.eval_batch_size)?,
        };
        on_epoch(&record);
        history.push(record);
    }
    Ok(TrainOutcome {
        model,
        steps: step,
        initial,
        history,
    })
}
