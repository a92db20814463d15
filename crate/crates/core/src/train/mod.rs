//! Training with early stopping, k-fold ensembling and GAP-style scoring.

mod dataset;
mod io;
mod kfold;
mod metrics;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Model, ModelConfig, ModelError, ModelKind};
use crate::tensor::{cross_entropy, rng, Adam, AdamConfig, Graph, Mode, ParamStore, TensorError};

pub use dataset::{prepare_examples, Example, PrepareReport};
pub use io::{read_history_csv, read_predictions_csv, write_history_csv, write_predictions_csv};
pub use kfold::{assign_folds, kfold_ensemble, FoldRun, KfoldOutput};
pub use metrics::{
    confusion_compare, ensemble_mean, format_logloss, gap_f1, logloss, prob_histograms, Agreement,
    ConfusionComparison, Counts, Gold, Histograms, PredictionRecord, ScoreReport,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("configuration: {0}")]
    Config(String),
    #[error("prediction coverage: {0}")]
    Coverage(String),
    #[error("non-finite loss at step {step} (batch {batch:?}, gradient norm {grad_norm})")]
    NonFinite {
        step: usize,
        batch: Vec<String>,
        grad_norm: f64,
    },
    #[error("train and validation share {0} sample id(s)")]
    Leakage(usize),
    #[error("{path}: {msg}")]
    File { path: String, msg: String },
}

pub type Result<T, E = TrainError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Gradient steps between validation passes.
    pub eval_every: usize,
    /// Validation passes without improvement before stopping.
    pub patience: usize,
    pub max_steps: usize,
    pub seed: u64,
    pub folds: usize,
    /// Parallel (fold, seed) jobs.
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            batch_size: 16,
            adam: AdamConfig { lr: 3e-4, ..AdamConfig::default() },
            eval_every: 80,
            patience: 5,
            max_steps: 10_000,
            seed: 42,
            folds: 5,
            workers: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.eval_every == 0 {
            return Err(TrainError::Config("batch size and eval-every must be at least 1".into()));
        }
        if self.folds < 2 {
            return Err(TrainError::Config(format!("{} folds; cross-validation needs at least 2", self.folds)));
        }
        if !(0.0..1.0).contains(&self.model.encoder.dropout) || !(0.0..1.0).contains(&self.model.ep.dropout) {
            return Err(TrainError::Config("dropout must be in [0, 1)".into()));
        }
        Ok(())
    }

    /// Defaults for a model kind: batch 16 for the baseline, 8 for evidence
    /// pooling.
    pub fn for_kind(kind: ModelKind) -> Self {
        let mut c = Self::default();
        c.model.kind = kind;
        if kind == ModelKind::Grep {
            c.batch_size = 8;
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub step: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_f1: f64,
}

/// Tracks the best validation loss and counts non-improving evaluations.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: f64,
    pub best_step: usize,
    bad: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self { patience, best: f64::INFINITY, best_step: 0, bad: 0 }
    }

    /// Record a validation loss. Returns whether it is a new best.
    pub fn observe(&mut self, step: usize, loss: f64) -> bool {
        if loss < self.best {
            self.best = loss;
            self.best_step = step;
            self.bad = 0;
            true
        } else {
            self.bad += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.bad >= self.patience.max(1)
    }
}

pub struct TrainOutcome {
    /// Parameters of the best validation checkpoint.
    pub model: Model,
    pub history: Vec<HistoryRow>,
    pub best_step: usize,
    pub best_val_loss: f64,
    pub steps: usize,
    pub stopped_early: bool,
}

/// Evaluation-mode predictions for every example.
pub fn predict(model: &Model, examples: &[Example]) -> Result<Vec<PredictionRecord>> {
    examples
        .iter()
        .map(|e| Ok(PredictionRecord::new(e.tok.id.clone(), model.predict(&e.input())?)))
        .collect()
}

pub fn golds(examples: &[Example]) -> Vec<Gold> {
    examples.iter().map(|e| Gold::from(&e.tok)).collect()
}

fn check_disjoint(train: &[Example], val: &[Example]) -> Result<()> {
    let ids: std::collections::HashSet<&str> = train.iter().map(|e| e.tok.id.as_str()).collect();
    let shared = val.iter().filter(|e| ids.contains(e.tok.id.as_str())).count();
    if shared > 0 {
        return Err(TrainError::Leakage(shared));
    }
    Ok(())
}

/// Mini-batch Adam with periodic validation; keeps the parameters with the
/// lowest validation log loss and stops after `patience` evaluations
/// without improvement.
pub fn train(config: &TrainConfig, train: &[Example], val: &[Example]) -> Result<TrainOutcome> {
    if config.batch_size == 0 || config.eval_every == 0 {
        return Err(TrainError::Config("batch size and eval-every must be at least 1".into()));
    }
    if train.is_empty() || val.is_empty() {
        return Err(TrainError::Config("empty training or validation set".into()));
    }
    check_disjoint(train, val)?;
    let mut model = Model::new(config.model.clone(), config.seed)?;
    let mut adam = Adam::new(config.adam);
    let mut shuffle = rng::stream(config.seed, rng::Stream::Shuffle);
    let val_gold = golds(val);
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best: ParamStore = model.store.clone();
    let mut history = Vec::new();
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let (mut loss_sum, mut loss_n) = (0.0, 0usize);
    let mut step = 0;
    let mut stopped_early = false;
    let mut last_eval = 0;

    let mut evaluate = |model: &Model, step: usize, loss_sum: f64, loss_n: usize, history: &mut Vec<HistoryRow>| -> Result<(bool, bool)> {
        let preds = predict(model, val)?;
        let report = gap_f1(&preds, &val_gold);
        let val_loss = logloss(&preds, &val_gold)?;
        history.push(HistoryRow {
            step,
            train_loss: loss_sum / loss_n.max(1) as f64,
            val_loss,
            val_f1: report.f1_overall,
        });
        log::info!("step {step}: train {:.4} val {val_loss:.4} f1 {:.3}", loss_sum / loss_n.max(1) as f64, report.f1_overall);
        let improved = stopper.observe(step, val_loss);
        Ok((improved, stopper.should_stop()))
    };

    while step < config.max_steps {
        if cursor >= order.len() {
            order = (0..train.len()).collect();
            order.shuffle(&mut shuffle);
            cursor = 0;
        }
        let end = (cursor + config.batch_size).min(order.len());
        let batch: Vec<&Example> = order[cursor..end].iter().map(|&i| &train[i]).collect();
        cursor = end;

        let inputs: Vec<_> = batch.iter().map(|e| e.input()).collect();
        let gold: Vec<usize> = batch.iter().map(|e| e.tok.label.index()).collect();
        let dropout = rng::keyed(config.seed, rng::Stream::Dropout, &step.to_string());
        let (loss, grads) = {
            let mut g = Graph::new(&model.store, Mode::Train(dropout));
            let (probs, _) = model.forward_batch(&mut g, &inputs)?;
            let loss = cross_entropy(&mut g, probs, &gold)?;
            let value = g.value(loss).item()?;
            (value, g.backward(loss)?)
        };
        step += 1;
        let grad_norm = grads.global_norm();
        if !loss.is_finite() || !grad_norm.is_finite() {
            return Err(TrainError::NonFinite {
                step,
                batch: batch.iter().map(|e| e.tok.id.clone()).collect(),
                grad_norm,
            });
        }
        model.store.set_grads(&grads);
        adam.step(&mut model.store)?;
        loss_sum += loss;
        loss_n += 1;

        if step % config.eval_every == 0 {
            let (improved, stop) = evaluate(&model, step, loss_sum, loss_n, &mut history)?;
            last_eval = step;
            (loss_sum, loss_n) = (0.0, 0);
            if improved {
                best = model.store.clone();
            }
            if stop {
                stopped_early = true;
                break;
            }
        }
    }
    if last_eval != step {
        let (improved, _) = evaluate(&model, step, loss_sum, loss_n, &mut history)?;
        if improved {
            best = model.store.clone();
        }
    }
    model.store = best;
    model.store.clear_grads();
    Ok(TrainOutcome {
        model,
        best_step: stopper.best_step,
        best_val_loss: stopper.best,
        history,
        steps: step,
        stopped_early,
    })
}
