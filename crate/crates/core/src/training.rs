//! Adam, early stopping and the graph-classification training loop.

use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{EggError, Result};
use crate::gnn::{GraphClassifier, ModelConfig};
use crate::graph_data::{GraphSet, Split};
use crate::rng::{streams, RngService};
use crate::tensor::{Matrix, ParamId, ParamStore, Tape};

/// Adam hyperparameters. `weight_decay` is an L2 term added to the
/// gradient before the moment updates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }

    pub fn with_weight_decay(self, weight_decay: f64) -> Self {
        Self { weight_decay, ..self }
    }
}

/// One bias-corrected Adam update of the parameters in `grads`.
///
/// Nothing is modified when any gradient is non-finite or mis-shaped.
pub fn adam_step(store: &mut ParamStore, grads: &[(ParamId, Matrix)], opt: Adam) -> Result<()> {
    for (id, g) in grads {
        let p = store.get(*id);
        if g.shape() != p.value.shape() {
            return Err(EggError::shape("adam_step", p.value.shape(), g.shape()));
        }
        if !g.is_finite() {
            return Err(EggError::Diverged(format!("non-finite gradient for parameter {:?}", p.name)));
        }
    }
    for (id, g) in grads {
        let p = store.get_mut(*id);
        p.adam.step += 1;
        let t = p.adam.step as i32;
        let c1 = 1.0 - opt.beta1.powi(t);
        let c2 = 1.0 - opt.beta2.powi(t);
        let w = p.value.as_mut_slice();
        let m = p.adam.first_moment.as_mut_slice();
        let v = p.adam.second_moment.as_mut_slice();
        for (((w, m), v), &g) in w.iter_mut().zip(m).zip(v).zip(g.as_slice()) {
            let g = g + opt.weight_decay * *w;
            *m = opt.beta1 * *m + (1.0 - opt.beta1) * g;
            *v = opt.beta2 * *v + (1.0 - opt.beta2) * g * g;
            *w -= opt.lr * (*m / c1) / ((*v / c2).sqrt() + opt.eps);
        }
    }
    Ok(())
}

/// Mean softmax cross-entropy of `logits` rows against `labels`.
pub fn cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<f64> {
    let mut tape = Tape::new();
    let x = tape.constant(logits.clone())?;
    let l = tape.softmax_cross_entropy(x, labels)?;
    Ok(tape.scalar(l))
}

/// Outcome of feeding one validation loss to [`EarlyStopping`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Stops after `patience` consecutive epochs without a validation loss
/// below `best − min_delta`.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub min_delta: f64,
    best: f64,
    best_epoch: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            min_delta: 1e-6,
            best: f64::INFINITY,
            best_epoch: 0,
            stale: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> StopDecision {
        if val_loss < self.best - self.min_delta {
            self.best = val_loss;
            self.best_epoch = epoch;
            self.stale = 0;
            return StopDecision::Improved;
        }
        self.stale += 1;
        if self.stale >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

/// Optimisation settings for [`train_classifier`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            weight_decay: 0.0,
            batch_size: 32,
            max_epochs: 200,
            patience: 20,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(EggError::InvalidArgument(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(EggError::InvalidArgument(format!("weight decay {} must be non-negative", self.weight_decay)));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(EggError::InvalidArgument(
                "batch size, epoch cap and patience must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
}

/// History and result of one training run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub stop_epoch: usize,
    pub best_val_loss: f64,
    pub test_loss: f64,
    pub test_acc: f64,
    #[serde(skip)]
    pub wall_time: Duration,
}

/// Mean cross-entropy and accuracy over `indices`, without dropout.
pub fn evaluate(model: &GraphClassifier, store: &ParamStore, gs: &GraphSet, indices: &[usize]) -> Result<(f64, f64)> {
    if indices.is_empty() {
        return Err(EggError::Data("evaluation over an empty split".into()));
    }
    let mut loss = 0.0;
    let mut correct = 0usize;
    for &i in indices {
        let g = &gs.graphs[i];
        let y = g.label().ok_or_else(|| EggError::Data(format!("graph {i} has no label")))?;
        let logits = model.predict(store, g)?;
        loss += cross_entropy(&Matrix::new(1, logits.len(), logits.clone())?, &[y])?;
        if argmax(&logits) == y {
            correct += 1;
        }
    }
    let n = indices.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

pub fn evaluate_accuracy(model: &GraphClassifier, store: &ParamStore, gs: &GraphSet, split: Split) -> Result<f64> {
    Ok(evaluate(model, store, gs, &gs.indices(split))?.1)
}

/// First index of the largest entry.
pub fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) })
        .0
}

/// A trained classifier and its record.
pub struct TrainedClassifier {
    pub model: GraphClassifier,
    pub store: ParamStore,
    pub record: RunRecord,
}

/// Mini-batch Adam with early stopping on validation loss.
///
/// Each batch is one tape holding every graph of the batch; the loss is
/// the batch mean. The parameters of the best validation epoch are
/// restored before the single test evaluation.
pub fn train_classifier(gs: &GraphSet, model_cfg: &ModelConfig, cfg: &TrainConfig) -> Result<TrainedClassifier> {
    cfg.validate()?;
    let train = gs.indices(Split::Train);
    let val = gs.indices(Split::Val);
    let test = gs.indices(Split::Test);
    if train.is_empty() || val.is_empty() || test.is_empty() {
        return Err(EggError::Data(format!(
            "train/val/test splits have {}/{}/{} graphs; all must be non-empty",
            train.len(),
            val.len(),
            test.len()
        )));
    }
    let started = Instant::now();
    let rngs = RngService::new(cfg.seed);
    let mut init = rngs.stream(streams::INIT);
    let mut shuffle = rngs.stream(streams::SHUFFLE);
    let mut drop = rngs.stream(streams::DROPOUT);

    let mut store = ParamStore::new();
    let model = GraphClassifier::new(model_cfg.clone(), gs.feature_dim(), gs.class_count, &mut store, &mut init)?;
    let opt = Adam::new(cfg.learning_rate).with_weight_decay(cfg.weight_decay);
    let labels = gs.labels();

    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = store.snapshot();
    let mut epochs = Vec::new();
    let mut order = train.clone();
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut shuffle);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let mut tape = Tape::new();
            let mut rows = Vec::with_capacity(batch.len());
            for &i in batch {
                rows.push(model.forward(&mut tape, &store, &gs.graphs[i], Some(&mut drop))?);
            }
            let logits = tape.concat_rows(&rows)?;
            let y: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let loss = tape.softmax_cross_entropy(logits, &y)?;
            let value = tape.scalar(loss);
            if !value.is_finite() {
                return Err(EggError::Diverged(format!("training loss {value} at epoch {epoch}")));
            }
            loss_sum += value * batch.len() as f64;
            let out = tape.value(logits);
            correct += (0..batch.len()).filter(|&r| argmax(out.row(r)) == y[r]).count();
            let grads = tape.backward(loss)?;
            adam_step(&mut store, &tape.param_grads(&grads), opt)?;
        }
        let (val_loss, val_acc) = evaluate(&model, &store, gs, &val)?;
        epochs.push(EpochStats {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            val_loss,
            train_acc: correct as f64 / train.len() as f64,
            val_acc,
        });
        match stopper.observe(epoch, val_loss) {
            StopDecision::Improved => best = store.snapshot(),
            StopDecision::Continue => {}
            StopDecision::Stop => break,
        }
    }
    store.restore(&best);
    let (test_loss, test_acc) = evaluate(&model, &store, gs, &test)?;
    let record = RunRecord {
        stop_epoch: epochs.len(),
        best_epoch: stopper.best_epoch(),
        best_val_loss: stopper.best(),
        epochs,
        test_loss,
        test_acc,
        wall_time: started.elapsed(),
    };
    Ok(TrainedClassifier { model, store, record })
}
