use std::fs::File;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::adam::{Adam, AdamConfig};
use crate::autodiff::{Graph, Mode};
use crate::error::{Error, Result};
use crate::metrics::rmspe;
use crate::model::{Part, ViTFc};
use crate::preprocess::SampleMatrix;
use crate::rng::{stream, Purpose};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Mse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    /// Epoch budget.
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub loss: LossKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let a = AdamConfig::default();
        Self {
            lr: a.lr,
            batch_size: 16,
            max_epochs: 5000,
            // validation RMSPE swings by several points between epochs at a
            // fixed lr, so short patience stops on noise
            patience: 1000,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
            seed: 0,
            loss: LossKind::Mse,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.patience < 1 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err(Error::Config("optimizer constants out of range".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

/// Mean squared difference.
pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::Dimension(format!("{} predictions vs {} targets", pred.len(), target.len())));
    }
    if pred.is_empty() {
        return Err(Error::Domain("loss of empty input".into()));
    }
    Ok(pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_rmspe: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Patience,
    MaxEpochs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch of the returned snapshot; 0 when no epoch ran.
    pub best_epoch: usize,
    pub best_val_rmspe: f64,
    pub stop_reason: StopReason,
}

impl TrainHistory {
    /// `epoch,train_loss,val_rmspe`
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_writer(File::create(path)?);
        for r in &self.epochs {
            w.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Improved,
    Waiting,
    Stop,
}

/// Patience rule on a metric where lower is better; only strict
/// improvements reset the counter.
#[derive(Debug, Clone)]
pub struct EarlyStopper {
    patience: usize,
    best: f64,
    best_epoch: usize,
    since: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            since: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, metric: f64) -> Verdict {
        if metric < self.best {
            self.best = metric;
            self.best_epoch = epoch;
            self.since = 0;
            Verdict::Improved
        } else {
            self.since += 1;
            if self.since >= self.patience {
                Verdict::Stop
            } else {
                Verdict::Waiting
            }
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

/// Shuffled mini-batches; a trailing batch of one joins its predecessor so
/// that train-mode batch norm always sees two rows.
pub fn batch_plan(n: usize, batch_size: usize, seed: u64, epoch: u64, stream_id: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(seed, Purpose::Shuffle, epoch, stream_id));
    let mut out: Vec<Vec<usize>> = order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        let last = out.pop().unwrap();
        out.last_mut().unwrap().extend(last);
    }
    out
}

fn training_error(e: Error, epoch: usize, batch: usize) -> Error {
    match e {
        Error::NonFinite { op } => Error::Training(format!("non-finite value in {op} at epoch {epoch}, batch {batch}")),
        other => other,
    }
}

/// Mini-batch training with validation-RMSPE early stopping. Returns the
/// best snapshot. Samples must already be scaled.
pub fn train(
    model: ViTFc,
    train_set: &[SampleMatrix],
    val_set: &[SampleMatrix],
    cfg: &TrainConfig,
) -> Result<(ViTFc, TrainHistory)> {
    cfg.validate()?;
    if train_set.len() < 2 {
        return Err(Error::Config(format!(
            "training needs at least 2 samples, got {}",
            train_set.len()
        )));
    }
    if val_set.is_empty() {
        return Err(Error::Config("validation set is empty".into()));
    }
    let patches: Vec<Tensor> = train_set
        .iter()
        .map(|s| model.patch_batch(&[&s.x]))
        .collect::<Result<_>>()?;
    let val_inputs: Vec<&[f64]> = val_set.iter().map(|s| s.x.as_slice()).collect();
    let val_y: Vec<f64> = val_set.iter().map(|s| s.y).collect();
    let (l, p) = (model.config().tokens(), model.config().patch_len());

    let mut model = model;
    let mut opt = Adam::new(cfg.adam(), &model);
    let mut stopper = EarlyStopper::new(cfg.patience);
    let mut best = model.clone();
    let mut epochs = Vec::new();
    let mut stop_reason = StopReason::MaxEpochs;

    for epoch in 1..=cfg.max_epochs {
        let mut loss_sum = 0.0;
        for (bi, batch) in batch_plan(train_set.len(), cfg.batch_size, cfg.seed, epoch as u64, 0)
            .into_iter()
            .enumerate()
        {
            let mut step = || -> Result<f64> {
                let mut data = Vec::with_capacity(batch.len() * l * p);
                for &i in &batch {
                    data.extend_from_slice(patches[i].data());
                }
                let mut g = Graph::new();
                let bound = model.bind(&mut g);
                let x = g.constant(Tensor::matrix(batch.len() * l, p, data)?);
                let y = g.constant(Tensor::matrix(batch.len(), 1, batch.iter().map(|&i| train_set[i].y).collect())?);
                let mut rng = stream(cfg.seed, Purpose::Dropout, epoch as u64, bi as u64);
                let mut bn = model.bn.clone();
                let pred = model.forward(&mut g, &bound, x, Mode::Train, &mut rng, &mut bn)?;
                let loss = g.mse(pred, y)?;
                let mut grads = g.backward(loss)?;
                let per_param: Vec<Option<Tensor>> = bound.vars.iter().map(|&v| grads.take(v)).collect();
                let value = g.value(loss).data()[0];
                opt.step(&mut model, &per_param)?;
                model.bn = bn;
                Ok(value)
            };
            let value = step().map_err(|e| training_error(e, epoch, bi))?;
            loss_sum += value * batch.len() as f64;
        }
        let train_loss = loss_sum / train_set.len() as f64;
        let pred = model.predict(&val_inputs).map_err(|e| training_error(e, epoch, 0))?;
        let val = rmspe(&val_y, &pred)?;
        if !val.is_finite() {
            return Err(Error::Training(format!("validation RMSPE is not finite at epoch {epoch}")));
        }
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_rmspe: val,
        });
        if epoch % 50 == 0 {
            log::info!("epoch {epoch}: train loss {train_loss:.3e}, val RMSPE {val:.4}%");
        }
        match stopper.observe(epoch, val) {
            Verdict::Improved => best = model.clone(),
            Verdict::Waiting => {}
            Verdict::Stop => {
                stop_reason = StopReason::Patience;
                break;
            }
        }
    }
    let history = TrainHistory {
        epochs,
        best_epoch: stopper.best_epoch(),
        best_val_rmspe: stopper.best(),
        stop_reason,
    };
    Ok((best, history))
}

/// Batch-norm handling in the head while fine-tuning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadNorm {
    /// Normalize with batch statistics and update the running statistics.
    Update,
    /// Keep normalizing with the source running statistics.
    Fixed,
}

impl std::str::FromStr for HeadNorm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "update" => Ok(Self::Update),
            "fixed" => Ok(Self::Fixed),
            other => Err(Error::Config(format!("unknown head norm policy '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FineTuneConfig {
    pub epochs: usize,
    pub head_norm: HeadNorm,
}

/// Freezes the feature extractor and trains the head on `target_train`
/// (scaled). Features are computed once, in eval mode, since the frozen
/// encoder is a fixed function. Returns the model after the last epoch and
/// the per-epoch mean training loss.
pub fn fine_tune(
    model: ViTFc,
    target_train: &[SampleMatrix],
    ft: &FineTuneConfig,
    cfg: &TrainConfig,
) -> Result<(ViTFc, Vec<f64>)> {
    cfg.validate()?;
    if target_train.is_empty() {
        return Err(Error::Config("target training set is empty".into()));
    }
    let mut model = model;
    model.apply_freeze(Part::Vit, true);
    model.apply_freeze(Part::Head, false);
    let inputs: Vec<&[f64]> = target_train.iter().map(|s| s.x.as_slice()).collect();
    let features = model.features(&inputs)?;
    let d = features.cols();
    let mut opt = Adam::new(cfg.adam(), &model);
    let mut losses = Vec::with_capacity(ft.epochs);
    for epoch in 1..=ft.epochs {
        let mut loss_sum = 0.0;
        for (bi, batch) in batch_plan(target_train.len(), cfg.batch_size, cfg.seed, epoch as u64, 1)
            .into_iter()
            .enumerate()
        {
            let mut step = || -> Result<f64> {
                let mut data = Vec::with_capacity(batch.len() * d);
                for &i in &batch {
                    data.extend_from_slice(features.row(i));
                }
                let mut g = Graph::new();
                let bound = model.bind(&mut g);
                let f = g.constant(Tensor::matrix(batch.len(), d, data)?);
                let y = g.constant(Tensor::matrix(
                    batch.len(),
                    1,
                    batch.iter().map(|&i| target_train[i].y).collect(),
                )?);
                let mode = match ft.head_norm {
                    HeadNorm::Update if batch.len() >= 2 => Mode::Train,
                    _ => Mode::Eval,
                };
                let mut bn = model.bn.clone();
                let pred = model.head(&mut g, &bound, f, mode, &mut bn)?;
                let loss = g.mse(pred, y)?;
                let mut grads = g.backward(loss)?;
                let per_param: Vec<Option<Tensor>> = bound.vars.iter().map(|&v| grads.take(v)).collect();
                let value = g.value(loss).data()[0];
                opt.step(&mut model, &per_param)?;
                model.bn = bn;
                Ok(value)
            };
            loss_sum += step().map_err(|e| training_error(e, epoch, bi))? * batch.len() as f64;
        }
        losses.push(loss_sum / target_train.len() as f64);
    }
    Ok((model, losses))
}
