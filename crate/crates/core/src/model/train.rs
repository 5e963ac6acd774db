use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

use super::{argmax_rows, cosine_lr, cross_entropy, Confusion, Evaluation, GbnetModel, Sgd, TrainConfig};
use crate::data::{augment, stream_rng, Dataset};
use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::layers::{Mode, Pass};
use crate::tensor::Tape;

// stream families of the training loop
const SHUFFLE: u32 = 3;
const AUGMENT: u32 = 4;
const DROPOUT: u32 = 5;

/// One line of the metrics log.
#[derive(Debug, Clone, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub acc: f64,
    pub test_loss: f64,
    pub test_acc: f64,
    pub test_avg_class_acc: f64,
}

/// Mean loss and accuracy of one pass over the training set.
#[derive(Debug, Clone, Copy)]
pub struct EpochStats {
    pub lr: f64,
    pub loss: f64,
    pub acc: f64,
}

/// Model plus optimizer state; `epoch` counts completed epochs.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: GbnetModel<f32>,
    pub opt: Sgd<f32>,
    pub cfg: TrainConfig,
    pub epoch: usize,
}

/// Splits `order` into batches of `size`; a trailing single sample joins
/// the previous batch so normalization never sees one cloud alone.
fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size).collect();
    if out.len() > 1 && out.last().map(|b| b.len()) == Some(1) {
        out.pop();
        let start = (out.len() - 1) * size;
        *out.last_mut().unwrap() = &order[start..];
    }
    out
}

impl Trainer {
    pub fn new(model: GbnetModel<f32>, cfg: TrainConfig) -> Self {
        let opt = Sgd::new(cfg.momentum, model.store.len());
        Trainer {
            model,
            opt,
            cfg,
            epoch: 0,
        }
    }

    pub fn lr(&self, epoch: usize) -> f64 {
        cosine_lr(self.cfg.lr_max, self.cfg.lr_min, epoch, self.cfg.epochs)
    }

    /// One epoch: fixed shuffle, augmentation and dropout draws derived
    /// from the seed and the epoch index, batches in order.
    pub fn train_epoch(&mut self, data: &Dataset) -> Result<EpochStats> {
        if data.is_empty() {
            return Err(Error::invalid("train_epoch", "empty dataset"));
        }
        let (seed, e) = (self.cfg.seed, self.epoch);
        let lr = self.lr(e);
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut stream_rng(seed, SHUFFLE, e as u64));

        let (mut loss_sum, mut correct) = (0.0f64, 0usize);
        for (step, batch) in batches(&order, self.cfg.batch_size).into_iter().enumerate() {
            let clouds: Vec<PointCloud> = batch
                .iter()
                .map(|&i| {
                    let c = &data.clouds[i];
                    if self.cfg.augment {
                        let mut rng = stream_rng(seed, AUGMENT, ((e as u64) << 32) | i as u64);
                        augment(c, &mut rng, &self.cfg.augmentation)
                    } else {
                        c.clone()
                    }
                })
                .collect();
            let labels: Vec<usize> = clouds.iter().map(|c| c.label.unwrap_or(0)).collect();
            let dropout_seed = stream_rng(seed, DROPOUT, ((e as u64) << 32) | step as u64).gen::<u64>();

            let mut tape = Tape::new();
            let (loss, logits, outcome) = {
                let mut pass =
                    Pass::new(&mut tape, &self.model.store, Mode::Train, true).with_dropout_seed(dropout_seed);
                let out = self.model.forward(&mut pass, &clouds)?;
                let loss = cross_entropy(pass.tape, out.logits, &labels)?;
                (loss, out.logits, pass.finish())
            };
            let value = tape.value(loss).data()[0] as f64;
            if !value.is_finite() {
                return Err(Error::invalid("train_epoch", format!("loss became {value} at epoch {e}, step {step}")));
            }
            loss_sum += value * batch.len() as f64;
            let preds = argmax_rows(tape.value(logits));
            correct += preds.iter().zip(&labels).filter(|(p, l)| p == l).count();

            let mut grads = tape.into_gradients(loss)?;
            let grads = outcome.param_grads(&self.model.store, &mut grads);
            let freeze = self.cfg.freeze_alpha;
            self.opt
                .step(&mut self.model.store, &grads, lr, |name| freeze && GbnetModel::<f32>::is_alpha(name));
            outcome.apply_bn_updates(&mut self.model.store);
        }
        self.epoch += 1;
        let n = data.len() as f64;
        Ok(EpochStats {
            lr,
            loss: loss_sum / n,
            acc: correct as f64 / n,
        })
    }

    /// Trains until `cfg.epochs` are done, or until test accuracy reaches
    /// `cfg.target_accuracy` when that is positive. `on_epoch` sees every
    /// record after the epoch completes.
    pub fn fit(
        &mut self,
        train: &Dataset,
        test: &Dataset,
        mut on_epoch: impl FnMut(&EpochRecord, &Trainer, &Evaluation) -> Result<()>,
    ) -> Result<Vec<EpochRecord>> {
        let mut history = Vec::new();
        while self.epoch < self.cfg.epochs {
            let stats = self.train_epoch(train)?;
            let eval = evaluate(&self.model, test, self.cfg.eval_batch)?;
            let record = EpochRecord {
                epoch: self.epoch,
                lr: stats.lr,
                loss: stats.loss,
                acc: stats.acc,
                test_loss: eval.loss,
                test_acc: eval.overall_acc,
                test_avg_class_acc: eval.avg_class_acc,
            };
            on_epoch(&record, self, &eval)?;
            history.push(record);
            if self.cfg.target_accuracy > 0.0 && eval.overall_acc >= self.cfg.target_accuracy {
                log::info!("target accuracy reached after {} epochs", self.epoch);
                break;
            }
        }
        Ok(history)
    }
}

/// Eval-mode metrics over `data`, `batch` clouds at a time.
pub fn evaluate(model: &GbnetModel<f32>, data: &Dataset, batch: usize) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::invalid("evaluate", "empty dataset"));
    }
    if data.num_classes() != model.config.classes {
        return Err(Error::ClassCount {
            expected: data.num_classes(),
            checkpoint: model.config.classes,
        });
    }
    let mut confusion = Confusion::new(model.config.classes);
    let mut loss_sum = 0.0f64;
    for chunk in data.clouds.chunks(batch.max(1)) {
        let labels: Vec<usize> = chunk.iter().map(|c| c.label.unwrap_or(0)).collect();
        let mut tape = Tape::new();
        let (loss, logits) = {
            let mut pass = Pass::new(&mut tape, &model.store, Mode::Eval, false);
            let out = model.forward(&mut pass, chunk)?;
            (cross_entropy(pass.tape, out.logits, &labels)?, out.logits)
        };
        loss_sum += tape.value(loss).data()[0] as f64 * chunk.len() as f64;
        for (p, &l) in argmax_rows(tape.value(logits)).into_iter().zip(&labels) {
            confusion.add(l, p)?;
        }
    }
    Ok(Evaluation::from_confusion(confusion, loss_sum / data.len() as f64))
}
