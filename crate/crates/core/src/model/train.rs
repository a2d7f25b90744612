//! Mini-batch training with Adam, early stopping on validation accuracy, and
//! evaluation.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{AdamState, CnnModel, Mode};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Samples accumulated serially inside one work unit. Batches are split into
/// fixed-size chunks and chunk sums are reduced in index order, so results do
/// not depend on the number of worker threads.
const CHUNK: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub early_stop_patience: usize,
    pub dropout_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 128,
            learning_rate: 0.001,
            early_stop_patience: 5,
            dropout_rate: 0.2,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.early_stop_patience == 0 {
            return Err(Error::Param(
                "epochs, batch size and patience must be positive".into(),
            ));
        }
        if self.early_stop_patience > self.epochs {
            return Err(Error::Param(format!(
                "patience {} exceeds epoch budget {}",
                self.early_stop_patience, self.epochs
            )));
        }
        if !(self.learning_rate >= 0.0) {
            return Err(Error::Param(format!(
                "bad learning rate {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Param(format!(
                "dropout rate {} not in [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }
}

/// Random-access labeled inputs.
pub trait SampleSource: Sync {
    fn len(&self) -> usize;
    fn get(&self, index: usize) -> Result<(Tensor, usize)>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub input: Tensor,
    pub label: usize,
}

impl SampleSource for [Sample] {
    fn len(&self) -> usize {
        <[Sample]>::len(self)
    }

    fn get(&self, index: usize) -> Result<(Tensor, usize)> {
        let s = &self[index];
        Ok((s.input.clone(), s.label))
    }
}

impl SampleSource for Vec<Sample> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }

    fn get(&self, index: usize) -> Result<(Tensor, usize)> {
        SampleSource::get(self.as_slice(), index)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

pub fn evaluate<S: SampleSource + ?Sized>(model: &CnnModel, data: &S) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::EmptyDataset("nothing to evaluate".into()));
    }
    let classes = model.num_classes();
    let scored: Vec<(f64, usize, usize)> = (0..data.len())
        .into_par_iter()
        .map(|i| {
            let (x, label) = data.get(i)?;
            let probs = model.forward(&x, Mode::Inference)?;
            if label >= probs.numel() {
                return Err(Error::Index(format!(
                    "label {label} for {} classes",
                    probs.numel()
                )));
            }
            let loss = -probs.data()[label].max(1e-12).ln();
            Ok((loss, label, probs.argmax()))
        })
        .collect::<Result<_>>()?;
    let mut confusion = vec![vec![0; classes]; classes];
    let mut loss = 0.0;
    let mut correct = 0;
    for (l, truth, pred) in scored {
        loss += l;
        confusion[truth][pred] += 1;
        correct += usize::from(truth == pred);
    }
    let n = data.len() as f64;
    Ok(Evaluation {
        loss: loss / n,
        accuracy: correct as f64 / n,
        confusion,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were restored.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl History {
    pub fn best_val_acc(&self) -> f64 {
        self.epochs
            .iter()
            .map(|e| e.val_acc)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "epoch,train_loss,train_acc,val_loss,val_acc")?;
        for e in &self.epochs {
            writeln!(
                out,
                "{},{},{},{},{}",
                e.epoch, e.train_loss, e.train_acc, e.val_loss, e.val_acc
            )?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_csv(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop,
}

/// Tracks the best validation accuracy and the parameters that achieved it.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    /// `(accuracy, loss, epoch)` of the restored snapshot.
    best: Option<(f64, f64, usize)>,
    best_acc: f64,
    stale: usize,
    best_params: Vec<Tensor>,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            best_acc: f64::NEG_INFINITY,
            stale: 0,
            best_params: Vec::new(),
        }
    }

    /// Records one epoch. Only a strict accuracy increase resets the patience
    /// counter. The snapshot moves to any epoch with higher accuracy, or equal
    /// accuracy and lower validation loss.
    pub fn update(
        &mut self,
        epoch: usize,
        val_acc: f64,
        val_loss: f64,
        params: &[&Tensor],
    ) -> StopDecision {
        if val_acc > self.best_acc {
            self.best_acc = val_acc;
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        let better = match self.best {
            None => true,
            Some((acc, loss, _)) => val_acc > acc || (val_acc == acc && val_loss < loss),
        };
        if better {
            self.best = Some((val_acc, val_loss, epoch));
            self.best_params = params.iter().map(|&p| p.clone()).collect();
        }
        if self.stale >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best.map(|(_, _, e)| e)
    }

    pub fn best_params(&self) -> &[Tensor] {
        &self.best_params
    }
}

/// Trains `model` in place and restores the parameters of the epoch with the
/// best validation accuracy.
pub fn fit<S: SampleSource + ?Sized>(
    model: &mut CnnModel,
    train: &S,
    val: &S,
    config: &TrainConfig,
) -> Result<History> {
    config.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::EmptyDataset(
            "training and validation sets must be non-empty".into(),
        ));
    }
    let mut rng = Rng::seeded(config.seed);
    let mut adam = AdamState::new(config.learning_rate, &model.parameters());
    let mut stopper = EarlyStopping::new(config.early_stop_patience);
    let mut history = History::default();
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=config.epochs {
        rng.shuffle(&mut order);
        let mut batch_losses = Vec::new();
        for batch in order.chunks(config.batch_size) {
            let base = rng.fork_base();
            let (loss, grads) = batch_gradient(model, train, batch, base)?;
            adam.step(&mut model.parameters_mut(), &grads)?;
            batch_losses.push(loss);
        }
        let train_eval = evaluate(model, train)?;
        let val_eval = evaluate(model, val)?;
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: batch_losses.iter().sum::<f64>() / batch_losses.len() as f64,
            train_acc: train_eval.accuracy,
            val_loss: val_eval.loss,
            val_acc: val_eval.accuracy,
        });
        if stopper.update(epoch, val_eval.accuracy, val_eval.loss, &model.parameters())
            == StopDecision::Stop
        {
            history.stopped_early = epoch < config.epochs;
            break;
        }
    }
    model.set_parameters(stopper.best_params())?;
    history.best_epoch = stopper.best_epoch().unwrap_or(0);
    Ok(history)
}

/// Mean loss and mean parameter gradient over one batch (training mode).
fn batch_gradient<S: SampleSource + ?Sized>(
    model: &CnnModel,
    data: &S,
    batch: &[usize],
    dropout_base: u64,
) -> Result<(f64, Vec<Tensor>)> {
    let chunks: Vec<&[usize]> = batch.chunks(CHUNK).collect();
    let wave = rayon::current_num_threads().max(1);
    let mut total_loss = 0.0;
    let mut total: Option<Vec<Tensor>> = None;
    for group in chunks.chunks(wave) {
        let sums: Vec<(f64, Vec<Tensor>)> = group
            .par_iter()
            .map(|chunk| {
                let mut loss_sum = 0.0;
                let mut acc: Option<Vec<Tensor>> = None;
                for &i in *chunk {
                    let (x, label) = data.get(i)?;
                    let mut rng = Rng::stream(dropout_base, i);
                    let (loss, grads) =
                        model.loss_and_grads(&x, label, Mode::Training(&mut rng))?;
                    loss_sum += loss;
                    add_into(&mut acc, grads)?;
                }
                Ok((loss_sum, acc.expect("chunks are non-empty")))
            })
            .collect::<Result<_>>()?;
        for (loss, grads) in sums {
            total_loss += loss;
            add_into(&mut total, grads)?;
        }
    }
    let mut grads = total.expect("batch is non-empty");
    let inv = 1.0 / batch.len() as f64;
    for g in &mut grads {
        g.scale(inv);
    }
    Ok((total_loss * inv, grads))
}

fn add_into(acc: &mut Option<Vec<Tensor>>, grads: Vec<Tensor>) -> Result<()> {
    match acc {
        None => *acc = Some(grads),
        Some(a) => {
            for (x, g) in a.iter_mut().zip(&grads) {
                x.add_assign(g)?;
            }
        }
    }
    Ok(())
}
