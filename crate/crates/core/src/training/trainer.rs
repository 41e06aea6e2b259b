use std::ops::ControlFlow;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::Confusion;
use super::objective::objective;
use super::optim::Adam;
use super::TrainError;
use crate::graph_generation::MultiRelAdjacency;
use crate::market_data::WindowSample;
use crate::model::{layers, Mgdpr, ModelError};
use crate::tensor::{Graph, Tensor, TensorError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Days per optimizer step; `None` trains on the full period at once.
    pub batch_size: Option<usize>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2.5e-4,
            epochs: 900,
            batch_size: None,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if self.batch_size == Some(0) {
            return Err(TrainError::Config("batch size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0 {
            return Err(TrainError::Config("Adam moments need beta in [0, 1) and eps > 0".into()));
        }
        Ok(())
    }
}

/// A model-ready trading day.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub t_index: usize,
    pub features: Tensor,
    pub adjacency: Tensor,
    pub labels: Vec<u8>,
}

/// Pairs each window with the graphs of its end day.
pub fn prepare_examples(
    model: &Mgdpr,
    samples: &[WindowSample],
    graphs: &[MultiRelAdjacency],
) -> Result<Vec<Example>, TrainError> {
    samples
        .iter()
        .map(|s| {
            let g = graphs
                .iter()
                .find(|g| g.t_index == s.t_index)
                .ok_or(TrainError::MissingGraph(s.t_index))?;
            Ok(Example {
                t_index: s.t_index,
                features: s.features.clone(),
                adjacency: model.adjacency_input(g),
                labels: s.labels.clone(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub constraint: f64,
    pub val_acc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Parameters with the best validation accuracy (the last ones without
    /// validation data).
    pub best: Mgdpr,
    pub last: Mgdpr,
    /// Epoch of `best`; 0 means the initial parameters.
    pub best_epoch: usize,
    pub trace: Vec<EpochRecord>,
}

/// Non-finite values anywhere in a forward pass mean training diverged.
fn diverged(err: impl Into<TrainError>, epoch: usize, lr: f64) -> TrainError {
    match err.into() {
        TrainError::Tensor(TensorError::NonFinite { .. })
        | TrainError::Model(ModelError::Tensor(TensorError::NonFinite { .. })) => TrainError::Divergence {
            epoch,
            learning_rate: lr,
        },
        other => other,
    }
}

struct StepResult {
    loss: f64,
    constraint: f64,
    grads: Vec<Tensor>,
}

fn loss_and_gradients(model: &Mgdpr, batch: &[Example], epoch: usize, lr: f64) -> Result<StepResult, TrainError> {
    let graph = Graph::new();
    let vars = model.params.bind(&graph, true);
    let logits = batch
        .iter()
        .map(|ex| model.forward(&graph, &vars, &ex.features, &ex.adjacency))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| diverged(e, epoch, lr))?;
    let gammas = vars
        .layers
        .iter()
        .map(|l| layers::materialize_gamma(l.raw_gamma))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| diverged(e, epoch, lr))?;
    let labels: Vec<&[u8]> = batch.iter().map(|ex| ex.labels.as_slice()).collect();
    let obj = objective(&graph, &logits, &labels, &gammas).map_err(|e| diverged(e, epoch, lr))?;
    let loss = obj.loss.value().item();
    if !loss.is_finite() {
        return Err(TrainError::Divergence {
            epoch,
            learning_rate: lr,
        });
    }
    let grads = graph.backward(obj.loss).map_err(|e| diverged(e, epoch, lr))?;
    let grads = vars
        .flatten()
        .into_iter()
        .map(|v| grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(&v.shape())))
        .collect();
    Ok(StepResult {
        loss,
        constraint: obj.constraint,
        grads,
    })
}

/// Chronological full-batch (or mini-batch) Adam training with
/// best-validation model selection.
pub fn train(model: Mgdpr, train_set: &[Example], val_set: &[Example], config: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    train_with(model, train_set, val_set, config, |_, _| Ok(ControlFlow::Continue(())))
}

/// [`train`] with `observe` called after every epoch on the current model;
/// returning `ControlFlow::Break` ends training after that epoch.
pub fn train_with(
    model: Mgdpr,
    train_set: &[Example],
    val_set: &[Example],
    config: &TrainConfig,
    mut observe: impl FnMut(&EpochRecord, &Mgdpr) -> Result<ControlFlow<()>, TrainError>,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if train_set.is_empty() && config.epochs > 0 {
        return Err(TrainError::EmptyTrainingSet);
    }
    let lr = config.learning_rate;
    let mut adam = Adam::with_moments(lr, config.beta1, config.beta2, config.eps);
    let batch = config.batch_size.unwrap_or(train_set.len()).max(1);
    let mut current = model;
    let mut best = (current.clone(), 0usize, f64::NEG_INFINITY);
    let mut trace = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let (mut loss, mut constraint) = (0.0, 0.0);
        for chunk in train_set.chunks(batch) {
            let step = loss_and_gradients(&current, chunk, epoch, lr)?;
            let weight = chunk.len() as f64 / train_set.len() as f64;
            loss += step.loss * weight;
            constraint += step.constraint * weight;
            current.params = adam.step(&current.params, &step.grads);
            if current.params.flatten().iter().any(|t| t.data().iter().any(|v| !v.is_finite())) {
                return Err(TrainError::Divergence {
                    epoch,
                    learning_rate: lr,
                });
            }
        }
        let val_acc = if val_set.is_empty() {
            None
        } else {
            Some(evaluate(&current, val_set).map_err(|e| diverged(e, epoch, lr))?.acc)
        };
        log::debug!("epoch {epoch}: loss {loss:.6} val_acc {val_acc:?}");
        let score = val_acc.unwrap_or(f64::INFINITY);
        if score > best.2 || val_acc.is_none() {
            best = (current.clone(), epoch, score);
        }
        let record = EpochRecord {
            epoch,
            loss,
            constraint,
            val_acc,
        };
        let flow = observe(&record, &current)?;
        trace.push(record);
        if flow.is_break() {
            break;
        }
    }
    Ok(TrainOutcome {
        best: best.0,
        best_epoch: best.1,
        last: current,
        trace,
    })
}

/// Pooled confusion-matrix metrics over every (day, stock) prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub acc: f64,
    pub mcc: f64,
    pub f1: f64,
    pub confusion: Confusion,
}

impl From<Confusion> for Evaluation {
    fn from(confusion: Confusion) -> Self {
        Self {
            acc: confusion.accuracy(),
            mcc: confusion.mcc(),
            f1: confusion.f1(),
            confusion,
        }
    }
}

pub fn evaluate(model: &Mgdpr, examples: &[Example]) -> Result<Evaluation, TrainError> {
    if examples.is_empty() {
        return Err(TrainError::EmptyEvaluation);
    }
    let mut confusion = Confusion::default();
    for ex in examples {
        let pred = model.predict(&ex.features, &ex.adjacency)?;
        confusion = confusion.merge(Confusion::from_predictions(&pred, &ex.labels)?);
    }
    Ok(confusion.into())
}

/// Writes `epoch,loss,val_acc`; a missing validation accuracy is left blank.
pub fn write_loss_trace(path: &Path, trace: &[EpochRecord]) -> Result<(), TrainError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| TrainError::Io(e.to_string()))?;
    w.write_record(["epoch", "loss", "val_acc"])
        .map_err(|e| TrainError::Io(e.to_string()))?;
    for r in trace {
        let val = r.val_acc.map(|v| v.to_string()).unwrap_or_default();
        w.write_record([r.epoch.to_string(), r.loss.to_string(), val])
            .map_err(|e| TrainError::Io(e.to_string()))?;
    }
    w.flush().map_err(|e| TrainError::Io(e.to_string()))
}
