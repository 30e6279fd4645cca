//! Full-batch training with Adam on mean cross-entropy over the training nodes.

use std::sync::Arc;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{argmax_rows, Model};
use crate::autodiff::{EdgeIndex, Gradients, Tape};
use crate::dataset::Split;
use crate::encoder::RawFeatures;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::params::{Bound, Params};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            lr: 0.01,
            weight_decay: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub train_acc: f64,
    pub valid_acc: f64,
    pub test_acc: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters at the epoch with the best validation accuracy.
    pub best: Params,
    pub best_epoch: Option<usize>,
    /// Parameters after the last update.
    pub last: Params,
    pub history: Vec<EpochMetrics>,
}

pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    step: i32,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(params: &Params, cfg: &TrainConfig) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|(_, p)| Array2::zeros(p.dim()))
                .collect::<Vec<_>>()
        };
        Adam {
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_eps,
            weight_decay: cfg.weight_decay,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn step(&mut self, params: &mut Params, bound: &Bound, grads: &Gradients) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (slot, id) in params.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let Some(g) = grads.get(bound.var(id)) else { continue };
            let p = params.get_mut(id);
            let m = &mut self.m[slot];
            let v = &mut self.v[slot];
            ndarray::Zip::from(p)
                .and(g)
                .and(m)
                .and(v)
                .for_each(|p, &g, m, v| {
                    let g = g + self.weight_decay * *p;
                    *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                    *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                    *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
                });
        }
    }
}

/// Fraction of `idx` whose prediction matches its label; 0 for an empty set.
pub fn accuracy(pred: &[usize], labels: &[usize], idx: &[usize]) -> f64 {
    if idx.is_empty() {
        return 0.0;
    }
    let hits = idx.iter().filter(|&&i| pred[i] == labels[i]).count();
    hits as f64 / idx.len() as f64
}

/// Trains `params` in place of a copy. `seed` drives dropout only; the
/// caller's RNG already fixed the initialization.
#[allow(clippy::too_many_arguments)]
pub fn train(
    model: &Model,
    params: &Params,
    raw: &RawFeatures,
    g: &Graph,
    labels: &[usize],
    split: &Split,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    model.check_inputs(raw, g)?;
    split.validate(g.num_nodes())?;
    if split.train.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    if labels.len() != g.num_nodes() {
        return Err(Error::Shape(format!(
            "{} labels for {} nodes",
            labels.len(),
            g.num_nodes()
        )));
    }
    let classes = model.config.num_classes;
    if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::Config(format!("label {bad} outside {classes} classes")));
    }

    let edges = Arc::new(EdgeIndex::attention(g));
    let targets: Vec<(usize, usize)> = split.train.iter().map(|&i| (i, labels[i])).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = params.clone();
    let mut adam = Adam::new(&params, cfg);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best = params.clone();
    let mut best_epoch = None;
    let mut best_valid = f64::NEG_INFINITY;
    let uses_dropout = model.config.dropout > 0.0;

    for epoch in 0..cfg.epochs {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let trace = model.forward(&mut tape, &bound, raw, &edges, Some(&mut rng));
        let loss_var = tape.cross_entropy(trace.logits, &targets);
        let loss = tape.value(loss_var)[[0, 0]];
        if !loss.is_finite() {
            return Err(Error::Divergence { epoch, loss });
        }

        let pred = if uses_dropout {
            argmax_rows(&model.predict(&params, raw, g)?.logits)
        } else {
            argmax_rows(tape.value(trace.logits))
        };
        let metrics = EpochMetrics {
            epoch,
            loss,
            train_acc: accuracy(&pred, labels, &split.train),
            valid_acc: accuracy(&pred, labels, &split.valid),
            test_acc: accuracy(&pred, labels, &split.test),
        };
        if metrics.valid_acc > best_valid {
            best_valid = metrics.valid_acc;
            best = params.clone();
            best_epoch = Some(epoch);
        }
        history.push(metrics);

        let grads = tape.backward(loss_var);
        adam.step(&mut params, &bound, &grads);
    }

    Ok(TrainOutcome {
        best,
        best_epoch,
        last: params,
        history,
    })
}
