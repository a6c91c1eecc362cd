//! Mini-batch training over walk pairs and the final embedding pass.

use log::debug;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{loss_and_grad_planned, BatchPlan, Gradients};
use super::model::{ComputationTree, GnnModel};
use super::sampling::NegativeSampler;
use super::walks::{generate_walks, walk_pairs};
use super::{EmbeddingTable, GnnConfig, GnnError, Optimizer};
use crate::graph::BipartiteGraph;

// Independent RNG streams derived from the config seed.
const STREAM_INIT: u64 = 1;
const STREAM_WALKS: u64 = 2;
const STREAM_BATCHES: u64 = 3;
const STREAM_EMBED: u64 = 4;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub walks: usize,
    pub pairs: usize,
    /// Mean batch loss per epoch.
    pub epoch_losses: Vec<f64>,
}

struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Gradients,
    v: Gradients,
}

impl Adam {
    fn new(model: &GnnModel) -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: Gradients::zeros(model), v: Gradients::zeros(model) }
    }

    fn update(&mut self, lr: f64, params: &mut [f64], grads: &[f64], which: Slot) {
        let (m, v) = match which {
            Slot::Inputs => (&mut self.m.inputs, &mut self.v.inputs),
            Slot::Weight(k) => (&mut self.m.weights[k], &mut self.v.weights[k]),
        };
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

#[derive(Clone, Copy)]
enum Slot {
    Inputs,
    Weight(usize),
}

fn apply(model: &mut GnnModel, grads: &Gradients, config: &GnnConfig, adam: &mut Option<Adam>) {
    let lr = config.learning_rate;
    match adam {
        Some(adam) => {
            adam.step += 1;
            if !config.freeze_inputs {
                adam.update(lr, model.inputs_mut(), &grads.inputs, Slot::Inputs);
            }
            for k in 0..model.hops() {
                adam.update(lr, model.weight_mut(k), &grads.weights[k], Slot::Weight(k));
            }
        }
        None => {
            if !config.freeze_inputs {
                for (p, g) in model.inputs_mut().iter_mut().zip(&grads.inputs) {
                    *p -= lr * g;
                }
            }
            for k in 0..model.hops() {
                for (p, g) in model.weight_mut(k).iter_mut().zip(&grads.weights[k]) {
                    *p -= lr * g;
                }
            }
        }
    }
}

/// Trains a model on `graph` and embeds every node with it.
pub fn train(graph: &BipartiteGraph, config: &GnnConfig) -> Result<(GnnModel, EmbeddingTable, TrainReport), GnnError> {
    config.validate()?;
    let mut model = GnnModel::init(graph.node_count(), config, &mut stream(config.seed, STREAM_INIT));
    let walks = generate_walks(graph, config, &mut stream(config.seed, STREAM_WALKS));
    let mut pairs = walk_pairs(&walks);
    let sampler = NegativeSampler::new(graph);
    let mut rng = stream(config.seed, STREAM_BATCHES);
    let mut adam = (config.optimizer == Optimizer::Adam).then(|| Adam::new(&model));
    let mut report =
        TrainReport { walks: walks.len(), pairs: pairs.len(), epoch_losses: Vec::with_capacity(config.epochs) };

    for epoch in 0..config.epochs {
        pairs.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut batches = 0usize;
        for (batch, chunk) in pairs.chunks(config.batch_size).enumerate() {
            let plan = BatchPlan::sample(graph, config, chunk.to_vec(), &sampler, &mut rng);
            let (loss, grads) = loss_and_grad_planned(&model, &plan, !config.deterministic);
            if !loss.is_finite() || !grads.is_finite() {
                return Err(GnnError::NonFiniteLoss { epoch, batch, loss });
            }
            apply(&mut model, &grads, config, &mut adam);
            sum += loss;
            batches += 1;
        }
        let mean = if batches == 0 { f64::NAN } else { sum / batches as f64 };
        debug!("epoch {epoch}: mean loss {mean:.5}");
        report.epoch_losses.push(mean);
    }
    if !model.is_finite() {
        return Err(GnnError::NonFiniteLoss { epoch: config.epochs, batch: 0, loss: f64::NAN });
    }
    let table = embed_all(&model, graph, config);
    Ok((model, table, report))
}

/// Final representation of every node, each from one freshly sampled tree.
pub fn embed_all(model: &GnnModel, graph: &BipartiteGraph, config: &GnnConfig) -> EmbeddingTable {
    let mut rng = stream(config.seed, STREAM_EMBED);
    let trees: Vec<ComputationTree> = (0..graph.node_count())
        .map(|n| ComputationTree::sample(graph, n, &config.fanout, model.aggregator(), &mut rng))
        .collect();
    let serial = config.deterministic || rayon::current_num_threads() == 1;
    let proj = model.project_inputs(!serial);
    let embed = |t: &ComputationTree| model.forward_projected(t, &proj).output().to_vec();
    let rows: Vec<Vec<f64>> =
        if serial { trees.iter().map(embed).collect() } else { trees.par_iter().map(embed).collect() };
    EmbeddingTable::new(model.dim(), graph.mac_count(), rows.concat())
}
