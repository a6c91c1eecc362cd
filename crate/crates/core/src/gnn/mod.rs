//! Edge-weight attention GNN over the scan graph, trained without labels
//! from random-walk co-occurrence with negative sampling.

mod loss;
mod model;
mod sampling;
mod train;
mod walks;

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

pub use loss::{loss_and_grad, loss_and_grad_planned, pair_loss, BatchPlan, Gradients};
pub use model::{
    aggregate_uniform, aggregate_weighted, uniform_mean, weighted_mean, ComputationTree, ForwardCache, GnnModel,
    InputProjection, TreeGradients, ZERO_GUARD,
};
pub use sampling::{sample_neighbor_slots, sample_neighbor_slots_uniform, sample_neighbors, NegativeSampler};
pub use train::{embed_all, train, TrainReport};
pub use walks::{generate_walks, walk_pairs};

#[derive(Debug, thiserror::Error)]
pub enum GnnError {
    #[error("invalid gnn config: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize, loss: f64 },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("embedding file line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Neighborhood aggregation. `Weighted` samples and averages neighbors in
/// proportion to edge weight; `Uniform` does both uniformly.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregator {
    #[default]
    Weighted,
    Uniform,
}

/// Transition law of the training random walks.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WalkLaw {
    #[default]
    Weighted,
    Uniform,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    #[default]
    Adam,
    Sgd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GnnConfig {
    pub dim: usize,
    /// Neighbors sampled per node at each hop; its length is the hop count K.
    pub fanout: Vec<usize>,
    /// Steps per random walk.
    pub walk_length: usize,
    pub walks_per_node: usize,
    /// Negative draws per positive pair.
    pub negatives: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub aggregator: Aggregator,
    pub walk_law: WalkLaw,
    pub optimizer: Optimizer,
    /// Keep the random input embeddings fixed and train only the hop weights.
    pub freeze_inputs: bool,
    /// Run every stage on the calling thread.
    pub deterministic: bool,
}

impl Default for GnnConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            fanout: vec![10, 10],
            walk_length: 5,
            walks_per_node: 20,
            negatives: 4,
            epochs: 10,
            batch_size: 512,
            learning_rate: 1e-2,
            seed: 0,
            aggregator: Aggregator::Weighted,
            walk_law: WalkLaw::Weighted,
            optimizer: Optimizer::Adam,
            freeze_inputs: false,
            deterministic: false,
        }
    }
}

impl GnnConfig {
    pub fn hops(&self) -> usize {
        self.fanout.len()
    }

    pub fn validate(&self) -> Result<(), GnnError> {
        let bad = |m: &str| Err(GnnError::InvalidConfig(m.to_string()));
        if self.dim < 2 {
            return bad("dim must be at least 2");
        }
        if self.fanout.is_empty() || self.fanout.contains(&0) {
            return bad("fanout needs at least one hop and positive counts");
        }
        if self.walk_length == 0 || self.walks_per_node == 0 {
            return bad("walk_length and walks_per_node must be positive");
        }
        if self.negatives == 0 {
            return bad("negatives must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive and finite");
        }
        Ok(())
    }
}

/// Final representation of every node: MAC rows first, then sample rows.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    mac_count: usize,
    data: Vec<f64>,
}

impl EmbeddingTable {
    pub fn new(dim: usize, mac_count: usize, data: Vec<f64>) -> Self {
        assert!(dim > 0 && data.len().is_multiple_of(dim), "ragged embedding table");
        assert!(mac_count <= data.len() / dim);
        Self { dim, mac_count, data }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn mac_count(&self) -> usize {
        self.mac_count
    }

    pub fn sample_count(&self) -> usize {
        self.len() - self.mac_count
    }

    pub fn row(&self, node: usize) -> &[f64] {
        &self.data[node * self.dim..(node + 1) * self.dim]
    }

    /// Row of the `v`-th scan record.
    pub fn sample_row(&self, v: usize) -> &[f64] {
        self.row(self.mac_count + v)
    }

    /// Scan-record rows as owned vectors, in record order.
    pub fn sample_rows(&self) -> Vec<Vec<f64>> {
        (0..self.sample_count()).map(|v| self.sample_row(v).to_vec()).collect()
    }

    /// Whether `row` is the zero-guard fallback `e1`.
    pub fn is_guard_vector(row: &[f64]) -> bool {
        row[0] == 1.0 && row[1..].iter().all(|&v| v == 0.0)
    }

    /// Text export: a header `node_count dim mac_count`, then one
    /// space-separated row per node. Values round-trip exactly.
    pub fn write_text<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{} {} {}", self.len(), self.dim, self.mac_count)?;
        for node in 0..self.len() {
            let row: Vec<String> = self.row(node).iter().map(|v| v.to_string()).collect();
            writeln!(out, "{}", row.join(" "))?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(reader: R) -> Result<Self, GnnError> {
        let parse_err = |line: usize, message: String| GnnError::Parse { line, message };
        let mut lines = reader.lines();
        let header = lines.next().ok_or_else(|| parse_err(1, "missing header".into()))??;
        let fields: Vec<usize> = header
            .split_whitespace()
            .map(|f| f.parse::<usize>().map_err(|e| parse_err(1, e.to_string())))
            .collect::<Result<_, _>>()?;
        let [nodes, dim, mac_count] = fields[..] else {
            return Err(parse_err(1, "header must be `node_count dim mac_count`".into()));
        };
        if dim == 0 || mac_count > nodes {
            return Err(parse_err(1, "inconsistent header".into()));
        }
        let mut data = Vec::with_capacity(nodes * dim);
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let before = data.len();
            for tok in line.split_whitespace() {
                data.push(tok.parse::<f64>().map_err(|e| parse_err(i + 2, e.to_string()))?);
            }
            if data.len() - before != dim {
                return Err(parse_err(i + 2, format!("expected {dim} values")));
            }
        }
        if data.len() != nodes * dim {
            return Err(parse_err(0, format!("expected {nodes} rows")));
        }
        Ok(Self::new(dim, mac_count, data))
    }
}
