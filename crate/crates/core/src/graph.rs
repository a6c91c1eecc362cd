//! Weighted bipartite graph of MAC nodes and scan (sample) nodes.
//!
//! MAC nodes occupy ids `0..mac_count`, sample nodes follow at
//! `mac_count..mac_count + sample_count`, both in first-seen order. An edge
//! joins a MAC and a sample iff the scan detected that MAC, with weight
//! `rss + c`.

use std::io::Write;

use crate::ingest::Dataset;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GraphError {
    #[error("offset c = {c} does not make rss {rss} positive (record {record})")]
    NonPositiveWeight { record: String, rss: f64, c: f64 },
    #[error("node {node} out of range (graph has {count} nodes)")]
    NodeOutOfRange { node: usize, count: usize },
}

/// Immutable CSR adjacency with precomputed weights.
#[derive(Clone, Debug)]
pub struct BipartiteGraph {
    mac_count: usize,
    sample_count: usize,
    offset: f64,
    row_start: Vec<usize>,
    neighbors: Vec<usize>,
    weights: Vec<f64>,
    /// Running weight sums per row, for weight-proportional sampling.
    cumulative: Vec<f64>,
}

impl BipartiteGraph {
    /// Builds the graph with edge weights `rss + c`.
    pub fn build(dataset: &Dataset, c: f64) -> Result<Self, GraphError> {
        let macs = dataset.mac_universe();
        let mac_count = macs.len();
        let sample_count = dataset.records().len();
        let n = mac_count + sample_count;

        let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for (v, record) in dataset.records().iter().enumerate() {
            let sample = mac_count + v;
            for reading in &record.readings {
                let w = reading.rss + c;
                if !(w > 0.0 && w.is_finite()) {
                    return Err(GraphError::NonPositiveWeight { record: record.id.clone(), rss: reading.rss, c });
                }
                let u = macs.get_index_of(reading.mac.as_str()).expect("mac universe covers every reading");
                adj[sample].push((u, w));
                adj[u].push((sample, w));
            }
        }

        let mut row_start = Vec::with_capacity(n + 1);
        let mut neighbors = Vec::new();
        let mut weights = Vec::new();
        let mut cumulative = Vec::new();
        row_start.push(0);
        for row in adj {
            let mut acc = 0.0;
            for (u, w) in row {
                neighbors.push(u);
                weights.push(w);
                acc += w;
                cumulative.push(acc);
            }
            row_start.push(neighbors.len());
        }

        Ok(Self { mac_count, sample_count, offset: c, row_start, neighbors, weights, cumulative })
    }

    pub fn node_count(&self) -> usize {
        self.mac_count + self.sample_count
    }

    pub fn mac_count(&self) -> usize {
        self.mac_count
    }

    pub fn sample_count(&self) -> usize {
        self.sample_count
    }

    /// The dBm offset `c` used for the weights.
    pub fn offset(&self) -> f64 {
        self.offset
    }

    /// Node id of the `v`-th record.
    pub fn sample_node(&self, v: usize) -> usize {
        self.mac_count + v
    }

    pub fn is_mac(&self, node: usize) -> bool {
        node < self.mac_count
    }

    /// Number of undirected edges (one per reading).
    pub fn edge_count(&self) -> usize {
        self.neighbors.len() / 2
    }

    fn check(&self, node: usize) -> Result<(), GraphError> {
        if node < self.node_count() {
            Ok(())
        } else {
            Err(GraphError::NodeOutOfRange { node, count: self.node_count() })
        }
    }

    pub fn degree(&self, node: usize) -> Result<usize, GraphError> {
        self.check(node)?;
        Ok(self.row_start[node + 1] - self.row_start[node])
    }

    /// Weight of edge `(u, v)`, `None` for a non-edge.
    pub fn edge_weight(&self, u: usize, v: usize) -> Result<Option<f64>, GraphError> {
        self.check(u)?;
        self.check(v)?;
        let (nbrs, ws) = self.neighbors(u);
        Ok(nbrs.iter().position(|&x| x == v).map(|i| ws[i]))
    }

    /// Neighbor ids and edge weights of `node`. Panics on an invalid id.
    pub fn neighbors(&self, node: usize) -> (&[usize], &[f64]) {
        let range = self.row_start[node]..self.row_start[node + 1];
        (&self.neighbors[range.clone()], &self.weights[range])
    }

    /// Running weight sums for `node`'s row; the last entry is the total.
    pub(crate) fn cumulative_weights(&self, node: usize) -> &[f64] {
        &self.cumulative[self.row_start[node]..self.row_start[node + 1]]
    }

    /// Writes "mac_idx sample_idx weight" lines, sample index relative to
    /// the first sample node.
    pub fn write_edge_list<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for u in 0..self.mac_count {
            let (nbrs, ws) = self.neighbors(u);
            for (&v, &w) in nbrs.iter().zip(ws) {
                writeln!(out, "{} {} {}", u, v - self.mac_count, w)?;
            }
        }
        Ok(())
    }
}

pub fn build_graph(dataset: &Dataset, c: f64) -> Result<BipartiteGraph, GraphError> {
    BipartiteGraph::build(dataset, c)
}
