//! Floor identification for crowdsourced RF scans given a single
//! floor-labeled scan.
//!
//! The pipeline builds a bipartite MAC/scan graph, learns node embeddings
//! with an edge-weight attention GNN, clusters the scan embeddings into one
//! group per floor, and orders the groups by signal spillover: adjacent
//! floors share more access points, so the floor order is the Hamiltonian
//! path that maximizes adjacent-cluster similarity, anchored at the labeled
//! scan.

pub mod clustering;
pub mod gnn;
pub mod graph;
pub mod indexing;
pub mod ingest;
pub mod metrics;
pub mod pipeline;
pub mod synth;
