//! Shared fixtures for the integration tests.
#![allow(dead_code)]

pub mod oracles;

use floorid::gnn::{loss_and_grad_planned, BatchPlan, GnnConfig, GnnModel, NegativeSampler};
use floorid::graph::{build_graph, BipartiteGraph};
use floorid::ingest::{Dataset, Reading, ScanRecord};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn record(id: &str, floor: u32, anchor: bool, scan: &[(&str, f64)]) -> ScanRecord {
    ScanRecord {
        id: id.into(),
        floor: Some(floor),
        anchor,
        readings: scan.iter().map(|&(m, r)| Reading { mac: m.into(), rss: r }).collect(),
    }
}

/// Random connected-ish scan graph with at most 12 nodes.
pub fn toy_graph(seed: u64) -> BipartiteGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = rng.random_range(3..=6);
    let macs: Vec<String> = (0..rng.random_range(3..=12 - samples)).map(|m| format!("m{m}")).collect();
    let records = (0..samples)
        .map(|s| {
            let k = rng.random_range(1..=macs.len());
            let readings = macs
                .choose_multiple(&mut rng, k)
                .map(|m| Reading { mac: m.clone(), rss: rng.random_range(-110.0..-20.0) })
                .collect();
            ScanRecord { id: format!("s{s}"), floor: Some(1), anchor: s == 0, readings }
        })
        .collect();
    let ds = Dataset::new(records, 3).unwrap();
    build_graph(&ds, 120.0).unwrap()
}

pub fn small_config(seed: u64) -> GnnConfig {
    GnnConfig { dim: 4, fanout: vec![3, 2], negatives: 2, seed, deterministic: true, ..Default::default() }
}

/// A fixed batch of random pairs over the graph.
pub fn frozen_plan(graph: &BipartiteGraph, config: &GnnConfig, seed: u64) -> BatchPlan {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = graph.node_count();
    let pairs = (0..5)
        .map(|_| {
            let i = rng.random_range(0..n);
            let j = (i + rng.random_range(1..n)) % n;
            (i, j)
        })
        .collect();
    BatchPlan::sample(graph, config, pairs, &NegativeSampler::new(graph), &mut rng)
}

/// Largest relative error between the analytic gradient and central
/// differences, over every parameter.
pub fn max_gradient_error(model: &GnnModel, plan: &BatchPlan, h: f64) -> f64 {
    let (_, grads) = loss_and_grad_planned(model, plan, false);
    let loss = |m: &GnnModel| loss_and_grad_planned(m, plan, false).0;
    let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-5);
    let mut worst: f64 = 0.0;
    let mut probe = model.clone();
    for p in 0..model.inputs().len() {
        let orig = probe.inputs()[p];
        probe.inputs_mut()[p] = orig + h;
        let up = loss(&probe);
        probe.inputs_mut()[p] = orig - h;
        let down = loss(&probe);
        probe.inputs_mut()[p] = orig;
        worst = worst.max(rel(grads.inputs[p], (up - down) / (2.0 * h)));
    }
    for k in 0..model.hops() {
        for p in 0..model.weight(k).len() {
            let orig = probe.weight(k)[p];
            probe.weight_mut(k)[p] = orig + h;
            let up = loss(&probe);
            probe.weight_mut(k)[p] = orig - h;
            let down = loss(&probe);
            probe.weight_mut(k)[p] = orig;
            worst = worst.max(rel(grads.weights[k][p], (up - down) / (2.0 * h)));
        }
    }
    worst
}
