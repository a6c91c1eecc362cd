//! Negative-sampling objective and its exact gradient.
//!
//! Per positive pair `(i, j)` with negatives `z_1..z_tau`:
//!
//! ```text
//! L = -ln s(r_i . r_j) - sum_t ln s(-r_i . r_{z_t}),   s(x) = 1 / (1 + e^-x)
//! ```
//!
//! The batch loss is the mean over pairs.

use std::collections::HashMap;

use rand::Rng;
use rayon::prelude::*;

use super::model::{ComputationTree, GnnModel, TreeGradients};
use super::sampling::NegativeSampler;
use super::GnnConfig;
use crate::graph::BipartiteGraph;

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Trees per partial gradient sum.
const REDUCE_CHUNK: usize = 64;

/// Loss of one positive pair against its negatives.
pub fn pair_loss(ri: &[f64], rj: &[f64], negatives: &[&[f64]]) -> f64 {
    softplus(-dot(ri, rj)) + negatives.iter().map(|rz| softplus(dot(ri, rz))).sum::<f64>()
}

/// Everything random about one batch, fixed up front: pairs, negative
/// draws (`negatives_per_pair` per pair) and one tree per distinct node.
#[derive(Clone, Debug)]
pub struct BatchPlan {
    pairs: Vec<(usize, usize)>,
    negatives: Vec<usize>,
    negatives_per_pair: usize,
    trees: Vec<ComputationTree>,
    tree_of: HashMap<usize, usize>,
}

impl BatchPlan {
    /// Builds a plan from explicit trees. Every node referenced by a pair or
    /// negative must be the root of exactly one tree.
    pub fn new(
        pairs: Vec<(usize, usize)>,
        negatives: Vec<usize>,
        negatives_per_pair: usize,
        trees: Vec<ComputationTree>,
    ) -> Self {
        assert!(!pairs.is_empty(), "empty batch");
        assert_eq!(negatives.len(), pairs.len() * negatives_per_pair);
        let tree_of: HashMap<usize, usize> = trees.iter().enumerate().map(|(t, tree)| (tree.root(), t)).collect();
        assert_eq!(tree_of.len(), trees.len(), "duplicate tree roots");
        for n in pairs.iter().flat_map(|&(i, j)| [i, j]).chain(negatives.iter().copied()) {
            assert!(tree_of.contains_key(&n), "node {n} has no tree");
        }
        Self { pairs, negatives, negatives_per_pair, trees, tree_of }
    }

    /// Draws negatives and one neighborhood tree per distinct node, in order
    /// of first appearance.
    pub fn sample<R: Rng + ?Sized>(
        graph: &BipartiteGraph,
        config: &GnnConfig,
        pairs: Vec<(usize, usize)>,
        sampler: &NegativeSampler,
        rng: &mut R,
    ) -> Self {
        let tau = config.negatives;
        let negatives: Vec<usize> = (0..pairs.len() * tau).map(|_| sampler.sample(rng)).collect();
        let mut seen = HashMap::new();
        let mut trees = Vec::new();
        let order = pairs.iter().flat_map(|&(i, j)| [i, j]).chain(negatives.iter().copied());
        for n in order {
            if seen.insert(n, ()).is_none() {
                trees.push(ComputationTree::sample(graph, n, &config.fanout, config.aggregator, rng));
            }
        }
        Self::new(pairs, negatives, tau, trees)
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn trees(&self) -> &[ComputationTree] {
        &self.trees
    }

    fn negatives_of(&self, p: usize) -> &[usize] {
        let t = self.negatives_per_pair;
        &self.negatives[p * t..(p + 1) * t]
    }
}

/// Dense gradients for every parameter of a [`GnnModel`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub inputs: Vec<f64>,
    pub weights: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros(model: &GnnModel) -> Self {
        Self {
            inputs: vec![0.0; model.inputs().len()],
            weights: (0..model.hops()).map(|k| vec![0.0; model.weight(k).len()]).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.inputs.iter().chain(self.weights.iter().flatten()).all(|x| x.is_finite())
    }
}

/// Mean loss and exact gradients for a fixed plan. `parallel` only changes
/// where the per-tree work runs; reductions happen in tree order either way.
pub fn loss_and_grad_planned(model: &GnnModel, plan: &BatchPlan, parallel: bool) -> (f64, Gradients) {
    let parallel = parallel && rayon::current_num_threads() > 1;
    let proj = model.project_inputs(parallel);
    let forward = |tree: &ComputationTree| model.forward_projected(tree, &proj);
    let caches: Vec<_> =
        if parallel { plan.trees.par_iter().map(forward).collect() } else { plan.trees.iter().map(forward).collect() };
    let rep = |n: usize| caches[plan.tree_of[&n]].output();

    let d = model.dim();
    let scale = 1.0 / plan.pairs.len() as f64;
    let mut out_grads = vec![vec![0.0; d]; plan.trees.len()];
    let mut total = 0.0;
    for (p, &(i, j)) in plan.pairs.iter().enumerate() {
        let (ri, rj) = (rep(i), rep(j));
        let s = dot(ri, rj);
        total += softplus(-s);
        // d/ds softplus(-s) = -(1 - sigmoid(s))
        let c = -(1.0 - sigmoid(s)) * scale;
        let (ti, tj) = (plan.tree_of[&i], plan.tree_of[&j]);
        for a in 0..d {
            out_grads[ti][a] += c * rj[a];
            out_grads[tj][a] += c * ri[a];
        }
        for &z in plan.negatives_of(p) {
            let rz = rep(z);
            let s = dot(ri, rz);
            total += softplus(s);
            let c = sigmoid(s) * scale;
            let tz = plan.tree_of[&z];
            for a in 0..d {
                out_grads[ti][a] += c * rz[a];
                out_grads[tz][a] += c * ri[a];
            }
        }
    }

    // Trees are reduced in fixed-size chunks so the summation order, and
    // hence every bit of the result, is independent of the thread count.
    let backward = |chunk: usize| {
        let mut g = TreeGradients::zeros(model);
        let end = ((chunk + 1) * REDUCE_CHUNK).min(plan.trees.len());
        for t in chunk * REDUCE_CHUNK..end {
            model.backward_tree(&plan.trees[t], &caches[t], &out_grads[t], &mut g);
        }
        g
    };
    let chunks = plan.trees.len().div_ceil(REDUCE_CHUNK);
    let partial: Vec<TreeGradients> = if parallel {
        (0..chunks).into_par_iter().map(backward).collect()
    } else {
        (0..chunks).map(backward).collect()
    };

    let mut sum = TreeGradients::zeros(model);
    for g in &partial {
        sum.add(g);
    }
    let mut grads = Gradients::zeros(model);
    model.finish_first_hop(&sum, &mut grads.weights[0], &mut grads.inputs);
    for (acc, w) in grads.weights.iter_mut().zip(&sum.weights) {
        acc.iter_mut().zip(w).for_each(|(a, b)| *a += b);
    }
    (total * scale, grads)
}

/// Samples a plan for `pairs` and evaluates it.
pub fn loss_and_grad<R: Rng + ?Sized>(
    model: &GnnModel,
    graph: &BipartiteGraph,
    config: &GnnConfig,
    pairs: Vec<(usize, usize)>,
    sampler: &NegativeSampler,
    rng: &mut R,
) -> (f64, Gradients) {
    let plan = BatchPlan::sample(graph, config, pairs, sampler, rng);
    loss_and_grad_planned(model, &plan, !config.deterministic)
}
