//! Parameters, sampled computation trees and the forward/backward passes.
//!
//! For a target node the K-hop neighborhood is sampled into a tree whose
//! level `l` nodes each own `fanout[l]` children. Layer `k` updates every
//! node at depth `0..=K-k`:
//!
//! ```text
//! x = [h_self ; sum_c alpha_c h_child]      (2d)
//! z = W_k x                                  (d)
//! a = relu(z)   (identity on the last layer)
//! h = a / |a|   (e1 when |a| < ZERO_GUARD)
//! ```

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::sampling::draw_neighbor_slot;
use super::{Aggregator, GnnConfig};
use crate::graph::BipartiteGraph;

/// Norm below which a representation is replaced by the first basis vector.
pub const ZERO_GUARD: f64 = 1e-12;

/// Trainable parameters: an input embedding per node and one `d x 2d`
/// matrix per hop, both row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GnnModel {
    pub(crate) dim: usize,
    pub(crate) inputs: Vec<f64>,
    pub(crate) weights: Vec<Vec<f64>>,
    pub(crate) aggregator: Aggregator,
}

impl GnnModel {
    /// Gaussian initialization: inputs with std `1/sqrt(d)`, weights with
    /// Glorot std `sqrt(2 / 3d)`.
    pub fn init<R: Rng + ?Sized>(node_count: usize, config: &GnnConfig, rng: &mut R) -> Self {
        let d = config.dim;
        let input_law = Normal::new(0.0, 1.0 / (d as f64).sqrt()).expect("finite std");
        let weight_law = Normal::new(0.0, (2.0 / (3 * d) as f64).sqrt()).expect("finite std");
        let inputs = (0..node_count * d).map(|_| input_law.sample(rng)).collect();
        let weights = (0..config.hops()).map(|_| (0..2 * d * d).map(|_| weight_law.sample(rng)).collect()).collect();
        Self { dim: d, inputs, weights, aggregator: config.aggregator }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hops(&self) -> usize {
        self.weights.len()
    }

    pub fn node_count(&self) -> usize {
        self.inputs.len() / self.dim
    }

    pub fn aggregator(&self) -> Aggregator {
        self.aggregator
    }

    /// Input embedding `r_i^0`.
    pub fn input(&self, node: usize) -> &[f64] {
        &self.inputs[node * self.dim..(node + 1) * self.dim]
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn inputs_mut(&mut self) -> &mut [f64] {
        &mut self.inputs
    }

    /// Weight matrix of hop `k` (0-based), `d x 2d` row-major.
    pub fn weight(&self, k: usize) -> &[f64] {
        &self.weights[k]
    }

    pub fn weight_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.weights[k]
    }

    pub fn is_finite(&self) -> bool {
        self.inputs.iter().chain(self.weights.iter().flatten()).all(|x| x.is_finite())
    }

    /// Samples a fresh K-hop tree around `root` and returns `r_root^K`.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        graph: &BipartiteGraph,
        root: usize,
        fanout: &[usize],
        rng: &mut R,
    ) -> Vec<f64> {
        let tree = ComputationTree::sample(graph, root, fanout, self.aggregator, rng);
        self.forward_tree(&tree).output().to_vec()
    }

    /// First-hop products for every node. Each row is computed on its own,
    /// so the result does not depend on `parallel`.
    pub fn project_inputs(&self, parallel: bool) -> InputProjection {
        let d = self.dim;
        let w = &self.weights[0];
        let n = self.node_count();
        let mut self_part = vec![0.0; n * d];
        let mut neigh_part = vec![0.0; n * d];
        let project = |(node, (s, q)): (usize, (&mut [f64], &mut [f64]))| {
            let x = self.input(node);
            for r in 0..d {
                let row = &w[r * 2 * d..(r + 1) * 2 * d];
                s[r] = dot(&row[..d], x);
                q[r] = dot(&row[d..], x);
            }
        };
        if parallel {
            self_part.par_chunks_mut(d).zip(neigh_part.par_chunks_mut(d)).enumerate().for_each(project);
        } else {
            self_part.chunks_mut(d).zip(neigh_part.chunks_mut(d)).enumerate().for_each(project);
        }
        InputProjection { dim: d, self_part, neigh_part }
    }

    /// Deterministic forward pass over a fixed tree.
    pub fn forward_tree(&self, tree: &ComputationTree) -> ForwardCache {
        self.forward_projected(tree, &self.project_inputs(false))
    }

    /// Forward pass reading the first hop from `proj`, which must come from
    /// this model's current parameters.
    pub fn forward_projected(&self, tree: &ComputationTree, proj: &InputProjection) -> ForwardCache {
        assert_eq!(tree.fanout.len(), self.hops(), "tree depth must equal hop count");
        let d = self.dim;
        let hops = self.hops();
        let mut reps: Vec<Vec<f64>> = Vec::with_capacity(hops);
        let mut layers = Vec::with_capacity(hops);

        for k in 1..=hops {
            let active = tree.level_start[hops - k + 1];
            let w = &self.weights[k - 1];
            let relu = k < hops;
            let mut layer = LayerCache {
                // the first hop's dW comes from the projection, not from x
                inputs: if k == 1 { Vec::new() } else { vec![0.0; active * 2 * d] },
                pre: vec![0.0; active * d],
                norms: vec![0.0; active],
                relu,
            };
            let mut out = vec![0.0; active * d];
            for g in 0..active {
                let z = &mut layer.pre[g * d..(g + 1) * d];
                if k == 1 {
                    z.copy_from_slice(proj.self_row(tree.nodes[g]));
                    for (c, alpha) in tree.children(g).zip(tree.coefficients(g)) {
                        for (acc, v) in z.iter_mut().zip(proj.neigh_row(tree.nodes[c])) {
                            *acc += alpha * v;
                        }
                    }
                } else {
                    let prev = &reps[k - 2];
                    let x = &mut layer.inputs[g * 2 * d..(g + 1) * 2 * d];
                    x[..d].copy_from_slice(&prev[g * d..(g + 1) * d]);
                    for (c, alpha) in tree.children(g).zip(tree.coefficients(g)) {
                        for (acc, v) in x[d..].iter_mut().zip(&prev[c * d..(c + 1) * d]) {
                            *acc += alpha * v;
                        }
                    }
                    for (row, zr) in z.iter_mut().enumerate() {
                        *zr = dot(&w[row * 2 * d..(row + 1) * 2 * d], x);
                    }
                }
                let h = &mut out[g * d..(g + 1) * d];
                for (hv, &zv) in h.iter_mut().zip(z.iter()) {
                    *hv = if relu { zv.max(0.0) } else { zv };
                }
                let norm = dot(h, h).sqrt();
                if norm < ZERO_GUARD {
                    h.fill(0.0);
                    h[0] = 1.0;
                    layer.norms[g] = 0.0;
                } else {
                    h.iter_mut().for_each(|v| *v /= norm);
                    layer.norms[g] = norm;
                }
            }
            layers.push(layer);
            reps.push(out);
        }
        ForwardCache { dim: d, reps, layers }
    }

    /// Back-propagates `grad_output = dL/dr_root^K` through `tree`,
    /// accumulating into `grads`. First-hop gradients stay in projection
    /// form until [`GnnModel::finish_first_hop`].
    pub fn backward_tree(
        &self,
        tree: &ComputationTree,
        cache: &ForwardCache,
        grad_output: &[f64],
        grads: &mut TreeGradients,
    ) {
        let d = self.dim;
        let hops = self.hops();
        // grad w.r.t. reps at layer k for the active nodes of layer k
        let mut grad_h = grad_output.to_vec();
        let mut da = vec![0.0; d];
        let mut dx = vec![0.0; 2 * d];
        for k in (1..=hops).rev() {
            let layer = &cache.layers[k - 1];
            let active = tree.level_start[hops - k + 1];
            // layer k reads slots through depth K-k+1
            let prev_active = tree.level_start[hops - k + 2];
            let w = &self.weights[k - 1];
            let out = &cache.reps[k - 1];
            let mut grad_prev = if k == 1 { Vec::new() } else { vec![0.0; prev_active * d] };
            for g in 0..active {
                let gh = &grad_h[g * d..(g + 1) * d];
                let norm = layer.norms[g];
                if norm == 0.0 {
                    continue;
                }
                let h = &out[g * d..(g + 1) * d];
                let proj = dot(h, gh);
                for ((dav, &ghv), &hv) in da.iter_mut().zip(gh).zip(h) {
                    *dav = (ghv - hv * proj) / norm;
                }
                if layer.relu {
                    for (dav, &zv) in da.iter_mut().zip(&layer.pre[g * d..(g + 1) * d]) {
                        if zv <= 0.0 {
                            *dav = 0.0;
                        }
                    }
                }
                if k == 1 {
                    let node = tree.nodes[g];
                    for (acc, v) in grads.proj_self[node * d..(node + 1) * d].iter_mut().zip(&da) {
                        *acc += v;
                    }
                    for (c, alpha) in tree.children(g).zip(tree.coefficients(g)) {
                        let node = tree.nodes[c];
                        for (acc, v) in grads.proj_neigh[node * d..(node + 1) * d].iter_mut().zip(&da) {
                            *acc += alpha * v;
                        }
                    }
                    continue;
                }
                let x = &layer.inputs[g * 2 * d..(g + 1) * 2 * d];
                let dw = &mut grads.weights[k - 1];
                dx.fill(0.0);
                for (row, &dz) in da.iter().enumerate() {
                    if dz == 0.0 {
                        continue;
                    }
                    let wrow = &w[row * 2 * d..(row + 1) * 2 * d];
                    let dwrow = &mut dw[row * 2 * d..(row + 1) * 2 * d];
                    for col in 0..2 * d {
                        dwrow[col] += dz * x[col];
                        dx[col] += dz * wrow[col];
                    }
                }
                for (acc, v) in grad_prev[g * d..(g + 1) * d].iter_mut().zip(&dx[..d]) {
                    *acc += v;
                }
                for (c, alpha) in tree.children(g).zip(tree.coefficients(g)) {
                    for (acc, v) in grad_prev[c * d..(c + 1) * d].iter_mut().zip(&dx[d..]) {
                        *acc += alpha * v;
                    }
                }
            }
            grad_h = grad_prev;
        }
    }

    /// Turns accumulated projection gradients into gradients of the first
    /// hop's weights (added to `weight_grad`) and of the input embeddings
    /// (added to `input_grads`, dense `node_count x d`).
    pub fn finish_first_hop(&self, grads: &TreeGradients, weight_grad: &mut [f64], input_grads: &mut [f64]) {
        let d = self.dim;
        let w = &self.weights[0];
        let rows = grads.proj_self.chunks_exact(d).zip(grads.proj_neigh.chunks_exact(d));
        for (node, (ds, dq)) in rows.enumerate() {
            if ds.iter().chain(dq).all(|&v| v == 0.0) {
                continue;
            }
            let x = self.input(node);
            let dx = &mut input_grads[node * d..(node + 1) * d];
            for r in 0..d {
                let (a, b) = (ds[r], dq[r]);
                let wrow = &w[r * 2 * d..(r + 1) * 2 * d];
                let gw = &mut weight_grad[r * 2 * d..(r + 1) * 2 * d];
                for c in 0..d {
                    gw[c] += a * x[c];
                    gw[d + c] += b * x[c];
                    dx[c] += a * wrow[c] + b * wrow[d + c];
                }
            }
        }
    }
}

/// `W_self r0` and `W_neigh r0` per node for the first hop, so each batch
/// multiplies every input once rather than once per tree slot.
#[derive(Clone, Debug)]
pub struct InputProjection {
    dim: usize,
    self_part: Vec<f64>,
    neigh_part: Vec<f64>,
}

impl InputProjection {
    fn self_row(&self, node: usize) -> &[f64] {
        &self.self_part[node * self.dim..(node + 1) * self.dim]
    }

    fn neigh_row(&self, node: usize) -> &[f64] {
        &self.neigh_part[node * self.dim..(node + 1) * self.dim]
    }
}
/// Dot product with four running sums, which lets the compiler vectorize.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a4, b4) = (a[..n].chunks_exact(4), b[..n].chunks_exact(4));
    let tail: f64 = a4.remainder().iter().zip(b4.remainder()).map(|(x, y)| x * y).sum();
    let mut acc = [0.0; 4];
    for (x, y) in a4.zip(b4) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// A sampled K-hop neighborhood, flattened level by level.
#[derive(Clone, Debug, PartialEq)]
pub struct ComputationTree {
    fanout: Vec<usize>,
    /// Graph node id per tree slot.
    nodes: Vec<usize>,
    /// Edge weight from each slot to its parent (root: 0).
    edge_weights: Vec<f64>,
    /// First slot of each level, plus a trailing total.
    level_start: Vec<usize>,
    aggregator: Aggregator,
}

impl ComputationTree {
    /// Samples children with weight-proportional draws (uniform draws for
    /// [`Aggregator::Uniform`]).
    pub fn sample<R: Rng + ?Sized>(
        graph: &BipartiteGraph,
        root: usize,
        fanout: &[usize],
        aggregator: Aggregator,
        rng: &mut R,
    ) -> Self {
        let mut nodes = vec![root];
        let mut edge_weights = vec![0.0];
        let mut level_start = vec![0, 1];
        for (l, &f) in fanout.iter().enumerate() {
            let (lo, hi) = (level_start[l], level_start[l + 1]);
            for slot in lo..hi {
                let parent = nodes[slot];
                let (nbrs, ws) = graph.neighbors(parent);
                for _ in 0..f {
                    let p = draw_neighbor_slot(graph, parent, aggregator == Aggregator::Uniform, rng);
                    nodes.push(nbrs[p]);
                    edge_weights.push(ws[p]);
                }
            }
            level_start.push(nodes.len());
        }
        Self { fanout: fanout.to_vec(), nodes, edge_weights, level_start, aggregator }
    }

    pub fn root(&self) -> usize {
        self.nodes[0]
    }

    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    fn level_of(&self, slot: usize) -> usize {
        self.level_start.partition_point(|&s| s <= slot) - 1
    }

    fn children(&self, slot: usize) -> std::ops::Range<usize> {
        let l = self.level_of(slot);
        let f = self.fanout[l];
        let first = self.level_start[l + 1] + (slot - self.level_start[l]) * f;
        first..first + f
    }

    fn coefficients(&self, slot: usize) -> impl Iterator<Item = f64> + '_ {
        let range = self.children(slot);
        let ws = &self.edge_weights[range];
        let total: f64 = ws.iter().sum();
        let n = ws.len() as f64;
        let agg = self.aggregator;
        ws.iter().map(move |w| match agg {
            Aggregator::Weighted => w / total,
            Aggregator::Uniform => 1.0 / n,
        })
    }
}

#[derive(Clone, Debug)]
struct LayerCache {
    inputs: Vec<f64>,
    pre: Vec<f64>,
    /// Post-activation norm per active slot; 0 marks a zero-guarded slot.
    norms: Vec<f64>,
    relu: bool,
}

/// Intermediate values of one forward pass, kept for backprop.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    dim: usize,
    reps: Vec<Vec<f64>>,
    layers: Vec<LayerCache>,
}

impl ForwardCache {
    /// Final representation of the root.
    pub fn output(&self) -> &[f64] {
        &self.reps.last().expect("at least one layer")[..self.dim]
    }

    /// Whether the root's final representation hit the zero guard.
    pub fn guarded(&self) -> bool {
        self.layers.last().is_some_and(|l| l.norms[0] == 0.0)
    }
}

/// Gradients from one or more trees: dense weight gradients for hops past
/// the first, and per-node gradients of the first-hop projections.
#[derive(Clone, Debug, PartialEq)]
pub struct TreeGradients {
    pub weights: Vec<Vec<f64>>,
    pub proj_self: Vec<f64>,
    pub proj_neigh: Vec<f64>,
}

impl TreeGradients {
    pub fn zeros(model: &GnnModel) -> Self {
        Self {
            weights: model.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            proj_self: vec![0.0; model.inputs.len()],
            proj_neigh: vec![0.0; model.inputs.len()],
        }
    }

    /// Element-wise `self += other`.
    pub fn add(&mut self, other: &TreeGradients) {
        let pairs = self.weights.iter_mut().zip(&other.weights).map(|(a, b)| (a.as_mut_slice(), b.as_slice()));
        let pairs = pairs
            .chain([(self.proj_self.as_mut_slice(), other.proj_self.as_slice())])
            .chain([(self.proj_neigh.as_mut_slice(), other.proj_neigh.as_slice())]);
        for (a, b) in pairs {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }
}

/// Weighted aggregation: `sum_u (w_u / sum w) r_u`. A repeated neighbor
/// contributes once per occurrence.
pub fn weighted_mean(weights: &[f64], reps: &[&[f64]]) -> Vec<f64> {
    assert_eq!(weights.len(), reps.len());
    assert!(!reps.is_empty(), "empty neighborhood");
    let total: f64 = weights.iter().sum();
    let mut out = vec![0.0; reps[0].len()];
    for (w, r) in weights.iter().zip(reps) {
        for (o, v) in out.iter_mut().zip(r.iter()) {
            *o += w / total * v;
        }
    }
    out
}

/// Plain mean of the sampled representations.
pub fn uniform_mean(reps: &[&[f64]]) -> Vec<f64> {
    weighted_mean(&vec![1.0; reps.len()], reps)
}

/// `AGGREGATE^w` for `target` over the sampled multiset `sampled`, whose
/// representations are `reps` (same order). Panics if a sampled node is not
/// adjacent to `target`.
pub fn aggregate_weighted(graph: &BipartiteGraph, target: usize, sampled: &[usize], reps: &[&[f64]]) -> Vec<f64> {
    let weights: Vec<f64> = sampled
        .iter()
        .map(|&u| graph.edge_weight(target, u).expect("valid node ids").expect("sampled node is a neighbor"))
        .collect();
    weighted_mean(&weights, reps)
}

/// Attention-free aggregation: every sampled neighbor weighs `1/|N'|`.
pub fn aggregate_uniform(reps: &[&[f64]]) -> Vec<f64> {
    uniform_mean(reps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn equal_weights_average() {
        let a = [1.0, 0.0, 0.0];
        let b = [0.0, 1.0, 0.0];
        assert_eq!(weighted_mean(&[5.0, 5.0], &[&a, &b]), vec![0.5, 0.5, 0.0]);
    }

    #[test]
    fn single_neighbor_identity() {
        let a = [0.6, 0.8];
        assert_eq!(weighted_mean(&[42.0], &[&a]), a.to_vec());
        assert_eq!(uniform_mean(&[&a]), a.to_vec());
    }

    #[test]
    fn sixty_twenty_split() {
        let e1 = [1.0, 0.0];
        let e2 = [0.0, 1.0];
        assert_eq!(weighted_mean(&[60.0, 20.0], &[&e1, &e2]), vec![0.75, 0.25]);
        assert_eq!(uniform_mean(&[&e1, &e2]), vec![0.5, 0.5]);
    }

    #[test]
    fn identical_reps_uniform() {
        let r = [0.3, -0.4];
        assert_eq!(uniform_mean(&[&r, &r, &r, &r]), r.to_vec());
    }

    #[test]
    fn multiplicity_multiplies_weight() {
        let e1 = [1.0, 0.0];
        let e2 = [0.0, 1.0];
        let twice = weighted_mean(&[20.0, 20.0, 40.0], &[&e1, &e1, &e2]);
        let merged = weighted_mean(&[40.0, 40.0], &[&e1, &e2]);
        assert_eq!(twice, merged);
    }

    proptest! {
        #[test]
        fn uniform_matches_weighted_with_equal_weights(
            w in 0.1f64..200.0,
            reps in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 4), 1..8),
        ) {
            let views: Vec<&[f64]> = reps.iter().map(|r| r.as_slice()).collect();
            let a = weighted_mean(&vec![w; views.len()], &views);
            let b = uniform_mean(&views);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn weighted_mean_in_convex_hull(
            ws in prop::collection::vec(0.01f64..120.0, 1..8),
            seed in 0u64..1000,
        ) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let reps: Vec<Vec<f64>> = ws.iter().map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            let views: Vec<&[f64]> = reps.iter().map(|r| r.as_slice()).collect();
            let out = weighted_mean(&ws, &views);
            // Coordinate-wise bounds are necessary for hull membership.
            for c in 0..3 {
                let lo = reps.iter().map(|r| r[c]).fold(f64::INFINITY, f64::min);
                let hi = reps.iter().map(|r| r[c]).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(out[c] >= lo - 1e-12 && out[c] <= hi + 1e-12);
            }
        }

        #[test]
        fn scaling_weights_is_exact_identity(
            ws in prop::collection::vec(0.01f64..120.0, 1..8),
            exp in -4i32..6,
        ) {
            let scale = 2f64.powi(exp);
            let reps: Vec<Vec<f64>> = (0..ws.len()).map(|i| vec![i as f64, 1.0]).collect();
            let views: Vec<&[f64]> = reps.iter().map(|r| r.as_slice()).collect();
            let scaled: Vec<f64> = ws.iter().map(|w| w * scale).collect();
            prop_assert_eq!(weighted_mean(&ws, &views), weighted_mean(&scaled, &views));
        }
    }
}
