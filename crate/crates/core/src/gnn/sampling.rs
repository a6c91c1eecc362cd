//! Weight-proportional neighbor sampling and the degree-biased negative law.

use rand::Rng;

use crate::graph::BipartiteGraph;

/// Draws an index from running sums `cumulative` with probability
/// proportional to each increment.
fn draw_cumulative<R: Rng + ?Sized>(cumulative: &[f64], rng: &mut R) -> usize {
    let total = *cumulative.last().expect("non-empty distribution");
    let x = rng.random::<f64>() * total;
    // First slot whose running sum exceeds x.
    cumulative.partition_point(|&c| c <= x).min(cumulative.len() - 1)
}

/// Positions (into `graph.neighbors(node)`) of `count` draws with replacement,
/// each chosen with probability `w_u / sum(w)`.
pub fn sample_neighbor_slots<R: Rng + ?Sized>(
    graph: &BipartiteGraph,
    node: usize,
    count: usize,
    rng: &mut R,
) -> Vec<usize> {
    let cumulative = graph.cumulative_weights(node);
    assert!(!cumulative.is_empty(), "node {node} has no neighbors");
    (0..count).map(|_| draw_cumulative(cumulative, rng)).collect()
}

/// One neighbor position of `node`, weight-proportional or uniform.
pub(crate) fn draw_neighbor_slot<R: Rng + ?Sized>(
    graph: &BipartiteGraph,
    node: usize,
    uniform: bool,
    rng: &mut R,
) -> usize {
    if uniform {
        rng.random_range(0..graph.neighbors(node).0.len())
    } else {
        draw_cumulative(graph.cumulative_weights(node), rng)
    }
}

/// Same as [`sample_neighbor_slots`] but every neighbor is equally likely.
pub fn sample_neighbor_slots_uniform<R: Rng + ?Sized>(
    graph: &BipartiteGraph,
    node: usize,
    count: usize,
    rng: &mut R,
) -> Vec<usize> {
    let degree = graph.neighbors(node).0.len();
    assert!(degree > 0, "node {node} has no neighbors");
    (0..count).map(|_| rng.random_range(0..degree)).collect()
}

/// Multiset of `count` neighbors of `node`, drawn independently with
/// probability proportional to edge weight.
pub fn sample_neighbors<R: Rng + ?Sized>(graph: &BipartiteGraph, node: usize, count: usize, rng: &mut R) -> Vec<usize> {
    let (nbrs, _) = graph.neighbors(node);
    sample_neighbor_slots(graph, node, count, rng).into_iter().map(|slot| nbrs[slot]).collect()
}

/// Negative-sampling distribution over all nodes, `Pr(z) ∝ degree(z)^0.75`.
#[derive(Clone, Debug)]
pub struct NegativeSampler {
    cumulative: Vec<f64>,
}

impl NegativeSampler {
    pub const EXPONENT: f64 = 0.75;

    pub fn new(graph: &BipartiteGraph) -> Self {
        let mut acc = 0.0;
        let cumulative = (0..graph.node_count())
            .map(|z| {
                acc += (graph.neighbors(z).0.len() as f64).powf(Self::EXPONENT);
                acc
            })
            .collect();
        Self { cumulative }
    }

    /// Closed-form probability of drawing `node`.
    pub fn probability(&self, node: usize) -> f64 {
        let prev = if node == 0 { 0.0 } else { self.cumulative[node - 1] };
        (self.cumulative[node] - prev) / self.cumulative.last().copied().unwrap_or(1.0)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        draw_cumulative(&self.cumulative, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_graph;
    use crate::ingest::{Dataset, Reading, ScanRecord};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// One sample node per entry of `rss`, all seeing one hub MAC, plus
    /// filler records so the dataset is valid.
    fn star(rss: &[f64]) -> BipartiteGraph {
        let mut recs = vec![ScanRecord {
            id: "hub-scan".into(),
            floor: Some(1),
            anchor: true,
            readings: rss.iter().enumerate().map(|(i, &r)| Reading { mac: format!("m{i}"), rss: r }).collect(),
        }];
        for i in 0..2 {
            recs.push(ScanRecord {
                id: format!("pad{i}"),
                floor: None,
                anchor: false,
                readings: vec![Reading { mac: "m0".into(), rss: -50.0 }],
            });
        }
        build_graph(&Dataset::new(recs, 3).unwrap(), 120.0).unwrap()
    }

    /// Pearson chi-square statistic of observed counts against probabilities.
    fn chi_square(counts: &[usize], probs: &[f64]) -> f64 {
        let n: usize = counts.iter().sum();
        counts
            .iter()
            .zip(probs)
            .map(|(&c, &p)| {
                let e = p * n as f64;
                (c as f64 - e).powi(2) / e
            })
            .sum()
    }

    fn frequencies(g: &BipartiteGraph, node: usize, draws: usize, seed: u64) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (nbrs, _) = g.neighbors(node);
        let mut counts = vec![0; nbrs.len()];
        for u in sample_neighbors(g, node, draws, &mut rng) {
            counts[nbrs.iter().position(|&x| x == u).unwrap()] += 1;
        }
        counts
    }

    #[test]
    fn two_neighbors_sixty_twenty() {
        // rss -60, -100 => weights 60, 20
        let g = star(&[-60.0, -100.0]);
        let counts = frequencies(&g, g.sample_node(0), 10_000, 1);
        let p = 0.75;
        let sigma = (p * (1.0 - p) / 10_000.0f64).sqrt();
        let freq = counts[0] as f64 / 10_000.0;
        assert!((freq - p).abs() < 3.0 * sigma, "freq {freq}");
    }

    #[test]
    fn single_neighbor_always_chosen() {
        let g = star(&[-70.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let draws = sample_neighbors(&g, g.sample_node(1), 50, &mut rng);
        assert_eq!(draws, vec![0; 50]);
    }

    #[test]
    fn thirty_thirty_forty_chi_square() {
        let g = star(&[-90.0, -90.0, -80.0]);
        let big = frequencies(&g, g.sample_node(0), 1_000_000, 8);
        for (c, p) in big.iter().zip([0.3, 0.3, 0.4]) {
            assert!((*c as f64 / 1e6 - p).abs() < 2e-3);
        }
        let counts = frequencies(&g, g.sample_node(0), 10_000, 21);
        // 2 degrees of freedom, 99.9% quantile = 13.82
        let stat = chi_square(&counts, &[0.3, 0.3, 0.4]);
        assert!(stat < 13.82, "chi-square {stat}");
        for (c, p) in counts.iter().zip([0.3, 0.3, 0.4]) {
            let sigma = (p * (1.0 - p) / 10_000.0f64).sqrt();
            assert!((*c as f64 / 10_000.0 - p).abs() < 3.0 * sigma);
        }
    }

    #[test]
    fn uniform_slots_ignore_weights() {
        let g = star(&[-119.0, -1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let slots = sample_neighbor_slots_uniform(&g, g.sample_node(0), 10_000, &mut rng);
        let ones = slots.iter().filter(|&&s| s == 1).count() as f64 / 10_000.0;
        assert!((ones - 0.5).abs() < 3.0 * 0.005);
    }

    #[test]
    fn negative_law_degree_power() {
        // Hub MAC m0 sits in all 3 records; node degrees: m0=3, m1..m15=1, scans 16,1,1
        let rss: Vec<f64> = (0..16).map(|i| -40.0 - i as f64).collect();
        let g = star(&rss);
        let sampler = NegativeSampler::new(&g);
        let degrees: Vec<f64> = (0..g.node_count()).map(|z| g.degree(z).unwrap() as f64).collect();
        let norm: f64 = degrees.iter().map(|d| d.powf(0.75)).sum();
        let hub_scan = g.sample_node(0);
        assert_eq!(degrees[hub_scan], 16.0);
        let closed = 16f64.powf(0.75) / norm;
        assert!((sampler.probability(hub_scan) - closed).abs() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 100_000;
        let hits = (0..n).filter(|_| sampler.sample(&mut rng) == hub_scan).count();
        let sigma = (closed * (1.0 - closed) / n as f64).sqrt();
        assert!((hits as f64 / n as f64 - closed).abs() < 3.0 * sigma);
    }

    #[test]
    fn scaling_weights_leaves_draws_unchanged() {
        let g = star(&[-60.0, -100.0, -90.0]);
        let cum = g.cumulative_weights(g.sample_node(0));
        let scaled: Vec<f64> = cum.iter().map(|c| c * 4.0).collect();
        let mut a = ChaCha8Rng::seed_from_u64(9);
        let mut b = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..5_000 {
            assert_eq!(draw_cumulative(cum, &mut a), draw_cumulative(&scaled, &mut b));
        }
    }
}
