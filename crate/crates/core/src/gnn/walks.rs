//! Short random walks and the positive co-occurrence pairs they induce.

use rand::Rng;

use super::sampling::draw_neighbor_slot;
use super::{GnnConfig, WalkLaw};
use crate::graph::BipartiteGraph;

/// `walks_per_node` walks from every node, each `walk_length` steps long
/// (so `walk_length + 1` node ids), node-major order.
pub fn generate_walks<R: Rng + ?Sized>(graph: &BipartiteGraph, config: &GnnConfig, rng: &mut R) -> Vec<Vec<usize>> {
    let mut walks = Vec::with_capacity(graph.node_count() * config.walks_per_node);
    for start in 0..graph.node_count() {
        for _ in 0..config.walks_per_node {
            let mut walk = Vec::with_capacity(config.walk_length + 1);
            walk.push(start);
            let mut at = start;
            for _ in 0..config.walk_length {
                let slot = draw_neighbor_slot(graph, at, config.walk_law == WalkLaw::Uniform, rng);
                at = graph.neighbors(at).0[slot];
                walk.push(at);
            }
            walks.push(walk);
        }
    }
    walks
}

/// All unordered pairs of distinct nodes co-occurring in a walk, one entry
/// per pair of walk positions.
pub fn walk_pairs(walks: &[Vec<usize>]) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for walk in walks {
        for (p, &a) in walk.iter().enumerate() {
            for &b in &walk[p + 1..] {
                if a != b {
                    pairs.push((a, b));
                }
            }
        }
    }
    pairs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_graph;
    use crate::ingest::{Dataset, Reading, ScanRecord};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rec(id: &str, anchor: bool, scan: &[(&str, f64)]) -> ScanRecord {
        ScanRecord {
            id: id.into(),
            floor: Some(1),
            anchor,
            readings: scan.iter().map(|&(m, r)| Reading { mac: m.into(), rss: r }).collect(),
        }
    }

    #[test]
    fn single_edge_components_alternate() {
        // Three disjoint MAC-sample edges.
        let ds = Dataset::new(
            vec![rec("a", true, &[("x", -50.0)]), rec("b", false, &[("y", -50.0)]), rec("c", false, &[("z", -50.0)])],
            3,
        )
        .unwrap();
        let g = build_graph(&ds, 120.0).unwrap();
        let cfg = GnnConfig { walks_per_node: 3, ..Default::default() };
        let walks = generate_walks(&g, &cfg, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(walks.len(), 3 * g.node_count());
        for w in &walks {
            assert_eq!(w.len(), 6);
            for pair in w.windows(2) {
                assert!(g.edge_weight(pair[0], pair[1]).unwrap().is_some());
            }
            assert_eq!(w[0], w[2]);
            assert_eq!(w[1], w[3]);
        }
        // alternating walk of two nodes: 3*3 = 9 distinct-node position pairs
        assert_eq!(walk_pairs(&walks[..1]).len(), 9);
    }

    #[test]
    fn corpus_size() {
        let ds = Dataset::new(
            vec![
                rec("a", true, &[("x", -50.0), ("y", -70.0)]),
                rec("b", false, &[("y", -50.0)]),
                rec("c", false, &[("x", -50.0), ("z", -90.0)]),
            ],
            3,
        )
        .unwrap();
        let g = build_graph(&ds, 120.0).unwrap();
        let cfg = GnnConfig { walks_per_node: 7, ..Default::default() };
        let walks = generate_walks(&g, &cfg, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(walks.len(), 7 * 6);
    }

    #[test]
    fn heavy_edge_pairs_dominate() {
        // Scan s sees strong mac "hi" (w=100) and weak mac "lo" (w=10).
        let ds = Dataset::new(
            vec![
                rec("s", true, &[("hi", -20.0), ("lo", -110.0)]),
                rec("b", false, &[("hi", -60.0)]),
                rec("c", false, &[("lo", -60.0)]),
            ],
            3,
        )
        .unwrap();
        let g = build_graph(&ds, 120.0).unwrap();
        let (hi, lo, s) = (0, 1, g.sample_node(0));
        let cfg = GnnConfig { walks_per_node: 10_000 / g.node_count() + 1, ..Default::default() };
        let walks = generate_walks(&g, &cfg, &mut ChaCha8Rng::seed_from_u64(2));
        let pairs = walk_pairs(&walks);
        let count = |a: usize, b: usize| pairs.iter().filter(|&&(x, y)| (x, y) == (a, b) || (x, y) == (b, a)).count();
        assert!(count(s, hi) > count(s, lo), "{} vs {}", count(s, hi), count(s, lo));
    }

    #[test]
    fn uniform_law_is_deterministic_under_seed() {
        let ds = Dataset::new(
            vec![
                rec("a", true, &[("x", -50.0), ("y", -70.0)]),
                rec("b", false, &[("y", -50.0)]),
                rec("c", false, &[("x", -50.0)]),
            ],
            3,
        )
        .unwrap();
        let g = build_graph(&ds, 120.0).unwrap();
        let cfg = GnnConfig { walk_law: WalkLaw::Uniform, walks_per_node: 4, ..Default::default() };
        let a = generate_walks(&g, &cfg, &mut ChaCha8Rng::seed_from_u64(4));
        let b = generate_walks(&g, &cfg, &mut ChaCha8Rng::seed_from_u64(4));
        assert_eq!(a, b);
    }
}
