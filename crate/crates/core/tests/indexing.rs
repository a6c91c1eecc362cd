//! Path solvers against exhaustive search, and floor ordering on buildings
//! with known spillover.

mod common;

use common::oracles::exhaustive_path;
use common::record;
use floorid::clustering::{mac_frequency_profile, Clustering};
use floorid::indexing::{
    build_similarity, index_arbitrary_anchor, index_bottom_anchor, jaccard_adapted, jaccard_plain, solve_2opt,
    solve_exact, two_opt_descent, IndexingError, SimilarityMethod, Solver, SolverConfig, TspInstance, COST_TOLERANCE,
};
use floorid::ingest::Dataset;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_instance(rng: &mut ChaCha8Rng, n: usize, quantized: bool) -> TspInstance {
    let start = rng.random_range(0..n);
    let weights = (0..n * n)
        .map(|e| {
            let (i, j) = (e / n, e % n);
            if i == j || j == start {
                0.0
            } else if quantized {
                // quarter steps make equal-cost paths common and sums exact
                rng.random_range(0..4) as f64 * 0.25
            } else {
                rng.random::<f64>()
            }
        })
        .collect();
    TspInstance::new(n, start, weights)
}

#[test]
fn exact_solver_matches_exhaustive_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for n in 3..=7 {
        for round in 0..30 {
            let inst = random_instance(&mut rng, n, round % 2 == 0);
            let got = solve_exact(&inst).unwrap();
            let (path, cost) = exhaustive_path(&inst, COST_TOLERANCE);
            assert!((got.cost - cost).abs() <= 1e-12, "n={n} round={round}");
            assert_eq!(got.path, path, "n={n} round={round}");
        }
    }
}

#[test]
fn two_opt_yields_local_optima_no_better_than_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for n in 3..=9 {
        for _ in 0..10 {
            let inst = random_instance(&mut rng, n, false);
            let exact = solve_exact(&inst).unwrap();
            let heuristic = solve_2opt(&inst, 8, 1).unwrap();
            assert!(heuristic.cost >= exact.cost - 1e-12);
            assert_eq!(heuristic.path[0], inst.start());
            let mut again = heuristic.path.clone();
            two_opt_descent(&inst, &mut again);
            assert_eq!(again, heuristic.path);
            assert_eq!(solve_2opt(&inst, 8, 1).unwrap(), heuristic);
        }
    }
}

#[test]
fn too_few_clusters_is_an_error() {
    let inst = TspInstance::new(2, 0, vec![0.0; 4]);
    assert!(matches!(solve_exact(&inst), Err(IndexingError::TooFewClusters(2))));
}

/// Floor `f` hears MACs `f - 1`, `f` and `f + 1`, so only neighbors share.
/// Record `i` sits on floor `i % floors + 1`; the anchor is on `anchor_floor`.
fn stacked(floors: u32, per_floor: u32, anchor_floor: u32) -> Dataset {
    let mut records = Vec::new();
    for i in 0..floors * per_floor {
        let f = i % floors + 1;
        let macs: Vec<String> = [f - 1, f, f + 1].iter().map(|m| format!("ap{m}")).collect();
        let scan: Vec<(&str, f64)> = macs.iter().map(|m| (m.as_str(), -60.0)).collect();
        let anchor = f == anchor_floor && i / floors == 0;
        records.push(record(&format!("r{i}"), f, anchor, &scan));
    }
    Dataset::new(records, floors as usize).unwrap()
}

/// Clusters are the true floors under a fixed scrambling of ids.
fn scrambled_clusters(ds: &Dataset, holdout: Option<usize>) -> Clustering {
    let labels: Vec<Option<u32>> = ds
        .records()
        .iter()
        .enumerate()
        .map(|(i, r)| (Some(i) != holdout).then(|| (r.floor.unwrap() * 7) % 11))
        .collect();
    Clustering::from_labels(&labels)
}

fn floors_by_cluster(ds: &Dataset, clustering: &Clustering) -> Vec<u32> {
    clustering.members().iter().map(|m| ds.records()[m[0]].floor.unwrap()).collect()
}

#[test]
fn bottom_anchor_recovers_stacking() {
    for floors in 3..=8 {
        let ds = stacked(floors, 4, 1);
        let clustering = scrambled_clusters(&ds, None);
        let truth = floors_by_cluster(&ds, &clustering);
        let anchor_cluster = clustering.cluster_of(ds.anchor_index()).unwrap();
        for method in [SimilarityMethod::Adapted, SimilarityMethod::Plain] {
            for solver in [Solver::Exact, Solver::TwoOpt] {
                let sim = build_similarity(&mac_frequency_profile(&clustering, &ds), method);
                let config = SolverConfig { solver, ..SolverConfig::default() };
                let ordering = index_bottom_anchor(&sim, anchor_cluster, &config).unwrap();
                assert_eq!(ordering.floor_of_cluster(), truth, "floors={floors} {method:?} {solver:?}");
            }
        }
    }
}

/// One-dimensional embeddings equal to the record's floor.
fn floor_embeddings(ds: &Dataset) -> Vec<Vec<f64>> {
    ds.records().iter().map(|r| vec![r.floor.unwrap() as f64]).collect()
}

#[test]
fn arbitrary_anchor_orients_by_embedding_distance() {
    for (floors, anchor_floor) in [(4, 2), (4, 3), (5, 1), (5, 4), (6, 6), (7, 2)] {
        let ds = stacked(floors, 3, anchor_floor);
        let anchor = ds.anchor_index();
        let clustering = scrambled_clusters(&ds, Some(anchor));
        let truth = floors_by_cluster(&ds, &clustering);
        let sim = build_similarity(&mac_frequency_profile(&clustering, &ds), SimilarityMethod::Adapted);
        let emb = floor_embeddings(&ds);
        let ordering =
            index_arbitrary_anchor(&clustering, &sim, &emb, &emb[anchor], anchor_floor, &SolverConfig::default())
                .unwrap();
        assert_eq!(ordering.floor_of_cluster(), truth, "floors={floors} anchor={anchor_floor}");
    }
}

#[test]
fn middle_floor_anchor_is_rejected() {
    let ds = stacked(5, 3, 3);
    let anchor = ds.anchor_index();
    let clustering = scrambled_clusters(&ds, Some(anchor));
    let sim = build_similarity(&mac_frequency_profile(&clustering, &ds), SimilarityMethod::Adapted);
    let emb = floor_embeddings(&ds);
    let err = index_arbitrary_anchor(&clustering, &sim, &emb, &emb[anchor], 3, &SolverConfig::default()).unwrap_err();
    assert!(matches!(err, IndexingError::MiddleFloorAnchor { floor: 3, floors: 5 }));
}

#[test]
fn equidistant_anchor_is_ambiguous() {
    let ds = stacked(4, 3, 2);
    let anchor = ds.anchor_index();
    let clustering = scrambled_clusters(&ds, Some(anchor));
    let sim = build_similarity(&mac_frequency_profile(&clustering, &ds), SimilarityMethod::Adapted);
    let emb = floor_embeddings(&ds);
    // halfway between floors 2 and 3
    let err = index_arbitrary_anchor(&clustering, &sim, &emb, &[2.5], 2, &SolverConfig::default()).unwrap_err();
    assert!(matches!(err, IndexingError::AmbiguousOrientation { .. }));
}

fn frequency_rows() -> impl Strategy<Value = (Vec<u32>, Vec<u32>)> {
    (1usize..20).prop_flat_map(|m| (prop::collection::vec(0u32..6, m), prop::collection::vec(0u32..6, m)))
}

proptest! {
    #[test]
    fn jaccard_is_a_bounded_symmetric_similarity((a, b) in frequency_rows()) {
        for f in [jaccard_plain, jaccard_adapted] {
            let s = f(&a, &b);
            prop_assert!((0.0..=1.0).contains(&s));
            prop_assert_eq!(s, f(&b, &a));
        }
        if a.iter().any(|&x| x > 0) {
            prop_assert_eq!(jaccard_adapted(&a, &a), 1.0);
            prop_assert_eq!(jaccard_plain(&a, &a), 1.0);
        }
    }
}
