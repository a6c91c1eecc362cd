//! Ordering floor clusters by signal spillover.
//!
//! Adjacent floors hear each other's access points, so the bottom-to-top
//! order is the Hamiltonian path that maximizes the summed similarity of
//! consecutive clusters. The labeled scan pins one end of that path.

mod tsp;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use tsp::{
    solve, solve_2opt, solve_exact, two_opt_descent, PathSolution, Solver, SolverConfig, TspInstance, AUTO_EXACT_LIMIT,
    COST_TOLERANCE, EXACT_MAX_NODES,
};

use crate::clustering::{Clustering, MacProfile};

/// Candidate distances closer than this cannot orient a path.
pub const ORIENTATION_TOLERANCE: f64 = 1e-12;

#[derive(Debug, thiserror::Error)]
pub enum IndexingError {
    #[error("at least 3 clusters required, got {0}")]
    TooFewClusters(usize),
    #[error("{clusters} clusters exceed the exact solver budget of {max}")]
    TooManyClusters { clusters: usize, max: usize },
    #[error("anchor cluster {cluster} out of range for {clusters} clusters")]
    AnchorClusterOutOfRange { cluster: usize, clusters: usize },
    #[error("anchor floor {floor} outside 1..={floors}")]
    AnchorFloorOutOfRange { floor: u32, floors: usize },
    #[error("anchor on middle floor {floor} of an odd {floors}-floor building cannot orient the ordering")]
    MiddleFloorAnchor { floor: u32, floors: usize },
    #[error("anchor is equidistant ({first} vs {second}) from both candidate clusters")]
    AmbiguousOrientation { first: f64, second: f64 },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityMethod {
    #[default]
    Adapted,
    Plain,
}

/// Set Jaccard coefficient of the MAC supports of two frequency rows; 0
/// when both are empty.
pub fn jaccard_plain(a: &[u32], b: &[u32]) -> f64 {
    let (mut both, mut either) = (0usize, 0usize);
    for (&x, &y) in a.iter().zip(b) {
        both += usize::from(x > 0 && y > 0);
        either += usize::from(x > 0 || y > 0);
    }
    if either == 0 {
        0.0
    } else {
        both as f64 / either as f64
    }
}

/// Frequency-weighted Jaccard coefficient. Shared MACs contribute
/// `f_i f_j`; a MAC seen by only one cluster contributes its count times
/// the other cluster's mean count over the pair's MAC union.
pub fn jaccard_adapted(a: &[u32], b: &[u32]) -> f64 {
    assert_eq!(a.len(), b.len(), "rows over different MAC sets");
    let union = a.iter().zip(b).filter(|(&x, &y)| x > 0 || y > 0).count();
    if union == 0 {
        return 0.0;
    }
    let mean_a = a.iter().map(|&x| x as f64).sum::<f64>() / union as f64;
    let mean_b = b.iter().map(|&x| x as f64).sum::<f64>() / union as f64;
    let mut shared = 0.0;
    let mut unshared = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        shared += x * y;
        if x == 0.0 {
            unshared += y * mean_a;
        }
        if y == 0.0 {
            unshared += x * mean_b;
        }
    }
    if shared + unshared == 0.0 {
        0.0
    } else {
        shared / (shared + unshared)
    }
}

/// Symmetric `n x n` cluster similarities; the diagonal is unused and 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    n: usize,
    values: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn zeros(n: usize) -> Self {
        Self { n, values: vec![0.0; n * n] }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    /// Sets both `(i, j)` and `(j, i)`.
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.values[i * self.n + j] = v;
        self.values[j * self.n + i] = v;
    }

    /// Rows as nested vectors, for reports.
    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.values.chunks(self.n.max(1)).map(<[f64]>::to_vec).collect()
    }

    /// Whether every off-diagonal entry is zero.
    pub fn is_all_zero(&self) -> bool {
        (0..self.n).all(|i| (0..self.n).all(|j| i == j || self.get(i, j) == 0.0))
    }

    /// Summed similarity of consecutive clusters along `path`.
    pub fn path_similarity(&self, path: &[usize]) -> f64 {
        path.windows(2).map(|e| self.get(e[0], e[1])).sum()
    }
}

/// Pairwise similarity of every cluster pair.
pub fn build_similarity(profile: &MacProfile, method: SimilarityMethod) -> SimilarityMatrix {
    let n = profile.cluster_count();
    let mut sim = SimilarityMatrix::zeros(n);
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let values: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| match method {
            SimilarityMethod::Adapted => jaccard_adapted(profile.row(i), profile.row(j)),
            SimilarityMethod::Plain => jaccard_plain(profile.row(i), profile.row(j)),
        })
        .collect();
    for (&(i, j), v) in pairs.iter().zip(values) {
        sim.set(i, j, v);
    }
    sim
}

/// Clusters in floor order: `order[p]` is floor `p + 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FloorOrdering {
    pub order: Vec<usize>,
    /// Summed `1 - J` along the order.
    pub cost: f64,
    pub solver: Solver,
    pub warnings: Vec<String>,
}

impl FloorOrdering {
    /// Floor (1-based) of every cluster.
    pub fn floor_of_cluster(&self) -> Vec<u32> {
        let mut floors = vec![0; self.order.len()];
        for (p, &c) in self.order.iter().enumerate() {
            floors[c] = p as u32 + 1;
        }
        floors
    }
}

fn degenerate_warnings(sim: &SimilarityMatrix) -> Vec<String> {
    if sim.is_all_zero() {
        let msg = "all cluster similarities are zero; the ordering carries no spillover evidence".to_string();
        warn!("{msg}");
        vec![msg]
    } else {
        Vec::new()
    }
}

fn symmetric_cost(sim: &SimilarityMatrix, order: &[usize]) -> f64 {
    order.windows(2).map(|e| 1.0 - sim.get(e[0], e[1])).sum()
}

/// Orders clusters bottom-up from the cluster holding the labeled scan.
pub fn index_bottom_anchor(
    sim: &SimilarityMatrix,
    anchor_cluster: usize,
    solver: &SolverConfig,
) -> Result<FloorOrdering, IndexingError> {
    if anchor_cluster >= sim.len() {
        return Err(IndexingError::AnchorClusterOutOfRange { cluster: anchor_cluster, clusters: sim.len() });
    }
    let inst = TspInstance::from_similarity(sim, anchor_cluster);
    let (sol, used) = solve(&inst, solver)?;
    Ok(FloorOrdering { order: sol.path, cost: sol.cost, solver: used, warnings: degenerate_warnings(sim) })
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Mean distance from `r` to the members of a cluster.
pub fn anchor_distance<P: AsRef<[f64]>>(r: &[f64], members: &[P]) -> f64 {
    assert!(!members.is_empty(), "empty cluster");
    members.iter().map(|m| euclidean(r, m.as_ref())).sum::<f64>() / members.len() as f64
}

/// Orders clusters when the labeled scan may sit on any floor. The path
/// with the highest summed similarity over every start is oriented so the
/// candidate cluster nearer the anchor embedding lands on `anchor_floor`.
pub fn index_arbitrary_anchor<P: AsRef<[f64]>>(
    clustering: &Clustering,
    sim: &SimilarityMatrix,
    embeddings: &[P],
    anchor_embedding: &[f64],
    anchor_floor: u32,
    solver: &SolverConfig,
) -> Result<FloorOrdering, IndexingError> {
    let n = sim.len();
    if n < 3 {
        return Err(IndexingError::TooFewClusters(n));
    }
    if anchor_floor == 0 || anchor_floor as usize > n {
        return Err(IndexingError::AnchorFloorOutOfRange { floor: anchor_floor, floors: n });
    }
    if n % 2 == 1 && anchor_floor as usize == n.div_ceil(2) {
        return Err(IndexingError::MiddleFloorAnchor { floor: anchor_floor, floors: n });
    }
    let solutions: Vec<(PathSolution, Solver)> = (0..n)
        .into_par_iter()
        .map(|s| solve(&TspInstance::from_similarity(sim, s), solver))
        .collect::<Result<_, _>>()?;
    let (best, used) = solutions
        .into_iter()
        .map(|(sol, used)| (sim.path_similarity(&sol.path), sol.path, used))
        .reduce(|a, b| {
            let better = b.0 > a.0 + COST_TOLERANCE || (b.0 >= a.0 - COST_TOLERANCE && b.1 < a.1);
            if better {
                b
            } else {
                a
            }
        })
        .map(|(_, path, used)| (path, used))
        .expect("n >= 3");

    let f = anchor_floor as usize;
    let members = clustering.members();
    let distance = |c: usize| {
        let rows: Vec<&[f64]> = members[c].iter().map(|&v| embeddings[v].as_ref()).collect();
        anchor_distance(anchor_embedding, &rows)
    };
    let (near, far) = (distance(best[f - 1]), distance(best[n - f]));
    if (near - far).abs() < ORIENTATION_TOLERANCE {
        return Err(IndexingError::AmbiguousOrientation { first: near, second: far });
    }
    let mut order = best;
    if far < near {
        order.reverse();
    }
    let cost = symmetric_cost(sim, &order);
    Ok(FloorOrdering { order, cost, solver: used, warnings: degenerate_warnings(sim) })
}

/// Floor of every record: its cluster's position in `ordering`, or the
/// declared floor for a held-out anchor.
pub fn assign_labels(ordering: &FloorOrdering, clustering: &Clustering, anchor: Option<(usize, u32)>) -> Vec<u32> {
    let floors = ordering.floor_of_cluster();
    clustering
        .assignment()
        .iter()
        .enumerate()
        .map(|(v, c)| match (c, anchor) {
            (Some(c), _) => floors[*c],
            (None, Some((a, f))) if a == v => f,
            (None, _) => 0,
        })
        .collect()
}
