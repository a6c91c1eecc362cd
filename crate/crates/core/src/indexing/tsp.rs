//! Shortest Hamiltonian paths from a fixed start: Held-Karp and 2-opt.
//!
//! Weights into the start node are zero, which turns the closed tour into
//! an open path. Among near-optimal paths (within [`COST_TOLERANCE`]) the
//! lexicographically smallest node sequence wins.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{IndexingError, SimilarityMatrix};

/// Largest instance the bitmask DP accepts.
pub const EXACT_MAX_NODES: usize = 20;
/// Auto selection uses the exact solver up to this size.
pub const AUTO_EXACT_LIMIT: usize = 12;
/// Cost differences below this are ties.
pub const COST_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    Exact,
    TwoOpt,
    #[default]
    Auto,
}

/// Solver settings: which method plus the 2-opt restart budget.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub solver: Solver,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { solver: Solver::Auto, restarts: 16, seed: 0 }
    }
}

/// Directed weights over `n` nodes with a distinguished start.
#[derive(Clone, Debug, PartialEq)]
pub struct TspInstance {
    n: usize,
    start: usize,
    weights: Vec<f64>,
}

impl TspInstance {
    /// Raw instance; `weights` is row-major `n x n`.
    pub fn new(n: usize, start: usize, weights: Vec<f64>) -> Self {
        assert_eq!(weights.len(), n * n);
        assert!(start < n);
        Self { n, start, weights }
    }

    /// `w_ij = 1 - J_ij`, and zero into `start`.
    pub fn from_similarity(sim: &SimilarityMatrix, start: usize) -> Self {
        let n = sim.len();
        let mut weights = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                if i != j && j != start {
                    weights[i * n + j] = 1.0 - sim.get(i, j);
                }
            }
        }
        Self::new(n, start, weights)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.n + j]
    }

    /// Sum of weights along `path`, summed front to back.
    pub fn path_cost(&self, path: &[usize]) -> f64 {
        path.windows(2).map(|e| self.weight(e[0], e[1])).sum()
    }

    fn check(&self) -> Result<(), IndexingError> {
        if self.n < 3 {
            return Err(IndexingError::TooFewClusters(self.n));
        }
        Ok(())
    }
}

/// A path starting at the instance's start node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathSolution {
    pub path: Vec<usize>,
    pub cost: f64,
}

/// Held-Karp over subsets of the non-start nodes, with suffix costs so the
/// lexicographically smallest optimal path can be read off forwards.
pub fn solve_exact(inst: &TspInstance) -> Result<PathSolution, IndexingError> {
    inst.check()?;
    if inst.n > EXACT_MAX_NODES {
        return Err(IndexingError::TooManyClusters { clusters: inst.n, max: EXACT_MAX_NODES });
    }
    let others: Vec<usize> = (0..inst.n).filter(|&v| v != inst.start).collect();
    let r = others.len();
    let full = (1usize << r) - 1;
    // rest[mask * r + v]: cheapest path from others[v] through every node
    // of `mask` (v not in mask).
    let mut rest = vec![f64::INFINITY; (full + 1) * r];
    rest[..r].fill(0.0);
    for mask in 1..=full {
        for v in 0..r {
            if mask & (1 << v) != 0 {
                continue;
            }
            let mut best = f64::INFINITY;
            let mut bits = mask;
            while bits != 0 {
                let u = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                let c = inst.weight(others[v], others[u]) + rest[(mask & !(1 << u)) * r + u];
                best = best.min(c);
            }
            rest[mask * r + v] = best;
        }
    }
    let total = |mask: usize, u: usize, from: usize| inst.weight(from, others[u]) + rest[(mask & !(1 << u)) * r + u];
    let optimum = (0..r).map(|u| total(full, u, inst.start)).fold(f64::INFINITY, f64::min);

    // `others` is ascending, so the first feasible bit is the smallest node.
    let mut path = vec![inst.start];
    let mut mask = full;
    let mut spent = 0.0;
    while mask != 0 {
        let from = *path.last().expect("non-empty path");
        let u = (0..r)
            .filter(|&u| mask & (1 << u) != 0)
            .find(|&u| spent + total(mask, u, from) <= optimum + COST_TOLERANCE)
            .expect("an optimal continuation exists");
        spent += inst.weight(from, others[u]);
        mask &= !(1 << u);
        path.push(others[u]);
    }
    let cost = inst.path_cost(&path);
    Ok(PathSolution { path, cost })
}

/// Best 2-opt local optimum over `restarts` random initial paths.
pub fn solve_2opt(inst: &TspInstance, restarts: usize, seed: u64) -> Result<PathSolution, IndexingError> {
    inst.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<PathSolution> = None;
    for _ in 0..restarts.max(1) {
        let mut tail: Vec<usize> = (0..inst.n).filter(|&v| v != inst.start).collect();
        tail.shuffle(&mut rng);
        let mut path = vec![inst.start];
        path.extend(tail);
        two_opt_descent(inst, &mut path);
        let cost = inst.path_cost(&path);
        let better = match &best {
            None => true,
            Some(b) => cost < b.cost - COST_TOLERANCE || (cost <= b.cost + COST_TOLERANCE && path < b.path),
        };
        if better {
            best = Some(PathSolution { path, cost });
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Applies the best improving segment reversal until none improves by more
/// than [`COST_TOLERANCE`]. Position 0 never moves.
pub fn two_opt_descent(inst: &TspInstance, path: &mut [usize]) {
    let n = path.len();
    loop {
        let current = inst.path_cost(path);
        let mut best = (0.0, 0, 0);
        for i in 1..n - 1 {
            for j in i + 1..n {
                path[i..=j].reverse();
                let gain = current - inst.path_cost(path);
                path[i..=j].reverse();
                if gain > best.0 {
                    best = (gain, i, j);
                }
            }
        }
        if best.0 <= COST_TOLERANCE {
            return;
        }
        path[best.1..=best.2].reverse();
    }
}

/// Dispatches on `config.solver`.
pub fn solve(inst: &TspInstance, config: &SolverConfig) -> Result<(PathSolution, Solver), IndexingError> {
    let use_exact = match config.solver {
        Solver::Exact => true,
        Solver::TwoOpt => false,
        Solver::Auto => inst.len() <= AUTO_EXACT_LIMIT,
    };
    if use_exact {
        Ok((solve_exact(inst)?, Solver::Exact))
    } else {
        Ok((solve_2opt(inst, config.restarts, config.seed)?, Solver::TwoOpt))
    }
}
