//! Partitioning scan embeddings into one group per floor.
//!
//! Average linkage merges, at every step, the two clusters with the smallest
//! mean pairwise Euclidean distance. Distances are maintained with the
//! Lance-Williams update and ties go to the lexicographically smallest
//! `(smaller id, larger id)` pair; a merged cluster keeps the smaller id.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ingest::Dataset;

/// Lloyd iterations before k-means gives up on reaching a fixed point.
pub const KMEANS_MAX_ITERATIONS: usize = 300;

#[derive(Debug, thiserror::Error)]
pub enum ClusteringError {
    #[error("{points} points cannot form {clusters} clusters")]
    TooFewPoints { points: usize, clusters: usize },
    #[error("cluster count must be positive")]
    ZeroClusters,
    #[error("holdout index {0} out of range")]
    HoldoutOutOfRange(usize),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("assignment line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusteringMethod {
    #[default]
    Hierarchical,
    Kmeans,
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Mean pairwise Euclidean distance between two non-empty point sets.
pub fn cluster_distance<A: AsRef<[f64]>, B: AsRef<[f64]>>(a: &[A], b: &[B]) -> f64 {
    assert!(!a.is_empty() && !b.is_empty(), "empty cluster");
    let total: f64 = a.iter().map(|p| b.iter().map(|q| euclidean(p.as_ref(), q.as_ref())).sum::<f64>()).sum();
    total / (a.len() * b.len()) as f64
}

/// Partition of the sample records into clusters `0..cluster_count`.
/// Clusters are numbered by their smallest member, so equal partitions
/// compare equal.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Clustering {
    assignment: Vec<Option<usize>>,
    cluster_count: usize,
}

impl Clustering {
    /// Builds a clustering from arbitrary labels; `None` marks a held-out
    /// record. Labels are renumbered canonically.
    pub fn from_labels<L: Copy + Ord>(labels: &[Option<L>]) -> Self {
        let mut ids = BTreeMap::new();
        let mut next = 0;
        let assignment = labels
            .iter()
            .map(|l| {
                l.map(|l| {
                    *ids.entry(l).or_insert_with(|| {
                        next += 1;
                        next - 1
                    })
                })
            })
            .collect();
        Self { assignment, cluster_count: next }
    }

    pub fn cluster_count(&self) -> usize {
        self.cluster_count
    }

    /// Number of records covered, held-out ones included.
    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    /// Cluster of record `v`, or `None` if it was held out.
    pub fn cluster_of(&self, v: usize) -> Option<usize> {
        self.assignment[v]
    }

    pub fn assignment(&self) -> &[Option<usize>] {
        &self.assignment
    }

    /// Record indices of every cluster, ascending.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.cluster_count];
        for (v, c) in self.assignment.iter().enumerate() {
            if let Some(c) = c {
                out[*c].push(v);
            }
        }
        out
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.members().iter().map(Vec::len).collect()
    }

    /// Held-out records.
    pub fn held_out(&self) -> Vec<usize> {
        (0..self.len()).filter(|&v| self.assignment[v].is_none()).collect()
    }

    /// Writes `record_id cluster_id` lines with 1-based cluster ids.
    /// Held-out records are omitted.
    pub fn write_assignment<W: Write>(&self, dataset: &Dataset, mut out: W) -> std::io::Result<()> {
        for (r, c) in dataset.records().iter().zip(&self.assignment) {
            if let Some(c) = c {
                writeln!(out, "{} {}", r.id, c + 1)?;
            }
        }
        Ok(())
    }

    /// Reads an assignment written by [`Clustering::write_assignment`];
    /// records without a line are held out.
    pub fn read_assignment<R: BufRead>(dataset: &Dataset, reader: R) -> Result<Self, ClusteringError> {
        let index: BTreeMap<&str, usize> =
            dataset.records().iter().enumerate().map(|(i, r)| (r.id.as_str(), i)).collect();
        let mut labels: Vec<Option<usize>> = vec![None; dataset.records().len()];
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let err = |message: String| ClusteringError::Parse { line: i + 1, message };
            let mut fields = line.split_whitespace();
            let (Some(id), Some(c), None) = (fields.next(), fields.next(), fields.next()) else {
                if line.trim().is_empty() {
                    continue;
                }
                return Err(err("expected `record_id cluster_id`".into()));
            };
            let v = *index.get(id).ok_or_else(|| err(format!("unknown record {id}")))?;
            let c: usize = c.parse().map_err(|e| err(format!("{e}")))?;
            if c == 0 {
                return Err(err("cluster ids are 1-based".into()));
            }
            if labels[v].replace(c).is_some() {
                return Err(err(format!("record {id} assigned twice")));
            }
        }
        Ok(Self::from_labels(&labels))
    }
}

/// One agglomeration step: cluster `absorbed` joins `kept` (`kept < absorbed`)
/// at the given average-linkage distance. Ids are point positions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Merge {
    pub kept: usize,
    pub absorbed: usize,
    pub distance: f64,
}

/// Upper-triangle nearest neighbor of row `a`: smallest distance to an
/// active `b > a`, ties to the smaller `b`.
fn row_minimum(dist: &[f64], n: usize, active: &[bool], a: usize) -> Option<(f64, usize)> {
    let mut best: Option<(f64, usize)> = None;
    for b in a + 1..n {
        if active[b] {
            let d = dist[a * n + b];
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, b));
            }
        }
    }
    best
}

/// Average-linkage merges of `points` until `target` clusters remain.
pub fn average_linkage<P: AsRef<[f64]> + Sync>(points: &[P], target: usize) -> Vec<Merge> {
    let n = points.len();
    assert!(target >= 1 && target <= n, "target {target} outside 1..={n}");
    let mut dist = vec![0.0; n * n];
    dist.par_chunks_mut(n.max(1)).enumerate().for_each(|(a, row)| {
        for (b, d) in row.iter_mut().enumerate() {
            *d = euclidean(points[a].as_ref(), points[b].as_ref());
        }
    });
    let mut size = vec![1usize; n];
    let mut active = vec![true; n];
    let mut nearest: Vec<Option<(f64, usize)>> = (0..n).map(|a| row_minimum(&dist, n, &active, a)).collect();
    let mut merges = Vec::with_capacity(n - target);

    for _ in 0..n - target {
        let mut pick: Option<(f64, usize, usize)> = None;
        for a in 0..n {
            if let (true, Some((d, b))) = (active[a], nearest[a]) {
                if pick.is_none_or(|(pd, _, _)| d < pd) {
                    pick = Some((d, a, b));
                }
            }
        }
        let (d, a, b) = pick.expect("at least two active clusters");
        merges.push(Merge { kept: a, absorbed: b, distance: d });

        let (na, nb) = (size[a] as f64, size[b] as f64);
        for k in 0..n {
            if active[k] && k != a && k != b {
                let merged = (na * dist[a * n + k] + nb * dist[b * n + k]) / (na + nb);
                dist[a * n + k] = merged;
                dist[k * n + a] = merged;
            }
        }
        active[b] = false;
        size[a] += size[b];
        nearest[b] = None;
        nearest[a] = row_minimum(&dist, n, &active, a);
        for k in 0..a {
            if !active[k] {
                continue;
            }
            match nearest[k] {
                Some((_, t)) if t == a || t == b => nearest[k] = row_minimum(&dist, n, &active, k),
                Some((kd, t)) => {
                    let nd = dist[k * n + a];
                    if nd < kd || (nd == kd && a < t) {
                        nearest[k] = Some((nd, a));
                    }
                }
                None => {}
            }
        }
        for k in a + 1..b {
            if active[k] && nearest[k].is_some_and(|(_, t)| t == b) {
                nearest[k] = row_minimum(&dist, n, &active, k);
            }
        }
    }
    merges
}

/// Indices of `points` other than `holdout`, checked against `clusters`.
fn clustered_indices(len: usize, clusters: usize, holdout: Option<usize>) -> Result<Vec<usize>, ClusteringError> {
    if clusters == 0 {
        return Err(ClusteringError::ZeroClusters);
    }
    if let Some(h) = holdout.filter(|&h| h >= len) {
        return Err(ClusteringError::HoldoutOutOfRange(h));
    }
    let kept: Vec<usize> = (0..len).filter(|&v| Some(v) != holdout).collect();
    if kept.len() < clusters {
        return Err(ClusteringError::TooFewPoints { points: kept.len(), clusters });
    }
    Ok(kept)
}

fn gather<'a, P: AsRef<[f64]>>(points: &'a [P], idx: &[usize]) -> Vec<&'a [f64]> {
    idx.iter().map(|&v| points[v].as_ref()).collect()
}

/// Average-linkage clustering of `embeddings` (one row per record) into
/// `clusters` groups, leaving `holdout` unassigned.
pub fn hierarchical_cluster<P: AsRef<[f64]> + Sync>(
    embeddings: &[P],
    clusters: usize,
    holdout: Option<usize>,
) -> Result<Clustering, ClusteringError> {
    let kept = clustered_indices(embeddings.len(), clusters, holdout)?;
    let points = gather(embeddings, &kept);
    let mut root: Vec<usize> = (0..points.len()).collect();
    for m in average_linkage(&points, clusters) {
        for r in root.iter_mut() {
            if *r == m.absorbed {
                *r = m.kept;
            }
        }
    }
    let mut labels = vec![None; embeddings.len()];
    for (p, &v) in kept.iter().enumerate() {
        labels[v] = Some(root[p]);
    }
    Ok(Clustering::from_labels(&labels))
}

/// Result of one k-means run.
#[derive(Clone, Debug, PartialEq)]
pub struct KmeansRun {
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Within-cluster sum of squares after every update step.
    pub objective: Vec<f64>,
    pub converged: bool,
}

fn squared(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Closest centroid; `current` wins ties so settled points stay put,
/// otherwise the smallest index does.
fn nearest_centroid(p: &[f64], centroids: &[Vec<f64>], current: Option<usize>) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (c, q) in centroids.iter().enumerate() {
        let d = squared(p, q);
        if d < best.0 {
            best = (d, c);
        }
    }
    match current {
        Some(c) if squared(p, &centroids[c]) == best.0 => c,
        _ => best.1,
    }
}

/// Moves the point farthest from its centroid, among clusters with more
/// than one member, into each empty cluster.
fn fill_empty(points: &[&[f64]], labels: &mut [usize], centroids: &[Vec<f64>]) -> Vec<usize> {
    let mut sizes = vec![0usize; centroids.len()];
    for &l in labels.iter() {
        sizes[l] += 1;
    }
    while let Some(empty) = sizes.iter().position(|&s| s == 0) {
        let far = (0..points.len())
            .filter(|&i| sizes[labels[i]] > 1)
            .max_by(|&i, &j| {
                squared(points[i], &centroids[labels[i]])
                    .total_cmp(&squared(points[j], &centroids[labels[j]]))
                    .then(j.cmp(&i))
            })
            .expect("k <= point count");
        sizes[labels[far]] -= 1;
        labels[far] = empty;
        sizes[empty] = 1;
    }
    sizes
}

fn seed_plus_plus(points: &[&[f64]], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].to_vec()];
    let mut gap: Vec<f64> = points.iter().map(|p| squared(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = gap.iter().sum();
        let pick = if total > 0.0 {
            let x = rng.random::<f64>() * total;
            let mut acc = 0.0;
            gap.iter()
                .position(|&g| {
                    acc += g;
                    acc > x
                })
                .unwrap_or_else(|| gap.iter().rposition(|&g| g > 0.0).expect("positive total"))
        } else {
            rng.random_range(0..points.len())
        };
        centroids.push(points[pick].to_vec());
        for (g, p) in gap.iter_mut().zip(points) {
            *g = g.min(squared(p, &centroids[centroids.len() - 1]));
        }
    }
    centroids
}

fn objective(points: &[&[f64]], labels: &[usize], centroids: &[Vec<f64>]) -> f64 {
    points.iter().zip(labels).map(|(p, &l)| squared(p, &centroids[l])).sum()
}

/// Lloyd's algorithm from k-means++ seeds. An emptied cluster is reseeded
/// with the point farthest from its centroid among clusters of size > 1.
pub fn kmeans<P: AsRef<[f64]>>(points: &[P], k: usize, seed: u64) -> KmeansRun {
    let points: Vec<&[f64]> = points.iter().map(|p| p.as_ref()).collect();
    assert!(k >= 1 && k <= points.len(), "k {k} outside 1..={}", points.len());
    let dim = points[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_plus_plus(&points, k, &mut rng);
    let mut labels: Vec<usize> = points.iter().map(|p| nearest_centroid(p, &centroids, None)).collect();
    let mut history = Vec::new();
    let mut converged = false;

    for _ in 0..KMEANS_MAX_ITERATIONS {
        let sizes = fill_empty(&points, &mut labels, &centroids);
        let mut sums = vec![vec![0.0; dim]; k];
        for (p, &l) in points.iter().zip(&labels) {
            for (s, v) in sums[l].iter_mut().zip(p.iter()) {
                *s += v;
            }
        }
        for ((c, s), &n) in centroids.iter_mut().zip(sums).zip(&sizes) {
            *c = s.into_iter().map(|v| v / n as f64).collect();
        }
        history.push(objective(&points, &labels, &centroids));
        let next: Vec<usize> =
            points.iter().zip(&labels).map(|(p, &l)| nearest_centroid(p, &centroids, Some(l))).collect();
        if next == labels {
            converged = true;
            break;
        }
        labels = next;
    }
    if !converged {
        fill_empty(&points, &mut labels, &centroids);
    }
    KmeansRun { labels, centroids, objective: history, converged }
}

/// K-means clustering of `embeddings`, leaving `holdout` unassigned.
pub fn kmeans_cluster<P: AsRef<[f64]>>(
    embeddings: &[P],
    clusters: usize,
    holdout: Option<usize>,
    seed: u64,
) -> Result<Clustering, ClusteringError> {
    let kept = clustered_indices(embeddings.len(), clusters, holdout)?;
    let run = kmeans(&gather(embeddings, &kept), clusters, seed);
    let mut labels = vec![None; embeddings.len()];
    for (p, &v) in kept.iter().enumerate() {
        labels[v] = Some(run.labels[p]);
    }
    Ok(Clustering::from_labels(&labels))
}

/// Per-cluster MAC detection counts: `row(i)[k]` is the number of records
/// in cluster `i` whose scan lists MAC `k` (MAC order of the dataset).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MacProfile {
    mac_count: usize,
    counts: Vec<u32>,
}

impl MacProfile {
    pub fn cluster_count(&self) -> usize {
        self.counts.len() / self.mac_count.max(1)
    }

    pub fn mac_count(&self) -> usize {
        self.mac_count
    }

    pub fn row(&self, cluster: usize) -> &[u32] {
        &self.counts[cluster * self.mac_count..(cluster + 1) * self.mac_count]
    }
}

/// Record-level MAC frequencies of every cluster. Held-out records do not
/// count.
pub fn mac_frequency_profile(clustering: &Clustering, dataset: &Dataset) -> MacProfile {
    assert_eq!(clustering.len(), dataset.records().len(), "clustering does not cover the dataset");
    let m = dataset.mac_universe().len();
    let mut counts = vec![0u32; clustering.cluster_count() * m];
    for (r, c) in dataset.records().iter().zip(clustering.assignment()) {
        if let Some(c) = c {
            for reading in &r.readings {
                let k = dataset.mac_universe().get_index_of(reading.mac.as_str()).expect("mac in universe");
                counts[c * m + k] += 1;
            }
        }
    }
    MacProfile { mac_count: m, counts }
}

/// Runs the chosen method.
pub fn cluster<P: AsRef<[f64]> + Sync>(
    method: ClusteringMethod,
    embeddings: &[P],
    clusters: usize,
    holdout: Option<usize>,
    seed: u64,
) -> Result<Clustering, ClusteringError> {
    match method {
        ClusteringMethod::Hierarchical => hierarchical_cluster(embeddings, clusters, holdout),
        ClusteringMethod::Kmeans => kmeans_cluster(embeddings, clusters, holdout, seed),
    }
}
