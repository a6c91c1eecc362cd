//! Agreement between predicted and true floors.
//!
//! Partitions are scored with the adjusted Rand index and normalized mutual
//! information; floor orderings with Jaro similarity between the predicted
//! and true floor sequences.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::clustering::Clustering;
use crate::indexing::FloorOrdering;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricsError {
    #[error("label vectors differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("nothing to compare: empty labelings")]
    Empty,
    #[error("sequence is not a permutation of 1..={0}")]
    NotPermutation(usize),
    #[error("clusters {first} and {second} both map to floor {floor}")]
    DegenerateMapping { floor: u32, first: usize, second: usize },
}

/// Counts `n_ij` of elements in predicted group `i` and true group `j`.
/// Groups are indexed by their labels in ascending order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContingencyTable {
    pub counts: Vec<Vec<usize>>,
    pub row_sums: Vec<usize>,
    pub col_sums: Vec<usize>,
    pub total: usize,
}

impl ContingencyTable {
    pub fn new<A: Ord + Copy, B: Ord + Copy>(predicted: &[A], truth: &[B]) -> Result<Self, MetricsError> {
        if predicted.len() != truth.len() {
            return Err(MetricsError::LengthMismatch(predicted.len(), truth.len()));
        }
        if predicted.is_empty() {
            return Err(MetricsError::Empty);
        }
        let rows = label_index(predicted);
        let cols = label_index(truth);
        let mut counts = vec![vec![0; cols.len()]; rows.len()];
        for (a, b) in predicted.iter().zip(truth) {
            counts[rows[a]][cols[b]] += 1;
        }
        let row_sums = counts.iter().map(|r| r.iter().sum()).collect();
        let col_sums = (0..cols.len()).map(|j| counts.iter().map(|r| r[j]).sum()).collect();
        Ok(Self { counts, row_sums, col_sums, total: predicted.len() })
    }

    /// One non-empty cell per row and column: the labelings agree up to renaming.
    pub fn is_bijective(&self) -> bool {
        self.counts.len() == self.col_sums.len()
            && self.counts.iter().all(|r| r.iter().filter(|&&c| c > 0).count() == 1)
    }
}

fn label_index<T: Ord + Copy>(labels: &[T]) -> BTreeMap<T, usize> {
    let mut index: BTreeMap<T, usize> = labels.iter().map(|&l| (l, 0)).collect();
    for (i, slot) in index.values_mut().enumerate() {
        *slot = i;
    }
    index
}

fn pairs(n: usize) -> f64 {
    (n as f64) * (n as f64 - 1.0) / 2.0
}

/// Adjusted Rand index; 1 when the chance-corrected denominator vanishes.
pub fn ari<A: Ord + Copy, B: Ord + Copy>(predicted: &[A], truth: &[B]) -> Result<f64, MetricsError> {
    let t = ContingencyTable::new(predicted, truth)?;
    let index: f64 = t.counts.iter().flatten().map(|&c| pairs(c)).sum();
    let a: f64 = t.row_sums.iter().map(|&c| pairs(c)).sum();
    let b: f64 = t.col_sums.iter().map(|&c| pairs(c)).sum();
    let expected = a * b / pairs(t.total);
    let max = (a + b) / 2.0;
    if max - expected == 0.0 {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

fn entropy(sums: &[usize], n: f64) -> f64 {
    sums.iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Mutual information in nats.
pub fn mutual_information(t: &ContingencyTable) -> f64 {
    let n = t.total as f64;
    let mut mi = 0.0;
    for (i, row) in t.counts.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c > 0 {
                let c = c as f64;
                mi += c / n * (n * c / (t.row_sums[i] as f64 * t.col_sums[j] as f64)).ln();
            }
        }
    }
    mi
}

/// `2 MI / (H(X) + H(Y))`; 1 when both partitions are trivial.
pub fn nmi<A: Ord + Copy, B: Ord + Copy>(predicted: &[A], truth: &[B]) -> Result<f64, MetricsError> {
    let t = ContingencyTable::new(predicted, truth)?;
    let n = t.total as f64;
    let (hx, hy) = (entropy(&t.row_sums, n), entropy(&t.col_sums, n));
    if hx + hy == 0.0 || t.is_bijective() {
        return Ok(1.0);
    }
    Ok((2.0 * mutual_information(&t) / (hx + hy)).clamp(0.0, 1.0))
}

fn check_permutation(s: &[u32]) -> Result<(), MetricsError> {
    let n = s.len();
    let mut seen = vec![false; n + 1];
    for &x in s {
        let x = x as usize;
        if x == 0 || x > n || std::mem::replace(&mut seen[x], true) {
            return Err(MetricsError::NotPermutation(n));
        }
    }
    Ok(())
}

/// Jaro similarity of two equal-length permutations of `1..=N`. Matches
/// must lie within `max(len)/2 - 1` positions; transpositions are half the
/// matched symbols that appear in a different order. No prefix bonus.
pub fn edit_distance(predicted: &[u32], truth: &[u32]) -> Result<f64, MetricsError> {
    if predicted.len() != truth.len() {
        return Err(MetricsError::LengthMismatch(predicted.len(), truth.len()));
    }
    if predicted.is_empty() {
        return Err(MetricsError::Empty);
    }
    check_permutation(predicted)?;
    check_permutation(truth)?;
    Ok(jaro(predicted, truth))
}

fn jaro<T: PartialEq>(a: &[T], b: &[T]) -> f64 {
    let window = (a.len().max(b.len()) / 2).saturating_sub(1);
    let mut a_hit = vec![false; a.len()];
    let mut b_hit = vec![false; b.len()];
    let mut matches = 0usize;
    for (i, x) in a.iter().enumerate() {
        let lo = i.saturating_sub(window);
        let hi = (i + window + 1).min(b.len());
        if let Some(j) = (lo..hi).find(|&j| !b_hit[j] && b[j] == *x) {
            a_hit[i] = true;
            b_hit[j] = true;
            matches += 1;
        }
    }
    if matches == 0 {
        return 0.0;
    }
    let a_seq = a.iter().zip(&a_hit).filter(|(_, &h)| h).map(|(x, _)| x);
    let b_seq = b.iter().zip(&b_hit).filter(|(_, &h)| h).map(|(x, _)| x);
    let half_transpositions = a_seq.zip(b_seq).filter(|(x, y)| x != y).count() as f64 / 2.0;
    let m = matches as f64;
    (m / a.len() as f64 + m / b.len() as f64 + (m - half_transpositions) / m) / 3.0
}

/// Majority true floor per group; ties go to the lowest floor.
fn majority_floor(truth: &[u32], members: &[usize]) -> Option<u32> {
    let mut votes: BTreeMap<u32, usize> = BTreeMap::new();
    for &v in members {
        *votes.entry(truth[v]).or_default() += 1;
    }
    let top = *votes.values().max()?;
    votes.into_iter().find(|&(_, c)| c == top).map(|(f, _)| f)
}

/// Predicted floor sequence `S_X` (each cluster named by its majority true
/// floor, listed in predicted floor order) and the reference `1..=N`.
pub fn ordering_to_sequence(
    ordering: &FloorOrdering,
    clustering: &Clustering,
    truth: &[u32],
) -> Result<(Vec<u32>, Vec<u32>), MetricsError> {
    let members = clustering.members();
    let mut by_floor: BTreeMap<u32, usize> = BTreeMap::new();
    let mut seq = Vec::with_capacity(ordering.order.len());
    for &c in &ordering.order {
        let floor = majority_floor(truth, &members[c]).ok_or(MetricsError::Empty)?;
        if let Some(prev) = by_floor.insert(floor, c) {
            return Err(MetricsError::DegenerateMapping { floor, first: prev, second: c });
        }
        seq.push(floor);
    }
    let reference = (1..=seq.len() as u32).collect();
    Ok((seq, reference))
}

/// Scores for one labeling against ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub ari: f64,
    pub nmi: f64,
    /// Jaro similarity of the floor sequence; absent when two predicted
    /// floors share a majority true floor.
    pub edit_distance: Option<f64>,
    pub predicted_sequence: Option<Vec<u32>>,
    pub contingency_table: ContingencyTable,
    pub warnings: Vec<String>,
}

impl MetricsReport {
    /// Edit distance with a degenerate mapping scored as 0.
    pub fn edit_distance_or_zero(&self) -> f64 {
        self.edit_distance.unwrap_or(0.0)
    }
}

/// Scores predicted per-record floors. Predicted floor `p` is the `p`-th
/// cluster of the ordering.
pub fn evaluate(predicted: &[u32], truth: &[u32]) -> Result<MetricsReport, MetricsError> {
    let ari = ari(predicted, truth)?;
    let nmi = nmi(predicted, truth)?;
    let contingency_table = ContingencyTable::new(predicted, truth)?;
    let clustering = Clustering::from_labels(&predicted.iter().map(|&p| Some(p)).collect::<Vec<_>>());
    // Clusters are numbered by first appearance; order them by floor.
    let mut order: Vec<usize> = (0..clustering.cluster_count()).collect();
    let members = clustering.members();
    order.sort_by_key(|&c| predicted[members[c][0]]);
    let ordering = FloorOrdering { order, cost: 0.0, solver: Default::default(), warnings: Vec::new() };
    let mut warnings = Vec::new();
    let (edit_distance, predicted_sequence) = match ordering_to_sequence(&ordering, &clustering, truth) {
        Ok((seq, reference)) => match edit_distance(&seq, &reference) {
            Ok(e) => (Some(e), Some(seq)),
            Err(e) => {
                warnings.push(e.to_string());
                (None, Some(seq))
            }
        },
        Err(e) => {
            warnings.push(e.to_string());
            (None, None)
        }
    };
    Ok(MetricsReport { ari, nmi, edit_distance, predicted_sequence, contingency_table, warnings })
}
