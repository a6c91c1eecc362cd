//! Brute-force reference implementations, written independently of the
//! library code they check.

use floorid::indexing::TspInstance;

/// ARI by explicit pair enumeration.
pub fn pair_count_ari(x: &[u8], y: &[u8]) -> f64 {
    let n = x.len();
    let (mut both, mut in_x, mut in_y) = (0.0, 0.0, 0.0);
    for i in 0..n {
        for j in i + 1..n {
            let sx = x[i] == x[j];
            let sy = y[i] == y[j];
            both += (sx && sy) as u8 as f64;
            in_x += sx as u8 as f64;
            in_y += sy as u8 as f64;
        }
    }
    let total = (n * (n - 1) / 2) as f64;
    let expected = in_x * in_y / total;
    let max = (in_x + in_y) / 2.0;
    if max == expected {
        1.0
    } else {
        (both - expected) / (max - expected)
    }
}

/// NMI from joint and marginal probabilities over the label alphabet.
pub fn probability_nmi(x: &[u8], y: &[u8]) -> f64 {
    let n = x.len() as f64;
    let mut joint = [[0.0f64; 8]; 8];
    for (&a, &b) in x.iter().zip(y) {
        joint[a as usize][b as usize] += 1.0 / n;
    }
    let px: Vec<f64> = (0..8).map(|a| joint[a].iter().sum()).collect();
    let py: Vec<f64> = (0..8).map(|b| (0..8).map(|a| joint[a][b]).sum()).collect();
    let h = |p: &[f64]| -> f64 { p.iter().filter(|&&v| v > 0.0).map(|&v| -v * v.ln()).sum() };
    let mut mi = 0.0;
    for a in 0..8 {
        for b in 0..8 {
            if joint[a][b] > 0.0 {
                mi += joint[a][b] * (joint[a][b] / (px[a] * py[b])).ln();
            }
        }
    }
    let denom = h(&px) + h(&py);
    if denom == 0.0 {
        1.0
    } else {
        2.0 * mi / denom
    }
}

/// Jaro for permutations: a symbol matches iff its two positions lie within
/// the window; `t` halves the out-of-order count of the matched symbols.
pub fn positional_jaro(a: &[u32], b: &[u32]) -> f64 {
    let n = a.len();
    let window = (n / 2).saturating_sub(1);
    let pos = |s: &[u32], x: u32| s.iter().position(|&y| y == x).unwrap();
    let mut matched: Vec<(usize, usize)> =
        a.iter().map(|&x| (pos(a, x), pos(b, x))).filter(|&(i, j)| i.abs_diff(j) <= window).collect();
    if matched.is_empty() {
        return 0.0;
    }
    let in_a: Vec<u32> = matched.iter().map(|&(i, _)| a[i]).collect();
    matched.sort_by_key(|&(_, j)| j);
    let in_b: Vec<u32> = matched.iter().map(|&(_, j)| b[j]).collect();
    let t = in_a.iter().zip(&in_b).filter(|(x, y)| x != y).count() as f64 / 2.0;
    let m = matched.len() as f64;
    (m / n as f64 + m / n as f64 + (m - t) / m) / 3.0
}

/// Every path from the start node in lexicographic order; the optimum is
/// the smallest cost, and ties within `tolerance` go to the first path.
pub fn exhaustive_path(inst: &TspInstance, tolerance: f64) -> (Vec<usize>, f64) {
    fn visit(inst: &TspInstance, path: &mut Vec<usize>, left: &mut Vec<usize>, out: &mut Vec<(Vec<usize>, f64)>) {
        if left.is_empty() {
            out.push((path.clone(), inst.path_cost(path)));
            return;
        }
        for i in 0..left.len() {
            let v = left.remove(i);
            path.push(v);
            visit(inst, path, left, out);
            path.pop();
            left.insert(i, v);
        }
    }
    let mut all = Vec::new();
    let mut left: Vec<usize> = (0..inst.len()).filter(|&v| v != inst.start()).collect();
    visit(inst, &mut vec![inst.start()], &mut left, &mut all);
    let best = all.iter().map(|(_, c)| *c).fold(f64::INFINITY, f64::min);
    all.into_iter().find(|(_, c)| *c <= best + tolerance).expect("at least one path")
}

/// Average linkage by recomputing every cluster-pair mean distance at each
/// step. Clusters are named by their smallest member; the closest pair
/// merges, ties to the lexicographically smallest name pair. Returns
/// `(kept, absorbed, distance)` per merge.
pub fn naive_average_linkage(points: &[Vec<f64>], target: usize) -> Vec<(usize, usize, f64)> {
    let dist = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let mut clusters: Vec<Vec<usize>> = (0..points.len()).map(|i| vec![i]).collect();
    let mut merges = Vec::new();
    while clusters.len() > target {
        let mut best = (f64::INFINITY, 0, 0);
        for a in 0..clusters.len() {
            for b in a + 1..clusters.len() {
                let mut total = 0.0;
                for &i in &clusters[a] {
                    for &j in &clusters[b] {
                        total += dist(&points[i], &points[j]);
                    }
                }
                let d = total / (clusters[a].len() * clusters[b].len()) as f64;
                if d < best.0 {
                    best = (d, a, b);
                }
            }
        }
        let (d, a, b) = best;
        let absorbed = clusters.remove(b);
        merges.push((clusters[a][0], absorbed[0], d));
        clusters[a].extend(absorbed);
        clusters[a].sort_unstable();
    }
    merges
}
