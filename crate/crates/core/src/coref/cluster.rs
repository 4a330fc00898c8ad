use crate::error::{Error, Result};
use crate::nn::Tensor;

/// One agglomeration step. Clusters are named by their smallest member
/// index, so `left < right` and the merged cluster keeps the name `left`.
#[derive(Debug, Clone, PartialEq)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub distance: f64,
}

fn check_square(scores: &Tensor) -> Result<usize> {
    if scores.rows != scores.cols {
        return Err(Error::Shape(format!("score matrix is {}x{}", scores.rows, scores.cols)));
    }
    Ok(scores.rows)
}

/// Full average-linkage merge sequence over distances `1 - c_ij`, using
/// Lance-Williams updates. Among equally close pairs the lexicographically
/// smallest `(left, right)` merges first.
pub fn dendrogram(scores: &Tensor) -> Result<Vec<Merge>> {
    let n = check_square(scores)?;
    let mut dist: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| 1.0 - scores.get(i, j)).collect()).collect();
    let mut size = vec![1usize; n];
    let mut active = vec![true; n];
    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    for _ in 1..n {
        let mut best: Option<(usize, usize, f64)> = None;
        for a in 0..n {
            if !active[a] {
                continue;
            }
            for b in a + 1..n {
                if !active[b] {
                    continue;
                }
                let d = dist[a][b];
                if best.is_none_or(|(_, _, bd)| d < bd) {
                    best = Some((a, b, d));
                }
            }
        }
        let (a, b, d) = best.expect("at least two active clusters");
        let (na, nb) = (size[a] as f64, size[b] as f64);
        for k in 0..n {
            if active[k] && k != a && k != b {
                let v = (na * dist[a][k] + nb * dist[b][k]) / (na + nb);
                dist[a][k] = v;
                dist[k][a] = v;
            }
        }
        size[a] += size[b];
        active[b] = false;
        merges.push(Merge {
            left: a,
            right: b,
            distance: d,
        });
    }
    Ok(merges)
}

/// Cluster label per item after replaying merges until `k` clusters remain.
/// Labels are numbered by each cluster's smallest member.
pub fn cut(n: usize, merges: &[Merge], k: usize) -> Vec<usize> {
    let mut root: Vec<usize> = (0..n).collect();
    for m in merges.iter().take(n.saturating_sub(k)) {
        for r in root.iter_mut() {
            if *r == m.right {
                *r = m.left;
            }
        }
    }
    let mut reps: Vec<usize> = root.clone();
    reps.sort_unstable();
    reps.dedup();
    root.iter().map(|r| reps.binary_search(r).unwrap()).collect()
}

/// Partition of `0..n` into `k` groups, each sorted, groups ordered by their
/// smallest member.
pub fn agglomerate(scores: &Tensor, k: usize) -> Result<Vec<Vec<usize>>> {
    let n = check_square(scores)?;
    if k == 0 || k > n {
        return Err(Error::Config(format!("cannot form {k} clusters from {n} mentions")));
    }
    let labels = cut(n, &dendrogram(scores)?, k);
    let mut groups = vec![Vec::new(); k];
    for (i, l) in labels.into_iter().enumerate() {
        groups[l].push(i);
    }
    Ok(groups)
}

/// Mean silhouette for a labeling over distances `1 - c_ij`. Singleton
/// clusters contribute 0.
pub fn silhouette(scores: &Tensor, labels: &[usize]) -> f64 {
    let n = labels.len();
    if n == 0 {
        return 0.0;
    }
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; k];
    for &l in labels {
        sizes[l] += 1;
    }
    let mut total = 0.0;
    for i in 0..n {
        if sizes[labels[i]] <= 1 {
            continue;
        }
        let mut sums = vec![0.0; k];
        for j in 0..n {
            if j != i {
                sums[labels[j]] += 1.0 - scores.get(i, j);
            }
        }
        let a = sums[labels[i]] / (sizes[labels[i]] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != labels[i] && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        if !b.is_finite() {
            continue;
        }
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    total / n as f64
}

/// Silhouette-maximizing cluster count within `k_range` (inclusive, clamped
/// to `[2, n - 1]`); ties go to the smallest `k`. With fewer than three
/// items the count is `n`.
pub fn select_num_clusters(scores: &Tensor, k_range: (usize, usize)) -> Result<usize> {
    let n = check_square(scores)?;
    if n < 3 {
        return Ok(n);
    }
    let lo = k_range.0.max(2);
    let hi = k_range.1.min(n - 1).max(lo);
    let merges = dendrogram(scores)?;
    let mut best = (lo, f64::NEG_INFINITY);
    for k in lo..=hi {
        let s = silhouette(scores, &cut(n, &merges, k));
        if s > best.1 {
            best = (k, s);
        }
    }
    Ok(best.0)
}

/// Default sweep `[2, min(n - 1, n_salient + 5)]`.
pub fn default_k_range(n: usize, n_salient: usize) -> (usize, usize) {
    k_range(n, n_salient, 5)
}

/// Sweep `[2, min(n - 1, n_salient + slack)]`.
pub fn k_range(n: usize, n_salient: usize, slack: usize) -> (usize, usize) {
    (2, (n.saturating_sub(1)).min(n_salient + slack).max(2))
}
