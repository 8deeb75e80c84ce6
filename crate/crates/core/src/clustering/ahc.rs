//! Average-linkage agglomerative clustering with soft cannot-link penalties.

use super::{canonicalize_labels, ClusterAssignment, ConstraintSet};

/// Average-linkage AHC where the merge cost between clusters `A`, `B` is
///
/// ```text
/// mean pairwise distance(A, B) + penalty * |cannot-link pairs spanning A, B|
/// ```
///
/// The cheapest pair merges while its cost stays below `stop_threshold`;
/// ties break toward the pair with the smallest cluster indices, so the
/// result is deterministic. The returned `k` is the surviving cluster count
/// (the speaker-count estimate).
pub fn constrained_ahc(
    dist: &[Vec<f64>],
    constraints: &ConstraintSet,
    stop_threshold: f64,
    penalty: f64,
) -> ClusterAssignment {
    ahc_with_cap(dist, constraints, stop_threshold, penalty, None)
}

/// Penalty-free baseline; identical agglomeration with penalty fixed to 0.
pub fn plain_ahc(
    dist: &[Vec<f64>],
    constraints: &ConstraintSet,
    stop_threshold: f64,
) -> ClusterAssignment {
    ahc_with_cap(dist, constraints, stop_threshold, 0.0, None)
}

/// Agglomeration core. With `max_clusters` set, merging continues past the
/// threshold (cheapest pair first) until the cluster count fits the cap;
/// session runs use this to honor the predefined speaker maximum when no
/// k-means refinement follows.
pub(super) fn ahc_with_cap(
    dist: &[Vec<f64>],
    constraints: &ConstraintSet,
    stop_threshold: f64,
    penalty: f64,
    max_clusters: Option<usize>,
) -> ClusterAssignment {
    let n = dist.len();
    assert!(
        dist.iter().all(|row| row.len() == n),
        "distance matrix must be square"
    );
    if n == 0 {
        return ClusterAssignment::evaluate(Vec::new(), 0, constraints, None);
    }

    // Cluster state lives in slot = min original item index of the cluster.
    // sum_d[a][b] is the sum of pairwise distances between members of the
    // clusters in slots a and b; link[a][b] the count of cannot-link pairs
    // spanning them. Average linkage then merges additively
    // (Lance-Williams): both quantities just add when clusters merge.
    let mut active = vec![true; n];
    let mut size = vec![1usize; n];
    let mut members: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let mut sum_d: Vec<Vec<f64>> = dist.to_vec();
    let mut link = vec![vec![0usize; n]; n];
    for &(a, b) in &constraints.cannot_link {
        link[a][b] = 1;
        link[b][a] = 1;
    }

    let mut n_active = n;
    while n_active > 1 {
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..n {
            if !active[i] {
                continue;
            }
            for j in i + 1..n {
                if !active[j] {
                    continue;
                }
                let cost = sum_d[i][j] / (size[i] * size[j]) as f64
                    + penalty * link[i][j] as f64;
                // Strict `<` keeps the first (smallest-index) pair on ties.
                if best.is_none_or(|(c, _, _)| cost < c) {
                    best = Some((cost, i, j));
                }
            }
        }
        let (cost, i, j) = best.expect("at least one active pair");
        let under_threshold = cost < stop_threshold;
        let over_cap = max_clusters.is_some_and(|cap| n_active > cap);
        if !under_threshold && !over_cap {
            break;
        }
        for m in 0..n {
            if active[m] && m != i && m != j {
                sum_d[i][m] += sum_d[j][m];
                sum_d[m][i] = sum_d[i][m];
                link[i][m] += link[j][m];
                link[m][i] = link[i][m];
            }
        }
        size[i] += size[j];
        let moved = std::mem::take(&mut members[j]);
        members[i].extend(moved);
        active[j] = false;
        n_active -= 1;
    }

    let mut labels = vec![0usize; n];
    let mut k = 0;
    for (slot, is_active) in active.iter().enumerate() {
        if *is_active {
            for &item in &members[slot] {
                labels[item] = k;
            }
            k += 1;
        }
    }
    let labels = canonicalize_labels(&labels, k);
    ClusterAssignment::evaluate(labels, k, constraints, None)
}
