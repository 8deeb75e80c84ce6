//! COP-Kmeans on the unit sphere, plus the unconstrained baseline.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{canonicalize_labels, ClusterAssignment, ClusteringError, ConstraintSet};

/// K-means with hard cannot-link constraints. Centroids are spherical means
/// (mean then renormalize); the assignment pass visits items in order of
/// decreasing distance margin (second-nearest minus nearest), giving each to
/// the nearest centroid whose cluster holds none of its cannot-link
/// partners. Initialization comes from the counting step's labels projected
/// down (or up) to exactly `k` clusters.
///
/// Non-convergence is not an error: after `max_iter` passes the best labels
/// seen (by within-cluster distance) are returned. If some item finds all
/// `k` clusters blocked, the pass is retried with up to 10 reshuffled
/// processing orders (seeded) before reporting
/// [`ClusteringError::Infeasible`]. On success, `violations == 0`.
pub fn cop_kmeans(
    embeddings: &[Vec<f64>],
    constraints: &ConstraintSet,
    k: usize,
    init_labels: &ClusterAssignment,
    max_iter: usize,
    seed: u64,
) -> Result<ClusterAssignment, ClusteringError> {
    lloyd(embeddings, constraints, k, init_labels, max_iter, seed, true)
}

/// The same iteration without assignment blocking; violations may be > 0.
pub fn plain_kmeans(
    embeddings: &[Vec<f64>],
    constraints: &ConstraintSet,
    k: usize,
    init_labels: &ClusterAssignment,
    max_iter: usize,
    seed: u64,
) -> Result<ClusterAssignment, ClusteringError> {
    lloyd(embeddings, constraints, k, init_labels, max_iter, seed, false)
}

fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    (1.0 - dot).clamp(0.0, 2.0)
}

fn spherical_centroids(
    embeddings: &[Vec<f64>],
    labels: &[usize],
    k: usize,
    prev: Option<&[Vec<f64>]>,
) -> Vec<Vec<f64>> {
    let dim = embeddings.first().map_or(0, Vec::len);
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (e, &l) in embeddings.iter().zip(labels) {
        for (s, x) in sums[l].iter_mut().zip(e) {
            *s += x;
        }
        counts[l] += 1;
    }
    for (c, centroid) in sums.iter_mut().enumerate() {
        let norm = centroid.iter().map(|x| x * x).sum::<f64>().sqrt();
        if counts[c] == 0 || norm <= f64::EPSILON {
            // Empty cluster or degenerate mean: keep the previous direction
            // until the repair step fills the cluster.
            if let Some(prev) = prev {
                centroid.clone_from(&prev[c]);
            }
        } else {
            for x in centroid.iter_mut() {
                *x /= norm;
            }
        }
    }
    sums
}

fn objective(embeddings: &[Vec<f64>], labels: &[usize], k: usize) -> f64 {
    let centroids = spherical_centroids(embeddings, labels, k, None);
    embeddings
        .iter()
        .zip(labels)
        .map(|(e, &l)| cosine_distance(e, &centroids[l]))
        .sum()
}

/// Projects arbitrary initial labels onto exactly `k` clusters: extra
/// clusters merge (smallest first) into the nearest surviving centroid;
/// missing clusters are seeded by splitting off the item farthest from its
/// own centroid.
fn project_init(embeddings: &[Vec<f64>], init: &[usize], k: usize) -> Vec<usize> {
    let mut labels = canonicalize_labels(init, init.iter().copied().max().map_or(1, |m| m + 1));
    let mut cur_k = labels.iter().copied().max().map_or(0, |m| m + 1).max(1);

    while cur_k > k {
        let centroids = spherical_centroids(embeddings, &labels, cur_k, None);
        let mut sizes = vec![0usize; cur_k];
        for &l in &labels {
            sizes[l] += 1;
        }
        // Size ties break on nearest-neighbor distance (a continuous key,
        // so the choice stays stable under input permutation).
        let nn_dist: Vec<f64> = (0..cur_k)
            .map(|c| {
                (0..cur_k)
                    .filter(|&o| o != c)
                    .map(|o| cosine_distance(&centroids[c], &centroids[o]))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let victim = (0..cur_k)
            .min_by(|&a, &b| {
                sizes[a]
                    .cmp(&sizes[b])
                    .then(nn_dist[a].total_cmp(&nn_dist[b]))
                    .then(a.cmp(&b))
            })
            .expect("cur_k > 0");
        let target = (0..cur_k)
            .filter(|&c| c != victim)
            .min_by(|&a, &b| {
                cosine_distance(&centroids[victim], &centroids[a])
                    .total_cmp(&cosine_distance(&centroids[victim], &centroids[b]))
                    .then(a.cmp(&b))
            })
            .expect("cur_k > 1");
        for l in labels.iter_mut() {
            if *l == victim {
                *l = target;
            }
        }
        labels = canonicalize_labels(&labels, cur_k);
        cur_k -= 1;
    }

    while cur_k < k {
        let centroids = spherical_centroids(embeddings, &labels, cur_k, None);
        let mut sizes = vec![0usize; cur_k];
        for &l in &labels {
            sizes[l] += 1;
        }
        let split = (0..embeddings.len())
            .filter(|&i| sizes[labels[i]] > 1)
            .max_by(|&a, &b| {
                cosine_distance(&embeddings[a], &centroids[labels[a]])
                    .total_cmp(&cosine_distance(&embeddings[b], &centroids[labels[b]]))
                    .then(b.cmp(&a))
            });
        match split {
            Some(i) => {
                labels[i] = cur_k;
                cur_k += 1;
            }
            // Everything is a singleton already; cannot reach k.
            None => break,
        }
    }
    labels
}

#[allow(clippy::too_many_arguments)]
fn lloyd(
    embeddings: &[Vec<f64>],
    constraints: &ConstraintSet,
    k: usize,
    init_labels: &ClusterAssignment,
    max_iter: usize,
    seed: u64,
    blocking: bool,
) -> Result<ClusterAssignment, ClusteringError> {
    let n = embeddings.len();
    if n == 0 || k == 0 {
        return Err(ClusteringError::Input("empty input or k = 0".into()));
    }
    if k > n {
        return Err(ClusteringError::Input(format!(
            "k = {k} exceeds the {n} items"
        )));
    }
    if init_labels.labels.len() != n {
        return Err(ClusteringError::Input(format!(
            "init labels cover {} items, expected {n}",
            init_labels.labels.len()
        )));
    }
    let partners = constraints.partners();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut labels = project_init(embeddings, &init_labels.labels, k);
    let mut best: Option<(f64, Vec<usize>)> = None;

    let mut centroids = spherical_centroids(embeddings, &labels, k, None);
    for _ in 0..max_iter {
        let new_labels =
            assign_pass(embeddings, &centroids, &partners, k, blocking, &mut rng)?;
        let new_labels = repair_empty_clusters(embeddings, &centroids, new_labels, k);

        let obj = objective(embeddings, &new_labels, k);
        if best.as_ref().is_none_or(|(b, _)| obj < *b - 1e-12) {
            best = Some((obj, new_labels.clone()));
        }
        let converged = new_labels == labels;
        labels = new_labels;
        if converged {
            break;
        }
        centroids = spherical_centroids(embeddings, &labels, k, Some(&centroids));
    }

    let final_labels = best.map(|(_, l)| l).unwrap_or(labels);
    let final_labels = canonicalize_labels(&final_labels, k);
    Ok(ClusterAssignment::evaluate(
        final_labels,
        k,
        constraints,
        None,
    ))
}

/// One assignment pass. Items are visited by decreasing margin (confident
/// items claim their cluster first); on an infeasible order, up to 10
/// reshuffles are attempted before giving up.
fn assign_pass(
    embeddings: &[Vec<f64>],
    centroids: &[Vec<f64>],
    partners: &[Vec<usize>],
    k: usize,
    blocking: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>, ClusteringError> {
    let n = embeddings.len();
    let dists: Vec<Vec<f64>> = embeddings
        .iter()
        .map(|e| centroids.iter().map(|c| cosine_distance(e, c)).collect())
        .collect();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        margin(&dists[b])
            .total_cmp(&margin(&dists[a]))
            .then(a.cmp(&b))
    });

    let mut blocked_item = 0;
    for attempt in 0..=10 {
        if attempt > 0 {
            order.shuffle(rng);
        }
        match try_order(&dists, partners, k, blocking, &order) {
            Ok(labels) => return Ok(labels),
            Err(item) => blocked_item = item,
        }
    }
    Err(ClusteringError::Infeasible { item: blocked_item })
}

fn margin(dists: &[f64]) -> f64 {
    let (mut d1, mut d2) = (f64::INFINITY, f64::INFINITY);
    for &d in dists {
        if d < d1 {
            d2 = d1;
            d1 = d;
        } else if d < d2 {
            d2 = d;
        }
    }
    if d2.is_finite() {
        d2 - d1
    } else {
        0.0
    }
}

fn try_order(
    dists: &[Vec<f64>],
    partners: &[Vec<usize>],
    k: usize,
    blocking: bool,
    order: &[usize],
) -> Result<Vec<usize>, usize> {
    let n = dists.len();
    let mut labels = vec![usize::MAX; n];
    for &i in order {
        let mut candidates: Vec<usize> = (0..k).collect();
        candidates.sort_by(|&a, &b| dists[i][a].total_cmp(&dists[i][b]).then(a.cmp(&b)));
        let choice = candidates.into_iter().find(|&c| {
            !blocking || !partners[i].iter().any(|&p| labels[p] == c)
        });
        match choice {
            Some(c) => labels[i] = c,
            None => return Err(i),
        }
    }
    Ok(labels)
}

/// Every cluster id in `[0, k)` must own at least one item: each empty
/// cluster takes the item currently farthest from its own centroid (from a
/// cluster with at least two members). An empty cluster has no members, so
/// the move can never violate a cannot-link constraint.
fn repair_empty_clusters(
    embeddings: &[Vec<f64>],
    centroids: &[Vec<f64>],
    mut labels: Vec<usize>,
    k: usize,
) -> Vec<usize> {
    let mut sizes = vec![0usize; k];
    for &l in &labels {
        sizes[l] += 1;
    }
    for c in 0..k {
        if sizes[c] > 0 {
            continue;
        }
        let farthest = (0..labels.len())
            .filter(|&i| sizes[labels[i]] > 1)
            .max_by(|&a, &b| {
                cosine_distance(&embeddings[a], &centroids[labels[a]])
                    .total_cmp(&cosine_distance(&embeddings[b], &centroids[labels[b]]))
                    .then(b.cmp(&a))
            });
        if let Some(i) = farthest {
            sizes[labels[i]] -= 1;
            labels[i] = c;
            sizes[c] = 1;
        }
    }
    labels
}
