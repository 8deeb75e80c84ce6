//! Cannot-link constrained clustering of per-segment speaker embeddings.
//!
//! Local streams from one segment are different speakers by construction, so
//! their embeddings must never share a cluster. Stitching runs in two steps:
//!
//! 1. [`constrained_ahc`] — average-linkage agglomeration where merges
//!    spanning a cannot-link pair pay an additive penalty (a soft
//!    constraint); the surviving cluster count estimates the speaker count.
//! 2. [`cop_kmeans`] — Lloyd iterations on the unit sphere where the
//!    assignment step hard-blocks clusters already holding a cannot-link
//!    partner, with the cluster count fixed to
//!    [`estimate_num_speakers`]`(ahc_k, max_speakers)`.
//!
//! [`plain_ahc`] and [`plain_kmeans`] are the unconstrained baselines
//! (penalty zero / no blocking); they may violate constraints and report how
//! often they do. [`cluster_session`] wires the whole procedure together for
//! one channel of one session.

mod ahc;
mod kmeans;

use std::collections::BTreeSet;

use thiserror::Error;

use crate::local_io::LocalStream;

pub use ahc::{constrained_ahc, plain_ahc};
pub use kmeans::{cop_kmeans, plain_kmeans};

#[derive(Debug, Error)]
pub enum ClusteringError {
    /// Some item had all `k` clusters blocked by cannot-link partners, in
    /// every retry order.
    #[error("cannot-link constraints leave no feasible cluster for item {item}")]
    Infeasible { item: usize },
    #[error("invalid clustering input: {0}")]
    Input(String),
}

/// Cannot-link pairs over embedding indices.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ConstraintSet {
    pub n_items: usize,
    pub cannot_link: BTreeSet<(usize, usize)>,
}

impl ConstraintSet {
    /// Builds a constraint set; pairs are stored unordered (`a < b`),
    /// self-pairs and out-of-range indices are rejected.
    pub fn new(
        n_items: usize,
        pairs: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self, ClusteringError> {
        let mut cannot_link = BTreeSet::new();
        for (a, b) in pairs {
            if a == b {
                return Err(ClusteringError::Input(format!("self pair ({a}, {b})")));
            }
            if a >= n_items || b >= n_items {
                return Err(ClusteringError::Input(format!(
                    "pair ({a}, {b}) out of range for {n_items} items"
                )));
            }
            cannot_link.insert((a.min(b), a.max(b)));
        }
        Ok(Self {
            n_items,
            cannot_link,
        })
    }

    pub fn empty(n_items: usize) -> Self {
        Self {
            n_items,
            cannot_link: BTreeSet::new(),
        }
    }

    /// Cannot-link every pair of items sharing a group id (segment
    /// co-membership).
    pub fn from_groups(groups: &[usize]) -> Self {
        let mut pairs = BTreeSet::new();
        for i in 0..groups.len() {
            for j in i + 1..groups.len() {
                if groups[i] == groups[j] {
                    pairs.insert((i, j));
                }
            }
        }
        Self {
            n_items: groups.len(),
            cannot_link: pairs,
        }
    }

    /// Adjacency view: `partners[i]` lists every item cannot-linked to `i`.
    pub fn partners(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n_items];
        for &(a, b) in &self.cannot_link {
            adj[a].push(b);
            adj[b].push(a);
        }
        adj
    }

    /// Number of cannot-link pairs assigned the same label.
    pub fn count_violations(&self, labels: &[usize]) -> usize {
        self.cannot_link
            .iter()
            .filter(|&&(a, b)| labels[a] == labels[b])
            .count()
    }
}

/// Result of a clustering run: per-item labels in `[0, k)` plus constraint
/// diagnostics. `violating_segments` counts the distinct groups (segments)
/// owning at least one violated pair; it is zero when no group information
/// was supplied.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterAssignment {
    pub labels: Vec<usize>,
    pub k: usize,
    pub violations: usize,
    pub violating_segments: usize,
}

impl ClusterAssignment {
    /// Builds an assignment from labels, recomputing the violation counts.
    pub fn evaluate(
        labels: Vec<usize>,
        k: usize,
        constraints: &ConstraintSet,
        groups: Option<&[usize]>,
    ) -> Self {
        let violations = constraints.count_violations(&labels);
        let violating_segments = groups.map_or(0, |groups| {
            let mut seen = BTreeSet::new();
            for &(a, b) in &constraints.cannot_link {
                if labels[a] == labels[b] {
                    seen.insert(groups[a]);
                    seen.insert(groups[b]);
                }
            }
            seen.len()
        });
        Self {
            labels,
            k,
            violations,
            violating_segments,
        }
    }
}

/// Relabels clusters by first occurrence in item order, so identical
/// partitions always get identical label vectors.
pub(crate) fn canonicalize_labels(labels: &[usize], k: usize) -> Vec<usize> {
    let mut rename = vec![usize::MAX; k];
    let mut next = 0;
    let mut out = Vec::with_capacity(labels.len());
    for &l in labels {
        if rename[l] == usize::MAX {
            rename[l] = next;
            next += 1;
        }
        out.push(rename[l]);
    }
    out
}

/// `d[i][j] = 1 - <e_i, e_j>` for unit-normalized rows; the diagonal is
/// exactly zero and the matrix is exactly symmetric. Values are clamped to
/// the metric's `[0, 2]` range to absorb rounding.
pub fn cosine_distance_matrix(embeddings: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = embeddings.len();
    let mut dist = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let dot: f64 = embeddings[i]
                .iter()
                .zip(&embeddings[j])
                .map(|(a, b)| a * b)
                .sum();
            let d = (1.0 - dot).clamp(0.0, 2.0);
            dist[i][j] = d;
            dist[j][i] = d;
        }
    }
    dist
}

/// The speaker count used for the refinement step: the cAHC estimate capped
/// by the predefined session maximum.
pub fn estimate_num_speakers(ahc_k: usize, max_speakers: usize) -> usize {
    assert!(ahc_k >= 1 && max_speakers >= 1);
    ahc_k.min(max_speakers)
}

/// Which clustering algorithm a session run uses. The constrained pair is
/// the production configuration; the plain pair exists for ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    /// Plain average-linkage AHC only.
    Ahc,
    /// Constrained AHC only.
    ConstrainedAhc,
    /// Plain AHC for counting, plain k-means for refinement.
    Kmeans,
    /// Constrained AHC for counting, COP-Kmeans for refinement.
    CopKmeans,
}

/// Knobs for [`cluster_session`].
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusteringParams {
    pub algorithm: Algorithm,
    /// cAHC merge-cost stop threshold, in cosine-distance units.
    pub stop_threshold: f64,
    /// Additive cost per cannot-link pair a merge would join. At the metric
    /// maximum (2.0) any constrained merge costs at least the full range.
    pub penalty: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for ClusteringParams {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::CopKmeans,
            stop_threshold: 0.6,
            penalty: 2.0,
            max_iter: 100,
            seed: 0,
        }
    }
}

/// Diagnostics from one session-channel clustering run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionClustering {
    pub assignment: ClusterAssignment,
    /// Cluster count the counting step produced, before the cap.
    pub ahc_k: usize,
    /// Violations left by the counting step (soft constraints may leak).
    pub ahc_violations: usize,
    /// Cluster count after the max-speakers cap.
    pub capped_k: usize,
}

/// The two-step procedure for one channel: derive cannot-link constraints
/// from segment co-membership, estimate the speaker count, cap it, refine.
///
/// Streams must be the selected (active) streams, in clustering item order.
pub fn cluster_session(
    streams: &[LocalStream],
    max_speakers: usize,
    params: &ClusteringParams,
) -> Result<SessionClustering, ClusteringError> {
    if streams.is_empty() {
        return Err(ClusteringError::Input("no active streams".into()));
    }
    let embeddings: Vec<Vec<f64>> = streams.iter().map(|s| s.embedding.clone()).collect();
    let groups: Vec<usize> = streams.iter().map(|s| s.segment_index).collect();
    let constraints = ConstraintSet::from_groups(&groups);
    let dist = cosine_distance_matrix(&embeddings);

    let constrained = matches!(params.algorithm, Algorithm::ConstrainedAhc | Algorithm::CopKmeans);
    let penalty = if constrained { params.penalty } else { 0.0 };
    // AHC-only runs honor the session speaker cap by continued merging;
    // k-means runs cap through the estimated cluster count instead.
    let ahc_cap = match params.algorithm {
        Algorithm::Ahc | Algorithm::ConstrainedAhc => Some(max_speakers),
        _ => None,
    };
    let ahc = ahc::ahc_with_cap(&dist, &constraints, params.stop_threshold, penalty, ahc_cap);
    let ahc_k = ahc.k;
    let ahc_violations = ahc.violations;
    let k = estimate_num_speakers(ahc_k, max_speakers);

    let assignment = match params.algorithm {
        Algorithm::Ahc | Algorithm::ConstrainedAhc => {
            ClusterAssignment::evaluate(ahc.labels.clone(), ahc.k, &constraints, Some(&groups))
        }
        Algorithm::Kmeans => {
            let a = plain_kmeans(
                &embeddings,
                &constraints,
                k,
                &ahc,
                params.max_iter,
                params.seed,
            )?;
            ClusterAssignment::evaluate(a.labels, a.k, &constraints, Some(&groups))
        }
        Algorithm::CopKmeans => {
            let a = cop_kmeans(
                &embeddings,
                &constraints,
                k,
                &ahc,
                params.max_iter,
                params.seed,
            )?;
            ClusterAssignment::evaluate(a.labels, a.k, &constraints, Some(&groups))
        }
    };
    Ok(SessionClustering {
        ahc_k,
        ahc_violations,
        capped_k: k,
        assignment,
    })
}
