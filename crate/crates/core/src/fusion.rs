//! DOVER-LAP multi-channel hypothesis fusion.
//!
//! Per-channel diarization results use arbitrary local speaker labels, so
//! fusion runs in two stages: [`align_labels`] maps every hypothesis onto a
//! shared global label set (Hungarian matching on pairwise speaker overlap,
//! anchored on the hypothesis with the most speech), then
//! [`dover_lap_vote`] cuts the session into atomic regions at every turn
//! boundary and emits, per region, the speakers with the strongest weighted
//! vote — the estimated speaker count per region being the weighted mean of
//! the per-hypothesis counts, rounded half-to-even.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::assignment::hungarian;
use crate::timeline::{intervals, SpeakerTurn, Timeline, TIME_EPS};

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("hypothesis set needs at least one hypothesis")]
    Empty,
    #[error("hypothesis {index} has session id {found:?}, expected {expected:?}")]
    SessionMismatch {
        index: usize,
        expected: String,
        found: String,
    },
    #[error("{hypotheses} hypotheses but {weights} weights")]
    WeightCount { hypotheses: usize, weights: usize },
    #[error("weights must be positive (weight {index} is {value})")]
    NonPositiveWeight { index: usize, value: f64 },
}

/// Per-channel hypotheses for one session plus per-channel user weights.
#[derive(Debug, Clone)]
pub struct HypothesisSet {
    pub session_id: String,
    pub hypotheses: Vec<Timeline>,
    pub weights: Vec<f64>,
}

impl HypothesisSet {
    /// Unit-weighted set; hypotheses are normalized on entry.
    pub fn new(hypotheses: Vec<Timeline>) -> Result<Self, FusionError> {
        let weights = vec![1.0; hypotheses.len()];
        Self::with_weights(hypotheses, weights)
    }

    pub fn with_weights(
        hypotheses: Vec<Timeline>,
        weights: Vec<f64>,
    ) -> Result<Self, FusionError> {
        let Some(first) = hypotheses.first() else {
            return Err(FusionError::Empty);
        };
        let session_id = first.session_id.clone();
        for (index, h) in hypotheses.iter().enumerate() {
            if h.session_id != session_id {
                return Err(FusionError::SessionMismatch {
                    index,
                    expected: session_id,
                    found: h.session_id.clone(),
                });
            }
        }
        if weights.len() != hypotheses.len() {
            return Err(FusionError::WeightCount {
                hypotheses: hypotheses.len(),
                weights: weights.len(),
            });
        }
        for (index, &value) in weights.iter().enumerate() {
            if !value.is_finite() || value <= 0.0 {
                return Err(FusionError::NonPositiveWeight { index, value });
            }
        }
        let hypotheses = hypotheses.iter().map(Timeline::normalize).collect();
        Ok(Self {
            session_id,
            hypotheses,
            weights,
        })
    }
}

/// Per-hypothesis map from local speaker labels to global labels, injective
/// within each hypothesis. `global_order` records label creation order and
/// is the tie-break order during voting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMapping {
    pub maps: Vec<BTreeMap<String, String>>,
    pub global_order: Vec<String>,
}

/// How per-hypothesis vote weights are derived.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RankWeighting {
    /// Every hypothesis weighs the same.
    Uniform,
    /// Hypotheses ranked by total pairwise overlap agreement; rank `r` of
    /// `K` weighs `(K - r + 1) / (1 + 2 + ... + K)`.
    LinearRank,
}

/// Alignment cost between the speakers of two normalized timelines:
/// `cost[i][j]` is the negated overlap duration between speaker `i` of `a`
/// and speaker `j` of `b`, speakers indexed in first-appearance order.
pub fn pairwise_overlap_cost(a: &Timeline, b: &Timeline) -> Vec<Vec<f64>> {
    let a_turns = a.per_speaker();
    let b_turns = b.per_speaker();
    a.speakers()
        .iter()
        .map(|sa| {
            b.speakers()
                .iter()
                .map(|sb| -intervals::intersect_duration(&a_turns[sa], &b_turns[sb]))
                .collect()
        })
        .collect()
}

fn fresh_label(taken: &[String], local: &str, hyp_index: usize) -> String {
    if !taken.iter().any(|g| g == local) {
        return local.to_string();
    }
    let mut candidate = format!("{local}#{hyp_index}");
    while taken.iter().any(|g| g == &candidate) {
        candidate.push('+');
    }
    candidate
}

/// Aligns every hypothesis onto a running global label set.
///
/// The anchor (largest total speech, ties to the lowest index) keeps its own
/// labels. Each other hypothesis is matched by [`hungarian`] on
/// [`pairwise_overlap_cost`] against the union footprint of the globals
/// mapped so far; matches with zero overlap are refused, and unmatched local
/// labels get fresh global labels.
pub fn align_labels(hyps: &HypothesisSet) -> LabelMapping {
    let n = hyps.hypotheses.len();
    let anchor = (0..n)
        .max_by(|&a, &b| {
            hyps.hypotheses[a]
                .total_speech()
                .total_cmp(&hyps.hypotheses[b].total_speech())
                .then(b.cmp(&a))
        })
        .expect("validated non-empty");

    let mut maps: Vec<BTreeMap<String, String>> = vec![BTreeMap::new(); n];
    let mut global_order: Vec<String> = Vec::new();
    // Union of mapped turns per global label, kept normalized.
    let mut footprints: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();

    let extend_footprint = |footprints: &mut BTreeMap<String, Vec<(f64, f64)>>,
                                global: &str,
                                turns: &[(f64, f64)]| {
        let entry = footprints.entry(global.to_string()).or_default();
        let mut merged = entry.clone();
        merged.extend_from_slice(turns);
        *entry = intervals::normalize(merged);
    };

    // Anchor first, then the rest in index order.
    let order = std::iter::once(anchor).chain((0..n).filter(|&h| h != anchor));
    for h in order {
        let hyp = &hyps.hypotheses[h];
        let locals = hyp.speakers();
        let local_turns = hyp.per_speaker();
        if h == anchor {
            for local in &locals {
                let global = fresh_label(&global_order, local, h);
                maps[h].insert(local.clone(), global.clone());
                extend_footprint(&mut footprints, &global, &local_turns[local]);
                global_order.push(global);
            }
            continue;
        }

        // Rows: globals in creation order; columns: this hypothesis's locals.
        let cost: Vec<Vec<f64>> = global_order
            .iter()
            .map(|g| {
                locals
                    .iter()
                    .map(|l| -intervals::intersect_duration(&footprints[g], &local_turns[l]))
                    .collect()
            })
            .collect();
        let mut matched: BTreeMap<usize, usize> = BTreeMap::new();
        if !global_order.is_empty() && !locals.is_empty() {
            for (row, col) in hungarian(&cost).pairs() {
                if cost[row][col] < -TIME_EPS {
                    matched.insert(col, row);
                }
            }
        }
        for (col, local) in locals.iter().enumerate() {
            let global = match matched.get(&col) {
                Some(&row) => global_order[row].clone(),
                None => {
                    let g = fresh_label(&global_order, local, h);
                    global_order.push(g.clone());
                    g
                }
            };
            maps[h].insert(local.clone(), global.clone());
            extend_footprint(&mut footprints, &global, &local_turns[local]);
        }
    }
    LabelMapping { maps, global_order }
}

/// Sorted hypothesis indices by agreement (descending), the rank order for
/// weighting. Agreement of `k` is the summed per-global overlap duration
/// with every other hypothesis.
fn rank_order(mapped: &[Timeline]) -> Vec<usize> {
    let per: Vec<BTreeMap<String, Vec<(f64, f64)>>> =
        mapped.iter().map(Timeline::per_speaker).collect();
    let mut agreement = vec![0.0f64; mapped.len()];
    for k in 0..mapped.len() {
        for l in 0..mapped.len() {
            if l == k {
                continue;
            }
            for (g, ivs) in &per[k] {
                if let Some(other) = per[l].get(g) {
                    agreement[k] += intervals::intersect_duration(ivs, other);
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..mapped.len()).collect();
    order.sort_by(|&a, &b| agreement[b].total_cmp(&agreement[a]).then(a.cmp(&b)));
    order
}

/// Overlap-aware vote over aligned hypotheses.
///
/// The timeline is cut into atomic regions at every mapped turn boundary.
/// Per region, the speaker-count estimate is the weighted mean of each
/// hypothesis's active-speaker count, rounded half-to-even; that many global
/// speakers are emitted, strongest summed vote first, ties broken by global
/// label creation order.
pub fn dover_lap_vote(
    hyps: &HypothesisSet,
    mapping: &LabelMapping,
    weighting: RankWeighting,
) -> Timeline {
    let k_hyps = hyps.hypotheses.len();
    let mapped: Vec<Timeline> = hyps
        .hypotheses
        .iter()
        .zip(&mapping.maps)
        .map(|(h, m)| h.relabel(m).normalize())
        .collect();

    // Rank-derived base weights times user weights, renormalized.
    let order = rank_order(&mapped);
    let mut weights = vec![0.0f64; k_hyps];
    let rank_sum = (k_hyps * (k_hyps + 1)) as f64 / 2.0;
    for (pos, &k) in order.iter().enumerate() {
        let base = match weighting {
            RankWeighting::Uniform => 1.0 / k_hyps as f64,
            RankWeighting::LinearRank => (k_hyps - pos) as f64 / rank_sum,
        };
        weights[k] = base * hyps.weights[k];
    }
    // Sum in rank order: the normalization must not depend on the caller's
    // hypothesis ordering, down to the last float ulp.
    let total: f64 = order.iter().map(|&k| weights[k]).sum();
    for w in weights.iter_mut() {
        *w /= total;
    }

    // Atomic regions from all turn boundaries.
    let mut bounds: Vec<f64> = mapped
        .iter()
        .flat_map(|t| t.turns.iter().flat_map(|x| [x.start, x.end]))
        .collect();
    bounds.sort_by(f64::total_cmp);
    bounds.dedup_by(|a, b| (*a - *b).abs() <= TIME_EPS);

    let per: Vec<BTreeMap<String, Vec<(f64, f64)>>> =
        mapped.iter().map(Timeline::per_speaker).collect();
    let global_index: BTreeMap<&str, usize> = mapping
        .global_order
        .iter()
        .enumerate()
        .map(|(i, g)| (g.as_str(), i))
        .collect();

    let mut turns: Vec<SpeakerTurn> = Vec::new();
    for window in bounds.windows(2) {
        let (t0, t1) = (window[0], window[1]);
        if t1 - t0 <= TIME_EPS {
            continue;
        }
        let mid = 0.5 * (t0 + t1);
        let mut votes: BTreeMap<&str, f64> = BTreeMap::new();
        let mut weighted_count = 0.0f64;
        // Iterate in rank order so float accumulation is independent of the
        // caller's hypothesis ordering.
        for &k in &order {
            let mut active = 0usize;
            for (g, ivs) in &per[k] {
                let covered = ivs
                    .iter()
                    .any(|&(s, e)| s <= mid && mid < e);
                if covered {
                    active += 1;
                    *votes.entry(g.as_str()).or_insert(0.0) += weights[k];
                }
            }
            weighted_count += weights[k] * active as f64;
        }
        let n_hat = weighted_count.round_ties_even().max(0.0) as usize;
        if n_hat == 0 {
            continue;
        }
        let mut ranked: Vec<(&str, f64)> = votes.into_iter().filter(|&(_, v)| v > 0.0).collect();
        ranked.sort_by(|a, b| {
            b.1.total_cmp(&a.1)
                .then(global_index[a.0].cmp(&global_index[b.0]))
        });
        for &(g, _) in ranked.iter().take(n_hat) {
            turns.push(SpeakerTurn {
                speaker: g.to_string(),
                start: t0,
                end: t1,
            });
        }
    }
    Timeline::new(hyps.session_id.clone(), turns).normalize()
}

/// Align-then-vote convenience wrapper.
pub fn fuse(hyps: &HypothesisSet, weighting: RankWeighting) -> Timeline {
    dover_lap_vote(hyps, &align_labels(hyps), weighting)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timeline::SpeakerTurn;

    fn tl(session: &str, turns: &[(&str, f64, f64)]) -> Timeline {
        Timeline::new(
            session,
            turns
                .iter()
                .map(|&(s, a, b)| SpeakerTurn::new(s, a, b).unwrap())
                .collect(),
        )
    }

    #[test]
    fn overlap_cost_matrix() {
        let a = tl("s", &[("A", 0.0, 10.0)]).normalize();
        let b = tl("s", &[("X", 0.0, 4.0)]).normalize();
        let cost = pairwise_overlap_cost(&a, &b);
        assert_eq!(cost.len(), 1);
        assert!((cost[0][0] + 4.0).abs() < 1e-12);

        let disjoint = tl("s", &[("Y", 20.0, 30.0)]).normalize();
        let cost = pairwise_overlap_cost(&a, &disjoint);
        assert_eq!(cost[0][0], 0.0);
    }

    #[test]
    fn identical_hypotheses_align_identity() {
        let a = tl("s", &[("A", 0.0, 5.0), ("B", 3.0, 8.0)]);
        let b = tl("s", &[("X", 0.0, 5.0), ("Y", 3.0, 8.0)]);
        let hyps = HypothesisSet::new(vec![a, b]).unwrap();
        let mapping = align_labels(&hyps);
        assert_eq!(mapping.maps[1]["X"], "A");
        assert_eq!(mapping.maps[1]["Y"], "B");
    }

    #[test]
    fn extra_speaker_gets_fresh_label() {
        let a = tl("s", &[("A", 0.0, 5.0)]);
        let b = tl("s", &[("A", 0.0, 5.0), ("Z", 20.0, 22.0)]);
        let hyps = HypothesisSet::new(vec![b.clone(), a]).unwrap();
        let mapping = align_labels(&hyps);
        // The anchor is hypothesis 0 (more speech); Z stays its own global.
        assert_eq!(mapping.maps[0]["Z"], "Z");
        // A fresh label never collides with an existing global.
        let c = tl("s", &[("A", 0.0, 1.0), ("B", 10.0, 11.0)]);
        let d = tl("s", &[("B", 0.0, 1.0)]);
        let hyps = HypothesisSet::new(vec![c, d]).unwrap();
        let mapping = align_labels(&hyps);
        // d's "B" overlaps anchor's "A" and must map onto it.
        assert_eq!(mapping.maps[1]["B"], "A");
    }

    #[test]
    fn fuse_is_idempotent_on_copies() {
        let t = tl(
            "s",
            &[("A", 0.0, 4.0), ("B", 2.0, 6.0), ("A", 8.0, 9.5), ("C", 8.5, 10.0)],
        );
        for k in [1usize, 2, 3, 6] {
            let hyps = HypothesisSet::new(vec![t.clone(); k]).unwrap();
            let fused = fuse(&hyps, RankWeighting::LinearRank);
            assert_eq!(fused, t.normalize(), "k = {k}");
        }
    }

    #[test]
    fn majority_overrules_minority() {
        let active = tl("s", &[("A", 0.0, 1.0)]);
        let silent = Timeline::empty("s");
        // 2 of 3 say A is active: vote 2/3 -> one speaker.
        let hyps =
            HypothesisSet::new(vec![active.clone(), active.clone(), silent.clone()]).unwrap();
        let fused = fuse(&hyps, RankWeighting::Uniform);
        assert_eq!(fused.turns.len(), 1);
        assert_eq!(fused.turns[0].speaker, "A");
        // 1 of 3: vote 1/3 -> silence.
        let hyps = HypothesisSet::new(vec![active, silent.clone(), silent]).unwrap();
        let fused = fuse(&hyps, RankWeighting::Uniform);
        assert!(fused.turns.is_empty());
    }

    #[test]
    fn overlapped_pair_is_kept() {
        let t = tl("s", &[("A", 0.0, 1.0), ("B", 0.0, 1.0)]);
        let hyps = HypothesisSet::new(vec![t.clone(), t.clone()]).unwrap();
        let fused = fuse(&hyps, RankWeighting::LinearRank);
        assert_eq!(fused.turns.len(), 2);
    }

    #[test]
    fn output_labels_are_global_and_counts_bounded() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for _ in 0..20 {
            let hyps: Vec<Timeline> = (0..3)
                .map(|_| {
                    let turns = (0..rng.random_range(1..12usize))
                        .map(|_| {
                            let spk = rng.random_range(0..3u32);
                            let start = rng.random_range(0..500u32) as f64 * 0.1;
                            let dur = rng.random_range(5..40u32) as f64 * 0.1;
                            SpeakerTurn::new(format!("s{spk}"), start, start + dur).unwrap()
                        })
                        .collect();
                    Timeline::new("x", turns)
                })
                .collect();
            let set = HypothesisSet::new(hyps).unwrap();
            let mapping = align_labels(&set);
            let fused = dover_lap_vote(&set, &mapping, RankWeighting::LinearRank);
            for t in &fused.turns {
                assert!(
                    mapping.global_order.contains(&t.speaker),
                    "{} is not a global label",
                    t.speaker
                );
            }
            // No instant carries more speakers than the busiest hypothesis.
            let max_count = |t: &Timeline, mid: f64| {
                t.turns.iter().filter(|x| x.start <= mid && mid < x.end).count()
            };
            for t in &fused.turns {
                let mid = 0.5 * (t.start + t.end);
                let fused_n = max_count(&fused, mid);
                let hyp_max = set
                    .hypotheses
                    .iter()
                    .map(|h| max_count(h, mid))
                    .max()
                    .unwrap();
                assert!(fused_n <= hyp_max, "{fused_n} > {hyp_max} at {mid}");
            }
        }
    }

    #[test]
    fn swapped_labels_are_corrected() {
        // Three hypotheses; the third swaps A and B. Fusion must agree with
        // the majority's labeling everywhere.
        let good = tl("s", &[("A", 0.0, 4.0), ("B", 4.0, 8.0)]);
        let swapped = tl("s", &[("B", 0.0, 4.0), ("A", 4.0, 8.0)]);
        let hyps = HypothesisSet::new(vec![good.clone(), good.clone(), swapped]).unwrap();
        let fused = fuse(&hyps, RankWeighting::LinearRank);
        assert_eq!(fused, good.normalize());
    }
}
