//! Diarization error rate with collar and optimal speaker mapping.
//!
//! The session is swept over atomic regions cut at every turn boundary of
//! both timelines (exact float boundaries, no frame quantization). Per
//! region, with `Nref`/`Nsys` active speakers and `Ncorrect` reference
//! speakers whose mapped system speaker is also active:
//!
//! ```text
//! missed      += dur * max(0, Nref - Nsys)
//! false alarm += dur * max(0, Nsys - Nref)
//! confusion   += dur * (min(Nref, Nsys) - Ncorrect)
//! scored      += dur * Nref
//! ```
//!
//! The reference→system speaker mapping is the overlap-maximizing injective
//! map (Hungarian), which equivalently minimizes confusion. A no-score
//! collar of `±collar` seconds around every reference turn boundary is
//! excluded, matching the md-eval/dscore convention.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::assignment::hungarian;
use crate::timeline::{intervals, Timeline, Uem, TIME_EPS};

#[derive(Debug, Error)]
pub enum ScoringError {
    /// No reference speech inside the scored regions.
    #[error("reference has no scored speech")]
    EmptyReference,
}

/// Scoring knobs. `collar` is the half-width of the no-score zone around
/// each reference boundary. With `score_overlaps` off, regions where the
/// reference has two or more active speakers are excluded entirely.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoringOptions {
    pub collar: f64,
    pub score_overlaps: bool,
    pub uem: Option<Uem>,
}

impl Default for ScoringOptions {
    fn default() -> Self {
        Self {
            collar: 0.25,
            score_overlaps: true,
            uem: None,
        }
    }
}

impl ScoringOptions {
    pub fn with_collar(collar: f64) -> Self {
        Self {
            collar,
            ..Self::default()
        }
    }
}

/// Error decomposition for one scored pair, in seconds and in percent of
/// scored reference speech. `der == cf + fa + mi` exactly.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct DerReport {
    pub confusion_s: f64,
    pub false_alarm_s: f64,
    pub missed_s: f64,
    pub scored_speech_s: f64,
    pub cf: f64,
    pub fa: f64,
    pub mi: f64,
    pub der: f64,
    /// Optimal reference→system speaker mapping used for confusion.
    pub mapping: BTreeMap<String, String>,
}

/// The scored time: the UEM (or, absent one, the reference extent from 0)
/// minus `[b - collar, b + collar]` around every reference turn boundary,
/// minus reference overlap regions when `score_overlaps` is off.
pub fn scored_regions(reference: &Timeline, opts: &ScoringOptions) -> Vec<(f64, f64)> {
    let reference = reference.normalize();
    let base = match &opts.uem {
        Some(uem) => uem.scored_regions.clone(),
        None => match reference.extent() {
            Some((_, end)) => vec![(0.0, end)],
            None => Vec::new(),
        },
    };
    let mut cuts: Vec<(f64, f64)> = Vec::new();
    if opts.collar > 0.0 {
        for t in &reference.turns {
            cuts.push((t.start - opts.collar, t.start + opts.collar));
            cuts.push((t.end - opts.collar, t.end + opts.collar));
        }
    }
    if !opts.score_overlaps {
        cuts.extend(overlap_regions(&reference));
    }
    intervals::subtract(&base, &intervals::normalize(cuts))
}

/// Regions where two or more reference speakers are simultaneously active.
fn overlap_regions(reference: &Timeline) -> Vec<(f64, f64)> {
    let mut events: Vec<(f64, i32)> = Vec::new();
    for t in &reference.turns {
        events.push((t.start, 1));
        events.push((t.end, -1));
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut depth = 0;
    let mut start = None;
    let mut out = Vec::new();
    for (t, d) in events {
        let prev = depth;
        depth += d;
        if prev < 2 && depth >= 2 {
            start = Some(t);
        } else if prev >= 2 && depth < 2 {
            if let Some(s) = start.take() {
                out.push((s, t));
            }
        }
    }
    intervals::normalize(out)
}

struct Sweep {
    /// Atomic region `(start, end)` plus active speaker index sets.
    regions: Vec<(f64, f64, Vec<usize>, Vec<usize>)>,
    ref_speakers: Vec<String>,
    sys_speakers: Vec<String>,
}

fn sweep(reference: &Timeline, system: &Timeline, scored: &[(f64, f64)]) -> Sweep {
    let ref_speakers = reference.speakers();
    let sys_speakers = system.speakers();
    let ref_turns = reference.per_speaker();
    let sys_turns = system.per_speaker();

    let mut bounds: Vec<f64> = Vec::new();
    for t in reference.turns.iter().chain(&system.turns) {
        bounds.push(t.start);
        bounds.push(t.end);
    }
    for &(s, e) in scored {
        bounds.push(s);
        bounds.push(e);
    }
    bounds.sort_by(f64::total_cmp);
    bounds.dedup_by(|a, b| (*a - *b).abs() <= TIME_EPS);

    let covered = |ivs: &[(f64, f64)], mid: f64| ivs.iter().any(|&(s, e)| s <= mid && mid < e);

    let mut regions = Vec::new();
    for w in bounds.windows(2) {
        let (t0, t1) = (w[0], w[1]);
        if t1 - t0 <= TIME_EPS || !covered(scored, 0.5 * (t0 + t1)) {
            continue;
        }
        let mid = 0.5 * (t0 + t1);
        let ref_active: Vec<usize> = ref_speakers
            .iter()
            .enumerate()
            .filter(|(_, s)| covered(&ref_turns[*s], mid))
            .map(|(i, _)| i)
            .collect();
        let sys_active: Vec<usize> = sys_speakers
            .iter()
            .enumerate()
            .filter(|(_, s)| covered(&sys_turns[*s], mid))
            .map(|(i, _)| i)
            .collect();
        regions.push((t0, t1, ref_active, sys_active));
    }
    Sweep {
        regions,
        ref_speakers,
        sys_speakers,
    }
}

/// Injective reference→system speaker map maximizing total overlap inside
/// the scored regions; speakers with no positive overlap stay unmapped.
pub fn optimal_mapping(
    reference: &Timeline,
    system: &Timeline,
    opts: &ScoringOptions,
) -> BTreeMap<String, String> {
    let reference = reference.normalize();
    let system = system.normalize();
    let scored = scored_regions(&reference, opts);
    mapping_from_sweep(&sweep(&reference, &system, &scored))
}

fn mapping_from_sweep(sw: &Sweep) -> BTreeMap<String, String> {
    let (nr, ns) = (sw.ref_speakers.len(), sw.sys_speakers.len());
    if nr == 0 || ns == 0 {
        return BTreeMap::new();
    }
    let mut overlap = vec![vec![0.0f64; ns]; nr];
    for (t0, t1, ref_active, sys_active) in &sw.regions {
        let dur = t1 - t0;
        for &i in ref_active {
            for &j in sys_active {
                overlap[i][j] += dur;
            }
        }
    }
    let cost: Vec<Vec<f64>> = overlap
        .iter()
        .map(|row| row.iter().map(|&o| -o).collect())
        .collect();
    let mut mapping = BTreeMap::new();
    for (i, j) in hungarian(&cost).pairs() {
        if overlap[i][j] > TIME_EPS {
            mapping.insert(sw.ref_speakers[i].clone(), sw.sys_speakers[j].clone());
        }
    }
    mapping
}

/// Scores `system` against `reference`. Without an explicit UEM the scored
/// span is `[0, max(reference end, system end)]`, so false alarms beyond the
/// reference extent still count.
pub fn score(
    reference: &Timeline,
    system: &Timeline,
    opts: &ScoringOptions,
) -> Result<DerReport, ScoringError> {
    let reference = reference.normalize();
    let system = system.normalize();

    let mut effective = opts.clone();
    if effective.uem.is_none() {
        let end = reference
            .extent()
            .map(|x| x.1)
            .unwrap_or(0.0)
            .max(system.extent().map(|x| x.1).unwrap_or(0.0));
        if end > 0.0 {
            effective.uem = Some(
                Uem::new(reference.session_id.clone(), vec![(0.0, end)])
                    .expect("positive span"),
            );
        }
    }
    let scored = scored_regions(&reference, &effective);
    let sw = sweep(&reference, &system, &scored);
    let index_map: BTreeMap<usize, usize> = {
        let mapping = mapping_from_sweep(&sw);
        mapping
            .iter()
            .map(|(r, s)| {
                (
                    sw.ref_speakers.iter().position(|x| x == r).expect("ref speaker"),
                    sw.sys_speakers.iter().position(|x| x == s).expect("sys speaker"),
                )
            })
            .collect()
    };

    let (mut missed, mut false_alarm, mut confusion, mut scored_speech) = (0.0, 0.0, 0.0, 0.0);
    for (t0, t1, ref_active, sys_active) in &sw.regions {
        let dur = t1 - t0;
        let nref = ref_active.len();
        let nsys = sys_active.len();
        let ncorrect = ref_active
            .iter()
            .filter(|r| index_map.get(r).is_some_and(|s| sys_active.contains(s)))
            .count();
        missed += dur * nref.saturating_sub(nsys) as f64;
        false_alarm += dur * nsys.saturating_sub(nref) as f64;
        confusion += dur * (nref.min(nsys) - ncorrect) as f64;
        scored_speech += dur * nref as f64;
    }
    if scored_speech <= TIME_EPS {
        return Err(ScoringError::EmptyReference);
    }

    let pct = |s: f64| 100.0 * s / scored_speech;
    let (cf, fa, mi) = (pct(confusion), pct(false_alarm), pct(missed));
    let mapping = index_map
        .iter()
        .map(|(&r, &s)| (sw.ref_speakers[r].clone(), sw.sys_speakers[s].clone()))
        .collect();
    Ok(DerReport {
        confusion_s: confusion,
        false_alarm_s: false_alarm,
        missed_s: missed,
        scored_speech_s: scored_speech,
        cf,
        fa,
        mi,
        der: cf + fa + mi,
        mapping,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timeline::SpeakerTurn;

    fn tl(turns: &[(&str, f64, f64)]) -> Timeline {
        Timeline::new(
            "s",
            turns
                .iter()
                .map(|&(s, a, b)| SpeakerTurn::new(s, a, b).unwrap())
                .collect(),
        )
    }

    #[test]
    fn collar_arithmetic() {
        let reference = tl(&[("A", 10.0, 20.0)]);
        let opts = ScoringOptions {
            collar: 0.25,
            score_overlaps: true,
            uem: Some(Uem::new("s", vec![(0.0, 30.0)]).unwrap()),
        };
        let regions = scored_regions(&reference, &opts);
        assert_eq!(regions.len(), 3);
        assert!((regions[0].0 - 0.0).abs() < 1e-9 && (regions[0].1 - 9.75).abs() < 1e-9);
        assert!((regions[1].0 - 10.25).abs() < 1e-9 && (regions[1].1 - 19.75).abs() < 1e-9);
        assert!((regions[2].0 - 20.25).abs() < 1e-9 && (regions[2].1 - 30.0).abs() < 1e-9);
    }

    #[test]
    fn zero_collar_keeps_uem() {
        let reference = tl(&[("A", 10.0, 20.0)]);
        let uem = Uem::new("s", vec![(0.0, 30.0)]).unwrap();
        let opts = ScoringOptions {
            collar: 0.0,
            score_overlaps: true,
            uem: Some(uem.clone()),
        };
        assert_eq!(scored_regions(&reference, &opts), uem.scored_regions);
    }

    #[test]
    fn overlapping_collars_merge() {
        let reference = tl(&[("A", 10.0, 10.3)]);
        let opts = ScoringOptions {
            collar: 0.25,
            score_overlaps: true,
            uem: Some(Uem::new("s", vec![(0.0, 30.0)]).unwrap()),
        };
        let regions = scored_regions(&reference, &opts);
        // [9.75, 10.55] is one merged cut.
        assert_eq!(regions.len(), 2);
        assert!((regions[0].1 - 9.75).abs() < 1e-9);
        assert!((regions[1].0 - 10.55).abs() < 1e-9);
    }

    #[test]
    fn perfect_system_scores_zero() {
        let reference = tl(&[("A", 0.0, 10.0), ("B", 4.0, 8.0)]);
        let report = score(&reference, &reference, &ScoringOptions::default()).unwrap();
        assert_eq!(report.der, 0.0);
        assert_eq!(report.mapping.len(), 2);
    }

    #[test]
    fn truncated_system_is_missed_speech() {
        let reference = tl(&[("A", 0.0, 10.0)]);
        let system = tl(&[("X", 0.0, 8.0)]);
        let report = score(&reference, &system, &ScoringOptions::with_collar(0.0)).unwrap();
        assert!((report.mi - 20.0).abs() < 1e-9, "mi = {}", report.mi);
        assert_eq!(report.fa, 0.0);
        assert_eq!(report.cf, 0.0);
        assert!((report.der - 20.0).abs() < 1e-9);
    }

    #[test]
    fn unmatched_overlap_speaker_is_missed() {
        let reference = tl(&[("A", 0.0, 10.0), ("B", 0.0, 10.0)]);
        let system = tl(&[("X", 0.0, 10.0)]);
        let report = score(&reference, &system, &ScoringOptions::with_collar(0.0)).unwrap();
        assert_eq!(report.mapping.get("A").map(String::as_str), Some("X"));
        assert!((report.mi - 50.0).abs() < 1e-9);
        assert_eq!(report.cf, 0.0);
        assert!((report.der - 50.0).abs() < 1e-9);
    }

    #[test]
    fn label_swap_is_invariant() {
        let reference = tl(&[("A", 0.0, 5.0), ("B", 5.0, 9.0)]);
        let system = tl(&[("X", 0.0, 5.0), ("Y", 5.0, 9.0)]);
        let swapped = tl(&[("Y", 0.0, 5.0), ("X", 5.0, 9.0)]);
        let opts = ScoringOptions::default();
        let a = score(&reference, &system, &opts).unwrap();
        let b = score(&reference, &swapped, &opts).unwrap();
        assert_eq!(a.der, b.der);
    }

    #[test]
    fn empty_system_is_all_missed() {
        let reference = tl(&[("A", 0.0, 10.0)]);
        let report = score(&reference, &Timeline::empty("s"), &ScoringOptions::with_collar(0.0))
            .unwrap();
        assert!((report.mi - 100.0).abs() < 1e-9);
        assert!((report.der - 100.0).abs() < 1e-9);
    }

    #[test]
    fn empty_reference_is_an_error() {
        let system = tl(&[("X", 0.0, 1.0)]);
        assert!(matches!(
            score(&Timeline::empty("s"), &system, &ScoringOptions::default()),
            Err(ScoringError::EmptyReference)
        ));
    }

    #[test]
    fn collar_monotone_in_scored_speech() {
        let reference = tl(&[("A", 1.0, 5.0), ("B", 4.0, 9.0), ("A", 11.0, 14.0)]);
        let system = tl(&[("X", 1.0, 5.0)]);
        let mut last = f64::INFINITY;
        for collar in [0.0, 0.1, 0.25, 0.5, 1.0] {
            let report = score(&reference, &system, &ScoringOptions::with_collar(collar)).unwrap();
            assert!(report.scored_speech_s <= last + 1e-12);
            last = report.scored_speech_s;
        }
    }

    #[test]
    fn noscore_overlap_excludes_double_talk() {
        let reference = tl(&[("A", 0.0, 10.0), ("B", 5.0, 15.0)]);
        let opts = ScoringOptions {
            collar: 0.0,
            score_overlaps: false,
            uem: None,
        };
        let regions = scored_regions(&reference, &opts);
        // [5, 10] is overlapped and excluded.
        assert_eq!(regions, vec![(0.0, 5.0), (10.0, 15.0)]);
    }
}
