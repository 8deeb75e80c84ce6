//! Speaker-turn timelines and interval algebra.
//!
//! A [`Timeline`] is the universal representation of a diarization hypothesis
//! or reference: a set of `(speaker, start, end)` turns for one session.
//! Turns of different speakers may overlap (overlapped speech is first-class);
//! turns of the same speaker never overlap once normalized.
//!
//! All times are `f64` seconds. Comparisons go through [`TIME_EPS`]: turns
//! abutting within `1e-9 s` merge, which keeps the canonical form unique
//! while staying far below RTTM's millisecond precision.

use std::collections::BTreeMap;

use thiserror::Error;

/// Epsilon for all time comparisons, in seconds.
pub const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum TimelineError {
    /// A turn with `end <= start` (zero- and negative-duration turns are
    /// rejected) or a non-finite boundary.
    #[error("invalid turn for speaker `{speaker}`: [{start}, {end})")]
    InvalidTurn {
        speaker: String,
        start: f64,
        end: f64,
    },
    /// Speaker labels must be non-empty and contain no whitespace.
    #[error("invalid speaker label {0:?}")]
    InvalidSpeaker(String),
    /// Malformed line in an RTTM or UEM file.
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    /// I/O failure, reported separately from parse errors.
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// One speaker turn: `speaker` is active on `[start, end)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerTurn {
    pub speaker: String,
    pub start: f64,
    pub end: f64,
}

impl SpeakerTurn {
    /// Validates and builds a turn. `start` must be finite and non-negative,
    /// `end - start` must exceed [`TIME_EPS`], and the label must be
    /// non-empty without whitespace.
    pub fn new(
        speaker: impl Into<String>,
        start: f64,
        end: f64,
    ) -> Result<Self, TimelineError> {
        let speaker = speaker.into();
        if speaker.is_empty() || speaker.chars().any(char::is_whitespace) {
            return Err(TimelineError::InvalidSpeaker(speaker));
        }
        if !start.is_finite() || !end.is_finite() || start < 0.0 || end - start <= TIME_EPS {
            return Err(TimelineError::InvalidTurn {
                speaker,
                start,
                end,
            });
        }
        Ok(Self {
            speaker,
            start,
            end,
        })
    }

    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

/// A set of speaker turns for one recording session.
///
/// Construction does not normalize; call [`Timeline::normalize`] to obtain
/// the canonical form (per-speaker merged, globally sorted).
#[derive(Debug, Clone, PartialEq)]
pub struct Timeline {
    pub session_id: String,
    pub turns: Vec<SpeakerTurn>,
}

impl Timeline {
    pub fn new(session_id: impl Into<String>, turns: Vec<SpeakerTurn>) -> Self {
        Self {
            session_id: session_id.into(),
            turns,
        }
    }

    pub fn empty(session_id: impl Into<String>) -> Self {
        Self::new(session_id, Vec::new())
    }

    /// Canonical form: per speaker, overlapping or abutting (within
    /// [`TIME_EPS`]) turns are merged; the result is sorted by
    /// `(start, end, speaker)`. Idempotent.
    #[must_use]
    pub fn normalize(&self) -> Timeline {
        let mut per_speaker: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
        for t in &self.turns {
            per_speaker
                .entry(t.speaker.as_str())
                .or_default()
                .push((t.start, t.end));
        }
        let mut turns = Vec::with_capacity(self.turns.len());
        for (speaker, ivs) in per_speaker {
            for (start, end) in intervals::normalize(ivs) {
                turns.push(SpeakerTurn {
                    speaker: speaker.to_string(),
                    start,
                    end,
                });
            }
        }
        turns.sort_by(|a, b| {
            a.start
                .total_cmp(&b.start)
                .then(a.end.total_cmp(&b.end))
                .then(a.speaker.cmp(&b.speaker))
        });
        Timeline {
            session_id: self.session_id.clone(),
            turns,
        }
    }

    /// Total speech in seconds: the per-instant active-speaker count
    /// integrated over time, i.e. the sum of turn durations. Assumes the
    /// timeline is normalized (same-speaker turns disjoint).
    pub fn total_speech(&self) -> f64 {
        self.turns.iter().map(SpeakerTurn::duration).sum()
    }

    /// Speaker labels in first-appearance order (of the current turn order).
    pub fn speakers(&self) -> Vec<String> {
        let mut seen = Vec::new();
        for t in &self.turns {
            if !seen.contains(&t.speaker) {
                seen.push(t.speaker.clone());
            }
        }
        seen
    }

    /// Turns grouped per speaker, as `(start, end)` interval lists in the
    /// current turn order.
    pub fn per_speaker(&self) -> BTreeMap<String, Vec<(f64, f64)>> {
        let mut map: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
        for t in &self.turns {
            map.entry(t.speaker.clone())
                .or_default()
                .push((t.start, t.end));
        }
        map
    }

    /// `(min start, max end)` over all turns, or `None` when empty.
    pub fn extent(&self) -> Option<(f64, f64)> {
        let first = self.turns.iter().map(|t| t.start).fold(f64::INFINITY, f64::min);
        let last = self.turns.iter().map(|t| t.end).fold(f64::NEG_INFINITY, f64::max);
        self.turns.first().map(|_| (first, last))
    }

    /// Renames speakers through `map`; labels absent from the map are kept.
    #[must_use]
    pub fn relabel(&self, map: &BTreeMap<String, String>) -> Timeline {
        let turns = self
            .turns
            .iter()
            .map(|t| SpeakerTurn {
                speaker: map.get(&t.speaker).cloned().unwrap_or_else(|| t.speaker.clone()),
                start: t.start,
                end: t.end,
            })
            .collect();
        Timeline {
            session_id: self.session_id.clone(),
            turns,
        }
    }
}

/// Scoring-region companion to a reference timeline: the parts of the session
/// that count.
#[derive(Debug, Clone, PartialEq)]
pub struct Uem {
    pub session_id: String,
    pub scored_regions: Vec<(f64, f64)>,
}

impl Uem {
    /// Builds a UEM, normalizing the regions (sorted, disjoint). Regions with
    /// `end <= start` are rejected.
    pub fn new(
        session_id: impl Into<String>,
        regions: Vec<(f64, f64)>,
    ) -> Result<Self, TimelineError> {
        let session_id = session_id.into();
        for &(s, e) in &regions {
            if !s.is_finite() || !e.is_finite() || e - s <= TIME_EPS {
                return Err(TimelineError::InvalidTurn {
                    speaker: session_id,
                    start: s,
                    end: e,
                });
            }
        }
        Ok(Self {
            session_id,
            scored_regions: intervals::normalize(regions),
        })
    }
}

/// Algebra over sorted, disjoint `(start, end)` interval lists.
///
/// Inputs to `subtract`, `intersect` and `intersect_duration` must already be
/// normalized; [`normalize`](intervals::normalize) produces that form.
pub mod intervals {
    use super::TIME_EPS;

    /// Sorts and merges intervals that overlap or abut within [`TIME_EPS`];
    /// drops empty ones.
    #[must_use]
    pub fn normalize(mut ivs: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
        ivs.retain(|&(s, e)| e - s > TIME_EPS);
        ivs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        let mut out: Vec<(f64, f64)> = Vec::with_capacity(ivs.len());
        for (s, e) in ivs {
            match out.last_mut() {
                Some(last) if s <= last.1 + TIME_EPS => last.1 = last.1.max(e),
                _ => out.push((s, e)),
            }
        }
        out
    }

    /// `base \ cut`, both normalized.
    #[must_use]
    pub fn subtract(base: &[(f64, f64)], cut: &[(f64, f64)]) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        for &(bs, be) in base {
            let mut cursor = bs;
            for &(cs, ce) in cut {
                if ce <= cursor {
                    continue;
                }
                if cs >= be {
                    break;
                }
                if cs > cursor {
                    out.push((cursor, cs.min(be)));
                }
                cursor = cursor.max(ce);
                if cursor >= be {
                    break;
                }
            }
            if be - cursor > TIME_EPS {
                out.push((cursor, be));
            }
        }
        out.retain(|&(s, e)| e - s > TIME_EPS);
        out
    }

    /// `a ∩ b`, both normalized.
    #[must_use]
    pub fn intersect(a: &[(f64, f64)], b: &[(f64, f64)]) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        let (mut i, mut j) = (0, 0);
        while i < a.len() && j < b.len() {
            let s = a[i].0.max(b[j].0);
            let e = a[i].1.min(b[j].1);
            if e - s > TIME_EPS {
                out.push((s, e));
            }
            if a[i].1 < b[j].1 {
                i += 1;
            } else {
                j += 1;
            }
        }
        out
    }

    /// Total length of `a ∩ b` in seconds.
    pub fn intersect_duration(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
        intersect(a, b).iter().map(|&(s, e)| e - s).sum()
    }

    /// Total length of a normalized interval list.
    pub fn total_len(ivs: &[(f64, f64)]) -> f64 {
        ivs.iter().map(|&(s, e)| e - s).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tl(turns: &[(&str, f64, f64)]) -> Timeline {
        Timeline::new(
            "s",
            turns
                .iter()
                .map(|&(spk, s, e)| SpeakerTurn::new(spk, s, e).unwrap())
                .collect(),
        )
    }

    #[test]
    fn rejects_bad_turns() {
        assert!(SpeakerTurn::new("a", 0.0, 0.0).is_err());
        assert!(SpeakerTurn::new("a", 2.0, 1.0).is_err());
        assert!(SpeakerTurn::new("a", -1.0, 1.0).is_err());
        assert!(SpeakerTurn::new("a", 0.0, f64::NAN).is_err());
        assert!(SpeakerTurn::new("", 0.0, 1.0).is_err());
        assert!(SpeakerTurn::new("a b", 0.0, 1.0).is_err());
        assert!(SpeakerTurn::new("a", 0.0, 1.0).is_ok());
    }

    #[test]
    fn normalize_merges_same_speaker_overlap() {
        let t = tl(&[("A", 0.0, 2.0), ("A", 1.0, 3.0)]).normalize();
        assert_eq!(t.turns.len(), 1);
        assert_eq!((t.turns[0].start, t.turns[0].end), (0.0, 3.0));
    }

    #[test]
    fn normalize_preserves_cross_speaker_overlap() {
        let t = tl(&[("B", 0.5, 2.0), ("A", 0.0, 1.0)]).normalize();
        assert_eq!(t.turns.len(), 2);
        assert_eq!(t.turns[0].speaker, "A");
        assert_eq!(t.turns[1].speaker, "B");
    }

    #[test]
    fn normalize_merges_abutting() {
        let t = tl(&[("A", 0.0, 1.0), ("A", 1.0, 2.0), ("B", 5.0, 6.0)]).normalize();
        assert_eq!(t.turns.len(), 2);
        assert_eq!((t.turns[0].start, t.turns[0].end), (0.0, 2.0));
        assert_eq!(t.turns[1].speaker, "B");
    }

    #[test]
    fn total_speech_counts_overlap_twice() {
        assert_eq!(tl(&[("A", 0.0, 2.0)]).total_speech(), 2.0);
        assert_eq!(tl(&[("A", 0.0, 2.0), ("B", 1.0, 3.0)]).total_speech(), 4.0);
        assert_eq!(Timeline::empty("s").total_speech(), 0.0);
    }

    #[test]
    fn interval_subtract_cases() {
        let base = vec![(0.0, 10.0)];
        let cut = vec![(2.0, 3.0), (9.5, 11.0)];
        assert_eq!(
            intervals::subtract(&base, &cut),
            vec![(0.0, 2.0), (3.0, 9.5)]
        );
        assert_eq!(intervals::subtract(&base, &[]), base);
        assert!(intervals::subtract(&base, &[(0.0, 10.0)]).is_empty());
    }

    #[test]
    fn interval_intersect_cases() {
        let a = vec![(0.0, 5.0), (10.0, 15.0)];
        let b = vec![(3.0, 12.0)];
        assert_eq!(intervals::intersect(&a, &b), vec![(3.0, 5.0), (10.0, 12.0)]);
        assert!((intervals::intersect_duration(&a, &b) - 4.0).abs() < 1e-12);
    }

    prop_compose! {
        fn arb_turn()(spk in 0usize..4, start in 0u32..10_000u32, dur in 1u32..2_000u32)
            -> SpeakerTurn
        {
            SpeakerTurn::new(
                format!("spk{spk}"),
                f64::from(start) * 1e-3,
                f64::from(start + dur) * 1e-3,
            )
            .unwrap()
        }
    }

    prop_compose! {
        fn arb_timeline()(turns in prop::collection::vec(arb_turn(), 0..30)) -> Timeline {
            Timeline::new("sess", turns)
        }
    }

    proptest! {
        #[test]
        fn normalize_idempotent(t in arb_timeline()) {
            let once = t.normalize();
            let twice = once.normalize();
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn speech_conserved_under_splitting(t in arb_timeline(), frac in 0.1f64..0.9) {
            // Split every turn at an interior point into abutting sub-turns.
            let mut split = Vec::new();
            for turn in &t.turns {
                let mid = turn.start + frac * turn.duration();
                if mid - turn.start > TIME_EPS && turn.end - mid > TIME_EPS {
                    split.push(SpeakerTurn::new(&turn.speaker, turn.start, mid).unwrap());
                    split.push(SpeakerTurn::new(&turn.speaker, mid, turn.end).unwrap());
                } else {
                    split.push(turn.clone());
                }
            }
            let split_tl = Timeline::new(t.session_id.clone(), split);
            let a = t.normalize().total_speech();
            let b = split_tl.normalize().total_speech();
            prop_assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }
}
