//! Segment-level local diarization outputs: the file boundary between the
//! neural front end and this toolkit.
//!
//! A session is cut into fixed-length segments; for each segment the front
//! end emits `S` local activity curves (values in `[0, 1]`, one per output
//! stream) and `S` embeddings. Stream identities are arbitrary per segment —
//! stitching them into global speakers is the clustering module's job.
//!
//! The on-disk form is a line-delimited JSON container: one header record
//! carrying the session-constant shape, then one record per segment with
//! activities and embeddings as row-major arrays.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::ClusterAssignment;
use crate::timeline::{SpeakerTurn, Timeline, TimelineError, TIME_EPS};

#[derive(Debug, Error)]
pub enum LocalIoError {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    /// Shape or tiling inconsistency across segment records.
    #[error("schema error: {0}")]
    Schema(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    /// A selected stream has no cluster label in the assignment.
    #[error("stream {stream} (segment {segment}) has no cluster label")]
    MissingLabel { stream: usize, segment: usize },
    #[error("segment {0} has no start time")]
    MissingSegmentStart(usize),
    #[error(transparent)]
    Timeline(#[from] TimelineError),
}

/// Where the embeddings came from; recorded for provenance only, the math
/// downstream is identical.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingSource {
    EendVc,
    ExternalExtractor,
}

/// One segment's local speaker activities and embeddings.
///
/// `activities` is `S x T` row-major (stream-major), values in `[0, 1]`;
/// `embeddings` is `S x D` row-major. `S`, `D` and the nominal `T` are
/// constant across a session; only the last segment may be shorter.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentBundle {
    pub segment_index: usize,
    pub start: f64,
    pub frame_rate: f64,
    pub n_streams: usize,
    pub n_frames: usize,
    pub embedding_dim: usize,
    pub activities: Vec<f64>,
    pub embeddings: Vec<f64>,
    pub embedding_source: EmbeddingSource,
}

impl SegmentBundle {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        segment_index: usize,
        start: f64,
        frame_rate: f64,
        n_streams: usize,
        n_frames: usize,
        embedding_dim: usize,
        activities: Vec<f64>,
        embeddings: Vec<f64>,
        embedding_source: EmbeddingSource,
    ) -> Result<Self, LocalIoError> {
        if n_streams == 0 || n_frames == 0 || embedding_dim == 0 {
            return Err(LocalIoError::Schema(format!(
                "segment {segment_index}: S, T and D must all be >= 1"
            )));
        }
        if activities.len() != n_streams * n_frames {
            return Err(LocalIoError::Schema(format!(
                "segment {segment_index}: expected {} activity values, got {}",
                n_streams * n_frames,
                activities.len()
            )));
        }
        if embeddings.len() != n_streams * embedding_dim {
            return Err(LocalIoError::Schema(format!(
                "segment {segment_index}: expected {} embedding values, got {}",
                n_streams * embedding_dim,
                embeddings.len()
            )));
        }
        if activities.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(LocalIoError::Schema(format!(
                "segment {segment_index}: activity value outside [0, 1]"
            )));
        }
        if embeddings.iter().any(|e| !e.is_finite()) {
            return Err(LocalIoError::Schema(format!(
                "segment {segment_index}: non-finite embedding value"
            )));
        }
        if !frame_rate.is_finite() || frame_rate <= 0.0 || !start.is_finite() || start < 0.0 {
            return Err(LocalIoError::Schema(format!(
                "segment {segment_index}: bad start/frame_rate"
            )));
        }
        Ok(Self {
            segment_index,
            start,
            frame_rate,
            n_streams,
            n_frames,
            embedding_dim,
            activities,
            embeddings,
            embedding_source,
        })
    }

    pub fn activity_row(&self, stream: usize) -> &[f64] {
        &self.activities[stream * self.n_frames..(stream + 1) * self.n_frames]
    }

    pub fn embedding_row(&self, stream: usize) -> &[f64] {
        &self.embeddings[stream * self.embedding_dim..(stream + 1) * self.embedding_dim]
    }

    /// Segment span in seconds.
    pub fn duration(&self) -> f64 {
        self.n_frames as f64 / self.frame_rate
    }
}

/// One binarized stream of a segment: a boolean activity curve plus the
/// stream's (unit-normalized) embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalStream {
    pub segment_index: usize,
    pub local_speaker: usize,
    pub binary_activity: Vec<bool>,
    pub active_frames: usize,
    pub embedding: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum BundleRecord {
    Header {
        session_id: String,
        s: usize,
        t_nominal: usize,
        d: usize,
        frame_rate: f64,
        embedding_source: EmbeddingSource,
    },
    Segment {
        segment_index: usize,
        start: f64,
        t_actual: usize,
        activities: Vec<f64>,
        embeddings: Vec<f64>,
    },
}

/// Reads a segment-bundle file, validating shape consistency and that the
/// segments tile the session contiguously (fixed length except the last).
/// Returns the session id and the bundles sorted by segment index.
pub fn read_bundles(path: impl AsRef<Path>) -> Result<(String, Vec<SegmentBundle>), LocalIoError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| LocalIoError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let perr = |line: usize, msg: String| LocalIoError::Parse {
        path: path.display().to_string(),
        line,
        msg,
    };

    let mut header: Option<(String, usize, usize, usize, f64, EmbeddingSource)> = None;
    let mut bundles: Vec<SegmentBundle> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let record: BundleRecord =
            serde_json::from_str(raw).map_err(|e| perr(lineno, e.to_string()))?;
        match record {
            BundleRecord::Header {
                session_id,
                s,
                t_nominal,
                d,
                frame_rate,
                embedding_source,
            } => {
                if header.is_some() {
                    return Err(perr(lineno, "duplicate header record".into()));
                }
                header = Some((session_id, s, t_nominal, d, frame_rate, embedding_source));
            }
            BundleRecord::Segment {
                segment_index,
                start,
                t_actual,
                activities,
                embeddings,
            } => {
                let Some((_, s, t_nominal, d, frame_rate, source)) = header.as_ref() else {
                    return Err(perr(lineno, "segment record before header".into()));
                };
                if t_actual > *t_nominal {
                    return Err(LocalIoError::Schema(format!(
                        "segment {segment_index}: T_actual {t_actual} exceeds nominal {t_nominal}"
                    )));
                }
                let bundle = SegmentBundle::new(
                    segment_index,
                    start,
                    *frame_rate,
                    *s,
                    t_actual,
                    *d,
                    activities,
                    embeddings,
                    *source,
                )?;
                bundles.push(bundle);
            }
        }
    }
    let Some((session_id, _, t_nominal, _, _frame_rate, _)) = header else {
        return Err(LocalIoError::Schema("missing header record".into()));
    };

    bundles.sort_by_key(|b| b.segment_index);
    for (i, b) in bundles.iter().enumerate() {
        if b.segment_index != i {
            return Err(LocalIoError::Schema(format!(
                "segment indices are not contiguous at {}",
                b.segment_index
            )));
        }
        if i + 1 < bundles.len() && b.n_frames != t_nominal {
            return Err(LocalIoError::Schema(format!(
                "segment {i} has {} frames, only the last segment may differ from nominal {t_nominal}",
                b.n_frames
            )));
        }
        let expected_start = if i == 0 {
            b.start
        } else {
            bundles[i - 1].start + bundles[i - 1].duration()
        };
        if (b.start - expected_start).abs() > 1e-6 {
            return Err(LocalIoError::Schema(format!(
                "segment {i} starts at {} but the previous segment ends at {expected_start}: segments must tile the session",
                b.start
            )));
        }
    }
    Ok((session_id, bundles))
}

/// Writes bundles in the segment-bundle format; inverse of [`read_bundles`].
pub fn write_bundles(
    session_id: &str,
    bundles: &[SegmentBundle],
    path: impl AsRef<Path>,
) -> Result<(), LocalIoError> {
    let path = path.as_ref();
    let Some(first) = bundles.first() else {
        return Err(LocalIoError::Schema("cannot write an empty bundle list".into()));
    };
    let t_nominal = bundles.iter().map(|b| b.n_frames).max().unwrap_or(first.n_frames);
    let mut out = String::new();
    let header = BundleRecord::Header {
        session_id: session_id.to_string(),
        s: first.n_streams,
        t_nominal,
        d: first.embedding_dim,
        frame_rate: first.frame_rate,
        embedding_source: first.embedding_source,
    };
    out.push_str(&serde_json::to_string(&header).expect("header serializes"));
    out.push('\n');
    for b in bundles {
        let rec = BundleRecord::Segment {
            segment_index: b.segment_index,
            start: b.start,
            t_actual: b.n_frames,
            activities: b.activities.clone(),
            embeddings: b.embeddings.clone(),
        };
        out.push_str(&serde_json::to_string(&rec).expect("segment serializes"));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| LocalIoError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

fn unit_normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
}

/// Majority filter over booleans with edge replication; `window` must be odd.
fn median_filter(bits: &[bool], window: usize) -> Vec<bool> {
    debug_assert!(window % 2 == 1);
    if window <= 1 || bits.is_empty() {
        return bits.to_vec();
    }
    let half = window / 2;
    let n = bits.len();
    let at = |i: isize| -> bool { bits[i.clamp(0, n as isize - 1) as usize] };
    (0..n as isize)
        .map(|i| {
            let trues = (i - half as isize..=i + half as isize)
                .filter(|&j| at(j))
                .count();
            trues * 2 > window
        })
        .collect()
}

/// Thresholds each stream's activity (`>= threshold` is active), applies a
/// median filter of `median_window` frames (odd; edges replicated), and
/// carries the stream's embedding through unit-normalized.
pub fn binarize(bundle: &SegmentBundle, threshold: f64, median_window: usize) -> Vec<LocalStream> {
    assert!(
        threshold > 0.0 && threshold < 1.0,
        "threshold must be inside (0, 1)"
    );
    assert!(median_window % 2 == 1, "median window must be odd");
    (0..bundle.n_streams)
        .map(|j| {
            let raw: Vec<bool> = bundle
                .activity_row(j)
                .iter()
                .map(|&a| a >= threshold)
                .collect();
            let filtered = median_filter(&raw, median_window);
            let active_frames = filtered.iter().filter(|&&b| b).count();
            let mut embedding = bundle.embedding_row(j).to_vec();
            unit_normalize(&mut embedding);
            LocalStream {
                segment_index: bundle.segment_index,
                local_speaker: j,
                binary_activity: filtered,
                active_frames,
                embedding,
            }
        })
        .collect()
}

/// Keeps streams with at least `min_active_seconds` of speech; entirely
/// silent streams are always dropped. Dropped streams contribute neither an
/// embedding to clustering nor speech to the output.
pub fn select_active_streams(
    streams: Vec<LocalStream>,
    min_active_seconds: f64,
    frame_rate: f64,
) -> Vec<LocalStream> {
    assert!(min_active_seconds >= 0.0);
    streams
        .into_iter()
        .filter(|s| {
            s.active_frames > 0 && s.active_frames as f64 / frame_rate >= min_active_seconds
        })
        .collect()
}

/// Stitches clustered streams into a timeline: each maximal run of active
/// frames becomes a turn for speaker `spk<label>`, where frame `k` of a
/// segment spans `[start + k/rate, start + (k+1)/rate)`. The result is
/// normalized, so runs touching across a segment boundary merge.
///
/// `streams` must be in the same order as the items clustered into
/// `assignment`; `segment_start_times` is indexed by segment index.
pub fn streams_to_timeline(
    session_id: &str,
    streams: &[LocalStream],
    assignment: &ClusterAssignment,
    segment_start_times: &[f64],
    frame_rate: f64,
) -> Result<Timeline, LocalIoError> {
    let mut turns = Vec::new();
    for (i, stream) in streams.iter().enumerate() {
        let Some(&label) = assignment.labels.get(i) else {
            return Err(LocalIoError::MissingLabel {
                stream: i,
                segment: stream.segment_index,
            });
        };
        let Some(&seg_start) = segment_start_times.get(stream.segment_index) else {
            return Err(LocalIoError::MissingSegmentStart(stream.segment_index));
        };
        let speaker = format!("spk{label}");
        let mut run_start: Option<usize> = None;
        for (k, &on) in stream.binary_activity.iter().chain([false].iter()).enumerate() {
            match (run_start, on) {
                (None, true) => run_start = Some(k),
                (Some(s), false) => {
                    let start = seg_start + s as f64 / frame_rate;
                    let end = seg_start + k as f64 / frame_rate;
                    if end - start > TIME_EPS {
                        turns.push(SpeakerTurn::new(&speaker, start, end)?);
                    }
                    run_start = None;
                }
                _ => {}
            }
        }
    }
    Ok(Timeline::new(session_id, turns).normalize())
}

/// Per-segment start times from a sorted bundle list.
pub fn segment_start_times(bundles: &[SegmentBundle]) -> Vec<f64> {
    bundles.iter().map(|b| b.start).collect()
}

/// Groups selected streams by segment index (used to derive cannot-link
/// constraints from segment co-membership).
pub fn segment_of_streams(streams: &[LocalStream]) -> Vec<usize> {
    streams.iter().map(|s| s.segment_index).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bundle_with(activities: Vec<f64>, s: usize, t: usize) -> SegmentBundle {
        let d = 2;
        let embeddings = (0..s * d).map(|i| if i % d == 0 { 1.0 } else { 0.0 }).collect();
        SegmentBundle::new(0, 0.0, 10.0, s, t, d, activities, embeddings, EmbeddingSource::EendVc)
            .unwrap()
    }

    #[test]
    fn binarize_all_active() {
        let b = bundle_with(vec![0.9; 8], 2, 4);
        let streams = binarize(&b, 0.5, 1);
        assert!(streams.iter().all(|s| s.active_frames == 4));
        assert!(streams.iter().all(|s| s.binary_activity.iter().all(|&x| x)));
    }

    #[test]
    fn median_fills_single_gap() {
        let b = bundle_with(vec![1.0, 0.0, 1.0], 1, 3);
        let streams = binarize(&b, 0.5, 3);
        assert_eq!(streams[0].binary_activity, vec![true, true, true]);
        assert_eq!(streams[0].active_frames, 3);
    }

    #[test]
    fn threshold_boundary_is_inclusive() {
        let b = bundle_with(vec![0.5; 4], 1, 4);
        let streams = binarize(&b, 0.5, 1);
        assert_eq!(streams[0].active_frames, 4);
    }

    #[test]
    fn selection_drops_short_and_empty() {
        let mk = |active: usize, total: usize| LocalStream {
            segment_index: 0,
            local_speaker: 0,
            binary_activity: (0..total).map(|i| i < active).collect(),
            active_frames: active,
            embedding: vec![1.0, 0.0],
        };
        let streams = vec![mk(0, 10), mk(3, 10), mk(10, 10)];
        // 10 fps, min 0.5 s => at least 5 frames.
        let kept = select_active_streams(streams.clone(), 0.5, 10.0);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].active_frames, 10);
        // min 0 still drops the fully silent stream.
        let kept = select_active_streams(streams, 0.0, 10.0);
        assert_eq!(kept.len(), 2);
    }

    fn assignment_of(labels: Vec<usize>) -> ClusterAssignment {
        let k = labels.iter().copied().max().map_or(1, |m| m + 1);
        ClusterAssignment {
            labels,
            k,
            violations: 0,
            violating_segments: 0,
        }
    }

    #[test]
    fn stitching_run_length_semantics() {
        let stream = LocalStream {
            segment_index: 0,
            local_speaker: 0,
            binary_activity: vec![true, true, false, true],
            active_frames: 3,
            embedding: vec![1.0],
        };
        let tl = streams_to_timeline("s", &[stream], &assignment_of(vec![2]), &[0.0], 10.0)
            .unwrap();
        assert_eq!(tl.turns.len(), 2);
        assert_eq!(tl.turns[0].speaker, "spk2");
        assert!((tl.turns[0].start - 0.0).abs() < 1e-9 && (tl.turns[0].end - 0.2).abs() < 1e-9);
        assert!((tl.turns[1].start - 0.3).abs() < 1e-9 && (tl.turns[1].end - 0.4).abs() < 1e-9);
    }

    #[test]
    fn stitching_overlap_and_boundary_merge() {
        let mk = |segment, frames: Vec<bool>| LocalStream {
            segment_index: segment,
            local_speaker: 0,
            active_frames: frames.iter().filter(|&&b| b).count(),
            binary_activity: frames,
            embedding: vec![1.0],
        };
        // Two streams, same segment, same frames, different labels -> overlap.
        let tl = streams_to_timeline(
            "s",
            &[mk(0, vec![true, true]), mk(0, vec![true, true])],
            &assignment_of(vec![0, 1]),
            &[0.0],
            10.0,
        )
        .unwrap();
        assert_eq!(tl.turns.len(), 2);
        assert!((tl.total_speech() - 0.4).abs() < 1e-9);

        // Adjacent segments, same label, touching at the boundary -> merged.
        let tl = streams_to_timeline(
            "s",
            &[mk(0, vec![false, true]), mk(1, vec![true, false])],
            &assignment_of(vec![0, 0]),
            &[0.0, 0.2],
            10.0,
        )
        .unwrap();
        assert_eq!(tl.turns.len(), 1);
        assert!((tl.turns[0].start - 0.1).abs() < 1e-9);
        assert!((tl.turns[0].end - 0.3).abs() < 1e-9);
    }

    #[test]
    fn stitching_missing_label_errors() {
        let stream = LocalStream {
            segment_index: 0,
            local_speaker: 0,
            binary_activity: vec![true],
            active_frames: 1,
            embedding: vec![1.0],
        };
        let err = streams_to_timeline("s", &[stream], &assignment_of(vec![]), &[0.0], 10.0);
        assert!(matches!(err, Err(LocalIoError::MissingLabel { stream: 0, .. })));
    }

    #[test]
    fn bundle_roundtrip_and_schema_checks() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.jsonl");
        let b0 = SegmentBundle::new(
            0, 0.0, 10.0, 2, 4, 3,
            vec![0.1; 8],
            vec![0.5; 6],
            EmbeddingSource::ExternalExtractor,
        )
        .unwrap();
        let b1 = SegmentBundle::new(
            1, 0.4, 10.0, 2, 2, 3,
            vec![0.9; 4],
            vec![0.5; 6],
            EmbeddingSource::ExternalExtractor,
        )
        .unwrap();
        write_bundles("sess", &[b0.clone(), b1.clone()], &p).unwrap();
        let (sid, back) = read_bundles(&p).unwrap();
        assert_eq!(sid, "sess");
        assert_eq!(back, vec![b0, b1]);

        // Mismatched D between segments is a schema error.
        let text = std::fs::read_to_string(&p).unwrap();
        let mangled = text.replace(
            "\"d\":3",
            "\"d\":4",
        );
        std::fs::write(&p, mangled).unwrap();
        assert!(matches!(read_bundles(&p), Err(LocalIoError::Schema(_))));
    }

    #[test]
    fn tiling_gap_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("gap.jsonl");
        let b0 = SegmentBundle::new(
            0, 0.0, 10.0, 1, 2, 1, vec![0.0; 2], vec![1.0], EmbeddingSource::EendVc,
        )
        .unwrap();
        let b1 = SegmentBundle::new(
            1, 5.0, 10.0, 1, 2, 1, vec![0.0; 2], vec![1.0], EmbeddingSource::EendVc,
        )
        .unwrap();
        write_bundles("sess", &[b0, b1], &p).unwrap();
        assert!(matches!(read_bundles(&p), Err(LocalIoError::Schema(_))));
    }

    proptest! {
        #[test]
        fn binarize_monotone_in_threshold(
            acts in prop::collection::vec(0.0f64..=1.0, 6..40),
            lo in 0.05f64..0.9,
            bump in 0.01f64..0.09,
        ) {
            let t = acts.len();
            let b = bundle_with(acts, 1, t);
            let low = binarize(&b, lo, 1);
            let high = binarize(&b, lo + bump, 1);
            prop_assert!(high[0].active_frames <= low[0].active_frames);
            for (h, l) in high[0].binary_activity.iter().zip(&low[0].binary_activity) {
                prop_assert!(!h | l, "frame active at high threshold but not low");
            }
        }

        #[test]
        fn stitching_conserves_speech(
            frames in prop::collection::vec(prop::bool::ANY, 1..60),
            label in 0usize..3,
        ) {
            let active = frames.iter().filter(|&&b| b).count();
            prop_assume!(active > 0);
            let stream = LocalStream {
                segment_index: 0,
                local_speaker: 0,
                binary_activity: frames,
                active_frames: active,
                embedding: vec![1.0],
            };
            let tl = streams_to_timeline(
                "s", &[stream], &assignment_of(vec![label]), &[0.0], 25.0,
            ).unwrap();
            prop_assert!((tl.total_speech() - active as f64 / 25.0).abs() < 1e-9);
        }
    }
}
