//! End-to-end orchestration: per-channel clustering and stitching, DOVER-LAP
//! fusion across channels, pseudo-label export for self-supervised
//! adaptation, and the optional second pass over externally refreshed
//! bundles.
//!
//! The neural retraining itself is out of scope; it is replaced by a file
//! contract. Pass one exports, per channel, the fused timeline rasterized
//! onto that channel's segment grid; an external trainer may consume those
//! labels and hand back refreshed bundle files, which
//! [`run_second_pass`] re-runs through the identical pipeline.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::{cluster_session, ClusteringError, ClusteringParams, SessionClustering};
use crate::fusion::{fuse, FusionError, HypothesisSet, RankWeighting};
use crate::local_io::{
    binarize, read_bundles, segment_start_times, select_active_streams, LocalIoError, LocalStream,
    SegmentBundle,
};
use crate::rttm::write_rttm;
use crate::timeline::{SpeakerTurn, Timeline, TimelineError, TIME_EPS};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("session {0}: every channel failed")]
    AllChannelsFailed(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("channel {channel}: {source}")]
    Channel {
        channel: usize,
        #[source]
        source: Box<PipelineError>,
    },
    #[error(transparent)]
    LocalIo(#[from] LocalIoError),
    #[error(transparent)]
    Clustering(#[from] ClusteringError),
    #[error(transparent)]
    Timeline(#[from] TimelineError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path, source: std::io::Error) -> PipelineError {
    PipelineError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// One session's channel bundle files, as listed in the config.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionSpec {
    pub id: String,
    pub channels: Vec<PathBuf>,
}

/// Full pipeline configuration. Every field has a default; unknown keys in
/// config files are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Nominal segment length in seconds (the simulator and SSA grids).
    pub segment_size: f64,
    /// Predefined session speaker maximum.
    pub max_speakers: usize,
    /// Activity binarization threshold.
    pub binarize_threshold: f64,
    /// Median-filter window (frames, odd).
    pub median_window: usize,
    /// Minimum speech per stream for its embedding to enter clustering.
    pub min_active_seconds: f64,
    pub clustering: ClusteringParams,
    pub rank_weighting: RankWeighting,
    /// Per-channel fusion weights; unset means 1.0 everywhere.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub channel_weights: Option<Vec<f64>>,
    /// Scoring collar used by reporting helpers.
    pub collar: f64,
    /// Worker threads for session/channel parallelism (0 = auto).
    pub workers: usize,
    /// Pipeline pass number; recorded in run metadata.
    pub iteration: u32,
    pub output_dir: PathBuf,
    pub sessions: Vec<SessionSpec>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            segment_size: 80.0,
            max_speakers: 4,
            binarize_threshold: 0.5,
            median_window: 11,
            min_active_seconds: 0.5,
            clustering: ClusteringParams::default(),
            rank_weighting: RankWeighting::LinearRank,
            channel_weights: None,
            collar: 0.25,
            workers: 0,
            iteration: 1,
            output_dir: PathBuf::from("diarkit-out"),
            sessions: Vec::new(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if !self.segment_size.is_finite() || self.segment_size <= 0.0 {
            return Err(PipelineError::Config("segment_size must be positive".into()));
        }
        if self.max_speakers == 0 {
            return Err(PipelineError::Config("max_speakers must be >= 1".into()));
        }
        if !(self.binarize_threshold > 0.0 && self.binarize_threshold < 1.0) {
            return Err(PipelineError::Config(
                "binarize_threshold must be inside (0, 1)".into(),
            ));
        }
        if self.median_window % 2 == 0 {
            return Err(PipelineError::Config("median_window must be odd".into()));
        }
        if self.min_active_seconds < 0.0 {
            return Err(PipelineError::Config(
                "min_active_seconds must be >= 0".into(),
            ));
        }
        if self.collar < 0.0 {
            return Err(PipelineError::Config("collar must be >= 0".into()));
        }
        if let Some(w) = &self.channel_weights {
            if w.iter().any(|&x| !x.is_finite() || x <= 0.0) {
                return Err(PipelineError::Config(
                    "channel_weights must be positive".into(),
                ));
            }
        }
        Ok(())
    }

    /// Layered load: TOML text over the defaults; unknown keys error.
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let cfg: PipelineConfig =
            toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn dump_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

/// Result of one channel run: the stitched timeline plus clustering
/// diagnostics (absent when the channel had no usable speech).
#[derive(Debug, Clone)]
pub struct ChannelRun {
    pub channel: usize,
    pub timeline: Timeline,
    pub clustering: Option<SessionClustering>,
    pub selected_streams: usize,
    /// Wall time of the channel run; diagnostic only, never written into
    /// the (deterministic) output tree.
    pub wall_ms: u64,
}

/// Channel outcome inside a session: failures are isolated, not fatal.
#[derive(Debug, Clone)]
pub enum ChannelOutcome {
    Done(ChannelRun),
    Failed { channel: usize, message: String },
}

impl ChannelOutcome {
    pub fn run(&self) -> Option<&ChannelRun> {
        match self {
            ChannelOutcome::Done(r) => Some(r),
            ChannelOutcome::Failed { .. } => None,
        }
    }
}

/// One session's outputs: per-channel outcomes plus the fused timeline.
#[derive(Debug, Clone)]
pub struct SessionOutput {
    pub session_id: String,
    pub per_channel: Vec<ChannelOutcome>,
    pub fused: Timeline,
    pub iteration: u32,
}

/// Stage timing record for the structured log (stderr, not the output
/// tree — wall times are not deterministic).
#[derive(Debug, Clone, Serialize)]
pub struct StageRecord {
    pub session: String,
    pub channel: Option<usize>,
    pub stage: String,
    pub wall_ms: u64,
}

/// Binarize → select → cluster → stitch for one channel.
///
/// Bundles must be the sorted, validated output of
/// [`read_bundles`](crate::local_io::read_bundles). A channel with no
/// active streams yields an empty timeline and no clustering diagnostics.
pub fn run_channel(
    session_id: &str,
    channel: usize,
    bundles: &[SegmentBundle],
    cfg: &PipelineConfig,
) -> Result<ChannelRun, PipelineError> {
    let started = Instant::now();
    let attach = |source: PipelineError| PipelineError::Channel {
        channel,
        source: Box::new(source),
    };
    if bundles.is_empty() {
        return Err(attach(PipelineError::Config("no segment bundles".into())));
    }
    let frame_rate = bundles[0].frame_rate;
    let mut streams: Vec<LocalStream> = Vec::new();
    for b in bundles {
        streams.extend(binarize(b, cfg.binarize_threshold, cfg.median_window));
    }
    let selected = select_active_streams(streams, cfg.min_active_seconds, frame_rate);
    if selected.is_empty() {
        return Ok(ChannelRun {
            channel,
            timeline: Timeline::empty(session_id),
            clustering: None,
            selected_streams: 0,
            wall_ms: started.elapsed().as_millis() as u64,
        });
    }
    let clustering =
        cluster_session(&selected, cfg.max_speakers, &cfg.clustering).map_err(|e| attach(e.into()))?;
    let starts = segment_start_times(bundles);
    let timeline = crate::local_io::streams_to_timeline(
        session_id,
        &selected,
        &clustering.assignment,
        &starts,
        frame_rate,
    )
    .map_err(|e| attach(e.into()))?;
    Ok(ChannelRun {
        channel,
        timeline,
        clustering: Some(clustering),
        selected_streams: selected.len(),
        wall_ms: started.elapsed().as_millis() as u64,
    })
}

/// Runs every channel of a session and fuses the survivors. Failed channels
/// are excluded from the vote; only a session with zero surviving channels
/// fails.
pub fn run_session(
    session_id: &str,
    channels: &[Vec<SegmentBundle>],
    cfg: &PipelineConfig,
) -> Result<SessionOutput, PipelineError> {
    let outcomes: Vec<ChannelOutcome> = channels
        .par_iter()
        .enumerate()
        .map(|(c, bundles)| match run_channel(session_id, c, bundles, cfg) {
            Ok(run) => ChannelOutcome::Done(run),
            Err(e) => ChannelOutcome::Failed {
                channel: c,
                message: e.to_string(),
            },
        })
        .collect();

    let survivors: Vec<(usize, Timeline)> = outcomes
        .iter()
        .filter_map(|o| o.run().map(|r| (r.channel, r.timeline.clone())))
        .collect();
    if survivors.is_empty() {
        return Err(PipelineError::AllChannelsFailed(session_id.to_string()));
    }
    let weights: Vec<f64> = survivors
        .iter()
        .map(|(c, _)| {
            cfg.channel_weights
                .as_ref()
                .and_then(|w| w.get(*c).copied())
                .unwrap_or(1.0)
        })
        .collect();
    let hyps = HypothesisSet::with_weights(
        survivors.into_iter().map(|(_, t)| t).collect(),
        weights,
    )?;
    let fused = fuse(&hyps, cfg.rank_weighting);
    Ok(SessionOutput {
        session_id: session_id.to_string(),
        per_channel: outcomes,
        fused,
        iteration: cfg.iteration,
    })
}

/// Identical pipeline over externally refreshed bundles; only the recorded
/// iteration number advances.
pub fn run_second_pass(
    session_id: &str,
    refreshed: &[Vec<SegmentBundle>],
    cfg: &PipelineConfig,
) -> Result<SessionOutput, PipelineError> {
    let mut next = cfg.clone();
    next.iteration = cfg.iteration + 1;
    run_session(session_id, refreshed, &next)
}

// ---------------------------------------------------------------------------
// SSA pseudo-label export
// ---------------------------------------------------------------------------

/// Fused-timeline labels rasterized onto each channel's segment grid: the
/// training targets an external adaptation step consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct SsaLabelSet {
    pub session_id: String,
    /// Global speaker order (sorted labels), stable across all segments.
    pub speakers: Vec<String>,
    pub channels: Vec<SsaChannelLabels>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SsaChannelLabels {
    pub channel: usize,
    pub frame_rate: f64,
    pub segments: Vec<SsaSegment>,
}

/// One segment of pseudo-labels: `activities[speaker][frame]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SsaSegment {
    pub segment_index: usize,
    pub start: f64,
    pub activities: Vec<Vec<bool>>,
}

/// Rasterizes the fused timeline onto each channel's segment grid. Speakers
/// are ordered by global label; a speaker silent in a segment keeps its
/// all-zero row so the layout is identical everywhere.
pub fn export_ssa_labels(
    fused: &Timeline,
    channels: &[&[SegmentBundle]],
    _cfg: &PipelineConfig,
) -> SsaLabelSet {
    let fused = fused.normalize();
    let mut speakers = fused.speakers();
    speakers.sort();
    let per_speaker = fused.per_speaker();

    let channels = channels
        .iter()
        .enumerate()
        .map(|(channel, bundles)| {
            let frame_rate = bundles.first().map_or(1.0, |b| b.frame_rate);
            let segments = bundles
                .iter()
                .map(|b| {
                    let activities = speakers
                        .iter()
                        .map(|spk| {
                            let ivs = &per_speaker[spk];
                            (0..b.n_frames)
                                .map(|k| {
                                    let mid = b.start + (k as f64 + 0.5) / frame_rate;
                                    ivs.iter().any(|&(s, e)| s <= mid && mid < e)
                                })
                                .collect()
                        })
                        .collect();
                    SsaSegment {
                        segment_index: b.segment_index,
                        start: b.start,
                        activities,
                    }
                })
                .collect();
            SsaChannelLabels {
                channel,
                frame_rate,
                segments,
            }
        })
        .collect();
    SsaLabelSet {
        session_id: fused.session_id.clone(),
        speakers,
        channels,
    }
}

/// Reconstructs a timeline from one channel's pseudo-labels (each active
/// frame run becomes a turn). Exact up to one frame per boundary.
pub fn ssa_labels_to_timeline(set: &SsaLabelSet, channel: &SsaChannelLabels) -> Timeline {
    let mut turns: Vec<SpeakerTurn> = Vec::new();
    for seg in &channel.segments {
        for (s, row) in seg.activities.iter().enumerate() {
            let mut run_start: Option<usize> = None;
            for (k, &on) in row.iter().chain([false].iter()).enumerate() {
                match (run_start, on) {
                    (None, true) => run_start = Some(k),
                    (Some(r), false) => {
                        let start = seg.start + r as f64 / channel.frame_rate;
                        let end = seg.start + k as f64 / channel.frame_rate;
                        if end - start > TIME_EPS {
                            turns.push(SpeakerTurn {
                                speaker: set.speakers[s].clone(),
                                start,
                                end,
                            });
                        }
                        run_start = None;
                    }
                    _ => {}
                }
            }
        }
    }
    Timeline::new(set.session_id.clone(), turns).normalize()
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum SsaRecord {
    SsaHeader {
        session_id: String,
        channel: usize,
        speakers: Vec<String>,
        frame_rate: f64,
    },
    SsaSegment {
        segment_index: usize,
        start: f64,
        t_actual: usize,
        /// Row-major speakers x frames, 0.0/1.0 (segment-bundle activity layout).
        activities: Vec<f64>,
    },
}

/// Writes one pseudo-label file per channel: `ssa/channel_<c>.jsonl`.
pub fn write_ssa_labels(set: &SsaLabelSet, dir: impl AsRef<Path>) -> Result<(), PipelineError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    for ch in &set.channels {
        let mut out = String::new();
        let header = SsaRecord::SsaHeader {
            session_id: set.session_id.clone(),
            channel: ch.channel,
            speakers: set.speakers.clone(),
            frame_rate: ch.frame_rate,
        };
        out.push_str(&serde_json::to_string(&header).expect("header serializes"));
        out.push('\n');
        for seg in &ch.segments {
            let t = seg.activities.first().map_or(0, Vec::len);
            let rec = SsaRecord::SsaSegment {
                segment_index: seg.segment_index,
                start: seg.start,
                t_actual: t,
                activities: seg
                    .activities
                    .iter()
                    .flatten()
                    .map(|&b| if b { 1.0 } else { 0.0 })
                    .collect(),
            };
            out.push_str(&serde_json::to_string(&rec).expect("segment serializes"));
            out.push('\n');
        }
        let path = dir.join(format!("channel_{}.jsonl", ch.channel));
        std::fs::write(&path, out).map_err(|e| io_err(&path, e))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Whole-run orchestration
// ---------------------------------------------------------------------------

/// Per-session status in a full run.
#[derive(Debug, Clone, Serialize)]
pub struct SessionReport {
    pub session: String,
    pub status: String,
    pub channels_ok: usize,
    pub channels_failed: usize,
}

/// Outcome of [`run_pipeline`]: session statuses plus the stage log.
#[derive(Debug)]
pub struct RunReport {
    pub sessions: Vec<SessionReport>,
    pub log: Vec<StageRecord>,
}

impl RunReport {
    /// 0 = every session fused cleanly; 2 = partial failures; 1 = nothing
    /// succeeded.
    pub fn exit_code(&self) -> i32 {
        let ok = self
            .sessions
            .iter()
            .filter(|s| s.status == "ok" && s.channels_failed == 0)
            .count();
        let fused = self.sessions.iter().filter(|s| s.status == "ok").count();
        if fused == 0 {
            1
        } else if ok == self.sessions.len() {
            0
        } else {
            2
        }
    }
}

#[derive(Serialize)]
struct ChannelDiagnostics<'a> {
    session: &'a str,
    channel: usize,
    status: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    message: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    selected_streams: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ahc_k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    violations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    violating_segments: Option<usize>,
}

/// Full run over the config's session list: reads bundles, runs every
/// session, writes per-channel RTTMs, the fused RTTM, diagnostics and SSA
/// labels under `output_dir/<session>/`. Deterministic: identical inputs
/// and config produce a bit-identical output tree.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunReport, PipelineError> {
    cfg.validate()?;
    if cfg.sessions.is_empty() {
        return Err(PipelineError::Config("no sessions configured".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| PipelineError::Config(e.to_string()))?;

    let results: Vec<(SessionReport, Vec<StageRecord>)> = pool.install(|| {
        cfg.sessions
            .par_iter()
            .map(|spec| run_one_session_to_disk(spec, cfg))
            .collect()
    });

    let mut sessions = Vec::new();
    let mut log = Vec::new();
    for (report, records) in results {
        sessions.push(report);
        log.extend(records);
    }
    sessions.sort_by(|a, b| a.session.cmp(&b.session));
    log.sort_by(|a, b| (&a.session, a.channel).cmp(&(&b.session, b.channel)));

    let meta_path = cfg.output_dir.join("run.json");
    let meta = serde_json::json!({
        "iteration": cfg.iteration,
        "sessions": sessions,
    });
    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| io_err(&cfg.output_dir, e))?;
    std::fs::write(&meta_path, format!("{}\n", serde_json::to_string_pretty(&meta).unwrap()))
        .map_err(|e| io_err(&meta_path, e))?;
    Ok(RunReport { sessions, log })
}

fn run_one_session_to_disk(
    spec: &SessionSpec,
    cfg: &PipelineConfig,
) -> (SessionReport, Vec<StageRecord>) {
    let mut log = Vec::new();
    let started = Instant::now();
    let fail = |message: String| SessionReport {
        session: spec.id.clone(),
        status: message,
        channels_ok: 0,
        channels_failed: spec.channels.len(),
    };

    let mut channels: Vec<Vec<SegmentBundle>> = Vec::new();
    for path in &spec.channels {
        match read_bundles(path) {
            Ok((_, bundles)) => channels.push(bundles),
            Err(e) => {
                return (fail(format!("read {}: {e}", path.display())), log);
            }
        }
    }
    log.push(StageRecord {
        session: spec.id.clone(),
        channel: None,
        stage: "read".into(),
        wall_ms: started.elapsed().as_millis() as u64,
    });

    let stage = Instant::now();
    let output = match run_session(&spec.id, &channels, cfg) {
        Ok(o) => o,
        Err(e) => return (fail(e.to_string()), log),
    };
    for outcome in &output.per_channel {
        if let ChannelOutcome::Done(run) = outcome {
            log.push(StageRecord {
                session: spec.id.clone(),
                channel: Some(run.channel),
                stage: "channel".into(),
                wall_ms: run.wall_ms,
            });
        }
    }
    log.push(StageRecord {
        session: spec.id.clone(),
        channel: None,
        stage: "diarize".into(),
        wall_ms: stage.elapsed().as_millis() as u64,
    });

    let stage = Instant::now();
    let written = write_session_outputs(spec, cfg, &output, &channels);
    log.push(StageRecord {
        session: spec.id.clone(),
        channel: None,
        stage: "write".into(),
        wall_ms: stage.elapsed().as_millis() as u64,
    });
    if let Err(e) = written {
        return (fail(e.to_string()), log);
    }

    let failed = output
        .per_channel
        .iter()
        .filter(|o| o.run().is_none())
        .count();
    (
        SessionReport {
            session: spec.id.clone(),
            status: "ok".into(),
            channels_ok: output.per_channel.len() - failed,
            channels_failed: failed,
        },
        log,
    )
}

fn write_session_outputs(
    spec: &SessionSpec,
    cfg: &PipelineConfig,
    output: &SessionOutput,
    channels: &[Vec<SegmentBundle>],
) -> Result<(), PipelineError> {
    let dir = cfg.output_dir.join(&spec.id);
    std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;

    let mut diagnostics = String::new();
    for outcome in &output.per_channel {
        let diag = match outcome {
            ChannelOutcome::Done(run) => {
                let p = dir.join(format!("channel_{}.rttm", run.channel));
                write_rttm(std::slice::from_ref(&run.timeline), &p)?;
                ChannelDiagnostics {
                    session: &spec.id,
                    channel: run.channel,
                    status: "ok",
                    message: None,
                    selected_streams: Some(run.selected_streams),
                    ahc_k: run.clustering.as_ref().map(|c| c.ahc_k),
                    k: run.clustering.as_ref().map(|c| c.assignment.k),
                    violations: run.clustering.as_ref().map(|c| c.assignment.violations),
                    violating_segments: run
                        .clustering
                        .as_ref()
                        .map(|c| c.assignment.violating_segments),
                }
            }
            ChannelOutcome::Failed { channel, message } => ChannelDiagnostics {
                session: &spec.id,
                channel: *channel,
                status: "failed",
                message: Some(message),
                selected_streams: None,
                ahc_k: None,
                k: None,
                violations: None,
                violating_segments: None,
            },
        };
        let _ = writeln!(
            diagnostics,
            "{}",
            serde_json::to_string(&diag).expect("diagnostics serialize")
        );
    }
    let diag_path = dir.join("diagnostics.jsonl");
    std::fs::write(&diag_path, diagnostics).map_err(|e| io_err(&diag_path, e))?;

    write_rttm(std::slice::from_ref(&output.fused), dir.join("fused.rttm"))?;

    let channel_views: Vec<&[SegmentBundle]> = channels.iter().map(Vec::as_slice).collect();
    let labels = export_ssa_labels(&output.fused, &channel_views, cfg);
    write_ssa_labels(&labels, dir.join("ssa"))?;
    Ok(())
}
