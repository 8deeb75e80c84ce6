//! Back half of an EEND-VC style speaker-diarization pipeline, minus the
//! neural parts.
//!
//! A neural front end (out of scope here) cuts a recording into fixed-length
//! segments and emits, per segment, local speaker activities and one
//! embedding per local speaker. This crate takes over from there:
//!
//! * [`timeline`] — speaker-turn timelines, interval algebra; [`rttm`] for
//!   RTTM/UEM file I/O;
//! * [`local_io`] — the segment-bundle file boundary, activity binarization,
//!   stream selection and stitching back into timelines;
//! * [`clustering`] — cannot-link constrained clustering (constrained AHC
//!   for speaker counting, COP-Kmeans for refinement) plus unconstrained
//!   baselines;
//! * [`assignment`] — exact Hungarian solver for label alignment problems;
//! * [`fusion`] — DOVER-LAP multi-channel hypothesis combination;
//! * [`scoring`] — DER with collar and optimal speaker mapping;
//! * [`simulate`] — seeded conversation/channel simulator and the trend
//!   experiments built on it;
//! * [`pipeline`] — end-to-end orchestration and pseudo-label export.
//!
//! Everything is deterministic: all randomness flows from explicit seeds,
//! and identical inputs produce bit-identical outputs.

pub mod assignment;
pub mod clustering;
pub mod fusion;
pub mod local_io;
pub mod pipeline;
pub mod rttm;
pub mod scoring;
pub mod simulate;
pub mod timeline;

pub use assignment::{hungarian, AssignmentSolution};
pub use clustering::{
    cluster_session, constrained_ahc, cop_kmeans, cosine_distance_matrix, estimate_num_speakers,
    plain_ahc, plain_kmeans, Algorithm, ClusterAssignment, ClusteringError, ClusteringParams,
    ConstraintSet, SessionClustering,
};
pub use fusion::{
    align_labels, dover_lap_vote, fuse, pairwise_overlap_cost, FusionError, HypothesisSet,
    LabelMapping, RankWeighting,
};
pub use local_io::{
    binarize, read_bundles, select_active_streams, streams_to_timeline, write_bundles,
    EmbeddingSource, LocalIoError, LocalStream, SegmentBundle,
};
pub use pipeline::{
    export_ssa_labels, run_channel, run_pipeline, run_second_pass, run_session,
    ssa_labels_to_timeline, write_ssa_labels, ChannelOutcome, ChannelRun, PipelineConfig,
    PipelineError, RunReport, SessionOutput, SessionReport, SessionSpec, SsaChannelLabels,
    SsaLabelSet, SsaSegment, StageRecord,
};
pub use rttm::{read_rttm, read_uem, write_rttm, write_uem};
pub use scoring::{
    optimal_mapping, score, scored_regions, DerReport, ScoringError, ScoringOptions,
};
pub use simulate::{
    derive_seed, generate_ground_truth, run_trend_experiment, synthesize_channel, GroundTruth,
    SimConfig, SimError, TrendExperiment, TrendRecord, TrendSummary,
};
pub use timeline::{SpeakerTurn, Timeline, TimelineError, Uem, TIME_EPS};
