//! Seeded conversation simulator: synthetic ground truth, per-channel local
//! diarization outputs with controlled error injection, and the trend
//! experiments built on top.
//!
//! The simulator replaces the neural front end at desk scale. Each speaker
//! alternates exponential utterance/pause durations (independent speakers
//! overlap naturally); channels observe the truth through boundary jitter,
//! evidence-dependent embedding noise (`sigma = sigma0 / sqrt(active
//! seconds)`, so longer segments yield cleaner embeddings), optional
//! mid-segment stream identity swaps, and optional outlier corruption.
//!
//! Everything is a pure function of the config and its seed: per-purpose
//! generators are derived by hashing the seed with stream tokens, so runs
//! are bit-identical and independent of scheduling.

mod trend;

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::local_io::{EmbeddingSource, SegmentBundle};
use crate::timeline::{SpeakerTurn, Timeline};

pub use trend::{run_trend_experiment, TrendExperiment, TrendRecord, TrendSummary};

/// Output streams per segment, matching a four-speaker front end.
pub const N_STREAMS: usize = 4;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
}

/// Simulator knobs. `seed` is mandatory: there is no ambient randomness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    #[serde(default = "defaults::n_speakers")]
    pub n_speakers: usize,
    #[serde(default = "defaults::session_length")]
    pub session_length: f64,
    /// Mean pause between a speaker's utterances (the exponential beta).
    #[serde(default = "defaults::mean_pause")]
    pub mean_pause: f64,
    #[serde(default = "defaults::mean_utterance")]
    pub mean_utterance: f64,
    /// Target fraction of speech-region time with two or more speakers;
    /// unset accepts whatever the independent processes produce.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overlap_fraction: Option<f64>,
    #[serde(default = "defaults::embedding_dim")]
    pub embedding_dim: usize,
    /// Embedding noise at one second of evidence (per dimension).
    #[serde(default = "defaults::embedding_noise_base")]
    pub embedding_noise_base: f64,
    /// Probability per segment of a mid-segment identity swap between two
    /// active streams.
    #[serde(default = "defaults::permutation_error_rate")]
    pub permutation_error_rate: f64,
    #[serde(default = "defaults::n_channels")]
    pub n_channels: usize,
    #[serde(default)]
    pub channel_outlier_indices: BTreeSet<usize>,
    #[serde(default = "defaults::segment_size")]
    pub segment_size: f64,
    #[serde(default = "defaults::frame_rate")]
    pub frame_rate: f64,
    /// Minimum pairwise cosine distance between speaker centroids.
    #[serde(default = "defaults::min_separation")]
    pub min_separation: f64,
    /// Uniform boundary jitter, in frames, applied to every activity run.
    #[serde(default = "defaults::boundary_jitter_frames")]
    pub boundary_jitter_frames: usize,
}

mod defaults {
    pub fn n_speakers() -> usize {
        4
    }
    pub fn session_length() -> f64 {
        600.0
    }
    pub fn mean_pause() -> f64 {
        2.0
    }
    pub fn mean_utterance() -> f64 {
        3.0
    }
    pub fn embedding_dim() -> usize {
        16
    }
    pub fn embedding_noise_base() -> f64 {
        1.2
    }
    pub fn permutation_error_rate() -> f64 {
        0.1
    }
    pub fn n_channels() -> usize {
        1
    }
    pub fn segment_size() -> f64 {
        80.0
    }
    pub fn frame_rate() -> f64 {
        10.0
    }
    pub fn min_separation() -> f64 {
        0.8
    }
    pub fn boundary_jitter_frames() -> usize {
        2
    }
}

impl SimConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            n_speakers: defaults::n_speakers(),
            session_length: defaults::session_length(),
            mean_pause: defaults::mean_pause(),
            mean_utterance: defaults::mean_utterance(),
            overlap_fraction: None,
            embedding_dim: defaults::embedding_dim(),
            embedding_noise_base: defaults::embedding_noise_base(),
            permutation_error_rate: defaults::permutation_error_rate(),
            n_channels: defaults::n_channels(),
            channel_outlier_indices: BTreeSet::new(),
            segment_size: defaults::segment_size(),
            frame_rate: defaults::frame_rate(),
            min_separation: defaults::min_separation(),
            boundary_jitter_frames: defaults::boundary_jitter_frames(),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let err = |m: &str| Err(SimError::Config(m.into()));
        if self.n_speakers == 0 || self.n_speakers > N_STREAMS {
            return err("n_speakers must be within 1..=4");
        }
        if !(self.session_length > 0.0 && self.mean_pause > 0.0 && self.mean_utterance > 0.0) {
            return err("durations must be positive");
        }
        if !(self.segment_size > 0.0 && self.frame_rate > 0.0) {
            return err("segment_size and frame_rate must be positive");
        }
        if let Some(f) = self.overlap_fraction {
            if !(0.0..=1.0).contains(&f) {
                return err("overlap_fraction must be within [0, 1]");
            }
        }
        if !(0.0..=1.0).contains(&self.permutation_error_rate) {
            return err("permutation_error_rate must be within [0, 1]");
        }
        if self.embedding_dim == 0 {
            return err("embedding_dim must be >= 1");
        }
        if self.embedding_noise_base < 0.0 {
            return err("embedding_noise_base must be >= 0");
        }
        if self.n_channels == 0 {
            return err("n_channels must be >= 1");
        }
        if self.channel_outlier_indices.iter().any(|&c| c >= self.n_channels) {
            return err("channel_outlier_indices out of range");
        }
        if !(0.0..2.0).contains(&self.min_separation) {
            return err("min_separation must be within [0, 2)");
        }
        Ok(())
    }

    fn total_frames(&self) -> usize {
        (self.session_length * self.frame_rate).round() as usize
    }

    fn nominal_segment_frames(&self) -> usize {
        ((self.segment_size * self.frame_rate).round() as usize).max(1)
    }
}

/// Synthetic reference: the true timeline plus the true speaker centroids.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub timeline: Timeline,
    pub speaker_centroids: Vec<Vec<f64>>,
}

// Stream tokens for seed derivation.
const STREAM_CENTROIDS: u64 = 1;
const STREAM_SPEAKER: u64 = 2;
const STREAM_CHANNEL: u64 = 3;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic per-purpose generator: hash the seed with stream tokens.
pub(crate) fn substream(seed: u64, tokens: &[u64]) -> ChaCha8Rng {
    let mut state = splitmix64(seed);
    for &t in tokens {
        state = splitmix64(state ^ t);
    }
    ChaCha8Rng::seed_from_u64(state)
}

/// Derives a run-specific seed (used by trend grids: `hash(seed, index)`).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ index)
}

fn unit_normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
}

fn random_unit_vector(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    unit_normalize(&mut v);
    v
}

fn sample_centroids(cfg: &SimConfig, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>, SimError> {
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(cfg.n_speakers);
    let mut attempts = 0usize;
    while centroids.len() < cfg.n_speakers {
        attempts += 1;
        if attempts > 10_000 {
            return Err(SimError::Config(format!(
                "cannot place {} centroids with min separation {} in {} dimensions",
                cfg.n_speakers, cfg.min_separation, cfg.embedding_dim
            )));
        }
        let candidate = random_unit_vector(cfg.embedding_dim, rng);
        let ok = centroids.iter().all(|c| {
            let dot: f64 = c.iter().zip(&candidate).map(|(a, b)| a * b).sum();
            1.0 - dot >= cfg.min_separation
        });
        if ok {
            centroids.push(candidate);
        }
    }
    Ok(centroids)
}

/// Per-speaker alternating exponential utterance/pause processes, expressed
/// in whole frames so channel rasterization is exact.
fn speaker_frames(cfg: &SimConfig, speaker: usize, attempt: u64) -> Vec<bool> {
    let mut rng = substream(cfg.seed, &[STREAM_SPEAKER, speaker as u64, attempt]);
    let utt = Exp::new(1.0 / cfg.mean_utterance).expect("positive mean");
    let pause = Exp::new(1.0 / cfg.mean_pause).expect("positive mean");
    let to_frames = |seconds: f64| ((seconds * cfg.frame_rate).round() as usize).max(1);

    let total = cfg.total_frames();
    let mut frames = vec![false; total];
    // Initial offset: a pause draw, allowed to round to zero so some
    // speakers may start speaking immediately.
    let mut cursor = (pause.sample(&mut rng) * cfg.frame_rate).round() as usize;
    while cursor < total {
        let speak = to_frames(utt.sample(&mut rng));
        let end = (cursor + speak).min(total);
        for f in frames.iter_mut().take(end).skip(cursor) {
            *f = true;
        }
        cursor = end + to_frames(pause.sample(&mut rng));
    }
    frames
}

fn realized_overlap_fraction(per_speaker: &[Vec<bool>]) -> f64 {
    let total = per_speaker.first().map_or(0, Vec::len);
    let mut speech = 0usize;
    let mut overlapped = 0usize;
    for f in 0..total {
        let active = per_speaker.iter().filter(|s| s[f]).count();
        if active >= 1 {
            speech += 1;
        }
        if active >= 2 {
            overlapped += 1;
        }
    }
    if speech == 0 {
        0.0
    } else {
        overlapped as f64 / speech as f64
    }
}

fn frames_to_timeline(cfg: &SimConfig, per_speaker: &[Vec<bool>]) -> Timeline {
    let mut turns = Vec::new();
    for (s, frames) in per_speaker.iter().enumerate() {
        let speaker = format!("spk{s}");
        let mut run_start: Option<usize> = None;
        for (k, &on) in frames.iter().chain([false].iter()).enumerate() {
            match (run_start, on) {
                (None, true) => run_start = Some(k),
                (Some(r), false) => {
                    turns.push(
                        SpeakerTurn::new(
                            &speaker,
                            r as f64 / cfg.frame_rate,
                            k as f64 / cfg.frame_rate,
                        )
                        .expect("positive run"),
                    );
                    run_start = None;
                }
                _ => {}
            }
        }
    }
    Timeline::new(format!("sim_{:016x}", cfg.seed), turns).normalize()
}

/// Generates the true conversation. With an overlap target set, whole drawing
/// attempts are rejected until the realized overlap fraction lands within
/// ±0.1 of the target (up to 200 attempts).
pub fn generate_ground_truth(cfg: &SimConfig) -> Result<GroundTruth, SimError> {
    cfg.validate()?;
    let mut rng = substream(cfg.seed, &[STREAM_CENTROIDS]);
    let speaker_centroids = sample_centroids(cfg, &mut rng)?;

    let mut chosen: Option<Vec<Vec<bool>>> = None;
    match cfg.overlap_fraction {
        None => {
            chosen = Some(
                (0..cfg.n_speakers)
                    .map(|s| speaker_frames(cfg, s, 0))
                    .collect(),
            );
        }
        Some(target) => {
            for attempt in 0..200u64 {
                let candidate: Vec<Vec<bool>> = (0..cfg.n_speakers)
                    .map(|s| speaker_frames(cfg, s, attempt))
                    .collect();
                if (realized_overlap_fraction(&candidate) - target).abs() <= 0.1 {
                    chosen = Some(candidate);
                    break;
                }
            }
            if chosen.is_none() {
                return Err(SimError::Config(format!(
                    "overlap target {target} infeasible for {} speakers with these rates",
                    cfg.n_speakers
                )));
            }
        }
    }
    let per_speaker = chosen.expect("selected above");
    Ok(GroundTruth {
        timeline: frames_to_timeline(cfg, &per_speaker),
        speaker_centroids,
    })
}

/// Rasterizes the truth back to per-speaker frame arrays (exact: the truth
/// lives on the frame grid).
fn truth_frames(cfg: &SimConfig, truth: &GroundTruth) -> Vec<Vec<bool>> {
    let total = cfg.total_frames();
    let mut frames = vec![vec![false; total]; cfg.n_speakers];
    for t in &truth.timeline.turns {
        let s: usize = t.speaker[3..].parse().expect("simulator speaker label");
        let f0 = (t.start * cfg.frame_rate).round() as usize;
        let f1 = (t.end * cfg.frame_rate).round() as usize;
        for f in frames[s].iter_mut().take(f1.min(total)).skip(f0) {
            *f = true;
        }
    }
    frames
}

/// Applies uniform ±jitter to both edges of every activity run.
fn jitter_runs(bits: &[bool], jitter: usize, rng: &mut ChaCha8Rng) -> Vec<bool> {
    if jitter == 0 {
        return bits.to_vec();
    }
    let n = bits.len() as i64;
    let j = jitter as i64;
    let mut out = vec![false; bits.len()];
    let mut run_start: Option<i64> = None;
    for k in 0..=bits.len() {
        let on = k < bits.len() && bits[k];
        match (run_start, on) {
            (None, true) => run_start = Some(k as i64),
            (Some(r), false) => {
                let d0: i64 = rng.random_range(-j..=j);
                let d1: i64 = rng.random_range(-j..=j);
                let a = (r + d0).clamp(0, n);
                let b = (k as i64 + d1).clamp(0, n);
                for f in a..b {
                    out[f as usize] = true;
                }
                run_start = None;
            }
            _ => {}
        }
    }
    out
}

/// Simulates what one channel's front end would emit for the session:
/// segments of `segment_size` with `S = 4` streams each. True speakers
/// occupy streams in per-segment random order; activities get boundary
/// jitter; embeddings are centroid mixtures (by owned speech) plus noise
/// shrinking with evidence. With probability `permutation_error_rate` a
/// segment swaps two active streams' identities for its second half.
/// Outlier channels flip each frame with probability 0.3 and double the
/// embedding noise.
pub fn synthesize_channel(
    truth: &GroundTruth,
    cfg: &SimConfig,
    channel: usize,
) -> Result<Vec<SegmentBundle>, SimError> {
    cfg.validate()?;
    if channel >= cfg.n_channels {
        return Err(SimError::Config(format!(
            "channel {channel} out of range for {} channels",
            cfg.n_channels
        )));
    }
    let outlier = cfg.channel_outlier_indices.contains(&channel);
    let frames = truth_frames(cfg, truth);
    let total = cfg.total_frames();
    let t_nom = cfg.nominal_segment_frames();
    let n_segments = total.div_ceil(t_nom);

    let mut bundles = Vec::with_capacity(n_segments);
    for seg in 0..n_segments {
        let mut rng = substream(cfg.seed, &[STREAM_CHANNEL, channel as u64, seg as u64]);
        let f0 = seg * t_nom;
        let f1 = ((seg + 1) * t_nom).min(total);
        let t_seg = f1 - f0;

        // Which true speakers speak in this segment, and their frames.
        let active_speakers: Vec<usize> = (0..cfg.n_speakers)
            .filter(|&s| frames[s][f0..f1].iter().any(|&b| b))
            .collect();

        // Owner array per stream slot: Some(speaker) where that slot is
        // active. True speakers land on random slots.
        let mut slots: Vec<usize> = (0..N_STREAMS).collect();
        slots.shuffle(&mut rng);
        let mut owners: Vec<Vec<Option<usize>>> = vec![vec![None; t_seg]; N_STREAMS];
        for (i, &spk) in active_speakers.iter().enumerate() {
            let slot = slots[i];
            for k in 0..t_seg {
                if frames[spk][f0 + k] {
                    owners[slot][k] = Some(spk);
                }
            }
        }

        // Mid-segment identity swap between two active streams.
        let do_swap = active_speakers.len() >= 2
            && rng.random_range(0.0..1.0) < cfg.permutation_error_rate;
        if do_swap {
            let mut active_slots: Vec<usize> = slots[..active_speakers.len()].to_vec();
            active_slots.sort_unstable();
            let a = active_slots[rng.random_range(0..active_slots.len())];
            let mut b = a;
            while b == a {
                b = active_slots[rng.random_range(0..active_slots.len())];
            }
            let half = t_seg / 2;
            let (lo, hi) = (a.min(b), a.max(b));
            let (left, right) = owners.split_at_mut(hi);
            left[lo][half..].swap_with_slice(&mut right[0][half..]);
        }

        // Embeddings from the owner histogram (post-swap, pre-jitter):
        // streams carrying a speaker mixture get mixture embeddings.
        let dim = cfg.embedding_dim;
        let mut activities = Vec::with_capacity(N_STREAMS * t_seg);
        let mut embeddings = Vec::with_capacity(N_STREAMS * dim);
        for slot_owners in &owners {
            let mut counts = vec![0usize; cfg.n_speakers];
            let mut owned = 0usize;
            for owner in slot_owners.iter().flatten() {
                counts[*owner] += 1;
                owned += 1;
            }

            let mut embedding = vec![0.0; dim];
            if owned > 0 {
                for (spk, &c) in counts.iter().enumerate() {
                    if c > 0 {
                        let w = c as f64 / owned as f64;
                        for (e, x) in embedding.iter_mut().zip(&truth.speaker_centroids[spk]) {
                            *e += w * x;
                        }
                    }
                }
                let active_seconds = owned as f64 / cfg.frame_rate;
                let mut sigma = cfg.embedding_noise_base / active_seconds.sqrt();
                if outlier {
                    sigma *= 2.0;
                }
                for e in embedding.iter_mut() {
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    *e += sigma * noise;
                }
                unit_normalize(&mut embedding);
            }

            let bits: Vec<bool> = slot_owners.iter().map(Option::is_some).collect();
            let mut bits = jitter_runs(&bits, cfg.boundary_jitter_frames, &mut rng);
            if outlier {
                for b in bits.iter_mut() {
                    if rng.random_range(0.0..1.0) < 0.3 {
                        *b = !*b;
                    }
                }
            }
            activities.extend(bits.iter().map(|&b| if b { 1.0 } else { 0.0 }));
            embeddings.extend(embedding);
        }

        let bundle = SegmentBundle::new(
            seg,
            f0 as f64 / cfg.frame_rate,
            cfg.frame_rate,
            N_STREAMS,
            t_seg,
            dim,
            activities,
            embeddings,
            EmbeddingSource::ExternalExtractor,
        )
        .map_err(|e| SimError::Config(format!("internal: {e}")))?;
        bundles.push(bundle);
    }
    Ok(bundles)
}
