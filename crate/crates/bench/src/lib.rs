//! Shared input builders for the benchmark suite.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use diarkit_core::local_io::LocalStream;
use diarkit_core::simulate::{generate_ground_truth, synthesize_channel, GroundTruth, SimConfig};
use diarkit_core::timeline::{SpeakerTurn, Timeline};

/// Random unit vectors around `k` planted directions.
pub fn planted_streams(n: usize, k: usize, dim: usize, seed: u64) -> Vec<LocalStream> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<Vec<f64>> = (0..k)
        .map(|_| unit((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()))
        .collect();
    (0..n)
        .map(|i| {
            let c = &centers[rng.random_range(0..k)];
            let e: Vec<f64> = c
                .iter()
                .map(|x| x + 0.1 * rng.random_range(-1.0..1.0))
                .collect();
            LocalStream {
                segment_index: i / k.max(1),
                local_speaker: i % k.max(1),
                binary_activity: vec![true; 80],
                active_frames: 80,
                embedding: unit(e),
            }
        })
        .collect()
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.into_iter().map(|x| x / n).collect()
}

/// Random cost matrix for assignment benchmarks.
pub fn random_cost(n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| (0..n).map(|_| rng.random_range(0.0..100.0)).collect())
        .collect()
}

/// Random normalized timeline for scoring/fusion benchmarks.
pub fn random_timeline(session: &str, n_turns: usize, seed: u64) -> Timeline {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let turns = (0..n_turns)
        .map(|_| {
            let spk = rng.random_range(0..4u32);
            let start = rng.random_range(0..60_000u32) as f64 * 0.01;
            let dur = rng.random_range(50..800u32) as f64 * 0.01;
            SpeakerTurn::new(format!("spk{spk}"), start, start + dur).unwrap()
        })
        .collect();
    Timeline::new(session, turns).normalize()
}

/// A simulated session for end-to-end benchmarks.
pub fn simulated_session(minutes: f64, channels: usize, seed: u64) -> (SimConfig, GroundTruth) {
    let mut cfg = SimConfig::with_seed(seed);
    cfg.session_length = minutes * 60.0;
    cfg.n_channels = channels;
    let truth = generate_ground_truth(&cfg).expect("valid config");
    (cfg, truth)
}

/// Bundles for one channel of a simulated session.
pub fn simulated_bundles(
    cfg: &SimConfig,
    truth: &GroundTruth,
    channel: usize,
) -> Vec<diarkit_core::local_io::SegmentBundle> {
    synthesize_channel(truth, cfg, channel).expect("valid channel")
}
