//! Desk-scale trend experiments over the simulator: segment length versus
//! accuracy, constrained-versus-plain clustering, and multi-channel fusion
//! with an outlier channel.

use serde::Serialize;
use thiserror::Error;

use crate::clustering::Algorithm;
use crate::pipeline::{run_channel, run_session, PipelineConfig, PipelineError};
use crate::scoring::{score, ScoringOptions};
use crate::simulate::{derive_seed, generate_ground_truth, synthesize_channel, SimConfig, SimError};

#[derive(Debug, Error)]
pub enum TrendError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("scoring failed: {0}")]
    Scoring(String),
}

/// The named experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrendExperiment {
    /// DER across segment sizes {15, 40, 80} s: longer segments give the
    /// embeddings more evidence.
    SegmentLength,
    /// DER and constraint violations across the four clustering algorithms.
    ConstraintAblation,
    /// Per-channel DER versus the fused result, six channels with one
    /// outlier.
    ChannelFusion,
}

impl TrendExperiment {
    pub fn name(self) -> &'static str {
        match self {
            TrendExperiment::SegmentLength => "segment_length",
            TrendExperiment::ConstraintAblation => "constraint_ablation",
            TrendExperiment::ChannelFusion => "channel_fusion",
        }
    }
}

impl std::str::FromStr for TrendExperiment {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "segment_length" => Ok(TrendExperiment::SegmentLength),
            "constraint_ablation" => Ok(TrendExperiment::ConstraintAblation),
            "channel_fusion" => Ok(TrendExperiment::ChannelFusion),
            other => Err(format!(
                "unknown experiment {other:?} (expected segment_length, \
                 constraint_ablation or channel_fusion)"
            )),
        }
    }
}

/// One pipeline run inside an experiment.
#[derive(Debug, Clone, Serialize)]
pub struct TrendRecord {
    pub experiment: String,
    pub grid: String,
    pub seed: u64,
    pub der: f64,
    pub violations: usize,
    pub violating_segments: usize,
}

/// Per-grid-point mean DER, in grid order.
#[derive(Debug, Clone, Serialize)]
pub struct TrendSummary {
    pub experiment: String,
    pub mean_der: Vec<(String, f64)>,
}

/// Pipeline knobs used by every experiment run.
fn trend_pipeline_config(algorithm: Algorithm, seed: u64) -> PipelineConfig {
    PipelineConfig {
        // Sized for the simulator's 10 fps frame grid.
        median_window: 3,
        clustering: crate::clustering::ClusteringParams {
            algorithm,
            seed,
            ..Default::default()
        },
        ..Default::default()
    }
}

fn der_against_truth(
    truth: &crate::simulate::GroundTruth,
    hypothesis: &crate::timeline::Timeline,
) -> Result<f64, TrendError> {
    // Session ids may differ (hypothesis carries the channel session id);
    // scoring only needs the turns.
    score(&truth.timeline, hypothesis, &ScoringOptions::default())
        .map(|r| r.der)
        .map_err(|e| TrendError::Scoring(e.to_string()))
}

/// Runs the full pipeline once per grid point per seed and reports per-run
/// records plus per-grid-point mean DER. Deterministic given the seeds: the
/// simulator seed for each run is `hash(seed, grid_index)` (shared across
/// algorithm grids so paired comparisons see identical data).
pub fn run_trend_experiment(
    experiment: TrendExperiment,
    base: &SimConfig,
    seeds: &[u64],
) -> Result<(Vec<TrendRecord>, TrendSummary), TrendError> {
    let mut records = Vec::new();
    match experiment {
        TrendExperiment::SegmentLength => {
            for (grid_index, &segment_size) in [15.0f64, 40.0, 80.0].iter().enumerate() {
                for &seed in seeds {
                    let mut cfg = base.clone();
                    cfg.segment_size = segment_size;
                    cfg.n_channels = 1;
                    cfg.channel_outlier_indices.clear();
                    cfg.seed = derive_seed(seed, grid_index as u64);
                    let truth = generate_ground_truth(&cfg)?;
                    let bundles = synthesize_channel(&truth, &cfg, 0)?;
                    let pcfg = trend_pipeline_config(Algorithm::CopKmeans, cfg.seed);
                    let run = run_channel(&truth.timeline.session_id, 0, &bundles, &pcfg)?;
                    let der = der_against_truth(&truth, &run.timeline)?;
                    let (v, vs) = run
                        .clustering
                        .as_ref()
                        .map(|c| (c.assignment.violations, c.assignment.violating_segments))
                        .unwrap_or((0, 0));
                    records.push(TrendRecord {
                        experiment: experiment.name().into(),
                        grid: format!("{segment_size:.0}s"),
                        seed,
                        der,
                        violations: v,
                        violating_segments: vs,
                    });
                }
            }
        }
        TrendExperiment::ConstraintAblation => {
            let algorithms = [
                (Algorithm::Ahc, "ahc"),
                (Algorithm::ConstrainedAhc, "cahc"),
                (Algorithm::Kmeans, "kmeans"),
                (Algorithm::CopKmeans, "cop-kmeans"),
            ];
            for &seed in seeds {
                let mut cfg = base.clone();
                cfg.n_channels = 1;
                cfg.channel_outlier_indices.clear();
                cfg.seed = derive_seed(seed, 0);
                let truth = generate_ground_truth(&cfg)?;
                let bundles = synthesize_channel(&truth, &cfg, 0)?;
                for (algorithm, label) in algorithms {
                    let pcfg = trend_pipeline_config(algorithm, cfg.seed);
                    let run = run_channel(&truth.timeline.session_id, 0, &bundles, &pcfg)?;
                    let der = der_against_truth(&truth, &run.timeline)?;
                    let (v, vs) = run
                        .clustering
                        .as_ref()
                        .map(|c| (c.assignment.violations, c.assignment.violating_segments))
                        .unwrap_or((0, 0));
                    records.push(TrendRecord {
                        experiment: experiment.name().into(),
                        grid: label.into(),
                        seed,
                        der,
                        violations: v,
                        violating_segments: vs,
                    });
                }
            }
        }
        TrendExperiment::ChannelFusion => {
            for &seed in seeds {
                let mut cfg = base.clone();
                cfg.n_channels = 6;
                cfg.channel_outlier_indices = [0usize].into_iter().collect();
                cfg.seed = derive_seed(seed, 0);
                let truth = generate_ground_truth(&cfg)?;
                let channels: Vec<_> = (0..cfg.n_channels)
                    .map(|c| synthesize_channel(&truth, &cfg, c))
                    .collect::<Result<_, _>>()?;
                let pcfg = trend_pipeline_config(Algorithm::CopKmeans, cfg.seed);
                let output = run_session(&truth.timeline.session_id, &channels, &pcfg)?;
                for outcome in &output.per_channel {
                    if let Some(run) = outcome.run() {
                        let der = der_against_truth(&truth, &run.timeline)?;
                        let tag = if cfg.channel_outlier_indices.contains(&run.channel) {
                            format!("channel{}_outlier", run.channel)
                        } else {
                            format!("channel{}", run.channel)
                        };
                        let (v, vs) = run
                            .clustering
                            .as_ref()
                            .map(|c| (c.assignment.violations, c.assignment.violating_segments))
                            .unwrap_or((0, 0));
                        records.push(TrendRecord {
                            experiment: experiment.name().into(),
                            grid: tag,
                            seed,
                            der,
                            violations: v,
                            violating_segments: vs,
                        });
                    }
                }
                let der = der_against_truth(&truth, &output.fused)?;
                records.push(TrendRecord {
                    experiment: experiment.name().into(),
                    grid: "fused".into(),
                    seed,
                    der,
                    violations: 0,
                    violating_segments: 0,
                });
            }
        }
    }

    // Grid order = first appearance.
    let mut grid_order: Vec<String> = Vec::new();
    for r in &records {
        if !grid_order.contains(&r.grid) {
            grid_order.push(r.grid.clone());
        }
    }
    let mean_der = grid_order
        .into_iter()
        .map(|g| {
            let ders: Vec<f64> = records
                .iter()
                .filter(|r| r.grid == g)
                .map(|r| r.der)
                .collect();
            let mean = ders.iter().sum::<f64>() / ders.len() as f64;
            (g, mean)
        })
        .collect();
    Ok((
        records,
        TrendSummary {
            experiment: experiment.name().into(),
            mean_der,
        },
    ))
}
