//! `diarkit` — diarization back-end toolkit.
//!
//! Subcommands: `run` (full pipeline), `cluster` (single channel), `fuse`,
//! `score`, `simulate`, `trend`, `ssa-labels`, `config`.

mod plot;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use diarkit_core::clustering::Algorithm;
use diarkit_core::fusion::{fuse, HypothesisSet, RankWeighting};
use diarkit_core::pipeline::{
    export_ssa_labels, run_channel, run_pipeline, write_ssa_labels, PipelineConfig,
};
use diarkit_core::scoring::{score, DerReport, ScoringOptions};
use diarkit_core::simulate::{
    generate_ground_truth, run_trend_experiment, synthesize_channel, SimConfig, TrendExperiment,
};
use diarkit_core::timeline::{Timeline, Uem};
use diarkit_core::{local_io, read_rttm, read_uem, write_rttm};

#[derive(Parser)]
#[command(name = "diarkit", version, about = "Speaker diarization back end: constrained clustering, DOVER-LAP fusion, DER scoring, simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Full pipeline over the sessions listed in the config file.
    Run(RunArgs),
    /// Cluster and stitch a single channel's segment bundles into an RTTM.
    Cluster(ClusterArgs),
    /// Fuse per-channel RTTM hypotheses with DOVER-LAP.
    Fuse(FuseArgs),
    /// Score hypothesis RTTM against reference RTTM (DER with collar).
    Score(ScoreArgs),
    /// Generate a synthetic session: ground-truth RTTM plus per-channel
    /// segment bundles.
    Simulate(SimulateArgs),
    /// Run a named trend experiment and emit records, summary and plot.
    Trend(TrendArgs),
    /// Export fused-timeline pseudo-labels on each channel's segment grid.
    SsaLabels(SsaArgs),
    /// Inspect configuration defaults.
    Config(ConfigArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Pipeline config (TOML); omitted fields take their defaults.
    #[arg(long)]
    config: PathBuf,
    /// Override the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override worker count (otherwise DIARKIT_WORKERS, then the config).
    #[arg(long)]
    workers: Option<usize>,
    /// Pipeline pass number recorded in run metadata (second pass = 2).
    #[arg(long)]
    iteration: Option<u32>,
}

#[derive(Args)]
struct ClusterArgs {
    /// Segment-bundle file for one channel.
    #[arg(long)]
    bundles: PathBuf,
    /// Output RTTM path.
    #[arg(long)]
    out: PathBuf,
    /// Optional JSON diagnostics path (k, ahc_k, violations).
    #[arg(long)]
    diagnostics: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    max_speakers: usize,
    #[arg(long, value_enum, default_value_t = AlgorithmArg::CopKmeans)]
    algorithm: AlgorithmArg,
    #[arg(long, default_value_t = 0.6)]
    stop_threshold: f64,
    #[arg(long, default_value_t = 2.0)]
    penalty: f64,
    #[arg(long, default_value_t = 0.5)]
    binarize_threshold: f64,
    #[arg(long, default_value_t = 11)]
    median_window: usize,
    #[arg(long, default_value_t = 0.5)]
    min_active_seconds: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgorithmArg {
    Ahc,
    Cahc,
    Kmeans,
    CopKmeans,
}

impl From<AlgorithmArg> for Algorithm {
    fn from(a: AlgorithmArg) -> Self {
        match a {
            AlgorithmArg::Ahc => Algorithm::Ahc,
            AlgorithmArg::Cahc => Algorithm::ConstrainedAhc,
            AlgorithmArg::Kmeans => Algorithm::Kmeans,
            AlgorithmArg::CopKmeans => Algorithm::CopKmeans,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum RankWeightingArg {
    Uniform,
    Linear,
}

impl From<RankWeightingArg> for RankWeighting {
    fn from(w: RankWeightingArg) -> Self {
        match w {
            RankWeightingArg::Uniform => RankWeighting::Uniform,
            RankWeightingArg::Linear => RankWeighting::LinearRank,
        }
    }
}

#[derive(Args)]
struct FuseArgs {
    /// Per-channel hypothesis RTTM files (one channel per file).
    #[arg(long, num_args = 1.., required = true)]
    inputs: Vec<PathBuf>,
    /// Per-channel weights, comma-separated (defaults to 1.0 each).
    #[arg(long, value_delimiter = ',')]
    weights: Option<Vec<f64>>,
    #[arg(long, value_enum, default_value_t = RankWeightingArg::Linear)]
    rank_weighting: RankWeightingArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ScoreArgs {
    /// Reference RTTM.
    #[arg(long = "ref")]
    reference: PathBuf,
    /// Hypothesis RTTM.
    #[arg(long)]
    hyp: PathBuf,
    /// Optional UEM restricting the scored regions.
    #[arg(long)]
    uem: Option<PathBuf>,
    #[arg(long, default_value_t = 0.25)]
    collar: f64,
    /// Exclude reference overlap regions from scoring.
    #[arg(long)]
    noscore_overlap: bool,
    /// Print one table row per session (the overall row always prints).
    #[arg(long)]
    per_session: bool,
    /// session -> scenario map (whitespace-separated pairs); enables the
    /// macro DER row.
    #[arg(long)]
    scenario_map: Option<PathBuf>,
    /// Average the macro DER per scenario (pooled within each scenario) or
    /// per session.
    #[arg(long, value_enum, default_value_t = MacroAverage::Scenario)]
    macro_average: MacroAverage,
    /// Machine-readable per-session record stream (JSON lines).
    #[arg(long)]
    records: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum MacroAverage {
    Scenario,
    Session,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    seed: u64,
    /// Simulation config (TOML); flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    n_speakers: Option<usize>,
    #[arg(long)]
    session_length: Option<f64>,
    #[arg(long)]
    n_channels: Option<usize>,
    /// Outlier channel indices, comma-separated.
    #[arg(long, value_delimiter = ',')]
    outliers: Option<Vec<usize>>,
    #[arg(long)]
    segment_size: Option<f64>,
    #[arg(long)]
    permutation_error_rate: Option<f64>,
    #[arg(long)]
    embedding_noise: Option<f64>,
}

#[derive(Args)]
struct TrendArgs {
    /// segment_length | constraint_ablation | channel_fusion
    #[arg(long)]
    experiment: String,
    /// Seeds, comma-separated.
    #[arg(long, value_delimiter = ',', default_values_t = [1u64,2,3,4,5,6,7,8,9,10])]
    seeds: Vec<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Optional SVG plot of mean DER per grid point.
    #[arg(long)]
    plot: Option<PathBuf>,
    #[arg(long)]
    session_length: Option<f64>,
    #[arg(long)]
    permutation_error_rate: Option<f64>,
}

#[derive(Args)]
struct SsaArgs {
    /// Fused RTTM (the pseudo-label source).
    #[arg(long)]
    fused: PathBuf,
    /// Per-channel bundle files defining each channel's segment grid.
    #[arg(long, num_args = 1.., required = true)]
    bundles: Vec<PathBuf>,
    /// Output directory (one channel_<i>.jsonl per channel).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ConfigArgs {
    /// Print the full default configuration as TOML.
    #[arg(long)]
    dump: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Cluster(args) => cmd_cluster(args).map(|()| ExitCode::SUCCESS),
        Command::Fuse(args) => cmd_fuse(args).map(|()| ExitCode::SUCCESS),
        Command::Score(args) => cmd_score(args).map(|()| ExitCode::SUCCESS),
        Command::Simulate(args) => cmd_simulate(args).map(|()| ExitCode::SUCCESS),
        Command::Trend(args) => cmd_trend(args).map(|()| ExitCode::SUCCESS),
        Command::SsaLabels(args) => cmd_ssa(args).map(|()| ExitCode::SUCCESS),
        Command::Config(args) => cmd_config(args).map(|()| ExitCode::SUCCESS),
    }
}

fn cmd_run(args: RunArgs) -> Result<ExitCode> {
    let text = std::fs::read_to_string(&args.config)
        .with_context(|| format!("reading {}", args.config.display()))?;
    let mut cfg = PipelineConfig::from_toml(&text)?;
    if let Some(out) = args.out {
        cfg.output_dir = out;
    }
    if let Ok(env_workers) = std::env::var("DIARKIT_WORKERS") {
        cfg.workers = env_workers
            .parse()
            .context("DIARKIT_WORKERS must be an integer")?;
    }
    if let Some(workers) = args.workers {
        cfg.workers = workers;
    }
    if let Some(iteration) = args.iteration {
        cfg.iteration = iteration;
    }
    let report = run_pipeline(&cfg)?;
    for record in &report.log {
        eprintln!("{}", serde_json::to_string(record)?);
    }
    for session in &report.sessions {
        println!(
            "{}\t{}\t{} channels ok, {} failed",
            session.session, session.status, session.channels_ok, session.channels_failed
        );
    }
    Ok(ExitCode::from(u8::try_from(report.exit_code()).unwrap_or(1)))
}

fn cmd_cluster(args: ClusterArgs) -> Result<()> {
    let (session_id, bundles) = local_io::read_bundles(&args.bundles)?;
    let cfg = PipelineConfig {
        max_speakers: args.max_speakers,
        binarize_threshold: args.binarize_threshold,
        median_window: args.median_window,
        min_active_seconds: args.min_active_seconds,
        clustering: diarkit_core::ClusteringParams {
            algorithm: args.algorithm.into(),
            stop_threshold: args.stop_threshold,
            penalty: args.penalty,
            seed: args.seed,
            ..Default::default()
        },
        ..Default::default()
    };
    cfg.validate()?;

    let run = run_channel(&session_id, 0, &bundles, &cfg)?;
    write_rttm(std::slice::from_ref(&run.timeline), &args.out)?;
    let diag = match &run.clustering {
        Some(c) => serde_json::json!({
            "session": session_id,
            "selected_streams": run.selected_streams,
            "ahc_k": c.ahc_k,
            "ahc_violations": c.ahc_violations,
            "k": c.assignment.k,
            "violations": c.assignment.violations,
            "violating_segments": c.assignment.violating_segments,
        }),
        None => serde_json::json!({
            "session": session_id,
            "selected_streams": 0,
        }),
    };
    if let Some(path) = &args.diagnostics {
        std::fs::write(path, format!("{}\n", serde_json::to_string_pretty(&diag)?))
            .with_context(|| format!("writing {}", path.display()))?;
    }
    eprintln!("{diag}");
    Ok(())
}

fn cmd_fuse(args: FuseArgs) -> Result<()> {
    let weights = match &args.weights {
        Some(w) => {
            if w.len() != args.inputs.len() {
                bail!("{} inputs but {} weights", args.inputs.len(), w.len());
            }
            w.clone()
        }
        None => vec![1.0; args.inputs.len()],
    };
    // One file per channel; a file may carry several sessions.
    let mut per_channel: Vec<BTreeMap<String, Timeline>> = Vec::new();
    for path in &args.inputs {
        let timelines = read_rttm(path)?;
        per_channel.push(
            timelines
                .into_iter()
                .map(|t| (t.session_id.clone(), t))
                .collect(),
        );
    }
    let mut session_ids: Vec<String> = per_channel
        .iter()
        .flat_map(|m| m.keys().cloned())
        .collect();
    session_ids.sort();
    session_ids.dedup();

    let mut fused_all = Vec::new();
    for session in &session_ids {
        let mut hyps = Vec::new();
        let mut w = Vec::new();
        for (channel, map) in per_channel.iter().enumerate() {
            if let Some(t) = map.get(session) {
                hyps.push(t.clone());
                w.push(weights[channel]);
            }
        }
        let set = HypothesisSet::with_weights(hyps, w)?;
        fused_all.push(fuse(&set, args.rank_weighting.into()));
    }
    write_rttm(&fused_all, &args.out)?;
    println!("fused {} session(s) from {} channel file(s)", session_ids.len(), args.inputs.len());
    Ok(())
}

fn load_uems(path: &Option<PathBuf>) -> Result<BTreeMap<String, Uem>> {
    let Some(path) = path else {
        return Ok(BTreeMap::new());
    };
    Ok(read_uem(path)?
        .into_iter()
        .map(|u| (u.session_id.clone(), u))
        .collect())
}

fn cmd_score(args: ScoreArgs) -> Result<()> {
    let references = read_rttm(&args.reference)?;
    if references.is_empty() {
        bail!("reference RTTM contains no sessions");
    }
    let hypotheses: BTreeMap<String, Timeline> = read_rttm(&args.hyp)?
        .into_iter()
        .map(|t| (t.session_id.clone(), t))
        .collect();
    let uems = load_uems(&args.uem)?;
    let scenario_map: BTreeMap<String, String> = match &args.scenario_map {
        Some(path) => std::fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))?
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                let mut it = l.split_whitespace();
                match (it.next(), it.next()) {
                    (Some(s), Some(sc)) => Ok((s.to_string(), sc.to_string())),
                    _ => bail!("bad scenario-map line: {l:?}"),
                }
            })
            .collect::<Result<_>>()?,
        None => BTreeMap::new(),
    };

    let mut reports: Vec<(String, DerReport)> = Vec::new();
    for reference in &references {
        let opts = ScoringOptions {
            collar: args.collar,
            score_overlaps: !args.noscore_overlap,
            uem: uems.get(&reference.session_id).cloned(),
        };
        let empty = Timeline::empty(reference.session_id.clone());
        let hyp = hypotheses.get(&reference.session_id).unwrap_or(&empty);
        let report = score(reference, hyp, &opts)
            .with_context(|| format!("scoring session {}", reference.session_id))?;
        reports.push((reference.session_id.clone(), report));
    }

    println!("session                cf%     fa%     mi%    der%  scored_s");
    if args.per_session {
        for (session, r) in &reports {
            println!(
                "{session:<20} {:>6.2} {:>7.2} {:>7.2} {:>7.2} {:>9.2}",
                r.cf, r.fa, r.mi, r.der, r.scored_speech_s
            );
        }
    }
    let pooled = |rs: &[&DerReport]| -> (f64, f64, f64, f64, f64) {
        let speech: f64 = rs.iter().map(|r| r.scored_speech_s).sum();
        let cf: f64 = rs.iter().map(|r| r.confusion_s).sum::<f64>() / speech * 100.0;
        let fa: f64 = rs.iter().map(|r| r.false_alarm_s).sum::<f64>() / speech * 100.0;
        let mi: f64 = rs.iter().map(|r| r.missed_s).sum::<f64>() / speech * 100.0;
        (cf, fa, mi, cf + fa + mi, speech)
    };
    let all: Vec<&DerReport> = reports.iter().map(|(_, r)| r).collect();
    let (cf, fa, mi, der, speech) = pooled(&all);
    println!(
        "{:<20} {cf:>6.2} {fa:>7.2} {mi:>7.2} {der:>7.2} {speech:>9.2}",
        "OVERALL"
    );

    if !scenario_map.is_empty() {
        let macro_der = match args.macro_average {
            MacroAverage::Scenario => {
                let mut per_scenario: BTreeMap<&str, Vec<&DerReport>> = BTreeMap::new();
                for (session, r) in &reports {
                    let scenario = scenario_map
                        .get(session)
                        .map(String::as_str)
                        .unwrap_or("unknown");
                    per_scenario.entry(scenario).or_default().push(r);
                }
                for (scenario, rs) in &per_scenario {
                    let (cf, fa, mi, der, speech) = pooled(rs);
                    println!(
                        "{:<20} {cf:>6.2} {fa:>7.2} {mi:>7.2} {der:>7.2} {speech:>9.2}",
                        format!("scenario:{scenario}")
                    );
                }
                per_scenario.values().map(|rs| pooled(rs).3).sum::<f64>()
                    / per_scenario.len() as f64
            }
            MacroAverage::Session => {
                reports.iter().map(|(_, r)| r.der).sum::<f64>() / reports.len() as f64
            }
        };
        println!("{:<20} {macro_der:>38.2}", "MACRO");
    }

    if let Some(path) = &args.records {
        let mut out = String::new();
        for (session, r) in &reports {
            let record = serde_json::json!({
                "session": session,
                "cf": r.cf,
                "fa": r.fa,
                "mi": r.mi,
                "der": r.der,
                "scored_speech_s": r.scored_speech_s,
            });
            out.push_str(&serde_json::to_string(&record)?);
            out.push('\n');
        }
        std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            let mut cfg: SimConfig = toml::from_str(&text)?;
            cfg.seed = args.seed;
            cfg
        }
        None => SimConfig::with_seed(args.seed),
    };
    if let Some(v) = args.n_speakers {
        cfg.n_speakers = v;
    }
    if let Some(v) = args.session_length {
        cfg.session_length = v;
    }
    if let Some(v) = args.n_channels {
        cfg.n_channels = v;
    }
    if let Some(v) = &args.outliers {
        cfg.channel_outlier_indices = v.iter().copied().collect();
    }
    if let Some(v) = args.segment_size {
        cfg.segment_size = v;
    }
    if let Some(v) = args.permutation_error_rate {
        cfg.permutation_error_rate = v;
    }
    if let Some(v) = args.embedding_noise {
        cfg.embedding_noise_base = v;
    }
    cfg.validate()?;

    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let truth = generate_ground_truth(&cfg)?;
    write_rttm(
        std::slice::from_ref(&truth.timeline),
        args.out.join("truth.rttm"),
    )?;
    for channel in 0..cfg.n_channels {
        let bundles = synthesize_channel(&truth, &cfg, channel)?;
        local_io::write_bundles(
            &truth.timeline.session_id,
            &bundles,
            args.out.join(format!("channel_{channel}.jsonl")),
        )?;
    }
    std::fs::write(args.out.join("sim_config.toml"), toml::to_string_pretty(&cfg)?)?;
    println!(
        "session {}: truth.rttm + {} channel file(s) in {}",
        truth.timeline.session_id,
        cfg.n_channels,
        args.out.display()
    );
    Ok(())
}

fn cmd_trend(args: TrendArgs) -> Result<()> {
    let experiment: TrendExperiment = args
        .experiment
        .parse()
        .map_err(|e: String| anyhow::anyhow!(e))?;
    let mut base = SimConfig::with_seed(0);
    if let Some(v) = args.session_length {
        base.session_length = v;
    }
    if let Some(v) = args.permutation_error_rate {
        base.permutation_error_rate = v;
    }
    let (records, summary) = run_trend_experiment(experiment, &base, &args.seeds)?;

    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let mut lines = String::new();
    for r in &records {
        lines.push_str(&serde_json::to_string(r)?);
        lines.push('\n');
    }
    std::fs::write(args.out.join("records.jsonl"), lines)?;
    std::fs::write(
        args.out.join("summary.json"),
        format!("{}\n", serde_json::to_string_pretty(&summary)?),
    )?;
    for (grid, mean) in &summary.mean_der {
        println!("{:<22} mean DER {mean:>7.2}", grid);
    }
    if let Some(path) = &args.plot {
        let svg = plot::render_der_plot(
            &format!("{} (mean DER per grid point)", summary.experiment),
            &summary.mean_der,
        );
        std::fs::write(path, svg).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn cmd_ssa(args: SsaArgs) -> Result<()> {
    let fused_sessions = read_rttm(&args.fused)?;
    let mut channels = Vec::new();
    let mut session_id: Option<String> = None;
    for path in &args.bundles {
        let (sid, bundles) = local_io::read_bundles(path)?;
        match &session_id {
            Some(existing) if *existing != sid => {
                bail!("bundle files disagree on session id: {existing} vs {sid}");
            }
            None => session_id = Some(sid),
            _ => {}
        }
        channels.push(bundles);
    }
    let session_id = session_id.context("no bundle files")?;
    let fused = fused_sessions
        .iter()
        .find(|t| t.session_id == session_id)
        .with_context(|| format!("fused RTTM has no session {session_id}"))?;

    let views: Vec<&[local_io::SegmentBundle]> = channels.iter().map(Vec::as_slice).collect();
    let labels = export_ssa_labels(fused, &views, &PipelineConfig::default());
    write_ssa_labels(&labels, &args.out)?;
    println!(
        "wrote pseudo-labels for {} channel(s), {} speaker(s), to {}",
        labels.channels.len(),
        labels.speakers.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_config(args: ConfigArgs) -> Result<()> {
    if args.dump {
        print!("{}", PipelineConfig::default().dump_toml());
    } else {
        println!("use --dump to print the default configuration");
    }
    Ok(())
}
