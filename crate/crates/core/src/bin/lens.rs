//! `lens`: minute-level livestream audience analytics.
//!
//! Every run writes a manifest beside its outputs recording the tool
//! version, resolved parameters, input digests, and wall times; replaying a
//! subcommand with a manifest's parameters reproduces the outputs byte for
//! byte. Exit codes: 0 success, 1 error, 2 data anomalies tolerated by a
//! lenient ingest.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use lens_core::dilution::residual_spearman_with_ci;
use lens_core::ingest::{load_cache, load_panel, save_cache, write_observations_csv, write_streams_csv};
use lens_core::loyalty::{loyalty_table, LoyaltyWeights};
use lens_core::overlap::{concurrency_frequency, concurrency_trend, pairwise_overlap, symmetrize};
use lens_core::panel::Panel;
use lens_core::permtest::permutation_test;
use lens_core::report::{self, RunManifest, StageTiming};
use lens_core::sim::{generate, score_overlap_recovery, score_transfer_recovery, GroundTruth, SimConfig};
use lens_core::transfer::{detect_transfers, summarize_transfers, TransferEvent, TransferParams};
use lens_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "lens",
    version,
    about = "Minute-level livestream audience analytics",
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate a panel, optionally writing a binary cache
    Ingest(IngestArgs),
    /// Pairwise audience overlap from stream-start viewer drops
    Overlap(OverlapArgs),
    /// Concurrency trend of a fixed channel cohort
    Trend(TrendArgs),
    /// End-of-stream viewer transfer detection
    Transfers(TransfersArgs),
    /// Concurrency dilution buckets and residual rank correlation
    Dilution(DilutionArgs),
    /// Per-channel loyalty components and composite
    Loyalty(LoyaltyArgs),
    /// Schedule-coordination permutation test
    Permtest(PermtestArgs),
    /// Generate a synthetic panel with ground truth from a scenario file
    Simulate(SimulateArgs),
    /// Score an estimate against simulator ground truth
    Score(ScoreArgs),
    /// Run overlap, transfers, dilution, loyalty, and permtest with defaults
    All(AllArgs),
}

/// Panel source shared by the analysis subcommands.
#[derive(Args)]
struct PanelInput {
    /// Binary panel cache written by `lens ingest --cache`
    #[arg(long, value_name = "FILE")]
    panel: Option<PathBuf>,
    /// Stream metadata CSV (requires --obs)
    #[arg(long, value_name = "FILE", requires = "obs", conflicts_with = "panel")]
    streams: Option<PathBuf>,
    /// Minute observations CSV (requires --streams)
    #[arg(long, value_name = "FILE", requires = "streams", conflicts_with = "panel")]
    obs: Option<PathBuf>,
}

impl PanelInput {
    fn load(&self) -> Result<(Panel, Vec<PathBuf>)> {
        let named = |path: &Path, e: Error| match e {
            Error::Io(io) => Error::Usage(format!("cannot read input `{}`: {io}", path.display())),
            Error::Csv(csv) if csv.is_io_error() => {
                Error::Usage(format!("cannot read input `{}`: {csv}", path.display()))
            }
            other => other,
        };
        match (&self.panel, &self.streams, &self.obs) {
            (Some(p), None, None) => {
                let panel = load_cache(p).map_err(|e| named(p, e))?.0;
                Ok((panel, vec![p.clone()]))
            }
            (None, Some(s), Some(o)) => {
                let (panel, rep) = load_panel(s, o, false)
                    .map_err(|e| named(if s.metadata().is_err() { s } else { o }, e))?;
                if !rep.is_clean() {
                    eprintln!(
                        "lens: warning: {} data anomalies tolerated; run `lens ingest` for details",
                        rep.total_anomalies()
                    );
                }
                Ok((panel, vec![s.clone(), o.clone()]))
            }
            _ => Err(Error::Usage(
                "provide --panel <cache> or both --streams and --obs".into(),
            )),
        }
    }

    fn record(&self, m: &mut RunManifest) {
        if let Some(p) = &self.panel {
            m.param("panel", p.display().to_string());
        }
        if let Some(s) = &self.streams {
            m.param("streams", s.display().to_string());
        }
        if let Some(o) = &self.obs {
            m.param("obs", o.display().to_string());
        }
    }
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long, value_name = "FILE")]
    streams: PathBuf,
    #[arg(long, value_name = "FILE")]
    obs: PathBuf,
    /// Fail on any data anomaly instead of tolerating and reporting
    #[arg(long)]
    strict: bool,
    /// Write a binary cache of the validated panel
    #[arg(long, value_name = "FILE")]
    cache: Option<PathBuf>,
}

#[derive(Args)]
struct OverlapArgs {
    #[command(flatten)]
    input: PanelInput,
    /// Window half-width in minutes around each stream start
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(i64).range(1..))]
    delta: i64,
    /// Copy the defined side into one-sided pairs instead of dropping them
    #[arg(long)]
    lenient_symmetry: bool,
    #[arg(long, value_name = "FILE", default_value = "overlap.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct TrendArgs {
    #[command(flatten)]
    input: PanelInput,
    /// Comma-separated channel ids held constant across the whole window
    #[arg(long, value_name = "IDS")]
    cohort: String,
    #[arg(long, default_value_t = 90, value_parser = clap::value_parser!(i64).range(1..))]
    period_days: i64,
    #[arg(long, value_name = "FILE", default_value = "trend.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct TransfersArgs {
    #[command(flatten)]
    input: PanelInput,
    /// Pre-window length in minutes
    #[arg(long, default_value_t = 3)]
    pre: i64,
    /// Post-window length in minutes
    #[arg(long, default_value_t = 5)]
    post: i64,
    /// Relative spike threshold (fraction of receiver pre-mean)
    #[arg(long, default_value_t = 0.10)]
    rel: f64,
    /// Absolute spike threshold in viewers
    #[arg(long, default_value_t = 100.0)]
    abs: f64,
    /// Spike must exceed this fraction of the source stream average
    #[arg(long, default_value_t = 0.05)]
    src_frac: f64,
    /// Minimum source final viewers
    #[arg(long, default_value_t = 200)]
    min_final: u32,
    #[arg(long, value_name = "FILE", default_value = "events.csv")]
    out: PathBuf,
    /// Summary JSON path; defaults to summary.json beside --out
    #[arg(long, value_name = "FILE")]
    summary: Option<PathBuf>,
}

#[derive(Args)]
struct DilutionArgs {
    #[command(flatten)]
    input: PanelInput,
    /// Comma-separated ecosystem channel filter; defaults to all channels
    #[arg(long, value_name = "IDS")]
    channels: Option<String>,
    #[arg(long, default_value_t = 2000)]
    iterations: usize,
    /// Confidence level for the bootstrap interval
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Shift applied before hour-of-day binning (sensitivity checks)
    #[arg(long, default_value_t = 0)]
    tz_offset_minutes: i64,
    #[arg(long, value_name = "FILE", default_value = "dilution.json")]
    out: PathBuf,
}

#[derive(Args)]
struct LoyaltyArgs {
    #[command(flatten)]
    input: PanelInput,
    /// Component weights w_S,w_R,w_P,w_F
    #[arg(long, value_name = "W,W,W,W", default_value = "0.30,0.25,0.25,0.20")]
    weights: String,
    /// Minimum fraction of live minutes contested for a stream to count as competed
    #[arg(long, default_value_t = 0.0)]
    competed_min_fraction: f64,
    #[arg(long, value_name = "FILE", default_value = "loyalty.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct PermtestArgs {
    #[command(flatten)]
    input: PanelInput,
    #[arg(long, default_value_t = 1000)]
    iterations: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Significance threshold echoed in the summary
    #[arg(long, default_value_t = 0.01)]
    alpha: f64,
    #[arg(long, value_name = "FILE", default_value = "permtest.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario config JSON
    #[arg(long, value_name = "FILE")]
    scenario: PathBuf,
    /// Override the scenario's seed
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_name = "DIR")]
    out_dir: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScoreKind {
    Overlap,
    Transfers,
}

#[derive(Args)]
struct ScoreArgs {
    /// truth.json written by `lens simulate`
    #[arg(long, value_name = "FILE")]
    truth: PathBuf,
    /// Estimate to score: overlap matrix CSV or transfer events CSV
    #[arg(long, value_name = "FILE")]
    estimate: PathBuf,
    #[arg(long, value_enum)]
    kind: ScoreKind,
    /// Transfer match window in minutes
    #[arg(long, default_value_t = 2)]
    match_window: i64,
    /// Estimates below this magnitude classify as zero overlap
    #[arg(long, default_value_t = 0.05)]
    zero_tolerance: f64,
    /// Also write the score JSON to a file
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AllArgs {
    /// Binary panel cache written by `lens ingest --cache`
    #[arg(long, value_name = "FILE")]
    panel: PathBuf,
    #[arg(long, value_name = "DIR")]
    out_dir: PathBuf,
    /// Seed shared by the dilution bootstrap and the permutation test
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Dilution bootstrap iterations
    #[arg(long, default_value_t = 2000)]
    iterations: usize,
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("lens: {e}");
            ExitCode::from(1)
        }
    }
}

fn run() -> Result<u8> {
    init_threads()?;
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    Ok(0)
                }
                _ => {
                    eprint!("{e}");
                    Ok(1)
                }
            };
        }
    };
    match cli.command {
        Command::Ingest(a) => cmd_ingest(a),
        Command::Overlap(a) => cmd_overlap(a),
        Command::Trend(a) => cmd_trend(a),
        Command::Transfers(a) => cmd_transfers(a),
        Command::Dilution(a) => cmd_dilution(a),
        Command::Loyalty(a) => cmd_loyalty(a),
        Command::Permtest(a) => cmd_permtest(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Score(a) => cmd_score(a),
        Command::All(a) => cmd_all(a),
    }
}

fn init_threads() -> Result<()> {
    let Ok(raw) = std::env::var("LENS_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().map_err(|_| {
        Error::Usage(format!("LENS_THREADS must be a non-negative integer, got `{raw}`"))
    })?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::ConfigInvalid(format!("thread pool: {e}")))?;
    }
    Ok(())
}

/// overlap.csv -> overlap.manifest.json, beside the output.
fn manifest_path(out: &Path) -> PathBuf {
    out.with_extension("manifest.json")
}

/// overlap.csv -> overlap_counts.csv, beside the output.
fn sibling(out: &Path, suffix: &str, ext: &str) -> PathBuf {
    let stem = out.file_stem().unwrap_or_default().to_string_lossy();
    out.with_file_name(format!("{stem}{suffix}.{ext}"))
}

fn record_output(m: &mut RunManifest, path: &Path) {
    m.outputs.push(path.display().to_string());
}

fn finish_manifest(mut m: RunManifest, path: &Path) -> Result<()> {
    m.finish();
    m.write(path)
}

fn split_ids(raw: &str) -> Vec<String> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect()
}

fn cmd_ingest(a: IngestArgs) -> Result<u8> {
    let mut m = RunManifest::new("ingest");
    m.param("streams", a.streams.display().to_string())
        .param("obs", a.obs.display().to_string())
        .param("strict", a.strict);
    m.digest_input(&a.streams)?;
    m.digest_input(&a.obs)?;
    let (panel, rep) = load_panel(&a.streams, &a.obs, a.strict)?;
    if let Some(cache) = &a.cache {
        m.param("cache", cache.display().to_string());
        save_cache(&panel, &rep, cache)?;
        record_output(&mut m, cache);
        finish_manifest(m, &manifest_path(cache))?;
    }
    println!("{}", serde_json::to_string_pretty(&rep)?);
    Ok(if rep.is_clean() { 0 } else { 2 })
}

fn cmd_overlap(a: OverlapArgs) -> Result<u8> {
    let mut m = RunManifest::new("overlap");
    a.input.record(&mut m);
    m.param("delta", a.delta)
        .param("lenient-symmetry", a.lenient_symmetry)
        .param("out", a.out.display().to_string());
    let (panel, inputs) = a.input.load()?;
    for p in &inputs {
        m.digest_input(p)?;
    }
    let raw = pairwise_overlap(&panel, a.delta);
    let sym = symmetrize(&raw, a.lenient_symmetry);
    report::write_overlap_matrix_csv(&sym, &a.out)?;
    let counts = sibling(&a.out, "_counts", "csv");
    report::write_overlap_counts_csv(&raw, &counts)?;
    record_output(&mut m, &a.out);
    record_output(&mut m, &counts);
    finish_manifest(m, &manifest_path(&a.out))?;
    Ok(0)
}

fn cmd_trend(a: TrendArgs) -> Result<u8> {
    let cohort = split_ids(&a.cohort);
    let mut m = RunManifest::new("trend");
    a.input.record(&mut m);
    m.param("cohort", cohort.join(","))
        .param("period-days", a.period_days)
        .param("out", a.out.display().to_string());
    let (panel, inputs) = a.input.load()?;
    for p in &inputs {
        m.digest_input(p)?;
    }
    let t = concurrency_trend(&panel, &cohort, a.period_days)?;
    report::write_trend_csv(&t, &a.out)?;
    let summary = sibling(&a.out, "_summary", "json");
    report::write_json_value(&report::trend_summary_json(&t), &summary)?;
    record_output(&mut m, &a.out);
    record_output(&mut m, &summary);
    finish_manifest(m, &manifest_path(&a.out))?;
    Ok(0)
}

fn transfer_params(a: &TransfersArgs) -> TransferParams {
    TransferParams {
        pre_window_minutes: a.pre,
        post_window_minutes: a.post,
        rel_spike_threshold: a.rel,
        abs_spike_threshold: a.abs,
        source_fraction_threshold: a.src_frac,
        min_final_viewers: a.min_final,
        ..TransferParams::default()
    }
}

fn cmd_transfers(a: TransfersArgs) -> Result<u8> {
    let summary_path = a
        .summary
        .clone()
        .unwrap_or_else(|| a.out.with_file_name("summary.json"));
    let mut m = RunManifest::new("transfers");
    a.input.record(&mut m);
    m.param("pre", a.pre)
        .param("post", a.post)
        .param("rel", a.rel)
        .param("abs", a.abs)
        .param("src-frac", a.src_frac)
        .param("min-final", a.min_final)
        .param("out", a.out.display().to_string())
        .param("summary", summary_path.display().to_string());
    let (panel, inputs) = a.input.load()?;
    for p in &inputs {
        m.digest_input(p)?;
    }
    let scan = detect_transfers(&panel, &transfer_params(&a))?;
    report::write_transfer_events_csv(&scan.events, &a.out)?;
    let summary = summarize_transfers(&scan.events);
    report::write_json_value(&report::transfer_summary_json(&summary), &summary_path)?;
    record_output(&mut m, &a.out);
    record_output(&mut m, &summary_path);
    finish_manifest(m, &manifest_path(&a.out))?;
    Ok(0)
}

fn cmd_dilution(a: DilutionArgs) -> Result<u8> {
    let (panel, inputs) = a.input.load()?;
    let scope: Vec<String> = match &a.channels {
        Some(raw) => split_ids(raw),
        None => panel.channels().iter().map(|c| c.id.clone()).collect(),
    };
    let mut m = RunManifest::new("dilution");
    a.input.record(&mut m);
    m.param("channels", scope.join(","))
        .param("iterations", a.iterations)
        .param("level", a.level)
        .param("seed", a.seed)
        .param("tz-offset-minutes", a.tz_offset_minutes)
        .param("out", a.out.display().to_string());
    m.seed = Some(a.seed);
    for p in &inputs {
        m.digest_input(p)?;
    }
    let r = residual_spearman_with_ci(
        &panel,
        &scope,
        a.iterations,
        a.level,
        a.seed,
        a.tz_offset_minutes,
    )?;
    report::write_json_value(&report::dilution_json(&r, &scope), &a.out)?;
    let buckets = a.out.with_file_name("buckets.csv");
    report::write_buckets_csv(&r.buckets, &buckets)?;
    record_output(&mut m, &a.out);
    record_output(&mut m, &buckets);
    finish_manifest(m, &manifest_path(&a.out))?;
    Ok(0)
}

fn parse_weights(raw: &str) -> Result<LoyaltyWeights> {
    let parts: Vec<&str> = raw.split(',').map(str::trim).collect();
    if parts.len() != 4 {
        return Err(Error::Usage(format!(
            "--weights needs 4 comma-separated values, got {}",
            parts.len()
        )));
    }
    let mut w = [0.0; 4];
    for (slot, part) in w.iter_mut().zip(&parts) {
        *slot = part
            .parse()
            .map_err(|e| Error::Usage(format!("--weights value `{part}`: {e}")))?;
    }
    Ok(LoyaltyWeights { w_s: w[0], w_r: w[1], w_p: w[2], w_f: w[3] })
}

fn cmd_loyalty(a: LoyaltyArgs) -> Result<u8> {
    let weights = parse_weights(&a.weights)?;
    let mut m = RunManifest::new("loyalty");
    a.input.record(&mut m);
    m.param(
        "weights",
        format!("{},{},{},{}", weights.w_s, weights.w_r, weights.w_p, weights.w_f),
    )
    .param("competed-min-fraction", a.competed_min_fraction)
    .param("out", a.out.display().to_string());
    let (panel, inputs) = a.input.load()?;
    for p in &inputs {
        m.digest_input(p)?;
    }
    let rows = loyalty_table(&panel, &weights, a.competed_min_fraction)?;
    report::write_loyalty_csv(&rows, &a.out)?;
    record_output(&mut m, &a.out);
    finish_manifest(m, &manifest_path(&a.out))?;
    Ok(0)
}

fn cmd_permtest(a: PermtestArgs) -> Result<u8> {
    let mut m = RunManifest::new("permtest");
    a.input.record(&mut m);
    m.param("iterations", a.iterations)
        .param("seed", a.seed)
        .param("alpha", a.alpha)
        .param("out", a.out.display().to_string());
    m.seed = Some(a.seed);
    let (panel, inputs) = a.input.load()?;
    for p in &inputs {
        m.digest_input(p)?;
    }
    let r = permutation_test(&panel, a.iterations, a.seed, a.alpha)?;
    report::write_permtest_csv(&r, &a.out)?;
    let summary = sibling(&a.out, "_summary", "json");
    report::write_json_value(&report::permtest_summary_json(&r), &summary)?;
    record_output(&mut m, &a.out);
    record_output(&mut m, &summary);
    finish_manifest(m, &manifest_path(&a.out))?;
    Ok(0)
}

fn cmd_simulate(a: SimulateArgs) -> Result<u8> {
    let mut cfg: SimConfig = serde_json::from_reader(File::open(&a.scenario)?)?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let mut m = RunManifest::new("simulate");
    m.param("scenario", a.scenario.display().to_string())
        .param("seed", cfg.seed)
        .param("out-dir", a.out_dir.display().to_string());
    m.seed = Some(cfg.seed);
    m.digest_input(&a.scenario)?;

    let (panel, truth) = generate(&cfg)?;
    std::fs::create_dir_all(&a.out_dir)?;
    let streams_path = a.out_dir.join("streams.csv");
    let obs_path = a.out_dir.join("observations.csv");
    let truth_path = a.out_dir.join("truth.json");
    write_streams_csv(&panel, BufWriter::new(File::create(&streams_path)?))?;
    write_observations_csv(&panel, BufWriter::new(File::create(&obs_path)?))?;
    // ground truth keeps full float precision so scoring is exact
    let mut w = BufWriter::new(File::create(&truth_path)?);
    serde_json::to_writer_pretty(&mut w, &truth)?;
    w.write_all(b"\n")?;
    w.flush()?;
    for p in [&streams_path, &obs_path, &truth_path] {
        record_output(&mut m, p);
    }
    finish_manifest(m, &a.out_dir.join("manifest.json"))?;
    Ok(0)
}

fn cmd_score(a: ScoreArgs) -> Result<u8> {
    let mut m = RunManifest::new("score");
    m.param("truth", a.truth.display().to_string())
        .param("estimate", a.estimate.display().to_string())
        .param(
            "kind",
            match a.kind {
                ScoreKind::Overlap => "overlap",
                ScoreKind::Transfers => "transfers",
            },
        )
        .param("match-window", a.match_window)
        .param("zero-tolerance", a.zero_tolerance);
    m.digest_input(&a.truth)?;
    m.digest_input(&a.estimate)?;
    let truth: GroundTruth = serde_json::from_reader(File::open(&a.truth)?)?;
    let value = match a.kind {
        ScoreKind::Overlap => {
            let est = report::read_overlap_matrix_csv(&a.estimate)?;
            let r = score_overlap_recovery(&truth, &est, a.zero_tolerance)?;
            report::overlap_recovery_json(&r)
        }
        ScoreKind::Transfers => {
            let events = report::read_transfer_events_csv(&a.estimate)?;
            let r = score_transfer_recovery(&truth.transfers, &events, a.match_window);
            report::transfer_recovery_json(&r)
        }
    };
    println!("{}", serde_json::to_string_pretty(&value)?);
    if let Some(out) = &a.out {
        m.param("out", out.display().to_string());
        report::write_json_value(&value, out)?;
        record_output(&mut m, out);
        finish_manifest(m, &manifest_path(out))?;
    }
    Ok(0)
}

/// Highest-spike event; earliest in scan order on ties.
fn headline_event(events: &[TransferEvent]) -> Option<&TransferEvent> {
    events
        .iter()
        .reduce(|best, e| if e.spike > best.spike { e } else { best })
}

fn cmd_all(a: AllArgs) -> Result<u8> {
    std::fs::create_dir_all(&a.out_dir)?;
    let mut m = RunManifest::new("all");
    m.param("panel", a.panel.display().to_string())
        .param("out-dir", a.out_dir.display().to_string())
        .param("seed", a.seed)
        .param("iterations", a.iterations);
    m.seed = Some(a.seed);
    m.digest_input(&a.panel)?;
    let out = |name: &str| a.out_dir.join(name);
    let stage = |m: &mut RunManifest, name: &str, t: Instant| {
        m.stages.push(StageTiming {
            stage: name.to_string(),
            seconds: t.elapsed().as_secs_f64(),
        });
    };

    let t = Instant::now();
    let (panel, _) = load_cache(&a.panel)?;
    stage(&mut m, "load", t);

    let t = Instant::now();
    let raw = pairwise_overlap(&panel, 8);
    let sym = symmetrize(&raw, false);
    report::write_overlap_matrix_csv(&sym, &out("overlap.csv"))?;
    report::write_overlap_counts_csv(&raw, &out("overlap_counts.csv"))?;
    report::write_overlap_figure_csvs(
        &sym,
        &panel,
        &out("fig1_edges.csv"),
        &out("fig1_nodes.csv"),
    )?;
    let freq = concurrency_frequency(&panel);
    report::write_frequency_matrix_csv(&freq, &out("fig2_frequency.csv"))?;
    stage(&mut m, "overlap", t);

    let t = Instant::now();
    let scan = detect_transfers(&panel, &TransferParams::default())?;
    report::write_transfer_events_csv(&scan.events, &out("events.csv"))?;
    let summary = summarize_transfers(&scan.events);
    report::write_json_value(
        &report::transfer_summary_json(&summary),
        &out("transfers_summary.json"),
    )?;
    if let Some(event) = headline_event(&scan.events) {
        report::write_transfer_extract_csv(&panel, event, &out("fig4_transfer_extract.csv"))?;
    }
    stage(&mut m, "transfers", t);

    let t = Instant::now();
    let scope: Vec<String> = panel.channels().iter().map(|c| c.id.clone()).collect();
    let dilution = residual_spearman_with_ci(&panel, &scope, a.iterations, 0.95, a.seed, 0)?;
    report::write_json_value(&report::dilution_json(&dilution, &scope), &out("dilution.json"))?;
    report::write_buckets_csv(&dilution.buckets, &out("buckets.csv"))?;
    stage(&mut m, "dilution", t);

    let t = Instant::now();
    let rows = loyalty_table(&panel, &LoyaltyWeights::default(), 0.0)?;
    report::write_loyalty_csv(&rows, &out("loyalty.csv"))?;
    report::write_loyalty_figure_csv(&rows, &panel, &out("fig5_loyalty.csv"))?;
    stage(&mut m, "loyalty", t);

    let t = Instant::now();
    let perm = permutation_test(&panel, 1000, a.seed, 0.01)?;
    report::write_permtest_csv(&perm, &out("permtest.csv"))?;
    report::write_json_value(
        &report::permtest_summary_json(&perm),
        &out("permtest_summary.json"),
    )?;
    stage(&mut m, "permtest", t);

    for name in [
        "overlap.csv",
        "overlap_counts.csv",
        "fig1_edges.csv",
        "fig1_nodes.csv",
        "fig2_frequency.csv",
        "events.csv",
        "transfers_summary.json",
        "dilution.json",
        "buckets.csv",
        "loyalty.csv",
        "fig5_loyalty.csv",
        "permtest.csv",
        "permtest_summary.json",
    ] {
        record_output(&mut m, &out(name));
    }
    if !scan.events.is_empty() {
        record_output(&mut m, &out("fig4_transfer_extract.csv"));
    }
    finish_manifest(m, &out("manifest.json"))?;
    Ok(0)
}
