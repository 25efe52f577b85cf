//! Report emission: run manifests, CSV matrices and tables, JSON summaries,
//! and plot-ready figure extracts.
//!
//! Every float is rounded to 6 significant digits before serialization so
//! repeated runs produce byte-identical files. Matrices and tables are CSV;
//! nested summaries are JSON.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::time::SystemTime;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::dilution::{DilutionBuckets, DilutionResult};
use crate::loyalty::LoyaltyComponents;
use crate::overlap::{FrequencyMatrix, OverlapMatrix, TrendResult};
use crate::panel::Panel;
use crate::permtest::PermTestResult;
use crate::sim::{OverlapRecovery, TransferRecovery};
use crate::time::Minute;
use crate::transfer::{TransferEvent, TransferSummary};
use crate::{Error, Result};

/// Round to 6 significant decimal digits. +-0 collapse to +0 so the printed
/// form never carries a sign on zero.
pub fn sig6(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return if x == 0.0 { 0.0 } else { x };
    }
    format!("{x:.5e}").parse().expect("formatted float reparses")
}

/// Shortest decimal form of the 6-significant-digit rounding.
pub fn fmt6(x: f64) -> String {
    format!("{}", sig6(x))
}

fn num(x: f64) -> Value {
    serde_json::Number::from_f64(sig6(x)).map_or(Value::Null, Value::Number)
}

fn opt_num(x: Option<f64>) -> Value {
    x.map_or(Value::Null, num)
}

fn opt_cell(x: Option<f64>) -> String {
    x.map(fmt6).unwrap_or_default()
}

/// Days-from-epoch to (year, month, day), proleptic Gregorian.
fn civil_from_days(z: i64) -> (i64, u32, u32) {
    let z = z + 719_468;
    let era = z.div_euclid(146_097);
    let doe = z.rem_euclid(146_097);
    let yoe = (doe - doe / 1460 + doe / 36_524 - doe / 146_096) / 365;
    let y = yoe + era * 400;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let d = (doy - (153 * mp + 2) / 5 + 1) as u32;
    let m = if mp < 10 { mp + 3 } else { mp - 9 } as u32;
    (if m <= 2 { y + 1 } else { y }, m, d)
}

fn iso_utc(t: SystemTime) -> String {
    let secs = match t.duration_since(SystemTime::UNIX_EPOCH) {
        Ok(d) => d.as_secs() as i64,
        Err(e) => -(e.duration().as_secs() as i64),
    };
    let (y, mo, d) = civil_from_days(secs.div_euclid(86_400));
    let rem = secs.rem_euclid(86_400);
    format!(
        "{y:04}-{mo:02}-{d:02}T{:02}:{:02}:{:02}Z",
        rem / 3600,
        rem % 3600 / 60,
        rem % 60
    )
}

pub fn sha256_hex(path: &Path) -> Result<String> {
    let mut f = BufReader::new(File::open(path).map_err(|e| {
        Error::Usage(format!("cannot read input `{}`: {e}", path.display()))
    })?);
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

/// Provenance record written beside every run's outputs. `parameters` holds
/// the full resolved flag set (defaults included) keyed by flag name, with
/// values in the exact string form the flag accepts, so a run can be
/// reproduced by replaying `subcommand` with these flags.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub subcommand: String,
    pub parameters: BTreeMap<String, Value>,
    /// Input path -> SHA-256 of the file consumed.
    pub input_digests: BTreeMap<String, String>,
    pub seed: Option<u64>,
    pub started_utc: String,
    pub finished_utc: String,
    pub outputs: Vec<String>,
    pub stages: Vec<StageTiming>,
}

impl RunManifest {
    pub fn new(subcommand: &str) -> RunManifest {
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            subcommand: subcommand.to_string(),
            parameters: BTreeMap::new(),
            input_digests: BTreeMap::new(),
            seed: None,
            started_utc: iso_utc(SystemTime::now()),
            finished_utc: String::new(),
            outputs: Vec::new(),
            stages: Vec::new(),
        }
    }

    pub fn param(&mut self, flag: &str, value: impl Into<Value>) -> &mut Self {
        self.parameters.insert(flag.to_string(), value.into());
        self
    }

    pub fn digest_input(&mut self, path: &Path) -> Result<&mut Self> {
        self.input_digests
            .insert(path.display().to_string(), sha256_hex(path)?);
        Ok(self)
    }

    pub fn finish(&mut self) {
        self.finished_utc = iso_utc(SystemTime::now());
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_json_value(&serde_json::to_value(self)?, path)
    }

    pub fn read(path: &Path) -> Result<RunManifest> {
        Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
    }
}

pub fn write_json_value(value: &Value, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(BufWriter::new(File::create(path)?)))
}

fn write_matrix_csv(
    path: &Path,
    channels: &[String],
    cell: impl Fn(usize, usize) -> String,
) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["channel".to_string()];
    header.extend_from_slice(channels);
    w.write_record(&header)?;
    for (i, id) in channels.iter().enumerate() {
        let mut row = vec![id.clone()];
        row.extend((0..channels.len()).map(|j| cell(i, j)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Channel x channel overlap values; undefined cells are empty.
pub fn write_overlap_matrix_csv(m: &OverlapMatrix, path: &Path) -> Result<()> {
    write_matrix_csv(path, &m.channels, |i, j| opt_cell(m.get(i, j)))
}

/// Directional event counts in the same layout as the overlap matrix.
pub fn write_overlap_counts_csv(m: &OverlapMatrix, path: &Path) -> Result<()> {
    write_matrix_csv(path, &m.channels, |i, j| m.count(i, j).to_string())
}

/// Reads a matrix written by [`write_overlap_matrix_csv`]. Event counts are
/// not stored in the matrix file and come back as zero.
pub fn read_overlap_matrix_csv(path: &Path) -> Result<OverlapMatrix> {
    let mut r = csv::Reader::from_reader(BufReader::new(File::open(path)?));
    let channels: Vec<String> = r.headers()?.iter().skip(1).map(String::from).collect();
    let n = channels.len();
    let mut values = vec![None; n * n];
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        if i >= n || rec.len() != n + 1 || rec.get(0) != Some(channels[i].as_str()) {
            return Err(Error::Parse {
                line: i as u64 + 2,
                field: "channel".into(),
                message: "matrix rows must mirror the header channel order".into(),
            });
        }
        for j in 0..n {
            let cell = rec.get(j + 1).unwrap_or("");
            if !cell.is_empty() {
                values[i * n + j] = Some(cell.parse().map_err(|e| Error::Parse {
                    line: i as u64 + 2,
                    field: channels[j].clone(),
                    message: format!("{e}"),
                })?);
            }
        }
    }
    Ok(OverlapMatrix {
        channels,
        values,
        event_counts: vec![0; n * n],
        skipped_events: 0,
        symmetrized: true,
    })
}

/// Pairwise concurrent-live frequency matrix (heatmap data).
pub fn write_frequency_matrix_csv(f: &FrequencyMatrix, path: &Path) -> Result<()> {
    write_matrix_csv(path, &f.channels, |i, j| opt_cell(f.get(i, j)))
}

pub fn write_trend_csv(t: &TrendResult, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["period_index", "fraction"])?;
    for (p, f) in &t.fractions {
        w.write_record([p.to_string(), fmt6(*f)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn trend_summary_json(t: &TrendResult) -> Value {
    json!({
        "cohort": t.cohort,
        "period_days": t.period_days,
        "n_periods": t.fractions.len(),
        "rho": num(t.rho),
        "first_fraction": num(t.first_fraction),
        "last_fraction": num(t.last_fraction),
    })
}

const EVENT_COLUMNS: [&str; 12] = [
    "source_stream",
    "receiving_stream",
    "t_e",
    "pre_mean",
    "post_peak",
    "spike",
    "source_final_viewers",
    "source_stream_average",
    "efficiency",
    "over_unity",
    "source_channel",
    "receiving_channel",
];

/// Event rows mirror `TransferEvent` fields in declaration order.
pub fn write_transfer_events_csv(events: &[TransferEvent], path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(EVENT_COLUMNS)?;
    for e in events {
        w.write_record([
            e.source_stream.clone(),
            e.receiving_stream.clone(),
            e.t_e.0.to_string(),
            fmt6(e.pre_mean),
            e.post_peak.to_string(),
            fmt6(e.spike),
            e.source_final_viewers.to_string(),
            fmt6(e.source_stream_average),
            fmt6(e.efficiency),
            e.over_unity.to_string(),
            e.source_channel.clone(),
            e.receiving_channel.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_transfer_events_csv(path: &Path) -> Result<Vec<TransferEvent>> {
    let mut r = csv::Reader::from_reader(BufReader::new(File::open(path)?));
    let headers = r.headers()?.clone();
    if headers.iter().ne(EVENT_COLUMNS) {
        return Err(Error::Parse {
            line: 1,
            field: "header".into(),
            message: format!("expected columns {}", EVENT_COLUMNS.join(",")),
        });
    }
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let field = |k: usize| rec.get(k).unwrap_or("");
        let parse_err = |k: usize, e: String| Error::Parse {
            line: i as u64 + 2,
            field: EVENT_COLUMNS[k].into(),
            message: e,
        };
        macro_rules! p {
            ($k:expr) => {
                field($k).parse().map_err(|e| parse_err($k, format!("{e}")))?
            };
        }
        out.push(TransferEvent {
            source_stream: field(0).to_string(),
            receiving_stream: field(1).to_string(),
            t_e: Minute(p!(2)),
            pre_mean: p!(3),
            post_peak: p!(4),
            spike: p!(5),
            source_final_viewers: p!(6),
            source_stream_average: p!(7),
            efficiency: p!(8),
            over_unity: p!(9),
            source_channel: field(10).to_string(),
            receiving_channel: field(11).to_string(),
        });
    }
    Ok(out)
}

pub fn transfer_summary_json(s: &TransferSummary) -> Value {
    let pairs: Vec<Value> = s
        .pair_counts
        .iter()
        .map(|((src, dst), n)| json!({"source": src, "receiver": dst, "events": n}))
        .collect();
    json!({
        "total_events": s.total_events,
        "fp_estimate": num(s.fp_estimate),
        "mean_spike_plausible": opt_num(s.mean_spike_plausible),
        "median_efficiency": opt_num(s.median_efficiency),
        "iqr_efficiency": s.iqr_efficiency.map_or(Value::Null, |(lo, hi)| json!([num(lo), num(hi)])),
        "top10_share": num(s.top10_share),
        "pair_counts": pairs,
    })
}

/// Bucket table for the dilution bar chart.
pub fn write_buckets_csv(b: &DilutionBuckets, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["k", "n", "per_stream_mean", "total_mean"])?;
    for row in &b.rows {
        w.write_record([
            row.k.to_string(),
            row.n_samples.to_string(),
            fmt6(row.per_stream_mean),
            fmt6(row.total_mean),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn dilution_json(r: &DilutionResult, scope: &[String]) -> Value {
    let buckets: Vec<Value> = r
        .buckets
        .rows
        .iter()
        .map(|b| {
            json!({
                "k": b.k,
                "n_samples": b.n_samples,
                "n_minutes": b.n_minutes,
                "per_stream_mean": num(b.per_stream_mean),
                "total_mean": num(b.total_mean),
            })
        })
        .collect();
    json!({
        "scope": scope,
        "n_samples": r.n_samples,
        "n_days": r.n_days,
        "rho_total_vs_k": num(r.rho_total_vs_k),
        "rho_residual": num(r.rho_residual),
        "residual_ci": {
            "point_estimate": num(r.residual_ci.point_estimate),
            "ci_low": num(r.residual_ci.ci_low),
            "ci_high": num(r.residual_ci.ci_high),
            "confidence": num(r.residual_ci.confidence),
            "n_iterations": r.residual_ci.n_iterations,
            "failed_iterations": r.residual_ci.failed_iterations,
        },
        "buckets": buckets,
    })
}

pub fn write_loyalty_csv(rows: &[LoyaltyComponents], path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["channel", "S", "R", "P", "F", "L", "n_streams", "n_competed", "n_solo"])?;
    for r in rows {
        w.write_record([
            r.channel.clone(),
            opt_cell(r.s),
            opt_cell(r.r),
            opt_cell(r.p),
            opt_cell(r.f),
            opt_cell(r.l),
            r.n_streams.to_string(),
            r.n_competed.to_string(),
            r.n_solo.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_permtest_csv(r: &PermTestResult, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["channel_a", "channel_b", "observed", "null_mean", "null_sd", "p_value"])?;
    for p in &r.pairs {
        w.write_record([
            p.channel_a.clone(),
            p.channel_b.clone(),
            p.observed.to_string(),
            fmt6(p.null_mean),
            fmt6(p.null_sd),
            fmt6(p.p_value),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn permtest_summary_json(r: &PermTestResult) -> Value {
    json!({
        "iterations": r.iterations,
        "seed": r.seed,
        "alpha": num(r.alpha),
        "window_start": r.window.0 .0,
        "window_end": r.window.1 .0,
        "n_pairs": r.n_pairs,
        "n_significant": r.n_significant,
        "fraction_significant": num(r.fraction_significant),
    })
}

pub fn overlap_recovery_json(r: &OverlapRecovery) -> Value {
    json!({
        "kind": "overlap",
        "spearman": opt_num(r.spearman),
        "sign_accuracy": num(r.sign_accuracy),
        "n_cells": r.n_cells,
        "zero_tolerance": num(r.zero_tolerance),
    })
}

pub fn transfer_recovery_json(r: &TransferRecovery) -> Value {
    json!({
        "kind": "transfers",
        "precision": opt_num(r.precision),
        "recall": opt_num(r.recall),
        "n_planted": r.n_planted,
        "n_detected": r.n_detected,
        "n_matched": r.n_matched,
        "match_window_minutes": r.match_window_minutes,
    })
}

/// Overlap graph as an edge list plus a node table sized by each channel's
/// mean observed viewers. Undefined cells produce no edge.
pub fn write_overlap_figure_csvs(
    m: &OverlapMatrix,
    panel: &Panel,
    edges_path: &Path,
    nodes_path: &Path,
) -> Result<()> {
    let mut w = csv_writer(edges_path)?;
    w.write_record(["channel_a", "channel_b", "weight"])?;
    for i in 0..m.n() {
        for j in (i + 1)..m.n() {
            if let Some(v) = m.get(i, j) {
                w.write_record([m.channels[i].clone(), m.channels[j].clone(), fmt6(v)])?;
            }
        }
    }
    w.flush()?;

    let nc = panel.channels().len();
    let mut sum = vec![0u64; nc];
    let mut count = vec![0u64; nc];
    for (i, s) in panel.streams().iter().enumerate() {
        let obs = panel.stream_observations(i as u32);
        sum[s.channel as usize] += obs.iter().map(|&(_, v)| v as u64).sum::<u64>();
        count[s.channel as usize] += obs.len() as u64;
    }
    let mut w = csv_writer(nodes_path)?;
    w.write_record(["channel", "generation", "avg_viewers"])?;
    for (c, ch) in panel.channels().iter().enumerate() {
        let avg = if count[c] > 0 { sum[c] as f64 / count[c] as f64 } else { 0.0 };
        w.write_record([
            ch.id.clone(),
            ch.generation.clone().unwrap_or_default(),
            fmt6(avg),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Minute series of both streams of one event over [t_e - 30, t_e + 30],
/// one row per retained panel observation.
pub fn write_transfer_extract_csv(
    panel: &Panel,
    event: &TransferEvent,
    path: &Path,
) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["role", "stream_id", "minute", "viewers"])?;
    for (role, id) in [("source", &event.source_stream), ("receiver", &event.receiving_stream)] {
        let idx = panel
            .stream_index(id)
            .ok_or_else(|| Error::UnknownStream(id.clone()))?;
        for &(m, v) in panel.window_slice(idx, event.t_e - 30, event.t_e + 31) {
            w.write_record([role.to_string(), id.clone(), m.0.to_string(), v.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Loyalty component table in figure layout: one row per channel with its
/// generation label for grouping.
pub fn write_loyalty_figure_csv(
    rows: &[LoyaltyComponents],
    panel: &Panel,
    path: &Path,
) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["channel", "generation", "S", "R", "P", "F", "L"])?;
    for r in rows {
        let generation = panel
            .channel_index(&r.channel)
            .and_then(|c| panel.channel(c).generation.clone())
            .unwrap_or_default();
        w.write_record([
            r.channel.clone(),
            generation,
            opt_cell(r.s),
            opt_cell(r.r),
            opt_cell(r.p),
            opt_cell(r.f),
            opt_cell(r.l),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::toy_panel;
    use crate::transfer::{detect_transfers, TransferParams};

    #[test]
    fn sig6_rounds_to_six_significant_digits() {
        assert_eq!(fmt6(0.742), "0.742");
        assert_eq!(fmt6(0.1234567), "0.123457");
        assert_eq!(fmt6(123456.7), "123457");
        assert_eq!(fmt6(-0.0001234564), "-0.000123456");
        assert_eq!(fmt6(1.0 / 3.0), "0.333333");
        assert_eq!(fmt6(0.0), "0");
        assert_eq!(fmt6(-0.0), "0");
        assert_eq!(fmt6(2500.0), "2500");
    }

    #[test]
    fn iso_utc_formats_epoch_dates() {
        let t = |secs: u64| {
            iso_utc(SystemTime::UNIX_EPOCH + std::time::Duration::from_secs(secs))
        };
        assert_eq!(t(0), "1970-01-01T00:00:00Z");
        assert_eq!(t(86_399), "1970-01-01T23:59:59Z");
        // 2024-02-29 is day 19782 of the epoch (leap day).
        assert_eq!(t(19_782 * 86_400), "2024-02-29T00:00:00Z");
    }

    #[test]
    fn overlap_matrix_csv_round_trips() {
        let m = OverlapMatrix {
            channels: vec!["a".into(), "b".into(), "c".into()],
            values: vec![
                None,
                Some(0.25),
                None,
                Some(0.25),
                None,
                Some(-0.125),
                None,
                Some(-0.125),
                None,
            ],
            event_counts: vec![0; 9],
            skipped_events: 0,
            symmetrized: true,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("overlap.csv");
        write_overlap_matrix_csv(&m, &path).unwrap();
        let back = read_overlap_matrix_csv(&path).unwrap();
        assert_eq!(back.channels, m.channels);
        assert_eq!(back.values, m.values);
    }

    #[test]
    fn transfer_events_csv_round_trips() {
        let p = toy_panel(
            &[("src", "a", 0, 100), ("dst", "b", 90, 200)],
            &[
                ("src", 95, 4000),
                ("src", 96, 4200),
                ("src", 97, 4400),
                ("src", 98, 4800),
                ("src", 99, 5000),
                ("src", 100, 5000),
                ("dst", 96, 1000),
                ("dst", 97, 1000),
                ("dst", 98, 1000),
                ("dst", 99, 1000),
                ("dst", 100, 1000),
                ("dst", 101, 3500),
                ("dst", 102, 3400),
            ],
        );
        let scan = detect_transfers(&p, &TransferParams::default()).unwrap();
        assert_eq!(scan.events.len(), 1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.csv");
        write_transfer_events_csv(&scan.events, &path).unwrap();
        let back = read_transfer_events_csv(&path).unwrap();
        // floats come back rounded to the serialization precision
        let expected: Vec<TransferEvent> = scan
            .events
            .iter()
            .map(|e| TransferEvent {
                pre_mean: sig6(e.pre_mean),
                spike: sig6(e.spike),
                source_stream_average: sig6(e.source_stream_average),
                efficiency: sig6(e.efficiency),
                ..e.clone()
            })
            .collect();
        assert_eq!(back, expected);
    }

    #[test]
    fn transfer_extract_covers_the_event_window() {
        let mut obs: Vec<(&str, i64, u32)> = Vec::new();
        let rows_src: Vec<(i64, u32)> = (0..=100).map(|m| (m, 4000)).collect();
        let rows_dst: Vec<(i64, u32)> = (90..=200).map(|m| (m, 1500)).collect();
        for &(m, v) in &rows_src {
            obs.push(("src", m, v));
        }
        for &(m, v) in &rows_dst {
            obs.push(("dst", m, v));
        }
        let p = toy_panel(&[("src", "a", 0, 100), ("dst", "b", 90, 200)], &obs);
        let event = TransferEvent {
            source_stream: "src".into(),
            receiving_stream: "dst".into(),
            t_e: Minute(100),
            pre_mean: 4000.0,
            post_peak: 1500,
            spike: 0.0,
            source_final_viewers: 4000,
            source_stream_average: 4000.0,
            efficiency: 0.0,
            over_unity: false,
            source_channel: "a".into(),
            receiving_channel: "b".into(),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("extract.csv");
        write_transfer_extract_csv(&p, &event, &path).unwrap();
        let mut r = csv::Reader::from_path(&path).unwrap();
        let rows: Vec<csv::StringRecord> = r.records().map(|r| r.unwrap()).collect();
        // source observed on [70, 100], receiver on [90, 130]: 31 + 41 rows
        let src_rows = rows.iter().filter(|r| r.get(0) == Some("source")).count();
        let dst_rows = rows.iter().filter(|r| r.get(0) == Some("receiver")).count();
        assert_eq!(src_rows, 31);
        assert_eq!(dst_rows, 41);
        assert!(rows
            .iter()
            .all(|r| (70..=130).contains(&r.get(2).unwrap().parse::<i64>().unwrap())));
    }

    #[test]
    fn edge_list_skips_undefined_cells() {
        let m = OverlapMatrix {
            channels: vec!["a".into(), "b".into(), "c".into()],
            values: vec![None, Some(0.2), None, Some(0.2), None, None, None, None, None],
            event_counts: vec![0; 9],
            skipped_events: 0,
            symmetrized: true,
        };
        let p = toy_panel(
            &[("s1", "a", 0, 10), ("s2", "b", 0, 10), ("s3", "c", 0, 10)],
            &[("s1", 0, 100), ("s1", 1, 200), ("s2", 0, 50)],
        );
        let dir = tempfile::tempdir().unwrap();
        let edges = dir.path().join("edges.csv");
        let nodes = dir.path().join("nodes.csv");
        write_overlap_figure_csvs(&m, &p, &edges, &nodes).unwrap();
        let content = std::fs::read_to_string(&edges).unwrap();
        let lines: Vec<&str> = content.lines().collect();
        assert_eq!(lines.len(), 2, "header plus the single defined edge");
        assert_eq!(lines[1], "a,b,0.2");
        let nodes = std::fs::read_to_string(&nodes).unwrap();
        let lines: Vec<&str> = nodes.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[1], "a,,150");
        assert_eq!(lines[3], "c,,0");
    }

    #[test]
    fn manifest_round_trips_and_hashes_inputs() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("input.csv");
        std::fs::write(&input, "hello\n").unwrap();
        let mut m = RunManifest::new("overlap");
        m.param("delta", 8).param("out", "overlap.csv");
        m.digest_input(&input).unwrap();
        m.seed = Some(7);
        m.finish();
        let path = dir.path().join("m.json");
        m.write(&path).unwrap();
        let back = RunManifest::read(&path).unwrap();
        assert_eq!(back.subcommand, "overlap");
        assert_eq!(back.parameters["delta"], Value::from(8));
        assert_eq!(back.seed, Some(7));
        assert_eq!(
            back.input_digests[&input.display().to_string()],
            // sha256 of "hello\n"
            "5891b5b522d5df086d0ff0b110fbd9d21bb4fc7163af34d08286a2e846f6be03"
        );
        assert!(back.started_utc.ends_with('Z'));
    }
}
