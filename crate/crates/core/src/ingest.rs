//! CSV ingestion, anomaly reporting, and the binary panel cache.
//!
//! Two-file layout: `streams.csv` holds metadata (one row per stream),
//! `observations.csv` holds minute samples. Metadata problems (malformed
//! rows, duplicate stream ids, end before start) are always fatal.
//! Observation anomalies are semantic and mode-dependent: lenient mode
//! drops or resolves them and counts everything in a [`ValidationReport`];
//! strict mode fails on the first one.

use std::collections::HashMap;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{ChannelRef, Panel, StreamRecord};
use crate::time::Minute;

pub const STREAMS_HEADER: [&str; 8] = [
    "stream_id",
    "channel_id",
    "channel_name",
    "generation",
    "scheduled_start",
    "actual_start",
    "end",
    "title",
];
pub const OBSERVATIONS_HEADER: [&str; 3] = ["stream_id", "minute", "viewers"];

const CACHE_MAGIC: &[u8; 8] = b"LENSPNL\0";
const CACHE_VERSION: u32 = 1;

/// One anomaly category: a total count plus up to 20 sample descriptions.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnomalyCategory {
    pub count: u64,
    pub samples: Vec<String>,
}

impl AnomalyCategory {
    fn record(&mut self, sample: impl FnOnce() -> String) {
        self.count += 1;
        if self.samples.len() < 20 {
            self.samples.push(sample());
        }
    }
}

/// Census of observation-level anomalies found during ingest.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    /// Repeated (stream, minute) rows; resolved last-write-wins.
    pub duplicate_observations: AnomalyCategory,
    /// Observations outside their stream's `[actual_start, end]` span.
    pub out_of_range_observations: AnomalyCategory,
    /// Observations referencing a stream id absent from the metadata.
    pub orphan_observations: AnomalyCategory,
    /// Rows with a negative viewer count.
    pub negative_counts: AnomalyCategory,
    /// Streams present in metadata with no retained observations.
    pub zero_observation_streams: AnomalyCategory,
    pub n_channels: usize,
    pub n_streams: usize,
    pub n_observations: usize,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.duplicate_observations.count == 0
            && self.out_of_range_observations.count == 0
            && self.orphan_observations.count == 0
            && self.negative_counts.count == 0
            && self.zero_observation_streams.count == 0
    }

    pub fn total_anomalies(&self) -> u64 {
        self.duplicate_observations.count
            + self.out_of_range_observations.count
            + self.orphan_observations.count
            + self.negative_counts.count
            + self.zero_observation_streams.count
    }
}

struct RawStreams {
    channels: Vec<ChannelRef>,
    streams: Vec<StreamRecord>,
    channel_id_of_stream: Vec<String>,
}

fn header_indexes(headers: &csv::StringRecord, wanted: &[&str], path: &Path) -> Result<Vec<usize>> {
    wanted
        .iter()
        .map(|name| {
            headers.iter().position(|h| h == *name).ok_or_else(|| Error::Parse {
                line: 1,
                field: name.to_string(),
                message: format!("column missing from header of {}", path.display()),
            })
        })
        .collect()
}

fn field<'r>(record: &'r csv::StringRecord, idx: usize, name: &str, line: u64) -> Result<&'r str> {
    record.get(idx).ok_or_else(|| Error::Parse {
        line,
        field: name.to_string(),
        message: "row has too few columns".into(),
    })
}

fn parse_minute(s: &str, name: &str, line: u64) -> Result<Minute> {
    Minute::parse(s).ok_or_else(|| Error::Parse {
        line,
        field: name.to_string(),
        message: format!("`{s}` is not a YYYY-MM-DDTHH:MMZ timestamp"),
    })
}

/// Load and validate stream metadata. All problems here are fatal: the
/// metadata file is small and authoritative, so there is no lenient path.
fn load_streams_raw(path: &Path) -> Result<RawStreams> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_path(path)?;
    let idx = header_indexes(rdr.headers()?, &STREAMS_HEADER, path)?;

    let mut channels: Vec<ChannelRef> = Vec::new();
    let mut channel_seen: HashMap<String, usize> = HashMap::new();
    let mut streams = Vec::new();
    let mut channel_id_of_stream = Vec::new();
    let mut stream_seen: HashMap<String, ()> = HashMap::new();

    for record in rdr.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let get = |i: usize| field(&record, idx[i], STREAMS_HEADER[i], line);

        let stream_id = get(0)?.to_string();
        if stream_seen.insert(stream_id.clone(), ()).is_some() {
            return Err(Error::DuplicateStreamId(stream_id));
        }
        let channel_id = get(1)?.to_string();
        let channel_name = get(2)?.to_string();
        let generation = match get(3)? {
            "" => None,
            g => Some(g.to_string()),
        };
        let scheduled_start = match get(4)? {
            "" => None,
            s => Some(parse_minute(s, "scheduled_start", line)?),
        };
        let actual_start = parse_minute(get(5)?, "actual_start", line)?;
        let end = parse_minute(get(6)?, "end", line)?;
        if end <= actual_start {
            return Err(Error::EndBeforeStart { stream_id, line });
        }
        let title = get(7)?.to_string();

        if !channel_seen.contains_key(&channel_id) {
            channel_seen.insert(channel_id.clone(), channels.len());
            channels.push(ChannelRef {
                id: channel_id.clone(),
                display_name: channel_name,
                generation,
            });
        }
        streams.push(StreamRecord {
            stream_id,
            channel: 0, // repointed by Panel::from_parts
            scheduled_start,
            actual_start,
            end,
            title,
        });
        channel_id_of_stream.push(channel_id);
    }
    Ok(RawStreams {
        channels,
        streams,
        channel_id_of_stream,
    })
}

/// Load both files and assemble a validated panel plus its anomaly report.
///
/// In strict mode the first observation anomaly aborts the load; in lenient
/// mode anomalies are resolved (drop, or last-write-wins for duplicates) and
/// counted.
pub fn load_panel(
    streams_path: &Path,
    obs_path: &Path,
    strict: bool,
) -> Result<(Panel, ValidationReport)> {
    let raw = load_streams_raw(streams_path)?;
    let mut report = ValidationReport {
        n_channels: raw.channels.len(),
        n_streams: raw.streams.len(),
        ..Default::default()
    };

    let span_of: HashMap<&str, (Minute, Minute)> = raw
        .streams
        .iter()
        .map(|s| (s.stream_id.as_str(), (s.actual_start, s.end)))
        .collect();

    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_path(obs_path)?;
    let idx = header_indexes(rdr.headers()?, &OBSERVATIONS_HEADER, obs_path)?;

    // (stream_id, minute, viewers) in file order; duplicates resolved later
    // so last-write-wins is well defined.
    let mut rows: Vec<(String, Minute, u32)> = Vec::new();
    let mut record = csv::StringRecord::new();
    while rdr.read_record(&mut record)? {
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let stream_id = field(&record, idx[0], "stream_id", line)?;
        let minute = parse_minute(field(&record, idx[1], "minute", line)?, "minute", line)?;
        let viewers_raw = field(&record, idx[2], "viewers", line)?;
        let viewers: i64 = viewers_raw.parse().map_err(|_| Error::Parse {
            line,
            field: "viewers".into(),
            message: format!("`{viewers_raw}` is not an integer"),
        })?;

        if viewers < 0 {
            if strict {
                return Err(Error::StrictModeViolation(format!(
                    "negative viewer count {viewers} at line {line}"
                )));
            }
            report
                .negative_counts
                .record(|| format!("line {line}: stream `{stream_id}` viewers {viewers}"));
            continue;
        }
        let viewers = u32::try_from(viewers).map_err(|_| Error::Parse {
            line,
            field: "viewers".into(),
            message: format!("{viewers} exceeds u32 range"),
        })?;

        let Some(&(start, end)) = span_of.get(stream_id) else {
            if strict {
                return Err(Error::StrictModeViolation(format!(
                    "orphan observation for unknown stream `{stream_id}` at line {line}"
                )));
            }
            report
                .orphan_observations
                .record(|| format!("line {line}: unknown stream `{stream_id}`"));
            continue;
        };
        if minute < start || minute > end {
            if strict {
                return Err(Error::StrictModeViolation(format!(
                    "observation at {minute} outside stream `{stream_id}` span at line {line}"
                )));
            }
            report
                .out_of_range_observations
                .record(|| format!("line {line}: stream `{stream_id}` at {minute}"));
            continue;
        }
        rows.push((stream_id.to_string(), minute, viewers));
    }

    // Resolve duplicates last-write-wins. Stable sort preserves file order
    // within a (stream, minute) key, so the last row of each run survives.
    rows.sort_by(|a, b| (&a.0, a.1).cmp(&(&b.0, b.1)));
    let mut deduped: Vec<(String, Minute, u32)> = Vec::with_capacity(rows.len());
    for row in rows {
        match deduped.last() {
            Some(last) if last.0 == row.0 && last.1 == row.1 => {
                if strict {
                    return Err(Error::StrictModeViolation(format!(
                        "duplicate observation for stream `{}` at {}",
                        row.0, row.1
                    )));
                }
                report
                    .duplicate_observations
                    .record(|| format!("stream `{}` at {}", row.0, row.1));
                *deduped.last_mut().unwrap() = row;
            }
            _ => deduped.push(row),
        }
    }
    report.n_observations = deduped.len();

    let panel = Panel::from_parts(
        raw.channels,
        raw.streams,
        deduped,
        raw.channel_id_of_stream,
    )?;
    let mut zero_obs: Vec<&str> = panel
        .streams()
        .iter()
        .enumerate()
        .filter(|(i, _)| panel.stream_observations(*i as u32).is_empty())
        .map(|(_, s)| s.stream_id.as_str())
        .collect();
    zero_obs.sort_unstable();
    for sid in zero_obs {
        if strict {
            return Err(Error::StrictModeViolation(format!(
                "stream `{sid}` has zero observations"
            )));
        }
        report
            .zero_observation_streams
            .record(|| format!("stream `{sid}`"));
    }

    Ok((panel, report))
}

/// Anomaly census without building analysis state: a lenient load that
/// returns only the report.
pub fn validate(streams_path: &Path, obs_path: &Path) -> Result<ValidationReport> {
    load_panel(streams_path, obs_path, false).map(|(_, r)| r)
}

/// Write panel metadata in the canonical streams.csv schema, streams sorted
/// by id.
pub fn write_streams_csv<W: Write>(panel: &Panel, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(STREAMS_HEADER)?;
    for s in panel.streams() {
        let c = panel.channel(s.channel);
        w.write_record([
            s.stream_id.as_str(),
            c.id.as_str(),
            c.display_name.as_str(),
            c.generation.as_deref().unwrap_or(""),
            &s.scheduled_start.map(|m| m.to_string()).unwrap_or_default(),
            &s.actual_start.to_string(),
            &s.end.to_string(),
            s.title.as_str(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Write observations in the canonical observations.csv schema, ordered by
/// (stream id, minute).
pub fn write_observations_csv<W: Write>(panel: &Panel, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(OBSERVATIONS_HEADER)?;
    for (i, s) in panel.streams().iter().enumerate() {
        for &(m, v) in panel.stream_observations(i as u32) {
            w.write_record([s.stream_id.as_str(), &m.to_string(), &v.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct CacheBody {
    panel: Panel,
    report: ValidationReport,
}

/// Persist a validated panel (and its ingest report) as a version-stamped
/// binary cache.
pub fn save_cache(panel: &Panel, report: &ValidationReport, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(CACHE_MAGIC)?;
    w.write_all(&CACHE_VERSION.to_le_bytes())?;
    let body = bincode::serialize(&CacheBody {
        panel: panel.clone(),
        report: report.clone(),
    })
    .map_err(|e| Error::DegenerateInput(format!("cache encode failed: {e}")))?;
    w.write_all(&body)?;
    w.flush()?;
    Ok(())
}

/// Load a cache written by [`save_cache`], refusing other versions.
pub fn load_cache(path: &Path) -> Result<(Panel, ValidationReport)> {
    let file = std::fs::File::open(path)?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CACHE_MAGIC {
        return Err(Error::CacheVersion {
            expected: format!("magic {CACHE_MAGIC:?}"),
            found: format!("magic {magic:?}"),
        });
    }
    let mut ver = [0u8; 4];
    r.read_exact(&mut ver)?;
    let found = u32::from_le_bytes(ver);
    if found != CACHE_VERSION {
        return Err(Error::CacheVersion {
            expected: CACHE_VERSION.to_string(),
            found: found.to_string(),
        });
    }
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    let decoded: CacheBody = bincode::deserialize(&body)
        .map_err(|e| Error::DegenerateInput(format!("cache decode failed: {e}")))?;
    let mut panel = decoded.panel;
    panel.rebuild_indexes();
    Ok((panel, decoded.report))
}
