//! Canonical data model: channels, streams, minute observations, and the
//! time-indexed query primitives shared by every analysis.
//!
//! A [`Panel`] is immutable after construction. Streams and channels are kept
//! sorted by id so every downstream computation is independent of input
//! order; observations are stored per stream, sorted by minute.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::time::Minute;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelRef {
    pub id: String,
    pub display_name: String,
    pub generation: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamRecord {
    pub stream_id: String,
    /// Index into `Panel::channels`.
    pub channel: u32,
    pub scheduled_start: Option<Minute>,
    pub actual_start: Minute,
    pub end: Minute,
    pub title: String,
}

impl StreamRecord {
    /// A stream is live at minute `m` iff `actual_start <= m <= end`.
    pub fn live_at(&self, m: Minute) -> bool {
        self.actual_start <= m && m <= self.end
    }

    pub fn duration_minutes(&self) -> i64 {
        self.end - self.actual_start
    }
}

/// Immutable minute-level viewership panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Panel {
    channels: Vec<ChannelRef>,
    streams: Vec<StreamRecord>,
    /// Per stream (parallel to `streams`), sorted by minute.
    observations: Vec<Vec<(Minute, u32)>>,
    observation_window: Option<(Minute, Minute)>,
    #[serde(skip)]
    channel_by_id: HashMap<String, u32>,
    #[serde(skip)]
    stream_by_id: HashMap<String, u32>,
}

impl Panel {
    /// Assemble a panel from validated parts. Channels and streams may arrive
    /// in any order; observations must already reference valid streams and
    /// lie within their stream's bounds (the ingest layer enforces this).
    pub fn from_parts(
        mut channels: Vec<ChannelRef>,
        mut streams: Vec<StreamRecord>,
        observations: Vec<(String, Minute, u32)>,
        channel_ids_of_streams: Vec<String>,
    ) -> Result<Panel> {
        channels.sort_by(|a, b| a.id.cmp(&b.id));
        let channel_by_id: HashMap<String, u32> = channels
            .iter()
            .enumerate()
            .map(|(i, c)| (c.id.clone(), i as u32))
            .collect();
        if channel_by_id.len() != channels.len() {
            return Err(Error::DegenerateInput("duplicate channel id".into()));
        }

        // Re-point each stream at the sorted channel table.
        for (s, cid) in streams.iter_mut().zip(&channel_ids_of_streams) {
            s.channel = *channel_by_id
                .get(cid)
                .ok_or_else(|| Error::UnknownChannel(cid.clone()))?;
        }
        streams.sort_by(|a, b| a.stream_id.cmp(&b.stream_id));
        let stream_by_id: HashMap<String, u32> = streams
            .iter()
            .enumerate()
            .map(|(i, s)| (s.stream_id.clone(), i as u32))
            .collect();
        if stream_by_id.len() != streams.len() {
            let mut seen = std::collections::HashSet::new();
            for s in &streams {
                if !seen.insert(&s.stream_id) {
                    return Err(Error::DuplicateStreamId(s.stream_id.clone()));
                }
            }
        }
        for s in &streams {
            if s.end <= s.actual_start {
                return Err(Error::EndBeforeStart {
                    stream_id: s.stream_id.clone(),
                    line: 0,
                });
            }
        }

        let mut per_stream: Vec<Vec<(Minute, u32)>> = vec![Vec::new(); streams.len()];
        for (sid, minute, viewers) in observations {
            let idx = *stream_by_id
                .get(&sid)
                .ok_or_else(|| Error::UnknownStream(sid.clone()))?;
            let s = &streams[idx as usize];
            if minute < s.actual_start || minute > s.end {
                return Err(Error::DegenerateInput(format!(
                    "observation at {minute} outside stream `{sid}` bounds"
                )));
            }
            per_stream[idx as usize].push((minute, viewers));
        }
        let mut window: Option<(Minute, Minute)> = None;
        for obs in per_stream.iter_mut() {
            obs.sort_by_key(|(m, _)| *m);
            for w in obs.windows(2) {
                if w[0].0 == w[1].0 {
                    return Err(Error::DegenerateInput(format!(
                        "duplicate observation at {}",
                        w[0].0
                    )));
                }
            }
            if let (Some(first), Some(last)) = (obs.first(), obs.last()) {
                window = match window {
                    None => Some((first.0, last.0)),
                    Some((lo, hi)) => Some((lo.min(first.0), hi.max(last.0))),
                };
            }
        }

        Ok(Panel {
            channels,
            streams,
            observations: per_stream,
            observation_window: window,
            channel_by_id,
            stream_by_id,
        })
    }

    /// Rebuild the id lookup tables (needed after deserializing a cache).
    pub(crate) fn rebuild_indexes(&mut self) {
        self.channel_by_id = self
            .channels
            .iter()
            .enumerate()
            .map(|(i, c)| (c.id.clone(), i as u32))
            .collect();
        self.stream_by_id = self
            .streams
            .iter()
            .enumerate()
            .map(|(i, s)| (s.stream_id.clone(), i as u32))
            .collect();
    }

    pub fn channels(&self) -> &[ChannelRef] {
        &self.channels
    }

    pub fn streams(&self) -> &[StreamRecord] {
        &self.streams
    }

    pub fn channel_index(&self, id: &str) -> Option<u32> {
        self.channel_by_id.get(id).copied()
    }

    pub fn stream_index(&self, id: &str) -> Option<u32> {
        self.stream_by_id.get(id).copied()
    }

    pub fn stream(&self, idx: u32) -> &StreamRecord {
        &self.streams[idx as usize]
    }

    pub fn channel(&self, idx: u32) -> &ChannelRef {
        &self.channels[idx as usize]
    }

    /// Observations of one stream, sorted by minute.
    pub fn stream_observations(&self, idx: u32) -> &[(Minute, u32)] {
        &self.observations[idx as usize]
    }

    pub fn n_observations(&self) -> usize {
        self.observations.iter().map(|o| o.len()).sum()
    }

    /// `[first observed minute, last observed minute]`, `None` for a panel
    /// with no observations.
    pub fn observation_window(&self) -> Option<(Minute, Minute)> {
        self.observation_window
    }

    /// `[earliest stream start, latest stream end]` from metadata.
    pub fn schedule_window(&self) -> Option<(Minute, Minute)> {
        let lo = self.streams.iter().map(|s| s.actual_start).min()?;
        let hi = self.streams.iter().map(|s| s.end).max()?;
        Some((lo, hi))
    }

    /// Observations of `stream` with minute in `[from, to)`.
    pub fn window_slice(&self, stream: u32, from: Minute, to: Minute) -> &[(Minute, u32)] {
        let obs = &self.observations[stream as usize];
        let lo = obs.partition_point(|(m, _)| *m < from);
        let hi = obs.partition_point(|(m, _)| *m < to);
        &obs[lo..hi]
    }

    /// Mean observed viewers over `[from, to)`; gaps are skipped, never
    /// interpolated.
    pub fn window_mean(&self, stream: u32, from: Minute, to: Minute) -> Result<f64> {
        let slice = self.window_slice(stream, from, to);
        if slice.is_empty() {
            return Err(Error::EmptyWindow {
                stream_id: self.stream(stream).stream_id.clone(),
                from: from.to_string(),
                to: to.to_string(),
            });
        }
        Ok(slice.iter().map(|(_, v)| *v as f64).sum::<f64>() / slice.len() as f64)
    }

    /// Maximum observed viewers over `[from, to)`.
    pub fn window_peak(&self, stream: u32, from: Minute, to: Minute) -> Result<u32> {
        let slice = self.window_slice(stream, from, to);
        slice
            .iter()
            .map(|(_, v)| *v)
            .max()
            .ok_or_else(|| Error::EmptyWindow {
                stream_id: self.stream(stream).stream_id.clone(),
                from: from.to_string(),
                to: to.to_string(),
            })
    }

    /// Mean over all of a stream's observations.
    pub fn stream_average(&self, stream: u32) -> Result<f64> {
        let obs = &self.observations[stream as usize];
        if obs.is_empty() {
            return Err(Error::EmptyStream(self.stream(stream).stream_id.clone()));
        }
        Ok(obs.iter().map(|(_, v)| *v as f64).sum::<f64>() / obs.len() as f64)
    }

    /// Last observed viewer count of a stream, if any.
    pub fn final_viewers(&self, stream: u32) -> Option<(Minute, u32)> {
        self.observations[stream as usize].last().copied()
    }
}

/// Piecewise-constant index of which streams are live at each minute.
///
/// Built by sweeping stream start/end events; segment `i` covers minutes
/// `[boundaries[i], boundaries[i+1])` and the last segment is empty. The
/// count at a minute includes the stream itself, so a count of 1 means solo.
#[derive(Debug, Clone)]
pub struct ConcurrencyIndex {
    boundaries: Vec<Minute>,
    live: Vec<Vec<u32>>,
}

impl ConcurrencyIndex {
    /// Index over every stream of the panel.
    pub fn build(panel: &Panel) -> ConcurrencyIndex {
        Self::build_filtered(panel, |_| true)
    }

    /// Index over the streams matching `keep` (by stream index).
    pub fn build_filtered<F: Fn(u32) -> bool>(panel: &Panel, keep: F) -> ConcurrencyIndex {
        // +1 at start, -1 at end+1: live means start <= m <= end.
        let mut events: Vec<(Minute, bool, u32)> = Vec::new();
        for (i, s) in panel.streams().iter().enumerate() {
            if keep(i as u32) {
                events.push((s.actual_start, false, i as u32));
                events.push((s.end + 1, true, i as u32));
            }
        }
        events.sort();
        let mut boundaries = Vec::new();
        let mut live = Vec::new();
        let mut active: Vec<u32> = Vec::new();
        let mut i = 0;
        while i < events.len() {
            let m = events[i].0;
            while i < events.len() && events[i].0 == m {
                let (_, is_end, idx) = events[i];
                if is_end {
                    active.retain(|&x| x != idx);
                } else {
                    active.push(idx);
                }
                i += 1;
            }
            active.sort_unstable();
            boundaries.push(m);
            live.push(active.clone());
        }
        ConcurrencyIndex { boundaries, live }
    }

    /// Stream indexes live at `m` (sorted).
    pub fn live_at(&self, m: Minute) -> &[u32] {
        let seg = self.boundaries.partition_point(|b| *b <= m);
        if seg == 0 {
            return &[];
        }
        &self.live[seg - 1]
    }

    pub fn count_at(&self, m: Minute) -> usize {
        self.live_at(m).len()
    }

    /// (segment start, segment end exclusive, live set) triples, skipping
    /// empty segments. The final sentinel segment is never yielded.
    pub fn segments(&self) -> impl Iterator<Item = (Minute, Minute, &[u32])> {
        self.boundaries
            .windows(2)
            .zip(self.live.iter())
            .filter(|(_, l)| !l.is_empty())
            .map(|(w, l)| (w[0], w[1], l.as_slice()))
    }

    /// Segments clipped to `[lo, hi)`, in order; empty live sets included.
    pub fn segments_overlapping(
        &self,
        lo: Minute,
        hi: Minute,
    ) -> impl Iterator<Item = (Minute, Minute, &[u32])> {
        let start = self.boundaries.partition_point(|b| *b <= lo).saturating_sub(1);
        self.boundaries
            .windows(2)
            .zip(self.live.iter())
            .skip(start)
            .take_while(move |(w, _)| w[0] < hi)
            .filter_map(move |(w, l)| {
                let s = w[0].max(lo);
                let e = w[1].min(hi);
                (s < e).then_some((s, e, l.as_slice()))
            })
    }
}

#[cfg(test)]
pub(crate) fn toy_panel(specs: &[(&str, &str, i64, i64)], obs: &[(&str, i64, u32)]) -> Panel {
    // specs: (stream_id, channel_id, start, end); obs: (stream_id, minute, viewers)
    let mut channels: Vec<ChannelRef> = Vec::new();
    for (_, cid, _, _) in specs {
        if !channels.iter().any(|c| c.id == *cid) {
            channels.push(ChannelRef {
                id: cid.to_string(),
                display_name: cid.to_uppercase(),
                generation: None,
            });
        }
    }
    let streams: Vec<StreamRecord> = specs
        .iter()
        .map(|(sid, _, start, end)| StreamRecord {
            stream_id: sid.to_string(),
            channel: 0,
            scheduled_start: None,
            actual_start: Minute(*start),
            end: Minute(*end),
            title: String::new(),
        })
        .collect();
    let channel_ids = specs.iter().map(|(_, cid, _, _)| cid.to_string()).collect();
    let observations = obs
        .iter()
        .map(|(sid, m, v)| (sid.to_string(), Minute(*m), *v))
        .collect();
    Panel::from_parts(channels, streams, observations, channel_ids).unwrap()
}
