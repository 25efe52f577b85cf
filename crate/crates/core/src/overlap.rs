//! Audience-overlap estimation from stream-start viewership deltas, plus the
//! constant-cohort concurrency trend.
//!
//! When a stream of channel i starts at t0 while a stream of channel j is
//! live across the whole window, the viewership change of the j stream,
//!
//! ```text
//! dV_j = mean[t0, t0+delta) - mean[t0-delta, t0)          (Eq. 1)
//! O_ij = median over events of (-dV_j) / pre-window mean   (Eq. 2)
//! ```
//!
//! estimates the audience fraction pulled away. The matrix is symmetrized
//! as (O_ij + O_ji) / 2.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{ConcurrencyIndex, Panel};
use crate::stats::{mean, median, spearman_rho};
use crate::time::{Minute, MINUTES_PER_DAY};

/// One stream start observed against one fully spanning concurrent stream
/// of a different channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StartEvent {
    pub starting_stream: u32,
    pub t0: Minute,
    pub concurrent_stream: u32,
}

/// Channel-by-channel overlap estimates. Row i, column j holds O_ij:
/// the audience fraction channel i's starts pull from channel j's streams.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapMatrix {
    pub channels: Vec<String>,
    /// Row-major n*n; `None` where no events exist (always on the diagonal).
    pub values: Vec<Option<f64>>,
    /// Events contributing to each cell.
    pub event_counts: Vec<u32>,
    /// Events dropped for an empty or nonpositive pre-window.
    pub skipped_events: u64,
    pub symmetrized: bool,
}

impl OverlapMatrix {
    pub fn n(&self) -> usize {
        self.channels.len()
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.values[i * self.n() + j]
    }

    pub fn count(&self, i: usize, j: usize) -> u32 {
        self.event_counts[i * self.n() + j]
    }
}

/// All (starting stream, spanning concurrent stream) pairs: the concurrent
/// stream belongs to a different channel, started at least `delta` minutes
/// before t0, and ends at least `delta` minutes after. Ordered by t0, then
/// starting stream id, then concurrent stream id.
pub fn enumerate_start_events(panel: &Panel, delta: i64) -> Vec<StartEvent> {
    assert!(delta >= 1, "delta must be >= 1 minute");
    let index = ConcurrencyIndex::build(panel);
    let mut events = Vec::new();
    for (a_idx, a) in panel.streams().iter().enumerate() {
        let t0 = a.actual_start;
        for &b_idx in index.live_at(t0) {
            let b = panel.stream(b_idx);
            if b.channel == a.channel {
                continue;
            }
            if b.actual_start <= t0 - delta && b.end >= t0 + delta {
                events.push(StartEvent {
                    starting_stream: a_idx as u32,
                    t0,
                    concurrent_stream: b_idx,
                });
            }
        }
    }
    events.sort_by(|x, y| {
        (x.t0, &panel.stream(x.starting_stream).stream_id, &panel.stream(x.concurrent_stream).stream_id)
            .cmp(&(y.t0, &panel.stream(y.starting_stream).stream_id, &panel.stream(y.concurrent_stream).stream_id))
    });
    events
}

/// Eq. (1): viewership change of the concurrent stream around t0.
pub fn start_event_delta(panel: &Panel, event: &StartEvent, delta: i64) -> Result<f64> {
    let pre = panel.window_mean(event.concurrent_stream, event.t0 - delta, event.t0)?;
    let post = panel.window_mean(event.concurrent_stream, event.t0, event.t0 + delta)?;
    Ok(post - pre)
}

/// Eq. (2): per-ordered-pair median of normalized transfers, unsymmetrized.
/// Events whose pre-window is empty or has nonpositive mean are skipped and
/// counted in `skipped_events`.
pub fn pairwise_overlap(panel: &Panel, delta: i64) -> OverlapMatrix {
    let n = panel.channels().len();
    let mut per_cell: Vec<Vec<f64>> = vec![Vec::new(); n * n];
    let mut skipped = 0u64;
    for event in enumerate_start_events(panel, delta) {
        let i = panel.stream(event.starting_stream).channel as usize;
        let j = panel.stream(event.concurrent_stream).channel as usize;
        let pre = match panel.window_mean(event.concurrent_stream, event.t0 - delta, event.t0) {
            Ok(p) if p > 0.0 => p,
            _ => {
                skipped += 1;
                continue;
            }
        };
        let post = match panel.window_mean(event.concurrent_stream, event.t0, event.t0 + delta) {
            Ok(p) => p,
            Err(_) => {
                skipped += 1;
                continue;
            }
        };
        per_cell[i * n + j].push(-(post - pre) / pre);
    }
    let values = per_cell
        .iter()
        .map(|xs| if xs.is_empty() { None } else { Some(median(xs).expect("nonempty")) })
        .collect();
    OverlapMatrix {
        channels: panel.channels().iter().map(|c| c.id.clone()).collect(),
        values,
        event_counts: per_cell.iter().map(|xs| xs.len() as u32).collect(),
        skipped_events: skipped,
        symmetrized: false,
    }
}

/// Symmetrize as (O_ij + O_ji) / 2. Where only one direction is defined the
/// strict policy (default) leaves both undefined; the lenient policy copies
/// the defined side. Event counts become the per-pair sum. Idempotent.
pub fn symmetrize(m: &OverlapMatrix, lenient: bool) -> OverlapMatrix {
    if m.symmetrized {
        return m.clone();
    }
    let n = m.n();
    let mut out = m.clone();
    out.symmetrized = true;
    for i in 0..n {
        for j in (i + 1)..n {
            let (ij, ji) = (m.values[i * n + j], m.values[j * n + i]);
            let merged = match (ij, ji) {
                (Some(a), Some(b)) => Some((a + b) / 2.0),
                (one, None) | (None, one) if lenient => one,
                _ => None,
            };
            out.values[i * n + j] = merged;
            out.values[j * n + i] = merged;
            let total = m.event_counts[i * n + j] + m.event_counts[j * n + i];
            out.event_counts[i * n + j] = total;
            out.event_counts[j * n + i] = total;
        }
        out.values[i * n + i] = None;
        out.event_counts[i * n + i] = 0;
    }
    out
}

/// Concurrency trend of a fixed cohort, binned into `period_days` periods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendResult {
    pub cohort: Vec<String>,
    pub period_days: i64,
    /// (period index, mean pairwise concurrency fraction), ascending.
    pub fractions: Vec<(usize, f64)>,
    pub rho: f64,
    pub first_fraction: f64,
    pub last_fraction: f64,
}

/// Merged half-open live segments (in minutes) of one channel.
fn channel_live_segments(panel: &Panel, channel: u32) -> Vec<(i64, i64)> {
    let mut spans: Vec<(i64, i64)> = panel
        .streams()
        .iter()
        .filter(|s| s.channel == channel)
        .map(|s| (s.actual_start.0, s.end.0 + 1))
        .collect();
    spans.sort_unstable();
    let mut merged: Vec<(i64, i64)> = Vec::new();
    for (lo, hi) in spans {
        match merged.last_mut() {
            Some(last) if lo <= last.1 => last.1 = last.1.max(hi),
            _ => merged.push((lo, hi)),
        }
    }
    merged
}

fn intersect_segments(a: &[(i64, i64)], b: &[(i64, i64)]) -> Vec<(i64, i64)> {
    let mut out = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        let lo = a[i].0.max(b[j].0);
        let hi = a[i].1.min(b[j].1);
        if lo < hi {
            out.push((lo, hi));
        }
        if a[i].1 < b[j].1 {
            i += 1;
        } else {
            j += 1;
        }
    }
    out
}

/// Minutes of `segments` falling in each period, chopping at boundaries.
fn minutes_per_period(
    segments: &[(i64, i64)],
    first_day: i64,
    period_days: i64,
) -> HashMap<usize, i64> {
    let period_minutes = period_days * MINUTES_PER_DAY;
    let origin = first_day * MINUTES_PER_DAY;
    let mut out: HashMap<usize, i64> = HashMap::new();
    for &(lo, hi) in segments {
        let mut cur = lo;
        while cur < hi {
            let p = (cur - origin).div_euclid(period_minutes);
            debug_assert!(p >= 0, "segment precedes the panel's first day");
            let period_end = origin + (p + 1) * period_minutes;
            let stop = hi.min(period_end);
            *out.entry(p as usize).or_insert(0) += stop - cur;
            cur = stop;
        }
    }
    out
}

/// Per-period pairwise concurrency fraction of a cohort and its Spearman
/// trend. For an unordered pair, the fraction is 2B / (L_i + L_j): the share
/// of the pair's live stream-minutes spent with the other channel also live.
/// Periods where no pair has live minutes are dropped.
pub fn concurrency_trend(panel: &Panel, cohort: &[String], period_days: i64) -> Result<TrendResult> {
    if period_days < 1 {
        return Err(Error::ConfigInvalid(format!(
            "period length {period_days} days must be >= 1"
        )));
    }
    if cohort.len() < 2 {
        return Err(Error::DegenerateInput(
            "trend cohort needs at least 2 channels".into(),
        ));
    }
    let mut ids: Vec<String> = cohort.to_vec();
    ids.sort();
    ids.dedup();
    let chans: Vec<u32> = ids
        .iter()
        .map(|id| panel.channel_index(id).ok_or_else(|| Error::UnknownChannel(id.clone())))
        .collect::<Result<_>>()?;

    let (win_lo, _) = panel
        .schedule_window()
        .ok_or_else(|| Error::DegenerateInput("panel has no streams".into()))?;
    let first_day = win_lo.day(0);

    let segments: Vec<Vec<(i64, i64)>> = chans
        .iter()
        .map(|&c| channel_live_segments(panel, c))
        .collect();
    let live_len: Vec<HashMap<usize, i64>> = segments
        .iter()
        .map(|s| minutes_per_period(s, first_day, period_days))
        .collect();

    for (k, id) in ids.iter().enumerate() {
        if live_len[k].len() < 2 {
            return Err(Error::DegenerateInput(format!(
                "cohort channel `{id}` streams in {} period(s); trend needs >= 2",
                live_len[k].len()
            )));
        }
    }

    let max_period = live_len
        .iter()
        .flat_map(|m| m.keys().copied())
        .max()
        .unwrap_or(0);

    let mut pair_overlap: Vec<HashMap<usize, i64>> = Vec::new();
    let mut pair_index: Vec<(usize, usize)> = Vec::new();
    for i in 0..chans.len() {
        for j in (i + 1)..chans.len() {
            let inter = intersect_segments(&segments[i], &segments[j]);
            pair_overlap.push(minutes_per_period(&inter, first_day, period_days));
            pair_index.push((i, j));
        }
    }

    let mut fractions: Vec<(usize, f64)> = Vec::new();
    for p in 0..=max_period {
        let mut pair_fracs = Vec::new();
        for (pi, &(i, j)) in pair_index.iter().enumerate() {
            let li = live_len[i].get(&p).copied().unwrap_or(0);
            let lj = live_len[j].get(&p).copied().unwrap_or(0);
            if li + lj == 0 {
                continue;
            }
            let b = pair_overlap[pi].get(&p).copied().unwrap_or(0);
            pair_fracs.push(2.0 * b as f64 / (li + lj) as f64);
        }
        if let Some(f) = mean(&pair_fracs) {
            fractions.push((p, f));
        }
    }
    if fractions.len() < 2 {
        return Err(Error::DegenerateInput(format!(
            "only {} period(s) with live cohort minutes; trend needs >= 2",
            fractions.len()
        )));
    }

    let xs: Vec<f64> = fractions.iter().map(|(p, _)| *p as f64).collect();
    let ys: Vec<f64> = fractions.iter().map(|(_, f)| *f).collect();
    let rho = spearman_rho(&xs, &ys)?;
    Ok(TrendResult {
        cohort: ids,
        period_days,
        first_fraction: fractions.first().unwrap().1,
        last_fraction: fractions.last().unwrap().1,
        fractions,
        rho,
    })
}

/// Whole-window pairwise concurrent-live frequency matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyMatrix {
    pub channels: Vec<String>,
    /// Row-major n x n; diagonal and pairs with zero live minutes are None.
    pub values: Vec<Option<f64>>,
}

impl FrequencyMatrix {
    pub fn n(&self) -> usize {
        self.channels.len()
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.values[i * self.channels.len() + j]
    }
}

/// Fraction of each channel pair's live stream-minutes spent concurrently
/// live, 2B / (L_i + L_j), over the full panel window.
pub fn concurrency_frequency(panel: &Panel) -> FrequencyMatrix {
    let n = panel.channels().len();
    let segments: Vec<Vec<(i64, i64)>> =
        (0..n as u32).map(|c| channel_live_segments(panel, c)).collect();
    let live: Vec<i64> = segments
        .iter()
        .map(|s| s.iter().map(|(lo, hi)| hi - lo).sum())
        .collect();
    let mut values = vec![None; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            if live[i] + live[j] == 0 {
                continue;
            }
            let b: i64 = intersect_segments(&segments[i], &segments[j])
                .iter()
                .map(|(lo, hi)| hi - lo)
                .sum();
            let f = 2.0 * b as f64 / (live[i] + live[j]) as f64;
            values[i * n + j] = Some(f);
            values[j * n + i] = Some(f);
        }
    }
    FrequencyMatrix {
        channels: panel.channels().iter().map(|c| c.id.clone()).collect(),
        values,
    }
}
