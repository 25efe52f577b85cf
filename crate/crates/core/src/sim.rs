//! Synthetic ecosystem generator with recorded ground truth, plus recovery
//! scorers. The generator is the oracle for every estimator: it plants a
//! known shared-audience structure, step transfers at stream endings, and
//! hour-of-day demand, then emits a panel in the exact ingest schema.
//!
//! Per-minute audience for a stream of channel c:
//!
//! ```text
//! v(t) = base_c * hourly[h(t)] * ar1_mult(t) * max(0, 1 - beta * pull_c(t))
//!        + decaying transfer bumps
//! pull_c(t) = sum of shared[c][p] over peer channels p with a live stream
//! ```
//!
//! Generation is single threaded and fully determined by the config seed.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::overlap::OverlapMatrix;
use crate::panel::{ChannelRef, Panel, StreamRecord};
use crate::stats::spearman_rho;
use crate::time::{Minute, MINUTES_PER_DAY};
use crate::transfer::TransferEvent;

fn default_duration_sigma() -> f64 {
    0.4
}

fn default_half_life() -> f64 {
    10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    pub duration_days: i64,
    /// One entry per channel, mean viewers; channel ids are ch00, ch01, ...
    pub base_audience: Vec<f64>,
    /// Symmetric n x n fractions in [0, 1) with zero diagonal; empty means
    /// no shared audience anywhere.
    #[serde(default)]
    pub shared_audience: Vec<Vec<f64>>,
    /// 24 positive multipliers; empty means flat demand.
    #[serde(default)]
    pub hourly_demand: Vec<f64>,
    pub schedule: ScheduleModel,
    #[serde(default)]
    pub transfer_routing: TransferRouting,
    /// Per-viewer switch propensity applied to the shared-audience pull.
    #[serde(default)]
    pub competition_beta: f64,
    pub noise: NoiseModel,
    /// Scripted schedule coordination; followers copy leader starts.
    #[serde(default)]
    pub coordination: Vec<CoordinationPair>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleModel {
    pub streams_per_week: f64,
    /// Lognormal duration with this median, clamped to [15, 1440] minutes.
    pub duration_median_minutes: f64,
    #[serde(default = "default_duration_sigma")]
    pub duration_sigma: f64,
    pub start: StartModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StartModel {
    /// Start uniform over the whole panel window (the permutation null).
    UniformWindow,
    /// Starts land in a per-day window centered on `peak_hour`. When
    /// `final_width_hours` is set the width interpolates linearly from
    /// `width_hours` on day 0, concentrating (or spreading) schedules
    /// across the run.
    DailyHours {
        peak_hour: f64,
        width_hours: f64,
        #[serde(default)]
        final_width_hours: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferRouting {
    /// Chance an ending stream routes audience to one live peer.
    #[serde(default)]
    pub probability: f64,
    /// Fraction of the ending stream's final audience that moves.
    #[serde(default)]
    pub moved_fraction: f64,
    /// n x n nonnegative receiver weights; empty means uniform choice.
    #[serde(default)]
    pub affinity: Vec<Vec<f64>>,
    #[serde(default = "default_half_life")]
    pub decay_half_life_minutes: f64,
}

impl Default for TransferRouting {
    fn default() -> Self {
        TransferRouting {
            probability: 0.0,
            moved_fraction: 0.0,
            affinity: Vec::new(),
            decay_half_life_minutes: default_half_life(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseModel {
    /// AR(1) coefficient in [0, 1).
    pub ar1_coefficient: f64,
    /// Stationary standard deviation of the multiplicative deviation.
    pub relative_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoordinationPair {
    pub leader: usize,
    pub follower: usize,
    /// Follower starts uniformly within [leader start, leader start + jitter].
    pub jitter_minutes: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedTransfer {
    pub source_stream: String,
    pub receiving_stream: String,
    pub t_e: Minute,
    pub moved_viewers: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Channel ids in panel (sorted) order; matrices index this list.
    pub channels: Vec<String>,
    pub shared_audience: Vec<Vec<f64>>,
    pub competition_beta: f64,
    pub transfers: Vec<PlantedTransfer>,
    pub coordination_pairs: Vec<(String, String)>,
    /// Per stream, merged inclusive minute intervals where the competition
    /// pull was active; streams with no affected minutes are omitted.
    pub competition_affected: BTreeMap<String, Vec<(i64, i64)>>,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let n = self.base_audience.len();
        let fail = |msg: String| Err(Error::ConfigInvalid(msg));
        if n == 0 {
            return fail("base_audience is empty".into());
        }
        if self.base_audience.iter().any(|&b| !(b > 0.0)) {
            return fail("base audiences must be positive".into());
        }
        if self.duration_days < 1 {
            return fail(format!("duration_days {} < 1", self.duration_days));
        }
        if !self.shared_audience.is_empty() {
            if self.shared_audience.len() != n
                || self.shared_audience.iter().any(|r| r.len() != n)
            {
                return fail(format!("shared_audience must be {n} x {n}"));
            }
            for i in 0..n {
                for j in 0..n {
                    let v = self.shared_audience[i][j];
                    if !(0.0..1.0).contains(&v) {
                        return fail(format!("shared_audience[{i}][{j}] = {v} outside [0, 1)"));
                    }
                    if (v - self.shared_audience[j][i]).abs() > 1e-12 {
                        return fail(format!("shared_audience not symmetric at [{i}][{j}]"));
                    }
                }
                if self.shared_audience[i][i] != 0.0 {
                    return fail(format!("shared_audience diagonal nonzero at [{i}]"));
                }
            }
        }
        if !self.hourly_demand.is_empty() {
            if self.hourly_demand.len() != 24 {
                return fail(format!(
                    "hourly_demand has {} entries, need 24",
                    self.hourly_demand.len()
                ));
            }
            if self.hourly_demand.iter().any(|&m| !(m > 0.0)) {
                return fail("hourly multipliers must be positive".into());
            }
        }
        let s = &self.schedule;
        if !(s.streams_per_week > 0.0) {
            return fail("streams_per_week must be positive".into());
        }
        if (s.streams_per_week * self.duration_days as f64 / 7.0).round() < 1.0 {
            return fail("schedule yields zero streams for every channel".into());
        }
        if !(s.duration_median_minutes >= 15.0 && s.duration_median_minutes <= 1440.0) {
            return fail(format!(
                "duration_median_minutes {} outside [15, 1440]",
                s.duration_median_minutes
            ));
        }
        if !(s.duration_sigma >= 0.0) {
            return fail("duration_sigma must be >= 0".into());
        }
        if let StartModel::DailyHours { peak_hour, width_hours, final_width_hours } = s.start {
            if !(0.0..24.0).contains(&peak_hour) {
                return fail(format!("peak_hour {peak_hour} outside [0, 24)"));
            }
            if !(width_hours > 0.0 && width_hours <= 24.0) {
                return fail(format!("width_hours {width_hours} outside (0, 24]"));
            }
            if let Some(w) = final_width_hours {
                if !(w > 0.0 && w <= 24.0) {
                    return fail(format!("final_width_hours {w} outside (0, 24]"));
                }
            }
        }
        let r = &self.transfer_routing;
        if !(0.0..=1.0).contains(&r.probability) {
            return fail(format!("routing probability {} outside [0, 1]", r.probability));
        }
        if !(0.0..1.0).contains(&r.moved_fraction) {
            return fail(format!("moved_fraction {} outside [0, 1)", r.moved_fraction));
        }
        if !r.affinity.is_empty() {
            if r.affinity.len() != n || r.affinity.iter().any(|row| row.len() != n) {
                return fail(format!("affinity must be {n} x {n}"));
            }
            if r.affinity.iter().flatten().any(|&w| !(w >= 0.0)) {
                return fail("affinity weights must be >= 0".into());
            }
        }
        if !(r.decay_half_life_minutes > 0.0) {
            return fail("decay_half_life_minutes must be positive".into());
        }
        if !(self.competition_beta >= 0.0) {
            return fail("competition_beta must be >= 0".into());
        }
        if !(0.0..1.0).contains(&self.noise.ar1_coefficient) {
            return fail(format!(
                "ar1_coefficient {} outside [0, 1)",
                self.noise.ar1_coefficient
            ));
        }
        if !(self.noise.relative_sigma >= 0.0) {
            return fail("relative_sigma must be >= 0".into());
        }
        for c in &self.coordination {
            if c.leader >= n || c.follower >= n {
                return fail(format!(
                    "coordination pair ({}, {}) outside {n} channels",
                    c.leader, c.follower
                ));
            }
            if c.leader == c.follower {
                return fail("coordination pair must link two channels".into());
            }
            if c.jitter_minutes < 0 {
                return fail("jitter_minutes must be >= 0".into());
            }
        }
        Ok(())
    }
}

fn channel_id(idx: usize) -> String {
    format!("ch{idx:02}")
}

/// Scheduled span before audience synthesis.
#[derive(Debug, Clone, Copy)]
struct Slot {
    start: i64,
    end: i64,
}

fn draw_duration<R: Rng>(rng: &mut R, dist: &LogNormal<f64>, max_end: i64) -> i64 {
    let d = dist.sample(rng).round() as i64;
    d.clamp(15, 1440.min(max_end - 1).max(15))
}

fn draw_slots(cfg: &SimConfig, rng: &mut ChaCha8Rng) -> Vec<Vec<Slot>> {
    let n = cfg.base_audience.len();
    let days = cfg.duration_days;
    let window_end = days * MINUTES_PER_DAY;
    let s = &cfg.schedule;
    let dist = LogNormal::new(s.duration_median_minutes.ln(), s.duration_sigma)
        .expect("validated sigma");
    let n_streams = (s.streams_per_week * days as f64 / 7.0).round() as usize;

    let mut slots: Vec<Vec<Slot>> = Vec::with_capacity(n);
    for _ in 0..n {
        let mut spans = Vec::with_capacity(n_streams);
        for _ in 0..n_streams {
            let dur = draw_duration(rng, &dist, window_end);
            let start = match s.start {
                StartModel::UniformWindow => rng.random_range(0..=(window_end - 1 - dur)),
                StartModel::DailyHours { peak_hour, width_hours, final_width_hours } => {
                    let day = rng.random_range(0..days);
                    let frac = if days > 1 { day as f64 / (days - 1) as f64 } else { 0.0 };
                    let width = match final_width_hours {
                        Some(w1) => width_hours + (w1 - width_hours) * frac,
                        None => width_hours,
                    };
                    let lo = ((peak_hour - width / 2.0) * 60.0).round() as i64;
                    let hi = ((peak_hour + width / 2.0) * 60.0).round() as i64;
                    let in_day = rng.random_range(lo..=hi).rem_euclid(MINUTES_PER_DAY);
                    day * MINUTES_PER_DAY + in_day
                }
            };
            let start = start.min(window_end - 2);
            let end = (start + dur).min(window_end - 1);
            spans.push(Slot { start, end });
        }
        spans.sort_by_key(|sl| (sl.start, sl.end));
        slots.push(spans);
    }

    // Followers copy their leader's starts; stream counts follow the leader.
    for c in &cfg.coordination {
        let leader = slots[c.leader].clone();
        let mut spans = Vec::with_capacity(leader.len());
        for l in &leader {
            let dur = draw_duration(rng, &dist, window_end);
            let start = (l.start + rng.random_range(0..=c.jitter_minutes)).min(window_end - 2);
            let end = (start + dur).min(window_end - 1);
            spans.push(Slot { start, end });
        }
        spans.sort_by_key(|sl| (sl.start, sl.end));
        slots[c.follower] = spans;
    }
    slots
}

/// Piecewise-constant per-channel competition pull over the whole window.
struct PullIndex {
    /// Segment s covers [boundaries[s], boundaries[s+1]).
    boundaries: Vec<i64>,
    /// Row-major per segment: pull for each channel.
    pull: Vec<f64>,
    n_channels: usize,
}

impl PullIndex {
    fn build(slots: &[Vec<Slot>], shared: &[Vec<f64>]) -> PullIndex {
        let n = slots.len();
        let mut events: Vec<(i64, usize, i32)> = Vec::new();
        for (ch, spans) in slots.iter().enumerate() {
            for sl in spans {
                events.push((sl.start, ch, 1));
                events.push((sl.end + 1, ch, -1));
            }
        }
        events.sort_unstable();
        let mut boundaries = Vec::new();
        let mut pull = Vec::new();
        let mut live = vec![0i32; n];
        let mut current = vec![0.0f64; n];
        let mut i = 0;
        while i < events.len() {
            let minute = events[i].0;
            while i < events.len() && events[i].0 == minute {
                let (_, ch, delta) = events[i];
                let was_live = live[ch] > 0;
                live[ch] += delta;
                let is_live = live[ch] > 0;
                if was_live != is_live {
                    let sign = if is_live { 1.0 } else { -1.0 };
                    for c in 0..n {
                        if c != ch {
                            current[c] += sign * shared[c][ch];
                        }
                    }
                }
                i += 1;
            }
            boundaries.push(minute);
            pull.extend_from_slice(&current);
        }
        PullIndex { boundaries, pull, n_channels: n }
    }

    /// Segment index covering minute m, for a cursor walking forward.
    fn advance(&self, seg: &mut usize, m: i64) {
        while *seg + 1 < self.boundaries.len() && self.boundaries[*seg + 1] <= m {
            *seg += 1;
        }
    }

    fn pull_at(&self, seg: usize, channel: usize) -> f64 {
        self.pull[seg * self.n_channels + channel]
    }
}

/// Generate a panel plus the ground truth for every planted mechanism.
/// Deterministic given the config (the seed lives inside it).
pub fn generate(cfg: &SimConfig) -> Result<(Panel, GroundTruth)> {
    cfg.validate()?;
    let n = cfg.base_audience.len();
    let zeros = vec![vec![0.0; n]; n];
    let shared = if cfg.shared_audience.is_empty() { &zeros } else { &cfg.shared_audience };
    let flat = vec![1.0; 24];
    let hourly = if cfg.hourly_demand.is_empty() { &flat } else { &cfg.hourly_demand };

    let mut schedule_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    schedule_rng.set_stream(0);
    let slots = draw_slots(cfg, &mut schedule_rng);

    // Flat stream table in final panel order: ids sort as (channel, slot).
    let mut meta: Vec<(usize, Slot, String)> = Vec::new();
    for (ch, spans) in slots.iter().enumerate() {
        for (k, sl) in spans.iter().enumerate() {
            meta.push((ch, *sl, format!("s{ch:02}e{k:04}")));
        }
    }

    let competition_on = cfg.competition_beta > 0.0
        && shared.iter().flatten().any(|&v| v > 0.0);
    let pulls = competition_on.then(|| PullIndex::build(&slots, shared));

    // Base audience series per stream; bumps are layered on afterwards.
    let beta = cfg.competition_beta;
    let sigma = cfg.noise.relative_sigma;
    let phi = cfg.noise.ar1_coefficient;
    let innovation = Normal::new(0.0, sigma * (1.0 - phi * phi).sqrt()).expect("validated sigma");
    let stationary = Normal::new(0.0, sigma).expect("validated sigma");
    let mut series: Vec<Vec<f64>> = Vec::with_capacity(meta.len());
    let mut affected: BTreeMap<String, Vec<(i64, i64)>> = BTreeMap::new();
    for (g, (ch, sl, id)) in meta.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(2 + g as u64);
        let base = cfg.base_audience[*ch];
        let mut x = stationary.sample(&mut rng);
        let mut v = Vec::with_capacity((sl.end - sl.start + 1) as usize);
        let mut seg = 0usize;
        let mut runs: Vec<(i64, i64)> = Vec::new();
        for t in sl.start..=sl.end {
            let mult = (1.0 + x).max(0.0);
            let mut comp = 1.0;
            if let Some(p) = &pulls {
                p.advance(&mut seg, t);
                let pull = p.pull_at(seg, *ch);
                if pull > 0.0 {
                    comp = (1.0 - beta * pull).max(0.0);
                    match runs.last_mut() {
                        Some(r) if r.1 == t - 1 => r.1 = t,
                        _ => runs.push((t, t)),
                    }
                }
            }
            let hour = Minute(t).hour_of_day(0) as usize;
            v.push(base * hourly[hour] * mult * comp);
            x = phi * x + innovation.sample(&mut rng);
        }
        if !runs.is_empty() {
            affected.insert(id.clone(), runs);
        }
        series.push(v);
    }

    // Transfers: endings in time order; the moved mass is a step at t_e
    // decaying with the configured half life.
    let mut transfers = Vec::new();
    let routing = &cfg.transfer_routing;
    if routing.probability > 0.0 && routing.moved_fraction > 0.0 {
        let days = cfg.duration_days as usize;
        let mut by_day: Vec<Vec<usize>> = vec![Vec::new(); days];
        for (g, (_, sl, _)) in meta.iter().enumerate() {
            by_day[(sl.start / MINUTES_PER_DAY) as usize].push(g);
        }
        let mut endings: Vec<usize> = (0..meta.len()).collect();
        endings.sort_by_key(|&g| (meta[g].1.end, g));
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(1);
        let half = routing.decay_half_life_minutes;
        for g in endings {
            if rng.random::<f64>() >= routing.probability {
                continue;
            }
            let (src_ch, src_slot, _) = &meta[g];
            let t_e = src_slot.end;
            // Receivers must span [t_e - 5, t_e + 5] so the detector's
            // guard windows are observable.
            let day = (t_e / MINUTES_PER_DAY) as usize;
            let mut candidates: Vec<usize> = Vec::new();
            for d in day.saturating_sub(2)..=day {
                for &h in &by_day[d] {
                    let (ch, sl, _) = &meta[h];
                    if h != g
                        && ch != src_ch
                        && sl.start <= t_e - 5
                        && sl.end >= t_e + 5
                    {
                        candidates.push(h);
                    }
                }
            }
            if candidates.is_empty() {
                continue;
            }
            candidates.sort_unstable();
            let weight = |h: usize| -> f64 {
                if routing.affinity.is_empty() {
                    1.0
                } else {
                    routing.affinity[*src_ch][meta[h].0]
                }
            };
            let total: f64 = candidates.iter().map(|&h| weight(h)).sum();
            if total <= 0.0 {
                continue;
            }
            let mut pick = rng.random::<f64>() * total;
            let mut chosen = *candidates.last().unwrap();
            for &h in &candidates {
                pick -= weight(h);
                if pick <= 0.0 {
                    chosen = h;
                    break;
                }
            }
            let moved = routing.moved_fraction * series[g][(t_e - src_slot.start) as usize];
            if moved < 1.0 {
                continue;
            }
            let recv_slot = meta[chosen].1;
            let recv = &mut series[chosen];
            for m in 0.. {
                let t = t_e + m;
                if t > recv_slot.end {
                    break;
                }
                let amount = moved * 0.5f64.powf(m as f64 / half);
                if amount < 0.5 {
                    break;
                }
                recv[(t - recv_slot.start) as usize] += amount;
            }
            transfers.push(PlantedTransfer {
                source_stream: meta[g].2.clone(),
                receiving_stream: meta[chosen].2.clone(),
                t_e: Minute(t_e),
                moved_viewers: moved,
            });
        }
    }

    // Assemble the panel in ingest schema semantics.
    let channels: Vec<ChannelRef> = (0..n)
        .map(|i| ChannelRef {
            id: channel_id(i),
            display_name: channel_id(i),
            generation: Some("sim".into()),
        })
        .collect();
    let mut streams = Vec::with_capacity(meta.len());
    let mut stream_channels = Vec::with_capacity(meta.len());
    let mut observations = Vec::new();
    for ((ch, sl, id), v) in meta.iter().zip(&series) {
        streams.push(StreamRecord {
            stream_id: id.clone(),
            channel: 0,
            scheduled_start: Some(Minute(sl.start)),
            actual_start: Minute(sl.start),
            end: Minute(sl.end),
            title: format!("{} live", channel_id(*ch)),
        });
        stream_channels.push(channel_id(*ch));
        for (off, &val) in v.iter().enumerate() {
            observations.push((id.clone(), Minute(sl.start + off as i64), val.round().max(0.0) as u32));
        }
    }
    let panel = Panel::from_parts(channels, streams, observations, stream_channels)?;
    let truth = GroundTruth {
        channels: (0..n).map(channel_id).collect(),
        shared_audience: shared.clone(),
        competition_beta: beta,
        transfers,
        coordination_pairs: cfg
            .coordination
            .iter()
            .map(|c| (channel_id(c.leader), channel_id(c.follower)))
            .collect(),
        competition_affected: affected,
    };
    Ok((panel, truth))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapRecovery {
    /// None when either side is constant over the scored cells.
    pub spearman: Option<f64>,
    /// Fraction of cells whose zero/nonzero class matches at the tolerance.
    pub sign_accuracy: f64,
    pub n_cells: usize,
    pub zero_tolerance: f64,
}

/// Rank recovery of the planted shared fractions by the symmetrized
/// estimate, over cells where the estimate is defined.
pub fn score_overlap_recovery(
    truth: &GroundTruth,
    estimate: &OverlapMatrix,
    zero_tolerance: f64,
) -> Result<OverlapRecovery> {
    if truth.channels != estimate.channels {
        let missing = truth
            .channels
            .iter()
            .find(|c| !estimate.channels.contains(c))
            .or_else(|| estimate.channels.iter().find(|c| !truth.channels.contains(c)))
            .cloned()
            .unwrap_or_else(|| "channel set size".into());
        return Err(Error::UnknownChannel(missing));
    }
    let n = truth.channels.len();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if let Some(est) = estimate.get(i, j) {
                xs.push(truth.shared_audience[i][j]);
                ys.push(est);
            }
        }
    }
    if xs.is_empty() {
        return Err(Error::NoDefinedCells);
    }
    let spearman = match spearman_rho(&xs, &ys) {
        Ok(r) => Some(r),
        Err(Error::DegenerateInput(_)) => None,
        Err(e) => return Err(e),
    };
    let correct = xs
        .iter()
        .zip(&ys)
        .filter(|(&t, &e)| (t > 0.0) == (e > zero_tolerance))
        .count();
    Ok(OverlapRecovery {
        spearman,
        sign_accuracy: correct as f64 / xs.len() as f64,
        n_cells: xs.len(),
        zero_tolerance,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferRecovery {
    /// None when nothing was detected (precision) or planted (recall).
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub n_planted: usize,
    pub n_detected: usize,
    pub n_matched: usize,
    pub match_window_minutes: i64,
}

/// A detected event matches a planted one iff the stream pair is identical
/// and the ending minutes differ by at most the window. Matching is one to
/// one, earliest planted first.
pub fn score_transfer_recovery(
    planted: &[PlantedTransfer],
    detected: &[TransferEvent],
    match_window_minutes: i64,
) -> TransferRecovery {
    let mut used = vec![false; detected.len()];
    let mut n_matched = 0;
    for p in planted {
        let hit = detected.iter().enumerate().position(|(i, d)| {
            !used[i]
                && d.source_stream == p.source_stream
                && d.receiving_stream == p.receiving_stream
                && (d.t_e - p.t_e).abs() <= match_window_minutes
        });
        if let Some(i) = hit {
            used[i] = true;
            n_matched += 1;
        }
    }
    let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
    TransferRecovery {
        precision: ratio(n_matched, detected.len()),
        recall: ratio(n_matched, planted.len()),
        n_planted: planted.len(),
        n_detected: detected.len(),
        n_matched,
        match_window_minutes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::overlap::{pairwise_overlap, symmetrize};
    use crate::transfer::{detect_transfers, TransferParams};

    fn base_config(n: usize, days: i64) -> SimConfig {
        SimConfig {
            seed: 11,
            duration_days: days,
            base_audience: (0..n).map(|i| 2000.0 + 300.0 * i as f64).collect(),
            shared_audience: Vec::new(),
            hourly_demand: Vec::new(),
            schedule: ScheduleModel {
                streams_per_week: 14.0,
                duration_median_minutes: 150.0,
                duration_sigma: 0.2,
                start: StartModel::DailyHours {
                    peak_hour: 18.0,
                    width_hours: 10.0,
                    final_width_hours: None,
                },
            },
            transfer_routing: TransferRouting::default(),
            competition_beta: 0.0,
            noise: NoiseModel { ar1_coefficient: 0.6, relative_sigma: 0.01 },
            coordination: Vec::new(),
        }
    }

    fn uniform_shared(n: usize, v: f64) -> Vec<Vec<f64>> {
        let mut m = vec![vec![v; n]; n];
        for i in 0..n {
            m[i][i] = 0.0;
        }
        m
    }

    #[test]
    fn config_validation_rejects_bad_fields() {
        let ok = base_config(3, 10);
        assert!(ok.validate().is_ok());

        let mut c = ok.clone();
        c.base_audience[1] = 0.0;
        assert!(matches!(c.validate(), Err(Error::ConfigInvalid(_))));

        let mut c = ok.clone();
        c.shared_audience = uniform_shared(3, 0.2);
        c.shared_audience[0][1] = 0.3;
        assert!(matches!(c.validate(), Err(Error::ConfigInvalid(_))));

        let mut c = ok.clone();
        c.shared_audience = uniform_shared(2, 0.2);
        assert!(matches!(c.validate(), Err(Error::ConfigInvalid(_))));

        let mut c = ok.clone();
        c.hourly_demand = vec![1.0; 23];
        assert!(matches!(c.validate(), Err(Error::ConfigInvalid(_))));

        let mut c = ok.clone();
        c.noise.ar1_coefficient = 1.0;
        assert!(matches!(c.validate(), Err(Error::ConfigInvalid(_))));

        let mut c = ok.clone();
        c.transfer_routing.moved_fraction = 1.0;
        assert!(matches!(c.validate(), Err(Error::ConfigInvalid(_))));

        let mut c = ok.clone();
        c.coordination.push(CoordinationPair { leader: 0, follower: 3, jitter_minutes: 2 });
        assert!(matches!(c.validate(), Err(Error::ConfigInvalid(_))));
    }

    #[test]
    fn deterministic_given_seed() {
        let cfg = base_config(3, 6);
        let (p1, t1) = generate(&cfg).unwrap();
        let (p2, t2) = generate(&cfg).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(t1, t2);
        let mut other = cfg.clone();
        other.seed = 12;
        let (p3, _) = generate(&other).unwrap();
        assert_ne!(p1, p3);
    }

    #[test]
    fn generated_panel_passes_strict_ingest() {
        let mut cfg = base_config(3, 6);
        cfg.shared_audience = uniform_shared(3, 0.2);
        cfg.competition_beta = 0.4;
        cfg.transfer_routing = TransferRouting {
            probability: 1.0,
            moved_fraction: 0.5,
            ..TransferRouting::default()
        };
        let (panel, _) = generate(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let streams = dir.path().join("streams.csv");
        let obs = dir.path().join("observations.csv");
        crate::ingest::write_streams_csv(&panel, std::fs::File::create(&streams).unwrap()).unwrap();
        crate::ingest::write_observations_csv(&panel, std::fs::File::create(&obs).unwrap()).unwrap();
        let (reloaded, report) = crate::ingest::load_panel(&streams, &obs, true).unwrap();
        assert!(report.is_clean());
        assert_eq!(reloaded.n_observations(), panel.n_observations());
    }

    #[test]
    fn exact_arithmetic_with_zero_noise() {
        let mut cfg = base_config(1, 2);
        cfg.noise.relative_sigma = 0.0;
        cfg.hourly_demand = (0..24).map(|h| 1.0 + 0.01 * h as f64).collect();
        let (panel, _) = generate(&cfg).unwrap();
        for s in 0..panel.streams().len() as u32 {
            for &(m, v) in panel.stream_observations(s) {
                let hour = m.hour_of_day(0) as usize;
                let expect = (2000.0 * (1.0 + 0.01 * hour as f64)).round() as u32;
                assert_eq!(v, expect, "minute {m}");
            }
        }
    }

    #[test]
    fn null_ecosystem_is_quiet() {
        let mut cfg = base_config(4, 21);
        cfg.noise.relative_sigma = 0.01;
        let (panel, truth) = generate(&cfg).unwrap();
        assert!(truth.transfers.is_empty());
        assert!(truth.competition_affected.is_empty());

        let est = symmetrize(&pairwise_overlap(&panel, 8), false);
        for i in 0..est.n() {
            for j in (i + 1)..est.n() {
                if let Some(v) = est.get(i, j) {
                    assert!(v.abs() < 0.05, "pair ({i},{j}) estimate {v}");
                }
            }
        }
        let scan = detect_transfers(&panel, &TransferParams::default()).unwrap();
        assert!(scan.events.is_empty(), "{} spurious events", scan.events.len());
    }

    #[test]
    fn planted_pair_outranks_null_pairs() {
        let mut cfg = base_config(3, 45);
        let mut shared = uniform_shared(3, 0.0);
        shared[0][1] = 0.3;
        shared[1][0] = 0.3;
        cfg.shared_audience = shared;
        cfg.competition_beta = 0.6;
        let (panel, _) = generate(&cfg).unwrap();
        let est = symmetrize(&pairwise_overlap(&panel, 8), false);
        let planted = est.get(0, 1).unwrap();
        assert!(planted > 0.0, "planted pair estimate {planted}");
        for (i, j) in [(0, 2), (1, 2)] {
            let null = est.get(i, j).unwrap();
            assert!(planted > null, "({i},{j}) null {null} vs planted {planted}");
        }
    }

    #[test]
    fn scripted_half_transfer_recovers_efficiency() {
        let mut cfg = base_config(3, 20);
        cfg.noise.relative_sigma = 0.005;
        cfg.transfer_routing = TransferRouting {
            probability: 1.0,
            moved_fraction: 0.5,
            ..TransferRouting::default()
        };
        let (panel, truth) = generate(&cfg).unwrap();
        assert!(!truth.transfers.is_empty());
        let scan = detect_transfers(&panel, &TransferParams::default()).unwrap();
        let rec = score_transfer_recovery(&truth.transfers, &scan.events, 2);
        assert!(rec.recall.unwrap() > 0.8, "recall {:?}", rec.recall);
        // An earlier bump into the same receiver decays over ~2 hours and
        // contaminates the pre window; score only uncontaminated events.
        let clean = |p: &PlantedTransfer| {
            truth.transfers.iter().all(|q| {
                q.source_stream == p.source_stream
                    || q.receiving_stream != p.receiving_stream
                    || (p.t_e - q.t_e).abs() > 120
            })
        };
        let mut checked = 0;
        for p in truth.transfers.iter().filter(|p| clean(p)) {
            if let Some(d) = scan.events.iter().find(|d| {
                d.source_stream == p.source_stream && d.receiving_stream == p.receiving_stream
            }) {
                assert!(
                    (0.45..=0.55).contains(&d.efficiency),
                    "efficiency {}",
                    d.efficiency
                );
                checked += 1;
            }
        }
        assert!(checked > 0);
    }

    #[test]
    fn transfer_bump_is_a_real_discontinuity() {
        let mut cfg = base_config(2, 10);
        cfg.noise.relative_sigma = 0.0;
        cfg.transfer_routing = TransferRouting {
            probability: 1.0,
            moved_fraction: 0.4,
            ..TransferRouting::default()
        };
        let (panel, truth) = generate(&cfg).unwrap();
        assert!(!truth.transfers.is_empty());
        for p in &truth.transfers {
            let recv = panel.stream_index(&p.receiving_stream).unwrap();
            let at = panel
                .stream_observations(recv)
                .iter()
                .find(|(m, _)| *m == p.t_e)
                .map(|&(_, v)| v)
                .unwrap();
            let before = panel.window_mean(recv, p.t_e - 3, p.t_e).unwrap();
            assert!(
                at as f64 >= before + 0.5 * p.moved_viewers,
                "stream {} at {}: {at} vs pre {before}",
                p.receiving_stream,
                p.t_e
            );
        }
    }

    #[test]
    fn competition_marks_affected_minutes() {
        let mut cfg = base_config(2, 8);
        cfg.shared_audience = uniform_shared(2, 0.3);
        cfg.competition_beta = 0.5;
        cfg.noise.relative_sigma = 0.0;
        let (panel, truth) = generate(&cfg).unwrap();
        assert!(!truth.competition_affected.is_empty());
        for (sid, runs) in &truth.competition_affected {
            let s = panel.stream(panel.stream_index(sid).unwrap());
            let other_live = |m: i64| {
                panel
                    .streams()
                    .iter()
                    .any(|o| o.channel != s.channel && o.live_at(Minute(m)))
            };
            for &(lo, hi) in runs {
                assert!(lo >= s.actual_start.0 && hi <= s.end.0);
                assert!(other_live(lo) && other_live(hi));
                if lo - 1 >= s.actual_start.0
                    && !runs.iter().any(|&(a, b)| a <= lo - 1 && lo - 1 <= b)
                {
                    assert!(!other_live(lo - 1), "run start {lo} not a boundary");
                }
            }
        }
    }

    #[test]
    fn coordination_recorded_and_followed() {
        let mut cfg = base_config(3, 15);
        cfg.coordination = vec![CoordinationPair { leader: 0, follower: 1, jitter_minutes: 3 }];
        let (panel, truth) = generate(&cfg).unwrap();
        assert_eq!(truth.coordination_pairs, vec![("ch00".to_string(), "ch01".to_string())]);
        let leads: Vec<i64> = panel
            .streams()
            .iter()
            .filter(|s| panel.channel(s.channel).id == "ch00")
            .map(|s| s.actual_start.0)
            .collect();
        let follows: Vec<i64> = panel
            .streams()
            .iter()
            .filter(|s| panel.channel(s.channel).id == "ch01")
            .map(|s| s.actual_start.0)
            .collect();
        assert_eq!(leads.len(), follows.len());
        for f in follows {
            assert!(
                leads.iter().any(|&l| f >= l && f - l <= 3),
                "follower start {f} has no leader within jitter"
            );
        }
    }

    #[test]
    fn daily_hours_keeps_starts_in_window() {
        let cfg = base_config(2, 12);
        let (panel, _) = generate(&cfg).unwrap();
        for s in panel.streams() {
            let in_day = s.actual_start.0.rem_euclid(MINUTES_PER_DAY);
            assert!(
                (13 * 60..=23 * 60).contains(&in_day),
                "start {in_day} outside the 18 +/- 5 hour window"
            );
        }
    }

    fn truth_with_shared(shared: Vec<Vec<f64>>) -> GroundTruth {
        let n = shared.len();
        GroundTruth {
            channels: (0..n).map(channel_id).collect(),
            shared_audience: shared,
            competition_beta: 0.0,
            transfers: Vec::new(),
            coordination_pairs: Vec::new(),
            competition_affected: BTreeMap::new(),
        }
    }

    fn matrix_from(channels: usize, cells: &[(usize, usize, f64)]) -> OverlapMatrix {
        let mut m = OverlapMatrix {
            channels: (0..channels).map(channel_id).collect(),
            values: vec![None; channels * channels],
            event_counts: vec![0; channels * channels],
            skipped_events: 0,
            symmetrized: true,
        };
        for &(i, j, v) in cells {
            m.values[i * channels + j] = Some(v);
            m.values[j * channels + i] = Some(v);
        }
        m
    }

    #[test]
    fn overlap_recovery_exact_match_is_one() {
        let mut shared = uniform_shared(4, 0.0);
        let mut cells = Vec::new();
        let mut v = 0.05;
        for i in 0..4 {
            for j in (i + 1)..4 {
                shared[i][j] = v;
                shared[j][i] = v;
                cells.push((i, j, v));
                v += 0.05;
            }
        }
        let truth = truth_with_shared(shared);
        let est = matrix_from(4, &cells);
        let r = score_overlap_recovery(&truth, &est, 0.02).unwrap();
        assert_eq!(r.spearman, Some(1.0));
        assert_eq!(r.sign_accuracy, 1.0);
        assert_eq!(r.n_cells, 6);
    }

    #[test]
    fn overlap_recovery_tolerates_small_noise() {
        use rand::Rng;
        let n = 6;
        let mut shared = uniform_shared(n, 0.0);
        let mut cells = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut v = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                shared[i][j] = v;
                shared[j][i] = v;
                cells.push((i, j, v + rng.random_range(-0.004..0.004)));
                v += 0.4 / 14.0;
            }
        }
        let truth = truth_with_shared(shared);
        let est = matrix_from(n, &cells);
        let r = score_overlap_recovery(&truth, &est, 0.02).unwrap();
        assert!(r.spearman.unwrap() >= 0.95, "rho {:?}", r.spearman);
    }

    #[test]
    fn overlap_recovery_constant_truth_flags_undefined() {
        let truth = truth_with_shared(uniform_shared(3, 0.0));
        let est = matrix_from(3, &[(0, 1, 0.01), (0, 2, -0.01), (1, 2, 0.03)]);
        let r = score_overlap_recovery(&truth, &est, 0.02).unwrap();
        assert_eq!(r.spearman, None);
        assert!((r.sign_accuracy - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn overlap_recovery_rejects_mismatched_channels() {
        let truth = truth_with_shared(uniform_shared(3, 0.1));
        let est = matrix_from(4, &[(0, 1, 0.1)]);
        assert!(matches!(
            score_overlap_recovery(&truth, &est, 0.02),
            Err(Error::UnknownChannel(_))
        ));
        let empty = matrix_from(3, &[]);
        assert!(matches!(
            score_overlap_recovery(&truth, &empty, 0.02),
            Err(Error::NoDefinedCells)
        ));
    }

    #[test]
    fn transfer_recovery_definitional_cases() {
        let planted: Vec<PlantedTransfer> = (0..4)
            .map(|k| PlantedTransfer {
                source_stream: format!("s00e{k:04}"),
                receiving_stream: format!("s01e{k:04}"),
                t_e: Minute(100 + 500 * k),
                moved_viewers: 400.0,
            })
            .collect();
        let event = |p: &PlantedTransfer| TransferEvent {
            source_stream: p.source_stream.clone(),
            receiving_stream: p.receiving_stream.clone(),
            t_e: p.t_e,
            pre_mean: 1000.0,
            post_peak: 1400,
            spike: 400.0,
            source_final_viewers: 800,
            source_stream_average: 900.0,
            efficiency: 0.5,
            over_unity: false,
            source_channel: "ch00".into(),
            receiving_channel: "ch01".into(),
        };
        let all: Vec<TransferEvent> = planted.iter().map(event).collect();
        let r = score_transfer_recovery(&planted, &all, 2);
        assert_eq!((r.precision, r.recall), (Some(1.0), Some(1.0)));

        let half: Vec<TransferEvent> = planted.iter().take(2).map(event).collect();
        let r = score_transfer_recovery(&planted, &half, 2);
        assert_eq!((r.precision, r.recall), (Some(1.0), Some(0.5)));

        let r = score_transfer_recovery(&planted, &[], 2);
        assert_eq!((r.precision, r.recall), (None, Some(0.0)));
    }

    #[test]
    fn scenario_files_parse_and_validate() {
        let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios");
        let mut names = Vec::new();
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.extension().is_some_and(|e| e == "json") {
                let text = std::fs::read_to_string(&path).unwrap();
                let cfg: SimConfig = serde_json::from_str(&text)
                    .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
                cfg.validate().unwrap_or_else(|e| panic!("{}: {e}", path.display()));
                names.push(path.file_stem().unwrap().to_string_lossy().into_owned());
            }
        }
        names.sort();
        assert_eq!(
            names,
            [
                "coordinated-schedule",
                "dilution-null",
                "dilution-signal",
                "null-ecosystem",
                "planted-overlap",
                "planted-transfer",
                "scale-smoke",
                "trend-ramp"
            ]
        );
    }

    #[test]
    fn sub_threshold_transfers_stay_hidden() {
        let mut cfg = base_config(2, 15);
        cfg.base_audience = vec![400.0, 400.0];
        cfg.noise.relative_sigma = 0.005;
        cfg.transfer_routing = TransferRouting {
            probability: 1.0,
            // 10% of ~400 viewers is ~40: below both the absolute and the
            // relative spike thresholds.
            moved_fraction: 0.1,
            ..TransferRouting::default()
        };
        let (panel, truth) = generate(&cfg).unwrap();
        assert!(!truth.transfers.is_empty());
        let scan = detect_transfers(&panel, &TransferParams::default()).unwrap();
        let rec = score_transfer_recovery(&truth.transfers, &scan.events, 2);
        assert!(rec.recall.unwrap() < 0.1, "recall {:?}", rec.recall);
    }
}
