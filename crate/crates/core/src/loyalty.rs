//! Per-channel loyalty components and the weighted composite.
//!
//! S (stability), R (competition resistance), P (post-peak retention) and
//! F (floor ratio) each land in [0, 1]; the composite is their weighted sum
//! with weights summing to 1. A channel missing any component gets no
//! composite: partial composites would not compare across channels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{ConcurrencyIndex, Panel};
use crate::stats::{coefficient_of_variation, mean, median, percentile};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoyaltyWeights {
    pub w_s: f64,
    pub w_r: f64,
    pub w_p: f64,
    pub w_f: f64,
}

impl Default for LoyaltyWeights {
    fn default() -> Self {
        LoyaltyWeights {
            w_s: 0.30,
            w_r: 0.25,
            w_p: 0.25,
            w_f: 0.20,
        }
    }
}

impl LoyaltyWeights {
    pub fn new(w_s: f64, w_r: f64, w_p: f64, w_f: f64) -> Result<Self> {
        let w = LoyaltyWeights { w_s, w_r, w_p, w_f };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let ws = [self.w_s, self.w_r, self.w_p, self.w_f];
        if ws.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(Error::ConfigInvalid(
                "loyalty weights must be non-negative".into(),
            ));
        }
        let sum: f64 = ws.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::ConfigInvalid(format!(
                "loyalty weights sum to {sum}, expected 1.0 within 1e-9"
            )));
        }
        Ok(())
    }
}

/// Competed/solo classification of every stream in the panel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StreamClass {
    /// Another channel's stream was live for more than the configured
    /// fraction of this stream's span.
    Competed,
    Solo,
}

/// Classify each stream (parallel to `panel.streams()`). A stream is
/// competed iff the fraction of its live minutes with at least one
/// other-channel stream live exceeds `competed_min_fraction`; the default
/// 0.0 therefore means "any overlap at all".
pub fn classify_streams(panel: &Panel, competed_min_fraction: f64) -> Vec<StreamClass> {
    let index = ConcurrencyIndex::build(panel);
    panel
        .streams()
        .iter()
        .map(|s| {
            let lo = s.actual_start;
            let hi = s.end + 1;
            let mut competed = 0i64;
            for (seg_lo, seg_hi, live) in index.segments_overlapping(lo, hi) {
                let other = live
                    .iter()
                    .any(|&i| panel.stream(i).channel != s.channel);
                if other {
                    competed += seg_hi - seg_lo;
                }
            }
            let frac = competed as f64 / (hi - lo) as f64;
            if frac > competed_min_fraction {
                StreamClass::Competed
            } else {
                StreamClass::Solo
            }
        })
        .collect()
}

/// S = 1 - clip(CV, 0, 2) / 2 over the channel's stream averages.
pub fn stability(stream_averages: &[f64]) -> Result<f64> {
    let cv = coefficient_of_variation(stream_averages)?;
    Ok(1.0 - cv.clamp(0.0, 2.0) / 2.0)
}

/// R = clip(mean competed stream-average / mean solo stream-average, 0, 1).
pub fn competition_resistance(
    panel: &Panel,
    channel: u32,
    classification: &[StreamClass],
) -> Result<f64> {
    let mut competed = Vec::new();
    let mut solo = Vec::new();
    for (i, s) in panel.streams().iter().enumerate() {
        if s.channel != channel {
            continue;
        }
        let Ok(avg) = panel.stream_average(i as u32) else {
            continue;
        };
        match classification[i] {
            StreamClass::Competed => competed.push(avg),
            StreamClass::Solo => solo.push(avg),
        }
    }
    let channel_id = &panel.channel(channel).id;
    let competed_mean = mean(&competed).ok_or_else(|| Error::InsufficientClasses {
        channel: channel_id.clone(),
        missing: "competed".into(),
    })?;
    let solo_mean = mean(&solo).ok_or_else(|| Error::InsufficientClasses {
        channel: channel_id.clone(),
        missing: "solo".into(),
    })?;
    if solo_mean <= 0.0 {
        return Err(Error::DegenerateInput(format!(
            "channel `{channel_id}` solo mean is {solo_mean}"
        )));
    }
    Ok((competed_mean / solo_mean).clamp(0.0, 1.0))
}

/// P = median over eligible streams of viewers(midpoint) / viewers(peak).
/// The peak is the earliest maximum; the midpoint is halfway (floored) from
/// peak to the last observed minute; a gap at the midpoint falls forward to
/// the nearest later observation. Streams whose peak sits on the final
/// observed minute (nothing after it) or whose peak is 0 are ineligible.
pub fn post_peak_retention(panel: &Panel, channel: u32) -> Result<f64> {
    let mut retentions = Vec::new();
    for (i, s) in panel.streams().iter().enumerate() {
        if s.channel != channel {
            continue;
        }
        let obs = panel.stream_observations(i as u32);
        if obs.is_empty() {
            continue;
        }
        let (peak_pos, &(t_p, peak)) = obs
            .iter()
            .enumerate()
            .max_by(|(ia, (_, va)), (ib, (_, vb))| va.cmp(vb).then(ib.cmp(ia)))
            .expect("nonempty");
        let (t_end, _) = *obs.last().expect("nonempty");
        if t_p >= t_end || peak == 0 {
            continue;
        }
        let t_m = t_p + (t_end - t_p) / 2;
        // nearest observation at or after the midpoint
        let at_or_after = obs[peak_pos..].partition_point(|(m, _)| *m < t_m) + peak_pos;
        let Some(&(_, v_m)) = obs.get(at_or_after) else {
            continue;
        };
        retentions.push(v_m as f64 / peak as f64);
    }
    if retentions.is_empty() {
        return Err(Error::NoEligibleStreams(panel.channel(channel).id.clone()));
    }
    median(&retentions)
}

/// F = clip(p10 of stream averages / mean of stream averages, 0, 1).
pub fn floor_ratio(stream_averages: &[f64]) -> Result<f64> {
    if stream_averages.len() < 2 {
        return Err(Error::DegenerateInput(format!(
            "floor ratio needs >= 2 streams, got {}",
            stream_averages.len()
        )));
    }
    let m = mean(stream_averages).expect("nonempty");
    if m <= 0.0 {
        return Err(Error::DegenerateInput(format!(
            "floor ratio needs mean > 0, got {m}"
        )));
    }
    let p10 = percentile(stream_averages, 10.0)?;
    Ok((p10 / m).clamp(0.0, 1.0))
}

/// L = w_s S + w_r R + w_p P + w_f F.
pub fn composite(s: f64, r: f64, p: f64, f: f64, weights: &LoyaltyWeights) -> Result<f64> {
    weights.validate()?;
    Ok(weights.w_s * s + weights.w_r * r + weights.w_p * p + weights.w_f * f)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoyaltyComponents {
    pub channel: String,
    pub s: Option<f64>,
    pub r: Option<f64>,
    pub p: Option<f64>,
    pub f: Option<f64>,
    /// Defined only when all four components are.
    pub l: Option<f64>,
    pub n_streams: usize,
    /// Streams with at least one observation (the S/R/F population).
    pub n_streams_with_obs: usize,
    pub n_competed: usize,
    pub n_solo: usize,
    /// Streams contributing to P.
    pub n_retention_eligible: usize,
}

/// All-channel loyalty table, channels in panel (sorted id) order.
/// Components that fail their preconditions are left undefined rather than
/// failing the whole table.
pub fn loyalty_table(
    panel: &Panel,
    weights: &LoyaltyWeights,
    competed_min_fraction: f64,
) -> Result<Vec<LoyaltyComponents>> {
    weights.validate()?;
    if !(0.0..=1.0).contains(&competed_min_fraction) {
        return Err(Error::ConfigInvalid(format!(
            "competed-min-fraction {competed_min_fraction} outside [0, 1]"
        )));
    }
    let classes = classify_streams(panel, competed_min_fraction);
    let mut rows = Vec::new();
    for (c_idx, ch) in panel.channels().iter().enumerate() {
        let c_idx = c_idx as u32;
        let mut averages = Vec::new();
        let mut n_streams = 0usize;
        let mut n_competed = 0usize;
        let mut n_solo = 0usize;
        for (i, s) in panel.streams().iter().enumerate() {
            if s.channel != c_idx {
                continue;
            }
            n_streams += 1;
            if let Ok(avg) = panel.stream_average(i as u32) {
                averages.push(avg);
                match classes[i] {
                    StreamClass::Competed => n_competed += 1,
                    StreamClass::Solo => n_solo += 1,
                }
            }
        }
        let s = stability(&averages).ok();
        let r = competition_resistance(panel, c_idx, &classes).ok();
        let (p, n_eligible) = match post_peak_retention_with_count(panel, c_idx) {
            Ok((p, n)) => (Some(p), n),
            Err(_) => (None, 0),
        };
        let f = floor_ratio(&averages).ok();
        let l = match (s, r, p, f) {
            (Some(s), Some(r), Some(p), Some(f)) => Some(composite(s, r, p, f, weights)?),
            _ => None,
        };
        rows.push(LoyaltyComponents {
            channel: ch.id.clone(),
            s,
            r,
            p,
            f,
            l,
            n_streams,
            n_streams_with_obs: averages.len(),
            n_competed,
            n_solo,
            n_retention_eligible: n_eligible,
        });
    }
    Ok(rows)
}

fn post_peak_retention_with_count(panel: &Panel, channel: u32) -> Result<(f64, usize)> {
    // mirrors post_peak_retention but reports how many streams contributed
    let mut retentions = Vec::new();
    for (i, s) in panel.streams().iter().enumerate() {
        if s.channel != channel {
            continue;
        }
        let obs = panel.stream_observations(i as u32);
        if obs.is_empty() {
            continue;
        }
        let (peak_pos, &(t_p, peak)) = obs
            .iter()
            .enumerate()
            .max_by(|(ia, (_, va)), (ib, (_, vb))| va.cmp(vb).then(ib.cmp(ia)))
            .expect("nonempty");
        let (t_end, _) = *obs.last().expect("nonempty");
        if t_p >= t_end || peak == 0 {
            continue;
        }
        let t_m = t_p + (t_end - t_p) / 2;
        let at_or_after = obs[peak_pos..].partition_point(|(m, _)| *m < t_m) + peak_pos;
        let Some(&(_, v_m)) = obs.get(at_or_after) else {
            continue;
        };
        retentions.push(v_m as f64 / peak as f64);
    }
    if retentions.is_empty() {
        return Err(Error::NoEligibleStreams(panel.channel(channel).id.clone()));
    }
    Ok((median(&retentions)?, retentions.len()))
}
