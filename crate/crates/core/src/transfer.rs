//! End-of-stream viewer transfer detection.
//!
//! When a stream ends at t_e, a concurrent stream of another channel that
//! gains an audience spike immediately afterwards is a transfer candidate.
//! A candidate becomes an event only if all four thresholds pass:
//!
//! 1. spike > rel_spike_threshold x receiver pre-event mean,
//! 2. spike > abs_spike_threshold,
//! 3. spike > source_fraction_threshold x source stream-average,
//! 4. source final viewers >= min_final_viewers.
//!
//! Efficiency is spike / source final viewers; values above 1.0 are kept
//! and drive the false-positive estimate rather than being suppressed.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{ConcurrencyIndex, Panel};
use crate::stats::{mean, percentile_sorted};
use crate::time::Minute;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransferParams {
    pub pre_window_minutes: i64,
    pub post_window_minutes: i64,
    pub span_guard_minutes: i64,
    pub rel_spike_threshold: f64,
    pub abs_spike_threshold: f64,
    pub source_fraction_threshold: f64,
    pub min_final_viewers: u32,
}

impl Default for TransferParams {
    fn default() -> Self {
        TransferParams {
            pre_window_minutes: 3,
            post_window_minutes: 5,
            span_guard_minutes: 5,
            rel_spike_threshold: 0.10,
            abs_spike_threshold: 100.0,
            source_fraction_threshold: 0.05,
            min_final_viewers: 200,
        }
    }
}

impl TransferParams {
    pub fn validate(&self) -> Result<()> {
        if self.pre_window_minutes < 1 || self.post_window_minutes < 1 {
            return Err(Error::ConfigInvalid(
                "transfer windows must be >= 1 minute".into(),
            ));
        }
        if self.span_guard_minutes < 1 {
            return Err(Error::ConfigInvalid("span guard must be >= 1 minute".into()));
        }
        if self.rel_spike_threshold <= 0.0
            || self.abs_spike_threshold <= 0.0
            || self.source_fraction_threshold <= 0.0
            || self.min_final_viewers == 0
        {
            return Err(Error::ConfigInvalid(
                "transfer thresholds must be > 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferEvent {
    pub source_stream: String,
    pub receiving_stream: String,
    pub t_e: Minute,
    pub pre_mean: f64,
    pub post_peak: u32,
    pub spike: f64,
    pub source_final_viewers: u32,
    pub source_stream_average: f64,
    pub efficiency: f64,
    pub over_unity: bool,
    /// Channel ids, carried for pair statistics and report emission.
    pub source_channel: String,
    pub receiving_channel: String,
}

/// Candidates dropped before threshold evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransferDiagnostics {
    pub sources_scanned: usize,
    pub candidate_receivers: usize,
    pub skipped_source_no_observations: usize,
    pub skipped_empty_pre_window: usize,
    pub skipped_empty_post_window: usize,
    pub rejected_by_thresholds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferScan {
    pub events: Vec<TransferEvent>,
    pub diagnostics: TransferDiagnostics,
}

/// Scan every stream ending against every qualifying receiver. Receivers
/// must belong to a different channel and span `[t_e - guard, t_e + guard]`.
/// Events are ordered by (t_e, source id, receiver id).
pub fn detect_transfers(panel: &Panel, params: &TransferParams) -> Result<TransferScan> {
    params.validate()?;
    let index = ConcurrencyIndex::build(panel);
    let guard = params.span_guard_minutes;
    let mut events = Vec::new();
    let mut diag = TransferDiagnostics::default();

    for (s_idx, source) in panel.streams().iter().enumerate() {
        diag.sources_scanned += 1;
        let t_e = source.end;
        let final_viewers = match panel.final_viewers(s_idx as u32) {
            Some((_, v)) => v,
            None => {
                diag.skipped_source_no_observations += 1;
                continue;
            }
        };
        let source_avg = panel
            .stream_average(s_idx as u32)
            .expect("source has observations");

        for &r_idx in index.live_at(t_e) {
            let recv = panel.stream(r_idx);
            if recv.channel == source.channel {
                continue;
            }
            if !(recv.actual_start <= t_e - guard && recv.end >= t_e + guard) {
                continue;
            }
            diag.candidate_receivers += 1;
            let pre_mean = match panel.window_mean(r_idx, t_e - params.pre_window_minutes, t_e) {
                Ok(m) => m,
                Err(_) => {
                    diag.skipped_empty_pre_window += 1;
                    continue;
                }
            };
            let post_peak = match panel.window_peak(r_idx, t_e, t_e + params.post_window_minutes) {
                Ok(p) => p,
                Err(_) => {
                    diag.skipped_empty_post_window += 1;
                    continue;
                }
            };
            let spike = post_peak as f64 - pre_mean;
            let passes = spike > params.rel_spike_threshold * pre_mean
                && spike > params.abs_spike_threshold
                && spike > params.source_fraction_threshold * source_avg
                && final_viewers >= params.min_final_viewers;
            if !passes {
                diag.rejected_by_thresholds += 1;
                continue;
            }
            let efficiency = spike / final_viewers as f64;
            events.push(TransferEvent {
                source_stream: source.stream_id.clone(),
                receiving_stream: recv.stream_id.clone(),
                t_e,
                pre_mean,
                post_peak,
                spike,
                source_final_viewers: final_viewers,
                source_stream_average: source_avg,
                efficiency,
                over_unity: efficiency > 1.0,
                source_channel: panel.channel(source.channel).id.clone(),
                receiving_channel: panel.channel(recv.channel).id.clone(),
            });
        }
    }
    events.sort_by(|a, b| {
        (a.t_e, &a.source_stream, &a.receiving_stream)
            .cmp(&(b.t_e, &b.source_stream, &b.receiving_stream))
    });
    Ok(TransferScan {
        events,
        diagnostics: diag,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferSummary {
    pub total_events: usize,
    /// Fraction of events with efficiency > 1.0 (physically impossible, so
    /// an upper bound on contamination).
    pub fp_estimate: f64,
    /// Mean spike over plausible (efficiency <= 1.0) events.
    pub mean_spike_plausible: Option<f64>,
    /// Median/IQR of efficiency over plausible events only.
    pub median_efficiency: Option<f64>,
    pub iqr_efficiency: Option<(f64, f64)>,
    /// (source channel, receiving channel) -> event count, ordered pairs.
    pub pair_counts: BTreeMap<(String, String), usize>,
    /// Share of events held by the 10 most frequent ordered pairs.
    pub top10_share: f64,
}

pub fn summarize_transfers(events: &[TransferEvent]) -> TransferSummary {
    let total = events.len();
    let mut pair_counts: BTreeMap<(String, String), usize> = BTreeMap::new();
    for e in events {
        *pair_counts
            .entry((e.source_channel.clone(), e.receiving_channel.clone()))
            .or_insert(0) += 1;
    }
    let mut by_freq: Vec<(&(String, String), &usize)> = pair_counts.iter().collect();
    // most frequent first; ties broken by pair id for determinism
    by_freq.sort_by(|a, b| b.1.cmp(a.1).then_with(|| a.0.cmp(b.0)));
    let top10: usize = by_freq.iter().take(10).map(|(_, c)| **c).sum();

    let over_unity = events.iter().filter(|e| e.over_unity).count();
    let mut plausible_eff: Vec<f64> = events
        .iter()
        .filter(|e| e.efficiency <= 1.0)
        .map(|e| e.efficiency)
        .collect();
    plausible_eff.sort_by(|a, b| a.total_cmp(b));
    let plausible_spikes: Vec<f64> = events
        .iter()
        .filter(|e| e.efficiency <= 1.0)
        .map(|e| e.spike)
        .collect();

    TransferSummary {
        total_events: total,
        fp_estimate: if total == 0 {
            0.0
        } else {
            over_unity as f64 / total as f64
        },
        mean_spike_plausible: mean(&plausible_spikes),
        median_efficiency: if plausible_eff.is_empty() {
            None
        } else {
            Some(percentile_sorted(&plausible_eff, 50.0))
        },
        iqr_efficiency: if plausible_eff.is_empty() {
            None
        } else {
            Some((
                percentile_sorted(&plausible_eff, 25.0),
                percentile_sorted(&plausible_eff, 75.0),
            ))
        },
        pair_counts,
        top10_share: if total == 0 {
            0.0
        } else {
            top10 as f64 / total as f64
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::toy_panel;
    use crate::panel::Panel;

    /// Source ends at t_e = 100 with controllable average/final; receiver
    /// spans the guard window with controllable pre level and post peak.
    fn fixture(
        src_avg_pair: (u32, u32), // (earlier obs, final obs): avg = mean, final = 2nd
        pre_level: u32,
        post_peak: u32,
    ) -> Panel {
        let t0 = 100i64;
        let specs = [("src", "cha", 40i64, t0), ("rcv", "chb", 60, 180)];
        let mut obs: Vec<(&str, i64, u32)> = vec![
            ("src", 99, src_avg_pair.0),
            ("src", 100, src_avg_pair.1),
        ];
        for m in 97..100 {
            obs.push(("rcv", m, pre_level));
        }
        obs.push(("rcv", 100, pre_level));
        obs.push(("rcv", 101, post_peak));
        obs.push(("rcv", 102, pre_level));
        toy_panel(&specs, &obs)
    }

    #[test]
    fn textbook_event_passes_all_four_predicates() {
        // source avg 4000, final 5000; pre 1000, peak 3500 -> spike 2500
        let p = fixture((3000, 5000), 1000, 3500);
        let scan = detect_transfers(&p, &TransferParams::default()).unwrap();
        assert_eq!(scan.events.len(), 1);
        let e = &scan.events[0];
        assert_eq!(e.source_stream, "src");
        assert_eq!(e.receiving_stream, "rcv");
        assert_eq!(e.t_e, Minute(100));
        assert_eq!(e.pre_mean, 1000.0);
        assert_eq!(e.post_peak, 3500);
        assert_eq!(e.spike, 2500.0);
        assert_eq!(e.source_final_viewers, 5000);
        assert_eq!(e.source_stream_average, 4000.0);
        assert_eq!(e.efficiency, 0.5);
        assert!(!e.over_unity);
        assert_eq!(e.source_channel, "cha");
        assert_eq!(e.receiving_channel, "chb");
    }

    #[test]
    fn flat_receiver_is_null_case() {
        let p = fixture((4000, 5000), 1000, 1000);
        let scan = detect_transfers(&p, &TransferParams::default()).unwrap();
        assert!(scan.events.is_empty());
        assert_eq!(scan.diagnostics.rejected_by_thresholds, 1);
    }

    #[test]
    fn knockout_each_threshold_individually() {
        // each fixture fails exactly one predicate
        let cases: [(Panel, &str); 4] = [
            // abs: spike 90 > rel 0.10*500=50, > frac 0.05*1000=50, final 250 ok; 90 < 100
            (fixture((1750, 250), 500, 590), "abs"),
            // rel: spike 300 < 0.10*5000=500; > abs 100, > frac 0.05*4000=200, final ok
            (fixture((3000, 5000), 5000, 5300), "rel"),
            // src-frac: spike 2500 < 0.05*60000=3000; rel 2.5 ok, abs ok, final ok
            (fixture((50000, 70000), 1000, 3500), "src-frac"),
            // min-final: final 150 < 200; spike 2500 passes the other three
            (fixture((7850, 150), 1000, 3500), "min-final"),
        ];
        for (panel, which) in &cases {
            let scan = detect_transfers(panel, &TransferParams::default()).unwrap();
            assert!(scan.events.is_empty(), "{which} knockout leaked an event");
            assert_eq!(scan.diagnostics.rejected_by_thresholds, 1, "{which}");
        }
        // sanity: relaxing the targeted threshold admits each knockout
        let relax = [
            TransferParams { abs_spike_threshold: 80.0, ..Default::default() },
            TransferParams { rel_spike_threshold: 0.05, ..Default::default() },
            TransferParams { source_fraction_threshold: 0.04, ..Default::default() },
            TransferParams { min_final_viewers: 150, ..Default::default() },
        ];
        for ((panel, which), params) in cases.iter().zip(&relax) {
            let scan = detect_transfers(panel, params).unwrap();
            assert_eq!(scan.events.len(), 1, "{which} should pass when relaxed");
        }
    }

    #[test]
    fn same_channel_receiver_excluded() {
        let specs = [("src", "cha", 40i64, 100i64), ("rcv", "cha", 60, 180)];
        let mut obs: Vec<(&str, i64, u32)> =
            vec![("src", 99, 3000), ("src", 100, 5000)];
        for m in 97..=100 {
            obs.push(("rcv", m, 1000));
        }
        obs.push(("rcv", 101, 3500));
        let p = toy_panel(&specs, &obs);
        let scan = detect_transfers(&p, &TransferParams::default()).unwrap();
        assert!(scan.events.is_empty());
        assert_eq!(scan.diagnostics.candidate_receivers, 0);
    }

    #[test]
    fn span_guard_excludes_short_receivers() {
        // receiver ends at t_e + 4 < t_e + 5
        let specs = [("src", "cha", 40i64, 100i64), ("rcv", "chb", 60, 104)];
        let mut obs: Vec<(&str, i64, u32)> =
            vec![("src", 99, 3000), ("src", 100, 5000)];
        for m in 97..=100 {
            obs.push(("rcv", m, 1000));
        }
        obs.push(("rcv", 101, 3500));
        let p = toy_panel(&specs, &obs);
        assert!(detect_transfers(&p, &TransferParams::default())
            .unwrap()
            .events
            .is_empty());
        // receiver starting at t_e - 4 also fails
        let specs = [("src", "cha", 40i64, 100i64), ("rcv", "chb", 96, 180)];
        let mut obs: Vec<(&str, i64, u32)> =
            vec![("src", 99, 3000), ("src", 100, 5000)];
        for m in 97..=100 {
            obs.push(("rcv", m, 1000));
        }
        obs.push(("rcv", 101, 3500));
        let p = toy_panel(&specs, &obs);
        assert!(detect_transfers(&p, &TransferParams::default())
            .unwrap()
            .events
            .is_empty());
    }

    #[test]
    fn one_ending_can_feed_multiple_receivers() {
        let specs = [
            ("src", "cha", 40i64, 100i64),
            ("r1", "chb", 60, 180),
            ("r2", "chc", 60, 180),
        ];
        let mut obs: Vec<(&str, i64, u32)> =
            vec![("src", 99, 3000), ("src", 100, 5000)];
        for r in ["r1", "r2"] {
            for m in 97..=100 {
                obs.push((r, m, 1000));
            }
            obs.push((r, 101, 3500));
        }
        let p = toy_panel(&specs, &obs);
        let scan = detect_transfers(&p, &TransferParams::default()).unwrap();
        assert_eq!(scan.events.len(), 2);
        assert_eq!(scan.events[0].receiving_stream, "r1");
        assert_eq!(scan.events[1].receiving_stream, "r2");
    }

    #[test]
    fn empty_windows_are_counted_not_fatal() {
        // receiver qualifies but has no pre-window observations
        let specs = [("src", "cha", 40i64, 100i64), ("rcv", "chb", 60, 180)];
        let obs: Vec<(&str, i64, u32)> = vec![
            ("src", 99, 3000),
            ("src", 100, 5000),
            ("rcv", 60, 1000),
            ("rcv", 101, 3500),
        ];
        let p = toy_panel(&specs, &obs);
        let scan = detect_transfers(&p, &TransferParams::default()).unwrap();
        assert!(scan.events.is_empty());
        assert_eq!(scan.diagnostics.skipped_empty_pre_window, 1);
        // source with no observations is skipped
        let p2 = toy_panel(&specs, &[("rcv", 98, 1000), ("rcv", 101, 3500)]);
        let scan2 = detect_transfers(&p2, &TransferParams::default()).unwrap();
        assert_eq!(scan2.diagnostics.skipped_source_no_observations, 1);
        // both streams end; rcv's ending also scans src as a receiver and src
        // fails the span guard, so no extra skip is recorded for it
        assert!(scan2.events.is_empty());
    }

    #[test]
    fn emitted_events_reassert_their_predicates() {
        let p = fixture((3000, 5000), 1000, 3500);
        let params = TransferParams::default();
        for e in detect_transfers(&p, &params).unwrap().events {
            assert!(e.spike > 0.0);
            assert!(e.spike > params.rel_spike_threshold * e.pre_mean);
            assert!(e.spike > params.abs_spike_threshold);
            assert!(e.spike > params.source_fraction_threshold * e.source_stream_average);
            assert!(e.source_final_viewers >= params.min_final_viewers);
            assert_eq!(e.efficiency, e.spike / e.source_final_viewers as f64);
            assert_eq!(e.over_unity, e.efficiency > 1.0);
        }
    }

    #[test]
    fn tightening_thresholds_is_monotone() {
        let p = fixture((3000, 5000), 1000, 3500);
        let base = TransferParams::default();
        let n0 = detect_transfers(&p, &base).unwrap().events.len();
        for tightened in [
            TransferParams { rel_spike_threshold: 5.0, ..base },
            TransferParams { abs_spike_threshold: 3000.0, ..base },
            TransferParams { source_fraction_threshold: 0.9, ..base },
            TransferParams { min_final_viewers: 6000, ..base },
        ] {
            let n = detect_transfers(&p, &tightened).unwrap().events.len();
            assert!(n <= n0);
        }
    }

    #[test]
    fn joint_scale_equivariance() {
        let p1 = fixture((3000, 5000), 1000, 3500);
        let p4 = fixture((12000, 20000), 4000, 14000);
        let base = TransferParams::default();
        let scaled = TransferParams {
            abs_spike_threshold: base.abs_spike_threshold * 4.0,
            min_final_viewers: base.min_final_viewers * 4,
            ..base
        };
        let e1 = detect_transfers(&p1, &base).unwrap().events;
        let e4 = detect_transfers(&p4, &scaled).unwrap().events;
        assert_eq!(e1.len(), e4.len());
        for (a, b) in e1.iter().zip(&e4) {
            assert_eq!(a.source_stream, b.source_stream);
            assert_eq!(a.receiving_stream, b.receiving_stream);
            assert_eq!(a.efficiency, b.efficiency); // spike and final both scale by 4
        }
        // but with unscaled absolute thresholds, scaling *down* loses events
        let small = fixture((30, 50), 10, 35);
        assert!(detect_transfers(&small, &base).unwrap().events.is_empty());
    }

    #[test]
    fn rejects_invalid_params() {
        let p = fixture((3000, 5000), 1000, 3500);
        for bad in [
            TransferParams { pre_window_minutes: 0, ..Default::default() },
            TransferParams { rel_spike_threshold: 0.0, ..Default::default() },
            TransferParams { min_final_viewers: 0, ..Default::default() },
        ] {
            assert!(matches!(
                detect_transfers(&p, &bad),
                Err(Error::ConfigInvalid(_))
            ));
        }
    }

    fn mk_event(src_ch: &str, rcv_ch: &str, efficiency: f64, spike: f64) -> TransferEvent {
        TransferEvent {
            source_stream: format!("{src_ch}-s"),
            receiving_stream: format!("{rcv_ch}-s"),
            t_e: Minute(0),
            pre_mean: 100.0,
            post_peak: 100 + spike as u32,
            spike,
            source_final_viewers: 1000,
            source_stream_average: 900.0,
            efficiency,
            over_unity: efficiency > 1.0,
            source_channel: src_ch.to_string(),
            receiving_channel: rcv_ch.to_string(),
        }
    }

    #[test]
    fn summary_single_event() {
        let s = summarize_transfers(&[mk_event("a", "b", 0.5, 500.0)]);
        assert_eq!(s.total_events, 1);
        assert_eq!(s.fp_estimate, 0.0);
        assert_eq!(s.median_efficiency, Some(0.5));
        assert_eq!(s.top10_share, 1.0);
        assert_eq!(s.pair_counts[&("a".to_string(), "b".to_string())], 1);
    }

    #[test]
    fn summary_filters_over_unity_from_median() {
        let events = vec![
            mk_event("a", "b", 0.4, 400.0),
            mk_event("a", "c", 0.5, 500.0),
            mk_event("b", "c", 1.2, 1200.0),
        ];
        let s = summarize_transfers(&events);
        assert!((s.fp_estimate - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(s.median_efficiency, Some(0.45));
        assert_eq!(s.mean_spike_plausible, Some(450.0));
        let (lo, hi) = s.iqr_efficiency.unwrap();
        assert!(lo <= 0.45 && 0.45 <= hi);
    }

    #[test]
    fn summary_top10_share_hand_count() {
        // 20 pairs: 10 pairs with 8 events each, 10 with 2 each -> 80/100
        let mut events = Vec::new();
        for p in 0..10 {
            for _ in 0..8 {
                events.push(mk_event(&format!("hot{p}"), "x", 0.5, 500.0));
            }
        }
        for p in 0..10 {
            for _ in 0..2 {
                events.push(mk_event(&format!("cold{p}"), "x", 0.5, 500.0));
            }
        }
        let s = summarize_transfers(&events);
        assert_eq!(s.total_events, 100);
        assert!((s.top10_share - 0.80).abs() < 1e-15);
    }

    #[test]
    fn summary_empty_input() {
        let s = summarize_transfers(&[]);
        assert_eq!(s.total_events, 0);
        assert_eq!(s.fp_estimate, 0.0);
        assert_eq!(s.median_efficiency, None);
        assert_eq!(s.iqr_efficiency, None);
        assert_eq!(s.mean_spike_plausible, None);
        assert_eq!(s.top10_share, 0.0);
    }

    #[test]
    fn summary_iqr_brackets_median() {
        let events: Vec<TransferEvent> = (1..=9)
            .map(|i| mk_event("a", "b", i as f64 / 10.0, i as f64 * 100.0))
            .collect();
        let s = summarize_transfers(&events);
        let med = s.median_efficiency.unwrap();
        let (lo, hi) = s.iqr_efficiency.unwrap();
        assert!(lo <= med && med <= hi);
        assert_eq!(med, 0.5);
        assert_eq!(lo, 0.3);
        assert_eq!(hi, 0.7);
    }
}
