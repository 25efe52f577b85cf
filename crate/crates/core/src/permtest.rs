//! Permutation test for schedule coordination.
//!
//! The statistic is the per-channel-pair count of concurrent-at-start
//! events: one for every (starting stream, live stream of another channel)
//! occurrence. The null redraws every stream start uniformly inside the
//! panel window, keeping per-channel stream counts and durations fixed, so
//! it destroys all timing structure including hour-of-day patterns.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::Panel;
use crate::time::Minute;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairStat {
    pub channel_a: String,
    pub channel_b: String,
    pub observed: u32,
    pub null_mean: f64,
    pub null_sd: f64,
    /// Add-one rule: (1 + #{null >= observed}) / (iterations + 1).
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermTestResult {
    /// All unordered channel pairs, sorted by ids.
    pub pairs: Vec<PairStat>,
    pub iterations: usize,
    pub seed: u64,
    pub alpha: f64,
    pub window: (Minute, Minute),
    pub n_pairs: usize,
    pub n_significant: usize,
    pub fraction_significant: f64,
}

/// Count concurrent-at-start occurrences per unordered channel pair via a
/// single time sweep. `intervals` are (start, end, channel) with inclusive
/// ends; the result is a flat upper-triangle n x n matrix indexed
/// `min * n + max`.
fn count_pairs(intervals: &[(i64, i64, u16)], n_channels: usize, out: &mut [u32]) {
    debug_assert_eq!(out.len(), n_channels * n_channels);
    out.fill(0);
    // priority 0: membership changes at this minute; priority 1: queries
    let mut events: Vec<(i64, u8, i8, u16)> = Vec::with_capacity(intervals.len() * 3);
    for &(start, end, ch) in intervals {
        events.push((start, 0, 1, ch));
        events.push((end + 1, 0, -1, ch));
        events.push((start, 1, 0, ch));
    }
    events.sort_unstable();
    let mut active = vec![0i32; n_channels];
    for (_, priority, delta, ch) in events {
        let ch = ch as usize;
        if priority == 0 {
            active[ch] += delta as i32;
        } else {
            for other in 0..n_channels {
                if other != ch && active[other] > 0 {
                    let (a, b) = (ch.min(other), ch.max(other));
                    out[a * n_channels + b] += active[other] as u32;
                }
            }
        }
    }
}

fn panel_intervals(panel: &Panel) -> Vec<(i64, i64, u16)> {
    panel
        .streams()
        .iter()
        .map(|s| (s.actual_start.0, s.end.0, s.channel as u16))
        .collect()
}

/// Observed concurrent-at-start counts for every unordered channel pair,
/// keyed by (id_a, id_b) with id_a < id_b.
pub fn observed_concurrent_at_start(panel: &Panel) -> Vec<((String, String), u32)> {
    let n = panel.channels().len();
    let mut counts = vec![0u32; n * n];
    count_pairs(&panel_intervals(panel), n, &mut counts);
    let mut out = Vec::new();
    for a in 0..n {
        for b in (a + 1)..n {
            out.push((
                (panel.channel(a as u32).id.clone(), panel.channel(b as u32).id.clone()),
                counts[a * n + b],
            ));
        }
    }
    out
}

/// Uniform-start permutation test over all channel pairs.
pub fn permutation_test(
    panel: &Panel,
    iterations: usize,
    seed: u64,
    alpha: f64,
) -> Result<PermTestResult> {
    if iterations < 100 {
        return Err(Error::ConfigInvalid(format!(
            "permutation test needs >= 100 iterations, got {iterations}"
        )));
    }
    if !(0.0 < alpha && alpha < 1.0) {
        return Err(Error::ConfigInvalid(format!("alpha {alpha} outside (0, 1)")));
    }
    let n = panel.channels().len();
    let (w0, w1) = panel
        .schedule_window()
        .ok_or_else(|| Error::DegenerateInput("panel has no streams".into()))?;
    let intervals = panel_intervals(panel);
    for &(start, end, _) in &intervals {
        if end - start > w1.0 - w0.0 {
            return Err(Error::DegenerateInput(format!(
                "stream of {} minutes exceeds the {}-minute window",
                end - start,
                w1.0 - w0.0
            )));
        }
    }

    let mut observed = vec![0u32; n * n];
    count_pairs(&intervals, n, &mut observed);

    // Per-iteration counts; integer accumulation keeps the reduction
    // deterministic under any thread schedule.
    let durations: Vec<i64> = intervals.iter().map(|(s, e, _)| e - s).collect();
    let null_counts: Vec<Vec<u32>> = (0..iterations)
        .into_par_iter()
        .map(|iter| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(iter as u64);
            let mut shuffled = Vec::with_capacity(intervals.len());
            for (k, &(_, _, ch)) in intervals.iter().enumerate() {
                let d = durations[k];
                let start = w0.0 + rng.random_range(0..=(w1.0 - w0.0 - d));
                shuffled.push((start, start + d, ch));
            }
            debug_assert!(shuffled
                .iter()
                .zip(&intervals)
                .all(|(s, o)| s.1 - s.0 == o.1 - o.0 && s.2 == o.2));
            let mut counts = vec![0u32; n * n];
            count_pairs(&shuffled, n, &mut counts);
            counts
        })
        .collect();

    let mut pairs = Vec::new();
    let mut n_significant = 0usize;
    for a in 0..n {
        for b in (a + 1)..n {
            let idx = a * n + b;
            let obs = observed[idx];
            let mut sum = 0u64;
            let mut sumsq = 0u64;
            let mut ge = 0usize;
            for counts in &null_counts {
                let c = counts[idx];
                sum += c as u64;
                sumsq += (c as u64) * (c as u64);
                if c >= obs {
                    ge += 1;
                }
            }
            let mean = sum as f64 / iterations as f64;
            let var = sumsq as f64 / iterations as f64 - mean * mean;
            let p_value = (1 + ge) as f64 / (iterations + 1) as f64;
            if p_value < alpha {
                n_significant += 1;
            }
            pairs.push(PairStat {
                channel_a: panel.channel(a as u32).id.clone(),
                channel_b: panel.channel(b as u32).id.clone(),
                observed: obs,
                null_mean: mean,
                null_sd: var.max(0.0).sqrt(),
                p_value,
            });
        }
    }
    let n_pairs = pairs.len();
    Ok(PermTestResult {
        pairs,
        iterations,
        seed,
        alpha,
        window: (w0, w1),
        n_pairs,
        n_significant,
        fraction_significant: if n_pairs == 0 {
            0.0
        } else {
            n_significant as f64 / n_pairs as f64
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::toy_panel;
    use crate::time::MINUTES_PER_DAY;

    fn counts_map(panel: &Panel) -> std::collections::BTreeMap<(String, String), u32> {
        observed_concurrent_at_start(panel).into_iter().collect()
    }

    use crate::panel::Panel;

    #[test]
    fn disjoint_schedules_are_zero() {
        let p = toy_panel(&[("a1", "cha", 0, 50), ("b1", "chb", 100, 150)], &[]);
        let m = counts_map(&p);
        assert_eq!(m[&("cha".into(), "chb".into())], 0);
    }

    #[test]
    fn two_starts_inside_one_stream() {
        let p = toy_panel(
            &[("a1", "cha", 10, 20), ("a2", "cha", 40, 50), ("b1", "chb", 0, 100)],
            &[],
        );
        assert_eq!(counts_map(&p)[&("cha".into(), "chb".into())], 2);
    }

    #[test]
    fn symmetric_fixture_counts_both_directions() {
        // b starts during a, then a starts during b
        let p = toy_panel(
            &[
                ("a1", "cha", 0, 30),
                ("b1", "chb", 10, 60), // starts during a1
                ("a2", "cha", 40, 80), // starts during b1
            ],
            &[],
        );
        assert_eq!(counts_map(&p)[&("cha".into(), "chb".into())], 2);
    }

    #[test]
    fn simultaneous_starts_count_twice() {
        let p = toy_panel(&[("a1", "cha", 10, 50), ("b1", "chb", 10, 60)], &[]);
        assert_eq!(counts_map(&p)[&("cha".into(), "chb".into())], 2);
    }

    #[test]
    fn same_channel_starts_do_not_count() {
        let p = toy_panel(&[("a1", "cha", 0, 50), ("a2", "cha", 10, 60)], &[]);
        assert!(counts_map(&p).is_empty());
    }

    #[test]
    fn multiple_live_streams_count_individually() {
        // two b streams live when a starts -> 2 occurrences
        let p = toy_panel(
            &[("b1", "chb", 0, 100), ("b2", "chb", 0, 100), ("a1", "cha", 50, 80)],
            &[],
        );
        assert_eq!(counts_map(&p)[&("cha".into(), "chb".into())], 2);
    }

    #[test]
    fn observed_counts_invariant_under_relabeling() {
        let p = toy_panel(
            &[("a1", "cha", 0, 30), ("b1", "chb", 10, 60), ("c1", "chc", 20, 40)],
            &[],
        );
        // swap channel names cha <-> chc; pair multiset must be preserved
        let q = toy_panel(
            &[("a1", "chc", 0, 30), ("b1", "chb", 10, 60), ("c1", "cha", 20, 40)],
            &[],
        );
        let mut mp: Vec<u32> = counts_map(&p).values().copied().collect();
        let mut mq: Vec<u32> = counts_map(&q).values().copied().collect();
        mp.sort_unstable();
        mq.sort_unstable();
        assert_eq!(mp, mq);
    }

    /// Channels a and b start within 2 minutes of each other every day;
    /// channel c streams at a fixed far-off hour.
    fn coordinated_panel(days: i64) -> Panel {
        let mut specs: Vec<(String, &str, i64, i64)> = Vec::new();
        for d in 0..days {
            let base = d * MINUTES_PER_DAY;
            let a0 = base + 600 + (d * 13 % 7);
            specs.push((format!("a{d}"), "cha", a0, a0 + 120));
            specs.push((format!("b{d}"), "chb", a0 + 2, a0 + 122));
            let c0 = base + 60 + (d * 17 % 11);
            specs.push((format!("c{d}"), "chc", c0, c0 + 120));
        }
        let refs: Vec<(&str, &str, i64, i64)> = specs
            .iter()
            .map(|(s, c, lo, hi)| (s.as_str(), *c, *lo, *hi))
            .collect();
        toy_panel(&refs, &[])
    }

    #[test]
    fn planted_coordination_is_significant() {
        let p = coordinated_panel(30);
        let r = permutation_test(&p, 500, 7, 0.01).unwrap();
        let ab = r
            .pairs
            .iter()
            .find(|x| x.channel_a == "cha" && x.channel_b == "chb")
            .unwrap();
        assert!(ab.p_value < 0.01, "p = {}", ab.p_value);
        assert!(ab.observed >= 30);
        assert!(ab.null_mean < ab.observed as f64);
        assert!(r.fraction_significant >= 1.0 / 3.0);
    }

    #[test]
    fn zero_observed_gives_p_one() {
        // a's and c's schedules never overlap, and window >> stream lengths
        let p = coordinated_panel(30);
        let r = permutation_test(&p, 100, 3, 0.01).unwrap();
        let ac = r
            .pairs
            .iter()
            .find(|x| x.channel_a == "cha" && x.channel_b == "chc")
            .unwrap();
        assert_eq!(ac.observed, 0);
        assert_eq!(ac.p_value, 1.0);
    }

    #[test]
    fn deterministic_given_seed() {
        let p = coordinated_panel(10);
        let a = permutation_test(&p, 200, 42, 0.01).unwrap();
        let b = permutation_test(&p, 200, 42, 0.01).unwrap();
        assert_eq!(a, b);
        let c = permutation_test(&p, 200, 43, 0.01).unwrap();
        assert_ne!(a.pairs, c.pairs);
    }

    #[test]
    fn p_weakly_decreases_with_observed_given_same_null() {
        // same channels, same durations, same window -> identical null draws;
        // only the observed starts differ (coordinated vs spread out)
        let days = 20;
        let coordinated = coordinated_panel(days);
        let mut spread: Vec<(String, &str, i64, i64)> = Vec::new();
        for d in 0..days {
            let base = d * MINUTES_PER_DAY;
            let a0 = base + 600 + (d * 13 % 7);
            spread.push((format!("a{d}"), "cha", a0, a0 + 120));
            // b moved far from a within the same day; duration preserved
            let b0 = base + 100;
            spread.push((format!("b{d}"), "chb", b0, b0 + 120));
            let c0 = base + 60 + (d * 17 % 11);
            spread.push((format!("c{d}"), "chc", c0, c0 + 120));
        }
        // pin the window to match: same min start and max end as coordinated
        let (w0, w1) = coordinated.schedule_window().unwrap();
        spread.push(("w0".to_string(), "chc", w0.0, w0.0 + 1));
        spread.push(("w1".to_string(), "chc", w1.0 - 1, w1.0));
        let refs: Vec<(&str, &str, i64, i64)> = spread
            .iter()
            .map(|(s, c, lo, hi)| (s.as_str(), *c, *lo, *hi))
            .collect();
        let spread_panel = toy_panel(&refs, &[]);

        let rc = permutation_test(&coordinated, 300, 5, 0.01).unwrap();
        let rs = permutation_test(&spread_panel, 300, 5, 0.01).unwrap();
        let pc = rc.pairs.iter().find(|x| x.channel_a == "cha" && x.channel_b == "chb").unwrap();
        let ps = rs.pairs.iter().find(|x| x.channel_a == "cha" && x.channel_b == "chb").unwrap();
        assert!(pc.observed > ps.observed);
        assert!(pc.p_value <= ps.p_value);
    }

    #[test]
    fn null_schedules_calibrate() {
        // panels drawn from the null itself should rarely be significant
        use rand::Rng;
        let mut total_pairs = 0usize;
        let mut total_sig = 0usize;
        for seed in [101u64, 202, 303] {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let window = 30 * MINUTES_PER_DAY;
            let mut specs: Vec<(String, String, i64, i64)> = Vec::new();
            for ch in 0..8 {
                for k in 0..25 {
                    let dur = 90 + (rng.random_range(0..60i64));
                    let start = rng.random_range(0..(window - dur));
                    specs.push((format!("s{ch}x{k}"), format!("ch{ch}"), start, start + dur));
                }
            }
            let refs: Vec<(&str, &str, i64, i64)> = specs
                .iter()
                .map(|(s, c, lo, hi)| (s.as_str(), c.as_str(), *lo, *hi))
                .collect();
            let p = toy_panel(&refs, &[]);
            let r = permutation_test(&p, 300, seed + 1, 0.01).unwrap();
            total_pairs += r.n_pairs;
            total_sig += r.n_significant;
        }
        let frac = total_sig as f64 / total_pairs as f64;
        assert!(frac <= 0.05, "false positive fraction {frac}");
    }

    #[test]
    fn config_validation() {
        let p = coordinated_panel(5);
        assert!(matches!(
            permutation_test(&p, 99, 1, 0.01),
            Err(Error::ConfigInvalid(_))
        ));
        assert!(matches!(
            permutation_test(&p, 100, 1, 0.0),
            Err(Error::ConfigInvalid(_))
        ));
    }
}
