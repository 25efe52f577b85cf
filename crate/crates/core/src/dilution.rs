//! Concurrency dilution: how per-stream audiences shrink as more scoped
//! streams are live at once.
//!
//! The correlation unit is the (minute, stream) observation pair, where k
//! counts scoped streams live at that minute (k = 1 means solo, the stream
//! itself included). Raw totals rise with k because both track hour-of-day
//! demand, so the headline estimate is the Spearman correlation of
//! hour-residualized k against hour-residualized per-stream viewers, with a
//! day-level block bootstrap interval that re-residualizes every replicate.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{ConcurrencyIndex, Panel};
use crate::stats::{block_bootstrap_ci, pearson, spearman_rho, BootstrapCI};
use crate::time::Minute;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketRow {
    pub k: u32,
    /// (minute, stream) samples at this concurrency.
    pub n_samples: usize,
    pub per_stream_mean: f64,
    /// Mean over minutes at this concurrency of summed scoped viewers.
    pub total_mean: f64,
    /// Distinct minutes at this concurrency (with >= 1 observation).
    pub n_minutes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DilutionBuckets {
    /// Ascending by k; k values without samples are absent.
    pub rows: Vec<BucketRow>,
    pub total_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DilutionResult {
    pub buckets: DilutionBuckets,
    pub rho_total_vs_k: f64,
    pub rho_residual: f64,
    pub residual_ci: BootstrapCI,
    pub n_samples: usize,
    pub n_days: usize,
}

/// Stream indexes belonging to the scope channels. Errors on unknown
/// channels or an empty scope.
fn scoped_streams(panel: &Panel, channel_scope: &[String]) -> Result<Vec<u32>> {
    if channel_scope.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut chans = Vec::new();
    for id in channel_scope {
        chans.push(
            panel
                .channel_index(id)
                .ok_or_else(|| Error::UnknownChannel(id.clone()))?,
        );
    }
    Ok(panel
        .streams()
        .iter()
        .enumerate()
        .filter(|(_, s)| chans.contains(&s.channel))
        .map(|(i, _)| i as u32)
        .collect())
}

/// One (minute, stream) observation with its scope concurrency.
#[derive(Debug, Clone, Copy)]
struct Sample {
    minute: Minute,
    k: u32,
    viewers: u32,
}

fn collect_samples(panel: &Panel, channel_scope: &[String]) -> Result<Vec<Sample>> {
    let streams = scoped_streams(panel, channel_scope)?;
    let in_scope: Vec<bool> = {
        let mut v = vec![false; panel.streams().len()];
        for &s in &streams {
            v[s as usize] = true;
        }
        v
    };
    let index = ConcurrencyIndex::build_filtered(panel, |i| in_scope[i as usize]);
    let mut samples = Vec::new();
    for &s in &streams {
        for &(m, v) in panel.stream_observations(s) {
            samples.push(Sample {
                minute: m,
                k: index.count_at(m) as u32,
                viewers: v,
            });
        }
    }
    samples.sort_by_key(|s| s.minute);
    Ok(samples)
}

/// Per-minute (k, total scoped viewers) over minutes with >= 1 observation,
/// ascending by minute.
fn per_minute_totals(samples: &[Sample]) -> Vec<(Minute, u32, u64)> {
    let mut out: Vec<(Minute, u32, u64)> = Vec::new();
    for s in samples {
        match out.last_mut() {
            Some(last) if last.0 == s.minute => last.2 += s.viewers as u64,
            _ => out.push((s.minute, s.k, s.viewers as u64)),
        }
    }
    out
}

/// Viewership by concurrency bucket over the scoped (minute, stream) samples.
pub fn dilution_buckets(panel: &Panel, channel_scope: &[String]) -> Result<DilutionBuckets> {
    let samples = collect_samples(panel, channel_scope)?;
    let mut per_k: HashMap<u32, (usize, f64)> = HashMap::new();
    for s in &samples {
        let e = per_k.entry(s.k).or_insert((0, 0.0));
        e.0 += 1;
        e.1 += s.viewers as f64;
    }
    let mut per_k_minutes: HashMap<u32, (usize, f64)> = HashMap::new();
    for (_, k, total) in per_minute_totals(&samples) {
        let e = per_k_minutes.entry(k).or_insert((0, 0.0));
        e.0 += 1;
        e.1 += total as f64;
    }
    let mut ks: Vec<u32> = per_k.keys().copied().collect();
    ks.sort_unstable();
    let rows = ks
        .iter()
        .map(|&k| {
            let (n, sum) = per_k[&k];
            let (nm, tsum) = per_k_minutes.get(&k).copied().unwrap_or((0, 0.0));
            BucketRow {
                k,
                n_samples: n,
                per_stream_mean: sum / n as f64,
                total_mean: if nm == 0 { 0.0 } else { tsum / nm as f64 },
                n_minutes: nm,
            }
        })
        .collect();
    Ok(DilutionBuckets {
        rows,
        total_samples: samples.len(),
    })
}

/// Spearman of per-minute (k, total scoped viewers): the raw, confounded
/// association.
pub fn raw_total_correlation(panel: &Panel, channel_scope: &[String]) -> Result<f64> {
    let samples = collect_samples(panel, channel_scope)?;
    let totals = per_minute_totals(&samples);
    if totals.len() < 2 {
        return Err(Error::DegenerateInput(format!(
            "raw correlation needs >= 2 distinct minutes, got {}",
            totals.len()
        )));
    }
    let ks: Vec<f64> = totals.iter().map(|(_, k, _)| *k as f64).collect();
    let vs: Vec<f64> = totals.iter().map(|(_, _, t)| *t as f64).collect();
    spearman_rho(&ks, &vs)
}

/// Subtract 24-bin hour-of-day means from both coordinates. Input triples
/// are (minute, k, viewers); output triples are (day, k-residual,
/// viewers-residual) with day and hour derived under `tz_offset_minutes`.
pub fn hour_residualize(
    samples: &[(Minute, f64, f64)],
    tz_offset_minutes: i64,
) -> Result<Vec<(i64, f64, f64)>> {
    if samples.len() < 2 {
        return Err(Error::DegenerateInput(format!(
            "residualization needs >= 2 samples, got {}",
            samples.len()
        )));
    }
    let mut bin_k = [0.0f64; 24];
    let mut bin_v = [0.0f64; 24];
    let mut bin_n = [0usize; 24];
    let hours: Vec<usize> = samples
        .iter()
        .map(|(m, _, _)| m.hour_of_day(tz_offset_minutes) as usize)
        .collect();
    for ((_, k, v), &h) in samples.iter().zip(&hours) {
        bin_k[h] += k;
        bin_v[h] += v;
        bin_n[h] += 1;
    }
    for h in 0..24 {
        if bin_n[h] > 0 {
            bin_k[h] /= bin_n[h] as f64;
            bin_v[h] /= bin_n[h] as f64;
        }
    }
    Ok(samples
        .iter()
        .zip(&hours)
        .map(|((m, k, v), &h)| (m.day(tz_offset_minutes), k - bin_k[h], v - bin_v[h]))
        .collect())
}

/// Distinct (hour, value) pairs sorted so each hour is one ascending run,
/// and the run bounds per hour.
fn dense_table(mut pairs: Vec<(u8, u32)>) -> (Vec<(u8, u32)>, [(usize, usize); 24]) {
    pairs.sort_unstable();
    pairs.dedup();
    let mut runs = [(0usize, 0usize); 24];
    for (h, run) in runs.iter_mut().enumerate() {
        let lo = pairs.partition_point(|&(hh, _)| (hh as usize) < h);
        let hi = pairs.partition_point(|&(hh, _)| (hh as usize) <= h);
        *run = (lo, hi);
    }
    (pairs, runs)
}

/// Average 1-based ranks of the resampled residual multiset, written into
/// `rank` at each dense id with a nonzero count. Within an hour the table
/// run is already ascending and a bin-mean shift keeps it so; the global
/// order is a 24-way merge. Equal residuals across hours tie and share the
/// mean rank, exactly like sorting the full multiset.
fn merge_ranks(
    table: &[(u8, u32)],
    runs: &[(usize, usize); 24],
    counts: &[u32],
    bin_mean: &[f64; 24],
    rank: &mut [f64],
) {
    #[derive(PartialEq)]
    struct Cur {
        key: f64,
        hour: usize,
        idx: usize,
    }
    impl Eq for Cur {}
    impl PartialOrd for Cur {
        fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
            Some(self.cmp(other))
        }
    }
    impl Ord for Cur {
        // reversed: BinaryHeap pops the smallest key first
        fn cmp(&self, other: &Self) -> std::cmp::Ordering {
            other.key.total_cmp(&self.key).then(other.hour.cmp(&self.hour))
        }
    }
    let next_cur = |mut idx: usize, hour: usize| -> Option<Cur> {
        let hi = runs[hour].1;
        while idx < hi && counts[idx] == 0 {
            idx += 1;
        }
        (idx < hi).then(|| Cur {
            key: table[idx].1 as f64 - bin_mean[hour],
            hour,
            idx,
        })
    };
    let mut heap = std::collections::BinaryHeap::with_capacity(24);
    for hour in 0..24 {
        heap.extend(next_cur(runs[hour].0, hour));
    }
    let mut pos = 0u64;
    let mut group: Vec<usize> = Vec::with_capacity(24);
    while let Some(top) = heap.pop() {
        let key = top.key;
        group.clear();
        let mut group_count = 0u64;
        let mut take = |cur: Cur, heap: &mut std::collections::BinaryHeap<Cur>| {
            group.push(cur.idx);
            group_count += counts[cur.idx] as u64;
            heap.extend(next_cur(cur.idx + 1, cur.hour));
        };
        take(top, &mut heap);
        while heap.peek().is_some_and(|c| c.key == key) {
            let c = heap.pop().unwrap();
            take(c, &mut heap);
        }
        drop(take);
        // the group spans 1-based positions pos+1 ..= pos+group_count
        let avg = (2 * pos + group_count + 1) as f64 / 2.0;
        for &idx in &group {
            rank[idx] = avg;
        }
        pos += group_count;
    }
}

/// Full dilution analysis: buckets, raw correlation, and hour-residualized
/// Spearman with a day-blocked bootstrap interval. Hour-bin means are
/// recomputed inside every bootstrap replicate so the interval reflects the
/// whole estimation pipeline.
pub fn residual_spearman_with_ci(
    panel: &Panel,
    channel_scope: &[String],
    iterations: usize,
    level: f64,
    seed: u64,
    tz_offset_minutes: i64,
) -> Result<DilutionResult> {
    if iterations < 100 {
        return Err(Error::ConfigInvalid(format!(
            "dilution bootstrap needs >= 100 iterations, got {iterations}"
        )));
    }
    let buckets = dilution_buckets(panel, channel_scope)?;
    let rho_total_vs_k = raw_total_correlation(panel, channel_scope)?;
    let samples = collect_samples(panel, channel_scope)?;

    // Each resampled row carries dense ids into fixed (hour, value)
    // universes; a replicate then re-ranks via counting and merging instead
    // of sorting. Bin means use exact integer sums, matching f64 summation
    // of integer samples.
    #[derive(Clone, Copy)]
    struct Row {
        day: i64,
        dense_k: u32,
        dense_v: u32,
    }
    let hours: Vec<u8> = samples
        .iter()
        .map(|s| s.minute.hour_of_day(tz_offset_minutes))
        .collect();
    let (table_k, runs_k) =
        dense_table(samples.iter().zip(&hours).map(|(s, &h)| (h, s.k)).collect());
    let (table_v, runs_v) =
        dense_table(samples.iter().zip(&hours).map(|(s, &h)| (h, s.viewers)).collect());
    let find = |table: &[(u8, u32)], runs: &[(usize, usize); 24], h: u8, val: u32| -> u32 {
        let (lo, hi) = runs[h as usize];
        let at = table[lo..hi]
            .binary_search(&(h, val))
            .expect("sample value present in its own dense table");
        (lo + at) as u32
    };
    let rows: Vec<Row> = samples
        .iter()
        .zip(&hours)
        .map(|(s, &h)| Row {
            day: s.minute.day(tz_offset_minutes),
            dense_k: find(&table_k, &runs_k, h, s.k),
            dense_v: find(&table_v, &runs_v, h, s.viewers),
        })
        .collect();
    let n_days = {
        let mut days: Vec<i64> = rows.iter().map(|r| r.day).collect();
        days.sort_unstable();
        days.dedup();
        days.len()
    };

    #[derive(Default)]
    struct Scratch {
        counts_k: Vec<u32>,
        counts_v: Vec<u32>,
        rank_k: Vec<f64>,
        rank_v: Vec<f64>,
        xs: Vec<f64>,
        ys: Vec<f64>,
    }
    thread_local! {
        static SCRATCH: std::cell::RefCell<Scratch> = std::cell::RefCell::new(Scratch::default());
    }

    let statistic = |rs: &[Row]| -> Result<f64> {
        SCRATCH.with(|cell| {
            let sc = &mut *cell.borrow_mut();
            sc.counts_k.clear();
            sc.counts_k.resize(table_k.len(), 0);
            sc.counts_v.clear();
            sc.counts_v.resize(table_v.len(), 0);
            for r in rs {
                sc.counts_k[r.dense_k as usize] += 1;
                sc.counts_v[r.dense_v as usize] += 1;
            }
            let mut bin_k = [0.0f64; 24];
            let mut bin_v = [0.0f64; 24];
            for h in 0..24 {
                let acc = |table: &[(u8, u32)], counts: &[u32], (lo, hi): (usize, usize)| {
                    let (mut n, mut sum) = (0u64, 0u64);
                    for i in lo..hi {
                        let c = counts[i] as u64;
                        n += c;
                        sum += c * table[i].1 as u64;
                    }
                    if n > 0 {
                        sum as f64 / n as f64
                    } else {
                        0.0
                    }
                };
                bin_k[h] = acc(&table_k, &sc.counts_k, runs_k[h]);
                bin_v[h] = acc(&table_v, &sc.counts_v, runs_v[h]);
            }
            sc.rank_k.resize(table_k.len(), 0.0);
            sc.rank_v.resize(table_v.len(), 0.0);
            merge_ranks(&table_k, &runs_k, &sc.counts_k, &bin_k, &mut sc.rank_k);
            merge_ranks(&table_v, &runs_v, &sc.counts_v, &bin_v, &mut sc.rank_v);
            sc.xs.clear();
            sc.ys.clear();
            for r in rs {
                sc.xs.push(sc.rank_k[r.dense_k as usize]);
                sc.ys.push(sc.rank_v[r.dense_v as usize]);
            }
            Ok(pearson(&sc.xs, &sc.ys)?.clamp(-1.0, 1.0))
        })
    };

    let residual_ci = block_bootstrap_ci(&rows, |r| r.day, statistic, iterations, level, seed)?;
    Ok(DilutionResult {
        buckets,
        rho_total_vs_k,
        rho_residual: residual_ci.point_estimate,
        residual_ci,
        n_samples: rows.len(),
        n_days,
    })
}
