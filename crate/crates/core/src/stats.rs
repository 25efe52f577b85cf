//! Shared statistical primitives: rank correlation, percentiles, dispersion,
//! and a day-blocked bootstrap.
//!
//! Conventions used throughout the crate:
//! - percentiles interpolate linearly at rank `p/100 * (n-1)`;
//! - standard deviations are population (divide by n);
//! - Spearman uses average ranks for ties and is clamped to `[-1, 1]` so
//!   floating-point noise can never push it out of range.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rank::average_ranks_into;

pub fn mean(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        None
    } else {
        Some(xs.iter().sum::<f64>() / xs.len() as f64)
    }
}

/// Population standard deviation (divide by n).
pub fn population_std(xs: &[f64]) -> Option<f64> {
    let m = mean(xs)?;
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64;
    Some(var.sqrt())
}

/// Linear-interpolation percentile; `p` in `[0, 100]`.
pub fn percentile(xs: &[f64], p: f64) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !(0.0..=100.0).contains(&p) || p.is_nan() {
        return Err(Error::ConfigInvalid(format!(
            "percentile {p} outside [0, 100]"
        )));
    }
    let mut sorted = xs.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    Ok(percentile_sorted(&sorted, p))
}

/// Percentile of an already ascending slice (no validation).
pub fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let r = p / 100.0 * (n - 1) as f64;
    let lo = r.floor() as usize;
    let hi = r.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let frac = r - lo as f64;
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

pub fn median(xs: &[f64]) -> Result<f64> {
    percentile(xs, 50.0)
}

/// (median, IQR) where IQR = p75 - p25.
pub fn median_and_iqr(xs: &[f64]) -> Result<(f64, f64)> {
    if xs.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut sorted = xs.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let med = percentile_sorted(&sorted, 50.0);
    let iqr = percentile_sorted(&sorted, 75.0) - percentile_sorted(&sorted, 25.0);
    Ok((med, iqr))
}

/// Population coefficient of variation, std/mean. Needs n >= 2 and a
/// strictly positive mean.
pub fn coefficient_of_variation(xs: &[f64]) -> Result<f64> {
    if xs.len() < 2 {
        return Err(Error::DegenerateInput(format!(
            "coefficient of variation needs n >= 2, got {}",
            xs.len()
        )));
    }
    let m = mean(xs).expect("nonempty");
    if m <= 0.0 {
        return Err(Error::DegenerateInput(format!(
            "coefficient of variation needs mean > 0, got {m}"
        )));
    }
    Ok(population_std(xs).expect("nonempty") / m)
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman_rho(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::LengthMismatch {
            xs: xs.len(),
            ys: ys.len(),
        });
    }
    if xs.is_empty() {
        return Err(Error::EmptyInput);
    }
    if xs.len() < 2 {
        return Err(Error::DegenerateInput(
            "spearman needs at least 2 pairs".into(),
        ));
    }
    let mut rx = vec![0.0; xs.len()];
    let mut ry = vec![0.0; ys.len()];
    let mut scratch = Vec::new();
    average_ranks_into(xs, &mut rx, &mut scratch);
    average_ranks_into(ys, &mut ry, &mut scratch);
    pearson(&rx, &ry).map(|r| r.clamp(-1.0, 1.0))
}

pub(crate) fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let dx = x - mx;
        let dy = y - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::DegenerateInput(
            "correlation undefined: zero variance".into(),
        ));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Percentile bootstrap interval from day-blocked resampling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCI {
    pub point_estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub confidence: f64,
    pub n_iterations: usize,
    /// Replicates whose statistic was undefined (dropped from the interval).
    pub failed_iterations: usize,
}

/// Day-blocked bootstrap: samples are grouped by `day_of`, whole days are
/// redrawn with replacement, and `statistic` is evaluated on each resample.
///
/// The point estimate is the statistic on the full data in ascending day
/// order. Replicate `i` draws from an RNG stream derived only from
/// `(seed, i)`, so results do not depend on thread count or schedule.
/// Replicates where the statistic is undefined are dropped; if more than
/// half fail the whole interval is refused.
pub fn block_bootstrap_ci<T, K, S>(
    samples: &[T],
    day_of: K,
    statistic: S,
    iterations: usize,
    confidence: f64,
    seed: u64,
) -> Result<BootstrapCI>
where
    T: Clone + Sync,
    K: Fn(&T) -> i64,
    S: Fn(&[T]) -> Result<f64> + Sync,
{
    if samples.is_empty() {
        return Err(Error::EmptyInput);
    }
    if iterations == 0 {
        return Err(Error::ConfigInvalid("bootstrap needs iterations >= 1".into()));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::ConfigInvalid(format!(
            "confidence {confidence} outside (0, 1)"
        )));
    }

    // Group sample indexes by day, days ascending, within-day input order.
    let mut day_keys: Vec<i64> = samples.iter().map(&day_of).collect();
    day_keys.sort_unstable();
    day_keys.dedup();
    let day_slot: std::collections::HashMap<i64, usize> = day_keys
        .iter()
        .enumerate()
        .map(|(i, &d)| (d, i))
        .collect();
    let mut by_day: Vec<Vec<u32>> = vec![Vec::new(); day_keys.len()];
    for (i, s) in samples.iter().enumerate() {
        by_day[day_slot[&day_of(s)]].push(i as u32);
    }

    let ordered: Vec<T> = by_day
        .iter()
        .flat_map(|idxs| idxs.iter().map(|&i| samples[i as usize].clone()))
        .collect();
    let point_estimate = statistic(&ordered)?;

    // Day d occupies ordered[day_range[d].0 .. day_range[d].1], so a
    // resample is a handful of contiguous copies.
    let day_range: Vec<(usize, usize)> = by_day
        .iter()
        .scan(0usize, |pos, idxs| {
            let start = *pos;
            *pos += idxs.len();
            Some((start, *pos))
        })
        .collect();

    let n_days = by_day.len();
    let replicates: Vec<Option<f64>> = (0..iterations)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let mut resample: Vec<T> = Vec::with_capacity(samples.len());
            for _ in 0..n_days {
                let (lo, hi) = day_range[rng.random_range(0..n_days)];
                resample.extend_from_slice(&ordered[lo..hi]);
            }
            statistic(&resample).ok()
        })
        .collect();

    let mut values: Vec<f64> = replicates.iter().filter_map(|v| *v).collect();
    let failed_iterations = iterations - values.len();
    if failed_iterations * 2 > iterations {
        return Err(Error::DegenerateInput(format!(
            "bootstrap statistic undefined in {failed_iterations} of {iterations} replicates"
        )));
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let alpha = (1.0 - confidence) / 2.0;
    Ok(BootstrapCI {
        point_estimate,
        ci_low: percentile_sorted(&values, 100.0 * alpha),
        ci_high: percentile_sorted(&values, 100.0 * (1.0 - alpha)),
        confidence,
        n_iterations: iterations,
        failed_iterations,
    })
}
