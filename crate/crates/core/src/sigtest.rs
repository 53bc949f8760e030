//! Paired significance testing for score time series.
//!
//! Score differences between two model configurations are serially
//! correlated across init dates, so plain i.i.d. resampling understates
//! uncertainty. This module implements the stationary block bootstrap
//! (geometric block lengths, circular wrapping) with the corrected
//! automatic block-length selector, and bias-corrected accelerated (BCa)
//! confidence intervals on the mean difference. A difference is
//! significant when the interval excludes zero.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::ensemble::DateScoreRow;
use crate::error::{Error, Result};
use crate::rng::{domain, substream};

/// Minimum number of dates for block-length selection and BCa to be
/// meaningful at all.
pub const MIN_DATES: usize = 8;

fn check_series(xs: &[f64]) -> Result<()> {
    if xs.len() < MIN_DATES {
        return Err(Error::validation(format!(
            "score series has {} dates, need at least {MIN_DATES}",
            xs.len()
        )));
    }
    if xs.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("score series contains non-finite values"));
    }
    Ok(())
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Trapezoidal flat-top taper: 1 on |t| <= 1/2, linear to 0 at |t| = 1.
fn taper(t: f64) -> f64 {
    let t = t.abs();
    if t <= 0.5 {
        1.0
    } else if t <= 1.0 {
        2.0 * (1.0 - t)
    } else {
        0.0
    }
}

/// Automatic expected block length for the stationary bootstrap.
///
/// Autocorrelations are scanned for the last significant lag (threshold
/// 2·sqrt(log10 T / T), with max(5, log10 T) subsequent lags required
/// insignificant); tapered autocovariances up to twice that lag estimate
/// the long-run variance g(0) and its derivative-weighted analogue G, and
/// the optimal length is (2 G² / (2 g(0)²))^(1/3) · T^(1/3), rounded and
/// clamped to [1, T/3]. Constant series return 1.
pub fn auto_block_length(xs: &[f64]) -> Result<usize> {
    check_series(xs)?;
    let n = xs.len();
    let nf = n as f64;
    let xbar = mean(xs);
    let kn = (nf.log10().ceil() as usize).max(5);
    let m_max = ((nf.sqrt().ceil() as usize) + kn).min(n - 1);

    let mut acv = vec![0.0f64; m_max + 1];
    for (k, a) in acv.iter_mut().enumerate() {
        let mut s = 0.0;
        for t in 0..n - k {
            s += (xs[t] - xbar) * (xs[t + k] - xbar);
        }
        *a = s / nf;
    }
    if !(acv[0] > 0.0) {
        return Ok(1);
    }
    let cv = 2.0 * (nf.log10() / nf).sqrt();
    let significant = |lag: usize| (acv[lag] / acv[0]).abs() >= cv;
    let mut m_hat = m_max;
    'outer: for m in 0..m_max {
        for j in 1..=kn {
            let lag = m + j;
            if lag <= m_max && significant(lag) {
                continue 'outer;
            }
        }
        m_hat = m;
        break;
    }
    let m_big = (2 * m_hat).min(m_max);

    let mut g = 0.0f64;
    let mut g0 = acv[0];
    for k in 1..=m_big {
        let lam = taper(k as f64 / m_big as f64);
        g += 2.0 * lam * k as f64 * acv[k];
        g0 += 2.0 * lam * acv[k];
    }
    let d = 2.0 * g0 * g0;
    if !(d > 0.0) {
        return Ok(1);
    }
    let b = (2.0 * g * g / d).cbrt() * nf.cbrt();
    let b_max = (nf / 3.0).floor().max(1.0);
    Ok(b.clamp(1.0, b_max).round() as usize)
}

/// One stationary-bootstrap resample: block starts are uniform, blocks
/// continue with probability 1 - 1/mean_block_len, and indices wrap
/// circularly. `mean_block_len = 1` degenerates to i.i.d. resampling.
pub fn stationary_bootstrap_resample(
    xs: &[f64],
    mean_block_len: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    if xs.is_empty() {
        return Err(Error::validation("cannot resample an empty series"));
    }
    if !(mean_block_len >= 1.0) {
        return Err(Error::validation("mean block length must be at least 1"));
    }
    let n = xs.len();
    let p = 1.0 / mean_block_len;
    let mut out = Vec::with_capacity(n);
    let mut idx = rng.random_range(0..n);
    out.push(xs[idx]);
    for _ in 1..n {
        if rng.random_range(0.0..1.0) < p {
            idx = rng.random_range(0..n);
        } else {
            idx = (idx + 1) % n;
        }
        out.push(xs[idx]);
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct BootstrapResult {
    pub estimate: f64,
    pub block_len: usize,
    pub level: f64,
    pub lo: f64,
    pub hi: f64,
    pub n_resamples: usize,
    pub significant: bool,
    /// All resamples identical: the interval is a zero-width point and
    /// carries no distributional information.
    pub degenerate: bool,
}

/// BCa-adjusted percentile levels for a two-sided interval: z0 corrects
/// median bias, `a` corrects skewness; both zero reduces to the plain
/// percentile method exactly.
pub fn bca_percentiles(z0: f64, a: f64, level: f64) -> (f64, f64) {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let alpha = (1.0 - level) / 2.0;
    let adjust = |z: f64| {
        let zz = z0 + z;
        normal.cdf(z0 + zz / (1.0 - a * zz))
    };
    (
        adjust(normal.inverse_cdf(alpha)),
        adjust(normal.inverse_cdf(1.0 - alpha)),
    )
}

/// Acceleration constant from the jackknife skewness of leave-one-out
/// means.
fn jackknife_acceleration(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let sum: f64 = xs.iter().sum();
    let loo: Vec<f64> = xs.iter().map(|x| (sum - x) / (n - 1.0)).collect();
    let lm = mean(&loo);
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for v in &loo {
        let d = lm - v;
        num += d * d * d;
        den += d * d;
    }
    if den <= 0.0 {
        0.0
    } else {
        num / (6.0 * den.powf(1.5))
    }
}

/// Linear-interpolation quantile of a sorted slice.
fn sorted_quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

fn bca_interval_lane(
    xs: &[f64],
    level: f64,
    n_resamples: usize,
    seed: u64,
    lane: u64,
) -> Result<BootstrapResult> {
    check_series(xs)?;
    if n_resamples < 1000 {
        return Err(Error::validation("BCa needs at least 1000 resamples"));
    }
    if !(0.0 < level && level < 1.0) {
        return Err(Error::validation("confidence level must be in (0, 1)"));
    }
    let estimate = mean(xs);
    let block_len = auto_block_length(xs)?;
    let mut boots = Vec::with_capacity(n_resamples);
    for i in 0..n_resamples {
        let mut rng = substream(seed, &[domain::BOOTSTRAP, lane, i as u64]);
        let rs = stationary_bootstrap_resample(xs, block_len as f64, &mut rng)?;
        boots.push(mean(&rs));
    }
    boots.sort_by(f64::total_cmp);

    if boots[0] == boots[n_resamples - 1] {
        let v = boots[0];
        return Ok(BootstrapResult {
            estimate,
            block_len,
            level,
            lo: v,
            hi: v,
            n_resamples,
            significant: !(v <= 0.0 && 0.0 <= v),
            degenerate: true,
        });
    }

    // Bias correction from the bootstrap fraction below the estimate;
    // ties split evenly so a symmetric discrete distribution gives z0 = 0.
    let bf = n_resamples as f64;
    let below = boots.iter().filter(|v| **v < estimate).count() as f64;
    let equal = boots.iter().filter(|v| **v == estimate).count() as f64;
    let frac = ((below + 0.5 * equal) / bf).clamp(1.0 / (bf + 1.0), bf / (bf + 1.0));
    let normal = Normal::new(0.0, 1.0).unwrap();
    let z0 = normal.inverse_cdf(frac);
    let a = jackknife_acceleration(xs);
    let (a_lo, a_hi) = bca_percentiles(z0, a, level);
    let lo = sorted_quantile(&boots, a_lo);
    let hi = sorted_quantile(&boots, a_hi);
    Ok(BootstrapResult {
        estimate,
        block_len,
        level,
        lo,
        hi,
        n_resamples,
        significant: 0.0 < lo || hi < 0.0,
        degenerate: false,
    })
}

/// BCa confidence interval for the mean of a (serially correlated) score
/// series under the stationary block bootstrap with automatic block
/// length. Resamples draw from per-index substreams, so results are
/// reproducible and order-independent.
pub fn bca_interval(
    xs: &[f64],
    level: f64,
    n_resamples: usize,
    seed: u64,
) -> Result<BootstrapResult> {
    bca_interval_lane(xs, level, n_resamples, seed, 0)
}

/// Per-date score differences for one (metric, channel, lead, quantile)
/// group, ordered by init time.
#[derive(Debug, Clone, Serialize)]
pub struct PairedSeries {
    pub metric: String,
    pub channel: Option<String>,
    pub lead_hours: i64,
    pub q: Option<f64>,
    pub diffs: Vec<f64>,
}

type GroupKey = (String, Option<String>, i64, Option<u64>);

fn row_group(row: &DateScoreRow) -> GroupKey {
    (
        row.metric.clone(),
        row.channel.clone(),
        row.lead_hours,
        row.q.map(f64::to_bits),
    )
}

/// Pairs two per-date score tables into difference series (a minus b),
/// grouped by (metric, channel, lead, quantile) and sorted by init time.
/// Every row must match one row with the same key and date on the other
/// side.
pub fn paired_differences(
    a: &[DateScoreRow],
    b: &[DateScoreRow],
) -> Result<Vec<PairedSeries>> {
    if a.len() != b.len() {
        return Err(Error::validation(format!(
            "paired score tables differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let mut lookup = std::collections::HashMap::new();
    for row in b {
        let key = (row_group(row), row.init_time);
        if lookup.insert(key, row.value).is_some() {
            return Err(Error::validation("duplicate (group, date) row in table b"));
        }
    }
    let mut groups: Vec<(GroupKey, Vec<(i64, f64)>)> = Vec::new();
    for row in a {
        let key = row_group(row);
        let other = lookup.remove(&(key.clone(), row.init_time)).ok_or_else(|| {
            Error::validation(format!(
                "no matching row for {} {:?} lead {} at t={}",
                row.metric, row.channel, row.lead_hours, row.init_time
            ))
        })?;
        let entry = match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v,
            None => {
                groups.push((key, Vec::new()));
                &mut groups.last_mut().unwrap().1
            }
        };
        entry.push((row.init_time, row.value - other));
    }
    Ok(groups
        .into_iter()
        .map(|((metric, channel, lead_hours, qbits), mut v)| {
            v.sort_by_key(|(t, _)| *t);
            PairedSeries {
                metric,
                channel,
                lead_hours,
                q: qbits.map(f64::from_bits),
                diffs: v.into_iter().map(|(_, d)| d).collect(),
            }
        })
        .collect())
}

/// One significance-test verdict per paired series.
#[derive(Debug, Clone, Serialize)]
pub struct SigRow {
    pub metric: String,
    pub channel: Option<String>,
    pub lead_hours: i64,
    pub q: Option<f64>,
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
    pub block_len: usize,
    pub significant: bool,
}

/// Runs the full test on every series; each series gets its own bootstrap
/// substream lane so adding or reordering series never changes any
/// individual verdict.
pub fn significance_report(
    series: &[PairedSeries],
    level: f64,
    n_resamples: usize,
    seed: u64,
) -> Result<Vec<SigRow>> {
    series
        .iter()
        .enumerate()
        .map(|(lane, s)| {
            let r = bca_interval_lane(&s.diffs, level, n_resamples, seed, lane as u64)?;
            Ok(SigRow {
                metric: s.metric.clone(),
                channel: s.channel.clone(),
                lead_hours: s.lead_hours,
                q: s.q,
                estimate: r.estimate,
                lo: r.lo,
                hi: r.hi,
                block_len: r.block_len,
                significant: r.significant,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::StandardNormal;
    use statrs::distribution::ChiSquared;

    fn white_noise(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = substream(seed, &[0xf1]);
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }

    fn ar1(n: usize, phi: f64, seed: u64) -> Vec<f64> {
        let mut rng = substream(seed, &[0xf2]);
        let mut x = rng.sample::<f64, _>(StandardNormal) / (1.0 - phi * phi).sqrt();
        (0..n)
            .map(|_| {
                let out = x;
                x = phi * x + rng.sample::<f64, _>(StandardNormal);
                out
            })
            .collect()
    }

    #[test]
    fn white_noise_selects_short_blocks() {
        for seed in [1, 2, 3] {
            let b = auto_block_length(&white_noise(512, seed)).unwrap();
            assert!(b <= 4, "seed {seed}: block length {b}");
        }
    }

    #[test]
    fn ar1_selects_longer_blocks_than_white_noise() {
        for seed in [1, 2, 3] {
            let b_wn = auto_block_length(&white_noise(512, seed)).unwrap();
            let b_ar = auto_block_length(&ar1(512, 0.8, seed)).unwrap();
            assert!(b_ar > b_wn, "seed {seed}: AR {b_ar} vs WN {b_wn}");
        }
    }

    #[test]
    fn constant_series_selects_block_length_one() {
        assert_eq!(auto_block_length(&vec![2.5; 64]).unwrap(), 1);
    }

    #[test]
    fn block_length_is_clamped_to_a_third_of_the_series() {
        // Extremely persistent series: the raw estimate blows past T/3.
        let xs = ar1(48, 0.995, 9);
        let b = auto_block_length(&xs).unwrap();
        assert!(b >= 1 && b <= 16, "block length {b}");
    }

    #[test]
    fn short_or_non_finite_series_are_rejected() {
        assert!(auto_block_length(&[1.0; 7]).is_err());
        let mut xs = white_noise(32, 4);
        xs[5] = f64::NAN;
        assert!(auto_block_length(&xs).is_err());
        assert!(bca_interval(&[1.0; 7], 0.95, 2000, 0).is_err());
        assert!(bca_interval(&white_noise(32, 4), 0.95, 999, 0).is_err());
        assert!(bca_interval(&white_noise(32, 4), 1.5, 2000, 0).is_err());
    }

    #[test]
    fn unit_block_length_resamples_iid_uniformly() {
        // Values encode their own index; chi-square goodness of fit on
        // index frequencies over 1e5 draws.
        let n = 16usize;
        let xs: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let mut rng = substream(5, &[0xf3]);
        let mut counts = vec![0u64; n];
        let draws = 100_000 / n * n;
        for _ in 0..draws / n {
            let rs = stationary_bootstrap_resample(&xs, 1.0, &mut rng).unwrap();
            for v in rs {
                counts[v as usize] += 1;
            }
        }
        let e = draws as f64 / n as f64;
        let chi2: f64 = counts.iter().map(|c| (*c as f64 - e) * (*c as f64 - e) / e).sum();
        let crit = ChiSquared::new((n - 1) as f64).unwrap().inverse_cdf(0.999);
        assert!(chi2 < crit, "chi2 {chi2} >= {crit}");
    }

    #[test]
    fn resampled_values_come_from_the_original_series() {
        let xs = white_noise(40, 6);
        let mut rng = substream(6, &[0xf4]);
        let rs = stationary_bootstrap_resample(&xs, 4.0, &mut rng).unwrap();
        assert_eq!(rs.len(), xs.len());
        for v in rs {
            assert!(xs.contains(&v));
        }
    }

    #[test]
    fn mean_block_run_length_matches_the_geometric_mean() {
        // Values encode indices, so a continuation is visible as a +1 step
        // (mod T); restarts landing on the successor index inflate runs
        // with probability 1/T, well inside the tolerance.
        let n = 1000usize;
        let l = 10.0f64;
        let xs: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let mut rng = substream(7, &[0xf5]);
        let mut positions = 0u64;
        let mut runs = 0u64;
        for _ in 0..200 {
            let rs = stationary_bootstrap_resample(&xs, l, &mut rng).unwrap();
            runs += 1;
            positions += rs.len() as u64;
            for t in 1..rs.len() {
                let cont = (rs[t - 1] as usize + 1) % n == rs[t] as usize;
                if !cont {
                    runs += 1;
                }
            }
        }
        let mean_run = positions as f64 / runs as f64;
        assert!(
            (mean_run - l).abs() / l < 0.05,
            "mean run length {mean_run}, want {l}"
        );
    }

    #[test]
    fn bca_reduces_to_percentile_without_bias_or_acceleration() {
        let (lo, hi) = bca_percentiles(0.0, 0.0, 0.95);
        assert!((lo - 0.025).abs() < 1e-9, "{lo}");
        assert!((hi - 0.975).abs() < 1e-9, "{hi}");
        // Positive bias correction shifts both endpoints up.
        let (lo2, hi2) = bca_percentiles(0.2, 0.0, 0.95);
        assert!(lo2 > lo && hi2 > hi);
    }

    #[test]
    fn zero_series_gives_degenerate_zero_interval() {
        let r = bca_interval(&vec![0.0; 32], 0.95, 1000, 0).unwrap();
        assert!(r.degenerate);
        assert_eq!((r.lo, r.hi), (0.0, 0.0));
        assert_eq!(r.estimate, 0.0);
        assert!(!r.significant);
        assert_eq!(r.block_len, 1);
    }

    #[test]
    fn clear_shift_is_detected_as_significant() {
        let mut rng = substream(8, &[0xf6]);
        let xs: Vec<f64> = (0..64)
            .map(|_| 0.5 + 0.1 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let r = bca_interval(&xs, 0.95, 2000, 1).unwrap();
        assert!(r.significant);
        assert!(r.lo > 0.0);
        assert!(r.lo <= r.estimate && r.estimate <= r.hi);
        // Deterministic under the seed.
        let r2 = bca_interval(&xs, 0.95, 2000, 1).unwrap();
        assert_eq!((r.lo, r.hi), (r2.lo, r2.hi));
    }

    /// Coverage of the full procedure on serially correlated null data at
    /// a realistic evaluation length (two years of daily scores).
    #[test]
    fn bca_coverage_on_ar1_null_is_near_nominal() {
        let reps = 500;
        let mut covered = 0;
        for rep in 0..reps {
            let xs = ar1(732, 0.6, 1000 + rep as u64);
            let r = bca_interval(&xs, 0.95, 1000, rep as u64).unwrap();
            if r.lo <= 0.0 && 0.0 <= r.hi {
                covered += 1;
            }
        }
        let cov = covered as f64 / reps as f64;
        assert!(
            (0.92..=0.98).contains(&cov),
            "empirical coverage {cov} outside [0.92, 0.98]"
        );
    }

    #[test]
    fn paired_differences_group_and_align_rows() {
        let mk = |metric: &str, t: i64, v: f64| DateScoreRow {
            metric: metric.into(),
            channel: Some("t2m".into()),
            lead_hours: 24,
            q: None,
            init_time: t,
            value: v,
        };
        let a = vec![mk("fair_crps", 0, 1.0), mk("fair_crps", 24, 2.0), mk("rmse", 0, 5.0)];
        let b = vec![mk("rmse", 0, 4.0), mk("fair_crps", 24, 1.5), mk("fair_crps", 0, 0.25)];
        let series = paired_differences(&a, &b).unwrap();
        assert_eq!(series.len(), 2);
        let crps = series.iter().find(|s| s.metric == "fair_crps").unwrap();
        assert_eq!(crps.diffs, vec![0.75, 0.5]);
        let rmse = series.iter().find(|s| s.metric == "rmse").unwrap();
        assert_eq!(rmse.diffs, vec![1.0]);

        // Mismatched date sets are rejected.
        let b_bad = vec![mk("rmse", 0, 4.0), mk("fair_crps", 48, 1.5), mk("fair_crps", 0, 0.25)];
        assert!(paired_differences(&a, &b_bad).is_err());
        assert!(paired_differences(&a, &b[..2].to_vec()).is_err());
    }

    #[test]
    fn significance_report_is_lane_stable() {
        let mut rng = substream(9, &[0xf7]);
        let mut mk_series = |metric: &str| PairedSeries {
            metric: metric.into(),
            channel: None,
            lead_hours: 24,
            q: None,
            diffs: (0..32).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
        };
        let s1 = mk_series("a");
        let s2 = mk_series("b");
        let both = significance_report(&[s1.clone(), s2.clone()], 0.95, 1000, 3).unwrap();
        let first = significance_report(&[s1], 0.95, 1000, 3).unwrap();
        assert_eq!(both[0].lo, first[0].lo);
        assert_eq!(both[0].hi, first[0].hi);
        assert_eq!(both.len(), 2);
        assert!(both.iter().all(|r| r.lo <= r.hi));
    }
}
