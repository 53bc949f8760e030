//! Residual decomposition and per-channel normalization.
//!
//! A high-resolution state splits as `hr = up + r` where `up` is the
//! bicubic upsampling of its coarse counterpart and `r` the remainder the
//! generative model learns. Inputs and residuals are whitened per channel
//! with flat (unweighted) pixel statistics fitted on the training split.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ChannelCatalog, Field, TimeIndex};
use crate::regrid::{interpolate_up, RegridPlan};

pub const NORM_SCHEMA: &str = "flowsr-norm-v1";

/// Selects which statistics pair an operation uses: the interpolated-LR
/// input stats or the residual stats.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    Input,
    Residual,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ChannelNorm {
    pub label: String,
    pub input: MeanStd,
    pub residual: MeanStd,
}

/// Per-channel normalization statistics, fitted on the training split
/// only. Standard deviations are population (divide-by-n) and strictly
/// positive.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct NormStats {
    pub schema: String,
    pub n_samples: usize,
    pub catalog_hash: String,
    pub channels: Vec<ChannelNorm>,
}

impl NormStats {
    pub fn mean(&self, kind: NormKind, c: usize) -> f64 {
        match kind {
            NormKind::Input => self.channels[c].input.mean,
            NormKind::Residual => self.channels[c].residual.mean,
        }
    }

    pub fn std(&self, kind: NormKind, c: usize) -> f64 {
        match kind {
            NormKind::Input => self.channels[c].input.std,
            NormKind::Residual => self.channels[c].residual.std,
        }
    }

    /// Checks internal consistency and agreement with a catalog.
    pub fn validate(&self, catalog: &ChannelCatalog) -> Result<()> {
        if self.schema != NORM_SCHEMA {
            return Err(Error::format(format!(
                "unexpected norm stats schema {:?}",
                self.schema
            )));
        }
        if self.channels.len() != catalog.len() {
            return Err(Error::validation(format!(
                "norm stats cover {} channels, catalog has {}",
                self.channels.len(),
                catalog.len()
            )));
        }
        for (c, ch) in self.channels.iter().enumerate() {
            if ch.label != catalog.label(c) {
                return Err(Error::validation(format!(
                    "norm stats channel {c} is {:?}, catalog has {:?}",
                    ch.label,
                    catalog.label(c)
                )));
            }
            for (what, ms) in [("input", &ch.input), ("residual", &ch.residual)] {
                if !ms.mean.is_finite() || !ms.std.is_finite() || ms.std <= 0.0 {
                    return Err(Error::validation(format!(
                        "bad {what} stats for channel {}: mean {}, std {}",
                        ch.label, ms.mean, ms.std
                    )));
                }
            }
        }
        if self.catalog_hash != catalog.content_hash() {
            return Err(Error::validation(
                "norm stats were fitted for a different channel catalog",
            ));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<NormStats> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Raw (unnormalized) training pair on the HR grid.
#[derive(Debug, Clone)]
pub struct TrainingPair {
    pub upsampled: Field,
    pub residual: Field,
    pub time_index: TimeIndex,
}

/// Normalized training sample: conditioning is the whitened upsampled
/// input, target the whitened residual; both live on the HR grid.
#[derive(Debug, Clone)]
pub struct ResidualSample {
    pub conditioning: Field,
    pub target: Field,
    pub time_index: TimeIndex,
}

/// Splits `hr` into its upsampled coarse part and the residual,
/// `hr = up + r` with `r = hr - interpolate_up(lr)` evaluated in f32.
pub fn decompose(hr: &Field, lr: &Field, plan_up: &RegridPlan) -> Result<(Field, Field)> {
    let up = interpolate_up(lr, plan_up)?;
    if !up.same_shape(hr) {
        return Err(Error::validation(
            "decompose: hr field does not live on the upsampling target grid",
        ));
    }
    let residual = hr.checked_sub(&up)?;
    let up = match hr.timestamp() {
        Some(t) => up.with_timestamp(t),
        None => up,
    };
    Ok((up, residual))
}

/// Builds the raw training pair for one (hr, lr) state.
pub fn make_training_pair(hr: &Field, lr: &Field, plan_up: &RegridPlan) -> Result<TrainingPair> {
    let (upsampled, residual) = decompose(hr, lr, plan_up)?;
    let time_index = hr.timestamp().unwrap_or(0);
    Ok(TrainingPair {
        upsampled,
        residual,
        time_index,
    })
}

/// Mergeable (count, sum, sum of squares) accumulator so sample shards can
/// be processed independently and combined in a fixed order.
#[derive(Debug, Clone)]
pub struct NormAccumulator {
    labels: Vec<String>,
    catalog_hash: String,
    n_samples: usize,
    count: f64,
    sum_x: Vec<f64>,
    sumsq_x: Vec<f64>,
    sum_r: Vec<f64>,
    sumsq_r: Vec<f64>,
}

impl NormAccumulator {
    pub fn new(catalog: &ChannelCatalog) -> NormAccumulator {
        let n = catalog.len();
        NormAccumulator {
            labels: (0..n).map(|c| catalog.label(c)).collect(),
            catalog_hash: catalog.content_hash(),
            n_samples: 0,
            count: 0.0,
            sum_x: vec![0.0; n],
            sumsq_x: vec![0.0; n],
            sum_r: vec![0.0; n],
            sumsq_r: vec![0.0; n],
        }
    }

    pub fn push(&mut self, pair: &TrainingPair) -> Result<()> {
        if pair.upsampled.channels().len() != self.labels.len() {
            return Err(Error::validation("pair channel count does not match accumulator"));
        }
        if !pair.upsampled.same_shape(&pair.residual) {
            return Err(Error::validation("pair fields live on different grids"));
        }
        for c in 0..self.labels.len() {
            for v in pair.upsampled.channel(c) {
                let v = *v as f64;
                self.sum_x[c] += v;
                self.sumsq_x[c] += v * v;
            }
            for v in pair.residual.channel(c) {
                let v = *v as f64;
                self.sum_r[c] += v;
                self.sumsq_r[c] += v * v;
            }
        }
        self.count += pair.upsampled.grid().n_cells() as f64;
        self.n_samples += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: &NormAccumulator) -> Result<()> {
        if self.labels != other.labels {
            return Err(Error::validation("cannot merge accumulators over different catalogs"));
        }
        self.n_samples += other.n_samples;
        self.count += other.count;
        for c in 0..self.labels.len() {
            self.sum_x[c] += other.sum_x[c];
            self.sumsq_x[c] += other.sumsq_x[c];
            self.sum_r[c] += other.sum_r[c];
            self.sumsq_r[c] += other.sumsq_r[c];
        }
        Ok(())
    }

    pub fn finish(self) -> Result<NormStats> {
        if self.n_samples < 2 {
            return Err(Error::validation(format!(
                "norm stats need at least 2 samples, got {}",
                self.n_samples
            )));
        }
        let n = self.count;
        let mut channels = Vec::with_capacity(self.labels.len());
        for (c, label) in self.labels.iter().enumerate() {
            let stats = |sum: f64, sumsq: f64, what: &str| -> Result<MeanStd> {
                let mean = sum / n;
                let var = (sumsq / n - mean * mean).max(0.0);
                let std = var.sqrt();
                if std <= 0.0 {
                    return Err(Error::numerical(format!(
                        "channel {label} has zero {what} variance"
                    )));
                }
                Ok(MeanStd { mean, std })
            };
            channels.push(ChannelNorm {
                label: label.clone(),
                input: stats(self.sum_x[c], self.sumsq_x[c], "input")?,
                residual: stats(self.sum_r[c], self.sumsq_r[c], "residual")?,
            });
        }
        Ok(NormStats {
            schema: NORM_SCHEMA.to_string(),
            n_samples: self.n_samples,
            catalog_hash: self.catalog_hash,
            channels,
        })
    }
}

/// Fits per-channel mean/std over all pixels of all pairs, population
/// (divide-by-n) form, unweighted over pixels.
pub fn fit_norm_stats<'a>(pairs: impl IntoIterator<Item = &'a TrainingPair>) -> Result<NormStats> {
    let mut iter = pairs.into_iter();
    let first = iter
        .next()
        .ok_or_else(|| Error::validation("norm stats need at least 2 samples, got 0"))?;
    let mut acc = NormAccumulator::new(first.upsampled.channels());
    acc.push(first)?;
    for p in iter {
        acc.push(p)?;
    }
    acc.finish()
}

fn apply_affine(f: &Field, stats: &NormStats, kind: NormKind, forward: bool) -> Result<Field> {
    if f.channels().len() != stats.channels.len() {
        return Err(Error::validation(format!(
            "field has {} channels, stats have {}",
            f.channels().len(),
            stats.channels.len()
        )));
    }
    for (c, ch) in stats.channels.iter().enumerate() {
        if ch.label != f.channels().label(c) {
            return Err(Error::validation(format!(
                "channel {c} mismatch: field {:?}, stats {:?}",
                f.channels().label(c),
                ch.label
            )));
        }
    }
    let n = f.grid().n_cells();
    let mut data = vec![0.0f32; f.data().len()];
    for c in 0..stats.channels.len() {
        let mu = stats.mean(kind, c);
        let sigma = stats.std(kind, c);
        let src = f.channel(c);
        let dst = &mut data[c * n..(c + 1) * n];
        if forward {
            for (d, v) in dst.iter_mut().zip(src) {
                *d = ((*v as f64 - mu) / sigma) as f32;
            }
        } else {
            for (d, v) in dst.iter_mut().zip(src) {
                *d = (*v as f64 * sigma + mu) as f32;
            }
        }
    }
    let out = Field::from_data(f.grid().clone(), f.channels().clone(), data, None)?;
    Ok(match f.timestamp() {
        Some(t) => out.with_timestamp(t),
        None => out,
    })
}

/// Elementwise `(v - mu) / sigma` with the stats selected by `kind`.
pub fn normalize(f: &Field, stats: &NormStats, kind: NormKind) -> Result<Field> {
    apply_affine(f, stats, kind, true)
}

/// Exact inverse of `normalize` up to f32 rounding.
pub fn denormalize(f: &Field, stats: &NormStats, kind: NormKind) -> Result<Field> {
    apply_affine(f, stats, kind, false)
}

/// Whitens a raw pair into the sample format the trainer consumes.
pub fn normalize_pair(pair: &TrainingPair, stats: &NormStats) -> Result<ResidualSample> {
    Ok(ResidualSample {
        conditioning: normalize(&pair.upsampled, stats, NormKind::Input)?,
        target: normalize(&pair.residual, stats, NormKind::Residual)?,
        time_index: pair.time_index,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{ChannelDef, GridSpec};
    use proptest::prelude::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn cat2() -> Arc<ChannelCatalog> {
        ChannelCatalog::new(vec![
            ChannelDef::surface("t2m"),
            ChannelDef::pressure("z", 500),
        ])
        .unwrap()
    }

    fn random_field(
        grid: &Arc<GridSpec>,
        cat: &Arc<ChannelCatalog>,
        seed: u64,
        lo: f32,
        hi: f32,
    ) -> Field {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..cat.len() * grid.n_cells())
            .map(|_| rng.random_range(lo..hi))
            .collect();
        Field::from_data(grid.clone(), cat.clone(), data, None).unwrap()
    }

    fn grids() -> (Arc<GridSpec>, Arc<GridSpec>, RegridPlan) {
        let lr = GridSpec::global(4, 8).unwrap();
        let hr = GridSpec::global(12, 24).unwrap();
        let plan = RegridPlan::bicubic(lr.clone(), hr.clone()).unwrap();
        (lr, hr, plan)
    }

    #[test]
    fn residual_of_pure_upsampling_is_zero() {
        let (lr, _hr, plan) = grids();
        let cat = cat2();
        let f_lr = random_field(&lr, &cat, 3, -1.0, 1.0);
        let up = interpolate_up(&f_lr, &plan).unwrap();
        let (_, residual) = decompose(&up, &f_lr, &plan).unwrap();
        assert!(residual.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn reconstruction_is_bit_exact_for_offset_fields() {
        // With both operands in [9, 11] every pixel satisfies the Sterbenz
        // condition b/2 <= a <= 2b, so (a-b)+b returns a exactly.
        let (lr, hr, plan) = grids();
        let cat = cat2();
        let f_lr = random_field(&lr, &cat, 5, 9.5, 10.5);
        let f_hr = random_field(&hr, &cat, 6, 9.0, 11.0);
        let (up, residual) = decompose(&f_hr, &f_lr, &plan).unwrap();
        let back = residual.checked_add(&up).unwrap();
        assert_eq!(back.data(), f_hr.data());
    }

    #[test]
    fn two_sample_stats_match_hand_values() {
        let (lr, hr, _plan) = grids();
        let _ = lr;
        let cat = cat2();
        let n = cat.len() * hr.n_cells();
        let mk = |v: f32| Field::from_data(hr.clone(), cat.clone(), vec![v; n], None).unwrap();
        // Inputs {0, 2} and residuals {-1, 1}: population mean/std over the
        // two constants are (1, 1) and (0, 1).
        let pairs = vec![
            TrainingPair {
                upsampled: mk(0.0),
                residual: mk(-1.0),
                time_index: 0,
            },
            TrainingPair {
                upsampled: mk(2.0),
                residual: mk(1.0),
                time_index: 1,
            },
        ];
        let stats = fit_norm_stats(&pairs).unwrap();
        assert_eq!(stats.n_samples, 2);
        for c in 0..2 {
            assert!((stats.mean(NormKind::Input, c) - 1.0).abs() < 1e-12);
            assert!((stats.std(NormKind::Input, c) - 1.0).abs() < 1e-12);
            assert!(stats.mean(NormKind::Residual, c).abs() < 1e-12);
            assert!((stats.std(NormKind::Residual, c) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_channel_is_a_named_error() {
        let (_lr, hr, _plan) = grids();
        let cat = cat2();
        let n = cat.len() * hr.n_cells();
        let mk = |v: f32| Field::from_data(hr.clone(), cat.clone(), vec![v; n], None).unwrap();
        let pairs = vec![
            TrainingPair {
                upsampled: mk(1.0),
                residual: mk(0.5),
                time_index: 0,
            },
            TrainingPair {
                upsampled: mk(1.0),
                residual: mk(0.5),
                time_index: 1,
            },
        ];
        let err = fit_norm_stats(&pairs).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("t2m"), "error should name the channel: {msg}");
    }

    #[test]
    fn fewer_than_two_samples_rejected() {
        let (_lr, hr, _plan) = grids();
        let cat = cat2();
        let f = random_field(&hr, &cat, 1, -1.0, 1.0);
        let pairs = vec![TrainingPair {
            upsampled: f.clone(),
            residual: f,
            time_index: 0,
        }];
        assert!(fit_norm_stats(&pairs).is_err());
        assert!(fit_norm_stats(&[]).is_err());
    }

    #[test]
    fn normalized_training_set_is_white() {
        let (_lr, hr, _plan) = grids();
        let cat = cat2();
        let pairs: Vec<TrainingPair> = (0..8)
            .map(|i| TrainingPair {
                upsampled: random_field(&hr, &cat, 100 + i, -3.0, 5.0),
                residual: random_field(&hr, &cat, 200 + i, -0.5, 0.5),
                time_index: i as i64,
            })
            .collect();
        let stats = fit_norm_stats(&pairs).unwrap();
        let normalized: Vec<TrainingPair> = pairs
            .iter()
            .map(|p| {
                let s = normalize_pair(p, &stats).unwrap();
                TrainingPair {
                    upsampled: s.conditioning,
                    residual: s.target,
                    time_index: s.time_index,
                }
            })
            .collect();
        let restats = fit_norm_stats(&normalized).unwrap();
        for c in 0..2 {
            for kind in [NormKind::Input, NormKind::Residual] {
                assert!(restats.mean(kind, c).abs() < 0.01);
                assert!((restats.std(kind, c) - 1.0).abs() < 0.01);
            }
        }
    }

    #[test]
    fn accumulator_merge_matches_single_pass() {
        let (_lr, hr, _plan) = grids();
        let cat = cat2();
        let pairs: Vec<TrainingPair> = (0..6)
            .map(|i| TrainingPair {
                upsampled: random_field(&hr, &cat, 300 + i, -2.0, 2.0),
                residual: random_field(&hr, &cat, 400 + i, -1.0, 1.0),
                time_index: i as i64,
            })
            .collect();
        let single = fit_norm_stats(&pairs).unwrap();
        let mut a = NormAccumulator::new(&cat);
        let mut b = NormAccumulator::new(&cat);
        for p in &pairs[..2] {
            a.push(p).unwrap();
        }
        for p in &pairs[2..] {
            b.push(p).unwrap();
        }
        a.merge(&b).unwrap();
        let merged = a.finish().unwrap();
        for c in 0..2 {
            for kind in [NormKind::Input, NormKind::Residual] {
                assert!((single.mean(kind, c) - merged.mean(kind, c)).abs() < 1e-12);
                assert!((single.std(kind, c) - merged.std(kind, c)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn stats_json_round_trip_and_validation() {
        let (_lr, hr, _plan) = grids();
        let cat = cat2();
        let pairs: Vec<TrainingPair> = (0..3)
            .map(|i| TrainingPair {
                upsampled: random_field(&hr, &cat, 500 + i, -2.0, 2.0),
                residual: random_field(&hr, &cat, 600 + i, -1.0, 1.0),
                time_index: i as i64,
            })
            .collect();
        let stats = fit_norm_stats(&pairs).unwrap();
        let json = stats.to_json().unwrap();
        let back = NormStats::from_json(&json).unwrap();
        assert_eq!(stats, back);
        back.validate(&cat).unwrap();

        let other = ChannelCatalog::new(vec![
            ChannelDef::surface("u10"),
            ChannelDef::pressure("z", 500),
        ])
        .unwrap();
        assert!(back.validate(&other).is_err());
    }

    #[test]
    fn normalize_hand_values() {
        let (_lr, hr, _plan) = grids();
        let cat = cat2();
        let n = hr.n_cells();
        let stats = NormStats {
            schema: NORM_SCHEMA.to_string(),
            n_samples: 2,
            catalog_hash: cat.content_hash(),
            channels: vec![
                ChannelNorm {
                    label: "t2m".into(),
                    input: MeanStd { mean: 280.0, std: 15.0 },
                    residual: MeanStd { mean: 0.0, std: 2.0 },
                },
                ChannelNorm {
                    label: "z500".into(),
                    input: MeanStd { mean: 5500.0, std: 300.0 },
                    residual: MeanStd { mean: 0.0, std: 40.0 },
                },
            ],
        };
        // Channel values mu and mu + sigma map to 0 and 1.
        let mut data = vec![280.0f32; 2 * n];
        data[1] = 295.0;
        for v in &mut data[n..] {
            *v = 5500.0;
        }
        data[n + 1] = 5800.0;
        let f = Field::from_data(hr, cat, data, None).unwrap();
        let z = normalize(&f, &stats, NormKind::Input).unwrap();
        assert_eq!(z.at(0, 0, 0), 0.0);
        assert_eq!(z.at(0, 0, 1), 1.0);
        assert_eq!(z.at(1, 0, 0), 0.0);
        assert_eq!(z.at(1, 0, 1), 1.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn reconstruction_error_is_sub_ulp(seed in 0u64..1000) {
            // General zero-crossing fields: (a-b)+b may round, but never by
            // more than one ulp of the larger operand.
            let (lr, hr, plan) = grids();
            let cat = cat2();
            let f_lr = random_field(&lr, &cat, seed, -2.0, 2.0);
            let f_hr = random_field(&hr, &cat, seed ^ 0xabcd, -2.0, 2.0);
            let (up, residual) = decompose(&f_hr, &f_lr, &plan).unwrap();
            let back = residual.checked_add(&up).unwrap();
            for i in 0..back.data().len() {
                let (a, b) = (f_hr.data()[i], up.data()[i]);
                let tol = 1.2e-7 * a.abs().max(b.abs()).max(f32::MIN_POSITIVE);
                prop_assert!((back.data()[i] - a).abs() <= tol);
            }
        }

        #[test]
        fn normalize_round_trip(seed in 0u64..1000) {
            let (_lr, hr, _plan) = grids();
            let cat = cat2();
            let pairs: Vec<TrainingPair> = (0..3)
                .map(|i| TrainingPair {
                    upsampled: random_field(&hr, &cat, seed.wrapping_add(i), -4.0, 9.0),
                    residual: random_field(&hr, &cat, seed.wrapping_add(50 + i), -1.0, 1.0),
                    time_index: i as i64,
                })
                .collect();
            let stats = fit_norm_stats(&pairs).unwrap();
            let f = random_field(&hr, &cat, seed ^ 0x5555, -4.0, 9.0);
            for kind in [NormKind::Input, NormKind::Residual] {
                let back = denormalize(&normalize(&f, &stats, kind).unwrap(), &stats, kind).unwrap();
                for c in 0..cat.len() {
                    let scale = stats.std(kind, c) + stats.mean(kind, c).abs();
                    for (x, y) in f.channel(c).iter().zip(back.channel(c)) {
                        prop_assert!((x - y).abs() as f64 <= 1e-6 * (x.abs() as f64 + scale));
                    }
                }
            }
        }

        #[test]
        fn fit_is_permutation_invariant(seed in 0u64..500) {
            let (_lr, hr, _plan) = grids();
            let cat = cat2();
            let mut pairs: Vec<TrainingPair> = (0..5)
                .map(|i| TrainingPair {
                    upsampled: random_field(&hr, &cat, seed.wrapping_add(i), -2.0, 2.0),
                    residual: random_field(&hr, &cat, seed.wrapping_add(70 + i), -1.0, 1.0),
                    time_index: i as i64,
                })
                .collect();
            let forward = fit_norm_stats(&pairs).unwrap();
            pairs.reverse();
            pairs.swap(0, 2);
            let shuffled = fit_norm_stats(&pairs).unwrap();
            for c in 0..cat.len() {
                for kind in [NormKind::Input, NormKind::Residual] {
                    let (m1, m2) = (forward.mean(kind, c), shuffled.mean(kind, c));
                    let (s1, s2) = (forward.std(kind, c), shuffled.std(kind, c));
                    prop_assert!((m1 - m2).abs() <= 1e-12 * m1.abs().max(1.0));
                    prop_assert!((s1 - s2).abs() <= 1e-12 * s1);
                }
            }
        }
    }
}
