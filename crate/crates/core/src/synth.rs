//! Synthetic data world: Gaussian-random-field truth with prescribed
//! zonal spectra and AR(1) temporal correlation, a toy stochastic forecast
//! emulator on the coarse grid, and climatology construction (slot means
//! plus pooled per-pixel quantiles).

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ChannelCatalog, EnsembleSet, Field, GridSpec, TimeIndex, Trajectory};
use crate::rng::{domain, substream};

/// Hours per time step of the synthetic world.
pub const STEP_HOURS: i64 = 24;

/// Configuration of the GRF truth generator. Channels are independent;
/// `slopes[c]` is the target zonal log-log spectral slope and
/// `amplitudes[c]` the marginal standard deviation of channel `c`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GrfConfig {
    pub slopes: Vec<f64>,
    pub amplitudes: Vec<f64>,
    /// Lag-1 temporal autocorrelation of each channel.
    pub ar1_phi: f64,
    pub seed: u64,
}

impl GrfConfig {
    fn validate(&self, catalog: &ChannelCatalog) -> Result<()> {
        if self.slopes.len() != catalog.len() || self.amplitudes.len() != catalog.len() {
            return Err(Error::validation(format!(
                "config covers {} slopes / {} amplitudes, catalog has {} channels",
                self.slopes.len(),
                self.amplitudes.len(),
                catalog.len()
            )));
        }
        if self.slopes.iter().any(|s| !s.is_finite() || *s >= 0.0) {
            return Err(Error::validation("spectral slopes must be negative"));
        }
        if self.amplitudes.iter().any(|a| !a.is_finite() || *a <= 0.0) {
            return Err(Error::validation("amplitudes must be positive"));
        }
        if !(0.0..1.0).contains(&self.ar1_phi) {
            return Err(Error::validation("ar1_phi must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Unnormalized 2D FFT over a row-major `n_lat x n_lon` complex buffer.
fn fft_2d(buf: &mut [Complex<f64>], n_lat: usize, n_lon: usize, inverse: bool) {
    let mut planner = FftPlanner::<f64>::new();
    let row_fft = if inverse {
        planner.plan_fft_inverse(n_lon)
    } else {
        planner.plan_fft_forward(n_lon)
    };
    for j in 0..n_lat {
        row_fft.process(&mut buf[j * n_lon..(j + 1) * n_lon]);
    }
    let col_fft = if inverse {
        planner.plan_fft_inverse(n_lat)
    } else {
        planner.plan_fft_forward(n_lat)
    };
    let mut col = vec![Complex::new(0.0, 0.0); n_lat];
    for k in 0..n_lon {
        for j in 0..n_lat {
            col[j] = buf[j * n_lon + k];
        }
        col_fft.process(&mut col);
        for j in 0..n_lat {
            buf[j * n_lon + k] = col[j];
        }
    }
}

/// Spectral filter that shapes white noise into a unit-variance field
/// whose zonal spectrum falls as k^slope. The 2D amplitude goes as
/// k^((slope-1)/2): integrating an isotropic 2D power law over the
/// meridional wavenumber raises the 1D slope by one.
fn build_filter(n_lat: usize, n_lon: usize, slope: f64) -> Vec<f64> {
    let mut filter = vec![0.0f64; n_lat * n_lon];
    let mut sumsq = 0.0f64;
    for ky in 0..n_lat {
        let fy = ky.min(n_lat - ky) as f64;
        for kx in 0..n_lon {
            let fx = kx.min(n_lon - kx) as f64;
            let kr = (fy * fy + fx * fx).sqrt();
            if kr > 0.0 {
                let a = kr.powf((slope - 1.0) / 2.0);
                filter[ky * n_lon + kx] = a;
                sumsq += a * a;
            }
        }
    }
    let n = (n_lat * n_lon) as f64;
    // White noise with unit variance has E|F_k|^2 = N, and we divide the
    // inverse FFT by N, so pixel variance comes out as sumsq / N.
    let scale = (n / sumsq).sqrt();
    for a in &mut filter {
        *a *= scale;
    }
    filter
}

/// One unit-variance GRF draw with the given spectral filter.
fn draw_grf(filter: &[f64], n_lat: usize, n_lon: usize, rng: &mut impl Rng) -> Vec<f64> {
    let n = n_lat * n_lon;
    let mut buf: Vec<Complex<f64>> = (0..n)
        .map(|_| Complex::new(rng.sample::<f64, _>(StandardNormal), 0.0))
        .collect();
    fft_2d(&mut buf, n_lat, n_lon, false);
    for (b, a) in buf.iter_mut().zip(filter) {
        *b *= *a;
    }
    fft_2d(&mut buf, n_lat, n_lon, true);
    let inv_n = 1.0 / n as f64;
    buf.iter().map(|z| z.re * inv_n).collect()
}

/// Generates an AR(1)-correlated GRF truth sequence, timestamped at
/// `STEP_HOURS` intervals from 0. Innovations are drawn from substreams
/// keyed by (channel, time), so any prefix of the sequence is independent
/// of `n_times`.
pub fn generate_truth(
    grid: &Arc<GridSpec>,
    catalog: &Arc<ChannelCatalog>,
    cfg: &GrfConfig,
    n_times: usize,
) -> Result<Vec<Field>> {
    cfg.validate(catalog)?;
    if n_times == 0 {
        return Err(Error::validation("n_times must be positive"));
    }
    let (n_lat, n_lon) = (grid.n_lat(), grid.n_lon());
    let n = grid.n_cells();
    let filters: Vec<Vec<f64>> = cfg
        .slopes
        .iter()
        .map(|s| build_filter(n_lat, n_lon, *s))
        .collect();
    let phi = cfg.ar1_phi;
    let innov_scale = (1.0 - phi * phi).sqrt();

    let mut state: Vec<Vec<f64>> = vec![vec![0.0; n]; catalog.len()];
    let mut out = Vec::with_capacity(n_times);
    for t in 0..n_times {
        let mut data = vec![0.0f32; catalog.len() * n];
        for c in 0..catalog.len() {
            let mut rng = substream(cfg.seed, &[domain::SYNTH_TRUTH, c as u64, t as u64]);
            let g = draw_grf(&filters[c], n_lat, n_lon, &mut rng);
            let s = &mut state[c];
            if t == 0 {
                s.copy_from_slice(&g);
            } else {
                for (x, gi) in s.iter_mut().zip(&g) {
                    *x = phi * *x + innov_scale * *gi;
                }
            }
            let amp = cfg.amplitudes[c];
            for (d, x) in data[c * n..(c + 1) * n].iter_mut().zip(s.iter()) {
                *d = (amp * *x) as f32;
            }
        }
        out.push(
            Field::from_data(grid.clone(), catalog.clone(), data, Some(t as i64 * STEP_HOURS))?,
        );
    }
    Ok(out)
}

/// Climatology of a field sample: per-slot mean states plus pooled
/// per-pixel quantiles and the pooled per-channel standard deviation.
#[derive(Debug, Clone)]
pub struct Climatology {
    n_slots: usize,
    slot_means: Vec<Field>,
    quantile_qs: Vec<f64>,
    quantiles: Vec<Field>,
    channel_std: Vec<f64>,
}

/// Default quantile levels for threshold-based scores.
pub const DEFAULT_QUANTILES: [f64; 6] = [0.01, 0.05, 0.10, 0.90, 0.95, 0.99];

impl Climatology {
    pub fn n_slots(&self) -> usize {
        self.n_slots
    }

    /// Day-of-cycle slot for a time index.
    pub fn slot_of(&self, t: TimeIndex) -> usize {
        (t.div_euclid(STEP_HOURS)).rem_euclid(self.n_slots as i64) as usize
    }

    pub fn slot_mean(&self, slot: usize) -> &Field {
        &self.slot_means[slot]
    }

    /// Climatological mean state for the slot containing time `t`.
    pub fn mean_for(&self, t: TimeIndex) -> &Field {
        &self.slot_means[self.slot_of(t)]
    }

    pub fn qs(&self) -> &[f64] {
        &self.quantile_qs
    }

    pub fn quantile_index(&self, q: f64) -> Option<usize> {
        self.quantile_qs.iter().position(|x| (x - q).abs() < 1e-9)
    }

    /// Per-pixel threshold field for quantile level `qs()[qi]`.
    pub fn quantile_field(&self, qi: usize) -> &Field {
        &self.quantiles[qi]
    }

    /// Pooled per-channel standard deviation of the building sample.
    pub fn channel_std(&self) -> &[f64] {
        &self.channel_std
    }

    pub fn grid(&self) -> &Arc<GridSpec> {
        self.slot_means[0].grid()
    }

    pub fn channels(&self) -> &Arc<ChannelCatalog> {
        self.slot_means[0].channels()
    }

    /// Rebuilds the struct from stored parts; used by the on-disk reader.
    pub fn from_parts(
        n_slots: usize,
        slot_means: Vec<Field>,
        quantile_qs: Vec<f64>,
        quantiles: Vec<Field>,
        channel_std: Vec<f64>,
    ) -> Result<Climatology> {
        if slot_means.len() != n_slots || n_slots == 0 {
            return Err(Error::validation("slot mean count does not match n_slots"));
        }
        if quantiles.len() != quantile_qs.len() {
            return Err(Error::validation("quantile field count does not match q levels"));
        }
        if channel_std.len() != slot_means[0].channels().len() {
            return Err(Error::validation("channel std count does not match catalog"));
        }
        Ok(Climatology {
            n_slots,
            slot_means,
            quantile_qs,
            quantiles,
            channel_std,
        })
    }
}

/// Linear interpolation of order statistics at level `q`; `sorted` is
/// ascending.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let h = (n as f64 - 1.0) * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Builds a climatology over `n_slots` day-of-cycle slots from a
/// timestamped sample. Every slot needs at least 2 members; quantiles are
/// pooled over the whole sample per (channel, pixel).
pub fn build_climatology(fields: &[Field], n_slots: usize, qs: &[f64]) -> Result<Climatology> {
    if fields.len() < 2 {
        return Err(Error::validation("climatology needs at least 2 fields"));
    }
    if n_slots == 0 {
        return Err(Error::validation("n_slots must be positive"));
    }
    if qs.iter().any(|q| !(0.0..=1.0).contains(q)) {
        return Err(Error::validation("quantile levels must lie in [0, 1]"));
    }
    let grid = fields[0].grid().clone();
    let catalog = fields[0].channels().clone();
    for f in fields {
        if !f.same_shape(&fields[0]) {
            return Err(Error::validation("climatology sample must share one grid"));
        }
        if f.timestamp().is_none() {
            return Err(Error::validation("climatology sample fields must be timestamped"));
        }
    }
    let n = grid.n_cells();
    let n_ch = catalog.len();
    let slot_for = |t: i64| (t.div_euclid(STEP_HOURS)).rem_euclid(n_slots as i64) as usize;

    let mut slot_sum = vec![vec![0.0f64; n_ch * n]; n_slots];
    let mut slot_count = vec![0usize; n_slots];
    for f in fields {
        let slot = slot_for(f.timestamp().unwrap());
        slot_count[slot] += 1;
        for (acc, v) in slot_sum[slot].iter_mut().zip(f.data()) {
            *acc += *v as f64;
        }
    }
    for (slot, count) in slot_count.iter().enumerate() {
        if *count < 2 {
            return Err(Error::validation(format!(
                "climatology slot {slot} has {count} samples, need at least 2"
            )));
        }
    }
    let slot_means = slot_sum
        .into_iter()
        .zip(&slot_count)
        .map(|(sum, count)| {
            let inv = 1.0 / *count as f64;
            let data = sum.iter().map(|v| (v * inv) as f32).collect();
            Field::from_data(grid.clone(), catalog.clone(), data, None)
        })
        .collect::<Result<Vec<_>>>()?;

    // Pooled per-pixel quantiles and per-channel std over the full sample.
    let mut quantiles = vec![vec![0.0f32; n_ch * n]; qs.len()];
    let mut channel_std = Vec::with_capacity(n_ch);
    let mut column = vec![0.0f64; fields.len()];
    for c in 0..n_ch {
        let mut sum = 0.0f64;
        let mut sumsq = 0.0f64;
        for i in 0..n {
            for (t, f) in fields.iter().enumerate() {
                let v = f.channel(c)[i] as f64;
                column[t] = v;
                sum += v;
                sumsq += v * v;
            }
            column.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for (qi, q) in qs.iter().enumerate() {
                quantiles[qi][c * n + i] = quantile_sorted(&column, *q) as f32;
            }
        }
        let count = (n * fields.len()) as f64;
        let mean = sum / count;
        channel_std.push((sumsq / count - mean * mean).max(0.0).sqrt());
    }
    let quantiles = quantiles
        .into_iter()
        .map(|data| Field::from_data(grid.clone(), catalog.clone(), data, None))
        .collect::<Result<Vec<_>>>()?;

    Ok(Climatology {
        n_slots,
        slot_means,
        quantile_qs: qs.to_vec(),
        quantiles,
        channel_std,
    })
}

/// Toy stochastic forecast emulator standing in for a learned forecast
/// model on the coarse grid. Each step advects the state zonally, relaxes
/// it toward the climatological slot mean, and adds member-specific
/// spectral noise.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToyForecastModel {
    /// Zonal advection speed in (possibly fractional) cells per step.
    pub advection_cells_per_step: f64,
    /// Relaxation rate toward climatology per step, in [0, 1].
    pub relaxation: f64,
    /// Additive noise standard deviation per step, as a fraction of the
    /// climatological channel standard deviation.
    pub noise_scale: f64,
    /// Zonal spectral slope of the additive noise.
    pub noise_slope: f64,
    pub seed: u64,
}

impl ToyForecastModel {
    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.relaxation) {
            return Err(Error::validation("relaxation must lie in [0, 1]"));
        }
        if self.noise_scale < 0.0 || !self.noise_scale.is_finite() {
            return Err(Error::validation("noise scale must be non-negative"));
        }
        if !self.noise_slope.is_finite() || self.noise_slope >= 0.0 {
            return Err(Error::validation("noise slope must be negative"));
        }
        Ok(())
    }
}

/// Shifts every row of every channel left by `cells` columns via Fourier
/// phase rotation; exact for periodic rows, including fractional shifts.
fn advect_zonal(data: &mut [f64], n_ch: usize, n_lat: usize, n_lon: usize, cells: f64) {
    if cells == 0.0 {
        return;
    }
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n_lon);
    let inv = planner.plan_fft_inverse(n_lon);
    let mut buf = vec![Complex::new(0.0, 0.0); n_lon];
    let inv_n = 1.0 / n_lon as f64;
    for cj in 0..n_ch * n_lat {
        let row = &mut data[cj * n_lon..(cj + 1) * n_lon];
        for (b, v) in buf.iter_mut().zip(row.iter()) {
            *b = Complex::new(*v, 0.0);
        }
        fwd.process(&mut buf);
        for (k, b) in buf.iter_mut().enumerate() {
            if 2 * k == n_lon {
                // Nyquist bin must stay real for a real output row.
                *b *= (std::f64::consts::PI * cells).cos();
            } else {
                let kf = if 2 * k < n_lon {
                    k as f64
                } else {
                    k as f64 - n_lon as f64
                };
                let theta = -std::f64::consts::TAU * kf * cells / n_lon as f64;
                *b *= Complex::from_polar(1.0, theta);
            }
        }
        inv.process(&mut buf);
        for (v, b) in row.iter_mut().zip(&buf) {
            *v = b.re * inv_n;
        }
    }
}

/// Runs the emulator from a coarse initial state for `n_leads` steps and
/// `n_members` members. Member streams are keyed by (seed, member, step,
/// channel), so each member is reproducible in isolation.
pub fn emulate_forecast(
    init: &Field,
    model: &ToyForecastModel,
    clim: &Climatology,
    n_leads: usize,
    n_members: usize,
) -> Result<EnsembleSet> {
    model.validate()?;
    if n_leads == 0 || n_members == 0 {
        return Err(Error::validation("n_leads and n_members must be positive"));
    }
    if !init.same_shape(clim.slot_mean(0)) {
        return Err(Error::validation(
            "initial state and climatology live on different grids",
        ));
    }
    let init_time = init
        .timestamp()
        .ok_or_else(|| Error::validation("initial state must carry a timestamp"))?;
    let grid = init.grid().clone();
    let catalog = init.channels().clone();
    let noise_filter = build_filter(grid.n_lat(), grid.n_lon(), model.noise_slope);

    let mut members = Vec::with_capacity(n_members);
    for m in 0..n_members {
        let mut state: Vec<f64> = init.data().iter().map(|v| *v as f64).collect();
        let mut states = Vec::with_capacity(n_leads);
        for step in 0..n_leads {
            let valid = init_time + (step as i64 + 1) * STEP_HOURS;
            step_raw(
                &mut state,
                model,
                clim,
                &noise_filter,
                m as u64,
                step as u64,
                valid,
            );
            let data: Vec<f32> = state.iter().map(|v| *v as f32).collect();
            states.push(Field::from_data(grid.clone(), catalog.clone(), data, None)?);
        }
        members.push(Trajectory::new(init_time, STEP_HOURS as u32, states)?);
    }
    EnsembleSet::new(members)
}

/// One emulator step on a raw f64 state: advect, relax toward the valid
/// time's climatology slot, then add member-keyed spectral noise.
fn step_raw(
    state: &mut [f64],
    model: &ToyForecastModel,
    clim: &Climatology,
    noise_filter: &[f64],
    member: u64,
    step: u64,
    valid: TimeIndex,
) {
    let grid = clim.grid();
    let (n_lat, n_lon) = (grid.n_lat(), grid.n_lon());
    let n = grid.n_cells();
    let n_ch = clim.channels().len();
    advect_zonal(state, n_ch, n_lat, n_lon, model.advection_cells_per_step);
    let target = clim.mean_for(valid);
    let rho = model.relaxation;
    for c in 0..n_ch {
        let tgt = target.channel(c);
        let s = &mut state[c * n..(c + 1) * n];
        for (x, t) in s.iter_mut().zip(tgt) {
            *x = (1.0 - rho) * *x + rho * *t as f64;
        }
        if model.noise_scale > 0.0 {
            let mut rng = substream(model.seed, &[domain::FORECAST, member, step, c as u64]);
            let g = draw_grf(noise_filter, n_lat, n_lon, &mut rng);
            let sigma = model.noise_scale * clim.channel_std()[c];
            for (x, gi) in s.iter_mut().zip(&g) {
                *x += sigma * *gi;
            }
        }
    }
}

/// Advances one coarse state by one emulator step, for pipeline-integrated
/// rollouts where the state is re-injected from outside. Uses the same
/// (seed, member, step, channel) noise streams as `emulate_forecast`, so a
/// plain rollout assembled from this function reproduces its members.
pub fn toy_forecast_step(
    state: &Field,
    model: &ToyForecastModel,
    clim: &Climatology,
    member: u64,
    step: u64,
) -> Result<Field> {
    model.validate()?;
    if !state.same_shape(clim.slot_mean(0)) {
        return Err(Error::validation(
            "state and climatology live on different grids",
        ));
    }
    let t = state
        .timestamp()
        .ok_or_else(|| Error::validation("state must carry a timestamp"))?;
    let grid = state.grid();
    let noise_filter = build_filter(grid.n_lat(), grid.n_lon(), model.noise_slope);
    let mut raw: Vec<f64> = state.data().iter().map(|v| *v as f64).collect();
    let valid = t + STEP_HOURS;
    step_raw(&mut raw, model, clim, &noise_filter, member, step, valid);
    let data: Vec<f32> = raw.iter().map(|v| *v as f32).collect();
    Ok(Field::from_data(grid.clone(), state.channels().clone(), data, Some(valid))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::ChannelDef;
    use crate::spectra::{fit_loglog_slope, mean_spectrum};

    fn cat(n: usize) -> Arc<ChannelCatalog> {
        let names = ["t2m", "u10", "v10"];
        ChannelCatalog::new(
            (0..n)
                .map(|i| {
                    if i < 3 {
                        ChannelDef::surface(names[i])
                    } else {
                        ChannelDef::pressure("z", 300 + 100 * i as u32)
                    }
                })
                .collect(),
        )
        .unwrap()
    }

    fn cfg(n_ch: usize, seed: u64) -> GrfConfig {
        GrfConfig {
            slopes: vec![-3.0; n_ch],
            amplitudes: vec![1.0; n_ch],
            ar1_phi: 0.6,
            seed,
        }
    }

    #[test]
    fn truth_is_seed_deterministic() {
        let g = GridSpec::global(8, 16).unwrap();
        let c = cat(2);
        let a = generate_truth(&g, &c, &cfg(2, 7), 4).unwrap();
        let b = generate_truth(&g, &c, &cfg(2, 7), 4).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.data(), y.data());
        }
        let other = generate_truth(&g, &c, &cfg(2, 8), 4).unwrap();
        assert_ne!(a[0].data(), other[0].data());
        // Prefix stability: a longer run starts with the same fields.
        let longer = generate_truth(&g, &c, &cfg(2, 7), 6).unwrap();
        assert_eq!(a[3].data(), longer[3].data());
    }

    #[test]
    fn generated_slope_matches_configuration() {
        let g = GridSpec::global(48, 96).unwrap();
        let c = cat(1);
        let fields = generate_truth(&g, &c, &cfg(1, 99), 24).unwrap();
        let spec = mean_spectrum(fields.iter()).unwrap();
        let slope = fit_loglog_slope(&spec, 0, 4, 24).unwrap();
        assert!((slope + 3.0).abs() < 0.3, "fitted slope {slope}");
    }

    #[test]
    fn marginal_variance_matches_amplitude() {
        let g = GridSpec::global(16, 32).unwrap();
        let c = cat(1);
        let mut config = cfg(1, 5);
        config.amplitudes = vec![2.5];
        let fields = generate_truth(&g, &c, &config, 60).unwrap();
        let mut sumsq = 0.0f64;
        let mut count = 0.0f64;
        for f in &fields {
            for v in f.data() {
                sumsq += (*v as f64) * (*v as f64);
                count += 1.0;
            }
        }
        let std = (sumsq / count).sqrt();
        assert!((std - 2.5).abs() < 0.25, "pooled std {std}");
    }

    #[test]
    fn lag_one_autocorrelation_matches_phi() {
        let g = GridSpec::global(8, 16).unwrap();
        let c = cat(1);
        let fields = generate_truth(&g, &c, &cfg(1, 21), 500).unwrap();
        let mut num = 0.0f64;
        let mut den = 0.0f64;
        for t in 1..fields.len() {
            let (a, b) = (fields[t - 1].data(), fields[t].data());
            for (x, y) in a.iter().zip(b) {
                num += (*x as f64) * (*y as f64);
            }
            for x in a {
                den += (*x as f64) * (*x as f64);
            }
        }
        let rho = num / den;
        assert!((rho - 0.6).abs() < 0.05, "lag-1 autocorrelation {rho}");
    }

    fn small_clim(grid: &Arc<GridSpec>, catalog: &Arc<ChannelCatalog>, seed: u64) -> Climatology {
        let truth = generate_truth(grid, catalog, &cfg(catalog.len(), seed), 16).unwrap();
        build_climatology(&truth, 4, &DEFAULT_QUANTILES).unwrap()
    }

    #[test]
    fn zero_noise_members_are_identical() {
        let g = GridSpec::global(8, 16).unwrap();
        let c = cat(2);
        let clim = small_clim(&g, &c, 31);
        let init = generate_truth(&g, &c, &cfg(2, 32), 1).unwrap().remove(0);
        let model = ToyForecastModel {
            advection_cells_per_step: 0.7,
            relaxation: 0.1,
            noise_scale: 0.0,
            noise_slope: -2.0,
            seed: 5,
        };
        let ens = emulate_forecast(&init, &model, &clim, 4, 3).unwrap();
        for m in 1..3 {
            for k in 0..4 {
                assert_eq!(ens.member(0).state(k).data(), ens.member(m).state(k).data());
            }
        }
    }

    #[test]
    fn full_relaxation_pins_states_to_climatology() {
        let g = GridSpec::global(8, 16).unwrap();
        let c = cat(1);
        let clim = small_clim(&g, &c, 41);
        let init = generate_truth(&g, &c, &cfg(1, 42), 1).unwrap().remove(0);
        let model = ToyForecastModel {
            advection_cells_per_step: 1.3,
            relaxation: 1.0,
            noise_scale: 0.0,
            noise_slope: -2.0,
            seed: 5,
        };
        let ens = emulate_forecast(&init, &model, &clim, 3, 1).unwrap();
        for k in 0..3 {
            let valid = ens.member(0).valid_time(k);
            let want = clim.mean_for(valid);
            assert_eq!(ens.member(0).state(k).data(), want.data());
        }
    }

    #[test]
    fn ensemble_spread_grows_with_lead() {
        let g = GridSpec::global(8, 16).unwrap();
        let c = cat(2);
        let clim = small_clim(&g, &c, 51);
        let init = generate_truth(&g, &c, &cfg(2, 52), 1).unwrap().remove(0);
        let model = ToyForecastModel {
            advection_cells_per_step: 0.7,
            relaxation: 0.05,
            noise_scale: 0.15,
            noise_slope: -2.0,
            seed: 6,
        };
        let ens = emulate_forecast(&init, &model, &clim, 10, 8).unwrap();
        let spread_at = |lead: usize, ch: usize| {
            let n = g.n_cells();
            let mut var = 0.0f64;
            for i in 0..n {
                let vals: Vec<f64> = (0..8)
                    .map(|m| ens.member(m).state(lead).channel(ch)[i] as f64)
                    .collect();
                let mean = vals.iter().sum::<f64>() / 8.0;
                var += vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 8.0;
            }
            (var / n as f64).sqrt()
        };
        for ch in 0..2 {
            assert!(
                spread_at(9, ch) > spread_at(0, ch),
                "channel {ch}: spread must grow with lead"
            );
        }
    }

    #[test]
    fn member_streams_are_independent_of_member_count() {
        let g = GridSpec::global(8, 16).unwrap();
        let c = cat(1);
        let clim = small_clim(&g, &c, 61);
        let init = generate_truth(&g, &c, &cfg(1, 62), 1).unwrap().remove(0);
        let model = ToyForecastModel {
            advection_cells_per_step: 0.7,
            relaxation: 0.1,
            noise_scale: 0.2,
            noise_slope: -2.0,
            seed: 9,
        };
        let small = emulate_forecast(&init, &model, &clim, 3, 2).unwrap();
        let large = emulate_forecast(&init, &model, &clim, 3, 5).unwrap();
        for m in 0..2 {
            for k in 0..3 {
                assert_eq!(
                    small.member(m).state(k).data(),
                    large.member(m).state(k).data()
                );
            }
        }
    }

    #[test]
    fn climatology_of_identical_samples_is_the_sample() {
        let g = GridSpec::global(4, 8).unwrap();
        let c = cat(1);
        let base = generate_truth(&g, &c, &cfg(1, 71), 1).unwrap().remove(0);
        let fields: Vec<Field> = (0..8)
            .map(|t| base.clone().with_timestamp(t * STEP_HOURS))
            .collect();
        let clim = build_climatology(&fields, 2, &[0.05, 0.95]).unwrap();
        for slot in 0..2 {
            for (a, b) in clim.slot_mean(slot).data().iter().zip(base.data()) {
                assert!((a - b).abs() < 1e-6);
            }
        }
        for qi in 0..2 {
            assert_eq!(clim.quantile_field(qi).data(), base.data());
        }
    }

    #[test]
    fn slot_means_match_brute_force_average() {
        let g = GridSpec::global(4, 8).unwrap();
        let c = cat(1);
        let fields = generate_truth(&g, &c, &cfg(1, 81), 12).unwrap();
        let clim = build_climatology(&fields, 3, &[0.5]).unwrap();
        // Slot 1 holds times 1, 4, 7, 10.
        let members = [1usize, 4, 7, 10];
        for i in 0..g.n_cells() {
            let want: f64 = members
                .iter()
                .map(|t| fields[*t].data()[i] as f64)
                .sum::<f64>()
                / 4.0;
            let got = clim.slot_mean(1).data()[i] as f64;
            assert!((got - want).abs() < 1e-6);
        }
    }

    #[test]
    fn pooled_quantiles_match_uniform_oracle() {
        // Uniform[0,1] per-pixel samples: the 0.99 quantile estimate over
        // 10^4 draws lands within 0.01 of 0.99.
        let g = GridSpec::global(2, 4).unwrap();
        let c = cat(1);
        let mut rng = substream(123, &[99]);
        let fields: Vec<Field> = (0..10_000)
            .map(|t| {
                let data = (0..g.n_cells())
                    .map(|_| rng.random_range(0.0f32..1.0))
                    .collect();
                Field::from_data(g.clone(), c.clone(), data, Some(t as i64 * STEP_HOURS))
                    .unwrap()
            })
            .collect();
        let clim = build_climatology(&fields, 1, &[0.01, 0.99]).unwrap();
        for i in 0..g.n_cells() {
            let q99 = clim.quantile_field(1).data()[i];
            let q01 = clim.quantile_field(0).data()[i];
            assert!((q99 - 0.99).abs() < 0.01, "q99 {q99}");
            assert!((q01 - 0.01).abs() < 0.01, "q01 {q01}");
        }
        assert!((clim.channel_std()[0] - (1.0f64 / 12.0).sqrt()).abs() < 0.01);
    }

    #[test]
    fn sparse_slots_are_rejected() {
        let g = GridSpec::global(2, 4).unwrap();
        let c = cat(1);
        let fields = generate_truth(&g, &c, &cfg(1, 91), 5).unwrap();
        // 5 fields over 4 slots leave slots with a single sample.
        let err = build_climatology(&fields, 4, &[0.5]).unwrap_err();
        assert!(err.to_string().contains("slot"));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let g = GridSpec::global(4, 8).unwrap();
        let c = cat(1);
        let mut bad = cfg(1, 1);
        bad.slopes = vec![1.0];
        assert!(generate_truth(&g, &c, &bad, 2).is_err());
        let mut bad = cfg(1, 1);
        bad.amplitudes = vec![0.0];
        assert!(generate_truth(&g, &c, &bad, 2).is_err());
        let mut bad = cfg(1, 1);
        bad.ar1_phi = 1.0;
        assert!(generate_truth(&g, &c, &bad, 2).is_err());
        let bad = ToyForecastModel {
            advection_cells_per_step: 0.5,
            relaxation: 1.5,
            noise_scale: 0.1,
            noise_slope: -2.0,
            seed: 1,
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn advection_shifts_rows_periodically() {
        // Integer shift of a delta row is an exact rotation.
        let mut data = vec![0.0f64; 2 * 16];
        data[0] = 1.0;
        data[16 + 5] = 1.0;
        advect_zonal(&mut data, 1, 2, 16, 3.0);
        for k in 0..16 {
            let want0 = if k == 3 { 1.0 } else { 0.0 };
            let want1 = if k == 8 { 1.0 } else { 0.0 };
            assert!((data[k] - want0).abs() < 1e-9, "row 0 col {k}");
            assert!((data[16 + k] - want1).abs() < 1e-9, "row 1 col {k}");
        }
        // Fractional shift preserves the row sum (k=0 mode untouched).
        let mut row: Vec<f64> = (0..16).map(|k| (k as f64 * 0.37).sin()).collect();
        let sum_before: f64 = row.iter().sum();
        advect_zonal(&mut row, 1, 1, 16, 0.45);
        let sum_after: f64 = row.iter().sum();
        assert!((sum_before - sum_after).abs() < 1e-9);
    }
}
