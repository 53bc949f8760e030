//! Zonal power spectra, spectrum ratios, and log-log slope fits.
//!
//! The estimator is a per-latitude-row periodogram of the zonal series,
//! averaged over rows with area weights, one-sided in wavenumber
//! (cycles per 360 degrees of longitude). Bin 0 carries the squared row
//! mean; bins k >= 1 are normalized so their sum equals the area-weighted
//! zonal variance (Parseval).

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::grid::Field;

/// Earth's equatorial circumference, km.
pub const EARTH_CIRCUMFERENCE_KM: f64 = 40_075.017;
/// Latitude at which equivalent wavelengths are quoted.
pub const REFERENCE_LATITUDE_DEG: f64 = 45.0;

/// One-sided zonal power spectrum, one energy row per channel.
#[derive(Debug, Clone)]
pub struct Spectrum {
    n_lon: usize,
    channel_labels: Vec<String>,
    /// energy[channel][k], k = 0 ..= n_lon/2.
    energy: Vec<Vec<f64>>,
    /// Number of fields averaged into this spectrum.
    n_fields: usize,
}

impl Spectrum {
    pub fn n_lon(&self) -> usize {
        self.n_lon
    }

    pub fn max_wavenumber(&self) -> usize {
        self.n_lon / 2
    }

    pub fn n_channels(&self) -> usize {
        self.channel_labels.len()
    }

    pub fn channel_labels(&self) -> &[String] {
        &self.channel_labels
    }

    pub fn n_fields(&self) -> usize {
        self.n_fields
    }

    pub fn energy(&self, channel: usize, k: usize) -> f64 {
        self.energy[channel][k]
    }

    pub fn energies(&self, channel: usize) -> &[f64] {
        &self.energy[channel]
    }

    /// Wavelength of wavenumber `k` at the reference latitude; infinite
    /// for k = 0.
    pub fn wavelength_km(&self, k: usize) -> f64 {
        let circumference =
            EARTH_CIRCUMFERENCE_KM * REFERENCE_LATITUDE_DEG.to_radians().cos();
        if k == 0 {
            f64::INFINITY
        } else {
            circumference / k as f64
        }
    }
}

/// Area-weighted zonal power spectrum of one field.
pub fn zonal_power_spectrum(f: &Field) -> Spectrum {
    let grid = f.grid();
    let (n_lat, n_lon) = (grid.n_lat(), grid.n_lon());
    let n_k = n_lon / 2 + 1;
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(n_lon);
    let mut buf = vec![Complex::new(0.0, 0.0); n_lon];
    let norm = 1.0 / (n_lon as f64 * n_lon as f64);

    let mut energy = vec![vec![0.0f64; n_k]; f.channels().len()];
    for c in 0..f.channels().len() {
        let ch = f.channel(c);
        for j in 0..n_lat {
            // Row weights are cell weights times n_lon, so they sum to 1.
            let w = grid.cell_area_weight(j) * n_lon as f64;
            for (b, v) in buf.iter_mut().zip(&ch[j * n_lon..(j + 1) * n_lon]) {
                *b = Complex::new(*v as f64, 0.0);
            }
            fft.process(&mut buf);
            let e = &mut energy[c];
            e[0] += w * buf[0].norm_sqr() * norm;
            for k in 1..n_k {
                // One-sided: fold the conjugate bin, except at Nyquist.
                let fold = if 2 * k == n_lon { 1.0 } else { 2.0 };
                e[k] += w * fold * buf[k].norm_sqr() * norm;
            }
        }
    }
    Spectrum {
        n_lon,
        channel_labels: (0..f.channels().len()).map(|c| f.channels().label(c)).collect(),
        energy,
        n_fields: 1,
    }
}

/// Energy-averaged spectrum over a set of fields (e.g., ensemble members
/// or a time sample), averaged before any ratios are taken.
pub fn mean_spectrum<'a>(fields: impl IntoIterator<Item = &'a Field>) -> Result<Spectrum> {
    let mut acc: Option<Spectrum> = None;
    for f in fields {
        let s = zonal_power_spectrum(f);
        match &mut acc {
            None => acc = Some(s),
            Some(a) => {
                if a.n_lon != s.n_lon || a.channel_labels != s.channel_labels {
                    return Err(Error::validation(
                        "mean_spectrum: fields have mismatched grids or catalogs",
                    ));
                }
                for (ea, es) in a.energy.iter_mut().zip(&s.energy) {
                    for (x, y) in ea.iter_mut().zip(es) {
                        *x += *y;
                    }
                }
                a.n_fields += 1;
            }
        }
    }
    let mut a = acc.ok_or_else(|| Error::validation("mean_spectrum: no fields given"))?;
    let inv = 1.0 / a.n_fields as f64;
    for e in &mut a.energy {
        for x in e.iter_mut() {
            *x *= inv;
        }
    }
    Ok(a)
}

/// Wavenumber below which a coarse grid with `n_lon_lr` columns can
/// represent zonal structure; ratios above it probe generated scales.
pub fn coarse_cutoff(n_lon_lr: usize) -> usize {
    n_lon_lr / 2
}

/// Elementwise model/reference energy ratios with a marked cutoff.
#[derive(Debug, Clone)]
pub struct SpectrumRatio {
    channel_labels: Vec<String>,
    /// ratio[channel][k], k = 0 ..= n_lon/2.
    ratio: Vec<Vec<f64>>,
    cutoff_k: usize,
}

impl SpectrumRatio {
    pub fn n_channels(&self) -> usize {
        self.channel_labels.len()
    }

    pub fn channel_labels(&self) -> &[String] {
        &self.channel_labels
    }

    pub fn cutoff_k(&self) -> usize {
        self.cutoff_k
    }

    pub fn ratios(&self, channel: usize) -> &[f64] {
        &self.ratio[channel]
    }

    /// Median ratio over wavenumbers strictly above the cutoff.
    pub fn median_above_cutoff(&self, channel: usize) -> f64 {
        let mut vals: Vec<f64> = self.ratio[channel][self.cutoff_k + 1..].to_vec();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = vals.len();
        if n == 0 {
            f64::NAN
        } else if n % 2 == 1 {
            vals[n / 2]
        } else {
            0.5 * (vals[n / 2 - 1] + vals[n / 2])
        }
    }
}

/// Ratio of model to reference energy per (channel, k). Reference energy
/// must be positive at every k >= 1; the mean bin k = 0 falls back to 1
/// when both energies vanish (zero-mean fields).
pub fn spectrum_ratio(
    model: &Spectrum,
    reference: &Spectrum,
    cutoff_k: usize,
) -> Result<SpectrumRatio> {
    if model.n_lon != reference.n_lon || model.channel_labels != reference.channel_labels {
        return Err(Error::validation(
            "spectrum_ratio: spectra have mismatched wavenumber grids or channels",
        ));
    }
    if cutoff_k >= model.max_wavenumber() {
        return Err(Error::validation(format!(
            "cutoff k={} leaves no wavenumbers below Nyquist {}",
            cutoff_k,
            model.max_wavenumber()
        )));
    }
    let mut ratio = Vec::with_capacity(model.n_channels());
    for c in 0..model.n_channels() {
        let mut row = Vec::with_capacity(model.max_wavenumber() + 1);
        for k in 0..=model.max_wavenumber() {
            let r = reference.energy(c, k);
            let m = model.energy(c, k);
            if k == 0 && r <= f64::MIN_POSITIVE && m <= f64::MIN_POSITIVE {
                row.push(1.0);
            } else if r <= 0.0 {
                return Err(Error::numerical(format!(
                    "zero reference energy at channel {}, k={}",
                    model.channel_labels[c], k
                )));
            } else {
                row.push(m / r);
            }
        }
        ratio.push(row);
    }
    Ok(SpectrumRatio {
        channel_labels: model.channel_labels.clone(),
        ratio,
        cutoff_k,
    })
}

/// Least-squares slope of log E over log k for k in [k_lo, k_hi].
pub fn fit_loglog_slope(spec: &Spectrum, channel: usize, k_lo: usize, k_hi: usize) -> Result<f64> {
    if k_lo < 1 || k_hi <= k_lo || k_hi > spec.max_wavenumber() {
        return Err(Error::validation(format!(
            "bad slope-fit range [{k_lo}, {k_hi}] for Nyquist {}",
            spec.max_wavenumber()
        )));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for k in k_lo..=k_hi {
        let e = spec.energy(channel, k);
        if e <= 0.0 {
            return Err(Error::numerical(format!(
                "non-positive energy at k={k}; cannot fit log-log slope"
            )));
        }
        xs.push((k as f64).ln());
        ys.push(e.ln());
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in xs.iter().zip(&ys) {
        num += (x - mx) * (y - my);
        den += (x - mx) * (x - mx);
    }
    Ok(num / den)
}
