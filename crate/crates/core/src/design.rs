//! Design-validation diagnostics: does the reconstruction, once
//! re-coarsened, still look like the coarse input it was built from?
//!
//! Three per-channel measures answer that: area-weighted pattern
//! correlation with spatial means removed, activity (time-mean spatial
//! variance of climatology anomalies), and NRMSE against the
//! climatological standard deviation. All spatial averages are
//! area-weighted and accumulate in f64.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{Field, Trajectory};
use crate::synth::Climatology;

/// Area-weighted spatial mean per channel.
fn spatial_means(f: &Field) -> Vec<f64> {
    f.weighted_mean()
}

/// Area-weighted Pearson correlation per channel, spatial means removed.
pub fn pattern_correlation(a: &Field, b: &Field) -> Result<Vec<f64>> {
    if !a.same_shape(b) {
        return Err(Error::validation("fields live on different grids"));
    }
    let grid = a.grid();
    let (h, w) = (grid.n_lat(), grid.n_lon());
    let ma = spatial_means(a);
    let mb = spatial_means(b);
    let mut out = Vec::with_capacity(a.channels().len());
    for c in 0..a.channels().len() {
        let ca = a.channel(c);
        let cb = b.channel(c);
        let (mut cov, mut va, mut vb) = (0.0f64, 0.0f64, 0.0f64);
        for j in 0..h {
            let wj = grid.cell_area_weight(j);
            for k in 0..w {
                let da = ca[j * w + k] as f64 - ma[c];
                let db = cb[j * w + k] as f64 - mb[c];
                cov += wj * da * db;
                va += wj * da * da;
                vb += wj * db * db;
            }
        }
        if va == 0.0 || vb == 0.0 {
            return Err(Error::numerical(format!(
                "zero spatial variance in channel {} prevents correlation",
                a.channels().label(c)
            )));
        }
        out.push(cov / (va * vb).sqrt());
    }
    Ok(out)
}

/// Time-mean area-weighted spatial variance of climatology anomalies,
/// per channel. Each field must carry a valid timestamp so the matching
/// climatology slot can be subtracted.
pub fn activity<'a>(
    fields: impl IntoIterator<Item = &'a Field>,
    clim: &Climatology,
) -> Result<Vec<f64>> {
    let mut acc: Option<Vec<f64>> = None;
    let mut count = 0usize;
    for f in fields {
        let t = f
            .timestamp()
            .ok_or_else(|| Error::validation("activity needs timestamped fields"))?;
        let m = clim.mean_for(t);
        if !f.same_shape(m) {
            return Err(Error::validation("field and climatology grids differ"));
        }
        let grid = f.grid();
        let (h, w) = (grid.n_lat(), grid.n_lon());
        let n_ch = f.channels().len();
        // Anomalies stay in f64: one f32 rounding here would dominate the
        // error budget of the variance.
        let mut var = vec![0.0f64; n_ch];
        for c in 0..n_ch {
            let fv = f.channel(c);
            let mv = m.channel(c);
            let mut mean = 0.0f64;
            for j in 0..h {
                let wj = grid.cell_area_weight(j);
                for k in 0..w {
                    mean += wj * (fv[j * w + k] as f64 - mv[j * w + k] as f64);
                }
            }
            let mut v = 0.0f64;
            for j in 0..h {
                let wj = grid.cell_area_weight(j);
                for k in 0..w {
                    let a = fv[j * w + k] as f64 - mv[j * w + k] as f64 - mean;
                    v += wj * a * a;
                }
            }
            var[c] = v;
        }
        match &mut acc {
            Some(a) => {
                for (x, v) in a.iter_mut().zip(&var) {
                    *x += *v;
                }
            }
            None => acc = Some(var),
        }
        count += 1;
    }
    let mut acc = acc.ok_or_else(|| Error::validation("activity needs at least one field"))?;
    for x in &mut acc {
        *x /= count as f64;
    }
    Ok(acc)
}

/// activity(sr recoarsened) / activity(lr), per channel.
pub fn activity_ratio<'a>(
    sr_re: impl IntoIterator<Item = &'a Field>,
    lr: impl IntoIterator<Item = &'a Field>,
    clim: &Climatology,
) -> Result<Vec<f64>> {
    let num = activity(sr_re, clim)?;
    let den = activity(lr, clim)?;
    num.iter()
        .zip(&den)
        .map(|(n, d)| {
            if *d <= 0.0 {
                Err(Error::numerical("zero reference activity"))
            } else {
                Ok(n / d)
            }
        })
        .collect()
}

/// sqrt(time-mean area-weighted MSE) / climatological sigma, per channel.
pub fn nrmse<'a>(
    sr_re: impl IntoIterator<Item = &'a Field>,
    lr: impl IntoIterator<Item = &'a Field>,
    sigma_clim: &[f64],
) -> Result<Vec<f64>> {
    let mut acc: Option<Vec<f64>> = None;
    let mut count = 0usize;
    for (a, b) in sr_re.into_iter().zip(lr) {
        if !a.same_shape(b) {
            return Err(Error::validation("paired fields live on different grids"));
        }
        let grid = a.grid();
        let (h, w) = (grid.n_lat(), grid.n_lon());
        let n_ch = a.channels().len();
        let mse = {
            let mut per_ch = vec![0.0f64; n_ch];
            for c in 0..n_ch {
                let ca = a.channel(c);
                let cb = b.channel(c);
                let mut s = 0.0f64;
                for j in 0..h {
                    let wj = grid.cell_area_weight(j);
                    for k in 0..w {
                        let d = ca[j * w + k] as f64 - cb[j * w + k] as f64;
                        s += wj * d * d;
                    }
                }
                per_ch[c] = s;
            }
            per_ch
        };
        match &mut acc {
            Some(t) => {
                for (x, m) in t.iter_mut().zip(&mse) {
                    *x += *m;
                }
            }
            None => acc = Some(mse),
        }
        count += 1;
    }
    let acc = acc.ok_or_else(|| Error::validation("nrmse needs at least one pair"))?;
    if sigma_clim.len() != acc.len() {
        return Err(Error::validation("sigma_clim length does not match channels"));
    }
    acc.iter()
        .zip(sigma_clim)
        .map(|(m, s)| {
            if !(*s > 0.0) {
                Err(Error::numerical("climatological sigma must be positive"))
            } else {
                Ok((m / count as f64).sqrt() / s)
            }
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct DesignRow {
    pub channel: String,
    pub lead_hours: i64,
    pub corr: f64,
    pub activity_ratio: f64,
    pub nrmse: f64,
    pub n_samples: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct DesignReport {
    pub rows: Vec<DesignRow>,
}

/// Builds the per-(channel, lead) report from paired trajectories over
/// several init times: each pair is (recoarsened SR, original LR).
/// Correlation is the mean of per-init-time correlations; activity ratio
/// and NRMSE pool fields across init times at each lead.
pub fn design_report(
    pairs: &[(Trajectory, Trajectory)],
    clim: &Climatology,
) -> Result<DesignReport> {
    if pairs.is_empty() {
        return Err(Error::validation("design report needs at least one pair"));
    }
    let n_leads = pairs[0].0.states().len();
    for (sr, lr) in pairs {
        if sr.states().len() != n_leads || lr.states().len() != n_leads {
            return Err(Error::validation("trajectories have differing lead counts"));
        }
    }
    let catalog = pairs[0].0.channels().clone();
    let sigma = clim.channel_std();
    let mut rows = Vec::new();
    for lead in 0..n_leads {
        let sr_fields: Vec<&Field> = pairs.iter().map(|(sr, _)| &sr.states()[lead]).collect();
        let lr_fields: Vec<&Field> = pairs.iter().map(|(_, lr)| &lr.states()[lead]).collect();

        let mut corr_sum = vec![0.0f64; catalog.len()];
        for (s, l) in sr_fields.iter().zip(&lr_fields) {
            let c = pattern_correlation(s, l)?;
            for (a, b) in corr_sum.iter_mut().zip(&c) {
                *a += *b;
            }
        }
        let ratio = activity_ratio(
            sr_fields.iter().copied(),
            lr_fields.iter().copied(),
            clim,
        )?;
        let nr = nrmse(sr_fields.iter().copied(), lr_fields.iter().copied(), sigma)?;
        let lead_h = pairs[0].0.lead_hours(lead) as i64;
        for c in 0..catalog.len() {
            rows.push(DesignRow {
                channel: catalog.label(c),
                lead_hours: lead_h,
                corr: corr_sum[c] / pairs.len() as f64,
                activity_ratio: ratio[c],
                nrmse: nr[c],
                n_samples: pairs.len(),
            });
        }
    }
    Ok(DesignReport { rows })
}
