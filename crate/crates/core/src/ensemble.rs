//! Fair probabilistic verification metrics.
//!
//! Every estimator here is "fair": its expectation under an M-member
//! ensemble equals the infinite-ensemble value, via explicit small-M
//! corrections. Scores are area-weighted over pixels, computed per
//! (channel, lead), and averaged over init dates inside the square root
//! where one applies. Per-sample fair scores may be negative; only their
//! expectation is nonnegative, so nothing here clamps except the
//! documented RMSE radicand guard.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{EnsembleSet, Field, TimeIndex, Trajectory};
use crate::synth::Climatology;

/// Radicands in [-NEG_RADICAND_TOL, 0) clamp to zero; anything lower is a
/// real inconsistency and errors.
const NEG_RADICAND_TOL: f64 = 1e-12;

/// (1/M) sum |x_i - y| - (1/(2 M (M-1))) sum_{i,j} |x_i - x_j|.
pub fn fair_crps_kernel(members: &[f64], y: f64) -> f64 {
    let m = members.len();
    debug_assert!(m >= 2);
    let mut t1 = 0.0f64;
    for x in members {
        t1 += (x - y).abs();
    }
    t1 /= m as f64;
    let mut t2 = 0.0f64;
    for xi in members {
        for xj in members {
            t2 += (xi - xj).abs();
        }
    }
    t2 /= 2.0 * m as f64 * (m as f64 - 1.0);
    t1 - t2
}

/// (p - event)^2 - p(1-p)/(M-1) with p the member exceedance fraction.
pub fn fair_brier_kernel(exceed_count: usize, m: usize, event: bool) -> f64 {
    debug_assert!(m >= 2);
    let p = exceed_count as f64 / m as f64;
    let e = if event { 1.0 } else { 0.0 };
    (p - e) * (p - e) - p * (1.0 - p) / (m as f64 - 1.0)
}

fn check_pair(ens: &EnsembleSet, truth: &Trajectory) -> Result<()> {
    if ens.members().len() < 2 {
        return Err(Error::validation("fair metrics need at least 2 members"));
    }
    let lead0 = &ens.members()[0];
    if truth.states().len() != lead0.states().len() {
        return Err(Error::validation("truth and ensemble lead counts differ"));
    }
    if truth.init_time() != ens.init_time()
        || truth.lead_step_hours() != ens.lead_step_hours()
    {
        return Err(Error::validation("truth and ensemble times differ"));
    }
    if truth.grid().as_ref() != ens.grid().as_ref()
        || truth.channels().as_ref() != ens.channels().as_ref()
    {
        return Err(Error::validation("truth and ensemble shapes differ"));
    }
    Ok(())
}

/// Mean-square building blocks of the (fair) ensemble-mean RMSE and the
/// spread, per (lead, channel); all already area-weighted pixel means.
struct MsdSpread {
    msd: Vec<Vec<f64>>,
    spread_sq: Vec<Vec<f64>>,
}

fn msd_spread_components(ens: &EnsembleSet, truth: &Trajectory) -> Result<MsdSpread> {
    check_pair(ens, truth)?;
    let grid = truth.grid();
    let (h, w) = (grid.n_lat(), grid.n_lon());
    let n_ch = truth.channels().len();
    let n_leads = truth.states().len();
    let m = ens.members().len();
    let mut msd = vec![vec![0.0f64; n_ch]; n_leads];
    let mut spread_sq = vec![vec![0.0f64; n_ch]; n_leads];
    for lead in 0..n_leads {
        let yv = &truth.states()[lead];
        let members: Vec<&Field> = ens
            .members()
            .iter()
            .map(|t| &t.states()[lead])
            .collect();
        for c in 0..n_ch {
            let y = yv.channel(c);
            let chans: Vec<&[f32]> = members.iter().map(|f| f.channel(c)).collect();
            let mut acc_msd = 0.0f64;
            let mut acc_var = 0.0f64;
            for j in 0..h {
                let wj = grid.cell_area_weight(j);
                for k in 0..w {
                    let px = j * w + k;
                    let mut mean = 0.0f64;
                    for ch in &chans {
                        mean += ch[px] as f64;
                    }
                    mean /= m as f64;
                    let d = mean - y[px] as f64;
                    acc_msd += wj * d * d;
                    let mut dev = 0.0f64;
                    for ch in &chans {
                        let e = ch[px] as f64 - mean;
                        dev += e * e;
                    }
                    acc_var += wj * dev / (m as f64 - 1.0);
                }
            }
            msd[lead][c] = acc_msd;
            spread_sq[lead][c] = acc_var;
        }
    }
    Ok(MsdSpread { msd, spread_sq })
}

fn sqrt_clamped(radicand: f64) -> Result<f64> {
    if radicand < -NEG_RADICAND_TOL {
        return Err(Error::numerical(format!(
            "negative fair-RMSE radicand {radicand} signals inconsistent inputs"
        )));
    }
    Ok(radicand.max(0.0).sqrt())
}

/// Fair ensemble-mean RMSE per [lead][channel]: the small-M noise term
/// spread^2 / M is removed inside the square root.
pub fn fair_ens_mean_rmse(ens: &EnsembleSet, truth: &Trajectory) -> Result<Vec<Vec<f64>>> {
    let parts = msd_spread_components(ens, truth)?;
    let m = ens.members().len() as f64;
    parts
        .msd
        .iter()
        .zip(&parts.spread_sq)
        .map(|(msd_l, sp_l)| {
            msd_l
                .iter()
                .zip(sp_l)
                .map(|(msd, sp)| sqrt_clamped(msd - sp / m))
                .collect()
        })
        .collect()
}

/// Non-fair ensemble-mean RMSE per [lead][channel].
pub fn ens_mean_rmse(ens: &EnsembleSet, truth: &Trajectory) -> Result<Vec<Vec<f64>>> {
    let parts = msd_spread_components(ens, truth)?;
    Ok(parts
        .msd
        .iter()
        .map(|l| l.iter().map(|v| v.sqrt()).collect())
        .collect())
}

/// Fair CRPS per [lead][channel]: area-weighted mean of the pointwise
/// kernel.
pub fn fair_crps(ens: &EnsembleSet, truth: &Trajectory) -> Result<Vec<Vec<f64>>> {
    check_pair(ens, truth)?;
    let grid = truth.grid();
    let (h, w) = (grid.n_lat(), grid.n_lon());
    let n_ch = truth.channels().len();
    let n_leads = truth.states().len();
    let m = ens.members().len();
    let mut out = vec![vec![0.0f64; n_ch]; n_leads];
    let mut vals = vec![0.0f64; m];
    for lead in 0..n_leads {
        let yv = &truth.states()[lead];
        let members: Vec<&Field> = ens
            .members()
            .iter()
            .map(|t| &t.states()[lead])
            .collect();
        for c in 0..n_ch {
            let y = yv.channel(c);
            let chans: Vec<&[f32]> = members.iter().map(|f| f.channel(c)).collect();
            let mut acc = 0.0f64;
            for j in 0..h {
                let wj = grid.cell_area_weight(j);
                for k in 0..w {
                    let px = j * w + k;
                    for (v, ch) in vals.iter_mut().zip(&chans) {
                        *v = ch[px] as f64;
                    }
                    acc += wj * fair_crps_kernel(&vals, y[px] as f64);
                }
            }
            out[lead][c] = acc;
        }
    }
    Ok(out)
}

/// Weighted l2 distance over the channel-stacked field vector; each
/// component carries sqrt(area weight x level/variable weight).
fn weighted_l2(a: &Field, b: &Field) -> f64 {
    let grid = a.grid();
    let cat = a.channels();
    let (h, w) = (grid.n_lat(), grid.n_lon());
    let mut acc = 0.0f64;
    for c in 0..cat.len() {
        let lw = cat.loss_weight(c);
        let ca = a.channel(c);
        let cb = b.channel(c);
        for j in 0..h {
            let wj = grid.cell_area_weight(j);
            for k in 0..w {
                let d = ca[j * w + k] as f64 - cb[j * w + k] as f64;
                acc += lw * wj * d * d;
            }
        }
    }
    acc.sqrt()
}

/// Fair energy score per lead: the CRPS structure with the l1 norm
/// replaced by the weighted l2 norm over whole fields.
pub fn energy_score(ens: &EnsembleSet, truth: &Trajectory) -> Result<Vec<f64>> {
    check_pair(ens, truth)?;
    let n_leads = truth.states().len();
    let m = ens.members().len();
    let mut out = vec![0.0f64; n_leads];
    for lead in 0..n_leads {
        let y = &truth.states()[lead];
        let members: Vec<&Field> = ens
            .members()
            .iter()
            .map(|t| &t.states()[lead])
            .collect();
        let mut t1 = 0.0f64;
        for x in &members {
            t1 += weighted_l2(x, y);
        }
        t1 /= m as f64;
        let mut t2 = 0.0f64;
        for (i, xi) in members.iter().enumerate() {
            for xj in members.iter().skip(i + 1) {
                t2 += weighted_l2(xi, xj);
            }
        }
        // Unordered pairs counted once; the ordered double sum is twice
        // that, so the 1/(2 M (M-1)) prefactor becomes 1/(M (M-1)).
        t2 /= m as f64 * (m as f64 - 1.0);
        out[lead] = t1 - t2;
    }
    Ok(out)
}

/// Fair Brier score per [lead][channel] for the symmetric quantile pair
/// (q, 1-q): thresholds are the climatology's per-pixel quantile fields,
/// and the reported value is the average of the two scores.
pub fn fair_brier(
    ens: &EnsembleSet,
    truth: &Trajectory,
    clim: &Climatology,
    q: f64,
) -> Result<Vec<Vec<f64>>> {
    check_pair(ens, truth)?;
    if !(0.0 < q && q < 1.0) {
        return Err(Error::validation(format!("quantile {q} outside (0, 1)")));
    }
    if truth.grid().as_ref() != clim.grid().as_ref() {
        return Err(Error::validation("climatology grid differs from inputs"));
    }
    let q_pair = [q, 1.0 - q];
    let thresholds: Vec<&Field> = q_pair
        .iter()
        .map(|qq| {
            clim.quantile_index(*qq)
                .map(|qi| clim.quantile_field(qi))
                .ok_or_else(|| {
                    Error::validation(format!("climatology lacks quantile {qq}"))
                })
        })
        .collect::<Result<Vec<_>>>()?;

    let grid = truth.grid();
    let (h, w) = (grid.n_lat(), grid.n_lon());
    let n_ch = truth.channels().len();
    let n_leads = truth.states().len();
    let m = ens.members().len();
    let mut out = vec![vec![0.0f64; n_ch]; n_leads];
    for lead in 0..n_leads {
        let yv = &truth.states()[lead];
        let members: Vec<&Field> = ens
            .members()
            .iter()
            .map(|t| &t.states()[lead])
            .collect();
        for c in 0..n_ch {
            let y = yv.channel(c);
            let chans: Vec<&[f32]> = members.iter().map(|f| f.channel(c)).collect();
            let mut acc = 0.0f64;
            for thr_field in &thresholds {
                let thr = thr_field.channel(c);
                for j in 0..h {
                    let wj = grid.cell_area_weight(j);
                    for k in 0..w {
                        let px = j * w + k;
                        let t = thr[px];
                        let exceed = chans.iter().filter(|ch| ch[px] > t).count();
                        let event = y[px] > t;
                        acc += wj * fair_brier_kernel(exceed, m, event);
                    }
                }
            }
            out[lead][c] = acc / 2.0;
        }
    }
    Ok(out)
}

/// sqrt((M+1)/M) x Spread / EnsMeanRMSE per [lead][channel]; the
/// denominator is deliberately the non-fair RMSE.
pub fn spread_skill_ratio(ens: &EnsembleSet, truth: &Trajectory) -> Result<Vec<Vec<f64>>> {
    let parts = msd_spread_components(ens, truth)?;
    let m = ens.members().len() as f64;
    let corr = ((m + 1.0) / m).sqrt();
    parts
        .spread_sq
        .iter()
        .zip(&parts.msd)
        .map(|(sp_l, msd_l)| {
            sp_l.iter()
                .zip(msd_l)
                .map(|(sp, msd)| {
                    if *msd <= 0.0 {
                        Err(Error::numerical("zero ensemble-mean RMSE in SSR"))
                    } else {
                        Ok(corr * sp.sqrt() / msd.sqrt())
                    }
                })
                .collect()
        })
        .collect()
}

/// 1 - model/reference; positive means the model improves on the
/// reference.
pub fn skill_score(model: f64, reference: f64) -> Result<f64> {
    if !(reference > 0.0) {
        return Err(Error::validation("reference score must be positive"));
    }
    Ok(1.0 - model / reference)
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricRow {
    pub metric: String,
    pub channel: Option<String>,
    pub lead_hours: i64,
    pub q: Option<f64>,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricReport {
    pub n_members: usize,
    pub n_dates: usize,
    pub rows: Vec<MetricRow>,
}

/// One metric value for one init date, the unit the significance test
/// resamples.
#[derive(Debug, Clone, Serialize)]
pub struct DateScoreRow {
    pub metric: String,
    pub channel: Option<String>,
    pub lead_hours: i64,
    pub q: Option<f64>,
    pub init_time: TimeIndex,
    pub value: f64,
}

/// Computes every metric over a set of paired (forecast ensemble, truth)
/// init dates: aggregate values average mean-square components over dates
/// before any square root, and per-date rows carry the same metrics at
/// T=1 for downstream significance testing.
pub fn ensemble_report(
    cases: &[(EnsembleSet, Trajectory)],
    clim: &Climatology,
    brier_qs: &[f64],
) -> Result<(MetricReport, Vec<DateScoreRow>)> {
    if cases.is_empty() {
        return Err(Error::validation("ensemble report needs at least one date"));
    }
    let catalog = cases[0].1.channels().clone();
    let n_ch = catalog.len();
    let n_leads = cases[0].1.states().len();
    let m = cases[0].0.members().len();
    let lead_step = cases[0].1.lead_step_hours() as i64;
    for (ens, truth) in cases {
        if truth.states().len() != n_leads || ens.members().len() != m {
            return Err(Error::validation(
                "all dates must share lead count and member count",
            ));
        }
    }

    let mut msd = vec![vec![0.0f64; n_ch]; n_leads];
    let mut spread_sq = vec![vec![0.0f64; n_ch]; n_leads];
    let mut crps = vec![vec![0.0f64; n_ch]; n_leads];
    let mut es = vec![0.0f64; n_leads];
    let mut brier = vec![vec![vec![0.0f64; n_ch]; n_leads]; brier_qs.len()];
    let mut date_rows = Vec::new();

    for (ens, truth) in cases {
        let t0 = truth.init_time();
        let parts = msd_spread_components(ens, truth)?;
        let crps_d = fair_crps(ens, truth)?;
        let es_d = energy_score(ens, truth)?;
        let brier_d = brier_qs
            .iter()
            .map(|q| fair_brier(ens, truth, clim, *q))
            .collect::<Result<Vec<_>>>()?;
        let mf = m as f64;
        for lead in 0..n_leads {
            let lead_h = (lead as i64 + 1) * lead_step;
            for c in 0..n_ch {
                msd[lead][c] += parts.msd[lead][c];
                spread_sq[lead][c] += parts.spread_sq[lead][c];
                crps[lead][c] += crps_d[lead][c];
                let label = Some(catalog.label(c));
                date_rows.push(DateScoreRow {
                    metric: "fair_ens_mean_rmse".into(),
                    channel: label.clone(),
                    lead_hours: lead_h,
                    q: None,
                    init_time: t0,
                    value: sqrt_clamped(parts.msd[lead][c] - parts.spread_sq[lead][c] / mf)?,
                });
                date_rows.push(DateScoreRow {
                    metric: "fair_crps".into(),
                    channel: label.clone(),
                    lead_hours: lead_h,
                    q: None,
                    init_time: t0,
                    value: crps_d[lead][c],
                });
                for (qi, q) in brier_qs.iter().enumerate() {
                    brier[qi][lead][c] += brier_d[qi][lead][c];
                    date_rows.push(DateScoreRow {
                        metric: "fair_brier".into(),
                        channel: label.clone(),
                        lead_hours: lead_h,
                        q: Some(*q),
                        init_time: t0,
                        value: brier_d[qi][lead][c],
                    });
                }
            }
            es[lead] += es_d[lead];
            date_rows.push(DateScoreRow {
                metric: "energy_score".into(),
                channel: None,
                lead_hours: lead_h,
                q: None,
                init_time: t0,
                value: es_d[lead],
            });
        }
    }

    let t = cases.len() as f64;
    let mf = m as f64;
    let ssr_corr = ((mf + 1.0) / mf).sqrt();
    let mut rows = Vec::new();
    for lead in 0..n_leads {
        let lead_h = (lead as i64 + 1) * lead_step;
        for c in 0..n_ch {
            let label = Some(catalog.label(c));
            let mean_msd = msd[lead][c] / t;
            let mean_sp = spread_sq[lead][c] / t;
            rows.push(MetricRow {
                metric: "fair_ens_mean_rmse".into(),
                channel: label.clone(),
                lead_hours: lead_h,
                q: None,
                value: sqrt_clamped(mean_msd - mean_sp / mf)?,
            });
            rows.push(MetricRow {
                metric: "ens_mean_rmse".into(),
                channel: label.clone(),
                lead_hours: lead_h,
                q: None,
                value: mean_msd.sqrt(),
            });
            rows.push(MetricRow {
                metric: "spread".into(),
                channel: label.clone(),
                lead_hours: lead_h,
                q: None,
                value: mean_sp.sqrt(),
            });
            if mean_msd > 0.0 {
                rows.push(MetricRow {
                    metric: "spread_skill_ratio".into(),
                    channel: label.clone(),
                    lead_hours: lead_h,
                    q: None,
                    value: ssr_corr * mean_sp.sqrt() / mean_msd.sqrt(),
                });
            }
            rows.push(MetricRow {
                metric: "fair_crps".into(),
                channel: label.clone(),
                lead_hours: lead_h,
                q: None,
                value: crps[lead][c] / t,
            });
            for (qi, q) in brier_qs.iter().enumerate() {
                rows.push(MetricRow {
                    metric: "fair_brier".into(),
                    channel: label.clone(),
                    lead_hours: lead_h,
                    q: Some(*q),
                    value: brier[qi][lead][c] / t,
                });
            }
        }
        rows.push(MetricRow {
            metric: "energy_score".into(),
            channel: None,
            lead_hours: lead_h,
            q: None,
            value: es[lead] / t,
        });
    }
    Ok((
        MetricReport {
            n_members: m,
            n_dates: cases.len(),
            rows,
        },
        date_rows,
    ))
}

/// Skill of a model report against a reference report: 1 - model/ref per
/// matching row, averaged without weights over channels at each lead.
pub fn average_skill(
    model: &MetricReport,
    reference: &MetricReport,
    metric: &str,
) -> Result<Vec<(i64, f64)>> {
    let mut by_lead: Vec<(i64, Vec<f64>)> = Vec::new();
    for row in model.rows.iter().filter(|r| r.metric == metric) {
        let rref = reference
            .rows
            .iter()
            .find(|r| {
                r.metric == metric
                    && r.channel == row.channel
                    && r.lead_hours == row.lead_hours
                    && r.q == row.q
            })
            .ok_or_else(|| {
                Error::validation(format!(
                    "reference report lacks {metric} at lead {}",
                    row.lead_hours
                ))
            })?;
        let s = skill_score(row.value, rref.value)?;
        match by_lead.iter_mut().find(|(l, _)| *l == row.lead_hours) {
            Some((_, v)) => v.push(s),
            None => by_lead.push((row.lead_hours, vec![s])),
        }
    }
    if by_lead.is_empty() {
        return Err(Error::validation(format!("no rows for metric {metric}")));
    }
    Ok(by_lead
        .into_iter()
        .map(|(l, v)| (l, v.iter().sum::<f64>() / v.len() as f64))
        .collect())
}
