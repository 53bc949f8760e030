//! Reporting commands: design validation, fair ensemble scores, spectral
//! diagnostics, and paired significance testing.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use clap::Args;
use flowsr_core::design::design_report;
use flowsr_core::ensemble::ensemble_report;
use flowsr_core::regrid::{recoarsen_for_validation, RegridPlan};
use flowsr_core::sigtest::{paired_differences, significance_report};
use flowsr_core::spectra::{coarse_cutoff, mean_spectrum, spectrum_ratio};
use flowsr_core::store::{
    read_climatology, read_date_scores_csv, read_ensemble, read_fields, read_trajectory,
    write_date_scores_csv, write_design_csv, write_metric_csv, write_sig_csv,
    write_spectrum_csv, write_spectrum_ratio_csv,
};
use flowsr_core::{EnsembleSet, Error, Field, Result, Trajectory};

use crate::util::{
    classify_input, ensure_parent, parse_f64_list, slice_truth, time_index, InputKind,
};

/// Loads a trajectory per init date from a trajectory record or a date-set
/// root of `date_NNN/traj.fsr` entries.
fn load_traj_set(path: &Path, what: &str) -> Result<Vec<Trajectory>> {
    match classify_input(path)? {
        InputKind::Traj(p) => Ok(vec![read_trajectory(&p)?]),
        InputKind::Ensemble(_) => Err(Error::validation(format!(
            "{what} {}: expected single trajectories per date, found an ensemble directory",
            path.display()
        ))),
        InputKind::DateRoot(dates) => dates
            .iter()
            .map(|(_, dir)| {
                let f = dir.join("traj.fsr");
                if !f.is_file() {
                    return Err(Error::validation(format!(
                        "{what} {}: no traj.fsr in {}",
                        path.display(),
                        dir.display()
                    )));
                }
                read_trajectory(&f)
            })
            .collect(),
    }
}

#[derive(Args)]
pub struct DesignArgs {
    /// Super-resolved fine-grid trajectories (record or date-set root).
    #[arg(long)]
    pub sr: PathBuf,
    /// The original coarse trajectories that were super-resolved.
    #[arg(long)]
    pub lr: PathBuf,
    /// Climatology directory on the coarse grid.
    #[arg(long)]
    pub clim: PathBuf,
    /// Output design-report CSV.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run_verify_design(args: &DesignArgs) -> Result<()> {
    let sr = load_traj_set(&args.sr, "--sr")?;
    let lr = load_traj_set(&args.lr, "--lr")?;
    if sr.len() != lr.len() {
        return Err(Error::validation(format!(
            "--sr has {} dates but --lr has {}",
            sr.len(),
            lr.len()
        )));
    }
    let clim = read_climatology(&args.clim)?;
    let plan = RegridPlan::conservative(sr[0].grid().clone(), lr[0].grid().clone())?;
    let mut pairs = Vec::with_capacity(sr.len());
    for (s, l) in sr.into_iter().zip(lr) {
        if s.init_time() != l.init_time() {
            return Err(Error::validation(format!(
                "date mismatch: SR init {} vs LR init {}",
                s.init_time(),
                l.init_time()
            )));
        }
        let re_states = s
            .states()
            .iter()
            .map(|f| recoarsen_for_validation(f, &plan))
            .collect::<Result<Vec<_>>>()?;
        let re = Trajectory::new(s.init_time(), s.lead_step_hours(), re_states)?;
        pairs.push((re, l));
    }
    let report = design_report(&pairs, &clim)?;
    ensure_parent(&args.out)?;
    write_design_csv(&args.out, &report)?;
    let first_lead = report.rows.first().map(|r| r.lead_hours).unwrap_or(0);
    let summary: Vec<String> = report
        .rows
        .iter()
        .filter(|r| r.lead_hours == first_lead)
        .map(|r| format!("{} corr {:.4} activity {:.3} nrmse {:.4}", r.channel, r.corr, r.activity_ratio, r.nrmse))
        .collect();
    println!(
        "wrote {} ({} dates); lead {} h: {}",
        args.out.display(),
        pairs.len(),
        first_lead,
        summary.join("; ")
    );
    Ok(())
}

#[derive(Args)]
pub struct EnsembleArgs {
    /// Forecast ensembles: a date-set root of member_*.fsr directories (or
    /// one ensemble directory).
    #[arg(long)]
    pub forecasts: PathBuf,
    /// Timestamped truth fields record on the forecast grid.
    #[arg(long)]
    pub truth: PathBuf,
    /// Climatology directory on the forecast grid.
    #[arg(long)]
    pub clim: PathBuf,
    /// Output aggregate-metrics CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional per-init-date score CSV (input to sigtest).
    #[arg(long)]
    pub scores_out: Option<PathBuf>,
    /// Exceedance-quantile levels for the fair Brier score; empty to skip.
    #[arg(long, default_value = "0.9,0.95,0.99")]
    pub qs: String,
}

pub fn run_verify_ensemble(args: &EnsembleArgs) -> Result<()> {
    let ens_dirs: Vec<PathBuf> = match classify_input(&args.forecasts)? {
        InputKind::Ensemble(dir) => vec![dir],
        InputKind::DateRoot(dates) => dates.into_iter().map(|(_, d)| d).collect(),
        InputKind::Traj(p) => {
            return Err(Error::validation(format!(
                "--forecasts {}: expected ensemble directories, found a single trajectory",
                p.display()
            )))
        }
    };
    let truth_fields = read_fields(&args.truth)?;
    let index = time_index(&truth_fields)?;
    let clim = read_climatology(&args.clim)?;
    let qs = parse_f64_list(&args.qs)?;
    let mut cases: Vec<(EnsembleSet, Trajectory)> = Vec::with_capacity(ens_dirs.len());
    for dir in &ens_dirs {
        let ens = read_ensemble(dir)?;
        let truth = slice_truth(
            &truth_fields,
            &index,
            ens.init_time(),
            ens.lead_step_hours(),
            ens.n_leads(),
        )?;
        cases.push((ens, truth));
    }
    let (report, date_rows) = ensemble_report(&cases, &clim, &qs)?;
    ensure_parent(&args.out)?;
    write_metric_csv(&args.out, &report)?;
    let mut note = format!(
        "wrote {} ({} dates, {} members, {} leads)",
        args.out.display(),
        report.n_dates,
        report.n_members,
        cases[0].1.states().len()
    );
    if let Some(scores_out) = &args.scores_out {
        ensure_parent(scores_out)?;
        write_date_scores_csv(scores_out, &date_rows)?;
        note.push_str(&format!(" and {} ({} rows)", scores_out.display(), date_rows.len()));
    }
    println!("{note}");
    Ok(())
}

#[derive(Args)]
pub struct SpectraArgs {
    /// Model fields: trajectory record, ensemble directory, or date-set root.
    #[arg(long)]
    pub forecasts: PathBuf,
    /// Timestamped truth fields record on the same grid.
    #[arg(long)]
    pub truth: PathBuf,
    /// Output CSV for the model's mean zonal spectrum.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional CSV for the truth spectrum over the matched valid times.
    #[arg(long)]
    pub truth_out: Option<PathBuf>,
    /// Optional CSV of model/truth energy ratios per wavenumber.
    #[arg(long)]
    pub ratio_out: Option<PathBuf>,
    /// Coarse cutoff wavenumber for the ratio summary.
    #[arg(long)]
    pub cutoff: Option<usize>,
    /// Derive the cutoff from the training coarsening factor instead.
    #[arg(long)]
    pub factor: Option<usize>,
}

/// Collects every state of every trajectory under the input path.
fn collect_states(path: &Path) -> Result<Vec<Field>> {
    let mut out = Vec::new();
    match classify_input(path)? {
        InputKind::Traj(p) => out.extend(read_trajectory(&p)?.states().to_vec()),
        InputKind::Ensemble(dir) => {
            for m in read_ensemble(&dir)?.members() {
                out.extend(m.states().to_vec());
            }
        }
        InputKind::DateRoot(dates) => {
            for (_, dir) in dates {
                let traj_file = dir.join("traj.fsr");
                if traj_file.is_file() {
                    out.extend(read_trajectory(&traj_file)?.states().to_vec());
                } else {
                    for m in read_ensemble(&dir)?.members() {
                        out.extend(m.states().to_vec());
                    }
                }
            }
        }
    }
    if out.is_empty() {
        return Err(Error::validation(format!(
            "{}: no states found",
            path.display()
        )));
    }
    Ok(out)
}

pub fn run_verify_spectra(args: &SpectraArgs) -> Result<()> {
    let model_states = collect_states(&args.forecasts)?;
    let truth_fields = read_fields(&args.truth)?;
    let index = time_index(&truth_fields)?;
    let valid_times: BTreeSet<i64> = model_states
        .iter()
        .map(|f| {
            f.timestamp()
                .ok_or_else(|| Error::validation("model states must be timestamped"))
        })
        .collect::<Result<_>>()?;
    let truth_sel: Vec<&Field> = valid_times
        .iter()
        .map(|t| {
            index
                .get(t)
                .map(|i| &truth_fields[*i])
                .ok_or_else(|| {
                    Error::validation(format!("truth record has no field at time {t}"))
                })
        })
        .collect::<Result<_>>()?;
    let model_spec = mean_spectrum(model_states.iter())?;
    let truth_spec = mean_spectrum(truth_sel.iter().copied())?;
    ensure_parent(&args.out)?;
    write_spectrum_csv(&args.out, &model_spec)?;
    let mut note = format!(
        "wrote {} ({} states, {} valid times)",
        args.out.display(),
        model_states.len(),
        valid_times.len()
    );
    if let Some(truth_out) = &args.truth_out {
        ensure_parent(truth_out)?;
        write_spectrum_csv(truth_out, &truth_spec)?;
        note.push_str(&format!("; wrote {}", truth_out.display()));
    }
    if let Some(ratio_out) = &args.ratio_out {
        let n_lon = model_states[0].grid().n_lon();
        let cutoff = match (args.cutoff, args.factor) {
            (Some(k), _) => k,
            (None, Some(f)) => {
                if f < 2 || n_lon % f != 0 {
                    return Err(Error::validation(format!(
                        "--factor {f} must be >= 2 and divide the {n_lon}-column grid"
                    )));
                }
                coarse_cutoff(n_lon / f)
            }
            (None, None) => {
                return Err(Error::validation(
                    "--ratio-out needs --cutoff or --factor to place the coarse cutoff",
                ))
            }
        };
        let ratio = spectrum_ratio(&model_spec, &truth_spec, cutoff)?;
        ensure_parent(ratio_out)?;
        write_spectrum_ratio_csv(ratio_out, &ratio)?;
        let medians: Vec<String> = (0..ratio.n_channels())
            .map(|c| {
                format!(
                    "{} {:.3}",
                    ratio.channel_labels()[c],
                    ratio.median_above_cutoff(c)
                )
            })
            .collect();
        note.push_str(&format!(
            "; wrote {} (median ratio above k={}: {})",
            ratio_out.display(),
            cutoff,
            medians.join(", ")
        ));
    }
    println!("{note}");
    Ok(())
}

#[derive(Args)]
pub struct SigtestArgs {
    /// Per-date score CSV of the candidate system.
    #[arg(long)]
    pub a: PathBuf,
    /// Per-date score CSV of the reference system (differences are a - b).
    #[arg(long)]
    pub b: PathBuf,
    /// Output CSV of BCa intervals per series.
    #[arg(long)]
    pub out: PathBuf,
    /// Confidence level of the intervals.
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    /// Bootstrap resamples per series.
    #[arg(long, default_value_t = 2000)]
    pub resamples: usize,
}

pub fn run_sigtest(args: &SigtestArgs, seed: u64) -> Result<()> {
    let rows_a = read_date_scores_csv(&args.a)?;
    let rows_b = read_date_scores_csv(&args.b)?;
    let series = paired_differences(&rows_a, &rows_b)?;
    let sig = significance_report(&series, args.level, args.resamples, seed)?;
    ensure_parent(&args.out)?;
    write_sig_csv(&args.out, &sig)?;
    let n_sig = sig.iter().filter(|r| r.significant).count();
    println!(
        "wrote {} ({} series, {} significant at {:.0}% level)",
        args.out.display(),
        sig.len(),
        n_sig,
        args.level * 100.0
    );
    Ok(())
}
