//! Dataset-producing commands: synthetic truth, climatology, training
//! pairs, normalization statistics, and trajectory slicing.

use std::fs;
use std::path::PathBuf;

use clap::Args;
use flowsr_core::norm::fit_norm_stats;
use flowsr_core::regrid::{coarsen, RegridPlan};
use flowsr_core::store::{
    read_fields, write_climatology, write_fields, write_norm_stats, write_trajectory,
};
use flowsr_core::synth::{build_climatology, generate_truth, GrfConfig, DEFAULT_QUANTILES};
use flowsr_core::{Error, GridSpec, Result, Trajectory};

use crate::util::{
    broadcast, date_dir_name, ensure_parent, load_pairs, parse_channels, parse_f64_list,
    read_uniform_fields, select_inits, take_first,
};

#[derive(Args)]
pub struct SynthGenArgs {
    /// Output fields record.
    #[arg(long)]
    pub out: PathBuf,
    /// Latitude rows of the generated grid.
    #[arg(long, default_value_t = 48)]
    pub n_lat: usize,
    /// Longitude columns of the generated grid.
    #[arg(long, default_value_t = 96)]
    pub n_lon: usize,
    /// Channel list, e.g. `t2m,u10,z:500`.
    #[arg(long, default_value = "t2m,z:500")]
    pub channels: String,
    /// Number of consecutive daily states to generate.
    #[arg(long, default_value_t = 128)]
    pub n_times: usize,
    /// Spectral slope per channel (negative), one value or one per channel.
    #[arg(long, default_value = "-3.0", allow_hyphen_values = true)]
    pub slope: String,
    /// Field amplitude per channel, one value or one per channel.
    #[arg(long, default_value = "1.0")]
    pub amplitude: String,
    /// Lag-1 temporal autocorrelation in [0, 1).
    #[arg(long, default_value_t = 0.8)]
    pub ar: f64,
    /// Also build a climatology of the generated truth into this directory.
    #[arg(long)]
    pub clim_out: Option<PathBuf>,
    /// Climatology slot count when --clim-out is given.
    #[arg(long, default_value_t = 1)]
    pub clim_slots: usize,
    /// Climatology quantile levels when --clim-out is given.
    #[arg(long)]
    pub clim_qs: Option<String>,
}

pub fn run_synth_gen(args: &SynthGenArgs, seed: u64) -> Result<()> {
    let catalog = parse_channels(&args.channels)?;
    let grid = GridSpec::global(args.n_lat, args.n_lon)?;
    let cfg = GrfConfig {
        slopes: broadcast(parse_f64_list(&args.slope)?, catalog.len(), "--slope")?,
        amplitudes: broadcast(parse_f64_list(&args.amplitude)?, catalog.len(), "--amplitude")?,
        ar1_phi: args.ar,
        seed,
    };
    let fields = generate_truth(&grid, &catalog, &cfg, args.n_times)?;
    ensure_parent(&args.out)?;
    write_fields(&args.out, &fields)?;
    println!(
        "wrote {} ({} fields, {}x{}, {} channels)",
        args.out.display(),
        fields.len(),
        args.n_lat,
        args.n_lon,
        catalog.len()
    );
    if let Some(clim_out) = &args.clim_out {
        let qs = match &args.clim_qs {
            Some(s) => parse_f64_list(s)?,
            None => DEFAULT_QUANTILES.to_vec(),
        };
        let clim = build_climatology(&fields, args.clim_slots, &qs)?;
        write_climatology(clim_out, &clim)?;
        println!(
            "wrote climatology {} ({} slots, {} quantile levels)",
            clim_out.display(),
            args.clim_slots,
            qs.len()
        );
    }
    Ok(())
}

#[derive(Args)]
pub struct ClimatologyArgs {
    /// Input fields record to summarize.
    #[arg(long)]
    pub fields: PathBuf,
    /// Output climatology directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Number of climatology slots (day index modulo slots).
    #[arg(long, default_value_t = 1)]
    pub n_slots: usize,
    /// Quantile levels; pass an empty string to skip quantiles.
    #[arg(long)]
    pub qs: Option<String>,
    /// Use only the first N fields (training split).
    #[arg(long)]
    pub first: Option<usize>,
}

pub fn run_climatology(args: &ClimatologyArgs) -> Result<()> {
    let fields = read_fields(&args.fields)?;
    let fields = take_first(fields, args.first, "fields record")?;
    let qs = match &args.qs {
        Some(s) => parse_f64_list(s)?,
        None => DEFAULT_QUANTILES.to_vec(),
    };
    let clim = build_climatology(&fields, args.n_slots, &qs)?;
    write_climatology(&args.out, &clim)?;
    println!(
        "wrote climatology {} ({} fields, {} slots, {} quantile levels)",
        args.out.display(),
        fields.len(),
        args.n_slots,
        qs.len()
    );
    Ok(())
}

#[derive(Args)]
pub struct MakePairsArgs {
    /// High-resolution truth fields record.
    #[arg(long)]
    pub truth: PathBuf,
    /// Coarsening factor between the fine and coarse grids.
    #[arg(long)]
    pub factor: usize,
    /// Output directory; receives lr.fsr, up.fsr, residual.fsr.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run_make_pairs(args: &MakePairsArgs) -> Result<()> {
    if args.factor < 2 {
        return Err(Error::validation("--factor must be at least 2"));
    }
    let hr_fields = read_fields(&args.truth)?;
    if hr_fields.is_empty() {
        return Err(Error::validation(format!(
            "{}: truth record is empty",
            args.truth.display()
        )));
    }
    let hr_grid = hr_fields[0].grid().clone();
    if hr_grid.n_lat() % args.factor != 0 || hr_grid.n_lon() % args.factor != 0 {
        return Err(Error::validation(format!(
            "--factor {} must divide the {}x{} truth grid",
            args.factor,
            hr_grid.n_lat(),
            hr_grid.n_lon()
        )));
    }
    let lr_grid = GridSpec::global(hr_grid.n_lat() / args.factor, hr_grid.n_lon() / args.factor)?;
    let coarsen_plan = RegridPlan::conservative(hr_grid.clone(), lr_grid.clone())?;
    let up_plan = RegridPlan::bicubic(lr_grid.clone(), hr_grid.clone())?;

    let mut lr_fields = Vec::with_capacity(hr_fields.len());
    let mut up_fields = Vec::with_capacity(hr_fields.len());
    let mut residual_fields = Vec::with_capacity(hr_fields.len());
    for hr in &hr_fields {
        let lr = coarsen(hr, &coarsen_plan)?;
        let pair = flowsr_core::norm::make_training_pair(hr, &lr, &up_plan)?;
        lr_fields.push(lr);
        up_fields.push(pair.upsampled);
        residual_fields.push(pair.residual);
    }
    fs::create_dir_all(&args.out)?;
    write_fields(args.out.join("lr.fsr"), &lr_fields)?;
    write_fields(args.out.join("up.fsr"), &up_fields)?;
    write_fields(args.out.join("residual.fsr"), &residual_fields)?;
    println!(
        "wrote {} pairs under {} ({}x{} -> {}x{}, factor {})",
        hr_fields.len(),
        args.out.display(),
        lr_grid.n_lat(),
        lr_grid.n_lon(),
        hr_grid.n_lat(),
        hr_grid.n_lon(),
        args.factor
    );
    Ok(())
}

#[derive(Args)]
pub struct FitStatsArgs {
    /// Pairs directory produced by make-pairs.
    #[arg(long)]
    pub pairs: PathBuf,
    /// Output normalization-statistics JSON file.
    #[arg(long)]
    pub out: PathBuf,
    /// Fit on only the first N pairs (training split).
    #[arg(long)]
    pub first: Option<usize>,
}

pub fn run_fit_stats(args: &FitStatsArgs) -> Result<()> {
    let pairs = load_pairs(&args.pairs)?;
    let pairs = take_first(pairs, args.first, "pairs")?;
    let stats = fit_norm_stats(pairs.iter())?;
    ensure_parent(&args.out)?;
    write_norm_stats(&args.out, &stats)?;
    println!(
        "wrote {} ({} samples, {} channels)",
        args.out.display(),
        stats.n_samples,
        stats.channels.len()
    );
    Ok(())
}

#[derive(Args)]
pub struct SliceArgs {
    /// Timestamped fields record to slice into trajectories.
    #[arg(long)]
    pub fields: PathBuf,
    /// Output date-set root; receives date_NNN/traj.fsr.
    #[arg(long)]
    pub out: PathBuf,
    /// Number of lead steps per trajectory.
    #[arg(long)]
    pub leads: usize,
    /// Index of the first init time.
    #[arg(long, default_value_t = 0)]
    pub first: usize,
    /// Index stride between init times.
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    /// Exact number of init times (error if fewer fit).
    #[arg(long)]
    pub count: Option<usize>,
}

pub fn run_slice(args: &SliceArgs) -> Result<()> {
    let (fields, step) = read_uniform_fields(&args.fields)?;
    let inits = select_inits(fields.len(), args.first, args.stride, args.count, args.leads)?;
    for (d, &i) in inits.iter().enumerate() {
        let init_time = fields[i].timestamp().expect("checked by read_uniform_fields");
        let states = fields[i + 1..=i + args.leads].to_vec();
        let traj = Trajectory::new(init_time, step as u32, states)?;
        let dir = args.out.join(date_dir_name(d as u64));
        fs::create_dir_all(&dir)?;
        write_trajectory(dir.join("traj.fsr"), &traj)?;
    }
    println!(
        "wrote {} trajectories under {} ({} leads, step {} h)",
        inits.len(),
        args.out.display(),
        args.leads,
        step
    );
    Ok(())
}
