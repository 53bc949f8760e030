//! Model-side commands: flow-matching training, the toy coarse forecast
//! emulator, and the three super-resolution application modes.

use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use flowsr_core::flow::{train, FMConfig, TrainRecord};
use flowsr_core::net::{NetDescriptor, VelocityNet};
use flowsr_core::norm::normalize_pair;
use flowsr_core::pipeline::{integrated_rollout, super_resolve_trajectory, zero_shot_apply};
use flowsr_core::regrid::interpolate_up;
use flowsr_core::rng::{derive_key, domain};
use flowsr_core::store::{
    read_checkpoint, read_climatology, read_ensemble, read_fields, read_norm_stats,
    read_trajectory, write_checkpoint, write_ensemble, write_loss_csv, write_trajectory,
};
use flowsr_core::synth::{emulate_forecast, toy_forecast_step, Climatology, ToyForecastModel};
use flowsr_core::{EnsembleSet, Error, Result, Trajectory};

use crate::util::{
    classify_input, date_dir_name, ensure_parent, load_pairs, operator_from_checkpoint,
    parse_integrator, select_inits, take_first, InputKind,
};

#[derive(Args)]
pub struct TrainArgs {
    /// Pairs directory produced by make-pairs.
    #[arg(long)]
    pub pairs: PathBuf,
    /// Normalization statistics JSON from fit-stats.
    #[arg(long)]
    pub stats: PathBuf,
    /// Output checkpoint file.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional per-step training-loss CSV.
    #[arg(long)]
    pub loss_out: Option<PathBuf>,
    /// Optimization steps in the main phase.
    #[arg(long, default_value_t = 400)]
    pub steps: usize,
    /// Batch size per step.
    #[arg(long, default_value_t = 8)]
    pub batch: usize,
    /// Learning rate for the main phase.
    #[arg(long, default_value_t = 3e-4)]
    pub lr: f64,
    /// Extra fine-tuning steps at --finetune-lr after the main phase.
    #[arg(long, default_value_t = 0)]
    pub finetune_steps: usize,
    /// Learning rate for the fine-tuning phase.
    #[arg(long, default_value_t = 1e-4)]
    pub finetune_lr: f64,
    /// Adam weight decay.
    #[arg(long, default_value_t = 0.05)]
    pub weight_decay: f64,
    /// Hidden width of the velocity network.
    #[arg(long, default_value_t = 32)]
    pub width: usize,
    /// Residual blocks of the velocity network.
    #[arg(long, default_value_t = 4)]
    pub blocks: usize,
    /// ODE steps used when sampling from the trained model.
    #[arg(long, default_value_t = 50)]
    pub sample_steps: usize,
    /// ODE integrator used at sampling time (euler or heun).
    #[arg(long, default_value = "euler")]
    pub integrator: String,
    /// Train on only the first N pairs (training split).
    #[arg(long)]
    pub first: Option<usize>,
}

pub fn run_train(args: &TrainArgs, seed: u64) -> Result<()> {
    let pairs = load_pairs(&args.pairs)?;
    let pairs = take_first(pairs, args.first, "pairs")?;
    let stats = read_norm_stats(&args.stats)?;
    let samples = pairs
        .iter()
        .map(|p| normalize_pair(p, &stats))
        .collect::<Result<Vec<_>>>()?;
    let catalog = samples[0].conditioning.channels().clone();
    let hr_grid = samples[0].conditioning.grid().clone();
    let lr_fields = read_fields(args.pairs.join("lr.fsr"))?;
    if lr_fields.is_empty() {
        return Err(Error::validation(format!(
            "{}: lr.fsr is empty",
            args.pairs.display()
        )));
    }
    let lr_grid = lr_fields[0].grid().clone();

    let desc = NetDescriptor {
        width: args.width,
        n_blocks: args.blocks,
        ..NetDescriptor::desk_default(catalog.len())
    };
    let mut net = VelocityNet::new(desc, seed)?;
    let integrator = parse_integrator(&args.integrator)?;
    let cfg = FMConfig {
        n_sample_steps: args.sample_steps,
        integrator,
        batch_size: args.batch,
        learning_rate: args.lr,
        weight_decay: args.weight_decay,
        n_train_steps: args.steps,
        seed,
        ..FMConfig::default()
    };
    let mut records = train(&samples, &mut net, &cfg)?;
    if args.finetune_steps > 0 {
        let cfg2 = FMConfig {
            learning_rate: args.finetune_lr,
            n_train_steps: args.finetune_steps,
            seed: derive_key(seed, &[domain::TRAIN, 1]),
            ..cfg.clone()
        };
        let phase2 = train(&samples, &mut net, &cfg2)?;
        records.extend(phase2.into_iter().map(|r| TrainRecord {
            step: r.step + args.steps,
            loss: r.loss,
        }));
    }
    let ckpt_cfg = FMConfig {
        n_train_steps: args.steps + args.finetune_steps,
        ..cfg
    };
    ensure_parent(&args.out)?;
    write_checkpoint(&args.out, &net, &stats, &catalog, &ckpt_cfg, &hr_grid, &lr_grid)?;
    if let Some(loss_out) = &args.loss_out {
        ensure_parent(loss_out)?;
        write_loss_csv(loss_out, &records)?;
    }
    let final_loss = records.last().map(|r| r.loss).unwrap_or(f64::NAN);
    println!(
        "trained {} parameters for {} steps on {} samples (final loss {:.6}); wrote {}",
        net.param_count(),
        records.len(),
        samples.len(),
        final_loss,
        args.out.display()
    );
    Ok(())
}

#[derive(Args)]
pub struct ForecastArgs {
    /// Coarse-grid fields record providing init states.
    #[arg(long)]
    pub lr: PathBuf,
    /// Climatology directory on the same grid.
    #[arg(long)]
    pub clim: PathBuf,
    /// Output date-set root; receives date_NNN/member_MMM.fsr.
    #[arg(long)]
    pub out: PathBuf,
    /// Lead steps per forecast.
    #[arg(long)]
    pub leads: usize,
    /// Ensemble members per init.
    #[arg(long, default_value_t = 4)]
    pub members: usize,
    /// Index of the first init time.
    #[arg(long, default_value_t = 0)]
    pub first: usize,
    /// Index stride between init times.
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    /// Exact number of init times (error if fewer fit).
    #[arg(long)]
    pub count: Option<usize>,
    /// Zonal advection speed in cells per step.
    #[arg(long, default_value_t = 0.7, allow_hyphen_values = true)]
    pub advection: f64,
    /// Relaxation toward climatology per step, in [0, 1].
    #[arg(long, default_value_t = 0.1)]
    pub relax: f64,
    /// Stochastic perturbation scale as a fraction of climatological sigma.
    #[arg(long, default_value_t = 0.15)]
    pub noise: f64,
    /// Spectral slope of the perturbation noise (negative).
    #[arg(long, default_value_t = -2.0, allow_hyphen_values = true)]
    pub noise_slope: f64,
}

fn toy_model(advection: f64, relax: f64, noise: f64, noise_slope: f64, seed: u64) -> ToyForecastModel {
    ToyForecastModel {
        advection_cells_per_step: advection,
        relaxation: relax,
        noise_scale: noise,
        noise_slope,
        seed,
    }
}

pub fn run_forecast(args: &ForecastArgs, seed: u64) -> Result<()> {
    let (fields, _) = crate::util::read_uniform_fields(&args.lr)?;
    let clim = read_climatology(&args.clim)?;
    let inits = select_inits(fields.len(), args.first, args.stride, args.count, args.leads)?;
    for (d, &i) in inits.iter().enumerate() {
        let model = toy_model(
            args.advection,
            args.relax,
            args.noise,
            args.noise_slope,
            derive_key(seed, &[domain::FORECAST, d as u64]),
        );
        let ens = emulate_forecast(&fields[i], &model, &clim, args.leads, args.members)?;
        write_ensemble(args.out.join(date_dir_name(d as u64)), &ens)?;
    }
    println!(
        "wrote {} forecast dates under {} ({} members, {} leads)",
        inits.len(),
        args.out.display(),
        args.members,
        args.leads
    );
    Ok(())
}

#[derive(Args)]
pub struct SrApplyArgs {
    /// Trained checkpoint file.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Coarse input: trajectory record, ensemble directory, or date-set root.
    #[arg(long)]
    pub input: PathBuf,
    /// Output path mirroring the input layout.
    #[arg(long)]
    pub out: PathBuf,
    /// Skip the generative residual and emit the deterministic bicubic
    /// upsample only (the interpolation baseline).
    #[arg(long)]
    pub bicubic_only: bool,
}

#[derive(Args)]
pub struct SrZeroshotArgs {
    /// Trained checkpoint file.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Fine-grid foreign input: trajectory record, ensemble directory, or
    /// date-set root; it is re-coarsened with the training-time operator
    /// before super-resolution.
    #[arg(long)]
    pub input: PathBuf,
    /// Output path mirroring the input layout.
    #[arg(long)]
    pub out: PathBuf,
}

/// Applies `f(date_lane, member_lane, trajectory)` over a trajectory file,
/// an ensemble directory, or a date-set root, mirroring the layout at `out`.
fn map_trajectories(
    input: &Path,
    out: &Path,
    mut f: impl FnMut(u64, u64, &Trajectory) -> Result<Trajectory>,
) -> Result<(usize, usize)> {
    match classify_input(input)? {
        InputKind::Traj(path) => {
            let traj = read_trajectory(&path)?;
            let done = f(0, 0, &traj)?;
            ensure_parent(out)?;
            write_trajectory(out, &done)?;
            Ok((1, 1))
        }
        InputKind::Ensemble(dir) => {
            let ens = read_ensemble(&dir)?;
            let members = ens
                .members()
                .iter()
                .enumerate()
                .map(|(m, t)| f(0, m as u64, t))
                .collect::<Result<Vec<_>>>()?;
            write_ensemble(out, &EnsembleSet::new(members)?)?;
            Ok((1, ens.n_members()))
        }
        InputKind::DateRoot(dates) => {
            let mut n_members = 0;
            let n_dates = dates.len();
            for (lane, dir) in dates {
                let name = dir.file_name().expect("scan yields named dirs").to_os_string();
                let out_dir = out.join(&name);
                let traj_file = dir.join("traj.fsr");
                if traj_file.is_file() {
                    let traj = read_trajectory(&traj_file)?;
                    let done = f(lane, 0, &traj)?;
                    fs::create_dir_all(&out_dir)?;
                    write_trajectory(out_dir.join("traj.fsr"), &done)?;
                    n_members = n_members.max(1);
                } else {
                    let ens = read_ensemble(&dir)?;
                    let members = ens
                        .members()
                        .iter()
                        .enumerate()
                        .map(|(m, t)| f(lane, m as u64, t))
                        .collect::<Result<Vec<_>>>()?;
                    write_ensemble(&out_dir, &EnsembleSet::new(members)?)?;
                    n_members = n_members.max(ens.n_members());
                }
            }
            Ok((n_dates, n_members))
        }
    }
}

pub fn run_sr_apply(args: &SrApplyArgs, seed: u64) -> Result<()> {
    let op = operator_from_checkpoint(read_checkpoint(&args.checkpoint)?)?;
    let (dates, members, how) = if args.bicubic_only {
        let (d, m) = map_trajectories(&args.input, &args.out, |_, _, traj| {
            let states = traj
                .states()
                .iter()
                .map(|s| interpolate_up(s, op.up_plan()))
                .collect::<Result<Vec<_>>>()?;
            Trajectory::new(traj.init_time(), traj.lead_step_hours(), states)
        })?;
        (d, m, "bicubic-upsampled")
    } else {
        let (d, m) = map_trajectories(&args.input, &args.out, |date, member, traj| {
            super_resolve_trajectory(&op, traj, derive_key(seed, &[domain::SAMPLER, date]), member)
        })?;
        (d, m, "super-resolved")
    };
    println!(
        "{how} {dates} date(s) x {members} member(s) from {} to {}",
        args.input.display(),
        args.out.display()
    );
    Ok(())
}

pub fn run_sr_zeroshot(args: &SrZeroshotArgs, seed: u64) -> Result<()> {
    let op = operator_from_checkpoint(read_checkpoint(&args.checkpoint)?)?;
    let (dates, members) = map_trajectories(&args.input, &args.out, |date, member, traj| {
        zero_shot_apply(&op, traj, derive_key(seed, &[domain::SAMPLER, date]), member)
    })?;
    println!(
        "zero-shot super-resolved {dates} date(s) x {members} member(s) from {} to {}",
        args.input.display(),
        args.out.display()
    );
    Ok(())
}

#[derive(Args)]
pub struct SrIntegratedArgs {
    /// Trained checkpoint file.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Coarse-grid fields record providing init states.
    #[arg(long)]
    pub lr: PathBuf,
    /// Climatology directory on the coarse grid.
    #[arg(long)]
    pub clim: PathBuf,
    /// Output root; receives hr/date_NNN/ and lr/date_NNN/ ensembles.
    #[arg(long)]
    pub out: PathBuf,
    /// Lead steps per rollout.
    #[arg(long)]
    pub leads: usize,
    /// Ensemble members per init.
    #[arg(long, default_value_t = 1)]
    pub members: usize,
    /// Index of the first init time.
    #[arg(long, default_value_t = 0)]
    pub first: usize,
    /// Index stride between init times.
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    /// Exact number of init times (error if fewer fit).
    #[arg(long)]
    pub count: Option<usize>,
    /// Zonal advection speed in cells per step.
    #[arg(long, default_value_t = 0.7, allow_hyphen_values = true)]
    pub advection: f64,
    /// Relaxation toward climatology per step, in [0, 1].
    #[arg(long, default_value_t = 0.1)]
    pub relax: f64,
    /// Stochastic perturbation scale as a fraction of climatological sigma.
    #[arg(long, default_value_t = 0.15)]
    pub noise: f64,
    /// Spectral slope of the perturbation noise (negative).
    #[arg(long, default_value_t = -2.0, allow_hyphen_values = true)]
    pub noise_slope: f64,
}

pub fn run_sr_integrated(args: &SrIntegratedArgs, seed: u64) -> Result<()> {
    let op = operator_from_checkpoint(read_checkpoint(&args.checkpoint)?)?;
    let (fields, _) = crate::util::read_uniform_fields(&args.lr)?;
    let clim: Climatology = read_climatology(&args.clim)?;
    if args.members == 0 {
        return Err(Error::validation("--members must be at least 1"));
    }
    let inits = select_inits(fields.len(), args.first, args.stride, args.count, args.leads)?;
    for (d, &i) in inits.iter().enumerate() {
        let model = toy_model(
            args.advection,
            args.relax,
            args.noise,
            args.noise_slope,
            derive_key(seed, &[domain::FORECAST, d as u64]),
        );
        let sr_seed = derive_key(seed, &[domain::SAMPLER, d as u64]);
        let mut hr_members = Vec::with_capacity(args.members);
        let mut lr_members = Vec::with_capacity(args.members);
        for m in 0..args.members {
            let rollout = integrated_rollout(
                &op,
                &fields[i],
                |state, step| toy_forecast_step(state, &model, &clim, m as u64, step),
                args.leads,
                sr_seed,
                m as u64,
            )?;
            hr_members.push(rollout.hr);
            lr_members.push(rollout.lr);
        }
        write_ensemble(
            args.out.join("hr").join(date_dir_name(d as u64)),
            &EnsembleSet::new(hr_members)?,
        )?;
        write_ensemble(
            args.out.join("lr").join(date_dir_name(d as u64)),
            &EnsembleSet::new(lr_members)?,
        )?;
    }
    println!(
        "integrated rollout for {} date(s) x {} member(s); wrote {}/hr and {}/lr",
        inits.len(),
        args.members,
        args.out.display(),
        args.out.display()
    );
    Ok(())
}
