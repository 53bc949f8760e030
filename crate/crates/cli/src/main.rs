//! `flowsr` — residual flow-matching super-resolution of coarse gridded
//! forecasts, with the verification and significance-testing toolchain.
//!
//! Every command is deterministic given `--seed`; outputs are binary field
//! records and plain CSV reports. Exit codes: 0 success, 2 validation or
//! format errors, 3 numerical failures.

mod data;
mod model;
mod report;
mod util;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use flowsr_core::{Error, Result};
use serde::Deserialize;

#[derive(Parser)]
#[command(
    name = "flowsr",
    version,
    about = "Super-resolve coarse forecast trajectories with a residual flow-matching model, \
             then verify the results",
    propagate_version = true
)]
struct Cli {
    /// Master seed; every stochastic stage derives its own substream from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker-thread budget. This build executes sequentially; values > 1
    /// are accepted and validated but do not add parallelism.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// JSON file supplying defaults for the global flags, e.g.
    /// {"seed": 7, "threads": 1}. Explicit flags override the file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate synthetic truth fields (and optionally their climatology).
    SynthGen(data::SynthGenArgs),
    /// Build a climatology (slot means, quantiles, sigma) from a fields record.
    Climatology(data::ClimatologyArgs),
    /// Coarsen truth and emit coarse/upsampled/residual training pairs.
    MakePairs(data::MakePairsArgs),
    /// Fit per-channel normalization statistics from training pairs.
    FitStats(data::FitStatsArgs),
    /// Slice a fields record into per-init-date trajectories.
    Slice(data::SliceArgs),
    /// Train the conditional flow-matching residual model.
    Train(model::TrainArgs),
    /// Run the toy coarse-grid ensemble forecast emulator.
    Forecast(model::ForecastArgs),
    /// Apply the trained super-resolution operator.
    #[command(subcommand)]
    Sr(SrCmd),
    /// Compute verification reports.
    #[command(subcommand)]
    Verify(VerifyCmd),
    /// Paired block-bootstrap significance test between two score files.
    Sigtest(report::SigtestArgs),
}

#[derive(Subcommand)]
enum SrCmd {
    /// Super-resolve coarse trajectories or ensembles (post-processing mode).
    Apply(model::SrApplyArgs),
    /// Re-coarsen each super-resolved state and feed it back into the
    /// forecast loop (pipeline-integrated mode).
    Integrated(model::SrIntegratedArgs),
    /// Apply to a foreign fine-grid source by re-coarsening it with the
    /// training-time operator first (zero-shot mode).
    Zeroshot(model::SrZeroshotArgs),
}

#[derive(Subcommand)]
enum VerifyCmd {
    /// Consistency of recoarsened SR output against the original coarse input.
    Design(report::DesignArgs),
    /// Fair ensemble scores (CRPS, RMSE, spread, Brier, energy) against truth.
    Ensemble(report::EnsembleArgs),
    /// Zonal energy spectra and model/truth spectral ratios.
    Spectra(report::SpectraArgs),
}

/// Optional JSON config carrying defaults for the global flags only.
#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    seed: Option<u64>,
    threads: Option<usize>,
}

fn load_config(path: &Path) -> Result<FileConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::validation(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::validation(format!("config {}: {e}", path.display())))
}

fn run(cli: &Cli) -> Result<()> {
    let file_cfg = match &cli.config {
        Some(p) => load_config(p)?,
        None => FileConfig::default(),
    };
    let seed = cli.seed.or(file_cfg.seed).unwrap_or(0);
    let threads = cli.threads.or(file_cfg.threads).unwrap_or(1);
    if threads == 0 {
        return Err(Error::validation("--threads must be at least 1"));
    }
    match &cli.cmd {
        Cmd::SynthGen(a) => data::run_synth_gen(a, seed),
        Cmd::Climatology(a) => data::run_climatology(a),
        Cmd::MakePairs(a) => data::run_make_pairs(a),
        Cmd::FitStats(a) => data::run_fit_stats(a),
        Cmd::Slice(a) => data::run_slice(a),
        Cmd::Train(a) => model::run_train(a, seed),
        Cmd::Forecast(a) => model::run_forecast(a, seed),
        Cmd::Sr(SrCmd::Apply(a)) => model::run_sr_apply(a, seed),
        Cmd::Sr(SrCmd::Integrated(a)) => model::run_sr_integrated(a, seed),
        Cmd::Sr(SrCmd::Zeroshot(a)) => model::run_sr_zeroshot(a, seed),
        Cmd::Verify(VerifyCmd::Design(a)) => report::run_verify_design(a),
        Cmd::Verify(VerifyCmd::Ensemble(a)) => report::run_verify_ensemble(a),
        Cmd::Verify(VerifyCmd::Spectra(a)) => report::run_verify_spectra(a),
        Cmd::Sigtest(a) => report::run_sigtest(a, seed),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code() as i32);
    }
}
