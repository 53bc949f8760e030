//! Shared helpers: argument parsing, dataset directory layout, and the
//! operator-from-checkpoint constructor used by every `sr` subcommand.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use flowsr_core::flow::Integrator;
use flowsr_core::norm::TrainingPair;
use flowsr_core::pipeline::SROperator;
use flowsr_core::regrid::RegridPlan;
use flowsr_core::store::{read_fields, Checkpoint};
use flowsr_core::{ChannelCatalog, ChannelDef, Error, Field, Result, TimeIndex, Trajectory};

/// Parses a channel list such as `t2m,u10,z:500`. A bare name is a surface
/// variable; `name:hpa` is a pressure-level variable.
pub fn parse_channels(s: &str) -> Result<Arc<ChannelCatalog>> {
    let mut defs = Vec::new();
    for item in s.split(',') {
        let item = item.trim();
        if item.is_empty() {
            return Err(Error::validation(format!("empty channel entry in {s:?}")));
        }
        match item.split_once(':') {
            None => defs.push(ChannelDef::surface(item)),
            Some((name, hpa)) => {
                let hpa: u32 = hpa.parse().map_err(|_| {
                    Error::validation(format!(
                        "channel {item:?}: pressure level {hpa:?} is not an integer hPa value"
                    ))
                })?;
                defs.push(ChannelDef::pressure(name, hpa));
            }
        }
    }
    ChannelCatalog::new(defs)
}

/// Parses a comma-separated float list; an empty string parses to an empty
/// list.
pub fn parse_f64_list(s: &str) -> Result<Vec<f64>> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|item| {
            item.trim()
                .parse::<f64>()
                .map_err(|_| Error::validation(format!("{item:?} is not a number in list {s:?}")))
        })
        .collect()
}

/// Accepts either one value (applied to every channel) or exactly one value
/// per channel.
pub fn broadcast(values: Vec<f64>, n_channels: usize, what: &str) -> Result<Vec<f64>> {
    if values.len() == 1 {
        return Ok(vec![values[0]; n_channels]);
    }
    if values.len() == n_channels {
        return Ok(values);
    }
    Err(Error::validation(format!(
        "{what}: got {} values, expected 1 or {} (one per channel)",
        values.len(),
        n_channels
    )))
}

/// Directory name for the i-th init date of a date-set root.
pub fn date_dir_name(i: u64) -> String {
    format!("date_{i:03}")
}

/// Lists `date_*` subdirectories of `root`, sorted by their numeric index.
pub fn scan_date_dirs(root: &Path) -> Result<Vec<(u64, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(root)? {
        let entry = entry?;
        if !entry.file_type()?.is_dir() {
            continue;
        }
        let name = entry.file_name();
        let name = name.to_string_lossy();
        if let Some(num) = name.strip_prefix("date_") {
            let idx: u64 = num.parse().map_err(|_| {
                Error::validation(format!(
                    "{}: directory {name} does not follow the date_NNN naming scheme",
                    root.display()
                ))
            })?;
            out.push((idx, entry.path()));
        }
    }
    if out.is_empty() {
        return Err(Error::validation(format!(
            "{}: no date_* subdirectories found",
            root.display()
        )));
    }
    out.sort_by_key(|(i, _)| *i);
    Ok(out)
}

/// What a path passed to an `sr` or `verify` command refers to.
pub enum InputKind {
    /// A single trajectory record.
    Traj(PathBuf),
    /// A directory of `member_*.fsr` trajectories.
    Ensemble(PathBuf),
    /// A directory of `date_NNN/` init-date subdirectories.
    DateRoot(Vec<(u64, PathBuf)>),
}

/// Classifies `path` as a trajectory file, an ensemble directory, or a
/// date-set root.
pub fn classify_input(path: &Path) -> Result<InputKind> {
    if path.is_file() {
        return Ok(InputKind::Traj(path.to_path_buf()));
    }
    if !path.is_dir() {
        return Err(Error::validation(format!(
            "input {} does not exist",
            path.display()
        )));
    }
    if let Ok(dates) = scan_date_dirs(path) {
        return Ok(InputKind::DateRoot(dates));
    }
    let has_members = fs::read_dir(path)?.any(|e| {
        e.map(|e| {
            let n = e.file_name();
            let n = n.to_string_lossy().into_owned();
            n.starts_with("member_") && n.ends_with(".fsr")
        })
        .unwrap_or(false)
    });
    if has_members {
        return Ok(InputKind::Ensemble(path.to_path_buf()));
    }
    let traj = path.join("traj.fsr");
    if traj.is_file() {
        return Ok(InputKind::Traj(traj));
    }
    Err(Error::validation(format!(
        "input {}: expected a trajectory record, a directory of member_*.fsr files, \
         or a root of date_NNN/ subdirectories",
        path.display()
    )))
}

/// Creates the parent directory of an output file path if needed.
pub fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    Ok(())
}

/// Reads a fields record and checks that every field is timestamped with
/// one uniform time step. Returns the fields and the step in hours.
pub fn read_uniform_fields(path: &Path) -> Result<(Vec<Field>, i64)> {
    let fields = read_fields(path)?;
    if fields.len() < 2 {
        return Err(Error::validation(format!(
            "{}: need at least 2 fields to define a time axis",
            path.display()
        )));
    }
    let ts: Vec<i64> = fields
        .iter()
        .map(|f| {
            f.timestamp().ok_or_else(|| {
                Error::validation(format!("{}: fields must be timestamped", path.display()))
            })
        })
        .collect::<Result<_>>()?;
    let step = ts[1] - ts[0];
    if step <= 0 {
        return Err(Error::validation(format!(
            "{}: timestamps must be strictly increasing",
            path.display()
        )));
    }
    for w in ts.windows(2) {
        if w[1] - w[0] != step {
            return Err(Error::validation(format!(
                "{}: fields are not uniformly spaced in time",
                path.display()
            )));
        }
    }
    Ok((fields, step))
}

/// Selects init-time indices `first, first+stride, ...` such that each has
/// `leads` verifying states after it. If `count` is given, exactly that many
/// inits must fit.
pub fn select_inits(
    n_times: usize,
    first: usize,
    stride: usize,
    count: Option<usize>,
    leads: usize,
) -> Result<Vec<usize>> {
    if stride == 0 {
        return Err(Error::validation("--stride must be at least 1"));
    }
    if leads == 0 {
        return Err(Error::validation("--leads must be at least 1"));
    }
    let mut out = Vec::new();
    let mut i = first;
    while i + leads < n_times {
        out.push(i);
        if count.is_some_and(|c| out.len() >= c) {
            break;
        }
        i += stride;
    }
    if out.is_empty() {
        return Err(Error::validation(format!(
            "no init times selected: record has {n_times} fields and each init needs \
             {leads} later states (first={first}, stride={stride})"
        )));
    }
    if let Some(c) = count {
        if out.len() < c {
            return Err(Error::validation(format!(
                "only {} init times fit in the record, --count asked for {c}",
                out.len()
            )));
        }
    }
    Ok(out)
}

/// Cuts the truth trajectory starting at `init_time` out of a timestamped
/// fields record.
pub fn slice_truth(
    fields: &[Field],
    index: &HashMap<TimeIndex, usize>,
    init_time: TimeIndex,
    lead_step_hours: u32,
    n_leads: usize,
) -> Result<Trajectory> {
    let mut states = Vec::with_capacity(n_leads);
    for k in 1..=n_leads {
        let valid = init_time + k as i64 * lead_step_hours as i64;
        let i = index.get(&valid).ok_or_else(|| {
            Error::validation(format!(
                "truth record has no field at time {valid} (init {init_time}, lead {k})"
            ))
        })?;
        states.push(fields[*i].clone());
    }
    Trajectory::new(init_time, lead_step_hours, states)
}

/// Timestamp → position lookup for a fields record.
pub fn time_index(fields: &[Field]) -> Result<HashMap<TimeIndex, usize>> {
    let mut map = HashMap::new();
    for (i, f) in fields.iter().enumerate() {
        let t = f
            .timestamp()
            .ok_or_else(|| Error::validation("fields must be timestamped"))?;
        if map.insert(t, i).is_some() {
            return Err(Error::validation(format!("duplicate timestamp {t} in record")));
        }
    }
    Ok(map)
}

/// Loads the (upsampled, residual) training pairs written by `make-pairs`.
pub fn load_pairs(dir: &Path) -> Result<Vec<TrainingPair>> {
    let up = read_fields(dir.join("up.fsr"))?;
    let residual = read_fields(dir.join("residual.fsr"))?;
    if up.len() != residual.len() {
        return Err(Error::validation(format!(
            "{}: up.fsr has {} fields but residual.fsr has {}",
            dir.display(),
            up.len(),
            residual.len()
        )));
    }
    up.into_iter()
        .zip(residual)
        .map(|(u, r)| {
            let tu = u.timestamp();
            if tu != r.timestamp() {
                return Err(Error::validation(format!(
                    "{}: up.fsr and residual.fsr disagree on timestamps",
                    dir.display()
                )));
            }
            Ok(TrainingPair {
                time_index: tu.unwrap_or(0),
                upsampled: u,
                residual: r,
            })
        })
        .collect()
}

/// Truncates a sample list to its first `n` entries when `--first` is given.
pub fn take_first<T>(mut items: Vec<T>, first: Option<usize>, what: &str) -> Result<Vec<T>> {
    if let Some(n) = first {
        if n == 0 || n > items.len() {
            return Err(Error::validation(format!(
                "--first {n} is out of range for {what} with {} entries",
                items.len()
            )));
        }
        items.truncate(n);
    }
    Ok(items)
}

/// Rebuilds the super-resolution operator stored in a checkpoint.
pub fn operator_from_checkpoint(ck: Checkpoint) -> Result<SROperator> {
    let up = RegridPlan::bicubic(ck.lr_grid.clone(), ck.hr_grid.clone())?;
    let coarsen = RegridPlan::conservative(ck.hr_grid.clone(), ck.lr_grid.clone())?;
    SROperator::new(ck.net, ck.stats, ck.catalog, up, coarsen, ck.fm_config)
}

/// Parses `euler` / `heun` (case-insensitive) into the ODE integrator enum.
pub fn parse_integrator(s: &str) -> Result<Integrator> {
    match s.to_ascii_lowercase().as_str() {
        "euler" => Ok(Integrator::Euler),
        "heun" => Ok(Integrator::Heun),
        other => Err(Error::validation(format!(
            "unknown integrator {other:?}; use euler or heun"
        ))),
    }
}
