//! On-disk formats: binary field records, model checkpoints, statistics
//! JSON, and the CSV report writers.
//!
//! A record file is laid out as an 8-byte magic, a little-endian u64
//! header length, a JSON header, and a raw little-endian f32 blob in
//! [time, channel, lat, lon] order. The header carries the grid size, the
//! channel catalog (with its content hash), per-record time metadata, and
//! a SHA-256 of the blob; readers verify all of it so truncation or bit
//! corruption fails loudly. Headers contain no wall-clock metadata:
//! rerunning a seeded workflow must reproduce every output byte.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::design::DesignReport;
use crate::ensemble::{DateScoreRow, MetricReport};
use crate::error::{Error, Result};
use crate::flow::{FMConfig, TrainRecord};
use crate::grid::{ChannelCatalog, ChannelDef, EnsembleSet, Field, GridSpec, Trajectory};
use crate::net::{NetDescriptor, VelocityNet};
use crate::norm::NormStats;
use crate::sigtest::SigRow;
use crate::spectra::{Spectrum, SpectrumRatio};
use crate::synth::Climatology;

pub const RECORD_MAGIC: &[u8; 8] = b"FLOWSR\0\0";
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"FLOWSRCK";
pub const STORE_SCHEMA: u32 = 1;
const DTYPE_F32: &str = "f32le";
const DTYPE_F64: &str = "f64le";
/// Upper bound on JSON header size; anything larger means a corrupt
/// length word, not a real header.
const MAX_HEADER_LEN: u64 = 1 << 24;

fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

#[derive(Debug, Serialize, Deserialize)]
struct RecordHeader {
    schema: u32,
    writer: String,
    kind: String,
    dims: [usize; 4],
    dtype: String,
    n_lat: usize,
    n_lon: usize,
    channels: Vec<ChannelDef>,
    variable_weights: Vec<f64>,
    catalog_hash: String,
    /// Per-slice valid times for `kind = "fields"` records.
    timestamps: Vec<Option<i64>>,
    /// Trajectory metadata for `kind = "trajectory"` records.
    init_time: Option<i64>,
    lead_step_hours: Option<u32>,
    blob_sha256: String,
    extra: serde_json::Value,
}

fn catalog_parts(catalog: &ChannelCatalog) -> (Vec<ChannelDef>, Vec<f64>) {
    let defs = catalog.defs().to_vec();
    let weights = (0..catalog.len()).map(|c| catalog.variable_weight(c)).collect();
    (defs, weights)
}

fn encode_record(
    kind: &str,
    fields: &[Field],
    init_time: Option<i64>,
    lead_step_hours: Option<u32>,
    extra: serde_json::Value,
) -> Result<Vec<u8>> {
    if fields.is_empty() {
        return Err(Error::validation("cannot write a record with no fields"));
    }
    for f in &fields[1..] {
        if !f.same_shape(&fields[0]) {
            return Err(Error::validation("record fields must share one grid and catalog"));
        }
    }
    let grid = fields[0].grid();
    let catalog = fields[0].channels();
    let mut blob = Vec::with_capacity(fields.len() * fields[0].data().len() * 4);
    for f in fields {
        for v in f.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let (defs, weights) = catalog_parts(catalog);
    let header = RecordHeader {
        schema: STORE_SCHEMA,
        writer: "flowsr".into(),
        kind: kind.into(),
        dims: [fields.len(), catalog.len(), grid.n_lat(), grid.n_lon()],
        dtype: DTYPE_F32.into(),
        n_lat: grid.n_lat(),
        n_lon: grid.n_lon(),
        channels: defs,
        variable_weights: weights,
        catalog_hash: catalog.content_hash(),
        timestamps: fields.iter().map(|f| f.timestamp()).collect(),
        init_time,
        lead_step_hours,
        blob_sha256: sha256_hex(&blob),
        extra,
    };
    let header_json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + header_json.len() + blob.len());
    out.extend_from_slice(RECORD_MAGIC);
    out.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_json);
    out.extend_from_slice(&blob);
    Ok(out)
}

fn split_container<'a>(
    bytes: &'a [u8],
    magic: &[u8; 8],
    what: &str,
) -> Result<(&'a [u8], &'a [u8])> {
    if bytes.len() < 16 || &bytes[..8] != magic {
        return Err(Error::format(format!(
            "{what}: bad or missing magic (not a flowsr file, or the wrong kind)"
        )));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    if header_len > MAX_HEADER_LEN || 16 + header_len as usize > bytes.len() {
        return Err(Error::format(format!(
            "{what}: header length {header_len} exceeds file size (truncated or corrupt)"
        )));
    }
    let header_end = 16 + header_len as usize;
    Ok((&bytes[16..header_end], &bytes[header_end..]))
}

fn decode_record(bytes: &[u8], path: &Path, expect_kind: &str) -> Result<(RecordHeader, Vec<Field>)> {
    let what = path.display().to_string();
    let (header_bytes, blob) = split_container(bytes, RECORD_MAGIC, &what)?;
    let header: RecordHeader = serde_json::from_slice(header_bytes)
        .map_err(|e| Error::format(format!("{what}: unreadable header: {e}")))?;
    if header.schema != STORE_SCHEMA {
        return Err(Error::format(format!(
            "{what}: schema version {} unsupported (this build reads {STORE_SCHEMA})",
            header.schema
        )));
    }
    if header.kind != expect_kind {
        return Err(Error::format(format!(
            "{what}: record kind {:?}, expected {:?}",
            header.kind, expect_kind
        )));
    }
    if header.dtype != DTYPE_F32 {
        return Err(Error::format(format!("{what}: unsupported dtype {}", header.dtype)));
    }
    let [t, c, h, w] = header.dims;
    if c == 0 || h == 0 || w == 0 || h != header.n_lat || w != header.n_lon {
        return Err(Error::format(format!("{what}: inconsistent dims {:?}", header.dims)));
    }
    let want = t * c * h * w * 4;
    if blob.len() != want {
        return Err(Error::format(format!(
            "{what}: blob is {} bytes, dims {:?} require {want} (truncated or corrupt)",
            blob.len(),
            header.dims
        )));
    }
    let got_hash = sha256_hex(blob);
    if got_hash != header.blob_sha256 {
        return Err(Error::format(format!(
            "{what}: blob hash mismatch (file corrupt): header {} vs computed {got_hash}",
            header.blob_sha256
        )));
    }
    if header.timestamps.len() != t {
        return Err(Error::format(format!(
            "{what}: {} timestamps for {t} time slices",
            header.timestamps.len()
        )));
    }

    let grid = GridSpec::global(h, w)?;
    let catalog = ChannelCatalog::with_variable_weights(
        header.channels.clone(),
        Some(header.variable_weights.clone()),
    )?;
    if catalog.content_hash() != header.catalog_hash {
        return Err(Error::format(format!(
            "{what}: channel catalog hash mismatch (header metadata inconsistent)"
        )));
    }
    let per_field = c * h * w;
    let mut fields = Vec::with_capacity(t);
    for i in 0..t {
        let mut data = Vec::with_capacity(per_field);
        let base = i * per_field * 4;
        for px in 0..per_field {
            let off = base + px * 4;
            data.push(f32::from_le_bytes(blob[off..off + 4].try_into().unwrap()));
        }
        let mut f = Field::from_data(grid.clone(), catalog.clone(), data, None)?;
        if let Some(ts) = header.timestamps[i] {
            f = f.with_timestamp(ts);
        }
        fields.push(f);
    }
    Ok((header, fields))
}

fn read_record(path: &Path, expect_kind: &str) -> Result<(RecordHeader, Vec<Field>)> {
    let bytes = fs::read(path).map_err(|e| {
        Error::format(format!("cannot read {}: {e}", path.display()))
    })?;
    decode_record(&bytes, path, expect_kind)
}

/// Writes a sequence of same-shaped fields (a truth sample, a training
/// split, ...) as one record.
pub fn write_fields(path: impl AsRef<Path>, fields: &[Field]) -> Result<()> {
    let bytes = encode_record("fields", fields, None, None, serde_json::Value::Null)?;
    fs::write(path.as_ref(), bytes)?;
    Ok(())
}

pub fn read_fields(path: impl AsRef<Path>) -> Result<Vec<Field>> {
    Ok(read_record(path.as_ref(), "fields")?.1)
}

pub fn write_trajectory(path: impl AsRef<Path>, traj: &Trajectory) -> Result<()> {
    let bytes = encode_record(
        "trajectory",
        traj.states(),
        Some(traj.init_time()),
        Some(traj.lead_step_hours()),
        serde_json::Value::Null,
    )?;
    fs::write(path.as_ref(), bytes)?;
    Ok(())
}

pub fn read_trajectory(path: impl AsRef<Path>) -> Result<Trajectory> {
    let path = path.as_ref();
    let (header, fields) = read_record(path, "trajectory")?;
    let init = header.init_time.ok_or_else(|| {
        Error::format(format!("{}: trajectory record lacks init_time", path.display()))
    })?;
    let step = header.lead_step_hours.ok_or_else(|| {
        Error::format(format!("{}: trajectory record lacks lead step", path.display()))
    })?;
    Trajectory::new(init, step, fields)
}

fn member_file(i: usize) -> String {
    format!("member_{i:03}.fsr")
}

/// Writes an ensemble as a directory of per-member trajectory records,
/// replacing any member files from a previous run.
pub fn write_ensemble(dir: impl AsRef<Path>, ens: &EnsembleSet) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.starts_with("member_") && name.ends_with(".fsr") {
            fs::remove_file(entry.path())?;
        }
    }
    for (i, member) in ens.members().iter().enumerate() {
        write_trajectory(dir.join(member_file(i)), member)?;
    }
    Ok(())
}

pub fn read_ensemble(dir: impl AsRef<Path>) -> Result<EnsembleSet> {
    let dir = dir.as_ref();
    let mut names: Vec<String> = fs::read_dir(dir)
        .map_err(|e| Error::format(format!("cannot read {}: {e}", dir.display())))?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.starts_with("member_") && n.ends_with(".fsr"))
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Error::format(format!(
            "{}: no member_NNN.fsr records found",
            dir.display()
        )));
    }
    for (i, name) in names.iter().enumerate() {
        if *name != member_file(i) {
            return Err(Error::format(format!(
                "{}: member files are not contiguous (found {name}, expected {})",
                dir.display(),
                member_file(i)
            )));
        }
    }
    let members = names
        .iter()
        .map(|n| read_trajectory(dir.join(n)))
        .collect::<Result<Vec<_>>>()?;
    EnsembleSet::new(members)
}

#[derive(Debug, Serialize, Deserialize)]
struct ClimatologyMeta {
    schema: u32,
    n_slots: usize,
    qs: Vec<f64>,
    channel_std: Vec<f64>,
    catalog_hash: String,
}

/// Writes a climatology as a directory: slot means and quantile fields as
/// records plus a small JSON for the scalar parts.
pub fn write_climatology(dir: impl AsRef<Path>, clim: &Climatology) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let means: Vec<Field> = (0..clim.n_slots()).map(|s| clim.slot_mean(s).clone()).collect();
    write_fields(dir.join("means.fsr"), &means)?;
    if !clim.qs().is_empty() {
        let quantiles: Vec<Field> =
            (0..clim.qs().len()).map(|qi| clim.quantile_field(qi).clone()).collect();
        write_fields(dir.join("quantiles.fsr"), &quantiles)?;
    }
    let meta = ClimatologyMeta {
        schema: STORE_SCHEMA,
        n_slots: clim.n_slots(),
        qs: clim.qs().to_vec(),
        channel_std: clim.channel_std().to_vec(),
        catalog_hash: clim.channels().content_hash(),
    };
    fs::write(dir.join("meta.json"), serde_json::to_vec_pretty(&meta)?)?;
    Ok(())
}

pub fn read_climatology(dir: impl AsRef<Path>) -> Result<Climatology> {
    let dir = dir.as_ref();
    let meta_bytes = fs::read(dir.join("meta.json")).map_err(|e| {
        Error::format(format!("cannot read {}: {e}", dir.join("meta.json").display()))
    })?;
    let meta: ClimatologyMeta = serde_json::from_slice(&meta_bytes)?;
    if meta.schema != STORE_SCHEMA {
        return Err(Error::format(format!(
            "{}: climatology schema {} unsupported",
            dir.display(),
            meta.schema
        )));
    }
    let means = read_fields(dir.join("means.fsr"))?;
    let quantiles = if meta.qs.is_empty() {
        Vec::new()
    } else {
        read_fields(dir.join("quantiles.fsr"))?
    };
    for f in means.iter().chain(&quantiles) {
        if f.channels().content_hash() != meta.catalog_hash {
            return Err(Error::format(format!(
                "{}: climatology records disagree on the channel catalog",
                dir.display()
            )));
        }
    }
    Climatology::from_parts(meta.n_slots, means, meta.qs, quantiles, meta.channel_std)
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    schema: u32,
    writer: String,
    descriptor: NetDescriptor,
    fm_config: FMConfig,
    channels: Vec<ChannelDef>,
    variable_weights: Vec<f64>,
    catalog_hash: String,
    norm: NormStats,
    n_lat_hr: usize,
    n_lon_hr: usize,
    n_lat_lr: usize,
    n_lon_lr: usize,
    dtype: String,
    n_params: usize,
    params_sha256: String,
}

/// Everything needed to reconstruct a trained super-resolution operator.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub net: VelocityNet,
    pub stats: NormStats,
    pub catalog: Arc<ChannelCatalog>,
    pub fm_config: FMConfig,
    pub hr_grid: Arc<GridSpec>,
    pub lr_grid: Arc<GridSpec>,
}

/// Serializes network parameters (full f64, so restart is exact) together
/// with the descriptor, training config, catalog, normalization statistics,
/// and the fine/coarse grid pair the operator was trained on.
pub fn write_checkpoint(
    path: impl AsRef<Path>,
    net: &VelocityNet,
    stats: &NormStats,
    catalog: &ChannelCatalog,
    fm_config: &FMConfig,
    hr_grid: &GridSpec,
    lr_grid: &GridSpec,
) -> Result<()> {
    let mut blob = Vec::with_capacity(net.param_count() * 8);
    for v in net.params() {
        blob.extend_from_slice(&v.to_le_bytes());
    }
    let (defs, weights) = catalog_parts(catalog);
    let header = CheckpointHeader {
        schema: STORE_SCHEMA,
        writer: "flowsr".into(),
        descriptor: net.descriptor().clone(),
        fm_config: fm_config.clone(),
        channels: defs,
        variable_weights: weights,
        catalog_hash: catalog.content_hash(),
        norm: stats.clone(),
        n_lat_hr: hr_grid.n_lat(),
        n_lon_hr: hr_grid.n_lon(),
        n_lat_lr: lr_grid.n_lat(),
        n_lon_lr: lr_grid.n_lon(),
        dtype: DTYPE_F64.into(),
        n_params: net.param_count(),
        params_sha256: sha256_hex(&blob),
    };
    let header_json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + header_json.len() + blob.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_json);
    out.extend_from_slice(&blob);
    fs::write(path.as_ref(), out)?;
    Ok(())
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let what = path.display().to_string();
    let bytes = fs::read(path).map_err(|e| Error::format(format!("cannot read {what}: {e}")))?;
    let (header_bytes, blob) = split_container(&bytes, CHECKPOINT_MAGIC, &what)?;
    let header: CheckpointHeader = serde_json::from_slice(header_bytes)
        .map_err(|e| Error::format(format!("{what}: unreadable header: {e}")))?;
    if header.schema != STORE_SCHEMA {
        return Err(Error::format(format!(
            "{what}: checkpoint schema {} unsupported (this build reads {STORE_SCHEMA})",
            header.schema
        )));
    }
    if header.dtype != DTYPE_F64 {
        return Err(Error::format(format!("{what}: unsupported dtype {}", header.dtype)));
    }
    if blob.len() != header.n_params * 8 {
        return Err(Error::format(format!(
            "{what}: parameter blob is {} bytes, header declares {} parameters",
            blob.len(),
            header.n_params
        )));
    }
    if sha256_hex(blob) != header.params_sha256 {
        return Err(Error::format(format!(
            "{what}: parameter hash mismatch (file corrupt)"
        )));
    }
    let catalog = ChannelCatalog::with_variable_weights(
        header.channels.clone(),
        Some(header.variable_weights.clone()),
    )?;
    if catalog.content_hash() != header.catalog_hash {
        return Err(Error::format(format!("{what}: channel catalog hash mismatch")));
    }
    header.norm.validate(&catalog)?;
    header.fm_config.validate()?;
    let mut params = Vec::with_capacity(header.n_params);
    for i in 0..header.n_params {
        params.push(f64::from_le_bytes(blob[i * 8..i * 8 + 8].try_into().unwrap()));
    }
    let mut net = VelocityNet::zeroed(header.descriptor.clone())?;
    net.set_params(&params)?;
    let hr_grid = GridSpec::global(header.n_lat_hr, header.n_lon_hr)?;
    let lr_grid = GridSpec::global(header.n_lat_lr, header.n_lon_lr)?;
    Ok(Checkpoint {
        net,
        stats: header.norm,
        catalog,
        fm_config: header.fm_config,
        hr_grid,
        lr_grid,
    })
}

pub fn write_norm_stats(path: impl AsRef<Path>, stats: &NormStats) -> Result<()> {
    fs::write(path.as_ref(), serde_json::to_vec_pretty(stats)?)?;
    Ok(())
}

pub fn read_norm_stats(path: impl AsRef<Path>) -> Result<NormStats> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| {
        Error::format(format!("cannot read {}: {e}", path.display()))
    })?;
    Ok(serde_json::from_slice(&bytes)?)
}

// ---------------------------------------------------------------------
// CSV report writers. Plain comma-separated text with one fixed header
// row per schema; floats use Rust's shortest-roundtrip formatting so
// outputs are bit-stable and parse back exactly.
// ---------------------------------------------------------------------

fn opt_str<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_design_csv(path: impl AsRef<Path>, report: &DesignReport) -> Result<()> {
    let mut out = String::from("channel,lead_h,corr,activity_ratio,nrmse,n_samples\n");
    for r in &report.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.channel, r.lead_hours, r.corr, r.activity_ratio, r.nrmse, r.n_samples
        ));
    }
    fs::write(path.as_ref(), out)?;
    Ok(())
}

pub fn write_metric_csv(path: impl AsRef<Path>, report: &MetricReport) -> Result<()> {
    let mut out = String::from("metric,channel,lead_h,q,value\n");
    for r in &report.rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.metric,
            opt_str(&r.channel),
            r.lead_hours,
            opt_str(&r.q),
            r.value
        ));
    }
    fs::write(path.as_ref(), out)?;
    Ok(())
}

const DATE_SCORE_HEADER: &str = "metric,channel,lead_h,q,init_time,value";

pub fn write_date_scores_csv(path: impl AsRef<Path>, rows: &[DateScoreRow]) -> Result<()> {
    let mut out = String::from(DATE_SCORE_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.metric,
            opt_str(&r.channel),
            r.lead_hours,
            opt_str(&r.q),
            r.init_time,
            r.value
        ));
    }
    fs::write(path.as_ref(), out)?;
    Ok(())
}

pub fn read_date_scores_csv(path: impl AsRef<Path>) -> Result<Vec<DateScoreRow>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| {
        Error::format(format!("cannot read {}: {e}", path.display()))
    })?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == DATE_SCORE_HEADER => {}
        other => {
            return Err(Error::format(format!(
                "{}: expected header {DATE_SCORE_HEADER:?}, found {other:?}",
                path.display()
            )))
        }
    }
    let mut rows = Vec::new();
    for (ln, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 6 {
            return Err(Error::format(format!(
                "{}: line {}: expected 6 columns, found {}",
                path.display(),
                ln + 2,
                parts.len()
            )));
        }
        let parse_f = |s: &str, col: &str| -> Result<f64> {
            s.parse().map_err(|_| {
                Error::format(format!(
                    "{}: line {}: bad {col} value {s:?}",
                    path.display(),
                    ln + 2
                ))
            })
        };
        let parse_i = |s: &str, col: &str| -> Result<i64> {
            s.parse().map_err(|_| {
                Error::format(format!(
                    "{}: line {}: bad {col} value {s:?}",
                    path.display(),
                    ln + 2
                ))
            })
        };
        rows.push(DateScoreRow {
            metric: parts[0].to_string(),
            channel: (!parts[1].is_empty()).then(|| parts[1].to_string()),
            lead_hours: parse_i(parts[2], "lead_h")?,
            q: if parts[3].is_empty() {
                None
            } else {
                Some(parse_f(parts[3], "q")?)
            },
            init_time: parse_i(parts[4], "init_time")?,
            value: parse_f(parts[5], "value")?,
        });
    }
    Ok(rows)
}

pub fn write_sig_csv(path: impl AsRef<Path>, rows: &[SigRow]) -> Result<()> {
    let mut out =
        String::from("metric,channel,lead_h,q,estimate,lo,hi,block_len,significant\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.metric,
            opt_str(&r.channel),
            r.lead_hours,
            opt_str(&r.q),
            r.estimate,
            r.lo,
            r.hi,
            r.block_len,
            r.significant
        ));
    }
    fs::write(path.as_ref(), out)?;
    Ok(())
}

pub fn write_loss_csv(path: impl AsRef<Path>, records: &[TrainRecord]) -> Result<()> {
    let mut out = String::from("step,loss\n");
    for r in records {
        out.push_str(&format!("{},{}\n", r.step, r.loss));
    }
    fs::write(path.as_ref(), out)?;
    Ok(())
}

pub fn write_spectrum_csv(path: impl AsRef<Path>, spec: &Spectrum) -> Result<()> {
    let mut out = String::from("channel,k,wavelength_km,energy\n");
    for (c, label) in spec.channel_labels().iter().enumerate() {
        for k in 0..=spec.max_wavenumber() {
            out.push_str(&format!(
                "{label},{k},{},{}\n",
                spec.wavelength_km(k),
                spec.energy(c, k)
            ));
        }
    }
    fs::write(path.as_ref(), out)?;
    Ok(())
}

/// Ratio CSV with the coarse cutoff recorded as a leading comment so a
/// plotting script can mark it without re-deriving grid factors.
pub fn write_spectrum_ratio_csv(path: impl AsRef<Path>, ratio: &SpectrumRatio) -> Result<()> {
    let mut out = format!("# cutoff_k={}\nchannel,k,ratio\n", ratio.cutoff_k());
    for (c, label) in ratio.channel_labels().iter().enumerate() {
        for (k, v) in ratio.ratios(c).iter().enumerate() {
            out.push_str(&format!("{label},{k},{v}\n"));
        }
    }
    fs::write(path.as_ref(), out)?;
    Ok(())
}
