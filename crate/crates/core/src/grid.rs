//! Grid geometry and the core field containers.
//!
//! All fields live on regular global latitude/longitude grids with cell
//! centers at the midpoints of uniform latitude bands and longitude
//! sectors. Area weights are exact band areas on the unit sphere, so the
//! per-cell weights of a grid sum to 1 and nested grids conserve
//! area-weighted means under averaging.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Hours since the epoch of the synthetic world. Daily data advances by 24.
pub type TimeIndex = i64;

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    n_lat: usize,
    n_lon: usize,
    lat_centers: Vec<f64>,
    lon_centers: Vec<f64>,
    cell_area_weight: Vec<f64>,
}

impl GridSpec {
    /// Regular global grid with `n_lat` latitude bands between the poles and
    /// `n_lon` longitude sectors. Cell centers sit at band midpoints, so no
    /// center falls on a pole.
    pub fn global(n_lat: usize, n_lon: usize) -> Result<Arc<GridSpec>> {
        if n_lat < 2 || n_lon < 2 {
            return Err(Error::validation(format!(
                "grid must be at least 2x2, got {n_lat}x{n_lon}"
            )));
        }
        let dlat = 180.0 / n_lat as f64;
        let lat_centers: Vec<f64> = (0..n_lat).map(|j| -90.0 + (j as f64 + 0.5) * dlat).collect();
        let dlon = 360.0 / n_lon as f64;
        let lon_centers: Vec<f64> = (0..n_lon).map(|k| (k as f64 + 0.5) * dlon).collect();
        // Fraction of sphere area in band j, split evenly over its cells.
        let cell_area_weight: Vec<f64> = (0..n_lat)
            .map(|j| {
                let lo = (-90.0 + j as f64 * dlat).to_radians();
                let hi = (-90.0 + (j + 1) as f64 * dlat).to_radians();
                (hi.sin() - lo.sin()) / (2.0 * n_lon as f64)
            })
            .collect();
        Ok(Arc::new(GridSpec {
            n_lat,
            n_lon,
            lat_centers,
            lon_centers,
            cell_area_weight,
        }))
    }

    pub fn n_lat(&self) -> usize {
        self.n_lat
    }

    pub fn n_lon(&self) -> usize {
        self.n_lon
    }

    pub fn n_cells(&self) -> usize {
        self.n_lat * self.n_lon
    }

    pub fn lat_centers(&self) -> &[f64] {
        &self.lat_centers
    }

    pub fn lon_centers(&self) -> &[f64] {
        &self.lon_centers
    }

    /// Area weight of one cell in latitude row `j`. Weights sum to 1 over
    /// the whole grid.
    pub fn cell_area_weight(&self, j: usize) -> f64 {
        self.cell_area_weight[j]
    }

    pub fn cell_area_weights(&self) -> &[f64] {
        &self.cell_area_weight
    }
}

/// Vertical placement of a channel; pressure levels are in hPa.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Level {
    Surface,
    Pressure(u32),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChannelDef {
    pub variable: String,
    pub level: Level,
}

impl ChannelDef {
    pub fn surface(variable: impl Into<String>) -> Self {
        ChannelDef {
            variable: variable.into(),
            level: Level::Surface,
        }
    }

    pub fn pressure(variable: impl Into<String>, hpa: u32) -> Self {
        ChannelDef {
            variable: variable.into(),
            level: Level::Pressure(hpa),
        }
    }

    /// Compact label such as `t2m` or `z500`, unique within a catalog.
    pub fn label(&self) -> String {
        match self.level {
            Level::Surface => self.variable.clone(),
            Level::Pressure(p) => format!("{}{}", self.variable, p),
        }
    }
}

/// Ordered channel list plus the per-channel weights used by scoring and
/// training losses: pressure channels weigh `p/1000`, surface channels 1,
/// optionally scaled by a per-variable weight (default 1).
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelCatalog {
    defs: Vec<ChannelDef>,
    variable_weight: Vec<f64>,
}

impl ChannelCatalog {
    pub fn new(defs: Vec<ChannelDef>) -> Result<Arc<ChannelCatalog>> {
        Self::with_variable_weights(defs, None)
    }

    pub fn with_variable_weights(
        defs: Vec<ChannelDef>,
        variable_weight: Option<Vec<f64>>,
    ) -> Result<Arc<ChannelCatalog>> {
        if defs.is_empty() {
            return Err(Error::validation("channel catalog must not be empty"));
        }
        for i in 0..defs.len() {
            for j in (i + 1)..defs.len() {
                if defs[i] == defs[j] {
                    return Err(Error::validation(format!(
                        "duplicate channel {}",
                        defs[i].label()
                    )));
                }
            }
        }
        let variable_weight = match variable_weight {
            Some(w) => {
                if w.len() != defs.len() {
                    return Err(Error::validation(format!(
                        "expected {} variable weights, got {}",
                        defs.len(),
                        w.len()
                    )));
                }
                if w.iter().any(|v| !v.is_finite() || *v <= 0.0) {
                    return Err(Error::validation("variable weights must be finite and positive"));
                }
                w
            }
            None => vec![1.0; defs.len()],
        };
        Ok(Arc::new(ChannelCatalog {
            defs,
            variable_weight,
        }))
    }

    pub fn len(&self) -> usize {
        self.defs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.defs.is_empty()
    }

    pub fn def(&self, c: usize) -> &ChannelDef {
        &self.defs[c]
    }

    pub fn defs(&self) -> &[ChannelDef] {
        &self.defs
    }

    pub fn label(&self, c: usize) -> String {
        self.defs[c].label()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.defs.iter().position(|d| d.label() == label)
    }

    pub fn level_weight(&self, c: usize) -> f64 {
        match self.defs[c].level {
            Level::Surface => 1.0,
            Level::Pressure(p) => p as f64 / 1000.0,
        }
    }

    pub fn variable_weight(&self, c: usize) -> f64 {
        self.variable_weight[c]
    }

    /// Combined per-channel weight used by the training loss and the
    /// energy-score channel stacking.
    pub fn loss_weight(&self, c: usize) -> f64 {
        self.level_weight(c) * self.variable_weight(c)
    }

    /// Stable content hash tying checkpoints and stats files to a catalog.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for (c, def) in self.defs.iter().enumerate() {
            hasher.update(def.label().as_bytes());
            hasher.update(b"=");
            hasher.update(self.variable_weight[c].to_le_bytes());
            hasher.update(b";");
        }
        hex(&hasher.finalize())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

/// Immutable multi-channel snapshot on one grid, stored row-major as
/// `[channel][lat][lon]` in f32. All values are finite by construction.
#[derive(Debug, Clone)]
pub struct Field {
    grid: Arc<GridSpec>,
    channels: Arc<ChannelCatalog>,
    data: Vec<f32>,
    timestamp: Option<TimeIndex>,
}

impl Field {
    pub fn from_data(
        grid: Arc<GridSpec>,
        channels: Arc<ChannelCatalog>,
        data: Vec<f32>,
        timestamp: Option<TimeIndex>,
    ) -> Result<Field> {
        let want = channels.len() * grid.n_cells();
        if data.len() != want {
            return Err(Error::validation(format!(
                "field data has {} values, expected {}",
                data.len(),
                want
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::numerical(format!(
                "non-finite value at flat index {i} in field data"
            )));
        }
        Ok(Field {
            grid,
            channels,
            data,
            timestamp,
        })
    }

    pub fn zeros(grid: Arc<GridSpec>, channels: Arc<ChannelCatalog>) -> Field {
        let n = channels.len() * grid.n_cells();
        Field {
            grid,
            channels,
            data: vec![0.0; n],
            timestamp: None,
        }
    }

    pub fn grid(&self) -> &Arc<GridSpec> {
        &self.grid
    }

    pub fn channels(&self) -> &Arc<ChannelCatalog> {
        &self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn timestamp(&self) -> Option<TimeIndex> {
        self.timestamp
    }

    pub fn with_timestamp(mut self, t: TimeIndex) -> Field {
        self.timestamp = Some(t);
        self
    }

    pub fn at(&self, c: usize, j: usize, k: usize) -> f32 {
        self.data[(c * self.grid.n_lat() + j) * self.grid.n_lon() + k]
    }

    /// One channel as a `[lat][lon]` row-major slice.
    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.grid.n_cells();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn same_shape(&self, other: &Field) -> bool {
        self.grid == other.grid && self.channels == other.channels
    }

    fn check_compatible(&self, other: &Field, what: &str) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::validation(format!(
                "{what}: fields live on different grids or catalogs"
            )));
        }
        Ok(())
    }

    pub fn checked_add(&self, other: &Field) -> Result<Field> {
        self.check_compatible(other, "add")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Field::from_data(
            self.grid.clone(),
            self.channels.clone(),
            data,
            self.timestamp,
        )
    }

    pub fn checked_sub(&self, other: &Field) -> Result<Field> {
        self.check_compatible(other, "sub")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Field::from_data(
            self.grid.clone(),
            self.channels.clone(),
            data,
            self.timestamp,
        )
    }

    /// Area-weighted global mean per channel, accumulated in f64.
    pub fn weighted_mean(&self) -> Vec<f64> {
        let (n_lat, n_lon) = (self.grid.n_lat(), self.grid.n_lon());
        let w = self.grid.cell_area_weights();
        (0..self.channels.len())
            .map(|c| {
                let ch = self.channel(c);
                let mut acc = 0.0f64;
                for j in 0..n_lat {
                    let mut row = 0.0f64;
                    for v in &ch[j * n_lon..(j + 1) * n_lon] {
                        row += *v as f64;
                    }
                    acc += w[j] * row;
                }
                acc
            })
            .collect()
    }

    /// Area-weighted global variance per channel about the weighted mean
    /// (population form, divides by total weight 1).
    pub fn weighted_variance(&self) -> Vec<f64> {
        let means = self.weighted_mean();
        let (n_lat, n_lon) = (self.grid.n_lat(), self.grid.n_lon());
        let w = self.grid.cell_area_weights();
        (0..self.channels.len())
            .map(|c| {
                let ch = self.channel(c);
                let m = means[c];
                let mut acc = 0.0f64;
                for j in 0..n_lat {
                    let mut row = 0.0f64;
                    for v in &ch[j * n_lon..(j + 1) * n_lon] {
                        let d = *v as f64 - m;
                        row += d * d;
                    }
                    acc += w[j] * row;
                }
                acc
            })
            .collect()
    }
}

/// One forecast run: states at consecutive lead times from a single
/// initialization. State `i` is valid at `init_time + (i+1) * lead_step`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    init_time: TimeIndex,
    lead_step_hours: u32,
    states: Vec<Field>,
}

impl Trajectory {
    pub fn new(
        init_time: TimeIndex,
        lead_step_hours: u32,
        states: Vec<Field>,
    ) -> Result<Trajectory> {
        if states.is_empty() {
            return Err(Error::validation("trajectory must contain at least one state"));
        }
        if lead_step_hours == 0 {
            return Err(Error::validation("lead step must be positive"));
        }
        for s in &states[1..] {
            if !s.same_shape(&states[0]) {
                return Err(Error::validation(
                    "trajectory states must share one grid and catalog",
                ));
            }
        }
        let states = states
            .into_iter()
            .enumerate()
            .map(|(i, s)| s.with_timestamp(init_time + (i as i64 + 1) * lead_step_hours as i64))
            .collect();
        Ok(Trajectory {
            init_time,
            lead_step_hours,
            states,
        })
    }

    pub fn init_time(&self) -> TimeIndex {
        self.init_time
    }

    pub fn lead_step_hours(&self) -> u32 {
        self.lead_step_hours
    }

    pub fn n_leads(&self) -> usize {
        self.states.len()
    }

    pub fn states(&self) -> &[Field] {
        &self.states
    }

    pub fn state(&self, i: usize) -> &Field {
        &self.states[i]
    }

    /// Lead time in hours of state `i`.
    pub fn lead_hours(&self, i: usize) -> u32 {
        (i as u32 + 1) * self.lead_step_hours
    }

    pub fn valid_time(&self, i: usize) -> TimeIndex {
        self.init_time + (i as i64 + 1) * self.lead_step_hours as i64
    }

    pub fn grid(&self) -> &Arc<GridSpec> {
        self.states[0].grid()
    }

    pub fn channels(&self) -> &Arc<ChannelCatalog> {
        self.states[0].channels()
    }
}

/// Ensemble of trajectories from one initialization; members agree on
/// init time, lead structure, grid, and catalog.
#[derive(Debug, Clone)]
pub struct EnsembleSet {
    members: Vec<Trajectory>,
}

impl EnsembleSet {
    pub fn new(members: Vec<Trajectory>) -> Result<EnsembleSet> {
        if members.is_empty() {
            return Err(Error::validation("ensemble must contain at least one member"));
        }
        let first = &members[0];
        for m in &members[1..] {
            if m.init_time() != first.init_time()
                || m.lead_step_hours() != first.lead_step_hours()
                || m.n_leads() != first.n_leads()
                || !m.state(0).same_shape(first.state(0))
            {
                return Err(Error::validation(
                    "ensemble members must share init time, leads, grid, and catalog",
                ));
            }
        }
        Ok(EnsembleSet { members })
    }

    pub fn n_members(&self) -> usize {
        self.members.len()
    }

    pub fn n_leads(&self) -> usize {
        self.members[0].n_leads()
    }

    pub fn init_time(&self) -> TimeIndex {
        self.members[0].init_time()
    }

    pub fn lead_step_hours(&self) -> u32 {
        self.members[0].lead_step_hours()
    }

    pub fn member(&self, m: usize) -> &Trajectory {
        &self.members[m]
    }

    pub fn members(&self) -> &[Trajectory] {
        &self.members
    }

    pub fn grid(&self) -> &Arc<GridSpec> {
        self.members[0].grid()
    }

    pub fn channels(&self) -> &Arc<ChannelCatalog> {
        self.members[0].channels()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn area_weights_sum_to_one() {
        for (nl, nn) in [(2usize, 4usize), (4, 8), (8, 16), (48, 96)] {
            let g = GridSpec::global(nl, nn).unwrap();
            let total: f64 = g.cell_area_weights().iter().sum::<f64>() * nn as f64;
            assert!((total - 1.0).abs() < 1e-12, "grid {nl}x{nn}: {total}");
        }
    }

    #[test]
    fn uniform_two_band_grid_has_equal_weights() {
        // Bands [-90,0] and [0,90] each hold half the sphere; with 4
        // columns every cell carries exactly 1/8.
        let g = GridSpec::global(2, 4).unwrap();
        for j in 0..2 {
            assert!((g.cell_area_weight(j) - 0.125).abs() < 1e-15);
        }
    }

    #[test]
    fn four_band_weights_match_band_area_oracle() {
        let g = GridSpec::global(4, 8).unwrap();
        // Bands at 45 degree steps; sin differences give the band areas.
        let s45 = std::f64::consts::FRAC_PI_4.sin();
        let inner = s45 / 2.0 / 8.0;
        let outer = (1.0 - s45) / 2.0 / 8.0;
        assert!((g.cell_area_weight(0) - outer).abs() < 1e-15);
        assert!((g.cell_area_weight(1) - inner).abs() < 1e-15);
        assert!((g.cell_area_weight(2) - inner).abs() < 1e-15);
        assert!((g.cell_area_weight(3) - outer).abs() < 1e-15);
        assert!(g.cell_area_weight(1) > g.cell_area_weight(0));
    }

    #[test]
    fn centers_avoid_poles_and_are_monotone() {
        let g = GridSpec::global(5, 6).unwrap();
        let lats = g.lat_centers();
        assert!(lats[0] > -90.0 && lats[4] < 90.0);
        assert!(lats.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(lats[2], 0.0);
    }

    #[test]
    fn weighted_mean_of_constant_field_is_constant() {
        let g = GridSpec::global(6, 12).unwrap();
        let cat = ChannelCatalog::new(vec![
            ChannelDef::surface("t2m"),
            ChannelDef::pressure("z", 500),
        ])
        .unwrap();
        let mut data = vec![3.5f32; 2 * g.n_cells()];
        for v in &mut data[g.n_cells()..] {
            *v = -2.0;
        }
        let f = Field::from_data(g, cat, data, None).unwrap();
        let m = f.weighted_mean();
        assert!((m[0] - 3.5).abs() < 1e-12);
        assert!((m[1] + 2.0).abs() < 1e-12);
        let v = f.weighted_variance();
        assert!(v[0].abs() < 1e-12 && v[1].abs() < 1e-12);
    }

    #[test]
    fn weighted_mean_downweights_polar_rows() {
        // A hot polar row must contribute less than the same row at the
        // equator on a 4-band grid.
        let g = GridSpec::global(4, 4).unwrap();
        let cat = ChannelCatalog::new(vec![ChannelDef::surface("t2m")]).unwrap();
        let mut polar = vec![0.0f32; g.n_cells()];
        for v in &mut polar[0..4] {
            *v = 1.0;
        }
        let mut equator = vec![0.0f32; g.n_cells()];
        for v in &mut equator[4..8] {
            *v = 1.0;
        }
        let fp = Field::from_data(g.clone(), cat.clone(), polar, None).unwrap();
        let fe = Field::from_data(g, cat, equator, None).unwrap();
        assert!(fp.weighted_mean()[0] < fe.weighted_mean()[0]);
    }

    #[test]
    fn field_rejects_non_finite_values() {
        let g = GridSpec::global(2, 4).unwrap();
        let cat = ChannelCatalog::new(vec![ChannelDef::surface("t2m")]).unwrap();
        let mut data = vec![0.0f32; g.n_cells()];
        data[3] = f32::NAN;
        let err = Field::from_data(g, cat, data, None).unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn catalog_rejects_duplicates_and_resolves_labels() {
        let err = ChannelCatalog::new(vec![
            ChannelDef::pressure("z", 500),
            ChannelDef::pressure("z", 500),
        ])
        .unwrap_err();
        assert!(matches!(err, Error::Validation(_)));

        let cat = ChannelCatalog::new(vec![
            ChannelDef::surface("t2m"),
            ChannelDef::pressure("z", 500),
            ChannelDef::pressure("t", 850),
        ])
        .unwrap();
        assert_eq!(cat.label(1), "z500");
        assert_eq!(cat.index_of("t850"), Some(2));
        assert_eq!(cat.index_of("u10"), None);
        assert!((cat.level_weight(0) - 1.0).abs() < 1e-15);
        assert!((cat.level_weight(1) - 0.5).abs() < 1e-15);
        assert!((cat.level_weight(2) - 0.85).abs() < 1e-15);
    }

    #[test]
    fn trajectory_assigns_valid_times() {
        let g = GridSpec::global(2, 4).unwrap();
        let cat = ChannelCatalog::new(vec![ChannelDef::surface("t2m")]).unwrap();
        let states = vec![Field::zeros(g.clone(), cat.clone()); 3];
        let tr = Trajectory::new(240, 24, states).unwrap();
        assert_eq!(tr.lead_hours(0), 24);
        assert_eq!(tr.lead_hours(2), 72);
        assert_eq!(tr.valid_time(2), 240 + 72);
        assert_eq!(tr.state(1).timestamp(), Some(240 + 48));
    }

    #[test]
    fn ensemble_requires_consistent_members() {
        let g = GridSpec::global(2, 4).unwrap();
        let cat = ChannelCatalog::new(vec![ChannelDef::surface("t2m")]).unwrap();
        let mk = |init: i64, n: usize| {
            Trajectory::new(init, 24, vec![Field::zeros(g.clone(), cat.clone()); n]).unwrap()
        };
        assert!(EnsembleSet::new(vec![mk(0, 3), mk(0, 3)]).is_ok());
        assert!(EnsembleSet::new(vec![mk(0, 3), mk(24, 3)]).is_err());
        assert!(EnsembleSet::new(vec![mk(0, 3), mk(0, 2)]).is_err());
    }
}
