//! Conservative coarsening and bicubic upsampling between nested grids.
//!
//! Coarsening takes exact area-weighted means of the fine children of each
//! coarse cell, so the global weighted mean is preserved to roundoff.
//! Upsampling is separable Catmull-Rom interpolation at destination cell
//! centers, wrapping in longitude and clamping at the first and last
//! latitude rows. Both operators are linear and shift-equivariant in
//! longitude.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{Field, GridSpec, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegridMode {
    ConservativeCoarsen,
    BicubicUp,
}

#[derive(Debug, Clone)]
enum PlanWeights {
    Coarsen {
        // child_row_weight[J][a]: weight of fine row J*factor_lat+a in the
        // mean of coarse row J; includes the 1/factor_lon column share, so
        // the weights of one coarse cell's children sum to 1.
        child_row_weight: Vec<Vec<f64>>,
    },
    Bicubic {
        lat_idx: Vec<[usize; 4]>,
        lat_w: Vec<[f64; 4]>,
        lon_idx: Vec<[usize; 4]>,
        lon_w: Vec<[f64; 4]>,
    },
}

/// Precomputed mapping between a nested source and destination grid.
#[derive(Debug, Clone)]
pub struct RegridPlan {
    src: Arc<GridSpec>,
    dst: Arc<GridSpec>,
    mode: RegridMode,
    factor_lat: usize,
    factor_lon: usize,
    weights: PlanWeights,
}

/// Catmull-Rom weights for the four samples around fractional offset `t`
/// in [0,1); they sum to 1 for every t.
fn catmull_rom_weights(t: f64) -> [f64; 4] {
    [
        ((-t + 2.0) * t - 1.0) * t * 0.5,
        ((3.0 * t - 5.0) * t * t + 2.0) * 0.5,
        ((-3.0 * t + 4.0) * t + 1.0) * t * 0.5,
        (t - 1.0) * t * t * 0.5,
    ]
}

impl RegridPlan {
    /// Plan for the coarse-graining operator; `src` dims must be integer
    /// multiples of `dst` dims.
    pub fn conservative(src: Arc<GridSpec>, dst: Arc<GridSpec>) -> Result<RegridPlan> {
        if src.n_lat() % dst.n_lat() != 0 || src.n_lon() % dst.n_lon() != 0 {
            return Err(Error::validation(format!(
                "coarsening requires nested grids, got {}x{} -> {}x{}",
                src.n_lat(),
                src.n_lon(),
                dst.n_lat(),
                dst.n_lon()
            )));
        }
        let factor_lat = src.n_lat() / dst.n_lat();
        let factor_lon = src.n_lon() / dst.n_lon();
        let child_row_weight = (0..dst.n_lat())
            .map(|jc| {
                let rows = &src.cell_area_weights()[jc * factor_lat..(jc + 1) * factor_lat];
                let total: f64 = rows.iter().sum::<f64>() * factor_lon as f64;
                rows.iter().map(|w| w / total).collect()
            })
            .collect();
        Ok(RegridPlan {
            src,
            dst,
            mode: RegridMode::ConservativeCoarsen,
            factor_lat,
            factor_lon,
            weights: PlanWeights::Coarsen { child_row_weight },
        })
    }

    /// Plan for the upsampling operator; `dst` dims must be integer
    /// multiples of `src` dims.
    pub fn bicubic(src: Arc<GridSpec>, dst: Arc<GridSpec>) -> Result<RegridPlan> {
        if dst.n_lat() % src.n_lat() != 0 || dst.n_lon() % src.n_lon() != 0 {
            return Err(Error::validation(format!(
                "bicubic upsampling requires nested grids, got {}x{} -> {}x{}",
                src.n_lat(),
                src.n_lon(),
                dst.n_lat(),
                dst.n_lon()
            )));
        }
        let factor_lat = dst.n_lat() / src.n_lat();
        let factor_lon = dst.n_lon() / src.n_lon();

        let mut lat_idx = Vec::with_capacity(dst.n_lat());
        let mut lat_w = Vec::with_capacity(dst.n_lat());
        let last = src.n_lat() as i64 - 1;
        for y in 0..dst.n_lat() {
            let v = (y as f64 + 0.5) / factor_lat as f64 - 0.5;
            let base = v.floor();
            let t = v - base;
            let idx = std::array::from_fn(|r| {
                (base as i64 + r as i64 - 1).clamp(0, last) as usize
            });
            lat_idx.push(idx);
            lat_w.push(catmull_rom_weights(t));
        }

        let mut lon_idx = Vec::with_capacity(dst.n_lon());
        let mut lon_w = Vec::with_capacity(dst.n_lon());
        let n = src.n_lon() as i64;
        for x in 0..dst.n_lon() {
            let u = (x as f64 + 0.5) / factor_lon as f64 - 0.5;
            let base = u.floor();
            let t = u - base;
            let idx = std::array::from_fn(|s| {
                (base as i64 + s as i64 - 1).rem_euclid(n) as usize
            });
            lon_idx.push(idx);
            lon_w.push(catmull_rom_weights(t));
        }

        Ok(RegridPlan {
            src,
            dst,
            mode: RegridMode::BicubicUp,
            factor_lat,
            factor_lon,
            weights: PlanWeights::Bicubic {
                lat_idx,
                lat_w,
                lon_idx,
                lon_w,
            },
        })
    }

    pub fn src(&self) -> &Arc<GridSpec> {
        &self.src
    }

    pub fn dst(&self) -> &Arc<GridSpec> {
        &self.dst
    }

    pub fn mode(&self) -> RegridMode {
        self.mode
    }

    pub fn factor_lat(&self) -> usize {
        self.factor_lat
    }

    pub fn factor_lon(&self) -> usize {
        self.factor_lon
    }

    /// Applies this plan to a field on the source grid.
    pub fn apply(&self, f: &Field) -> Result<Field> {
        if f.grid().as_ref() != self.src.as_ref() {
            return Err(Error::validation(format!(
                "field grid {}x{} does not match plan source {}x{}",
                f.grid().n_lat(),
                f.grid().n_lon(),
                self.src.n_lat(),
                self.src.n_lon()
            )));
        }
        let mut out = vec![0.0f32; f.channels().len() * self.dst.n_cells()];
        match &self.weights {
            PlanWeights::Coarsen { child_row_weight } => {
                self.apply_coarsen(f, child_row_weight, &mut out)
            }
            PlanWeights::Bicubic {
                lat_idx,
                lat_w,
                lon_idx,
                lon_w,
            } => self.apply_bicubic(f, lat_idx, lat_w, lon_idx, lon_w, &mut out),
        }
        let field = Field::from_data(self.dst.clone(), f.channels().clone(), out, None)?;
        Ok(match f.timestamp() {
            Some(t) => field.with_timestamp(t),
            None => field,
        })
    }

    fn apply_coarsen(&self, f: &Field, child_row_weight: &[Vec<f64>], out: &mut [f32]) {
        let (nlat_d, nlon_d) = (self.dst.n_lat(), self.dst.n_lon());
        let nlon_s = self.src.n_lon();
        for c in 0..f.channels().len() {
            let src = f.channel(c);
            let dst = &mut out[c * nlat_d * nlon_d..(c + 1) * nlat_d * nlon_d];
            for jc in 0..nlat_d {
                let crw = &child_row_weight[jc];
                for kc in 0..nlon_d {
                    let mut acc = 0.0f64;
                    for (a, &w) in crw.iter().enumerate() {
                        let row = (jc * self.factor_lat + a) * nlon_s + kc * self.factor_lon;
                        let mut row_sum = 0.0f64;
                        for b in 0..self.factor_lon {
                            row_sum += src[row + b] as f64;
                        }
                        acc += w * row_sum;
                    }
                    dst[jc * nlon_d + kc] = acc as f32;
                }
            }
        }
    }

    fn apply_bicubic(
        &self,
        f: &Field,
        lat_idx: &[[usize; 4]],
        lat_w: &[[f64; 4]],
        lon_idx: &[[usize; 4]],
        lon_w: &[[f64; 4]],
        out: &mut [f32],
    ) {
        let (nlat_d, nlon_d) = (self.dst.n_lat(), self.dst.n_lon());
        let (nlat_s, nlon_s) = (self.src.n_lat(), self.src.n_lon());
        let mut tmp = vec![0.0f64; nlat_s * nlon_d];
        for c in 0..f.channels().len() {
            let src = f.channel(c);
            // Horizontal pass: interpolate every source row to dst columns.
            for j in 0..nlat_s {
                let row = &src[j * nlon_s..(j + 1) * nlon_s];
                let trow = &mut tmp[j * nlon_d..(j + 1) * nlon_d];
                for x in 0..nlon_d {
                    let idx = &lon_idx[x];
                    let w = &lon_w[x];
                    trow[x] = w[0] * row[idx[0]] as f64
                        + w[1] * row[idx[1]] as f64
                        + w[2] * row[idx[2]] as f64
                        + w[3] * row[idx[3]] as f64;
                }
            }
            // Vertical pass over the interpolated rows.
            let dst = &mut out[c * nlat_d * nlon_d..(c + 1) * nlat_d * nlon_d];
            for y in 0..nlat_d {
                let idx = &lat_idx[y];
                let w = &lat_w[y];
                let r0 = &tmp[idx[0] * nlon_d..idx[0] * nlon_d + nlon_d];
                let r1 = &tmp[idx[1] * nlon_d..idx[1] * nlon_d + nlon_d];
                let r2 = &tmp[idx[2] * nlon_d..idx[2] * nlon_d + nlon_d];
                let r3 = &tmp[idx[3] * nlon_d..idx[3] * nlon_d + nlon_d];
                let drow = &mut dst[y * nlon_d..(y + 1) * nlon_d];
                for x in 0..nlon_d {
                    drow[x] =
                        (w[0] * r0[x] + w[1] * r1[x] + w[2] * r2[x] + w[3] * r3[x]) as f32;
                }
            }
        }
    }

    /// Area-weighted global mean per channel of the coarsened field,
    /// without rounding coarse cells to f32 storage. Conservation of the
    /// remap weights holds here to f64 roundoff; `coarsen` itself adds one
    /// f32 rounding per coarse cell on top.
    pub fn coarse_weighted_mean_f64(&self, f: &Field) -> Result<Vec<f64>> {
        let child_row_weight = match &self.weights {
            PlanWeights::Coarsen { child_row_weight } => child_row_weight,
            PlanWeights::Bicubic { .. } => {
                return Err(Error::validation(
                    "coarse_weighted_mean_f64 requires a conservative plan",
                ))
            }
        };
        if f.grid().as_ref() != self.src.as_ref() {
            return Err(Error::validation("field grid does not match plan source"));
        }
        let (nlat_d, nlon_d) = (self.dst.n_lat(), self.dst.n_lon());
        let nlon_s = self.src.n_lon();
        let wd = self.dst.cell_area_weights();
        let mut means = Vec::with_capacity(f.channels().len());
        for c in 0..f.channels().len() {
            let src = f.channel(c);
            let mut mean = 0.0f64;
            for jc in 0..nlat_d {
                let crw = &child_row_weight[jc];
                let mut band = 0.0f64;
                for kc in 0..nlon_d {
                    let mut acc = 0.0f64;
                    for (a, &w) in crw.iter().enumerate() {
                        let row = (jc * self.factor_lat + a) * nlon_s + kc * self.factor_lon;
                        let mut row_sum = 0.0f64;
                        for b in 0..self.factor_lon {
                            row_sum += src[row + b] as f64;
                        }
                        acc += w * row_sum;
                    }
                    band += acc;
                }
                mean += wd[jc] * band;
            }
            means.push(mean);
        }
        Ok(means)
    }

    /// Applies the plan to every state of a trajectory.
    pub fn apply_trajectory(&self, tr: &Trajectory) -> Result<Trajectory> {
        let states = tr
            .states()
            .iter()
            .map(|s| self.apply(s))
            .collect::<Result<Vec<_>>>()?;
        Trajectory::new(tr.init_time(), tr.lead_step_hours(), states)
    }
}

/// Coarse-graining operator C.
pub fn coarsen(f: &Field, plan: &RegridPlan) -> Result<Field> {
    if plan.mode != RegridMode::ConservativeCoarsen {
        return Err(Error::validation("coarsen requires a conservative plan"));
    }
    plan.apply(f)
}

/// Upsampling operator I (written ↑ elsewhere in the crate docs).
pub fn interpolate_up(f: &Field, plan: &RegridPlan) -> Result<Field> {
    if plan.mode != RegridMode::BicubicUp {
        return Err(Error::validation("interpolate_up requires a bicubic plan"));
    }
    plan.apply(f)
}

/// Alias of `coarsen` so validation code provably applies the identical
/// operator that built the training pairs.
pub fn recoarsen_for_validation(hr: &Field, plan: &RegridPlan) -> Result<Field> {
    coarsen(hr, plan)
}
