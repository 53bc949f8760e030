//! Residual super-resolution of coarse gridded forecasts by conditional
//! flow matching, plus the verification stack used to judge it: design
//! validation against a reference analysis, fair ensemble scores, zonal
//! spectral diagnostics, and block-bootstrap significance tests. Everything
//! runs deterministically from explicit seeds on synthetic data.

pub mod design;
pub mod ensemble;
pub mod error;
pub mod flow;
pub mod grid;
pub mod net;
pub mod norm;
pub mod pipeline;
pub mod regrid;
pub mod rng;
pub mod sigtest;
pub mod spectra;
pub mod store;
pub mod synth;

pub use error::{Error, Result};
pub use grid::{
    ChannelCatalog, ChannelDef, EnsembleSet, Field, GridSpec, Level, TimeIndex, Trajectory,
};
