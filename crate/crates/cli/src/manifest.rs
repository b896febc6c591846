//! Run manifest: everything needed to reproduce a run bit for bit, plus a
//! record of which physical constants are assumptions.

use crate::config::ExperimentConfig;
use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct AssumedConstant {
    pub name: String,
    pub value: f64,
    pub units: String,
    /// true when the value is a simulator assumption rather than a
    /// measured or exact quantity.
    pub assumption: bool,
    pub note: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct PointSeed {
    pub point: String,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PointError {
    pub point: String,
    pub message: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub scenario: String,
    pub config_path: String,
    pub master_seed: u64,
    pub workers: Option<usize>,
    pub wall_clock_s: f64,
    /// The fully resolved configuration (defaults applied).
    pub config: ExperimentConfig,
    pub assumed_constants: Vec<AssumedConstant>,
    pub point_seeds: Vec<PointSeed>,
    pub errors: Vec<PointError>,
    pub outputs: Vec<String>,
}
