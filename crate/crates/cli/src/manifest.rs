use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use rostf::ppds::StoppingRule;
use rostf::raster::Geometry;
use rostf::RostfParams;
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NoiseLevels {
    pub sigma_h: f64,
    pub r_h: f64,
    pub sigma_l: f64,
    pub r_l: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GeometryRecord {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
}

impl From<Geometry> for GeometryRecord {
    fn from(g: Geometry) -> Self {
        GeometryRecord {
            height: g.height,
            width: g.width,
            bands: g.bands,
        }
    }
}

/// Everything needed to repeat a `fuse` or `runcase` invocation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub tool_version: String,
    pub command: String,
    pub case: Option<String>,
    pub seed: Option<u64>,
    pub hr_geometry: GeometryRecord,
    pub k: usize,
    pub noise: NoiseLevels,
    pub params: Vec<RostfParams>,
    pub stop: StoppingRule,
    pub sequential: bool,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub converged: bool,
    pub iterations: Vec<usize>,
    /// Seconds since the Unix epoch.
    pub started_at: f64,
    pub finished_at: f64,
}

pub fn now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
