//! Helpers shared by the command-line tools.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use lunarhop::estimator::{decode_checkpoint, DualHorizonEstimator};
use lunarhop::harness::HarnessConfig;

/// The config at `path`, or all defaults when no file is given.
pub fn load_config(path: Option<&Path>) -> Result<HarnessConfig> {
    match path {
        Some(p) => HarnessConfig::load(p).with_context(|| format!("loading config {}", p.display())),
        None => Ok(HarnessConfig::default()),
    }
}

/// `explicit`, else the configured output directory (after the environment
/// override). The directory is created.
pub fn output_dir(explicit: Option<&Path>, cfg: &HarnessConfig) -> Result<PathBuf> {
    let dir = explicit.map(Path::to_path_buf).unwrap_or_else(|| cfg.output_dir());
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

pub fn load_checkpoint(path: &Path) -> Result<DualHorizonEstimator> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    decode_checkpoint(&bytes).with_context(|| format!("decoding checkpoint {}", path.display()))
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

/// Formats an MSE quadruple stored as `(v_z, v_x, v_y, h)`.
pub fn format_mse(m: &[f64; 4]) -> String {
    format!("v_z {:.6}  v_x {:.6}  v_y {:.6}  h {:.6}", m[0], m[1], m[2], m[3])
}
