//! Device images on disk: a raw flash snapshot plus a `.metrics` file
//! holding the simulator's counters.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use pdeftl_core::ftl::{Counters, Ftl, FtlConfig};
use pdeftl_core::nand::{FlashArray, FlashCounters, FlashSnapshot};

pub fn metrics_path(device: &Path) -> PathBuf {
    let mut p = device.as_os_str().to_owned();
    p.push(".metrics");
    PathBuf::from(p)
}

pub fn read_snapshot(path: &Path) -> Result<FlashSnapshot> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    FlashSnapshot::from_bytes(bytes).with_context(|| format!("loading {}", path.display()))
}

/// Opens a device image, locked, taking geometry from the image and
/// runtime settings from `config`.
pub fn open(path: &Path, config: &FtlConfig, geometry_given: bool) -> Result<Ftl> {
    let snap = read_snapshot(path)?;
    let geometry = *snap.geometry();
    let config = if geometry_given { config.clone() } else { FtlConfig { geometry, ..config.clone() } };
    let mut flash = FlashArray::from_snapshot(&snap)?;
    let text = std::fs::read_to_string(metrics_path(path)).ok();
    let field = |key: &str| {
        text.as_deref()?.lines().find_map(|l| l.strip_prefix(key)?.strip_prefix('=')).and_then(|v| v.trim().parse::<f64>().ok())
    };
    flash.set_counters(FlashCounters {
        programs: field("flash_programs").unwrap_or(0.0) as u64,
        erases: field("flash_erases").unwrap_or(0.0) as u64,
        reads: 0,
    });
    let mut ftl = Ftl::open(flash, config)?;
    if let Some(text) = &text {
        ftl.set_counters(Counters::from_kv(text).map_err(anyhow::Error::msg).context("reading metrics file")?);
    }
    if let Some(load) = field("load_factor") {
        ftl.set_locked_load(load);
    }
    Ok(ftl)
}

pub fn save(path: &Path, ftl: &Ftl) -> Result<()> {
    write_atomic(path, ftl.snapshot().as_bytes())?;
    write_atomic(&metrics_path(path), ftl.metrics().to_kv().as_bytes())
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    std::fs::rename(&tmp, path).with_context(|| format!("writing {}", path.display()))
}
