//! `key = value` configuration files. `#` starts a comment.

use std::fmt;
use std::path::Path;

use pdeftl_core::crypto::KdfParams;
use pdeftl_core::ftl::{FtlConfig, IdleDummies, Strategy};
use pdeftl_core::harness::ExperimentConfig;
use pdeftl_core::nand::FlashGeometry;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

fn err(line: usize, message: impl Into<String>) -> ConfigError {
    ConfigError { line: Some(line), message: message.into() }
}

/// Defaults for devices created by the command line tool.
pub fn default_ftl() -> FtlConfig {
    FtlConfig {
        geometry: FlashGeometry::new(128, 32, 2048, 64, 10_000),
        ..FtlConfig::default()
    }
}

pub fn default_experiment() -> ExperimentConfig {
    ExperimentConfig::default()
}

fn num<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T, ConfigError> {
    v.parse().map_err(|_| err(line, format!("bad value `{v}` for `{key}`")))
}

fn boolean(line: usize, key: &str, v: &str) -> Result<bool, ConfigError> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(err(line, format!("bad value `{v}` for `{key}`"))),
    }
}

/// Applies one FTL key; `Ok(false)` if the key is not an FTL key.
fn apply_ftl(c: &mut FtlConfig, line: usize, key: &str, v: &str) -> Result<bool, ConfigError> {
    let g = &mut c.geometry;
    match key {
        "num_blocks" => g.num_blocks = num(line, key, v)?,
        "pages_per_block" => g.pages_per_block = num(line, key, v)?,
        "page_size" => g.page_size = num(line, key, v)?,
        "oob_size" => g.oob_size = num(line, key, v)?,
        "pe_cycle_limit" => g.pe_cycle_limit = num(line, key, v)?,
        "strategy" => c.strategy = v.parse::<Strategy>().map_err(|e| err(line, e))?,
        "dummy_mean" => c.dummy_mean = num(line, key, v)?,
        "idle_threshold" => c.idle_threshold = num(line, key, v)?,
        "idle_dummies" => {
            c.idle_dummies = match v {
                "geometric" => IdleDummies::Geometric,
                n => IdleDummies::Fixed(num(line, key, n)?),
            }
        }
        "gc_free_low" => c.gc_free_low = num(line, key, v)?,
        "load_high" => c.load_high = num(line, key, v)?,
        "gc_reclaim_fraction" => c.gc_reclaim_fraction = num(line, key, v)?,
        "gc_hidden_target_load" => c.gc_hidden_target_load = num(line, key, v)?,
        "gc_hidden_max_blocks" => c.gc_hidden_max_blocks = num(line, key, v)?,
        "map_slots" => c.map_slots = num(line, key, v)?,
        "public_fraction" => c.public_fraction = num(line, key, v)?,
        "hidden_fraction" => c.hidden_fraction = num(line, key, v)?,
        "kdf_iterations" => c.kdf = KdfParams { iterations: num(line, key, v)? },
        _ => return Ok(false),
    }
    Ok(true)
}

fn apply_experiment(e: &mut ExperimentConfig, line: usize, key: &str, v: &str) -> Result<bool, ConfigError> {
    match key {
        "pairs" => e.pairs = num(line, key, v)?,
        "warmup_writes" => e.warmup_writes = num(line, key, v)?,
        "interval_writes_min" => e.interval_writes.0 = num(line, key, v)?,
        "interval_writes_max" => e.interval_writes.1 = num(line, key, v)?,
        "hidden_writes" => e.hidden_writes = num(line, key, v)?,
        "null" => e.null = boolean(line, key, v)?,
        "train_fraction" => e.train_fraction = num(line, key, v)?,
        _ => return Ok(false),
    }
    Ok(true)
}

fn entries(text: &str) -> impl Iterator<Item = Result<(usize, &str, &str), ConfigError>> {
    text.lines().enumerate().filter_map(|(i, raw)| {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            return None;
        }
        Some(match line.split_once('=') {
            Some((k, v)) if !k.trim().is_empty() => Ok((i + 1, k.trim(), v.trim())),
            _ => Err(err(i + 1, format!("expected `key = value`, got `{line}`"))),
        })
    })
}

fn validated(c: FtlConfig) -> Result<FtlConfig, ConfigError> {
    c.validate().map_err(|e| ConfigError { line: None, message: e.to_string() })?;
    Ok(c)
}

pub fn parse_ftl(text: &str, base: FtlConfig) -> Result<FtlConfig, ConfigError> {
    let mut c = base;
    for entry in entries(text) {
        let (line, k, v) = entry?;
        if !apply_ftl(&mut c, line, k, v)? {
            return Err(err(line, format!("unknown key `{k}`")));
        }
    }
    validated(c)
}

pub fn parse_experiment(text: &str, base: ExperimentConfig) -> Result<ExperimentConfig, ConfigError> {
    let mut e = base;
    for entry in entries(text) {
        let (line, k, v) = entry?;
        if !apply_experiment(&mut e, line, k, v)? && !apply_ftl(&mut e.ftl, line, k, v)? {
            return Err(err(line, format!("unknown key `{k}`")));
        }
    }
    e.ftl = validated(e.ftl)?;
    if e.interval_writes.0 > e.interval_writes.1 {
        return Err(ConfigError { line: None, message: "interval_writes_min exceeds interval_writes_max".into() });
    }
    if !(e.train_fraction > 0.0 && e.train_fraction < 1.0) {
        return Err(ConfigError { line: None, message: "train_fraction must lie strictly between 0 and 1".into() });
    }
    Ok(e)
}

const GEOMETRY_KEYS: [&str; 5] = ["num_blocks", "pages_per_block", "page_size", "oob_size", "pe_cycle_limit"];

/// Whether the file sets any geometry key, in which case an existing
/// device must match it.
pub fn sets_geometry(text: &str) -> bool {
    entries(text).flatten().any(|(_, k, _)| GEOMETRY_KEYS.contains(&k))
}

pub fn read(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|e| ConfigError { line: None, message: format!("{}: {e}", path.display()) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ftl_keys() {
        let c = parse_ftl(
            "# device\nnum_blocks = 64\npage_size=1024\nstrategy = baseline\nidle_dummies = 3\nkdf_iterations = 5\n",
            default_ftl(),
        )
        .unwrap();
        assert_eq!(c.geometry.num_blocks, 64);
        assert_eq!(c.geometry.page_size, 1024);
        assert_eq!(c.strategy, Strategy::HiddenVolumeBaseline);
        assert_eq!(c.idle_dummies, IdleDummies::Fixed(3));
        assert_eq!(c.kdf.iterations, 5);
    }

    #[test]
    fn experiment_keys_and_ftl_keys_mix() {
        let e = parse_experiment("pairs = 60\nnull = yes\ndummy_mean = 1.5\ninterval_writes_min=5\ninterval_writes_max=9\n", default_experiment())
            .unwrap();
        assert_eq!(e.pairs, 60);
        assert!(e.null);
        assert_eq!(e.ftl.dummy_mean, 1.5);
        assert_eq!(e.interval_writes, (5, 9));
    }

    #[test]
    fn errors_name_the_line() {
        assert_eq!(parse_ftl("num_blocks = 64\nbogus = 1\n", default_ftl()).unwrap_err().line, Some(2));
        assert_eq!(parse_ftl("\nnum_blocks 64\n", default_ftl()).unwrap_err().line, Some(2));
        assert_eq!(parse_ftl("load_high = lots\n", default_ftl()).unwrap_err().line, Some(1));
        assert_eq!(parse_ftl("load_high = 1.5\n", default_ftl()).unwrap_err().line, None);
        assert!(parse_experiment("pairs = 1\nload_high = 0.9\nfoo = 2\n", default_experiment()).is_err());
    }
}
