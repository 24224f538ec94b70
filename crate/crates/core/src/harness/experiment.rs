//! Paired snapshot experiments: run each pair of scenarios, diff the two
//! snapshots around the observed interval, and hand the features to the
//! distinguisher.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::crypto::KdfParams;
use crate::ftl::FtlConfig;
use crate::nand::FlashGeometry;

use super::distinguisher::{distinguish, DistinguishError, DistinguisherReport, Split};
use super::features::{features_between, TrialResult};
use super::scenario::{run_scenario, RunError, Scenario, ScenarioOp, SectorData, SessionKind, Variant};

const BEFORE: &str = "before";
const AFTER: &str = "after";

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub ftl: FtlConfig,
    pub pairs: usize,
    pub seed: u64,
    /// Public writes before the first snapshot.
    pub warmup_writes: u32,
    /// Public writes in the observed interval, drawn uniformly from the
    /// inclusive range.
    pub interval_writes: (u32, u32),
    /// Hidden writes in the observed interval of the `WithHidden` variant.
    pub hidden_writes: u32,
    /// Drop hidden writes from both variants.
    pub null: bool,
    pub train_fraction: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            ftl: FtlConfig {
                geometry: FlashGeometry::new(128, 32, 1024, 64, 100_000),
                kdf: KdfParams { iterations: 16 },
                ..FtlConfig::default()
            },
            pairs: 200,
            seed: 0,
            warmup_writes: 400,
            interval_writes: (50, 150),
            hidden_writes: 8,
            null: false,
            train_fraction: 0.5,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExperimentError {
    #[error("pair {pair} ({variant}): {source}")]
    Run {
        pair: usize,
        variant: &'static str,
        #[source]
        source: RunError,
    },
    #[error(transparent)]
    Distinguish(#[from] DistinguishError),
    #[error("invalid experiment: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub trials: Vec<TrialResult>,
    pub report: DistinguisherReport,
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(a.wrapping_mul(4).wrapping_add(b));
    rng.gen()
}

/// Capacities the FTL will derive for `ftl`, used to keep generated LBAs
/// in range.
fn capacities(ftl: &FtlConfig) -> (u32, u32) {
    let g = ftl.geometry;
    let usable = (g.num_blocks.saturating_sub(2) as f64) * g.pages_per_block as f64;
    ((ftl.public_fraction * usable).floor() as u32, (ftl.hidden_fraction * usable).floor() as u32)
}

/// The `WithHidden` scenario of one pair.
pub fn pair_scenario(cfg: &ExperimentConfig, pair: usize) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, pair as u64, 2));
    let (public_cap, hidden_cap) = capacities(&cfg.ftl);
    let mut ops = Vec::new();
    let write = |rng: &mut ChaCha8Rng, ops: &mut Vec<ScenarioOp>| {
        ops.push(ScenarioOp::Write { lba: rng.gen_range(0..public_cap), data: SectorData::Seed(rng.gen()) });
    };

    ops.push(ScenarioOp::Session(SessionKind::Public));
    for _ in 0..cfg.warmup_writes {
        write(&mut rng, &mut ops);
    }
    ops.push(ScenarioOp::Shutdown);
    ops.push(ScenarioOp::Session(SessionKind::Hidden));
    ops.push(ScenarioOp::Idle);
    ops.push(ScenarioOp::Shutdown);
    ops.push(ScenarioOp::Snapshot(BEFORE.into()));

    ops.push(ScenarioOp::Session(SessionKind::Public));
    let (lo, hi) = cfg.interval_writes;
    for _ in 0..rng.gen_range(lo..=hi) {
        write(&mut rng, &mut ops);
    }
    ops.push(ScenarioOp::Tick(cfg.ftl.idle_threshold.max(1)));
    ops.push(ScenarioOp::Shutdown);
    ops.push(ScenarioOp::Session(SessionKind::Hidden));
    for _ in 0..cfg.hidden_writes {
        ops.push(ScenarioOp::HiddenWrite { lba: rng.gen_range(0..hidden_cap), data: SectorData::Seed(rng.gen()) });
    }
    ops.push(ScenarioOp::Idle);
    ops.push(ScenarioOp::Shutdown);
    ops.push(ScenarioOp::Snapshot(AFTER.into()));
    Scenario { ops }
}

/// Device seed of one variant run. Each run gets its own seed.
pub fn trial_seed(cfg: &ExperimentConfig, pair: usize, variant: Variant) -> u64 {
    mix(cfg.seed, pair as u64, variant as u64)
}

pub fn run_trial(cfg: &ExperimentConfig, pair: usize, variant: Variant) -> Result<TrialResult, ExperimentError> {
    let base = pair_scenario(cfg, pair);
    let scenario = if cfg.null { base.variant(Variant::WithoutHidden) } else { base.variant(variant) };
    let fail = |source| ExperimentError::Run { pair, variant: variant.as_str(), source };
    let out = run_scenario(&scenario, &FtlConfig { event_log: false, ..cfg.ftl.clone() }, trial_seed(cfg, pair, variant))
        .map_err(fail)?;
    let [(_, before), (_, after)] = <[_; 2]>::try_from(out.snapshots).expect("two snapshot markers");
    let features = features_between(&before, &after).map_err(|e| fail(RunError::Ftl { step: 0, op: "diff".into(), source: e.into() }))?;
    Ok(TrialResult { trial: pair, variant, features })
}

pub fn run_trials(cfg: &ExperimentConfig) -> Result<Vec<TrialResult>, ExperimentError> {
    if cfg.interval_writes.0 > cfg.interval_writes.1 {
        return Err(ExperimentError::Invalid("interval write range is empty".into()));
    }
    cfg.ftl.validate().map_err(|e| ExperimentError::Invalid(e.to_string()))?;
    let nested: Vec<Result<[TrialResult; 2], ExperimentError>> = (0..cfg.pairs)
        .into_par_iter()
        .map(|pair| Ok([run_trial(cfg, pair, Variant::WithHidden)?, run_trial(cfg, pair, Variant::WithoutHidden)?]))
        .collect();
    let mut trials = Vec::with_capacity(2 * cfg.pairs);
    for r in nested {
        trials.extend(r?);
    }
    Ok(trials)
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput, ExperimentError> {
    let trials = run_trials(cfg)?;
    let report = distinguish(&trials, Split { train_fraction: cfg.train_fraction, seed: mix(cfg.seed, u64::MAX, 3) })?;
    Ok(ExperimentOutput { trials, report })
}
