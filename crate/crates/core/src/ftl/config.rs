use crate::crypto::KdfParams;
use crate::nand::FlashGeometry;

use super::FtlError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    /// Dummy writes plus uniformly random placement of every page.
    DummyRandom,
    /// Hidden-volume layout: public data grows from the head of the block
    /// pool, hidden data from the tail, no dummy writes.
    HiddenVolumeBaseline,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::DummyRandom => "DummyRandom",
            Strategy::HiddenVolumeBaseline => "HiddenVolumeBaseline",
        }
    }

    pub(crate) fn to_byte(self) -> u8 {
        match self {
            Strategy::DummyRandom => 1,
            Strategy::HiddenVolumeBaseline => 2,
        }
    }

    pub(crate) fn from_byte(b: u8) -> Option<Self> {
        match b {
            1 => Some(Strategy::DummyRandom),
            2 => Some(Strategy::HiddenVolumeBaseline),
            _ => None,
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "DummyRandom" | "dummy-random" | "dummy" => Ok(Strategy::DummyRandom),
            "HiddenVolumeBaseline" | "hidden-volume-baseline" | "baseline" => Ok(Strategy::HiddenVolumeBaseline),
            other => Err(format!("unknown strategy `{other}`")),
        }
    }
}

/// Size of the dummy burst issued when the device has been idle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IdleDummies {
    Fixed(u32),
    /// Same geometric distribution as write-attached dummies.
    Geometric,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FtlConfig {
    pub geometry: FlashGeometry,
    pub strategy: Strategy,
    /// Expected dummy pages per public write (geometric count).
    pub dummy_mean: f64,
    /// Ticks without a public write before an idle dummy burst; 0 disables.
    pub idle_threshold: u64,
    pub idle_dummies: IdleDummies,
    /// Public GC runs while erased free pages are below this fraction of
    /// the usable pages.
    pub gc_free_low: f64,
    /// Load factor at which public GC starts reclaiming unaccounted pages.
    pub load_high: f64,
    /// Portion of unaccounted pages one high-load public GC pass reclaims.
    pub gc_reclaim_fraction: f64,
    /// Hidden-mode idle GC stops once load drops to this level.
    pub gc_hidden_target_load: f64,
    /// Upper bound on blocks erased by one hidden-mode GC call.
    pub gc_hidden_max_blocks: u32,
    /// Map commit slots per volume.
    pub map_slots: u32,
    pub public_fraction: f64,
    pub hidden_fraction: f64,
    pub kdf: KdfParams,
    pub master_seed: u64,
    /// Keep an in-memory event log (tests and tracing).
    pub event_log: bool,
}

impl Default for FtlConfig {
    fn default() -> Self {
        Self {
            geometry: FlashGeometry::default(),
            strategy: Strategy::DummyRandom,
            dummy_mean: 2.0,
            idle_threshold: 100,
            idle_dummies: IdleDummies::Geometric,
            gc_free_low: 0.10,
            load_high: 0.85,
            gc_reclaim_fraction: 0.10,
            gc_hidden_target_load: 0.50,
            gc_hidden_max_blocks: 16,
            map_slots: 8,
            public_fraction: 0.70,
            hidden_fraction: 0.20,
            kdf: KdfParams::default(),
            master_seed: 0,
            event_log: false,
        }
    }
}

fn open_unit(name: &str, v: f64) -> Result<(), FtlError> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(FtlError::InvalidConfig(format!("{name} must lie strictly between 0 and 1")))
    }
}

impl FtlConfig {
    pub fn validate(&self) -> Result<(), FtlError> {
        self.geometry
            .validate_relaxed()
            .map_err(|e| FtlError::InvalidConfig(e.to_string()))?;
        open_unit("gc_free_low", self.gc_free_low)?;
        open_unit("load_high", self.load_high)?;
        if !(self.dummy_mean >= 0.0 && self.dummy_mean.is_finite()) {
            return Err(FtlError::InvalidConfig("dummy_mean must be finite and >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.gc_reclaim_fraction) {
            return Err(FtlError::InvalidConfig("gc_reclaim_fraction must lie in [0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.gc_hidden_target_load) {
            return Err(FtlError::InvalidConfig("gc_hidden_target_load must lie in [0, 1)".into()));
        }
        if self.map_slots == 0 {
            return Err(FtlError::InvalidConfig("map_slots must be positive".into()));
        }
        open_unit("public_fraction", self.public_fraction)?;
        open_unit("hidden_fraction", self.hidden_fraction)?;
        if self.public_fraction + self.hidden_fraction >= 1.0 {
            return Err(FtlError::InvalidConfig("public_fraction + hidden_fraction must be < 1".into()));
        }
        Ok(())
    }

    /// Success probability of the geometric dummy count with mean `dummy_mean`.
    pub(crate) fn dummy_p(&self) -> f64 {
        1.0 / (1.0 + self.dummy_mean)
    }
}
