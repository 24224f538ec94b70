//! Deniable flash translation layer over [`FlashArray`].
//!
//! Public and hidden volumes each have a page-level [`MappingTable`]. With
//! [`Strategy::DummyRandom`] every page lands on a uniformly random erased
//! page and public writes drag a geometric number of dummy pages along, so
//! hidden writes blend into the dummy population. Public mode never
//! reclaims pages it cannot attribute unless the load factor crosses the
//! high-load threshold; hidden mode, holding both keys, does the cleanup.
//! [`Strategy::HiddenVolumeBaseline`] is the head/tail hidden-volume layout
//! kept for comparison.

mod baseline;
mod config;
mod engine;
mod events;
mod map;
mod metrics;
mod pages;
mod recovery;
mod superblock;
mod volume;

use std::collections::BTreeSet;
use std::ops::Range;

use thiserror::Error;

pub use config::{FtlConfig, IdleDummies, Strategy};
pub use events::{Event, EventClass, EventOp, EventTarget, EVENT_CSV_HEADER};
pub use map::{MapEntry, MappingTable};
pub use metrics::{Counters, MetricsReport, WearStats};
pub use pages::{Owner, PageStatus};
pub use superblock::{SB_HEADER_LEN, SB_MAGIC, SUPERBLOCK_BLOCKS};
pub use volume::{chain_pages, MAP_HEADER_LEN, MAP_MAGIC};

use crate::crypto::{
    derive_key, CryptoError, KdfParams, KeyRole, LocationSequence, MapLabel, SimRng, VolumeKey, TAG_MIN_LEN,
};
use crate::nand::{FlashArray, FlashGeometry, FlashSnapshot, NandError, PageState, PhysPageAddr};

use pages::PageTable;
use superblock::Header;
use volume::Volume;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FtlError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Nand(#[from] NandError),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error("decoy and true passwords must differ")]
    SamePassword,
    #[error("geometry too small: {0}")]
    GeometryTooSmall(&'static str),
    #[error("device geometry does not match configuration")]
    GeometryMismatch,
    #[error("unlock failed")]
    NoMatch,
    #[error("operation not allowed in the current mode")]
    WrongMode,
    #[error("device is already unlocked")]
    AlreadyUnlocked,
    #[error("lba {lba} out of range (capacity {capacity})")]
    LbaOutOfRange { lba: u32, capacity: u32 },
    #[error("device full")]
    DeviceFull,
    #[error("hidden allocation ran into public data")]
    VolumesCollide,
    #[error("no map slot could be written")]
    CommitFailed,
    #[error("no valid superblock")]
    NoValidSuperblock,
    #[error("device was not shut down cleanly; run recovery")]
    NeedsRecovery,
    #[error("device was shut down cleanly; nothing to recover")]
    CleanShutdown,
    #[error("corrupt metadata: {0}")]
    Corrupt(&'static str),
    #[error("write version counter exhausted")]
    VersionExhausted,
    #[error("not supported by the {0} strategy")]
    Unsupported(&'static str),
}

pub type Result<T> = std::result::Result<T, FtlError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModeKind {
    Locked,
    Public,
    Hidden,
}

impl ModeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModeKind::Locked => "locked",
            ModeKind::Public => "public",
            ModeKind::Hidden => "hidden",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub(crate) enum Which {
    Public,
    Hidden,
}

impl Which {
    fn owner(self, lba: u32) -> Owner {
        match self {
            Which::Public => Owner::Public(lba),
            Which::Hidden => Owner::Hidden(lba),
        }
    }
}

/// Outcome of one GC call.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReclaimReport {
    pub blocks_erased: u32,
    /// Pending plus unattributed pages returned to the erased pool.
    pub pages_reclaimed: u32,
    pub pages_relocated: u32,
    /// Unattributed used pages on the device when a high-load pass ran.
    pub candidate_pages: u32,
    /// Unattributed pages the high-load pass reclaimed.
    pub candidates_reclaimed: u32,
    /// Subset of `candidates_reclaimed` whose origin this session could not
    /// tell (dummy or hidden data).
    pub hidden_risk_pages: u32,
    pub high_load_pass: bool,
}

impl ReclaimReport {
    fn absorb(&mut self, other: ReclaimReport) {
        self.blocks_erased += other.blocks_erased;
        self.pages_reclaimed += other.pages_reclaimed;
        self.pages_relocated += other.pages_relocated;
        self.candidate_pages = self.candidate_pages.max(other.candidate_pages);
        self.candidates_reclaimed += other.candidates_reclaimed;
        self.hidden_risk_pages += other.hidden_risk_pages;
        self.high_load_pass |= other.high_load_pass;
    }
}

/// Parameters fixed at format and recorded in the superblock.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Layout {
    pub strategy: Strategy,
    pub map_slots: u32,
    pub public_capacity: u32,
    pub hidden_capacity: u32,
    pub kdf: KdfParams,
    pub salt: [u8; superblock::SALT_LEN],
}

impl Layout {
    fn public_range(&self, g: &FlashGeometry) -> Range<u32> {
        match self.strategy {
            Strategy::DummyRandom => 2..g.num_blocks,
            Strategy::HiddenVolumeBaseline => 2..g.num_blocks / 2,
        }
    }

    /// First block of the baseline's hidden region, at a key-derived offset
    /// from the end of the device.
    fn tail_start(&self, g: &FlashGeometry, key: &VolumeKey) -> Option<u32> {
        let region = self.hidden_capacity.div_ceil(g.pages_per_block) + self.map_slots + 2;
        let mac = key.mac16(b"tail-offset", &[]);
        let jitter = u32::from_le_bytes(mac[..4].try_into().unwrap()) % (g.num_blocks / 16 + 1);
        let start = g.num_blocks.checked_sub(region + jitter)?;
        (start >= g.num_blocks / 2).then_some(start)
    }

    fn hidden_range(&self, g: &FlashGeometry, key: &VolumeKey) -> Option<Range<u32>> {
        match self.strategy {
            Strategy::DummyRandom => Some(2..g.num_blocks),
            Strategy::HiddenVolumeBaseline => self.tail_start(g, key).map(|s| s..g.num_blocks),
        }
    }

    fn header(&self, g: FlashGeometry, clean: bool, seq: u64) -> Header {
        Header {
            geometry: g,
            strategy: self.strategy,
            clean,
            salt: self.salt,
            kdf_iterations: self.kdf.iterations,
            seq,
            map_slots: self.map_slots,
            public_capacity: self.public_capacity,
            hidden_capacity: self.hidden_capacity,
            body_pages: 0,
            body_len: 0,
            body_mac: [0; 16],
        }
    }

    fn derive(&self, password: &str, role: KeyRole) -> std::result::Result<VolumeKey, CryptoError> {
        derive_key(password, &self.salt, self.kdf, role)
    }
}

/// State that survives lock/unlock: the chip, layout, RNG, counters.
#[derive(Debug, Clone)]
pub(crate) struct Core {
    pub flash: FlashArray,
    pub config: FtlConfig,
    pub layout: Layout,
    pub sb_block: u32,
    pub sb_seq: u64,
    pub rng: SimRng,
    pub counters: Counters,
    pub events: events::EventLog,
    pub clock: u64,
    pub mode: ModeKind,
    /// Superblock and every map-slot block this instance has seen, kept
    /// out of wear statistics.
    pub metadata_blocks: BTreeSet<u32>,
    /// Where the baseline hidden region begins, when known from format.
    /// Simulator ground truth for collision accounting only.
    pub tail_start: Option<u32>,
    pub last_load: f64,
}

impl Core {
    fn geometry(&self) -> FlashGeometry {
        *self.flash.geometry()
    }

    fn floor(&self) -> usize {
        2 * self.geometry().pages_per_block as usize
    }

    fn event(&mut self, op: EventOp, lba: Option<u32>, target: Option<EventTarget>, class: EventClass) {
        self.events.push(self.clock, op, self.mode, lba, target, class);
    }

    fn program(&mut self, addr: PhysPageAddr, data: &[u8], oob: &[u8], class: EventClass, lba: Option<u32>) -> Result<()> {
        self.flash.program_page(addr, data, oob)?;
        let c = &mut self.counters;
        match class {
            EventClass::PublicData | EventClass::HiddenData => c.data_pages += 1,
            EventClass::Dummy => c.dummy_pages += 1,
            EventClass::Relocation => c.relocation_pages += 1,
            EventClass::FormatFill => c.format_pages += 1,
            _ => c.metadata_pages += 1,
        }
        self.event(EventOp::Program, lba, Some(EventTarget::Page(addr)), class);
        Ok(())
    }

    fn erase(&mut self, block: u32, class: EventClass) -> Result<()> {
        self.flash.erase_block(block)?;
        if class == EventClass::Gc {
            self.counters.gc_erases += 1;
        }
        self.event(EventOp::Erase, None, Some(EventTarget::Block(block)), class);
        Ok(())
    }

    /// Writes the next superblock generation to the alternate block.
    fn write_superblock(&mut self, clean: bool, body: Option<(&VolumeKey, &[u8])>) -> Result<()> {
        let target = superblock::other_block(self.sb_block);
        let seq = self.sb_seq + 1;
        let header = self.layout.header(self.geometry(), clean, seq);
        let g = self.geometry();
        let erases = g.block_pages(target).any(|idx| self.flash.state_at(idx) == PageState::Programmed);
        let pages = superblock::write(&mut self.flash, target, header, body)?;
        self.counters.metadata_pages += pages as u64;
        if erases {
            self.event(EventOp::Erase, None, Some(EventTarget::Block(target)), EventClass::Superblock);
        }
        for p in 0..pages {
            self.event(
                EventOp::Program,
                None,
                Some(EventTarget::Page(PhysPageAddr::new(target, p))),
                EventClass::Superblock,
            );
        }
        self.sb_block = target;
        self.sb_seq = seq;
        Ok(())
    }

    fn wear_stats(&self) -> WearStats {
        let counts: Vec<u32> = self
            .flash
            .wear()
            .iter()
            .enumerate()
            .filter(|(b, _)| !self.metadata_blocks.contains(&(*b as u32)))
            .map(|(_, &w)| w)
            .collect();
        WearStats::from_counts(&counts)
    }

    fn load_volume(&self, key: VolumeKey, label: MapLabel, range: Range<u32>, capacity: u32) -> Result<Volume> {
        let slots =
            LocationSequence::new(&key, label, self.layout.map_slots, range).map_err(|_| FtlError::NoMatch)?;
        let loaded = volume::load(&self.flash, &key, &slots, capacity).ok_or(FtlError::NoMatch)?;
        Ok(Volume {
            key,
            label,
            map: loaded.map,
            commit_version: loaded.commit_version,
            next_slot: (loaded.slot_index + 1) % self.layout.map_slots,
            next_version: loaded.next_version,
            dirty: false,
            slots,
        })
    }

    /// Derives keys and loads the committed maps. Reads only.
    fn load_volumes(&self, passwords: &[&str]) -> Result<(Volume, Option<(Volume, Option<u32>)>)> {
        if passwords.is_empty() || passwords.len() > 2 {
            return Err(FtlError::NoMatch);
        }
        let g = self.geometry();
        let decoy = self.layout.derive(passwords[0], KeyRole::Decoy).map_err(|_| FtlError::NoMatch)?;
        let public =
            self.load_volume(decoy, MapLabel::PublicMap, self.layout.public_range(&g), self.layout.public_capacity)?;
        let hidden = match passwords.get(1) {
            None => None,
            Some(pw) => {
                let key = self.layout.derive(pw, KeyRole::True).map_err(|_| FtlError::NoMatch)?;
                let range = self.layout.hidden_range(&g, &key).ok_or(FtlError::NoMatch)?;
                let tail = (self.layout.strategy == Strategy::HiddenVolumeBaseline).then_some(range.start);
                let vol = self.load_volume(key, MapLabel::HiddenMap, range, self.layout.hidden_capacity)?;
                Some((vol, tail))
            }
        };
        Ok((public, hidden))
    }
}

/// Volatile state of one unlocked session.
#[derive(Debug, Clone)]
pub(crate) struct Session {
    pub public: Volume,
    pub hidden: Option<Volume>,
    pub pages: PageTable,
    pub idle_ticks: u64,
    /// Baseline sequential-fill cursors: (block, next page).
    pub cursors: [Option<(u32, u32)>; 2],
    /// Baseline hidden region start, known in hidden mode.
    pub tail_start: Option<u32>,
    pub compacting: bool,
}

impl Session {
    pub fn mode(&self) -> ModeKind {
        if self.hidden.is_some() {
            ModeKind::Hidden
        } else {
            ModeKind::Public
        }
    }

    pub fn vol(&self, w: Which) -> &Volume {
        match w {
            Which::Public => &self.public,
            Which::Hidden => self.hidden.as_ref().expect("hidden volume in hidden mode"),
        }
    }

    pub fn vol_mut(&mut self, w: Which) -> &mut Volume {
        match w {
            Which::Public => &mut self.public,
            Which::Hidden => self.hidden.as_mut().expect("hidden volume in hidden mode"),
        }
    }

    fn volumes(&self) -> impl Iterator<Item = &Volume> {
        std::iter::once(&self.public).chain(self.hidden.as_ref())
    }

    /// Committed bitmap body. The baseline keeps hidden pages out of it.
    fn committed_body(&self, strategy: Strategy) -> Vec<u8> {
        let ppb = self.pages.geometry().pages_per_block as usize;
        let hidden_slots = self.hidden.as_ref().map(|v| v.slots.blocks().to_vec()).unwrap_or_default();
        let (mut used, pending) = self.pages.bitmaps(|idx, owner| match strategy {
            Strategy::DummyRandom => true,
            Strategy::HiddenVolumeBaseline => match owner {
                Owner::Hidden(_) => false,
                Owner::Slot => !hidden_slots.contains(&((idx / ppb) as u32)),
                _ => true,
            },
        });
        used.extend(pending);
        used
    }
}

/// A simulated device running the deniable FTL.
#[derive(Debug, Clone)]
pub struct Ftl {
    core: Core,
    session: Option<Session>,
}

fn check_geometry(config: &FtlConfig, g: &FlashGeometry) -> Result<(u32, u32)> {
    if g.num_blocks < 4 {
        return Err(FtlError::GeometryTooSmall("need at least 4 blocks"));
    }
    if (g.page_size as usize) < SB_HEADER_LEN {
        return Err(FtlError::GeometryTooSmall("page too small for the superblock header"));
    }
    if (g.oob_size as usize) < TAG_MIN_LEN {
        return Err(FtlError::GeometryTooSmall("OOB too small for page tags"));
    }
    if 1 + superblock::body_pages(g) > g.pages_per_block as usize {
        return Err(FtlError::GeometryTooSmall("bitmap does not fit in a superblock block"));
    }
    let usable = (g.num_blocks as usize - SUPERBLOCK_BLOCKS.len()) * g.pages_per_block as usize;
    let public = (config.public_fraction * usable as f64).floor() as u32;
    let hidden = (config.hidden_fraction * usable as f64).floor() as u32;
    if public == 0 || hidden == 0 {
        return Err(FtlError::GeometryTooSmall("volume capacity rounds to zero"));
    }
    for cap in [public, hidden] {
        if chain_pages(cap, g.page_size) > g.pages_per_block as usize {
            return Err(FtlError::GeometryTooSmall("map does not fit in one slot block"));
        }
    }
    if 2 * config.map_slots as usize * (g.pages_per_block as usize) + 4 * g.pages_per_block as usize > usable {
        return Err(FtlError::GeometryTooSmall("map slots leave no room for data"));
    }
    Ok((public, hidden))
}

impl Ftl {
    /// Fills the device with random bytes, commits empty maps under both
    /// keys and leaves the instance locked.
    pub fn format(mut flash: FlashArray, decoy_password: &str, true_password: &str, config: FtlConfig) -> Result<Ftl> {
        config.validate()?;
        let g = *flash.geometry();
        if g != config.geometry {
            return Err(FtlError::GeometryMismatch);
        }
        if decoy_password.is_empty() || true_password.is_empty() {
            return Err(CryptoError::EmptyPassword.into());
        }
        if decoy_password == true_password {
            return Err(FtlError::SamePassword);
        }
        let (public_capacity, hidden_capacity) = check_geometry(&config, &g)?;
        let mut rng = SimRng::new(config.master_seed);

        // Re-salt until the two slot sets are disjoint.
        let mut chosen = None;
        for _ in 0..64 {
            let mut salt = [0u8; superblock::SALT_LEN];
            rand::RngCore::fill_bytes(&mut rng.salt, &mut salt);
            let layout = Layout {
                strategy: config.strategy,
                map_slots: config.map_slots,
                public_capacity,
                hidden_capacity,
                kdf: config.kdf,
                salt,
            };
            let decoy = layout.derive(decoy_password, KeyRole::Decoy)?;
            let truek = layout.derive(true_password, KeyRole::True)?;
            let Some(hidden_range) = layout.hidden_range(&g, &truek) else {
                return Err(FtlError::GeometryTooSmall("no room for the hidden region"));
            };
            let tail = (layout.strategy == Strategy::HiddenVolumeBaseline).then_some(hidden_range.start);
            let ps = LocationSequence::new(&decoy, MapLabel::PublicMap, layout.map_slots, layout.public_range(&g))
                .map_err(|_| FtlError::GeometryTooSmall("too few blocks for map slots"))?;
            let hs = LocationSequence::new(&truek, MapLabel::HiddenMap, layout.map_slots, hidden_range)
                .map_err(|_| FtlError::GeometryTooSmall("too few blocks for map slots"))?;
            if ps.blocks().iter().all(|b| !hs.contains_block(*b)) {
                chosen = Some((layout, decoy, truek, ps, hs, tail));
                break;
            }
        }
        let (layout, decoy, truek, pslots, hslots, tail) =
            chosen.ok_or(FtlError::GeometryTooSmall("cannot separate map slots"))?;

        for b in 0..g.num_blocks {
            if g.block_pages(b).any(|idx| flash.state_at(idx) == PageState::Programmed) {
                flash.erase_block(b)?;
            }
        }

        let mut metadata_blocks: BTreeSet<u32> = SUPERBLOCK_BLOCKS.iter().copied().collect();
        metadata_blocks.extend(pslots.blocks());
        metadata_blocks.extend(hslots.blocks());
        let mut core = Core {
            flash,
            layout,
            sb_block: SUPERBLOCK_BLOCKS[1],
            sb_seq: 0,
            rng,
            counters: Counters::default(),
            events: events::EventLog::new(config.event_log),
            clock: 0,
            mode: ModeKind::Locked,
            metadata_blocks,
            tail_start: tail,
            last_load: 0.0,
            config,
        };

        let mut data = vec![0u8; g.page_size as usize];
        let mut oob = vec![0u8; g.oob_size as usize];
        let mut pages = PageTable::new(g, &SUPERBLOCK_BLOCKS);
        for b in 2..g.num_blocks {
            for p in 0..g.pages_per_block {
                rand::RngCore::fill_bytes(&mut core.rng.format_fill, &mut data);
                rand::RngCore::fill_bytes(&mut core.rng.format_fill, &mut oob);
                let addr = PhysPageAddr::new(b, p);
                core.program(addr, &data, &oob, EventClass::FormatFill, None)?;
                pages.set(g.index_of(addr), PageStatus::Pending, Owner::Free);
            }
        }

        let fresh = |key: VolumeKey, label, slots, capacity| Volume {
            key,
            label,
            slots,
            map: MappingTable::new(capacity),
            commit_version: 0,
            next_slot: 0,
            next_version: 1,
            dirty: true,
        };
        let mut session = Session {
            public: fresh(decoy, MapLabel::PublicMap, pslots, public_capacity),
            hidden: Some(fresh(truek, MapLabel::HiddenMap, hslots, hidden_capacity)),
            pages,
            idle_ticks: 0,
            cursors: [None, None],
            tail_start: tail,
            compacting: false,
        };
        session.attach_slots();
        session.commit_volume(&mut core, Which::Public)?;
        session.commit_volume(&mut core, Which::Hidden)?;
        let body = session.committed_body(core.layout.strategy);
        core.last_load = session.pages.load_factor();
        core.write_superblock(true, Some((&session.public.key, &body)))?;
        Ok(Ftl { core, session: None })
    }

    /// Opens an already formatted device, locked. Layout parameters come
    /// from the superblock; runtime knobs from `config`.
    pub fn open(flash: FlashArray, mut config: FtlConfig) -> Result<Ftl> {
        let (block, header) = superblock::read_newest(&flash).ok_or(FtlError::NoValidSuperblock)?;
        if header.geometry != config.geometry {
            return Err(FtlError::GeometryMismatch);
        }
        config.strategy = header.strategy;
        config.map_slots = header.map_slots;
        config.kdf = KdfParams { iterations: header.kdf_iterations };
        config.validate()?;
        let layout = Layout {
            strategy: header.strategy,
            map_slots: header.map_slots,
            public_capacity: header.public_capacity,
            hidden_capacity: header.hidden_capacity,
            kdf: config.kdf,
            salt: header.salt,
        };
        Ok(Ftl {
            core: Core {
                flash,
                layout,
                sb_block: block,
                sb_seq: header.seq,
                rng: SimRng::new(config.master_seed),
                counters: Counters::default(),
                events: events::EventLog::new(config.event_log),
                clock: 0,
                mode: ModeKind::Locked,
                metadata_blocks: SUPERBLOCK_BLOCKS.iter().copied().collect(),
                tail_start: None,
                last_load: 0.0,
                config,
            },
            session: None,
        })
    }

    /// One password unlocks public mode; (decoy, true) unlocks hidden mode.
    /// A failed attempt writes nothing and always reports [`FtlError::NoMatch`].
    pub fn unlock(&mut self, passwords: &[&str]) -> Result<ModeKind> {
        if self.session.is_some() {
            return Err(FtlError::AlreadyUnlocked);
        }
        let (block, header) = superblock::read_newest(&self.core.flash).ok_or(FtlError::NoValidSuperblock)?;
        let (public, hidden) = self.core.load_volumes(passwords)?;
        if !header.clean {
            return Err(FtlError::NeedsRecovery);
        }
        let body = superblock::read_body(&self.core.flash, block, &header, &public.key)
            .ok_or(FtlError::Corrupt("superblock body"))?;
        let (hidden, tail) = match hidden {
            Some((v, t)) => (Some(v), t),
            None => (None, None),
        };
        let (mut session, dropped, evict) = Session::from_body(&self.core, &body, public, hidden, tail);
        self.core.counters.hidden_entries_dropped += dropped;
        self.core.metadata_blocks.extend(session.volumes().flat_map(|v| v.slots.blocks().to_vec()));
        self.core.write_superblock(false, None)?;
        self.core.mode = session.mode();
        self.core.event(EventOp::Unlock, None, None, EventClass::None);
        session.evict_from_slots(&mut self.core, evict)?;
        let mode = session.mode();
        self.session = Some(session);
        Ok(mode)
    }

    pub fn mode(&self) -> ModeKind {
        self.session.as_ref().map_or(ModeKind::Locked, Session::mode)
    }

    fn session_mut(&mut self) -> Result<(&mut Session, &mut Core)> {
        match self.session.as_mut() {
            Some(s) => Ok((s, &mut self.core)),
            None => Err(FtlError::WrongMode),
        }
    }

    /// Public-mode sector write.
    pub fn write_sector(&mut self, lba: u32, data: &[u8]) -> Result<()> {
        let (s, core) = self.session_mut()?;
        if s.mode() != ModeKind::Public {
            return Err(FtlError::WrongMode);
        }
        s.write(core, Which::Public, lba, data)
    }

    /// Hidden-mode sector write.
    pub fn hidden_write_sector(&mut self, lba: u32, data: &[u8]) -> Result<()> {
        let (s, core) = self.session_mut()?;
        if s.mode() != ModeKind::Hidden {
            return Err(FtlError::WrongMode);
        }
        s.write(core, Which::Hidden, lba, data)
    }

    /// Reads from the current mode's volume; unmapped sectors read as zeros.
    pub fn read_sector(&self, lba: u32) -> Result<Vec<u8>> {
        let s = self.session.as_ref().ok_or(FtlError::WrongMode)?;
        let w = if s.hidden.is_some() { Which::Hidden } else { Which::Public };
        s.read(&self.core, w, lba)
    }

    pub fn dummy_write(&mut self, n: u32) -> Result<()> {
        let (s, core) = self.session_mut()?;
        s.dummy_write(core, n)
    }

    /// Advances logical time by one tick.
    pub fn tick(&mut self) -> Result<()> {
        let (s, core) = self.session_mut()?;
        s.tick(core)
    }

    pub fn gc_public(&mut self) -> Result<ReclaimReport> {
        let (s, core) = self.session_mut()?;
        if s.mode() != ModeKind::Public {
            return Err(FtlError::WrongMode);
        }
        s.gc_explicit(core)
    }

    /// Hidden-mode housekeeping; does nothing unless `idle`.
    pub fn gc_hidden(&mut self, idle: bool) -> Result<ReclaimReport> {
        let (s, core) = self.session_mut()?;
        if s.mode() != ModeKind::Hidden {
            return Err(FtlError::WrongMode);
        }
        s.gc_hidden(core, idle)
    }

    /// Commits the session's maps and bitmap, then locks.
    pub fn commit_shutdown(&mut self) -> Result<()> {
        let (s, core) = self.session_mut()?;
        s.shutdown(core)?;
        core.last_load = s.pages.load_factor();
        core.mode = ModeKind::Locked;
        self.session = None;
        Ok(())
    }

    /// Drops all volatile state without committing.
    pub fn crash(&mut self) {
        if let Some(s) = self.session.take() {
            self.core.last_load = s.pages.load_factor();
        }
        self.core.event(EventOp::Crash, None, None, EventClass::None);
        self.core.mode = ModeKind::Locked;
    }

    /// Rebuilds state by scanning the flash after a crash. One password
    /// recovers public state only; (decoy, true) recovers both volumes.
    pub fn recover(&mut self, passwords: &[&str]) -> Result<ModeKind> {
        if self.session.is_some() {
            return Err(FtlError::AlreadyUnlocked);
        }
        let session = recovery::recover(&mut self.core, passwords)?;
        let mode = session.mode();
        self.session = Some(session);
        Ok(mode)
    }

    pub fn metrics(&self) -> MetricsReport {
        let load = self.load_factor().unwrap_or(self.core.last_load);
        let fc = self.core.flash.counters();
        MetricsReport::new(self.core.counters.clone(), load, self.core.wear_stats(), fc.programs, fc.erases)
    }

    pub fn counters(&self) -> &Counters {
        &self.core.counters
    }

    /// Restores counters persisted from an earlier process.
    pub fn set_counters(&mut self, counters: Counters) {
        self.core.counters = counters;
    }

    /// Load factor reported while locked; restored alongside the counters.
    pub fn set_locked_load(&mut self, load: f64) {
        self.core.last_load = load;
    }

    pub fn flash(&self) -> &FlashArray {
        &self.core.flash
    }

    pub fn into_flash(self) -> FlashArray {
        self.core.flash
    }

    pub fn snapshot(&self) -> FlashSnapshot {
        self.core.flash.take_snapshot()
    }

    pub fn config(&self) -> &FtlConfig {
        &self.core.config
    }

    pub fn strategy(&self) -> Strategy {
        self.core.layout.strategy
    }

    pub fn public_capacity(&self) -> u32 {
        self.core.layout.public_capacity
    }

    pub fn hidden_capacity(&self) -> u32 {
        self.core.layout.hidden_capacity
    }

    pub fn sector_size(&self) -> usize {
        self.core.flash.geometry().page_size as usize
    }

    pub fn public_map(&self) -> Option<&MappingTable> {
        self.session.as_ref().map(|s| &s.public.map)
    }

    pub fn hidden_map(&self) -> Option<&MappingTable> {
        self.session.as_ref().and_then(|s| s.hidden.as_ref()).map(|v| &v.map)
    }

    /// Map-slot blocks of the volumes the session holds.
    pub fn slot_blocks(&self) -> Option<(Vec<u32>, Option<Vec<u32>>)> {
        self.session
            .as_ref()
            .map(|s| (s.public.slots.blocks().to_vec(), s.hidden.as_ref().map(|v| v.slots.blocks().to_vec())))
    }

    pub fn load_factor(&self) -> Option<f64> {
        self.session.as_ref().map(|s| s.pages.load_factor())
    }

    /// Erased pages available to placement.
    pub fn erased_free_pages(&self) -> Option<usize> {
        self.session.as_ref().map(|s| s.pages.pool().len())
    }

    /// Usable pages not marked used in the bitmap.
    pub fn free_pages(&self) -> Option<usize> {
        self.session.as_ref().map(|s| s.pages.usable() - s.pages.used())
    }

    pub fn used_pages(&self) -> Option<usize> {
        self.session.as_ref().map(|s| s.pages.used())
    }

    /// Used pages the session knows to be dummies.
    pub fn dummy_ledger_len(&self) -> Option<usize> {
        self.session.as_ref().map(|s| {
            (0..s.pages.geometry().num_blocks).map(|b| s.pages.block(b).dummy as usize).sum()
        })
    }

    /// Used pages nobody maps, as the session sees them.
    pub fn candidate_pages(&self) -> Option<usize> {
        self.session.as_ref().map(|s| s.pages.candidate_pages())
    }

    pub fn page_status(&self, addr: PhysPageAddr) -> Option<(PageStatus, Owner)> {
        let s = self.session.as_ref()?;
        let idx = self.core.flash.geometry().index_of(addr);
        (!s.pages.is_superblock(addr.block)).then(|| (s.pages.status(idx), s.pages.owner(idx)))
    }

    pub fn events(&self) -> &[Event] {
        self.core.events.events()
    }

    pub fn take_events(&mut self) -> Vec<Event> {
        self.core.events.drain()
    }

    pub fn set_event_log(&mut self, on: bool) {
        self.core.events.set_enabled(on);
    }

    pub fn clock(&self) -> u64 {
        self.core.clock
    }

    /// Block holding the newest superblock and its sequence number.
    pub fn superblock_position(&self) -> (u32, u64) {
        (self.core.sb_block, self.core.sb_seq)
    }

    /// Word position of the placement stream, for replaying placements.
    pub fn placement_word_pos(&self) -> u128 {
        self.core.rng.placement.get_word_pos()
    }

    /// Baseline hidden region start as known from format.
    pub fn tail_start(&self) -> Option<u32> {
        self.core.tail_start
    }

    /// Cross-checks the session's bookkeeping against the maps and the chip.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        match &self.session {
            None => Ok(()),
            Some(s) => s.check(&self.core),
        }
    }
}
