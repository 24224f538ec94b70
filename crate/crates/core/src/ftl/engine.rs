//! Session-side write, read, dummy, GC and commit paths.

use std::cmp::Reverse;

use rand::Rng;
use rand_distr::{Distribution, Geometric};

use crate::crypto::{
    decrypt_page, encrypt_page, random_page, tag_decode, tag_encode, PageTweak, TagClass, TagFields,
};
use crate::nand::{NandError, PageState, PhysPageAddr};

use super::pages::PageTable;
use super::volume::Volume;
use super::{
    Core, EventClass, EventOp, FtlError, IdleDummies, MapEntry, ModeKind, Owner, PageStatus, ReclaimReport, Result,
    Session, Strategy, Which, SUPERBLOCK_BLOCKS,
};

fn bit(bits: &[u8], idx: usize) -> bool {
    bits[idx / 8] >> (idx % 8) & 1 == 1
}

impl Session {
    /// Rebuilds the page table from a committed bitmap and the loaded maps.
    /// Returns the session, the number of hidden entries that no longer
    /// point at their data, and public sectors found inside slot blocks.
    pub(super) fn from_body(
        core: &Core,
        body: &[u8],
        public: Volume,
        hidden: Option<Volume>,
        tail_start: Option<u32>,
    ) -> (Session, u64, Vec<u32>) {
        let g = core.geometry();
        let flash = &core.flash;
        let mut pages = PageTable::new(g, &SUPERBLOCK_BLOCKS);
        for b in 0..g.num_blocks {
            if pages.is_superblock(b) {
                continue;
            }
            if flash.is_bad(b) {
                pages.set_excluded(b, true);
            }
            for idx in g.block_pages(b) {
                if bit(body, idx) {
                    pages.set(idx, PageStatus::Used, Owner::Unknown);
                } else if flash.state_at(idx) == PageState::Programmed {
                    pages.set(idx, PageStatus::Pending, Owner::Free);
                }
            }
        }
        let mut s = Session {
            public,
            hidden,
            pages,
            idle_ticks: 0,
            cursors: [None, None],
            tail_start,
            compacting: false,
        };
        let entries: Vec<_> = s.public.map.iter().collect();
        for (lba, e) in entries {
            s.pages.set(g.index_of(e.ppa), PageStatus::Used, Owner::Public(lba));
        }
        let evict = s.attach_slots();
        let mut dropped = 0;
        if let Some(h) = s.hidden.as_mut() {
            let entries: Vec<_> = h.map.iter().collect();
            for (lba, e) in entries {
                let idx = g.index_of(e.ppa);
                let view = flash.read_page(e.ppa).expect("mapped address in range");
                let intact = !s.pages.is_excluded(e.ppa.block)
                    && matches!(
                        (s.pages.status(idx), s.pages.owner(idx)),
                        (PageStatus::Used, Owner::Unknown) | (PageStatus::Pending, _)
                    )
                    && view.state == PageState::Programmed
                    && tag_decode(&h.key, view.oob)
                        == Some(TagFields { lba: lba as u64, version: e.version as u64, class: TagClass::HiddenData });
                if intact {
                    s.pages.set(idx, PageStatus::Used, Owner::Hidden(lba));
                } else {
                    h.map.remove(lba);
                    h.dirty = true;
                    dropped += 1;
                }
            }
            for idx in 0..g.total_pages() {
                if s.pages.status(idx) == PageStatus::Used && s.pages.owner(idx) == Owner::Unknown {
                    s.pages.set_owner(idx, Owner::Dummy);
                }
            }
        }
        (s, dropped, evict)
    }

    /// Pulls the held volumes' slot blocks out of placement and marks them
    /// used. A slot block still holding public sectors stays detached until
    /// they move out; those sectors are returned.
    pub(super) fn attach_slots(&mut self) -> Vec<u32> {
        let blocks: Vec<u32> = self.volumes().flat_map(|v| v.slots.blocks().to_vec()).collect();
        let mut evict = Vec::new();
        for b in blocks {
            self.pages.set_excluded(b, true);
            let public: Vec<u32> = self
                .pages
                .pages_of(b)
                .filter_map(|idx| match self.pages.owner(idx) {
                    Owner::Public(lba) => Some(lba),
                    _ => None,
                })
                .collect();
            if !public.is_empty() {
                evict.extend(public);
                continue;
            }
            for idx in self.pages.pages_of(b) {
                if self.pages.owner(idx) != Owner::Slot {
                    self.pages.set(idx, PageStatus::Used, Owner::Slot);
                }
            }
        }
        evict
    }

    /// Moves public sectors out of slot blocks. If space runs out the
    /// affected slots stay detached and commits skip them.
    pub(super) fn evict_from_slots(&mut self, core: &mut Core, evict: Vec<u32>) -> Result<()> {
        if evict.is_empty() {
            return Ok(());
        }
        for lba in evict {
            match self.relocate(core, Which::Public, lba) {
                Ok(()) => {}
                Err(FtlError::DeviceFull) => break,
                Err(e) => return Err(e),
            }
        }
        self.attach_slots();
        Ok(())
    }

    fn slot_attached(&self, b: u32) -> bool {
        self.pages.block(b).slot == self.pages.geometry().pages_per_block
    }

    fn low_watermark(&self, core: &Core) -> usize {
        (core.config.gc_free_low * self.pages.usable() as f64).ceil() as usize
    }

    fn place_random(&mut self, core: &mut Core) -> Result<PhysPageAddr> {
        let n = self.pages.pool().len();
        if n == 0 {
            return Err(FtlError::DeviceFull);
        }
        let k = core.rng.placement.gen_range(0..n);
        Ok(self.pages.geometry().addr_of(self.pages.pool().select(k)))
    }

    fn place_for(&mut self, core: &mut Core, w: Which) -> Result<PhysPageAddr> {
        match core.layout.strategy {
            Strategy::DummyRandom => self.place_random(core),
            Strategy::HiddenVolumeBaseline => self.baseline_place(core, w),
        }
    }

    /// Encrypts, tags and programs one sector of volume `w`.
    pub(super) fn store(&mut self, core: &mut Core, w: Which, lba: u32, plaintext: &[u8], class: EventClass) -> Result<()> {
        let addr = self.place_for(core, w)?;
        self.store_at(core, w, lba, plaintext, class, addr)
    }

    pub(super) fn store_at(
        &mut self,
        core: &mut Core,
        w: Which,
        lba: u32,
        plaintext: &[u8],
        class: EventClass,
        addr: PhysPageAddr,
    ) -> Result<()> {
        let g = core.geometry();
        let vol = self.vol_mut(w);
        let version = vol.bump_version()?;
        let tweak = PageTweak::new(addr, version as u64);
        let data = encrypt_page(&vol.key, tweak, plaintext, g.page_size as usize)?;
        let fields = TagFields { lba: lba as u64, version: version as u64, class: vol.data_class() };
        let oob = tag_encode(&vol.key, fields, g.oob_size as usize)?;
        core.program(addr, &data, &oob, class, Some(lba))?;
        let old = self.vol_mut(w).map.set(lba, MapEntry { ppa: addr, version });
        self.pages.mark_used(addr, w.owner(lba));
        if let Some(old) = old {
            // A superseded hidden page stays used so the committed bitmap
            // shows nothing public mode cannot explain.
            if w == Which::Hidden && class != EventClass::Relocation && core.layout.strategy == Strategy::DummyRandom {
                self.pages.set(g.index_of(old.ppa), PageStatus::Used, Owner::Dummy);
            } else {
                self.pages.invalidate(old.ppa);
            }
        }
        Ok(())
    }

    pub(super) fn relocate(&mut self, core: &mut Core, w: Which, lba: u32) -> Result<()> {
        let ps = core.geometry().page_size as usize;
        let vol = self.vol(w);
        let e = vol.map.get(lba).ok_or(FtlError::Corrupt("relocating an unmapped sector"))?;
        let view = core.flash.read_page(e.ppa)?;
        let plain = decrypt_page(&vol.key, PageTweak::new(e.ppa, e.version as u64), view.data, ps)?;
        self.store(core, w, lba, &plain, EventClass::Relocation)
    }

    pub(super) fn read(&self, core: &Core, w: Which, lba: u32) -> Result<Vec<u8>> {
        let vol = self.vol(w);
        let capacity = vol.map.capacity();
        if lba >= capacity {
            return Err(FtlError::LbaOutOfRange { lba, capacity });
        }
        let ps = core.geometry().page_size as usize;
        match vol.map.get(lba) {
            None => Ok(vec![0; ps]),
            Some(e) => {
                let view = core.flash.read_page(e.ppa)?;
                Ok(decrypt_page(&vol.key, PageTweak::new(e.ppa, e.version as u64), view.data, ps)?)
            }
        }
    }

    pub(super) fn write(&mut self, core: &mut Core, w: Which, lba: u32, data: &[u8]) -> Result<()> {
        let capacity = self.vol(w).map.capacity();
        if lba >= capacity {
            return Err(FtlError::LbaOutOfRange { lba, capacity });
        }
        let ps = core.geometry().page_size as usize;
        if data.len() != ps {
            return Err(NandError::LengthMismatch { expected: ps, actual: data.len() }.into());
        }
        let class = match w {
            Which::Public => EventClass::PublicData,
            Which::Hidden => EventClass::HiddenData,
        };
        if core.layout.strategy == Strategy::DummyRandom {
            self.ensure_space(core)?;
        }
        self.store(core, w, lba, data, class)?;
        match w {
            Which::Public => {
                core.counters.public_writes += 1;
                self.idle_ticks = 0;
                if core.layout.strategy == Strategy::DummyRandom {
                    let k = self.sample_dummies(core);
                    self.burst(core, k, false)?;
                }
            }
            Which::Hidden => core.counters.hidden_writes += 1,
        }
        Ok(())
    }

    fn sample_dummies(&self, core: &mut Core) -> u64 {
        let dist = Geometric::new(core.config.dummy_p()).expect("p in (0, 1]");
        dist.sample(&mut core.rng.dummy_count)
    }

    fn ensure_space(&mut self, core: &mut Core) -> Result<()> {
        if core.layout.strategy == Strategy::DummyRandom && self.pages.pool().len() < self.low_watermark(core) {
            self.gc_auto(core)?;
        }
        if self.pages.pool().len() < core.floor() {
            return Err(FtlError::DeviceFull);
        }
        Ok(())
    }

    fn dummy_one(&mut self, core: &mut Core, idle: bool) -> Result<()> {
        let addr = self.place_random(core)?;
        self.dummy_at(core, addr, idle)
    }

    pub(super) fn dummy_at(&mut self, core: &mut Core, addr: PhysPageAddr, idle: bool) -> Result<()> {
        let g = core.geometry();
        let data = random_page(&mut core.rng.dummy_content, g.page_size as usize);
        let oob = random_page(&mut core.rng.dummy_content, g.oob_size as usize);
        core.program(addr, &data, &oob, EventClass::Dummy, None)?;
        self.pages.mark_used(addr, Owner::Dummy);
        if idle {
            core.counters.idle_dummy_pages += 1;
        }
        Ok(())
    }

    /// Dummy burst that stops quietly at the free-page floor.
    fn burst(&mut self, core: &mut Core, n: u64, idle: bool) -> Result<()> {
        for i in 0..n {
            if self.pages.pool().len() < self.low_watermark(core) {
                self.gc_auto(core)?;
            }
            if self.pages.pool().len() <= core.floor() {
                core.counters.dummies_truncated += n - i;
                break;
            }
            self.dummy_one(core, idle)?;
        }
        Ok(())
    }

    pub(super) fn dummy_write(&mut self, core: &mut Core, n: u32) -> Result<()> {
        if core.layout.strategy != Strategy::DummyRandom {
            return Err(FtlError::Unsupported(core.layout.strategy.as_str()));
        }
        for _ in 0..n {
            self.ensure_space(core)?;
            self.dummy_one(core, false)?;
        }
        Ok(())
    }

    pub(super) fn tick(&mut self, core: &mut Core) -> Result<()> {
        core.clock += 1;
        let tau = core.config.idle_threshold;
        if core.layout.strategy != Strategy::DummyRandom || tau == 0 {
            return Ok(());
        }
        self.idle_ticks += 1;
        if self.idle_ticks >= tau {
            let n = match core.config.idle_dummies {
                IdleDummies::Fixed(n) => n as u64,
                IdleDummies::Geometric => self.sample_dummies(core),
            };
            self.burst(core, n, true)?;
            self.idle_ticks = 0;
        }
        Ok(())
    }

    /// Relocates every live page out of `b` and erases it.
    fn collect_block(&mut self, core: &mut Core, b: u32) -> Result<ReclaimReport> {
        self.pages.set_excluded(b, true);
        let live: Vec<(Which, u32)> = self
            .pages
            .pages_of(b)
            .filter_map(|idx| match self.pages.owner(idx) {
                Owner::Public(l) => Some((Which::Public, l)),
                Owner::Hidden(l) => Some((Which::Hidden, l)),
                _ => None,
            })
            .collect();
        for &(w, lba) in &live {
            if let Err(e) = self.relocate(core, w, lba) {
                self.pages.set_excluded(b, false);
                return Err(e);
            }
        }
        let c = *self.pages.block(b);
        debug_assert_eq!(c.live() + c.slot, 0);
        let ppb = self.pages.geometry().pages_per_block;
        if c.erased < ppb {
            core.erase(b, EventClass::Gc)?;
        }
        self.pages.erase_block(b);
        self.pages.set_excluded(b, core.flash.is_bad(b));
        Ok(ReclaimReport {
            blocks_erased: 1,
            pages_reclaimed: c.pending + c.candidates(),
            pages_relocated: live.len() as u32,
            ..Default::default()
        })
    }

    /// Blocks whose used pages are all attributable, most pending first.
    fn lazy_victim(&self, core: &Core) -> Option<u32> {
        let wear = core.flash.wear();
        (0..self.pages.geometry().num_blocks)
            .filter(|&b| {
                let c = self.pages.block(b);
                !self.pages.is_excluded(b) && c.pending > 0 && c.candidates() == 0
            })
            .min_by_key(|&b| (Reverse(self.pages.block(b).pending), wear[b as usize], b))
    }

    fn lazy_pass(&mut self, core: &mut Core, at_least_one: bool) -> Result<ReclaimReport> {
        let low = self.low_watermark(core);
        let mut report = ReclaimReport::default();
        let mut force = at_least_one;
        loop {
            if !force && self.pages.pool().len() >= low {
                break;
            }
            force = false;
            let Some(victim) = self.lazy_victim(core) else { break };
            report.absorb(self.collect_block(core, victim)?);
        }
        Ok(report)
    }

    /// Reclaims each block holding unattributed pages with probability
    /// `gc_reclaim_fraction`, so in expectation that fraction of the
    /// unattributed pages is freed, hidden ones included.
    fn high_load_pass(&mut self, core: &mut Core) -> Result<ReclaimReport> {
        let mut report = ReclaimReport {
            high_load_pass: true,
            candidate_pages: self.pages.candidate_pages() as u32,
            ..Default::default()
        };
        let q = core.config.gc_reclaim_fraction;
        let blocks: Vec<u32> = (0..self.pages.geometry().num_blocks)
            .filter(|&b| !self.pages.is_excluded(b) && self.pages.block(b).candidates() > 0)
            .collect();
        for b in blocks {
            if !core.rng.gc.gen_bool(q) {
                continue;
            }
            let c = *self.pages.block(b);
            let r = self.collect_block(core, b)?;
            report.absorb(r);
            report.candidates_reclaimed += c.candidates();
            report.hidden_risk_pages += c.unknown;
        }
        core.counters.hidden_risk_pages += report.hidden_risk_pages as u64;
        Ok(report)
    }

    /// Hidden-mode victim rule: most reclaimable pages first.
    fn hidden_victim(&self, core: &Core) -> Option<u32> {
        let wear = core.flash.wear();
        let score = |b: u32| {
            let c = self.pages.block(b);
            c.pending + c.candidates()
        };
        (0..self.pages.geometry().num_blocks)
            .filter(|&b| !self.pages.is_excluded(b) && score(b) > 0)
            .min_by_key(|&b| (Reverse(score(b)), wear[b as usize], b))
    }

    fn gc_auto(&mut self, core: &mut Core) -> Result<ReclaimReport> {
        core.counters.gc_public_runs += 1;
        let mut report = self.lazy_pass(core, false)?;
        let low = self.low_watermark(core);
        if self.pages.pool().len() < low {
            if self.mode() == ModeKind::Hidden {
                while self.pages.pool().len() < low {
                    let Some(v) = self.hidden_victim(core) else { break };
                    report.absorb(self.collect_block(core, v)?);
                }
            } else if self.pages.load_factor() >= core.config.load_high {
                report.absorb(self.high_load_pass(core)?);
            }
        }
        Ok(report)
    }

    pub(super) fn gc_explicit(&mut self, core: &mut Core) -> Result<ReclaimReport> {
        if core.layout.strategy == Strategy::HiddenVolumeBaseline {
            core.counters.gc_public_runs += 1;
            return self.baseline_compact(core, Which::Public);
        }
        core.counters.gc_public_runs += 1;
        let mut report = self.lazy_pass(core, true)?;
        if self.pages.load_factor() >= core.config.load_high {
            report.absorb(self.high_load_pass(core)?);
        }
        Ok(report)
    }

    pub(super) fn gc_hidden(&mut self, core: &mut Core, idle: bool) -> Result<ReclaimReport> {
        if !idle {
            return Ok(ReclaimReport::default());
        }
        core.counters.gc_hidden_runs += 1;
        if core.layout.strategy == Strategy::HiddenVolumeBaseline {
            return self.baseline_compact(core, Which::Hidden);
        }
        let headroom = 2 * self.low_watermark(core);
        let mut report = ReclaimReport::default();
        while report.blocks_erased < core.config.gc_hidden_max_blocks {
            if self.pages.load_factor() <= core.config.gc_hidden_target_load && self.pages.pool().len() >= headroom {
                break;
            }
            let Some(victim) = self.hidden_victim(core) else { break };
            report.absorb(self.collect_block(core, victim)?);
        }
        Ok(report)
    }

    /// Writes volume `w`'s map to its next slot block, falling through to
    /// later slots when a block has worn out.
    pub(super) fn commit_volume(&mut self, core: &mut Core, w: Which) -> Result<()> {
        let g = core.geometry();
        let slots = core.layout.map_slots;
        for _ in 0..slots {
            let vol = self.vol_mut(w);
            let slot = vol.next_slot;
            vol.next_slot = (slot + 1) % slots;
            let block = vol.slots.blocks()[slot as usize];
            let version = vol.commit_version + 1;
            if core.flash.is_bad(block) || !self.slot_attached(block) {
                continue;
            }
            let chain = self.vol(w).chain(&g, block, version)?;
            match core.erase(block, EventClass::MapCommit) {
                Err(FtlError::Nand(NandError::BadBlock(_))) => continue,
                other => other?,
            }
            if core.flash.is_bad(block) {
                continue;
            }
            for (j, (addr, data, oob)) in chain.iter().enumerate() {
                core.program(*addr, data, oob, EventClass::MapCommit, Some(j as u32))?;
            }
            for p in chain.len() as u32..g.pages_per_block {
                let data = random_page(&mut core.rng.dummy_content, g.page_size as usize);
                let oob = random_page(&mut core.rng.dummy_content, g.oob_size as usize);
                core.program(PhysPageAddr::new(block, p), &data, &oob, EventClass::SlotFill, None)?;
            }
            let vol = self.vol_mut(w);
            vol.commit_version = version;
            vol.dirty = false;
            return Ok(());
        }
        Err(FtlError::CommitFailed)
    }

    pub(super) fn shutdown(&mut self, core: &mut Core) -> Result<()> {
        let always = core.layout.strategy == Strategy::DummyRandom;
        if always || self.public.dirty {
            self.commit_volume(core, Which::Public)?;
        }
        if self.hidden.as_ref().is_some_and(|h| always || h.dirty) {
            self.commit_volume(core, Which::Hidden)?;
        }
        let body = self.committed_body(core.layout.strategy);
        core.write_superblock(true, Some((&self.public.key, &body)))?;
        core.event(EventOp::Shutdown, None, None, EventClass::None);
        Ok(())
    }

    pub(super) fn check(&self, core: &Core) -> std::result::Result<(), String> {
        let g = core.geometry();
        self.pages.verify(&core.flash)?;
        for (w, vol) in [(Which::Public, Some(&self.public)), (Which::Hidden, self.hidden.as_ref())] {
            let Some(vol) = vol else { continue };
            for (lba, e) in vol.map.iter() {
                let idx = g.index_of(e.ppa);
                if self.pages.status(idx) != PageStatus::Used || self.pages.owner(idx) != w.owner(lba) {
                    return Err(format!("{w:?} lba {lba} at {} not owned in bitmap", e.ppa));
                }
                let view = core.flash.read_page(e.ppa).map_err(|e| e.to_string())?;
                let want = TagFields { lba: lba as u64, version: e.version as u64, class: vol.data_class() };
                if view.state != PageState::Programmed || tag_decode(&vol.key, view.oob) != Some(want) {
                    return Err(format!("{w:?} lba {lba} at {} does not hold its data", e.ppa));
                }
            }
            for &b in vol.slots.blocks() {
                if !self.pages.is_excluded(b) {
                    return Err(format!("slot block {b} open for placement"));
                }
                if self.pages.block(b).public == 0 && !self.slot_attached(b) {
                    return Err(format!("slot block {b} holds non-slot pages"));
                }
            }
        }
        Ok(())
    }
}
