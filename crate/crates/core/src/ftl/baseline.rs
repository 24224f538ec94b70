//! Head/tail hidden-volume layout: public data fills the lowest free
//! blocks sequentially, hidden data the highest blocks of a tail region
//! that starts at a key-derived offset. No dummy writes.

use super::pages::BlockCounts;
use super::{Core, EventClass, EventOp, FtlError, Owner, ReclaimReport, Result, Session, Which};
use crate::nand::PhysPageAddr;

fn cursor_slot(w: Which) -> usize {
    match w {
        Which::Public => 0,
        Which::Hidden => 1,
    }
}

fn owned(w: Which, c: &BlockCounts) -> u32 {
    match w {
        Which::Public => c.public,
        Which::Hidden => c.hidden,
    }
}

impl Session {
    fn cursor_next(&mut self, w: Which) -> Option<PhysPageAddr> {
        let g = *self.pages.geometry();
        let slot = cursor_slot(w);
        let (b, p) = self.cursors[slot]?;
        if p >= g.pages_per_block || self.pages.is_excluded(b) {
            return None;
        }
        let addr = PhysPageAddr::new(b, p);
        if self.pages.status(g.index_of(addr)) != super::PageStatus::Erased {
            return None;
        }
        self.cursors[slot] = Some((b, p + 1));
        Some(addr)
    }

    pub(super) fn baseline_place(&mut self, core: &mut Core, w: Which) -> Result<PhysPageAddr> {
        if let Some(addr) = self.cursor_next(w) {
            return Ok(addr);
        }
        if !self.compacting {
            self.baseline_compact(core, w)?;
            if let Some(addr) = self.cursor_next(w) {
                return Ok(addr);
            }
        }
        self.baseline_open(core, w)?;
        self.cursor_next(w).ok_or(FtlError::DeviceFull)
    }

    fn baseline_open(&mut self, core: &mut Core, w: Which) -> Result<()> {
        let g = *self.pages.geometry();
        let other = self.cursors[1 - cursor_slot(w)].map(|c| c.0);
        loop {
            let free = |b: u32| !self.pages.is_excluded(b) && self.pages.block(b).used == 0 && Some(b) != other;
            let pick = match w {
                Which::Public => (2..self.tail_start.unwrap_or(g.num_blocks)).find(|&b| free(b)),
                Which::Hidden => {
                    let start = self.tail_start.ok_or(FtlError::WrongMode)?;
                    (start..g.num_blocks).rev().find(|&b| free(b))
                }
            };
            let Some(b) = pick else {
                if w == Which::Hidden {
                    let start = self.tail_start.unwrap_or(g.num_blocks);
                    if (start..g.num_blocks).any(|b| self.pages.block(b).public > 0) {
                        return Err(FtlError::VolumesCollide);
                    }
                }
                return Err(FtlError::DeviceFull);
            };
            if w == Which::Public && core.tail_start.is_some_and(|t| b >= t) {
                core.counters.volume_collisions += 1;
                core.event(EventOp::Program, None, None, EventClass::Collision);
            }
            if self.pages.block(b).erased < g.pages_per_block {
                core.erase(b, EventClass::Allocation)?;
                self.pages.erase_block(b);
                if core.flash.is_bad(b) {
                    self.pages.set_excluded(b, true);
                    continue;
                }
            }
            self.cursors[cursor_slot(w)] = Some((b, 0));
            return Ok(());
        }
    }

    /// Packs volume `w` into as few blocks as its live pages need, moving
    /// the sparsest blocks first.
    pub(super) fn baseline_compact(&mut self, core: &mut Core, w: Which) -> Result<ReclaimReport> {
        let was = self.compacting;
        self.compacting = true;
        let r = self.compact_inner(core, w);
        self.compacting = was;
        r
    }

    fn compact_inner(&mut self, core: &mut Core, w: Which) -> Result<ReclaimReport> {
        let g = *self.pages.geometry();
        let region = match w {
            Which::Public => 2..self.tail_start.unwrap_or(g.num_blocks),
            Which::Hidden => self.tail_start.unwrap_or(g.num_blocks)..g.num_blocks,
        };
        let mut report = ReclaimReport::default();
        for _ in 0..g.num_blocks {
            let live = self.vol(w).map.live() as u32;
            let holding: Vec<u32> = region
                .clone()
                .filter(|&b| !self.pages.is_excluded(b) && owned(w, self.pages.block(b)) > 0)
                .collect();
            if holding.len() as u32 <= live.div_ceil(g.pages_per_block) + 1 {
                break;
            }
            let current = self.cursors[cursor_slot(w)].map(|c| c.0);
            let wear = core.flash.wear();
            let Some(victim) = holding
                .into_iter()
                .filter(|&b| Some(b) != current)
                .min_by_key(|&b| (owned(w, self.pages.block(b)), wear[b as usize], b))
            else {
                break;
            };
            let lbas: Vec<u32> = self
                .pages
                .pages_of(victim)
                .filter_map(|idx| match self.pages.owner(idx) {
                    Owner::Public(l) if w == Which::Public => Some(l),
                    Owner::Hidden(l) if w == Which::Hidden => Some(l),
                    _ => None,
                })
                .collect();
            for &lba in &lbas {
                self.relocate(core, w, lba)?;
            }
            report.pages_relocated += lbas.len() as u32;
            let c = *self.pages.block(victim);
            if c.used == 0 && c.erased < g.pages_per_block {
                core.erase(victim, EventClass::Gc)?;
                self.pages.erase_block(victim);
                self.pages.set_excluded(victim, core.flash.is_bad(victim));
                report.blocks_erased += 1;
                report.pages_reclaimed += c.pending;
            }
        }
        Ok(report)
    }
}
