//! Volatile per-page bookkeeping: the global bitmap plus what the current
//! session knows about who owns each used page.

use crate::nand::{FlashArray, FlashGeometry, PageState, PhysPageAddr};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PageStatus {
    /// Erased cell, ready to program.
    Erased,
    /// Free in the bitmap but still holding stale content; reclaimed by erase.
    Pending,
    /// Marked used in the bitmap.
    Used,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Owner {
    /// Used, origin unknown to this session (dummy or hidden data).
    Unknown,
    Public(u32),
    Hidden(u32),
    /// Used and known to be reclaimable (dummy ledger).
    Dummy,
    Slot,
    Free,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub(crate) struct BlockCounts {
    pub erased: u32,
    pub pending: u32,
    pub used: u32,
    pub public: u32,
    pub hidden: u32,
    pub unknown: u32,
    pub dummy: u32,
    pub slot: u32,
}

impl BlockCounts {
    /// Used pages nobody maps: dummies plus whatever this session cannot
    /// attribute.
    pub fn candidates(&self) -> u32 {
        self.unknown + self.dummy
    }

    pub fn live(&self) -> u32 {
        self.public + self.hidden
    }

    fn apply(&mut self, status: PageStatus, owner: Owner, delta: i32) {
        let bump = |v: &mut u32| *v = (*v as i64 + delta as i64) as u32;
        match status {
            PageStatus::Erased => bump(&mut self.erased),
            PageStatus::Pending => bump(&mut self.pending),
            PageStatus::Used => bump(&mut self.used),
        }
        match owner {
            Owner::Public(_) => bump(&mut self.public),
            Owner::Hidden(_) => bump(&mut self.hidden),
            Owner::Unknown => bump(&mut self.unknown),
            Owner::Dummy => bump(&mut self.dummy),
            Owner::Slot => bump(&mut self.slot),
            Owner::Free => {}
        }
    }
}

/// Order-statistics set over page indices (Fenwick tree), so a uniform
/// draw `k` maps to the `k`-th free page in address order.
#[derive(Debug, Clone)]
pub(crate) struct FreePool {
    tree: Vec<u32>,
    present: Vec<bool>,
    len: usize,
    top: usize,
}

impl FreePool {
    pub fn new(n: usize) -> Self {
        let mut top = 1;
        while top * 2 <= n {
            top *= 2;
        }
        Self { tree: vec![0; n + 1], present: vec![false; n], len: 0, top }
    }

    fn add(&mut self, idx: usize, delta: i32) {
        let mut i = idx + 1;
        while i < self.tree.len() {
            self.tree[i] = (self.tree[i] as i64 + delta as i64) as u32;
            i += i & i.wrapping_neg();
        }
    }

    pub fn insert(&mut self, idx: usize) {
        if !self.present[idx] {
            self.present[idx] = true;
            self.len += 1;
            self.add(idx, 1);
        }
    }

    pub fn remove(&mut self, idx: usize) {
        if self.present[idx] {
            self.present[idx] = false;
            self.len -= 1;
            self.add(idx, -1);
        }
    }

    pub fn contains(&self, idx: usize) -> bool {
        self.present[idx]
    }

    pub fn len(&self) -> usize {
        self.len
    }

    /// The `k`-th (0-based) member in ascending order.
    pub fn select(&self, k: usize) -> usize {
        debug_assert!(k < self.len);
        let mut pos = 0;
        let mut rem = k as u32 + 1;
        let mut step = self.top;
        while step > 0 {
            let next = pos + step;
            if next < self.tree.len() && self.tree[next] < rem {
                pos = next;
                rem -= self.tree[next];
            }
            step /= 2;
        }
        pos
    }
}

#[derive(Debug, Clone)]
pub(crate) struct PageTable {
    geometry: FlashGeometry,
    status: Vec<PageStatus>,
    owner: Vec<Owner>,
    blocks: Vec<BlockCounts>,
    /// Blocks that never take placements: superblock, known slots, bad.
    excluded: Vec<bool>,
    superblock: Vec<bool>,
    pool: FreePool,
    used: usize,
    usable: usize,
}

impl PageTable {
    /// Every page starts Erased; superblock blocks are excluded and never
    /// counted as usable.
    pub fn new(geometry: FlashGeometry, superblock_blocks: &[u32]) -> Self {
        let total = geometry.total_pages();
        let nb = geometry.num_blocks as usize;
        let ppb = geometry.pages_per_block;
        let mut superblock = vec![false; nb];
        for &b in superblock_blocks {
            superblock[b as usize] = true;
        }
        let mut pool = FreePool::new(total);
        for idx in 0..total {
            if !superblock[idx / ppb as usize] {
                pool.insert(idx);
            }
        }
        let counts = BlockCounts { erased: ppb, ..Default::default() };
        Self {
            geometry,
            status: vec![PageStatus::Erased; total],
            owner: vec![Owner::Free; total],
            blocks: vec![counts; nb],
            excluded: superblock.clone(),
            usable: total - superblock_blocks.len() * ppb as usize,
            superblock,
            pool,
            used: 0,
        }
    }

    pub fn geometry(&self) -> &FlashGeometry {
        &self.geometry
    }

    pub fn status(&self, idx: usize) -> PageStatus {
        self.status[idx]
    }

    pub fn owner(&self, idx: usize) -> Owner {
        self.owner[idx]
    }

    pub fn block(&self, b: u32) -> &BlockCounts {
        &self.blocks[b as usize]
    }

    pub fn is_superblock(&self, b: u32) -> bool {
        self.superblock[b as usize]
    }

    pub fn is_excluded(&self, b: u32) -> bool {
        self.excluded[b as usize]
    }

    pub fn set(&mut self, idx: usize, status: PageStatus, owner: Owner) {
        debug_assert!(
            (status == PageStatus::Used) != (owner == Owner::Free),
            "used pages need an owner, free pages none"
        );
        let b = idx / self.geometry.pages_per_block as usize;
        debug_assert!(!self.superblock[b]);
        let (old_s, old_o) = (self.status[idx], self.owner[idx]);
        self.blocks[b].apply(old_s, old_o, -1);
        self.blocks[b].apply(status, owner, 1);
        if old_s == PageStatus::Used {
            self.used -= 1;
        }
        if status == PageStatus::Used {
            self.used += 1;
        }
        self.status[idx] = status;
        self.owner[idx] = owner;
        if status == PageStatus::Erased && !self.excluded[b] {
            self.pool.insert(idx);
        } else {
            self.pool.remove(idx);
        }
    }

    pub fn set_owner(&mut self, idx: usize, owner: Owner) {
        let status = self.status[idx];
        self.set(idx, status, owner);
    }

    pub fn mark_used(&mut self, addr: PhysPageAddr, owner: Owner) {
        let idx = self.geometry.index_of(addr);
        self.set(idx, PageStatus::Used, owner);
    }

    /// Used page loses its owner but keeps its content until erase.
    pub fn invalidate(&mut self, addr: PhysPageAddr) {
        let idx = self.geometry.index_of(addr);
        self.set(idx, PageStatus::Pending, Owner::Free);
    }

    pub fn erase_block(&mut self, b: u32) {
        for idx in self.geometry.block_pages(b) {
            self.set(idx, PageStatus::Erased, Owner::Free);
        }
    }

    /// Takes a block out of (or back into) the placement pool.
    pub fn set_excluded(&mut self, b: u32, excluded: bool) {
        if self.superblock[b as usize] {
            return;
        }
        self.excluded[b as usize] = excluded;
        for idx in self.geometry.block_pages(b) {
            if excluded || self.status[idx] != PageStatus::Erased {
                self.pool.remove(idx);
            } else {
                self.pool.insert(idx);
            }
        }
    }

    pub fn pool(&self) -> &FreePool {
        &self.pool
    }

    pub fn used(&self) -> usize {
        self.used
    }

    pub fn usable(&self) -> usize {
        self.usable
    }

    pub fn load_factor(&self) -> f64 {
        self.used as f64 / self.usable as f64
    }

    pub fn candidate_pages(&self) -> usize {
        self.blocks
            .iter()
            .enumerate()
            .filter(|(b, _)| !self.excluded[*b])
            .map(|(_, c)| c.candidates() as usize)
            .sum()
    }

    pub fn pages_of(&self, b: u32) -> std::ops::Range<usize> {
        self.geometry.block_pages(b)
    }

    /// Bit per page, LSB-first: used set and pending set.
    pub fn bitmaps(&self, keep: impl Fn(usize, Owner) -> bool) -> (Vec<u8>, Vec<u8>) {
        let total = self.status.len();
        let mut used = vec![0u8; total.div_ceil(8)];
        let mut pending = vec![0u8; total.div_ceil(8)];
        for idx in 0..total {
            match self.status[idx] {
                PageStatus::Used if keep(idx, self.owner[idx]) => used[idx / 8] |= 1 << (idx % 8),
                PageStatus::Used | PageStatus::Pending => pending[idx / 8] |= 1 << (idx % 8),
                PageStatus::Erased => {}
            }
        }
        (used, pending)
    }

    /// Recomputes every derived count and checks the table against the
    /// physical page states.
    pub fn verify(&self, flash: &FlashArray) -> Result<(), String> {
        let mut used = 0;
        let mut pool = 0;
        for b in 0..self.geometry.num_blocks {
            if self.superblock[b as usize] {
                continue;
            }
            let mut c = BlockCounts::default();
            for idx in self.pages_of(b) {
                let (s, o) = (self.status[idx], self.owner[idx]);
                c.apply(s, o, 1);
                if (s == PageStatus::Used) == (o == Owner::Free) {
                    return Err(format!("page {idx}: status {s:?} with owner {o:?}"));
                }
                let erased = flash.state_at(idx) == PageState::Erased;
                match s {
                    PageStatus::Erased if !erased => return Err(format!("page {idx}: tracked erased but programmed")),
                    PageStatus::Pending | PageStatus::Used if erased && o != Owner::Slot => {
                        return Err(format!("page {idx}: tracked {s:?} but erased"))
                    }
                    _ => {}
                }
                let want = s == PageStatus::Erased && !self.excluded[b as usize];
                if self.pool.contains(idx) != want {
                    return Err(format!("page {idx}: pool membership {}", !want));
                }
                pool += want as usize;
                used += (s == PageStatus::Used) as usize;
            }
            if c != self.blocks[b as usize] {
                return Err(format!("block {b}: counts {:?} != {:?}", self.blocks[b as usize], c));
            }
        }
        if used != self.used {
            return Err(format!("used {} != {used}", self.used));
        }
        if pool != self.pool.len() {
            return Err(format!("pool {} != {pool}", self.pool.len()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn select_walks_in_order() {
        let mut p = FreePool::new(10);
        for i in [7, 2, 9, 4] {
            p.insert(i);
        }
        assert_eq!((0..4).map(|k| p.select(k)).collect::<Vec<_>>(), vec![2, 4, 7, 9]);
        p.remove(4);
        assert_eq!(p.select(1), 7);
        assert_eq!(p.len(), 3);
    }

    #[test]
    fn counts_follow_transitions() {
        let g = FlashGeometry::new(4, 4, 512, 64, 10);
        let mut t = PageTable::new(g, &[0]);
        assert_eq!(t.usable(), 12);
        assert_eq!(t.pool().len(), 12);
        t.mark_used(PhysPageAddr::new(1, 0), Owner::Public(3));
        t.mark_used(PhysPageAddr::new(1, 1), Owner::Dummy);
        assert_eq!(t.used(), 2);
        assert_eq!(t.block(1).candidates(), 1);
        t.invalidate(PhysPageAddr::new(1, 0));
        assert_eq!(t.block(1).pending, 1);
        assert_eq!(t.block(1).public, 0);
        t.set_excluded(2, true);
        assert_eq!(t.pool().len(), 6);
        t.erase_block(1);
        assert_eq!(t.pool().len(), 8);
        assert_eq!(t.used(), 0);
    }

    proptest! {
        #[test]
        fn pool_select_matches_sorted_members(ops in proptest::collection::vec((0usize..64, any::<bool>()), 0..200)) {
            let mut p = FreePool::new(64);
            let mut set = std::collections::BTreeSet::new();
            for (i, ins) in ops {
                if ins { p.insert(i); set.insert(i); } else { p.remove(i); set.remove(&i); }
            }
            prop_assert_eq!(p.len(), set.len());
            for (k, &v) in set.iter().enumerate() {
                prop_assert_eq!(p.select(k), v);
            }
        }
    }
}
