//! Crash recovery: rebuild maps and bitmap from a full scan of page tags.

use crate::crypto::{tag_decode, TagClass, VolumeKey};
use crate::nand::PageState;

use super::pages::PageTable;
use super::superblock;
use super::{
    Core, EventClass, EventOp, FtlError, MapEntry, MappingTable, Owner, PageStatus, Result, Session,
    SUPERBLOCK_BLOCKS,
};

/// Newest (version, page index) per sector.
struct Scan {
    best: Vec<Option<(u32, usize)>>,
    max_version: u32,
}

impl Scan {
    fn new(capacity: u32) -> Self {
        Self { best: vec![None; capacity as usize], max_version: 0 }
    }

    fn offer(&mut self, lba: u64, version: u64, idx: usize) {
        let (Ok(lba), Ok(version)) = (usize::try_from(lba), u32::try_from(version)) else { return };
        let Some(slot) = self.best.get_mut(lba) else { return };
        if slot.is_none_or(|(v, _)| version > v) {
            *slot = Some((version, idx));
        }
        self.max_version = self.max_version.max(version);
    }

    fn into_map(self, core: &Core) -> (MappingTable, u32) {
        let g = core.geometry();
        let mut map = MappingTable::new(self.best.len() as u32);
        for (lba, e) in self.best.into_iter().enumerate() {
            if let Some((version, idx)) = e {
                map.set(lba as u32, MapEntry { ppa: g.addr_of(idx), version });
            }
        }
        (map, self.max_version)
    }
}

fn decode_as(key: &VolumeKey, oob: &[u8], class: TagClass) -> Option<(u64, u64)> {
    tag_decode(key, oob).filter(|t| t.class == class).map(|t| (t.lba, t.version))
}

pub(super) fn recover(core: &mut Core, passwords: &[&str]) -> Result<Session> {
    let (_, header) = superblock::read_newest(&core.flash).ok_or(FtlError::NoValidSuperblock)?;
    let (mut public, hidden) = core.load_volumes(passwords)?;
    if header.clean {
        return Err(FtlError::CleanShutdown);
    }
    let (mut hidden, tail_start) = match hidden {
        Some((v, t)) => (Some(v), t),
        None => (None, None),
    };

    let g = core.geometry();
    let mut pub_scan = Scan::new(public.map.capacity());
    let mut hid_scan = hidden.as_ref().map(|h| Scan::new(h.map.capacity()));
    for b in 0..g.num_blocks {
        if SUPERBLOCK_BLOCKS.contains(&b) {
            continue;
        }
        for idx in g.block_pages(b) {
            if core.flash.state_at(idx) != PageState::Programmed {
                continue;
            }
            let oob = core.flash.read_page(g.addr_of(idx))?.oob;
            if let Some((lba, v)) = decode_as(&public.key, oob, TagClass::PublicData) {
                pub_scan.offer(lba, v, idx);
            } else if let (Some(h), Some(scan)) = (hidden.as_ref(), hid_scan.as_mut()) {
                if let Some((lba, v)) = decode_as(&h.key, oob, TagClass::HiddenData) {
                    scan.offer(lba, v, idx);
                }
            }
        }
    }

    let (map, max) = pub_scan.into_map(core);
    public.map = map;
    public.next_version = public.next_version.max(max.saturating_add(1));
    public.dirty = true;
    if let (Some(h), Some(scan)) = (hidden.as_mut(), hid_scan) {
        let (map, max) = scan.into_map(core);
        h.map = map;
        h.next_version = h.next_version.max(max.saturating_add(1));
        h.dirty = true;
    }

    let mut pages = PageTable::new(g, &SUPERBLOCK_BLOCKS);
    for b in 0..g.num_blocks {
        if SUPERBLOCK_BLOCKS.contains(&b) {
            continue;
        }
        if core.flash.is_bad(b) {
            pages.set_excluded(b, true);
        }
        for idx in g.block_pages(b) {
            if core.flash.state_at(idx) == PageState::Programmed {
                pages.set(idx, PageStatus::Pending, Owner::Free);
            }
        }
    }
    let mut session = Session {
        public,
        hidden,
        pages,
        idle_ticks: 0,
        cursors: [None, None],
        tail_start,
        compacting: false,
    };
    let live: Vec<(usize, Owner)> = session
        .public
        .map
        .iter()
        .map(|(lba, e)| (g.index_of(e.ppa), Owner::Public(lba)))
        .chain(
            session
                .hidden
                .iter()
                .flat_map(|h| h.map.iter().map(|(lba, e)| (g.index_of(e.ppa), Owner::Hidden(lba)))),
        )
        .collect();
    for (idx, owner) in live {
        session.pages.set(idx, PageStatus::Used, owner);
    }
    let evict = session.attach_slots();
    core.counters.recoveries += 1;
    core.mode = session.mode();
    core.metadata_blocks.extend(session.volumes().flat_map(|v| v.slots.blocks().to_vec()));
    core.event(EventOp::Recover, None, None, EventClass::None);
    session.evict_from_slots(core, evict)?;
    Ok(session)
}
