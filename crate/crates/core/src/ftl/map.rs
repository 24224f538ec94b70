use crate::nand::{FlashGeometry, PhysPageAddr};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MapEntry {
    pub ppa: PhysPageAddr,
    pub version: u32,
}

/// LBA to physical page map of one volume.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MappingTable {
    entries: Vec<Option<MapEntry>>,
    live: usize,
}

/// Serialized entry width: linear page index u32 + version u32.
pub(crate) const ENTRY_LEN: usize = 8;
const UNMAPPED: u32 = u32::MAX;

impl MappingTable {
    pub fn new(capacity: u32) -> Self {
        Self { entries: vec![None; capacity as usize], live: 0 }
    }

    pub fn capacity(&self) -> u32 {
        self.entries.len() as u32
    }

    pub fn live(&self) -> usize {
        self.live
    }

    pub fn get(&self, lba: u32) -> Option<MapEntry> {
        self.entries.get(lba as usize).copied().flatten()
    }

    /// Returns the entry it replaced.
    pub(crate) fn set(&mut self, lba: u32, entry: MapEntry) -> Option<MapEntry> {
        let old = self.entries[lba as usize].replace(entry);
        if old.is_none() {
            self.live += 1;
        }
        old
    }

    pub(crate) fn remove(&mut self, lba: u32) -> Option<MapEntry> {
        let old = self.entries[lba as usize].take();
        if old.is_some() {
            self.live -= 1;
        }
        old
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, MapEntry)> + '_ {
        self.entries
            .iter()
            .enumerate()
            .filter_map(|(lba, e)| e.map(|e| (lba as u32, e)))
    }

    pub(crate) fn encode(&self, geometry: &FlashGeometry) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.entries.len() * ENTRY_LEN);
        for e in &self.entries {
            let (ppa, version) = match e {
                Some(e) => (geometry.index_of(e.ppa) as u32, e.version),
                None => (UNMAPPED, 0),
            };
            out.extend_from_slice(&ppa.to_le_bytes());
            out.extend_from_slice(&version.to_le_bytes());
        }
        out
    }

    pub(crate) fn decode(bytes: &[u8], capacity: u32, geometry: &FlashGeometry) -> Option<Self> {
        if bytes.len() != capacity as usize * ENTRY_LEN {
            return None;
        }
        let mut table = Self::new(capacity);
        for (lba, chunk) in bytes.chunks_exact(ENTRY_LEN).enumerate() {
            let ppa = u32::from_le_bytes(chunk[..4].try_into().unwrap());
            if ppa == UNMAPPED {
                continue;
            }
            if ppa as usize >= geometry.total_pages() {
                return None;
            }
            let version = u32::from_le_bytes(chunk[4..].try_into().unwrap());
            table.set(lba as u32, MapEntry { ppa: geometry.addr_of(ppa as usize), version });
        }
        Some(table)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn set_replace_remove() {
        let mut m = MappingTable::new(4);
        let a = MapEntry { ppa: PhysPageAddr::new(2, 1), version: 1 };
        let b = MapEntry { ppa: PhysPageAddr::new(3, 0), version: 2 };
        assert_eq!(m.set(1, a), None);
        assert_eq!(m.set(1, b), Some(a));
        assert_eq!(m.live(), 1);
        assert_eq!(m.get(1), Some(b));
        assert_eq!(m.remove(1), Some(b));
        assert_eq!(m.live(), 0);
    }

    #[test]
    fn encode_round_trip() {
        let g = FlashGeometry::new(8, 4, 512, 64, 100);
        let mut m = MappingTable::new(5);
        m.set(0, MapEntry { ppa: PhysPageAddr::new(7, 3), version: 9 });
        m.set(4, MapEntry { ppa: PhysPageAddr::new(2, 0), version: 1 });
        let bytes = m.encode(&g);
        assert_eq!(bytes.len(), 5 * ENTRY_LEN);
        assert_eq!(MappingTable::decode(&bytes, 5, &g), Some(m));
        assert_eq!(MappingTable::decode(&bytes, 4, &g), None);
    }
}
