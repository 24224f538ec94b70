//! One volume's mapping table and its map-commit slots.
//!
//! A commit writes the serialized map as a chain of pages starting at page
//! 0 of the chosen slot block; the remainder of the block is filled with
//! random bytes. Chain page `j` is encrypted under the volume key with tweak
//! (address, commit version) and carries the OOB tag
//! (lba = j, version = commit version, class = MapCommit).
//!
//! Plaintext chain layout (little-endian):
//!
//! ```text
//! off  len  field
//!   0    8  magic "PDFMAP01"
//!   8    1  label (1 = public map, 2 = hidden map)
//!   9    3  zero
//!  12    8  commit version
//!  20    4  capacity (sectors)
//!  24    4  next data version
//!  28    4  body length = capacity * 8
//!  32   16  HMAC(volume MAC key, bytes 0..32 | body) truncated
//!  48    -  body: per sector, linear page index u32 (0xFFFFFFFF = unmapped)
//!           then data version u32; zero padding to the page boundary
//! ```

use crate::crypto::{
    decrypt_page, encrypt_page, tag_decode, tag_encode, LocationSequence, MapLabel, PageTweak, TagClass, TagFields,
    VolumeKey,
};
use crate::nand::{FlashArray, FlashGeometry, PageState, PhysPageAddr};

use super::map::{MappingTable, ENTRY_LEN};
use super::FtlError;

pub const MAP_MAGIC: &[u8; 8] = b"PDFMAP01";
pub const MAP_HEADER_LEN: usize = 48;
const MAP_DOMAIN: &[u8] = b"map-commit";

fn label_byte(label: MapLabel) -> u8 {
    match label {
        MapLabel::PublicMap => 1,
        MapLabel::HiddenMap => 2,
    }
}

/// Pages one committed map of `capacity` sectors occupies.
pub fn chain_pages(capacity: u32, page_size: u32) -> usize {
    (MAP_HEADER_LEN + capacity as usize * ENTRY_LEN).div_ceil(page_size as usize)
}

#[derive(Debug, Clone)]
pub(crate) struct Volume {
    pub key: VolumeKey,
    pub label: MapLabel,
    pub slots: LocationSequence,
    pub map: MappingTable,
    pub commit_version: u64,
    pub next_slot: u32,
    pub next_version: u32,
    /// Changed since unlock.
    pub dirty: bool,
}

impl Volume {
    pub fn data_class(&self) -> TagClass {
        match self.label {
            MapLabel::PublicMap => TagClass::PublicData,
            MapLabel::HiddenMap => TagClass::HiddenData,
        }
    }

    pub fn bump_version(&mut self) -> Result<u32, FtlError> {
        let v = self.next_version;
        self.next_version = v.checked_add(1).ok_or(FtlError::VersionExhausted)?;
        self.dirty = true;
        Ok(v)
    }

    /// Encrypted, tagged chain pages for committing to `block` at `version`.
    pub fn chain(&self, geometry: &FlashGeometry, block: u32, version: u64) -> Result<Vec<(PhysPageAddr, Vec<u8>, Vec<u8>)>, FtlError> {
        let ps = geometry.page_size as usize;
        let body = self.map.encode(geometry);
        let mut head = vec![0u8; 32];
        head[..8].copy_from_slice(MAP_MAGIC);
        head[8] = label_byte(self.label);
        head[12..20].copy_from_slice(&version.to_le_bytes());
        head[20..24].copy_from_slice(&self.map.capacity().to_le_bytes());
        head[24..28].copy_from_slice(&self.next_version.to_le_bytes());
        head[28..32].copy_from_slice(&(body.len() as u32).to_le_bytes());
        let mut mac_input = head.clone();
        mac_input.extend_from_slice(&body);
        let mac = self.key.mac16(MAP_DOMAIN, &mac_input);
        let mut plain = head;
        plain.extend_from_slice(&mac);
        plain.extend_from_slice(&body);
        let pages = plain.len().div_ceil(ps);
        if pages > geometry.pages_per_block as usize {
            return Err(FtlError::GeometryTooSmall("map does not fit in one slot block"));
        }
        plain.resize(pages * ps, 0);
        plain
            .chunks(ps)
            .enumerate()
            .map(|(j, chunk)| {
                let addr = PhysPageAddr::new(block, j as u32);
                let data = encrypt_page(&self.key, PageTweak::new(addr, version), chunk, ps)?;
                let oob = tag_encode(
                    &self.key,
                    TagFields { lba: j as u64, version, class: TagClass::MapCommit },
                    geometry.oob_size as usize,
                )?;
                Ok((addr, data, oob))
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Loaded {
    pub map: MappingTable,
    pub commit_version: u64,
    pub slot_index: u32,
    pub next_version: u32,
}

fn read_chain(
    flash: &FlashArray,
    key: &VolumeKey,
    label: MapLabel,
    block: u32,
    version: u64,
    capacity: u32,
) -> Option<(MappingTable, u32)> {
    let g = flash.geometry();
    let ps = g.page_size as usize;
    let pages = chain_pages(capacity, g.page_size);
    if pages > g.pages_per_block as usize {
        return None;
    }
    let mut plain = Vec::with_capacity(pages * ps);
    for j in 0..pages as u32 {
        let addr = PhysPageAddr::new(block, j);
        let view = flash.read_page(addr).ok()?;
        if view.state != PageState::Programmed {
            return None;
        }
        let tag = tag_decode(key, view.oob)?;
        if tag != (TagFields { lba: j as u64, version, class: TagClass::MapCommit }) {
            return None;
        }
        plain.extend(decrypt_page(key, PageTweak::new(addr, version), view.data, ps).ok()?);
    }
    let u32_at = |o: usize| u32::from_le_bytes(plain[o..o + 4].try_into().unwrap());
    if &plain[..8] != MAP_MAGIC
        || plain[8] != label_byte(label)
        || u64::from_le_bytes(plain[12..20].try_into().unwrap()) != version
        || u32_at(20) != capacity
        || u32_at(28) as usize != capacity as usize * ENTRY_LEN
    {
        return None;
    }
    let body = &plain[MAP_HEADER_LEN..MAP_HEADER_LEN + capacity as usize * ENTRY_LEN];
    let mut mac_input = plain[..32].to_vec();
    mac_input.extend_from_slice(body);
    if key.mac16(MAP_DOMAIN, &mac_input) != plain[32..48] {
        return None;
    }
    let map = MappingTable::decode(body, capacity, g)?;
    Some((map, u32_at(24)))
}

/// Highest-version commit among `slots` that authenticates under `key`.
pub(crate) fn load(
    flash: &FlashArray,
    key: &VolumeKey,
    slots: &LocationSequence,
    capacity: u32,
) -> Option<Loaded> {
    let mut found: Vec<(u64, u32)> = slots
        .blocks()
        .iter()
        .enumerate()
        .filter_map(|(i, &b)| {
            let view = flash.read_page(PhysPageAddr::new(b, 0)).ok()?;
            if view.state != PageState::Programmed {
                return None;
            }
            let tag = tag_decode(key, view.oob)?;
            (tag.class == TagClass::MapCommit && tag.lba == 0).then_some((tag.version, i as u32))
        })
        .collect();
    found.sort_unstable_by(|a, b| b.cmp(a));
    found.into_iter().find_map(|(version, slot_index)| {
        let block = slots.blocks()[slot_index as usize];
        read_chain(flash, key, slots.label(), block, version, capacity).map(|(map, next_version)| Loaded {
            map,
            commit_version: version,
            slot_index,
            next_version,
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_sizes() {
        // Default geometry: 70% of 16256 usable pages.
        assert_eq!(chain_pages(11379, 2048), 45);
        assert_eq!(chain_pages(0, 512), 1);
        assert_eq!(chain_pages(58, 512), 1);
        assert_eq!(chain_pages(59, 512), 2);
    }
}
