//! Key-derived map slot locations.
//!
//! Slot `i` is the `i`-th distinct block produced by the keyed PRF
//! `HMAC(slot subkey, label | i | attempt) mod range`; when an attempt lands
//! on a block already taken by a lower index the attempt counter is bumped.
//! The result is a pure, injective function of (key, label, range, index).

use std::ops::Range;

use hmac::Mac;

use super::{CryptoError, Result, VolumeKey};
use crate::nand::PhysPageAddr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MapLabel {
    PublicMap,
    HiddenMap,
}

impl MapLabel {
    fn byte(self) -> u8 {
        match self {
            MapLabel::PublicMap => 0x50,
            MapLabel::HiddenMap => 0x48,
        }
    }
}

/// The slot blocks one key owns for one map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocationSequence {
    label: MapLabel,
    blocks: Vec<u32>,
}

impl LocationSequence {
    /// Derives `slot_count` distinct blocks from `range`.
    pub fn new(key: &VolumeKey, label: MapLabel, slot_count: u32, range: Range<u32>) -> Result<Self> {
        let width = range.end.saturating_sub(range.start);
        if width < slot_count {
            return Err(CryptoError::RangeTooSmall { needed: slot_count, available: width });
        }
        let mut blocks = Vec::with_capacity(slot_count as usize);
        for index in 0..slot_count {
            let mut attempt = 0u32;
            loop {
                let mut mac = key.slot_prf().clone();
                mac.update(&[label.byte()]);
                mac.update(&index.to_le_bytes());
                mac.update(&attempt.to_le_bytes());
                let digest = mac.finalize().into_bytes();
                let draw = u64::from_le_bytes(digest[..8].try_into().unwrap());
                let block = range.start + (draw % width as u64) as u32;
                if !blocks.contains(&block) {
                    blocks.push(block);
                    break;
                }
                attempt += 1;
            }
        }
        Ok(Self { label, blocks })
    }

    pub fn label(&self) -> MapLabel {
        self.label
    }

    pub fn slot_count(&self) -> u32 {
        self.blocks.len() as u32
    }

    /// First page of slot `index`; a committed map chain continues on the
    /// following pages of the same block.
    pub fn location(&self, index: u32) -> Result<PhysPageAddr> {
        self.blocks
            .get(index as usize)
            .map(|&b| PhysPageAddr::new(b, 0))
            .ok_or(CryptoError::SlotOutOfRange { index, count: self.slot_count() })
    }

    pub fn blocks(&self) -> &[u32] {
        &self.blocks
    }

    pub fn contains_block(&self, block: u32) -> bool {
        self.blocks.contains(&block)
    }

    pub fn index_of_block(&self, block: u32) -> Option<u32> {
        self.blocks.iter().position(|&b| b == block).map(|i| i as u32)
    }
}

pub fn map_slot_location(
    key: &VolumeKey,
    label: MapLabel,
    slot_index: u32,
    slot_count: u32,
    range: Range<u32>,
) -> Result<PhysPageAddr> {
    if slot_index >= slot_count {
        return Err(CryptoError::SlotOutOfRange { index: slot_index, count: slot_count });
    }
    LocationSequence::new(key, label, slot_count, range)?.location(slot_index)
}
