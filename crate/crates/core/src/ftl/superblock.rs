//! A/B superblock in blocks 0 and 1.
//!
//! Page 0 of the active block is a plaintext header; pages 1.. hold the
//! committed bitmap body, encrypted under the decoy key.
//!
//! ```text
//! off  len  field
//!   0    8  magic "PDFTLSB1"
//!   8    4  layout version (1)
//!  12   20  geometry: num_blocks, pages_per_block, page_size, oob_size, pe_cycle_limit (u32 each)
//!  32    1  strategy (1 = DummyRandom, 2 = HiddenVolumeBaseline)
//!  33    1  clean flag (1 = clean shutdown)
//!  34    2  zero
//!  36   32  KDF salt
//!  68    4  KDF iterations
//!  72    8  commit sequence number
//!  80    4  map slots per volume
//!  84    4  public capacity (sectors)
//!  88    4  hidden capacity (sectors)
//!  92    4  body pages
//!  96    4  body length in bytes
//! 100   16  body MAC (decoy key)
//! 116    8  SHA-256(bytes 0..116) truncated
//! ```
//!
//! All integers little-endian; the rest of the header page is zero and all
//! superblock OOB bytes are zero. The body is the used bitmap followed by
//! the pending-erase bitmap, one bit per page, LSB-first.

use sha2::{Digest, Sha256};

use crate::crypto::{decrypt_page, encrypt_page, PageTweak, VolumeKey};
use crate::nand::{FlashArray, FlashGeometry, PageState, PhysPageAddr};

use super::{FtlError, Strategy};

pub const SUPERBLOCK_BLOCKS: [u32; 2] = [0, 1];
pub const SB_MAGIC: &[u8; 8] = b"PDFTLSB1";
pub const SB_LAYOUT_VERSION: u32 = 1;
pub const SB_HEADER_LEN: usize = 124;
pub const SALT_LEN: usize = 32;

const BODY_DOMAIN: &[u8] = b"superblock-body";

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Header {
    pub geometry: FlashGeometry,
    pub strategy: Strategy,
    pub clean: bool,
    pub salt: [u8; SALT_LEN],
    pub kdf_iterations: u32,
    pub seq: u64,
    pub map_slots: u32,
    pub public_capacity: u32,
    pub hidden_capacity: u32,
    pub body_pages: u32,
    pub body_len: u32,
    pub body_mac: [u8; 16],
}

impl Header {
    pub fn encode(&self) -> Vec<u8> {
        let g = &self.geometry;
        let mut out = vec![0u8; g.page_size as usize];
        out[..8].copy_from_slice(SB_MAGIC);
        out[8..12].copy_from_slice(&SB_LAYOUT_VERSION.to_le_bytes());
        for (i, v) in [g.num_blocks, g.pages_per_block, g.page_size, g.oob_size, g.pe_cycle_limit]
            .into_iter()
            .enumerate()
        {
            out[12 + 4 * i..16 + 4 * i].copy_from_slice(&v.to_le_bytes());
        }
        out[32] = self.strategy.to_byte();
        out[33] = self.clean as u8;
        out[36..68].copy_from_slice(&self.salt);
        out[68..72].copy_from_slice(&self.kdf_iterations.to_le_bytes());
        out[72..80].copy_from_slice(&self.seq.to_le_bytes());
        out[80..84].copy_from_slice(&self.map_slots.to_le_bytes());
        out[84..88].copy_from_slice(&self.public_capacity.to_le_bytes());
        out[88..92].copy_from_slice(&self.hidden_capacity.to_le_bytes());
        out[92..96].copy_from_slice(&self.body_pages.to_le_bytes());
        out[96..100].copy_from_slice(&self.body_len.to_le_bytes());
        out[100..116].copy_from_slice(&self.body_mac);
        let digest = Sha256::digest(&out[..116]);
        out[116..124].copy_from_slice(&digest[..8]);
        out
    }

    pub fn decode(page: &[u8]) -> Option<Self> {
        if page.len() < SB_HEADER_LEN || &page[..8] != SB_MAGIC {
            return None;
        }
        if Sha256::digest(&page[..116])[..8] != page[116..124] {
            return None;
        }
        let u32_at = |o: usize| u32::from_le_bytes(page[o..o + 4].try_into().unwrap());
        if u32_at(8) != SB_LAYOUT_VERSION {
            return None;
        }
        Some(Self {
            geometry: FlashGeometry::new(u32_at(12), u32_at(16), u32_at(20), u32_at(24), u32_at(28)),
            strategy: Strategy::from_byte(page[32])?,
            clean: page[33] == 1,
            salt: page[36..68].try_into().unwrap(),
            kdf_iterations: u32_at(68),
            seq: u64::from_le_bytes(page[72..80].try_into().unwrap()),
            map_slots: u32_at(80),
            public_capacity: u32_at(84),
            hidden_capacity: u32_at(88),
            body_pages: u32_at(92),
            body_len: u32_at(96),
            body_mac: page[100..116].try_into().unwrap(),
        })
    }
}

/// Bytes of the committed bitmap body for a geometry.
pub(crate) fn body_len(geometry: &FlashGeometry) -> usize {
    2 * geometry.total_pages().div_ceil(8)
}

pub(crate) fn body_pages(geometry: &FlashGeometry) -> usize {
    body_len(geometry).div_ceil(geometry.page_size as usize)
}

/// The newest header that parses, with the block holding it.
pub(crate) fn read_newest(flash: &FlashArray) -> Option<(u32, Header)> {
    SUPERBLOCK_BLOCKS
        .iter()
        .filter_map(|&b| {
            let view = flash.read_page(PhysPageAddr::new(b, 0)).ok()?;
            if view.state != PageState::Programmed {
                return None;
            }
            Header::decode(view.data).map(|h| (b, h))
        })
        .filter(|(_, h)| h.geometry == *flash.geometry())
        .max_by_key(|(_, h)| h.seq)
}

pub(crate) fn other_block(block: u32) -> u32 {
    if block == SUPERBLOCK_BLOCKS[0] {
        SUPERBLOCK_BLOCKS[1]
    } else {
        SUPERBLOCK_BLOCKS[0]
    }
}

fn body_mac(key: &VolumeKey, seq: u64, body: &[u8]) -> [u8; 16] {
    let mut data = seq.to_le_bytes().to_vec();
    data.extend_from_slice(body);
    key.mac16(BODY_DOMAIN, &data)
}

/// Erases `block` and writes `header` plus an optional body to it.
/// Returns pages programmed.
pub(crate) fn write(
    flash: &mut FlashArray,
    block: u32,
    mut header: Header,
    body: Option<(&VolumeKey, &[u8])>,
) -> Result<u32, FtlError> {
    let g = *flash.geometry();
    let ps = g.page_size as usize;
    let zero_oob = vec![0u8; g.oob_size as usize];
    let mut chunks = Vec::new();
    match body {
        Some((key, bytes)) => {
            header.body_len = bytes.len() as u32;
            header.body_pages = bytes.len().div_ceil(ps) as u32;
            header.body_mac = body_mac(key, header.seq, bytes);
            for (i, chunk) in bytes.chunks(ps).enumerate() {
                let mut page = chunk.to_vec();
                page.resize(ps, 0);
                let addr = PhysPageAddr::new(block, 1 + i as u32);
                chunks.push((addr, encrypt_page(key, PageTweak::new(addr, header.seq), &page, ps)?));
            }
        }
        None => {
            header.body_len = 0;
            header.body_pages = 0;
            header.body_mac = [0; 16];
        }
    }
    if g.block_pages(block).any(|idx| flash.state_at(idx) == PageState::Programmed) {
        flash.erase_block(block)?;
    }
    flash.program_page(PhysPageAddr::new(block, 0), &header.encode(), &zero_oob)?;
    for (addr, data) in &chunks {
        flash.program_page(*addr, data, &zero_oob)?;
    }
    Ok(1 + chunks.len() as u32)
}

/// Decrypts and authenticates the body under the decoy key.
pub(crate) fn read_body(flash: &FlashArray, block: u32, header: &Header, key: &VolumeKey) -> Option<Vec<u8>> {
    let g = flash.geometry();
    let ps = g.page_size as usize;
    if header.body_len as usize != body_len(g) || header.body_pages as usize != body_pages(g) {
        return None;
    }
    let mut body = Vec::with_capacity(header.body_pages as usize * ps);
    for i in 0..header.body_pages {
        let addr = PhysPageAddr::new(block, 1 + i);
        let view = flash.read_page(addr).ok()?;
        body.extend(decrypt_page(key, PageTweak::new(addr, header.seq), view.data, ps).ok()?);
    }
    body.truncate(header.body_len as usize);
    (body_mac(key, header.seq, &body) == header.body_mac).then_some(body)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{derive_key, KdfParams, KeyRole};

    fn header(seq: u64) -> Header {
        Header {
            geometry: FlashGeometry::new(8, 4, 512, 64, 100),
            strategy: Strategy::DummyRandom,
            clean: true,
            salt: [7; SALT_LEN],
            kdf_iterations: 10,
            seq,
            map_slots: 2,
            public_capacity: 10,
            hidden_capacity: 3,
            body_pages: 0,
            body_len: 0,
            body_mac: [0; 16],
        }
    }

    #[test]
    fn header_round_trip_and_checksum() {
        let h = header(5);
        let mut page = h.encode();
        assert_eq!(Header::decode(&page), Some(h));
        page[72] ^= 1;
        assert_eq!(Header::decode(&page), None);
    }

    #[test]
    fn newest_wins_and_body_authenticates() {
        let g = FlashGeometry::new(8, 4, 512, 64, 100);
        let mut flash = FlashArray::new(g).unwrap();
        let key = derive_key("pw", &[1; 32], KdfParams { iterations: 10 }, KeyRole::Decoy).unwrap();
        let body = vec![0xA5u8; body_len(&g)];
        write(&mut flash, 0, header(1), Some((&key, &body))).unwrap();
        write(&mut flash, 1, header(2), None).unwrap();
        let (b, h) = read_newest(&flash).unwrap();
        assert_eq!((b, h.seq), (1, 2));
        let (_, h0) = SUPERBLOCK_BLOCKS
            .iter()
            .map(|&b| (b, Header::decode(flash.read_page(PhysPageAddr::new(b, 0)).unwrap().data).unwrap()))
            .find(|(b, _)| *b == 0)
            .unwrap();
        assert_eq!(read_body(&flash, 0, &h0, &key), Some(body));
        let other = derive_key("other", &[1; 32], KdfParams { iterations: 10 }, KeyRole::Decoy).unwrap();
        assert_eq!(read_body(&flash, 0, &h0, &other), None);
    }
}
