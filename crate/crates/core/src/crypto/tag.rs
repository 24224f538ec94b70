//! OOB page tags, recognizable only under the key that wrote them.
//!
//! Layout over the whole OOB area of `n` bytes:
//!
//! ```text
//! [0, 16)   code   = HMAC-SHA256(tag-mac subkey, payload)[..16]
//! [16, n)   cipher = payload XOR XChaCha20(tag-enc subkey, nonce = code || 0^8)
//!
//! payload (n - 16 bytes): lba u64 LE | version u64 LE | class u8 | zero padding
//! ```
//!
//! The code doubles as the synthetic IV, so the encoding is deterministic;
//! a (lba, version, class) triple is written at most once per key.

use chacha20::cipher::{KeyIvInit, StreamCipher};
use chacha20::XChaCha20;
use hmac::Mac;

use super::{CryptoError, Result, VolumeKey};

pub const TAG_MAC_LEN: usize = 16;
pub const TAG_PAYLOAD_LEN: usize = 17;
pub const TAG_MIN_LEN: usize = TAG_MAC_LEN + TAG_PAYLOAD_LEN;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum TagClass {
    PublicData = 1,
    HiddenData = 2,
    MapCommit = 3,
}

impl TagClass {
    fn from_byte(b: u8) -> Option<Self> {
        match b {
            1 => Some(TagClass::PublicData),
            2 => Some(TagClass::HiddenData),
            3 => Some(TagClass::MapCommit),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TagFields {
    pub lba: u64,
    pub version: u64,
    pub class: TagClass,
}

fn keystream(key: &VolumeKey, code: &[u8], buf: &mut [u8]) {
    let mut nonce = [0u8; 24];
    nonce[..TAG_MAC_LEN].copy_from_slice(code);
    let mut cipher = XChaCha20::new(&key.tag_key.into(), &nonce.into());
    cipher.apply_keystream(buf);
}

fn code(key: &VolumeKey, payload: &[u8]) -> hmac::Hmac<sha2::Sha256> {
    let mut mac = key.tag_mac.clone();
    mac.update(payload);
    mac
}

pub fn tag_encode(key: &VolumeKey, fields: TagFields, oob_size: usize) -> Result<Vec<u8>> {
    if oob_size < TAG_MIN_LEN {
        return Err(CryptoError::TagTooLarge { needed: TAG_MIN_LEN, available: oob_size });
    }
    let mut payload = vec![0u8; oob_size - TAG_MAC_LEN];
    payload[..8].copy_from_slice(&fields.lba.to_le_bytes());
    payload[8..16].copy_from_slice(&fields.version.to_le_bytes());
    payload[16] = fields.class as u8;
    let tag: [u8; TAG_MAC_LEN] = code(key, &payload).finalize().into_bytes()[..TAG_MAC_LEN].try_into().unwrap();
    keystream(key, &tag, &mut payload);
    let mut out = Vec::with_capacity(oob_size);
    out.extend_from_slice(&tag);
    out.extend_from_slice(&payload);
    Ok(out)
}

/// Returns `None` when the bytes were not produced by `key`.
pub fn tag_decode(key: &VolumeKey, oob: &[u8]) -> Option<TagFields> {
    if oob.len() < TAG_MIN_LEN {
        return None;
    }
    let (tag, body) = oob.split_at(TAG_MAC_LEN);
    let mut payload = body.to_vec();
    keystream(key, tag, &mut payload);
    code(key, &payload).verify_truncated_left(tag).ok()?;
    Some(TagFields {
        lba: u64::from_le_bytes(payload[..8].try_into().unwrap()),
        version: u64::from_le_bytes(payload[8..16].try_into().unwrap()),
        class: TagClass::from_byte(payload[16])?,
    })
}
