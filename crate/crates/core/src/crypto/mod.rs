//! Keys and cipher plumbing for the deniable FTL.
//!
//! Primitives:
//! - password KDF: PBKDF2-HMAC-SHA256 with a configurable iteration count,
//!   followed by HMAC-SHA256 subkey expansion per purpose;
//! - page encryption: XChaCha20 keystream, nonce = (block, page, version),
//!   so ciphertext length equals plaintext length;
//! - OOB tags: deterministic SIV-style record, see [`tag`];
//! - map slot locations: HMAC-SHA256 PRF over (label, index, attempt).

mod rng;
mod slots;
mod tag;

pub use rng::{random_page, substream, Purpose, SimRng};
pub use slots::{map_slot_location, LocationSequence, MapLabel};
pub use tag::{tag_decode, tag_encode, TagClass, TagFields, TAG_MAC_LEN, TAG_MIN_LEN, TAG_PAYLOAD_LEN};

use chacha20::cipher::{KeyIvInit, StreamCipher};
use chacha20::XChaCha20;
use hmac::{Hmac, Mac};
use sha2::Sha256;
use thiserror::Error;

use crate::nand::PhysPageAddr;

pub(crate) type HmacSha256 = Hmac<Sha256>;

pub const KEY_LEN: usize = 32;
pub const MIN_SALT_LEN: usize = 16;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("empty password")]
    EmptyPassword,
    #[error("salt must be at least {MIN_SALT_LEN} bytes")]
    SaltTooShort,
    #[error("buffer length {actual} does not match expected {expected}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("tag needs {needed} bytes but OOB holds {available}")]
    TagTooLarge { needed: usize, available: usize },
    #[error("slot index {index} out of range ({count} slots)")]
    SlotOutOfRange { index: u32, count: u32 },
    #[error("location range holds {available} blocks, {needed} required")]
    RangeTooSmall { needed: u32, available: u32 },
}

pub type Result<T> = std::result::Result<T, CryptoError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KeyRole {
    Decoy,
    True,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KdfParams {
    pub iterations: u32,
}

impl Default for KdfParams {
    fn default() -> Self {
        Self { iterations: 10_000 }
    }
}

/// Password-derived volume key. Debug output never shows key bytes.
#[derive(Clone)]
pub struct VolumeKey {
    material: [u8; KEY_LEN],
    role: KeyRole,
    page_key: [u8; KEY_LEN],
    tag_key: [u8; KEY_LEN],
    mac: HmacSha256,
    tag_mac: HmacSha256,
    slot_prf: HmacSha256,
}

impl std::fmt::Debug for VolumeKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("VolumeKey").field("role", &self.role).finish_non_exhaustive()
    }
}

impl PartialEq for VolumeKey {
    fn eq(&self, other: &Self) -> bool {
        self.material == other.material && self.role == other.role
    }
}

impl Drop for VolumeKey {
    fn drop(&mut self) {
        for buf in [&mut self.material, &mut self.page_key, &mut self.tag_key] {
            for b in buf.iter_mut() {
                // SAFETY: b is a valid, aligned &mut u8.
                unsafe { std::ptr::write_volatile(b, 0) };
            }
        }
    }
}

fn subkey(material: &[u8; KEY_LEN], label: &[u8]) -> [u8; KEY_LEN] {
    let mut mac = HmacSha256::new_from_slice(material).expect("hmac accepts any key length");
    mac.update(b"pdeftl/v1/");
    mac.update(label);
    mac.finalize().into_bytes().into()
}

impl VolumeKey {
    fn from_material(material: [u8; KEY_LEN], role: KeyRole) -> Self {
        let keyed = |label: &[u8]| HmacSha256::new_from_slice(&subkey(&material, label)).expect("hmac key");
        Self {
            role,
            page_key: subkey(&material, b"page"),
            tag_key: subkey(&material, b"tag-enc"),
            mac: keyed(b"mac"),
            tag_mac: keyed(b"tag-mac"),
            slot_prf: keyed(b"slot"),
            material,
        }
    }

    pub fn role(&self) -> KeyRole {
        self.role
    }

    /// Stable public fingerprint, safe to log. Not invertible to the key.
    pub fn fingerprint(&self) -> [u8; 8] {
        let mut mac = self.mac.clone();
        mac.update(b"fingerprint");
        mac.finalize().into_bytes()[..8].try_into().unwrap()
    }

    /// Truncated HMAC-SHA256 over `data` under this key's MAC subkey.
    pub fn mac16(&self, domain: &[u8], data: &[u8]) -> [u8; 16] {
        let mut mac = self.mac.clone();
        mac.update(domain);
        mac.update(data);
        mac.finalize().into_bytes()[..16].try_into().unwrap()
    }

    pub(crate) fn slot_prf(&self) -> &HmacSha256 {
        &self.slot_prf
    }

    #[cfg(test)]
    pub(crate) fn material(&self) -> &[u8; KEY_LEN] {
        &self.material
    }
}

/// Derives a volume key from a password and a plaintext salt.
pub fn derive_key(password: &str, salt: &[u8], params: KdfParams, role: KeyRole) -> Result<VolumeKey> {
    if password.is_empty() {
        return Err(CryptoError::EmptyPassword);
    }
    if salt.len() < MIN_SALT_LEN {
        return Err(CryptoError::SaltTooShort);
    }
    let mut material = [0u8; KEY_LEN];
    pbkdf2::pbkdf2_hmac::<Sha256>(password.as_bytes(), salt, params.iterations.max(1), &mut material);
    Ok(VolumeKey::from_material(material, role))
}

/// Per-page tweak: physical location plus a write version that is never
/// reused under one key at one address.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PageTweak {
    pub addr: PhysPageAddr,
    pub version: u64,
}

impl PageTweak {
    pub fn new(addr: PhysPageAddr, version: u64) -> Self {
        Self { addr, version }
    }

    fn nonce(&self) -> [u8; 24] {
        let mut n = [0u8; 24];
        n[..4].copy_from_slice(&self.addr.block.to_le_bytes());
        n[4..8].copy_from_slice(&self.addr.page.to_le_bytes());
        n[8..16].copy_from_slice(&self.version.to_le_bytes());
        n[16..].copy_from_slice(b"pdftlpg1");
        n
    }
}

fn apply_page_keystream(key: &VolumeKey, tweak: PageTweak, buf: &mut [u8]) {
    let mut cipher = XChaCha20::new(&key.page_key.into(), &tweak.nonce().into());
    cipher.apply_keystream(buf);
}

/// Encrypts one page. Output has the input's length.
pub fn encrypt_page(key: &VolumeKey, tweak: PageTweak, plaintext: &[u8], page_size: usize) -> Result<Vec<u8>> {
    if plaintext.len() != page_size {
        return Err(CryptoError::LengthMismatch { expected: page_size, actual: plaintext.len() });
    }
    let mut out = plaintext.to_vec();
    apply_page_keystream(key, tweak, &mut out);
    Ok(out)
}

pub fn decrypt_page(key: &VolumeKey, tweak: PageTweak, ciphertext: &[u8], page_size: usize) -> Result<Vec<u8>> {
    // Keystream XOR is its own inverse.
    encrypt_page(key, tweak, ciphertext, page_size)
}

/// Shannon entropy of the byte histogram, in bits per byte.
pub fn byte_entropy(data: &[u8]) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let mut counts = [0u64; 256];
    for &b in data {
        counts[b as usize] += 1;
    }
    let n = data.len() as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    const SALT: &[u8] = b"0123456789abcdef";

    fn key(pw: &str) -> VolumeKey {
        derive_key(pw, SALT, KdfParams { iterations: 10 }, KeyRole::Decoy).unwrap()
    }

    #[test]
    fn derivation_is_deterministic() {
        assert_eq!(key("hunter2").material(), key("hunter2").material());
    }

    #[test]
    fn salt_separates_keys() {
        let p = KdfParams { iterations: 10 };
        let a = derive_key("a", b"salt-one-16bytes", p, KeyRole::Decoy).unwrap();
        let b = derive_key("a", b"salt-two-16bytes", p, KeyRole::Decoy).unwrap();
        assert_ne!(a.material(), b.material());
        assert_ne!(key("a").material(), key("b").material());
    }

    #[test]
    fn empty_password_and_short_salt() {
        let p = KdfParams::default();
        assert_eq!(derive_key("", SALT, p, KeyRole::True).unwrap_err(), CryptoError::EmptyPassword);
        assert_eq!(derive_key("x", b"short", p, KeyRole::True).unwrap_err(), CryptoError::SaltTooShort);
    }

    #[test]
    fn debug_hides_material() {
        let k = key("secret-password");
        let shown = format!("{k:?}");
        assert!(!shown.contains("secret"));
        assert!(!shown.contains(&format!("{:?}", k.material())));
    }

    #[test]
    fn page_round_trip_and_tweak_separation() {
        let k = key("pw");
        let pt = vec![0u8; 2048];
        let t1 = PageTweak::new(PhysPageAddr::new(3, 4), 1);
        let t2 = PageTweak::new(PhysPageAddr::new(3, 4), 2);
        let c1 = encrypt_page(&k, t1, &pt, 2048).unwrap();
        let c2 = encrypt_page(&k, t2, &pt, 2048).unwrap();
        assert_ne!(c1, c2);
        assert_eq!(c1.len(), 2048);
        assert_eq!(decrypt_page(&k, t1, &c1, 2048).unwrap(), pt);
        assert_eq!(
            encrypt_page(&k, t1, &pt[..10], 2048).unwrap_err(),
            CryptoError::LengthMismatch { expected: 2048, actual: 10 }
        );
    }

    #[test]
    fn encrypted_zero_pages_have_high_entropy() {
        let k = key("pw");
        let mut corpus = Vec::with_capacity(1000 * 2048);
        for i in 0..1000u32 {
            let t = PageTweak::new(PhysPageAddr::new(i / 64, i % 64), i as u64);
            corpus.extend(encrypt_page(&k, t, &[0u8; 2048], 2048).unwrap());
        }
        assert!(byte_entropy(&corpus) > 7.9);
    }

    #[test]
    fn entropy_of_constant_is_zero() {
        assert_eq!(byte_entropy(&[0xFF; 4096]), 0.0);
        assert_eq!(byte_entropy(&[]), 0.0);
        let all: Vec<u8> = (0..=255).collect();
        assert!((byte_entropy(&all) - 8.0).abs() < 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn encrypt_decrypt_identity(data in proptest::collection::vec(any::<u8>(), 512),
                                        block in 0u32..1024, page in 0u32..256, version: u64) {
                let k = key("prop");
                let t = PageTweak::new(PhysPageAddr::new(block, page), version);
                let c = encrypt_page(&k, t, &data, 512).unwrap();
                prop_assert_eq!(decrypt_page(&k, t, &c, 512).unwrap(), data);
            }
        }
    }
}
