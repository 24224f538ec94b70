//! Bit-exact raw flash images and their diffs.
//!
//! File layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//! 0       8     magic "PDFLSNAP"
//! 8       4     format version (1)
//! 12      4     num_blocks
//! 16      4     pages_per_block
//! 20      4     page_size
//! 24      4     oob_size
//! 28      4     pe_cycle_limit
//! 32      4     flags (bit 0: wear/bad sidecar present)
//! 36      ...   per page, block-major: 1 state byte (0 erased, 1 programmed),
//!               page_size data bytes, oob_size OOB bytes
//! ...     4*B   wear counters, u32 per block          (sidecar only)
//! ...     B/8   bad-block bitmap, LSB-first, rounded up (sidecar only)
//! ```

use super::{FlashArray, FlashGeometry, NandError, PageState, PageView, PhysPageAddr, Result};

pub const SNAPSHOT_MAGIC: &[u8; 8] = b"PDFLSNAP";
pub const SNAPSHOT_VERSION: u32 = 1;
pub const SNAPSHOT_HEADER_LEN: usize = 36;
const FLAG_SIDECAR: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SnapshotOptions {
    /// Append the wear counters and bad-block bitmap.
    pub sidecar: bool,
}

impl Default for SnapshotOptions {
    fn default() -> Self {
        Self { sidecar: true }
    }
}

/// Serialized image of a [`FlashArray`]. Equal chip states serialize to
/// equal bytes.
#[derive(Clone, PartialEq, Eq)]
pub struct FlashSnapshot {
    geometry: FlashGeometry,
    sidecar: bool,
    bytes: Vec<u8>,
}

impl std::fmt::Debug for FlashSnapshot {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FlashSnapshot")
            .field("geometry", &self.geometry)
            .field("sidecar", &self.sidecar)
            .field("len", &self.bytes.len())
            .finish()
    }
}

fn record_len(g: &FlashGeometry) -> usize {
    1 + g.page_size as usize + g.oob_size as usize
}

fn body_len(g: &FlashGeometry, sidecar: bool) -> usize {
    let mut len = g.total_pages() * record_len(g);
    if sidecar {
        len += 4 * g.num_blocks as usize + (g.num_blocks as usize).div_ceil(8);
    }
    len
}

impl FlashSnapshot {
    pub(crate) fn capture(flash: &FlashArray, options: SnapshotOptions) -> Self {
        let g = *flash.geometry();
        let mut bytes = Vec::with_capacity(SNAPSHOT_HEADER_LEN + body_len(&g, options.sidecar));
        bytes.extend_from_slice(SNAPSHOT_MAGIC);
        bytes.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
        for v in [g.num_blocks, g.pages_per_block, g.page_size, g.oob_size, g.pe_cycle_limit] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let flags = if options.sidecar { FLAG_SIDECAR } else { 0 };
        bytes.extend_from_slice(&flags.to_le_bytes());
        for idx in 0..g.total_pages() {
            let page = flash.view(idx);
            bytes.push(page.state.to_byte());
            bytes.extend_from_slice(page.data);
            bytes.extend_from_slice(page.oob);
        }
        if options.sidecar {
            for w in flash.wear() {
                bytes.extend_from_slice(&w.to_le_bytes());
            }
            let mut bitmap = vec![0u8; (g.num_blocks as usize).div_ceil(8)];
            for b in flash.bad_blocks() {
                bitmap[b as usize / 8] |= 1 << (b % 8);
            }
            bytes.extend_from_slice(&bitmap);
        }
        Self {
            geometry: g,
            sidecar: options.sidecar,
            bytes,
        }
    }

    /// Parses and validates a serialized snapshot.
    pub fn from_bytes(bytes: Vec<u8>) -> Result<Self> {
        if bytes.len() < SNAPSHOT_HEADER_LEN {
            return Err(NandError::MalformedSnapshot("truncated header"));
        }
        if &bytes[..8] != SNAPSHOT_MAGIC {
            return Err(NandError::MalformedSnapshot("bad magic"));
        }
        let word = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
        if word(8) != SNAPSHOT_VERSION {
            return Err(NandError::MalformedSnapshot("unsupported version"));
        }
        let geometry = FlashGeometry::new(word(12), word(16), word(20), word(24), word(28));
        geometry
            .validate_relaxed()
            .map_err(|_| NandError::MalformedSnapshot("invalid geometry"))?;
        let flags = word(32);
        if flags & !FLAG_SIDECAR != 0 {
            return Err(NandError::MalformedSnapshot("unknown flags"));
        }
        let sidecar = flags & FLAG_SIDECAR != 0;
        if bytes.len() != SNAPSHOT_HEADER_LEN + body_len(&geometry, sidecar) {
            return Err(NandError::MalformedSnapshot("length does not match geometry"));
        }
        let rec = record_len(&geometry);
        for idx in 0..geometry.total_pages() {
            if PageState::from_byte(bytes[SNAPSHOT_HEADER_LEN + idx * rec]).is_none() {
                return Err(NandError::MalformedSnapshot("bad page state byte"));
            }
        }
        Ok(Self { geometry, sidecar, bytes })
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }

    pub fn geometry(&self) -> &FlashGeometry {
        &self.geometry
    }

    pub fn has_sidecar(&self) -> bool {
        self.sidecar
    }

    fn record(&self, idx: usize) -> &[u8] {
        let rec = record_len(&self.geometry);
        let start = SNAPSHOT_HEADER_LEN + idx * rec;
        &self.bytes[start..start + rec]
    }

    pub fn page_at(&self, idx: usize) -> PageView<'_> {
        let rec = self.record(idx);
        let ps = self.geometry.page_size as usize;
        PageView {
            state: PageState::from_byte(rec[0]).expect("validated state byte"),
            data: &rec[1..1 + ps],
            oob: &rec[1 + ps..],
        }
    }

    pub fn page(&self, addr: PhysPageAddr) -> Result<PageView<'_>> {
        if !self.geometry.contains(addr) {
            return Err(NandError::OutOfRange);
        }
        Ok(self.page_at(self.geometry.index_of(addr)))
    }

    fn sidecar_start(&self) -> usize {
        SNAPSHOT_HEADER_LEN + self.geometry.total_pages() * record_len(&self.geometry)
    }

    pub fn wear(&self) -> Option<Vec<u32>> {
        if !self.sidecar {
            return None;
        }
        let start = self.sidecar_start();
        let n = self.geometry.num_blocks as usize;
        Some(
            self.bytes[start..start + 4 * n]
                .chunks_exact(4)
                .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        )
    }

    pub fn bad(&self) -> Option<Vec<bool>> {
        if !self.sidecar {
            return None;
        }
        let n = self.geometry.num_blocks as usize;
        let start = self.sidecar_start() + 4 * n;
        Some((0..n).map(|b| self.bytes[start + b / 8] & (1 << (b % 8)) != 0).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ChangeClass {
    /// Erased before, programmed after.
    Programmed,
    /// Programmed before, erased after.
    Erased,
    /// Programmed in both with different bytes (an erase plus a reprogram).
    ContentChanged,
}

impl ChangeClass {
    pub fn as_str(self) -> &'static str {
        match self {
            ChangeClass::Programmed => "programmed",
            ChangeClass::Erased => "erased",
            ChangeClass::ContentChanged => "content-changed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PageChange {
    pub addr: PhysPageAddr,
    pub class: ChangeClass,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiffReport {
    pub geometry: FlashGeometry,
    /// Changed pages in address order.
    pub changes: Vec<PageChange>,
    /// Changed-page count per block.
    pub per_block: Vec<u32>,
    /// Blocks whose wear counter differs (only when both sides carry the sidecar).
    pub wear_changed: Vec<u32>,
}

impl DiffReport {
    pub fn is_empty(&self) -> bool {
        self.changes.is_empty() && self.wear_changed.is_empty()
    }

    pub fn count(&self, class: ChangeClass) -> usize {
        self.changes.iter().filter(|c| c.class == class).count()
    }

    /// CSV rows `block,page,class`, header first.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("block,page,class\n");
        for c in &self.changes {
            out.push_str(&format!("{},{},{}\n", c.addr.block, c.addr.page, c.class.as_str()));
        }
        out
    }
}

pub fn diff_snapshots(a: &FlashSnapshot, b: &FlashSnapshot) -> Result<DiffReport> {
    if a.geometry != b.geometry {
        return Err(NandError::GeometryMismatch);
    }
    let g = a.geometry;
    let mut changes = Vec::new();
    let mut per_block = vec![0u32; g.num_blocks as usize];
    for idx in 0..g.total_pages() {
        let (ra, rb) = (a.record(idx), b.record(idx));
        if ra == rb {
            continue;
        }
        let class = match (ra[0], rb[0]) {
            (0, 1) => ChangeClass::Programmed,
            (1, 0) => ChangeClass::Erased,
            (1, 1) => ChangeClass::ContentChanged,
            // Two erased records always hold identical fill bytes.
            _ => unreachable!("erased records differ"),
        };
        let addr = g.addr_of(idx);
        per_block[addr.block as usize] += 1;
        changes.push(PageChange { addr, class });
    }
    let wear_changed = match (a.wear(), b.wear()) {
        (Some(wa), Some(wb)) => (0..g.num_blocks).filter(|&i| wa[i as usize] != wb[i as usize]).collect(),
        _ => Vec::new(),
    };
    Ok(DiffReport {
        geometry: g,
        changes,
        per_block,
        wear_changed,
    })
}
