//! Raw NAND flash model.
//!
//! Pages are programmed once per erase cycle and erased a whole block at a
//! time. Erased cells read back as `0xFF` in both the data and OOB areas.
//! Programming order inside a block is not enforced: random placement needs
//! to program any erased page of a block, which real parts that require
//! in-order programming would reject.

mod snapshot;

pub use snapshot::{diff_snapshots, ChangeClass, DiffReport, FlashSnapshot, PageChange, SnapshotOptions};

use thiserror::Error;

/// Fill value of an erased cell.
pub const ERASED_BYTE: u8 = 0xFF;

/// Page sizes accepted by strict geometry validation.
pub const STANDARD_PAGE_SIZES: [u32; 3] = [512, 2048, 4096];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NandError {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(&'static str),
    #[error("address out of range")]
    OutOfRange,
    #[error("page {0} is not erased")]
    PageNotErased(PhysPageAddr),
    #[error("block {0} is bad")]
    BadBlock(u32),
    #[error("buffer length {actual} does not match expected {expected}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("snapshot geometries differ")]
    GeometryMismatch,
    #[error("malformed snapshot: {0}")]
    MalformedSnapshot(&'static str),
}

pub type Result<T> = std::result::Result<T, NandError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FlashGeometry {
    pub num_blocks: u32,
    pub pages_per_block: u32,
    pub page_size: u32,
    pub oob_size: u32,
    pub pe_cycle_limit: u32,
}

impl Default for FlashGeometry {
    /// 256 blocks of 64 pages of 2 KiB plus 64 B OOB (32 MiB), 10K P/E cycles.
    fn default() -> Self {
        Self {
            num_blocks: 256,
            pages_per_block: 64,
            page_size: 2048,
            oob_size: 64,
            pe_cycle_limit: 10_000,
        }
    }
}

impl FlashGeometry {
    pub fn new(num_blocks: u32, pages_per_block: u32, page_size: u32, oob_size: u32, pe_cycle_limit: u32) -> Self {
        Self {
            num_blocks,
            pages_per_block,
            page_size,
            oob_size,
            pe_cycle_limit,
        }
    }

    /// Strict validation: every field positive and a standard page size.
    pub fn validate(&self) -> Result<()> {
        self.validate_relaxed()?;
        if !STANDARD_PAGE_SIZES.contains(&self.page_size) {
            return Err(NandError::InvalidGeometry("page_size must be 512, 2048 or 4096"));
        }
        Ok(())
    }

    /// Like [`validate`](Self::validate) but accepts any positive page size.
    pub fn validate_relaxed(&self) -> Result<()> {
        if self.num_blocks == 0 {
            return Err(NandError::InvalidGeometry("num_blocks is zero"));
        }
        if self.pages_per_block == 0 {
            return Err(NandError::InvalidGeometry("pages_per_block is zero"));
        }
        if self.page_size == 0 {
            return Err(NandError::InvalidGeometry("page_size is zero"));
        }
        if self.oob_size == 0 {
            return Err(NandError::InvalidGeometry("oob_size is zero"));
        }
        if self.pe_cycle_limit == 0 {
            return Err(NandError::InvalidGeometry("pe_cycle_limit is zero"));
        }
        if (self.num_blocks as u64) * (self.pages_per_block as u64) > u32::MAX as u64 {
            return Err(NandError::InvalidGeometry("too many pages"));
        }
        Ok(())
    }

    pub fn total_pages(&self) -> usize {
        self.num_blocks as usize * self.pages_per_block as usize
    }

    pub fn contains(&self, addr: PhysPageAddr) -> bool {
        addr.block < self.num_blocks && addr.page < self.pages_per_block
    }

    /// Linear page index in block-major order.
    pub fn index_of(&self, addr: PhysPageAddr) -> usize {
        addr.block as usize * self.pages_per_block as usize + addr.page as usize
    }

    pub fn addr_of(&self, index: usize) -> PhysPageAddr {
        let ppb = self.pages_per_block as usize;
        PhysPageAddr::new((index / ppb) as u32, (index % ppb) as u32)
    }

    /// Page indices of one block.
    pub fn block_pages(&self, block: u32) -> std::ops::Range<usize> {
        let ppb = self.pages_per_block as usize;
        let start = block as usize * ppb;
        start..start + ppb
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PhysPageAddr {
    pub block: u32,
    pub page: u32,
}

impl PhysPageAddr {
    pub const fn new(block: u32, page: u32) -> Self {
        Self { block, page }
    }
}

impl std::fmt::Display for PhysPageAddr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.block, self.page)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PageState {
    Erased,
    Programmed,
}

impl PageState {
    pub(crate) fn to_byte(self) -> u8 {
        match self {
            PageState::Erased => 0,
            PageState::Programmed => 1,
        }
    }

    pub(crate) fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(PageState::Erased),
            1 => Some(PageState::Programmed),
            _ => None,
        }
    }
}

/// Borrowed view of one page cell.
#[derive(Debug, Clone, Copy)]
pub struct PageView<'a> {
    pub state: PageState,
    pub data: &'a [u8],
    pub oob: &'a [u8],
}

/// Operation counters kept by the chip itself.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FlashCounters {
    pub programs: u64,
    pub erases: u64,
    pub reads: u64,
}

/// A simulated NAND chip. Single writer; callers serialize mutation.
#[derive(Clone)]
pub struct FlashArray {
    geometry: FlashGeometry,
    programmed: Vec<bool>,
    data: Vec<u8>,
    oob: Vec<u8>,
    wear: Vec<u32>,
    bad: Vec<bool>,
    counters: FlashCounters,
}

impl std::fmt::Debug for FlashArray {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FlashArray")
            .field("geometry", &self.geometry)
            .field("counters", &self.counters)
            .finish_non_exhaustive()
    }
}

impl FlashArray {
    /// Creates a fully erased chip. Uses strict geometry validation.
    pub fn new(geometry: FlashGeometry) -> Result<Self> {
        geometry.validate()?;
        Ok(Self::alloc(geometry))
    }

    /// Creates a chip with any positive page size.
    pub fn new_relaxed(geometry: FlashGeometry) -> Result<Self> {
        geometry.validate_relaxed()?;
        Ok(Self::alloc(geometry))
    }

    fn alloc(geometry: FlashGeometry) -> Self {
        let pages = geometry.total_pages();
        Self {
            geometry,
            programmed: vec![false; pages],
            data: vec![ERASED_BYTE; pages * geometry.page_size as usize],
            oob: vec![ERASED_BYTE; pages * geometry.oob_size as usize],
            wear: vec![0; geometry.num_blocks as usize],
            bad: vec![false; geometry.num_blocks as usize],
            counters: FlashCounters::default(),
        }
    }

    pub fn geometry(&self) -> &FlashGeometry {
        &self.geometry
    }

    pub fn counters(&self) -> FlashCounters {
        self.counters
    }

    /// Restores operation counters kept outside the chip image.
    pub fn set_counters(&mut self, counters: FlashCounters) {
        self.counters = counters;
    }

    pub fn wear(&self) -> &[u32] {
        &self.wear
    }

    pub fn is_bad(&self, block: u32) -> bool {
        self.bad.get(block as usize).copied().unwrap_or(false)
    }

    pub fn bad_blocks(&self) -> impl Iterator<Item = u32> + '_ {
        self.bad.iter().enumerate().filter(|(_, b)| **b).map(|(i, _)| i as u32)
    }

    fn check_addr(&self, addr: PhysPageAddr) -> Result<usize> {
        if !self.geometry.contains(addr) {
            return Err(NandError::OutOfRange);
        }
        Ok(self.geometry.index_of(addr))
    }

    pub fn program_page(&mut self, addr: PhysPageAddr, data: &[u8], oob: &[u8]) -> Result<()> {
        let idx = self.check_addr(addr)?;
        let ps = self.geometry.page_size as usize;
        let os = self.geometry.oob_size as usize;
        if data.len() != ps {
            return Err(NandError::LengthMismatch { expected: ps, actual: data.len() });
        }
        if oob.len() != os {
            return Err(NandError::LengthMismatch { expected: os, actual: oob.len() });
        }
        if self.bad[addr.block as usize] {
            return Err(NandError::BadBlock(addr.block));
        }
        if self.programmed[idx] {
            return Err(NandError::PageNotErased(addr));
        }
        self.programmed[idx] = true;
        self.data[idx * ps..(idx + 1) * ps].copy_from_slice(data);
        self.oob[idx * os..(idx + 1) * os].copy_from_slice(oob);
        self.counters.programs += 1;
        Ok(())
    }

    /// Pure read. Does not touch the read counter, so snapshots and
    /// counters are unaffected; use [`read_page_counted`](Self::read_page_counted)
    /// to account for reads.
    pub fn read_page(&self, addr: PhysPageAddr) -> Result<PageView<'_>> {
        let idx = self.check_addr(addr)?;
        Ok(self.view(idx))
    }

    pub fn read_page_counted(&mut self, addr: PhysPageAddr) -> Result<PageView<'_>> {
        let idx = self.check_addr(addr)?;
        self.counters.reads += 1;
        Ok(self.view(idx))
    }

    pub(crate) fn view(&self, idx: usize) -> PageView<'_> {
        let ps = self.geometry.page_size as usize;
        let os = self.geometry.oob_size as usize;
        PageView {
            state: if self.programmed[idx] { PageState::Programmed } else { PageState::Erased },
            data: &self.data[idx * ps..(idx + 1) * ps],
            oob: &self.oob[idx * os..(idx + 1) * os],
        }
    }

    pub fn page_state(&self, addr: PhysPageAddr) -> Result<PageState> {
        let idx = self.check_addr(addr)?;
        Ok(self.state_at(idx))
    }

    pub(crate) fn state_at(&self, idx: usize) -> PageState {
        if self.programmed[idx] {
            PageState::Programmed
        } else {
            PageState::Erased
        }
    }

    /// Erases a block. Once the block's wear reaches the P/E limit it is
    /// retired to the bad set after this erase completes.
    pub fn erase_block(&mut self, block: u32) -> Result<()> {
        if block >= self.geometry.num_blocks {
            return Err(NandError::OutOfRange);
        }
        let b = block as usize;
        if self.bad[b] {
            return Err(NandError::BadBlock(block));
        }
        let ps = self.geometry.page_size as usize;
        let os = self.geometry.oob_size as usize;
        let pages = self.geometry.block_pages(block);
        self.programmed[pages.clone()].fill(false);
        self.data[pages.start * ps..pages.end * ps].fill(ERASED_BYTE);
        self.oob[pages.start * os..pages.end * os].fill(ERASED_BYTE);
        self.wear[b] += 1;
        if self.wear[b] >= self.geometry.pe_cycle_limit {
            self.bad[b] = true;
        }
        self.counters.erases += 1;
        Ok(())
    }

    pub fn take_snapshot(&self) -> FlashSnapshot {
        FlashSnapshot::capture(self, SnapshotOptions::default())
    }

    pub fn take_snapshot_with(&self, options: SnapshotOptions) -> FlashSnapshot {
        FlashSnapshot::capture(self, options)
    }

    /// Rebuilds a chip from a snapshot. Without the wear/bad sidecar the
    /// restored chip starts with zero wear and no bad blocks.
    pub fn from_snapshot(snapshot: &FlashSnapshot) -> Result<Self> {
        let geometry = *snapshot.geometry();
        geometry.validate_relaxed()?;
        let mut flash = Self::alloc(geometry);
        let ps = geometry.page_size as usize;
        let os = geometry.oob_size as usize;
        for idx in 0..geometry.total_pages() {
            let page = snapshot.page_at(idx);
            flash.programmed[idx] = page.state == PageState::Programmed;
            flash.data[idx * ps..(idx + 1) * ps].copy_from_slice(page.data);
            flash.oob[idx * os..(idx + 1) * os].copy_from_slice(page.oob);
        }
        if let Some(wear) = snapshot.wear() {
            flash.wear = wear;
        }
        if let Some(bad) = snapshot.bad() {
            flash.bad = bad;
        }
        Ok(flash)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> FlashArray {
        FlashArray::new(FlashGeometry::new(4, 4, 512, 16, 3)).unwrap()
    }

    #[test]
    fn default_geometry_has_16384_erased_pages() {
        let flash = FlashArray::new(FlashGeometry::new(256, 64, 2048, 64, 10_000)).unwrap();
        assert_eq!(flash.geometry().total_pages(), 16384);
        for i in 0..16384 {
            assert_eq!(flash.state_at(i), PageState::Erased);
        }
        assert!(flash.wear().iter().all(|w| *w == 0));
        assert_eq!(flash.bad_blocks().count(), 0);
    }

    #[test]
    fn minimal_geometry() {
        let flash = FlashArray::new(FlashGeometry::new(1, 1, 512, 16, 10)).unwrap();
        assert_eq!(flash.geometry().total_pages(), 1);
        assert_eq!(flash.page_state(PhysPageAddr::new(0, 0)).unwrap(), PageState::Erased);
    }

    #[test]
    fn zero_field_rejected() {
        let err = FlashArray::new(FlashGeometry::new(0, 64, 2048, 64, 10_000)).unwrap_err();
        assert!(matches!(err, NandError::InvalidGeometry(_)));
        assert!(FlashArray::new(FlashGeometry::new(4, 4, 1000, 16, 10)).is_err());
        assert!(FlashArray::new_relaxed(FlashGeometry::new(4, 4, 1000, 16, 10)).is_ok());
    }

    #[test]
    fn program_then_read() {
        let mut flash = small();
        let addr = PhysPageAddr::new(0, 0);
        let data = vec![0x5A; 512];
        let oob = vec![0x11; 16];
        flash.program_page(addr, &data, &oob).unwrap();
        let page = flash.read_page(addr).unwrap();
        assert_eq!(page.state, PageState::Programmed);
        assert_eq!(page.data, &data[..]);
        assert_eq!(page.oob, &oob[..]);
    }

    #[test]
    fn double_program_rejected() {
        let mut flash = small();
        let addr = PhysPageAddr::new(0, 0);
        flash.program_page(addr, &[0; 512], &[0; 16]).unwrap();
        assert_eq!(
            flash.program_page(addr, &[1; 512], &[1; 16]),
            Err(NandError::PageNotErased(addr))
        );
    }

    #[test]
    fn length_checked() {
        let mut flash = small();
        let err = flash.program_page(PhysPageAddr::new(0, 0), &[0; 100], &[0; 16]).unwrap_err();
        assert_eq!(err, NandError::LengthMismatch { expected: 512, actual: 100 });
    }

    #[test]
    fn erased_read_is_all_ones() {
        let flash = small();
        let page = flash.read_page(PhysPageAddr::new(3, 3)).unwrap();
        assert_eq!(page.state, PageState::Erased);
        assert!(page.data.iter().all(|b| *b == 0xFF));
        assert!(page.oob.iter().all(|b| *b == 0xFF));
        assert_eq!(flash.read_page(PhysPageAddr::new(4, 0)).unwrap_err(), NandError::OutOfRange);
    }

    #[test]
    fn erase_resets_block_and_counts_wear() {
        let mut flash = FlashArray::new(FlashGeometry::new(2, 64, 512, 16, 100)).unwrap();
        for p in 0..3 {
            flash.program_page(PhysPageAddr::new(0, p), &[7; 512], &[7; 16]).unwrap();
        }
        flash.erase_block(0).unwrap();
        for p in 0..64 {
            assert_eq!(flash.page_state(PhysPageAddr::new(0, p)).unwrap(), PageState::Erased);
        }
        assert_eq!(flash.wear()[0], 1);
        assert_eq!(flash.wear()[1], 0);
    }

    #[test]
    fn wear_out_marks_block_bad() {
        let mut flash = small();
        for _ in 0..3 {
            flash.erase_block(1).unwrap();
        }
        assert!(flash.is_bad(1));
        assert_eq!(flash.erase_block(1), Err(NandError::BadBlock(1)));
        assert_eq!(
            flash.program_page(PhysPageAddr::new(1, 0), &[0; 512], &[0; 16]),
            Err(NandError::BadBlock(1))
        );
        assert_eq!(flash.erase_block(9), Err(NandError::OutOfRange));
    }

    #[test]
    fn snapshot_restore_round_trip() {
        let mut flash = small();
        flash.program_page(PhysPageAddr::new(2, 1), &[3; 512], &[4; 16]).unwrap();
        flash.erase_block(0).unwrap();
        let snap = flash.take_snapshot();
        let restored = FlashArray::from_snapshot(&snap).unwrap();
        assert_eq!(restored.take_snapshot().as_bytes(), snap.as_bytes());
        assert_eq!(restored.wear()[0], 1);
    }
}
