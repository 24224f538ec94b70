//! Seeded randomness split into independent per-purpose streams.

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    Placement,
    DummyContent,
    DummyCount,
    FormatFill,
    Gc,
    Salt,
    Workload,
}

impl Purpose {
    fn stream_id(self) -> u64 {
        match self {
            Purpose::Placement => 1,
            Purpose::DummyContent => 2,
            Purpose::DummyCount => 3,
            Purpose::FormatFill => 4,
            Purpose::Gc => 5,
            Purpose::Salt => 6,
            Purpose::Workload => 7,
        }
    }
}

/// One ChaCha8 stream of `master_seed`, selected by purpose.
pub fn substream(master_seed: u64, purpose: Purpose) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(purpose.stream_id());
    rng
}

pub fn random_page<R: RngCore>(rng: &mut R, len: usize) -> Vec<u8> {
    let mut page = vec![0u8; len];
    rng.fill_bytes(&mut page);
    page
}

/// Every stream a simulator instance draws from.
#[derive(Debug, Clone)]
pub struct SimRng {
    pub placement: ChaCha8Rng,
    pub dummy_content: ChaCha8Rng,
    pub dummy_count: ChaCha8Rng,
    pub format_fill: ChaCha8Rng,
    pub gc: ChaCha8Rng,
    pub salt: ChaCha8Rng,
}

impl SimRng {
    pub fn new(master_seed: u64) -> Self {
        Self {
            placement: substream(master_seed, Purpose::Placement),
            dummy_content: substream(master_seed, Purpose::DummyContent),
            dummy_count: substream(master_seed, Purpose::DummyCount),
            format_fill: substream(master_seed, Purpose::FormatFill),
            gc: substream(master_seed, Purpose::Gc),
            salt: substream(master_seed, Purpose::Salt),
        }
    }
}
