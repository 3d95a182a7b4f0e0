//! Seeded, portable random streams. Every stochastic step draws from a PCG-64 generator so
//! that a run is reproducible from its recorded seed on any platform.

use rand::SeedableRng;
use rand_pcg::Pcg64;

pub type BenchRng = Pcg64;

pub fn seeded(seed: u64) -> BenchRng {
    Pcg64::seed_from_u64(seed)
}

/// Derives an independent seed for a named sub-stream (e.g. one CV fold).
pub fn derive_seed(seed: u64, label: &str, index: u64) -> u64 {
    // FNV-1a over the label, then splitmix64 finalisation.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = seed ^ h ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
