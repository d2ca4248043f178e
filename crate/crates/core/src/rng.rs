//! Counter-based random streams: every consumer derives its own generator
//! from the run seed, a domain tag and an index, so parallel work never
//! shares or reorders a stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Domain tags keep unrelated consumers apart even at equal indices.
pub mod domain {
    pub const ENSEMBLE: u64 = 0x656e_7365_6d62;
    pub const SYNTHETIC: u64 = 0x7379_6e74_6865;
    pub const GRADCHECK: u64 = 0x6772_6164_636b;
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Generator for stream `index` of `domain` under `seed`.
pub fn stream(seed: u64, domain: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed ^ splitmix(domain)));
    rng.set_stream(index);
    rng
}

/// Packs two small indices into one stream index.
pub fn pair(a: u64, b: u64) -> u64 {
    (a << 32) | (b & 0xffff_ffff)
}
