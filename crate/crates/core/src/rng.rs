//! Counter-style random streams keyed by `(master seed, index)`.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Independent stream for sample `index` under `master`.
pub fn stream(master: u64, index: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(master);
    rng.set_stream(index);
    rng
}

/// Derives a sub-seed so that unrelated consumers of one master seed do not
/// share streams.
pub fn derive(master: u64, tag: &str) -> u64 {
    // FNV-1a over the tag, mixed with the master seed by splitmix64
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = master ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
