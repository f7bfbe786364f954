//! Seeded random substreams.
//!
//! Every random decision is drawn from a ChaCha8 stream keyed by the run seed,
//! the record's image id and a purpose tag. Nothing depends on global state or
//! on the order in which records are processed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags. Distinct tags give statistically independent streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    BoxOrder = 0x006f_7264_6572,
    Dropout = 0x6472_6f70,
    Flip = 0x666c_6970,
    Shift = 0x0073_6869_6674,
    Subset = 0x7375_6273_6574,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Builds the stream for `(seed, key, stream)`.
pub fn substream(seed: u64, key: &str, stream: Stream) -> ChaCha8Rng {
    let mut state = seed ^ fnv1a(key.as_bytes()).rotate_left(17) ^ (stream as u64).rotate_left(41);
    let mut bytes = [0u8; 32];
    for chunk in bytes.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(bytes)
}
