//! Deterministic random substreams.
//!
//! Every random draw in a run comes from a ChaCha8 stream keyed by
//! `(seed, iteration, phase, index)`, so results do not depend on how work
//! is split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Phase {
    Init = 1,
    Epsilon = 2,
    Impute = 3,
    Augment = 4,
    Latent = 5,
    Params = 6,
    Contaminate = 7,
    Missing = 8,
    Pram = 9,
    Synthesize = 10,
    Generate = 11,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn substream(seed: u64, iteration: u64, phase: Phase, index: u64) -> StreamRng {
    let words = [
        splitmix(seed),
        splitmix(iteration ^ 0x51_7cc1_b727_220a),
        splitmix(phase as u64 ^ 0x2545_f491_4f6c_dd1d),
        splitmix(index ^ 0x6a09_e667_f3bc_c908),
    ];
    let mut key = [0u8; 32];
    for (i, w) in words.iter().enumerate() {
        key[i * 8..(i + 1) * 8].copy_from_slice(&w.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
