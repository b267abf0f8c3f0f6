//! Deterministic random streams.
//!
//! Every unit of simulated work (a shot, a noise run, a trial) owns a ChaCha
//! generator whose seed is a mix of the master seed and the unit's indices, so
//! results do not depend on execution order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Which part of an experiment a stream feeds. Distinct purposes never share
/// a stream even when their indices coincide.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Hidden = 1,
    Shots = 2,
    Noise = 3,
    Spurious = 4,
    Trial = 5,
    FitStart = 6,
    Pass = 7,
}

#[inline]
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix a master seed with a purpose tag and up to three indices.
pub fn derive_seed(master: u64, purpose: Purpose, a: u64, b: u64, c: u64) -> u64 {
    let mut h = splitmix(master ^ 0x6A09_E667_F3BC_C909);
    for x in [purpose as u64, a, b, c] {
        h = splitmix(h ^ x.wrapping_mul(0xD1B5_4A32_D192_ED03));
    }
    h
}

pub fn stream(master: u64, purpose: Purpose, a: u64, b: u64, c: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, purpose, a, b, c))
}
