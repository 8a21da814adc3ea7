//! Per-item derived random streams.
//!
//! Every random decision in the pipeline draws from a stream derived from a
//! master seed and a textual item key (`"video17/frame30/face0"`), so results
//! never depend on processing order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedSpec {
    pub master_seed: u64,
    pub item_key: String,
}

impl SeedSpec {
    pub fn new(master_seed: u64, item_key: impl Into<String>) -> Self {
        Self {
            master_seed,
            item_key: item_key.into(),
        }
    }

    /// Seed for a sub-item; keys nest with `/`.
    pub fn child(&self, part: impl std::fmt::Display) -> Self {
        let item_key = if self.item_key.is_empty() {
            part.to_string()
        } else {
            format!("{}/{}", self.item_key, part)
        };
        Self {
            master_seed: self.master_seed,
            item_key,
        }
    }

    pub fn derived(&self) -> u64 {
        stable_mix(self.master_seed, fnv1a(self.item_key.as_bytes()))
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.derived())
    }
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn stable_mix(master_seed: u64, key_hash: u64) -> u64 {
    splitmix64(master_seed ^ splitmix64(key_hash))
}
