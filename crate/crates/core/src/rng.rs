//! Keyed random streams.
//!
//! Every stream is a ChaCha8 generator whose seed is a hash of the run seed and a
//! key such as (concept, group, bootstrap index). Streams never share state, so
//! draws can be evaluated in any order or in parallel.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Accumulates key parts into a 64-bit digest.
#[derive(Debug, Clone)]
pub struct StreamKey {
    hash: u64,
}

impl StreamKey {
    pub fn new(seed: u64) -> Self {
        Self { hash: FNV_OFFSET }.int(seed)
    }

    fn bytes(mut self, bytes: &[u8]) -> Self {
        for b in bytes {
            self.hash ^= u64::from(*b);
            self.hash = self.hash.wrapping_mul(FNV_PRIME);
        }
        self
    }

    /// Length-prefixed so ("ab", "c") and ("a", "bc") differ.
    pub fn str(self, s: &str) -> Self {
        self.int(s.len() as u64).bytes(s.as_bytes())
    }

    pub fn int(self, v: u64) -> Self {
        self.bytes(&v.to_le_bytes())
    }

    pub fn digest(&self) -> u64 {
        self.hash
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut state = self.hash;
        let mut seed = [0u8; 32];
        for chunk in seed.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        ChaCha8Rng::from_seed(seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn same_key_same_stream() {
        let a: u64 = StreamKey::new(7).str("dog").str("A").int(3).rng().random();
        let b: u64 = StreamKey::new(7).str("dog").str("A").int(3).rng().random();
        assert_eq!(a, b);
    }

    #[test]
    fn key_parts_are_delimited() {
        let a: u64 = StreamKey::new(1).str("ab").str("c").rng().random();
        let b: u64 = StreamKey::new(1).str("a").str("bc").rng().random();
        assert_ne!(a, b);
        let c: u64 = StreamKey::new(2).str("ab").str("c").rng().random();
        assert_ne!(a, c);
    }
}
