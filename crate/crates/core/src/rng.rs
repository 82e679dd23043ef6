//! Seeded randomness with named substreams.
//!
//! Every consumer asks for its own stream by name, so adding a draw in one
//! module never shifts the numbers seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Stream = ChaCha8Rng;

pub fn substream(seed: u64, name: &str) -> Stream {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    let d = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&d[..32]);
    ChaCha8Rng::from_seed(key)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: Vec<u64> = (0..4).map(|_| substream(7, "dbar").gen()).collect();
        let mut s1 = substream(7, "dbar");
        let mut s2 = substream(7, "dbar");
        let mut s3 = substream(7, "carleman");
        let x: u64 = s1.gen();
        assert_eq!(x, s2.gen::<u64>());
        assert_ne!(x, s3.gen::<u64>());
        assert!(a.iter().all(|&v| v == a[0]));
    }
}
