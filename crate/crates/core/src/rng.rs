//! Deterministic RNG streams.
//!
//! Every random draw in the pipeline comes from a PCG stream derived from a
//! seed plus a textual tag, so independent components (per-clip rendering,
//! parameter init, training batches) never share or reorder draws.

use rand_pcg::Pcg32;

/// 64-bit FNV-1a. Used for stream derivation and config hashing.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// A named substream of `seed`.
pub fn stream(seed: u64, tag: &str) -> Pcg32 {
    Pcg32::new(seed, fnv1a64(tag.as_bytes()))
}

/// A named, indexed substream of `seed` (e.g. one per clip or matrix row).
pub fn stream_indexed(seed: u64, tag: &str, index: u64) -> Pcg32 {
    let mut bytes = Vec::with_capacity(tag.len() + 8);
    bytes.extend_from_slice(tag.as_bytes());
    bytes.extend_from_slice(&index.to_le_bytes());
    Pcg32::new(seed, fnv1a64(&bytes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible() {
        let a: Vec<u32> = stream(7, "x").sample_iter(rand::distributions::Standard).take(8).collect();
        let b: Vec<u32> = stream(7, "x").sample_iter(rand::distributions::Standard).take(8).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn streams_differ_by_tag_and_index() {
        let mut a = stream(7, "x");
        let mut b = stream(7, "y");
        let mut c = stream_indexed(7, "x", 1);
        let draws = |r: &mut Pcg32| (0..4).map(|_| r.gen::<u32>()).collect::<Vec<_>>();
        let (da, db, dc) = (draws(&mut a), draws(&mut b), draws(&mut c));
        assert_ne!(da, db);
        assert_ne!(da, dc);
    }

    #[test]
    fn fnv_known_value() {
        // FNV-1a of empty input is the offset basis.
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
    }
}
