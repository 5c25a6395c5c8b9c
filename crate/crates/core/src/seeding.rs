//! Deterministic derivation of substream seeds from one master seed, so
//! replications, comparisons, and relabelings never share generator streams.

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Seed for substream `index` of `master`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    splitmix64(master.wrapping_add(0x9E3779B97F4A7C15u64.wrapping_mul(index.wrapping_add(1))))
}
