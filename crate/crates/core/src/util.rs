use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a; stable across platforms and releases.
pub(crate) fn fnv1a(parts: &[&[u8]]) -> u64 {
    let mut h = FNV_OFFSET;
    for part in parts {
        for &b in *part {
            h ^= u64::from(b);
            h = h.wrapping_mul(FNV_PRIME);
        }
    }
    h
}

/// An RNG stream keyed by a base seed and arbitrary labels, so parallel work
/// items draw identical numbers regardless of scheduling.
pub fn derived_rng(seed: u64, labels: &[&[u8]]) -> ChaCha8Rng {
    let seed_bytes = seed.to_le_bytes();
    let mut parts: Vec<&[u8]> = vec![&seed_bytes];
    parts.extend_from_slice(labels);
    ChaCha8Rng::seed_from_u64(fnv1a(&parts))
}
