//! Named sub-seeds derived from a single global seed.

/// Mixes `base` with a component label and a list of indices (splitmix64 finalizer).
pub fn derive_seed(base: u64, label: &str, indices: &[u64]) -> u64 {
    let mut h = mix(base ^ 0x9E37_79B9_7F4A_7C15);
    for b in label.bytes() {
        h = mix(h ^ u64::from(b));
    }
    for &i in indices {
        h = mix(h ^ i.wrapping_add(0xA076_1D64_78BD_642F));
    }
    h
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
