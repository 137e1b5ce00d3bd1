//! Stable seed derivation. Values must not change between releases because
//! per-class seeds are part of what makes stored results reproducible.

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mix a run seed with an arbitrary byte tag (e.g. a class label).
pub fn derive(seed: u64, tag: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for b in seed.to_le_bytes().iter().chain(tag) {
        h ^= u64::from(*b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    splitmix64(h)
}

/// Seed of the mixture fitted for `class_label` in a run seeded with `seed`.
pub fn class_seed(seed: u64, class_label: &str) -> u64 {
    derive(seed, class_label.as_bytes())
}
