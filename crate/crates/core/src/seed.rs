//! Stable seed derivation for per-example random streams.

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes the global seed with (lesson, epoch, index). The same coordinates
/// always give the same seed, regardless of platform or thread layout.
pub fn derive_seed(global: u64, lesson: u8, epoch: u32, index: u64) -> u64 {
    let mut h = splitmix64(global);
    h = splitmix64(h ^ u64::from(lesson));
    h = splitmix64(h ^ u64::from(epoch));
    splitmix64(h ^ index)
}
