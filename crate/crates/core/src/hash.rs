//! Stable hashing for seeded mocks. Unlike `std::hash`, output never
//! changes between toolchains.

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub(crate) fn stable_hash(seed: u64, parts: &[&str]) -> u64 {
    let mut h = FNV_OFFSET ^ splitmix(seed);
    for part in parts {
        for b in part.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(FNV_PRIME);
        }
        // separator so ("ab","c") != ("a","bc")
        h ^= 0xff;
        h = h.wrapping_mul(FNV_PRIME);
    }
    splitmix(h)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Uniform draw in the open interval (0, 1).
pub(crate) fn unit_interval(seed: u64, parts: &[&str]) -> f64 {
    ((stable_hash(seed, parts) >> 11) as f64 + 0.5) / (1u64 << 53) as f64
}
