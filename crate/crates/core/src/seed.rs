//! Deterministic seed derivation, so every stochastic component can be
//! reproduced from one run seed.

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with a stream name and two indices.
pub fn derive_seed(seed: u64, stream: &str, a: u64, b: u64) -> u64 {
    // FNV-1a over the stream name.
    let mut tag: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in stream.bytes() {
        tag ^= byte as u64;
        tag = tag.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix64(splitmix64(splitmix64(seed ^ tag) ^ a) ^ b.rotate_left(17))
}
