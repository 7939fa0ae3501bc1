use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags keep the RNGs for unrelated purposes independent.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Stream {
    Generator = 1,
    Mask = 2,
    Init = 3,
    Shuffle = 4,
    Noise = 5,
    Split = 6,
    EtaInit = 7,
    Verify = 8,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// A ChaCha8 generator that depends only on `(seed, stream, index)`.
pub(crate) fn derived(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    let a = splitmix64(seed ^ splitmix64(stream as u64));
    ChaCha8Rng::seed_from_u64(splitmix64(a ^ splitmix64(index.wrapping_add(0x5851_F42D))))
}
