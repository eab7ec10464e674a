use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent randomness sources of a training run.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Stream {
    Split = 1,
    Init = 2,
    Batches = 3,
    Mining = 4,
}

pub(crate) fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Seed for `stream` at step `index` (epoch, batch, ...) of a run seeded
/// with `seed`. Mixed with splitmix64 so nearby inputs give unrelated seeds.
pub(crate) fn sub_seed(seed: u64, stream: Stream, index: u64) -> u64 {
    let mut z = seed
        ^ (stream as u64).wrapping_mul(0xA076_1D64_78BD_642F)
        ^ index.wrapping_mul(0xE703_7ED1_A0B4_28DB);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
