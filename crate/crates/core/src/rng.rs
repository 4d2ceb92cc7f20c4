//! Reproducible random streams.
//!
//! Every worker draws from its own ChaCha8 stream keyed by `(seed, stream)`.
//! Work is split into fixed-size chunks whose stream id is the chunk index, so
//! results do not depend on how many threads execute the chunks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Identifier recorded in run metadata.
pub const RNG_NAME: &str = "ChaCha8Rng (rand_chacha), seed_from_u64 + set_stream per work chunk";

pub fn stream_rng(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Splits `total` items into chunks of at most `chunk` items: `(stream, start, len)`.
pub(crate) fn chunks(total: u64, chunk: u64) -> Vec<(u64, u64, u64)> {
    let chunk = chunk.max(1);
    let count = total.div_ceil(chunk);
    (0..count)
        .map(|i| {
            let start = i * chunk;
            (i, start, chunk.min(total - start))
        })
        .collect()
}
