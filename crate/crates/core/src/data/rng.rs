use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// Independent purposes that draw random numbers. Each gets its own ChaCha
/// stream, so adding draws to one never shifts another.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stream {
    Deform,
    Shuffle,
    Init,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::Deform => 1,
            Stream::Shuffle => 2,
            Stream::Init => 3,
        }
    }
}

/// The generator for `(seed, stream)`.
pub fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    substream(seed, which, 0)
}

/// Generator `index` of a stream, e.g. one per image or per epoch. Substreams
/// are independent of each other and of the order they are requested in.
pub fn substream(seed: u64, which: Stream, index: u64) -> ChaCha8Rng {
    debug_assert!(index < 1 << 40);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which.tag() << 40 | index);
    rng
}

/// Shuffles `0..len` and cuts it into batches of `batch_size`; the last batch
/// may be shorter.
pub fn batches(len: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::contract("batches", format!("batch size must be at least 1, got {batch_size}")));
    }
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(rng);
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn batch_sizes_and_coverage() {
        let mut rng = stream(1, Stream::Shuffle);
        let b = batches(10, 4, &mut rng).unwrap();
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), [4, 4, 2]);
        let mut all: Vec<usize> = b.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert!(batches(0, 3, &mut rng).unwrap().is_empty());
        assert!(matches!(batches(5, 0, &mut rng), Err(Error::Contract { .. })));
    }

    #[test]
    fn same_seed_same_order() {
        let a = batches(100, 7, &mut substream(9, Stream::Shuffle, 3)).unwrap();
        let b = batches(100, 7, &mut substream(9, Stream::Shuffle, 3)).unwrap();
        let c = batches(100, 7, &mut substream(9, Stream::Shuffle, 4)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn streams_are_distinct() {
        let draw = |mut r: ChaCha8Rng| -> [u64; 4] { core::array::from_fn(|_| r.random()) };
        let d = draw(stream(5, Stream::Deform));
        assert_ne!(d, draw(stream(5, Stream::Shuffle)));
        assert_ne!(d, draw(stream(5, Stream::Init)));
        assert_ne!(d, draw(stream(6, Stream::Deform)));
        assert_eq!(d, draw(stream(5, Stream::Deform)));
    }

    #[test]
    fn sequence_is_pinned() {
        // Guards against silent changes in the generator or stream layout.
        let mut r = substream(42, Stream::Init, 0);
        let first: u64 = r.random();
        let mut again = substream(42, Stream::Init, 0);
        assert_eq!(first, again.random::<u64>());
        assert_eq!(first, PINNED_FIRST_DRAW);
    }

    const PINNED_FIRST_DRAW: u64 = 1896303852396227687;
}
