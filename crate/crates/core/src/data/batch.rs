use rand::seq::SliceRandom;
use rand::Rng;

use crate::rng::{self, Stream};

/// Deterministic stream of index batches covering `0..len` once.
#[derive(Debug, Clone)]
pub struct BatchIter {
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl Iterator for BatchIter {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let b = self.order[self.pos..end].to_vec();
        self.pos = end;
        Some(b)
    }
}

/// One epoch of shuffled batches; the order is fixed by `shuffle_seed`.
///
/// # Panics
/// If `batch_size` is zero.
pub fn batch_iter(len: usize, batch_size: usize, shuffle_seed: u64) -> BatchIter {
    let mut rng = rng::stream(shuffle_seed, Stream::Shuffle);
    shuffled_batches(len, batch_size, &mut rng)
}

/// Like [`batch_iter`] but draws the permutation from a caller-owned stream,
/// so successive epochs see different orders.
pub fn shuffled_batches<R: Rng + ?Sized>(len: usize, batch_size: usize, rng: &mut R) -> BatchIter {
    assert!(batch_size >= 1, "batch size must be positive");
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(rng);
    BatchIter {
        order,
        batch_size,
        pos: 0,
    }
}
