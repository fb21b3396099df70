use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Epoch-wise batching of `len` samples. The order for an epoch is a pure
/// function of `(seed, epoch)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchPlan {
    len: usize,
    batch_size: usize,
    shuffle: bool,
    seed: u64,
}

impl BatchPlan {
    pub fn new(len: usize, batch_size: usize, shuffle: bool, seed: u64) -> Result<Self> {
        if len == 0 {
            return Err(Error::InvalidArgument("cannot batch an empty sample list".into()));
        }
        if batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be at least 1".into()));
        }
        Ok(BatchPlan {
            len,
            batch_size,
            shuffle,
            seed,
        })
    }

    pub fn num_batches(&self) -> usize {
        self.len.div_ceil(self.batch_size)
    }

    pub fn order(&self, epoch: u64) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len).collect();
        if self.shuffle {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            rng.set_stream(epoch);
            order.shuffle(&mut rng);
        }
        order
    }

    /// Index batches for `epoch`; the last one may be short.
    pub fn epoch(&self, epoch: u64) -> Vec<Vec<usize>> {
        self.order(epoch)
            .chunks(self.batch_size)
            .map(<[usize]>::to_vec)
            .collect()
    }
}

/// Borrows `samples` into the batches of one epoch.
pub fn batch_iterator<'a, S>(
    samples: &'a [S],
    batch_size: usize,
    shuffle: bool,
    seed: u64,
    epoch: u64,
) -> Result<impl Iterator<Item = Vec<&'a S>> + 'a> {
    let plan = BatchPlan::new(samples.len(), batch_size, shuffle, seed)?;
    Ok(plan
        .epoch(epoch)
        .into_iter()
        .map(move |idx| idx.into_iter().map(|i| &samples[i]).collect()))
}
