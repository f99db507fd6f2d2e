//! Endless shuffled mini-batch stream over a fixed training set.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct Batch {
    pub x: Tensor,
    pub y: Vec<usize>,
    pub indices: Vec<usize>,
    /// Pass over the data this batch belongs to.
    pub epoch: u64,
}

/// Each pass is an independent permutation seeded by `(seed, epoch)`. The
/// trailing partial batch of every pass is dropped.
#[derive(Debug, Clone)]
pub struct BatchStream {
    x: Tensor,
    y: Vec<usize>,
    batch_size: usize,
    seed: u64,
    epoch: u64,
    pos: usize,
    order: Vec<usize>,
}

impl BatchStream {
    pub fn new(x: Tensor, y: Vec<usize>, batch_size: usize, seed: u64) -> Result<Self> {
        if x.batch() != y.len() {
            return Err(Error::invalid(format!(
                "stream has {} inputs but {} labels",
                x.batch(),
                y.len()
            )));
        }
        if batch_size == 0 || batch_size > y.len() {
            return Err(Error::config(
                "batch_size",
                format!("must lie in 1..={}, got {batch_size}", y.len()),
            ));
        }
        let mut s = Self {
            x,
            y,
            batch_size,
            seed,
            epoch: 0,
            pos: 0,
            order: Vec::new(),
        };
        s.order = s.permutation(0);
        Ok(s)
    }

    fn permutation(&self, epoch: u64) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(epoch);
        let mut order: Vec<usize> = (0..self.y.len()).collect();
        order.shuffle(&mut rng);
        order
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.y.len() / self.batch_size
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn x(&self) -> &Tensor {
        &self.x
    }

    pub fn y(&self) -> &[usize] {
        &self.y
    }

    /// Rewinds to the first batch of pass 0.
    pub fn restart(&mut self) {
        self.epoch = 0;
        self.pos = 0;
        self.order = self.permutation(0);
    }

    pub fn next_indices(&mut self) -> (Vec<usize>, u64) {
        if self.pos + self.batch_size > self.order.len() {
            self.epoch += 1;
            self.pos = 0;
            self.order = self.permutation(self.epoch);
        }
        let idx = self.order[self.pos..self.pos + self.batch_size].to_vec();
        self.pos += self.batch_size;
        (idx, self.epoch)
    }

    pub fn next_batch(&mut self) -> Batch {
        let (indices, epoch) = self.next_indices();
        Batch {
            x: self.x.select_rows(&indices),
            y: indices.iter().map(|&i| self.y[i]).collect(),
            indices,
            epoch,
        }
    }
}
