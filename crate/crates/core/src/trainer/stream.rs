use rand::seq::SliceRandom;

use crate::seeds::{mix, rng};

/// Endless sequence of example indices: epoch `e` is a permutation of
/// `0..m` drawn from `mix(seed, e)`, and batches run across epoch borders.
/// The whole state is `(seed, position)`, so a stream can be rebuilt from a
/// checkpoint.
#[derive(Clone, Debug)]
pub struct MinibatchStream {
    seed: u64,
    m: usize,
    batch_size: usize,
    position: u64,
    cached: Option<(u64, Vec<usize>)>,
}

impl MinibatchStream {
    pub fn new(seed: u64, m: usize, batch_size: usize, iteration: u64) -> Self {
        assert!(m > 0 && batch_size > 0, "empty stream");
        MinibatchStream { seed, m, batch_size, position: iteration * batch_size as u64, cached: None }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn permutation(seed: u64, m: usize, epoch: u64) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..m).collect();
        idx.shuffle(&mut rng(mix(seed, epoch)));
        idx
    }

    fn index_at(&mut self, pos: u64) -> usize {
        let epoch = pos / self.m as u64;
        let offset = (pos % self.m as u64) as usize;
        let stale = self.cached.as_ref().is_none_or(|(e, _)| *e != epoch);
        if stale {
            self.cached = Some((epoch, Self::permutation(self.seed, self.m, epoch)));
        }
        self.cached.as_ref().expect("filled above").1[offset]
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        let start = self.position;
        self.position += self.batch_size as u64;
        (start..self.position).map(|p| self.index_at(p)).collect()
    }
}
