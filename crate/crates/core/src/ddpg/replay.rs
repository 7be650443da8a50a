use std::collections::VecDeque;

use rand::Rng as _;

use crate::fields::ScalarField2D;
use crate::rng::Rng;

pub const DEFAULT_CAPACITY: usize = 20_000;

/// One stored interaction. `u` holds the action scalars that were executed,
/// never the adapter's output field.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionSample {
    pub x: ScalarField2D,
    pub u: Vec<f64>,
    pub x_next: ScalarField2D,
    pub r: f64,
}

/// FIFO ring with uniform sampling (with replacement).
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    storage: VecDeque<TransitionSample>,
    rng: Rng,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, rng: Rng) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            storage: VecDeque::with_capacity(capacity.min(1 << 16)),
            rng,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    pub fn push(&mut self, sample: TransitionSample) {
        if self.storage.len() == self.capacity {
            self.storage.pop_front();
        }
        self.storage.push_back(sample);
    }

    pub fn get(&self, i: usize) -> Option<&TransitionSample> {
        self.storage.get(i)
    }

    pub fn iter(&self) -> impl Iterator<Item = &TransitionSample> {
        self.storage.iter()
    }

    /// Storage indices of `n` uniform draws.
    pub fn sample_indices(&mut self, n: usize) -> Vec<usize> {
        let len = self.storage.len();
        if len == 0 {
            return Vec::new();
        }
        (0..n).map(|_| self.rng.gen_range(0..len)).collect()
    }

    pub fn sample(&mut self, n: usize) -> Vec<&TransitionSample> {
        let idx = self.sample_indices(n);
        idx.into_iter().map(|i| &self.storage[i]).collect()
    }
}
