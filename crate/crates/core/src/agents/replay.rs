use std::collections::VecDeque;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::environment::{Action, Observation};

/// One bandit transition. There is no successor state: every episode ends
/// after its single action.
#[derive(Debug, Clone, PartialEq)]
pub struct Experience {
    pub action: Action,
    pub state: Observation,
    pub reward: f64,
}

/// Fixed-capacity FIFO store with seeded minibatch sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    entries: VecDeque<Experience>,
    rng: ChaCha8Rng,
    inserted: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, seed: u64) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayBuffer {
            capacity,
            entries: VecDeque::with_capacity(capacity),
            rng: ChaCha8Rng::seed_from_u64(seed),
            inserted: 0,
        }
    }

    pub fn push(&mut self, e: Experience) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(e);
        self.inserted += 1;
    }

    /// Up to `batch` distinct entries, uniformly chosen.
    pub fn sample(&mut self, batch: usize) -> Vec<&Experience> {
        let k = batch.min(self.entries.len());
        index::sample(&mut self.rng, self.entries.len(), k)
            .into_iter()
            .map(|i| &self.entries[i])
            .collect()
    }

    /// Empties the buffer; capacity and sampling stream are kept.
    pub fn clear(&mut self) {
        self.entries.clear();
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Total pushes since construction, evicted entries included.
    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn iter(&self) -> impl Iterator<Item = &Experience> {
        self.entries.iter()
    }
}
