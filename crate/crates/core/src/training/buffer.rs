use std::collections::VecDeque;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::env::Transition;

use super::TrainError;

/// Fixed-capacity transition store; the oldest entry is evicted first.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
    rng: ChaCha8Rng,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, seed: u64) -> Result<Self, TrainError> {
        if capacity == 0 {
            return Err(TrainError::InvalidArgument("buffer capacity must be >= 1".into()));
        }
        Ok(Self {
            capacity,
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    /// Oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    /// `n` distinct transitions chosen uniformly, or `None` while fewer than
    /// `n` are stored.
    pub fn sample(&mut self, n: usize) -> Option<Vec<&Transition>> {
        if n == 0 || n > self.items.len() {
            return None;
        }
        let picks = sample(&mut self.rng, self.items.len(), n);
        Some(picks.into_iter().map(|k| &self.items[k]).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EpisodeState;

    fn tr(k: usize) -> Transition {
        let s = EpisodeState::new(0, vec![k]);
        Transition { state: s.clone(), action: vec![], item: k, reward: k as f64, next_state: s, terminal: false }
    }

    #[test]
    fn fifo_eviction() {
        let mut b = ReplayBuffer::new(3, 0).unwrap();
        for k in 0..5 {
            b.push(tr(k));
            assert!(b.len() <= 3);
        }
        assert_eq!(b.iter().map(|t| t.item).collect::<Vec<_>>(), vec![2, 3, 4]);
    }

    #[test]
    fn sampling_is_without_replacement() {
        let mut b = ReplayBuffer::new(10, 4).unwrap();
        for k in 0..10 {
            b.push(tr(k));
        }
        assert!(b.sample(11).is_none());
        for _ in 0..20 {
            let mut got: Vec<usize> = b.sample(10).unwrap().iter().map(|t| t.item).collect();
            got.sort_unstable();
            assert_eq!(got, (0..10).collect::<Vec<_>>());
        }
        assert!(ReplayBuffer::new(0, 0).is_err());
    }
}
