use rand::Rng;

use crate::sim::ObservationStack;

/// One stored DDQN transition.
#[derive(Debug, Clone)]
pub struct ReplayItem {
    pub stack: ObservationStack,
    pub action: usize,
    pub reward: f64,
    pub next: ObservationStack,
    /// True when the next state has no value (goal or collision).
    pub done: bool,
}

/// Fixed-capacity ring buffer with FIFO eviction and uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer<T> {
    items: Vec<T>,
    capacity: usize,
    next: usize,
}

impl<T> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            items: Vec::with_capacity(capacity.min(1 << 16)),
            capacity,
            next: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, item: T) {
        if self.items.len() < self.capacity {
            self.items.push(item);
        } else {
            self.items[self.next] = item;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn get(&self, i: usize) -> &T {
        &self.items[i]
    }

    /// `n` indices drawn uniformly with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<usize> {
        assert!(!self.items.is_empty(), "cannot sample an empty buffer");
        (0..n).map(|_| rng.random_range(0..self.items.len())).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn evicts_oldest_first() {
        let mut b = ReplayBuffer::new(3);
        for i in 0..5 {
            b.push(i);
            assert!(b.len() <= 3);
        }
        let mut held: Vec<i32> = (0..3).map(|i| *b.get(i)).collect();
        held.sort();
        assert_eq!(held, vec![2, 3, 4]);
    }

    #[test]
    fn sampling_is_uniform() {
        let k = 20;
        let mut b = ReplayBuffer::new(k);
        for i in 0..k {
            b.push(i);
        }
        let n = 200_000;
        let mut counts = vec![0f64; k];
        for i in b.sample_indices(&mut ChaCha8Rng::seed_from_u64(5), n) {
            counts[i] += 1.0;
        }
        let e = n as f64 / k as f64;
        let chi2: f64 = counts.iter().map(|c| (c - e).powi(2) / e).sum();
        // 99.9th percentile of chi-square with 19 degrees of freedom
        assert!(chi2 < 43.82, "chi2 = {chi2}");
    }
}
