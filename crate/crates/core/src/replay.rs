//! Fixed-capacity ring buffer with uniform sampling.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::sim::Observation;

/// One environment step as seen by both players.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Observation,
    /// What the agent actually saw (`obs + δ`).
    pub perturbed_obs: Observation,
    /// Executed agent acceleration.
    pub action: f64,
    pub adversary_action: f64,
    pub reward: f64,
    pub adversary_reward: f64,
    pub next_obs: Observation,
    /// Collision or goal. Horizon timeouts are not terminal and keep
    /// their bootstrap.
    pub terminal: bool,
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer<T> {
    capacity: usize,
    items: Vec<T>,
    next: usize,
}

impl<T> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            items: Vec::new(),
            next: 0,
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

    /// Appends, overwriting the oldest entry once full.
    pub fn push(&mut self, item: T) {
        if self.items.len() < self.capacity {
            self.items.push(item);
        } else {
            self.items[self.next] = item;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn get(&self, index: usize) -> Option<&T> {
        self.items.get(index)
    }

    /// Indices drawn uniformly with replacement.
    pub fn sample_indices(&self, batch: usize, rng: &mut Rng) -> Result<Vec<usize>> {
        if batch == 0 || self.items.len() < batch {
            return Err(Error::Usage(format!(
                "cannot sample {batch} from a buffer holding {}",
                self.items.len()
            )));
        }
        Ok((0..batch).map(|_| rng.random_range(0..self.items.len())).collect())
    }

    pub fn sample(&self, batch: usize, rng: &mut Rng) -> Result<Vec<&T>> {
        Ok(self
            .sample_indices(batch, rng)?
            .into_iter()
            .map(|i| &self.items[i])
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;

    #[test]
    fn refuses_undersized_sampling() {
        let mut b = ReplayBuffer::new(4).unwrap();
        b.push(1);
        assert!(b.sample(2, &mut seeded(0)).is_err());
        assert!(ReplayBuffer::<u8>::new(0).is_err());
    }

    #[test]
    fn uniform_over_small_buffer() {
        // chi-square goodness of fit, 9 dof, 1% critical value 21.666
        let mut b = ReplayBuffer::new(10).unwrap();
        for i in 0..10 {
            b.push(i);
        }
        let mut rng = seeded(42);
        let mut counts = [0u32; 10];
        for _ in 0..10_000 {
            for i in b.sample_indices(10, &mut rng).unwrap() {
                counts[i] += 1;
            }
        }
        let expected = 10_000.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        assert!(chi2 < 21.666, "chi2 = {chi2}, counts {counts:?}");
    }

    proptest! {
        #[test]
        fn never_exceeds_capacity(cap in 1usize..50, pushes in 0usize..200) {
            let mut b = ReplayBuffer::new(cap).unwrap();
            for i in 0..pushes {
                b.push(i);
                prop_assert!(b.len() <= cap);
            }
            prop_assert_eq!(b.len(), pushes.min(cap));
            // the newest item is always present
            if pushes > 0 {
                prop_assert!((0..b.len()).any(|i| b.get(i) == Some(&(pushes - 1))));
            }
        }
    }
}
