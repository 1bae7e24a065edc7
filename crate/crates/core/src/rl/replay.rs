use rand::Rng;

use crate::env::{Transition, OBS_DIM};
use crate::error::{Error, Result};

/// Fixed-capacity ring of transitions; once full, each insertion overwrites
/// the oldest entry.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    cursor: usize,
}

/// Column-major view of a sampled minibatch.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TransitionBatch {
    pub states: Vec<f64>,
    pub actions: Vec<f64>,
    pub rewards: Vec<f64>,
    pub next_states: Vec<f64>,
    pub dones: Vec<bool>,
}

impl TransitionBatch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn push(&mut self, t: &Transition) {
        self.states.extend_from_slice(t.state.as_slice());
        self.actions.push(t.action);
        self.rewards.push(t.reward);
        self.next_states.extend_from_slice(t.next_state.as_slice());
        self.dones.push(t.done);
    }
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidParameter("replay capacity must be positive".into()));
        }
        Ok(ReplayBuffer {
            capacity,
            items: Vec::new(),
            cursor: 0,
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
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    /// Entries from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.items.len() < self.capacity { 0 } else { self.cursor };
        self.items[split..].iter().chain(&self.items[..split])
    }

    /// Uniform sample with replacement.
    pub fn sample<R: Rng>(&self, batch: usize, rng: &mut R) -> Result<TransitionBatch> {
        if self.items.len() < batch {
            return Err(Error::InvalidParameter(format!(
                "replay buffer holds {} transitions, batch needs {batch}",
                self.items.len()
            )));
        }
        let mut b = TransitionBatch {
            states: Vec::with_capacity(batch * OBS_DIM),
            actions: Vec::with_capacity(batch),
            rewards: Vec::with_capacity(batch),
            next_states: Vec::with_capacity(batch * OBS_DIM),
            dones: Vec::with_capacity(batch),
        };
        for _ in 0..batch {
            b.push(&self.items[rng.random_range(0..self.items.len())]);
        }
        Ok(b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Observation;
    use rand::SeedableRng;

    fn tagged(i: usize) -> Transition {
        let o = Observation([i as f64, 0.0, 0.0, 0.0, 0.0]);
        Transition {
            state: o,
            action: i as f64,
            reward: 0.0,
            next_state: o,
            done: false,
        }
    }

    #[test]
    fn ring_evicts_oldest_first() {
        let cap = 1000;
        let mut buf = ReplayBuffer::new(cap).unwrap();
        for i in 0..1_000_000 {
            buf.push(tagged(i));
            assert!(buf.len() <= cap);
            if i % 99_991 == 0 || i == 999_999 {
                let first = (i + 1).saturating_sub(cap);
                let seen: Vec<f64> = buf.iter().map(|t| t.action).collect();
                let expected: Vec<f64> = (first..=i).map(|j| j as f64).collect();
                assert_eq!(seen, expected);
            }
        }
    }

    #[test]
    fn sampling_requires_a_full_batch() {
        let mut buf = ReplayBuffer::new(10).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        buf.push(tagged(1));
        assert!(buf.sample(2, &mut rng).is_err());
        buf.push(tagged(2));
        let b = buf.sample(2, &mut rng).unwrap();
        assert_eq!(b.len(), 2);
        assert_eq!(b.states.len(), 2 * OBS_DIM);
    }
}
