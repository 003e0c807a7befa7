//! Fixed-capacity ring buffer of transitions with uniform sampling.

use rand::Rng;

use crate::scalar::Real;

pub const OBS_DIM: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition<T> {
    pub obs: [T; OBS_DIM],
    /// Angular velocity fed to the critics (executed or proposed, per config).
    pub action: T,
    /// Policy output before the tanh squash; kept for diagnostics.
    pub pre_squash: T,
    pub reward: T,
    pub next_obs: [T; OBS_DIM],
    /// True only when the episode ended at the goal. Time-limit truncation
    /// is not stored here, so targets keep bootstrapping through it.
    pub terminated: bool,
}

/// Column-major view of sampled transitions, ready for batched passes.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    pub size: usize,
    /// `size x OBS_DIM`, row-major.
    pub obs: Vec<T>,
    pub actions: Vec<T>,
    pub rewards: Vec<T>,
    pub next_obs: Vec<T>,
    /// `0` for terminated transitions, `1` otherwise.
    pub not_done: Vec<T>,
}

impl<T: Real> Batch<T> {
    pub fn from_transitions<'a>(items: impl IntoIterator<Item = &'a Transition<T>>) -> Self {
        let mut b = Batch {
            size: 0,
            obs: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            next_obs: Vec::new(),
            not_done: Vec::new(),
        };
        for t in items {
            b.size += 1;
            b.obs.extend_from_slice(&t.obs);
            b.actions.push(t.action);
            b.rewards.push(t.reward);
            b.next_obs.extend_from_slice(&t.next_obs);
            b.not_done.push(if t.terminated { T::zero() } else { T::one() });
        }
        b
    }
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer<T> {
    capacity: usize,
    items: Vec<Transition<T>>,
    next: usize,
}

impl<T: Real> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 20)),
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

    pub fn push(&mut self, t: Transition<T>) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// Uniform sample with replacement; `None` until `batch_size` items exist.
    pub fn sample<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Option<Batch<T>> {
        if batch_size == 0 || self.items.len() < batch_size {
            return None;
        }
        let n = self.items.len();
        Some(Batch::from_transitions(
            (0..batch_size).map(|_| &self.items[rng.random_range(0..n)]),
        ))
    }
}
