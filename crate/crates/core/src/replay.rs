//! Bounded FIFO replay storage with uniform sampling.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::trajectory::{Trajectory, Transition};

/// A sample drawn from a [`ReplayBuffer`]. `ids` remember where each
/// transition lives so that relabeling can write through to the store.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub ids: Vec<u64>,
    pub transitions: Vec<Transition>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: Option<usize>,
    state_dim: usize,
    store: VecDeque<Transition>,
    /// Number of transitions evicted so far; the id of `store[i]` is
    /// `evicted + i`.
    evicted: u64,
    frozen: bool,
}

impl ReplayBuffer {
    /// Policy buffer holding at most `capacity` transitions.
    pub fn new(capacity: usize, state_dim: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay capacity must be positive".into()));
        }
        Ok(ReplayBuffer {
            capacity: Some(capacity),
            state_dim,
            store: VecDeque::new(),
            evicted: 0,
            frozen: false,
        })
    }

    /// Unbounded, write-once expert buffer.
    pub fn expert<'a>(
        trajectories: impl IntoIterator<Item = &'a Trajectory>,
        state_dim: usize,
    ) -> Result<Self> {
        let mut buf = ReplayBuffer {
            capacity: None,
            state_dim,
            store: VecDeque::new(),
            evicted: 0,
            frozen: false,
        };
        for t in trajectories {
            buf.push_trajectory(t)?;
        }
        buf.frozen = true;
        Ok(buf)
    }

    pub fn len(&self) -> usize {
        self.store.len()
    }

    pub fn is_empty(&self) -> bool {
        self.store.is_empty()
    }

    pub fn capacity(&self) -> Option<usize> {
        self.capacity
    }

    pub fn is_expert(&self) -> bool {
        self.frozen
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.store.iter()
    }

    pub fn get(&self, id: u64) -> Option<&Transition> {
        id.checked_sub(self.evicted)
            .and_then(|i| self.store.get(i as usize))
    }

    pub fn push_trajectory(&mut self, traj: &Trajectory) -> Result<()> {
        if self.frozen {
            return Err(Error::usage("the expert buffer is write-once"));
        }
        if !traj.wrapped {
            return Err(Error::usage(
                "trajectory must pass through wrap_absorbing before insertion",
            ));
        }
        if let Some(t) = traj
            .transitions
            .iter()
            .find(|t| t.state.len() != self.state_dim || t.next_state.len() != self.state_dim)
        {
            return Err(Error::usage(format!(
                "transition has state width {} / {}, buffer expects {} (absorbing flag missing?)",
                t.state.len(),
                t.next_state.len(),
                self.state_dim
            )));
        }
        for t in &traj.transitions {
            if let Some(cap) = self.capacity {
                if self.store.len() == cap {
                    self.store.pop_front();
                    self.evicted += 1;
                }
            }
            self.store.push_back(t.clone());
        }
        Ok(())
    }

    /// `batch_size` draws, uniform with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Batch> {
        if self.store.is_empty() {
            return Err(Error::usage("cannot sample from an empty buffer"));
        }
        let n = self.store.len();
        let mut ids = Vec::with_capacity(batch_size);
        let mut transitions = Vec::with_capacity(batch_size);
        for _ in 0..batch_size {
            let i = rng.gen_range(0..n);
            ids.push(self.evicted + i as u64);
            transitions.push(self.store[i].clone());
        }
        Ok(Batch { ids, transitions })
    }

    pub fn sample_seeded(&self, batch_size: usize, seed: u64) -> Result<Batch> {
        self.sample(batch_size, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// Overwrite the reward slots of `batch` and of the stored transitions it
    /// was drawn from. Entries evicted since sampling are only updated in
    /// the batch copy.
    pub fn relabel(&mut self, batch: &mut Batch, rewards: &[f64]) -> Result<()> {
        if self.frozen {
            return Err(Error::usage("expert transitions are never relabeled"));
        }
        relabel(&mut batch.transitions, rewards)?;
        for (&id, &r) in batch.ids.iter().zip(rewards) {
            if let Some(i) = id.checked_sub(self.evicted) {
                if let Some(t) = self.store.get_mut(i as usize) {
                    t.reward = r;
                }
            }
        }
        Ok(())
    }
}

/// Write `rewards` into the reward slots of `transitions`.
pub fn relabel(transitions: &mut [Transition], rewards: &[f64]) -> Result<()> {
    if transitions.len() != rewards.len() {
        return Err(Error::usage(format!(
            "{} rewards for {} transitions",
            rewards.len(),
            transitions.len()
        )));
    }
    for (t, &r) in transitions.iter_mut().zip(rewards) {
        t.reward = r;
    }
    Ok(())
}
