//! Episodic environments.
//!
//! Observations already carry the trailing absorbing-flag dimension (always
//! `0` from the environment itself), so `EnvSpec::state_dim` is the width
//! every network and buffer works with.

mod gridworld;
mod signal_queue;

pub use gridworld::{Cell, GridWorld, GridWorldConfig};
pub use signal_queue::{SignalQueueConfig, SignalQueueWorld};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    /// Canonical description of the environment and its parameters.
    pub id: String,
    /// Observation width including the absorbing flag.
    pub state_dim: usize,
    pub n_actions: usize,
    pub max_steps: usize,
    pub gamma: f64,
}

impl EnvSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_actions < 2 {
            return Err(Error::Config(format!(
                "need at least 2 actions, got {}",
                self.n_actions
            )));
        }
        if self.max_steps < 1 {
            return Err(Error::Config("max_steps must be >= 1".into()));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(format!(
                "gamma must lie in (0, 1), got {}",
                self.gamma
            )));
        }
        Ok(())
    }

    /// First eight bytes of SHA-256 over the canonical spec description.
    pub fn fingerprint(&self) -> u64 {
        let text = format!(
            "{}|{}|{}|{}|{:?}",
            self.id, self.state_dim, self.n_actions, self.max_steps, self.gamma
        );
        let digest = Sha256::digest(text.as_bytes());
        u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub next_state: Vec<f64>,
    pub env_reward: f64,
    pub terminal: bool,
    /// Horizon reached without termination.
    pub truncated: bool,
}

/// One successor of a tabular `(state, action)` pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Outcome {
    pub prob: f64,
    pub next: usize,
    pub reward: f64,
    pub terminal: bool,
}

/// Environments whose full transition model can be enumerated.
pub trait TabularMdp {
    fn n_states(&self) -> usize;
    fn n_actions(&self) -> usize;
    fn start_state(&self) -> usize;
    /// States with no outgoing dynamics (the episode has already ended).
    fn is_terminal(&self, s: usize) -> bool;
    fn outcomes(&self, s: usize, a: usize) -> Vec<Outcome>;
    fn observation(&self, s: usize) -> Vec<f64>;
    fn state_of(&self, obs: &[f64]) -> Option<usize>;
}

pub trait Environment: Send + Sync {
    fn spec(&self) -> EnvSpec;

    /// Start a new episode. Deterministic in `seed`.
    fn reset(&mut self, seed: u64) -> Vec<f64>;

    fn step(&mut self, action: usize) -> Result<StepResult>;

    fn as_tabular(&self) -> Option<&dyn TabularMdp> {
        None
    }

    /// Discrete bucket of an observation, for occupancy histograms.
    fn state_bucket(&self, obs: &[f64]) -> u64;

    /// Identifies the bucketing scheme; histograms are only comparable when
    /// these agree.
    fn bucketing_id(&self) -> String;

    fn boxed_clone(&self) -> Box<dyn Environment>;
}

/// Environment selection as it appears in a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvConfig {
    Gridworld(GridWorldConfig),
    SignalQueue(SignalQueueConfig),
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig::Gridworld(GridWorldConfig::default())
    }
}

impl EnvConfig {
    pub fn build(&self) -> Result<Box<dyn Environment>> {
        Ok(match self {
            EnvConfig::Gridworld(c) => Box::new(GridWorld::new(c.clone())?),
            EnvConfig::SignalQueue(c) => Box::new(SignalQueueWorld::new(c.clone())?),
        })
    }
}

/// Bucket continuous features in `[0, 1]` on a uniform `bins`-per-dimension
/// lattice.
pub fn quantize(features: &[f64], bins: u64) -> u64 {
    features.iter().fold(0u64, |acc, &x| {
        let b = ((x.clamp(0.0, 1.0) * bins as f64) as u64).min(bins - 1);
        acc.wrapping_mul(bins).wrapping_add(b)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_validation() {
        let good = EnvSpec {
            id: "x".into(),
            state_dim: 3,
            n_actions: 2,
            max_steps: 1,
            gamma: 0.5,
        };
        assert!(good.validate().is_ok());
        for bad in [
            EnvSpec {
                n_actions: 1,
                ..good.clone()
            },
            EnvSpec {
                max_steps: 0,
                ..good.clone()
            },
            EnvSpec {
                gamma: 1.0,
                ..good.clone()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn fingerprint_tracks_every_field() {
        let a = EnvSpec {
            id: "x".into(),
            state_dim: 3,
            n_actions: 2,
            max_steps: 5,
            gamma: 0.5,
        };
        assert_eq!(a.fingerprint(), a.clone().fingerprint());
        let b = EnvSpec {
            state_dim: 4,
            ..a.clone()
        };
        assert_ne!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn quantize_edges() {
        assert_eq!(quantize(&[0.0], 10), 0);
        assert_eq!(quantize(&[1.0], 10), 9);
        assert_eq!(quantize(&[0.55, 0.0], 10), 50);
    }
}
