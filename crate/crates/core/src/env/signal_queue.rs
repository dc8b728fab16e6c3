//! One signalised intersection as a set of approach queues.
//!
//! Each step the chosen queue gets the green phase and releases up to
//! `service_rate` cars, then every queue receives a Bernoulli arrival that is
//! turned away when the queue is full. The environment reward is throughput
//! weighted by a normalised speed proxy, `r_e = (1 - queued / (n · cap)) · released`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{quantize, EnvSpec, Environment, StepResult};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SignalQueueConfig {
    pub n_queues: usize,
    /// Per-queue arrival probability per step.
    pub arrival_rates: Vec<f64>,
    /// Cars released from the green queue per step.
    pub service_rate: usize,
    pub capacity: usize,
    pub max_steps: usize,
    pub gamma: f64,
}

impl Default for SignalQueueConfig {
    fn default() -> Self {
        SignalQueueConfig {
            n_queues: 4,
            arrival_rates: vec![0.3, 0.2, 0.25, 0.15],
            service_rate: 2,
            capacity: 20,
            max_steps: 200,
            gamma: 0.995,
        }
    }
}

/// Counters for the most recent step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepCounts {
    pub arrived: usize,
    pub turned_away: usize,
    pub released: usize,
}

#[derive(Debug, Clone)]
pub struct SignalQueueWorld {
    cfg: SignalQueueConfig,
    queues: Vec<usize>,
    phase: usize,
    steps: usize,
    finished: bool,
    last: StepCounts,
    rng: ChaCha8Rng,
}

impl SignalQueueWorld {
    pub fn new(cfg: SignalQueueConfig) -> Result<Self> {
        if cfg.arrival_rates.len() != cfg.n_queues {
            return Err(Error::Config(format!(
                "{} arrival rates for {} queues",
                cfg.arrival_rates.len(),
                cfg.n_queues
            )));
        }
        if cfg.arrival_rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::Config("arrival rates must lie in [0, 1]".into()));
        }
        if cfg.capacity == 0 {
            return Err(Error::Config("capacity must be positive".into()));
        }
        let env = SignalQueueWorld {
            queues: vec![0; cfg.n_queues],
            phase: 0,
            steps: 0,
            finished: false,
            last: StepCounts::default(),
            rng: ChaCha8Rng::seed_from_u64(0),
            cfg,
        };
        env.spec().validate()?;
        Ok(env)
    }

    pub fn queues(&self) -> &[usize] {
        &self.queues
    }

    pub fn phase(&self) -> usize {
        self.phase
    }

    pub fn total_queued(&self) -> usize {
        self.queues.iter().sum()
    }

    pub fn last_counts(&self) -> StepCounts {
        self.last
    }

    /// Overwrite queue contents, e.g. to set up a scenario.
    pub fn set_queues(&mut self, queues: &[usize]) -> Result<()> {
        if queues.len() != self.cfg.n_queues || queues.iter().any(|&q| q > self.cfg.capacity) {
            return Err(Error::usage(format!("invalid queue state {queues:?}")));
        }
        self.queues.copy_from_slice(queues);
        Ok(())
    }

    pub fn observation(&self) -> Vec<f64> {
        let cap = self.cfg.capacity as f64;
        let mut v: Vec<f64> = self.queues.iter().map(|&q| q as f64 / cap).collect();
        v.extend((0..self.cfg.n_queues).map(|i| if i == self.phase { 1.0 } else { 0.0 }));
        v.push(0.0);
        v
    }
}

impl Environment for SignalQueueWorld {
    fn spec(&self) -> EnvSpec {
        let c = &self.cfg;
        EnvSpec {
            id: format!(
                "signal_queue n={} rates={:?} service={} capacity={}",
                c.n_queues, c.arrival_rates, c.service_rate, c.capacity
            ),
            state_dim: 2 * c.n_queues + 1,
            n_actions: c.n_queues,
            max_steps: c.max_steps,
            gamma: c.gamma,
        }
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.queues.iter_mut().for_each(|q| *q = 0);
        self.phase = 0;
        self.steps = 0;
        self.finished = false;
        self.last = StepCounts::default();
        self.observation()
    }

    fn step(&mut self, action: usize) -> Result<StepResult> {
        if self.finished {
            return Err(Error::usage("step called after the episode ended"));
        }
        if action >= self.cfg.n_queues {
            return Err(Error::usage(format!(
                "phase {action} out of range 0..{}",
                self.cfg.n_queues
            )));
        }
        self.phase = action;
        let released = self.cfg.service_rate.min(self.queues[action]);
        self.queues[action] -= released;

        let mut counts = StepCounts {
            released,
            ..Default::default()
        };
        for (q, &rate) in self.queues.iter_mut().zip(&self.cfg.arrival_rates) {
            let u: f64 = self.rng.gen();
            if u < rate {
                if *q < self.cfg.capacity {
                    *q += 1;
                    counts.arrived += 1;
                } else {
                    counts.turned_away += 1;
                }
            }
        }
        self.last = counts;

        let full = (self.cfg.n_queues * self.cfg.capacity) as f64;
        let speed = 1.0 - self.total_queued() as f64 / full;
        self.steps += 1;
        let truncated = self.steps >= self.cfg.max_steps;
        self.finished = truncated;
        Ok(StepResult {
            next_state: self.observation(),
            env_reward: speed * released as f64,
            terminal: false,
            truncated,
        })
    }

    fn state_bucket(&self, obs: &[f64]) -> u64 {
        let n = self.cfg.n_queues;
        let phase = obs[n..2 * n].iter().position(|&x| x == 1.0).unwrap_or(n) as u64;
        quantize(&obs[..n], 10) * (n as u64 + 1) + phase
    }

    fn bucketing_id(&self) -> String {
        format!("queue-{}x10", self.cfg.n_queues)
    }

    fn boxed_clone(&self) -> Box<dyn Environment> {
        Box::new(self.clone())
    }
}
