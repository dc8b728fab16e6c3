//! Transitions, episodes, and the absorbing-state rewrite.

use crate::env::EnvSpec;
use crate::error::{Error, Result};

/// One environment step as stored in a replay buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: usize,
    /// Learned reward slot, overwritten by relabeling.
    pub reward: f64,
    /// Reward emitted by the environment itself.
    pub env_reward: f64,
    pub next_state: Vec<f64>,
    /// `state` is the canonical absorbing state.
    pub absorbing: bool,
    /// The environment signalled termination on this step.
    pub terminal: bool,
    /// `log π_behavior(action | state)` at collection time.
    pub behavior_logp: f64,
}

impl Transition {
    /// True for the transition that enters the absorbing state.
    pub fn enters_absorbing(&self) -> bool {
        self.terminal && !self.absorbing && is_absorbing_state(&self.next_state)
    }
}

/// `0, 0, ..., 0, 1`: the zero observation with the absorbing flag raised.
pub fn absorbing_state(state_dim: usize) -> Vec<f64> {
    let mut s = vec![0.0; state_dim];
    if let Some(last) = s.last_mut() {
        *last = 1.0;
    }
    s
}

pub fn is_absorbing_state(s: &[f64]) -> bool {
    match s.split_last() {
        Some((&flag, rest)) => flag == 1.0 && rest.iter().all(|&x| x == 0.0),
        None => false,
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub transitions: Vec<Transition>,
    /// Ended because the environment terminated.
    pub terminal: bool,
    /// Ended because the step horizon was hit.
    pub truncated: bool,
    /// Already passed through [`wrap_absorbing`].
    pub wrapped: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// Undiscounted sum of environment rewards.
    pub fn env_return(&self) -> f64 {
        self.transitions.iter().map(|t| t.env_reward).sum()
    }

    /// Transitions the policy actually chose (the absorbing self-loop excluded).
    pub fn real_steps(&self) -> usize {
        self.transitions.iter().filter(|t| !t.absorbing).count()
    }
}

fn with_flag(s: &[f64], state_dim: usize, what: &str) -> Result<Vec<f64>> {
    if s.len() + 1 == state_dim {
        let mut v = s.to_vec();
        v.push(0.0);
        Ok(v)
    } else if s.len() == state_dim {
        Ok(s.to_vec())
    } else {
        Err(Error::shape(format!(
            "{what} has {} dims; expected {} (or {} before flagging)",
            s.len(),
            state_dim,
            state_dim - 1
        )))
    }
}

/// Give every state an absorbing-flag dimension and, for episodes the
/// environment terminated, redirect the final transition into the absorbing
/// state and append the `(s_a, 0, ·, s_a)` self-loop.
///
/// Horizon-truncated episodes get no absorbing state. Idempotent.
pub fn wrap_absorbing(traj: &Trajectory, spec: &EnvSpec) -> Result<Trajectory> {
    if traj.is_empty() {
        return Err(Error::usage("cannot wrap an empty trajectory"));
    }
    if !traj.terminal && !traj.truncated {
        return Err(Error::usage(
            "trajectory has not ended (neither terminal nor truncated)",
        ));
    }
    if traj.terminal && traj.truncated {
        return Err(Error::usage("trajectory is both terminal and truncated"));
    }
    if traj.wrapped {
        return Ok(traj.clone());
    }
    let dim = spec.state_dim;
    let mut transitions = traj
        .transitions
        .iter()
        .map(|t| {
            Ok(Transition {
                state: with_flag(&t.state, dim, "state")?,
                next_state: with_flag(&t.next_state, dim, "next_state")?,
                ..t.clone()
            })
        })
        .collect::<Result<Vec<_>>>()?;

    if traj.terminal {
        let s_a = absorbing_state(dim);
        let last = transitions.last_mut().expect("non-empty");
        last.next_state = s_a.clone();
        last.terminal = true;
        transitions.push(Transition {
            state: s_a.clone(),
            action: 0,
            reward: 0.0,
            env_reward: 0.0,
            next_state: s_a,
            absorbing: true,
            terminal: false,
            behavior_logp: 0.0,
        });
    }
    Ok(Trajectory {
        transitions,
        terminal: traj.terminal,
        truncated: traj.truncated,
        wrapped: true,
    })
}
