//! Episode collection shared by demo generation, training and evaluation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::env::Environment;
use crate::error::{Error, Result};
use crate::trajectory::{Trajectory, Transition};

/// Seed for episode `index` of a run seeded with `base` (SplitMix64 mix).
pub fn episode_seed(base: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Action-sampling stream for an episode, independent of the environment's.
pub fn action_rng(episode_seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(episode_seed ^ 0xA5A5_5A5A_C3C3_3C3C)
}

/// Run one episode. `choose` maps an observation to `(action, log-prob)`.
///
/// The result is not yet absorbing-wrapped.
pub fn run_episode<F>(env: &mut dyn Environment, seed: u64, mut choose: F) -> Result<Trajectory>
where
    F: FnMut(&[f64]) -> Result<(usize, f64)>,
{
    let mut state = env.reset(seed);
    let mut transitions = Vec::new();
    loop {
        let (action, logp) = choose(&state)?;
        let step = env.step(action)?;
        if step.terminal && step.truncated {
            return Err(Error::usage("environment reported terminal and truncated together"));
        }
        transitions.push(Transition {
            state: std::mem::take(&mut state),
            action,
            reward: 0.0,
            env_reward: step.env_reward,
            next_state: step.next_state.clone(),
            absorbing: false,
            terminal: step.terminal,
            behavior_logp: logp,
        });
        if step.terminal || step.truncated {
            return Ok(Trajectory {
                transitions,
                terminal: step.terminal,
                truncated: step.truncated,
                wrapped: false,
            });
        }
        state = step.next_state;
    }
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{GridWorld, GridWorldConfig};

    #[test]
    fn seeds_differ_per_episode() {
        let a: Vec<u64> = (0..100).map(|i| episode_seed(7, i)).collect();
        let mut b = a.clone();
        b.sort_unstable();
        b.dedup();
        assert_eq!(a.len(), b.len());
        assert_ne!(episode_seed(7, 0), episode_seed(8, 0));
    }

    #[test]
    fn episode_stops_at_horizon() {
        let mut env = GridWorld::new(GridWorldConfig {
            max_steps: 5,
            ..Default::default()
        })
        .unwrap();
        let t = run_episode(&mut env, 0, |_| Ok((0, 0.0))).unwrap();
        assert_eq!(t.len(), 5);
        assert!(t.truncated && !t.terminal);
        assert_eq!(t.transitions[1].state, t.transitions[0].next_state);
    }
}
