//! Value-iteration experts, demonstration sampling, and the demo file format.
//!
//! File layout (little-endian): the line `ADVIMITATE-DEMO-1\n`, then
//! fingerprint `u64`, state_dim `u32`, n_actions `u32`, mean_return `f64`,
//! trajectory count `u64`. Each trajectory is a flag byte
//! (bit 0 terminal, bit 1 truncated), a transition count `u64` and the
//! transitions: state, action `u32`, reward, env_reward, next_state,
//! flag byte (bit 0 absorbing, bit 1 terminal), behavior_logp.

use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use rand::Rng;

use crate::env::{EnvSpec, Environment};
use crate::error::{Error, Result};
use crate::rollout::{action_rng, episode_seed, mean_std, run_episode};
use crate::trajectory::{wrap_absorbing, Trajectory, Transition};

pub const DEMO_MAGIC: &[u8] = b"ADVIMITATE-DEMO-1\n";

/// Q-table expert with optional epsilon-greedy exploration.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    /// `q_values[s][a]`.
    pub q_values: Vec<Vec<f64>>,
    /// `max_a q_values[s][a]`, zero on terminal states.
    pub values: Vec<f64>,
    pub epsilon: f64,
}

impl TabularPolicy {
    pub fn n_actions(&self) -> usize {
        self.q_values.first().map_or(0, Vec::len)
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(Error::Config(format!("epsilon must lie in [0, 1], got {epsilon}")));
        }
        self.epsilon = epsilon;
        Ok(self)
    }

    /// Lowest-index maximiser of `Q(s, ·)`.
    pub fn greedy(&self, s: usize) -> usize {
        let q = &self.q_values[s];
        let mut best = 0;
        for (a, &v) in q.iter().enumerate() {
            if v > q[best] {
                best = a;
            }
        }
        best
    }

    pub fn probs(&self, s: usize) -> Vec<f64> {
        let n = self.n_actions();
        let mut p = vec![self.epsilon / n as f64; n];
        p[self.greedy(s)] += 1.0 - self.epsilon;
        p
    }

    /// Sample an action and return it with its log-probability.
    pub fn sample<R: Rng + ?Sized>(&self, s: usize, rng: &mut R) -> (usize, f64) {
        let p = self.probs(s);
        let a = if self.epsilon > 0.0 && rng.gen::<f64>() < self.epsilon {
            rng.gen_range(0..p.len())
        } else {
            self.greedy(s)
        };
        (a, p[a].ln())
    }
}

/// Solve the Bellman optimality equations by synchronous sweeps until the
/// largest Q residual falls below `tol`.
pub fn value_iteration(env: &dyn Environment, gamma: f64, tol: f64) -> Result<TabularPolicy> {
    let mdp = env.as_tabular().ok_or_else(|| {
        Error::Unsupported("value iteration needs an enumerable environment".into())
    })?;
    if !(gamma > 0.0 && gamma < 1.0) || !(tol > 0.0) {
        return Err(Error::Config(format!(
            "value iteration needs 0 < gamma < 1 and tol > 0 (got {gamma}, {tol})"
        )));
    }
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let model: Vec<Vec<_>> = (0..ns)
        .map(|s| (0..na).map(|a| mdp.outcomes(s, a)).collect())
        .collect();
    let mut v = vec![0.0; ns];
    let mut q = vec![vec![0.0; na]; ns];
    loop {
        let mut delta = 0.0f64;
        let mut next_v = vec![0.0; ns];
        for s in 0..ns {
            if mdp.is_terminal(s) {
                q[s].iter_mut().for_each(|x| *x = 0.0);
                continue;
            }
            for a in 0..na {
                q[s][a] = model[s][a]
                    .iter()
                    .map(|o| o.prob * (o.reward + if o.terminal { 0.0 } else { gamma * v[o.next] }))
                    .sum();
            }
            next_v[s] = q[s].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            delta = delta.max((next_v[s] - v[s]).abs());
        }
        // The residual of q (built from v) is at most gamma * delta.
        if delta < tol {
            return Ok(TabularPolicy {
                q_values: q,
                values: next_v,
                epsilon: 0.0,
            });
        }
        v = next_v;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoSet {
    pub trajectories: Vec<Trajectory>,
    pub env_fingerprint: u64,
    pub state_dim: usize,
    pub n_actions: usize,
    /// Mean undiscounted environment return per episode.
    pub mean_return: f64,
}

impl DemoSet {
    pub fn check_compatible(&self, spec: &EnvSpec) -> Result<()> {
        if self.state_dim != spec.state_dim || self.n_actions != spec.n_actions {
            return Err(Error::Compatibility(format!(
                "demos have state_dim {} / {} actions, environment has {} / {}",
                self.state_dim, self.n_actions, spec.state_dim, spec.n_actions
            )));
        }
        if self.env_fingerprint != spec.fingerprint() {
            return Err(Error::Compatibility(format!(
                "demo fingerprint {:016x} does not match environment {:016x}",
                self.env_fingerprint,
                spec.fingerprint()
            )));
        }
        Ok(())
    }

    pub fn num_transitions(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        write_demos(&mut out, self).expect("writing to memory cannot fail");
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor::new(bytes);
        let set = read_demos(&mut cur).map_err(|e| match e {
            Error::Io(io) => Error::format(format!("truncated or corrupt demo file: {io}")),
            other => other,
        })?;
        if cur.position() as usize != bytes.len() {
            return Err(Error::format("trailing bytes after demo records"));
        }
        Ok(set)
    }
}

/// Sample `n_episodes` episodes from the tabular expert and wrap them.
pub fn generate_demos(
    policy: &TabularPolicy,
    env: &mut dyn Environment,
    n_episodes: usize,
    seed: u64,
) -> Result<DemoSet> {
    if n_episodes == 0 {
        return Err(Error::usage("n_episodes must be at least 1"));
    }
    let spec = env.spec();
    let mdp_states: Vec<Vec<f64>>;
    {
        let mdp = env.as_tabular().ok_or_else(|| {
            Error::Unsupported("tabular experts need an enumerable environment".into())
        })?;
        if mdp.n_states() != policy.q_values.len() || mdp.n_actions() != policy.n_actions() {
            return Err(Error::Compatibility(
                "policy table does not match the environment".into(),
            ));
        }
        mdp_states = (0..mdp.n_states()).map(|s| mdp.observation(s)).collect();
    }
    let lookup = |obs: &[f64]| {
        mdp_states
            .iter()
            .position(|o| o.as_slice() == obs)
            .ok_or_else(|| Error::usage("observation not in the state table"))
    };

    let mut trajectories = Vec::with_capacity(n_episodes);
    for i in 0..n_episodes {
        let es = episode_seed(seed, i as u64);
        let mut rng = action_rng(es);
        let raw = run_episode(env, es, |obs| Ok(policy.sample(lookup(obs)?, &mut rng)))?;
        trajectories.push(wrap_absorbing(&raw, &spec)?);
    }
    let returns: Vec<f64> = trajectories.iter().map(Trajectory::env_return).collect();
    Ok(DemoSet {
        trajectories,
        env_fingerprint: spec.fingerprint(),
        state_dim: spec.state_dim,
        n_actions: spec.n_actions,
        mean_return: mean_std(&returns).0,
    })
}

fn write_vec(w: &mut impl Write, v: &[f64]) -> std::io::Result<()> {
    v.iter().try_for_each(|&x| w.write_f64::<LE>(x))
}

fn write_demos(w: &mut impl Write, d: &DemoSet) -> std::io::Result<()> {
    w.write_all(DEMO_MAGIC)?;
    w.write_u64::<LE>(d.env_fingerprint)?;
    w.write_u32::<LE>(d.state_dim as u32)?;
    w.write_u32::<LE>(d.n_actions as u32)?;
    w.write_f64::<LE>(d.mean_return)?;
    w.write_u64::<LE>(d.trajectories.len() as u64)?;
    for t in &d.trajectories {
        w.write_u8(t.terminal as u8 | (t.truncated as u8) << 1)?;
        w.write_u64::<LE>(t.len() as u64)?;
        for tr in &t.transitions {
            write_vec(w, &tr.state)?;
            w.write_u32::<LE>(tr.action as u32)?;
            w.write_f64::<LE>(tr.reward)?;
            w.write_f64::<LE>(tr.env_reward)?;
            write_vec(w, &tr.next_state)?;
            w.write_u8(tr.absorbing as u8 | (tr.terminal as u8) << 1)?;
            w.write_f64::<LE>(tr.behavior_logp)?;
        }
    }
    Ok(())
}

fn read_vec(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    (0..n).map(|_| Ok(r.read_f64::<LE>()?)).collect()
}

fn read_demos(r: &mut Cursor<&[u8]>) -> Result<DemoSet> {
    let mut magic = vec![0u8; DEMO_MAGIC.len()];
    r.read_exact(&mut magic)
        .map_err(|_| Error::format("missing demo header"))?;
    if magic != DEMO_MAGIC {
        return Err(Error::format("bad demo header (expected ADVIMITATE-DEMO-1)"));
    }
    let env_fingerprint = r.read_u64::<LE>()?;
    let state_dim = r.read_u32::<LE>()? as usize;
    let n_actions = r.read_u32::<LE>()? as usize;
    let mean_return = r.read_f64::<LE>()?;
    let n_traj = r.read_u64::<LE>()?;
    let remaining = r.get_ref().len() as u64 - r.position();
    // Each trajectory needs at least 9 bytes; reject absurd counts early.
    if n_traj > remaining / 9 {
        return Err(Error::format("trajectory count exceeds file size"));
    }
    let mut trajectories = Vec::with_capacity(n_traj as usize);
    for _ in 0..n_traj {
        let flags = r.read_u8()?;
        let len = r.read_u64::<LE>()?;
        let per = (state_dim as u64 * 2 + 3) * 8 + 5;
        if len.saturating_mul(per) > r.get_ref().len() as u64 - r.position() {
            return Err(Error::format("trajectory length exceeds file size"));
        }
        let mut transitions = Vec::with_capacity(len as usize);
        for _ in 0..len {
            let state = read_vec(r, state_dim)?;
            let action = r.read_u32::<LE>()? as usize;
            let reward = r.read_f64::<LE>()?;
            let env_reward = r.read_f64::<LE>()?;
            let next_state = read_vec(r, state_dim)?;
            let tf = r.read_u8()?;
            let behavior_logp = r.read_f64::<LE>()?;
            if action >= n_actions {
                return Err(Error::format(format!("action {action} out of range")));
            }
            transitions.push(Transition {
                state,
                action,
                reward,
                env_reward,
                next_state,
                absorbing: tf & 1 != 0,
                terminal: tf & 2 != 0,
                behavior_logp,
            });
        }
        trajectories.push(Trajectory {
            transitions,
            terminal: flags & 1 != 0,
            truncated: flags & 2 != 0,
            wrapped: true,
        });
    }
    Ok(DemoSet {
        trajectories,
        env_fingerprint,
        state_dim,
        n_actions,
        mean_return,
    })
}

/// Write atomically: a sibling temp file is renamed over `path`.
pub fn save_demos(d: &DemoSet, path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, d.to_bytes())?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_demos(path: &Path) -> Result<DemoSet> {
    DemoSet::from_bytes(&std::fs::read(path)?)
}

/// Load and bind to an environment in one step.
pub fn load_demos_for(path: &Path, spec: &EnvSpec) -> Result<DemoSet> {
    let d = load_demos(path)?;
    d.check_compatible(spec)?;
    Ok(d)
}
