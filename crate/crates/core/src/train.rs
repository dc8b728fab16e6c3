//! The adversarial imitation training loop, evaluation, and checkpoint I/O.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::checkpoint::Checkpoint;
use crate::config::TrainConfig;
use crate::demos::{DemoSet, TabularPolicy};
use crate::discriminator::{DiscStats, DiscTrainer, Discriminator, RewardConfig};
use crate::env::{EnvSpec, Environment};
use crate::error::{Error, Result};
use crate::occupancy::{occupancy_distance, OccupancyEstimate};
use crate::policy::{ActorCritic, Critic, Policy, PpoStats};
use crate::replay::ReplayBuffer;
use crate::rollout::{action_rng, episode_seed, mean_std, run_episode};
use crate::trajectory::{wrap_absorbing, Trajectory};

pub const METRICS_HEADER: &str = "iteration,mean_episode_return,mean_shaped_return,disc_loss,\
mean_D_policy,mean_D_expert,policy_entropy,value_loss,clip_fraction,occupancy_distance,wall_ms";

/// One line of the metrics table.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MetricsRow {
    pub iteration: usize,
    pub mean_episode_return: f64,
    pub mean_shaped_return: f64,
    pub disc_loss: f64,
    pub mean_d_policy: f64,
    pub mean_d_expert: f64,
    pub policy_entropy: f64,
    pub value_loss: f64,
    pub clip_fraction: f64,
    pub occupancy_distance: f64,
    pub wall_ms: u64,
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{}",
            self.iteration,
            self.mean_episode_return,
            self.mean_shaped_return,
            self.disc_loss,
            self.mean_d_policy,
            self.mean_d_expert,
            self.policy_entropy,
            self.value_loss,
            self.clip_fraction,
            self.occupancy_distance,
            self.wall_ms
        )
    }
}

/// Points in an iteration, reported in the order they happen.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainEvent {
    Collected { iteration: usize, episodes: usize },
    Wrapped { iteration: usize },
    Pushed { iteration: usize, replay_len: usize },
    DiscUpdate { iteration: usize, step: usize },
    Relabeled { iteration: usize, round: usize },
    PpoUpdate { iteration: usize, round: usize },
    Metrics(MetricsRow),
    Checkpoint { iteration: usize, path: PathBuf },
}

/// Loop state for one training run.
pub struct Trainer {
    pub cfg: TrainConfig,
    env: Box<dyn Environment>,
    spec: EnvSpec,
    pub expert: ReplayBuffer,
    pub replay: ReplayBuffer,
    pub ac: ActorCritic,
    pub disc: DiscTrainer,
    expert_occupancy: OccupancyEstimate,
    expert_mean_return: f64,
    rng: ChaCha8Rng,
    episodes_seen: u64,
    pub iteration: usize,
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for x in xs {
        s += x;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

impl Trainer {
    pub fn new(cfg: TrainConfig, demos: &DemoSet) -> Result<Self> {
        cfg.validate()?;
        let env = cfg.env.build()?;
        let spec = env.spec();
        demos.check_compatible(&spec)?;
        let expert = ReplayBuffer::expert(&demos.trajectories, spec.state_dim)?;
        let replay = ReplayBuffer::new(cfg.replay_capacity, spec.state_dim)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let net = &cfg.network;
        let policy = Policy::new(spec.state_dim, spec.n_actions, &net.actor_hidden, &mut rng)?;
        let critic = Critic::new(
            spec.state_dim,
            spec.n_actions,
            &net.critic_hidden,
            net.state_action_critic,
            &mut rng,
        )?;
        let disc = Discriminator::new(
            spec.state_dim,
            spec.n_actions,
            &net.disc_hidden,
            cfg.reward.uses_next_state(),
            cfg.disc.clip_eps,
            &mut rng,
        )?;
        let expert_occupancy =
            OccupancyEstimate::from_trajectories(&demos.trajectories, env.as_ref(), spec.gamma)?;
        Ok(Trainer {
            ac: ActorCritic::new(policy, critic, &cfg.ppo),
            disc: DiscTrainer::new(disc, &cfg.disc),
            expert,
            replay,
            expert_occupancy,
            expert_mean_return: demos.mean_return,
            env,
            spec,
            rng,
            episodes_seen: 0,
            iteration: 0,
            cfg,
        })
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn env(&self) -> &dyn Environment {
        self.env.as_ref()
    }

    pub fn expert_mean_return(&self) -> f64 {
        self.expert_mean_return
    }

    /// Sample `n` episodes from the current policy. Each episode has its own
    /// seed, so the result does not depend on the number of workers.
    fn collect(&mut self, n: usize) -> Result<Vec<Trajectory>> {
        let base = self.cfg.seed;
        let first = self.episodes_seen;
        self.episodes_seen += n as u64;
        let policy = &self.ac.policy;
        let run = |env: &mut dyn Environment, i: usize| {
            let es = episode_seed(base, first + i as u64);
            let mut rng = action_rng(es);
            run_episode(env, es, |s| policy.act(s, &mut rng))
        };
        if self.cfg.workers > 1 {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(self.cfg.workers)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            let proto = &self.env;
            pool.install(|| {
                (0..n)
                    .into_par_iter()
                    .map(|i| run(proto.boxed_clone().as_mut(), i))
                    .collect()
            })
        } else {
            (0..n).map(|i| run(self.env.as_mut(), i)).collect()
        }
    }

    /// Prepare trajectories for the actor-critic update according to the
    /// reward mode: without replayed absorbing rewards the self-loop is dropped.
    fn for_ppo(&self, t: &Trajectory) -> Trajectory {
        let mut t = t.clone();
        if !self.cfg.reward.keeps_self_loops() {
            t.transitions.retain(|tr| !tr.absorbing);
        }
        t
    }

    fn reward_cfg(&self) -> RewardConfig {
        self.cfg.reward
    }

    /// One iteration of the loop.
    pub fn step(&mut self, observe: &mut dyn FnMut(&TrainEvent)) -> Result<MetricsRow> {
        let started = Instant::now();
        self.iteration += 1;
        let it = self.iteration;

        let raw = self.collect(self.cfg.episodes_per_iter)?;
        observe(&TrainEvent::Collected {
            iteration: it,
            episodes: raw.len(),
        });
        let trajs = raw
            .iter()
            .map(|t| wrap_absorbing(t, &self.spec))
            .collect::<Result<Vec<_>>>()?;
        observe(&TrainEvent::Wrapped { iteration: it });
        for t in &trajs {
            self.replay.push_trajectory(t)?;
        }
        observe(&TrainEvent::Pushed {
            iteration: it,
            replay_len: self.replay.len(),
        });

        let n_tau = trajs.len();
        let disc_steps = self.cfg.disc_updates_per_iter.unwrap_or(n_tau);
        let mut dstats: Vec<DiscStats> = Vec::with_capacity(disc_steps);
        for j in 0..disc_steps {
            let s = self.disc.update_from_buffers(
                &self.replay,
                &self.expert,
                self.cfg.batch,
                &self.ac.policy,
                &self.cfg.disc,
                &mut self.rng,
            )?;
            dstats.push(s);
            observe(&TrainEvent::DiscUpdate {
                iteration: it,
                step: j,
            });
        }

        let rcfg = self.reward_cfg();
        let rounds = self.cfg.ppo_rounds_per_iter.unwrap_or(n_tau);
        let mut pstats: Vec<PpoStats> = Vec::new();
        let mut shaped_returns = vec![0.0; n_tau];
        for j in 0..rounds {
            let mut batch = self.replay.sample(self.cfg.batch, &mut self.rng)?;
            let r = self.disc.disc.rewards(&batch.transitions, &rcfg)?;
            self.replay.relabel(&mut batch, &r)?;
            let mut subset = Vec::new();
            for (k, t) in trajs.iter().enumerate().filter(|(k, _)| k % rounds == j) {
                let mut t = self.for_ppo(t);
                let r = self.disc.disc.rewards(&t.transitions, &rcfg)?;
                crate::replay::relabel(&mut t.transitions, &r)?;
                shaped_returns[k] = r.iter().sum();
                subset.push(t);
            }
            observe(&TrainEvent::Relabeled {
                iteration: it,
                round: j,
            });
            if subset.is_empty() {
                continue;
            }
            let s = self
                .ac
                .ppo_update(&subset, &self.cfg.ppo, &self.cfg.gae, &mut self.rng)?;
            pstats.push(s);
            observe(&TrainEvent::PpoUpdate {
                iteration: it,
                round: j,
            });
        }

        let occ = OccupancyEstimate::from_trajectories(&trajs, self.env.as_ref(), self.spec.gamma)?;
        let row = MetricsRow {
            iteration: it,
            mean_episode_return: mean(trajs.iter().map(Trajectory::env_return)),
            mean_shaped_return: mean(shaped_returns),
            disc_loss: mean(dstats.iter().map(|s| s.loss)),
            mean_d_policy: mean(dstats.iter().map(|s| s.mean_d_policy)),
            mean_d_expert: mean(dstats.iter().map(|s| s.mean_d_expert)),
            policy_entropy: mean(pstats.iter().map(|s| s.entropy)),
            value_loss: mean(pstats.iter().map(|s| s.value_loss)),
            clip_fraction: mean(pstats.iter().map(|s| s.clip_fraction)),
            occupancy_distance: occupancy_distance(&occ, &self.expert_occupancy)?,
            wall_ms: if self.cfg.log_wall_time {
                started.elapsed().as_millis() as u64
            } else {
                0
            },
        };
        let finite = [
            row.mean_shaped_return,
            row.disc_loss,
            row.policy_entropy,
            row.value_loss,
        ];
        if finite.iter().any(|x| !x.is_finite()) {
            return Err(Error::numerical(format!("non-finite metrics at iteration {it}")));
        }
        observe(&TrainEvent::Metrics(row));
        Ok(row)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new();
        c.insert_mlp("actor", &self.ac.policy.actor);
        c.insert_mlp("critic", &self.ac.critic.net);
        c.insert_mlp("disc", &self.disc.disc.net);
        let m = &mut c.meta;
        m.insert("iteration".into(), self.iteration.to_string());
        m.insert("theta_version".into(), self.ac.policy.theta_version.to_string());
        m.insert("state_dim".into(), self.spec.state_dim.to_string());
        m.insert("n_actions".into(), self.spec.n_actions.to_string());
        m.insert("env_fingerprint".into(), format!("{:016x}", self.spec.fingerprint()));
        m.insert("disc.use_next_state".into(), self.disc.disc.use_next_state.to_string());
        m.insert("disc.clip_eps".into(), format!("{:?}", self.disc.disc.clip_eps));
        m.insert("critic.state_action".into(), self.ac.critic.state_action.to_string());
        c
    }

    /// Greedy evaluation of the current actor.
    pub fn evaluate(&self, n_episodes: usize, seed: u64) -> Result<EvalSummary> {
        let mut env = self.env.boxed_clone();
        evaluate_policy(&self.ac.policy, env.as_mut(), n_episodes, seed, Some(&self.expert_occupancy))
    }
}

/// Where a training run writes and when it should stop early.
pub struct TrainOptions<'a> {
    pub out_dir: PathBuf,
    pub stop: Option<&'a AtomicBool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub rows: Vec<MetricsRow>,
    pub interrupted: bool,
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
}

pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
pub const METRICS_FILE: &str = "metrics.csv";

/// Run the configured number of iterations, writing `metrics.csv` and
/// `checkpoint.ckpt` under `opts.out_dir`.
///
/// A numerical failure leaves the last good checkpoint in place.
pub fn train(
    cfg: &TrainConfig,
    demos: &DemoSet,
    opts: &TrainOptions,
    observe: &mut dyn FnMut(&TrainEvent),
) -> Result<TrainSummary> {
    let mut trainer = Trainer::new(cfg.clone(), demos)?;
    std::fs::create_dir_all(&opts.out_dir)?;
    let ckpt_path = opts.out_dir.join(CHECKPOINT_FILE);
    let metrics_path = opts.out_dir.join(METRICS_FILE);
    let mut metrics = BufWriter::new(File::create(&metrics_path)?);
    writeln!(metrics, "{METRICS_HEADER}")?;

    let mut rows = Vec::new();
    let mut interrupted = false;
    let save = |t: &Trainer, observe: &mut dyn FnMut(&TrainEvent)| -> Result<()> {
        t.checkpoint().save(&ckpt_path)?;
        observe(&TrainEvent::Checkpoint {
            iteration: t.iteration,
            path: ckpt_path.clone(),
        });
        Ok(())
    };
    while trainer.iteration < cfg.iterations {
        if opts.stop.is_some_and(|s| s.load(Ordering::SeqCst)) {
            interrupted = true;
            break;
        }
        let row = match trainer.step(observe) {
            Ok(r) => r,
            Err(e) => {
                metrics.flush()?;
                return Err(e);
            }
        };
        writeln!(metrics, "{}", row.to_csv())?;
        metrics.flush()?;
        rows.push(row);
        if trainer.iteration % cfg.checkpoint_every == 0 {
            save(&trainer, observe)?;
        }
    }
    if trainer.iteration % cfg.checkpoint_every != 0 || trainer.iteration == 0 {
        save(&trainer, observe)?;
    }
    metrics.flush()?;
    Ok(TrainSummary {
        rows,
        interrupted,
        checkpoint: ckpt_path,
        metrics: metrics_path,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub mean_return: f64,
    pub std_return: f64,
    pub mean_length: f64,
    /// Against the expert occupancy, when one was supplied.
    pub occupancy_distance: Option<f64>,
    pub episodes: usize,
}

fn summarise(
    trajs: &[Trajectory],
    env: &dyn Environment,
    reference: Option<&OccupancyEstimate>,
) -> Result<EvalSummary> {
    let returns: Vec<f64> = trajs.iter().map(Trajectory::env_return).collect();
    let (mean_return, std_return) = mean_std(&returns);
    let occupancy_distance = match reference {
        Some(r) => {
            let o = OccupancyEstimate::from_trajectories(trajs, env, env.spec().gamma)?;
            Some(occupancy_distance(&o, r)?)
        }
        None => None,
    };
    Ok(EvalSummary {
        mean_return,
        std_return,
        mean_length: mean(trajs.iter().map(|t| t.real_steps() as f64)),
        occupancy_distance,
        episodes: trajs.len(),
    })
}

/// Run `n_episodes` with a deterministic action rule. Episode `i` uses the
/// environment seed `episode_seed(seed, i)`.
pub fn evaluate_with<F>(
    env: &mut dyn Environment,
    n_episodes: usize,
    seed: u64,
    reference: Option<&OccupancyEstimate>,
    mut choose: F,
) -> Result<EvalSummary>
where
    F: FnMut(&[f64]) -> Result<usize>,
{
    if n_episodes == 0 {
        return Err(Error::usage("n_episodes must be at least 1"));
    }
    let trajs = (0..n_episodes)
        .map(|i| run_episode(env, episode_seed(seed, i as u64), |s| Ok((choose(s)?, 0.0))))
        .collect::<Result<Vec<_>>>()?;
    summarise(&trajs, env, reference)
}

/// Greedy (argmax) evaluation of a policy.
pub fn evaluate_policy(
    policy: &Policy,
    env: &mut dyn Environment,
    n_episodes: usize,
    seed: u64,
    reference: Option<&OccupancyEstimate>,
) -> Result<EvalSummary> {
    if policy.state_dim() != env.spec().state_dim || policy.n_actions() != env.spec().n_actions {
        return Err(Error::Compatibility(format!(
            "policy expects {} dims / {} actions, environment has {} / {}",
            policy.state_dim(),
            policy.n_actions(),
            env.spec().state_dim,
            env.spec().n_actions
        )));
    }
    evaluate_with(env, n_episodes, seed, reference, |s| policy.greedy(s))
}

/// Greedy evaluation of a tabular expert.
pub fn evaluate_tabular(
    policy: &TabularPolicy,
    env: &mut dyn Environment,
    n_episodes: usize,
    seed: u64,
) -> Result<EvalSummary> {
    let table: Vec<Vec<f64>> = {
        let mdp = env
            .as_tabular()
            .ok_or_else(|| Error::Unsupported("tabular policy on a non-enumerable environment".into()))?;
        (0..mdp.n_states()).map(|s| mdp.observation(s)).collect()
    };
    evaluate_with(env, n_episodes, seed, None, |obs| {
        let s = table
            .iter()
            .position(|o| o.as_slice() == obs)
            .ok_or_else(|| Error::usage("observation not in the state table"))?;
        Ok(policy.greedy(s))
    })
}

/// Evaluate the actor stored in a checkpoint.
pub fn evaluate_checkpoint(
    ckpt: &Checkpoint,
    env: &mut dyn Environment,
    n_episodes: usize,
    seed: u64,
    demos: Option<&DemoSet>,
) -> Result<EvalSummary> {
    let spec = env.spec();
    if let Some(d) = ckpt.meta.get("state_dim") {
        if d != &spec.state_dim.to_string() {
            return Err(Error::Compatibility(format!(
                "checkpoint state_dim {d} does not match environment {}",
                spec.state_dim
            )));
        }
    }
    let policy = Policy::from_actor(ckpt.mlp("actor")?)?;
    let reference = match demos {
        Some(d) => {
            d.check_compatible(&spec)?;
            Some(OccupancyEstimate::from_trajectories(&d.trajectories, env, spec.gamma)?)
        }
        None => None,
    };
    evaluate_policy(&policy, env, n_episodes, seed, reference.as_ref())
}

/// Human-readable summary of a checkpoint.
pub fn inspect_checkpoint(ckpt: &Checkpoint) -> String {
    let mut out = String::new();
    for (k, v) in &ckpt.meta {
        out.push_str(&format!("meta {k} = {v}\n"));
    }
    let mut total = 0;
    for (k, t) in &ckpt.tensors {
        total += t.len();
        out.push_str(&format!("tensor {k} {:?}\n", t.shape()));
    }
    out.push_str(&format!("parameters {total}\n"));
    out
}

/// Read a metrics file back into rows.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(Error::format("metrics header mismatch"));
    }
    lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 11 {
                return Err(Error::format(format!("metrics row has {} fields", f.len())));
            }
            let num = |i: usize| -> Result<f64> {
                f[i].parse().map_err(|_| Error::format(format!("bad number {:?}", f[i])))
            };
            Ok(MetricsRow {
                iteration: f[0].parse().map_err(|_| Error::format("bad iteration"))?,
                mean_episode_return: num(1)?,
                mean_shaped_return: num(2)?,
                disc_loss: num(3)?,
                mean_d_policy: num(4)?,
                mean_d_expert: num(5)?,
                policy_entropy: num(6)?,
                value_loss: num(7)?,
                clip_fraction: num(8)?,
                occupancy_distance: num(9)?,
                wall_ms: f[10].parse().map_err(|_| Error::format("bad wall_ms"))?,
            })
        })
        .collect()
}

/// Solve the configured environment and sample the expert demonstrations.
pub fn build_demos(cfg: &TrainConfig) -> Result<(TabularPolicy, DemoSet)> {
    let mut env = cfg.env.build()?;
    let gamma = env.spec().gamma;
    let expert = crate::demos::value_iteration(env.as_ref(), gamma, cfg.demos.tol)?
        .with_epsilon(cfg.demos.epsilon)?;
    let demos = crate::demos::generate_demos(&expert, env.as_mut(), cfg.demos.episodes, cfg.demos.seed)?;
    Ok((expert, demos))
}
