//! Actor-critic networks, GAE and the PPO update.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{Activation, Mlp};
use crate::optim::{Adam, AdamConfig};
use crate::tensor::{one_hot, Tensor};
use crate::trajectory::{Trajectory, Transition};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaeConfig {
    pub gamma: f64,
    pub lambda_g: f64,
}

impl Default for GaeConfig {
    fn default() -> Self {
        GaeConfig {
            gamma: 0.995,
            lambda_g: 0.97,
        }
    }
}

impl GaeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) || !(0.0..=1.0).contains(&self.lambda_g) {
            return Err(Error::Config(format!(
                "gae needs 0 < gamma < 1 and 0 <= lambda_g <= 1, got {} / {}",
                self.gamma, self.lambda_g
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PpoVariant {
    Clip,
    AdaptiveKl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub epsilon: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub variant: PpoVariant,
    /// Initial KL coefficient for the adaptive variant.
    pub beta_kl: f64,
    pub d_target: f64,
    /// Weight of the entropy bonus in the actor objective.
    pub entropy_coef: f64,
    pub normalize_advantages: bool,
    pub actor_lr: f64,
    pub critic_lr: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            epsilon: 0.2,
            epochs: 4,
            minibatch: 5,
            variant: PpoVariant::Clip,
            beta_kl: 1.0,
            d_target: 0.01,
            entropy_coef: 1e-3,
            normalize_advantages: true,
            actor_lr: 0.003,
            critic_lr: 0.003,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || self.epochs == 0 || self.minibatch == 0 {
            return Err(Error::Config(
                "ppo needs epsilon > 0, epochs >= 1 and minibatch >= 1".into(),
            ));
        }
        if self.beta_kl < 0.0 || !(self.d_target > 0.0) || self.entropy_coef < 0.0 {
            return Err(Error::Config(
                "ppo needs beta_kl >= 0, d_target > 0, entropy_coef >= 0".into(),
            ));
        }
        Ok(())
    }
}

fn log_softmax_row(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
    z.iter().map(|x| x - lse).collect()
}

/// Softmax actor.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub actor: Mlp,
    /// Number of optimizer steps applied to the actor.
    pub theta_version: u64,
}

impl Policy {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        n_actions: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        let mut sizes = vec![state_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(n_actions);
        Ok(Policy {
            actor: Mlp::new(&sizes, Activation::Softmax, rng)?,
            theta_version: 0,
        })
    }

    pub fn from_actor(actor: Mlp) -> Result<Self> {
        if actor.output_activation() != Activation::Softmax {
            return Err(Error::Compatibility("actor must end in a softmax".into()));
        }
        Ok(Policy {
            actor,
            theta_version: 0,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.actor.in_dim()
    }

    pub fn n_actions(&self) -> usize {
        self.actor.out_dim()
    }

    /// Row-wise action log-probabilities for a batch of states.
    pub fn log_probs(&self, states: &Tensor) -> Result<Tensor> {
        let z = self.actor.logits(states)?;
        let data = (0..z.rows())
            .flat_map(|i| log_softmax_row(z.row_slice(i)))
            .collect();
        Tensor::new(z.shape().to_vec(), data)
    }

    pub fn probs(&self, states: &Tensor) -> Result<Tensor> {
        self.actor.predict(states)
    }

    pub fn probs_one(&self, s: &[f64]) -> Result<Vec<f64>> {
        self.actor.predict_one(s)
    }

    /// `log π(a_t | s_t)` for each transition.
    pub fn logp_of(&self, transitions: &[Transition]) -> Result<Vec<f64>> {
        if transitions.is_empty() {
            return Ok(Vec::new());
        }
        let states: Vec<&[f64]> = transitions.iter().map(|t| t.state.as_slice()).collect();
        let lp = self.log_probs(&Tensor::from_rows(&states)?)?;
        Ok(transitions
            .iter()
            .enumerate()
            .map(|(i, t)| lp.row_slice(i)[t.action])
            .collect())
    }

    /// Sample an action; returns it with its log-probability.
    pub fn act<R: Rng + ?Sized>(&self, s: &[f64], rng: &mut R) -> Result<(usize, f64)> {
        let lp = log_softmax_row(self.actor.logits(&Tensor::row(s.to_vec()))?.data());
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut a = lp.len() - 1;
        for (i, l) in lp.iter().enumerate() {
            acc += l.exp();
            if u < acc {
                a = i;
                break;
            }
        }
        Ok((a, lp[a]))
    }

    pub fn act_seeded(&self, s: &[f64], seed: u64) -> Result<(usize, f64)> {
        self.act(s, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// Lowest-index most probable action.
    pub fn greedy(&self, s: &[f64]) -> Result<usize> {
        let z = self.actor.logits(&Tensor::row(s.to_vec()))?;
        let z = z.data();
        let mut best = 0;
        for i in 1..z.len() {
            if z[i] > z[best] {
                best = i;
            }
        }
        Ok(best)
    }

    /// Mean over `states` of the exact action entropy.
    pub fn entropy_estimate(&self, states: &Tensor) -> Result<f64> {
        if states.rows() == 0 {
            return Err(Error::usage("entropy of an empty state batch"));
        }
        let lp = self.log_probs(states)?;
        let total: f64 = lp.data().iter().map(|l| -l.exp() * l).sum();
        Ok(total / states.rows() as f64)
    }
}

/// `KL(p || q)` for two discrete distributions.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi / qi).ln())
        .sum()
}

/// Value network over states, or over state and one-hot action.
#[derive(Debug, Clone, PartialEq)]
pub struct Critic {
    pub net: Mlp,
    pub state_action: bool,
    pub n_actions: usize,
}

impl Critic {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        n_actions: usize,
        hidden: &[usize],
        state_action: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let mut sizes = vec![state_dim + if state_action { n_actions } else { 0 }];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        Ok(Critic {
            net: Mlp::new(&sizes, Activation::Identity, rng)?,
            state_action,
            n_actions,
        })
    }

    pub fn input(&self, s: &[f64], a: usize) -> Vec<f64> {
        let mut x = s.to_vec();
        if self.state_action {
            x.extend(one_hot(a, self.n_actions));
        }
        x
    }

    pub fn values(&self, inputs: &[Vec<f64>]) -> Result<Vec<f64>> {
        if inputs.is_empty() {
            return Ok(Vec::new());
        }
        Ok(self.net.predict(&Tensor::from_rows(inputs)?)?.into_data())
    }
}

/// Generalized advantage estimation for one episode.
///
/// `values` holds `V(s_0) .. V(s_{T-1})` followed by the bootstrap value
/// (zero when the episode ended in the absorbing state).
/// Returns `(advantages, returns_to_go)`.
pub fn gae(rewards: &[f64], values: &[f64], cfg: &GaeConfig) -> Result<(Vec<f64>, Vec<f64>)> {
    if values.len() != rewards.len() + 1 {
        return Err(Error::usage(format!(
            "gae needs {} values for {} rewards, got {}",
            rewards.len() + 1,
            rewards.len(),
            values.len()
        )));
    }
    let mut adv = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        let delta = rewards[t] + cfg.gamma * values[t + 1] - values[t];
        acc = delta + cfg.gamma * cfg.lambda_g * acc;
        adv[t] = acc;
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, ret))
}

/// Per-sample clipped surrogate `min(ρA, clip(ρ, 1-ε, 1+ε)A)`.
pub fn clipped_surrogate(rho: f64, adv: f64, epsilon: f64) -> f64 {
    (rho * adv).min(rho.clamp(1.0 - epsilon, 1.0 + epsilon) * adv)
}

/// `beta / 2` when the measured KL is below `1.5 · d_target`, else `beta · 2`.
pub fn beta_update(d: f64, d_target: f64, beta: f64) -> f64 {
    if d < d_target * 1.5 {
        beta / 2.0
    } else {
        beta * 2.0
    }
}

fn column(g: &mut Graph, v: &[f64]) -> Result<Var> {
    Ok(g.constant(Tensor::matrix(v.len(), 1, v.to_vec())?))
}

/// Weighted mean of an `[n, 1]` node: `Σ w_i x_i`.
fn weighted_sum(g: &mut Graph, x: Var, w: Var) -> Result<Var> {
    let p = g.mul(x, w)?;
    g.sum(p)
}

/// Clipped PPO objective on the tape.
///
/// `logp_new` is an `[n, 1]` node; `weights` (summing to one) give the
/// mean, so masked rows carry weight zero.
pub fn ppo_clip_objective(
    g: &mut Graph,
    logp_new: Var,
    logp_old: &[f64],
    adv: &[f64],
    weights: &[f64],
    epsilon: f64,
) -> Result<Var> {
    let n = logp_old.len();
    if adv.len() != n || weights.len() != n || g.value(logp_new).shape() != [n, 1] {
        return Err(Error::shape("ppo objective inputs disagree in length"));
    }
    let old = column(g, logp_old)?;
    let a = column(g, adv)?;
    let w = column(g, weights)?;
    let diff = g.sub(logp_new, old)?;
    let rho = g.exp(diff)?;
    let s1 = g.mul(rho, a)?;
    let clipped = g.clamp(rho, 1.0 - epsilon, 1.0 + epsilon)?;
    let s2 = g.mul(clipped, a)?;
    let m = g.minimum(s1, s2)?;
    weighted_sum(g, m, w)
}

/// `mean(ρA) − β · mean KL(π_old ‖ π_new)` on the tape.
///
/// `log_probs_new` is the `[n, k]` log-softmax node of the new policy.
#[allow(clippy::too_many_arguments)]
pub fn adaptive_kl_objective(
    g: &mut Graph,
    logp_new: Var,
    log_probs_new: Var,
    logp_old: &[f64],
    adv: &[f64],
    probs_old: &Tensor,
    weights: &[f64],
    beta: f64,
) -> Result<Var> {
    let n = logp_old.len();
    if adv.len() != n || weights.len() != n || probs_old.rows() != n {
        return Err(Error::shape("kl objective inputs disagree in length"));
    }
    let old = column(g, logp_old)?;
    let a = column(g, adv)?;
    let w = column(g, weights)?;
    let diff = g.sub(logp_new, old)?;
    let rho = g.exp(diff)?;
    let s = g.mul(rho, a)?;
    let surrogate = weighted_sum(g, s, w)?;

    // KL(p‖q) = Σ p log p − Σ p log q; the first part is constant.
    let neg_entropy_old: Vec<f64> = (0..n)
        .map(|i| {
            probs_old
                .row_slice(i)
                .iter()
                .filter(|p| **p > 0.0)
                .map(|p| p * p.ln())
                .sum()
        })
        .collect();
    let p_old = g.constant(probs_old.clone());
    let cross = g.mul(p_old, log_probs_new)?;
    let cross = g.sum_cols(cross)?;
    let c = column(g, &neg_entropy_old)?;
    let kl = g.sub(c, cross)?;
    let kl = weighted_sum(g, kl, w)?;
    let pen = g.scale(kl, -beta)?;
    g.add(surrogate, pen)
}

/// One actor minibatch.
#[derive(Debug, Clone)]
pub struct ActorBatch {
    pub states: Tensor,
    pub actions: Vec<usize>,
    pub logp_old: Vec<f64>,
    pub adv: Vec<f64>,
    /// Per-row weight in the mean; zero masks a row out.
    pub weights: Vec<f64>,
    /// Needed by the adaptive-KL variant.
    pub probs_old: Option<Tensor>,
}

/// Result of building a loss on a fresh tape.
pub struct LossGraph {
    pub graph: Graph,
    pub loss: Var,
    pub params: Vec<Var>,
}

impl LossGraph {
    pub fn value(&self) -> f64 {
        self.graph.value(self.loss).item()
    }

    pub fn grads(&self) -> Result<Vec<Tensor>> {
        let mut gr = self.graph.backward_scalar(self.loss)?;
        Ok(self
            .params
            .iter()
            .map(|&p| {
                let shape = self.graph.value(p).shape().to_vec();
                gr.take(p).unwrap_or_else(|| Tensor::zeros(&shape))
            })
            .collect())
    }
}

/// Actor loss: the negated PPO objective minus the entropy bonus.
pub fn actor_loss(actor: &Mlp, b: &ActorBatch, cfg: &PpoConfig, beta: f64) -> Result<LossGraph> {
    let n = b.actions.len();
    let k = actor.out_dim();
    let mut g = Graph::new();
    let x = g.constant(b.states.clone());
    let vars = actor.forward(&mut g, x)?;
    let lsm = g.log_softmax(vars.logits)?;
    let mut mask = vec![0.0; n * k];
    for (i, &a) in b.actions.iter().enumerate() {
        if a >= k {
            return Err(Error::usage(format!("action {a} out of range 0..{k}")));
        }
        mask[i * k + a] = 1.0;
    }
    let mask = g.constant(Tensor::matrix(n, k, mask)?);
    let picked = g.mul(lsm, mask)?;
    let logp_new = g.sum_cols(picked)?;
    let objective = match cfg.variant {
        PpoVariant::Clip => {
            ppo_clip_objective(&mut g, logp_new, &b.logp_old, &b.adv, &b.weights, cfg.epsilon)?
        }
        PpoVariant::AdaptiveKl => {
            let probs_old = b
                .probs_old
                .as_ref()
                .ok_or_else(|| Error::usage("adaptive KL needs the old action probabilities"))?;
            adaptive_kl_objective(
                &mut g, logp_new, lsm, &b.logp_old, &b.adv, probs_old, &b.weights, beta,
            )?
        }
    };
    let total = if cfg.entropy_coef > 0.0 {
        let p = g.exp(lsm)?;
        let plogp = g.mul(p, lsm)?;
        let neg_h = g.sum_cols(plogp)?;
        let w = column(&mut g, &b.weights)?;
        let neg_h = weighted_sum(&mut g, neg_h, w)?;
        let bonus = g.scale(neg_h, -cfg.entropy_coef)?;
        g.add(objective, bonus)?
    } else {
        objective
    };
    let loss = g.neg(total)?;
    Ok(LossGraph {
        graph: g,
        loss,
        params: vars.params,
    })
}

/// Mean squared error between `V(inputs)` and `targets`.
pub fn critic_loss(net: &Mlp, inputs: &Tensor, targets: &[f64]) -> Result<LossGraph> {
    if inputs.rows() != targets.len() {
        return Err(Error::shape("critic targets disagree with inputs"));
    }
    let mut g = Graph::new();
    let x = g.constant(inputs.clone());
    let vars = net.forward(&mut g, x)?;
    let t = column(&mut g, targets)?;
    let d = g.sub(vars.output, t)?;
    let sq = g.square(d)?;
    let loss = g.mean(sq)?;
    Ok(LossGraph {
        graph: g,
        loss,
        params: vars.params,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PpoStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    /// Mean `KL(π_before ‖ π_after)` over the actor rows.
    pub kl: f64,
    pub clip_fraction: f64,
    pub actor_steps: usize,
}

/// Policy, critic and their optimizer state.
#[derive(Debug, Clone)]
pub struct ActorCritic {
    pub policy: Policy,
    pub critic: Critic,
    pub actor_opt: Adam,
    pub critic_opt: Adam,
    pub beta_kl: f64,
}

struct Row {
    state: Vec<f64>,
    critic_in: Vec<f64>,
    action: usize,
    logp_old: f64,
    adv: f64,
    ret: f64,
    actor: bool,
}

impl ActorCritic {
    pub fn new(policy: Policy, critic: Critic, cfg: &PpoConfig) -> Self {
        let actor_opt = Adam::new(
            AdamConfig {
                lr: cfg.actor_lr,
                ..Default::default()
            },
            &policy.actor.params(),
        );
        let critic_opt = Adam::new(
            AdamConfig {
                lr: cfg.critic_lr,
                ..Default::default()
            },
            &critic.net.params(),
        );
        ActorCritic {
            policy,
            critic,
            actor_opt,
            critic_opt,
            beta_kl: cfg.beta_kl,
        }
    }

    /// Advantages and returns for each transition of each trajectory.
    ///
    /// Reward slots must already hold the learned rewards. Truncated
    /// episodes bootstrap from `V(s_T)`; terminated ones with zero.
    pub fn advantages(&self, trajectories: &[Trajectory], gae_cfg: &GaeConfig) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
        trajectories
            .iter()
            .map(|t| {
                if t.is_empty() {
                    return Err(Error::usage("empty trajectory in PPO batch"));
                }
                let mut inputs: Vec<Vec<f64>> = t
                    .transitions
                    .iter()
                    .map(|tr| self.critic.input(&tr.state, tr.action))
                    .collect();
                let last = t.transitions.last().expect("non-empty");
                // The action after a truncated episode is unknown; the
                // state-action critic uses action 0 there.
                inputs.push(self.critic.input(&last.next_state, 0));
                let mut values = self.critic.values(&inputs)?;
                if !t.truncated {
                    *values.last_mut().expect("non-empty") = 0.0;
                }
                let rewards: Vec<f64> = t.transitions.iter().map(|tr| tr.reward).collect();
                gae(&rewards, &values, gae_cfg)
            })
            .collect()
    }

    /// Multi-epoch minibatch PPO on the given trajectories.
    ///
    /// The absorbing self-loop is not a policy decision: it is excluded from
    /// the actor loss but still trains the critic.
    pub fn ppo_update<R: Rng + ?Sized>(
        &mut self,
        trajectories: &[Trajectory],
        cfg: &PpoConfig,
        gae_cfg: &GaeConfig,
        rng: &mut R,
    ) -> Result<PpoStats> {
        cfg.validate()?;
        gae_cfg.validate()?;
        let adv = self.advantages(trajectories, gae_cfg)?;
        let mut rows: Vec<Row> = Vec::new();
        for (t, (a, r)) in trajectories.iter().zip(adv) {
            for ((tr, a), r) in t.transitions.iter().zip(a).zip(r) {
                rows.push(Row {
                    state: tr.state.clone(),
                    critic_in: self.critic.input(&tr.state, tr.action),
                    action: tr.action,
                    logp_old: tr.behavior_logp,
                    adv: a,
                    ret: r,
                    actor: !tr.absorbing,
                });
            }
        }
        if rows.is_empty() {
            return Err(Error::usage("empty PPO batch"));
        }
        if cfg.normalize_advantages {
            let actor_adv: Vec<f64> = rows.iter().filter(|r| r.actor).map(|r| r.adv).collect();
            if actor_adv.len() > 1 {
                let n = actor_adv.len() as f64;
                let mean = actor_adv.iter().sum::<f64>() / n;
                let std = (actor_adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
                for r in rows.iter_mut().filter(|r| r.actor) {
                    r.adv = (r.adv - mean) / (std + 1e-8);
                }
            }
        }

        let actor_states: Vec<&[f64]> = rows
            .iter()
            .filter(|r| r.actor)
            .map(|r| r.state.as_slice())
            .collect();
        let before = if actor_states.is_empty() {
            None
        } else {
            Some((Tensor::from_rows(&actor_states)?, self.policy.probs(&Tensor::from_rows(&actor_states)?)?))
        };
        let probs_old_all: Option<Vec<Vec<f64>>> = match cfg.variant {
            PpoVariant::AdaptiveKl => {
                let states: Vec<&[f64]> = rows.iter().map(|r| r.state.as_slice()).collect();
                let p = self.policy.probs(&Tensor::from_rows(&states)?)?;
                Some((0..p.rows()).map(|i| p.row_slice(i).to_vec()).collect())
            }
            PpoVariant::Clip => None,
        };

        let mut order: Vec<usize> = (0..rows.len()).collect();
        let mut stats = PpoStats::default();
        let (mut n_actor, mut n_critic, mut clipped, mut counted) = (0usize, 0usize, 0usize, 0usize);
        for _ in 0..cfg.epochs {
            order.shuffle(rng);
            for chunk in order.chunks(cfg.minibatch) {
                // Critic on every row.
                let inputs: Vec<&[f64]> = chunk.iter().map(|&i| rows[i].critic_in.as_slice()).collect();
                let targets: Vec<f64> = chunk.iter().map(|&i| rows[i].ret).collect();
                let cl = critic_loss(&self.critic.net, &Tensor::from_rows(&inputs)?, &targets)?;
                let v = cl.value();
                if !v.is_finite() {
                    return Err(Error::numerical(format!("critic loss is {v}")));
                }
                self.critic_opt.step(self.critic.net.params_mut(), &cl.grads()?)?;
                stats.value_loss += v;
                n_critic += 1;

                // Actor on the policy-chosen rows.
                let idx: Vec<usize> = chunk.iter().copied().filter(|&i| rows[i].actor).collect();
                if idx.is_empty() {
                    continue;
                }
                let states: Vec<&[f64]> = idx.iter().map(|&i| rows[i].state.as_slice()).collect();
                let batch = ActorBatch {
                    states: Tensor::from_rows(&states)?,
                    actions: idx.iter().map(|&i| rows[i].action).collect(),
                    logp_old: idx.iter().map(|&i| rows[i].logp_old).collect(),
                    adv: idx.iter().map(|&i| rows[i].adv).collect(),
                    weights: vec![1.0 / idx.len() as f64; idx.len()],
                    probs_old: match &probs_old_all {
                        Some(p) => {
                            let r: Vec<&[f64]> = idx.iter().map(|&i| p[i].as_slice()).collect();
                            Some(Tensor::from_rows(&r)?)
                        }
                        None => None,
                    },
                };
                let al = actor_loss(&self.policy.actor, &batch, cfg, self.beta_kl)?;
                let v = al.value();
                if !v.is_finite() {
                    return Err(Error::numerical(format!("actor loss is {v}")));
                }
                let lp = self.policy.log_probs(&batch.states)?;
                for (k, &a) in batch.actions.iter().enumerate() {
                    let rho = (lp.row_slice(k)[a] - batch.logp_old[k]).exp();
                    if (rho - 1.0).abs() > cfg.epsilon {
                        clipped += 1;
                    }
                    counted += 1;
                }
                self.actor_opt.step(self.policy.actor.params_mut(), &al.grads()?)?;
                self.policy.theta_version += 1;
                stats.policy_loss += v;
                n_actor += 1;
            }
        }
        stats.value_loss /= n_critic.max(1) as f64;
        stats.policy_loss /= n_actor.max(1) as f64;
        stats.clip_fraction = clipped as f64 / counted.max(1) as f64;
        stats.actor_steps = n_actor;
        if let Some((states, p_before)) = before {
            let p_after = self.policy.probs(&states)?;
            let n = states.rows();
            stats.kl = (0..n)
                .map(|i| kl_divergence(p_before.row_slice(i), p_after.row_slice(i)))
                .sum::<f64>()
                / n as f64;
            stats.entropy = self.policy.entropy_estimate(&states)?;
            if cfg.variant == PpoVariant::AdaptiveKl {
                self.beta_kl = beta_update(stats.kl, cfg.d_target, self.beta_kl);
            }
        }
        Ok(stats)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Layer;

    fn fixed_policy(logits: &[f64]) -> Policy {
        let k = logits.len();
        Policy::from_actor(
            Mlp::from_layers(
                vec![Layer {
                    weight: Tensor::zeros(&[1, k]),
                    bias: Tensor::matrix(1, k, logits.to_vec()).unwrap(),
                }],
                Activation::Softmax,
            )
            .unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn uniform_actor_logp() {
        let p = fixed_policy(&[0.0; 4]);
        for seed in 0..20 {
            let (_, lp) = p.act_seeded(&[1.0], seed).unwrap();
            assert!((lp - 0.25f64.ln()).abs() < 1e-15);
        }
        let h = p.entropy_estimate(&Tensor::row(vec![0.3])).unwrap();
        assert!((h - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn peaked_actor_is_nearly_greedy() {
        let p = fixed_policy(&[10.0, 0.0, 0.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let zeros = (0..10_000)
            .filter(|_| p.act(&[0.0], &mut rng).unwrap().0 == 0)
            .count();
        assert!(zeros >= 9_990);
        let q = fixed_policy(&[30.0, 0.0, 0.0, 0.0]);
        assert!(q.entropy_estimate(&Tensor::row(vec![0.0])).unwrap() < 0.01);
    }

    #[test]
    fn gae_special_cases() {
        let r = [1.0, -0.5, 2.0];
        let v = [0.3, 0.1, -0.2, 0.4];
        let one = GaeConfig {
            gamma: 0.9,
            lambda_g: 0.0,
        };
        let (a, ret) = gae(&r, &v, &one).unwrap();
        for t in 0..3 {
            let delta = r[t] + 0.9 * v[t + 1] - v[t];
            assert!((a[t] - delta).abs() < 1e-15);
            assert!((ret[t] - a[t] - v[t]).abs() < 1e-15);
        }
        let mc = GaeConfig {
            gamma: 0.9,
            lambda_g: 1.0,
        };
        let (a, _) = gae(&r, &[0.0; 4], &mc).unwrap();
        assert!((a[0] - (1.0 - 0.45 + 0.81 * 2.0)).abs() < 1e-12);
        assert!(matches!(gae(&r, &v[..3], &mc), Err(Error::Usage(_))));
    }

    #[test]
    fn clip_arithmetic() {
        assert!((clipped_surrogate(1.5, 1.0, 0.2) - 1.2).abs() < 1e-15);
        assert_eq!(clipped_surrogate(1.0, -3.0, 0.2), -3.0);
        assert_eq!(clipped_surrogate(0.5, -1.0, 0.2), -0.8);
    }

    #[test]
    fn identity_ratio_objective_is_mean_advantage() {
        let mut g = Graph::new();
        let lp = g.leaf(Tensor::matrix(3, 1, vec![-0.1, -1.0, -2.0]).unwrap());
        let adv = [0.5, -1.0, 2.0];
        let w = [1.0 / 3.0; 3];
        let o = ppo_clip_objective(&mut g, lp, &[-0.1, -1.0, -2.0], &adv, &w, 0.2).unwrap();
        assert!((g.value(o).item() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn kl_and_beta_rule() {
        let d = kl_divergence(&[0.5, 0.5], &[0.9, 0.1]);
        let expect = 0.5 * (0.5f64 / 0.9).ln() + 0.5 * (0.5f64 / 0.1).ln();
        assert!((d - expect).abs() < 1e-15);
        assert!((d - 0.5108).abs() < 1e-4);
        assert_eq!(beta_update(0.9 * 0.01 * 1.5, 0.01, 1.0), 0.5);
        assert_eq!(beta_update(0.02, 0.01, 1.0), 2.0);
    }

    #[test]
    fn kl_objective_without_policy_change() {
        let p = fixed_policy(&[0.2, -0.4, 1.0]);
        let states = Tensor::matrix(2, 1, vec![0.0, 1.0]).unwrap();
        let probs = p.probs(&states).unwrap();
        let lp = p.log_probs(&states).unwrap();
        let actions = vec![2, 0];
        let batch = ActorBatch {
            states,
            logp_old: actions.iter().enumerate().map(|(i, &a)| lp.row_slice(i)[a]).collect(),
            actions,
            adv: vec![1.0, 3.0],
            weights: vec![0.5, 0.5],
            probs_old: Some(probs),
        };
        let cfg = PpoConfig {
            variant: PpoVariant::AdaptiveKl,
            entropy_coef: 0.0,
            ..Default::default()
        };
        let l = actor_loss(&p.actor, &batch, &cfg, 5.0).unwrap();
        assert!((l.value() + 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_advantage_leaves_actor_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pi = Policy::new(3, 2, &[8], &mut rng).unwrap();
        let critic = Critic::new(3, 2, &[8], false, &mut rng).unwrap();
        let cfg = PpoConfig {
            entropy_coef: 0.0,
            normalize_advantages: false,
            ..Default::default()
        };
        let mut ac = ActorCritic::new(pi.clone(), critic, &cfg);
        let transitions: Vec<Transition> = (0..6)
            .map(|i| Transition {
                state: vec![i as f64 * 0.1, 1.0, 0.0],
                action: i % 2,
                reward: 0.0,
                env_reward: 0.0,
                next_state: vec![i as f64 * 0.1 + 0.1, 1.0, 0.0],
                absorbing: false,
                terminal: false,
                behavior_logp: -0.7,
            })
            .collect();
        // Critic fixed at zero and zero rewards make every advantage zero.
        for l in ac.critic.net.layers_mut() {
            l.weight.data_mut().iter_mut().for_each(|w| *w = 0.0);
        }
        let mut ac_zero = ac.clone();
        ac_zero.critic_opt = Adam::new(
            AdamConfig {
                lr: 0.0,
                ..Default::default()
            },
            &ac_zero.critic.net.params(),
        );
        let traj = Trajectory {
            transitions,
            terminal: false,
            truncated: true,
            wrapped: true,
        };
        ac_zero.ppo_update(&[traj], &cfg, &GaeConfig::default(), &mut rng).unwrap();
        assert_eq!(ac_zero.policy.actor, pi.actor);
    }
}
