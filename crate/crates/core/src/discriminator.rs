//! Discriminator, learned rewards and the off-policy discriminator loss.
//!
//! The loss is minimised, so `D` rises towards 1 on expert samples and falls
//! towards 0 on policy samples. The reward `log D − log(1 − D)` is therefore
//! high for expert-like behaviour.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::nn::{Activation, Mlp};
use crate::optim::{Adam, AdamConfig};
use crate::policy::{LossGraph, Policy};
use crate::replay::ReplayBuffer;
use crate::tensor::{one_hot, Tensor};
use crate::trajectory::{absorbing_state, Transition};

#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    pub net: Mlp,
    pub use_next_state: bool,
    pub clip_eps: f64,
    state_dim: usize,
    n_actions: usize,
}

fn logit(p: f64) -> f64 {
    p.ln() - (1.0 - p).ln()
}

impl Discriminator {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        n_actions: usize,
        hidden: &[usize],
        use_next_state: bool,
        clip_eps: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut sizes = vec![input_dim(state_dim, n_actions, use_next_state)];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        Self::from_net(
            Mlp::new(&sizes, Activation::Sigmoid, rng)?,
            state_dim,
            n_actions,
            use_next_state,
            clip_eps,
        )
    }

    pub fn from_net(
        net: Mlp,
        state_dim: usize,
        n_actions: usize,
        use_next_state: bool,
        clip_eps: f64,
    ) -> Result<Self> {
        if !(clip_eps > 0.0 && clip_eps < 0.5) {
            return Err(Error::Config(format!("clip_eps must lie in (0, 0.5), got {clip_eps}")));
        }
        if net.output_activation() != Activation::Sigmoid || net.out_dim() != 1 {
            return Err(Error::Compatibility(
                "discriminator network must end in one sigmoid unit".into(),
            ));
        }
        if net.in_dim() != input_dim(state_dim, n_actions, use_next_state) {
            return Err(Error::Compatibility(format!(
                "discriminator input width {} does not fit state_dim {state_dim} and {n_actions} actions",
                net.in_dim()
            )));
        }
        Ok(Discriminator {
            net,
            use_next_state,
            clip_eps,
            state_dim,
            n_actions,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn input_dim(&self) -> usize {
        self.net.in_dim()
    }

    /// `concat(s, onehot(a)[, s'])`.
    pub fn encode(&self, s: &[f64], a: usize, next: Option<&[f64]>) -> Result<Vec<f64>> {
        if s.len() != self.state_dim || a >= self.n_actions {
            return Err(Error::usage(format!(
                "state width {} / action {a} do not fit the discriminator ({} / {})",
                s.len(),
                self.state_dim,
                self.n_actions
            )));
        }
        let mut x = s.to_vec();
        x.extend(one_hot(a, self.n_actions));
        if self.use_next_state {
            let n = next.ok_or_else(|| Error::usage("discriminator needs the next state"))?;
            if n.len() != self.state_dim {
                return Err(Error::usage("next state width mismatch"));
            }
            x.extend_from_slice(n);
        }
        Ok(x)
    }

    pub fn encode_batch(&self, batch: &[Transition]) -> Result<Tensor> {
        let rows = batch
            .iter()
            .map(|t| self.encode(&t.state, t.action, Some(&t.next_state)))
            .collect::<Result<Vec<_>>>()?;
        Tensor::from_rows(&rows)
    }

    fn clamp(&self, p: f64) -> f64 {
        p.clamp(self.clip_eps, 1.0 - self.clip_eps)
    }

    pub fn d_value(&self, s: &[f64], a: usize, next: Option<&[f64]>) -> Result<f64> {
        let x = self.encode(s, a, next)?;
        Ok(self.clamp(self.net.predict_one(&x)?[0]))
    }

    pub fn d_values(&self, batch: &[Transition]) -> Result<Vec<f64>> {
        if batch.is_empty() {
            return Ok(Vec::new());
        }
        let out = self.net.predict(&self.encode_batch(batch)?)?;
        Ok(out.data().iter().map(|&p| self.clamp(p)).collect())
    }

    /// `log D − log(1 − D)`.
    pub fn reward_basic(&self, s: &[f64], a: usize, next: Option<&[f64]>) -> Result<f64> {
        Ok(logit(self.d_value(s, a, next)?))
    }

    /// Learned reward of the absorbing self-loop `(s_a, 0, s_a)`.
    pub fn absorbing_reward(&self) -> Result<f64> {
        let s_a = absorbing_state(self.state_dim);
        self.reward_basic(&s_a, 0, Some(&s_a))
    }

    /// Shaped rewards for a batch (see [`RewardConfig`]).
    pub fn rewards(&self, batch: &[Transition], cfg: &RewardConfig) -> Result<Vec<f64>> {
        let d = self.d_values(batch)?;
        let closed = match (cfg.mode, cfg.absorbing_via) {
            (RewardMode::Shaped, AbsorbingVia::ClosedForm) => {
                cfg.gamma / (1.0 - cfg.gamma) * self.absorbing_reward()?
            }
            _ => 0.0,
        };
        batch
            .iter()
            .zip(d)
            .map(|(t, d)| shaped_from_logit(logit(d), t, cfg, closed))
            .collect()
    }

    pub fn reward_shaped(&self, t: &Transition, cfg: &RewardConfig) -> Result<f64> {
        Ok(self.rewards(std::slice::from_ref(t), cfg)?[0])
    }
}

fn input_dim(state_dim: usize, n_actions: usize, use_next_state: bool) -> usize {
    state_dim * if use_next_state { 2 } else { 1 } + n_actions
}

fn shaped_from_logit(r: f64, t: &Transition, cfg: &RewardConfig, closed: f64) -> Result<f64> {
    match cfg.mode {
        RewardMode::Basic | RewardMode::NextState => Ok(r),
        RewardMode::Shaped => {
            if t.state.last().is_none_or(|f| *f != 0.0 && *f != 1.0) {
                return Err(Error::usage("shaped reward needs absorbing-wrapped transitions"));
            }
            let term = if t.enters_absorbing() { closed } else { 0.0 };
            Ok(cfg.lambda_i * (r + term) + cfg.beta_env * t.env_reward)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    /// `logit D(s, a)`.
    Basic,
    /// `logit D(s, a, s')`.
    NextState,
    /// `λ_i (logit D + absorbing term) + β_env r_e`.
    Shaped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbsorbingVia {
    /// The appended self-loop transitions carry the absorbing reward.
    Replay,
    /// The discounted tail `γ/(1−γ) · r(s_a, 0)` is added to the transition
    /// entering the absorbing state.
    ClosedForm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub lambda_i: f64,
    pub beta_env: f64,
    pub gamma: f64,
    pub mode: RewardMode,
    pub absorbing_via: AbsorbingVia,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            lambda_i: 1.0,
            beta_env: 1.0,
            gamma: 0.995,
            mode: RewardMode::Shaped,
            absorbing_via: AbsorbingVia::Replay,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_i < 0.0 || self.beta_env < 0.0 || !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(
                "reward needs lambda_i >= 0, beta_env >= 0, 0 < gamma < 1".into(),
            ));
        }
        Ok(())
    }

    /// Whether the discriminator sees `s'`.
    pub fn uses_next_state(&self) -> bool {
        self.mode == RewardMode::NextState
    }

    /// Whether the absorbing self-loops take part in policy optimisation.
    pub fn keeps_self_loops(&self) -> bool {
        self.mode == RewardMode::Shaped && self.absorbing_via == AbsorbingVia::Replay
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GpAnchor {
    /// Penalise the input gradient at expert samples.
    Expert,
    /// Penalise at random interpolates of expert and policy samples.
    Interpolate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscConfig {
    pub lr: f64,
    pub clip_eps: f64,
    pub gp_coef: f64,
    /// Entropy weight λ; reported in the loss but carries no gradient.
    pub lambda_ent: f64,
    pub importance_weights: bool,
    pub w_min: f64,
    pub w_max: f64,
    pub gp_anchor: GpAnchor,
}

impl Default for DiscConfig {
    fn default() -> Self {
        DiscConfig {
            lr: 0.003,
            clip_eps: 1e-6,
            gp_coef: 10.0,
            lambda_ent: 1e-3,
            importance_weights: true,
            w_min: 0.1,
            w_max: 10.0,
            gp_anchor: GpAnchor::Expert,
        }
    }
}

impl DiscConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || self.gp_coef < 0.0 || self.lambda_ent < 0.0 {
            return Err(Error::Config("disc needs lr > 0, gp_coef >= 0, lambda_ent >= 0".into()));
        }
        if !(self.w_min > 0.0 && self.w_min <= 1.0 && self.w_max >= 1.0) {
            return Err(Error::Config("disc needs 0 < w_min <= 1 <= w_max".into()));
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 0.5) {
            return Err(Error::Config("disc clip_eps must lie in (0, 0.5)".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..Default::default()
        }
    }
}

/// `clip(exp(logπ − logπ_behavior), w_min, w_max)`; absorbing self-loops
/// are not policy decisions and get weight 1.
pub fn importance_weights(
    batch: &[Transition],
    current_logp: &[f64],
    w_min: f64,
    w_max: f64,
) -> Vec<f64> {
    batch
        .iter()
        .zip(current_logp)
        .map(|(t, lp)| {
            if t.absorbing {
                1.0
            } else {
                (lp - t.behavior_logp).exp().clamp(w_min, w_max)
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DiscStats {
    /// `E_R[w log D] + E_E[log(1 − D)] − λH + gp · penalty`.
    pub loss: f64,
    /// The objective actually minimised.
    pub train_loss: f64,
    pub mean_d_policy: f64,
    pub mean_d_expert: f64,
    /// Mean input-gradient norm at the penalty anchors.
    pub grad_norm: f64,
    pub entropy: f64,
}

/// Tape for the discriminator objective.
///
/// The reported loss is `E_R[w log D] + E_E[log(1 − D)] − λH + gp · E[(‖∇ₓD‖ − 1)²]`,
/// minimised by `D → 0` on replay samples and `D → 1` on expert samples.
/// Descending it directly saturates on the expert side (its gradient
/// vanishes as `D → 0` there), so the tape holds the non-saturating
/// equivalent `−E_E[log D] − E_R[w log(1 − D)] + gp · E[(‖∇ₓD‖ − 1)²]`.
///
/// `weights` are the per-sample importance weights for `policy_batch`;
/// `entropy` is the policy entropy (a constant here).
/// `interp` holds mixing coefficients when the penalty uses interpolates.
#[allow(clippy::too_many_arguments)]
pub fn disc_loss_graph(
    d: &Discriminator,
    policy_batch: &[Transition],
    expert_batch: &[Transition],
    weights: &[f64],
    entropy: f64,
    cfg: &DiscConfig,
    interp: Option<&[f64]>,
) -> Result<(LossGraph, DiscStats)> {
    let (np, ne) = (policy_batch.len(), expert_batch.len());
    if np == 0 || ne == 0 {
        return Err(Error::usage("discriminator loss needs non-empty batches"));
    }
    if weights.len() != np {
        return Err(Error::usage("one importance weight per policy sample"));
    }
    let xp = d.encode_batch(policy_batch)?;
    let xe = d.encode_batch(expert_batch)?;
    let mut data = xp.data().to_vec();
    data.extend_from_slice(xe.data());
    let ni = match interp {
        Some(alpha) => {
            if alpha.len() != ne {
                return Err(Error::usage("one interpolation coefficient per expert sample"));
            }
            for (i, &al) in alpha.iter().enumerate() {
                let e = xe.row_slice(i);
                let p = xp.row_slice(i % np);
                data.extend(e.iter().zip(p).map(|(e, p)| al * e + (1.0 - al) * p));
            }
            ne
        }
        None => 0,
    };
    let n = np + ne + ni;
    let dim = d.input_dim();

    let mut g = Graph::new();
    let x = g.leaf(Tensor::matrix(n, dim, data)?);
    let vars = d.net.forward(&mut g, x)?;
    let dv = g.clamp(vars.output, d.clip_eps, 1.0 - d.clip_eps)?;

    let col = |g: &mut Graph, f: &dyn Fn(usize) -> f64| {
        Tensor::matrix(n, 1, (0..n).map(f).collect()).map(|t| g.constant(t))
    };
    let wp = col(&mut g, &|i| if i < np { weights[i] / np as f64 } else { 0.0 })?;
    let we = col(&mut g, &|i| if (np..np + ne).contains(&i) { 1.0 / ne as f64 } else { 0.0 })?;
    let anchors = if ni > 0 { np + ne..n } else { np..np + ne };
    let n_anchor = anchors.len() as f64;
    let wg = col(&mut g, &|i| if anchors.contains(&i) { 1.0 / n_anchor } else { 0.0 })?;

    // Reported value: E_R[w log D] + E_E[log(1 − D)] − λH (+ penalty).
    // Trained objective: the non-saturating form with the same optimum,
    // −E_E[log D] − E_R[w log(1 − D)] (+ penalty).
    let log_d = g.log(dv)?;
    let one_minus = g.scale(dv, -1.0)?;
    let one_minus = g.add_scalar(one_minus, 1.0)?;
    let log_1m = g.log(one_minus)?;
    let sum_w = |g: &mut Graph, a, w| -> Result<f64> {
        let p = g.mul(a, w)?;
        let s = g.sum(p)?;
        Ok(g.value(s).item())
    };
    let reported = sum_w(&mut g, log_d, wp)? + sum_w(&mut g, log_1m, we)? - cfg.lambda_ent * entropy;

    let te = g.mul(log_d, we)?;
    let te = g.sum(te)?;
    let tp = g.mul(log_1m, wp)?;
    let tp = g.sum(tp)?;
    let fit = g.add(te, tp)?;
    let mut loss = g.neg(fit)?;

    let mut grad_norm = 0.0;
    let mut penalty = 0.0;
    if cfg.gp_coef > 0.0 {
        let norms = g.grad_norm(dv, x)?;
        grad_norm = anchors.clone().map(|i| g.value(norms).data()[i]).sum::<f64>() / n_anchor;
        let dev = g.add_scalar(norms, -1.0)?;
        let sq = g.square(dev)?;
        let pen = g.mul(sq, wg)?;
        let pen = g.sum(pen)?;
        let pen = g.scale(pen, cfg.gp_coef)?;
        penalty = g.value(pen).item();
        loss = g.add(loss, pen)?;
    }

    let dvals = g.value(dv).data();
    let stats = DiscStats {
        loss: reported + penalty,
        train_loss: g.value(loss).item(),
        mean_d_policy: dvals[..np].iter().sum::<f64>() / np as f64,
        mean_d_expert: dvals[np..np + ne].iter().sum::<f64>() / ne as f64,
        grad_norm,
        entropy,
    };
    if !stats.loss.is_finite() || !stats.train_loss.is_finite() {
        return Err(Error::numerical(format!("discriminator loss is {}", stats.loss)));
    }
    Ok((
        LossGraph {
            graph: g,
            loss,
            params: vars.params,
        },
        stats,
    ))
}

/// The full loss with importance weights and entropy taken from `pi`.
pub fn disc_loss<R: Rng + ?Sized>(
    d: &Discriminator,
    policy_batch: &[Transition],
    expert_batch: &[Transition],
    pi: &Policy,
    cfg: &DiscConfig,
    rng: &mut R,
) -> Result<(LossGraph, DiscStats)> {
    let weights = if cfg.importance_weights {
        importance_weights(policy_batch, &pi.logp_of(policy_batch)?, cfg.w_min, cfg.w_max)
    } else {
        vec![1.0; policy_batch.len()]
    };
    let real: Vec<&[f64]> = policy_batch
        .iter()
        .filter(|t| !t.absorbing)
        .map(|t| t.state.as_slice())
        .collect();
    let entropy = if real.is_empty() {
        0.0
    } else {
        pi.entropy_estimate(&Tensor::from_rows(&real)?)?
    };
    let interp: Option<Vec<f64>> = match cfg.gp_anchor {
        GpAnchor::Expert => None,
        GpAnchor::Interpolate => Some((0..expert_batch.len()).map(|_| rng.gen()).collect()),
    };
    disc_loss_graph(d, policy_batch, expert_batch, &weights, entropy, cfg, interp.as_deref())
}

/// Discriminator with its optimizer state.
#[derive(Debug, Clone)]
pub struct DiscTrainer {
    pub disc: Discriminator,
    pub opt: Adam,
}

impl DiscTrainer {
    pub fn new(disc: Discriminator, cfg: &DiscConfig) -> Self {
        let opt = Adam::new(cfg.adam(), &disc.net.params());
        DiscTrainer { disc, opt }
    }

    /// One Adam step on a given pair of batches.
    pub fn update<R: Rng + ?Sized>(
        &mut self,
        policy_batch: &[Transition],
        expert_batch: &[Transition],
        pi: &Policy,
        cfg: &DiscConfig,
        rng: &mut R,
    ) -> Result<DiscStats> {
        let (lg, stats) = disc_loss(&self.disc, policy_batch, expert_batch, pi, cfg, rng)?;
        let grads = lg.grads()?;
        self.opt.step(self.disc.net.params_mut(), &grads)?;
        Ok(stats)
    }

    /// Sample `batch` transitions from each buffer and take one step.
    #[allow(clippy::too_many_arguments)]
    pub fn update_from_buffers<R: Rng + ?Sized>(
        &mut self,
        policy_buf: &ReplayBuffer,
        expert_buf: &ReplayBuffer,
        batch: usize,
        pi: &Policy,
        cfg: &DiscConfig,
        rng: &mut R,
    ) -> Result<DiscStats> {
        let p = policy_buf.sample(batch, rng)?;
        let e = expert_buf.sample(batch, rng)?;
        self.update(&p.transitions, &e.transitions, pi, cfg, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Layer;

    fn linear_disc(w: &[f64], b: f64) -> Discriminator {
        Discriminator::from_net(
            Mlp::from_layers(
                vec![Layer {
                    weight: Tensor::matrix(w.len(), 1, w.to_vec()).unwrap(),
                    bias: Tensor::scalar(b),
                }],
                Activation::Sigmoid,
            )
            .unwrap(),
            w.len() - 2,
            2,
            false,
            1e-6,
        )
        .unwrap()
    }

    fn tr(state: Vec<f64>, action: usize) -> Transition {
        Transition {
            next_state: state.clone(),
            state,
            action,
            reward: 0.0,
            env_reward: 0.25,
            absorbing: false,
            terminal: false,
            behavior_logp: -0.7,
        }
    }

    #[test]
    fn zero_net_gives_half() {
        let d = linear_disc(&[0.0; 4], 0.0);
        assert_eq!(d.d_value(&[1.0, 0.0], 1, None).unwrap(), 0.5);
        assert_eq!(d.reward_basic(&[1.0, 0.0], 1, None).unwrap(), 0.0);
    }

    #[test]
    fn output_is_clamped() {
        let d = linear_disc(&[0.0; 4], 100.0);
        let v = d.d_value(&[0.0, 0.0], 0, None).unwrap();
        assert_eq!(v, 1.0 - 1e-6);
        assert!(d.reward_basic(&[0.0, 0.0], 0, None).unwrap().is_finite());
    }

    #[test]
    fn logit_of_sigmoid_one() {
        let d = linear_disc(&[0.0; 4], 1.0);
        let r = d.reward_basic(&[0.3, 0.0], 0, None).unwrap();
        assert!((r - 1.0).abs() < 1e-12);
    }

    #[test]
    fn next_state_widens_input() {
        let mut rng = rand::thread_rng();
        let a = Discriminator::new(5, 3, &[4], false, 1e-6, &mut rng).unwrap();
        let b = Discriminator::new(5, 3, &[4], true, 1e-6, &mut rng).unwrap();
        assert_eq!(b.input_dim() - a.input_dim(), 5);
        assert!(matches!(
            a.d_value(&[0.0; 4], 0, None),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn shaped_reward_cases() {
        let d = linear_disc(&[0.4, -0.2, 0.1, 0.3], 0.05);
        let t = tr(vec![0.5, 0.0], 1);
        let basic = d.reward_basic(&t.state, 1, None).unwrap();
        let only_d = RewardConfig {
            beta_env: 0.0,
            ..Default::default()
        };
        assert_eq!(d.reward_shaped(&t, &only_d).unwrap(), basic);
        let only_env = RewardConfig {
            lambda_i: 0.0,
            beta_env: 1.0,
            ..Default::default()
        };
        assert_eq!(d.reward_shaped(&t, &only_env).unwrap(), t.env_reward);
    }

    #[test]
    fn closed_form_term_vanishes_at_half() {
        let d = linear_disc(&[0.0; 4], 0.0);
        let mut t = tr(vec![0.0, 0.0], 0);
        t.terminal = true;
        t.next_state = absorbing_state(2);
        assert!(t.enters_absorbing());
        let cfg = RewardConfig {
            gamma: 0.5,
            beta_env: 0.0,
            absorbing_via: AbsorbingVia::ClosedForm,
            ..Default::default()
        };
        assert_eq!(d.reward_shaped(&t, &cfg).unwrap(), 0.0);
        // A non-zero absorbing reward enters through the closed-form tail.
        let d = linear_disc(&[0.0, 0.0, 0.0, 0.0], 1.0);
        let r = d.reward_shaped(&t, &cfg).unwrap();
        assert!((r - 2.0).abs() < 1e-9);
    }

    #[test]
    fn constant_half_loss() {
        let d = linear_disc(&[0.0; 4], 0.0);
        let p = [tr(vec![1.0, 0.0], 0), tr(vec![0.0, 1.0], 1)];
        let e = [tr(vec![0.5, 0.5], 0)];
        let cfg = DiscConfig {
            gp_coef: 0.0,
            lambda_ent: 0.0,
            ..Default::default()
        };
        let (_, s) = disc_loss_graph(&d, &p, &e, &[1.0, 1.0], 0.0, &cfg, None).unwrap();
        assert!((s.loss + 2.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn hand_set_outputs() {
        // Bias only: D = σ(b) for every input, so pick inputs via the state.
        let logit_of = |p: f64| (p / (1.0 - p)).ln();
        let (bp, be) = (logit_of(0.8), logit_of(0.3));
        // Policy state [1, 0], expert state [0, 1].
        let d = linear_disc(&[bp, be, 0.0, 0.0], 0.0);
        let cfg = DiscConfig {
            gp_coef: 0.0,
            lambda_ent: 0.0,
            ..Default::default()
        };
        let (_, s) = disc_loss_graph(
            &d,
            &[tr(vec![1.0, 0.0], 0)],
            &[tr(vec![0.0, 1.0], 0)],
            &[1.0],
            0.0,
            &cfg,
            None,
        )
        .unwrap();
        assert!((s.loss - (0.8f64.ln() + 0.7f64.ln())).abs() < 1e-12);
        assert!((s.loss + 0.5798).abs() < 1e-4);
    }

    #[test]
    fn importance_weights_are_clipped() {
        let mut ts = vec![tr(vec![0.0, 0.0], 0); 3];
        ts[2].absorbing = true;
        let w = importance_weights(&ts, &[-0.7, 5.0, -50.0], 0.1, 10.0);
        assert_eq!(w, vec![1.0, 10.0, 1.0]);
        let w = importance_weights(&ts[..1], &[-20.0], 0.1, 10.0);
        assert_eq!(w, vec![0.1]);
    }
}
