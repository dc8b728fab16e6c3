mod common;

use advimitate::discriminator::{
    AbsorbingVia, Discriminator, RewardConfig, RewardMode,
};
use advimitate::occupancy::{occupancy_distance, OccupancyEstimate};
use advimitate::optim::{Adam, AdamConfig};
use advimitate::policy::{
    clipped_surrogate, critic_loss, gae, ActorCritic, Critic, GaeConfig, Policy, PpoConfig,
};
use advimitate::replay::ReplayBuffer;
use advimitate::tensor::Tensor;
use advimitate::trajectory::{absorbing_state, Trajectory, Transition};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `A_t = Σ_l (γλ)^l δ_{t+l}` evaluated term by term.
fn gae_double_sum(r: &[f64], v: &[f64], gamma: f64, lambda: f64) -> Vec<f64> {
    let t_max = r.len();
    (0..t_max)
        .map(|t| {
            (t..t_max)
                .map(|k| {
                    let delta = r[k] + gamma * v[k + 1] - v[k];
                    (gamma * lambda).powi((k - t) as i32) * delta
                })
                .sum()
        })
        .collect()
}

fn wrapped_episode(state_dim: usize, rewards: &[f64], terminal: bool, rng: &mut ChaCha8Rng) -> Trajectory {
    let mut transitions: Vec<Transition> = rewards
        .iter()
        .map(|&r| {
            let mut t = common::transition(
                common::random_state(state_dim, rng),
                rng.gen_range(0..2),
                common::random_state(state_dim, rng),
                -0.7,
            );
            t.reward = r;
            t
        })
        .collect();
    if terminal {
        let s_a = absorbing_state(state_dim);
        let last = transitions.last_mut().unwrap();
        last.terminal = true;
        last.next_state = s_a.clone();
        let mut lp = common::transition(s_a.clone(), 0, s_a, 0.0);
        lp.absorbing = true;
        lp.terminal = true;
        transitions.push(lp);
    }
    Trajectory {
        transitions,
        terminal,
        truncated: !terminal,
        wrapped: true,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn gae_matches_double_sum(
        r in prop::collection::vec(-5.0f64..5.0, 1..50),
        seed in any::<u64>(),
        gamma in 0.5f64..0.999,
        lambda in 0.0f64..=1.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v: Vec<f64> = (0..=r.len()).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let (adv, ret) = gae(&r, &v, &GaeConfig { gamma, lambda_g: lambda }).unwrap();
        let oracle = gae_double_sum(&r, &v, gamma, lambda);
        for t in 0..r.len() {
            prop_assert!((adv[t] - oracle[t]).abs() < 1e-10);
            prop_assert!((ret[t] - adv[t] - v[t]).abs() < 1e-12);
        }
    }

    #[test]
    fn clipped_surrogate_is_pessimistic(rho in 0.0f64..5.0, a in -10.0f64..10.0, eps in 1e-6f64..0.9) {
        prop_assert!(clipped_surrogate(rho, a, eps) <= rho * a);
    }

    #[test]
    fn occupancy_distance_is_a_metric(
        a in prop::collection::vec(0.0f64..1.0, 6),
        b in prop::collection::vec(0.0f64..1.0, 6),
        c in prop::collection::vec(0.0f64..1.0, 6),
    ) {
        prop_assume!(a.iter().sum::<f64>() > 1e-3 && b.iter().sum::<f64>() > 1e-3 && c.iter().sum::<f64>() > 1e-3);
        let h = |v: &[f64]| OccupancyEstimate::from_counts("t", v.iter().enumerate().map(|(i, &x)| ((i as u64 / 2, i % 2), x))).unwrap();
        let (ha, hb, hc) = (h(&a), h(&b), h(&c));
        let d = |x: &OccupancyEstimate, y: &OccupancyEstimate| occupancy_distance(x, y).unwrap();
        prop_assert_eq!(d(&ha, &ha), 0.0);
        prop_assert!((d(&ha, &hb) - d(&hb, &ha)).abs() < 1e-15);
        prop_assert!(d(&ha, &hc) <= d(&ha, &hb) + d(&hb, &hc) + 1e-12);
        prop_assert!((0.0..=1.0).contains(&d(&ha, &hb)));
        if d(&ha, &hb) == 0.0 {
            for (k, m) in &ha.mass {
                prop_assert!((m - hb.mass.get(k).copied().unwrap_or(0.0)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn replay_keeps_the_newest(cap in 1usize..40, lens in prop::collection::vec(1usize..10, 1..12), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut buf = ReplayBuffer::new(cap, 3).unwrap();
        let mut all = Vec::new();
        for &n in &lens {
            let t = wrapped_episode(3, &vec![0.0; n], false, &mut rng);
            all.extend(t.transitions.clone());
            buf.push_trajectory(&t).unwrap();
            prop_assert!(buf.len() <= cap);
        }
        let expect = &all[all.len().saturating_sub(cap)..];
        prop_assert_eq!(buf.len(), expect.len());
        prop_assert!(buf.iter().zip(expect).all(|(a, b)| a == b));
        let batch = buf.sample(7, &mut rng).unwrap();
        for (id, t) in batch.ids.iter().zip(&batch.transitions) {
            prop_assert_eq!(buf.get(*id), Some(t));
        }
    }

    #[test]
    fn rewards_are_always_finite(seed in any::<u64>(), scale in 0.1f64..200.0, next in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut d = Discriminator::new(5, 3, &[6, 6], next, 1e-6, &mut rng).unwrap();
        for p in d.net.params_mut() {
            for x in p.data_mut() {
                *x *= scale;
            }
        }
        let bound = 2.0 * ((1.0 - 1e-6f64).ln() - 1e-6f64.ln());
        let batch: Vec<Transition> = (0..16)
            .map(|_| {
                let mut t = common::transition(
                    common::random_state(5, &mut rng),
                    rng.gen_range(0..3),
                    common::random_state(5, &mut rng),
                    -1.0,
                );
                t.env_reward = rng.gen_range(-1.0..1.0);
                t
            })
            .collect();
        for mode in [RewardMode::Basic, RewardMode::NextState, RewardMode::Shaped] {
            for via in [AbsorbingVia::Replay, AbsorbingVia::ClosedForm] {
                let cfg = RewardConfig { mode, absorbing_via: via, ..Default::default() };
                for r in d.rewards(&batch, &cfg).unwrap() {
                    prop_assert!(r.is_finite());
                }
            }
        }
        for t in &batch {
            let r = d.reward_basic(&t.state, t.action, Some(&t.next_state)).unwrap();
            let dv = d.d_value(&t.state, t.action, Some(&t.next_state)).unwrap();
            prop_assert!(r.abs() <= bound);
            prop_assert!((r - (dv.ln() - (1.0 - dv).ln())).abs() < 1e-12);
        }
    }

    #[test]
    fn entropy_is_bounded(seed in any::<u64>(), scale in 0.1f64..30.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pi = Policy::new(4, 5, &[8], &mut rng).unwrap();
        for p in pi.actor.params_mut() {
            for x in p.data_mut() {
                *x *= scale;
            }
        }
        let states: Vec<Vec<f64>> = (0..10).map(|_| common::random_state(4, &mut rng)).collect();
        let h = pi.entropy_estimate(&Tensor::from_rows(&states).unwrap()).unwrap();
        prop_assert!(h >= -1e-12 && h <= 5f64.ln() + 1e-12);
    }
}

#[test]
fn gae_analytic_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let n = rng.gen_range(1..50);
        let r: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..=n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (a0, _) = gae(&r, &v, &GaeConfig { gamma: 0.9, lambda_g: 0.0 }).unwrap();
        for t in 0..n {
            assert_eq!(a0[t], r[t] + 0.9 * v[t + 1] - v[t]);
        }
        let zeros = vec![0.0; n + 1];
        let (a1, _) = gae(&r, &zeros, &GaeConfig { gamma: 0.9, lambda_g: 1.0 }).unwrap();
        for t in 0..n {
            let disc: f64 = (t..n).map(|k| 0.9f64.powi((k - t) as i32) * r[k]).sum();
            assert!((a1[t] - disc).abs() < 1e-12);
        }
    }
}

#[test]
fn replay_sampling_is_uniform() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut buf = ReplayBuffer::new(10, 2).unwrap();
    buf.push_trajectory(&wrapped_episode(2, &[0.0; 10], false, &mut rng)).unwrap();
    let mut counts = std::collections::HashMap::new();
    let draws = 100_000;
    let batch = buf.sample(draws, &mut rng).unwrap();
    for id in batch.ids {
        *counts.entry(id).or_insert(0usize) += 1;
    }
    assert_eq!(counts.len(), 10);
    let expected = draws as f64 / 10.0;
    let chi2: f64 = counts.values().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // 99th percentile of chi-square with 9 degrees of freedom.
    assert!(chi2 < 21.666, "chi2 = {chi2}");
}

#[test]
fn sampled_action_frequencies_match_probabilities() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let pi = Policy::new(3, 4, &[8], &mut rng).unwrap();
    let s = [0.3, -0.8, 0.0];
    let p = pi.probs_one(&s).unwrap();
    let n = 100_000;
    let mut counts = [0usize; 4];
    for _ in 0..n {
        let (a, logp) = pi.act(&s, &mut rng).unwrap();
        assert!((logp - p[a].ln()).abs() < 1e-12);
        counts[a] += 1;
    }
    for a in 0..4 {
        assert!((counts[a] as f64 / n as f64 - p[a]).abs() < 0.01, "{counts:?} vs {p:?}");
    }
}

#[test]
fn critic_regression_decreases_monotonically() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut critic = Critic::new(4, 2, &[16, 16], false, &mut rng).unwrap();
    let inputs: Vec<Vec<f64>> = (0..32).map(|_| common::random_state(4, &mut rng)).collect();
    let targets: Vec<f64> = inputs.iter().map(|x| x[0] - 2.0 * x[1] + 0.5).collect();
    let x = Tensor::from_rows(&inputs).unwrap();
    let mut opt = Adam::new(AdamConfig { lr: 1e-3, ..Default::default() }, &critic.net.params());
    let mut last = f64::INFINITY;
    for step in 0..100 {
        let lg = critic_loss(&critic.net, &x, &targets).unwrap();
        let v = lg.value();
        assert!(v < last, "step {step}: {v} >= {last}");
        last = v;
        opt.step(critic.net.params_mut(), &lg.grads().unwrap()).unwrap();
    }
}

fn bandit_episodes(pi: &Policy, n: usize, rng: &mut ChaCha8Rng) -> Vec<Trajectory> {
    let s = vec![1.0, 0.0];
    (0..n)
        .map(|_| {
            let (a, logp) = pi.act(&s, rng).unwrap();
            let mut t = common::transition(s.clone(), a, s.clone(), logp);
            t.reward = if a == 0 { 1.0 } else { -1.0 };
            Trajectory {
                transitions: vec![t],
                terminal: false,
                truncated: true,
                wrapped: true,
            }
        })
        .collect()
}

#[test]
fn bandit_update_raises_the_better_arm() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let policy = Policy::new(2, 2, &[8], &mut rng).unwrap();
    let critic = Critic::new(2, 2, &[8], false, &mut rng).unwrap();
    let cfg = PpoConfig { entropy_coef: 0.0, minibatch: 16, ..Default::default() };
    let gae_cfg = GaeConfig { gamma: 0.9, lambda_g: 0.95 };
    let mut ac = ActorCritic::new(policy, critic, &cfg);
    let mut p0 = ac.policy.probs_one(&[1.0, 0.0]).unwrap()[0];
    for _ in 0..10 {
        let eps = bandit_episodes(&ac.policy, 64, &mut rng);
        assert!(eps.iter().any(|t| t.transitions[0].action == 0));
        assert!(eps.iter().any(|t| t.transitions[0].action == 1));
        ac.ppo_update(&eps, &cfg, &gae_cfg, &mut rng).unwrap();
        let p = ac.policy.probs_one(&[1.0, 0.0]).unwrap()[0];
        assert!(p > p0, "{p} <= {p0}");
        p0 = p;
        if p0 > 0.9 {
            break;
        }
    }
}

#[test]
fn tighter_clipping_moves_the_policy_less() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let policy = Policy::new(3, 3, &[16], &mut rng).unwrap();
    let critic = Critic::new(3, 3, &[16], false, &mut rng).unwrap();
    let episodes: Vec<Trajectory> = (0..6)
        .map(|_| {
            let rewards: Vec<f64> = (0..10).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut t = wrapped_episode(3, &rewards, false, &mut rng);
            for tr in &mut t.transitions {
                tr.action = rng.gen_range(0..3);
                tr.behavior_logp = policy.probs_one(&tr.state).unwrap()[tr.action].ln();
            }
            t
        })
        .collect();
    let states: Vec<Vec<f64>> = episodes
        .iter()
        .flat_map(|t| t.transitions.iter().map(|tr| tr.state.clone()))
        .collect();
    let x = Tensor::from_rows(&states).unwrap();
    let before = policy.log_probs(&x).unwrap();
    let movement = |epsilon: f64| {
        let cfg = PpoConfig { epsilon, epochs: 1, minibatch: 5, entropy_coef: 0.0, ..Default::default() };
        let mut ac = ActorCritic::new(policy.clone(), critic.clone(), &cfg);
        ac.ppo_update(&episodes, &cfg, &GaeConfig::default(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let after = ac.policy.log_probs(&x).unwrap();
        before.data().iter().zip(after.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / before.len() as f64
    };
    let (tight, loose) = (movement(1e-6), movement(0.2));
    assert!(tight < loose, "{tight} vs {loose}");
}

#[test]
fn terminal_episodes_bootstrap_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let policy = Policy::new(3, 2, &[4], &mut rng).unwrap();
    let critic = Critic::new(3, 2, &[4], false, &mut rng).unwrap();
    let ac = ActorCritic::new(policy, critic, &PpoConfig::default());
    let t = wrapped_episode(3, &[1.0, 2.0], true, &mut rng);
    let gae_cfg = GaeConfig::default();
    let (adv, _) = &ac.advantages(std::slice::from_ref(&t), &gae_cfg).unwrap()[0];
    let mut values: Vec<f64> = ac
        .critic
        .values(&t.transitions.iter().map(|tr| tr.state.clone()).collect::<Vec<_>>())
        .unwrap();
    values.push(0.0);
    let rewards: Vec<f64> = t.transitions.iter().map(|tr| tr.reward).collect();
    let oracle = gae_double_sum(&rewards, &values, gae_cfg.gamma, gae_cfg.lambda_g);
    for (a, o) in adv.iter().zip(&oracle) {
        assert!((a - o).abs() < 1e-10, "{a} vs {o}");
    }
}
