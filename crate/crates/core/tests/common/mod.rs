#![allow(dead_code)]

use advimitate::config::TrainConfig;
use advimitate::nn::Mlp;
use advimitate::tensor::Tensor;
use advimitate::trajectory::Transition;
use rand::Rng;

/// Largest relative error between `analytic` gradients and central finite
/// differences of `f` over (at most `max_coords` randomly chosen) parameter
/// coordinates. Relative error is `|a − n| / max(|a|, |n|, floor)`.
pub fn fd_max_rel_err<R: Rng>(
    net: &Mlp,
    analytic: &[Tensor],
    f: impl Fn(&Mlp) -> f64,
    h: f64,
    floor: f64,
    max_coords: usize,
    rng: &mut R,
) -> f64 {
    let sizes: Vec<usize> = net.params().iter().map(|p| p.len()).collect();
    assert_eq!(sizes.len(), analytic.len());
    let total: usize = sizes.iter().sum();
    let coords: Vec<usize> = if total <= max_coords {
        (0..total).collect()
    } else {
        (0..max_coords).map(|_| rng.gen_range(0..total)).collect()
    };
    let mut worst = 0.0f64;
    for c in coords {
        let (mut p, mut k) = (0, c);
        while k >= sizes[p] {
            k -= sizes[p];
            p += 1;
        }
        let eval = |delta: f64| {
            let mut m = net.clone();
            m.params_mut()[p].data_mut()[k] += delta;
            f(&m)
        };
        let numeric = (eval(h) - eval(-h)) / (2.0 * h);
        let a = analytic[p].data()[k];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
        worst = worst.max(err);
    }
    worst
}

pub fn transition(state: Vec<f64>, action: usize, next: Vec<f64>, logp: f64) -> Transition {
    Transition {
        state,
        action,
        reward: 0.0,
        env_reward: 0.0,
        next_state: next,
        absorbing: false,
        terminal: false,
        behavior_logp: logp,
    }
}

/// Observation of width `dim` with the trailing absorbing flag cleared.
pub fn random_state<R: Rng>(dim: usize, rng: &mut R) -> Vec<f64> {
    let mut s: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    *s.last_mut().unwrap() = 0.0;
    s
}

/// Small, fast configuration on a 4×4 grid.
pub fn tiny_config() -> TrainConfig {
    TrainConfig::load(
        None,
        &[
            "iterations=2".into(),
            "episodes_per_iter=3".into(),
            "batch=16".into(),
            "env.kind=gridworld".into(),
            "env.width=4".into(),
            "env.height=4".into(),
            "env.goal=[3, 3]".into(),
            "env.max_steps=30".into(),
            "demos.episodes=5".into(),
            "network.actor_hidden=[16]".into(),
            "network.critic_hidden=[16]".into(),
            "network.disc_hidden=[16]".into(),
            "ppo.minibatch=16".into(),
        ],
    )
    .unwrap()
}
