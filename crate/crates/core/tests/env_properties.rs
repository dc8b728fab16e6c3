use advimitate::demos::value_iteration;
use advimitate::env::{Environment, GridWorld, GridWorldConfig, SignalQueueConfig, SignalQueueWorld};
use advimitate::rollout::{action_rng, episode_seed, run_episode};
use advimitate::trajectory::{absorbing_state, wrap_absorbing};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;

fn grid(w: usize, h: usize, goal: (usize, usize), slip: f64, max_steps: usize) -> GridWorld {
    GridWorld::new(GridWorldConfig {
        width: w,
        height: h,
        goal,
        slip_prob: slip,
        max_steps,
        ..Default::default()
    })
    .unwrap()
}

#[test]
fn greedy_values_match_linear_policy_evaluation() {
    let env = grid(4, 4, (3, 3), 0.1, 100);
    let gamma = 0.995;
    let pi = value_iteration(&env, gamma, 1e-13).unwrap();
    let mdp = env.as_tabular().unwrap();
    let n = mdp.n_states();
    // (I − γ P_π) V = R_π with V = 0 on terminal states.
    let mut a = DMatrix::<f64>::identity(n, n);
    let mut b = DVector::<f64>::zeros(n);
    for s in (0..n).filter(|&s| !mdp.is_terminal(s)) {
        for o in mdp.outcomes(s, pi.greedy(s)) {
            b[s] += o.prob * o.reward;
            if !o.terminal && !mdp.is_terminal(o.next) {
                a[(s, o.next)] -= gamma * o.prob;
            }
        }
    }
    let v = a.lu().solve(&b).expect("non-singular");
    for s in 0..n {
        assert!((v[s] - pi.values[s]).abs() < 1e-8, "state {s}: {} vs {}", v[s], pi.values[s]);
    }
}

#[test]
fn random_walk_reaches_goal() {
    // With a 500-step horizon the uniform walk on the 8×8 grid hits an
    // interior goal with probability ≈ 0.993 (a corner goal only ≈ 0.78).
    let mut env = grid(8, 8, (3, 3), 0.0, 500);
    let reached = (0..1000u64)
        .filter(|&i| {
            let es = episode_seed(7, i);
            let mut rng = action_rng(es);
            let t = run_episode(&mut env, es, |_| Ok((rng.gen_range(0..4), 0.25f64.ln()))).unwrap();
            t.terminal
        })
        .count();
    assert!(reached >= 990, "{reached} / 1000");
}

#[test]
fn longest_queue_first_beats_round_robin() {
    let cfg = SignalQueueConfig {
        max_steps: 1000,
        ..Default::default()
    };
    let waiting = |lqf: bool| {
        let mut env = SignalQueueWorld::new(cfg.clone()).unwrap();
        env.reset(11);
        let mut total = 0usize;
        for t in 0..1000 {
            let a = if lqf {
                let q = env.queues();
                (0..q.len()).max_by_key(|&i| (q[i], std::cmp::Reverse(i))).unwrap()
            } else {
                t % 4
            };
            env.step(a).unwrap();
            total += env.total_queued();
        }
        total
    };
    let (lqf, rr) = (waiting(true), waiting(false));
    assert!(lqf < rr, "lqf {lqf} vs round robin {rr}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn resets_are_deterministic(seed in any::<u64>(), slip in 0.0f64..0.5) {
        let mut env = grid(5, 4, (4, 3), slip, 40);
        let play = |env: &mut GridWorld| {
            let mut rng = action_rng(seed);
            run_episode(env, seed, |_| Ok((rng.gen_range(0..4), 0.0))).unwrap()
        };
        let (a, b) = (play(&mut env), play(&mut env));
        prop_assert_eq!(a, b);
    }

    #[test]
    fn wrapping_invariants(seed in any::<u64>(), slip in 0.0f64..0.5) {
        let mut env = grid(4, 4, (3, 3), slip, 25);
        let spec = env.spec();
        let mut rng = action_rng(seed);
        let raw = run_episode(&mut env, seed, |_| Ok((rng.gen_range(0..4), 0.0))).unwrap();
        let w = wrap_absorbing(&raw, &spec).unwrap();
        let s_a = absorbing_state(spec.state_dim);
        for t in &w.transitions {
            prop_assert_eq!(t.state.len(), spec.state_dim);
            prop_assert_eq!(*t.state.last().unwrap() == 1.0, t.absorbing);
        }
        if raw.terminal {
            prop_assert_eq!(w.len(), raw.len() + 1);
            let last = w.transitions.last().unwrap();
            prop_assert!(last.absorbing && last.state == s_a && last.next_state == s_a && last.action == 0);
            prop_assert_eq!(&w.transitions[raw.len() - 1].next_state, &s_a);
        } else {
            prop_assert_eq!(w.len(), raw.len());
            prop_assert!(w.transitions.iter().all(|t| !t.absorbing));
        }
        prop_assert_eq!(wrap_absorbing(&w, &spec).unwrap(), w);
    }

    #[test]
    fn queue_conservation(seed in any::<u64>(), actions in prop::collection::vec(0usize..4, 1..200)) {
        let mut env = SignalQueueWorld::new(SignalQueueConfig::default()).unwrap();
        env.reset(seed);
        for a in actions {
            let before = env.total_queued();
            env.step(a).unwrap();
            let c = env.last_counts();
            prop_assert_eq!(env.total_queued(), before + c.arrived - c.released);
            prop_assert!(env.queues().iter().all(|&q| q <= 20));
        }
    }
}
