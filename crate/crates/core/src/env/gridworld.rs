use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EnvSpec, Environment, Outcome, StepResult, TabularMdp};
use crate::error::{Error, Result};
use crate::tensor::one_hot;

/// `(x, y)` with `x` the column and `y` the row; `(0, 0)` is the top-left.
pub type Cell = (usize, usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridWorldConfig {
    pub width: usize,
    pub height: usize,
    pub start: Cell,
    pub goal: Cell,
    /// Impassable cells; moving into one leaves the agent in place.
    pub obstacles: Vec<Cell>,
    /// Hazard cells that end the episode with `pit_reward`.
    pub pits: Vec<Cell>,
    pub slip_prob: f64,
    pub goal_reward: f64,
    pub step_penalty: f64,
    pub pit_reward: f64,
    pub max_steps: usize,
    pub gamma: f64,
}

impl Default for GridWorldConfig {
    fn default() -> Self {
        GridWorldConfig {
            width: 8,
            height: 8,
            start: (0, 0),
            goal: (7, 7),
            obstacles: Vec::new(),
            pits: Vec::new(),
            slip_prob: 0.0,
            goal_reward: 1.0,
            step_penalty: 0.01,
            pit_reward: -1.0,
            max_steps: 100,
            gamma: 0.995,
        }
    }
}

/// Actions: 0 = up, 1 = right, 2 = down, 3 = left.
const MOVES: [(isize, isize); 4] = [(0, -1), (1, 0), (0, 1), (-1, 0)];

#[derive(Debug, Clone)]
pub struct GridWorld {
    cfg: GridWorldConfig,
    obstacles: BTreeSet<Cell>,
    pits: BTreeSet<Cell>,
    agent: Cell,
    steps: usize,
    finished: bool,
    rng: ChaCha8Rng,
}

impl GridWorld {
    pub fn new(cfg: GridWorldConfig) -> Result<Self> {
        let inside = |c: Cell| c.0 < cfg.width && c.1 < cfg.height;
        if cfg.width == 0 || cfg.height == 0 {
            return Err(Error::Config("grid must be non-empty".into()));
        }
        if !inside(cfg.goal) || !inside(cfg.start) {
            return Err(Error::Config("start and goal must lie inside the grid".into()));
        }
        let obstacles: BTreeSet<Cell> = cfg.obstacles.iter().copied().collect();
        let pits: BTreeSet<Cell> = cfg.pits.iter().copied().collect();
        if obstacles.iter().chain(&pits).any(|&c| !inside(c)) {
            return Err(Error::Config("obstacle or pit outside the grid".into()));
        }
        if obstacles.contains(&cfg.goal) || pits.contains(&cfg.goal) {
            return Err(Error::Config("goal cannot be an obstacle or pit".into()));
        }
        if obstacles.contains(&cfg.start) || pits.contains(&cfg.start) || cfg.start == cfg.goal {
            return Err(Error::Config(
                "start must be a free, non-goal cell".into(),
            ));
        }
        if !(0.0..1.0).contains(&cfg.slip_prob) {
            return Err(Error::Config(format!(
                "slip_prob must lie in [0, 1), got {}",
                cfg.slip_prob
            )));
        }
        let env = GridWorld {
            agent: cfg.start,
            obstacles,
            pits,
            steps: 0,
            finished: false,
            rng: ChaCha8Rng::seed_from_u64(0),
            cfg,
        };
        env.spec().validate()?;
        Ok(env)
    }

    pub fn config(&self) -> &GridWorldConfig {
        &self.cfg
    }

    pub fn agent(&self) -> Cell {
        self.agent
    }

    fn n_cells(&self) -> usize {
        self.cfg.width * self.cfg.height
    }

    fn index(&self, c: Cell) -> usize {
        c.1 * self.cfg.width + c.0
    }

    fn cell(&self, i: usize) -> Cell {
        (i % self.cfg.width, i / self.cfg.width)
    }

    fn obs(&self, c: Cell) -> Vec<f64> {
        let mut v = one_hot(self.index(c), self.n_cells());
        v.push(0.0);
        v
    }

    fn moved(&self, from: Cell, dir: usize) -> Cell {
        let (dx, dy) = MOVES[dir];
        let x = from.0 as isize + dx;
        let y = from.1 as isize + dy;
        if x < 0 || y < 0 || x >= self.cfg.width as isize || y >= self.cfg.height as isize {
            return from;
        }
        let to = (x as usize, y as usize);
        if self.obstacles.contains(&to) {
            from
        } else {
            to
        }
    }

    fn reward_for(&self, to: Cell) -> (f64, bool) {
        if to == self.cfg.goal {
            (self.cfg.goal_reward, true)
        } else if self.pits.contains(&to) {
            (self.cfg.pit_reward, true)
        } else {
            (-self.cfg.step_penalty, false)
        }
    }

    fn perpendicular(dir: usize) -> [usize; 2] {
        [(dir + 1) % 4, (dir + 3) % 4]
    }
}

impl Environment for GridWorld {
    fn spec(&self) -> EnvSpec {
        let c = &self.cfg;
        EnvSpec {
            id: format!(
                "gridworld w={} h={} start={:?} goal={:?} obstacles={:?} pits={:?} slip={:?} \
                 rewards=({:?},{:?},{:?})",
                c.width,
                c.height,
                c.start,
                c.goal,
                self.obstacles,
                self.pits,
                c.slip_prob,
                c.goal_reward,
                c.step_penalty,
                c.pit_reward
            ),
            state_dim: self.n_cells() + 1,
            n_actions: 4,
            max_steps: c.max_steps,
            gamma: c.gamma,
        }
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.agent = self.cfg.start;
        self.steps = 0;
        self.finished = false;
        self.obs(self.agent)
    }

    fn step(&mut self, action: usize) -> Result<StepResult> {
        if self.finished {
            return Err(Error::usage("step called after the episode ended"));
        }
        if action >= 4 {
            return Err(Error::usage(format!("action {action} out of range 0..4")));
        }
        let u: f64 = self.rng.gen();
        let dir = if u < self.cfg.slip_prob {
            let side = self.rng.gen_range(0..2);
            Self::perpendicular(action)[side]
        } else {
            action
        };
        self.agent = self.moved(self.agent, dir);
        self.steps += 1;
        let (env_reward, terminal) = self.reward_for(self.agent);
        let truncated = !terminal && self.steps >= self.cfg.max_steps;
        self.finished = terminal || truncated;
        Ok(StepResult {
            next_state: self.obs(self.agent),
            env_reward,
            terminal,
            truncated,
        })
    }

    fn as_tabular(&self) -> Option<&dyn TabularMdp> {
        Some(self)
    }

    fn state_bucket(&self, obs: &[f64]) -> u64 {
        match self.state_of(obs) {
            Some(s) => s as u64,
            None => self.n_cells() as u64,
        }
    }

    fn bucketing_id(&self) -> String {
        format!("grid-{}x{}", self.cfg.width, self.cfg.height)
    }

    fn boxed_clone(&self) -> Box<dyn Environment> {
        Box::new(self.clone())
    }
}

impl TabularMdp for GridWorld {
    fn n_states(&self) -> usize {
        self.n_cells()
    }

    fn n_actions(&self) -> usize {
        4
    }

    fn start_state(&self) -> usize {
        self.index(self.cfg.start)
    }

    fn is_terminal(&self, s: usize) -> bool {
        let c = self.cell(s);
        c == self.cfg.goal || self.pits.contains(&c)
    }

    fn outcomes(&self, s: usize, a: usize) -> Vec<Outcome> {
        let from = self.cell(s);
        let p = self.cfg.slip_prob;
        let mut branches = vec![(1.0 - p, a)];
        if p > 0.0 {
            for d in Self::perpendicular(a) {
                branches.push((p / 2.0, d));
            }
        }
        let mut out: Vec<Outcome> = Vec::new();
        for (prob, dir) in branches {
            let to = self.moved(from, dir);
            let next = self.index(to);
            if let Some(o) = out.iter_mut().find(|o| o.next == next) {
                o.prob += prob;
            } else {
                let (reward, terminal) = self.reward_for(to);
                out.push(Outcome {
                    prob,
                    next,
                    reward,
                    terminal,
                });
            }
        }
        out
    }

    fn observation(&self, s: usize) -> Vec<f64> {
        self.obs(self.cell(s))
    }

    fn state_of(&self, obs: &[f64]) -> Option<usize> {
        let n = self.n_cells();
        if obs.len() != n + 1 || obs[n] != 0.0 {
            return None;
        }
        obs[..n].iter().position(|&x| x == 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(slip: f64) -> GridWorld {
        GridWorld::new(GridWorldConfig {
            slip_prob: slip,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn reset_places_agent_at_start() {
        let mut env = grid(0.0);
        let s = env.reset(0);
        assert_eq!(s.len(), 65);
        assert_eq!(s[0], 1.0);
        assert_eq!(s.iter().sum::<f64>(), 1.0);
        assert_eq!(s[64], 0.0);
        assert_eq!(env.reset(0), s);
    }

    #[test]
    fn reaching_goal_terminates() {
        let mut env = GridWorld::new(GridWorldConfig {
            start: (6, 7),
            ..Default::default()
        })
        .unwrap();
        env.reset(1);
        let r = env.step(1).unwrap();
        assert_eq!(r.env_reward, 1.0);
        assert!(r.terminal && !r.truncated);
        assert!(matches!(env.step(1), Err(Error::Usage(_))));
    }

    #[test]
    fn step_penalty_and_walls() {
        let mut env = grid(0.0);
        env.reset(0);
        let r = env.step(0).unwrap();
        assert_eq!(r.env_reward, -0.01);
        assert_eq!(env.agent(), (0, 0));
    }

    #[test]
    fn horizon_truncates() {
        let mut env = GridWorld::new(GridWorldConfig {
            max_steps: 3,
            ..Default::default()
        })
        .unwrap();
        env.reset(0);
        assert!(!env.step(3).unwrap().truncated);
        assert!(!env.step(3).unwrap().truncated);
        let r = env.step(3).unwrap();
        assert!(r.truncated && !r.terminal);
    }

    #[test]
    fn slip_goes_perpendicular() {
        let mut env = grid(0.5);
        let mut seen = BTreeSet::new();
        for seed in 0..200 {
            env.reset(seed);
            env.agent = (3, 3);
            env.step(1).unwrap();
            seen.insert(env.agent());
        }
        assert_eq!(
            seen,
            [(4, 3), (3, 2), (3, 4)].into_iter().collect::<BTreeSet<_>>()
        );
    }

    #[test]
    fn outcome_probabilities_sum_to_one() {
        let env = GridWorld::new(GridWorldConfig {
            slip_prob: 0.1,
            obstacles: vec![(1, 0)],
            ..Default::default()
        })
        .unwrap();
        for s in 0..64 {
            for a in 0..4 {
                let total: f64 = env.outcomes(s, a).iter().map(|o| o.prob).sum();
                assert!((total - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn invalid_layouts_rejected() {
        assert!(GridWorld::new(GridWorldConfig {
            obstacles: vec![(7, 7)],
            ..Default::default()
        })
        .is_err());
        assert!(GridWorld::new(GridWorldConfig {
            goal: (8, 0),
            ..Default::default()
        })
        .is_err());
        assert!(GridWorld::new(GridWorldConfig {
            slip_prob: 1.0,
            ..Default::default()
        })
        .is_err());
    }
}
