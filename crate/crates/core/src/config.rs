//! Training configuration, loaded from TOML with dotted-path overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::discriminator::{DiscConfig, RewardConfig};
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::policy::{GaeConfig, PpoConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemoConfig {
    pub episodes: usize,
    /// Exploration rate of the imperfect expert.
    pub epsilon: f64,
    pub seed: u64,
    /// Bellman residual tolerance for value iteration.
    pub tol: f64,
}

impl Default for DemoConfig {
    fn default() -> Self {
        DemoConfig {
            episodes: 100,
            epsilon: 0.1,
            seed: 0,
            tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub disc_hidden: Vec<usize>,
    /// Critic on `(s, a)` instead of `s`.
    pub state_action_critic: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            actor_hidden: vec![256; 3],
            critic_hidden: vec![256; 3],
            disc_hidden: vec![128; 3],
            state_action_critic: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub iterations: usize,
    pub episodes_per_iter: usize,
    /// Discriminator steps per iteration; defaults to the number of
    /// episodes collected that iteration.
    pub disc_updates_per_iter: Option<usize>,
    /// Relabel-and-PPO rounds per iteration; same default.
    pub ppo_rounds_per_iter: Option<usize>,
    /// Samples drawn from each buffer per discriminator step and per
    /// relabeling round.
    pub batch: usize,
    pub replay_capacity: usize,
    pub checkpoint_every: usize,
    /// Rollout threads; results do not depend on this.
    pub workers: usize,
    /// Record real wall time in the metrics (breaks byte-identical reruns).
    pub log_wall_time: bool,
    pub demos_path: PathBuf,
    pub out_dir: PathBuf,
    pub eval_episodes: usize,
    pub env: EnvConfig,
    pub demos: DemoConfig,
    pub network: NetworkConfig,
    pub disc: DiscConfig,
    pub reward: RewardConfig,
    pub ppo: PpoConfig,
    pub gae: GaeConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            iterations: 200,
            episodes_per_iter: 10,
            disc_updates_per_iter: None,
            ppo_rounds_per_iter: None,
            batch: 64,
            replay_capacity: 50_000,
            checkpoint_every: 10,
            workers: 1,
            log_wall_time: false,
            demos_path: PathBuf::from("demos.bin"),
            out_dir: PathBuf::from("run"),
            eval_episodes: 100,
            env: EnvConfig::default(),
            demos: DemoConfig::default(),
            network: NetworkConfig::default(),
            disc: DiscConfig::default(),
            reward: RewardConfig::default(),
            ppo: PpoConfig::default(),
            gae: GaeConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_value(parse_tree(text)?)
    }

    pub fn from_value(v: toml::Value) -> Result<Self> {
        let cfg: TrainConfig = v
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read `path` (if any), apply `key=value` overrides, then validate.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut tree = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
                parse_tree(&text)?
            }
            None => toml::Value::Table(Default::default()),
        };
        for o in overrides {
            apply_override(&mut tree, o)?;
        }
        Self::from_value(tree)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("iterations", self.iterations),
            ("episodes_per_iter", self.episodes_per_iter),
            ("batch", self.batch),
            ("replay_capacity", self.replay_capacity),
            ("checkpoint_every", self.checkpoint_every),
            ("workers", self.workers),
            ("eval_episodes", self.eval_episodes),
            ("demos.episodes", self.demos.episodes),
            ("disc_updates_per_iter", self.disc_updates_per_iter.unwrap_or(1)),
            ("ppo_rounds_per_iter", self.ppo_rounds_per_iter.unwrap_or(1)),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{k} must be at least 1")));
        }
        if !(0.0..=1.0).contains(&self.demos.epsilon) || !(self.demos.tol > 0.0) {
            return Err(Error::Config("demos needs 0 <= epsilon <= 1 and tol > 0".into()));
        }
        if [&self.network.actor_hidden, &self.network.critic_hidden, &self.network.disc_hidden]
            .iter()
            .any(|h| h.contains(&0))
        {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        self.disc.validate()?;
        self.reward.validate()?;
        self.ppo.validate()?;
        self.gae.validate()?;
        self.env.build()?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config always serialises")
    }
}

fn parse_tree(text: &str) -> Result<toml::Value> {
    text.parse::<toml::Table>()
        .map(toml::Value::Table)
        .map_err(|e| Error::Config(format!("malformed config: {e}")))
}

/// Set `a.b.c = value` in a TOML tree. The value is parsed as TOML
/// (`0.2`, `true`, `[64, 64]`, `"text"`); anything unparsable is taken as a
/// bare string.
pub fn apply_override(tree: &mut toml::Value, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {spec:?} is not key=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Config(format!("bad override path {path:?}")));
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));

    let mut node = tree;
    for k in &keys[..keys.len() - 1] {
        let table = node
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override {path:?} descends into a non-table")))?;
        node = table
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    node.as_table_mut()
        .ok_or_else(|| Error::Config(format!("override {path:?} descends into a non-table")))?
        .insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvConfig;

    #[test]
    fn defaults_round_trip() {
        let cfg = TrainConfig::default();
        cfg.validate().unwrap();
        assert_eq!(TrainConfig::from_toml_str(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn overrides_apply() {
        let cfg = TrainConfig::load(
            None,
            &[
                "ppo.epsilon=0.05".into(),
                "gae.lambda_g=0.94".into(),
                "env.kind=gridworld".into(),
                "env.slip_prob=0.1".into(),
                "network.actor_hidden=[16, 16]".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.ppo.epsilon, 0.05);
        assert_eq!(cfg.gae.lambda_g, 0.94);
        assert_eq!(cfg.network.actor_hidden, vec![16, 16]);
        match cfg.env {
            EnvConfig::Gridworld(g) => assert_eq!(g.slip_prob, 0.1),
            _ => panic!("wrong env"),
        }
    }

    #[test]
    fn bad_configs_rejected() {
        for text in [
            "iterations = 0",
            "unknown_key = 1",
            "[ppo]\nepsilon = -1.0",
            "[ppo]\nepsilonn = 0.1",
            "[env]\nkind = \"gridworld\"\ngoal = [9, 9]",
            "not toml at all [",
        ] {
            assert!(
                matches!(TrainConfig::from_toml_str(text), Err(Error::Config(_))),
                "{text}"
            );
        }
        assert!(TrainConfig::load(None, &["noequals".into()]).is_err());
    }
}
