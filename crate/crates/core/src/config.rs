//! Flat `section.key=value` run configuration.
//!
//! Every field has a default. Files may contain blank lines and `#`
//! comments; unknown keys and unparsable values are rejected with the
//! offending key in the message.

use std::fs;
use std::path::{Path, PathBuf};

use crate::agent::{ActorObjective, AgentConfig};
use crate::error::{LvmError, Result};
use crate::lane_sim::EnvConfig;
use crate::latent_model::RssmConfig;
use crate::trainer::TrainerConfig;

/// Model sizes that are not implied by the environment.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSizes {
    pub deter: usize,
    pub stoch: usize,
    pub embed: usize,
    pub hidden: usize,
    pub cnn_depth: usize,
    pub min_std: f64,
    pub free_nats: f64,
}

impl ModelSizes {
    fn from_rssm(c: &RssmConfig) -> Self {
        ModelSizes {
            deter: c.deter,
            stoch: c.stoch,
            embed: c.embed,
            hidden: c.hidden,
            cnn_depth: c.cnn_depth,
            min_std: c.min_std,
            free_nats: c.free_nats,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub env: EnvConfig,
    pub model: ModelSizes,
    pub agent: AgentConfig,
    pub trainer: TrainerConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::desk()
    }
}

trait Value {
    fn parse_from(&mut self, s: &str) -> bool;
    fn render(&self) -> String;
}

macro_rules! plain_value {
    ($($t:ty),*) => {$(
        impl Value for $t {
            fn parse_from(&mut self, s: &str) -> bool {
                match s.parse::<$t>() {
                    Ok(v) => {
                        *self = v;
                        true
                    }
                    Err(_) => false,
                }
            }
            fn render(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

plain_value!(f64, usize, u32, u64, bool);

impl Value for PathBuf {
    fn parse_from(&mut self, s: &str) -> bool {
        *self = PathBuf::from(s);
        !s.is_empty()
    }
    fn render(&self) -> String {
        self.display().to_string()
    }
}

impl Value for ActorObjective {
    fn parse_from(&mut self, s: &str) -> bool {
        match ActorObjective::parse(s) {
            Some(v) => {
                *self = v;
                true
            }
            None => false,
        }
    }
    fn render(&self) -> String {
        self.as_str().to_string()
    }
}

/// Every recognised key, in echo order.
pub const KEYS: &[&str] = &[
    "seed",
    "out",
    "env.road_radius",
    "env.lane_half_width",
    "env.dt",
    "env.v0",
    "env.v_max",
    "env.c1",
    "env.c2",
    "env.c3",
    "env.c4",
    "env.c5",
    "env.c6",
    "env.c7",
    "env.accel_min",
    "env.accel_max",
    "env.steer_max",
    "env.img_channels",
    "env.img_size",
    "env.max_steps",
    "env.lf",
    "env.lr",
    "env.offroad_threshold",
    "env.view_range",
    "env.view_half_width",
    "model.deter",
    "model.stoch",
    "model.embed",
    "model.hidden",
    "model.cnn_depth",
    "model.min_std",
    "model.free_nats",
    "agent.units",
    "agent.gamma",
    "agent.lambda",
    "agent.sigma",
    "agent.objective",
    "trainer.seed_episodes",
    "trainer.pretrain_steps",
    "trainer.max_epochs",
    "trainer.train_freq",
    "trainer.data_collect_freq",
    "trainer.batch",
    "trainer.seq_len",
    "trainer.horizon",
    "trainer.traj_num",
    "trainer.model_lr",
    "trainer.critic_lr",
    "trainer.actor_lr",
    "trainer.clip_norm",
    "trainer.eval_every",
    "trainer.eval_episodes",
    "trainer.max_env_steps",
    "trainer.buffer_capacity",
    "trainer.single_critic",
];

impl RunConfig {
    pub fn desk() -> Self {
        RunConfig {
            seed: 0,
            out: PathBuf::from("runs"),
            env: EnvConfig::desk(),
            model: ModelSizes::from_rssm(&RssmConfig::desk()),
            agent: AgentConfig::desk(),
            trainer: TrainerConfig::desk(),
        }
    }

    /// 3×64×64 observations with the full-size networks.
    pub fn paper() -> Self {
        RunConfig {
            env: EnvConfig::paper_shape(),
            model: ModelSizes::from_rssm(&RssmConfig::paper()),
            agent: AgentConfig::default(),
            trainer: TrainerConfig::default(),
            ..RunConfig::desk()
        }
    }

    pub fn model_config(&self) -> RssmConfig {
        let m = &self.model;
        RssmConfig {
            obs_channels: self.env.img_channels,
            img_size: self.env.img_size,
            action_dim: 2,
            deter: m.deter,
            stoch: m.stoch,
            embed: m.embed,
            hidden: m.hidden,
            cnn_depth: m.cnn_depth,
            min_std: m.min_std,
            free_nats: m.free_nats,
        }
    }

    fn slot(&mut self, key: &str) -> Option<&mut dyn Value> {
        let e = &mut self.env;
        let m = &mut self.model;
        let a = &mut self.agent;
        let t = &mut self.trainer;
        Some(match key {
            "seed" => &mut self.seed,
            "out" => &mut self.out,
            "env.road_radius" => &mut e.road_radius,
            "env.lane_half_width" => &mut e.lane_half_width,
            "env.dt" => &mut e.dt,
            "env.v0" => &mut e.v0,
            "env.v_max" => &mut e.v_max,
            "env.c1" => &mut e.reward_coefs[0],
            "env.c2" => &mut e.reward_coefs[1],
            "env.c3" => &mut e.reward_coefs[2],
            "env.c4" => &mut e.reward_coefs[3],
            "env.c5" => &mut e.reward_coefs[4],
            "env.c6" => &mut e.reward_coefs[5],
            "env.c7" => &mut e.reward_coefs[6],
            "env.accel_min" => &mut e.accel_min,
            "env.accel_max" => &mut e.accel_max,
            "env.steer_max" => &mut e.steer_max,
            "env.img_channels" => &mut e.img_channels,
            "env.img_size" => &mut e.img_size,
            "env.max_steps" => &mut e.max_steps,
            "env.lf" => &mut e.lf,
            "env.lr" => &mut e.lr,
            "env.offroad_threshold" => &mut e.offroad_threshold,
            "env.view_range" => &mut e.view_range,
            "env.view_half_width" => &mut e.view_half_width,
            "model.deter" => &mut m.deter,
            "model.stoch" => &mut m.stoch,
            "model.embed" => &mut m.embed,
            "model.hidden" => &mut m.hidden,
            "model.cnn_depth" => &mut m.cnn_depth,
            "model.min_std" => &mut m.min_std,
            "model.free_nats" => &mut m.free_nats,
            "agent.units" => &mut a.units,
            "agent.gamma" => &mut a.gamma,
            "agent.lambda" => &mut a.lambda,
            "agent.sigma" => &mut a.sigma,
            "agent.objective" => &mut a.objective,
            "trainer.seed_episodes" => &mut t.seed_episodes,
            "trainer.pretrain_steps" => &mut t.pretrain_steps,
            "trainer.max_epochs" => &mut t.max_epochs,
            "trainer.train_freq" => &mut t.train_freq,
            "trainer.data_collect_freq" => &mut t.data_collect_freq,
            "trainer.batch" => &mut t.batch,
            "trainer.seq_len" => &mut t.seq_len,
            "trainer.horizon" => &mut t.horizon,
            "trainer.traj_num" => &mut t.traj_num,
            "trainer.model_lr" => &mut t.model_lr,
            "trainer.critic_lr" => &mut t.critic_lr,
            "trainer.actor_lr" => &mut t.actor_lr,
            "trainer.clip_norm" => &mut t.clip_norm,
            "trainer.eval_every" => &mut t.eval_every,
            "trainer.eval_episodes" => &mut t.eval_episodes,
            "trainer.max_env_steps" => &mut t.max_env_steps,
            "trainer.buffer_capacity" => &mut t.buffer_capacity,
            "trainer.single_critic" => &mut t.single_critic,
            _ => return None,
        })
    }

    /// Sets one field from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let slot = self
            .slot(key)
            .ok_or_else(|| LvmError::config(key, "unknown key"))?;
        if slot.parse_from(value.trim()) {
            Ok(())
        } else {
            Err(LvmError::config(key, format!("cannot parse `{value}`")))
        }
    }

    pub fn get(&self, key: &str) -> Option<String> {
        self.clone().slot(key).map(|v| v.render())
    }

    /// All fields as `(key, value)` pairs in [`KEYS`] order.
    pub fn entries(&self) -> Vec<(String, String)> {
        let mut c = self.clone();
        KEYS.iter()
            .map(|k| (k.to_string(), c.slot(k).expect("listed key").render()))
            .collect()
    }

    /// [`entries`](Self::entries) without the output location, which does
    /// not influence the run and so stays out of metrics headers.
    pub fn echo_entries(&self) -> Vec<(String, String)> {
        self.entries().into_iter().filter(|(k, _)| k != "out").collect()
    }

    /// Applies `key=value` lines on top of the current values.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                LvmError::config(format!("line {}", i + 1), format!("expected key=value, found `{line}`"))
            })?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| LvmError::io(path, e))?;
        self.apply_text(&text)
    }

    pub fn to_text(&self) -> String {
        self.entries().iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.model_config().validate()?;
        self.agent.validate()?;
        self.trainer.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_key_resolves_and_round_trips() {
        let cfg = RunConfig::desk();
        let text = cfg.to_text();
        let mut again = RunConfig::paper();
        again.apply_text(&text).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(cfg.entries().len(), KEYS.len());
    }

    #[test]
    fn unknown_keys_and_bad_values_name_the_field() {
        let mut cfg = RunConfig::desk();
        let e = cfg.apply_text("env.dtt=0.1").unwrap_err().to_string();
        assert!(e.contains("env.dtt") && e.contains("unknown"), "{e}");
        let e = cfg.apply_text("trainer.batch=many").unwrap_err().to_string();
        assert!(e.contains("trainer.batch"), "{e}");
        let e = cfg.apply_text("just words").unwrap_err().to_string();
        assert!(e.contains("line 1"), "{e}");
    }

    #[test]
    fn comments_and_whitespace_are_ignored() {
        let mut cfg = RunConfig::desk();
        cfg.apply_text("# a comment\n\n  env.dt = 0.1  \nagent.objective=start_only\n").unwrap();
        assert_eq!(cfg.env.dt, 0.1);
        assert_eq!(cfg.agent.objective, ActorObjective::StartOnly);
    }

    #[test]
    fn validation_reports_field() {
        let mut cfg = RunConfig::desk();
        cfg.set("env.c3", "0.5").unwrap();
        assert!(cfg.validate().unwrap_err().to_string().contains("env.c3"));
        let mut cfg = RunConfig::desk();
        cfg.set("env.img_size", "20").unwrap();
        assert!(cfg.validate().unwrap_err().to_string().contains("img_size"));
    }

    #[test]
    fn model_config_follows_environment_shape() {
        let cfg = RunConfig::paper();
        let m = cfg.model_config();
        assert_eq!((m.obs_channels, m.img_size, m.deter, m.stoch), (3, 64, 256, 60));
        assert!(cfg.validate().is_ok());
        assert!(RunConfig::desk().validate().is_ok());
    }
}
