use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algo {
    Maddpg,
    Facmac,
    M3ddpg,
}

impl Algo {
    pub fn as_str(self) -> &'static str {
        match self {
            Algo::Maddpg => "maddpg",
            Algo::Facmac => "facmac",
            Algo::M3ddpg => "m3ddpg",
        }
    }

    /// MADDPG and its minimax variant share the multi-head critic.
    pub fn uses_central_critic(self) -> bool {
        matches!(self, Algo::Maddpg | Algo::M3ddpg)
    }
}

impl std::str::FromStr for Algo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "maddpg" => Ok(Algo::Maddpg),
            "facmac" => Ok(Algo::Facmac),
            "m3ddpg" => Ok(Algo::M3ddpg),
            other => Err(Error::InvalidArgument(format!(
                "unknown algorithm `{other}`"
            ))),
        }
    }
}

impl std::fmt::Display for Algo {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub gamma: f64,
    pub tau: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub adam_epsilon: f64,
    pub explore_noise_std: f64,
    /// λ of the truncated λ-return used by the multi-head critic.
    pub td_lambda: f64,
    /// Longest transition run folded into one λ-return.
    pub td_lambda_horizon: usize,
    pub grad_clip: f64,
    /// L2 weight decay on the critic optimizer.
    pub weight_decay: f64,
    pub total_steps: usize,
    pub eval_interval: usize,
    pub eval_episodes: usize,
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub mixer_embed: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::maddpg()
    }
}

impl TrainConfig {
    pub fn maddpg() -> Self {
        Self {
            gamma: 0.85,
            tau: 0.001,
            batch_size: 32,
            buffer_capacity: 5000,
            actor_lr: 0.01,
            critic_lr: 0.05,
            adam_epsilon: 1e-8,
            explore_noise_std: 0.1,
            td_lambda: 0.8,
            td_lambda_horizon: 5,
            grad_clip: 0.5,
            weight_decay: 1e-4,
            total_steps: 100_000,
            eval_interval: 2000,
            eval_episodes: 10,
            actor_hidden: vec![64, 64],
            critic_hidden: vec![64, 64],
            mixer_embed: 64,
        }
    }

    pub fn facmac() -> Self {
        Self {
            actor_lr: 0.05,
            critic_lr: 0.01,
            adam_epsilon: 0.05,
            td_lambda: 0.0,
            td_lambda_horizon: 1,
            weight_decay: 0.0,
            ..Self::maddpg()
        }
    }

    pub fn for_algo(algo: Algo) -> Self {
        match algo {
            Algo::Maddpg | Algo::M3ddpg => Self::maddpg(),
            Algo::Facmac => Self::facmac(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("gamma {} outside [0, 1)", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return bad(format!("tau {} outside [0, 1]", self.tau));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.buffer_capacity < self.batch_size {
            return bad("buffer_capacity smaller than batch_size".into());
        }
        if !(0.0..=1.0).contains(&self.td_lambda) || self.td_lambda_horizon == 0 {
            return bad("td_lambda must lie in [0, 1] with a horizon of at least 1".into());
        }
        if self.grad_clip <= 0.0 || self.explore_noise_std < 0.0 || self.weight_decay < 0.0 {
            return bad("grad_clip must be positive; noise and weight decay non-negative".into());
        }
        if self.eval_interval == 0 || self.eval_episodes == 0 {
            return bad("eval_interval and eval_episodes must be positive".into());
        }
        Ok(())
    }
}
