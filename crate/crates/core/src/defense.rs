//! Minimax training on the multi-head critic: every joint action fed to the
//! critic during learning is first pushed a small step down the critic's
//! value gradient.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor};
use crate::env::ScenarioConfig;
use crate::error::{Error, Result};
use crate::madrl::{
    self, Algo, Batch, CentralCritic, Learner, TeamCritic, TrainConfig, TrainOutcome,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct M3ddpgConfig {
    pub eps_adv: f64,
    #[serde(flatten)]
    pub train: TrainConfig,
}

impl Default for M3ddpgConfig {
    fn default() -> Self {
        Self {
            eps_adv: 0.001,
            train: TrainConfig::maddpg(),
        }
    }
}

impl M3ddpgConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_adv.is_finite() && self.eps_adv >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "eps_adv {} must be finite and >= 0",
                self.eps_adv
            )));
        }
        self.train.validate()
    }
}

/// `a + δ` with `δ = −eps·∇_a Q̄(s, a)`, where `Q̄` is the mean of the critic
/// heads. Blocks are per agent, `[B, ·]`; rows are independent samples.
pub fn descend_joint_action(
    critic: &CentralCritic,
    obs: &[Tensor],
    actions: &[Tensor],
    eps: f64,
) -> Result<Vec<Tensor>> {
    if obs.len() != actions.len() {
        return Err(Error::Shape(format!(
            "{} observation vs {} action blocks",
            obs.len(),
            actions.len()
        )));
    }
    let mut tape = Tape::new();
    let o: Vec<_> = obs.iter().map(|b| tape.leaf(b.as_matrix())).collect();
    let a: Vec<_> = actions.iter().map(|b| tape.leaf(b.as_matrix())).collect();
    let q = critic.record_team_q(&mut tape, &o, &a)?;
    let rows = tape.value(q).rows();
    let grads = tape.backward(q, &Tensor::filled(&[rows, 1], 1.0))?;
    a.iter()
        .zip(actions)
        .map(|(&v, act)| {
            let g = grads.get(v);
            if !g.all_finite() {
                return Err(Error::NonFinite("critic action gradient".into()));
            }
            let data = act
                .data()
                .iter()
                .zip(g.data())
                .map(|(x, gx)| x + -eps * gx)
                .collect();
            Tensor::new(act.shape().to_vec(), data)
        })
        .collect()
}

/// Perturbed joint target action used in the bootstrap of the TD target.
pub fn perturb_joint_target_action(
    critic_target: &CentralCritic,
    next_obs: &[Tensor],
    next_actions: &[Tensor],
    eps_adv: f64,
) -> Result<Vec<Tensor>> {
    descend_joint_action(critic_target, next_obs, next_actions, eps_adv)
}

/// Replayed joint action pushed down the online critic, used for the other
/// agents' slots in the actor update.
pub fn adversarial_joint_action(
    critic: &CentralCritic,
    obs: &[Tensor],
    actions: &[Tensor],
    eps_adv: f64,
) -> Result<Vec<Tensor>> {
    descend_joint_action(critic, obs, actions, eps_adv)
}

fn require_m3ddpg(learner: &Learner) -> Result<()> {
    if learner.algo != Algo::M3ddpg {
        return Err(Error::InvalidArgument(format!(
            "expected an m3ddpg learner, got {}",
            learner.algo
        )));
    }
    Ok(())
}

pub fn m3ddpg_critic_update(learner: &mut Learner, batch: &Batch) -> Result<f64> {
    require_m3ddpg(learner)?;
    learner.critic_update(batch)
}

pub fn m3ddpg_actor_update(learner: &mut Learner, batch: &Batch) -> Result<f64> {
    require_m3ddpg(learner)?;
    learner.actor_update(batch)
}

pub fn train_m3ddpg(
    scenario: &ScenarioConfig,
    cfg: &M3ddpgConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    madrl::train_with(Algo::M3ddpg, scenario, &cfg.train, seed, Some(cfg.eps_adv))
}
