//! Critic and actor updates for the multi-head (MADDPG-style) and factored
//! (FACMAC-style) learners.

use rand::Rng;

use super::actors::ActorSet;
use super::buffer::{per_agent_blocks, Batch};
use super::config::{Algo, TrainConfig};
use super::critic::{collect_grads, CentralCritic, CriticModel, FactoredCritic, TeamCritic};
use crate::autodiff::{clip_grad_norm, AdamConfig, AdamState, Mlp, Tape, Tensor, Var};
use crate::defense;
use crate::error::{Error, Result};

/// Online critic with its target copy.
#[derive(Clone, Debug, PartialEq)]
pub enum CriticPair {
    Central {
        online: CentralCritic,
        target: CentralCritic,
    },
    Factored {
        online: FactoredCritic,
        target: FactoredCritic,
    },
}

impl CriticPair {
    pub fn central(online: CentralCritic) -> Self {
        CriticPair::Central {
            target: online.clone(),
            online,
        }
    }

    pub fn factored(online: FactoredCritic) -> Self {
        CriticPair::Factored {
            target: online.clone(),
            online,
        }
    }

    pub fn online_model(&self) -> CriticModel {
        match self {
            CriticPair::Central { online, .. } => CriticModel::Central(online.clone()),
            CriticPair::Factored { online, .. } => CriticModel::Factored(online.clone()),
        }
    }

    fn online_params(&self) -> Vec<&Tensor> {
        match self {
            CriticPair::Central { online, .. } => online.params(),
            CriticPair::Factored { online, .. } => online.params(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Learner {
    pub algo: Algo,
    pub cfg: TrainConfig,
    /// Scale of the minimax action perturbation; `Some` only for M3DDPG.
    pub eps_adv: Option<f64>,
    pub actors: ActorSet,
    pub critic: CriticPair,
    actor_opts: Vec<AdamState>,
    critic_opt: AdamState,
}

fn check_finite(what: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!(
            "{what} evaluated to {v}; aborting run"
        )))
    }
}

/// Per-agent observation leaves for batch blocks.
fn block_leaves(tape: &mut Tape, blocks: &[Tensor]) -> Vec<Var> {
    blocks.iter().map(|b| tape.leaf(b.as_matrix())).collect()
}

/// Target actions `μ'_i(o_i)` for every agent block.
pub(crate) fn policy_blocks(actors: &[Mlp], obs: &[Tensor]) -> Result<Vec<Tensor>> {
    actors.iter().zip(obs).map(|(a, o)| a.forward(o)).collect()
}

impl Learner {
    pub fn new<R: Rng + ?Sized>(
        algo: Algo,
        n_agents: usize,
        obs_dim: usize,
        act_dim: usize,
        cfg: TrainConfig,
        eps_adv: Option<f64>,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let actors = ActorSet::new(n_agents, obs_dim, act_dim, &cfg.actor_hidden, rng)?;
        let critic = if algo.uses_central_critic() {
            CriticPair::central(CentralCritic::new(
                n_agents,
                obs_dim,
                act_dim,
                &cfg.critic_hidden,
                rng,
            )?)
        } else {
            CriticPair::factored(FactoredCritic::new(
                n_agents,
                obs_dim,
                act_dim,
                &cfg.critic_hidden,
                cfg.mixer_embed,
                rng,
            )?)
        };
        Self::from_parts(algo, cfg, actors, critic, eps_adv)
    }

    pub fn from_parts(
        algo: Algo,
        cfg: TrainConfig,
        actors: ActorSet,
        critic: CriticPair,
        eps_adv: Option<f64>,
    ) -> Result<Self> {
        match (&critic, algo.uses_central_critic()) {
            (CriticPair::Central { .. }, true) | (CriticPair::Factored { .. }, false) => {}
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "critic family does not match {algo}"
                )))
            }
        }
        if eps_adv.is_some() != (algo == Algo::M3ddpg) {
            return Err(Error::InvalidArgument(
                "eps_adv is set exactly for m3ddpg".into(),
            ));
        }
        let actor_cfg = AdamConfig::new(cfg.actor_lr).with_epsilon(cfg.adam_epsilon);
        let critic_cfg = AdamConfig::new(cfg.critic_lr)
            .with_epsilon(cfg.adam_epsilon)
            .with_weight_decay(cfg.weight_decay);
        let actor_opts = actors
            .online
            .iter()
            .map(|a| AdamState::for_mlp(actor_cfg, a))
            .collect();
        let critic_opt = AdamState::new(critic_cfg, critic.online_params());
        Ok(Self {
            algo,
            cfg,
            eps_adv,
            actors,
            critic,
            actor_opts,
            critic_opt,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.actors.n_agents()
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        if batch.len() != self.cfg.batch_size {
            return Err(Error::InvalidArgument(format!(
                "batch of {} but batch_size is {}",
                batch.len(),
                self.cfg.batch_size
            )));
        }
        if batch.n_agents() != self.n_agents() {
            return Err(Error::Shape(format!(
                "batch has {} agents, learner {}",
                batch.n_agents(),
                self.n_agents()
            )));
        }
        Ok(())
    }

    /// Regression targets for the current batch: `[B, n]` per-agent targets
    /// for the multi-head critic, `[B, 1]` for the factored one.
    pub fn td_targets(&self, batch: &Batch) -> Result<Tensor> {
        match &self.critic {
            CriticPair::Central { target, .. } => maddpg_td_targets(
                target,
                &self.actors.target,
                batch,
                self.cfg.gamma,
                self.cfg.td_lambda,
                self.eps_adv,
            ),
            CriticPair::Factored { target, .. } => {
                facmac_td_targets(target, &self.actors.target, batch, self.cfg.gamma)
            }
        }
    }

    /// One optimizer step on the mean squared TD error; returns the loss
    /// before the step.
    pub fn critic_update(&mut self, batch: &Batch) -> Result<f64> {
        self.check_batch(batch)?;
        let y = self.td_targets(batch)?;
        let mut tape = Tape::new();
        let obs = block_leaves(&mut tape, &batch.obs);
        let acts = block_leaves(&mut tape, &batch.actions);
        let (pred, vars) = match &self.critic {
            CriticPair::Central { online, .. } => online.record_heads(&mut tape, &obs, &acts)?,
            CriticPair::Factored { online, .. } => online.record_qtot(&mut tape, &obs, &acts)?,
        };
        let y = tape.leaf(y);
        let diff = tape.sub(pred, y)?;
        let sq = tape.square(diff);
        let loss = tape.mean(sq);
        let loss_value = tape.value(loss).data()[0];
        check_finite("critic loss", loss_value)?;
        let grads = tape.backward(loss, &Tensor::scalar(1.0))?;
        let mut g = collect_grads(&vars, &grads);
        clip_grad_norm(&mut g, self.cfg.grad_clip)?;
        let params = match &mut self.critic {
            CriticPair::Central { online, .. } => online.params_mut(),
            CriticPair::Factored { online, .. } => online.params_mut(),
        };
        self.critic_opt.update(params, &g)?;
        Ok(loss_value)
    }

    /// One optimizer step per actor towards higher critic value; returns the
    /// loss (negated value) before the step.
    pub fn actor_update(&mut self, batch: &Batch) -> Result<f64> {
        self.check_batch(batch)?;
        let n = self.n_agents();
        let mut tape = Tape::new();
        let obs = block_leaves(&mut tape, &batch.obs);
        let mut actor_vars = Vec::with_capacity(n);
        let mut policy = Vec::with_capacity(n);
        for (i, actor) in self.actors.online.iter().enumerate() {
            let (a, v) = actor.record(&mut tape, obs[i])?;
            policy.push(a);
            actor_vars.push(v);
        }

        let (loss, reported) = match &self.critic {
            CriticPair::Central { online, .. } => {
                // Other agents' slots hold the replayed actions, optionally
                // pushed along the critic's descent direction.
                let others = match self.eps_adv {
                    Some(eps) => {
                        defense::adversarial_joint_action(online, &batch.obs, &batch.actions, eps)?
                    }
                    None => batch.actions.clone(),
                };
                let fixed = block_leaves(&mut tape, &others);
                let mut terms = Vec::with_capacity(n);
                for i in 0..n {
                    let mut joint = fixed.clone();
                    joint[i] = policy[i];
                    let (heads, _) = online.record_heads(&mut tape, &obs, &joint)?;
                    let qi = tape.slice_cols(heads, i, 1)?;
                    terms.push(tape.mean(qi));
                }
                let all = tape.concat(&terms)?;
                let total = tape.sum(all);
                let loss = tape.scale(total, -1.0);
                let reported = tape.value(loss).data()[0] / n as f64;
                (loss, reported)
            }
            CriticPair::Factored { online, .. } => {
                let (qtot, _) = online.record_qtot(&mut tape, &obs, &policy)?;
                let mean = tape.mean(qtot);
                let loss = tape.scale(mean, -1.0);
                let reported = tape.value(loss).data()[0];
                (loss, reported)
            }
        };
        check_finite("actor loss", reported)?;
        let grads = tape.backward(loss, &Tensor::scalar(1.0))?;
        for (i, vars) in actor_vars.iter().enumerate() {
            let mut g = vars.grads(&grads);
            clip_grad_norm(&mut g, self.cfg.grad_clip)?;
            self.actor_opts[i].update(self.actors.online[i].params_mut(), &g)?;
        }
        Ok(reported)
    }

    pub fn soft_update_targets(&mut self) -> Result<()> {
        let tau = self.cfg.tau;
        for (t, o) in self.actors.target.iter_mut().zip(&self.actors.online) {
            t.soft_update_from(o, tau)?;
        }
        match &mut self.critic {
            CriticPair::Central { online, target } => target.soft_update_from(online, tau),
            CriticPair::Factored { online, target } => target.soft_update_from(online, tau),
        }
    }
}

/// Per-agent λ-return targets for the multi-head critic, `[B, n]`.
///
/// For a sampled run of `N` transitions with rewards `r_0..r_{N−1}` the
/// n-step returns are `G⁽ⁿ⁾ = Σ_{j<n} γʲ r_j + γⁿ·Q'_i(s_n, μ'(o_n))`, with no
/// bootstrap after a terminal transition, and the target is
/// `(1−λ)·Σ_{n<N} λⁿ⁻¹ G⁽ⁿ⁾ + λᴺ⁻¹ G⁽ᴺ⁾`. One-transition runs reduce to the
/// ordinary `y_i = r + γ·Q'_i(s', μ'(o'))`.
///
/// With `eps_adv` set, every bootstrap evaluates `Q'` at the joint target
/// action pushed along `−∇_a' Q'`.
pub fn maddpg_td_targets(
    critic_target: &CentralCritic,
    actors_target: &[Mlp],
    batch: &Batch,
    gamma: f64,
    lambda: f64,
    eps_adv: Option<f64>,
) -> Result<Tensor> {
    let n = critic_target.n_agents;
    // Gather every non-terminal bootstrap point of every segment.
    let mut points: Vec<&Tensor> = Vec::new();
    for seg in &batch.segments {
        for t in seg {
            if !t.done {
                points.push(&t.next_obs);
            }
        }
    }
    let boot = if points.is_empty() {
        None
    } else {
        let next_obs = per_agent_blocks(&points)?;
        let mut next_act = policy_blocks(actors_target, &next_obs)?;
        if let Some(eps) = eps_adv {
            next_act =
                defense::perturb_joint_target_action(critic_target, &next_obs, &next_act, eps)?;
        }
        let mut tape = Tape::new();
        let o = block_leaves(&mut tape, &next_obs);
        let a = block_leaves(&mut tape, &next_act);
        let (heads, _) = critic_target.record_heads(&mut tape, &o, &a)?;
        Some(tape.value(heads).clone())
    };

    let mut out = Vec::with_capacity(batch.len() * n);
    let mut cursor = 0;
    for seg in &batch.segments {
        let horizon = seg.len();
        let mut target = vec![0.0; n];
        let mut discounted_rewards = 0.0;
        for (k, t) in seg.iter().enumerate() {
            discounted_rewards += gamma.powi(k as i32) * t.reward;
            let steps = k + 1;
            let weight = if steps == horizon {
                lambda.powi(steps as i32 - 1)
            } else {
                (1.0 - lambda) * lambda.powi(steps as i32 - 1)
            };
            let bootstrap = if t.done {
                None
            } else {
                let row = boot
                    .as_ref()
                    .expect("bootstrap computed")
                    .row(cursor)
                    .to_vec();
                cursor += 1;
                Some(row)
            };
            for (i, ti) in target.iter_mut().enumerate() {
                let tail = bootstrap
                    .as_ref()
                    .map_or(0.0, |b| gamma.powi(steps as i32) * b[i]);
                *ti += weight * (discounted_rewards + tail);
            }
        }
        out.extend(target);
    }
    Tensor::matrix(batch.len(), n, out)
}

/// One-step targets `y = r + γ(1 − done)·Q'_tot(s', μ'(o'))`, `[B, 1]`.
pub fn facmac_td_targets(
    critic_target: &FactoredCritic,
    actors_target: &[Mlp],
    batch: &Batch,
    gamma: f64,
) -> Result<Tensor> {
    let next_act = policy_blocks(actors_target, &batch.next_obs)?;
    let mut tape = Tape::new();
    let o = block_leaves(&mut tape, &batch.next_obs);
    let a = block_leaves(&mut tape, &next_act);
    let (q, _) = critic_target.record_qtot(&mut tape, &o, &a)?;
    let q = tape.value(q);
    let y = batch
        .rewards
        .iter()
        .zip(&batch.dones)
        .enumerate()
        .map(|(b, (r, d))| if *d { *r } else { r + gamma * q.data()[b] })
        .collect();
    Tensor::matrix(batch.len(), 1, y)
}

/// Scalar team value `[B, 1]` of batch blocks under `critic`.
pub fn batch_team_q(critic: &dyn TeamCritic, obs: &[Tensor], actions: &[Tensor]) -> Result<Tensor> {
    let mut tape = Tape::new();
    let o = block_leaves(&mut tape, obs);
    let a = block_leaves(&mut tape, actions);
    let q = critic.record_team_q(&mut tape, &o, &a)?;
    Ok(tape.value(q).clone())
}
