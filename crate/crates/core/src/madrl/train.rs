use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::actors::{act_explore, act_greedy};
use super::buffer::{ReplayBuffer, Transition};
use super::config::{Algo, TrainConfig};
use super::learner::Learner;
use crate::autodiff::Mlp;
use crate::checkpoint::Checkpoint;
use crate::env::{Env, ScenarioConfig};
use crate::error::{Error, Result};
use crate::seeding::{derive_seed, streams};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalStats {
    pub mean: f64,
    /// Population standard deviation over episodes.
    pub std: f64,
}

impl EvalStats {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub eval_mean: f64,
    pub eval_std: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub curve: Vec<CurvePoint>,
    /// Number of critic/actor update pairs performed.
    pub updates: usize,
}

/// Greedy, noise-free episodes; episode `k` uses environment seed
/// `derive_seed(seed, EVAL_ENV, k)`.
pub fn evaluate_policy(
    actors: &[Mlp],
    scenario: &ScenarioConfig,
    episodes: usize,
    seed: u64,
) -> Result<EvalStats> {
    if episodes == 0 {
        return Err(Error::InvalidArgument("episodes must be at least 1".into()));
    }
    let returns = (0..episodes)
        .map(|k| {
            let (mut env, mut obs) = Env::new(
                scenario.clone(),
                derive_seed(seed, streams::EVAL_ENV, k as u64),
            );
            let mut total = 0.0;
            loop {
                let a = act_greedy(actors, &obs)?;
                let r = env.step(&a)?;
                total += r.team_reward;
                obs = r.next_observations;
                if r.done {
                    return Ok(total);
                }
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(EvalStats::from_samples(&returns))
}

pub fn train(
    algo: Algo,
    scenario: &ScenarioConfig,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    if algo == Algo::M3ddpg {
        return Err(Error::InvalidArgument(
            "m3ddpg needs an eps_adv; use defense::train_m3ddpg".into(),
        ));
    }
    train_with(algo, scenario, cfg, seed, None)
}

pub fn train_with(
    algo: Algo,
    scenario: &ScenarioConfig,
    cfg: &TrainConfig,
    seed: u64,
    eps_adv: Option<f64>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let n = scenario.n_agents();
    let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, streams::INIT, 0));
    let mut learner = Learner::new(
        algo,
        n,
        scenario.obs_dim(),
        scenario.act_dim(),
        cfg.clone(),
        eps_adv,
        &mut init_rng,
    )?;
    let mut explore_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, streams::EXPLORE, 0));
    let mut replay_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, streams::REPLAY, 0));
    let horizon = if algo.uses_central_critic() {
        cfg.td_lambda_horizon
    } else {
        1
    };

    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity);
    let mut episode = 0u64;
    let (mut env, mut obs) = Env::new(
        scenario.clone(),
        derive_seed(seed, streams::TRAIN_ENV, episode),
    );
    let mut curve = Vec::new();
    let mut updates = 0;

    for step in 1..=cfg.total_steps {
        let actions = act_explore(
            &learner.actors.online,
            &obs,
            cfg.explore_noise_std,
            &mut explore_rng,
        )?;
        let r = env.step(&actions)?;
        buffer.push(Transition {
            obs: obs.clone(),
            actions,
            reward: r.team_reward,
            next_obs: r.next_observations.clone(),
            done: r.done,
        });
        obs = r.next_observations;
        if r.done {
            episode += 1;
            let (e, o) = Env::new(
                scenario.clone(),
                derive_seed(seed, streams::TRAIN_ENV, episode),
            );
            env = e;
            obs = o;
        }

        if buffer.len() >= cfg.batch_size {
            let batch = buffer.sample(cfg.batch_size, horizon, &mut replay_rng)?;
            learner.critic_update(&batch)?;
            learner.actor_update(&batch)?;
            learner.soft_update_targets()?;
            updates += 1;
        }

        if step % cfg.eval_interval == 0 {
            let stats = evaluate_policy(
                &learner.actors.online,
                scenario,
                cfg.eval_episodes,
                derive_seed(seed, streams::TRAIN_EVAL, step as u64),
            )?;
            curve.push(CurvePoint {
                step,
                eval_mean: stats.mean,
                eval_std: stats.std,
            });
        }
    }

    Ok(TrainOutcome {
        checkpoint: Checkpoint::from_learner(&learner, scenario.name),
        curve,
        updates,
    })
}

pub fn write_curve_csv(path: &Path, curve: &[CurvePoint]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut body = String::from("step,eval_mean,eval_std\n");
    for p in curve {
        body.push_str(&format!("{},{},{}\n", p.step, p.eval_mean, p.eval_std));
    }
    f.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))
}
