//! Centralised-training, decentralised-execution actor-critic learners.

mod actors;
mod buffer;
mod config;
mod critic;
mod learner;
mod train;

pub use actors::{act_explore, act_greedy, ActorSet};
pub use buffer::{Batch, ReplayBuffer, Transition};
pub use config::{Algo, TrainConfig};
pub use critic::{
    facmac_qtot, joint_leaves, CentralCritic, CriticModel, FactoredCritic, MixingNet, TeamCritic,
};
pub use learner::{batch_team_q, facmac_td_targets, maddpg_td_targets, CriticPair, Learner};
pub use train::{
    evaluate_policy, train, train_with, write_curve_csv, CurvePoint, EvalStats, TrainOutcome,
};
