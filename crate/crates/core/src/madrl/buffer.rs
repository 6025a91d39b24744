//! FIFO experience replay.
//!
//! Transitions are kept in insertion order, so a sampled index can be
//! extended forward into the run of transitions that followed it (used for
//! λ-returns).

use std::collections::VecDeque;

use rand::seq::index;
use rand::Rng;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    /// `[n, obs_dim]`; the global state is its row-major flattening.
    pub obs: Tensor,
    /// `[n, act_dim]`
    pub actions: Tensor,
    pub reward: f64,
    pub next_obs: Tensor,
    pub done: bool,
}

impl Transition {
    pub fn state(&self) -> Tensor {
        self.obs.flatten()
    }

    pub fn next_state(&self) -> Tensor {
        self.next_obs.flatten()
    }
}

#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            items: VecDeque::with_capacity(capacity),
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Appends, evicting the oldest transition when full.
    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.items.get(i)
    }

    /// Indices drawn uniformly without replacement.
    pub fn sample_indices<R: Rng + ?Sized>(
        &self,
        batch_size: usize,
        rng: &mut R,
    ) -> Result<Vec<usize>> {
        if batch_size > self.items.len() {
            return Err(Error::InvalidArgument(format!(
                "batch of {batch_size} from a buffer holding {}",
                self.items.len()
            )));
        }
        Ok(index::sample(rng, self.items.len(), batch_size).into_vec())
    }

    /// The run starting at `start`: at most `horizon` consecutive
    /// transitions, ending early at an episode boundary or the newest entry.
    pub fn segment(&self, start: usize, horizon: usize) -> Vec<Transition> {
        let mut out = Vec::with_capacity(horizon);
        for t in self.items.iter().skip(start).take(horizon) {
            out.push(t.clone());
            if t.done {
                break;
            }
        }
        out
    }

    pub fn sample<R: Rng + ?Sized>(
        &self,
        batch_size: usize,
        horizon: usize,
        rng: &mut R,
    ) -> Result<Batch> {
        let idx = self.sample_indices(batch_size, rng)?;
        Batch::from_segments(
            idx.into_iter()
                .map(|i| self.segment(i, horizon.max(1)))
                .collect(),
        )
    }
}

/// A minibatch. Each sample is a run of one or more consecutive transitions;
/// the first one is the transition being learned from.
#[derive(Clone, Debug)]
pub struct Batch {
    pub segments: Vec<Vec<Transition>>,
    /// Per agent `[B, obs_dim]` from the first transition of each segment.
    pub obs: Vec<Tensor>,
    /// Per agent `[B, act_dim]`.
    pub actions: Vec<Tensor>,
    pub rewards: Vec<f64>,
    pub next_obs: Vec<Tensor>,
    pub dones: Vec<bool>,
}

/// Splits a list of joint matrices `[n, d]` into per-agent blocks `[B, d]`.
pub(crate) fn per_agent_blocks(joint: &[&Tensor]) -> Result<Vec<Tensor>> {
    let first = joint
        .first()
        .ok_or_else(|| Error::Shape("empty batch".into()))?;
    let (n, d) = (first.rows(), first.cols());
    (0..n)
        .map(|i| {
            let mut data = Vec::with_capacity(joint.len() * d);
            for t in joint {
                if t.rows() != n || t.cols() != d {
                    return Err(Error::Shape(format!(
                        "inconsistent joint shape {:?}",
                        t.shape()
                    )));
                }
                data.extend_from_slice(t.row(i));
            }
            Tensor::matrix(joint.len(), d, data)
        })
        .collect()
}

impl Batch {
    pub fn from_segments(segments: Vec<Vec<Transition>>) -> Result<Self> {
        if segments.is_empty() || segments.iter().any(Vec::is_empty) {
            return Err(Error::InvalidArgument(
                "batch needs non-empty segments".into(),
            ));
        }
        let heads: Vec<&Transition> = segments.iter().map(|s| &s[0]).collect();
        let obs = per_agent_blocks(&heads.iter().map(|t| &t.obs).collect::<Vec<_>>())?;
        let actions = per_agent_blocks(&heads.iter().map(|t| &t.actions).collect::<Vec<_>>())?;
        let next_obs = per_agent_blocks(&heads.iter().map(|t| &t.next_obs).collect::<Vec<_>>())?;
        let rewards = heads.iter().map(|t| t.reward).collect();
        let dones = heads.iter().map(|t| t.done).collect();
        Ok(Self {
            segments,
            obs,
            actions,
            rewards,
            next_obs,
            dones,
        })
    }

    /// One-step batch from single transitions.
    pub fn from_transitions(ts: Vec<Transition>) -> Result<Self> {
        Self::from_segments(ts.into_iter().map(|t| vec![t]).collect())
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn n_agents(&self) -> usize {
        self.obs.len()
    }
}
