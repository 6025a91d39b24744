use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Activation, Mlp, Tensor};
use crate::error::{Error, Result};

/// Decentralised deterministic policies, one per agent, with targets.
#[derive(Clone, Debug, PartialEq)]
pub struct ActorSet {
    pub online: Vec<Mlp>,
    pub target: Vec<Mlp>,
}

impl ActorSet {
    /// `obs_dim → hidden… → act_dim` networks with ReLU hidden layers and a
    /// tanh output; targets start as exact copies.
    pub fn new<R: Rng + ?Sized>(
        n_agents: usize,
        obs_dim: usize,
        act_dim: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        let mut sizes = vec![obs_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(act_dim);
        let online = (0..n_agents)
            .map(|_| Mlp::new(&sizes, Activation::Relu, Activation::Tanh, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            target: online.clone(),
            online,
        })
    }

    pub fn from_online(online: Vec<Mlp>) -> Self {
        Self {
            target: online.clone(),
            online,
        }
    }

    pub fn n_agents(&self) -> usize {
        self.online.len()
    }
}

/// `μ_i(o_i)` for every agent; rows of `observations` are agents.
pub fn act_greedy(actors: &[Mlp], observations: &Tensor) -> Result<Tensor> {
    if observations.rows() != actors.len() {
        return Err(Error::Shape(format!(
            "{} actors but {} observation rows",
            actors.len(),
            observations.rows()
        )));
    }
    let act_dim = actors.first().map(Mlp::output_dim).unwrap_or(0);
    let mut data = Vec::with_capacity(actors.len() * act_dim);
    for (i, actor) in actors.iter().enumerate() {
        let row = Tensor::vector(observations.row(i).to_vec())?;
        data.extend_from_slice(actor.forward(&row)?.data());
    }
    Tensor::matrix(actors.len(), act_dim, data)
}

/// Greedy action plus iid Gaussian noise, clamped to `[−1, 1]`.
pub fn act_explore<R: Rng + ?Sized>(
    actors: &[Mlp],
    observations: &Tensor,
    noise_std: f64,
    rng: &mut R,
) -> Result<Tensor> {
    let mut a = act_greedy(actors, observations)?;
    if noise_std > 0.0 {
        let normal =
            Normal::new(0.0, noise_std).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        for v in a.data_mut() {
            *v = (*v + normal.sample(rng)).clamp(-1.0, 1.0);
        }
    }
    Ok(a)
}
