//! Centralised critics.
//!
//! Two families: the multi-head critic (one network mapping global state and
//! joint action to a Q-value per agent) and the factored critic (per-agent
//! utilities combined by a state-conditioned monotone mixer). Both expose a
//! scalar team value through [`TeamCritic`], which is what the attacks use.

use rand::Rng;

use crate::autodiff::{Activation, Mlp, MlpVars, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Scalar team value of a joint observation/action pair, recorded on a tape.
///
/// `obs[i]` is agent `i`'s observation block `[B, obs_dim]` and `actions[i]`
/// its action block `[B, act_dim]`; the global state is the concatenation of
/// all observation blocks. Returns a `[B, 1]` column.
pub trait TeamCritic: Sync {
    fn n_agents(&self) -> usize;

    fn record_team_q(&self, tape: &mut Tape, obs: &[Var], actions: &[Var]) -> Result<Var>;

    /// Untaped convenience for a single joint sample (`[n, obs_dim]`,
    /// `[n, act_dim]`).
    fn team_q(&self, obs: &Tensor, actions: &Tensor) -> Result<f64> {
        let mut tape = Tape::new();
        let (o, a) = joint_leaves(&mut tape, obs, actions)?;
        let q = self.record_team_q(&mut tape, &o, &a)?;
        Ok(tape.value(q).data()[0])
    }
}

/// One leaf per agent row of a single joint sample.
pub fn joint_leaves(
    tape: &mut Tape,
    obs: &Tensor,
    actions: &Tensor,
) -> Result<(Vec<Var>, Vec<Var>)> {
    if obs.rows() != actions.rows() {
        return Err(Error::Shape(format!(
            "{} observation rows vs {} action rows",
            obs.rows(),
            actions.rows()
        )));
    }
    let o = (0..obs.rows())
        .map(|i| tape.leaf(Tensor::from_parts(vec![1, obs.cols()], obs.row(i).to_vec())))
        .collect();
    let a = (0..actions.rows())
        .map(|i| {
            tape.leaf(Tensor::from_parts(
                vec![1, actions.cols()],
                actions.row(i).to_vec(),
            ))
        })
        .collect();
    Ok((o, a))
}

fn check_blocks(obs: &[Var], actions: &[Var], n: usize) -> Result<()> {
    if obs.len() != n || actions.len() != n {
        return Err(Error::Shape(format!(
            "critic for {n} agents got {} observation and {} action blocks",
            obs.len(),
            actions.len()
        )));
    }
    Ok(())
}

fn net_sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut s = vec![input];
    s.extend_from_slice(hidden);
    s.push(output);
    s
}

/// Multi-head critic: `(s ⊕ a_1 … a_n) → [Q_1 … Q_n]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CentralCritic {
    pub net: Mlp,
    pub n_agents: usize,
}

impl CentralCritic {
    pub fn new<R: Rng + ?Sized>(
        n_agents: usize,
        obs_dim: usize,
        act_dim: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        let sizes = net_sizes(n_agents * (obs_dim + act_dim), hidden, n_agents);
        Ok(Self {
            net: Mlp::new(&sizes, Activation::Relu, Activation::Identity, rng)?,
            n_agents,
        })
    }

    pub fn from_net(net: Mlp, n_agents: usize) -> Result<Self> {
        if net.output_dim() != n_agents {
            return Err(Error::Shape(format!(
                "multi-head critic needs {n_agents} outputs, network has {}",
                net.output_dim()
            )));
        }
        Ok(Self { net, n_agents })
    }

    /// Per-agent heads `[B, n]` plus the registered parameter handles.
    pub fn record_heads(
        &self,
        tape: &mut Tape,
        obs: &[Var],
        actions: &[Var],
    ) -> Result<(Var, Vec<MlpVars>)> {
        check_blocks(obs, actions, self.n_agents)?;
        let mut parts = obs.to_vec();
        parts.extend_from_slice(actions);
        let input = tape.concat(&parts)?;
        let (out, vars) = self.net.record(tape, input)?;
        Ok((out, vec![vars]))
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.net.params_mut()
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.net.params()
    }

    pub fn soft_update_from(&mut self, online: &CentralCritic, tau: f64) -> Result<()> {
        self.net.soft_update_from(&online.net, tau)
    }
}

impl TeamCritic for CentralCritic {
    fn n_agents(&self) -> usize {
        self.n_agents
    }

    /// Mean over the agent heads.
    fn record_team_q(&self, tape: &mut Tape, obs: &[Var], actions: &[Var]) -> Result<Var> {
        let (heads, _) = self.record_heads(tape, obs, actions)?;
        Ok(tape.mean_cols(heads))
    }
}

/// State-conditioned monotone mixer:
/// `Q_tot = Σ_i |w_i(s)|·Q_i + b(s)` where `w` and `b` are hypernetworks.
#[derive(Clone, Debug, PartialEq)]
pub struct MixingNet {
    pub weight_net: Mlp,
    pub bias_net: Mlp,
}

impl MixingNet {
    pub fn new<R: Rng + ?Sized>(
        n_agents: usize,
        state_dim: usize,
        embed: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            weight_net: Mlp::new(
                &[state_dim, embed, n_agents],
                Activation::Relu,
                Activation::Identity,
                rng,
            )?,
            bias_net: Mlp::new(
                &[state_dim, embed, 1],
                Activation::Relu,
                Activation::Identity,
                rng,
            )?,
        })
    }

    /// Fixed mixer with state-independent weights and bias: the hypernetwork
    /// output layers are zeroed and their biases carry the values.
    pub fn constant(weights: &[f64], bias: f64, state_dim: usize) -> Result<Self> {
        let n = weights.len();
        let mut weight_net =
            Mlp::zeros(&[state_dim, 1, n], Activation::Relu, Activation::Identity)?;
        weight_net.layers_mut()[1]
            .bias
            .data_mut()
            .copy_from_slice(weights);
        let mut bias_net = Mlp::zeros(&[state_dim, 1, 1], Activation::Relu, Activation::Identity)?;
        bias_net.layers_mut()[1].bias.data_mut()[0] = bias;
        Ok(Self {
            weight_net,
            bias_net,
        })
    }

    /// `[B, 1]` mixed value from agent values `[B, n]` and state `[B, state_dim]`.
    pub fn record_mix(
        &self,
        tape: &mut Tape,
        state: Var,
        agent_qs: Var,
    ) -> Result<(Var, Vec<MlpVars>)> {
        let (w, wv) = self.weight_net.record(tape, state)?;
        let w = tape.abs(w);
        let weighted = tape.mul(w, agent_qs)?;
        let summed = tape.sum_cols(weighted);
        let (b, bv) = self.bias_net.record(tape, state)?;
        Ok((tape.add(summed, b)?, vec![wv, bv]))
    }

    /// Mixing weights `|w(s)|` for a single state.
    pub fn weights(&self, state: &Tensor) -> Result<Vec<f64>> {
        Ok(self
            .weight_net
            .forward(state)?
            .data()
            .iter()
            .map(|v| v.abs())
            .collect())
    }
}

/// Per-agent utilities `Q_i(o_i, a_i)` mixed into `Q_tot`.
#[derive(Clone, Debug, PartialEq)]
pub struct FactoredCritic {
    pub agents: Vec<Mlp>,
    pub mixer: MixingNet,
}

impl FactoredCritic {
    pub fn new<R: Rng + ?Sized>(
        n_agents: usize,
        obs_dim: usize,
        act_dim: usize,
        hidden: &[usize],
        embed: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let sizes = net_sizes(obs_dim + act_dim, hidden, 1);
        let agents = (0..n_agents)
            .map(|_| Mlp::new(&sizes, Activation::Relu, Activation::Identity, rng))
            .collect::<Result<Vec<_>>>()?;
        let mixer = MixingNet::new(n_agents, n_agents * obs_dim, embed, rng)?;
        Ok(Self { agents, mixer })
    }

    /// Agent utilities `[B, n]`.
    pub fn record_agent_qs(
        &self,
        tape: &mut Tape,
        obs: &[Var],
        actions: &[Var],
    ) -> Result<(Var, Vec<MlpVars>)> {
        check_blocks(obs, actions, self.agents.len())?;
        let mut qs = Vec::with_capacity(self.agents.len());
        let mut vars = Vec::with_capacity(self.agents.len() + 2);
        for (i, net) in self.agents.iter().enumerate() {
            let input = tape.concat(&[obs[i], actions[i]])?;
            let (q, v) = net.record(tape, input)?;
            qs.push(q);
            vars.push(v);
        }
        Ok((tape.concat(&qs)?, vars))
    }

    /// `Q_tot` `[B, 1]` with handles for every parameter, in `params()` order.
    pub fn record_qtot(
        &self,
        tape: &mut Tape,
        obs: &[Var],
        actions: &[Var],
    ) -> Result<(Var, Vec<MlpVars>)> {
        let (qs, mut vars) = self.record_agent_qs(tape, obs, actions)?;
        let state = tape.concat(obs)?;
        let (qtot, mv) = self.mixer.record_mix(tape, state, qs)?;
        vars.extend(mv);
        Ok((qtot, vars))
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut p: Vec<&Tensor> = self.agents.iter().flat_map(|a| a.params()).collect();
        p.extend(self.mixer.weight_net.params());
        p.extend(self.mixer.bias_net.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p: Vec<&mut Tensor> = self
            .agents
            .iter_mut()
            .flat_map(|a| a.params_mut())
            .collect();
        p.extend(self.mixer.weight_net.params_mut());
        p.extend(self.mixer.bias_net.params_mut());
        p
    }

    pub fn soft_update_from(&mut self, online: &FactoredCritic, tau: f64) -> Result<()> {
        for (t, o) in self.agents.iter_mut().zip(&online.agents) {
            t.soft_update_from(o, tau)?;
        }
        self.mixer
            .weight_net
            .soft_update_from(&online.mixer.weight_net, tau)?;
        self.mixer
            .bias_net
            .soft_update_from(&online.mixer.bias_net, tau)
    }
}

impl TeamCritic for FactoredCritic {
    fn n_agents(&self) -> usize {
        self.agents.len()
    }

    fn record_team_q(&self, tape: &mut Tape, obs: &[Var], actions: &[Var]) -> Result<Var> {
        Ok(self.record_qtot(tape, obs, actions)?.0)
    }
}

/// `Q_tot(s, a)` for one joint sample.
pub fn facmac_qtot(
    critic: &FactoredCritic,
    observations: &Tensor,
    actions: &Tensor,
) -> Result<f64> {
    critic.team_q(observations, actions)
}

/// Either critic family, as stored in checkpoints.
#[derive(Clone, Debug, PartialEq)]
pub enum CriticModel {
    Central(CentralCritic),
    Factored(FactoredCritic),
}

impl TeamCritic for CriticModel {
    fn n_agents(&self) -> usize {
        match self {
            CriticModel::Central(c) => c.n_agents,
            CriticModel::Factored(c) => c.agents.len(),
        }
    }

    fn record_team_q(&self, tape: &mut Tape, obs: &[Var], actions: &[Var]) -> Result<Var> {
        match self {
            CriticModel::Central(c) => c.record_team_q(tape, obs, actions),
            CriticModel::Factored(c) => c.record_team_q(tape, obs, actions),
        }
    }
}

/// Flattens per-network gradient handles into one list matching `params()`.
pub(crate) fn collect_grads(vars: &[MlpVars], grads: &crate::autodiff::Gradients) -> Vec<Tensor> {
    vars.iter().flat_map(|v| v.grads(grads)).collect()
}
