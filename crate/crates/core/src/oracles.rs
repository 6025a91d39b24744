//! Brute-force verifiers: finite differences and exact dynamic programming on
//! small tabular games with a state/action adversary.
//!
//! In a tabular game the adversary acts through finite menus. At true state
//! `s` it may present any state `ŝ` from `state_menus[s]` to the agents, and
//! may override each agent's sampled action with an entry of that agent's
//! action menu (`None` keeps the sampled action).

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::seeding::derive_seed;

/// Central differences `(f(x + h·e_i) − f(x − h·e_i)) / 2h`.
pub fn finite_diff_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("step {h} must be positive")));
    }
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + h;
            let up = f(&p);
            p[i] = x[i] - h;
            let down = f(&p);
            p[i] = x[i];
            Ok((up - down) / (2.0 * h))
        })
        .collect()
}

pub type Overrides = Vec<Option<usize>>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabularGame {
    pub n_states: usize,
    pub action_counts: Vec<usize>,
    pub gamma: f64,
    /// `transitions[s][a][s']` with `a` a joint action index.
    pub transitions: Vec<Vec<Vec<f64>>>,
    /// `rewards[s][a]`.
    pub rewards: Vec<Vec<f64>>,
    pub state_menus: Vec<Vec<usize>>,
    pub action_menus: Vec<Vec<Option<usize>>>,
}

pub const MAX_STATES: usize = 12;
pub const MAX_ACTIONS: usize = 3;

impl TabularGame {
    pub fn n_agents(&self) -> usize {
        self.action_counts.len()
    }

    pub fn n_joint(&self) -> usize {
        self.action_counts.iter().product()
    }

    /// Joint index to per-agent actions; agent 0 varies slowest.
    pub fn decode(&self, mut a: usize) -> Vec<usize> {
        let mut out = vec![0; self.n_agents()];
        for i in (0..self.n_agents()).rev() {
            out[i] = a % self.action_counts[i];
            a /= self.action_counts[i];
        }
        out
    }

    pub fn encode(&self, actions: &[usize]) -> usize {
        actions
            .iter()
            .zip(&self.action_counts)
            .fold(0, |acc, (a, k)| acc * k + a)
    }

    pub fn reward_bound(&self) -> f64 {
        self.rewards
            .iter()
            .flatten()
            .fold(0.0, |m, r| m.max(r.abs()))
    }

    /// Every combination of per-agent action-menu entries.
    pub fn override_tuples(&self) -> Vec<Overrides> {
        let mut out: Vec<Overrides> = vec![Vec::new()];
        for menu in &self.action_menus {
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    menu.iter().map(move |o| {
                        let mut p = prefix.clone();
                        p.push(*o);
                        p
                    })
                })
                .collect();
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        let (ns, nj) = (self.n_states, self.n_joint());
        if ns == 0 || ns > MAX_STATES {
            return bad(format!("{ns} states (1..={MAX_STATES} supported)"));
        }
        if self.action_counts.is_empty()
            || self
                .action_counts
                .iter()
                .any(|&k| k == 0 || k > MAX_ACTIONS)
        {
            return bad(format!(
                "action counts {:?} (1..={MAX_ACTIONS} each)",
                self.action_counts
            ));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("gamma {} outside [0, 1)", self.gamma));
        }
        if self.transitions.len() != ns || self.rewards.len() != ns {
            return bad("transition/reward tables need one entry per state".into());
        }
        for s in 0..ns {
            if self.transitions[s].len() != nj || self.rewards[s].len() != nj {
                return bad(format!("state {s}: tables need {nj} joint actions"));
            }
            for (a, row) in self.transitions[s].iter().enumerate() {
                let sum: f64 = row.iter().sum();
                if row.len() != ns || row.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > 1e-12
                {
                    return bad(format!(
                        "P(·|{s},{a}) is not a distribution over {ns} states"
                    ));
                }
            }
            if self.rewards[s].iter().any(|r| !r.is_finite()) {
                return bad(format!("non-finite reward at state {s}"));
            }
        }
        if self.state_menus.len() != ns {
            return bad("one state menu per state".into());
        }
        for (s, menu) in self.state_menus.iter().enumerate() {
            if !menu.contains(&s) || menu.iter().any(|&x| x >= ns) {
                return bad(format!(
                    "state menu of {s} must contain {s} and valid states only"
                ));
            }
        }
        if self.action_menus.len() != self.n_agents() {
            return bad("one action menu per agent".into());
        }
        for (i, menu) in self.action_menus.iter().enumerate() {
            if !menu.contains(&None) || menu.iter().flatten().any(|&a| a >= self.action_counts[i]) {
                return bad(format!(
                    "action menu of agent {i} must contain the identity and valid actions only"
                ));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let g: Self = serde_json::from_str(s)?;
        g.validate()?;
        Ok(g)
    }

    /// Strips every menu down to the identity.
    pub fn without_adversary(&self) -> Self {
        Self {
            state_menus: (0..self.n_states).map(|s| vec![s]).collect(),
            action_menus: vec![vec![None]; self.n_agents()],
            ..self.clone()
        }
    }
}

/// `probs[i][s][a] = π_i(a | s)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscretePolicy {
    pub probs: Vec<Vec<Vec<f64>>>,
}

impl DiscretePolicy {
    pub fn uniform(game: &TabularGame) -> Self {
        Self {
            probs: game
                .action_counts
                .iter()
                .map(|&k| vec![vec![1.0 / k as f64; k]; game.n_states])
                .collect(),
        }
    }

    /// Agent `i` plays `choice[i][s]` with probability one.
    pub fn deterministic(game: &TabularGame, choice: &[Vec<usize>]) -> Self {
        Self {
            probs: choice
                .iter()
                .zip(&game.action_counts)
                .map(|(c, &k)| {
                    c.iter()
                        .map(|&a| (0..k).map(|b| if a == b { 1.0 } else { 0.0 }).collect())
                        .collect()
                })
                .collect(),
        }
    }

    pub fn validate(&self, game: &TabularGame) -> Result<()> {
        if self.probs.len() != game.n_agents() {
            return Err(Error::Shape(format!(
                "policy for {} agents, game has {}",
                self.probs.len(),
                game.n_agents()
            )));
        }
        for (i, table) in self.probs.iter().enumerate() {
            if table.len() != game.n_states {
                return Err(Error::Shape(format!(
                    "agent {i}: {} state rows",
                    table.len()
                )));
            }
            for row in table {
                let sum: f64 = row.iter().sum();
                if row.len() != game.action_counts[i]
                    || row.iter().any(|p| !(*p >= 0.0))
                    || (sum - 1.0).abs() > 1e-12
                {
                    return Err(Error::InvalidArgument(format!(
                        "agent {i}: row {row:?} is not a distribution"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Joint action distribution when the agents see `presented` and the
    /// adversary applies `overrides`.
    pub fn joint_distribution(
        &self,
        game: &TabularGame,
        presented: usize,
        overrides: &[Option<usize>],
    ) -> Vec<f64> {
        (0..game.n_joint())
            .map(|a| {
                game.decode(a)
                    .iter()
                    .enumerate()
                    .map(|(i, &ai)| match overrides.get(i).copied().flatten() {
                        Some(o) => (o == ai) as u8 as f64,
                        None => self.probs[i][presented][ai],
                    })
                    .product()
            })
            .collect()
    }
}

/// The adversary's choice at every true state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdversaryRule {
    /// `(presented state, overrides)` per true state.
    pub choices: Vec<(usize, Overrides)>,
}

impl AdversaryRule {
    pub fn identity(game: &TabularGame) -> Self {
        Self {
            choices: (0..game.n_states)
                .map(|s| (s, vec![None; game.n_agents()]))
                .collect(),
        }
    }
}

/// Markov chain `(P_π, r_π)` induced by the policy under the rule.
fn induced_chain(
    game: &TabularGame,
    policy: &DiscretePolicy,
    rule: &AdversaryRule,
) -> (DMatrix<f64>, DVector<f64>) {
    let ns = game.n_states;
    let mut p = DMatrix::zeros(ns, ns);
    let mut r = DVector::zeros(ns);
    for s in 0..ns {
        let (shown, ov) = &rule.choices[s];
        let dist = policy.joint_distribution(game, *shown, ov);
        for (a, pa) in dist.iter().enumerate() {
            if *pa == 0.0 {
                continue;
            }
            r[s] += pa * game.rewards[s][a];
            for (s2, pt) in game.transitions[s][a].iter().enumerate() {
                p[(s, s2)] += pa * pt;
            }
        }
    }
    (p, r)
}

fn check_inputs(game: &TabularGame, policy: &DiscretePolicy) -> Result<()> {
    game.validate()?;
    policy.validate(game)
}

/// Exact value of the policy under a fixed adversary rule (none: clean play),
/// by solving `(I − γP)V = r`.
pub fn policy_value(
    game: &TabularGame,
    policy: &DiscretePolicy,
    rule: Option<&AdversaryRule>,
) -> Result<Vec<f64>> {
    check_inputs(game, policy)?;
    let identity = AdversaryRule::identity(game);
    let (p, r) = induced_chain(game, policy, rule.unwrap_or(&identity));
    let a = DMatrix::identity(game.n_states, game.n_states) - p * game.gamma;
    let v = a
        .lu()
        .solve(&r)
        .ok_or_else(|| Error::InvalidArgument("singular evaluation system".into()))?;
    Ok(v.iter().copied().collect())
}

/// Same quantity by fixed-point iteration, stopping once successive sweeps
/// differ by less than `tol`.
pub fn policy_value_iterative(
    game: &TabularGame,
    policy: &DiscretePolicy,
    rule: Option<&AdversaryRule>,
    tol: f64,
) -> Result<Vec<f64>> {
    check_inputs(game, policy)?;
    let identity = AdversaryRule::identity(game);
    let (p, r) = induced_chain(game, policy, rule.unwrap_or(&identity));
    let mut v = DVector::zeros(game.n_states);
    for _ in 0..MAX_SWEEPS {
        let next = &r + &p * &v * game.gamma;
        let diff = (&next - &v).amax();
        v = next;
        if diff < tol {
            return Ok(v.iter().copied().collect());
        }
    }
    Err(Error::InvalidArgument(format!(
        "no convergence to {tol} within {MAX_SWEEPS} sweeps"
    )))
}

const MAX_SWEEPS: usize = 1_000_000;

/// `Q(s, a) = r(s, a) + γ·Σ P(s'|s, a)·V(s')`.
pub fn bellman_q(game: &TabularGame, v: &[f64]) -> Vec<Vec<f64>> {
    (0..game.n_states)
        .map(|s| {
            (0..game.n_joint())
                .map(|a| {
                    game.rewards[s][a]
                        + game.gamma
                            * game.transitions[s][a]
                                .iter()
                                .zip(v)
                                .map(|(p, x)| p * x)
                                .sum::<f64>()
                })
                .collect()
        })
        .collect()
}

/// The menu choice at `s` minimising the expectation of `q[s][·]`; the first
/// minimiser in menu order wins ties.
fn greedy_choice(
    game: &TabularGame,
    policy: &DiscretePolicy,
    s: usize,
    q: &[f64],
    tuples: &[Overrides],
) -> ((usize, Overrides), f64) {
    let mut best: Option<((usize, Overrides), f64)> = None;
    for &shown in &game.state_menus[s] {
        for ov in tuples {
            let dist = policy.joint_distribution(game, shown, ov);
            let value: f64 = dist.iter().zip(q).map(|(p, x)| p * x).sum();
            if best.as_ref().is_none_or(|(_, b)| value < *b) {
                best = Some(((shown, ov.clone()), value));
            }
        }
    }
    best.expect("menus contain the identity")
}

pub const VALUE_TOLERANCE: f64 = 1e-10;

/// Value under the optimal adversary (the fixed point of the min-over-menus
/// Bellman operator) and a rule attaining it.
pub fn optimal_adversary_value(
    game: &TabularGame,
    policy: &DiscretePolicy,
) -> Result<(Vec<f64>, AdversaryRule)> {
    check_inputs(game, policy)?;
    let tuples = game.override_tuples();
    let mut v = vec![0.0; game.n_states];
    // Stopping when sweeps differ by δ bounds the error by γδ/(1 − γ).
    let stop = VALUE_TOLERANCE * (1.0 - game.gamma) / game.gamma.max(1e-300) * 0.1;
    for _ in 0..MAX_SWEEPS {
        let q = bellman_q(game, &v);
        let next: Vec<f64> = (0..game.n_states)
            .map(|s| greedy_choice(game, policy, s, &q[s], &tuples).1)
            .collect();
        let diff = next
            .iter()
            .zip(&v)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        v = next;
        if diff <= stop || game.gamma == 0.0 {
            break;
        }
    }
    let q = bellman_q(game, &v);
    let rule = AdversaryRule {
        choices: (0..game.n_states)
            .map(|s| greedy_choice(game, policy, s, &q[s], &tuples).0)
            .collect(),
    };
    Ok((v, rule))
}

/// Value of the single-step heuristic adversary: at each true state it picks
/// the menu pair minimising the expected `q_table[s][·]`, and the resulting
/// chain is evaluated exactly.
pub fn heuristic_single_step_value(
    game: &TabularGame,
    policy: &DiscretePolicy,
    q_table: &[Vec<f64>],
) -> Result<(Vec<f64>, AdversaryRule)> {
    check_inputs(game, policy)?;
    if q_table.len() != game.n_states || q_table.iter().any(|r| r.len() != game.n_joint()) {
        return Err(Error::Shape(
            "Q table must be states × joint actions".into(),
        ));
    }
    let tuples = game.override_tuples();
    let rule = AdversaryRule {
        choices: (0..game.n_states)
            .map(|s| greedy_choice(game, policy, s, &q_table[s], &tuples).0)
            .collect(),
    };
    Ok((policy_value(game, policy, Some(&rule))?, rule))
}

fn sup_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Report {
    /// `max |Q − Q^Π|` against the clean-play Bellman-consistent Q.
    pub eps_q: f64,
    /// `‖V^h − V*‖∞`.
    pub gap: f64,
    /// `2·eps_q / (1 − γ)`.
    pub bound: f64,
    pub holds: bool,
    /// `max |Q − Q*|` against the optimal-adversary Bellman-consistent Q.
    pub eps_q_adversarial: f64,
    pub bound_adversarial: f64,
    pub holds_adversarial: bool,
}

pub fn theorem1_check(
    game: &TabularGame,
    policy: &DiscretePolicy,
    q_table: &[Vec<f64>],
) -> Result<Theorem1Report> {
    let v_clean = policy_value(game, policy, None)?;
    let q_clean = bellman_q(game, &v_clean);
    let (v_star, _) = optimal_adversary_value(game, policy)?;
    let q_star = bellman_q(game, &v_star);
    let (v_h, _) = heuristic_single_step_value(game, policy, q_table)?;
    let eps_q = sup_diff(q_table, &q_clean);
    let eps_q_adversarial = sup_diff(q_table, &q_star);
    let gap = v_h
        .iter()
        .zip(&v_star)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    let scale = 2.0 / (1.0 - game.gamma);
    Ok(Theorem1Report {
        eps_q,
        gap,
        bound: scale * eps_q,
        holds: gap <= scale * eps_q + 1e-9,
        eps_q_adversarial,
        bound_adversarial: scale * eps_q_adversarial,
        holds_adversarial: gap <= scale * eps_q_adversarial + 1e-9,
    })
}

fn kl(p: &[f64], q: &[f64]) -> Result<f64> {
    let mut sum = 0.0;
    for (a, (&pa, &qa)) in p.iter().zip(q).enumerate() {
        if pa == 0.0 {
            continue;
        }
        if qa == 0.0 {
            return Err(Error::KlUndefined(format!(
                "action {a} has mass {pa} against zero"
            )));
        }
        sum += pa * (pa / qa).ln();
    }
    Ok(sum.max(0.0))
}

/// `Σ_i KL(π_i(·|s) ‖ π_i(·|ŝ))`.
pub fn maad(policy: &DiscretePolicy, s: usize, s_hat: usize) -> Result<f64> {
    policy
        .probs
        .iter()
        .map(|table| kl(&table[s], &table[s_hat]))
        .sum()
}

/// MAAD between deterministic joint actions smoothed into Gaussians of a
/// shared `sigma`: `Σ_i ‖μ_i(s) − μ_i(ŝ)‖² / (2σ²)`.
pub fn maad_gaussian(actions: &Tensor, actions_hat: &Tensor, sigma: f64) -> Result<f64> {
    if !actions.same_shape(actions_hat) {
        return Err(Error::Shape(format!(
            "{:?} vs {:?}",
            actions.shape(),
            actions_hat.shape()
        )));
    }
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "sigma {sigma} must be positive"
        )));
    }
    let sq: f64 = actions
        .data()
        .iter()
        .zip(actions_hat.data())
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    Ok(sq / (2.0 * sigma * sigma))
}

pub const GAUSSIAN_SMOOTHING_SIGMA: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Theorem2State {
    pub state: usize,
    /// `|V^Π(s) − V^Π_adv(s)|`.
    pub lhs: f64,
    /// `max_ŝ MAAD(s, ŝ)` over the menu of `s`.
    pub max_maad: f64,
    /// `C·√max_maad` using this state's menu only.
    pub rhs_local: f64,
    pub holds_local: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Theorem2Report {
    /// `√(2n)·R_max / (1 − γ)²`.
    pub constant: f64,
    pub lhs: f64,
    /// `C·√(max over all states and menus of MAAD)`.
    pub rhs: f64,
    pub holds: bool,
    pub states: Vec<Theorem2State>,
}

/// The adversary presents, at every state, the menu entry with the largest
/// MAAD; the value loss it causes is compared with the MAAD bound.
pub fn theorem2_check(game: &TabularGame, policy: &DiscretePolicy) -> Result<Theorem2Report> {
    check_inputs(game, policy)?;
    let n = game.n_agents();
    let mut choices = Vec::with_capacity(game.n_states);
    let mut max_maad = Vec::with_capacity(game.n_states);
    for s in 0..game.n_states {
        let mut best = (s, 0.0);
        for &shown in &game.state_menus[s] {
            let d = maad(policy, s, shown)?;
            if d > best.1 {
                best = (shown, d);
            }
        }
        choices.push((best.0, vec![None; n]));
        max_maad.push(best.1);
    }
    let rule = AdversaryRule { choices };
    let v = policy_value(game, policy, None)?;
    let v_adv = policy_value(game, policy, Some(&rule))?;
    let constant = (2.0 * n as f64).sqrt() * game.reward_bound() / (1.0 - game.gamma).powi(2);
    let states: Vec<Theorem2State> = (0..game.n_states)
        .map(|s| {
            let lhs = (v[s] - v_adv[s]).abs();
            let rhs_local = constant * max_maad[s].sqrt();
            Theorem2State {
                state: s,
                lhs,
                max_maad: max_maad[s],
                rhs_local,
                holds_local: lhs <= rhs_local + 1e-9,
            }
        })
        .collect();
    let lhs = states.iter().fold(0.0f64, |m, st| m.max(st.lhs));
    let rhs = constant * max_maad.iter().fold(0.0f64, |m, d| m.max(*d)).sqrt();
    Ok(Theorem2Report {
        constant,
        lhs,
        rhs,
        holds: lhs <= rhs + 1e-9,
        states,
    })
}

/// Shape of randomly generated games.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomGameSpec {
    pub n_states: usize,
    pub action_counts: Vec<usize>,
    pub gamma: f64,
    /// Extra presented states per menu (beyond the identity).
    pub state_menu_extra: usize,
    /// Extra overrides per agent menu (beyond the identity).
    pub action_menu_extra: usize,
}

pub fn random_game(spec: &RandomGameSpec, rng: &mut impl Rng) -> Result<TabularGame> {
    let ns = spec.n_states;
    let nj: usize = spec.action_counts.iter().product();
    let transitions = (0..ns)
        .map(|_| {
            (0..nj)
                .map(|_| {
                    let w: Vec<f64> = (0..ns).map(|_| rng.random::<f64>().powi(2)).collect();
                    let total: f64 = w.iter().sum();
                    let mut row: Vec<f64> = w.iter().map(|x| x / total).collect();
                    // Fold rounding into the largest entry so rows sum to one.
                    let err = 1.0 - row.iter().sum::<f64>();
                    let k = (0..ns)
                        .max_by(|&a, &b| row[a].total_cmp(&row[b]))
                        .expect("states");
                    row[k] += err;
                    row
                })
                .collect()
        })
        .collect();
    let rewards = (0..ns)
        .map(|_| (0..nj).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let state_menus = (0..ns)
        .map(|s| {
            let mut menu = vec![s];
            let others: Vec<usize> = (0..ns).filter(|&x| x != s).collect();
            let k = spec.state_menu_extra.min(others.len());
            menu.extend(
                rand::seq::index::sample(rng, others.len(), k)
                    .into_iter()
                    .map(|j| others[j]),
            );
            menu
        })
        .collect();
    let action_menus = spec
        .action_counts
        .iter()
        .map(|&k| {
            let mut menu = vec![None];
            let extra = spec.action_menu_extra.min(k);
            menu.extend(
                rand::seq::index::sample(rng, k, extra)
                    .into_iter()
                    .map(Some),
            );
            menu
        })
        .collect();
    let game = TabularGame {
        n_states: ns,
        action_counts: spec.action_counts.clone(),
        gamma: spec.gamma,
        transitions,
        rewards,
        state_menus,
        action_menus,
    };
    game.validate()?;
    Ok(game)
}

/// Softmax policy over random logits scaled by `sharpness`; full support.
pub fn random_policy(game: &TabularGame, sharpness: f64, rng: &mut impl Rng) -> DiscretePolicy {
    DiscretePolicy {
        probs: game
            .action_counts
            .iter()
            .map(|&k| {
                (0..game.n_states)
                    .map(|_| {
                        let logits: Vec<f64> = (0..k)
                            .map(|_| sharpness * rng.random_range(-1.0..1.0))
                            .collect();
                        let mx = logits.iter().fold(f64::NEG_INFINITY, |m, x| m.max(*x));
                        let e: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
                        let z: f64 = e.iter().sum();
                        let mut row: Vec<f64> = e.iter().map(|x| x / z).collect();
                        let err = 1.0 - row.iter().sum::<f64>();
                        row[0] += err;
                        row
                    })
                    .collect()
            })
            .collect(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Instance {
    pub seed: u64,
    /// Amplitude of the uniform noise added to `Q^Π`.
    pub noise: f64,
    pub report: Theorem1Report,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Counterexample {
    pub seed: u64,
    pub game: TabularGame,
    pub policy: DiscretePolicy,
    pub q_table: Vec<Vec<f64>>,
    pub report: Theorem1Report,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Suite {
    pub instances: Vec<Theorem1Instance>,
    pub pass_fraction: f64,
    pub pass_fraction_adversarial: f64,
    pub counterexamples: Vec<Counterexample>,
}

/// Game, policy and Q table of suite instance `k` for base seed `seed`.
pub fn theorem1_instance(
    seed: u64,
    k: u64,
) -> Result<(u64, TabularGame, DiscretePolicy, Vec<Vec<f64>>, f64)> {
    let inst_seed = derive_seed(seed, 101, k);
    let mut rng = ChaCha8Rng::seed_from_u64(inst_seed);
    let n_agents = rng.random_range(1..=2);
    let spec = RandomGameSpec {
        n_states: rng.random_range(2..=MAX_STATES),
        action_counts: (0..n_agents)
            .map(|_| rng.random_range(2..=MAX_ACTIONS))
            .collect(),
        gamma: rng.random_range(0.3..0.95),
        state_menu_extra: rng.random_range(0..=2),
        action_menu_extra: rng.random_range(0..=1),
    };
    let game = random_game(&spec, &mut rng)?;
    let sharp = rng.random_range(0.0..4.0);
    let policy = random_policy(&game, sharp, &mut rng);
    let noise = rng.random_range(0.0..0.3);
    let v = policy_value(&game, &policy, None)?;
    let q = bellman_q(&game, &v)
        .into_iter()
        .map(|row| {
            row.into_iter()
                .map(|x| x + noise * rng.random_range(-1.0..1.0))
                .collect()
        })
        .collect();
    Ok((inst_seed, game, policy, q, noise))
}

pub fn theorem1_suite(instances: usize, seed: u64) -> Result<Theorem1Suite> {
    let mut out = Vec::with_capacity(instances);
    let mut counterexamples = Vec::new();
    for k in 0..instances as u64 {
        let (inst_seed, game, policy, q, noise) = theorem1_instance(seed, k)?;
        let report = theorem1_check(&game, &policy, &q)?;
        if !report.holds {
            counterexamples.push(Counterexample {
                seed: inst_seed,
                game,
                policy,
                q_table: q,
                report: report.clone(),
            });
        }
        out.push(Theorem1Instance {
            seed: inst_seed,
            noise,
            report,
        });
    }
    let frac = |f: fn(&Theorem1Report) -> bool| {
        out.iter().filter(|i| f(&i.report)).count() as f64 / out.len().max(1) as f64
    };
    Ok(Theorem1Suite {
        pass_fraction: frac(|r| r.holds),
        pass_fraction_adversarial: frac(|r| r.holds_adversarial),
        instances: out,
        counterexamples,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Theorem2Instance {
    pub seed: u64,
    pub report: Theorem2Report,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Theorem2Suite {
    pub instances: Vec<Theorem2Instance>,
    pub pass_fraction: f64,
    /// Fraction of instances where every per-state local bound held too.
    pub local_pass_fraction: f64,
}

pub fn theorem2_instance(seed: u64, k: u64) -> Result<(u64, TabularGame, DiscretePolicy)> {
    let inst_seed = derive_seed(seed, 102, k);
    let mut rng = ChaCha8Rng::seed_from_u64(inst_seed);
    let spec = RandomGameSpec {
        n_states: 5,
        action_counts: vec![2, 2],
        gamma: rng.random_range(0.3..0.95),
        state_menu_extra: rng.random_range(1..=3),
        action_menu_extra: 0,
    };
    let game = random_game(&spec, &mut rng)?;
    let sharp = rng.random_range(0.1..4.0);
    let policy = random_policy(&game, sharp, &mut rng);
    Ok((inst_seed, game, policy))
}

pub fn theorem2_suite(instances: usize, seed: u64) -> Result<Theorem2Suite> {
    let mut out = Vec::with_capacity(instances);
    for k in 0..instances as u64 {
        let (inst_seed, game, policy) = theorem2_instance(seed, k)?;
        out.push(Theorem2Instance {
            seed: inst_seed,
            report: theorem2_check(&game, &policy)?,
        });
    }
    let n = out.len().max(1) as f64;
    Ok(Theorem2Suite {
        pass_fraction: out.iter().filter(|i| i.report.holds).count() as f64 / n,
        local_pass_fraction: out
            .iter()
            .filter(|i| i.report.states.iter().all(|s| s.holds_local))
            .count() as f64
            / n,
        instances: out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_derivative() {
        let g = finite_diff_gradient(|x| x[0] * x[0], &[3.0], 1e-5).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-6);
        let z = finite_diff_gradient(|_| 4.0, &[1.0, 2.0], 1e-3).unwrap();
        assert_eq!(z, vec![0.0, 0.0]);
        assert!(finite_diff_gradient(|_| 0.0, &[1.0], 0.0).is_err());
    }

    #[test]
    fn joint_index_round_trip() {
        let g = TabularGame {
            n_states: 1,
            action_counts: vec![2, 3],
            gamma: 0.5,
            transitions: vec![vec![vec![1.0]; 6]],
            rewards: vec![vec![0.0; 6]],
            state_menus: vec![vec![0]],
            action_menus: vec![vec![None], vec![None]],
        };
        for a in 0..6 {
            assert_eq!(g.encode(&g.decode(a)), a);
        }
        assert_eq!(g.decode(4), vec![1, 1]);
    }

    #[test]
    fn kl_undefined_on_support_mismatch() {
        let p = DiscretePolicy {
            probs: vec![vec![vec![0.5, 0.5], vec![1.0, 0.0]]],
        };
        assert!(matches!(maad(&p, 0, 1), Err(Error::KlUndefined(_))));
        assert!(maad(&p, 1, 0).unwrap() > 0.0);
    }
}
