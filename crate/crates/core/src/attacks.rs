//! Observation and action perturbation attacks on a trained team.
//!
//! All attacks act on a single timestep: given the clean joint observation
//! `s` (`[n, obs_dim]`) they pick a victim set, perturb victim observation
//! rows within an L∞ ball of radius `eps_s`, then perturb the victims'
//! resulting actions within a ball of radius `eps_a`.

use std::io::Write;
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Mlp, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::madrl::{act_greedy, TeamCritic};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationBudget {
    pub eps_s: f64,
    pub eps_a: f64,
}

impl PerturbationBudget {
    pub fn new(eps_s: f64, eps_a: f64) -> Result<Self> {
        let b = Self { eps_s, eps_a };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("eps_s", self.eps_s), ("eps_a", self.eps_a)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "{name} = {v} must be finite and >= 0"
                )));
            }
        }
        Ok(())
    }
}

impl Default for PerturbationBudget {
    fn default() -> Self {
        Self {
            eps_s: 0.02,
            eps_a: 0.05,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackMethod {
    Saja,
    PgdState,
    PgdAction,
    RandomState,
    RandomAction,
    RandomSa,
    None,
}

impl AttackMethod {
    pub const ALL: [AttackMethod; 7] = [
        AttackMethod::None,
        AttackMethod::Saja,
        AttackMethod::PgdState,
        AttackMethod::PgdAction,
        AttackMethod::RandomState,
        AttackMethod::RandomAction,
        AttackMethod::RandomSa,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AttackMethod::Saja => "saja",
            AttackMethod::PgdState => "pgd_state",
            AttackMethod::PgdAction => "pgd_action",
            AttackMethod::RandomState => "random_state",
            AttackMethod::RandomAction => "random_action",
            AttackMethod::RandomSa => "random_sa",
            AttackMethod::None => "none",
        }
    }
}

impl std::str::FromStr for AttackMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AttackMethod::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown attack method `{s}`")))
    }
}

impl std::fmt::Display for AttackMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    pub method: AttackMethod,
    pub k_s: usize,
    pub k_a: usize,
    /// Explicit step sizes; `None` means `2.5·eps/K`.
    pub alpha_s: Option<f64>,
    pub alpha_a: Option<f64>,
    pub alpha1: f64,
    pub beta1: f64,
    pub alpha2: f64,
    pub beta2: f64,
    /// Number of victims per timestep.
    pub m: usize,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            method: AttackMethod::Saja,
            k_s: 20,
            k_a: 20,
            alpha_s: None,
            alpha_a: None,
            alpha1: 0.01,
            beta1: 0.99,
            alpha2: 0.01,
            beta2: 0.99,
            m: 1,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self, n_agents: usize) -> Result<()> {
        if self.m > n_agents {
            return Err(Error::InvalidArgument(format!(
                "{} victims among {n_agents} agents",
                self.m
            )));
        }
        if !(self.alpha1 + self.beta1 > 0.0 && self.alpha2 + self.beta2 > 0.0) {
            return Err(Error::InvalidArgument(
                "loss weights must have a positive sum".into(),
            ));
        }
        Ok(())
    }

    pub fn step_s(&self, eps_s: f64) -> f64 {
        self.alpha_s.unwrap_or(if self.k_s == 0 {
            0.0
        } else {
            2.5 * eps_s / self.k_s as f64
        })
    }

    pub fn step_a(&self, eps_a: f64) -> f64 {
        self.alpha_a.unwrap_or(if self.k_a == 0 {
            0.0
        } else {
            2.5 * eps_a / self.k_a as f64
        })
    }

    /// The same configuration with the given method.
    pub fn with_method(&self, method: AttackMethod) -> Self {
        Self {
            method,
            ..self.clone()
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AttackDiagnostics {
    /// Team value of the clean action at the true state.
    pub q_clean: f64,
    /// Team value of the executed action at the true state.
    pub q_attacked: f64,
    /// Loss before each state-phase step, then the final value.
    pub state_losses: Vec<f64>,
    pub action_losses: Vec<f64>,
    /// `‖a** − a⁰‖₂` over victim rows.
    pub l2_action_diff: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttackOutcome {
    pub perturbed_observations: Tensor,
    /// `a⁰ = μ(s)`.
    pub clean_action: Tensor,
    /// `μ(s*)`, the centre of the action ball.
    pub policy_action: Tensor,
    /// Executed joint action `a**`.
    pub final_action: Tensor,
    /// Sorted victim indices.
    pub victims: Vec<usize>,
    pub diagnostics: AttackDiagnostics,
}

/// The trained team an attack targets.
#[derive(Clone, Copy)]
pub struct Victim<'a> {
    pub actors: &'a [Mlp],
    pub critic: &'a dyn TeamCritic,
}

pub fn select_victims<R: Rng + ?Sized>(n: usize, m: usize, rng: &mut R) -> Result<Vec<usize>> {
    if m > n {
        return Err(Error::InvalidArgument(format!(
            "{m} victims among {n} agents"
        )));
    }
    let mut v = index::sample(rng, n, m).into_vec();
    v.sort_unstable();
    Ok(v)
}

/// `center + clamp(x − center, −eps, eps)`, nudged by ulps where rounding
/// would otherwise leave `|result − center|` above `eps`.
fn project_scalar(x: f64, center: f64, eps: f64) -> f64 {
    let d = (x - center).clamp(-eps, eps);
    if d == 0.0 {
        return center;
    }
    let mut y = center + d;
    while (y - center).abs() > eps {
        y = if y > center {
            y.next_down()
        } else {
            y.next_up()
        };
    }
    y
}

pub fn project_linf(candidate: &Tensor, center: &Tensor, eps: f64) -> Result<Tensor> {
    if !candidate.same_shape(center) {
        return Err(Error::Shape(format!(
            "{:?} vs {:?}",
            candidate.shape(),
            center.shape()
        )));
    }
    if !(eps.is_finite() && eps >= 0.0) || !candidate.all_finite() {
        return Err(Error::InvalidArgument(format!(
            "cannot project with eps {eps}"
        )));
    }
    let data = candidate
        .data()
        .iter()
        .zip(center.data())
        .map(|(&x, &c)| project_scalar(x, c, eps))
        .collect();
    Tensor::new(center.shape().to_vec(), data)
}

/// `−α·Q + β·dist`.
pub fn hlf(q: f64, dist: f64, alpha: f64, beta: f64) -> f64 {
    -alpha * q + beta * dist
}

pub fn hlf_state(
    q: f64,
    a_prime: &Tensor,
    a_zero: &Tensor,
    alpha1: f64,
    beta1: f64,
) -> Result<f64> {
    Ok(hlf(q, l2_distance(a_prime, a_zero)?, alpha1, beta1))
}

pub fn hlf_action(q: f64, a_adv: &Tensor, a_zero: &Tensor, alpha2: f64, beta2: f64) -> Result<f64> {
    Ok(hlf(q, l2_distance(a_adv, a_zero)?, alpha2, beta2))
}

fn l2_distance(a: &Tensor, b: &Tensor) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::Shape(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt())
}

fn victim_rows(t: &Tensor, victims: &[usize]) -> Vec<f64> {
    victims
        .iter()
        .flat_map(|&i| t.row(i).iter().copied())
        .collect()
}

fn row_leaf(tape: &mut Tape, t: &Tensor, i: usize) -> Var {
    tape.leaf(Tensor::matrix(1, t.cols(), t.row(i).to_vec()).expect("non-empty row"))
}

/// Records `−α·Q(obs, act) + β·‖act_V − a⁰_V‖₂` and returns it.
fn record_hlf(
    tape: &mut Tape,
    critic: &dyn TeamCritic,
    obs: &[Var],
    acts: &[Var],
    victims: &[usize],
    a_zero: &[f64],
    alpha: f64,
    beta: f64,
) -> Result<Var> {
    let q = critic.record_team_q(tape, obs, acts)?;
    let parts: Vec<Var> = victims.iter().map(|&i| acts[i]).collect();
    let joint = tape.concat(&parts)?;
    let anchor = tape.leaf(Tensor::matrix(1, a_zero.len(), a_zero.to_vec())?);
    let diff = tape.sub(joint, anchor)?;
    let dist = tape.row_norm(diff);
    let neg_q = tape.scale(q, -alpha);
    let pen = tape.scale(dist, beta);
    tape.add(neg_q, pen)
}

fn sign_step(x: &mut f64, g: f64, step: f64) {
    if g > 0.0 {
        *x += step;
    } else if g < 0.0 {
        *x -= step;
    }
}

/// Sign-gradient ascent of the state-phase loss over victim observation
/// rows. Returns `s*` and the loss trajectory.
pub fn saja_state_phase(
    s: &Tensor,
    victim: Victim<'_>,
    victims: &[usize],
    budget: &PerturbationBudget,
    cfg: &AttackConfig,
) -> Result<(Tensor, Vec<f64>)> {
    let mut s_adv = s.clone();
    let mut losses = Vec::new();
    if victims.is_empty() || cfg.k_s == 0 || budget.eps_s == 0.0 {
        return Ok((s_adv, losses));
    }
    let a_zero = victim_rows(&act_greedy(victim.actors, s)?, victims);
    let step = cfg.step_s(budget.eps_s);
    let n = victim.actors.len();
    for k in 0..=cfg.k_s {
        let mut tape = Tape::new();
        let obs: Vec<Var> = (0..n).map(|i| row_leaf(&mut tape, &s_adv, i)).collect();
        let acts = obs
            .iter()
            .zip(victim.actors)
            .map(|(&o, a)| Ok(a.record(&mut tape, o)?.0))
            .collect::<Result<Vec<_>>>()?;
        let loss = record_hlf(
            &mut tape,
            victim.critic,
            &obs,
            &acts,
            victims,
            &a_zero,
            cfg.alpha1,
            cfg.beta1,
        )?;
        losses.push(tape.value(loss).data()[0]);
        if k == cfg.k_s {
            break;
        }
        let grads = tape.backward(loss, &Tensor::scalar(1.0))?;
        for &i in victims {
            let g = grads.get(obs[i]);
            if !g.all_finite() {
                return Err(Error::NonFinite(format!(
                    "state-phase gradient for agent {i} at step {k}"
                )));
            }
            let row = s_adv.row_mut(i);
            for (x, gx) in row.iter_mut().zip(g.data()) {
                sign_step(x, *gx, step);
            }
            for (x, c) in row.iter_mut().zip(s.row(i)) {
                *x = project_scalar(*x, *c, budget.eps_s);
            }
        }
    }
    Ok((s_adv, losses))
}

/// Sign-gradient ascent of the action-phase loss over victim action rows,
/// anchored at `a_zero = μ(s)` and constrained around `μ(s*)`. Victim rows of
/// the result are clamped to `[−1, 1]`.
pub fn saja_action_phase(
    s_star: &Tensor,
    a_zero: &Tensor,
    victim: Victim<'_>,
    victims: &[usize],
    budget: &PerturbationBudget,
    cfg: &AttackConfig,
) -> Result<(Tensor, Vec<f64>)> {
    let center = act_greedy(victim.actors, s_star)?;
    let mut a_adv = center.clone();
    let mut losses = Vec::new();
    if victims.is_empty() || cfg.k_a == 0 || budget.eps_a == 0.0 {
        return Ok((a_adv, losses));
    }
    let anchor = victim_rows(a_zero, victims);
    let step = cfg.step_a(budget.eps_a);
    let n = victim.actors.len();
    for k in 0..=cfg.k_a {
        let mut tape = Tape::new();
        let obs: Vec<Var> = (0..n).map(|i| row_leaf(&mut tape, s_star, i)).collect();
        let acts: Vec<Var> = (0..n).map(|i| row_leaf(&mut tape, &a_adv, i)).collect();
        let loss = record_hlf(
            &mut tape,
            victim.critic,
            &obs,
            &acts,
            victims,
            &anchor,
            cfg.alpha2,
            cfg.beta2,
        )?;
        losses.push(tape.value(loss).data()[0]);
        if k == cfg.k_a {
            break;
        }
        let grads = tape.backward(loss, &Tensor::scalar(1.0))?;
        for &i in victims {
            let g = grads.get(acts[i]);
            if !g.all_finite() {
                return Err(Error::NonFinite(format!(
                    "action-phase gradient for agent {i} at step {k}"
                )));
            }
            let row = a_adv.row_mut(i);
            for (x, gx) in row.iter_mut().zip(g.data()) {
                sign_step(x, *gx, step);
            }
            for (x, c) in row.iter_mut().zip(center.row(i)) {
                *x = project_scalar(*x, *c, budget.eps_a);
            }
        }
    }
    for &i in victims {
        for x in a_adv.row_mut(i) {
            *x = x.clamp(-1.0, 1.0);
        }
    }
    Ok((a_adv, losses))
}

fn finish(
    s: &Tensor,
    s_star: Tensor,
    a_zero: Tensor,
    policy_action: Tensor,
    final_action: Tensor,
    victims: Vec<usize>,
    victim: Victim<'_>,
    state_losses: Vec<f64>,
    action_losses: Vec<f64>,
) -> Result<AttackOutcome> {
    let q_clean = victim.critic.team_q(s, &a_zero)?;
    let q_attacked = victim.critic.team_q(s, &final_action)?;
    let l2_action_diff = victim_rows(&final_action, &victims)
        .iter()
        .zip(victim_rows(&a_zero, &victims))
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok(AttackOutcome {
        perturbed_observations: s_star,
        clean_action: a_zero,
        policy_action,
        final_action,
        victims,
        diagnostics: AttackDiagnostics {
            q_clean,
            q_attacked,
            state_losses,
            action_losses,
            l2_action_diff,
        },
    })
}

/// Victim selection, state phase, action phase.
pub fn saja<R: Rng + ?Sized>(
    s: &Tensor,
    victim: Victim<'_>,
    budget: &PerturbationBudget,
    cfg: &AttackConfig,
    rng: &mut R,
) -> Result<AttackOutcome> {
    budget.validate()?;
    cfg.validate(victim.actors.len())?;
    let victims = select_victims(victim.actors.len(), cfg.m, rng)?;
    let a_zero = act_greedy(victim.actors, s)?;
    let (s_star, state_losses) = saja_state_phase(s, victim, &victims, budget, cfg)?;
    let policy_action = act_greedy(victim.actors, &s_star)?;
    let (final_action, action_losses) =
        saja_action_phase(&s_star, &a_zero, victim, &victims, budget, cfg)?;
    finish(
        s,
        s_star,
        a_zero,
        policy_action,
        final_action,
        victims,
        victim,
        state_losses,
        action_losses,
    )
}

/// Shifts every component of the victim rows by `±eps` with a fair random
/// sign. One sign is drawn for every component of every row so the stream
/// does not depend on the victim set or on `eps`.
pub fn random_sign_perturb<R: Rng + ?Sized>(
    target: &Tensor,
    eps: f64,
    victims: &[usize],
    rng: &mut R,
) -> Result<Tensor> {
    let signs: Vec<f64> = (0..target.len())
        .map(|_| {
            if rng.random_range(-1.0..1.0) < 0.0 {
                -1.0
            } else {
                1.0
            }
        })
        .collect();
    let mut out = target.clone();
    if eps == 0.0 {
        return Ok(out);
    }
    let cols = target.cols();
    for &i in victims {
        for (j, x) in out.row_mut(i).iter_mut().enumerate() {
            let c = *x;
            *x = project_scalar(c + eps * signs[i * cols + j], c, eps);
        }
    }
    Ok(out)
}

/// Random state signs, greedy actions at the perturbed state, then random
/// action signs clamped to `[−1, 1]`.
pub fn random_state_action<R: Rng + ?Sized>(
    s: &Tensor,
    victim: Victim<'_>,
    budget: &PerturbationBudget,
    m: usize,
    rng: &mut R,
) -> Result<AttackOutcome> {
    budget.validate()?;
    let victims = select_victims(victim.actors.len(), m, rng)?;
    let a_zero = act_greedy(victim.actors, s)?;
    let s_star = random_sign_perturb(s, budget.eps_s, &victims, rng)?;
    let policy_action = act_greedy(victim.actors, &s_star)?;
    let mut final_action = random_sign_perturb(&policy_action, budget.eps_a, &victims, rng)?;
    for &i in &victims {
        for x in final_action.row_mut(i) {
            *x = x.clamp(-1.0, 1.0);
        }
    }
    finish(
        s,
        s_star,
        a_zero,
        policy_action,
        final_action,
        victims,
        victim,
        Vec::new(),
        Vec::new(),
    )
}

/// Dispatches on `cfg.method`. The single-phase and single-noise methods are
/// the joint methods with the other budget or iteration count set to zero.
pub fn run_attack<R: Rng + ?Sized>(
    s: &Tensor,
    victim: Victim<'_>,
    budget: &PerturbationBudget,
    cfg: &AttackConfig,
    rng: &mut R,
) -> Result<AttackOutcome> {
    match cfg.method {
        AttackMethod::Saja => saja(s, victim, budget, cfg, rng),
        AttackMethod::PgdState => saja(
            s,
            victim,
            budget,
            &AttackConfig {
                k_a: 0,
                ..cfg.clone()
            },
            rng,
        ),
        AttackMethod::PgdAction => saja(
            s,
            victim,
            budget,
            &AttackConfig {
                k_s: 0,
                ..cfg.clone()
            },
            rng,
        ),
        AttackMethod::RandomSa => random_state_action(s, victim, budget, cfg.m, rng),
        AttackMethod::RandomState => random_state_action(
            s,
            victim,
            &PerturbationBudget {
                eps_a: 0.0,
                ..*budget
            },
            cfg.m,
            rng,
        ),
        AttackMethod::RandomAction => random_state_action(
            s,
            victim,
            &PerturbationBudget {
                eps_s: 0.0,
                ..*budget
            },
            cfg.m,
            rng,
        ),
        AttackMethod::None => {
            let a = act_greedy(victim.actors, s)?;
            finish(
                s,
                s.clone(),
                a.clone(),
                a.clone(),
                a,
                Vec::new(),
                victim,
                Vec::new(),
                Vec::new(),
            )
        }
    }
}

/// One line of the per-timestep diagnostic log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticRecord {
    pub t: usize,
    pub method: AttackMethod,
    pub victims: Vec<usize>,
    pub q_clean: f64,
    pub q_attacked: f64,
    pub l2_action_diff: f64,
}

impl DiagnosticRecord {
    pub fn new(t: usize, method: AttackMethod, o: &AttackOutcome) -> Self {
        Self {
            t,
            method,
            victims: o.victims.clone(),
            q_clean: o.diagnostics.q_clean,
            q_attacked: o.diagnostics.q_attacked,
            l2_action_diff: o.diagnostics.l2_action_diff,
        }
    }
}

pub fn write_diagnostics_csv(path: &Path, records: &[DiagnosticRecord]) -> Result<()> {
    let mut body = String::from("t,method,victim_set,q_clean,q_attacked,l2_action_diff\n");
    for r in records {
        let v: Vec<String> = r.victims.iter().map(usize::to_string).collect();
        body.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.t,
            r.method,
            v.join(";"),
            r.q_clean,
            r.q_attacked,
            r.l2_action_diff
        ));
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn projection_cases() {
        let c = Tensor::vector(vec![0.0, 1.0, -3.0]).unwrap();
        let x = Tensor::vector(vec![0.5, 1.001, -3.1]).unwrap();
        let p = project_linf(&x, &c, 0.02).unwrap();
        assert_eq!(p.data()[0], 0.02);
        assert_eq!(p.data()[1], 1.001);
        assert!((p.data()[2] + 3.02).abs() < 1e-15);
        assert!(project_linf(&x, &c, 0.0).unwrap().bit_eq(&c));
    }

    #[test]
    fn projection_bound_holds_after_rounding() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100_000 {
            let c: f64 = rng.random_range(-50.0..50.0);
            let eps: f64 = rng.random_range(0.0..0.1);
            let x = c + if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let y = project_scalar(x, c, eps);
            assert!((y - c).abs() <= eps);
        }
    }

    #[test]
    fn hlf_arithmetic() {
        let a = Tensor::vector(vec![2.0, 0.0]).unwrap();
        let z = Tensor::vector(vec![0.0, 0.0]).unwrap();
        assert_eq!(hlf_state(1.0, &a, &z, 0.5, 0.5).unwrap(), 0.5);
        assert_eq!(hlf_state(3.0, &z, &z, 0.01, 0.99).unwrap(), -0.03);
        assert_eq!(hlf_action(7.0, &z, &z, 0.0, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn victim_selection_edges() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(select_victims(4, 4, &mut rng).unwrap(), vec![0, 1, 2, 3]);
        assert!(select_victims(4, 0, &mut rng).unwrap().is_empty());
        assert!(select_victims(2, 3, &mut rng).is_err());
    }

    #[test]
    fn method_names_round_trip() {
        for m in AttackMethod::ALL {
            assert_eq!(m.as_str().parse::<AttackMethod>().unwrap(), m);
        }
    }
}
