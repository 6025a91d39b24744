//! Continuous predator-prey particle world.
//!
//! Learned predators chase scripted preys around a square arena sprinkled
//! with static landmarks. Entities are stored in the order predators, preys,
//! landmarks. Each predator observes
//!
//! ```text
//! [self velocity (2), self position (2),
//!  landmark positions relative to self (2 per landmark),
//!  other predators then preys relative to self (2 each),
//!  prey velocities (2 per prey)]
//! ```
//!
//! which gives 16 values in `pp_3a` and 30 in `pp_6a`. The team reward at
//! each step is `Σ_{predator, prey} (−0.1·distance + 10·[collision])`,
//! shared by all predators.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const ACTION_DIM: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScenarioName {
    #[serde(rename = "pp_3a")]
    Pp3a,
    #[serde(rename = "pp_6a")]
    Pp6a,
}

impl ScenarioName {
    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioName::Pp3a => "pp_3a",
            ScenarioName::Pp6a => "pp_6a",
        }
    }
}

impl std::str::FromStr for ScenarioName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pp_3a" => Ok(ScenarioName::Pp3a),
            "pp_6a" => Ok(ScenarioName::Pp6a),
            other => Err(Error::UnknownScenario(other.to_string())),
        }
    }
}

impl std::fmt::Display for ScenarioName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Physical parameters of one entity role.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoleParams {
    pub radius: f64,
    pub accel: f64,
    pub max_speed: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: ScenarioName,
    pub n_predators: usize,
    pub n_preys: usize,
    pub n_landmarks: usize,
    pub episode_length: usize,
    pub world_half_width: f64,
    pub dt: f64,
    /// Velocity retention per step.
    pub damping: f64,
    pub predator: RoleParams,
    pub prey: RoleParams,
    pub landmark_radius: f64,
    pub collision_reward: f64,
    pub distance_penalty: f64,
    pub prey_noise_std: f64,
    /// Width of the wall-repulsion band as a fraction of the half-width.
    pub wall_margin: f64,
}

/// Canonical scenario definitions.
pub fn make_scenario(name: &str) -> Result<ScenarioConfig> {
    let name: ScenarioName = name.parse()?;
    Ok(ScenarioConfig::new(name))
}

impl ScenarioConfig {
    pub fn new(name: ScenarioName) -> Self {
        let (n_predators, n_preys, n_landmarks) = match name {
            ScenarioName::Pp3a => (3, 1, 2),
            ScenarioName::Pp6a => (6, 2, 4),
        };
        Self {
            name,
            n_predators,
            n_preys,
            n_landmarks,
            episode_length: 25,
            world_half_width: 1.0,
            dt: 0.1,
            damping: 0.75,
            predator: RoleParams {
                radius: 0.075,
                accel: 3.0,
                max_speed: 1.0,
            },
            prey: RoleParams {
                radius: 0.05,
                accel: 2.0,
                max_speed: 0.5,
            },
            landmark_radius: 0.1,
            collision_reward: 10.0,
            distance_penalty: 0.1,
            prey_noise_std: 0.05,
            wall_margin: 0.1,
        }
    }

    pub fn n_agents(&self) -> usize {
        self.n_predators
    }

    pub fn n_entities(&self) -> usize {
        self.n_predators + self.n_preys + self.n_landmarks
    }

    pub fn obs_dim(&self) -> usize {
        2 + 2 + 2 * self.n_landmarks + 2 * (self.n_predators - 1 + self.n_preys) + 2 * self.n_preys
    }

    pub fn act_dim(&self) -> usize {
        ACTION_DIM
    }

    /// Global state is the concatenation of all predator observations.
    pub fn state_dim(&self) -> usize {
        self.n_predators * self.obs_dim()
    }

    pub fn world_diagonal(&self) -> f64 {
        2.0 * self.world_half_width * std::f64::consts::SQRT_2
    }

    /// Bound on the absolute per-step team reward.
    pub fn reward_bound(&self) -> f64 {
        let pairs = (self.n_predators * self.n_preys) as f64;
        self.collision_reward * pairs + self.distance_penalty * pairs * self.world_diagonal()
    }

    fn prey_index(&self, k: usize) -> usize {
        self.n_predators + k
    }

    fn landmark_index(&self, k: usize) -> usize {
        self.n_predators + self.n_preys + k
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorldState {
    /// `[entities, 2]`
    pub positions: Tensor,
    /// `[entities, 2]`
    pub velocities: Tensor,
    pub timestep: usize,
}

impl WorldState {
    pub fn position(&self, e: usize) -> [f64; 2] {
        let r = self.positions.row(e);
        [r[0], r[1]]
    }

    pub fn velocity(&self, e: usize) -> [f64; 2] {
        let r = self.velocities.row(e);
        [r[0], r[1]]
    }

    pub fn is_done(&self, cfg: &ScenarioConfig) -> bool {
        self.timestep >= cfg.episode_length
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    /// `[n_predators, obs_dim]`
    pub next_observations: Tensor,
    pub team_reward: f64,
    pub done: bool,
    pub collision_count: usize,
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Fresh world with entities uniformly placed and at rest.
pub fn reset(cfg: &ScenarioConfig, seed: u64) -> (WorldState, Tensor) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let state = place(cfg, &mut rng);
    let obs = observations(&state, cfg);
    (state, obs)
}

fn place(cfg: &ScenarioConfig, rng: &mut ChaCha8Rng) -> WorldState {
    let hw = cfg.world_half_width;
    let mut pos = Vec::with_capacity(cfg.n_entities() * 2);
    for e in 0..cfg.n_entities() {
        let bound = if e >= cfg.landmark_index(0) {
            0.9 * hw
        } else {
            hw
        };
        pos.push(rng.random_range(-bound..=bound));
        pos.push(rng.random_range(-bound..=bound));
    }
    WorldState {
        positions: Tensor::from_parts(vec![cfg.n_entities(), 2], pos),
        velocities: Tensor::zeros(&[cfg.n_entities(), 2]),
        timestep: 0,
    }
}

/// Joint predator observation, `[n_predators, obs_dim]`.
pub fn observations(state: &WorldState, cfg: &ScenarioConfig) -> Tensor {
    let d = cfg.obs_dim();
    let mut data = Vec::with_capacity(cfg.n_predators * d);
    for i in 0..cfg.n_predators {
        let p = state.position(i);
        data.extend_from_slice(&state.velocity(i));
        data.extend_from_slice(&p);
        for k in 0..cfg.n_landmarks {
            let l = state.position(cfg.landmark_index(k));
            data.extend_from_slice(&[l[0] - p[0], l[1] - p[1]]);
        }
        for j in (0..cfg.n_predators + cfg.n_preys).filter(|&j| j != i) {
            let o = state.position(j);
            data.extend_from_slice(&[o[0] - p[0], o[1] - p[1]]);
        }
        for k in 0..cfg.n_preys {
            data.extend_from_slice(&state.velocity(cfg.prey_index(k)));
        }
    }
    Tensor::from_parts(vec![cfg.n_predators, d], data)
}

/// Predator/prey pairs currently overlapping.
pub fn collisions(state: &WorldState, cfg: &ScenarioConfig) -> usize {
    let reach = cfg.predator.radius + cfg.prey.radius;
    let mut count = 0;
    for i in 0..cfg.n_predators {
        for k in 0..cfg.n_preys {
            if dist(state.position(i), state.position(cfg.prey_index(k))) < reach {
                count += 1;
            }
        }
    }
    count
}

/// Shared team reward of the current configuration.
pub fn team_reward(state: &WorldState, cfg: &ScenarioConfig) -> f64 {
    let reach = cfg.predator.radius + cfg.prey.radius;
    let mut reward = 0.0;
    for i in 0..cfg.n_predators {
        for k in 0..cfg.n_preys {
            let d = dist(state.position(i), state.position(cfg.prey_index(k)));
            reward -= cfg.distance_penalty * d;
            if d < reach {
                reward += cfg.collision_reward;
            }
        }
    }
    reward
}

/// Flee-from-nearest-predator controller with wall repulsion.
///
/// Without noise the result is the unit vector away from the nearest
/// predator (plus any wall push), capped at unit norm.
pub fn scripted_prey_action<R: Rng + ?Sized>(
    state: &WorldState,
    prey_index: usize,
    cfg: &ScenarioConfig,
    rng: Option<&mut R>,
) -> Result<[f64; 2]> {
    if prey_index >= cfg.n_preys {
        return Err(Error::InvalidArgument(format!(
            "prey index {prey_index} out of range for {} preys",
            cfg.n_preys
        )));
    }
    let me = state.position(cfg.prey_index(prey_index));
    let nearest = (0..cfg.n_predators)
        .map(|i| state.position(i))
        .min_by(|a, b| dist(*a, me).total_cmp(&dist(*b, me)))
        .expect("at least one predator");
    let away = [me[0] - nearest[0], me[1] - nearest[1]];
    let n = (away[0] * away[0] + away[1] * away[1]).sqrt();
    let mut action = if n > 0.0 {
        [away[0] / n, away[1] / n]
    } else {
        [0.0, 0.0]
    };

    let hw = cfg.world_half_width;
    let margin = cfg.wall_margin * hw;
    for (c, a) in action.iter_mut().enumerate() {
        let to_low = me[c] + hw;
        let to_high = hw - me[c];
        if to_low < margin {
            *a += 1.0 - to_low / margin;
        }
        if to_high < margin {
            *a -= 1.0 - to_high / margin;
        }
    }

    if let Some(rng) = rng {
        if cfg.prey_noise_std > 0.0 {
            let normal = Normal::new(0.0, cfg.prey_noise_std)
                .map_err(|e| Error::InvalidArgument(e.to_string()))?;
            action[0] += normal.sample(rng);
            action[1] += normal.sample(rng);
        }
    }
    let norm = (action[0] * action[0] + action[1] * action[1]).sqrt();
    if norm > 1.0 {
        action = [action[0] / norm, action[1] / norm];
    }
    Ok(action)
}

/// Semi-implicit Euler update of one entity, then speed and bounds clamps.
fn integrate(
    state: &mut WorldState,
    e: usize,
    action: [f64; 2],
    role: RoleParams,
    cfg: &ScenarioConfig,
) {
    let hw = cfg.world_half_width;
    let v = state.velocities.row_mut(e);
    for c in 0..2 {
        v[c] = cfg.damping * v[c] + action[c] * role.accel * cfg.dt;
    }
    let speed = (v[0] * v[0] + v[1] * v[1]).sqrt();
    if speed > role.max_speed {
        let s = role.max_speed / speed;
        v[0] *= s;
        v[1] *= s;
    }
    let vel = [v[0], v[1]];
    let p = state.positions.row_mut(e);
    let mut clamped = [false; 2];
    for c in 0..2 {
        p[c] += vel[c] * cfg.dt;
        if p[c] > hw {
            p[c] = hw;
            clamped[c] = true;
        } else if p[c] < -hw {
            p[c] = -hw;
            clamped[c] = true;
        }
    }
    let v = state.velocities.row_mut(e);
    for c in 0..2 {
        if clamped[c] {
            v[c] = 0.0;
        }
    }
}

/// A world instance with its prey-noise stream.
#[derive(Clone, Debug)]
pub struct Env {
    cfg: ScenarioConfig,
    state: WorldState,
    rng: ChaCha8Rng,
}

impl Env {
    /// Resets the world from `seed`; placement and prey noise both derive
    /// from it.
    pub fn new(cfg: ScenarioConfig, seed: u64) -> (Self, Tensor) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let state = place(&cfg, &mut rng);
        let obs = observations(&state, &cfg);
        (Self { cfg, state, rng }, obs)
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn state(&self) -> &WorldState {
        &self.state
    }

    /// Replaces the world state (used by tests that hand-build positions).
    pub fn set_state(&mut self, state: WorldState) {
        self.state = state;
    }

    pub fn observations(&self) -> Tensor {
        observations(&self.state, &self.cfg)
    }

    /// Advances one step. Predator actions are `[n_predators, 2]`; components
    /// outside `[−1, 1]` are clamped.
    pub fn step(&mut self, predator_actions: &Tensor) -> Result<StepResult> {
        let cfg = &self.cfg;
        if self.state.is_done(cfg) {
            return Err(Error::EpisodeDone(self.state.timestep));
        }
        if predator_actions.rows() != cfg.n_predators || predator_actions.cols() != ACTION_DIM {
            return Err(Error::Shape(format!(
                "expected [{}, {ACTION_DIM}] predator actions, got {:?}",
                cfg.n_predators,
                predator_actions.shape()
            )));
        }
        let prey_actions = (0..cfg.n_preys)
            .map(|k| scripted_prey_action(&self.state, k, cfg, Some(&mut self.rng)))
            .collect::<Result<Vec<_>>>()?;
        for i in 0..cfg.n_predators {
            let a = predator_actions.row(i);
            let a = [a[0].clamp(-1.0, 1.0), a[1].clamp(-1.0, 1.0)];
            integrate(&mut self.state, i, a, cfg.predator, cfg);
        }
        for (k, a) in prey_actions.into_iter().enumerate() {
            integrate(&mut self.state, cfg.prey_index(k), a, cfg.prey, cfg);
        }
        self.state.timestep += 1;
        Ok(StepResult {
            next_observations: observations(&self.state, cfg),
            team_reward: team_reward(&self.state, cfg),
            done: self.state.is_done(cfg),
            collision_count: collisions(&self.state, cfg),
        })
    }
}

/// Free-function step against an explicit state; prey noise drawn from `rng`.
pub fn step<R: Rng + ?Sized>(
    state: &mut WorldState,
    predator_actions: &Tensor,
    cfg: &ScenarioConfig,
    rng: &mut R,
) -> Result<StepResult> {
    let mut env = Env {
        cfg: cfg.clone(),
        state: state.clone(),
        rng: ChaCha8Rng::seed_from_u64(rng.random()),
    };
    let out = env.step(predator_actions)?;
    *state = env.state;
    Ok(out)
}

/// Recorded episode for replay checks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub seed: u64,
    /// `actions[t][agent] = [x, y]`
    pub actions: Vec<Vec<[f64; 2]>>,
    pub rewards: Vec<f64>,
    pub collisions: Vec<usize>,
}

impl EpisodeTrace {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Re-runs the recorded actions from the recorded seed.
    pub fn replay(&self, cfg: &ScenarioConfig) -> Result<EpisodeTrace> {
        let (mut env, _) = Env::new(cfg.clone(), self.seed);
        let mut out = EpisodeTrace {
            seed: self.seed,
            actions: Vec::new(),
            rewards: Vec::new(),
            collisions: Vec::new(),
        };
        for joint in &self.actions {
            let flat: Vec<f64> = joint.iter().flat_map(|a| a.iter().copied()).collect();
            let step = env.step(&Tensor::matrix(joint.len(), ACTION_DIM, flat)?)?;
            out.actions.push(joint.clone());
            out.rewards.push(step.team_reward);
            out.collisions.push(step.collision_count);
        }
        Ok(out)
    }
}
