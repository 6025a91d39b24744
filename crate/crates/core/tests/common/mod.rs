#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use saja_core::attacks::{hlf, AttackConfig, AttackMethod, PerturbationBudget};
use saja_core::autodiff::{Activation, Layer, Mlp, Tape, Tensor, Var};
use saja_core::madrl::TeamCritic;
use saja_core::Result;

/// `Q = q0 − Σ_j k_j·(x_j − c_j)²` over the concatenation of all observation
/// blocks followed by all action blocks.
pub struct QuadCritic {
    pub n_agents: usize,
    pub center: Vec<f64>,
    pub curvature: Vec<f64>,
    pub q0: f64,
}

impl QuadCritic {
    pub fn value(&self, x: &[f64]) -> f64 {
        self.q0
            - x.iter()
                .zip(&self.center)
                .zip(&self.curvature)
                .map(|((x, c), k)| k * (x - c).powi(2))
                .sum::<f64>()
    }
}

impl TeamCritic for QuadCritic {
    fn n_agents(&self) -> usize {
        self.n_agents
    }

    fn record_team_q(&self, tape: &mut Tape, obs: &[Var], actions: &[Var]) -> Result<Var> {
        let mut parts = obs.to_vec();
        parts.extend_from_slice(actions);
        let x = tape.concat(&parts)?;
        let rows = tape.value(x).rows();
        let d = self.center.len();
        let c = tape.leaf(Tensor::matrix(rows, d, self.center.repeat(rows))?);
        let k = tape.leaf(Tensor::matrix(rows, d, self.curvature.repeat(rows))?);
        let diff = tape.sub(x, c)?;
        let sq = tape.square(diff);
        let weighted = tape.mul(sq, k)?;
        let s = tape.sum_cols(weighted);
        let neg = tape.scale(s, -1.0);
        let q0 = tape.leaf(Tensor::matrix(rows, 1, vec![self.q0; rows])?);
        tape.add(neg, q0)
    }
}

pub fn affine_actor(weight: Vec<f64>, rows: usize, bias: Vec<f64>) -> Mlp {
    let cols = weight.len() / rows;
    Mlp::from_layers(
        vec![Layer {
            weight: Tensor::matrix(rows, cols, weight).unwrap(),
            bias: Tensor::vector(bias).unwrap(),
        }],
        Activation::Relu,
        Activation::Identity,
    )
    .unwrap()
}

pub struct Toy {
    pub actor: Mlp,
    pub critic: QuadCritic,
    pub s: Tensor,
    pub budget: PerturbationBudget,
    pub cfg: AttackConfig,
}

/// One agent, scalar observation and action, linear actor, concave critic;
/// state phase only.
pub fn state_toy(seed: u64) -> Toy {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = rng.random_range(0.2..1.5) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let b = rng.random_range(-0.3..0.3);
    let critic = QuadCritic {
        n_agents: 1,
        center: vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
        curvature: vec![rng.random_range(0.5..3.0), rng.random_range(0.5..3.0)],
        q0: rng.random_range(-1.0..1.0),
    };
    let alpha = rng.random_range(0.05..0.95);
    Toy {
        actor: affine_actor(vec![w], 1, vec![b]),
        critic,
        s: Tensor::matrix(1, 1, vec![rng.random_range(-0.5..0.5)]).unwrap(),
        budget: PerturbationBudget {
            eps_s: rng.random_range(0.01..0.2),
            eps_a: 0.0,
        },
        cfg: AttackConfig {
            method: AttackMethod::PgdState,
            alpha1: alpha,
            beta1: 1.0 - alpha,
            m: 1,
            ..AttackConfig::default()
        },
    }
}

/// One agent, scalar observation, 2-D action, separable concave critic;
/// action phase only.
pub fn action_toy(seed: u64) -> Toy {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let critic = QuadCritic {
        n_agents: 1,
        center: vec![
            0.0,
            rng.random_range(-0.8..0.8),
            rng.random_range(-0.8..0.8),
        ],
        curvature: vec![0.0, rng.random_range(0.5..3.0), rng.random_range(0.5..3.0)],
        q0: rng.random_range(-1.0..1.0),
    };
    let alpha = rng.random_range(0.05..0.95);
    Toy {
        actor: affine_actor(
            vec![rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)],
            2,
            vec![rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)],
        ),
        critic,
        s: Tensor::matrix(1, 1, vec![rng.random_range(-0.5..0.5)]).unwrap(),
        budget: PerturbationBudget {
            eps_s: 0.0,
            eps_a: rng.random_range(0.02..0.2),
        },
        cfg: AttackConfig {
            method: AttackMethod::PgdAction,
            alpha2: alpha,
            beta2: 1.0 - alpha,
            m: 1,
            ..AttackConfig::default()
        },
    }
}

fn grid(center: f64, eps: f64, h: f64) -> Vec<f64> {
    let n = (2.0 * eps / h).ceil() as usize;
    (0..=n)
        .map(|k| (center - eps + k as f64 * h).min(center + eps))
        .collect()
}

/// Best state-phase loss over a grid of the observation interval.
pub fn state_grid_optimum(t: &Toy, h: f64) -> f64 {
    let s = t.s.data()[0];
    let a0 = t
        .actor
        .forward(&Tensor::vector(vec![s]).unwrap())
        .unwrap()
        .data()[0];
    grid(s, t.budget.eps_s, h)
        .into_iter()
        .map(|x| {
            let a = t
                .actor
                .forward(&Tensor::vector(vec![x]).unwrap())
                .unwrap()
                .data()[0];
            hlf(
                t.critic.value(&[x, a]),
                (a - a0).abs(),
                t.cfg.alpha1,
                t.cfg.beta1,
            )
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Best action-phase loss over a grid of the action box.
pub fn action_grid_optimum(t: &Toy, h: f64) -> f64 {
    let s = t.s.data()[0];
    let a0 = t.actor.forward(&Tensor::vector(vec![s]).unwrap()).unwrap();
    let (c0, c1) = (a0.data()[0], a0.data()[1]);
    let mut best = f64::NEG_INFINITY;
    for x in grid(c0, t.budget.eps_a, h) {
        for y in grid(c1, t.budget.eps_a, h) {
            let dist = ((x - c0).powi(2) + (y - c1).powi(2)).sqrt();
            best = best.max(hlf(
                t.critic.value(&[s, x, y]),
                dist,
                t.cfg.alpha2,
                t.cfg.beta2,
            ));
        }
    }
    best
}

/// Relative gradient error with an absolute floor.
pub fn grad_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-7 / 1e-4)
}

/// Random network with 1–3 affine layers of width ≤ 16, a random batch and
/// loss weights `c`.
fn random_case(seed: u64) -> (Mlp, Tensor, Tensor) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let depth = rng.random_range(1..=3);
    let sizes: Vec<usize> = (0..=depth).map(|_| rng.random_range(1..=16)).collect();
    let hidden = if rng.random_bool(0.5) {
        Activation::Relu
    } else {
        Activation::Tanh
    };
    let output = if rng.random_bool(0.5) {
        Activation::Tanh
    } else {
        Activation::Identity
    };
    let net = Mlp::new(&sizes, hidden, output, &mut rng).unwrap();
    let batch = rng.random_range(1..=4);
    let x = Tensor::matrix(
        batch,
        sizes[0],
        (0..batch * sizes[0])
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
    )
    .unwrap();
    let out_dim = sizes[depth];
    let c = Tensor::matrix(
        batch,
        out_dim,
        (0..batch * out_dim)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
    )
    .unwrap();
    (net, x, c)
}

/// Smallest |pre-activation| over hidden ReLU units of the random case for
/// `seed`, or infinity when the hidden activation is smooth.
pub fn relu_margin(seed: u64) -> f64 {
    let (net, x, _) = random_case(seed);
    if net.hidden_activation() != Activation::Relu {
        return f64::INFINITY;
    }
    let layers = net.layers();
    let mut margin = f64::INFINITY;
    for b in 0..x.rows() {
        let mut h = x.row(b).to_vec();
        for layer in &layers[..layers.len() - 1] {
            let (out, inp) = (layer.weight.shape()[0], layer.weight.shape()[1]);
            let w = layer.weight.data();
            h = (0..out)
                .map(|o| {
                    let z =
                        layer.bias.data()[o] + (0..inp).map(|i| w[o * inp + i] * h[i]).sum::<f64>();
                    margin = margin.min(z.abs());
                    z.max(0.0)
                })
                .collect();
        }
    }
    margin
}

/// Worst error between backward and central differences over every parameter
/// and input component of the random case, for the loss `Σ c ⊙ output`.
pub fn gradient_check(seed: u64) -> f64 {
    let (net, x, c) = random_case(seed);
    let batch = x.rows();
    let sizes = net.layer_sizes();
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let (y, vars) = net.record(&mut tape, xv).unwrap();
    let grads = tape.backward(y, &c).unwrap();
    let dx = grads.get(xv);
    let dparams: Vec<f64> = vars
        .grads(&grads)
        .iter()
        .flat_map(|g| g.data().to_vec())
        .collect();

    let loss = |net: &Mlp, x: &Tensor| -> f64 {
        net.forward(x)
            .unwrap()
            .data()
            .iter()
            .zip(c.data())
            .map(|(a, b)| a * b)
            .sum()
    };
    let flat: Vec<f64> = net
        .params()
        .iter()
        .flat_map(|p| p.data().to_vec())
        .collect();
    let with_params = |p: &[f64]| {
        let mut n = net.clone();
        let mut off = 0;
        for t in n.params_mut() {
            let len = t.len();
            t.data_mut().copy_from_slice(&p[off..off + len]);
            off += len;
        }
        loss(&n, &x)
    };
    let fd_params = saja_core::oracles::finite_diff_gradient(with_params, &flat, 1e-5).unwrap();
    let fd_x = saja_core::oracles::finite_diff_gradient(
        |v| loss(&net, &Tensor::matrix(batch, sizes[0], v.to_vec()).unwrap()),
        x.data(),
        1e-5,
    )
    .unwrap();
    dparams
        .iter()
        .zip(&fd_params)
        .chain(dx.data().iter().zip(&fd_x))
        .map(|(a, n)| grad_error(*a, *n))
        .fold(0.0, f64::max)
}
