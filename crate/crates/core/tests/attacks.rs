mod common;

use common::{action_grid_optimum, action_toy, state_grid_optimum, state_toy};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use saja_core::attacks::{
    random_sign_perturb, random_state_action, run_attack, saja_action_phase, saja_state_phase,
    select_victims, AttackConfig, AttackMethod, PerturbationBudget, Victim,
};
use saja_core::autodiff::Tensor;
use saja_core::env::{reset, ScenarioConfig, ScenarioName};
use saja_core::madrl::{act_greedy, Algo, Learner, TrainConfig};

fn random_team(algo: Algo, seed: u64) -> (Learner, Tensor) {
    let scenario = ScenarioConfig::new(ScenarioName::Pp3a);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = TrainConfig {
        actor_hidden: vec![16],
        critic_hidden: vec![16],
        mixer_embed: 8,
        ..TrainConfig::for_algo(algo)
    };
    let l = Learner::new(algo, 3, scenario.obs_dim(), 2, cfg, None, &mut rng).unwrap();
    let (_, obs) = reset(&scenario, seed);
    (l, obs)
}

#[test]
fn zero_iterations_or_budget_leave_inputs_clean() {
    let (l, s) = random_team(Algo::Facmac, 1);
    let critic = l.critic.online_model();
    let v = Victim {
        actors: &l.actors.online,
        critic: &critic,
    };
    let cfg = AttackConfig {
        m: 2,
        ..AttackConfig::default()
    };
    let budget = PerturbationBudget::default();
    let victims = [0, 2];

    let (s0, _) = saja_state_phase(
        &s,
        v,
        &victims,
        &budget,
        &AttackConfig {
            k_s: 0,
            ..cfg.clone()
        },
    )
    .unwrap();
    assert!(s0.bit_eq(&s));
    let (s1, _) = saja_state_phase(
        &s,
        v,
        &victims,
        &PerturbationBudget {
            eps_s: 0.0,
            eps_a: 0.05,
        },
        &cfg,
    )
    .unwrap();
    assert!(s1.bit_eq(&s));

    let a0 = act_greedy(&l.actors.online, &s).unwrap();
    let (a1, _) = saja_action_phase(
        &s,
        &a0,
        v,
        &victims,
        &budget,
        &AttackConfig {
            k_a: 0,
            ..cfg.clone()
        },
    )
    .unwrap();
    assert!(a1.bit_eq(&a0));
    let (a2, _) = saja_action_phase(
        &s,
        &a0,
        v,
        &victims,
        &PerturbationBudget {
            eps_s: 0.02,
            eps_a: 0.0,
        },
        &cfg,
    )
    .unwrap();
    assert!(a2.bit_eq(&a0));
}

#[test]
fn no_victims_means_no_attack() {
    let (l, s) = random_team(Algo::Maddpg, 2);
    let critic = l.critic.online_model();
    let v = Victim {
        actors: &l.actors.online,
        critic: &critic,
    };
    let clean = act_greedy(&l.actors.online, &s).unwrap();
    for method in AttackMethod::ALL {
        let cfg = AttackConfig {
            method,
            m: 0,
            ..AttackConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let out = run_attack(&s, v, &PerturbationBudget::default(), &cfg, &mut rng).unwrap();
        assert!(out.perturbed_observations.bit_eq(&s), "{method}");
        assert!(out.final_action.bit_eq(&clean), "{method}");
    }
}

#[test]
fn budgets_hold_and_bystanders_stay_clean() {
    for algo in [Algo::Maddpg, Algo::Facmac] {
        let (l, s) = random_team(algo, 4);
        let critic = l.critic.online_model();
        let v = Victim {
            actors: &l.actors.online,
            critic: &critic,
        };
        let budget = PerturbationBudget::new(0.02, 0.05).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for method in AttackMethod::ALL {
            for m in 0..=3 {
                let cfg = AttackConfig {
                    method,
                    m,
                    k_s: 5,
                    k_a: 5,
                    ..AttackConfig::default()
                };
                let out = run_attack(&s, v, &budget, &cfg, &mut rng).unwrap();
                for i in 0..3 {
                    let ds = out
                        .perturbed_observations
                        .row(i)
                        .iter()
                        .zip(s.row(i))
                        .map(|(a, b)| (a - b).abs());
                    let da = out
                        .final_action
                        .row(i)
                        .iter()
                        .zip(out.policy_action.row(i))
                        .map(|(a, b)| (a - b).abs());
                    if out.victims.contains(&i) {
                        assert!(ds.fold(0.0, f64::max) <= budget.eps_s);
                        assert!(da.fold(0.0, f64::max) <= budget.eps_a);
                    } else {
                        assert!(out
                            .perturbed_observations
                            .row(i)
                            .iter()
                            .zip(s.row(i))
                            .all(|(a, b)| a.to_bits() == b.to_bits()));
                        assert!(out
                            .final_action
                            .row(i)
                            .iter()
                            .zip(out.policy_action.row(i))
                            .all(|(a, b)| a.to_bits() == b.to_bits()));
                    }
                }
                assert!(out
                    .final_action
                    .data()
                    .iter()
                    .all(|a| (-1.0..=1.0).contains(a)));
            }
        }
    }
}

#[test]
fn single_phase_methods_are_joint_method_special_cases() {
    let (l, s) = random_team(Algo::Facmac, 6);
    let critic = l.critic.online_model();
    let v = Victim {
        actors: &l.actors.online,
        critic: &critic,
    };
    let budget = PerturbationBudget::default();
    let cfg = AttackConfig {
        m: 2,
        ..AttackConfig::default()
    };
    let pairs = [
        (
            AttackConfig {
                k_a: 0,
                ..cfg.clone()
            },
            cfg.with_method(AttackMethod::PgdState),
        ),
        (
            AttackConfig {
                k_s: 0,
                ..cfg.clone()
            },
            cfg.with_method(AttackMethod::PgdAction),
        ),
    ];
    for (joint, single) in pairs {
        let mut r1 = ChaCha8Rng::seed_from_u64(7);
        let mut r2 = ChaCha8Rng::seed_from_u64(7);
        let a = run_attack(&s, v, &budget, &joint, &mut r1).unwrap();
        let b = run_attack(&s, v, &budget, &single, &mut r2).unwrap();
        assert!(a.perturbed_observations.bit_eq(&b.perturbed_observations));
        assert!(a.final_action.bit_eq(&b.final_action));
        assert_eq!(a.victims, b.victims);
    }

    let mut r1 = ChaCha8Rng::seed_from_u64(8);
    let mut r2 = ChaCha8Rng::seed_from_u64(8);
    let a = random_state_action(
        &s,
        v,
        &PerturbationBudget {
            eps_s: 0.0,
            eps_a: 0.05,
        },
        2,
        &mut r1,
    )
    .unwrap();
    let b = run_attack(
        &s,
        v,
        &budget,
        &cfg.with_method(AttackMethod::RandomAction),
        &mut r2,
    )
    .unwrap();
    assert!(a.final_action.bit_eq(&b.final_action));
    let mut r1 = ChaCha8Rng::seed_from_u64(9);
    let mut r2 = ChaCha8Rng::seed_from_u64(9);
    let a = random_state_action(
        &s,
        v,
        &PerturbationBudget {
            eps_s: 0.02,
            eps_a: 0.0,
        },
        2,
        &mut r1,
    )
    .unwrap();
    let b = run_attack(
        &s,
        v,
        &budget,
        &cfg.with_method(AttackMethod::RandomState),
        &mut r2,
    )
    .unwrap();
    assert!(a.perturbed_observations.bit_eq(&b.perturbed_observations));
    assert!(a.final_action.bit_eq(&b.final_action));
}

#[test]
fn victims_are_uniform() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let draws = 100_000;
    let mut counts = [0usize; 3];
    for _ in 0..draws {
        counts[select_victims(3, 1, &mut rng).unwrap()[0]] += 1;
    }
    let p = 1.0 / 3.0;
    let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
    for c in counts {
        assert!(
            (c as f64 - draws as f64 * p).abs() <= 3.0 * sigma,
            "{counts:?}"
        );
    }
}

#[test]
fn random_signs_are_exact_and_balanced() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let eps = 0.05;
    let target = Tensor::matrix(2, 2, vec![0.3, -0.7, 0.1, 0.9]).unwrap();
    assert!(random_sign_perturb(&target, 0.0, &[0, 1], &mut rng)
        .unwrap()
        .bit_eq(&target));
    let mut plus = 0usize;
    let mut total = 0usize;
    for _ in 0..25_000 {
        let out = random_sign_perturb(&target, eps, &[0, 1], &mut rng).unwrap();
        for (x, c) in out.data().iter().zip(target.data()) {
            let d = x - c;
            assert!(d.abs() <= eps && d.abs() >= eps * (1.0 - 1e-12));
            plus += (d > 0.0) as usize;
            total += 1;
        }
    }
    let sigma = (total as f64 * 0.25).sqrt();
    assert!((plus as f64 - total as f64 / 2.0).abs() <= 3.0 * sigma);
}

#[test]
fn state_phase_reaches_interval_optimum() {
    for seed in 0..10 {
        let t = state_toy(seed);
        let v = Victim {
            actors: std::slice::from_ref(&t.actor),
            critic: &t.critic,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = run_attack(&t.s, v, &t.budget, &t.cfg, &mut rng).unwrap();
        let reached = *out.diagnostics.state_losses.last().unwrap();
        let best = state_grid_optimum(&t, 1e-4);
        assert!(
            reached >= best - 0.01 * best.abs(),
            "seed {seed}: {reached} vs {best}"
        );
    }
}

#[test]
fn action_phase_reaches_box_optimum() {
    for seed in 0..10 {
        let t = action_toy(seed);
        let v = Victim {
            actors: std::slice::from_ref(&t.actor),
            critic: &t.critic,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = run_attack(&t.s, v, &t.budget, &t.cfg, &mut rng).unwrap();
        let reached = *out.diagnostics.action_losses.last().unwrap();
        let best = action_grid_optimum(&t, 1e-3);
        assert!(
            reached >= best - 0.01 * best.abs(),
            "seed {seed}: {reached} vs {best}"
        );
    }
}

#[test]
fn loss_trajectories_have_one_entry_per_step_plus_final() {
    let (l, s) = random_team(Algo::Facmac, 12);
    let critic = l.critic.online_model();
    let v = Victim {
        actors: &l.actors.online,
        critic: &critic,
    };
    let cfg = AttackConfig {
        m: 3,
        k_s: 7,
        k_a: 4,
        ..AttackConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let out = run_attack(&s, v, &PerturbationBudget::default(), &cfg, &mut rng).unwrap();
    assert_eq!(out.diagnostics.state_losses.len(), 8);
    assert_eq!(out.diagnostics.action_losses.len(), 5);
}
