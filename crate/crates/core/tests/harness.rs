use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use saja_core::attacks::{AttackConfig, AttackMethod, PerturbationBudget};
use saja_core::env::{ScenarioConfig, ScenarioName};
use saja_core::harness::{
    ablate_hlf, action_diff_histogram, budget_sweep, eval_attack, eval_attack_with, eval_runs,
    pct_drop, raw_log_name, read_raw_log, split_budget, Aggregate, ExperimentConfig, Histogram,
    HistogramSpec, MetricsTable, Protocol, HLF_ARMS,
};
use saja_core::madrl::{evaluate_policy, Algo, Learner, TrainConfig};
use saja_core::Checkpoint;

fn small_checkpoint(algo: Algo, seed: u64) -> Checkpoint {
    let scenario = ScenarioConfig::new(ScenarioName::Pp3a);
    let cfg = TrainConfig {
        actor_hidden: vec![16],
        critic_hidden: vec![16],
        mixer_embed: 8,
        ..TrainConfig::for_algo(algo)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = Learner::new(algo, 3, scenario.obs_dim(), 2, cfg, None, &mut rng).unwrap();
    Checkpoint::from_learner(&l, ScenarioName::Pp3a)
}

fn quick_attack(method: AttackMethod, m: usize) -> AttackConfig {
    AttackConfig {
        method,
        m,
        k_s: 3,
        k_a: 3,
        ..AttackConfig::default()
    }
}

#[test]
fn clean_evaluation_matches_policy_evaluation() {
    let ckpt = small_checkpoint(Algo::Facmac, 1);
    let protocol = Protocol {
        n_seeds: 1,
        episodes_per_seed: 6,
        seed: 42,
    };
    let runs = eval_runs(
        &ckpt,
        &quick_attack(AttackMethod::None, 1),
        &PerturbationBudget::default(),
        &protocol,
    )
    .unwrap();
    let agg = Aggregate::from_runs(&runs);
    let direct = evaluate_policy(
        &ckpt.actors,
        &ScenarioConfig::new(ScenarioName::Pp3a),
        6,
        42,
    )
    .unwrap();
    assert!((agg.mean - direct.mean).abs() < 1e-12);
    assert!((agg.std - direct.std).abs() < 1e-12);
}

#[test]
fn single_episode_row() {
    let ckpt = small_checkpoint(Algo::Maddpg, 2);
    let protocol = Protocol {
        n_seeds: 1,
        episodes_per_seed: 1,
        seed: 3,
    };
    let runs = eval_runs(
        &ckpt,
        &quick_attack(AttackMethod::Saja, 2),
        &PerturbationBudget::default(),
        &protocol,
    )
    .unwrap();
    let agg = Aggregate::from_runs(&runs);
    assert_eq!(agg.mean, runs[0].returns[0]);
    assert_eq!(agg.std, 0.0);
}

#[test]
fn seeds_are_isolated() {
    let ckpt = small_checkpoint(Algo::Facmac, 3);
    let attack = quick_attack(AttackMethod::RandomSa, 2);
    let budget = PerturbationBudget::default();
    let all = eval_runs(
        &ckpt,
        &attack,
        &budget,
        &Protocol {
            n_seeds: 3,
            episodes_per_seed: 2,
            seed: 10,
        },
    )
    .unwrap();
    let alone = eval_runs(
        &ckpt,
        &attack,
        &budget,
        &Protocol {
            n_seeds: 1,
            episodes_per_seed: 2,
            seed: 12,
        },
    )
    .unwrap();
    assert_eq!(all[2], alone[0]);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let serial = pool
        .install(|| {
            eval_runs(
                &ckpt,
                &attack,
                &budget,
                &Protocol {
                    n_seeds: 3,
                    episodes_per_seed: 2,
                    seed: 10,
                },
            )
        })
        .unwrap();
    assert_eq!(all, serial);
}

#[test]
fn tables_are_regenerable_from_raw_logs() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = small_checkpoint(Algo::Facmac, 4);
    let ckpt_dir = dir.path().join("ckpt");
    ckpt.save(&ckpt_dir).unwrap();
    let cfg = ExperimentConfig {
        checkpoint: ckpt_dir,
        attack: quick_attack(AttackMethod::PgdAction, 1),
        n_seeds: 3,
        episodes_per_seed: 3,
        seed: 5,
        output_dir: dir.path().join("out"),
        ..ExperimentConfig::default()
    };
    let table = eval_attack(&cfg).unwrap();
    assert_eq!(table.rows.len(), 2);
    let from_disk = MetricsTable::read_csv(&cfg.output_dir.join("metrics.csv")).unwrap();
    assert_eq!(from_disk, table);

    let model = cfg.model_label();
    for row in &table.rows {
        let attack = AttackConfig {
            method: row.method,
            ..cfg.attack.clone()
        };
        let (mut means, mut vars) = (Vec::new(), Vec::new());
        for j in 0..3 {
            let xs =
                read_raw_log(
                    &cfg.output_dir
                        .join(raw_log_name(&model, &attack, "default", 5 + j)),
                )
                .unwrap();
            let m = xs.iter().sum::<f64>() / xs.len() as f64;
            means.push(m);
            vars.push(xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64);
        }
        let mean = means.iter().sum::<f64>() / 3.0;
        let var = vars.iter().sum::<f64>() / 3.0;
        assert!((row.mean_reward - mean).abs() < 1e-9);
        assert!((row.var_reward - var).abs() < 1e-9);
        assert!((row.std_reward - var.sqrt()).abs() < 1e-9);
        let base = table.rows[0].mean_reward;
        assert!(
            (row.pct_drop.unwrap() - (base - row.mean_reward) / base.abs() * 100.0).abs() < 1e-9
        );
    }

    // Appending a second evaluation keeps a single header.
    eval_attack(&cfg).unwrap();
    assert_eq!(
        MetricsTable::read_csv(&cfg.output_dir.join("metrics.csv"))
            .unwrap()
            .rows
            .len(),
        4
    );
}

#[test]
fn config_must_match_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt_dir = dir.path().join("ckpt");
    small_checkpoint(Algo::Maddpg, 5).save(&ckpt_dir).unwrap();
    let missing = ExperimentConfig {
        checkpoint: dir.path().join("nope"),
        ..ExperimentConfig::default()
    };
    assert!(missing.load_checkpoint().is_err());
    let wrong_algo = ExperimentConfig {
        checkpoint: ckpt_dir.clone(),
        algo: Algo::Facmac,
        ..ExperimentConfig::default()
    };
    assert!(wrong_algo.load_checkpoint().is_err());
    let wrong_scenario = ExperimentConfig {
        checkpoint: ckpt_dir.clone(),
        algo: Algo::Maddpg,
        scenario: ScenarioName::Pp6a,
        ..ExperimentConfig::default()
    };
    assert!(wrong_scenario.load_checkpoint().is_err());
    let ok = ExperimentConfig {
        checkpoint: ckpt_dir,
        algo: Algo::Maddpg,
        ..ExperimentConfig::default()
    };
    assert!(ok.load_checkpoint().is_ok());
    assert!(ExperimentConfig::from_json("{\"n_seeds\": \"five\"}").is_err());
    let parsed =
        ExperimentConfig::from_json("{\"budget\": {\"eps_s\": 0.01, \"eps_a\": 0.03}}").unwrap();
    assert_eq!(
        parsed.budget,
        PerturbationBudget {
            eps_s: 0.01,
            eps_a: 0.03
        }
    );
}

#[test]
fn sweep_endpoints_are_single_phase_attacks() {
    for k in 0..11 {
        let b = split_budget(0.06, k, 11);
        assert!((b.eps_s + b.eps_a - 0.06).abs() < 1e-15);
    }
    assert_eq!(
        split_budget(0.06, 0, 11),
        PerturbationBudget {
            eps_s: 0.0,
            eps_a: 0.06
        }
    );
    assert_eq!(
        split_budget(0.06, 10, 11),
        PerturbationBudget {
            eps_s: 0.06,
            eps_a: 0.0
        }
    );

    let ckpt = small_checkpoint(Algo::Facmac, 6);
    let protocol = Protocol {
        n_seeds: 2,
        episodes_per_seed: 1,
        seed: 7,
    };
    let attack = quick_attack(AttackMethod::Saja, 2);
    let cells = budget_sweep(&ckpt, &attack, &protocol, &[0.04], 3).unwrap();
    assert_eq!(cells.len(), 3);
    let single = |method, budget| {
        Aggregate::from_runs(
            &eval_runs(&ckpt, &attack.with_method(method), &budget, &protocol).unwrap(),
        )
        .mean
    };
    let action_end = single(
        AttackMethod::PgdAction,
        PerturbationBudget {
            eps_s: 0.02,
            eps_a: 0.04,
        },
    );
    let state_end = single(
        AttackMethod::PgdState,
        PerturbationBudget {
            eps_s: 0.04,
            eps_a: 0.05,
        },
    );
    assert!((cells[0].mean_reward - action_end).abs() <= 1e-9);
    assert!((cells[2].mean_reward - state_end).abs() <= 1e-9);
    assert!(budget_sweep(&ckpt, &attack, &protocol, &[0.04], 1).is_err());
}

#[test]
fn histogram_bins() {
    let spec = HistogramSpec::default();
    assert_eq!(spec.n_bins(), 40);
    assert_eq!(spec.bin(0.0), Some(0));
    assert_eq!(spec.bin(0.0707), Some(7));
    assert_eq!(spec.bin(0.3999), Some(39));
    assert_eq!(spec.bin(0.40), None);
    let h = Histogram::from_values(AttackMethod::Saja, vec![0.001, 0.015, 0.017, 0.5], &spec);
    assert_eq!(h.counts.iter().sum::<usize>() + h.omitted, 4);
    assert_eq!(h.peak_bin(), 1);

    let ckpt = small_checkpoint(Algo::Facmac, 7);
    let attack = quick_attack(AttackMethod::Saja, 1);
    let hists = action_diff_histogram(
        &ckpt,
        &attack,
        &PerturbationBudget::default(),
        &[AttackMethod::None, AttackMethod::RandomAction],
        60,
        8,
        &spec,
    )
    .unwrap();
    assert_eq!(hists[0].counts[0], 60);
    // An untrained actor stays well inside the action box, so the sign
    // perturbation is never clamped and every step lands at 0.05·√2.
    assert!(hists[1]
        .values
        .iter()
        .all(|v| (v - 0.05 * 2f64.sqrt()).abs() < 1e-12));
    assert_eq!(hists[1].counts[7], 60);
    let zero = AttackConfig { m: 0, ..attack };
    assert!(action_diff_histogram(
        &ckpt,
        &zero,
        &PerturbationBudget::default(),
        &[AttackMethod::None],
        5,
        0,
        &spec
    )
    .is_err());
}

#[test]
fn ablation_arms() {
    assert_eq!(HLF_ARMS[0].1, 1.0 - 1e-6);
    assert_eq!(HLF_ARMS[1].2, 1.0 - 1e-6);
    assert_eq!((HLF_ARMS[2].1, HLF_ARMS[2].2), (0.01, 0.99));
    let ckpt = small_checkpoint(Algo::Maddpg, 8);
    let protocol = Protocol {
        n_seeds: 1,
        episodes_per_seed: 1,
        seed: 9,
    };
    let table = ablate_hlf(
        &ckpt,
        "toy",
        &quick_attack(AttackMethod::Saja, 1),
        &PerturbationBudget::default(),
        &protocol,
        &[1, 3],
    )
    .unwrap();
    assert_eq!(table.rows.len(), 7);
    assert_eq!(table.rows[0].method, AttackMethod::None);
    assert_eq!(table.rows[0].pct_drop, Some(0.0));
    let variants: Vec<&str> = table.rows[1..].iter().map(|r| r.variant.as_str()).collect();
    assert_eq!(
        variants,
        [
            "q_only",
            "action_only",
            "balanced",
            "q_only",
            "action_only",
            "balanced"
        ]
    );
}

#[test]
fn reward_drop_formula() {
    assert_eq!(pct_drop(200.0, 180.0), 10.0);
    assert_eq!(pct_drop(-10.0, -12.0), 20.0);
    let ckpt = small_checkpoint(Algo::Facmac, 9);
    let cfg = ExperimentConfig {
        attack: quick_attack(AttackMethod::None, 1),
        n_seeds: 1,
        episodes_per_seed: 1,
        ..ExperimentConfig::default()
    };
    assert_eq!(eval_attack_with(&ckpt, &cfg, None).unwrap().rows.len(), 1);
}
