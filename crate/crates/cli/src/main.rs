use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use saja_core::attacks::{AttackConfig, AttackMethod};
use saja_core::defense::{train_m3ddpg, M3ddpgConfig};
use saja_core::env::{ScenarioConfig, ScenarioName};
use saja_core::harness::{
    ablate_hlf, action_diff_histogram, budget_sweep, eval_attack_with, write_hist_csv, write_json,
    write_sweep_csv, ExperimentConfig, HistogramSpec,
};
use saja_core::madrl::{train, write_curve_csv, Algo, TrainConfig};
use saja_core::oracles::{theorem1_suite, theorem2_suite};

#[derive(Parser)]
#[command(
    name = "saja",
    version,
    about = "Train, attack and audit cooperative multi-agent policies"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a team and write its checkpoint.
    Train(TrainArgs),
    /// Evaluate one attack against the no-attack baseline.
    EvalAttack(ExpArgs),
    /// Joint attack over a grid of state/action budget splits.
    Sweep(SweepArgs),
    /// Histogram of per-step victim action displacement.
    Hist(HistArgs),
    /// Joint attack under the three loss-weight arms.
    Ablate(AblateArgs),
    /// Run a seeded tabular bound suite.
    Oracle(OracleArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    algo: Algo,
    #[arg(long, default_value = "pp_3a")]
    scenario: ScenarioName,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// JSON training config; flags win on conflict.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Action perturbation radius for m3ddpg.
    #[arg(long)]
    eps_adv: Option<f64>,
}

#[derive(Args, Clone)]
struct ExpArgs {
    /// JSON experiment config; flags win on conflict.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    scenario: Option<ScenarioName>,
    #[arg(long)]
    algo: Option<Algo>,
    #[arg(long)]
    method: Option<AttackMethod>,
    #[arg(long)]
    eps_s: Option<f64>,
    #[arg(long)]
    eps_a: Option<f64>,
    #[arg(long)]
    victims: Option<usize>,
    #[arg(long)]
    k_s: Option<usize>,
    #[arg(long)]
    k_a: Option<usize>,
    /// Sets both value weights.
    #[arg(long)]
    alpha: Option<f64>,
    /// Sets both action-distance weights.
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    model: Option<String>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    exp: ExpArgs,
    #[arg(long, value_delimiter = ',', default_values_t = [0.02, 0.04, 0.06, 0.08, 0.10])]
    totals: Vec<f64>,
    #[arg(long, default_value_t = 11)]
    splits: usize,
}

#[derive(Args)]
struct HistArgs {
    #[command(flatten)]
    exp: ExpArgs,
    #[arg(long, value_delimiter = ',', default_values_t = AttackMethod::ALL)]
    methods: Vec<AttackMethod>,
    #[arg(long, default_value_t = 12_500)]
    timesteps: usize,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    exp: ExpArgs,
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2, 3])]
    victim_counts: Vec<usize>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Suite {
    Theorem1,
    Theorem2,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long, value_enum)]
    suite: Suite,
    #[arg(long, default_value_t = 100)]
    instances: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

/// Configuration problems exit with 2, failed runs with 1.
enum Failure {
    Config(anyhow::Error),
    Run(anyhow::Error),
}

fn config<T>(r: anyhow::Result<T>) -> Result<T, Failure> {
    r.map_err(Failure::Config)
}

fn run<T>(r: anyhow::Result<T>) -> Result<T, Failure> {
    r.map_err(Failure::Run)
}

impl ExpArgs {
    fn resolve(&self) -> anyhow::Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::from_file(p)
                .with_context(|| format!("reading {}", p.display()))?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = &self.checkpoint {
            c.checkpoint = v.clone();
        }
        if let Some(v) = self.scenario {
            c.scenario = v;
        }
        if let Some(v) = self.algo {
            c.algo = v;
        }
        if let Some(v) = self.method {
            c.attack.method = v;
        }
        if let Some(v) = self.eps_s {
            c.budget.eps_s = v;
        }
        if let Some(v) = self.eps_a {
            c.budget.eps_a = v;
        }
        if let Some(v) = self.victims {
            c.attack.m = v;
        }
        if let Some(v) = self.k_s {
            c.attack.k_s = v;
        }
        if let Some(v) = self.k_a {
            c.attack.k_a = v;
        }
        if let Some(v) = self.alpha {
            c.attack.alpha1 = v;
            c.attack.alpha2 = v;
        }
        if let Some(v) = self.beta {
            c.attack.beta1 = v;
            c.attack.beta2 = v;
        }
        if let Some(v) = self.seeds {
            c.n_seeds = v;
        }
        if let Some(v) = self.episodes {
            c.episodes_per_seed = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = &self.out {
            c.output_dir = v.clone();
        }
        if let Some(v) = &self.model {
            c.model = Some(v.clone());
        }
        Ok(c)
    }

    fn load(&self) -> Result<(ExperimentConfig, saja_core::Checkpoint), Failure> {
        let cfg = config(self.resolve())?;
        let ckpt = config(cfg.load_checkpoint().map_err(anyhow::Error::from))?;
        run(std::fs::create_dir_all(&cfg.output_dir)
            .with_context(|| format!("creating {}", cfg.output_dir.display())))?;
        Ok((cfg, ckpt))
    }
}

fn read_train_config(
    path: Option<&Path>,
    algo: Algo,
) -> anyhow::Result<(TrainConfig, Option<f64>)> {
    let Some(p) = path else {
        return Ok((TrainConfig::for_algo(algo), None));
    };
    let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
    if algo == Algo::M3ddpg {
        let c: M3ddpgConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
        Ok((c.train, Some(c.eps_adv)))
    } else {
        Ok((
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?,
            None,
        ))
    }
}

fn cmd_train(a: &TrainArgs) -> Result<(), Failure> {
    let (mut cfg, file_eps) = config(read_train_config(a.config.as_deref(), a.algo))?;
    if let Some(s) = a.steps {
        cfg.total_steps = s;
    }
    config(cfg.validate().map_err(anyhow::Error::from))?;
    let scenario = ScenarioConfig::new(a.scenario);
    let outcome = match a.algo {
        Algo::M3ddpg => {
            let eps_adv = a
                .eps_adv
                .or(file_eps)
                .unwrap_or(M3ddpgConfig::default().eps_adv);
            let m = M3ddpgConfig {
                eps_adv,
                train: cfg,
            };
            config(m.validate().map_err(anyhow::Error::from))?;
            run(train_m3ddpg(&scenario, &m, a.seed).map_err(anyhow::Error::from))?
        }
        algo => {
            if a.eps_adv.is_some() {
                return Err(Failure::Config(anyhow!("--eps-adv only applies to m3ddpg")));
            }
            run(train(algo, &scenario, &cfg, a.seed).map_err(anyhow::Error::from))?
        }
    };
    run(outcome.checkpoint.save(&a.out).map_err(anyhow::Error::from))?;
    run(write_curve_csv(&a.out.join("curve.csv"), &outcome.curve).map_err(anyhow::Error::from))?;
    let last = outcome
        .curve
        .last()
        .map(|p| p.eval_mean)
        .unwrap_or(f64::NAN);
    println!(
        "wrote {} ({} updates, final eval {last:.3})",
        a.out.display(),
        outcome.updates
    );
    Ok(())
}

fn cmd_eval(a: &ExpArgs) -> Result<(), Failure> {
    let (cfg, ckpt) = a.load()?;
    let table =
        run(eval_attack_with(&ckpt, &cfg, Some(&cfg.output_dir)).map_err(anyhow::Error::from))?;
    run(table
        .append_csv(&cfg.output_dir.join("metrics.csv"))
        .map_err(anyhow::Error::from))?;
    for r in &table.rows {
        println!(
            "{} m={} {}: {:.3} ± {:.3} (drop {:.2}%)",
            r.model,
            r.victims,
            r.method,
            r.mean_reward,
            r.std_reward,
            r.pct_drop.unwrap_or(0.0)
        );
    }
    Ok(())
}

fn cmd_sweep(a: &SweepArgs) -> Result<(), Failure> {
    let (cfg, ckpt) = a.exp.load()?;
    let cells = run(
        budget_sweep(&ckpt, &cfg.attack, &cfg.protocol(), &a.totals, a.splits)
            .map_err(anyhow::Error::from),
    )?;
    let path = cfg.output_dir.join("sweep.csv");
    run(write_sweep_csv(&path, &cells).map_err(anyhow::Error::from))?;
    println!("wrote {} ({} cells)", path.display(), cells.len());
    Ok(())
}

fn cmd_hist(a: &HistArgs) -> Result<(), Failure> {
    let (cfg, ckpt) = a.exp.load()?;
    let spec = HistogramSpec::default();
    let hists = run(action_diff_histogram(
        &ckpt,
        &cfg.attack,
        &cfg.budget,
        &a.methods,
        a.timesteps,
        cfg.seed,
        &spec,
    )
    .map_err(anyhow::Error::from))?;
    let path = cfg.output_dir.join("hist.csv");
    run(write_hist_csv(&path, &hists, &spec).map_err(anyhow::Error::from))?;
    for h in &hists {
        println!(
            "{}: peak bin {} ({} omitted)",
            h.method,
            h.peak_bin(),
            h.omitted
        );
    }
    Ok(())
}

fn cmd_ablate(a: &AblateArgs) -> Result<(), Failure> {
    let (cfg, ckpt) = a.exp.load()?;
    for &m in &a.victim_counts {
        let probe = AttackConfig {
            m,
            ..cfg.attack.clone()
        };
        config(probe.validate(ckpt.n_agents()).map_err(anyhow::Error::from))?;
    }
    let table = run(ablate_hlf(
        &ckpt,
        &cfg.model_label(),
        &cfg.attack,
        &cfg.budget,
        &cfg.protocol(),
        &a.victim_counts,
    )
    .map_err(anyhow::Error::from))?;
    let path = cfg.output_dir.join("metrics.csv");
    run(table.append_csv(&path).map_err(anyhow::Error::from))?;
    for r in &table.rows {
        println!(
            "m={} {} {}: {:.3}",
            r.victims, r.method, r.variant, r.mean_reward
        );
    }
    Ok(())
}

fn cmd_oracle(a: &OracleArgs) -> Result<(), Failure> {
    run(std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display())))?;
    let path = a.out.join("oracle_report.json");
    let (pass, all_hold) = match a.suite {
        Suite::Theorem1 => {
            let s = run(theorem1_suite(a.instances, a.seed).map_err(anyhow::Error::from))?;
            run(write_json(&path, &s).map_err(anyhow::Error::from))?;
            (s.pass_fraction, s.counterexamples.is_empty())
        }
        Suite::Theorem2 => {
            let s = run(theorem2_suite(a.instances, a.seed).map_err(anyhow::Error::from))?;
            run(write_json(&path, &s).map_err(anyhow::Error::from))?;
            (s.pass_fraction, s.pass_fraction == 1.0)
        }
    };
    println!("wrote {} (pass fraction {pass:.3})", path.display());
    if !all_hold {
        println!("counterexamples recorded in the report");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::EvalAttack(a) => cmd_eval(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Hist(a) => cmd_hist(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Oracle(a) => cmd_oracle(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
