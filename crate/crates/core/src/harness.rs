//! Experiment orchestration: attacked evaluation, budget sweeps, action
//! displacement histograms, loss ablations, and their CSV/JSON outputs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attacks::{
    run_attack, AttackConfig, AttackMethod, AttackOutcome, PerturbationBudget, Victim,
};
use crate::autodiff::Tensor;
use crate::checkpoint::Checkpoint;
use crate::env::{Env, ScenarioConfig, ScenarioName};
use crate::error::{Error, Result};
use crate::madrl::Algo;
use crate::seeding::{derive_seed, streams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub scenario: ScenarioName,
    pub algo: Algo,
    pub checkpoint: PathBuf,
    pub attack: AttackConfig,
    pub budget: PerturbationBudget,
    pub n_seeds: usize,
    pub episodes_per_seed: usize,
    /// Seed `j` of the run uses base seed `seed + j`.
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Row label in the metrics table; defaults to `{scenario}-{algo}`.
    pub model: Option<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioName::Pp3a,
            algo: Algo::Facmac,
            checkpoint: PathBuf::from("ckpt"),
            attack: AttackConfig::default(),
            budget: PerturbationBudget::default(),
            n_seeds: 5,
            episodes_per_seed: 100,
            seed: 0,
            output_dir: PathBuf::from("out"),
            model: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn model_label(&self) -> String {
        self.model
            .clone()
            .unwrap_or_else(|| format!("{}-{}", self.scenario, self.algo))
    }

    pub fn protocol(&self) -> Protocol {
        Protocol {
            n_seeds: self.n_seeds,
            episodes_per_seed: self.episodes_per_seed,
            seed: self.seed,
        }
    }

    /// Checks the numeric fields, loads the checkpoint and verifies that it
    /// matches the configured scenario and algorithm.
    pub fn load_checkpoint(&self) -> Result<Checkpoint> {
        self.protocol().validate()?;
        self.budget.validate()?;
        if !self.checkpoint.exists() {
            return Err(Error::InvalidArgument(format!(
                "checkpoint {} does not exist",
                self.checkpoint.display()
            )));
        }
        let ckpt = Checkpoint::load(&self.checkpoint)?;
        if ckpt.scenario != self.scenario {
            return Err(Error::InvalidArgument(format!(
                "checkpoint scenario {} does not match configured {}",
                ckpt.scenario, self.scenario
            )));
        }
        if ckpt.algo != self.algo {
            return Err(Error::InvalidArgument(format!(
                "checkpoint algorithm {} does not match configured {}",
                ckpt.algo, self.algo
            )));
        }
        self.attack.validate(ckpt.n_agents())?;
        Ok(ckpt)
    }
}

/// Seeds and episode counts shared by every evaluation of one experiment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Protocol {
    pub n_seeds: usize,
    pub episodes_per_seed: usize,
    pub seed: u64,
}

impl Protocol {
    pub fn validate(&self) -> Result<()> {
        if self.n_seeds == 0 || self.episodes_per_seed == 0 {
            return Err(Error::InvalidArgument(
                "n_seeds and episodes_per_seed must be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn run_seed(&self, j: usize) -> u64 {
        self.seed.wrapping_add(j as u64)
    }
}

/// Per-timestep record passed to episode observers.
pub struct StepView<'a> {
    pub t: usize,
    /// Clean observations the attack started from.
    pub observations: &'a Tensor,
    pub outcome: &'a AttackOutcome,
    pub reward: f64,
}

/// Plays one greedy episode under attack. The environment is seeded with
/// `derive_seed(run_seed, EVAL_ENV, episode)` and the attack stream with
/// `derive_seed(run_seed, ATTACK, episode)`.
pub fn attacked_episode(
    ckpt: &Checkpoint,
    scenario: &ScenarioConfig,
    attack: &AttackConfig,
    budget: &PerturbationBudget,
    run_seed: u64,
    episode: usize,
    mut observe: impl FnMut(StepView<'_>) -> Result<()>,
) -> Result<f64> {
    let victim = Victim {
        actors: &ckpt.actors,
        critic: &ckpt.critic,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(run_seed, streams::ATTACK, episode as u64));
    let (mut env, mut obs) = Env::new(
        scenario.clone(),
        derive_seed(run_seed, streams::EVAL_ENV, episode as u64),
    );
    let mut total = 0.0;
    for t in 0.. {
        let out = run_attack(&obs, victim, budget, attack, &mut rng)?;
        let r = env.step(&out.final_action)?;
        total += r.team_reward;
        observe(StepView {
            t,
            observations: &obs,
            outcome: &out,
            reward: r.team_reward,
        })?;
        obs = r.next_observations;
        if r.done {
            break;
        }
    }
    Ok(total)
}

/// Episode returns of one seed of an evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub returns: Vec<f64>,
}

impl SeedRun {
    pub fn mean(&self) -> f64 {
        self.returns.iter().sum::<f64>() / self.returns.len() as f64
    }

    /// Population variance over episodes.
    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.returns.iter().map(|x| (x - m).powi(2)).sum::<f64>() / self.returns.len() as f64
    }
}

/// Mean of per-seed means and mean of per-seed variances.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub variance: f64,
    pub std: f64,
    /// `std / sqrt(total episodes)`.
    pub stderr: f64,
}

impl Aggregate {
    pub fn from_runs(runs: &[SeedRun]) -> Self {
        let k = runs.len() as f64;
        let mean = runs.iter().map(SeedRun::mean).sum::<f64>() / k;
        let variance = runs.iter().map(SeedRun::variance).sum::<f64>() / k;
        let episodes: usize = runs.iter().map(|r| r.returns.len()).sum();
        let std = variance.sqrt();
        Self {
            mean,
            variance,
            std,
            stderr: std / (episodes as f64).sqrt(),
        }
    }
}

/// Runs every seed of the protocol; seeds are evaluated in parallel and the
/// result does not depend on the worker count.
pub fn eval_runs(
    ckpt: &Checkpoint,
    attack: &AttackConfig,
    budget: &PerturbationBudget,
    protocol: &Protocol,
) -> Result<Vec<SeedRun>> {
    protocol.validate()?;
    budget.validate()?;
    attack.validate(ckpt.n_agents())?;
    let scenario = ScenarioConfig::new(ckpt.scenario);
    (0..protocol.n_seeds)
        .into_par_iter()
        .map(|j| {
            let seed = protocol.run_seed(j);
            let returns = (0..protocol.episodes_per_seed)
                .map(|k| attacked_episode(ckpt, &scenario, attack, budget, seed, k, |_| Ok(())))
                .collect::<Result<Vec<f64>>>()?;
            Ok(SeedRun { seed, returns })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub model: String,
    pub victims: usize,
    pub method: AttackMethod,
    /// Free-form tag distinguishing rows with the same method, e.g. loss arms.
    pub variant: String,
    pub eps_s: f64,
    pub eps_a: f64,
    pub mean_reward: f64,
    pub var_reward: f64,
    pub std_reward: f64,
    pub stderr_reward: f64,
    pub pct_drop: Option<f64>,
}

pub fn pct_drop(base: f64, attacked: f64) -> f64 {
    (base - attacked) / base.abs() * 100.0
}

impl MetricsRow {
    pub fn new(
        model: &str,
        attack: &AttackConfig,
        budget: &PerturbationBudget,
        agg: &Aggregate,
    ) -> Self {
        Self {
            model: model.to_string(),
            victims: attack.m,
            method: attack.method,
            variant: "default".into(),
            eps_s: budget.eps_s,
            eps_a: budget.eps_a,
            mean_reward: agg.mean,
            var_reward: agg.variance,
            std_reward: agg.std,
            stderr_reward: agg.stderr,
            pct_drop: None,
        }
    }

    pub fn with_baseline(mut self, base_mean: f64) -> Self {
        self.pct_drop = Some(pct_drop(base_mean, self.mean_reward));
        self
    }

    /// The standard-error interval `mean ± stderr`.
    pub fn interval(&self) -> (f64, f64) {
        (
            self.mean_reward - self.stderr_reward,
            self.mean_reward + self.stderr_reward,
        )
    }
}

const METRICS_HEADER: &str =
    "model,victims,method,variant,eps_s,eps_a,mean_reward,var_reward,std_reward,stderr_reward,pct_drop";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub rows: Vec<MetricsRow>,
}

impl MetricsTable {
    pub fn find(&self, victims: usize, method: AttackMethod) -> Option<&MetricsRow> {
        self.rows
            .iter()
            .find(|r| r.victims == victims && r.method == method)
    }

    fn csv_rows(&self) -> String {
        let mut out = String::new();
        for r in &self.rows {
            let drop = r.pct_drop.map(|d| d.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.model,
                r.victims,
                r.method,
                r.variant,
                r.eps_s,
                r.eps_a,
                r.mean_reward,
                r.var_reward,
                r.std_reward,
                r.stderr_reward,
                drop
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_file(path, &format!("{METRICS_HEADER}\n{}", self.csv_rows()))
    }

    /// Appends rows, writing the header first if the file is new.
    pub fn append_csv(&self, path: &Path) -> Result<()> {
        use std::io::Write;
        let fresh = !path.exists();
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        let mut body = String::new();
        if fresh {
            body.push_str(METRICS_HEADER);
            body.push('\n');
        }
        body.push_str(&self.csv_rows());
        f.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let bad = |line: &str| Error::InvalidArgument(format!("malformed metrics line `{line}`"));
        let mut rows = Vec::new();
        for line in text.lines().skip(1).filter(|l| !l.is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 11 {
                return Err(bad(line));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(line));
            rows.push(MetricsRow {
                model: f[0].to_string(),
                victims: f[1].parse().map_err(|_| bad(line))?,
                method: f[2].parse()?,
                variant: f[3].to_string(),
                eps_s: num(f[4])?,
                eps_a: num(f[5])?,
                mean_reward: num(f[6])?,
                var_reward: num(f[7])?,
                std_reward: num(f[8])?,
                stderr_reward: num(f[9])?,
                pct_drop: if f[10].is_empty() {
                    None
                } else {
                    Some(num(f[10])?)
                },
            });
        }
        Ok(Self { rows })
    }
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn raw_log_name(model: &str, attack: &AttackConfig, variant: &str, seed: u64) -> String {
    format!(
        "raw_{model}_{}_{variant}_m{}_seed{seed}.csv",
        attack.method, attack.m
    )
}

/// One CSV per seed with the return of every episode.
pub fn write_raw_logs(
    dir: &Path,
    model: &str,
    attack: &AttackConfig,
    variant: &str,
    runs: &[SeedRun],
) -> Result<()> {
    ensure_dir(dir)?;
    for run in runs {
        let mut body = String::from("episode,reward\n");
        for (k, r) in run.returns.iter().enumerate() {
            let _ = writeln!(body, "{k},{r}");
        }
        write_file(
            &dir.join(raw_log_name(model, attack, variant, run.seed)),
            &body,
        )?;
    }
    Ok(())
}

pub fn read_raw_log(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .skip(1)
        .filter(|l| !l.is_empty())
        .map(|l| {
            l.split(',')
                .nth(1)
                .and_then(|x| x.parse().ok())
                .ok_or_else(|| Error::InvalidArgument(format!("malformed raw log line `{l}`")))
        })
        .collect()
}

/// Evaluates the configured attack and, unless it is the clean method, the
/// no-attack baseline under the same seeds. Returns the attacked row with
/// its reward drop filled in, preceded by the baseline row.
pub fn eval_attack(cfg: &ExperimentConfig) -> Result<MetricsTable> {
    let ckpt = cfg.load_checkpoint()?;
    let table = eval_attack_with(&ckpt, cfg, Some(&cfg.output_dir))?;
    ensure_dir(&cfg.output_dir)?;
    table.append_csv(&cfg.output_dir.join("metrics.csv"))?;
    Ok(table)
}

/// [`eval_attack`] on an in-memory checkpoint; raw logs are written only
/// when `raw_dir` is given.
pub fn eval_attack_with(
    ckpt: &Checkpoint,
    cfg: &ExperimentConfig,
    raw_dir: Option<&Path>,
) -> Result<MetricsTable> {
    let model = cfg.model_label();
    let protocol = cfg.protocol();
    let clean = AttackConfig {
        method: AttackMethod::None,
        ..cfg.attack.clone()
    };
    let base_runs = eval_runs(ckpt, &clean, &cfg.budget, &protocol)?;
    let base = Aggregate::from_runs(&base_runs);
    let mut rows =
        vec![MetricsRow::new(&model, &clean, &cfg.budget, &base).with_baseline(base.mean)];
    if let Some(dir) = raw_dir {
        write_raw_logs(dir, &model, &clean, "default", &base_runs)?;
    }
    if cfg.attack.method != AttackMethod::None {
        let runs = eval_runs(ckpt, &cfg.attack, &cfg.budget, &protocol)?;
        if let Some(dir) = raw_dir {
            write_raw_logs(dir, &model, &cfg.attack, "default", &runs)?;
        }
        rows.push(
            MetricsRow::new(
                &model,
                &cfg.attack,
                &cfg.budget,
                &Aggregate::from_runs(&runs),
            )
            .with_baseline(base.mean),
        );
    }
    Ok(MetricsTable { rows })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub total: f64,
    pub k: usize,
    pub eps_s: f64,
    pub eps_a: f64,
    pub mean_reward: f64,
    pub std_reward: f64,
}

/// Split `k` of `splits` for a total budget: `eps_s = total·k/(splits−1)`,
/// `eps_a = total·(splits−1−k)/(splits−1)`. Endpoints are exact.
pub fn split_budget(total: f64, k: usize, splits: usize) -> PerturbationBudget {
    let d = (splits - 1) as f64;
    PerturbationBudget {
        eps_s: total * (k as f64 / d),
        eps_a: total * ((splits - 1 - k) as f64 / d),
    }
}

/// Evaluates the joint attack on every `(total, split)` cell.
pub fn budget_sweep(
    ckpt: &Checkpoint,
    attack: &AttackConfig,
    protocol: &Protocol,
    totals: &[f64],
    splits_per_total: usize,
) -> Result<Vec<SweepCell>> {
    if splits_per_total < 2 {
        return Err(Error::InvalidArgument(
            "splits_per_total must be at least 2".into(),
        ));
    }
    let attack = attack.with_method(AttackMethod::Saja);
    let mut cells = Vec::with_capacity(totals.len() * splits_per_total);
    for &total in totals {
        for k in 0..splits_per_total {
            let budget = split_budget(total, k, splits_per_total);
            let agg = Aggregate::from_runs(&eval_runs(ckpt, &attack, &budget, protocol)?);
            cells.push(SweepCell {
                total,
                k,
                eps_s: budget.eps_s,
                eps_a: budget.eps_a,
                mean_reward: agg.mean,
                std_reward: agg.std,
            });
        }
    }
    Ok(cells)
}

pub fn write_sweep_csv(path: &Path, cells: &[SweepCell]) -> Result<()> {
    let mut body = String::from("total,k,eps_s,eps_a,mean_reward,std_reward\n");
    for c in cells {
        let _ = writeln!(
            body,
            "{},{},{},{},{},{}",
            c.total, c.k, c.eps_s, c.eps_a, c.mean_reward, c.std_reward
        );
    }
    write_file(path, &body)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramSpec {
    pub bin_width: f64,
    pub cutoff: f64,
}

impl Default for HistogramSpec {
    fn default() -> Self {
        Self {
            bin_width: 0.01,
            cutoff: 0.40,
        }
    }
}

impl HistogramSpec {
    pub fn n_bins(&self) -> usize {
        (self.cutoff / self.bin_width).round() as usize
    }

    /// Bin of `x`, or `None` at or beyond the cutoff.
    pub fn bin(&self, x: f64) -> Option<usize> {
        if !(0.0..self.cutoff).contains(&x) {
            return None;
        }
        Some(((x / self.bin_width).floor() as usize).min(self.n_bins() - 1))
    }
}

/// `‖a″ − a⁰‖₂ / m` over the victim rows of one timestep.
pub fn action_displacement(outcome: &AttackOutcome, m: usize) -> f64 {
    outcome.diagnostics.l2_action_diff / m as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub method: AttackMethod,
    pub counts: Vec<usize>,
    /// Timesteps at or beyond the cutoff.
    pub omitted: usize,
    /// Raw per-timestep displacements.
    pub values: Vec<f64>,
}

impl Histogram {
    pub fn from_values(method: AttackMethod, values: Vec<f64>, spec: &HistogramSpec) -> Self {
        let mut counts = vec![0; spec.n_bins()];
        let mut omitted = 0;
        for &v in &values {
            match spec.bin(v) {
                Some(b) => counts[b] += 1,
                None => omitted += 1,
            }
        }
        Self {
            method,
            counts,
            omitted,
            values,
        }
    }

    /// First bin with the largest count.
    pub fn peak_bin(&self) -> usize {
        let max = self.counts.iter().copied().max().unwrap_or(0);
        self.counts.iter().position(|&c| c == max).unwrap_or(0)
    }
}

/// Collects exactly `timesteps` attacked steps per method, playing whole
/// episodes with seeds `0, 1, …` of `protocol.seed` and truncating the last.
pub fn action_diff_histogram(
    ckpt: &Checkpoint,
    attack: &AttackConfig,
    budget: &PerturbationBudget,
    methods: &[AttackMethod],
    timesteps: usize,
    seed: u64,
    spec: &HistogramSpec,
) -> Result<Vec<Histogram>> {
    if attack.m == 0 {
        return Err(Error::InvalidArgument(
            "histogram needs at least one victim".into(),
        ));
    }
    let scenario = ScenarioConfig::new(ckpt.scenario);
    methods
        .par_iter()
        .map(|&method| {
            let cfg = attack.with_method(method);
            let mut values = Vec::with_capacity(timesteps);
            let mut episode = 0;
            while values.len() < timesteps {
                attacked_episode(ckpt, &scenario, &cfg, budget, seed, episode, |v| {
                    if values.len() < timesteps {
                        values.push(action_displacement(v.outcome, cfg.m));
                    }
                    Ok(())
                })?;
                episode += 1;
            }
            Ok(Histogram::from_values(method, values, spec))
        })
        .collect()
}

pub fn write_hist_csv(path: &Path, hists: &[Histogram], spec: &HistogramSpec) -> Result<()> {
    let mut body = String::from("method,bin,bin_start,count\n");
    for h in hists {
        for (b, c) in h.counts.iter().enumerate() {
            let _ = writeln!(
                body,
                "{},{},{},{}",
                h.method,
                b,
                b as f64 * spec.bin_width,
                c
            );
        }
    }
    write_file(path, &body)
}

/// The three loss-weight arms: value only, action distance only, balanced.
pub const HLF_ARMS: [(&str, f64, f64); 3] = [
    ("q_only", 1.0 - 1e-6, 1e-6),
    ("action_only", 1e-6, 1.0 - 1e-6),
    ("balanced", 0.01, 0.99),
];

/// Joint attack under each loss arm for every victim count, with the clean
/// baseline per victim count; all arms share seeds.
pub fn ablate_hlf(
    ckpt: &Checkpoint,
    model: &str,
    attack: &AttackConfig,
    budget: &PerturbationBudget,
    protocol: &Protocol,
    victims: &[usize],
) -> Result<MetricsTable> {
    let clean = AttackConfig {
        method: AttackMethod::None,
        ..attack.clone()
    };
    let base = Aggregate::from_runs(&eval_runs(ckpt, &clean, budget, protocol)?);
    let mut rows = vec![MetricsRow::new(model, &clean, budget, &base).with_baseline(base.mean)];
    for &m in victims {
        for (name, alpha, beta) in HLF_ARMS {
            let cfg = AttackConfig {
                method: AttackMethod::Saja,
                m,
                alpha1: alpha,
                beta1: beta,
                alpha2: alpha,
                beta2: beta,
                ..attack.clone()
            };
            let agg = Aggregate::from_runs(&eval_runs(ckpt, &cfg, budget, protocol)?);
            let mut row = MetricsRow::new(model, &cfg, budget, &agg).with_baseline(base.mean);
            row.variant = name.to_string();
            rows.push(row);
        }
    }
    Ok(MetricsTable { rows })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_file(path, &serde_json::to_string_pretty(value)?)
}
