//! Experiment harness: compares the planner against the baselines over
//! levels of pretraining and random task sequences.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{plan_ad, plan_alm, plan_cba, simulate_execution, CbaConfig};
use crate::coverage::{get_training_data, BlockSim, CoverageSim, Dataset, SimConfig, SkillSimulator};
use crate::error::{Error, Result};
use crate::planner::{build_instance, plan_bnb, plan_greedy_facility, Mode, Plan, PlanInstance};
use crate::precond::{train, PreconditionModel, TrainConfig, TrainReport};
use crate::seed;
use crate::task::{
    generate_block_tasks, generate_grid_part_tasks, pretrain_library, CostVector, SkillLibrary, Task,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Block,
    GridPart,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Overlap {
    Allow,
    #[default]
    Exclude,
}

fn default_thetas() -> Vec<f64> {
    vec![0.2, 0.5]
}
fn default_trials() -> usize {
    1000
}
fn default_families() -> usize {
    15
}
fn default_per_family() -> usize {
    10
}
fn default_envs() -> usize {
    4
}
fn default_block_pool() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub domain: Domain,
    /// Length of each planned task sequence.
    pub n_tasks: usize,
    pub pretrain_levels: Vec<usize>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub costs: CostVector,
    #[serde(default = "default_thetas")]
    pub cba_thetas: Vec<f64>,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub pretrain_overlap: Overlap,
    /// Root of the task-generation, simulation and model-training streams.
    #[serde(default)]
    pub root_seed: u64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_families")]
    pub families: usize,
    #[serde(default = "default_per_family")]
    pub per_family: usize,
    #[serde(default = "default_envs")]
    pub envs: usize,
    #[serde(default = "default_block_pool")]
    pub block_pool: usize,
    /// Evaluation-set and training-set sizes for label collection; default is
    /// the whole pool for both.
    #[serde(default)]
    pub data_m: Option<usize>,
    #[serde(default)]
    pub data_n: Option<usize>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub block_sim: BlockSim,
}

const REQUIRED: [&str; 4] = ["domain", "n_tasks", "pretrain_levels", "seeds"];

impl ExperimentConfig {
    pub fn new(domain: Domain, n_tasks: usize, pretrain_levels: Vec<usize>, seeds: Vec<u64>) -> Self {
        let value = serde_json::json!({
            "domain": domain,
            "n_tasks": n_tasks,
            "pretrain_levels": pretrain_levels,
            "seeds": seeds,
        });
        serde_json::from_value(value).expect("minimal config deserializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let obj = value
            .as_object()
            .ok_or_else(|| Error::Invalid("config must be a JSON object".into()))?;
        let missing: Vec<String> = REQUIRED
            .iter()
            .filter(|k| !obj.contains_key(**k))
            .map(|k| k.to_string())
            .collect();
        if !missing.is_empty() {
            return Err(Error::MissingFields(missing));
        }
        let cfg: ExperimentConfig = serde_json::from_value(value)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn pool_size(&self) -> usize {
        match self.domain {
            Domain::GridPart => self.families * self.per_family,
            Domain::Block => self.block_pool,
        }
    }

    /// Tasks a sequence can be drawn from: shape families or the block pool.
    fn ground_set_size(&self) -> usize {
        match self.domain {
            Domain::GridPart => self.families,
            Domain::Block => self.block_pool,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Invalid("seeds must be nonempty".into()));
        }
        if self.pretrain_levels.is_empty() {
            return Err(Error::Invalid("pretrain_levels must be nonempty".into()));
        }
        if self.n_tasks == 0 || self.n_tasks > self.ground_set_size() {
            return Err(Error::Invalid(format!(
                "n_tasks must be in 1..={}",
                self.ground_set_size()
            )));
        }
        let available = match self.pretrain_overlap {
            Overlap::Allow => self.pool_size(),
            Overlap::Exclude => self.pool_size() - self.n_tasks,
        };
        if let Some(&l) = self.pretrain_levels.iter().find(|&&l| l > available) {
            return Err(Error::Invalid(format!(
                "pretrain level {l} exceeds the {available} available training tasks"
            )));
        }
        for &t in &self.cba_thetas {
            CbaConfig::new(t)?;
        }
        if self.trials == 0 {
            return Err(Error::Invalid("trials must be >= 1".into()));
        }
        self.costs.validate()?;
        self.sim.validate()?;
        self.train.validate()
    }
}

/// Task pool, simulator and trained precondition model for one config.
pub struct BenchContext {
    pub pool: Vec<Task>,
    pub sim: Box<dyn SkillSimulator>,
    pub dataset: Dataset,
    pub model: PreconditionModel,
    pub report: TrainReport,
}

pub fn make_pool(cfg: &ExperimentConfig) -> Vec<Task> {
    let mut pool = match cfg.domain {
        Domain::GridPart => generate_grid_part_tasks(cfg.pool_size(), cfg.root_seed, cfg.families),
        Domain::Block => generate_block_tasks(cfg.block_pool, cfg.root_seed, cfg.envs),
    };
    for t in &mut pool {
        t.costs = cfg.costs;
    }
    pool
}

pub fn make_sim(cfg: &ExperimentConfig) -> Box<dyn SkillSimulator> {
    match cfg.domain {
        Domain::GridPart => Box::new(CoverageSim::new(SimConfig {
            seed: cfg.root_seed,
            ..cfg.sim
        })),
        Domain::Block => Box::new(BlockSim {
            seed: cfg.root_seed,
            ..cfg.block_sim
        }),
    }
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<BenchContext> {
    cfg.validate()?;
    let pool = make_pool(cfg);
    let sim = make_sim(cfg);
    let m = cfg.data_m.unwrap_or(pool.len());
    let n = cfg.data_n.unwrap_or(pool.len());
    let dataset = get_training_data(m, n, &pool, sim.as_ref(), cfg.root_seed)?;
    let train_cfg = TrainConfig {
        seed: cfg.root_seed,
        ..cfg.train
    };
    let (model, report) = train(&dataset, &train_cfg)?;
    log::info!(
        "precondition model: {} rows, positive rate {:.3}, validation AUC {:?}",
        dataset.len(),
        dataset.positive_rate(),
        report.validation_auc
    );
    Ok(BenchContext {
        pool,
        sim,
        dataset,
        model,
        report,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub level: usize,
    pub seed: u64,
    pub method: String,
    pub objective: f64,
    pub realized_mean: f64,
    pub demos: usize,
    pub delegations: usize,
    pub failures: f64,
    pub wall_time_ms: f64,
}

pub const RESULTS_HEADER: [&str; 9] = [
    "level",
    "seed",
    "method",
    "objective",
    "realized_mean",
    "demos",
    "delegations",
    "failures",
    "wall_time_ms",
];

/// One planned sequence: the instance and every method's plan.
#[derive(Debug, Clone)]
pub struct BenchCase {
    pub level: usize,
    pub seed: u64,
    pub task_ids: Vec<usize>,
    pub instance: PlanInstance,
    pub plans: Vec<(String, Plan)>,
}

impl BenchCase {
    pub fn plan(&self, method: &str) -> Option<&Plan> {
        self.plans.iter().find(|(m, _)| m == method).map(|(_, p)| p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSummary {
    pub level: usize,
    pub mean_objective: BTreeMap<String, f64>,
    pub best_baseline: String,
    /// Best baseline mean minus planner mean.
    pub adl_advantage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSummary {
    pub levels: Vec<LevelSummary>,
    /// Greedy objective over optimal objective, per row.
    pub greedy_ratio_mean: f64,
    pub greedy_ratio_max: f64,
}

pub struct BenchResults {
    pub rows: Vec<BenchRow>,
    pub cases: Vec<BenchCase>,
    pub summary: BenchSummary,
}

pub const ADL: &str = "adl";
pub const GREEDY: &str = "greedy";

pub fn is_baseline(method: &str) -> bool {
    method != ADL && method != GREEDY
}

/// Sample a test sequence. Grid parts: distinct shape families, one random
/// instance of each. Blocks: distinct pool tasks.
fn sample_sequence(cfg: &ExperimentConfig, pool: &[Task], rng: &mut impl Rng) -> Vec<usize> {
    match cfg.domain {
        Domain::GridPart => index::sample(rng, cfg.families, cfg.n_tasks)
            .into_iter()
            .map(|f| f * cfg.per_family + rng.random_range(0..cfg.per_family))
            .collect(),
        Domain::Block => index::sample(rng, pool.len(), cfg.n_tasks).into_vec(),
    }
}

/// Plan one (level, seed) case with every method.
pub fn run_case(cfg: &ExperimentConfig, ctx: &BenchContext, level: usize, seed: u64) -> Result<BenchCase> {
    let case_seed = seed::derive(cfg.root_seed, &[seed::BENCH, seed]);
    let mut rng = seed::rng(case_seed, &[]);
    let seq = sample_sequence(cfg, &ctx.pool, &mut rng);
    let tasks: Vec<Task> = seq.iter().map(|&i| ctx.pool[i].clone()).collect();
    let candidates: Vec<Task> = match cfg.pretrain_overlap {
        Overlap::Allow => ctx.pool.clone(),
        Overlap::Exclude => ctx
            .pool
            .iter()
            .enumerate()
            .filter(|(i, _)| !seq.contains(i))
            .map(|(_, t)| t.clone())
            .collect(),
    };
    let library: SkillLibrary = pretrain_library(&candidates, level, case_seed, ctx.sim.as_ref())?;
    let instance = build_instance(&tasks, &library, &ctx.model, cfg.mode)?;

    let mut plans = vec![
        (ADL.to_string(), plan_bnb(&instance, 0.0)?),
        (GREEDY.to_string(), plan_greedy_facility(&instance)?),
        ("ad".to_string(), plan_ad(&instance)?),
    ];
    for &theta in &cfg.cba_thetas {
        plans.push((format!("cba({theta})"), plan_cba(&instance, CbaConfig::new(theta)?)?));
    }
    plans.push(("alm".to_string(), plan_alm(&instance)?));

    let adl = plans[0].1.objective;
    for (m, p) in &plans[1..] {
        if p.objective < adl - 1e-9 * adl.abs().max(1.0) {
            return Err(Error::Invalid(format!(
                "level {level} seed {seed}: {m} objective {} beats optimal {adl}",
                p.objective
            )));
        }
    }
    Ok(BenchCase {
        level,
        seed,
        task_ids: tasks.iter().map(|t| t.id).collect(),
        instance,
        plans,
    })
}

pub fn run_bench(cfg: &ExperimentConfig, ctx: &BenchContext) -> Result<BenchResults> {
    let mut rows = Vec::new();
    let mut cases = Vec::new();
    for &level in &cfg.pretrain_levels {
        for &seed in &cfg.seeds {
            let t0 = Instant::now();
            let case = run_case(cfg, ctx, level, seed)?;
            log::debug!("level {level} seed {seed}: {:.1} ms", t0.elapsed().as_secs_f64() * 1e3);
            let mc_seed = seed::derive(cfg.root_seed, &[seed::BENCH, level as u64, seed]);
            for (method, plan) in &case.plans {
                let (_, s) = simulate_execution(&case.instance, plan, cfg.trials, mc_seed)?;
                rows.push(BenchRow {
                    level,
                    seed,
                    method: method.clone(),
                    objective: plan.objective,
                    realized_mean: s.realized_mean,
                    demos: s.demos,
                    delegations: s.delegations,
                    failures: s.failures,
                    wall_time_ms: plan.meta.wall_time_ms,
                });
            }
            cases.push(case);
        }
    }
    let summary = summarize(cfg, &rows);
    Ok(BenchResults {
        rows,
        cases,
        summary,
    })
}

pub fn summarize(cfg: &ExperimentConfig, rows: &[BenchRow]) -> BenchSummary {
    let mut levels = Vec::new();
    for &level in &cfg.pretrain_levels {
        let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for r in rows.iter().filter(|r| r.level == level) {
            let e = sums.entry(r.method.clone()).or_default();
            e.0 += r.objective;
            e.1 += 1;
        }
        let mean: BTreeMap<String, f64> = sums
            .into_iter()
            .map(|(m, (s, c))| (m, s / c as f64))
            .collect();
        let (best_baseline, best) = mean
            .iter()
            .filter(|(m, _)| is_baseline(m))
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(m, v)| (m.clone(), *v))
            .unwrap_or_default();
        let adl = mean.get(ADL).copied().unwrap_or(f64::NAN);
        levels.push(LevelSummary {
            level,
            mean_objective: mean,
            best_baseline,
            adl_advantage: best - adl,
        });
    }
    let mut ratios = Vec::new();
    let mut adl_by_case = BTreeMap::new();
    for r in rows.iter().filter(|r| r.method == ADL) {
        adl_by_case.insert((r.level, r.seed), r.objective);
    }
    for r in rows.iter().filter(|r| r.method == GREEDY) {
        if let Some(&opt) = adl_by_case.get(&(r.level, r.seed)) {
            ratios.push(if opt > 0.0 { r.objective / opt } else { 1.0 });
        }
    }
    BenchSummary {
        levels,
        greedy_ratio_mean: ratios.iter().sum::<f64>() / ratios.len().max(1) as f64,
        greedy_ratio_max: ratios.iter().copied().fold(1.0, f64::max),
    }
}

pub fn write_results_csv(rows: &[BenchRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(RESULTS_HEADER)?;
    for r in rows {
        w.write_record([
            r.level.to_string(),
            r.seed.to_string(),
            r.method.clone(),
            r.objective.to_string(),
            r.realized_mean.to_string(),
            r.demos.to_string(),
            r.delegations.to_string(),
            r.failures.to_string(),
            format!("{:.3}", r.wall_time_ms),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

impl BenchSummary {
    pub fn render(&self) -> String {
        use std::fmt::Write as _;
        let mut s = String::new();
        for l in &self.levels {
            let _ = writeln!(s, "level {}:", l.level);
            for (m, v) in &l.mean_objective {
                let _ = writeln!(s, "  {m:<10} {v:>10.3}");
            }
            let _ = writeln!(
                s,
                "  adl advantage over {}: {:.3}",
                l.best_baseline, l.adl_advantage
            );
        }
        let _ = writeln!(
            s,
            "greedy / optimal: mean {:.4}, max {:.4}",
            self.greedy_ratio_mean, self.greedy_ratio_max
        );
        s
    }
}
