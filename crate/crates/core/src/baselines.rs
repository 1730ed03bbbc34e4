//! Comparison policies and Monte Carlo execution.
//!
//! All three baselines see the same precondition estimates as the planner and
//! emit a fixed action sequence, so their plans are scored with the same
//! expected-cost model.

use std::io::Write;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::planner::{Action, Plan, PlanInstance, SolverMeta};
use crate::seed;

fn finish(inst: &PlanInstance, actions: Vec<Action>, start: Instant) -> Result<Plan> {
    Plan::from_actions(
        inst,
        actions,
        SolverMeta {
            lower_bound: None,
            gap: None,
            nodes_expanded: 0,
            wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
        },
    )
}

/// Act-Delegate: per task, the cheaper of acting with the pretrained library
/// and delegating. Never teaches.
pub fn plan_ad(inst: &PlanInstance) -> Result<Plan> {
    let start = Instant::now();
    let actions = (0..inst.n)
        .map(|i| {
            if inst.act_cost(i, inst.rho0[i]) <= inst.costs[i].c_hum {
                Action::Act
            } else {
                Action::Delegate
            }
        })
        .collect();
    finish(inst, actions, start)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CbaConfig {
    pub theta: f64,
}

impl CbaConfig {
    pub fn new(theta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&theta) {
            return Err(Error::Invalid(format!("theta {theta} outside [0, 1]")));
        }
        Ok(CbaConfig { theta })
    }
}

/// Confidence-based autonomy: act when the best known success probability is
/// strictly above `theta`, otherwise ask for a demonstration. Skills from
/// earlier demonstrations count. Never delegates.
pub fn plan_cba(inst: &PlanInstance, cfg: CbaConfig) -> Result<Plan> {
    let start = Instant::now();
    let mut actions: Vec<Action> = Vec::with_capacity(inst.n);
    for i in 0..inst.n {
        let (p, _) = inst.best_skill(i, |j| j < i && actions[j] == Action::Learn);
        actions.push(if p > cfg.theta { Action::Act } else { Action::Learn });
    }
    finish(inst, actions, start)
}

/// Act-Learn myopic: per task, the cheaper immediate expected cost of acting
/// and teaching (ties act). Skills from earlier demonstrations count. Never
/// delegates.
pub fn plan_alm(inst: &PlanInstance) -> Result<Plan> {
    let start = Instant::now();
    let mut actions: Vec<Action> = Vec::with_capacity(inst.n);
    for i in 0..inst.n {
        let taught = |j: usize| j < i && actions[j] == Action::Learn;
        let act = inst.task_cost(i, Action::Act, taught);
        let learn = inst.task_cost(i, Action::Learn, taught);
        actions.push(if act <= learn { Action::Act } else { Action::Learn });
    }
    finish(inst, actions, start)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskOutcome {
    pub action: Action,
    pub success: bool,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionTrace {
    pub tasks: Vec<TaskOutcome>,
    pub total_cost: f64,
    pub seed: u64,
}

impl ExecutionTrace {
    pub fn failures(&self) -> usize {
        self.tasks.iter().filter(|t| !t.success).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExecutionSummary {
    pub trials: usize,
    pub expected: f64,
    pub realized_mean: f64,
    pub std_error: f64,
    pub demos: usize,
    pub delegations: usize,
    /// Mean human interventions per run: delegations plus failure recoveries.
    pub interventions: f64,
    /// Mean failed robot attempts per run.
    pub failures: f64,
}

/// Execute `plan` `trials` times with Bernoulli outcomes for every autonomous
/// attempt. Trial `t` draws from its own stream derived from `seed`.
pub fn simulate_execution(
    inst: &PlanInstance,
    plan: &Plan,
    trials: usize,
    seed: u64,
) -> Result<(Vec<ExecutionTrace>, ExecutionSummary)> {
    if trials == 0 {
        return Err(Error::Invalid("trials must be >= 1".into()));
    }
    let actions = &plan.actions;
    let expected = crate::planner::expected_plan_cost(inst, actions)?;
    let probs: Vec<(f64, f64)> = plan.breakdown(inst);
    let mut traces = Vec::with_capacity(trials);
    for t in 0..trials {
        let trial_seed = seed::derive(seed, &[seed::TRIAL, t as u64]);
        let mut rng = seed::rng(trial_seed, &[]);
        let mut tasks = Vec::with_capacity(inst.n);
        for (i, &a) in actions.iter().enumerate() {
            let c = &inst.costs[i];
            let p = probs[i].0;
            let outcome = match a {
                Action::Delegate => TaskOutcome {
                    action: a,
                    success: true,
                    cost: c.c_hum,
                },
                Action::Act => {
                    let ok = rng.random::<f64>() < p;
                    TaskOutcome {
                        action: a,
                        success: ok,
                        cost: if ok { c.c_rob } else { c.c_rob + c.c_fail },
                    }
                }
                Action::Learn => {
                    let base = inst.learn_cost(i, 1.0);
                    let residual = inst.learn_cost(i, p) - base;
                    if residual > 0.0 {
                        let ok = rng.random::<f64>() < p;
                        TaskOutcome {
                            action: a,
                            success: ok,
                            cost: if ok { base } else { base + c.c_fail },
                        }
                    } else {
                        TaskOutcome {
                            action: a,
                            success: true,
                            cost: base,
                        }
                    }
                }
            };
            tasks.push(outcome);
        }
        let total_cost = tasks.iter().map(|o| o.cost).sum();
        traces.push(ExecutionTrace {
            tasks,
            total_cost,
            seed: trial_seed,
        });
    }

    let n = trials as f64;
    let mean = traces.iter().map(|t| t.total_cost).sum::<f64>() / n;
    let var = if trials > 1 {
        traces
            .iter()
            .map(|t| (t.total_cost - mean).powi(2))
            .sum::<f64>()
            / (n - 1.0)
    } else {
        0.0
    };
    let failures = traces.iter().map(|t| t.failures()).sum::<usize>() as f64 / n;
    let delegations = plan.count(Action::Delegate);
    let summary = ExecutionSummary {
        trials,
        expected,
        realized_mean: mean,
        std_error: (var / n).sqrt(),
        demos: plan.count(Action::Learn),
        delegations,
        interventions: delegations as f64 + failures,
        failures,
    };
    Ok((traces, summary))
}

/// Header of the per-method summary CSV.
pub const SUMMARY_HEADER: [&str; 8] = [
    "method",
    "seed",
    "objective",
    "realized_mean",
    "demos",
    "delegations",
    "interventions",
    "failures",
];

pub fn write_summary_csv<W: Write>(
    out: W,
    rows: &[(String, u64, f64, ExecutionSummary)],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_HEADER)?;
    for (method, seed, objective, s) in rows {
        w.write_record([
            method.clone(),
            seed.to_string(),
            objective.to_string(),
            s.realized_mean.to_string(),
            s.demos.to_string(),
            s.delegations.to_string(),
            s.interventions.to_string(),
            s.failures.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::Invalid(e.to_string()))?;
    Ok(())
}
