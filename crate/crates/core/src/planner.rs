//! Act / delegate / learn planning over a fixed task sequence.
//!
//! A [`PlanInstance`] holds everything the planners need: the success
//! probability of the pretrained library on each task, the predicted success
//! of a skill taught on an earlier task when applied to a later one, and the
//! per-task costs. Four planners are provided:
//!
//! - [`plan_exhaustive`]: enumerates every set of taught tasks.
//! - [`plan_ssp_dp`]: dynamic program over (task index, taught set).
//! - [`plan_bnb`]: branch and bound on the teach decisions.
//! - [`plan_greedy_facility`]: greedy facility-location heuristic.
//!
//! Once the taught set is fixed, every other task independently takes the
//! cheaper of acting and delegating, so all exact planners only search over
//! teach decisions.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::precond::PreconditionModel;
use crate::task::{read_json, write_json, CostVector, SkillLibrary, Task};

/// Largest instance the enumeration-based planners accept.
pub const EXACT_LIMIT: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Teaching costs exactly `c_demo`.
    #[default]
    MdpConsistent,
    /// Teaching also pays `c_fail` times the residual failure probability of
    /// the best skill available for that task, its own new skill included.
    LiteralPaper,
}

/// Variant order is the tie-break preference: act, then delegate, then learn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Act,
    Delegate,
    Learn,
}

impl Action {
    pub fn as_str(self) -> &'static str {
        match self {
            Action::Act => "act",
            Action::Delegate => "delegate",
            Action::Learn => "learn",
        }
    }
}

/// Which skill an acting task relies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Serving {
    Pretrained,
    /// Skill taught on the task at this (0-based) sequence position.
    LearnedFrom(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "InstanceFile", try_from = "InstanceFile")]
pub struct PlanInstance {
    pub n: usize,
    pub rho0: Vec<f64>,
    /// Row `i` has `i + 1` entries: `rho[i][j]` is the success on task `i` of
    /// a skill taught on task `j <= i`.
    pub rho: Vec<Vec<f64>>,
    pub costs: Vec<CostVector>,
    pub mode: Mode,
}

#[derive(Serialize, Deserialize)]
struct InstanceFile {
    n: usize,
    rho0: Vec<f64>,
    rho: Vec<Vec<Option<f64>>>,
    costs: Vec<CostVector>,
    mode: Mode,
}

impl From<PlanInstance> for InstanceFile {
    fn from(inst: PlanInstance) -> Self {
        let n = inst.n;
        InstanceFile {
            n,
            rho0: inst.rho0,
            rho: inst
                .rho
                .into_iter()
                .map(|row| {
                    let mut full: Vec<Option<f64>> = row.into_iter().map(Some).collect();
                    full.resize(n, None);
                    full
                })
                .collect(),
            costs: inst.costs,
            mode: inst.mode,
        }
    }
}

impl TryFrom<InstanceFile> for PlanInstance {
    type Error = Error;

    fn try_from(f: InstanceFile) -> Result<Self> {
        if f.rho.len() != f.n {
            return Err(Error::Invalid(format!("rho has {} rows, expected {}", f.rho.len(), f.n)));
        }
        let mut rho = Vec::with_capacity(f.n);
        for (i, row) in f.rho.into_iter().enumerate() {
            if row.len() != f.n {
                return Err(Error::Invalid(format!("rho row {i} has {} entries", row.len())));
            }
            let lower: Option<Vec<f64>> = row[..=i].iter().copied().collect();
            let lower = lower.ok_or_else(|| {
                Error::Invalid(format!("rho row {i} has nulls on or below the diagonal"))
            })?;
            if row[i + 1..].iter().any(Option::is_some) {
                return Err(Error::Invalid(format!("rho row {i} has values above the diagonal")));
            }
            rho.push(lower);
        }
        PlanInstance::new(f.rho0, rho, f.costs, f.mode)
    }
}

impl PlanInstance {
    pub fn new(rho0: Vec<f64>, rho: Vec<Vec<f64>>, costs: Vec<CostVector>, mode: Mode) -> Result<Self> {
        let inst = PlanInstance {
            n: rho0.len(),
            rho0,
            rho,
            costs,
            mode,
        };
        inst.validate()?;
        Ok(inst)
    }

    /// Instance with every cross-task probability zero.
    pub fn isolated(rho0: Vec<f64>, costs: Vec<CostVector>, mode: Mode) -> Result<Self> {
        let rho = (0..rho0.len()).map(|i| vec![0.0; i + 1]).collect();
        Self::new(rho0, rho, costs, mode)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n;
        if self.rho0.len() != n || self.rho.len() != n || self.costs.len() != n {
            return Err(Error::Invalid("instance vectors must all have length n".into()));
        }
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if !self.rho0.iter().copied().all(prob) {
            return Err(Error::Invalid("rho0 entries must lie in [0, 1]".into()));
        }
        for (i, row) in self.rho.iter().enumerate() {
            if row.len() != i + 1 || !row.iter().copied().all(prob) {
                return Err(Error::Invalid(format!("rho row {i} malformed")));
            }
        }
        self.costs.iter().try_for_each(CostVector::validate)
    }

    pub fn scaled_costs(&self, lambda: f64) -> Self {
        PlanInstance {
            costs: self.costs.iter().map(|c| c.scaled(lambda)).collect(),
            ..self.clone()
        }
    }

    pub fn with_mode(&self, mode: Mode) -> Self {
        PlanInstance {
            mode,
            ..self.clone()
        }
    }

    /// Best success probability on task `i` given which tasks are taught,
    /// and the skill that achieves it (pretrained wins ties, then the
    /// earliest teaching).
    pub fn best_skill(&self, i: usize, taught: impl Fn(usize) -> bool) -> (f64, Serving) {
        let mut best = (self.rho0[i], Serving::Pretrained);
        for (j, &p) in self.rho[i].iter().enumerate() {
            if p > best.0 && taught(j) {
                best = (p, Serving::LearnedFrom(j));
            }
        }
        best
    }

    pub fn act_cost(&self, i: usize, p: f64) -> f64 {
        let c = &self.costs[i];
        c.c_rob + (1.0 - p) * c.c_fail
    }

    /// Cost of teaching on task `i`; `p_with_own` is the best success on `i`
    /// with the newly taught skill included.
    pub fn learn_cost(&self, i: usize, p_with_own: f64) -> f64 {
        let c = &self.costs[i];
        match self.mode {
            Mode::MdpConsistent => c.c_demo,
            Mode::LiteralPaper => c.c_demo + (1.0 - p_with_own) * c.c_fail,
        }
    }

    /// Expected cost of task `i` under action `a`, given the taught set.
    pub fn task_cost(&self, i: usize, a: Action, taught: impl Fn(usize) -> bool) -> f64 {
        match a {
            Action::Delegate => self.costs[i].c_hum,
            Action::Act => self.act_cost(i, self.best_skill(i, taught).0),
            Action::Learn => {
                let p = self.best_skill(i, |j| j == i || taught(j)).0;
                self.learn_cost(i, p)
            }
        }
    }

    /// Cheaper of acting and delegating on a task that is not taught; ties act.
    fn settle(&self, i: usize, taught: impl Fn(usize) -> bool) -> (Action, f64) {
        let act = self.task_cost(i, Action::Act, taught);
        let hum = self.costs[i].c_hum;
        if act <= hum {
            (Action::Act, act)
        } else {
            (Action::Delegate, hum)
        }
    }

    /// Fill in act/delegate for every task not in `taught`.
    fn actions_for(&self, taught: &[bool]) -> Vec<Action> {
        (0..self.n)
            .map(|i| {
                if taught[i] {
                    Action::Learn
                } else {
                    self.settle(i, |j| taught[j]).0
                }
            })
            .collect()
    }
}

/// Expected total cost of executing `actions` on `inst`.
pub fn expected_plan_cost(inst: &PlanInstance, actions: &[Action]) -> Result<f64> {
    if actions.len() != inst.n {
        return Err(Error::Invalid(format!(
            "plan has {} actions for {} tasks",
            actions.len(),
            inst.n
        )));
    }
    let taught = |j: usize| actions[j] == Action::Learn;
    Ok((0..inst.n).map(|i| inst.task_cost(i, actions[i], taught)).sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SolverMeta {
    pub lower_bound: Option<f64>,
    pub gap: Option<f64>,
    pub nodes_expanded: u64,
    pub wall_time_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "PlanFile", from = "PlanFile")]
pub struct Plan {
    pub actions: Vec<Action>,
    /// Source skill of each acting task; `None` for delegated or taught tasks.
    pub serving: Vec<Option<Serving>>,
    pub objective: f64,
    pub meta: SolverMeta,
}

#[derive(Serialize, Deserialize)]
struct PlanFile {
    actions: Vec<Action>,
    serving: Vec<Option<Serving>>,
    objective: f64,
    lower_bound: Option<f64>,
    gap: Option<f64>,
    nodes: u64,
    wall_time_ms: f64,
}

impl From<Plan> for PlanFile {
    fn from(p: Plan) -> Self {
        PlanFile {
            actions: p.actions,
            serving: p.serving,
            objective: p.objective,
            lower_bound: p.meta.lower_bound,
            gap: p.meta.gap,
            nodes: p.meta.nodes_expanded,
            wall_time_ms: p.meta.wall_time_ms,
        }
    }
}

impl From<PlanFile> for Plan {
    fn from(f: PlanFile) -> Self {
        Plan {
            actions: f.actions,
            serving: f.serving,
            objective: f.objective,
            meta: SolverMeta {
                lower_bound: f.lower_bound,
                gap: f.gap,
                nodes_expanded: f.nodes,
                wall_time_ms: f.wall_time_ms,
            },
        }
    }
}

impl Plan {
    /// Evaluate `actions` and attach skill attribution.
    pub fn from_actions(inst: &PlanInstance, actions: Vec<Action>, meta: SolverMeta) -> Result<Self> {
        let objective = expected_plan_cost(inst, &actions)?;
        let serving = (0..inst.n)
            .map(|i| {
                (actions[i] == Action::Act)
                    .then(|| inst.best_skill(i, |j| actions[j] == Action::Learn).1)
            })
            .collect();
        Ok(Plan {
            actions,
            serving,
            objective,
            meta,
        })
    }

    pub fn count(&self, a: Action) -> usize {
        self.actions.iter().filter(|&&x| x == a).count()
    }

    /// Per-task success probability and expected cost contribution.
    pub fn breakdown(&self, inst: &PlanInstance) -> Vec<(f64, f64)> {
        let taught = |j: usize| self.actions[j] == Action::Learn;
        (0..inst.n)
            .map(|i| {
                let p = match self.actions[i] {
                    Action::Act => inst.best_skill(i, taught).0,
                    Action::Learn => inst.best_skill(i, |j| j == i || taught(j)).0,
                    Action::Delegate => 1.0,
                };
                (p, inst.task_cost(i, self.actions[i], taught))
            })
            .collect()
    }

    /// Human-readable table: task id, action, success probability, expected cost.
    pub fn table(&self, inst: &PlanInstance, task_ids: Option<&[usize]>) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:>5} {:>8} {:>9} {:>10}  source", "task", "action", "p", "cost");
        for (i, (p, cost)) in self.breakdown(inst).into_iter().enumerate() {
            let id = task_ids.map_or(i, |ids| ids[i]);
            let src = match self.serving[i] {
                Some(Serving::Pretrained) => "pretrained".to_string(),
                Some(Serving::LearnedFrom(j)) => format!("learned@{j}"),
                None => String::new(),
            };
            let _ = writeln!(
                s,
                "{id:>5} {:>8} {p:>9.4} {cost:>10.3}  {src}",
                self.actions[i].as_str()
            );
        }
        let _ = writeln!(s, "total expected cost: {:.6}", self.objective);
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(self, path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

impl PlanInstance {
    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(self, path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

/// `(cost, actions)` ordering: lower cost, then lexicographically preferred actions.
fn better(cost: f64, actions: &[Action], best_cost: f64, best: &[Action]) -> bool {
    match cost.partial_cmp(&best_cost) {
        Some(Ordering::Less) => true,
        Some(Ordering::Equal) => actions < best,
        _ => false,
    }
}

fn elapsed_ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

fn check_exact_size(inst: &PlanInstance) -> Result<()> {
    if inst.n > EXACT_LIMIT {
        return Err(Error::TooLarge {
            n: inst.n,
            limit: EXACT_LIMIT,
        });
    }
    Ok(())
}

/// Pretrained success per task with nothing taught.
pub fn build_rho0(tasks: &[Task], library: &SkillLibrary, model: &PreconditionModel) -> Result<Vec<f64>> {
    tasks
        .iter()
        .map(|t| {
            library.skills.iter().try_fold(0.0f64, |best, s| {
                Ok(best.max(model.predict_features(&s.source_features, &t.features)?))
            })
        })
        .collect()
}

/// Assemble the planning instance for the task sequence `tasks`.
pub fn build_instance(
    tasks: &[Task],
    library: &SkillLibrary,
    model: &PreconditionModel,
    mode: Mode,
) -> Result<PlanInstance> {
    if tasks.is_empty() {
        return Err(Error::Invalid("no tasks to plan".into()));
    }
    let rho0 = build_rho0(tasks, library, model)?;
    let rho = tasks
        .iter()
        .enumerate()
        .map(|(i, ti)| {
            tasks[..=i]
                .iter()
                .map(|tj| model.predict(tj, ti))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    PlanInstance::new(rho0, rho, tasks.iter().map(|t| t.costs).collect(), mode)
}

/// Random instance with probabilities uniform in `[0, 1]`.
pub fn random_instance(rng: &mut impl Rng, costs: Vec<CostVector>, mode: Mode) -> PlanInstance {
    let n = costs.len();
    let rho0 = (0..n).map(|_| rng.random::<f64>()).collect();
    let rho = (0..n)
        .map(|i| (0..=i).map(|_| rng.random::<f64>()).collect())
        .collect();
    PlanInstance::new(rho0, rho, costs, mode).expect("random instance is valid")
}

/// Minimum expected cost by enumerating every taught set. Ties resolve to the
/// lexicographically preferred action sequence.
pub fn plan_exhaustive(inst: &PlanInstance) -> Result<Plan> {
    check_exact_size(inst)?;
    let start = Instant::now();
    let n = inst.n;
    let mut best: Option<(f64, Vec<Action>)> = None;
    let mut taught = vec![false; n];
    for mask in 0u32..(1u32 << n) {
        for (i, t) in taught.iter_mut().enumerate() {
            *t = mask >> i & 1 == 1;
        }
        let actions = inst.actions_for(&taught);
        let cost = expected_plan_cost(inst, &actions)?;
        if best.as_ref().is_none_or(|(bc, ba)| better(cost, &actions, *bc, ba)) {
            best = Some((cost, actions));
        }
    }
    let (cost, actions) = best.expect("at least one subset");
    Plan::from_actions(
        inst,
        actions,
        SolverMeta {
            lower_bound: Some(cost),
            gap: Some(0.0),
            nodes_expanded: 1 << n,
            wall_time_ms: elapsed_ms(start),
        },
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DpStats {
    pub states: u64,
    pub memo_hits: u64,
}

struct Dp<'a> {
    inst: &'a PlanInstance,
    /// `value[k][mask]`: optimal cost-to-go before task `k`, `mask` over tasks `< k`.
    value: Vec<Vec<f64>>,
    stats: DpStats,
}

impl Dp<'_> {
    fn q(&mut self, k: usize, mask: u32, a: Action) -> f64 {
        let taught = |j: usize| mask >> j & 1 == 1;
        let cost = self.inst.task_cost(k, a, taught);
        let next = if a == Action::Learn { mask | 1 << k } else { mask };
        cost + self.solve(k + 1, next)
    }

    fn solve(&mut self, k: usize, mask: u32) -> f64 {
        if k == self.inst.n {
            return 0.0;
        }
        let v = self.value[k][mask as usize];
        if !v.is_nan() {
            self.stats.memo_hits += 1;
            return v;
        }
        self.stats.states += 1;
        let v = [Action::Act, Action::Delegate, Action::Learn]
            .into_iter()
            .map(|a| self.q(k, mask, a))
            .fold(f64::INFINITY, f64::min);
        self.value[k][mask as usize] = v;
        v
    }
}

/// Dynamic program over the deterministic expected-cost MDP whose state is
/// the position in the sequence and the set of skills taught so far.
pub fn plan_ssp_dp_with_stats(inst: &PlanInstance) -> Result<(Plan, DpStats)> {
    check_exact_size(inst)?;
    let start = Instant::now();
    let n = inst.n;
    let mut dp = Dp {
        inst,
        value: (0..n).map(|k| vec![f64::NAN; 1 << k]).collect(),
        stats: DpStats::default(),
    };
    let total = dp.solve(0, 0);
    let lookups = dp.stats;

    let mut actions = Vec::with_capacity(n);
    let mut mask = 0u32;
    for k in 0..n {
        let target = dp.solve(k, mask);
        let a = [Action::Act, Action::Delegate, Action::Learn]
            .into_iter()
            .find(|&a| dp.q(k, mask, a) == target)
            .expect("optimal action exists");
        if a == Action::Learn {
            mask |= 1 << k;
        }
        actions.push(a);
    }
    let plan = Plan::from_actions(
        inst,
        actions,
        SolverMeta {
            lower_bound: Some(total),
            gap: Some(0.0),
            nodes_expanded: lookups.states,
            wall_time_ms: elapsed_ms(start),
        },
    )?;
    Ok((plan, lookups))
}

pub fn plan_ssp_dp(inst: &PlanInstance) -> Result<Plan> {
    plan_ssp_dp_with_stats(inst).map(|(p, _)| p)
}

/// Teach decision of each task during branch and bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Fix {
    Open,
    Teach,
    Skip,
}

struct Bnb<'a> {
    inst: &'a PlanInstance,
    order: Vec<usize>,
    fixed: Vec<Fix>,
    gap: f64,
    incumbent: (f64, Vec<Action>),
    pruned_bound: f64,
    nodes: u64,
}

impl Bnb<'_> {
    /// Relaxation: every undecided task is taught for free as far as other
    /// tasks are concerned, and pays the cheapest of its own three options.
    fn bound(&self) -> f64 {
        let inst = self.inst;
        let avail = |j: usize| self.fixed[j] != Fix::Skip;
        (0..inst.n)
            .map(|i| {
                let others = |j: usize| j != i && avail(j);
                let learn = || inst.task_cost(i, Action::Learn, avail);
                let act_or_hum = || inst.settle(i, others).1;
                match self.fixed[i] {
                    Fix::Teach => learn(),
                    Fix::Skip => act_or_hum(),
                    Fix::Open => act_or_hum().min(learn()),
                }
            })
            .sum()
    }

    fn visit(&mut self, depth: usize) -> Result<()> {
        self.nodes += 1;
        let lb = self.bound();
        if lb * (1.0 + self.gap) >= self.incumbent.0 {
            self.pruned_bound = self.pruned_bound.min(lb);
            return Ok(());
        }
        if depth == self.order.len() {
            let taught: Vec<bool> = self.fixed.iter().map(|&f| f == Fix::Teach).collect();
            let actions = self.inst.actions_for(&taught);
            let cost = expected_plan_cost(self.inst, &actions)?;
            if better(cost, &actions, self.incumbent.0, &self.incumbent.1) {
                self.incumbent = (cost, actions);
            }
            return Ok(());
        }
        let j = self.order[depth];
        for f in [Fix::Teach, Fix::Skip] {
            self.fixed[j] = f;
            self.visit(depth + 1)?;
        }
        self.fixed[j] = Fix::Open;
        Ok(())
    }
}

/// Branch and bound over teach decisions.
///
/// Returns a plan within a factor `1 + gap_tolerance` of optimal; with a zero
/// tolerance the plan is optimal. `lower_bound` in the metadata is a proven
/// lower bound on the optimum.
pub fn plan_bnb(inst: &PlanInstance, gap_tolerance: f64) -> Result<Plan> {
    if !(gap_tolerance >= 0.0) {
        return Err(Error::Invalid("gap tolerance must be >= 0".into()));
    }
    let start = Instant::now();
    let n = inst.n;
    let score = |j: usize| -> f64 {
        (j..n)
            .map(|i| inst.rho[i][j] * inst.costs[i].c_fail)
            .sum()
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| score(b).total_cmp(&score(a)).then(a.cmp(&b)));

    let seed_actions = inst.actions_for(&vec![false; n]);
    let seed_cost = expected_plan_cost(inst, &seed_actions)?;
    let mut bnb = Bnb {
        inst,
        order,
        fixed: vec![Fix::Open; n],
        gap: gap_tolerance,
        incumbent: (seed_cost, seed_actions),
        pruned_bound: f64::INFINITY,
        nodes: 0,
    };
    bnb.visit(0)?;

    let (cost, actions) = bnb.incumbent;
    let lower_bound = bnb.pruned_bound.min(cost);
    let gap = if cost > 0.0 { (cost - lower_bound) / cost } else { 0.0 };
    Plan::from_actions(
        inst,
        actions,
        SolverMeta {
            lower_bound: Some(lower_bound),
            gap: Some(gap),
            nodes_expanded: bnb.nodes,
            wall_time_ms: elapsed_ms(start),
        },
    )
}

/// Opening cost relative to acting: `c_demo - c_rob` or `c_hum - c_rob`.
fn opening_cost(inst: &PlanInstance, i: usize, a: Action) -> f64 {
    let c = &inst.costs[i];
    match a {
        Action::Act => 0.0,
        Action::Delegate => c.c_hum - c.c_rob,
        Action::Learn => c.c_demo - c.c_rob,
    }
}

/// Greedy facility location. Tasks are customers served by acting by
/// default; facilities are "teach on task j" (serving j and raising success
/// on every later task) and "delegate task i". Each round opens the facility
/// with the lowest opening cost per unit of failure cost saved, among those
/// that reduce total cost, until none does. Finally every task that is not
/// taught re-picks the cheaper of acting and delegating.
pub fn plan_greedy_facility(inst: &PlanInstance) -> Result<Plan> {
    let start = Instant::now();
    let n = inst.n;
    let mut actions = vec![Action::Act; n];
    let mut current = expected_plan_cost(inst, &actions)?;
    let mut rounds = 0u64;
    loop {
        rounds += 1;
        let mut pick: Option<(f64, usize, Action, f64)> = None;
        for i in 0..n {
            for a in [Action::Delegate, Action::Learn] {
                if actions[i] >= a {
                    continue;
                }
                let prev = actions[i];
                actions[i] = a;
                let cost = expected_plan_cost(inst, &actions)?;
                actions[i] = prev;
                if cost >= current {
                    continue;
                }
                let open = opening_cost(inst, i, a) - opening_cost(inst, i, prev);
                let saved = current - cost + open;
                let ratio = if saved > 0.0 { open / saved } else { f64::NEG_INFINITY };
                if pick.is_none_or(|(r, ..)| ratio < r) {
                    pick = Some((ratio, i, a, cost));
                }
            }
        }
        let Some((_, i, a, cost)) = pick else { break };
        actions[i] = a;
        current = cost;
    }
    let taught: Vec<bool> = actions.iter().map(|&a| a == Action::Learn).collect();
    let actions = inst.actions_for(&taught);
    Plan::from_actions(
        inst,
        actions,
        SolverMeta {
            lower_bound: None,
            gap: None,
            nodes_expanded: rounds,
            wall_time_ms: elapsed_ms(start),
        },
    )
}

fn lp_expr(terms: &[(f64, String)]) -> String {
    let mut s = String::new();
    for (k, (c, v)) in terms.iter().enumerate() {
        let (sign, mag) = if *c < 0.0 { ("-", -c) } else { ("+", *c) };
        if k == 0 {
            if sign == "-" {
                s.push_str("- ");
            }
        } else {
            let _ = write!(s, " {sign} ");
        }
        let _ = write!(s, "{mag} {v}");
    }
    s
}

/// The linearized mixed-integer program in CPLEX LP text format.
///
/// Variables (1-based): binaries `x_i` (teach) and `y_i` (delegate);
/// continuous `u_i_0` (pretrained library selected for task i), `u_i_j`
/// (skill taught on j selected for task i, `j < i`; also `j = i` in literal
/// mode) and `w_i` (failure probability of task i).
pub fn mip_lp_string(inst: &PlanInstance) -> String {
    let n = inst.n;
    let literal = inst.mode == Mode::LiteralPaper;
    let last_j = |i: usize| if literal { i + 1 } else { i };
    let mut s = String::new();
    let _ = writeln!(
        s,
        "\\ act/delegate/learn plan, n = {n}, mode = {}",
        if literal { "literal_paper" } else { "mdp_consistent" }
    );
    let _ = writeln!(s, "Minimize");
    let mut obj = Vec::new();
    for i in 0..n {
        let c = &inst.costs[i];
        obj.push((c.c_demo - c.c_rob, format!("x_{}", i + 1)));
        obj.push((c.c_hum - c.c_rob, format!("y_{}", i + 1)));
        obj.push((c.c_fail, format!("w_{}", i + 1)));
    }
    let constant: f64 = inst.costs.iter().map(|c| c.c_rob).sum();
    let _ = writeln!(s, " obj: {} + {constant}", lp_expr(&obj));

    let _ = writeln!(s, "Subject To");
    for i in 0..n {
        let k = i + 1;
        let _ = writeln!(s, " one_{k}: x_{k} + y_{k} <= 1");
        let mut assign = vec![(1.0, format!("u_{k}_0"))];
        assign.extend((0..last_j(i)).map(|j| (1.0, format!("u_{k}_{}", j + 1))));
        let _ = writeln!(s, " assign_{k}: {} <= 1", lp_expr(&assign));
        for j in 0..last_j(i) {
            let _ = writeln!(s, " link_{k}_{}: u_{k}_{} - x_{} <= 0", j + 1, j + 1, j + 1);
        }
        let mut fail = vec![(1.0, format!("w_{k}"))];
        if !literal {
            fail.push((1.0, format!("x_{k}")));
        }
        fail.push((1.0, format!("y_{k}")));
        fail.push((inst.rho0[i], format!("u_{k}_0")));
        fail.extend((0..last_j(i)).map(|j| (inst.rho[i][j], format!("u_{k}_{}", j + 1))));
        let _ = writeln!(s, " fail_{k}: {} >= 1", lp_expr(&fail));
    }

    let _ = writeln!(s, "Bounds");
    for i in 0..n {
        let k = i + 1;
        let _ = writeln!(s, " 0 <= u_{k}_0 <= 1");
        for j in 0..last_j(i) {
            let _ = writeln!(s, " 0 <= u_{k}_{} <= 1", j + 1);
        }
        let _ = writeln!(s, " 0 <= w_{k} <= 1");
    }
    let _ = writeln!(s, "Binaries");
    let bins: Vec<String> = (1..=n)
        .flat_map(|k| [format!("x_{k}"), format!("y_{k}")])
        .collect();
    let _ = writeln!(s, " {}", bins.join(" "));
    let _ = writeln!(s, "End");
    s
}

pub fn export_mip(inst: &PlanInstance, path: &Path) -> Result<()> {
    std::fs::write(path, mip_lp_string(inst)).map_err(|e| Error::io(path, e))
}
