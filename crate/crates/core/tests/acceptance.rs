//! Acceptance suite: one line per criterion, non-zero exit if any fails.
//!
//! Run with `cargo test --release -p adl-core --test acceptance`.

mod common;

use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use adl::baselines::{plan_ad, plan_alm, plan_cba, simulate_execution, CbaConfig};
use adl::bench::{self, BenchContext, Domain, ExperimentConfig};
use adl::coverage::{get_training_data, CoverageSim};
use adl::planner::{
    expected_plan_cost, mip_lp_string, plan_bnb, plan_exhaustive, plan_greedy_facility, plan_ssp_dp,
    random_instance, Action, Mode, Plan, PlanInstance, SolverMeta,
};
use adl::precond::{calibration_table, grad_check, PreconditionModel};
use adl::task::{generate_block_tasks, generate_grid_part_tasks, load_tasks, save_tasks, CostVector};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

/// The 200 random instances shared by the planner criteria: sizes cycle
/// through 3..=12, costs through the default vector and 20 random ones.
fn oracle_instances() -> Vec<PlanInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut cost_sets = vec![CostVector::default()];
    for _ in 0..20 {
        cost_sets.push(CostVector::new(
            rng.random_range(1.0..50.0),
            rng.random_range(10.0..300.0),
            rng.random_range(10.0..500.0),
            rng.random_range(0.0..300.0),
        ));
    }
    (0..200)
        .map(|k| {
            let n = 3 + k % 10;
            random_instance(&mut rng, vec![cost_sets[k % cost_sets.len()]; n], Mode::MdpConsistent)
        })
        .collect()
}

fn criterion_1(instances: &[PlanInstance]) -> Outcome {
    let t0 = Instant::now();
    let mut worst: f64 = 0.0;
    for (k, inst) in instances.iter().enumerate() {
        let ex = plan_exhaustive(inst).map_err(|e| e.to_string())?.objective;
        let dp = plan_ssp_dp(inst).map_err(|e| e.to_string())?.objective;
        let bb = plan_bnb(inst, 0.0).map_err(|e| e.to_string())?.objective;
        for v in [dp, bb] {
            worst = worst.max((v - ex).abs());
            ensure(close(v, ex, 1e-9), || format!("instance {k}: exhaustive {ex}, dp {dp}, bnb {bb}"))?;
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    ensure(secs < 60.0, || format!("took {secs:.1} s"))?;
    Ok(format!("{} instances, max disagreement {worst:.1e}, {secs:.2} s", instances.len()))
}

fn criterion_2(instances: &[PlanInstance]) -> Outcome {
    let mut checks = 0;
    for (k, inst) in instances.iter().enumerate() {
        let adl = plan_bnb(inst, 0.0).map_err(|e| e.to_string())?.objective;
        let mut others = vec![
            ("ad", plan_ad(inst).map_err(|e| e.to_string())?.objective),
            ("alm", plan_alm(inst).map_err(|e| e.to_string())?.objective),
        ];
        for theta in [0.2, 0.5] {
            let cfg = CbaConfig::new(theta).map_err(|e| e.to_string())?;
            others.push(("cba", plan_cba(inst, cfg).map_err(|e| e.to_string())?.objective));
        }
        for (m, j) in others {
            checks += 1;
            ensure(adl <= j + 1e-9 * j.abs().max(1.0), || format!("instance {k}: adl {adl} > {m} {j}"))?;
        }
    }
    Ok(format!("{checks} comparisons, 0 violations"))
}

fn criterion_3(cfg: &ExperimentConfig, ctx: &BenchContext) -> Outcome {
    let mut worst_margin = f64::INFINITY;
    for &seed in &cfg.seeds {
        let case = bench::run_case(cfg, ctx, 0, seed).map_err(|e| e.to_string())?;
        let ad = case.plan("ad").unwrap();
        ensure(ad.actions.iter().all(|&a| a == Action::Delegate), || format!("set {seed}: AD is not all-delegate"))?;
        ensure(ad.objective == 1000.0, || format!("set {seed}: AD objective {}", ad.objective))?;
        let alm = case.plan("alm").unwrap();
        ensure(alm.count(Action::Learn) == 0, || format!("set {seed}: ALM teaches"))?;
        let adl = case.plan(bench::ADL).unwrap().objective;
        let best = case
            .plans
            .iter()
            .filter(|(m, _)| bench::is_baseline(m))
            .map(|(_, p)| p.objective)
            .fold(f64::INFINITY, f64::min);
        ensure(adl <= best + 1e-9 * best, || format!("set {seed}: adl {adl} > best baseline {best}"))?;
        worst_margin = worst_margin.min(best - adl);
    }
    Ok(format!(
        "{} sets of {} tasks; AD = 1000, ALM demos = 0, ADL <= best baseline (min margin {worst_margin:.3})",
        cfg.seeds.len(),
        cfg.n_tasks
    ))
}

fn criterion_4() -> Result<(String, (f64, f64)), String> {
    let cfg = ExperimentConfig::new(Domain::Block, 20, vec![0, 2, 4, 6, 8], (0..20).collect());
    let ctx = bench::prepare(&cfg).map_err(|e| e.to_string())?;
    let res = bench::run_bench(&cfg, &ctx).map_err(|e| e.to_string())?;
    for l in &res.summary.levels {
        let adl = l.mean_objective[bench::ADL];
        for (m, &v) in l.mean_objective.iter().filter(|(m, _)| bench::is_baseline(m)) {
            ensure(adl <= v + 1e-9 * v, || format!("level {}: adl {adl} > {m} {v}", l.level))?;
        }
    }
    let gap = |lvl: usize| res.summary.levels.iter().find(|l| l.level == lvl).unwrap().adl_advantage;
    let (g0, g8) = (gap(0), gap(8));
    let gaps: Vec<String> = res.summary.levels.iter().map(|l| format!("{}:{:.1}", l.level, l.adl_advantage)).collect();
    ensure(g8 <= g0, || format!("gap at level 8 ({g8:.3}) exceeds level 0 ({g0:.3}); gaps {}", gaps.join(" ")))?;
    Ok((
        format!("ADL <= every baseline mean at all levels; gap by level {}", gaps.join(" ")),
        (res.summary.greedy_ratio_mean, res.summary.greedy_ratio_max),
    ))
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let input = rng.random_range(2..=132);
        let hidden = rng.random_range(1..=32);
        let mut model = PreconditionModel::random(input, hidden, &mut rng);
        for b in model.layer1.b.iter_mut().chain(model.layer2.b.iter_mut()) {
            *b = rng.random_range(-0.5..0.5);
        }
        let x: Vec<f64> = (0..input).map(|_| rng.random_range(-2.0..2.0)).collect();
        let target = if rng.random::<bool>() { 1.0 } else { 0.0 };
        worst = worst.max(grad_check(&model, &x, target, 1e-5).map_err(|e| e.to_string())?);
    }
    ensure(worst < 1e-4, || format!("max relative error {worst:.3e}"))?;
    Ok(format!("50 pairs, max relative error {worst:.2e}"))
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst_z: f64 = 0.0;
    for k in 0..20 {
        let n = rng.random_range(3..=12);
        let inst = random_instance(&mut rng, vec![CostVector::default(); n], Mode::MdpConsistent);
        let actions = if k % 2 == 0 {
            plan_bnb(&inst, 0.0).map_err(|e| e.to_string())?.actions
        } else {
            (0..n)
                .map(|_| [Action::Act, Action::Delegate, Action::Learn][rng.random_range(0..3)])
                .collect()
        };
        let meta = SolverMeta { lower_bound: None, gap: None, nodes_expanded: 0, wall_time_ms: 0.0 };
        let plan = Plan::from_actions(&inst, actions, meta).map_err(|e| e.to_string())?;
        let (_, s) = simulate_execution(&inst, &plan, 10_000, 600 + k).map_err(|e| e.to_string())?;
        let expected = expected_plan_cost(&inst, &plan.actions).map_err(|e| e.to_string())?;
        if s.std_error == 0.0 {
            ensure(close(s.realized_mean, expected, 1e-9), || format!("pair {k}: deterministic mismatch"))?;
            continue;
        }
        let z = (s.realized_mean - expected).abs() / s.std_error;
        worst_z = worst_z.max(z);
        ensure(z <= 3.0, || format!("pair {k}: mean {} vs {expected}, {z:.2} standard errors", s.realized_mean))?;
    }
    Ok(format!("20 pairs x 10000 runs, worst deviation {worst_z:.2} standard errors"))
}

fn criterion_7() -> Outcome {
    let pool = generate_grid_part_tasks(150, 0, 15);
    let sim = CoverageSim::default();
    let data = get_training_data(50, 30, &pool, &sim, 7).map_err(|e| e.to_string())?;
    let expected = 1500 - 50 * data.skipped.len();
    ensure(data.len() == expected, || format!("{} rows, expected {expected}", data.len()))?;
    let selfs: Vec<_> = data.rows.iter().filter(|r| r.train_id == r.test_id).collect();
    ensure(selfs.iter().all(|r| r.label), || "a self pair is labelled 0".into())?;
    Ok(format!(
        "{} rows ({} skipped training tasks), {} self pairs all positive",
        data.len(),
        data.skipped.len(),
        selfs.len()
    ))
}

fn criterion_8(ctx: &BenchContext) -> Outcome {
    let auc = ctx.report.validation_auc.unwrap_or(f64::NAN);
    if auc >= 0.8 {
        return Ok(format!(
            "{} rows, positive rate {:.3}, held-out AUC {auc:.4}, accuracy {:.4}",
            ctx.dataset.len(),
            ctx.dataset.positive_rate(),
            ctx.report.validation_accuracy.unwrap_or(f64::NAN)
        ));
    }
    let scores: Vec<f64> = ctx
        .dataset
        .rows
        .iter()
        .map(|r| ctx.model.predict_input(&r.input()).unwrap())
        .collect();
    let labels: Vec<bool> = ctx.dataset.rows.iter().map(|r| r.label).collect();
    let mut msg = format!("held-out AUC {auc:.4} < 0.8; calibration over all rows:\n");
    for b in calibration_table(&scores, &labels, 10) {
        msg.push_str(&format!(
            "    [{:.1}, {:.1}) n={:<6} predicted {:.3} observed {:.3}\n",
            b.lo, b.hi, b.count, b.mean_predicted, b.observed_rate
        ));
    }
    Err(msg)
}

fn criterion_9(instances: &[PlanInstance], bench_ratio: Option<(f64, f64)>) -> Outcome {
    let mut ratios = Vec::new();
    for (k, inst) in instances.iter().enumerate() {
        let g = plan_greedy_facility(inst).map_err(|e| e.to_string())?;
        ensure(g.actions.len() == inst.n, || format!("instance {k}: wrong plan length"))?;
        let j = expected_plan_cost(inst, &g.actions).map_err(|e| e.to_string())?;
        ensure(close(j, g.objective, 1e-9), || format!("instance {k}: reported {} vs {j}", g.objective))?;
        let opt = plan_ssp_dp(inst).map_err(|e| e.to_string())?.objective;
        ensure(g.objective >= opt - 1e-9 * opt, || format!("instance {k}: greedy {} below optimum {opt}", g.objective))?;
        ratios.push(g.objective / opt);
    }
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    let max = ratios.iter().copied().fold(1.0, f64::max);
    let bench = bench_ratio.map_or(String::from("bench n/a"), |(m, x)| format!("block bench mean {m:.4} max {x:.4}"));
    Ok(format!("feasible on all instances; ratio to optimum mean {mean:.4} max {max:.4}; {bench}"))
}

fn criterion_10(ctx: &BenchContext) -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    let twice = |name: &str, save: &dyn Fn(&std::path::Path) -> adl::Result<()>, reload_save: &dyn Fn(&std::path::Path, &std::path::Path) -> adl::Result<()>| -> Result<(), String> {
        let a = d.join(format!("{name}.a"));
        let b = d.join(format!("{name}.b"));
        save(&a).map_err(|e| e.to_string())?;
        reload_save(&a, &b).map_err(|e| e.to_string())?;
        ensure(std::fs::read(&a).unwrap() == std::fs::read(&b).unwrap(), || format!("{name}: second save differs"))
    };

    let parts = generate_grid_part_tasks(150, 7, 15);
    twice("parts", &|p| save_tasks(&parts, p), &|a, b| save_tasks(&load_tasks(a)?, b))?;
    let blocks = generate_block_tasks(20, 1, 4);
    twice("blocks", &|p| save_tasks(&blocks, p), &|a, b| save_tasks(&load_tasks(a)?, b))?;
    twice("model", &|p| ctx.model.save(p), &|a, b| PreconditionModel::load(a)?.save(b))?;

    let inst = random_instance(&mut ChaCha8Rng::seed_from_u64(10), vec![CostVector::default(); 5], Mode::MdpConsistent);
    twice("instance", &|p| inst.save(p), &|a, b| PlanInstance::load(a)?.save(b))?;
    let plan = plan_bnb(&inst, 0.0).map_err(|e| e.to_string())?;
    twice("plan", &|p| plan.save(p), &|a, b| Plan::load(a)?.save(b))?;

    for mode in [Mode::MdpConsistent, Mode::LiteralPaper] {
        let inst = inst.with_mode(mode);
        let lp = common::parse_lp(&mip_lp_string(&inst)).map_err(|e| format!("LP does not parse: {e}"))?;
        let plan = plan_exhaustive(&inst).map_err(|e| e.to_string())?;
        let x = common::encode(&inst, &plan.actions, &plan.serving);
        common::feasible(&lp, &x)?;
        let obj = common::value(&lp.objective, &x) + lp.constant;
        ensure(close(obj, plan.objective, 1e-9), || format!("{mode:?}: LP objective {obj} vs {}", plan.objective))?;
    }
    Ok("tasks, model, instance and plan files byte-identical on re-save; 5-task LP parses in both modes".into())
}

fn run(results: &mut Vec<(usize, Outcome)>, n: usize, f: impl FnOnce() -> Outcome) {
    let t0 = Instant::now();
    let out = match panic::catch_unwind(AssertUnwindSafe(f)) {
        Ok(r) => r,
        Err(p) => Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into())),
    };
    let secs = t0.elapsed().as_secs_f64();
    match &out {
        Ok(m) => println!("[PASS] criterion {n}: {m} ({secs:.1} s)"),
        Err(m) => println!("[FAIL] criterion {n}: {m} ({secs:.1} s)"),
    }
    results.push((n, out));
}

fn main() -> ExitCode {
    let _ = env_logger::builder().is_test(true).try_init();
    println!("acceptance suite");
    let mut results = Vec::new();
    let instances = oracle_instances();

    run(&mut results, 1, || criterion_1(&instances));
    run(&mut results, 2, || criterion_2(&instances));

    let grid_cfg = ExperimentConfig::new(Domain::GridPart, 10, vec![0], (0..10).collect());
    let t0 = Instant::now();
    let grid_ctx = bench::prepare(&grid_cfg);
    println!("  (grid-part dataset and model prepared in {:.1} s)", t0.elapsed().as_secs_f64());
    match &grid_ctx {
        Ok(ctx) => run(&mut results, 3, || criterion_3(&grid_cfg, ctx)),
        Err(e) => run(&mut results, 3, || Err(format!("setup failed: {e}"))),
    }

    let mut bench_ratio = None;
    run(&mut results, 4, || {
        let (msg, ratio) = criterion_4()?;
        bench_ratio = Some(ratio);
        Ok(msg)
    });
    run(&mut results, 5, criterion_5);
    run(&mut results, 6, criterion_6);
    run(&mut results, 7, criterion_7);
    match &grid_ctx {
        Ok(ctx) => run(&mut results, 8, || criterion_8(ctx)),
        Err(e) => run(&mut results, 8, || Err(format!("setup failed: {e}"))),
    }
    run(&mut results, 9, || criterion_9(&instances, bench_ratio));
    match &grid_ctx {
        Ok(ctx) => run(&mut results, 10, || criterion_10(ctx)),
        Err(e) => run(&mut results, 10, || Err(format!("setup failed: {e}"))),
    }

    let failed: Vec<usize> = results.iter().filter(|(_, r)| r.is_err()).map(|(n, _)| *n).collect();
    println!("{} of {} criteria passed", results.len() - failed.len(), results.len());
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed: {failed:?}");
        ExitCode::FAILURE
    }
}
