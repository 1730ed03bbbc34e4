use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use adl::baselines::{plan_ad, plan_alm, plan_cba, simulate_execution, write_summary_csv, CbaConfig};
use adl::bench::{self, ExperimentConfig, Overlap};
use adl::coverage::{get_training_data, BlockSim, CoverageSim, SimConfig, SkillSimulator};
use adl::planner::{
    build_instance, export_mip, plan_bnb, plan_exhaustive, plan_greedy_facility, plan_ssp_dp, Mode, Plan,
    PlanInstance,
};
use adl::precond::{grad_check, train, PreconditionModel, TrainConfig};
use adl::task::{generate_block_tasks, generate_grid_part_tasks, load_tasks, pretrain_library, save_tasks, SkillLibrary, Task};
use adl::{Error, Result};

#[derive(Parser)]
#[command(name = "adl", version, about = "Act / delegate / learn planning toolkit")]
struct Cli {
    /// Root seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Cost model used when building or loading instances.
    #[arg(long, global = true, value_enum)]
    mode: Option<ModeArg>,
    /// Output file or directory, depending on the command.
    #[arg(short, long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Mdp,
    Literal,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Mdp => Mode::MdpConsistent,
            ModeArg::Literal => Mode::LiteralPaper,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum DomainArg {
    #[value(name = "grid_part", alias = "grid-part")]
    GridPart,
    Block,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    AdlBnb,
    AdlExhaustive,
    AdlDp,
    Greedy,
    Ad,
    Cba,
    Alm,
}

#[derive(Clone, Copy, ValueEnum)]
enum OverlapArg {
    Allow,
    Exclude,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a task set (default output tasks.json).
    GenTasks {
        #[arg(long, value_enum, default_value = "grid_part")]
        domain: DomainArg,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 15)]
        families: usize,
        #[arg(long, default_value_t = 4)]
        envs: usize,
    },
    /// Collect labelled pairs in simulation and fit the precondition model.
    /// Writes dataset.csv, model.json and report.json into the output directory.
    TrainPreconds {
        /// Task pool; a 150-task grid-part pool is generated when omitted.
        #[arg(long)]
        tasks: Option<PathBuf>,
        /// Evaluation tasks sampled per training task (default: pool size).
        #[arg(long)]
        m: Option<usize>,
        /// Training tasks (default: pool size).
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        hidden: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        tap_radius: Option<f64>,
        #[arg(long)]
        reach: Option<f64>,
    },
    /// Teach k skills on tasks drawn from a task set (default output library.json).
    Pretrain {
        #[arg(long)]
        tasks: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        tap_radius: Option<f64>,
        #[arg(long)]
        reach: Option<f64>,
    },
    /// Plan a task sequence (default output plan.json).
    Plan {
        #[command(flatten)]
        src: InstanceSource,
        #[arg(long, value_enum, default_value = "adl-bnb")]
        method: Method,
        /// Relative optimality gap for branch and bound.
        #[arg(long, default_value_t = 0.0)]
        gap: f64,
        /// Confidence threshold for cba.
        #[arg(long, default_value_t = 0.2)]
        theta: f64,
        /// Also write the planning instance here.
        #[arg(long)]
        save_instance: Option<PathBuf>,
    },
    /// Write the integer program in LP format (default output model.lp).
    ExportMip {
        #[command(flatten)]
        src: InstanceSource,
    },
    /// Monte Carlo execution of a saved plan; prints or writes a summary CSV.
    Simulate {
        #[command(flatten)]
        src: InstanceSource,
        #[arg(long)]
        plan: PathBuf,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
    },
    /// Run a benchmark described by a JSON ExperimentConfig.
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        pretrain_overlap: Option<OverlapArg>,
    },
}

#[derive(Args)]
struct InstanceSource {
    /// Saved planning instance.
    #[arg(long, conflicts_with_all = ["tasks", "model", "library"])]
    instance: Option<PathBuf>,
    /// Task sequence to plan, in order.
    #[arg(long, requires = "model")]
    tasks: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    /// Pretrained skill library; empty when omitted.
    #[arg(long)]
    library: Option<PathBuf>,
}

impl InstanceSource {
    fn load(&self, mode: Option<Mode>) -> Result<(PlanInstance, Option<Vec<usize>>)> {
        if let Some(p) = &self.instance {
            let inst = PlanInstance::load(p)?;
            return Ok((mode.map_or(inst.clone(), |m| inst.with_mode(m)), None));
        }
        let (Some(tp), Some(mp)) = (&self.tasks, &self.model) else {
            return Err(Error::Invalid("either --instance or --tasks with --model is required".into()));
        };
        let tasks = load_tasks(tp)?;
        let model = PreconditionModel::load(mp)?;
        let library = match &self.library {
            Some(p) => SkillLibrary::load(p)?,
            None => SkillLibrary::new(),
        };
        let inst = build_instance(&tasks, &library, &model, mode.unwrap_or_default())?;
        Ok((inst, Some(tasks.iter().map(|t| t.id).collect())))
    }
}

fn simulator_for(tasks: &[Task], seed: u64, tap_radius: Option<f64>, reach: Option<f64>) -> Box<dyn SkillSimulator> {
    if tasks.iter().all(|t| t.grid.is_some()) {
        let mut cfg = SimConfig { seed, ..SimConfig::default() };
        if let Some(r) = tap_radius {
            cfg.tap_radius_cm = r;
        }
        Box::new(CoverageSim::new(cfg))
    } else {
        let mut sim = BlockSim { seed, ..BlockSim::default() };
        if let Some(r) = reach {
            sim.reach_cm = r;
        }
        Box::new(sim)
    }
}

fn out_path(cli_out: &Option<PathBuf>, default: &str) -> PathBuf {
    cli_out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed.unwrap_or(0);
    let mode = cli.mode.map(Mode::from);
    match cli.cmd {
        Command::GenTasks {
            domain,
            count,
            families,
            envs,
        } => {
            let tasks = match domain {
                DomainArg::GridPart => {
                    if families == 0 {
                        return Err(Error::Invalid("--families must be >= 1".into()));
                    }
                    generate_grid_part_tasks(count, seed, families)
                }
                DomainArg::Block => {
                    if envs == 0 {
                        return Err(Error::Invalid("--envs must be >= 1".into()));
                    }
                    generate_block_tasks(count, seed, envs)
                }
            };
            let path = out_path(&cli.out, "tasks.json");
            save_tasks(&tasks, &path)?;
            println!("wrote {} tasks to {}", tasks.len(), path.display());
        }
        Command::TrainPreconds {
            tasks,
            m,
            n,
            epochs,
            hidden,
            lr,
            tap_radius,
            reach,
        } => {
            let pool = match &tasks {
                Some(p) => load_tasks(p)?,
                None => generate_grid_part_tasks(150, seed, 15),
            };
            let sim = simulator_for(&pool, seed, tap_radius, reach);
            let m = m.unwrap_or(pool.len());
            let n = n.unwrap_or(pool.len());
            let dataset = get_training_data(m, n, &pool, sim.as_ref(), seed)?;
            let mut cfg = TrainConfig { seed, ..TrainConfig::default() };
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            if let Some(h) = hidden {
                cfg.hidden = h;
            }
            if let Some(l) = lr {
                cfg.learning_rate = l;
            }
            let (model, report) = train(&dataset, &cfg)?;

            let dir = out_path(&cli.out, ".");
            ensure_dir(&dir)?;
            dataset.write_csv(&dir.join("dataset.csv"))?;
            model.save(&dir.join("model.json"))?;

            // Checked on a fresh model of the same shape: a trained one can
            // park hidden units within epsilon of the ReLU kink.
            let fresh = PreconditionModel::random(
                model.dims.input,
                model.dims.hidden,
                &mut adl::seed::rng(seed, &[adl::seed::MODEL, 1]),
            );
            let mut grad_err: f64 = 0.0;
            for row in dataset.rows.iter().take(5) {
                let target = if row.label { 1.0 } else { 0.0 };
                grad_err = grad_err.max(grad_check(&fresh, &row.input(), target, 1e-5)?);
            }
            let full = serde_json::json!({
                "rows": dataset.len(),
                "skipped": dataset.skipped,
                "positive_rate": dataset.positive_rate(),
                "grad_check_max_rel_error": grad_err,
                "train": report,
            });
            fs::write(
                dir.join("report.json"),
                serde_json::to_string_pretty(&full)? + "\n",
            )
            .map_err(|e| Error::io(dir.join("report.json"), e))?;

            println!("rows: {} ({} skipped)", dataset.len(), dataset.skipped.len());
            println!("positive rate: {:.4}", dataset.positive_rate());
            match report.validation_auc {
                Some(a) => println!("held-out AUC: {a:.4}"),
                None => println!("held-out AUC: n/a"),
            }
            println!(
                "grad check: max relative error {grad_err:.3e} ({})",
                if grad_err < 1e-4 { "ok" } else { "FAILED" }
            );
            println!("wrote {}", dir.display());
        }
        Command::Pretrain {
            tasks,
            k,
            tap_radius,
            reach,
        } => {
            let pool = load_tasks(&tasks)?;
            let sim = simulator_for(&pool, seed, tap_radius, reach);
            let lib = pretrain_library(&pool, k, seed, sim.as_ref())?;
            let path = out_path(&cli.out, "library.json");
            lib.save(&path)?;
            println!("wrote {} skills to {} (tasks {:?})", lib.len(), path.display(), lib.provenance);
        }
        Command::Plan {
            src,
            method,
            gap,
            theta,
            save_instance,
        } => {
            let (inst, ids) = src.load(mode)?;
            let plan = match method {
                Method::AdlBnb => plan_bnb(&inst, gap)?,
                Method::AdlExhaustive => plan_exhaustive(&inst)?,
                Method::AdlDp => plan_ssp_dp(&inst)?,
                Method::Greedy => plan_greedy_facility(&inst)?,
                Method::Ad => plan_ad(&inst)?,
                Method::Cba => plan_cba(&inst, CbaConfig::new(theta)?)?,
                Method::Alm => plan_alm(&inst)?,
            };
            if let Some(p) = save_instance {
                inst.save(&p)?;
            }
            let path = out_path(&cli.out, "plan.json");
            plan.save(&path)?;
            print!("{}", plan.table(&inst, ids.as_deref()));
            println!("wrote {}", path.display());
        }
        Command::ExportMip { src } => {
            let (inst, _) = src.load(mode)?;
            let path = out_path(&cli.out, "model.lp");
            export_mip(&inst, &path)?;
            println!("wrote {}", path.display());
        }
        Command::Simulate { src, plan, trials } => {
            let (inst, _) = src.load(mode)?;
            let plan = Plan::load(&plan)?;
            let (_, summary) = simulate_execution(&inst, &plan, trials, seed)?;
            let rows = vec![("plan".to_string(), seed, plan.objective, summary)];
            match &cli.out {
                Some(p) => {
                    let f = fs::File::create(p).map_err(|e| Error::io(p, e))?;
                    write_summary_csv(f, &rows)?;
                    println!("wrote {}", p.display());
                }
                None => write_summary_csv(io::stdout().lock(), &rows)?,
            }
            eprintln!(
                "expected {:.4}, realized {:.4} +- {:.4} over {trials} trials",
                summary.expected, summary.realized_mean, summary.std_error
            );
        }
        Command::Bench {
            config,
            pretrain_overlap,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = cli.seed {
                cfg.root_seed = s;
            }
            if let Some(m) = mode {
                cfg.mode = m;
            }
            if let Some(o) = pretrain_overlap {
                cfg.pretrain_overlap = match o {
                    OverlapArg::Allow => Overlap::Allow,
                    OverlapArg::Exclude => Overlap::Exclude,
                };
            }
            if let Some(o) = &cli.out {
                cfg.output_dir = Some(o.clone());
            }
            let dir = cfg.output_dir.clone().unwrap_or_else(|| PathBuf::from("."));
            ensure_dir(&dir)?;
            let ctx = bench::prepare(&cfg)?;
            let results = bench::run_bench(&cfg, &ctx)?;
            bench::write_results_csv(&results.rows, &dir.join("results.csv"))?;
            let summary_path = dir.join("summary.json");
            fs::write(&summary_path, serde_json::to_string_pretty(&results.summary)? + "\n")
                .map_err(|e| Error::io(&summary_path, e))?;
            print!("{}", results.summary.render());
            println!("wrote {} rows to {}", results.rows.len(), dir.join("results.csv").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
