use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};

use evsched::config::Config;
use evsched::fvi::{train, RunManifest, TrainedModels};
use evsched::oracle::ExactOracle;
use evsched::rng::StreamFactory;
use evsched::sim::{
    draw_paths, load_plans, run_bound_stress, run_comparison, run_property_suite, run_robustness, save_plans,
    write_bounds_csv, Algorithm, Comparison, Policies,
};
use evsched::Error;

const CONFIG_ERROR: u8 = 2;
const INFEASIBLE: u8 = 3;
const PROPERTY_FAILURE: u8 = 4;

#[derive(Parser)]
#[command(name = "evsched", version, about = "EV fleet charging scheduler")]
struct Cli {
    /// Worker threads; defaults to the machine's parallelism.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one value model per slot and write checkpoints.
    Train {
        config: PathBuf,
        #[arg(long, default_value = "checkpoints")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run policies on sampled paths and write CSV results.
    Simulate {
        config: PathBuf,
        #[arg(long, value_enum, default_value = "all")]
        policy: Policy,
        #[arg(long)]
        paths: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Checkpoint directory, required for the adp policy.
        #[arg(long)]
        checkpoints: Option<PathBuf>,
        #[arg(long, default_value = "results")]
        out: PathBuf,
        /// Also replay on Gaussian paths with the configured variances.
        #[arg(long)]
        robustness: bool,
        /// Also retrain and replay at each configured upper bound.
        #[arg(long)]
        bounds: bool,
    },
    /// Run the oracle-backed property suite on a tiny instance.
    Verify {
        config: PathBuf,
        /// Also compare these checkpoints against the oracle.
        #[arg(long)]
        checkpoints: Option<PathBuf>,
        #[arg(long, default_value = "results")]
        out: PathBuf,
    },
    /// Tabulate the exact values of a tiny instance.
    Oracle {
        config: PathBuf,
        #[arg(long, default_value = "oracle.csv")]
        out: PathBuf,
    },
    /// Rebuild CSV outputs from a stored plans file.
    Export {
        config: PathBuf,
        plans: PathBuf,
        #[arg(long, default_value = "results")]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Policy {
    Adp,
    Sp,
    Fcfs,
    All,
}

impl Policy {
    fn algorithms(self) -> Vec<Algorithm> {
        match self {
            Policy::Adp => vec![Algorithm::Adp],
            Policy::Sp => vec![Algorithm::Sp],
            Policy::Fcfs => vec![Algorithm::Fcfs],
            Policy::All => Algorithm::ALL.to_vec(),
        }
    }
}

enum Failure {
    Engine(Error),
    Exit(u8, String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Engine(e)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_)
        | Error::InvalidMenu(_)
        | Error::ParameterOutOfBox { .. }
        | Error::InstanceTooLarge(_)
        | Error::Checkpoint(_) => CONFIG_ERROR,
        Error::Infeasible { .. } | Error::InfeasibleStage { .. } | Error::EmptyPolytope { .. } => INFEASIBLE,
        Error::Training { source, .. } => exit_code(source),
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} threads: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Engine(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(Failure::Exit(code, msg)) => {
            eprintln!("{msg}");
            ExitCode::from(code)
        }
    }
}

fn load(path: &Path, seed: Option<u64>) -> Result<Config, Failure> {
    let mut cfg = Config::load(path)?;
    if let Some(s) = seed {
        cfg.seeds.master = s;
    }
    Ok(cfg)
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Train { config, out, seed } => cmd_train(&config, &out, seed),
        Command::Simulate {
            config,
            policy,
            paths,
            seed,
            checkpoints,
            out,
            robustness,
            bounds,
        } => {
            let cfg = load(&config, seed)?;
            let opts = SimulateOptions {
                algorithms: policy.algorithms(),
                paths: paths.unwrap_or(cfg.seeds.paths),
                checkpoints,
                robustness,
                bounds,
            };
            cmd_simulate(&cfg, &opts, &out)
        }
        Command::Verify {
            config,
            checkpoints,
            out,
        } => cmd_verify(&config, checkpoints.as_deref(), &out),
        Command::Oracle { config, out } => {
            let cfg = load(&config, None)?;
            let inst = cfg.instance()?;
            let law = cfg.arrival_model(&inst.menu)?;
            let oracle = ExactOracle::solve(&inst, &law, &cfg.oracle)?;
            oracle.write_csv(std::fs::File::create(&out).map_err(Error::from)?)?;
            println!("wrote {} ({} stages)", out.display(), oracle.tables.len());
            Ok(())
        }
        Command::Export { config, plans, out } => {
            let cfg = load(&config, None)?;
            let inst = cfg.instance()?;
            let stored = load_plans(&plans)?;
            let cmp = Comparison::from_stored(&inst, &stored)?;
            std::fs::create_dir_all(&out).map_err(Error::from)?;
            write_comparison_outputs(&cmp, &inst, &out)?;
            println!("exported {} plans to {}", stored.len(), out.display());
            Ok(())
        }
    }
}

fn cmd_train(config: &Path, out: &Path, seed: Option<u64>) -> Result<(), Failure> {
    let cfg = load(config, seed)?;
    let inst = cfg.instance()?;
    let law = cfg.arrival_model(&inst.menu)?;
    let factory = StreamFactory::new(cfg.seeds.master);
    let started = Instant::now();
    let models = train(&inst, &law, &cfg.fvi, &cfg.inner_solver, &factory)?;
    let files = models.save(out)?;
    for r in &models.reports {
        println!(
            "stage {:>3}  {:>8.2}s  fit mse {:.3e}  unconverged {}  redraws {}",
            r.stage, r.seconds, r.fit_mse, r.unconverged, r.redraws
        );
    }
    let manifest = RunManifest {
        tool: format!("evsched {}", env!("CARGO_PKG_VERSION")),
        config_sha256: cfg.hash(),
        master_seed: cfg.seeds.master,
        horizon: inst.horizon(),
        k: cfg.fvi.k,
        l: cfg.fvi.l,
        stage_seconds: models.reports.iter().map(|r| r.seconds).collect(),
        files: files.iter().map(|p| p.display().to_string()).collect(),
    };
    manifest.write(&out.join("manifest.json"))?;
    println!(
        "trained {} stages in {:.1}s, checkpoints in {}",
        inst.horizon(),
        started.elapsed().as_secs_f64(),
        out.display()
    );
    Ok(())
}

struct SimulateOptions {
    algorithms: Vec<Algorithm>,
    paths: usize,
    checkpoints: Option<PathBuf>,
    robustness: bool,
    bounds: bool,
}

fn write_comparison_outputs(cmp: &Comparison, inst: &evsched::instance::Instance, out: &Path) -> Result<Vec<String>, Failure> {
    let io = |e: std::io::Error| Failure::Engine(Error::from(e));
    cmp.write_comparison_csv(std::fs::File::create(out.join("comparison.csv")).map_err(io)?)?;
    cmp.write_energy_csv(std::fs::File::create(out.join("energy.csv")).map_err(io)?)?;
    let mut files = vec!["comparison.csv".to_string(), "energy.csv".to_string()];
    files.extend(
        cmp.write_plan_csvs(inst, &out.join("plans"))?
            .into_iter()
            .map(|n| format!("plans/{n}")),
    );
    Ok(files)
}

fn cmd_simulate(cfg: &Config, opts: &SimulateOptions, out: &Path) -> Result<(), Failure> {
    let inst = cfg.instance()?;
    let law = cfg.arrival_model(&inst.menu)?;
    let factory = StreamFactory::new(cfg.seeds.master);
    let needs_models = opts.algorithms.contains(&Algorithm::Adp) || opts.robustness;
    let models = match (&opts.checkpoints, needs_models) {
        (Some(dir), true) => Some(TrainedModels::load(dir, inst.horizon())?),
        (None, true) => {
            return Err(Failure::Exit(
                CONFIG_ERROR,
                "error: the adp policy needs --checkpoints (run `evsched train` first)".into(),
            ))
        }
        _ => None,
    };
    std::fs::create_dir_all(out).map_err(Error::from)?;
    let policies = Policies {
        instance: &inst,
        models: models.as_ref(),
        forecast: &law,
        dispatch: cfg.dispatch,
        inner: cfg.inner_solver,
        factory: &factory,
    };
    let paths = draw_paths(&law, &factory, opts.paths);
    let cmp = run_comparison(&policies, &paths, &opts.algorithms);
    let mut files = write_comparison_outputs(&cmp, &inst, out)?;
    save_plans(&out.join("plans.json"), &cmp.stored(&paths))?;
    files.push("plans.json".into());

    println!("{:>6} {:>6} {:>14} {:>12}", "path", "policy", "profit", "energy");
    for r in &cmp.runs {
        for (a, res) in &r.plans {
            match res {
                Ok(p) => println!("{:>6} {:>6} {:>14.2} {:>12.2}", r.path, a.name(), 0.0 - p.total_cost(), p.total_energy()),
                Err(e) => println!("{:>6} {:>6} failed: {}", r.path, a.name(), e.message),
            }
        }
    }
    let mut failures: Vec<String> = cmp
        .failures()
        .iter()
        .map(|(p, a, e)| format!("path {p} {}: {}", a.name(), e.message))
        .collect();
    let mut infeasible = cmp.failures().iter().any(|(_, _, e)| e.infeasible);
    let violated: Vec<_> = cmp.sp_bound_checks(1e-6).into_iter().filter(|c| !c.holds).collect();
    for c in &violated {
        failures.push(format!(
            "path {} {}: cost {} below the hindsight optimum {}",
            c.path,
            c.algorithm.name(),
            c.other_cost,
            c.sp_cost
        ));
    }

    if opts.robustness {
        let rob = run_robustness(&policies, &cfg.experiments.variances, opts.paths, 1e-6)?;
        rob.write_csv(std::fs::File::create(out.join("robustness.csv")).map_err(Error::from)?)?;
        files.push("robustness.csv".into());
        for p in &rob.points {
            println!(
                "variance {:>5}: median adp profit {:.2} (se {:.2}), sp bound {}",
                p.variance,
                p.median_adp_profit,
                p.median_se,
                if p.sp_bound_holds { "holds" } else { "VIOLATED" }
            );
        }
        println!("largest relative change between variances: {:.4}", rob.max_relative_change);
    }
    if opts.bounds {
        let levels = run_bound_stress(&policies, &cfg.fvi, &cfg.experiments.upper_bounds, &paths)?;
        write_bounds_csv(&levels, std::fs::File::create(out.join("bounds.csv")).map_err(Error::from)?)?;
        files.push("bounds.csv".into());
        for level in &levels {
            println!(
                "upper {:>8}: median adp profit {:.2}, active slots adp {} sp {} fcfs {}",
                level.upper,
                level.median_profit(Algorithm::Adp),
                level.active_count(Algorithm::Adp),
                level.active_count(Algorithm::Sp),
                level.active_count(Algorithm::Fcfs)
            );
            for (p, a, e) in level.comparison.failures() {
                infeasible |= e.infeasible;
                failures.push(format!("upper {} path {p} {}: {}", level.upper, a.name(), e.message));
            }
        }
    }

    let manifest = RunManifest {
        tool: format!("evsched {}", env!("CARGO_PKG_VERSION")),
        config_sha256: cfg.hash(),
        master_seed: cfg.seeds.master,
        horizon: inst.horizon(),
        k: cfg.fvi.k,
        l: cfg.fvi.l,
        stage_seconds: Vec::new(),
        files,
    };
    manifest.write(&out.join("manifest.json"))?;
    if failures.is_empty() {
        return Ok(());
    }
    let code = if infeasible { INFEASIBLE } else { PROPERTY_FAILURE };
    Err(Failure::Exit(code, failures.join("\n")))
}

fn cmd_verify(config: &Path, checkpoints: Option<&Path>, out: &Path) -> Result<(), Failure> {
    let cfg = load(config, None)?;
    let inst = cfg.instance()?;
    let law = cfg.arrival_model(&inst.menu)?;
    let models = match checkpoints {
        Some(dir) => match TrainedModels::load(dir, inst.horizon()) {
            Ok(m) => Some(m),
            Err(e) => return Err(Failure::Exit(PROPERTY_FAILURE, format!("checkpoint check failed: {e}"))),
        },
        None => None,
    };
    let report = run_property_suite(&inst, &law, &cfg.property_suite(), models.as_ref())?;
    std::fs::create_dir_all(out).map_err(Error::from)?;
    report.write_json(&out.join("properties.json"))?;
    let mark = |ok: bool| if ok { "pass" } else { "FAIL" };
    println!("monotonicity   {}", mark(report.monotonicity_holds()));
    println!("lipschitz      {}", mark(report.lipschitz_holds()));
    println!(
        "nonexpansion   {} ({}/{})",
        mark(report.nonexpansion_holds()),
        report.nonexpansion.holding,
        report.nonexpansion.trials
    );
    println!(
        "convergence    {} (final error {:.4} of range)",
        mark(report.convergence.holds),
        report.convergence.final_relative_error
    );
    if let Some(c) = &report.checkpoint {
        println!("checkpoints    {} (error {:.4} of range)", mark(c.holds), c.relative_sup_error);
    }
    if report.passed {
        Ok(())
    } else {
        Err(Failure::Exit(PROPERTY_FAILURE, "property suite failed".into()))
    }
}
