use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use feaslab::agents::goal_target;
use feaslab::config::{AgentKind, BackendName, RunConfig};
use feaslab::envs::{load_task, save_task, Embedding, GridTask, StateSpace, Target};
use feaslab::evaluator::Evaluator;
use feaslab::metrics::{to_csv, MetricsRow};
use feaslab::oracle::{csv_header, target_table, PolicySpec};
use feaslab::train::{ood_eval, train_all, training_tasks};

/// Environment variable naming the output root when `--out` is absent.
const OUT_ENV: &str = "FEASLAB_OUT";

#[derive(Parser)]
#[command(name = "feaslab", version, about = "Target-feasibility evaluation lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the configured training tasks as task files.
    GenTasks(RunArgs),
    /// Train every configured seed; writes metrics.csv and checkpoints.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Load training tasks from this directory instead of generating them.
        #[arg(long)]
        tasks: Option<PathBuf>,
    },
    /// Out-of-distribution evaluation of a checkpoint; writes ood.csv.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Dump an exact distance table as CSV.
    Oracle(OracleArgs),
    /// Run the randomized invariant suites.
    Selftest {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Config file plus overrides for its most common fields.
#[derive(Args, Clone, Default)]
struct RunArgs {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config and the environment).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    run_id: Option<String>,
    #[arg(long)]
    family: Option<String>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    difficulty: Option<f64>,
    #[arg(long)]
    n_train_tasks: Option<usize>,
    #[arg(long)]
    task_seed: Option<u64>,
    #[arg(long)]
    interactions: Option<u64>,
    #[arg(long)]
    gamma: Option<f64>,
    /// `dyna` or `dyna_plus`.
    #[arg(long)]
    agent: Option<String>,
    /// Comma-separated seed list.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// `tabular` or `feedforward`.
    #[arg(long)]
    backend: Option<String>,
    #[arg(long)]
    mix: Option<String>,
    #[arg(long)]
    snapshot_every: Option<u64>,
    #[arg(long)]
    threshold: Option<f64>,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($flag:ident => $($field:ident).+),* $(,)?) => {
                $(if let Some(v) = &self.$flag { cfg.$($field).+ = v.clone(); })*
            };
        }
        set!(
            run_id => run_id,
            family => family,
            width => width,
            height => height,
            difficulty => difficulty,
            n_train_tasks => n_train_tasks,
            task_seed => task_seed,
            interactions => interactions,
            gamma => gamma,
            seeds => seeds,
            mix => evaluator.mix,
            snapshot_every => snapshot_every,
            threshold => dyna.threshold,
        );
        if let Some(a) = &self.agent {
            cfg.agent = match a.as_str() {
                "dyna" => AgentKind::Dyna,
                "dyna_plus" => AgentKind::DynaPlus,
                other => bail!("agent: unknown agent `{other}`"),
            };
        }
        if let Some(b) = &self.backend {
            cfg.evaluator.backend = match b.as_str() {
                "tabular" => BackendName::Tabular,
                "feedforward" => BackendName::Feedforward,
                other => bail!("evaluator.backend: unknown backend `{other}`"),
            };
        }
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        } else if let Some(env) = std::env::var_os(OUT_ENV) {
            cfg.output_dir = PathBuf::from(env);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct OracleArgs {
    /// Task file.
    #[arg(long)]
    task: PathBuf,
    /// `uniform_random` or `greedy_to_target`.
    #[arg(long, default_value = "uniform_random")]
    policy: String,
    #[arg(long, default_value_t = 16)]
    bins: usize,
    /// Target embedding `x,y,sword,shield` (flags 0/1); the goal when omitted.
    #[arg(long)]
    target: Option<String>,
    #[arg(long, default_value_t = 0)]
    radius: u8,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn task_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("task_{index:03}.txt"))
}

fn gen_tasks(cfg: &RunConfig) -> Result<()> {
    let dir = cfg.output_dir.join("tasks");
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let tasks = training_tasks(cfg)?;
    for (i, t) in tasks.iter().enumerate() {
        save_task(t, &task_path(&dir, i))?;
    }
    log::info!("wrote {} tasks to {}", tasks.len(), dir.display());
    Ok(())
}

fn load_tasks(dir: &Path) -> Result<Vec<GridTask>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "txt"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("no task files in {}", dir.display());
    }
    paths
        .iter()
        .map(|p| load_task(p).with_context(|| format!("loading {}", p.display())))
        .collect()
}

/// Returns whether every seed completed.
fn train(cfg: &RunConfig, tasks_dir: Option<&Path>) -> Result<bool> {
    let tasks = match tasks_dir {
        Some(dir) => load_tasks(dir)?,
        None => training_tasks(cfg)?,
    };
    let out = &cfg.output_dir;
    fs::create_dir_all(out.join("checkpoints"))?;
    write_file(&out.join("config.toml"), &cfg.to_toml())?;
    let mut rows: Vec<MetricsRow> = Vec::new();
    let mut ok = true;
    for result in train_all(cfg, &tasks) {
        let outcome = match result {
            Ok(o) => o,
            Err(e) => {
                log::error!("{e}");
                ok = false;
                continue;
            }
        };
        rows.extend(outcome.rows);
        if let Some(e) = outcome.error {
            log::error!("seed {}: {e}", outcome.seed);
            ok = false;
            continue;
        }
        let path = out.join("checkpoints").join(format!("seed_{}.ckpt", outcome.seed));
        outcome
            .evaluator
            .save(&path)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    write_file(&out.join("metrics.csv"), &to_csv(&rows)?)?;
    Ok(ok)
}

fn eval(cfg: &RunConfig, checkpoint: &Path) -> Result<()> {
    let ev: Evaluator<f64> =
        Evaluator::load(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        rows.extend(ood_eval(cfg, &ev, seed)?);
    }
    write_file(&cfg.output_dir.join("ood.csv"), &to_csv(&rows)?)
}

fn parse_target(text: &str, radius: u8) -> Result<Target> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    let flag = |s: &str| match s {
        "0" => Ok(false),
        "1" => Ok(true),
        other => bail!("target flag must be 0 or 1, got `{other}`"),
    };
    match parts.as_slice() {
        [x, y] => Ok(Target::new(Embedding::new(x.parse()?, y.parse()?, true, true), radius)),
        [x, y, sw, sh] => Ok(Target::new(
            Embedding::new(x.parse()?, y.parse()?, flag(sw)?, flag(sh)?),
            radius,
        )),
        _ => bail!("target must be `x,y` or `x,y,sword,shield`"),
    }
}

fn oracle(args: &OracleArgs) -> Result<()> {
    let task = load_task(&args.task).with_context(|| format!("loading {}", args.task.display()))?;
    let space = StateSpace::new(&task);
    let policy = match args.policy.as_str() {
        "uniform_random" => PolicySpec::<f64>::UniformRandom,
        "greedy_to_target" => PolicySpec::GreedyToTarget,
        other => bail!("policy: unknown policy `{other}`"),
    };
    if args.bins < 2 {
        bail!("bins: needs at least two bins");
    }
    let target = match &args.target {
        Some(t) => parse_target(t, args.radius)?,
        None => Target::new(goal_target(&space).embedding, args.radius),
    };
    let table = target_table(&space, &policy, &target, args.bins);
    let mut text = csv_header(args.bins);
    table.write_csv_rows(&mut text);
    match &args.out {
        Some(p) => write_file(p, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn selftest(seed: u64) -> bool {
    let mut all = true;
    for r in feaslab::selftest::run_all(seed) {
        let status = if r.passed() { "PASS" } else { "FAIL" };
        println!("{status} {} ({} cases)", r.name, r.cases);
        for f in r.failures.iter().take(10) {
            println!("  {f}");
        }
        all &= r.passed();
    }
    all
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::GenTasks(run) => gen_tasks(&run.resolve()?).map(|_| true),
        Command::Train { run, tasks } => train(&run.resolve()?, tasks.as_deref()),
        Command::Eval { run, checkpoint } => eval(&run.resolve()?, &checkpoint).map(|_| true),
        Command::Oracle(args) => oracle(&args).map(|_| true),
        Command::Selftest { seed } => Ok(selftest(seed)),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
