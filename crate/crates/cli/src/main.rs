use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};

use multinav::harness::{
    cmd_algo_compare, cmd_compare_astar, cmd_train, evaluate, validate_worlds, AstarComparison, Controller,
    DriveStraight, EvalReport, EvalSpec, GreedyPolicy, HarnessError, PathFollower, RunConfig, SpinInPlace,
};
use multinav::sim::SimConfig;
use multinav::train::Algorithm;
use multinav::world::{resolve_world, ScenarioTask};

#[derive(Debug, Parser)]
#[command(name = "multinav", version, about = "Multi-robot navigation training and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a policy from a run config.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Agent-episode budget.
        #[arg(long)]
        episodes: Option<u64>,
        #[arg(long)]
        max_steps: Option<u32>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a controller and print a reached/timeout/collision table.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = ControllerKind::Policy)]
        controller: ControllerKind,
        /// World names or scenario files; repeat or separate with commas.
        #[arg(long, required = true, value_delimiter = ',')]
        world: Vec<String>,
        /// Agent counts to evaluate per world.
        #[arg(long, value_delimiter = ',', default_value = "1")]
        agents: Vec<usize>,
        /// Agent-episodes per (world, agent count).
        #[arg(long, default_value_t = 10_000)]
        episodes: usize,
        #[arg(long, default_value_t = 500)]
        max_steps: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Run config supplying sim and reward parameters.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Write report.txt and report.csv here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Drive one agent and export its path next to the A* path.
    CompareAstar {
        /// Without a checkpoint the scripted A* follower drives.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        world: String,
        #[arg(long, requires = "goal")]
        start: Option<usize>,
        #[arg(long, requires = "start")]
        goal: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 500)]
        max_steps: u32,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "compare_astar")]
        out: PathBuf,
    },
    /// Train several algorithms repeatedly and export reward curves.
    AlgoCompare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "ppo,a2c,ddqn")]
        algorithms: Vec<String>,
        #[arg(long, default_value_t = 10)]
        repeats: usize,
        #[arg(long, default_value_t = 25_000)]
        episodes: u64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        max_steps: Option<u32>,
        #[arg(long, default_value = "algo_compare")]
        out: PathBuf,
    },
    /// World file utilities.
    Worlds {
        #[command(subcommand)]
        action: WorldsAction,
    },
}

#[derive(Debug, Subcommand)]
enum WorldsAction {
    /// Check world files (all bundled worlds when none are given).
    Validate {
        worlds: Vec<String>,
        #[arg(long, default_value_t = 0.25)]
        robot_radius: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ControllerKind {
    Policy,
    Straight,
    Spin,
    Astar,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        if e.is_usage() {
            Failure::Usage(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, Failure> {
    match path {
        Some(p) => Ok(RunConfig::load(p)?),
        None => Ok(RunConfig::default()),
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Train {
            config,
            seed,
            episodes,
            max_steps,
            out,
        } => {
            let mut cfg = load_config(Some(&config))?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(e) = episodes {
                cfg.stop.max_episodes = e;
            }
            if let Some(m) = max_steps {
                cfg.sim.max_steps = m;
            }
            let summary = cmd_train(&cfg, out.as_deref())?;
            println!(
                "stopped ({}) after {} agent-episodes and {} updates",
                summary.result.stop, summary.result.episodes, summary.result.updates
            );
            println!("output: {}", summary.output_dir.display());
            println!("final checkpoint: {}", summary.final_checkpoint().display());
            Ok(())
        }
        Command::Eval {
            checkpoint,
            controller,
            world,
            agents,
            episodes,
            max_steps,
            seed,
            config,
            out,
        } => {
            let cfg = load_config(config.as_deref())?;
            let mut sim = cfg.sim.clone();
            sim.max_steps = max_steps;
            let policy = match (controller, &checkpoint) {
                (ControllerKind::Policy, Some(p)) => Some(GreedyPolicy::load(p, &sim)?),
                (ControllerKind::Policy, None) => {
                    return Err(Failure::Usage("--checkpoint is required for --controller policy".into()))
                }
                _ => None,
            };
            let mut report = EvalReport::default();
            for w in &world {
                let map = Arc::new(resolve_world(w).map_err(HarnessError::from)?);
                for &n in &agents {
                    let spec = EvalSpec {
                        map: map.clone(),
                        agents: n,
                        episodes,
                        sim: sim.clone(),
                        reward: cfg.reward.clone(),
                        seed,
                    };
                    let row = match controller {
                        ControllerKind::Policy => evaluate(&policy.as_ref().expect("loaded above").0, &spec),
                        ControllerKind::Straight => evaluate(&DriveStraight, &spec),
                        ControllerKind::Spin => evaluate(&SpinInPlace, &spec),
                        ControllerKind::Astar => evaluate(&PathFollower::new(&map, &sim)?, &spec),
                    }?;
                    report.rows.push(row);
                }
            }
            print!("{report}");
            if let Some(dir) = out {
                let tag = match &policy {
                    Some((_, meta)) => format!("# checkpoint {meta}; seed={seed}\n"),
                    None => format!("# controller {controller:?}; seed={seed}\n"),
                };
                write(&dir, "report.txt", &format!("{tag}{report}"))?;
                write(&dir, "report.csv", &format!("{tag}{}", report.to_csv()))?;
            }
            Ok(())
        }
        Command::CompareAstar {
            checkpoint,
            world,
            start,
            goal,
            seed,
            max_steps,
            config,
            out,
        } => {
            let cfg = load_config(config.as_deref())?;
            let mut sim = cfg.sim.clone();
            sim.max_steps = max_steps;
            let map = Arc::new(resolve_world(&world).map_err(HarnessError::from)?);
            let task = start.zip(goal).map(|(start, goal)| ScenarioTask { start, goal });
            let (cmp, tag) = match &checkpoint {
                Some(p) => {
                    let (policy, meta) = GreedyPolicy::load(p, &sim)?;
                    let c = compare(&policy, &map, task, &sim, &cfg, seed)?;
                    (c, format!("checkpoint {meta}; seed={seed}"))
                }
                None => {
                    let follower = PathFollower::new(&map, &sim)?;
                    let c = compare(&follower, &map, task, &sim, &cfg, seed)?;
                    (c, format!("controller astar; seed={seed}"))
                }
            };
            cmp.write(&out, &tag)?;
            print!("{cmp}");
            println!("output: {}", out.display());
            Ok(())
        }
        Command::AlgoCompare {
            config,
            algorithms,
            repeats,
            episodes,
            seed,
            max_steps,
            out,
        } => {
            let mut cfg = load_config(Some(&config))?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(m) = max_steps {
                cfg.sim.max_steps = m;
            }
            let algos = algorithms
                .iter()
                .map(|a| a.parse::<Algorithm>().map_err(|e| Failure::Usage(e.to_string())))
                .collect::<Result<Vec<_>, _>>()?;
            let curves = cmd_algo_compare(&cfg, &algos, repeats, episodes, &out)?;
            println!("{} series written to {}", curves.len(), out.display());
            Ok(())
        }
        Command::Worlds {
            action: WorldsAction::Validate { worlds, robot_radius },
        } => {
            let mut failed = 0;
            for (name, r) in validate_worlds(&worlds, robot_radius) {
                match r {
                    Ok(()) => println!("ok      {name}"),
                    Err(e) => {
                        failed += 1;
                        println!("invalid {name}: {e}");
                    }
                }
            }
            if failed > 0 {
                return Err(Failure::Usage(format!("{failed} world(s) failed validation")));
            }
            Ok(())
        }
    }
}

fn compare<C: Controller>(
    controller: &C,
    map: &Arc<multinav::world::WorldMap>,
    task: Option<ScenarioTask>,
    sim: &SimConfig,
    cfg: &RunConfig,
    seed: u64,
) -> Result<AstarComparison, HarnessError> {
    cmd_compare_astar(controller, map.clone(), task, sim, &cfg.reward, seed)
}

fn write(dir: &Path, name: &str, text: &str) -> Result<(), Failure> {
    std::fs::create_dir_all(dir)
        .and_then(|_| std::fs::write(dir.join(name), text))
        .map_err(|e| Failure::Runtime(format!("{}: {e}", dir.join(name).display())))
}
