//! Path comparison against A* and multi-algorithm learning curves.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use super::eval::{default_grid, run_episode, Controller};
use super::{create_dir, io_error, HarnessError, RunConfig};
use crate::astar::{plan, polyline_length, write_path_csv, PlannedPath};
use crate::geometry::Vec2;
use crate::reward::{RewardConfig, TerminalCause};
use crate::rng;
use crate::sim::{Episode, SimConfig};
use crate::train::{train_loop, Algorithm, Control, TrainEvent};
use crate::world::{sample_tasks, ScenarioTask, WorldMap};

const TAG_COMPARE: u64 = 0xc0;
const TAG_REPEAT: u64 = 0xa1;

/// One agent's driven polyline next to the planner's path.
#[derive(Debug, Clone, PartialEq)]
pub struct AstarComparison {
    pub world: String,
    pub task: ScenarioTask,
    pub start: Vec2,
    pub goal: Vec2,
    /// `None` when the goal is unreachable on the inflated grid.
    pub astar: Option<PlannedPath>,
    /// Positions after every step, from the start pose. A successful run
    /// ends with the goal point itself.
    pub travelled: Vec<Vec2>,
    pub outcome: TerminalCause,
}

impl AstarComparison {
    pub fn travelled_length(&self) -> f64 {
        polyline_length(&self.travelled)
    }

    pub fn astar_length(&self) -> Option<f64> {
        self.astar.as_ref().map(|p| p.length)
    }

    pub fn ratio(&self) -> Option<f64> {
        self.astar_length().map(|a| self.travelled_length() / a)
    }

    /// Writes `astar_path.csv` (header only when unreachable), `travelled_path.csv`
    /// and `comparison.txt`.
    pub fn write(&self, dir: &Path, tag: &str) -> Result<(), HarnessError> {
        create_dir(dir)?;
        let write_csv = |name: &str, pts: &[Vec2]| {
            let path = dir.join(name);
            let mut buf = format!("# {tag}\n").into_bytes();
            write_path_csv(&mut buf, pts).map_err(io_error(&path))?;
            fs::write(&path, buf).map_err(io_error(&path))
        };
        write_csv("astar_path.csv", self.astar.as_ref().map_or(&[][..], |p| &p.waypoints))?;
        write_csv("travelled_path.csv", &self.travelled)?;
        let path = dir.join("comparison.txt");
        fs::write(&path, format!("# {tag}\n{self}")).map_err(io_error(&path))
    }
}

impl std::fmt::Display for AstarComparison {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "world: {}", self.world)?;
        writeln!(f, "start: node {} ({:.3}, {:.3})", self.task.start, self.start.x, self.start.y)?;
        writeln!(f, "goal: node {} ({:.3}, {:.3})", self.task.goal, self.goal.x, self.goal.y)?;
        writeln!(f, "outcome: {}", self.outcome.as_str())?;
        writeln!(f, "travelled_length: {:.4}", self.travelled_length())?;
        match (self.astar_length(), self.ratio()) {
            (Some(a), Some(r)) => {
                writeln!(f, "astar_length: {a:.4}")?;
                writeln!(f, "ratio: {r:.4}")
            }
            _ => writeln!(f, "astar_length: unreachable"),
        }
    }
}

/// Drives a single agent from `task` (or a seeded random task) and plans the
/// same trip with A*. An unreachable goal is recorded, the agent still runs.
pub fn cmd_compare_astar<C: Controller>(
    controller: &C,
    map: Arc<WorldMap>,
    task: Option<ScenarioTask>,
    sim: &SimConfig,
    reward: &RewardConfig,
    seed: u64,
) -> Result<AstarComparison, HarnessError> {
    let mut r = rng::stream(seed, &[TAG_COMPARE]);
    let task = match task {
        Some(t) => t,
        None => sample_tasks(&map, 1, &mut r)?[0],
    };
    let ep = Episode::new(map.clone(), &[task], sim.clone(), reward.clone(), &mut r)?;
    let (start, goal) = (ep.agents()[0].position, ep.agents()[0].goal);
    let grid = default_grid(&map, sim)?;
    let astar = plan(&grid, start, goal).ok().flatten();
    let (runs, mut tracks) = run_episode(controller, ep, &mut r)?;
    let mut travelled = tracks.swap_remove(0);
    let outcome = runs[0].cause;
    if outcome == TerminalCause::ReachedGoal {
        travelled.push(goal);
    }
    Ok(AstarComparison {
        world: map.name().to_string(),
        task,
        start,
        goal,
        astar,
        travelled,
        outcome,
    })
}

/// Reward-per-episode series of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub algorithm: Algorithm,
    pub repeat: usize,
    pub rewards: Vec<f64>,
}

/// Mean and sample standard deviation across repeats of the per-bin average reward.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveSummary {
    pub algorithm: Algorithm,
    /// Last agent-episode of the bin.
    pub episode: u64,
    pub mean: f64,
    pub std: f64,
    pub repeats: usize,
}

pub const CURVE_BIN: usize = 100;

pub fn summarize(curves: &[Curve], algorithm: Algorithm, bin: usize) -> Vec<CurveSummary> {
    let runs: Vec<&Curve> = curves.iter().filter(|c| c.algorithm == algorithm).collect();
    let shortest = runs.iter().map(|c| c.rewards.len()).min().unwrap_or(0);
    (0..shortest / bin)
        .map(|b| {
            let avgs: Vec<f64> = runs
                .iter()
                .map(|c| c.rewards[b * bin..(b + 1) * bin].iter().sum::<f64>() / bin as f64)
                .collect();
            let n = avgs.len() as f64;
            let mean = avgs.iter().sum::<f64>() / n;
            let std = if avgs.len() > 1 {
                (avgs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            CurveSummary {
                algorithm,
                episode: ((b + 1) * bin) as u64,
                mean,
                std,
                repeats: avgs.len(),
            }
        })
        .collect()
}

/// Trains every algorithm `repeats` times for `episode_cap` agent-episodes and
/// writes `curves.csv` (one series per algorithm and repeat) and
/// `curves_summary.csv` (mean and std per bin of `CURVE_BIN` episodes).
pub fn cmd_algo_compare(
    base: &RunConfig,
    algorithms: &[Algorithm],
    repeats: usize,
    episode_cap: u64,
    out: &Path,
) -> Result<Vec<Curve>, HarnessError> {
    let mut curves = Vec::new();
    for &algorithm in algorithms {
        for repeat in 0..repeats {
            let mut cfg = base.clone();
            cfg.train.algorithm = algorithm;
            cfg.seed = rng::derive(base.seed, &[TAG_REPEAT, repeat as u64]);
            cfg.stop.max_episodes = episode_cap;
            cfg.stop.success_threshold = None;
            cfg.stop.max_updates = None;
            let setup = cfg.to_setup()?;
            let mut rewards = Vec::new();
            train_loop(&setup, &mut |ev| {
                if let TrainEvent::Episode(rec) = ev {
                    rewards.push(rec.sum_reward);
                }
                Control::Continue
            })?;
            curves.push(Curve {
                algorithm,
                repeat,
                rewards,
            });
        }
    }
    create_dir(out)?;
    let tag = format!("config_hash={}", base.hash());
    let mut series = format!("# {tag}\nalgorithm,repeat,episode,sum_reward\n");
    for c in &curves {
        for (i, r) in c.rewards.iter().enumerate() {
            writeln!(series, "{},{},{},{}", c.algorithm.as_str(), c.repeat, i + 1, r).expect("string write");
        }
    }
    let mut summary = format!("# {tag}\nalgorithm,episode,mean,std,repeats\n");
    for &a in algorithms {
        for s in summarize(&curves, a, CURVE_BIN) {
            writeln!(summary, "{},{},{},{},{}", a.as_str(), s.episode, s.mean, s.std, s.repeats).expect("string write");
        }
    }
    for (name, text) in [("curves.csv", series), ("curves_summary.csv", summary)] {
        let path = out.join(name);
        fs::write(&path, text).map_err(io_error(&path))?;
    }
    Ok(curves)
}
