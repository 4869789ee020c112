//! Greedy evaluation and Table-style outcome reports.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;

use super::HarnessError;
use crate::astar::{follow_path, plan, rasterize, OccupancyGrid, PlannedPath, DEFAULT_RESOLUTION, SAFETY_MARGIN};
use crate::geometry::Vec2;
use crate::net::{load_checkpoint, InputBatch, NetError, Network};
use crate::reward::{RewardConfig, TerminalCause};
use crate::rng;
use crate::sim::{Action, Episode, SimConfig, MAX_ANGULAR, MAX_LINEAR, STACK_FRAMES};
use crate::world::{sample_tasks, WorldMap};

const TAG_EVAL: u64 = 0xe7;

/// Produces commands for one episode. `Memory` is fresh per episode.
pub trait Controller: Sync {
    type Memory: Default + Send;

    /// One entry per agent slot; `None` for agents that already finished.
    fn act(&self, episode: &Episode, memory: &mut Self::Memory) -> Result<Vec<Option<Action>>, HarnessError>;
}

fn for_active(episode: &Episode, mut f: impl FnMut(usize) -> Action) -> Vec<Option<Action>> {
    episode
        .agents()
        .iter()
        .enumerate()
        .map(|(i, a)| a.status.is_active().then(|| f(i)))
        .collect()
}

/// Network policy acting on the mode of its distribution.
#[derive(Debug, Clone)]
pub struct GreedyPolicy {
    net: Network<f32>,
}

impl GreedyPolicy {
    /// Fails unless the network input matches the simulated lidar.
    pub fn new(net: Network<f32>, sim: &SimConfig) -> Result<Self, HarnessError> {
        let cfg = net.config();
        if cfg.beams != sim.lidar.beams || cfg.frames != STACK_FRAMES {
            return Err(NetError::Shape(format!(
                "network expects {} beams x {} frames, simulator produces {} x {}",
                cfg.beams, cfg.frames, sim.lidar.beams, STACK_FRAMES
            ))
            .into());
        }
        Ok(Self { net })
    }

    /// Loads a checkpoint and returns it with its metadata string.
    pub fn load(path: impl AsRef<Path>, sim: &SimConfig) -> Result<(Self, String), HarnessError> {
        let (net, meta) = load_checkpoint::<f32>(path)?;
        Ok((Self::new(net, sim)?, meta))
    }

    pub fn network(&self) -> &Network<f32> {
        &self.net
    }
}

impl Controller for GreedyPolicy {
    type Memory = ();

    fn act(&self, episode: &Episode, _: &mut ()) -> Result<Vec<Option<Action>>, HarnessError> {
        let active: Vec<usize> = episode.active_agents().collect();
        let batch = InputBatch::from_stacks(self.net.config(), active.iter().map(|&i| &episode.stacks()[i]))?;
        let (out, _) = self.net.forward(&batch)?;
        let mut acts = vec![None; episode.agents().len()];
        for (row, &i) in active.iter().enumerate() {
            acts[i] = Some(out.distribution(row).mode().to_action());
        }
        Ok(acts)
    }
}

/// Full speed straight ahead.
#[derive(Debug, Clone, Copy, Default)]
pub struct DriveStraight;

impl Controller for DriveStraight {
    type Memory = ();

    fn act(&self, episode: &Episode, _: &mut ()) -> Result<Vec<Option<Action>>, HarnessError> {
        Ok(for_active(episode, |_| Action::new(MAX_LINEAR, 0.0)))
    }
}

/// Turns on the spot forever.
#[derive(Debug, Clone, Copy, Default)]
pub struct SpinInPlace;

impl Controller for SpinInPlace {
    type Memory = ();

    fn act(&self, episode: &Episode, _: &mut ()) -> Result<Vec<Option<Action>>, HarnessError> {
        Ok(for_active(episode, |_| Action::new(0.0, MAX_ANGULAR)))
    }
}

/// Plans once per agent with A* and tracks the path with pure pursuit.
/// Agents without a path stand still.
#[derive(Debug, Clone)]
pub struct PathFollower {
    grid: OccupancyGrid,
}

impl PathFollower {
    pub fn new(map: &WorldMap, sim: &SimConfig) -> Result<Self, HarnessError> {
        Ok(Self {
            grid: default_grid(map, sim)?,
        })
    }

    pub fn grid(&self) -> &OccupancyGrid {
        &self.grid
    }
}

impl Controller for PathFollower {
    type Memory = Vec<Option<PlannedPath>>;

    fn act(&self, episode: &Episode, memory: &mut Self::Memory) -> Result<Vec<Option<Action>>, HarnessError> {
        if memory.is_empty() {
            *memory = episode
                .agents()
                .iter()
                .map(|a| plan(&self.grid, a.position, a.goal).ok().flatten())
                .collect();
        }
        Ok(for_active(episode, |i| match &memory[i] {
            Some(path) => follow_path(&episode.agents()[i], path),
            None => Action::new(0.0, 0.0),
        }))
    }
}

/// Occupancy grid at the default resolution, inflated by the robot radius plus margin.
pub fn default_grid(map: &WorldMap, sim: &SimConfig) -> Result<OccupancyGrid, HarnessError> {
    Ok(rasterize(map, DEFAULT_RESOLUTION, sim.robot_radius + SAFETY_MARGIN)?)
}

/// Final state of one agent-episode.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentRun {
    pub start: Vec2,
    pub goal: Vec2,
    pub cause: TerminalCause,
    pub steps: u32,
    pub path_length: f64,
}

/// Runs one episode to completion and returns per-agent results plus every
/// agent's trajectory (start pose first).
pub fn run_episode<C: Controller>(
    controller: &C,
    mut episode: Episode,
    rng: &mut rng::Rng,
) -> Result<(Vec<AgentRun>, Vec<Vec<Vec2>>), HarnessError> {
    let mut memory = C::Memory::default();
    let mut runs: Vec<Option<AgentRun>> = vec![None; episode.agents().len()];
    let mut tracks: Vec<Vec<Vec2>> = episode.agents().iter().map(|a| vec![a.position]).collect();
    let starts: Vec<Vec2> = tracks.iter().map(|t| t[0]).collect();
    while !episode.is_done() {
        let actions = controller.act(&episode, &mut memory)?;
        let outcomes = episode.step(&actions, rng)?;
        for o in outcomes {
            let a = &episode.agents()[o.agent];
            tracks[o.agent].push(a.position);
            if let Some(cause) = o.status.cause() {
                runs[o.agent] = Some(AgentRun {
                    start: starts[o.agent],
                    goal: a.goal,
                    cause,
                    steps: a.steps,
                    path_length: a.path_length,
                });
            }
        }
    }
    let runs = runs.into_iter().map(|r| r.expect("every agent terminates")).collect();
    Ok((runs, tracks))
}

/// Evaluation protocol for one (world, agent count) cell of a report.
#[derive(Debug, Clone)]
pub struct EvalSpec {
    pub map: Arc<WorldMap>,
    pub agents: usize,
    /// Agent-episodes; rounded up to a whole number of world episodes.
    pub episodes: usize,
    pub sim: SimConfig,
    pub reward: RewardConfig,
    pub seed: u64,
}

/// Outcome shares for one (world, agent count) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub world: String,
    pub agents: usize,
    pub episodes: usize,
    pub reached: usize,
    pub timeout: usize,
    pub collision_world: usize,
    pub collision_robot: usize,
    pub mean_steps: f64,
    /// Mean travelled distance over successful agent-episodes with an A* path.
    pub mean_path_length: Option<f64>,
    /// Mean A* length over the same agent-episodes.
    pub mean_astar_length: Option<f64>,
}

impl EvalRow {
    fn pct(&self, n: usize) -> f64 {
        if self.episodes == 0 {
            0.0
        } else {
            100.0 * n as f64 / self.episodes as f64
        }
    }

    pub fn reached_pct(&self) -> f64 {
        self.pct(self.reached)
    }

    pub fn timeout_pct(&self) -> f64 {
        self.pct(self.timeout)
    }

    pub fn collision_pct(&self) -> f64 {
        self.pct(self.collision_world + self.collision_robot)
    }

    pub fn robot_collision_pct(&self) -> f64 {
        self.pct(self.collision_robot)
    }

    pub fn path_ratio(&self) -> Option<f64> {
        Some(self.mean_path_length? / self.mean_astar_length?)
    }

    pub const CSV_HEADER: &'static str =
        "world,agents,episodes,reached_pct,timeout_pct,collision_pct,mean_steps,mean_path_length,mean_astar_length";

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_default();
        format!(
            "{},{},{},{:.2},{:.2},{:.2},{:.2},{},{}",
            self.world,
            self.agents,
            self.episodes,
            self.reached_pct(),
            self.timeout_pct(),
            self.collision_pct(),
            self.mean_steps,
            opt(self.mean_path_length),
            opt(self.mean_astar_length)
        )
    }
}

/// Runs `spec.episodes` agent-episodes in parallel. World episode `k` draws
/// its tasks, headings and noise from a stream keyed by `(seed, k)`, so the
/// result does not depend on scheduling.
pub fn evaluate<C: Controller>(controller: &C, spec: &EvalSpec) -> Result<EvalRow, HarnessError> {
    if spec.agents == 0 {
        return Err(HarnessError::Config("at least one agent is required".into()));
    }
    spec.sim.validate()?;
    let grid = default_grid(&spec.map, &spec.sim)?;
    let world_episodes = spec.episodes.div_ceil(spec.agents);
    let per_episode: Vec<Vec<(AgentRun, Option<f64>)>> = (0..world_episodes)
        .into_par_iter()
        .map(|k| {
            let mut r = rng::stream(spec.seed, &[TAG_EVAL, k as u64]);
            let tasks = sample_tasks(&spec.map, spec.agents, &mut r)?;
            let ep = Episode::new(spec.map.clone(), &tasks, spec.sim.clone(), spec.reward.clone(), &mut r)?;
            let (runs, _) = run_episode(controller, ep, &mut r)?;
            Ok(runs
                .into_iter()
                .map(|run| {
                    let astar = (run.cause == TerminalCause::ReachedGoal)
                        .then(|| plan(&grid, run.start, run.goal).ok().flatten().map(|p| p.length))
                        .flatten();
                    (run, astar)
                })
                .collect())
        })
        .collect::<Result<_, HarnessError>>()?;
    let mut row = EvalRow {
        world: spec.map.name().to_string(),
        agents: spec.agents,
        episodes: 0,
        reached: 0,
        timeout: 0,
        collision_world: 0,
        collision_robot: 0,
        mean_steps: 0.0,
        mean_path_length: None,
        mean_astar_length: None,
    };
    let (mut steps, mut travelled, mut planned, mut compared) = (0.0, 0.0, 0.0, 0usize);
    for (run, astar) in per_episode.into_iter().flatten() {
        row.episodes += 1;
        steps += run.steps as f64;
        match run.cause {
            TerminalCause::ReachedGoal => row.reached += 1,
            TerminalCause::TimedOut => row.timeout += 1,
            TerminalCause::CollidedWorld => row.collision_world += 1,
            TerminalCause::CollidedRobot => row.collision_robot += 1,
        }
        if let Some(a) = astar {
            travelled += run.path_length;
            planned += a;
            compared += 1;
        }
    }
    if row.episodes > 0 {
        row.mean_steps = steps / row.episodes as f64;
    }
    if compared > 0 {
        row.mean_path_length = Some(travelled / compared as f64);
        row.mean_astar_length = Some(planned / compared as f64);
    }
    Ok(row)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", EvalRow::CSV_HEADER);
        for r in &self.rows {
            s.push_str(&r.csv_row());
            s.push('\n');
        }
        s
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<16} {:>6} {:>13} {:>9} {:>11} {:>9} {:>10} {:>8}",
            "world", "agents", "reached goal", "timeout", "collision", "episodes", "mean steps", "path/A*"
        )?;
        for r in &self.rows {
            let ratio = r.path_ratio().map(|x| format!("{x:.3}")).unwrap_or_else(|| "-".into());
            writeln!(
                f,
                "{:<16} {:>6} {:>12.2}% {:>8.2}% {:>10.2}% {:>9} {:>10.1} {:>8}",
                r.world,
                r.agents,
                r.reached_pct(),
                r.timeout_pct(),
                r.collision_pct(),
                r.episodes,
                r.mean_steps,
                ratio
            )?;
        }
        Ok(())
    }
}
