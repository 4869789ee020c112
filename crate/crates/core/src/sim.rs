//! Multi-agent stepping: unicycle kinematics, collisions, noisy lidar, frame
//! stacking and termination.
//!
//! One [`Episode`] owns the state of every robot in one environment instance.
//! All agents move simultaneously; collisions are checked after everybody has
//! moved. Agents that terminate leave the arena at the end of that step.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{ray_circle_hit, wrap_angle, Vec2};
use crate::reward::{compute_reward, RewardConfig, RewardState, TerminalCause, TransitionFacts};
use crate::world::{circle_overlaps_world, nearest_hit, ScenarioTask, WorldMap};

pub const MAX_LINEAR: f64 = 0.6;
pub const MAX_ANGULAR: f64 = 1.5;
/// Frames per stacked observation.
pub const STACK_FRAMES: usize = 4;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("agent {0} is terminal and cannot receive an action")]
    ActionForTerminalAgent(usize),
    #[error("agent {0} is active but received no action")]
    MissingAction(usize),
    #[error("expected {expected} action slots, got {got}")]
    ActionCount { expected: usize, got: usize },
    #[error("episode already finished")]
    EpisodeOver,
    #[error("task references node {0} which does not exist")]
    BadTask(usize),
    #[error("invalid simulation config: {0}")]
    Config(String),
}

/// Velocity command.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Action {
    pub v_lin: f64,
    pub v_ang: f64,
}

impl Action {
    pub const fn new(v_lin: f64, v_ang: f64) -> Self {
        Self { v_lin, v_ang }
    }

    /// Clamps into the admissible box. NaN components become 0.
    pub fn clamped(self) -> Self {
        let fix = |v: f64| if v.is_nan() { 0.0 } else { v };
        Self {
            v_lin: fix(self.v_lin).clamp(0.0, MAX_LINEAR),
            v_ang: fix(self.v_ang).clamp(-MAX_ANGULAR, MAX_ANGULAR),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentStatus {
    Active,
    Terminal(TerminalCause),
}

impl AgentStatus {
    pub fn is_active(self) -> bool {
        self == AgentStatus::Active
    }

    pub fn cause(self) -> Option<TerminalCause> {
        match self {
            AgentStatus::Active => None,
            AgentStatus::Terminal(c) => Some(c),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub position: Vec2,
    /// Heading in radians, wrapped to `[-pi, pi)`.
    pub heading: f64,
    /// Most recently applied (clamped) command.
    pub velocity: Action,
    pub goal: Vec2,
    pub status: AgentStatus,
    pub reward_state: RewardState,
    pub steps: u32,
    pub total_reward: f64,
    /// Length of the travelled polyline, meters.
    pub path_length: f64,
}

impl AgentState {
    pub fn new(position: Vec2, heading: f64, goal: Vec2) -> Self {
        Self {
            position,
            heading: wrap_angle(heading),
            velocity: Action::default(),
            goal,
            status: AgentStatus::Active,
            reward_state: RewardState::new(position.distance(goal)),
            steps: 0,
            total_reward: 0.0,
            path_length: 0.0,
        }
    }

    pub fn goal_distance(&self) -> f64 {
        (self.goal - self.position).norm()
    }

    pub fn heading_vector(&self) -> Vec2 {
        Vec2::from_angle(self.heading)
    }
}

/// Exact unicycle integration over `dt`: the robot follows a circular arc of
/// radius `v_lin / v_ang`, or a straight line when turning is negligible.
pub fn integrate_pose(state: &AgentState, action: Action, dt: f64) -> AgentState {
    let a = action.clamped();
    let h0 = state.heading;
    let h1 = h0 + a.v_ang * dt;
    let delta = if a.v_ang.abs() < 1e-9 {
        Vec2::new(h0.cos(), h0.sin()) * (a.v_lin * dt)
    } else {
        let r = a.v_lin / a.v_ang;
        Vec2::new(r * (h1.sin() - h0.sin()), -r * (h1.cos() - h0.cos()))
    };
    let mut next = state.clone();
    next.position = state.position + delta;
    next.heading = wrap_angle(h1);
    next.velocity = a;
    next.path_length += delta.norm();
    next
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LidarConfig {
    pub beams: usize,
    /// Total field of view, degrees.
    pub fov_deg: f64,
    pub max_range: f64,
    /// Standard deviation of the additive range noise, meters. 0 disables noise.
    pub noise_std: f64,
}

impl Default for LidarConfig {
    fn default() -> Self {
        Self {
            beams: 1081,
            fov_deg: 270.0,
            max_range: 20.0,
            noise_std: 0.04,
        }
    }
}

impl LidarConfig {
    /// Beam angle relative to the heading, radians.
    pub fn beam_angle(&self, i: usize) -> f64 {
        let fov = self.fov_deg.to_radians();
        if self.beams == 1 {
            0.0
        } else {
            -fov / 2.0 + fov * i as f64 / (self.beams - 1) as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub dt: f64,
    pub robot_radius: f64,
    pub goal_radius: f64,
    pub max_steps: u32,
    pub lidar: LidarConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            robot_radius: 0.25,
            goal_radius: 0.3,
            max_steps: 500,
            lidar: LidarConfig::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Config(m.into()));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt must be > 0");
        }
        if !(self.robot_radius > 0.0) || !(self.goal_radius > 0.0) {
            return bad("radii must be > 0");
        }
        if self.max_steps < 1 {
            return bad("max_steps must be >= 1");
        }
        if self.lidar.beams < 1 || !(self.lidar.max_range > 0.0) || !(self.lidar.noise_std >= 0.0) {
            return bad("lidar needs >= 1 beam, positive range and non-negative noise");
        }
        if !(self.lidar.fov_deg > 0.0 && self.lidar.fov_deg <= 360.0) {
            return bad("lidar fov must be in (0, 360]");
        }
        Ok(())
    }
}

/// Ranges from the rightmost beam (-fov/2) to the leftmost (+fov/2).
#[derive(Debug, Clone, PartialEq)]
pub struct LidarScan {
    pub ranges: Vec<f32>,
}

impl LidarScan {
    pub fn min_range(&self) -> f64 {
        self.ranges.iter().copied().fold(f32::INFINITY, f32::min) as f64
    }
}

/// Casts every beam against the walls and the other robots' disks.
pub fn simulate_lidar<R: Rng + ?Sized>(
    state: &AgentState,
    others: &[Vec2],
    robot_radius: f64,
    map: &WorldMap,
    config: &LidarConfig,
    rng: &mut R,
) -> LidarScan {
    let noise = (config.noise_std > 0.0)
        .then(|| Normal::new(0.0, config.noise_std).expect("finite positive std"));
    let segments = map.segments();
    let ranges = (0..config.beams)
        .map(|i| {
            let dir = Vec2::from_angle(state.heading + config.beam_angle(i));
            let mut d = nearest_hit(state.position, dir, segments).unwrap_or(f64::INFINITY);
            for &c in others {
                if let Some(t) = ray_circle_hit(state.position, dir, c, robot_radius) {
                    d = d.min(t);
                }
            }
            d = d.min(config.max_range);
            if let Some(n) = &noise {
                d += n.sample(rng);
            }
            d.clamp(0.0, config.max_range) as f32
        })
        .collect();
    LidarScan { ranges }
}

/// Collision causes for every active agent; robot contact wins over wall contact.
pub fn detect_collisions(
    states: &[AgentState],
    robot_radius: f64,
    map: &WorldMap,
) -> Vec<Option<TerminalCause>> {
    let limit = 2.0 * robot_radius;
    states
        .iter()
        .enumerate()
        .map(|(i, s)| {
            if !s.status.is_active() {
                return None;
            }
            let robot = states.iter().enumerate().any(|(j, o)| {
                j != i && o.status.is_active() && s.position.distance(o.position) < limit
            });
            if robot {
                Some(TerminalCause::CollidedRobot)
            } else if circle_overlaps_world(s.position, robot_radius, map) {
                Some(TerminalCause::CollidedWorld)
            } else {
                None
            }
        })
        .collect()
}

/// One frame of what a robot perceives.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub lidar: LidarScan,
    /// Unit direction to the goal in the robot frame (x forward, y left).
    pub goal_direction: Vec2,
    pub goal_distance: f64,
    /// `(v_lin, v_ang)` applied during the previous step.
    pub velocity: Action,
}

impl Observation {
    pub fn assemble(state: &AgentState, lidar: LidarScan) -> Self {
        let g = state.goal - state.position;
        let dist = g.norm();
        let goal_direction = g
            .rotated(-state.heading)
            .normalized()
            .unwrap_or(Vec2::new(1.0, 0.0));
        Self {
            lidar,
            goal_direction,
            goal_distance: dist,
            velocity: state.velocity,
        }
    }
}

/// The last [`STACK_FRAMES`] observations, oldest first. Frames are shared
/// between consecutive stacks.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationStack {
    frames: [Arc<Observation>; STACK_FRAMES],
}

impl ObservationStack {
    /// A stack that repeats `first` in every slot.
    pub fn bootstrap(first: Observation) -> Self {
        let f = Arc::new(first);
        Self {
            frames: std::array::from_fn(|_| f.clone()),
        }
    }

    pub fn pushed(&self, newest: Observation) -> Self {
        let mut frames = self.frames.clone();
        frames.rotate_left(1);
        frames[STACK_FRAMES - 1] = Arc::new(newest);
        Self { frames }
    }

    pub fn frames(&self) -> &[Arc<Observation>; STACK_FRAMES] {
        &self.frames
    }

    pub fn latest(&self) -> &Observation {
        &self.frames[STACK_FRAMES - 1]
    }
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub agent: usize,
    pub stack: ObservationStack,
    pub reward: f64,
    pub done: bool,
    pub status: AgentStatus,
}

/// State of one environment instance from reset to the last agent's terminal.
#[derive(Debug, Clone)]
pub struct Episode {
    map: Arc<WorldMap>,
    config: SimConfig,
    reward_config: RewardConfig,
    agents: Vec<AgentState>,
    stacks: Vec<ObservationStack>,
    steps: u32,
}

impl Episode {
    /// Spawns one agent per task with a uniformly random heading.
    pub fn new<R: Rng + ?Sized>(
        map: Arc<WorldMap>,
        tasks: &[ScenarioTask],
        config: SimConfig,
        reward_config: RewardConfig,
        rng: &mut R,
    ) -> Result<Self, SimError> {
        config.validate()?;
        let nodes = map.nodes();
        let node = |i: usize| nodes.get(i).copied().ok_or(SimError::BadTask(i));
        let mut agents = Vec::with_capacity(tasks.len());
        for t in tasks {
            let heading = rng.random_range(-PI..PI);
            agents.push(AgentState::new(node(t.start)?, heading, node(t.goal)?));
        }
        Ok(Self::from_agents(map, agents, config, reward_config, rng))
    }

    /// Starts from explicit agent states. Stacks are bootstrapped from a fresh scan.
    pub fn from_agents<R: Rng + ?Sized>(
        map: Arc<WorldMap>,
        agents: Vec<AgentState>,
        config: SimConfig,
        reward_config: RewardConfig,
        rng: &mut R,
    ) -> Self {
        let mut ep = Self {
            map,
            config,
            reward_config,
            agents,
            stacks: Vec::new(),
            steps: 0,
        };
        let active: Vec<usize> = (0..ep.agents.len())
            .filter(|&i| ep.agents[i].status.is_active())
            .collect();
        let scans = ep.scan(&active, rng);
        let mut scans = scans.into_iter();
        ep.stacks = (0..ep.agents.len())
            .map(|i| {
                let lidar = if ep.agents[i].status.is_active() {
                    scans.next().expect("one scan per active agent")
                } else {
                    LidarScan {
                        ranges: vec![ep.config.lidar.max_range as f32; ep.config.lidar.beams],
                    }
                };
                ObservationStack::bootstrap(Observation::assemble(&ep.agents[i], lidar))
            })
            .collect();
        ep
    }

    fn scan<R: Rng + ?Sized>(&self, who: &[usize], rng: &mut R) -> Vec<LidarScan> {
        who.iter()
            .map(|&i| {
                let others: Vec<Vec2> = who
                    .iter()
                    .filter(|&&j| j != i)
                    .map(|&j| self.agents[j].position)
                    .collect();
                simulate_lidar(
                    &self.agents[i],
                    &others,
                    self.config.robot_radius,
                    &self.map,
                    &self.config.lidar,
                    rng,
                )
            })
            .collect()
    }

    pub fn map(&self) -> &Arc<WorldMap> {
        &self.map
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn reward_config(&self) -> &RewardConfig {
        &self.reward_config
    }

    pub fn agents(&self) -> &[AgentState] {
        &self.agents
    }

    pub fn stacks(&self) -> &[ObservationStack] {
        &self.stacks
    }

    pub fn step_count(&self) -> u32 {
        self.steps
    }

    pub fn active_agents(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.agents.len()).filter(|&i| self.agents[i].status.is_active())
    }

    pub fn is_done(&self) -> bool {
        self.agents.iter().all(|a| !a.status.is_active())
    }

    /// Advances every active agent by one control period. `actions[i]` must be
    /// `Some` exactly for active agents. Returns one outcome per agent that was
    /// active when the step began.
    pub fn step<R: Rng + ?Sized>(
        &mut self,
        actions: &[Option<Action>],
        rng: &mut R,
    ) -> Result<Vec<StepOutcome>, SimError> {
        if actions.len() != self.agents.len() {
            return Err(SimError::ActionCount {
                expected: self.agents.len(),
                got: actions.len(),
            });
        }
        if self.is_done() {
            return Err(SimError::EpisodeOver);
        }
        for (i, (a, s)) in actions.iter().zip(&self.agents).enumerate() {
            match (a, s.status.is_active()) {
                (Some(_), false) => return Err(SimError::ActionForTerminalAgent(i)),
                (None, true) => return Err(SimError::MissingAction(i)),
                _ => {}
            }
        }
        let movers: Vec<usize> = self.active_agents().collect();
        let prev_angular: Vec<f64> = self.agents.iter().map(|a| a.velocity.v_ang).collect();
        for &i in &movers {
            let action = actions[i].expect("checked above");
            self.agents[i] = integrate_pose(&self.agents[i], action, self.config.dt);
            self.agents[i].steps += 1;
        }
        self.steps += 1;

        let collisions = detect_collisions(&self.agents, self.config.robot_radius, &self.map);
        let timed_out = self.steps >= self.config.max_steps;
        let causes: Vec<Option<TerminalCause>> = movers
            .iter()
            .map(|&i| {
                let a = &self.agents[i];
                collisions[i].or_else(|| {
                    if a.goal_distance() < self.config.goal_radius {
                        Some(TerminalCause::ReachedGoal)
                    } else if timed_out {
                        Some(TerminalCause::TimedOut)
                    } else {
                        None
                    }
                })
            })
            .collect();

        // Everybody who moved this step is still visible to this step's scans.
        let scans = self.scan(&movers, rng);
        let mut outcomes = Vec::with_capacity(movers.len());
        for ((&i, cause), lidar) in movers.iter().zip(causes).zip(scans) {
            let min_laser = lidar.min_range();
            let agent = &self.agents[i];
            let facts = TransitionFacts {
                terminal: cause,
                prev_goal_distance: agent.reward_state.prev_goal_distance,
                goal_distance: agent.goal_distance(),
                heading: agent.heading_vector(),
                goal_vector: agent.goal - agent.position,
                min_laser,
                angular_change: agent.velocity.v_ang - prev_angular[i],
                robot_radius: self.config.robot_radius,
            };
            let (reward, reward_state) =
                compute_reward(&facts, &agent.reward_state, &self.reward_config);
            let obs = Observation::assemble(agent, lidar);
            let stack = self.stacks[i].pushed(obs);
            self.stacks[i] = stack.clone();
            let agent = &mut self.agents[i];
            agent.reward_state = reward_state;
            agent.total_reward += reward;
            if let Some(c) = cause {
                agent.status = AgentStatus::Terminal(c);
            }
            outcomes.push(StepOutcome {
                agent: i,
                stack,
                reward,
                done: cause.is_some(),
                status: agent.status,
            });
        }
        Ok(outcomes)
    }
}
