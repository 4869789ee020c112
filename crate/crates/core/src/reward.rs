//! Shaped per-agent reward: sparse terminal values plus five dense terms
//! (goal progress, heading, best-distance progress, wall proximity and
//! steering oscillation).

use std::collections::VecDeque;
use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::geometry::Vec2;

/// Scaling constants for every reward term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub goal: f64,
    pub collision_world: f64,
    pub collision_robot: f64,
    pub distance_pos: f64,
    pub distance_neg: f64,
    pub orientation_pos: f64,
    pub orientation_neg: f64,
    pub shortest_pos: f64,
    pub laser_neg: f64,
    pub wiggle_neg: f64,
    /// Extra clearance beyond the robot radius before the proximity penalty starts, meters.
    pub laser_margin: f64,
    /// Dead band on the angular command change, rad/s.
    pub turn_threshold: f64,
    /// Number of direction reversals tolerated inside the window.
    pub wiggle_limit: usize,
    /// Window length in steps.
    pub wiggle_window: usize,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            goal: 1.0,
            collision_world: 0.75,
            collision_robot: 1.0,
            distance_pos: 0.01,
            distance_neg: 0.002,
            orientation_pos: 0.001,
            orientation_neg: 0.0002,
            shortest_pos: 0.05,
            laser_neg: 0.01,
            wiggle_neg: 0.01,
            laser_margin: 0.2,
            turn_threshold: 0.1,
            wiggle_limit: 3,
            wiggle_window: 20,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), String> {
        let scales = [
            self.goal,
            self.collision_world,
            self.collision_robot,
            self.distance_pos,
            self.distance_neg,
            self.orientation_pos,
            self.orientation_neg,
            self.shortest_pos,
            self.laser_neg,
            self.wiggle_neg,
            self.laser_margin,
            self.turn_threshold,
        ];
        if scales.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err("reward scaling factors must be finite and >= 0".into());
        }
        if self.wiggle_limit < 1 || self.wiggle_window < self.wiggle_limit {
            return Err("reward window requires wiggle_window >= wiggle_limit >= 1".into());
        }
        Ok(())
    }
}

/// Why an agent's episode ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalCause {
    ReachedGoal,
    CollidedWorld,
    CollidedRobot,
    TimedOut,
}

impl TerminalCause {
    pub fn as_str(self) -> &'static str {
        match self {
            TerminalCause::ReachedGoal => "reached_goal",
            TerminalCause::CollidedWorld => "collided_world",
            TerminalCause::CollidedRobot => "collided_robot",
            TerminalCause::TimedOut => "timed_out",
        }
    }

    pub fn is_collision(self) -> bool {
        matches!(self, TerminalCause::CollidedWorld | TerminalCause::CollidedRobot)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TurnClass {
    Left,
    Right,
    Straight,
}

impl TurnClass {
    /// Symmetric dead band around zero.
    pub fn classify(angular_change: f64, threshold: f64) -> Self {
        if angular_change > threshold {
            TurnClass::Left
        } else if angular_change < -threshold {
            TurnClass::Right
        } else {
            TurnClass::Straight
        }
    }
}

/// Per-episode bookkeeping the dense terms depend on.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardState {
    pub prev_goal_distance: f64,
    /// Smallest goal distance seen so far this episode. Non-increasing.
    pub shortest_distance: f64,
    pub prev_turn: TurnClass,
    reversals: VecDeque<u8>,
    reversal_sum: usize,
}

impl RewardState {
    pub fn new(initial_goal_distance: f64) -> Self {
        Self {
            prev_goal_distance: initial_goal_distance,
            shortest_distance: initial_goal_distance,
            prev_turn: TurnClass::Straight,
            reversals: VecDeque::new(),
            reversal_sum: 0,
        }
    }

    /// Reversal flags currently in the window, oldest first.
    pub fn reversal_window(&self) -> impl Iterator<Item = u8> + '_ {
        self.reversals.iter().copied()
    }

    pub fn reversal_count(&self) -> usize {
        self.reversal_sum
    }
}

/// Everything about one transition the reward depends on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionFacts {
    pub terminal: Option<TerminalCause>,
    pub prev_goal_distance: f64,
    pub goal_distance: f64,
    /// Unit heading of the robot in the world frame.
    pub heading: Vec2,
    /// Vector from robot position to goal.
    pub goal_vector: Vec2,
    /// Smallest lidar range of the new scan.
    pub min_laser: f64,
    /// Change of the commanded angular velocity since the previous step, rad/s.
    pub angular_change: f64,
    pub robot_radius: f64,
}

pub fn reward_distance(delta: f64, config: &RewardConfig) -> f64 {
    if delta < 0.0 {
        delta * config.distance_neg
    } else {
        delta * config.distance_pos
    }
}

/// Heading term. An agent standing on its goal gets 0.
pub fn reward_orientation(heading: Vec2, goal_vector: Vec2, config: &RewardConfig) -> f64 {
    if goal_vector == Vec2::ZERO {
        return 0.0;
    }
    let alpha = heading.cross(goal_vector).abs().atan2(heading.dot(goal_vector)).abs();
    let alpha_norm = 1.0 - alpha / FRAC_PI_2;
    if alpha_norm < 0.0 {
        alpha_norm * config.orientation_neg
    } else {
        alpha_norm * config.orientation_pos
    }
}

/// Rewards only progress past the best distance so far, latching the new best.
pub fn reward_shortest_distance(
    goal_distance: f64,
    state: &RewardState,
    config: &RewardConfig,
) -> (f64, RewardState) {
    let mut next = state.clone();
    if goal_distance < state.shortest_distance {
        next.shortest_distance = goal_distance;
        ((state.shortest_distance - goal_distance) * config.shortest_pos, next)
    } else {
        (0.0, next)
    }
}

pub fn reward_min_laser(min_laser: f64, config: &RewardConfig, robot_radius: f64) -> f64 {
    let limit = robot_radius + config.laser_margin;
    if min_laser < limit {
        (limit - min_laser) * -config.laser_neg
    } else {
        0.0
    }
}

/// Penalizes more than `wiggle_limit` left/right reversals inside the sliding
/// window. Always non-positive.
pub fn reward_wiggle(
    angular_change: f64,
    state: &RewardState,
    config: &RewardConfig,
) -> (f64, RewardState) {
    let mut next = state.clone();
    let turn = TurnClass::classify(angular_change, config.turn_threshold);
    let reversal = matches!(
        (turn, state.prev_turn),
        (TurnClass::Left, TurnClass::Right) | (TurnClass::Right, TurnClass::Left)
    ) as u8;
    next.prev_turn = turn;
    next.reversals.push_back(reversal);
    next.reversal_sum += reversal as usize;
    while next.reversals.len() > config.wiggle_window {
        let old = next.reversals.pop_front().unwrap_or(0);
        next.reversal_sum -= old as usize;
    }
    let sum = next.reversal_sum;
    let reward = if sum > config.wiggle_limit {
        -(config.wiggle_neg / config.wiggle_window as f64) * sum as f64
    } else {
        0.0
    };
    (reward, next)
}

/// Full reward for one transition. Pure: the returned state is the only effect.
pub fn compute_reward(
    facts: &TransitionFacts,
    state: &RewardState,
    config: &RewardConfig,
) -> (f64, RewardState) {
    if let Some(cause) = facts.terminal {
        let mut next = state.clone();
        next.prev_goal_distance = facts.goal_distance;
        let r = match cause {
            TerminalCause::ReachedGoal => config.goal,
            TerminalCause::CollidedWorld => -config.collision_world,
            TerminalCause::CollidedRobot => -config.collision_robot,
            TerminalCause::TimedOut => 0.0,
        };
        return (r, next);
    }
    let r_dist = reward_distance(facts.prev_goal_distance - facts.goal_distance, config);
    let r_ori = reward_orientation(facts.heading, facts.goal_vector, config);
    let (r_sd, next) = reward_shortest_distance(facts.goal_distance, state, config);
    let r_mld = reward_min_laser(facts.min_laser, config, facts.robot_radius);
    let (r_wig, mut next) = reward_wiggle(facts.angular_change, &next, config);
    next.prev_goal_distance = facts.goal_distance;
    (r_dist + r_ori + r_sd + r_mld + r_wig, next)
}
