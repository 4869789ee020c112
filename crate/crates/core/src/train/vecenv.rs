//! Parallel environment instances stepped in lockstep.

use std::sync::Arc;

use rayon::prelude::*;

use super::TrainError;
use crate::reward::{RewardConfig, TerminalCause};
use crate::rng::{self, Rng};
use crate::sim::{Action, Episode, ObservationStack, SimConfig, StepOutcome};
use crate::world::{sample_tasks, WorldMap};

const TAG_SIM: u64 = 0x51;
const TAG_POLICY: u64 = 0x9a;

/// A world and how many robots and parallel copies train in it.
#[derive(Debug, Clone)]
pub struct WorldSetup {
    pub map: Arc<WorldMap>,
    pub agents: usize,
    pub instances: usize,
}

/// An agent-episode that ended during a step.
#[derive(Debug, Clone, PartialEq)]
pub struct FinishedEpisode {
    pub world: usize,
    pub instance: usize,
    /// How many times this instance had been reset when the episode ran.
    pub reset: u64,
    pub agent: usize,
    pub cause: TerminalCause,
    pub steps: u32,
    pub total_reward: f64,
    pub path_length: f64,
}

#[derive(Debug, Clone)]
pub struct EnvStep {
    pub outcomes: Vec<StepOutcome>,
    pub finished: Vec<FinishedEpisode>,
}

#[derive(Debug, Clone)]
pub struct EnvInstance {
    pub world: usize,
    pub instance: usize,
    map: Arc<WorldMap>,
    agents: usize,
    episode: Episode,
    sim_rng: Rng,
    policy_rng: Rng,
    resets: u64,
}

impl EnvInstance {
    fn spawn(
        map: &Arc<WorldMap>,
        agents: usize,
        sim: &SimConfig,
        reward: &RewardConfig,
        rng: &mut Rng,
    ) -> Result<Episode, TrainError> {
        let tasks = sample_tasks(map, agents, rng)?;
        Ok(Episode::new(map.clone(), &tasks, sim.clone(), reward.clone(), rng)?)
    }

    pub fn episode(&self) -> &Episode {
        &self.episode
    }

    pub fn policy_rng(&mut self) -> &mut Rng {
        &mut self.policy_rng
    }

    fn step(&mut self, actions: &[Option<Action>]) -> Result<EnvStep, TrainError> {
        let outcomes = self.episode.step(actions, &mut self.sim_rng)?;
        let finished = outcomes
            .iter()
            .filter(|o| o.done)
            .map(|o| {
                let a = &self.episode.agents()[o.agent];
                FinishedEpisode {
                    world: self.world,
                    instance: self.instance,
                    reset: self.resets,
                    agent: o.agent,
                    cause: o.status.cause().expect("done implies terminal"),
                    steps: a.steps,
                    total_reward: a.total_reward,
                    path_length: a.path_length,
                }
            })
            .collect();
        if self.episode.is_done() {
            let sim = self.episode.config().clone();
            let reward = self.episode.reward_config().clone();
            self.episode = Self::spawn(&self.map, self.agents, &sim, &reward, &mut self.sim_rng)?;
            self.resets += 1;
        }
        Ok(EnvStep { outcomes, finished })
    }
}

#[derive(Debug, Clone)]
pub struct VecEnv {
    envs: Vec<EnvInstance>,
}

impl VecEnv {
    /// Instances are numbered world by world; each gets its own simulation
    /// and policy streams derived from `seed` and its global index.
    pub fn new(
        worlds: &[WorldSetup],
        sim: &SimConfig,
        reward: &RewardConfig,
        seed: u64,
    ) -> Result<Self, TrainError> {
        if worlds.is_empty() {
            return Err(TrainError::Config("at least one world is required".into()));
        }
        let mut envs = Vec::new();
        for (w, setup) in worlds.iter().enumerate() {
            if setup.instances == 0 || setup.agents == 0 {
                return Err(TrainError::Config(format!(
                    "world {} needs at least one instance and one agent",
                    setup.map.name()
                )));
            }
            for instance in 0..setup.instances {
                let id = envs.len() as u64;
                let mut sim_rng = rng::stream(seed, &[TAG_SIM, id]);
                let episode = EnvInstance::spawn(&setup.map, setup.agents, sim, reward, &mut sim_rng)?;
                envs.push(EnvInstance {
                    world: w,
                    instance,
                    map: setup.map.clone(),
                    agents: setup.agents,
                    episode,
                    sim_rng,
                    policy_rng: rng::stream(seed, &[TAG_POLICY, id]),
                    resets: 0,
                });
            }
        }
        Ok(Self { envs })
    }

    pub fn envs(&self) -> &[EnvInstance] {
        &self.envs
    }

    pub fn env_mut(&mut self, i: usize) -> &mut EnvInstance {
        &mut self.envs[i]
    }

    pub fn len(&self) -> usize {
        self.envs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.envs.is_empty()
    }

    pub fn agent_slots(&self, env: usize) -> usize {
        self.envs[env].agents
    }

    /// `(env, agent)` for every active agent, env-major.
    pub fn active(&self) -> Vec<(usize, usize)> {
        self.envs
            .iter()
            .enumerate()
            .flat_map(|(e, env)| env.episode.active_agents().map(move |a| (e, a)))
            .collect()
    }

    pub fn stack(&self, env: usize, agent: usize) -> &ObservationStack {
        &self.envs[env].episode.stacks()[agent]
    }

    /// Steps every instance concurrently; finished instances restart with fresh tasks.
    pub fn step(&mut self, actions: &[Vec<Option<Action>>]) -> Result<Vec<EnvStep>, TrainError> {
        if actions.len() != self.envs.len() {
            return Err(TrainError::Config("one action list per environment is required".into()));
        }
        self.envs
            .par_iter_mut()
            .zip(actions.par_iter())
            .map(|(env, a)| env.step(a))
            .collect()
    }
}
